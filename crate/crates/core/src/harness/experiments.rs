use std::time::Instant;

use rayon::prelude::*;

use crate::denoiser::Ddpm;
use crate::error::{Error, Result};
use crate::maps::SpatialMap;
use crate::predictor::Lgp;
use crate::sampler::{sample, GuidanceTarget, SampleRunConfig};
use crate::tensor::Tensor;

use super::dataset::{from_model_space, ShapesCorpus};
use super::metrics::{eval_edge_fidelity, mean_std, MetricsRow, SweepRow};

pub const THREADS_ENV: &str = "LGD_THREADS";
pub const DEFAULT_BETAS: [f64; 6] = [0.0, 0.2, 0.4, 0.8, 1.6, 2.0];
pub const DEFAULT_STOPS: [f64; 6] = [0.0, 0.2, 0.4, 0.5, 0.7, 0.9];

/// Comment lines emitted above stop-fraction sweeps.
pub fn stop_convention() -> Vec<String> {
    vec![
        "stop_frac = S/T: guidance is applied for t from T down to S".to_string(),
        "smaller stop_frac means a longer guidance window; 1 - stop_frac is the guided fraction of the trajectory"
            .to_string(),
    ]
}

/// Worker pool capped by `LGD_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// A target edge map with the class it was drawn from.
#[derive(Clone, Debug)]
pub struct EdgeTarget {
    pub class: usize,
    pub edges: SpatialMap,
}

/// Edge maps of `corpus.items[range]`, optionally the hand-drawn variants.
pub fn edge_targets(
    corpus: &ShapesCorpus,
    range: std::ops::Range<usize>,
    sketches: bool,
    classes: Option<&[usize]>,
) -> Result<Vec<EdgeTarget>> {
    corpus.items[range]
        .iter()
        .filter(|i| classes.is_none_or(|c| c.contains(&i.class)))
        .map(|i| {
            let edges = if sketches {
                i.sketch
                    .clone()
                    .ok_or_else(|| Error::Input("corpus was generated without sketches".into()))?
            } else {
                i.edges.clone()
            };
            Ok(EdgeTarget { class: i.class, edges })
        })
        .collect()
}

/// Shared state for a set of paired sampling runs. Seed `k` always draws
/// target `k mod targets.len()`, so every setting sees the same pairs.
pub struct Experiment<'a> {
    pub ddpm: &'a Ddpm,
    pub lgp: &'a Lgp<f32>,
    pub targets: &'a [EdgeTarget],
    /// Template for each run; `seed` and `class` are overwritten.
    pub run: SampleRunConfig,
}

/// Outcome of one run, with the generated image in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub row: MetricsRow,
    pub image: Tensor<f32>,
}

impl Experiment<'_> {
    pub fn target_for(&self, seed: u64) -> Result<&EdgeTarget> {
        if self.targets.is_empty() {
            return Err(Error::Config("experiment has no targets".into()));
        }
        Ok(&self.targets[(seed % self.targets.len() as u64) as usize])
    }

    pub fn run_one(&self, experiment: &str, beta: f64, stop_frac: f64, seed: u64) -> Result<RunResult> {
        let target = self.target_for(seed)?;
        let mut guide = GuidanceTarget::new(target.edges.data().clone(), self.lgp.config().loss_kind);
        guide.beta = beta;
        guide.stop_frac = stop_frac;
        let run = SampleRunConfig {
            seed,
            class: Some(target.class),
            ..self.run.clone()
        };
        let start = Instant::now();
        let out = sample(self.ddpm, Some((self.lgp, &guide)), &run)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let image = from_model_space(&out.image);
        let losses: Vec<f64> = out.log.iter().filter_map(|s| s.guidance_loss).collect();
        let lgp_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        Ok(RunResult {
            row: MetricsRow {
                experiment: experiment.to_string(),
                seed,
                beta,
                stop_frac,
                edge_fidelity_mse: eval_edge_fidelity(&image, &target.edges)? as f64,
                lgp_loss,
                wall_ms,
            },
            image,
        })
    }

    /// Every `(beta, stop_frac)` setting crossed with every seed, distributed
    /// over `pool`. Results come back in setting-major order.
    pub fn run_grid(
        &self,
        pool: &rayon::ThreadPool,
        experiment: &str,
        settings: &[(f64, f64)],
        seeds: &[u64],
    ) -> Result<Vec<MetricsRow>> {
        let jobs: Vec<(f64, f64, u64)> = settings
            .iter()
            .flat_map(|&(b, s)| seeds.iter().map(move |&seed| (b, s, seed)))
            .collect();
        pool.install(|| {
            jobs.par_iter()
                .map(|&(b, s, seed)| self.run_one(experiment, b, s, seed).map(|r| r.row))
                .collect()
        })
    }
}

/// One summary row per setting, in the order settings first appear.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SweepRow> {
    let mut keys: Vec<(String, f64, f64)> = Vec::new();
    for r in rows {
        let key = (r.experiment.clone(), r.beta, r.stop_frac);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(experiment, beta, stop_frac)| {
            let group: Vec<&MetricsRow> = rows
                .iter()
                .filter(|r| r.experiment == experiment && r.beta == beta && r.stop_frac == stop_frac)
                .collect();
            let fid: Vec<f64> = group.iter().map(|r| r.edge_fidelity_mse).collect();
            let (mean, std) = mean_std(&fid);
            let losses: Vec<f64> = group.iter().filter_map(|r| r.lgp_loss).collect();
            SweepRow {
                experiment,
                beta,
                stop_frac,
                n: group.len(),
                edge_fidelity_mean: mean,
                edge_fidelity_std: std,
                lgp_loss_mean: (!losses.is_empty()).then(|| mean_std(&losses).0),
                wall_ms_mean: mean_std(&group.iter().map(|r| r.wall_ms).collect::<Vec<_>>()).0,
            }
        })
        .collect()
}

/// Guidance scale sweep at a fixed window.
pub fn sweep_beta(
    exp: &Experiment<'_>,
    pool: &rayon::ThreadPool,
    betas: &[f64],
    stop_frac: f64,
    seeds: &[u64],
) -> Result<(Vec<SweepRow>, Vec<MetricsRow>)> {
    if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::Config(format!("beta must be finite and non-negative, got {b}")));
    }
    let settings: Vec<(f64, f64)> = betas.iter().map(|&b| (b, stop_frac)).collect();
    let rows = exp.run_grid(pool, "sweep_beta", &settings, seeds)?;
    Ok((summarize(&rows), rows))
}

/// Window length sweep at a fixed scale.
pub fn sweep_stop_frac(
    exp: &Experiment<'_>,
    pool: &rayon::ThreadPool,
    stops: &[f64],
    beta: f64,
    seeds: &[u64],
) -> Result<(Vec<SweepRow>, Vec<MetricsRow>)> {
    if let Some(s) = stops.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Config(format!("stop fractions must lie in [0, 1], got {s}")));
    }
    let settings: Vec<(f64, f64)> = stops.iter().map(|&s| (beta, s)).collect();
    let rows = exp.run_grid(pool, "sweep_stop", &settings, seeds)?;
    Ok((summarize(&rows), rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(beta: f64, fid: f64) -> MetricsRow {
        MetricsRow {
            experiment: "x".into(),
            seed: 0,
            beta,
            stop_frac: 0.5,
            edge_fidelity_mse: fid,
            lgp_loss: None,
            wall_ms: 1.0,
        }
    }

    #[test]
    fn summarize_groups_in_first_seen_order() {
        let rows = [row(1.0, 0.1), row(0.0, 0.4), row(1.0, 0.3), row(0.0, 0.2)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].beta, 1.0);
        assert!((s[0].edge_fidelity_mean - 0.2).abs() < 1e-12);
        assert_eq!(s[1].n, 2);
        assert_eq!(s[1].lgp_loss_mean, None);
    }
}
