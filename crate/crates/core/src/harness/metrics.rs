use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{shape_err, Result};
use crate::maps::{extract_edges, SpatialMap, DEFAULT_EDGE_THRESHOLD};
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "experiment,seed,beta,stop_frac,edge_fidelity_mse,lgp_loss,wall_ms";
pub const SWEEP_HEADER: &str =
    "experiment,beta,stop_frac,n,edge_fidelity_mean,edge_fidelity_std,lgp_loss_mean,wall_ms_mean";
pub const CURVE_HEADER: &str = "t_norm,mse";

/// One sampling run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub seed: u64,
    pub beta: f64,
    pub stop_frac: f64,
    pub edge_fidelity_mse: f64,
    /// Mean guidance loss over the guided steps; empty when no step was guided.
    pub lgp_loss: Option<f64>,
    pub wall_ms: f64,
}

/// Aggregate over the seeds of one sweep setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment: String,
    pub beta: f64,
    pub stop_frac: f64,
    pub n: usize,
    pub edge_fidelity_mean: f64,
    pub edge_fidelity_std: f64,
    pub lgp_loss_mean: Option<f64>,
    pub wall_ms_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t_norm: f64,
    pub mse: f64,
}

/// Mean squared difference between the edges of `sample` (`[1, H, W]` in
/// `[0, 1]`) and `target`.
pub fn eval_edge_fidelity(sample: &Tensor<f32>, target: &SpatialMap) -> Result<f32> {
    let edges = extract_edges(sample, DEFAULT_EDGE_THRESHOLD)?;
    let (a, b) = (edges.data(), target.data());
    if a.shape() != b.shape() {
        return Err(shape_err!(
            "edge fidelity: sample edges {:?} vs target {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum();
    Ok((sum / a.numel() as f64) as f32)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One-sided sign test: probability of at least `wins` successes out of the
/// untied pairs under a fair coin. Ties are discarded.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if wins == 0 {
        return 1.0;
    }
    let coin = Binomial::new(0.5, n as u64).expect("p = 0.5 is a valid probability");
    coin.sf(wins as u64 - 1)
}

/// Writes `rows` as CSV, preceded by `#`-prefixed comment lines.
pub fn write_csv<S: Serialize>(path: &Path, comments: &[String], rows: &[S]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in comments {
        writeln!(file, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::MapKind;

    #[test]
    fn sign_test_reference_values() {
        assert!((sign_test_p(5, 0) - 1.0 / 32.0).abs() < 1e-12);
        assert!((sign_test_p(0, 4) - 1.0).abs() < 1e-12);
        // P(X >= 8 | n = 10) = (45 + 10 + 1) / 1024.
        assert!((sign_test_p(8, 2) - 56.0 / 1024.0).abs() < 1e-12);
        assert!(sign_test_p(400, 0) > 0.0);
    }

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn flat_sample_scores_edge_fraction() {
        let mut t = vec![0.0; 16 * 16];
        for v in t.iter_mut().take(40) {
            *v = 1.0;
        }
        let target = SpatialMap::new(Tensor::new([1, 16, 16], t).unwrap(), MapKind::Edges).unwrap();
        let flat = Tensor::full([1, 16, 16], 0.3);
        let got = eval_edge_fidelity(&flat, &target).unwrap();
        assert!((got - 40.0 / 256.0).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let target = SpatialMap::new(Tensor::zeros([1, 8, 8]), MapKind::Edges).unwrap();
        assert!(eval_edge_fidelity(&Tensor::zeros([1, 16, 16]), &target).is_err());
    }
}
