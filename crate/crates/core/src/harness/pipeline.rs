use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{train_ddpm, Ddpm, DdpmTrainConfig, LabeledImage, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::predictor::{lgp_error_curve, lgp_train, InputMode, Lgp, LgpConfig, LgpExample, LgpTrainConfig, LossKind};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::tensor::Tensor;

use super::dataset::{to_model_space, ShapesCorpus};

/// Fraction of the corpus held out from training, at least one item.
pub const HELDOUT_FRACTION: f64 = 0.1;

/// Training items come first, held-out items last.
pub fn split_corpus(n: usize) -> (Range<usize>, Range<usize>) {
    let held = ((n as f64 * HELDOUT_FRACTION).round() as usize).clamp(1, n.max(1));
    let cut = n.saturating_sub(held).max(if n > 1 { 1 } else { 0 });
    (0..cut, cut..n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpmJob {
    pub base_width: usize,
    pub depth: usize,
    pub schedule_steps: usize,
    pub schedule_kind: ScheduleKind,
    pub train: DdpmTrainConfig,
    pub seed: u64,
}

impl Default for DdpmJob {
    fn default() -> Self {
        Self {
            base_width: 32,
            depth: 2,
            schedule_steps: 250,
            schedule_kind: ScheduleKind::Cosine,
            train: DdpmTrainConfig::default(),
            seed: 0,
        }
    }
}

/// Trains a class-conditional denoiser on the training split.
pub fn run_ddpm_job(corpus: &ShapesCorpus, job: &DdpmJob) -> Result<(Ddpm, Vec<f64>)> {
    let (train, _) = split_corpus(corpus.items.len());
    let images: Vec<Tensor<f32>> = corpus.items[train.clone()]
        .iter()
        .map(|i| to_model_space(&i.image))
        .collect();
    let labeled: Vec<LabeledImage<'_>> = images
        .iter()
        .zip(&corpus.items[train])
        .map(|(image, item)| LabeledImage {
            image,
            class: item.class,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let config = UNetConfig::new(1, job.base_width, job.depth, corpus.config.classes.len());
    let mut unet = UNet::new(config, &mut rng)?;
    let schedule = NoiseSchedule::new(job.schedule_steps, job.schedule_kind)?;
    let log = train_ddpm(&mut unet, &schedule, &labeled, &job.train, &mut rng)?;
    Ok((Ddpm { unet, schedule }, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LgpJob {
    pub loss_kind: LossKind,
    pub input_mode: InputMode,
    pub hidden_dims: Vec<usize>,
    pub train: LgpTrainConfig,
    /// Restricts training to these class names; empty means all classes.
    pub classes: Vec<String>,
    pub seed: u64,
}

impl Default for LgpJob {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::SqErr,
            input_mode: InputMode::Features,
            hidden_dims: vec![512, 256, 128, 64],
            train: LgpTrainConfig::default(),
            classes: Vec::new(),
            seed: 0,
        }
    }
}

/// Model-space images and edge targets for a slice of the corpus.
pub struct EdgeExamples {
    images: Vec<Tensor<f32>>,
    targets: Vec<Tensor<f32>>,
    classes: Vec<usize>,
}

impl EdgeExamples {
    pub fn new(corpus: &ShapesCorpus, range: Range<usize>, classes: Option<&[usize]>) -> Self {
        let items: Vec<_> = corpus.items[range]
            .iter()
            .filter(|i| classes.is_none_or(|c| c.contains(&i.class)))
            .collect();
        Self {
            images: items.iter().map(|i| to_model_space(&i.image)).collect(),
            targets: items.iter().map(|i| i.edges.data().clone()).collect(),
            classes: items.iter().map(|i| i.class).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn examples(&self) -> Vec<LgpExample<'_>> {
        (0..self.len())
            .map(|k| LgpExample {
                image: &self.images[k],
                target: &self.targets[k],
                class: self.classes[k],
            })
            .collect()
    }
}

pub fn lgp_config_for(ddpm: &Ddpm, job: &LgpJob) -> LgpConfig {
    let input_channels = match job.input_mode {
        InputMode::Features => ddpm.unet.config().feature_channels(),
        InputMode::ZtBaseline => ddpm.unet.config().in_channels,
    };
    let mut config = LgpConfig::new(input_channels, job.loss_kind.out_dim(1), job.loss_kind, job.input_mode);
    config.hidden_dims = job.hidden_dims.clone();
    config
}

/// Trains an edge predictor against a frozen denoiser on the training split.
pub fn run_lgp_job(corpus: &ShapesCorpus, ddpm: &Ddpm, job: &LgpJob) -> Result<(Lgp<f32>, Vec<f64>)> {
    let (train, _) = split_corpus(corpus.items.len());
    let filter = class_filter(corpus, &job.classes)?;
    let data = EdgeExamples::new(corpus, train, filter.as_deref());
    if data.is_empty() {
        return Err(Error::Config("no training items match the class filter".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut lgp = Lgp::new(lgp_config_for(ddpm, job), &mut rng)?;
    let log = lgp_train(&mut lgp, ddpm, &data.examples(), &job.train, &mut rng)?;
    Ok((lgp, log))
}

pub fn class_filter(corpus: &ShapesCorpus, names: &[String]) -> Result<Option<Vec<usize>>> {
    if names.is_empty() {
        return Ok(None);
    }
    names.iter().map(|n| corpus.class_id(n)).collect::<Result<_>>().map(Some)
}

/// Held-out predictor error on a grid of normalized times.
pub fn heldout_error_curve(
    corpus: &ShapesCorpus,
    ddpm: &Ddpm,
    lgp: &Lgp<f32>,
    t_grid: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let (_, held) = split_corpus(corpus.items.len());
    let data = EdgeExamples::new(corpus, held, None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lgp_error_curve(lgp, ddpm, &data.examples(), t_grid, samples, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_keeps_both_sides_non_empty() {
        assert_eq!(split_corpus(2000), (0..1800, 1800..2000));
        assert_eq!(split_corpus(5), (0..4, 4..5));
        assert_eq!(split_corpus(2), (0..1, 1..2));
        assert_eq!(split_corpus(1), (0..0, 0..1));
    }

    #[test]
    fn jobs_parse_from_partial_json() {
        let job: DdpmJob = serde_json::from_str(r#"{"base_width": 16, "train": {"steps": 5, "batch_size": 2, "class_dropout": 0.1, "adam": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}}}"#).unwrap();
        assert_eq!(job.base_width, 16);
        assert_eq!(job.depth, 2);
        assert_eq!(job.train.steps, 5);
        let lgp: LgpJob = serde_json::from_str(r#"{"loss_kind": "bce"}"#).unwrap();
        assert_eq!(lgp.loss_kind, LossKind::Bce);
    }
}
