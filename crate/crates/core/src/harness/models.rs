use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Ddpm, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::maps::{MapKind, SpatialMap};
use crate::predictor::{Lgp, LgpConfig};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::tensor::{ParamSet, RunningStats, Tensor};

use super::checkpoint::Checkpoint;
use super::dataset::{DatasetConfig, Placement, ShapeItem, ShapesCorpus};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Stored {
    Ddpm {
        unet: UNetConfig,
        schedule_steps: usize,
        schedule_kind: ScheduleKind,
        #[serde(default)]
        classes: Vec<String>,
    },
    Lgp {
        lgp: LgpConfig,
    },
    Corpus {
        dataset: DatasetConfig,
        classes: Vec<usize>,
        placements: Vec<Placement>,
    },
}

fn named(params: &ParamSet<f32>) -> Vec<(String, Tensor<f32>)> {
    params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

fn parse(ck: &Checkpoint) -> Result<Stored> {
    Ok(serde_json::from_str(&ck.config)?)
}

fn wrong_kind(path: &Path, want: &str) -> Error {
    Error::Input(format!("{}: not a {want} checkpoint", path.display()))
}

/// `classes` names the conditioning labels in id order.
pub fn ddpm_checkpoint(ddpm: &Ddpm, classes: &[String]) -> Result<Checkpoint> {
    let config = Stored::Ddpm {
        unet: ddpm.unet.config().clone(),
        schedule_steps: ddpm.schedule.steps(),
        schedule_kind: ddpm.schedule.kind(),
        classes: classes.to_vec(),
    };
    Ok(Checkpoint {
        tensors: named(ddpm.unet.params()),
        config: serde_json::to_string_pretty(&config)?,
    })
}

pub fn ddpm_from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(Ddpm, Vec<String>)> {
    let Stored::Ddpm {
        unet,
        schedule_steps,
        schedule_kind,
        classes,
    } = parse(ck)?
    else {
        return Err(wrong_kind(path, "denoiser"));
    };
    let mut model = UNet::new(unet, &mut ChaCha8Rng::seed_from_u64(0))?;
    model.params_mut().load_named(|n| ck.get(n))?;
    let ddpm = Ddpm {
        unet: model,
        schedule: NoiseSchedule::new(schedule_steps, schedule_kind)?,
    };
    Ok((ddpm, classes))
}

pub fn save_ddpm(path: &Path, ddpm: &Ddpm, classes: &[String]) -> Result<()> {
    ddpm_checkpoint(ddpm, classes)?.save(path)
}

pub fn load_ddpm(path: &Path) -> Result<(Ddpm, Vec<String>)> {
    ddpm_from_checkpoint(&Checkpoint::load(path)?, path)
}

pub fn lgp_checkpoint(lgp: &Lgp<f32>) -> Result<Checkpoint> {
    let mut tensors = named(lgp.params());
    for (i, s) in lgp.running_stats().iter().enumerate() {
        tensors.push((format!("bn.{i}.running_mean"), Tensor::new([s.mean.len()], s.mean.clone())?));
        tensors.push((format!("bn.{i}.running_var"), Tensor::new([s.var.len()], s.var.clone())?));
    }
    Ok(Checkpoint {
        tensors,
        config: serde_json::to_string_pretty(&Stored::Lgp {
            lgp: lgp.config().clone(),
        })?,
    })
}

pub fn lgp_from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Lgp<f32>> {
    let Stored::Lgp { lgp: config } = parse(ck)? else {
        return Err(wrong_kind(path, "predictor"));
    };
    let mut lgp = Lgp::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    lgp.params_mut().load_named(|n| ck.get(n))?;
    let stats = (0..lgp.running_stats().len())
        .map(|i| {
            let get = |what: &str| {
                ck.get(&format!("bn.{i}.{what}"))
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| Error::Input(format!("missing batch-norm statistics for layer {i}")))
            };
            Ok(RunningStats {
                mean: get("running_mean")?,
                var: get("running_var")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    lgp.set_running_stats(stats)?;
    Ok(lgp)
}

pub fn save_lgp(path: &Path, lgp: &Lgp<f32>) -> Result<()> {
    lgp_checkpoint(lgp)?.save(path)
}

pub fn load_lgp(path: &Path) -> Result<Lgp<f32>> {
    lgp_from_checkpoint(&Checkpoint::load(path)?, path)
}

fn stack_maps(maps: &[Option<&SpatialMap>]) -> Result<Option<Tensor<f32>>> {
    if maps.iter().any(Option::is_none) {
        return Ok(None);
    }
    let ts: Vec<&Tensor<f32>> = maps.iter().map(|m| m.expect("checked").data()).collect();
    Tensor::stack(&ts).map(Some)
}

pub fn save_corpus(path: &Path, corpus: &ShapesCorpus) -> Result<()> {
    let items = &corpus.items;
    let images: Vec<&Tensor<f32>> = items.iter().map(|i| &i.image).collect();
    let mut tensors = vec![
        ("images".to_string(), Tensor::stack(&images)?),
        (
            "edges".to_string(),
            stack_maps(&items.iter().map(|i| Some(&i.edges)).collect::<Vec<_>>())?.expect("edges present"),
        ),
    ];
    if let Some(t) = stack_maps(&items.iter().map(|i| i.saliency.as_ref()).collect::<Vec<_>>())? {
        tensors.push(("saliency".to_string(), t));
    }
    if let Some(t) = stack_maps(&items.iter().map(|i| i.sketch.as_ref()).collect::<Vec<_>>())? {
        tensors.push(("sketch".to_string(), t));
    }
    let config = Stored::Corpus {
        dataset: corpus.config.clone(),
        classes: items.iter().map(|i| i.class).collect(),
        placements: items.iter().map(|i| i.placement).collect(),
    };
    Checkpoint {
        tensors,
        config: serde_json::to_string(&config)?,
    }
    .save(path)
}

pub fn load_corpus(path: &Path) -> Result<ShapesCorpus> {
    let ck = Checkpoint::load(path)?;
    let Stored::Corpus {
        dataset,
        classes,
        placements,
    } = parse(&ck)?
    else {
        return Err(wrong_kind(path, "dataset"));
    };
    let need = |name: &str| ck.get(name).ok_or_else(|| Error::Input(format!("dataset lacks `{name}`")));
    let images = need("images")?;
    let n = classes.len();
    if images.shape().first() != Some(&n) || placements.len() != n {
        return Err(Error::Input("dataset tables disagree on the item count".into()));
    }
    let map_at = |t: Option<&Tensor<f32>>, i: usize, kind: MapKind| -> Result<Option<SpatialMap>> {
        t.map(|t| SpatialMap::new(t.index_outer(i)?, kind)).transpose()
    };
    let edges = need("edges")?;
    let items = (0..n)
        .map(|i| {
            Ok(ShapeItem {
                image: images.index_outer(i)?,
                class: classes[i],
                edges: SpatialMap::new(edges.index_outer(i)?, MapKind::Edges)?,
                saliency: map_at(ck.get("saliency"), i, MapKind::Saliency)?,
                sketch: map_at(ck.get("sketch"), i, MapKind::Edges)?,
                placement: placements[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapesCorpus { config: dataset, items })
}
