//! Guidance targets: edge maps, saliency masks, soft label maps, and the
//! encoder that carries them into the denoiser's space.

mod edges;
mod encoder;
mod labels;
mod pgm;

pub use edges::{extract_edges, DEFAULT_EDGE_THRESHOLD};
pub use encoder::{encode_map, train_tiny_ae, Encoder, TinyAe, TinyAeConfig, TinyAeTrainConfig};
pub use labels::{make_label_map, saliency_blob, LabelRegion, Rect};
pub use pgm::{read_pgm, write_pgm};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    Edges,
    Saliency,
    Labels,
}

/// A single-channel map `[1, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMap {
    data: Tensor<f32>,
    kind: MapKind,
}

impl SpatialMap {
    pub fn new(data: Tensor<f32>, kind: MapKind) -> Result<Self> {
        let s = data.shape();
        if s.len() != 3 || s[0] != 1 {
            return Err(shape_err!("spatial map must be [1, H, W], got {s:?}"));
        }
        if let Some(v) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("spatial map value {v} outside [0, 1]")));
        }
        if kind == MapKind::Edges && data.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Domain("edge maps must be binary".into()));
        }
        Ok(Self { data, kind })
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_data(self) -> Tensor<f32> {
        self.data
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }
}
