//! Class-conditional noise-prediction U-Net with activation taps.

mod features;
mod train;
mod unet;

pub use features::{
    cfg_combine, collect_features, collect_features_var, gather_pixel_features, FeatureStack,
};
pub use train::{train_ddpm, DdpmTrainConfig, LabeledImage};
pub use unet::{UNet, UNetConfig, UNetOutput};

use crate::error::Result;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Tape, Tensor};

/// A trained denoiser together with the schedule it was trained on.
#[derive(Clone, Debug)]
pub struct Ddpm {
    pub unet: UNet<f32>,
    pub schedule: NoiseSchedule,
}

impl Ddpm {
    /// Noise prediction without recording gradients.
    pub fn predict_eps(&self, z: &Tensor<f32>, t: usize, cond: &[Option<usize>]) -> Result<Tensor<f32>> {
        self.schedule.check_step(t)?;
        let n = z.shape().first().copied().unwrap_or(0);
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        let out = self.unet.forward_frozen(&tape, zv, &vec![t; n], cond, false)?;
        Ok(out.eps.to_tensor())
    }
}
