use rand::RngCore;

use crate::attention::{ChannelAttention, PositionAttention};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::nn::{Buffer, Conv2d, Mode, Module, Parameter};
use crate::tensor::ops::{self, ConvSpec};
use crate::tensor::Var;

const LEAK: f64 = 0.2;

/// Conditional patch discriminator over the channel-concatenated image and mask.
///
/// Four `4×4`, stride-2 convolutions; PAM after the second, CAM after the third, sigmoid
/// after the last.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub layers: [Conv2d; 4],
    pub pam: PositionAttention,
    pub cam: ChannelAttention,
}

impl Discriminator {
    pub fn new(config: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let [w1, w2, w3] = config.widths().disc;
        let spec = ConvSpec::new(2, 1);
        let conv = |i: usize, a, b, rng: &mut dyn RngCore| {
            Conv2d::new(&format!("disc.layer{i}"), a, b, (4, 4), spec, rng)
        };
        let l1 = conv(1, 4, w1, rng);
        let l2 = conv(2, w1, w2, rng);
        let pam = PositionAttention::new("disc.pam", w2, rng);
        let l3 = conv(3, w2, w3, rng);
        let l4 = conv(4, w3, 1, rng);
        Ok(Discriminator {
            layers: [l1, l2, l3, l4],
            pam,
            cam: ChannelAttention::new("disc.cam"),
        })
    }

    /// Per-patch probabilities that `mask` is the true segmentation of `image`.
    pub fn forward(&self, image: &Var, mask: &Var, mode: &mut Mode<'_>) -> Result<Var> {
        let leak = LEAK as crate::tensor::Real;
        let x = ops::concat_channels(image, mask)?;
        let x = ops::leaky_relu(&self.layers[0].forward(&x)?, leak)?;
        let x = ops::leaky_relu(&self.layers[1].forward(&x)?, leak)?;
        let x = self.pam.forward(&x, mode)?;
        let x = ops::leaky_relu(&self.layers[2].forward(&x)?, leak)?;
        let x = self.cam.forward(&x)?;
        ops::sigmoid(&self.layers[3].forward(&x)?)
    }
}

impl Module for Discriminator {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.layers[0].visit_params(f);
        self.layers[1].visit_params(f);
        self.pam.visit_params(f);
        self.layers[2].visit_params(f);
        self.cam.visit_params(f);
        self.layers[3].visit_params(f);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        let [l0, l1, l2, l3] = &mut self.layers;
        l0.visit_params_mut(f);
        l1.visit_params_mut(f);
        self.pam.visit_params_mut(f);
        l2.visit_params_mut(f);
        self.cam.visit_params_mut(f);
        l3.visit_params_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.pam.visit_buffers(f);
    }
}
