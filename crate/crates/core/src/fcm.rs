//! Residual 1-D kernel factorized layers and the factorized-attention block.
//!
//! A factorized layer replaces a `d×d` convolution by a vertical `d×1` convolution followed
//! by a horizontal `1×d` one, each followed by ReLU:
//! `a¹ = φ(bʰ + h̄ᵀ ∗ φ(bᵛ + v̄ ∗ a⁰))`.

use rand::RngCore;

use crate::attention::ChannelAttention;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Module, Parameter};
use crate::tensor::ops::{self, ConvSpec};
use crate::tensor::Var;

/// Nonlinearity applied after each 1-D stage.
///
/// `Identity` exists so tests can compare against a rank-1 2-D convolution; networks always
/// use `Relu`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Phi {
    #[default]
    Relu,
    Identity,
}

impl Phi {
    fn apply(self, x: Var) -> Result<Var> {
        match self {
            Phi::Relu => ops::relu(&x),
            Phi::Identity => Ok(x),
        }
    }
}

/// Vertical `d×1` then horizontal `1×d` convolution, extents preserved.
#[derive(Clone, Debug)]
pub struct FactorizedLayer {
    pub vert: Conv2d,
    pub horz: Conv2d,
    pub phi: Phi,
}

impl FactorizedLayer {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        d: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if d % 2 == 0 {
            return Err(Error::config(format!("factorized kernel extent {d} must be odd")));
        }
        let half = (d - 1) / 2;
        Ok(FactorizedLayer {
            vert: Conv2d::new(
                &format!("{name}.vert"),
                in_c,
                out_c,
                (d, 1),
                ConvSpec::asymmetric(1, half, 0),
                rng,
            ),
            horz: Conv2d::new(
                &format!("{name}.horz"),
                out_c,
                out_c,
                (1, d),
                ConvSpec::asymmetric(1, 0, half),
                rng,
            ),
            phi: Phi::Relu,
        })
    }

    pub fn kernel_extent(&self) -> usize {
        self.vert.weight.shape().h
    }

    pub fn forward(&self, a0: &Var) -> Result<Var> {
        let v = self.phi.apply(self.vert.forward(a0)?)?;
        self.phi.apply(self.horz.forward(&v)?)
    }
}

impl Module for FactorizedLayer {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.vert.visit_params(f);
        self.horz.visit_params(f);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        self.vert.visit_params_mut(f);
        self.horz.visit_params_mut(f);
    }
}

/// Factorized layer followed by channel attention, optionally with a residual bypass added
/// after the attention.
#[derive(Clone, Debug)]
pub struct FcmBlock {
    pub factorized: FactorizedLayer,
    pub cam: ChannelAttention,
    pub residual: bool,
}

impl FcmBlock {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        d: usize,
        residual: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if residual && in_c != out_c {
            return Err(Error::config(format!(
                "residual block needs matching channels, got {in_c} -> {out_c}"
            )));
        }
        Ok(FcmBlock {
            factorized: FactorizedLayer::new(&format!("{name}.fact"), in_c, out_c, d, rng)?,
            cam: ChannelAttention::new(&format!("{name}.cam")),
            residual,
        })
    }

    pub fn forward(&self, input: &Var) -> Result<Var> {
        let out = self.cam.forward(&self.factorized.forward(input)?)?;
        if self.residual {
            ops::add(&out, input)
        } else {
            Ok(out)
        }
    }
}

impl Module for FcmBlock {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.factorized.visit_params(f);
        self.cam.visit_params(f);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        self.factorized.visit_params_mut(f);
        self.cam.visit_params_mut(f);
    }
}

/// Parameter counts `(factorized, full 2-D)` for a layer mapping `in_c` to `out_c`
/// channels with kernel extent `d`.
pub fn count_factorized_savings(in_c: usize, out_c: usize, d: usize) -> (usize, usize) {
    let factorized = in_c * out_c * d + out_c + out_c * out_c * d + out_c;
    let full = in_c * out_c * d * d + out_c;
    (factorized, full)
}
