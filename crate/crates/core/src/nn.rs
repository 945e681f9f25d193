//! Parameter containers and the basic layers the networks are assembled from.

use std::sync::RwLock;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::ops::{self, ConvSpec};
use crate::tensor::{Real, Shape, Tensor, Var};

/// Forward-pass mode. Training mode owns the random source for dropout.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub(crate) fn rng(&mut self) -> Option<&mut dyn RngCore> {
        match self {
            Mode::Eval => None,
            Mode::Train(rng) => Some(&mut **rng),
        }
    }
}

/// A named trainable tensor with Adam moment state.
pub struct Parameter {
    name: String,
    var: Var,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl Clone for Parameter {
    // A clone gets its own leaf so gradients are never shared between copies.
    fn clone(&self) -> Self {
        Parameter {
            name: self.name.clone(),
            var: Var::leaf(self.var.value().clone()),
            m: self.m.clone(),
            v: self.v.clone(),
        }
    }
}

impl std::fmt::Debug for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Parameter")
            .field("name", &self.name)
            .field("shape", &self.var.shape())
            .finish()
    }
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let len = value.len();
        Parameter {
            name: name.into(),
            var: Var::leaf(value),
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The leaf used in forward passes.
    pub fn var(&self) -> &Var {
        &self.var
    }

    pub fn value(&self) -> &Tensor {
        self.var.value()
    }

    pub fn shape(&self) -> Shape {
        self.var.shape()
    }

    pub fn numel(&self) -> usize {
        self.var.shape().numel()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.var.grad()
    }

    pub fn zero_grad(&self) {
        self.var.zero_grad();
    }

    /// Adam first and second moments.
    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Replace the value with a fresh leaf. Any accumulated gradient is dropped.
    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.shape() {
            return Err(Error::dim(
                "data",
                format!("parameter {} has shape {}, got {}", self.name, self.shape(), value.shape()),
            ));
        }
        self.var = Var::leaf(value);
        Ok(())
    }

    pub(crate) fn set_moments(&mut self, m: Vec<f64>, v: Vec<f64>) -> Result<()> {
        if m.len() != self.numel() || v.len() != self.numel() {
            return Err(Error::dim("data", format!("moment length mismatch for {}", self.name)));
        }
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// Non-trainable state saved with a model, such as batch-norm running statistics.
#[derive(Debug)]
pub struct Buffer {
    name: String,
    value: RwLock<Vec<Real>>,
}

impl Clone for Buffer {
    fn clone(&self) -> Self {
        Buffer {
            name: self.name.clone(),
            value: RwLock::new(self.get()),
        }
    }
}

impl Buffer {
    pub fn new(name: impl Into<String>, value: Vec<Real>) -> Self {
        Buffer {
            name: name.into(),
            value: RwLock::new(value),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get(&self) -> Vec<Real> {
        self.value.read().expect("buffer lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.value.read().expect("buffer lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn set(&self, value: Vec<Real>) -> Result<()> {
        let mut slot = self.value.write().expect("buffer lock poisoned");
        if slot.len() != value.len() {
            return Err(Error::dim("data", format!("buffer {} length mismatch", self.name)));
        }
        *slot = value;
        Ok(())
    }

    fn update(&self, f: impl FnOnce(&mut [Real])) {
        f(&mut self.value.write().expect("buffer lock poisoned"));
    }
}

/// Anything holding parameters. Visit order is fixed and defines checkpoint order.
pub trait Module {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter));
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter));
    fn visit_buffers<'a>(&'a self, _f: &mut dyn FnMut(&'a Buffer)) {}

    fn parameters(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p));
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        self.visit_params_mut(&mut |p| out.push(p));
        out
    }

    fn buffers(&self) -> Vec<&Buffer> {
        let mut out = Vec::new();
        self.visit_buffers(&mut |b| out.push(b));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut total = 0;
        self.visit_params(&mut |p| total += p.numel());
        total
    }

    fn zero_grad(&self) {
        self.visit_params(&mut |p| p.zero_grad());
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.iter().for_each(|m| m.visit_params(f));
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        self.iter_mut().for_each(|m| m.visit_params_mut(f));
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.iter().for_each(|m| m.visit_buffers(f));
    }
}

/// Uniform `±1/sqrt(fan_in)` initialisation for weights and biases.
fn fan_in_uniform(shape: Shape, fan_in: usize, rng: &mut dyn RngCore) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..shape.numel())
        .map(|_| rng.gen_range(-bound..bound) as Real)
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// 2-D convolution layer with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub spec: ConvSpec,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        spec: ConvSpec,
        rng: &mut dyn RngCore,
    ) -> Self {
        let fan_in = in_c * kernel.0 * kernel.1;
        let w_shape = Shape::new(out_c, in_c, kernel.0, kernel.1);
        Conv2d {
            weight: Parameter::new(format!("{name}.weight"), fan_in_uniform(w_shape, fan_in, rng)),
            bias: Parameter::new(
                format!("{name}.bias"),
                fan_in_uniform(Shape::new(out_c, 1, 1, 1), fan_in, rng),
            ),
            spec,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        ops::conv2d_with(x, self.weight.var(), Some(self.bias.var()), self.spec)
    }
}

impl Module for Conv2d {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Transposed convolution layer with bias; weight is `(in_c, out_c, kh, kw)`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let fan_in = out_c * kernel * kernel;
        ConvTranspose2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                fan_in_uniform(Shape::new(in_c, out_c, kernel, kernel), fan_in, rng),
            ),
            bias: Parameter::new(
                format!("{name}.bias"),
                fan_in_uniform(Shape::new(out_c, 1, 1, 1), fan_in, rng),
            ),
            stride,
            padding,
            output_padding,
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        ops::conv_transpose2d(
            x,
            self.weight.var(),
            Some(self.bias.var()),
            self.stride,
            self.padding,
            self.output_padding,
        )
    }
}

impl Module for ConvTranspose2d {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Per-channel batch normalisation with learned scale/shift and running statistics.
///
/// Running statistics follow `running = momentum·running + (1 − momentum)·batch`, with the
/// unbiased batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub running_mean: Buffer,
    pub running_var: Buffer,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        let shape = Shape::new(channels, 1, 1, 1);
        BatchNorm2d {
            weight: Parameter::new(format!("{name}.weight"), Tensor::ones(shape)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(shape)),
            running_mean: Buffer::new(format!("{name}.running_mean"), vec![0.0; channels]),
            running_var: Buffer::new(format!("{name}.running_var"), vec![1.0; channels]),
        }
    }

    pub fn forward(&self, x: &Var, training: bool) -> Result<Var> {
        if !training {
            return ops::batch_norm_eval(
                x,
                self.weight.var(),
                self.bias.var(),
                &self.running_mean.get(),
                &self.running_var.get(),
                BATCH_NORM_EPS,
            );
        }
        let (y, stats) =
            ops::batch_norm_train(x, self.weight.var(), self.bias.var(), BATCH_NORM_EPS)?;
        let m = BATCH_NORM_MOMENTUM;
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        self.running_mean.update(|rm| {
            for (r, &b) in rm.iter_mut().zip(&stats.mean) {
                *r = (m * *r as f64 + (1.0 - m) * b) as Real;
            }
        });
        self.running_var.update(|rv| {
            for (r, &b) in rv.iter_mut().zip(&stats.var) {
                *r = (m * *r as f64 + (1.0 - m) * b * unbias) as Real;
            }
        });
        Ok(y)
    }
}

impl Module for BatchNorm2d {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        f(&self.running_mean);
        f(&self.running_var);
    }
}
