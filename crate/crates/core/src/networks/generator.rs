use rand::RngCore;

use crate::attention::{ChannelAttention, PositionAttention};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::fcm::{FactorizedLayer, FcmBlock};
use crate::nn::{Buffer, Conv2d, ConvTranspose2d, Mode, Module, Parameter};
use crate::tensor::ops::{self, ConvSpec};
use crate::tensor::{no_grad, Shape, Tensor, Var};

const FCM_KERNEL: usize = 3;

/// Image pyramid at scales 1, 1/2, 1/4, 1/8, each through `conv 3×3 → ReLU → CAM`, fused by
/// upsampling back to full size and averaging.
#[derive(Clone, Debug)]
pub struct MultiscaleBlock {
    pub branches: Vec<(Conv2d, ChannelAttention)>,
}

impl MultiscaleBlock {
    pub fn new(name: &str, in_c: usize, out_c: usize, rng: &mut dyn RngCore) -> Self {
        let branches = (0..4)
            .map(|i| {
                let prefix = format!("{name}.branch{i}");
                (
                    Conv2d::new(&format!("{prefix}.conv"), in_c, out_c, (3, 3), ConvSpec::new(1, 1), rng),
                    ChannelAttention::new(&format!("{prefix}.cam")),
                )
            })
            .collect();
        MultiscaleBlock { branches }
    }

    /// Branch outputs at their own resolutions, finest first.
    pub fn forward_branches(&self, x: &Var) -> Result<Vec<Var>> {
        let s = x.shape();
        if s.h % 8 != 0 || s.w % 8 != 0 {
            return Err(Error::config(format!(
                "multiscale input {}×{} is not divisible by 8",
                s.h, s.w
            )));
        }
        self.branches
            .iter()
            .enumerate()
            .map(|(i, (conv, cam))| {
                let f = 1 << i;
                let level = if f == 1 {
                    x.clone()
                } else {
                    ops::bilinear_resize(x, s.h / f, s.w / f)?
                };
                cam.forward(&ops::relu(&conv.forward(&level)?)?)
            })
            .collect()
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        let s = x.shape();
        let mut fused: Option<Var> = None;
        for b in self.forward_branches(x)? {
            let up = if b.shape().h == s.h {
                b
            } else {
                ops::bilinear_upsample(&b, s.h, s.w)?
            };
            fused = Some(match fused {
                None => up,
                Some(acc) => ops::add(&acc, &up)?,
            });
        }
        ops::scale(&fused.expect("four branches"), 0.25)
    }
}

impl Module for MultiscaleBlock {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        for (conv, cam) in &self.branches {
            conv.visit_params(f);
            cam.visit_params(f);
        }
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        for (conv, cam) in &mut self.branches {
            conv.visit_params_mut(f);
            cam.visit_params_mut(f);
        }
    }
}

/// `conv 3×3 (stride 1) → ReLU → maxpool 2 → PAM`.
#[derive(Clone, Debug)]
pub struct DownLayer {
    pub conv: Conv2d,
    pub pam: PositionAttention,
}

impl DownLayer {
    pub fn new(name: &str, in_c: usize, out_c: usize, rng: &mut dyn RngCore) -> Self {
        DownLayer {
            conv: Conv2d::new(&format!("{name}.conv"), in_c, out_c, (3, 3), ConvSpec::new(1, 1), rng),
            pam: PositionAttention::new(&format!("{name}.pam"), out_c, rng),
        }
    }

    pub fn forward(&self, x: &Var, mode: &mut Mode<'_>) -> Result<Var> {
        let y = ops::maxpool2(&ops::relu(&self.conv.forward(x)?)?)?;
        self.pam.forward(&y, mode)
    }
}

impl Module for DownLayer {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.conv.visit_params(f);
        self.pam.visit_params(f);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        self.conv.visit_params_mut(f);
        self.pam.visit_params_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.pam.visit_buffers(f);
    }
}

/// `transposed conv 3×3 (stride 2) → ReLU → PAM → dropout → 2 FCMs`.
#[derive(Clone, Debug)]
pub struct UpLayer {
    pub deconv: ConvTranspose2d,
    pub pam: PositionAttention,
    pub fcms: Vec<FcmBlock>,
}

impl UpLayer {
    pub fn new(name: &str, in_c: usize, out_c: usize, rng: &mut dyn RngCore) -> Result<Self> {
        Ok(UpLayer {
            deconv: ConvTranspose2d::new(&format!("{name}.deconv"), in_c, out_c, 3, 2, 1, 1, rng),
            pam: PositionAttention::new(&format!("{name}.pam"), out_c, rng),
            fcms: (0..2)
                .map(|i| FcmBlock::new(&format!("{name}.fcm{i}"), out_c, out_c, FCM_KERNEL, true, rng))
                .collect::<Result<_>>()?,
        })
    }

    pub fn forward(&self, x: &Var, dropout_rate: f64, mode: &mut Mode<'_>) -> Result<Var> {
        let y = ops::relu(&self.deconv.forward(x)?)?;
        let y = self.pam.forward(&y, mode)?;
        let mut y = ops::dropout(&y, dropout_rate, mode.rng())?;
        for block in &self.fcms {
            y = block.forward(&y)?;
        }
        Ok(y)
    }
}

impl Module for UpLayer {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.deconv.visit_params(f);
        self.pam.visit_params(f);
        self.fcms.visit_params(f);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        self.deconv.visit_params_mut(f);
        self.pam.visit_params_mut(f);
        self.fcms.visit_params_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.pam.visit_buffers(f);
    }
}

/// Encoder–decoder producing a one-channel soft mask at input resolution.
#[derive(Clone, Debug)]
pub struct Generator {
    config: ModelConfig,
    pub multiscale: MultiscaleBlock,
    pub down1: DownLayer,
    pub down2: DownLayer,
    pub fcm_stage1: Vec<FcmBlock>,
    pub down3: DownLayer,
    pub fcm_stage2: Vec<FcmBlock>,
    pub bottleneck: FactorizedLayer,
    pub bottleneck_cam: ChannelAttention,
    pub bottleneck_pam: PositionAttention,
    pub up1: UpLayer,
    pub up2: UpLayer,
    pub head: Conv2d,
}

impl Generator {
    pub fn new(config: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let fcms = |name: &str, count: usize, c: usize, rng: &mut dyn RngCore| {
            (0..count)
                .map(|i| FcmBlock::new(&format!("gen.{name}.{i}"), c, c, FCM_KERNEL, true, rng))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Generator {
            config: config.clone(),
            multiscale: MultiscaleBlock::new("gen.multiscale", 3, w.base, rng),
            down1: DownLayer::new("gen.down1", w.base, w.down1, rng),
            down2: DownLayer::new("gen.down2", w.down1, w.stage1, rng),
            fcm_stage1: fcms("fcm_stage1", config.n_fcm_stage1, w.stage1, rng)?,
            down3: DownLayer::new("gen.down3", w.stage1, w.stage2, rng),
            fcm_stage2: fcms("fcm_stage2", config.n_fcm_stage2, w.stage2, rng)?,
            bottleneck: FactorizedLayer::new("gen.bottleneck.fact", w.stage2, w.stage2, FCM_KERNEL, rng)?,
            bottleneck_cam: ChannelAttention::new("gen.bottleneck.cam"),
            bottleneck_pam: PositionAttention::new("gen.bottleneck.pam", w.stage2, rng),
            up1: UpLayer::new("gen.up1", w.stage2, w.stage2, rng)?,
            up2: UpLayer::new("gen.up2", w.stage2, w.base, rng)?,
            head: Conv2d::new("gen.head", w.base, 1, (3, 3), ConvSpec::new(1, 1), rng),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same weights, different expected input resolution.
    pub fn with_input_size(&self, size: usize) -> Result<Self> {
        let mut config = self.config.clone();
        config.input_size = size;
        config.validate()?;
        let mut g = self.clone();
        g.config = config;
        Ok(g)
    }

    fn check_input(&self, x: &Var) -> Result<()> {
        let s = x.shape();
        let size = self.config.input_size;
        if s.c != 3 || s.h != size || s.w != size {
            return Err(Error::config(format!(
                "generator expects (n, 3, {size}, {size}) input, got {s}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Var, mode: &mut Mode<'_>) -> Result<Var> {
        Ok(self.forward_traced(x, mode)?.0)
    }

    /// Forward pass that also reports the shape after every stage.
    pub fn forward_traced(
        &self,
        x: &Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Vec<(&'static str, Shape)>)> {
        self.check_input(x)?;
        let mut trace = Vec::new();
        let mut y = self.multiscale.forward(x)?;
        trace.push(("multiscale", y.shape()));
        y = self.down1.forward(&y, mode)?;
        trace.push(("down1", y.shape()));
        y = self.down2.forward(&y, mode)?;
        trace.push(("down2", y.shape()));
        for block in &self.fcm_stage1 {
            y = block.forward(&y)?;
        }
        trace.push(("fcm_stage1", y.shape()));
        y = self.down3.forward(&y, mode)?;
        trace.push(("down3", y.shape()));
        for block in &self.fcm_stage2 {
            y = block.forward(&y)?;
        }
        trace.push(("fcm_stage2", y.shape()));
        let f = self.bottleneck.forward(&y)?;
        y = ops::add(&self.bottleneck_cam.forward(&f)?, &self.bottleneck_pam.forward(&f, mode)?)?;
        trace.push(("bottleneck", y.shape()));
        let rate = self.config.dropout_rate;
        y = self.up1.forward(&y, rate, mode)?;
        trace.push(("up1", y.shape()));
        y = self.up2.forward(&y, rate, mode)?;
        trace.push(("up2", y.shape()));
        let size = self.config.input_size;
        y = ops::bilinear_upsample(&y, size, size)?;
        y = ops::sigmoid(&self.head.forward(&y)?)?;
        trace.push(("head", y.shape()));
        Ok((y, trace))
    }

    /// Inference on a batch of images without recording gradients.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        no_grad(|| {
            let out = self.forward(&Var::constant(images.clone()), &mut Mode::Eval)?;
            Ok(out.value().clone())
        })
    }
}

impl Module for Generator {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.multiscale.visit_params(f);
        self.down1.visit_params(f);
        self.down2.visit_params(f);
        self.fcm_stage1.visit_params(f);
        self.down3.visit_params(f);
        self.fcm_stage2.visit_params(f);
        self.bottleneck.visit_params(f);
        self.bottleneck_cam.visit_params(f);
        self.bottleneck_pam.visit_params(f);
        self.up1.visit_params(f);
        self.up2.visit_params(f);
        self.head.visit_params(f);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        self.multiscale.visit_params_mut(f);
        self.down1.visit_params_mut(f);
        self.down2.visit_params_mut(f);
        self.fcm_stage1.visit_params_mut(f);
        self.down3.visit_params_mut(f);
        self.fcm_stage2.visit_params_mut(f);
        self.bottleneck.visit_params_mut(f);
        self.bottleneck_cam.visit_params_mut(f);
        self.bottleneck_pam.visit_params_mut(f);
        self.up1.visit_params_mut(f);
        self.up2.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.down1.visit_buffers(f);
        self.down2.visit_buffers(f);
        self.down3.visit_buffers(f);
        self.bottleneck_pam.visit_buffers(f);
        self.up1.visit_buffers(f);
        self.up2.visit_buffers(f);
    }
}
