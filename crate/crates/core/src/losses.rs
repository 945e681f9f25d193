//! Segmentation and adversarial losses.
//!
//! Generator: `BCE(D(x, G(x)), 1) + λ·mean|y − G(x)| + α·J(y, G(x))` with the soft Jaccard
//! loss `J(g, p) = 1 − Σgp / (Σg² + Σp² − Σgp)`.
//! Discriminator: `BCE(D(x, y), 1) + BCE(D(x, G(x)), 0)`.

use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{Real, Tensor, Var};

/// Smoothing added to the soft Jaccard denominator.
pub const JACCARD_EPS: f64 = 1e-7;
/// Probabilities are clamped to `[BCE_EPS, 1 − BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "data",
            format!("{op}: shapes {} and {} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn check_binary(op: &str, t: &Tensor) -> Result<()> {
    match t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(Error::Domain(format!("{op}: value {v} is not binary"))),
        None => Ok(()),
    }
}

fn check_unit(op: &str, t: &Tensor) -> Result<()> {
    match t.data().iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        Some(v) => Err(Error::Domain(format!("{op}: value {v} is outside [0, 1]"))),
        None => Ok(()),
    }
}

/// `1 − |G∩P| / |G∪P|` on binary masks; `0` when both are empty.
pub fn jaccard_distance(gt: &Tensor, pred: &Tensor) -> Result<f64> {
    same_shape("jaccard_distance", gt, pred)?;
    check_binary("jaccard_distance", gt)?;
    check_binary("jaccard_distance", pred)?;
    let (mut inter, mut g, mut p) = (0usize, 0usize, 0usize);
    for (&a, &b) in gt.data().iter().zip(pred.data()) {
        let (a, b) = (a == 1.0, b == 1.0);
        inter += usize::from(a && b);
        g += usize::from(a);
        p += usize::from(b);
    }
    let union = g + p - inter;
    Ok(if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    })
}

struct JaccardSums {
    inter: f64,
    g2: f64,
    p2: f64,
}

impl JaccardSums {
    fn new(g: &[Real], p: &[Real]) -> Self {
        let mut s = JaccardSums {
            inter: 0.0,
            g2: 0.0,
            p2: 0.0,
        };
        for (&g, &p) in g.iter().zip(p) {
            let (g, p) = (g as f64, p as f64);
            s.inter += g * p;
            s.g2 += g * g;
            s.p2 += p * p;
        }
        s
    }

    fn empty(&self) -> bool {
        self.g2 == 0.0 && self.p2 == 0.0
    }

    fn denom(&self) -> f64 {
        self.g2 + self.p2 - self.inter + JACCARD_EPS
    }

    fn loss(&self) -> f64 {
        if self.empty() {
            0.0
        } else {
            1.0 - self.inter / self.denom()
        }
    }

    /// `∂J/∂p = [−g·U + (2p − g)·Σgp] / U²` with `U` the smoothed denominator.
    fn grad(&self, g: &[Real], p: &[Real], scale: f64) -> Vec<Real> {
        if self.empty() {
            return vec![0.0; p.len()];
        }
        let u = self.denom();
        let k = scale / (u * u);
        g.iter()
            .zip(p)
            .map(|(&g, &p)| {
                let (g, p) = (g as f64, p as f64);
                ((-g * u + (2.0 * p - g) * self.inter) * k) as Real
            })
            .collect()
    }
}

/// Soft Jaccard loss of prediction `p` against target `g`, both in `[0, 1]`.
pub fn soft_jaccard_loss(g: &Tensor, p: &Var) -> Result<Var> {
    same_shape("soft_jaccard_loss", g, p.value())?;
    check_unit("soft_jaccard_loss", g)?;
    check_unit("soft_jaccard_loss", p.value())?;
    let sums = JaccardSums::new(g.data(), p.data());
    let target = g.data().to_vec();
    Var::from_op(
        "soft_jaccard_loss",
        Tensor::scalar(sums.loss() as Real),
        vec![p.clone()],
        move |grad: &[Real], parents: &[Var]| {
            vec![Some(sums.grad(&target, parents[0].data(), grad[0] as f64))]
        },
    )
}

/// Per-pixel gradient of [`soft_jaccard_loss`] with respect to `p`.
pub fn soft_jaccard_grad(g: &Tensor, p: &Tensor) -> Result<Tensor> {
    same_shape("soft_jaccard_grad", g, p)?;
    check_unit("soft_jaccard_grad", g)?;
    check_unit("soft_jaccard_grad", p)?;
    let sums = JaccardSums::new(g.data(), p.data());
    Tensor::new(p.shape(), sums.grad(g.data(), p.data(), 1.0))
}

/// Mean binary cross-entropy of probabilities `pred` against targets in `[0, 1]`.
pub fn bce(pred: &Var, target: &Tensor) -> Result<Var> {
    same_shape("bce", target, pred.value())?;
    check_unit("bce target", target)?;
    let n = target.len();
    if n == 0 {
        return Err(Error::Usage("bce of an empty tensor".into()));
    }
    let clamp = |p: Real| (p as f64).clamp(BCE_EPS, 1.0 - BCE_EPS);
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (p, t) = (clamp(p), t as f64);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    let t = target.data().to_vec();
    Var::from_op(
        "bce",
        Tensor::scalar((total / n as f64) as Real),
        vec![pred.clone()],
        move |g: &[Real], parents: &[Var]| {
            let k = g[0] as f64 / n as f64;
            let dx = parents[0]
                .data()
                .iter()
                .zip(&t)
                .map(|(&p, &t)| {
                    let p = p as f64;
                    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                        return 0.0;
                    }
                    ((p - t as f64) / (p * (1.0 - p)) * k) as Real
                })
                .collect();
            vec![Some(dx)]
        },
    )
}

/// Mean absolute difference.
pub fn l1(pred: &Var, target: &Tensor) -> Result<Var> {
    same_shape("l1", target, pred.value())?;
    let n = target.len();
    if n == 0 {
        return Err(Error::Usage("l1 of an empty tensor".into()));
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    let t = target.data().to_vec();
    Var::from_op(
        "l1",
        Tensor::scalar((total / n as f64) as Real),
        vec![pred.clone()],
        move |g: &[Real], parents: &[Var]| {
            let k = g[0] / n as Real;
            let dx = parents[0]
                .data()
                .iter()
                .zip(&t)
                .map(|(&p, &t)| {
                    if p > t {
                        k
                    } else if p < t {
                        -k
                    } else {
                        0.0
                    }
                })
                .collect();
            vec![Some(dx)]
        },
    )
}

/// Adversarial BCE towards "real" plus weighted L1 and soft Jaccard terms. Terms with a
/// zero weight are left out of the graph.
pub fn generator_loss(
    disc_out_on_fake: &Var,
    fake_mask: &Var,
    gt_mask: &Tensor,
    w: LossWeights,
) -> Result<Var> {
    let ones = Tensor::ones(disc_out_on_fake.shape());
    let mut loss = bce(disc_out_on_fake, &ones)?;
    if w.lambda != 0.0 {
        loss = ops::add(&loss, &ops::scale(&l1(fake_mask, gt_mask)?, w.lambda as Real)?)?;
    }
    if w.alpha != 0.0 {
        let j = soft_jaccard_loss(gt_mask, fake_mask)?;
        loss = ops::add(&loss, &ops::scale(&j, w.alpha as Real)?)?;
    }
    Ok(loss)
}

/// BCE of real outputs towards 1 plus BCE of fake outputs towards 0.
pub fn discriminator_loss(disc_out_on_real: &Var, disc_out_on_fake: &Var) -> Result<Var> {
    let real = bce(disc_out_on_real, &Tensor::ones(disc_out_on_real.shape()))?;
    let fake = bce(disc_out_on_fake, &Tensor::zeros(disc_out_on_fake.shape()))?;
    ops::add(&real, &fake)
}
