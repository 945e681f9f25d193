use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance, used for normalisation.
    pub var: Vec<f64>,
    /// Number of values averaged per channel.
    pub count: usize,
}

fn check_affine(x: &Var, weight: &Var, bias: &Var) -> Result<usize> {
    let c = x.shape().c;
    if weight.shape().numel() != c || bias.shape().numel() != c {
        return Err(Error::dim(
            "channel",
            format!(
                "batch norm over {c} channels got scale/shift of {}/{} values",
                weight.shape().numel(),
                bias.shape().numel()
            ),
        ));
    }
    Ok(c)
}

/// Normalise with the batch's own per-channel statistics (two-pass mean and variance).
pub fn batch_norm_train(x: &Var, weight: &Var, bias: &Var, eps: f64) -> Result<(Var, BatchStats)> {
    let c = check_affine(x, weight, bias)?;
    let s = x.shape();
    let plane = s.plane();
    let count = s.n * plane;
    if count == 0 {
        return Err(Error::dim("batch", "batch norm over an empty batch"));
    }
    let data = x.data();
    let channel = |ch: usize| {
        (0..s.n).flat_map(move |n| {
            let start = (n * c + ch) * plane;
            data[start..start + plane].iter().map(|&v| v as f64)
        })
    };
    let mean: Vec<f64> = (0..c).map(|ch| channel(ch).sum::<f64>() / count as f64).collect();
    let var: Vec<f64> = (0..c)
        .map(|ch| channel(ch).map(|v| (v - mean[ch]).powi(2)).sum::<f64>() / count as f64)
        .collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let (wv, bv) = (weight.data(), bias.data());
    let mut xhat = vec![0.0 as Real; data.len()];
    let mut out = vec![0.0 as Real; data.len()];
    for n in 0..s.n {
        for ch in 0..c {
            let start = (n * c + ch) * plane;
            for i in start..start + plane {
                let xh = ((data[i] as f64 - mean[ch]) * inv_std[ch]) as Real;
                xhat[i] = xh;
                out[i] = wv[ch] * xh + bv[ch];
            }
        }
    }
    let value = Tensor::new(s, out)?;
    let stats = BatchStats { mean, var, count };
    let y = Var::from_op(
        "batch_norm",
        value,
        vec![x.clone(), weight.clone(), bias.clone()],
        move |g: &[Real], p: &[Var]| {
            let wv = p[1].data();
            let mut dw = vec![0.0f64; c];
            let mut db = vec![0.0f64; c];
            for n in 0..s.n {
                for ch in 0..c {
                    let start = (n * c + ch) * plane;
                    for i in start..start + plane {
                        db[ch] += g[i] as f64;
                        dw[ch] += g[i] as f64 * xhat[i] as f64;
                    }
                }
            }
            let dx = p[0].requires_grad().then(|| {
                // dx = γ/σ · (g − mean(g) − x̂ · mean(g·x̂))
                let mut dx = vec![0.0 as Real; g.len()];
                for n in 0..s.n {
                    for ch in 0..c {
                        let k = wv[ch] as f64 * inv_std[ch];
                        let mg = db[ch] / count as f64;
                        let mgx = dw[ch] / count as f64;
                        let start = (n * c + ch) * plane;
                        for i in start..start + plane {
                            dx[i] = (k * (g[i] as f64 - mg - xhat[i] as f64 * mgx)) as Real;
                        }
                    }
                }
                dx
            });
            vec![
                dx,
                p[1].requires_grad().then(|| dw.iter().map(|&v| v as Real).collect()),
                p[2].requires_grad().then(|| db.iter().map(|&v| v as Real).collect()),
            ]
        },
    )?;
    Ok((y, stats))
}

/// Normalise with fixed running statistics.
pub fn batch_norm_eval(
    x: &Var,
    weight: &Var,
    bias: &Var,
    running_mean: &[Real],
    running_var: &[Real],
    eps: f64,
) -> Result<Var> {
    let c = check_affine(x, weight, bias)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::dim("channel", "running statistics do not match channel count"));
    }
    let s = x.shape();
    let plane = s.plane();
    let inv_std: Vec<Real> = running_var
        .iter()
        .map(|&v| (1.0 / (v as f64 + eps).sqrt()) as Real)
        .collect();
    let mean = running_mean.to_vec();
    let (wv, bv) = (weight.data(), bias.data());
    let mut out = x.data().to_vec();
    for n in 0..s.n {
        for ch in 0..c {
            let start = (n * c + ch) * plane;
            for v in &mut out[start..start + plane] {
                *v = wv[ch] * (*v - mean[ch]) * inv_std[ch] + bv[ch];
            }
        }
    }
    let value = Tensor::new(s, out)?;
    Var::from_op(
        "batch_norm_eval",
        value,
        vec![x.clone(), weight.clone(), bias.clone()],
        move |g: &[Real], p: &[Var]| {
            let (xd, wv) = (p[0].data(), p[1].data());
            let mut dx = vec![0.0 as Real; g.len()];
            let mut dw = vec![0.0f64; c];
            let mut db = vec![0.0f64; c];
            for n in 0..s.n {
                for ch in 0..c {
                    let start = (n * c + ch) * plane;
                    for i in start..start + plane {
                        let xh = (xd[i] - mean[ch]) * inv_std[ch];
                        dx[i] = g[i] * wv[ch] * inv_std[ch];
                        dw[ch] += (g[i] * xh) as f64;
                        db[ch] += g[i] as f64;
                    }
                }
            }
            vec![
                p[0].requires_grad().then_some(dx),
                p[1].requires_grad().then(|| dw.iter().map(|&v| v as Real).collect()),
                p[2].requires_grad().then(|| db.iter().map(|&v| v as Real).collect()),
            ]
        },
    )
}
