//! Central finite-difference checks of analytic gradients.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{no_grad, Real, Tensor, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − fd| / max(1, |fd|)` over checked coordinates.
    pub max_error: f64,
    pub checked: usize,
    /// `(input index, flat element index, analytic, finite difference)` at the worst error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compare `d f / d inputs` from [`Var::backward`] with central differences of step `step`.
///
/// `f` must build a scalar from leaves holding `inputs`. When `max_coords` is `Some(k)`,
/// `k` coordinates are sampled at random instead of checking every element.
pub fn check_gradients<F, R>(
    inputs: &[Tensor],
    f: F,
    step: f64,
    max_coords: Option<(usize, &mut R)>,
) -> Result<GradCheckReport>
where
    F: Fn(&[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let leaves: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<Real>> = leaves
        .iter()
        .map(|v| v.grad().map(Tensor::into_data).unwrap_or_else(|| vec![0.0; v.shape().numel()]))
        .collect();

    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    let coords = match max_coords {
        Some((k, rng)) if k < all.len() => (0..k).map(|_| all[rng.gen_range(0..all.len())]).collect(),
        _ => all,
    };

    let eval = |which: usize, elem: usize, delta: f64| -> Result<f64> {
        no_grad(|| {
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut t = t.clone();
                    if i == which {
                        t.data_mut()[elem] += delta as Real;
                    }
                    Var::constant(t)
                })
                .collect();
            Ok(f(&vars)?.value().item()? as f64)
        })
    };

    let mut report = GradCheckReport {
        max_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (i, j) in coords {
        let fd = (eval(i, j, step)? - eval(i, j, -step)?) / (2.0 * step);
        let a = analytic[i][j] as f64;
        let err = (a - fd).abs() / fd.abs().max(1.0);
        report.checked += 1;
        if err > report.max_error || report.worst.is_none() {
            report.max_error = report.max_error.max(err);
            report.worst = Some((i, j, a, fd));
        }
    }
    Ok(report)
}
