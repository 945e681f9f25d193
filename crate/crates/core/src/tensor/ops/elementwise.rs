use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor, Var};

fn unary(
    op: &'static str,
    input: &Var,
    f: impl Fn(Real) -> Real,
    df: impl Fn(Real, Real) -> Real + Send + Sync + 'static,
) -> Result<Var> {
    let value = input.value().map(&f);
    let y = value.data().to_vec();
    Var::from_op(op, value, vec![input.clone()], move |g: &[Real], p: &[Var]| {
        let x = p[0].data();
        let dx = g
            .iter()
            .zip(x)
            .zip(&y)
            .map(|((&gv, &xv), &yv)| gv * df(xv, yv))
            .collect();
        vec![Some(dx)]
    })
}

pub fn relu(input: &Var) -> Result<Var> {
    unary("relu", input, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
}

pub fn leaky_relu(input: &Var, slope: Real) -> Result<Var> {
    unary(
        "leaky_relu",
        input,
        move |x| if x > 0.0 { x } else { slope * x },
        move |x, _| if x > 0.0 { 1.0 } else { slope },
    )
}

pub fn sigmoid(input: &Var) -> Result<Var> {
    unary(
        "sigmoid",
        input,
        |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        },
        |_, y| y * (1.0 - y),
    )
}

/// `k · x` for a constant `k`.
pub fn scale(input: &Var, k: Real) -> Result<Var> {
    unary("scale", input, move |x| k * x, move |_, _| k)
}

fn same_shape(op: &str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "data",
            format!("{op} operands differ in shape: {} vs {}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn add(a: &Var, b: &Var) -> Result<Var> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    let value = Tensor::new(a.shape(), data)?;
    Var::from_op("add", value, vec![a.clone(), b.clone()], |g: &[Real], p: &[Var]| {
        vec![
            p[0].requires_grad().then(|| g.to_vec()),
            p[1].requires_grad().then(|| g.to_vec()),
        ]
    })
}

pub fn sub(a: &Var, b: &Var) -> Result<Var> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let value = Tensor::new(a.shape(), data)?;
    Var::from_op("sub", value, vec![a.clone(), b.clone()], |g: &[Real], p: &[Var]| {
        vec![
            p[0].requires_grad().then(|| g.to_vec()),
            p[1].requires_grad().then(|| g.iter().map(|v| -v).collect()),
        ]
    })
}

/// Elementwise product.
pub fn mul(a: &Var, b: &Var) -> Result<Var> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let value = Tensor::new(a.shape(), data)?;
    Var::from_op("mul", value, vec![a.clone(), b.clone()], |g: &[Real], p: &[Var]| {
        let (x, y) = (p[0].data(), p[1].data());
        vec![
            p[0].requires_grad().then(|| g.iter().zip(y).map(|(g, y)| g * y).collect()),
            p[1].requires_grad().then(|| g.iter().zip(x).map(|(g, x)| g * x).collect()),
        ]
    })
}

/// Multiply every element by a learned one-element `factor`.
pub fn scale_by(input: &Var, factor: &Var) -> Result<Var> {
    if factor.shape().numel() != 1 {
        return Err(Error::dim(
            "data",
            format!("scale factor must hold one value, got shape {}", factor.shape()),
        ));
    }
    let k = factor.data()[0];
    let value = input.value().map(|x| k * x);
    Var::from_op(
        "scale_by",
        value,
        vec![input.clone(), factor.clone()],
        |g: &[Real], p: &[Var]| {
            let k = p[1].data()[0];
            let dk: f64 = g.iter().zip(p[0].data()).map(|(&g, &x)| g as f64 * x as f64).sum();
            vec![
                p[0].requires_grad().then(|| g.iter().map(|g| g * k).collect()),
                p[1].requires_grad().then(|| vec![dk as Real]),
            ]
        },
    )
}

pub fn sum(input: &Var) -> Result<Var> {
    let total = input.value().sum() as Real;
    let len = input.shape().numel();
    Var::from_op("sum", Tensor::scalar(total), vec![input.clone()], move |g: &[Real], _: &[Var]| {
        vec![Some(vec![g[0]; len])]
    })
}

pub fn mean(input: &Var) -> Result<Var> {
    let len = input.shape().numel();
    if len == 0 {
        return Err(Error::Usage("mean of an empty tensor".into()));
    }
    let m = (input.value().sum() / len as f64) as Real;
    Var::from_op("mean", Tensor::scalar(m), vec![input.clone()], move |g: &[Real], _: &[Var]| {
        vec![Some(vec![g[0] / len as Real; len])]
    })
}

pub fn reshape(input: &Var, shape: Shape) -> Result<Var> {
    let value = input.value().reshape(shape)?;
    Var::from_op("reshape", value, vec![input.clone()], |g: &[Real], _: &[Var]| {
        vec![Some(g.to_vec())]
    })
}

/// Concatenate two tensors with equal batch and spatial extents along the channel axis.
pub fn concat_channels(a: &Var, b: &Var) -> Result<Var> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n {
        return Err(Error::dim("batch", format!("cannot concatenate {sa} and {sb}")));
    }
    if (sa.h, sa.w) != (sb.h, sb.w) {
        return Err(Error::dim(
            if sa.h != sb.h { "height" } else { "width" },
            format!("cannot concatenate {sa} and {sb}"),
        ));
    }
    let (ia, ib) = (sa.item(), sb.item());
    let mut data = Vec::with_capacity(sa.numel() + sb.numel());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * ia..(n + 1) * ia]);
        data.extend_from_slice(&b.data()[n * ib..(n + 1) * ib]);
    }
    let value = Tensor::new(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data)?;
    Var::from_op(
        "concat_channels",
        value,
        vec![a.clone(), b.clone()],
        move |g: &[Real], p: &[Var]| {
            let mut ga = Vec::with_capacity(sa.numel());
            let mut gb = Vec::with_capacity(sb.numel());
            for n in 0..sa.n {
                let item = &g[n * (ia + ib)..(n + 1) * (ia + ib)];
                ga.extend_from_slice(&item[..ia]);
                gb.extend_from_slice(&item[ia..]);
            }
            vec![p[0].requires_grad().then_some(ga), p[1].requires_grad().then_some(gb)]
        },
    )
}

/// Inverted dropout: zero each element with probability `rate` and scale survivors by
/// `1/(1-rate)`. Identity when `rng` is `None` (inference).
pub fn dropout(input: &Var, rate: f64, rng: Option<&mut dyn RngCore>) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} is outside [0, 1)")));
    }
    let Some(rng) = rng else {
        return Ok(input.clone());
    };
    if rate == 0.0 {
        return Ok(input.clone());
    }
    let keep = (1.0 / (1.0 - rate)) as Real;
    let mask: Vec<Real> = (0..input.shape().numel())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    let value = Tensor::new(input.shape(), data)?;
    Var::from_op("dropout", value, vec![input.clone()], move |g: &[Real], _: &[Var]| {
        vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(v: &[Real]) -> Var {
        Var::constant(Tensor::new(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap())
    }

    #[test]
    fn relu_and_sigmoid_points() {
        assert_eq!(relu(&row(&[-3.0, 3.0])).unwrap().data(), &[0.0, 3.0]);
        assert_eq!(sigmoid(&row(&[0.0])).unwrap().data(), &[0.5]);
        let extreme = sigmoid(&row(&[-800.0, 800.0])).unwrap();
        assert!(extreme.data()[0] >= 0.0 && extreme.data()[1] <= 1.0);
    }

    #[test]
    fn dropout_rate_checked() {
        let x = row(&[1.0]);
        assert!(matches!(dropout(&x, 1.0, None), Err(Error::Config(_))));
        assert!(matches!(dropout(&x, -0.1, None), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_inference_is_identity() {
        let x = row(&[1.0, 2.0, 3.0]);
        assert_eq!(dropout(&x, 0.5, None).unwrap().data(), x.data());
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Var::constant(Tensor::ones(Shape::new(1, 1, 1, 1000)));
        let y = dropout(&x, 0.25, Some(&mut rng)).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12));
        assert!((650..850).contains(&kept), "kept {kept}");
    }

    #[test]
    fn concat_then_split_gradients() {
        let a = Var::leaf(Tensor::ones(Shape::new(2, 1, 2, 2)));
        let b = Var::leaf(Tensor::ones(Shape::new(2, 3, 2, 2)));
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 4, 2, 2));
        let w = Var::constant(Tensor::from_fn(c.shape(), |_, ch, _, _| ch as Real));
        sum(&mul(&c, &w).unwrap()).unwrap().backward().unwrap();
        assert!(a.grad().unwrap().data().iter().all(|&v| v == 0.0));
        let gb = b.grad().unwrap();
        assert_eq!(gb.get(1, 2, 1, 1), 3.0);
    }
}
