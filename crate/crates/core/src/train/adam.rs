use crate::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Real, Tensor};

/// One bias-corrected Adam update of every parameter of `net` that holds a gradient, at
/// step `t ≥ 1`. Updated parameters get fresh leaves, which clears their gradients.
pub fn adam_step<M: Module + ?Sized>(net: &mut M, cfg: &OptimizerConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::Usage("Adam step index starts at 1".into()));
    }
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    let mut result = Ok(());
    net.visit_params_mut(&mut |p| {
        if result.is_err() {
            return;
        }
        let Some(grad) = p.grad() else {
            return;
        };
        if let Some(i) = grad.data().iter().position(|g| !g.is_finite()) {
            result = Err(Error::numeric(
                "adam_step",
                format!("non-finite gradient {} in {} at index {i}", grad.data()[i], p.name()),
            ));
            return;
        }
        let shape = p.shape();
        let mut value: Vec<Real> = p.value().data().to_vec();
        for (((x, &g), m), v) in value.iter_mut().zip(grad.data()).zip(&mut p.m).zip(&mut p.v) {
            let g = g as f64;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let step = cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            *x = (*x as f64 - step) as Real;
        }
        result = p.set_value(Tensor::new(shape, value).expect("same shape"));
    });
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameter;
    use crate::tensor::ops;

    struct One(Parameter);
    impl Module for One {
        fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
            f(&self.0)
        }
        fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
            f(&mut self.0)
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = One(Parameter::new("p", Tensor::scalar(1.0)));
        ops::sum(p.0.var()).unwrap().backward().unwrap();
        let cfg = OptimizerConfig {
            lr: 0.1,
            ..OptimizerConfig::default()
        };
        adam_step(&mut p, &cfg, 1).unwrap();
        assert!((p.0.value().data()[0] - 0.9).abs() < 1e-6);
        assert!(p.0.grad().is_none());
    }

    #[test]
    fn zero_gradient_keeps_value() {
        let mut p = One(Parameter::new("p", Tensor::scalar(1.0)));
        ops::scale(p.0.var(), 0.0).and_then(|v| ops::sum(&v)).unwrap().backward().unwrap();
        adam_step(&mut p, &OptimizerConfig::default(), 1).unwrap();
        assert_eq!(p.0.value().data()[0], 1.0);
    }
}
