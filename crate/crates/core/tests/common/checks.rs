//! Criterion-level checks shared by the integration tests and the acceptance runner.
//! Each returns a one-line summary on success and a description of the failure otherwise.

#![allow(dead_code)]

use lesion_gan::attention::{position_attend, ChannelAttention, PositionAttention};
use lesion_gan::fcm::{FactorizedLayer, Phi};
use lesion_gan::losses::{soft_jaccard_grad, soft_jaccard_loss};
use lesion_gan::metrics::{compute_metrics, confusion, thresholded_jsc};
use lesion_gan::networks::Generator;
use lesion_gan::nn::{BatchNorm2d, Conv2d, Mode, BATCH_NORM_EPS};
use lesion_gan::tensor::ops::{self, ConvSpec};
use lesion_gan::tensor::no_grad;
use lesion_gan::{ModelConfig, Real, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{self, f64s, max_abs_diff};

pub type Check = std::result::Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, lo as Real, hi as Real, rng)
}

fn constant(t: &Tensor) -> Var {
    Var::constant(t.clone())
}

/// Largest absolute deviation from the oracle over `instances` random cases, per layer.
pub fn layer_oracle_errors(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut worst = vec![
        ("conv2d", 0.0f64),
        ("conv_transpose2d", 0.0),
        ("maxpool2", 0.0),
        ("bilinear_upsample", 0.0),
        ("softmax_rows", 0.0),
        ("channel_attention", 0.0),
        ("position_attention", 0.0),
        ("factorized_layer", 0.0),
    ];
    let mut bump = |name: &str, e: f64| {
        let slot = worst.iter_mut().find(|(n, _)| *n == name).expect("known layer");
        slot.1 = slot.1.max(e);
    };
    for _ in 0..instances {
        bump("conv2d", conv2d_case(&mut r));
        bump("conv_transpose2d", conv_transpose_case(&mut r));
        bump("maxpool2", maxpool_case(&mut r));
        bump("bilinear_upsample", bilinear_case(&mut r));
        bump("softmax_rows", softmax_case(&mut r));
        bump("channel_attention", cam_case(&mut r));
        bump("position_attention", pam_case(&mut r).max(pam_module_case(&mut r)));
        bump("factorized_layer", factorized_case(&mut r));
    }
    worst
}

pub fn conv2d_case(r: &mut ChaCha8Rng) -> f64 {
    let (n, c, o) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let (kh, kw) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let stride = r.gen_range(1..=2);
    let (ph, pw) = (r.gen_range(0..=1), r.gen_range(0..=1));
    // extents are chosen so the stride tiles the padded input exactly
    let fit = |len: usize, k: usize, p: usize| len + (len + 2 * p - k) % stride;
    let (h, w) = (fit(r.gen_range(3..=7), kh, ph), fit(r.gen_range(3..=7), kw, pw));
    let xs = Shape::new(n, c, h, w);
    let ws = Shape::new(o, c, kh, kw);
    let x = random(xs, -1.0, 1.0, r);
    let wt = random(ws, -1.0, 1.0, r);
    let b = random(Shape::new(o, 1, 1, 1), -1.0, 1.0, r);
    let got = ops::conv2d_with(
        &constant(&x),
        &constant(&wt),
        Some(&constant(&b)),
        ConvSpec::asymmetric(stride, ph, pw),
    )
    .expect("conv2d");
    let (want, os) =
        oracles::conv2d(&f64s(&x), xs, &f64s(&wt), ws, Some(&f64s(&b)), stride, ph, pw);
    assert_eq!(got.shape(), os, "conv2d output shape");
    max_abs_diff(&f64s(got.value()), &want)
}

pub fn conv_transpose_case(r: &mut ChaCha8Rng) -> f64 {
    let (n, c, o) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let (h, w) = (r.gen_range(1..=4), r.gen_range(1..=4));
    let k = r.gen_range(1..=4);
    let stride = r.gen_range(1..=2);
    let pad = r.gen_range(0..k.min(2));
    let out_pad = r.gen_range(0..stride);
    let xs = Shape::new(n, c, h, w);
    let ws = Shape::new(c, o, k, k);
    let x = random(xs, -1.0, 1.0, r);
    let wt = random(ws, -1.0, 1.0, r);
    let b = random(Shape::new(o, 1, 1, 1), -1.0, 1.0, r);
    if (h.min(w) - 1) * stride + k + out_pad <= 2 * pad {
        return 0.0;
    }
    let got = ops::conv_transpose2d(
        &constant(&x),
        &constant(&wt),
        Some(&constant(&b)),
        stride,
        pad,
        out_pad,
    )
    .expect("conv_transpose2d");
    let (want, os) = oracles::conv_transpose2d(
        &f64s(&x),
        xs,
        &f64s(&wt),
        ws,
        Some(&f64s(&b)),
        stride,
        pad,
        out_pad,
    );
    assert_eq!(got.shape(), os, "conv_transpose2d output shape");
    max_abs_diff(&f64s(got.value()), &want)
}

pub fn maxpool_case(r: &mut ChaCha8Rng) -> f64 {
    let xs = Shape::new(r.gen_range(1..=2), 3, 2 * r.gen_range(1..=4), 2 * r.gen_range(1..=4));
    let x = random(xs, -1.0, 1.0, r);
    let got = ops::maxpool2(&constant(&x)).expect("maxpool2");
    max_abs_diff(&f64s(got.value()), &oracles::maxpool2(&f64s(&x), xs))
}

pub fn bilinear_case(r: &mut ChaCha8Rng) -> f64 {
    let xs = Shape::new(1, r.gen_range(1..=2), r.gen_range(1..=5), r.gen_range(1..=5));
    let (th, tw) = (xs.h + r.gen_range(0..=6), xs.w + r.gen_range(0..=6));
    let x = random(xs, -1.0, 1.0, r);
    let got = ops::bilinear_upsample(&constant(&x), th, tw).expect("bilinear_upsample");
    max_abs_diff(&f64s(got.value()), &oracles::bilinear(&f64s(&x), xs, th, tw))
}

pub fn softmax_case(r: &mut ChaCha8Rng) -> f64 {
    let s = Shape::new(1, 1, r.gen_range(1..=5), r.gen_range(1..=8));
    let x = random(s, -5.0, 5.0, r);
    let got = ops::softmax_rows(&constant(&x)).expect("softmax_rows");
    max_abs_diff(&f64s(got.value()), &oracles::softmax_rows(&f64s(&x), s.w))
}

pub fn cam_case(r: &mut ChaCha8Rng) -> f64 {
    let s = Shape::new(r.gen_range(1..=2), r.gen_range(1..=4), r.gen_range(1..=3), r.gen_range(1..=3));
    let a = random(s, -1.0, 1.0, r);
    let gamma: f64 = r.gen_range(-1.0..1.0);
    let mut cam = ChannelAttention::new("cam");
    cam.gamma.set_value(Tensor::scalar(gamma as Real)).expect("scalar");
    let got = cam.forward(&constant(&a)).expect("cam forward");
    let map = cam.attention_map(&a).expect("cam map");
    let (want, want_map) = oracles::channel_attention(&f64s(&a), s, gamma);
    max_abs_diff(&f64s(got.value()), &want).max(max_abs_diff(&f64s(&map), &want_map))
}

pub fn pam_case(r: &mut ChaCha8Rng) -> f64 {
    let s = Shape::new(r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
    let [a, b, c, d] = [(); 4].map(|_| random(s, -1.0, 1.0, r));
    let eta: f64 = r.gen_range(-1.0..1.0);
    let got = position_attend(
        &constant(&a),
        &constant(&b),
        &constant(&c),
        &constant(&d),
        &Var::constant(Tensor::scalar(eta as Real)),
    )
    .expect("position_attend");
    let (want, _) = oracles::position_attention(&f64s(&a), &f64s(&b), &f64s(&c), &f64s(&d), s, eta);
    max_abs_diff(&f64s(got.value()), &want)
}

fn randomise_bn(bn: &mut BatchNorm2d, c: usize, r: &mut ChaCha8Rng) {
    let cs = Shape::new(c, 1, 1, 1);
    bn.weight.set_value(random(cs, 0.5, 1.5, r)).expect("bn weight");
    bn.bias.set_value(random(cs, -0.5, 0.5, r)).expect("bn bias");
    bn.running_mean.set(random(cs, -0.3, 0.3, r).into_data()).expect("bn mean");
    bn.running_var.set(random(cs, 0.5, 2.0, r).into_data()).expect("bn var");
}

/// Eval-mode `relu(bn(conv1x1(a)))` computed from the oracle convolution.
fn branch_oracle(a: &[f64], s: Shape, conv: &Conv2d, bn: &BatchNorm2d) -> Vec<f64> {
    let ws = conv.weight.shape();
    let (y, _) = oracles::conv2d(
        a,
        s,
        &f64s(conv.weight.value()),
        ws,
        Some(&f64s(conv.bias.value())),
        1,
        0,
        0,
    );
    let (w, b) = (f64s(bn.weight.value()), f64s(bn.bias.value()));
    let (m, v) = (bn.running_mean.get(), bn.running_var.get());
    let p = s.h * s.w;
    y.iter()
        .enumerate()
        .map(|(i, &val)| {
            let ch = (i / p) % s.c;
            let z = (val - m[ch] as f64) / (v[ch] as f64 + BATCH_NORM_EPS).sqrt() * w[ch] + b[ch];
            z.max(0.0)
        })
        .collect()
}

/// Position attention module in eval mode, branches included.
pub fn pam_module_case(r: &mut ChaCha8Rng) -> f64 {
    let s = Shape::new(1, r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3));
    let mut pam = PositionAttention::new("pam", s.c, r);
    let eta: f64 = r.gen_range(-1.0..1.0);
    pam.eta.set_value(Tensor::scalar(eta as Real)).expect("scalar");
    for branch in [&mut pam.branch_b, &mut pam.branch_c, &mut pam.branch_d] {
        randomise_bn(&mut branch.bn, s.c, r);
    }
    let a = random(s, -1.0, 1.0, r);
    let got = no_grad(|| pam.forward(&constant(&a), &mut Mode::Eval)).expect("pam forward");
    let af = f64s(&a);
    let b = branch_oracle(&af, s, &pam.branch_b.conv, &pam.branch_b.bn);
    let c = branch_oracle(&af, s, &pam.branch_c.conv, &pam.branch_c.bn);
    let d = branch_oracle(&af, s, &pam.branch_d.conv, &pam.branch_d.bn);
    let (want, want_map) = oracles::position_attention(&af, &b, &c, &d, s, eta);
    let map = pam.attention_map(&a).expect("pam map");
    max_abs_diff(&f64s(got.value()), &want).max(max_abs_diff(&f64s(&map), &want_map))
}

/// Identity-φ factorized layer with zero biases against a full 2-D convolution with the
/// rank-1 kernel.
pub fn factorized_case(r: &mut ChaCha8Rng) -> f64 {
    let (c, o) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let d = [1, 3, 5][r.gen_range(0..3)];
    let mut layer = FactorizedLayer::new("fact", c, o, d, r).expect("odd extent");
    layer.phi = Phi::Identity;
    layer.vert.bias.set_value(Tensor::zeros(Shape::new(o, 1, 1, 1))).expect("bias");
    layer.horz.bias.set_value(Tensor::zeros(Shape::new(o, 1, 1, 1))).expect("bias");
    let xs = Shape::new(r.gen_range(1..=2), c, r.gen_range(2..=6), r.gen_range(2..=6));
    let x = random(xs, -1.0, 1.0, r);
    let got = layer.forward(&constant(&x)).expect("factorized forward");
    let (k, ks) = oracles::rank1_kernel(
        &f64s(layer.vert.weight.value()),
        layer.vert.weight.shape(),
        &f64s(layer.horz.weight.value()),
        layer.horz.weight.shape(),
    );
    let half = (d - 1) / 2;
    let (want, _) = oracles::conv2d(&f64s(&x), xs, &k, ks, None, 1, half, half);
    max_abs_diff(&f64s(got.value()), &want)
}

/// All layers within `tol` on `instances` random cases each.
pub fn layer_oracles(instances: usize, tol: f64) -> Check {
    let errors = layer_oracle_errors(instances, 0x5eed);
    let failing: Vec<String> = errors
        .iter()
        .filter(|(_, e)| !(*e <= tol))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    if failing.is_empty() {
        Ok(format!("{} layers x {instances} instances, worst |err| {worst:.1e}", errors.len()))
    } else {
        Err(format!("over {tol:e}: {}", failing.join(", ")))
    }
}

fn random_binary(shape: Shape, density: f64, r: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| if r.gen_bool(density) { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(shape, data).expect("length matches")
}

/// Relative error `|a − fd| / |fd|` (absolute when `fd` vanishes) between the analytic soft
/// Jaccard gradient and central differences of the loss value.
pub fn jaccard_gradient_error(pairs: usize, step: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let s = Shape::new(1, 1, 8, 8);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let mut g = random_binary(s, r.gen_range(0.1..0.9), &mut r);
        if g.sum() == 0.0 {
            g.data_mut()[0] = 1.0;
        }
        let p = random(s, 0.01, 0.99, &mut r);
        let pv = Var::leaf(p.clone());
        soft_jaccard_loss(&g, &pv).expect("loss").backward().expect("backward");
        let via_graph = f64s(&pv.grad().expect("gradient"));
        let direct = f64s(&soft_jaccard_grad(&g, &p).expect("grad"));
        let loss_at = |i: usize, delta: f64| {
            let mut q = p.clone();
            q.data_mut()[i] += delta as Real;
            soft_jaccard_loss(&g, &Var::constant(q)).expect("loss").value().data()[0] as f64
        };
        for i in 0..s.numel() {
            let fd = (loss_at(i, step) - loss_at(i, -step)) / (2.0 * step);
            for a in [via_graph[i], direct[i]] {
                let err = if fd == 0.0 { a.abs() } else { (a - fd).abs() / fd.abs() };
                worst = worst.max(err);
            }
        }
    }
    worst
}

pub fn jaccard_gradient(pairs: usize, tol: f64) -> Check {
    let value_err = soft_jaccard_value_error(pairs, 0x3b);
    if value_err > 1e-6 {
        return Err(format!("loss value off the closed form by {value_err:.2e}"));
    }
    let err = jaccard_gradient_error(pairs, 1e-4, 0x3a);
    if err < tol {
        Ok(format!("{pairs} random 8x8 pairs, max relative error {err:.2e}"))
    } else {
        Err(format!("max relative error {err:.2e} >= {tol:e}"))
    }
}

/// Largest deviation of the loss value from the closed-form oracle.
pub fn soft_jaccard_value_error(pairs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let s = Shape::new(1, 1, 8, 8);
    (0..pairs)
        .map(|_| {
            let g = random_binary(s, 0.5, &mut r);
            let p = random(s, 0.0, 1.0, &mut r);
            let got = soft_jaccard_loss(&g, &Var::constant(p.clone())).expect("loss");
            (got.value().data()[0] as f64 - oracles::soft_jaccard(&f64s(&g), &f64s(&p))).abs()
        })
        .fold(0.0, f64::max)
}

/// Confusion counts and derived metrics against a per-pixel tally.
pub fn metrics_oracle(pairs: usize) -> Check {
    let mut r = rng(0x3e7);
    let s = Shape::new(1, 1, 16, 16);
    let mut dsc_gap = 0.0f64;
    for k in 0..pairs {
        let gt = random_binary(s, r.gen_range(0.0..=1.0), &mut r);
        let pred = random_binary(s, r.gen_range(0.0..=1.0), &mut r);
        let c = confusion(&gt, &pred).map_err(|e| e.to_string())?;
        let (tp, fp, fn_, tn) = oracles::tally(&f64s(&gt), &f64s(&pred));
        if (c.tp, c.fp, c.fn_, c.tn) != (tp, fp, fn_, tn) {
            return Err(format!("pair {k}: counts {c:?} vs tally {:?}", (tp, fp, fn_, tn)));
        }
        let ratio = |n: u64, d: u64| if d == 0 { 1.0 } else { n as f64 / d as f64 };
        let want = [
            ratio(tp + tn, tp + fp + fn_ + tn),
            ratio(2 * tp, 2 * tp + fp + fn_),
            ratio(tp, tp + fp + fn_),
            ratio(tp, tp + fn_),
            ratio(tn, tn + fp),
        ];
        let m = compute_metrics(c);
        if [m.acc, m.dsc, m.jsc, m.sen, m.spe] != want {
            return Err(format!("pair {k}: metrics {m:?} vs {want:?}"));
        }
        dsc_gap = dsc_gap.max((m.dsc - 2.0 * m.jsc / (1.0 + m.jsc)).abs());
    }
    if dsc_gap > 1e-9 {
        return Err(format!("dsc vs 2jsc/(1+jsc) differs by {dsc_gap:.2e}"));
    }
    let (lo, hi) = (thresholded_jsc(0.64), thresholded_jsc(0.70));
    if lo != 0.0 || hi != 0.70 {
        return Err(format!("thresholded_jsc: 0.64 -> {lo}, 0.70 -> {hi}"));
    }
    Ok(format!(
        "{pairs} random 16x16 pairs exact, dsc identity gap {dsc_gap:.1e}, 0.64->0, 0.70->0.70"
    ))
}

/// γ = η = 0 attention is the identity, and a fresh full-scale generator gives finite
/// outputs strictly inside (0, 1).
pub fn attention_identity() -> Check {
    let mut r = rng(4);
    let a = random(Shape::new(2, 8, 6, 6), -2.0, 2.0, &mut r);
    let cam = ChannelAttention::new("cam");
    let out = cam.forward(&constant(&a)).map_err(|e| e.to_string())?;
    if out.value() != &a {
        return Err("channel attention with gamma 0 changed its input".into());
    }
    let pam = PositionAttention::new("pam", 8, &mut r);
    let mut train_rng = rng(5);
    for mode in [Mode::Eval, Mode::Train(&mut train_rng)] {
        let mut mode = mode;
        let out = pam.forward(&constant(&a), &mut mode).map_err(|e| e.to_string())?;
        if out.value() != &a {
            return Err("position attention with eta 0 changed its input".into());
        }
    }
    let gen = Generator::new(&ModelConfig::default(), &mut r).map_err(|e| e.to_string())?;
    let x = random(Shape::new(2, 3, 128, 128), 0.0, 1.0, &mut r);
    let eval = gen.predict(&x).map_err(|e| e.to_string())?;
    let train = no_grad(|| gen.forward(&constant(&x), &mut Mode::Train(&mut train_rng)))
        .map_err(|e| e.to_string())?;
    for (label, t) in [("eval", eval.data()), ("train", train.data())] {
        if let Some(v) = t.iter().find(|v| !(v.is_finite() && **v > 0.0 && **v < 1.0)) {
            return Err(format!("generator {label} output {v} outside (0, 1)"));
        }
    }
    let (lo, hi) = eval.data().iter().fold((Real::MAX, Real::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    Ok(format!("CAM/PAM exact identity; generator outputs in [{lo:.4}, {hi:.4}]"))
}

/// Bottleneck extents and output extents of the full-scale generator.
pub fn shape_ladder() -> Check {
    let mut r = rng(6);
    let base = Generator::new(&ModelConfig::default(), &mut r).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for (size, bottleneck) in [(64, Some(8)), (128, Some(16)), (256, None)] {
        let gen = base.with_input_size(size).map_err(|e| e.to_string())?;
        let x = random(Shape::new(1, 3, size, size), 0.0, 1.0, &mut r);
        let (out, trace) = no_grad(|| gen.forward_traced(&constant(&x), &mut Mode::Eval))
            .map_err(|e| e.to_string())?;
        let bn = trace
            .iter()
            .find(|(n, _)| *n == "bottleneck")
            .map(|(_, s)| *s)
            .ok_or("no bottleneck in trace")?;
        if let Some(want) = bottleneck {
            if (bn.h, bn.w) != (want, want) {
                return Err(format!("input {size}: bottleneck {}x{}, want {want}x{want}", bn.h, bn.w));
            }
        }
        let os = out.shape();
        if (os.n, os.c, os.h, os.w) != (1, 1, size, size) {
            return Err(format!("input {size}: output shape {os}"));
        }
        notes.push(format!("{size}->{}x{} bottleneck, {}x{} out", bn.h, bn.w, os.h, os.w));
    }
    Ok(notes.join("; "))
}
