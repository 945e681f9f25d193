mod common;

use common::checks::{self, random, rng};
use lesion_gan::attention::{position_attend, ChannelAttention};
use lesion_gan::fcm::FcmBlock;
use lesion_gan::gradcheck::{check_gradients, GradCheckReport};
use lesion_gan::losses::{bce, discriminator_loss, generator_loss, l1, soft_jaccard_loss};
use lesion_gan::nn::{Mode, Module};
use lesion_gan::networks::Discriminator;
use lesion_gan::tensor::ops;
use lesion_gan::{LossWeights, ModelConfig, Result, Shape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-3;

/// Contract `out` against fixed random weights so every output element matters.
fn weighted_sum(out: &Var, seed: u64) -> Result<Var> {
    let w = random(out.shape(), -1.0, 1.0, &mut rng(seed));
    ops::sum(&ops::mul(out, &Var::constant(w))?)
}

fn check<F>(inputs: &[Tensor], f: F) -> GradCheckReport
where
    F: Fn(&[Var]) -> Result<Var>,
{
    check_gradients(inputs, f, STEP, None::<(usize, &mut ChaCha8Rng)>).unwrap()
}

fn assert_close(name: &str, r: GradCheckReport) {
    assert!(r.checked > 0, "{name}: nothing checked");
    assert!(r.max_error < TOL, "{name}: max error {:.2e} at {:?}", r.max_error, r.worst);
}

#[test]
fn soft_jaccard_gradient_matches_finite_differences() {
    let summary = checks::jaccard_gradient(100, 1e-4).unwrap();
    assert!(summary.contains("100 random"));
}

#[test]
fn convolution_gradients() {
    let mut r = rng(1);
    let x = random(Shape::new(2, 2, 5, 5), -1.0, 1.0, &mut r);
    let w = random(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut r);
    let b = random(Shape::new(3, 1, 1, 1), -1.0, 1.0, &mut r);
    let rep = check(&[x.clone(), w, b], |v| {
        weighted_sum(&ops::conv2d(&v[0], &v[1], Some(&v[2]), 2, 1)?, 2)
    });
    assert_close("conv2d", rep);

    let wt = random(Shape::new(2, 3, 3, 3), -1.0, 1.0, &mut r);
    let bt = random(Shape::new(3, 1, 1, 1), -1.0, 1.0, &mut r);
    let rep = check(&[x, wt, bt], |v| {
        weighted_sum(&ops::conv_transpose2d(&v[0], &v[1], Some(&v[2]), 2, 1, 1)?, 3)
    });
    assert_close("conv_transpose2d", rep);
}

#[test]
fn spatial_gradients() {
    let mut r = rng(4);
    let x = random(Shape::new(1, 2, 4, 6), -1.0, 1.0, &mut r);
    assert_close("maxpool2", check(&[x.clone()], |v| weighted_sum(&ops::maxpool2(&v[0])?, 5)));
    assert_close(
        "bilinear_upsample",
        check(&[x.clone()], |v| weighted_sum(&ops::bilinear_upsample(&v[0], 7, 11)?, 6)),
    );
    assert_close(
        "bilinear downsample",
        check(&[x], |v| weighted_sum(&ops::bilinear_resize(&v[0], 2, 3)?, 7)),
    );
}

#[test]
fn dense_and_pointwise_gradients() {
    let mut r = rng(8);
    let a = random(Shape::new(1, 1, 3, 4), -1.0, 1.0, &mut r);
    let b = random(Shape::new(1, 1, 4, 2), -1.0, 1.0, &mut r);
    assert_close("matmul", check(&[a.clone(), b], |v| weighted_sum(&ops::matmul(&v[0], &v[1])?, 9)));
    assert_close("softmax_rows", check(&[a.clone()], |v| weighted_sum(&ops::softmax_rows(&v[0])?, 10)));
    assert_close("sigmoid", check(&[a.clone()], |v| weighted_sum(&ops::sigmoid(&v[0])?, 11)));
    assert_close("leaky_relu", check(&[a.clone()], |v| weighted_sum(&ops::leaky_relu(&v[0], 0.2)?, 12)));
    assert_close("mean", check(&[a], |v| ops::mean(&ops::mul(&v[0], &v[0])?)));
}

#[test]
fn batch_norm_gradients() {
    let mut r = rng(13);
    let x = random(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut r);
    let w = random(Shape::new(2, 1, 1, 1), 0.5, 1.5, &mut r);
    let b = random(Shape::new(2, 1, 1, 1), -0.5, 0.5, &mut r);
    let rep = check(&[x, w, b], |v| {
        weighted_sum(&ops::batch_norm_train(&v[0], &v[1], &v[2], 1e-5)?.0, 14)
    });
    assert_close("batch_norm_train", rep);
}

#[test]
fn attention_gradients() {
    let mut r = rng(15);
    let s = Shape::new(2, 3, 2, 3);
    let a = random(s, -1.0, 1.0, &mut r);
    let mut cam = ChannelAttention::new("cam");
    cam.gamma.set_value(Tensor::scalar(0.4)).unwrap();
    let rep = check(&[a.clone()], |v| weighted_sum(&cam.forward(&v[0])?, 16));
    assert_close("channel attention", rep);

    let [b, c, d] = [(); 3].map(|_| random(s, -1.0, 1.0, &mut r));
    let rep = check(&[a, b, c, d, Tensor::scalar(0.7)], |v| {
        weighted_sum(&position_attend(&v[0], &v[1], &v[2], &v[3], &v[4])?, 17)
    });
    assert_close("position attention", rep);
}

#[test]
fn channel_attention_parameter_gradient() {
    let mut r = rng(18);
    let a = random(Shape::new(1, 3, 3, 3), -1.0, 1.0, &mut r);
    let mut cam = ChannelAttention::new("cam");
    cam.gamma.set_value(Tensor::scalar(0.3)).unwrap();
    weighted_sum(&cam.forward(&Var::constant(a.clone())).unwrap(), 19)
        .unwrap()
        .backward()
        .unwrap();
    let analytic = cam.gamma.grad().unwrap().data()[0] as f64;
    let at = |g: f64| {
        let mut c = ChannelAttention::new("cam");
        c.gamma.set_value(Tensor::scalar(g as _)).unwrap();
        weighted_sum(&c.forward(&Var::constant(a.clone())).unwrap(), 19).unwrap().value().data()[0] as f64
    };
    let fd = (at(0.3 + STEP) - at(0.3 - STEP)) / (2.0 * STEP);
    assert!((analytic - fd).abs() / fd.abs().max(1.0) < TOL, "{analytic} vs {fd}");
}

#[test]
fn fcm_block_input_gradient() {
    let mut r = rng(20);
    let mut block = FcmBlock::new("fcm", 3, 3, 3, true, &mut r).unwrap();
    block.cam.gamma.set_value(Tensor::scalar(0.5)).unwrap();
    let x = random(Shape::new(1, 3, 4, 4), -1.0, 1.0, &mut r);
    let rep = check(&[x], |v| weighted_sum(&block.forward(&v[0])?, 21));
    assert_close("fcm block", rep);
}

#[test]
fn composite_losses_match_finite_differences() {
    let mut r = rng(22);
    let s = Shape::new(2, 1, 4, 4);
    let gt = Tensor::from_fn(s, |n, _, y, x| ((y + x + n) % 3 == 0) as u8 as _);
    let pred = random(s, 0.05, 0.95, &mut r);
    let d_fake = random(Shape::new(2, 1, 2, 2), 0.05, 0.95, &mut r);
    let d_real = random(Shape::new(2, 1, 2, 2), 0.05, 0.95, &mut r);
    let w = LossWeights { lambda: 0.7, alpha: 1.3 };
    let rep = check(&[d_fake.clone(), pred.clone()], |v| generator_loss(&v[0], &v[1], &gt, w));
    assert_close("generator_loss", rep);
    let rep = check(&[d_real, d_fake], |v| discriminator_loss(&v[0], &v[1]));
    assert_close("discriminator_loss", rep);
    let rep = check(&[pred.clone()], |v| bce(&v[0], &gt));
    assert_close("bce", rep);
    let rep = check(&[pred.clone()], |v| soft_jaccard_loss(&gt, &v[0]));
    assert_close("soft_jaccard_loss", rep);
    let rep = check(&[pred], |v| l1(&v[0], &gt));
    assert_close("l1", rep);
}

#[test]
fn discriminator_gradients_reach_image_and_mask() {
    let cfg = ModelConfig {
        input_size: 16,
        scale_factor: 0.0625,
        ..ModelConfig::default()
    };
    let mut r = rng(23);
    let disc = Discriminator::new(&cfg, &mut r).unwrap();
    let image = random(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut r);
    let mask = random(Shape::new(1, 1, 16, 16), 0.0, 1.0, &mut r);
    let mut coords = rng(24);
    let rep = check_gradients(
        &[image, mask],
        |v| weighted_sum(&disc.forward(&v[0], &v[1], &mut Mode::Eval)?, 25),
        STEP,
        Some((60, &mut coords)),
    )
    .unwrap();
    assert_close("discriminator", rep);
    assert!(disc.parameters().len() > 8);
}
