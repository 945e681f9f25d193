mod common;

use common::checks::{random, rng};
use lesion_gan::data::{
    augment, batch, clahe, expand_eightfold, gamma, hflip, save_samples, synthesize_disk_dataset,
    synthesize_with_layout, vflip, AugmentOp, DatasetManifest, Sample, Split,
};
use lesion_gan::{Shape, Tensor};

/// Implicit-conic membership `A·dx² + B·dx·dy + C·dy² ≤ 1` at pixel centres.
fn conic_contains(e: &lesion_gan::data::Ellipse, x: usize, y: usize) -> bool {
    let (s, c) = e.theta.sin_cos();
    let (a2, b2) = (e.a * e.a, e.b * e.b);
    let qa = c * c / a2 + s * s / b2;
    let qb = 2.0 * s * c * (1.0 / a2 - 1.0 / b2);
    let qc = s * s / a2 + c * c / b2;
    let (dx, dy) = (x as f64 + 0.5 - e.cx, y as f64 + 0.5 - e.cy);
    qa * dx * dx + qb * dx * dy + qc * dy * dy <= 1.0 + 1e-12
}

#[test]
fn synthesis_is_a_pure_function_of_its_arguments() {
    let a = synthesize_disk_dataset(6, 32, 7).unwrap();
    assert_eq!(a, synthesize_disk_dataset(6, 32, 7).unwrap());
    assert_ne!(a, synthesize_disk_dataset(6, 32, 8).unwrap());
    let one = synthesize_disk_dataset(1, 64, 0).unwrap();
    assert_eq!(one[0].image.shape(), Shape::new(1, 3, 64, 64));
    assert_eq!(one[0].mask.shape(), Shape::new(1, 1, 64, 64));
}

#[test]
fn masks_are_the_rasterized_ellipses() {
    for (sample, lesions) in synthesize_with_layout(20, 64, 3).unwrap() {
        for e in &lesions {
            let reach = e.a.max(e.b);
            assert!(e.cx - reach >= 0.0 && e.cx + reach <= 64.0, "ellipse leaves the frame");
        }
        let want = (0..64)
            .flat_map(|y| (0..64).map(move |x| (x, y)))
            .filter(|&(x, y)| lesions.iter().any(|e| conic_contains(e, x, y)))
            .count();
        assert_eq!(sample.mask.sum() as usize, want, "{}", sample.id);
        assert!(sample.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn flips_are_involutions_and_move_masks_with_images() {
    let s = &synthesize_disk_dataset(1, 32, 1).unwrap()[0];
    assert_eq!(hflip(&hflip(&s.image)), s.image);
    assert_eq!(vflip(&vflip(&s.image)), s.image);
    let both = augment(s, &[AugmentOp::HFlip, AugmentOp::VFlip]).unwrap();
    for y in 0..32 {
        for x in 0..32 {
            assert_eq!(both.mask.get(0, 0, y, x), s.mask.get(0, 0, 31 - y, 31 - x));
            assert_eq!(both.image.get(0, 2, y, x), s.image.get(0, 2, 31 - y, 31 - x));
        }
    }
}

#[test]
fn photometric_ops() {
    let img = random(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng(2));
    assert_eq!(gamma(&img, 1.0).unwrap(), img);
    let g = gamma(&img, 2.0).unwrap();
    assert!(g.data().iter().zip(img.data()).all(|(a, b)| (a - b * b).abs() < 1e-12));
    assert!(gamma(&img, 0.0).is_err());

    let flat = Tensor::full(Shape::new(1, 3, 16, 16), 0.4);
    let out = clahe(&flat, 2.0, 8).unwrap();
    let first = out.data()[0];
    assert!(out.data().iter().all(|&v| v == first), "constant image stays constant");

    let eq = clahe(&img, 2.0, 4).unwrap();
    assert_eq!(eq.shape(), img.shape());
    assert!(eq.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn eightfold_expansion_is_seeded_and_labelled() {
    let data = synthesize_disk_dataset(2, 32, 4).unwrap();
    let (a, ra) = expand_eightfold(&data, &mut rng(9)).unwrap();
    let (b, rb) = expand_eightfold(&data, &mut rng(9)).unwrap();
    assert_eq!(a.len(), 16);
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert!(ra.iter().filter(|(_, r)| r.contains("clahe")).count() == 8);
    assert!(ra.iter().filter(|(_, r)| r.contains("gamma")).count() == 8);
    // photometric ops never touch masks
    assert_eq!(a[0].mask, data[0].mask);
    assert_eq!(a[1].mask, data[0].mask);
}

#[test]
fn batching_order_and_sizes() {
    let data = synthesize_disk_dataset(10, 16, 5).unwrap();
    let sizes: Vec<usize> = batch(&data, 8, None::<&mut rand_chacha::ChaCha8Rng>)
        .unwrap()
        .map(|(x, _)| x.shape().n)
        .collect();
    assert_eq!(sizes, vec![8, 2]);
    let plain = batch(&data, 4, None::<&mut rand_chacha::ChaCha8Rng>).unwrap();
    assert_eq!(plain.order(), &(0..10).collect::<Vec<_>>()[..]);
    let a = batch(&data, 4, Some(&mut rng(1))).unwrap().order().to_vec();
    let b = batch(&data, 4, Some(&mut rng(1))).unwrap().order().to_vec();
    assert_eq!(a, b);
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..10).collect::<Vec<_>>());
}

#[test]
fn saved_samples_round_trip_through_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthesize_disk_dataset(3, 32, 6).unwrap();
    let path = save_samples(&data, dir.path()).unwrap();
    let manifest = DatasetManifest::load(&path, Split::Val, 32).unwrap();
    let loaded: Vec<Sample> = manifest.load_samples().unwrap();
    assert_eq!(loaded.len(), 3);
    for (a, b) in data.iter().zip(&loaded) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask, b.mask);
        // 8-bit quantisation of the image
        assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-9);
    }
    let resized = DatasetManifest::load(&path, Split::Val, 16).unwrap().load_samples().unwrap();
    assert_eq!(resized[0].image.shape(), Shape::new(1, 3, 16, 16));
}
