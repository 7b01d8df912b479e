use std::sync::Arc;

use autoseg::adversarial::loss::discriminator_terms;
use autoseg::adversarial::{build_discriminator_with, stack_batch, AdversarialConfig, DiscriminatorSpec, Trainer};
use autoseg::cascade::{Segmenter, SegmenterSpec};
use autoseg::data::SliceSample;
use autoseg::generator::{EncoderKind, NetworkSpec};
use autoseg_nn::{Adam, Graph};
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn disc_loss(d: &autoseg::adversarial::Discriminator, x: &Array4<f64>, real: &Array4<f64>, fake: &Array4<f64>) -> (f64, autoseg_nn::Gradients) {
    let mut g = Graph::new();
    let src = g.input(x.clone().into_dyn());
    let r = g.input(real.clone().into_dyn());
    let f = g.input(fake.clone().into_dyn());
    let dr = d.forward_graph(&mut g, src, r).unwrap();
    let df = d.forward_graph(&mut g, src, f).unwrap();
    let l = discriminator_terms(&mut g, dr, df, 1e-7);
    (g.scalar(l), g.backward(l))
}

#[test]
fn one_discriminator_step_lowers_its_loss() {
    let mut passes = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array4::from_shape_fn((2, 32, 32, 3), |_| rng.random_range(0.0..1.0));
        let real = Array4::from_shape_fn((2, 32, 32, 1), |_| rng.random_bool(0.3) as u8 as f64);
        let fake = Array4::from_shape_fn((2, 32, 32, 1), |_| rng.random_range(0.0..1.0));
        let mut d = build_discriminator_with(DiscriminatorSpec::new(4).width(0.25), seed).unwrap();
        let (before, grads) = disc_loss(&d, &x, &real, &fake);
        let params = d.parameters();
        Adam::new(1e-4).step(&mut [d.store_mut()], &grads, &params);
        let (after, _) = disc_loss(&d, &x, &real, &fake);
        passes += (after < before) as usize;
    }
    assert!(passes >= 18, "only {passes}/20 seeds decreased l_D");
}

fn ellipse_batch(n: usize, size: usize, seed: u64) -> Vec<SliceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    (0..n)
        .map(|k| {
            let (cy, cx) = (rng.random_range(0.35 * s..0.65 * s), rng.random_range(0.35 * s..0.65 * s));
            let (ay, ax) = (rng.random_range(0.15 * s..0.3 * s), rng.random_range(0.15 * s..0.3 * s));
            let t = Array2::from_shape_fn((size, size), |(i, j)| {
                let y = (i as f64 - cy) / ay;
                let x = (j as f64 - cx) / ax;
                (y * y + x * x <= 1.0) as u8
            });
            let img = Array3::from_shape_fn((size, size, 3), |(i, j, _)| 0.2 + 0.5 * t[[i, j]] as f64);
            SliceSample::new(img, t, k, "batch").unwrap()
        })
        .collect()
}

#[test]
fn fixed_batch_overfits() {
    let data = ellipse_batch(4, 32, 3);
    let refs: Vec<&SliceSample> = data.iter().collect();
    let (x, y) = stack_batch(&refs).unwrap();
    let spec = SegmenterSpec::Single {
        generator: NetworkSpec::new(EncoderKind::Basic32).width(0.25),
    };
    let cfg = AdversarialConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        discriminator_width: 0.25,
        ..AdversarialConfig::ct()
    };
    let mut trainer = Trainer::new(spec.build(2).unwrap(), cfg).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..300 {
        last = trainer.train_step(&x, &y).unwrap().l_dice;
        if last < 0.05 {
            break;
        }
    }
    assert!(last < 0.05, "dice loss {last} after 300 steps");
}

#[test]
fn dice_only_step_matches_scaled_dice_gradient() {
    let data = ellipse_batch(2, 16, 5);
    let refs: Vec<&SliceSample> = data.iter().collect();
    let (x, y) = stack_batch(&refs).unwrap();
    let spec = SegmenterSpec::Single {
        generator: NetworkSpec::new(EncoderKind::Basic32).width(0.125),
    };
    let cfg = AdversarialConfig {
        use_adversarial: false,
        learning_rate: 1e-4,
        ..AdversarialConfig::ct()
    };
    let seg = spec.build(4).unwrap();
    let mut manual = seg.clone();
    let mut trainer = Trainer::new(seg, cfg).unwrap();
    let rec = trainer.train_step(&x, &y).unwrap();
    assert_eq!((rec.l_d, rec.adv_term), (0.0, 0.0));

    let grads = {
        let mut g = Graph::new();
        let xi = g.input(x.clone().into_dyn());
        let out = manual.forward_graph(&mut g, xi).unwrap();
        let d = g.dice_loss(out, Arc::new(y.clone().into_dyn()), cfg.epsilon_dice);
        let l = g.scale(d, cfg.lambda_weight);
        assert_eq!(g.scalar(l), rec.l_g);
        g.backward(l)
    };
    let params = manual.parameters();
    Adam::new(cfg.learning_rate).step(&mut manual.stores_mut(), &grads, &params);
    let Segmenter::Single(a) = trainer.segmenter() else { unreachable!() };
    let Segmenter::Single(b) = &manual else { unreachable!() };
    assert_eq!(a.store().flatten(), b.store().flatten());
}
