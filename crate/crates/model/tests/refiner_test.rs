//! Refiner contract: identity at initialization, shape/range invariants,
//! gradients through the reconstruction loss, and the blur-task pilot.

use ghead_core::gradcheck::grad_check_subset;
use ghead_core::optim::{LrGroup, ParamStore};
use ghead_core::tape::Tape;
use ghead_core::tensor::Tensor;
use ghead_losses::{c2f_loss, psnr, PerceptualProxy};
use ghead_model::{train_refiner, Refiner, RefinerTrainConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fresh(seed: u64) -> (ParamStore, Refiner) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refiner = Refiner::register(&mut store, "refiner", &mut rng);
    (store, refiner)
}

fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(
        &[3, h, w],
        (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
}

/// Smooth synthetic frame plus a box-blurred corruption of it.
fn blur_pair(h: usize, w: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cx, cy) = (rng.gen_range(0.3..0.7) * w as f64, rng.gen_range(0.3..0.7) * h as f64);
    let mut target = Tensor::zeros(&[3, h, w]);
    for c in 0..3 {
        let phase = rng.gen_range(0.0..3.0);
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                target.data_mut()[(c * h + y) * w + x] =
                    0.5 + 0.45 * ((d * 0.5 + phase).sin());
            }
        }
    }
    // 5x5 box blur as the coarse corruption
    let mut coarse = Tensor::zeros(&[3, h, w]);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for dy in -2i64..=2 {
                    for dx in -2i64..=2 {
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                            acc += target.data()[(c * h + yy as usize) * w + xx as usize];
                            cnt += 1.0;
                        }
                    }
                }
                coarse.data_mut()[(c * h + y) * w + x] = acc / cnt;
            }
        }
    }
    (coarse, target)
}

#[test]
fn identity_at_initialization_is_bit_exact() {
    let (store, refiner) = fresh(1);
    let img = random_image(16, 16, 5);
    let tape = Tape::new();
    let binding = store.bind(&tape, &[]);
    let v = tape.constant(img.clone());
    let out = refiner.refine(&binding, v).unwrap();
    assert_eq!(out.value().data(), img.data());
}

#[test]
fn output_shape_and_range_for_supported_sizes() {
    let (mut store, refiner) = fresh(2);
    // non-identity refiner: perturb the final layer
    let shape = store.get("refiner.d2.w").shape().to_vec();
    let data: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|i| ((i % 7) as f64 - 3.0) * 0.4)
        .collect();
    store.set("refiner.d2.w", Tensor::from_vec(&shape, data));
    for (h, w) in [(64, 64), (128, 128), (16, 24)] {
        let tape = Tape::new();
        let binding = store.bind(&tape, &[]);
        let v = tape.constant(random_image(h, w, 9));
        let out = refiner.refine(&binding, v).unwrap();
        assert_eq!(out.shape(), vec![3, h, w]);
        assert!(out
            .value()
            .data()
            .iter()
            .all(|&x| (0.0..=1.0).contains(&x)));
    }
}

#[test]
fn indivisible_dimensions_are_rejected() {
    let (store, refiner) = fresh(3);
    let tape = Tape::new();
    let binding = store.bind(&tape, &[]);
    let v = tape.constant(Tensor::zeros(&[3, 20, 20]));
    assert!(refiner.refine(&binding, v).is_err());
}

#[test]
fn gradients_through_refine_and_c2f_match_finite_differences() {
    let (mut store, refiner) = fresh(4);
    // leave the identity fixed point so the clamp stays inactive
    let shape = store.get("refiner.d2.w").shape().to_vec();
    let data: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|i| (((i * 13) % 11) as f64 - 5.0) / 200.0)
        .collect();
    store.set("refiner.d2.w", Tensor::from_vec(&shape, data));
    let proxy = PerceptualProxy::new(42);
    let coarse = random_image(8, 8, 7);
    // keep coarse interior so clamp(x+r) stays differentiable
    let coarse = Tensor::from_vec(
        &[3, 8, 8],
        coarse.data().iter().map(|v| 0.2 + 0.6 * v).collect(),
    );
    let target = random_image(8, 8, 8);

    for name in ["refiner.e0.w", "refiner.d2.w", "refiner.d0.b"] {
        let point = store.get(name).data().to_vec();
        let shape = store.get(name).shape().to_vec();
        let eval = |store: &ParamStore, want_grad: bool| -> (f64, Option<Vec<f64>>) {
            let tape = Tape::new();
            let binding = store.bind(&tape, &[]);
            let c = tape.constant(coarse.clone());
            let t = tape.constant(target.clone());
            let fine = refiner.refine(&binding, c).unwrap();
            let loss = c2f_loss(fine, t, 0.1, &proxy).unwrap();
            let l = loss.value().item();
            if !want_grad {
                return (l, None);
            }
            let grads = tape.backward(loss);
            (
                l,
                Some(grads.get(binding.var(name)).unwrap().data().to_vec()),
            )
        };
        let (_, analytic) = eval(&store, true);
        let coords: Vec<usize> = (0..point.len())
            .step_by(point.len().div_ceil(20).max(1))
            .collect();
        let err = grad_check_subset(
            |p| {
                let mut s2 = ParamStore::new();
                for n in store.names() {
                    s2.register(n, store.get(n).clone(), LrGroup::Refiner);
                }
                s2.set(name, Tensor::from_vec(&shape, p.to_vec()));
                eval(&s2, false).0
            },
            &point,
            &analytic.unwrap(),
            &coords,
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-4, "{name} grad err {err}");
    }
}

#[test]
fn training_on_identity_pairs_keeps_loss_near_zero() {
    let (mut store, refiner) = fresh(5);
    let img = random_image(16, 16, 11);
    let pairs = vec![(img.clone(), img)];
    let cfg = RefinerTrainConfig {
        steps: 10,
        ..Default::default()
    };
    let report = train_refiner(&mut store, &refiner, &pairs, &cfg).unwrap();
    assert_eq!(report.initial_loss, 0.0);
    assert!(report.final_loss <= 1e-6, "loss {}", report.final_loss);
}

#[test]
fn empty_dataset_is_an_error() {
    let (mut store, refiner) = fresh(6);
    assert!(train_refiner(&mut store, &refiner, &[], &RefinerTrainConfig::default()).is_err());
}

#[test]
fn blur_task_loss_drops_ninety_percent_within_budget() {
    let (mut store, refiner) = fresh(7);
    let pairs: Vec<(Tensor, Tensor)> = (0..20).map(|i| blur_pair(32, 32, 100 + i)).collect();
    let cfg = RefinerTrainConfig {
        steps: 2000,
        target_fraction: Some(0.10),
        ..Default::default()
    };
    let report = train_refiner(&mut store, &refiner, &pairs, &cfg).unwrap();
    assert!(
        report.final_loss <= 0.10 * report.initial_loss,
        "only reached {} from {} in {} steps",
        report.final_loss,
        report.initial_loss,
        report.steps_run
    );

    // refined output beats the coarse input on held-out pairs of the same
    // corruption
    let held_out: Vec<(Tensor, Tensor)> = (0..4).map(|i| blur_pair(32, 32, 900 + i)).collect();
    let tape = Tape::new();
    let binding = store.bind(&tape, &[]);
    for (coarse, target) in &held_out {
        let c = tape.constant(coarse.clone());
        let fine = refiner.refine(&binding, c).unwrap();
        let fine_t = Tensor::from_vec(&[3, 32, 32], fine.value().data().to_vec());
        assert!(
            psnr(&fine_t, target) >= psnr(coarse, target),
            "refiner degraded a held-out frame"
        );
    }
}

#[test]
fn warm_start_reproduces_saved_loss_exactly() {
    let (mut store, refiner) = fresh(8);
    let pairs: Vec<(Tensor, Tensor)> = (0..4).map(|i| blur_pair(16, 16, 40 + i)).collect();
    let cfg = RefinerTrainConfig {
        steps: 30,
        ..Default::default()
    };
    let report = train_refiner(&mut store, &refiner, &pairs, &cfg).unwrap();

    // simulate checkpoint round trip: clone parameters into a fresh store
    let mut warm = ParamStore::new();
    for name in store.names() {
        warm.register(name, store.get(name).clone(), LrGroup::Refiner);
    }
    let report2 = train_refiner(&mut warm, &refiner, &pairs, &cfg).unwrap();
    assert_eq!(report2.initial_loss, report.final_loss);
}
