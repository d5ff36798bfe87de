//! Loss exactness against independent oracles, plus gradient contracts.

use ghead_core::gradcheck::grad_check;
use ghead_core::tape::Tape;
use ghead_core::tensor::Tensor;
use ghead_losses::{dssim_loss, l1_loss, nc_loss_pretrain, sc_loss, ssim_value};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Direct evaluation of the softmax-over-cosine formula, no shared code.
fn sc_oracle(g: &[f64], ind: &[Vec<f64>], k: usize, tau: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut denom = 0.0;
    for i in ind {
        denom += (cos(g, i) / tau).exp();
    }
    -((cos(g, &ind[k]) / tau).exp() / denom).ln()
}

#[test]
fn sc_matches_direct_oracle_for_all_small_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 1..=8usize {
        for _ in 0..5 {
            let dim = rng.gen_range(3..24);
            let g = random_vec(&mut rng, dim);
            let ind: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
            let k = rng.gen_range(0..n);
            let tau = rng.gen_range(0.05..2.0);

            let tape = Tape::new();
            let gv = tape.constant(Tensor::from_vec(&[dim], g.clone()));
            let iv: Vec<_> = ind
                .iter()
                .map(|i| tape.constant(Tensor::from_vec(&[dim], i.clone())))
                .collect();
            let loss = sc_loss(gv, &iv, k, tau).unwrap().value().item();
            let expect = sc_oracle(&g, &ind, k, tau);
            assert!(
                (loss - expect).abs() <= 1e-12,
                "n={n} loss {loss} vs oracle {expect}"
            );
            if n == 1 {
                assert_eq!(loss, 0.0);
            }
        }
    }
}

#[test]
fn sc_decreases_as_matching_similarity_rises() {
    // raise sim(g, i_k) with the distractors fixed: loss must strictly drop
    let tape = Tape::new();
    let g = tape.constant(Tensor::from_vec(&[3], vec![1.0, 0.0, 0.0]));
    let distract = tape.constant(Tensor::from_vec(&[3], vec![0.0, 1.0, 0.0]));
    let mut last = f64::INFINITY;
    for t in 0..8 {
        let angle = 1.4 - t as f64 * 0.18; // approach alignment with g
        let ik = tape.constant(Tensor::from_vec(
            &[3],
            vec![angle.cos(), angle.sin(), 0.0],
        ));
        let loss = sc_loss(g, &[ik, distract], 0, 0.5).unwrap().value().item();
        assert!(loss < last, "loss {loss} did not drop below {last}");
        assert!(loss >= 0.0 || loss.abs() < 1e-12);
        last = loss;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sc_is_invariant_to_positive_rescaling(
        seed in 0u64..1000,
        scale_g in 1e-3f64..1e3,
        scale_i in 1e-3f64..1e3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let g = random_vec(&mut rng, dim);
        let ind: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, dim)).collect();

        let eval = |gs: f64, is: f64| {
            let tape = Tape::new();
            let gv = tape.constant(Tensor::from_vec(&[dim], g.iter().map(|v| v * gs).collect()));
            let iv: Vec<_> = ind
                .iter()
                .enumerate()
                .map(|(j, i)| {
                    let s = if j == 1 { is } else { 1.0 };
                    tape.constant(Tensor::from_vec(&[dim], i.iter().map(|v| v * s).collect()))
                })
                .collect();
            sc_loss(gv, &iv, 1, 0.07).unwrap().value().item()
        };
        let base = eval(1.0, 1.0);
        let scaled = eval(scale_g, scale_i);
        prop_assert!((base - scaled).abs() <= 1e-12 * base.abs().max(1.0));
        prop_assert!(base >= 0.0);
    }
}

#[test]
fn nc_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..20 {
        let dim = rng.gen_range(3..12);
        let n = rng.gen_range(2..6);
        let ind: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
        let k = rng.gen_range(0..n);
        let tape = Tape::new();
        let iv: Vec<_> = ind
            .iter()
            .map(|i| tape.constant(Tensor::from_vec(&[dim], i.clone())))
            .collect();
        let loss = nc_loss_pretrain(&iv, k).unwrap().value().item();
        // oracle
        let cos = |a: &[f64], b: &[f64]| -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let mut acc = 0.0;
        for (i, other) in ind.iter().enumerate() {
            if i != k {
                acc += cos(&ind[k], other).max(0.0);
            }
        }
        acc /= (n - 1) as f64;
        assert!((loss - acc).abs() <= 1e-12, "{loss} vs {acc}");
    }
}

#[test]
fn l1_matches_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (h, w) = (9, 13);
    let a: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let b: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let tape = Tape::new();
    let va = tape.constant(Tensor::from_vec(&[3, h, w], a.clone()));
    let vb = tape.constant(Tensor::from_vec(&[3, h, w], b.clone()));
    let loss = l1_loss(va, vb).unwrap().value().item();
    let mut acc = 0.0;
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let i = (c * h + y) * w + x;
                acc += (a[i] - b[i]).abs();
            }
        }
    }
    acc /= (3 * h * w) as f64;
    assert!((loss - acc).abs() <= 1e-12);
}

/// Brute-force SSIM: per-pixel sliding window, direct weighted moments.
fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let win = 11usize;
    let sigma = 1.5f64;
    let c = (win / 2) as f64;
    let mut kernel = vec![0.0; win * win];
    let mut ksum = 0.0;
    for y in 0..win {
        for x in 0..win {
            let v = (-(((y as f64 - c).powi(2) + (x as f64 - c).powi(2)) / (2.0 * sigma * sigma)))
                .exp();
            kernel[y * win + x] = v;
            ksum += v;
        }
    }
    for v in kernel.iter_mut() {
        *v /= ksum;
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..3 {
        let plane_a = &a[ch * h * w..(ch + 1) * h * w];
        let plane_b = &b[ch * h * w..(ch + 1) * h * w];
        let mut acc = 0.0;
        let mut count = 0.0;
        for oy in 0..=(h - win) {
            for ox in 0..=(w - win) {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..win {
                    for kx in 0..win {
                        let kv = kernel[ky * win + kx];
                        let va = plane_a[(oy + ky) * w + ox + kx];
                        let vb = plane_b[(oy + ky) * w + ox + kx];
                        ma += kv * va;
                        mb += kv * vb;
                        saa += kv * va * va;
                        sbb += kv * vb * vb;
                        sab += kv * va * vb;
                    }
                }
                let (va, vb, vab) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += ((2.0 * ma * mb + c1) * (2.0 * vab + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        total += acc / count;
    }
    total / 3.0
}

#[test]
fn ssim_matches_brute_force_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..3 {
        let (h, w) = (16, 14);
        let a: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ta = Tensor::from_vec(&[3, h, w], a.clone());
        let tb = Tensor::from_vec(&[3, h, w], b.clone());
        let got = ssim_value(&ta, &tb).unwrap();
        let expect = ssim_oracle(&a, &b, h, w);
        assert!((got - expect).abs() <= 1e-9, "{got} vs {expect}");
    }
}

#[test]
fn contrastive_and_dssim_gradients_match_finite_differences() {
    // sc gradient over the general vector
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let dim = 8;
    let ind: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, dim)).collect();
    let point = random_vec(&mut rng, dim);
    let eval_sc = |p: &[f64]| -> (f64, Vec<f64>) {
        let tape = Tape::new();
        let g = tape.leaf_param(Tensor::from_vec(&[dim], p.to_vec()));
        let iv: Vec<_> = ind
            .iter()
            .map(|i| tape.constant(Tensor::from_vec(&[dim], i.clone())))
            .collect();
        let loss = sc_loss(g, &iv, 1, 0.3).unwrap();
        let l = loss.value().item();
        let grads = tape.backward(loss);
        (l, grads.get(g).unwrap().data().to_vec())
    };
    let (_, analytic) = eval_sc(&point);
    let err = grad_check(|p| eval_sc(p).0, &point, &analytic, 1e-4).unwrap();
    assert!(err <= 1e-4, "sc grad err {err}");

    // dssim gradient over one image
    let (h, w) = (12, 12);
    let target: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let img: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let eval_d = |p: &[f64]| -> (f64, Vec<f64>) {
        let tape = Tape::new();
        let a = tape.leaf_param(Tensor::from_vec(&[3, h, w], p.to_vec()));
        let b = tape.constant(Tensor::from_vec(&[3, h, w], target.clone()));
        let loss = dssim_loss(a, b).unwrap();
        let l = loss.value().item();
        let grads = tape.backward(loss);
        (l, grads.get(a).unwrap().data().to_vec())
    };
    let (_, analytic) = eval_d(&img);
    let err = grad_check(|p| eval_d(p).0, &img, &analytic, 1e-4).unwrap();
    assert!(err <= 1e-4, "dssim grad err {err}");
}
