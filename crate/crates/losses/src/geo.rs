//! Geometry regularizer on rendered depth: total variation over foreground
//! pixels plus consistency of adjacent normal estimates from depth
//! gradients. Foreground is where transmittance < 0.5; the mask comes from
//! the forward pass and is treated as constant.

use ghead_core::conv::crop2d;
use ghead_core::error::Result;
use ghead_core::tape::Var;
use ghead_core::tensor::Tensor;

pub const FG_TRANSMITTANCE: f64 = 0.5;

/// Differentiable geometry loss. `depth` is a [H,W] var from the renderer;
/// `transmittance` the matching forward-pass map.
pub fn geo_loss<'t>(depth: Var<'t>, transmittance: &Tensor) -> Result<Var<'t>> {
    let shape = depth.shape();
    assert_eq!(shape.len(), 2);
    let (h, w) = (shape[0], shape[1]);
    assert_eq!(transmittance.shape(), &[h, w]);
    let tape = depth.tape();
    let fg = |y: usize, x: usize| transmittance.data()[y * w + x] < FG_TRANSMITTANCE;

    // --- total variation over foreground neighbor pairs ---
    // horizontal pairs: both (y,x) and (y,x+1) in the foreground
    let mut mask_h = Tensor::zeros(&[h, w - 1]);
    let mut count = 0.0f64;
    for y in 0..h {
        for x in 0..w - 1 {
            if fg(y, x) && fg(y, x + 1) {
                mask_h.data_mut()[y * (w - 1) + x] = 1.0;
                count += 1.0;
            }
        }
    }
    let mut mask_v = Tensor::zeros(&[h - 1, w]);
    for y in 0..h - 1 {
        for x in 0..w {
            if fg(y, x) && fg(y + 1, x) {
                mask_v.data_mut()[y * w + x] = 1.0;
                count += 1.0;
            }
        }
    }
    let dh = crop2d(depth, 0, h, 1, w).sub(crop2d(depth, 0, h, 0, w - 1));
    let dv = crop2d(depth, 1, h, 0, w).sub(crop2d(depth, 0, h - 1, 0, w));
    let tv_sum = dh
        .abs()
        .mul(tape.constant(mask_h))
        .sum()
        .add(dv.abs().mul(tape.constant(mask_v)).sum());
    let tv = tv_sum.scale(1.0 / count.max(1.0));

    // --- normal consistency ---
    // normals on the (h-1)x(w-1) grid from forward differences
    let dx = crop2d(depth, 0, h - 1, 1, w).sub(crop2d(depth, 0, h - 1, 0, w - 1));
    let dy = crop2d(depth, 1, h, 0, w - 1).sub(crop2d(depth, 0, h - 1, 0, w - 1));
    let ones = tape.constant(Tensor::full(&[h - 1, w - 1], 1.0));
    let norm = dx.square().add(dy.square()).add_scalar(1.0).sqrt();
    let nx = dx.neg().div(norm);
    let ny = dy.neg().div(norm);
    let nz = ones.div(norm);

    let (gh, gw) = (h - 1, w - 1);
    let mut nmask_h = Tensor::zeros(&[gh, gw - 1]);
    let mut ncount = 0.0f64;
    for y in 0..gh {
        for x in 0..gw - 1 {
            if fg(y, x) && fg(y, x + 1) {
                nmask_h.data_mut()[y * (gw - 1) + x] = 1.0;
                ncount += 1.0;
            }
        }
    }
    let mut nmask_v = Tensor::zeros(&[gh - 1, gw]);
    for y in 0..gh - 1 {
        for x in 0..gw {
            if fg(y, x) && fg(y + 1, x) {
                nmask_v.data_mut()[y * gw + x] = 1.0;
                ncount += 1.0;
            }
        }
    }
    let nmask_h = tape.constant(nmask_h);
    let nmask_v = tape.constant(nmask_v);
    let mut normal_sum: Option<Var<'t>> = None;
    for n in [nx, ny, nz] {
        let ph = crop2d(n, 0, gh, 1, gw)
            .sub(crop2d(n, 0, gh, 0, gw - 1))
            .square()
            .mul(nmask_h)
            .sum();
        let pv = crop2d(n, 1, gh, 0, gw)
            .sub(crop2d(n, 0, gh - 1, 0, gw))
            .square()
            .mul(nmask_v)
            .sum();
        let term = ph.add(pv);
        normal_sum = Some(match normal_sum {
            None => term,
            Some(prev) => prev.add(term),
        });
    }
    let normal = normal_sum.unwrap().scale(1.0 / ncount.max(1.0));

    Ok(tv.add(normal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ghead_core::tape::Tape;

    #[test]
    fn constant_depth_foreground_is_zero() {
        let tape = Tape::new();
        let depth = tape.constant(Tensor::full(&[8, 8], 2.5));
        let trans = Tensor::zeros(&[8, 8]); // everything foreground
        let loss = geo_loss(depth, &trans).unwrap();
        assert!(loss.value().item().abs() < 1e-15);
    }

    #[test]
    fn planar_ramp_has_zero_normal_term() {
        // depth = a + b·x + c·y: constant gradient -> identical normals
        let (h, w) = (8, 8);
        let mut d = Tensor::zeros(&[h, w]);
        for y in 0..h {
            for x in 0..w {
                d.data_mut()[y * w + x] = 1.0 + 0.05 * x as f64 + 0.02 * y as f64;
            }
        }
        let tape = Tape::new();
        let depth = tape.constant(d);
        let trans = Tensor::zeros(&[h, w]);
        let loss = geo_loss(depth, &trans).unwrap().value().item();
        // TV of the ramp is |b| and |c| averaged; normal term must vanish,
        // so the loss equals the TV component exactly
        let tv_expect = (8.0 * 7.0 * 0.05 + 7.0 * 8.0 * 0.02) / (2.0 * 7.0 * 8.0);
        assert!((loss - tv_expect).abs() < 1e-12, "{loss} vs {tv_expect}");
    }

    #[test]
    fn matches_brute_force_oracle() {
        // independent pixel-loop implementation of the same definition
        let (h, w) = (10, 9);
        let mut d = Tensor::zeros(&[h, w]);
        let mut t = Tensor::zeros(&[h, w]);
        for y in 0..h {
            for x in 0..w {
                d.data_mut()[y * w + x] = 2.0 + ((x * 7 + y * 13) % 5) as f64 * 0.1;
                t.data_mut()[y * w + x] = if (x + 2 * y) % 3 == 0 { 0.9 } else { 0.1 };
            }
        }
        let tape = Tape::new();
        let depth = tape.constant(d.clone());
        let loss = geo_loss(depth, &t).unwrap().value().item();

        // oracle
        let fg = |y: usize, x: usize| t.data()[y * w + x] < 0.5;
        let dv = |y: usize, x: usize| d.data()[y * w + x];
        let mut tv = 0.0;
        let mut cnt = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w && fg(y, x) && fg(y, x + 1) {
                    tv += (dv(y, x + 1) - dv(y, x)).abs();
                    cnt += 1.0;
                }
                if y + 1 < h && fg(y, x) && fg(y + 1, x) {
                    tv += (dv(y + 1, x) - dv(y, x)).abs();
                    cnt += 1.0;
                }
            }
        }
        tv /= cnt.max(1.0);
        let normal = |y: usize, x: usize| -> [f64; 3] {
            let gx = dv(y, x + 1) - dv(y, x);
            let gy = dv(y + 1, x) - dv(y, x);
            let n = (gx * gx + gy * gy + 1.0).sqrt();
            [-gx / n, -gy / n, 1.0 / n]
        };
        let mut ns = 0.0;
        let mut ncnt = 0.0f64;
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                if x + 1 < w - 1 && fg(y, x) && fg(y, x + 1) {
                    let (a, b) = (normal(y, x), normal(y, x + 1));
                    ns += (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
                    ncnt += 1.0;
                }
                if y + 1 < h - 1 && fg(y, x) && fg(y + 1, x) {
                    let (a, b) = (normal(y, x), normal(y + 1, x));
                    ns += (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
                    ncnt += 1.0;
                }
            }
        }
        ns /= ncnt.max(1.0);
        let expect = tv + ns;
        assert!((loss - expect).abs() <= 1e-10, "{loss} vs {expect}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use ghead_core::gradcheck::grad_check;
        let (h, w) = (7, 7);
        let mut t = Tensor::zeros(&[h, w]);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = if i % 4 == 0 { 0.8 } else { 0.2 };
        }
        // strictly distinct neighbor values keep the TV |·| away from its kink
        let point: Vec<f64> = (0..h * w)
            .map(|i| 2.0 + 0.31 * ((i as f64) * 0.7).sin() + 0.013 * i as f64)
            .collect();
        let eval = |p: &[f64]| -> (f64, Vec<f64>) {
            let tape = Tape::new();
            let depth = tape.leaf_param(Tensor::from_vec(&[h, w], p.to_vec()));
            let loss = geo_loss(depth, &t).unwrap();
            let l = loss.value().item();
            let g = tape.backward(loss);
            (l, g.get(depth).unwrap().data().to_vec())
        };
        let (_, analytic) = eval(&point);
        let err = grad_check(|p| eval(p).0, &point, &analytic, 1e-4).unwrap();
        assert!(err <= 1e-4, "err = {err}");
    }
}
