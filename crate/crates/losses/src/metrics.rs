//! Image quality metrics: L1, SSIM / D-SSIM, PSNR.
//!
//! SSIM follows the standard definition: 11x11 Gaussian window with σ = 1.5,
//! K1 = 0.01, K2 = 0.03, dynamic range 1.0, mean over valid windows and
//! channels. The differentiable path builds the metric from tape ops so the
//! D-SSIM term can train the renderer.

use ghead_core::error::{CoreError, Result};
use ghead_core::tape::Var;
use ghead_core::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean absolute difference over all elements.
pub fn l1_loss<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    if a.shape() != b.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", a.shape()),
            got: format!("{:?}", b.shape()),
        });
    }
    Ok(a.sub(b).abs().mean())
}

/// Normalized 2-D Gaussian window used by SSIM.
pub fn ssim_window() -> Tensor {
    let n = SSIM_WINDOW;
    let c = (n / 2) as f64;
    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            data.push((-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = data.iter().sum();
    for v in data.iter_mut() {
        *v /= sum;
    }
    Tensor::from_vec(&[n, n], data)
}

fn channel<'t>(img: Var<'t>, c: usize, h: usize, w: usize) -> Var<'t> {
    img.reshape(&[3 * h * w])
        .slice(c * h * w, (c + 1) * h * w)
        .reshape(&[h, w])
}

/// Differentiable SSIM over [3,H,W] images in [0,1].
pub fn ssim<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let shape = a.shape();
    if shape != b.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{shape:?}"),
            got: format!("{:?}", b.shape()),
        });
    }
    assert_eq!(shape.len(), 3);
    assert_eq!(shape[0], 3);
    let (h, w) = (shape[1], shape[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::ImageTooSmall {
            h,
            w,
            window: SSIM_WINDOW,
        });
    }
    let tape = a.tape();
    let kernel = tape.constant(ssim_window());
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    let mut acc: Option<Var<'t>> = None;
    for c in 0..3 {
        let ac = channel(a, c, h, w);
        let bc = channel(b, c, h, w);
        let mu_a = ghead_core::conv::conv2d_plane(ac, kernel);
        let mu_b = ghead_core::conv::conv2d_plane(bc, kernel);
        let a2 = ghead_core::conv::conv2d_plane(ac.square(), kernel);
        let b2 = ghead_core::conv::conv2d_plane(bc.square(), kernel);
        let ab = ghead_core::conv::conv2d_plane(ac.mul(bc), kernel);
        let var_a = a2.sub(mu_a.square());
        let var_b = b2.sub(mu_b.square());
        let cov = ab.sub(mu_a.mul(mu_b));
        let num = mu_a
            .mul(mu_b)
            .scale(2.0)
            .add_scalar(c1)
            .mul(cov.scale(2.0).add_scalar(c2));
        let den = mu_a
            .square()
            .add(mu_b.square())
            .add_scalar(c1)
            .mul(var_a.add(var_b).add_scalar(c2));
        let mean = num.div(den).mean();
        acc = Some(match acc {
            None => mean,
            Some(prev) => prev.add(mean),
        });
    }
    Ok(acc.unwrap().scale(1.0 / 3.0))
}

/// D-SSIM = (1 - SSIM) / 2, in [0, 1].
pub fn dssim_loss<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    Ok(ssim(a, b)?.neg().add_scalar(1.0).scale(0.5))
}

/// Plain (non-differentiable) SSIM of two tensors.
pub fn ssim_value(a: &Tensor, b: &Tensor) -> Result<f64> {
    let tape = ghead_core::tape::Tape::new();
    let va = tape.constant(a.clone());
    let vb = tape.constant(b.clone());
    Ok(ssim(va, vb)?.value().item())
}

/// PSNR in dB assuming dynamic range 1.0; identical inputs report +∞.
pub fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "psnr shape mismatch");
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (1.0 / mse).log10()
}
