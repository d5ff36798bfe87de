//! Front-to-back alpha compositing of projected Gaussians, forward and
//! backward, with an optional tiled forward path.
//!
//! Pixels are independent; both passes run over fixed row bands so that the
//! parallel and sequential schedules produce bit-identical results (band
//! buffers are reduced in band order regardless of which thread ran them).

use crate::project::{project, project_backward, Projected, ProjectOutcome, ScreenGrad};
use ghead_core::field::CameraPose;
use ghead_core::tape::Var;
use ghead_core::tensor::Tensor;
use rayon::prelude::*;
use std::sync::atomic::{AtomicU64, Ordering};

pub const TILE_SIZE: usize = 16;
const BAND_ROWS: usize = 8;

#[derive(Clone, Debug)]
pub struct RenderOptions {
    pub bg_color: [f64; 3],
    pub z_near: f64,
    /// Depth assigned to the background (far plane).
    pub z_far: f64,
    /// Per-splat alpha ceiling; `None` disables the clamp.
    pub alpha_clamp: Option<f64>,
    /// Stop compositing once transmittance falls below this; `None` disables.
    pub early_stop: Option<f64>,
    /// Skip splats whose 3σ footprint misses the pixel.
    pub cull_3sigma: bool,
    /// Bin splats into 16x16 pixel tiles before compositing (forward only).
    pub tiled: bool,
    /// Evaluate row bands on the rayon pool. Output is identical either way.
    pub parallel: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            bg_color: [0.0, 0.0, 0.0],
            z_near: 0.1,
            z_far: 100.0,
            alpha_clamp: Some(0.99),
            early_stop: Some(1e-4),
            cull_3sigma: true,
            tiled: false,
            parallel: false,
        }
    }
}

impl RenderOptions {
    /// Exact compositing used when comparing against the brute-force oracle
    /// and in gradient checks: no clamp, no early stop, no culling.
    pub fn oracle() -> Self {
        Self {
            alpha_clamp: None,
            early_stop: None,
            cull_3sigma: false,
            tiled: false,
            parallel: false,
            ..Self::default()
        }
    }
}

/// Activated per-primitive arrays, all row-major.
pub struct SplatInputs<'a> {
    pub mu: &'a [f64],      // [B,3]
    pub scale: &'a [f64],   // [B,3]
    pub quat: &'a [f64],    // [B,4] unit rows
    pub opacity: &'a [f64], // [B]
    pub color: &'a [f64],   // [B,3]
}

impl<'a> SplatInputs<'a> {
    pub fn count(&self) -> usize {
        self.opacity.len()
    }
}

pub struct RenderOutput {
    /// [3,H,W] in [0,1].
    pub rgb: Tensor,
    /// [H,W] alpha-weighted expected depth with background at z_far.
    pub depth: Tensor,
    /// [H,W] final transmittance.
    pub transmittance: Tensor,
}

#[derive(Default, Debug)]
pub struct RenderStats {
    pub culled_near: u64,
    pub skipped_nonpd: u64,
}

fn project_all(inputs: &SplatInputs<'_>, cam: &CameraPose, opts: &RenderOptions) -> (Vec<Projected>, RenderStats) {
    let mut stats = RenderStats::default();
    let mut splats = Vec::with_capacity(inputs.count());
    for i in 0..inputs.count() {
        let mu = [inputs.mu[i * 3], inputs.mu[i * 3 + 1], inputs.mu[i * 3 + 2]];
        let scale = [
            inputs.scale[i * 3],
            inputs.scale[i * 3 + 1],
            inputs.scale[i * 3 + 2],
        ];
        let quat = [
            inputs.quat[i * 4],
            inputs.quat[i * 4 + 1],
            inputs.quat[i * 4 + 2],
            inputs.quat[i * 4 + 3],
        ];
        let color = [
            inputs.color[i * 3],
            inputs.color[i * 3 + 1],
            inputs.color[i * 3 + 2],
        ];
        match project(i, &mu, &scale, &quat, inputs.opacity[i], &color, cam, opts.z_near) {
            ProjectOutcome::CulledNear => stats.culled_near += 1,
            ProjectOutcome::SkippedNonPd => stats.skipped_nonpd += 1,
            ProjectOutcome::Splat(s) => splats.push(*s),
        }
    }
    // global deterministic order: depth ascending, source index breaking ties
    splats.sort_unstable_by(|a, b| {
        a.z.partial_cmp(&b.z)
            .unwrap()
            .then_with(|| a.idx.cmp(&b.idx))
    });
    (splats, stats)
}

#[inline]
fn splat_covers(s: &Projected, px: f64, py: f64, cull: bool) -> bool {
    !cull || ((px - s.p2d[0]).abs() <= s.radius && (py - s.p2d[1]).abs() <= s.radius)
}

#[inline]
fn splat_alpha(s: &Projected, px: f64, py: f64, clamp: Option<f64>) -> f64 {
    let dx = px - s.p2d[0];
    let dy = py - s.p2d[1];
    let power = -0.5 * (s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy);
    let alpha = s.alpha_base * power.exp();
    match clamp {
        Some(c) => alpha.min(c),
        None => alpha,
    }
}

/// Composite one pixel front to back over an ordered splat slice.
/// Returns (rgb, depth, final transmittance).
pub fn composite_pixel(
    splats: &[&Projected],
    px: f64,
    py: f64,
    opts: &RenderOptions,
) -> ([f64; 3], f64, f64) {
    let mut rgb = [0.0; 3];
    let mut depth = 0.0;
    let mut t = 1.0;
    for s in splats {
        let alpha = splat_alpha(s, px, py, opts.alpha_clamp);
        let w = alpha * t;
        for d in 0..3 {
            rgb[d] += s.color[d] * w;
        }
        depth += s.z * w;
        t *= 1.0 - alpha;
        if let Some(stop) = opts.early_stop {
            if t < stop {
                break;
            }
        }
    }
    for d in 0..3 {
        rgb[d] += opts.bg_color[d] * t;
    }
    depth += opts.z_far * t;
    (rgb, depth, t)
}

fn composite_rows(
    splats: &[Projected],
    cam: &CameraPose,
    opts: &RenderOptions,
    y0: usize,
    y1: usize,
    rgb: &mut [f64],
    depth: &mut [f64],
    trans: &mut [f64],
) {
    let w = cam.width;
    let band_plane = (y1 - y0) * w;
    for y in y0..y1 {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut c = [0.0; 3];
            let mut dep = 0.0;
            let mut t = 1.0;
            for s in splats {
                if !splat_covers(s, px, py, opts.cull_3sigma) {
                    continue;
                }
                let alpha = splat_alpha(s, px, py, opts.alpha_clamp);
                let wgt = alpha * t;
                for d in 0..3 {
                    c[d] += s.color[d] * wgt;
                }
                dep += s.z * wgt;
                t *= 1.0 - alpha;
                if let Some(stop) = opts.early_stop {
                    if t < stop {
                        break;
                    }
                }
            }
            let pix = (y - y0) * w + x;
            for d in 0..3 {
                rgb[d * band_plane + pix] = c[d] + opts.bg_color[d] * t;
            }
            depth[pix] = dep + opts.z_far * t;
            trans[pix] = t;
        }
    }
}

/// Render the full image. Splats are depth-sorted globally; each pixel
/// composites the splats whose footprint covers it.
pub fn render(inputs: &SplatInputs<'_>, cam: &CameraPose, opts: &RenderOptions) -> (RenderOutput, RenderStats) {
    let (splats, stats) = project_all(inputs, cam, opts);
    let (w, h) = (cam.width, cam.height);
    let plane = w * h;
    let mut rgb = Tensor::zeros(&[3, h, w]);
    let mut depth = Tensor::zeros(&[h, w]);
    let mut trans = Tensor::zeros(&[h, w]);

    if opts.tiled {
        render_tiled_into(
            &splats,
            cam,
            opts,
            rgb.data_mut(),
            depth.data_mut(),
            trans.data_mut(),
        );
        return (RenderOutput { rgb, depth, transmittance: trans }, stats);
    }

    let bands: Vec<(usize, usize)> = (0..h)
        .step_by(BAND_ROWS)
        .map(|y0| (y0, (y0 + BAND_ROWS).min(h)))
        .collect();

    let run_band = |&(y0, y1): &(usize, usize)| {
        let rows = y1 - y0;
        let mut band_rgb = vec![0.0; 3 * rows * w];
        let mut band_depth = vec![0.0; rows * w];
        let mut band_trans = vec![0.0; rows * w];
        composite_rows(
            &splats,
            cam,
            opts,
            y0,
            y1,
            &mut band_rgb,
            &mut band_depth,
            &mut band_trans,
        );
        (y0, y1, band_rgb, band_depth, band_trans)
    };

    let results: Vec<_> = if opts.parallel {
        bands.par_iter().map(run_band).collect()
    } else {
        bands.iter().map(run_band).collect()
    };

    for (y0, y1, band_rgb, band_depth, band_trans) in results {
        let rows = y1 - y0;
        for d in 0..3 {
            rgb.data_mut()[d * plane + y0 * w..d * plane + y1 * w]
                .copy_from_slice(&band_rgb[d * rows * w..(d + 1) * rows * w]);
        }
        depth.data_mut()[y0 * w..y1 * w].copy_from_slice(&band_depth);
        trans.data_mut()[y0 * w..y1 * w].copy_from_slice(&band_trans);
    }

    (RenderOutput { rgb, depth, transmittance: trans }, stats)
}

/// Tiled forward path: bin splats into 16x16 tiles by footprint overlap,
/// keep per-tile lists depth-ordered, composite tile-locally. Must agree
/// with the global path to 1e-9.
fn render_tiled_into(
    splats: &[Projected],
    cam: &CameraPose,
    opts: &RenderOptions,
    rgb: &mut [f64],
    depth: &mut [f64],
    trans: &mut [f64],
) {
    let (w, h) = (cam.width, cam.height);
    let plane = w * h;
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<&Projected>> = vec![Vec::new(); tiles_x * tiles_y];
    for s in splats {
        if opts.cull_3sigma {
            let x0 = ((s.p2d[0] - s.radius).floor().max(0.0) as usize).min(w - 1) / TILE_SIZE;
            let x1 = ((s.p2d[0] + s.radius).ceil().max(0.0) as usize).min(w - 1) / TILE_SIZE;
            let y0 = ((s.p2d[1] - s.radius).floor().max(0.0) as usize).min(h - 1) / TILE_SIZE;
            let y1 = ((s.p2d[1] + s.radius).ceil().max(0.0) as usize).min(h - 1) / TILE_SIZE;
            if s.p2d[0] + s.radius < 0.0 || s.p2d[1] + s.radius < 0.0 {
                continue;
            }
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    bins[ty * tiles_x + tx].push(s);
                }
            }
        } else {
            for bin in bins.iter_mut() {
                bin.push(s);
            }
        }
    }
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let list = &bins[ty * tiles_x + tx];
            for y in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h) {
                for x in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w) {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let covered: Vec<&Projected> = list
                        .iter()
                        .copied()
                        .filter(|s| splat_covers(s, px, py, opts.cull_3sigma))
                        .collect();
                    let (c, dep, t) = composite_pixel(&covered, px, py, opts);
                    for d in 0..3 {
                        rgb[d * plane + y * w + x] = c[d];
                    }
                    depth[y * w + x] = dep;
                    trans[y * w + x] = t;
                }
            }
        }
    }
}

/// Gradients w.r.t. the activated input arrays, same layout as the inputs.
pub struct RenderGrads {
    pub mu: Tensor,      // [B,3]
    pub scale: Tensor,   // [B,3]
    pub quat: Tensor,    // [B,4]
    pub opacity: Tensor, // [B]
    pub color: Tensor,   // [B,3]
}

/// Backward pass. `grad_rgb` is [3,H,W], `grad_depth` [H,W]; the projection
/// is recomputed rather than saved. Transmittance is treated as a
/// non-differentiable diagnostic output.
pub fn render_backward(
    inputs: &SplatInputs<'_>,
    cam: &CameraPose,
    opts: &RenderOptions,
    grad_rgb: &[f64],
    grad_depth: &[f64],
) -> RenderGrads {
    let n = inputs.count();
    let (splats, _stats) = project_all(inputs, cam, opts);
    let (w, h) = (cam.width, cam.height);
    let plane = w * h;
    assert_eq!(grad_rgb.len(), 3 * plane);
    assert_eq!(grad_depth.len(), plane);

    let bands: Vec<(usize, usize)> = (0..h)
        .step_by(BAND_ROWS)
        .map(|y0| (y0, (y0 + BAND_ROWS).min(h)))
        .collect();

    let run_band = |&(y0, y1): &(usize, usize)| {
        let mut acc: Vec<ScreenGrad> = vec![ScreenGrad::default(); splats.len()];
        for y in y0..y1 {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let g_rgb = [
                    grad_rgb[y * w + x],
                    grad_rgb[plane + y * w + x],
                    grad_rgb[2 * plane + y * w + x],
                ];
                let g_depth = grad_depth[y * w + x];
                if g_rgb == [0.0; 3] && g_depth == 0.0 {
                    continue;
                }
                backward_pixel(&splats, px, py, opts, &g_rgb, g_depth, &mut acc);
            }
        }
        acc
    };

    let band_accs: Vec<Vec<ScreenGrad>> = if opts.parallel {
        bands.par_iter().map(run_band).collect()
    } else {
        bands.iter().map(run_band).collect()
    };

    // fixed-order reduction over bands
    let mut screen: Vec<ScreenGrad> = vec![ScreenGrad::default(); splats.len()];
    for acc in band_accs {
        for (dst, src) in screen.iter_mut().zip(&acc) {
            dst.add(src);
        }
    }

    let mut grads = RenderGrads {
        mu: Tensor::zeros(&[n, 3]),
        scale: Tensor::zeros(&[n, 3]),
        quat: Tensor::zeros(&[n, 4]),
        opacity: Tensor::zeros(&[n]),
        color: Tensor::zeros(&[n, 3]),
    };
    for (s, sg) in splats.iter().zip(&screen) {
        let i = s.idx;
        let scale = [
            inputs.scale[i * 3],
            inputs.scale[i * 3 + 1],
            inputs.scale[i * 3 + 2],
        ];
        let quat = [
            inputs.quat[i * 4],
            inputs.quat[i * 4 + 1],
            inputs.quat[i * 4 + 2],
            inputs.quat[i * 4 + 3],
        ];
        let pg = project_backward(s, &scale, &quat, cam, sg);
        for d in 0..3 {
            grads.mu.data_mut()[i * 3 + d] = pg.mu[d];
            grads.scale.data_mut()[i * 3 + d] = pg.scale[d];
            grads.color.data_mut()[i * 3 + d] = pg.color[d];
        }
        for d in 0..4 {
            grads.quat.data_mut()[i * 4 + d] = pg.quat[d];
        }
        grads.opacity.data_mut()[i] = pg.opacity;
    }
    grads
}

/// Per-pixel backward through front-to-back compositing.
fn backward_pixel(
    splats: &[Projected],
    px: f64,
    py: f64,
    opts: &RenderOptions,
    g_rgb: &[f64; 3],
    g_depth: f64,
    acc: &mut [ScreenGrad],
) {
    // forward replay collecting per-splat alpha and transmittance
    let mut entries: Vec<(usize, f64, f64, bool)> = Vec::new(); // (splat slot, alpha, T_before, clamped)
    let mut t = 1.0;
    for (slot, s) in splats.iter().enumerate() {
        if !splat_covers(s, px, py, opts.cull_3sigma) {
            continue;
        }
        let dx = px - s.p2d[0];
        let dy = py - s.p2d[1];
        let power = -0.5 * (s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy);
        let raw = s.alpha_base * power.exp();
        let (alpha, clamped) = match opts.alpha_clamp {
            Some(c) if raw > c => (c, true),
            _ => (raw, false),
        };
        entries.push((slot, alpha, t, clamped));
        t *= 1.0 - alpha;
        if let Some(stop) = opts.early_stop {
            if t < stop {
                break;
            }
        }
    }
    let t_final = t;
    // suffix sums over contributions behind each splat
    let mut total_c = [0.0; 3];
    let mut total_z = 0.0;
    for &(slot, alpha, t_before, _) in &entries {
        let s = &splats[slot];
        let wgt = alpha * t_before;
        for d in 0..3 {
            total_c[d] += s.color[d] * wgt;
        }
        total_z += s.z * wgt;
    }
    let mut prefix_c = [0.0; 3];
    let mut prefix_z = 0.0;
    for &(slot, alpha, t_before, clamped) in &entries {
        let s = &splats[slot];
        let wgt = alpha * t_before;
        for d in 0..3 {
            prefix_c[d] += s.color[d] * wgt;
        }
        prefix_z += s.z * wgt;

        let sg = &mut acc[slot];
        // direct color and depth contributions
        for d in 0..3 {
            sg.color[d] += g_rgb[d] * wgt;
        }
        sg.z += g_depth * wgt;

        // dL/dalpha: own contribution minus everything it occludes
        let one_minus = 1.0 - alpha;
        let mut g_alpha = 0.0;
        for d in 0..3 {
            let suffix = total_c[d] - prefix_c[d] + opts.bg_color[d] * t_final;
            g_alpha += g_rgb[d] * (s.color[d] * t_before - suffix / one_minus);
        }
        let suffix_z = total_z - prefix_z + opts.z_far * t_final;
        g_alpha += g_depth * (s.z * t_before - suffix_z / one_minus);

        if clamped {
            continue; // flat region of the clamp
        }
        let dx = px - s.p2d[0];
        let dy = py - s.p2d[1];
        let power = -0.5 * (s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy);
        let gexp = power.exp();
        sg.alpha_base += g_alpha * gexp;
        let g_power = g_alpha * s.alpha_base * gexp;
        // power = -0.5 dᵀ Λ d, d = pix - p2d
        let lam_d = [
            s.inv[0] * dx + s.inv[1] * dy,
            s.inv[1] * dx + s.inv[2] * dy,
        ];
        sg.p2d[0] += g_power * lam_d[0];
        sg.p2d[1] += g_power * lam_d[1];
        sg.inv[0] += g_power * (-0.5 * dx * dx);
        sg.inv[1] += g_power * (-dx * dy);
        sg.inv[2] += g_power * (-0.5 * dy * dy);
    }
}

static RENDER_OP_WARNINGS: AtomicU64 = AtomicU64::new(0);

pub fn render_op_warnings() -> u64 {
    RENDER_OP_WARNINGS.load(Ordering::Relaxed)
}

/// Tape op: activated parameter vars in, a [5,H,W] tensor out whose planes
/// are RGB, depth, and transmittance.
pub fn render_var<'t>(
    mu: Var<'t>,
    scale: Var<'t>,
    quat: Var<'t>,
    opacity: Var<'t>,
    color: Var<'t>,
    cam: &CameraPose,
    opts: &RenderOptions,
) -> Var<'t> {
    let (mv, sv, qv, ov, cv) = (
        mu.value(),
        scale.value(),
        quat.value(),
        opacity.value(),
        color.value(),
    );
    let n = ov.numel();
    assert_eq!(mv.shape(), &[n, 3]);
    assert_eq!(sv.shape(), &[n, 3]);
    assert_eq!(qv.shape(), &[n, 4]);
    assert_eq!(cv.shape(), &[n, 3]);
    let inputs = SplatInputs {
        mu: mv.data(),
        scale: sv.data(),
        quat: qv.data(),
        opacity: ov.data(),
        color: cv.data(),
    };
    let (out, stats) = render(&inputs, cam, opts);
    if stats.skipped_nonpd > 0 {
        RENDER_OP_WARNINGS.fetch_add(stats.skipped_nonpd, Ordering::Relaxed);
    }
    let (w, h) = (cam.width, cam.height);
    let plane = w * h;
    let mut packed = Tensor::zeros(&[5, h, w]);
    packed.data_mut()[..3 * plane].copy_from_slice(out.rgb.data());
    packed.data_mut()[3 * plane..4 * plane].copy_from_slice(out.depth.data());
    packed.data_mut()[4 * plane..].copy_from_slice(out.transmittance.data());

    let cam = cam.clone();
    let opts = opts.clone();
    let tape = mu.tape();
    tape.custom_op(
        &[mu, scale, quat, opacity, color],
        packed,
        Box::new(move |g| {
            let plane = cam.width * cam.height;
            let grad_rgb = &g.data()[..3 * plane];
            let grad_depth = &g.data()[3 * plane..4 * plane];
            let inputs = SplatInputs {
                mu: mv.data(),
                scale: sv.data(),
                quat: qv.data(),
                opacity: ov.data(),
                color: cv.data(),
            };
            let grads = render_backward(&inputs, &cam, &opts, grad_rgb, grad_depth);
            vec![
                Some(grads.mu),
                Some(grads.scale),
                Some(grads.quat),
                Some(grads.opacity),
                Some(grads.color),
            ]
        }),
    )
}

/// Split the packed [5,H,W] render into (rgb [3,H,W], depth [H,W], transmittance [H,W]).
pub fn split_render<'t>(packed: Var<'t>, h: usize, w: usize) -> (Var<'t>, Var<'t>, Var<'t>) {
    let flat = packed.reshape(&[5 * h * w]);
    let rgb = flat.slice(0, 3 * h * w).reshape(&[3, h, w]);
    let depth = flat.slice(3 * h * w, 4 * h * w).reshape(&[h, w]);
    let trans = flat.slice(4 * h * w, 5 * h * w).reshape(&[h, w]);
    (rgb, depth, trans)
}
