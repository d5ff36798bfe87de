//! Perspective projection of 3-D Gaussians to screen-space splats.
//!
//! Forward: p2d by pinhole projection, 2-D covariance by the local affine
//! (EWA) approximation Σ' = J W Σ Wᵀ Jᵀ with a constant dilation added to
//! the diagonal. Backward: hand-written chain through the Jacobian, the
//! camera rotation, the quaternion rotation, and the scale diagonal.

use ghead_core::field::{covariance3d, quat_to_rotation, CameraPose};

pub const COV2D_DILATION: f64 = 0.3;

/// One projected Gaussian, plus the intermediates the backward pass reuses.
#[derive(Clone, Debug)]
pub struct Projected {
    /// Index into the input primitive arrays.
    pub idx: usize,
    pub p2d: [f64; 2],
    pub z: f64,
    /// Upper triangle (a, b, c) of the dilated 2x2 covariance [a b; b c].
    pub cov: [f64; 3],
    /// Upper triangle of the covariance inverse.
    pub inv: [f64; 3],
    pub color: [f64; 3],
    pub alpha_base: f64,
    /// 3σ pixel radius used for per-pixel culling.
    pub radius: f64,
    pub t_cam: [f64; 3],
}

/// Gradients w.r.t. one primitive's activated inputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct SplatGrad {
    pub mu: [f64; 3],
    pub scale: [f64; 3],
    pub quat: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

/// Per-primitive gradients accumulated by the compositor, in screen space.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScreenGrad {
    pub p2d: [f64; 2],
    /// dL/d(inv covariance triple) with the off-diagonal counted once.
    pub inv: [f64; 3],
    pub z: f64,
    pub color: [f64; 3],
    pub alpha_base: f64,
}

impl ScreenGrad {
    pub fn add(&mut self, o: &ScreenGrad) {
        for d in 0..2 {
            self.p2d[d] += o.p2d[d];
        }
        for d in 0..3 {
            self.inv[d] += o.inv[d];
            self.color[d] += o.color[d];
        }
        self.z += o.z;
        self.alpha_base += o.alpha_base;
    }
}

pub enum ProjectOutcome {
    /// Camera-space depth at or behind the near plane.
    CulledNear,
    /// Projected covariance failed the positive-definite check.
    SkippedNonPd,
    Splat(Box<Projected>),
}

fn jacobian(t: &[f64; 3], cam: &CameraPose) -> [[f64; 3]; 2] {
    let (x, y, z) = (t[0], t[1], t[2]);
    [
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ]
}

/// Project one primitive given activated parameters.
pub fn project(
    idx: usize,
    mu: &[f64; 3],
    scale: &[f64; 3],
    quat: &[f64; 4],
    opacity: f64,
    color: &[f64; 3],
    cam: &CameraPose,
    z_near: f64,
) -> ProjectOutcome {
    let t_cam = cam.world_to_camera(mu);
    if t_cam[2] <= z_near {
        return ProjectOutcome::CulledNear;
    }
    let z = t_cam[2];
    let p2d = [
        cam.fx * t_cam[0] / z + cam.cx,
        cam.fy * t_cam[1] / z + cam.cy,
    ];
    let sigma = covariance3d(scale, quat);
    // M = W Σ Wᵀ in camera space
    let w = &cam.r;
    let mut ws = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                ws[i][j] += w[i][k] * sigma[k][j];
            }
        }
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                m[i][j] += ws[i][k] * w[j][k];
            }
        }
    }
    let j = jacobian(&t_cam, cam);
    // cov2d = J M Jᵀ + dilation I
    let mut jm = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            for k in 0..3 {
                jm[r][c] += j[r][k] * m[k][c];
            }
        }
    }
    let mut cov = [0.0; 3];
    for k in 0..3 {
        cov[0] += jm[0][k] * j[0][k];
        cov[1] += jm[0][k] * j[1][k];
        cov[2] += jm[1][k] * j[1][k];
    }
    cov[0] += COV2D_DILATION;
    cov[2] += COV2D_DILATION;
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) || cov[0] <= 0.0 || !det.is_finite() {
        return ProjectOutcome::SkippedNonPd;
    }
    let inv = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mid = 0.5 * (cov[0] + cov[2]);
    let disc = (mid * mid - det).max(0.0).sqrt();
    let lambda_max = mid + disc;
    let radius = 3.0 * lambda_max.sqrt();
    ProjectOutcome::Splat(Box::new(Projected {
        idx,
        p2d,
        z,
        cov,
        inv,
        color: *color,
        alpha_base: opacity,
        radius,
        t_cam,
    }))
}

/// Backward through `project` for one splat, turning screen-space gradients
/// into gradients on the activated primitive parameters.
pub fn project_backward(
    splat: &Projected,
    scale: &[f64; 3],
    quat: &[f64; 4],
    cam: &CameraPose,
    sg: &ScreenGrad,
) -> SplatGrad {
    let mut out = SplatGrad {
        color: sg.color,
        opacity: sg.alpha_base,
        ..Default::default()
    };
    let t = &splat.t_cam;
    let (x, y, z) = (t[0], t[1], t[2]);

    // dL/dΛ with the off-diagonal split evenly -> full symmetric matrix
    let gl = [
        [sg.inv[0], sg.inv[1] * 0.5],
        [sg.inv[1] * 0.5, sg.inv[2]],
    ];
    // dL/dC = -Λ GΛ Λ (Λ = C⁻¹, both symmetric)
    let lam = [
        [splat.inv[0], splat.inv[1]],
        [splat.inv[1], splat.inv[2]],
    ];
    let mut tmp = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                tmp[i][j] += lam[i][k] * gl[k][j];
            }
        }
    }
    let mut gc = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                gc[i][j] -= tmp[i][k] * lam[k][j];
            }
        }
    }

    // recompute Σ, M, J (cheap, avoids storing them per splat)
    let sigma = covariance3d(scale, quat);
    let w = &cam.r;
    let mut ws = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                ws[i][j] += w[i][k] * sigma[k][j];
            }
        }
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                m[i][j] += ws[i][k] * w[j][k];
            }
        }
    }
    let j = jacobian(t, cam);

    // dL/dM = Jᵀ gc J
    let mut jt_gc = [[0.0; 2]; 3];
    for i in 0..3 {
        for c in 0..2 {
            for k in 0..2 {
                jt_gc[i][c] += j[k][i] * gc[k][c];
            }
        }
    }
    let mut gm = [[0.0; 3]; 3];
    for i in 0..3 {
        for c in 0..3 {
            for k in 0..2 {
                gm[i][c] += jt_gc[i][k] * j[k][c];
            }
        }
    }
    // dL/dJ = 2 gc J M
    let mut gc_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            for k in 0..2 {
                gc_j[r][c] += gc[r][k] * j[k][c];
            }
        }
    }
    let mut gj = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            for k in 0..3 {
                gj[r][c] += 2.0 * gc_j[r][k] * m[k][c];
            }
        }
    }
    // dL/dΣ = Wᵀ gm W
    let mut wt_gm = [[0.0; 3]; 3];
    for i in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                wt_gm[i][c] += w[k][i] * gm[k][c];
            }
        }
    }
    let mut gs = [[0.0; 3]; 3];
    for i in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                gs[i][c] += wt_gm[i][k] * w[c][k];
            }
        }
    }

    // Σ = R D Rᵀ with D = diag(s²)
    let r = quat_to_rotation(quat);
    // dL/ds_k = (Rᵀ gs R)_kk * 2 s_k
    for k in 0..3 {
        let mut acc = 0.0;
        for i in 0..3 {
            for jj in 0..3 {
                acc += r[i][k] * gs[i][jj] * r[jj][k];
            }
        }
        out.scale[k] = acc * 2.0 * scale[k];
    }
    // dL/dR = 2 gs R D (gs symmetric)
    let d = [scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]];
    let mut gr = [[0.0; 3]; 3];
    for i in 0..3 {
        for c in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += gs[i][k] * r[k][c];
            }
            gr[i][c] = 2.0 * acc * d[c];
        }
    }
    // dR/dq contractions
    let (qw, qx, qy, qz) = (quat[0], quat[1], quat[2], quat[3]);
    let dr_dw = [
        [0.0, -2.0 * qz, 2.0 * qy],
        [2.0 * qz, 0.0, -2.0 * qx],
        [-2.0 * qy, 2.0 * qx, 0.0],
    ];
    let dr_dx = [
        [0.0, 2.0 * qy, 2.0 * qz],
        [2.0 * qy, -4.0 * qx, -2.0 * qw],
        [2.0 * qz, 2.0 * qw, -4.0 * qx],
    ];
    let dr_dy = [
        [-4.0 * qy, 2.0 * qx, 2.0 * qw],
        [2.0 * qx, 0.0, 2.0 * qz],
        [-2.0 * qw, 2.0 * qz, -4.0 * qy],
    ];
    let dr_dz = [
        [-4.0 * qz, -2.0 * qw, 2.0 * qx],
        [2.0 * qw, -4.0 * qz, 2.0 * qy],
        [2.0 * qx, 2.0 * qy, 0.0],
    ];
    for (qi, dr) in [dr_dw, dr_dx, dr_dy, dr_dz].iter().enumerate() {
        let mut acc = 0.0;
        for i in 0..3 {
            for c in 0..3 {
                acc += gr[i][c] * dr[i][c];
            }
        }
        out.quat[qi] = acc;
    }

    // gradient on t_cam: from p2d, from J's dependence, and from direct z
    let z2 = z * z;
    let z3 = z2 * z;
    let mut gt = [0.0; 3];
    gt[0] += sg.p2d[0] * cam.fx / z;
    gt[1] += sg.p2d[1] * cam.fy / z;
    gt[2] += sg.p2d[0] * (-cam.fx * x / z2) + sg.p2d[1] * (-cam.fy * y / z2);
    gt[0] += gj[0][2] * (-cam.fx / z2);
    gt[1] += gj[1][2] * (-cam.fy / z2);
    gt[2] += gj[0][0] * (-cam.fx / z2)
        + gj[1][1] * (-cam.fy / z2)
        + gj[0][2] * (2.0 * cam.fx * x / z3)
        + gj[1][2] * (2.0 * cam.fy * y / z3);
    gt[2] += sg.z;

    // t_cam = W μ + t
    for dim in 0..3 {
        let mut acc = 0.0;
        for k in 0..3 {
            acc += w[k][dim] * gt[k];
        }
        out.mu[dim] = acc;
    }
    out
}
