//! Gaussian head field: primitives, activations, covariance, initialization.
//!
//! Raw parameters are stored unconstrained (log scale, logit opacity/color,
//! unnormalized quaternion) so the optimizer never has to project; the
//! activation map restores the constrained quantities.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Face,
    Mouth,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn unit() -> Self {
        Self {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Clone, Debug)]
pub struct GaussianPrimitive {
    pub mu: [f64; 3],
    pub scale_raw: [f64; 3],
    pub quat_raw: [f64; 4],
    pub opacity_raw: f64,
    pub color_raw: [f64; 3],
    pub region: Region,
}

/// Activated (constrained) parameters of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivatedPrimitive {
    pub mu: [f64; 3],
    pub scale: [f64; 3],
    pub quat: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// exp on scale, sigmoid on opacity and color, L2-normalized quaternion.
pub fn activate(p: &GaussianPrimitive) -> Result<ActivatedPrimitive> {
    let qn = p.quat_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if qn < 1e-12 {
        return Err(CoreError::DegenerateQuaternion { norm: qn });
    }
    Ok(ActivatedPrimitive {
        mu: p.mu,
        scale: [
            p.scale_raw[0].exp(),
            p.scale_raw[1].exp(),
            p.scale_raw[2].exp(),
        ],
        quat: [
            p.quat_raw[0] / qn,
            p.quat_raw[1] / qn,
            p.quat_raw[2] / qn,
            p.quat_raw[3] / qn,
        ],
        opacity: sigmoid(p.opacity_raw),
        color: [
            sigmoid(p.color_raw[0]),
            sigmoid(p.color_raw[1]),
            sigmoid(p.color_raw[2]),
        ],
    })
}

/// Rotation matrix (row-major) of a unit quaternion (w, x, y, z).
pub fn quat_to_rotation(q: &[f64; 4]) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Σ = R(q) diag(s²) R(q)ᵀ for activated scale s > 0 and unit quaternion q.
pub fn covariance3d(scale: &[f64; 3], quat: &[f64; 4]) -> [[f64; 3]; 3] {
    let r = quat_to_rotation(quat);
    let d = [
        scale[0] * scale[0],
        scale[1] * scale[1],
        scale[2] * scale[2],
    ];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += r[i][k] * d[k] * r[j][k];
            }
            out[i][j] = acc;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct GaussianField {
    pub primitives: Vec<GaussianPrimitive>,
    pub bounds: Aabb,
}

impl GaussianField {
    pub fn count(&self) -> usize {
        self.primitives.len()
    }

    pub fn count_region(&self, region: Region) -> usize {
        self.primitives.iter().filter(|p| p.region == region).count()
    }

    /// Row index range of each region; primitives are stored face block
    /// first, then mouth block.
    pub fn region_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let nf = self.count_region(Region::Face);
        (0..nf, nf..self.count())
    }

    pub fn mu_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[self.count(), 3],
            self.primitives.iter().flat_map(|p| p.mu).collect(),
        )
    }

    pub fn scale_raw_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[self.count(), 3],
            self.primitives.iter().flat_map(|p| p.scale_raw).collect(),
        )
    }

    pub fn quat_raw_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[self.count(), 4],
            self.primitives.iter().flat_map(|p| p.quat_raw).collect(),
        )
    }

    pub fn opacity_raw_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[self.count()],
            self.primitives.iter().map(|p| p.opacity_raw).collect(),
        )
    }

    pub fn color_raw_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[self.count(), 3],
            self.primitives.iter().flat_map(|p| p.color_raw).collect(),
        )
    }

    /// Rebuild primitive storage from flat tensors (checkpoint load path).
    pub fn from_tensors(
        mu: &Tensor,
        scale_raw: &Tensor,
        quat_raw: &Tensor,
        opacity_raw: &Tensor,
        color_raw: &Tensor,
        n_face: usize,
        n_mouth: usize,
        bounds: Aabb,
    ) -> Result<Self> {
        let n = n_face + n_mouth;
        if mu.shape() != [n, 3] {
            return Err(CoreError::ArrayShapeMismatch {
                name: "mu".into(),
                stored: mu.shape().to_vec(),
                expected: vec![n, 3],
            });
        }
        let mut primitives = Vec::with_capacity(n);
        for i in 0..n {
            primitives.push(GaussianPrimitive {
                mu: [mu.data()[i * 3], mu.data()[i * 3 + 1], mu.data()[i * 3 + 2]],
                scale_raw: [
                    scale_raw.data()[i * 3],
                    scale_raw.data()[i * 3 + 1],
                    scale_raw.data()[i * 3 + 2],
                ],
                quat_raw: [
                    quat_raw.data()[i * 4],
                    quat_raw.data()[i * 4 + 1],
                    quat_raw.data()[i * 4 + 2],
                    quat_raw.data()[i * 4 + 3],
                ],
                opacity_raw: opacity_raw.data()[i],
                color_raw: [
                    color_raw.data()[i * 3],
                    color_raw.data()[i * 3 + 1],
                    color_raw.data()[i * 3 + 2],
                ],
                region: if i < n_face { Region::Face } else { Region::Mouth },
            });
        }
        Ok(Self { primitives, bounds })
    }
}

/// Deterministic field initialization: positions uniform in `bounds`, scale
/// chosen so the initial 3σ footprint roughly matches the mean
/// nearest-neighbor spacing, opacity at logit(0.1).
pub fn init_field(n_face: usize, n_mouth: usize, bounds: Aabb, seed: u64) -> Result<GaussianField> {
    assert!(n_face >= 1 && n_mouth >= 1, "need at least one primitive per region");
    if bounds.volume() <= 0.0 {
        return Err(CoreError::ZeroVolumeBounds(format!("{bounds:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_face + n_mouth;
    let mut mus: Vec<[f64; 3]> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut mu = [0.0; 3];
        for (d, m) in mu.iter_mut().enumerate() {
            *m = bounds.min[d] + rng.gen::<f64>() * (bounds.max[d] - bounds.min[d]);
        }
        mus.push(mu);
    }
    // mean nearest-neighbor distance; O(n^2) is fine at this scale
    let mut mean_nn = 0.0;
    for (i, a) in mus.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in mus.iter().enumerate() {
            if i == j {
                continue;
            }
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            best = best.min(d2);
        }
        mean_nn += best.sqrt();
    }
    mean_nn /= n as f64;
    if !mean_nn.is_finite() || mean_nn == 0.0 {
        // single primitive or coincident points: fall back to a bounds fraction
        mean_nn = bounds.extent()[0].max(1e-3) * 0.1;
    }
    let scale_raw = (mean_nn / 3.0).ln();
    let opacity_raw = logit(0.1);

    let primitives = mus
        .into_iter()
        .enumerate()
        .map(|(i, mu)| GaussianPrimitive {
            mu,
            scale_raw: [scale_raw; 3],
            quat_raw: [1.0, 0.0, 0.0, 0.0],
            opacity_raw,
            color_raw: [0.0, 0.0, 0.0],
            region: if i < n_face { Region::Face } else { Region::Mouth },
        })
        .collect();
    Ok(GaussianField {
        primitives,
        bounds,
    })
}

/// Pinhole camera with world-to-camera rotation R and translation t.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    /// Checks R orthonormality (‖RᵀR − I‖∞ ≤ 1e-9) and minimum image size.
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(CoreError::InvalidCamera(format!(
                "image {}x{} below minimum 8x8",
                self.width, self.height
            )));
        }
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += self.r[k][i] * self.r[k][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        if worst > 1e-9 {
            return Err(CoreError::InvalidCamera(format!(
                "rotation not orthonormal, deviation {worst:.3e}"
            )));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[i][0] * p[0] + self.r[i][1] * p[1] + self.r[i][2] * p[2] + self.t[i];
        }
        out
    }
}
