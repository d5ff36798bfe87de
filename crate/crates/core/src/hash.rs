//! Tri-plane multi-resolution hash encoding.
//!
//! Each of the three coordinate planes (XY, YZ, XZ) carries L levels of
//! hashed feature tables at geometrically growing resolutions. A query point
//! is normalized into [0,1]³ by the field bounds, projected onto each plane,
//! and bilinearly interpolated per level. Hash collisions are accepted
//! silently. Queries outside the bounds are clamped and counted.

use crate::field::Aabb;
use crate::optim::{Binding, LrGroup, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;
use rand::Rng;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub const HASH_PRIME: u64 = 2654435761;

/// Spatial hash of integer grid coordinates into a table of `table_size`
/// entries: ((ix * 1) XOR (iy * 2654435761)) mod table_size.
pub fn hash_index(ix: u64, iy: u64, table_size: usize) -> usize {
    ((ix ^ (iy.wrapping_mul(HASH_PRIME))) % table_size as u64) as usize
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriPlaneSpec {
    pub levels: usize,
    pub features: usize,
    pub table_size: usize,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for TriPlaneSpec {
    fn default() -> Self {
        Self {
            levels: 8,
            features: 2,
            table_size: 1 << 12,
            n_min: 8,
            n_max: 128,
        }
    }
}

impl TriPlaneSpec {
    pub fn output_dim(&self) -> usize {
        3 * self.levels * self.features
    }

    /// Geometric level resolutions from n_min to n_max.
    pub fn resolutions(&self) -> Vec<usize> {
        if self.levels == 1 {
            return vec![self.n_min];
        }
        let growth = (self.n_max as f64 / self.n_min as f64)
            .powf(1.0 / (self.levels as f64 - 1.0));
        (0..self.levels)
            .map(|l| (self.n_min as f64 * growth.powi(l as i32)).round() as usize)
            .collect()
    }
}

const PLANE_NAMES: [&str; 3] = ["xy", "yz", "xz"];
const PLANE_AXES: [[usize; 2]; 3] = [[0, 1], [1, 2], [0, 2]];

/// Bilinear interpolation of hashed grid features over all levels of one
/// plane. `points01` is [B,2] in [0,1]² (clamped here if outside, counted in
/// `clamp_warnings`); `tables[l]` is the level-l [table_size, F] parameter.
/// Output is [B, L*F], differentiable w.r.t. the tables and the points.
pub fn encode_plane<'t>(
    points01: Var<'t>,
    tables: &[Var<'t>],
    resolutions: &[usize],
    features: usize,
    clamp_warnings: Arc<AtomicU64>,
) -> Var<'t> {
    let p = points01.value();
    assert_eq!(p.shape().len(), 2);
    assert_eq!(p.shape()[1], 2);
    let rows = p.shape()[0];
    let levels = tables.len();
    assert_eq!(resolutions.len(), levels);
    let table_values: Vec<_> = tables.iter().map(|t| t.value()).collect();
    let table_size = table_values[0].shape()[0];

    // clamp into [0,1], counting out-of-range queries
    let mut clamped = vec![0.0; rows * 2];
    let mut n_clamped = 0u64;
    for (i, &v) in p.data().iter().enumerate() {
        let c = v.clamp(0.0, 1.0);
        if c != v {
            n_clamped += 1;
        }
        clamped[i] = c;
    }
    if n_clamped > 0 {
        clamp_warnings.fetch_add(n_clamped, Ordering::Relaxed);
    }

    let corner = |ix: usize, iy: usize, f: usize, tv: &Tensor| -> f64 {
        tv.data()[hash_index(ix as u64, iy as u64, table_size) * features + f]
    };

    let mut out = Tensor::zeros(&[rows, levels * features]);
    let mut cells: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(rows * levels);
    for b in 0..rows {
        let (px, py) = (clamped[b * 2], clamped[b * 2 + 1]);
        for (l, &n) in resolutions.iter().enumerate() {
            let x = px * n as f64;
            let y = py * n as f64;
            let ix = (x.floor() as usize).min(n - 1);
            let iy = (y.floor() as usize).min(n - 1);
            let fx = x - ix as f64;
            let fy = y - iy as f64;
            cells.push((ix, iy, fx, fy));
            let tv = &table_values[l];
            for f in 0..features {
                let v00 = corner(ix, iy, f, tv);
                let v10 = corner(ix + 1, iy, f, tv);
                let v01 = corner(ix, iy + 1, f, tv);
                let v11 = corner(ix + 1, iy + 1, f, tv);
                out.data_mut()[b * levels * features + l * features + f] = v00
                    * (1.0 - fx)
                    * (1.0 - fy)
                    + v10 * fx * (1.0 - fy)
                    + v01 * (1.0 - fx) * fy
                    + v11 * fx * fy;
            }
        }
    }

    let mut parents = vec![points01];
    parents.extend_from_slice(tables);
    let needs_points = points01.requires_grad();
    let needs_table: Vec<bool> = tables.iter().map(|t| t.requires_grad()).collect();
    let resolutions = resolutions.to_vec();
    let raw_points = p.clone();
    points01.tape().custom_op(
        &parents,
        out,
        Box::new(move |g| {
            let mut gp = needs_points.then(|| Tensor::zeros(&[rows, 2]));
            let mut gt: Vec<Option<Tensor>> = needs_table
                .iter()
                .map(|&n| n.then(|| Tensor::zeros(&[table_size, features])))
                .collect();
            for b in 0..rows {
                for (l, &n) in resolutions.iter().enumerate() {
                    let (ix, iy, fx, fy) = cells[b * resolutions.len() + l];
                    let idx = [
                        hash_index(ix as u64, iy as u64, table_size),
                        hash_index(ix as u64 + 1, iy as u64, table_size),
                        hash_index(ix as u64, iy as u64 + 1, table_size),
                        hash_index(ix as u64 + 1, iy as u64 + 1, table_size),
                    ];
                    let w = [
                        (1.0 - fx) * (1.0 - fy),
                        fx * (1.0 - fy),
                        (1.0 - fx) * fy,
                        fx * fy,
                    ];
                    // dw/dfx, dw/dfy per corner
                    let dwx = [-(1.0 - fy), 1.0 - fy, -fy, fy];
                    let dwy = [-(1.0 - fx), -fx, 1.0 - fx, fx];
                    for f in 0..features {
                        let gv = g.data()[b * resolutions.len() * features + l * features + f];
                        if gv == 0.0 {
                            continue;
                        }
                        if let Some(t) = gt[l].as_mut() {
                            for c in 0..4 {
                                t.data_mut()[idx[c] * features + f] += gv * w[c];
                            }
                        }
                        if let Some(gp) = gp.as_mut() {
                            let tv = &table_values[l];
                            let mut dfx = 0.0;
                            let mut dfy = 0.0;
                            for c in 0..4 {
                                let e = tv.data()[idx[c] * features + f];
                                dfx += dwx[c] * e;
                                dfy += dwy[c] * e;
                            }
                            // chain through x = clamp(px) * n; zero outside [0,1]
                            let px = raw_points.data()[b * 2];
                            let py = raw_points.data()[b * 2 + 1];
                            if (0.0..=1.0).contains(&px) {
                                gp.data_mut()[b * 2] += gv * dfx * n as f64;
                            }
                            if (0.0..=1.0).contains(&py) {
                                gp.data_mut()[b * 2 + 1] += gv * dfy * n as f64;
                            }
                        }
                    }
                }
            }
            let mut grads: Vec<Option<Tensor>> = vec![gp];
            grads.append(&mut gt);
            grads
        }),
    )
}

/// Parameter-registered tri-plane encoder bound to a field's AABB.
#[derive(Clone, Debug)]
pub struct TriPlaneEncoder {
    pub spec: TriPlaneSpec,
    pub bounds: Aabb,
    prefix: String,
    clamp_warnings: Arc<AtomicU64>,
}

impl TriPlaneEncoder {
    /// Register hash tables under `prefix`, initialized uniform in ±1e-4.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        spec: TriPlaneSpec,
        bounds: Aabb,
        rng: &mut R,
    ) -> Self {
        for plane in PLANE_NAMES {
            for l in 0..spec.levels {
                let data: Vec<f64> = (0..spec.table_size * spec.features)
                    .map(|_| rng.gen_range(-1e-4..1e-4))
                    .collect();
                store.register(
                    &format!("{prefix}.{plane}.l{l}"),
                    Tensor::from_vec(&[spec.table_size, spec.features], data),
                    LrGroup::HashTable,
                );
            }
        }
        Self {
            spec,
            bounds,
            prefix: prefix.to_string(),
            clamp_warnings: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Recreate the handle for an already-registered encoder (checkpoint load).
    pub fn attach(prefix: &str, spec: TriPlaneSpec, bounds: Aabb) -> Self {
        Self {
            spec,
            bounds,
            prefix: prefix.to_string(),
            clamp_warnings: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn clamp_warnings(&self) -> u64 {
        self.clamp_warnings.load(Ordering::Relaxed)
    }

    pub fn table_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for plane in PLANE_NAMES {
            for l in 0..self.spec.levels {
                names.push(format!("{}.{plane}.l{l}", self.prefix));
            }
        }
        names
    }

    /// Encode world-space positions [B,3] into [B, 3*L*F] features.
    pub fn encode<'t>(&self, binding: &Binding<'t>, mu_world: Var<'t>) -> Var<'t> {
        let ext = self.bounds.extent();
        let scale: Vec<f64> = ext.iter().map(|e| 1.0 / e).collect();
        let offset: Vec<f64> = (0..3).map(|d| -self.bounds.min[d] / ext[d]).collect();
        let normalized = mu_world.affine_cols(&scale, &offset);
        let resolutions = self.spec.resolutions();
        let mut parts = Vec::with_capacity(3);
        for (plane, axes) in PLANE_NAMES.iter().zip(PLANE_AXES) {
            let pts = normalized.select_cols(&axes);
            let tables: Vec<Var<'t>> = (0..self.spec.levels)
                .map(|l| binding.var(&format!("{}.{plane}.l{l}", self.prefix)))
                .collect();
            parts.push(encode_plane(
                pts,
                &tables,
                &resolutions,
                self.spec.features,
                self.clamp_warnings.clone(),
            ));
        }
        crate::tape::concat_cols(&parts)
    }
}
