//! Shared random-scene generator for rasterizer tests. Scenes hold
//! *activated* parameters (positive scales, unit quaternions, opacity and
//! color already in (0,1)).

use ghead_core::field::CameraPose;
use ghead_raster::SplatInputs;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Scene {
    pub mu: Vec<f64>,
    pub scale: Vec<f64>,
    pub quat: Vec<f64>,
    pub opacity: Vec<f64>,
    pub color: Vec<f64>,
}

impl Scene {
    pub fn inputs(&self) -> SplatInputs<'_> {
        SplatInputs {
            mu: &self.mu,
            scale: &self.scale,
            quat: &self.quat,
            opacity: &self.opacity,
            color: &self.color,
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Scene {
        let pick = |src: &[f64], k: usize| -> Vec<f64> {
            perm.iter()
                .flat_map(|&i| src[i * k..(i + 1) * k].to_vec())
                .collect()
        };
        Scene {
            mu: pick(&self.mu, 3),
            scale: pick(&self.scale, 3),
            quat: pick(&self.quat, 4),
            opacity: pick(&self.opacity, 1),
            color: pick(&self.color, 3),
        }
    }
}

pub fn random_scene(n: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene {
        mu: Vec::new(),
        scale: Vec::new(),
        quat: Vec::new(),
        opacity: Vec::new(),
        color: Vec::new(),
    };
    for _ in 0..n {
        scene.mu.push(rng.gen_range(-0.3..0.3));
        scene.mu.push(rng.gen_range(-0.3..0.3));
        scene.mu.push(rng.gen_range(1.5..3.0));
        for _ in 0..3 {
            scene.scale.push(rng.gen_range(0.02..0.12));
        }
        let mut q = [0.0f64; 4];
        let mut norm = 0.0;
        for v in q.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
            norm += *v * *v;
        }
        let norm = norm.sqrt().max(1e-6);
        for v in q {
            scene.quat.push(v / norm);
        }
        scene.opacity.push(rng.gen_range(0.1..0.9));
        for _ in 0..3 {
            scene.color.push(rng.gen_range(0.0..1.0));
        }
    }
    scene
}

/// Identity-pose camera at the origin looking down +z.
pub fn test_camera(width: usize, height: usize) -> CameraPose {
    CameraPose {
        r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        t: [0.0, 0.0, 0.0],
        fx: width as f64 * 1.5,
        fy: width as f64 * 1.5,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
    }
}
