//! Perceptual distance from a frozen random-feature extractor.
//!
//! Three seeded convolution layers, never trained; feature distances are
//! taken after layers 2 and 3. This stands in for a pretrained network so
//! the loss is self-contained.

use ghead_core::conv::conv2d;
use ghead_core::error::Result;
use ghead_core::tape::{Tape, Var};
use ghead_core::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CHANNELS: [usize; 4] = [3, 8, 16, 16];
const KERNEL: usize = 3;
const SLOPE: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct PerceptualProxy {
    pub seed: u64,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl PerceptualProxy {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..3 {
            let (ci, co) = (CHANNELS[l], CHANNELS[l + 1]);
            let fan_in = ci * KERNEL * KERNEL;
            let bound = (2.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..co * ci * KERNEL * KERNEL)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(Tensor::from_vec(&[co, ci, KERNEL, KERNEL], data));
            biases.push(Tensor::zeros(&[co]));
        }
        Self { seed, weights, biases }
    }

    /// Feature maps at the two tap points for a [3,H,W] image.
    fn features<'t>(&self, tape: &'t Tape, img: Var<'t>) -> Vec<Var<'t>> {
        let mut taps = Vec::new();
        let mut h = img;
        for l in 0..3 {
            let w = tape.constant(self.weights[l].clone());
            let b = tape.constant(self.biases[l].clone());
            h = conv2d(h, w, b, 2, 1);
            if l < 2 {
                h = h.leaky_relu(SLOPE);
            }
            if l >= 1 {
                taps.push(h);
            }
        }
        taps
    }

    /// Σ over tap points of mean |φ(a) − φ(b)|.
    pub fn loss<'t>(&self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        assert_eq!(a.shape(), b.shape(), "perceptual input shape mismatch");
        let tape = a.tape();
        let fa = self.features(tape, a);
        let fb = self.features(tape, b);
        let mut acc: Option<Var<'t>> = None;
        for (x, y) in fa.into_iter().zip(fb) {
            let term = x.sub(y).abs().mean();
            acc = Some(match acc {
                None => term,
                Some(prev) => prev.add(term),
            });
        }
        Ok(acc.unwrap())
    }
}
