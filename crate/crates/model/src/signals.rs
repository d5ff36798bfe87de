//! Control-signal pipeline: motion-map difference encoding, audio feature
//! compression, and temporal smoothing. Both branches end in a 32-d latent
//! per frame; region-aware enhancement happens field-side where the
//! attention parameters live.

use ghead_core::conv::{conv2d, global_avg_pool};
use ghead_core::error::{CoreError, Result};
use ghead_core::mlp::LEAKY_SLOPE;
use ghead_core::optim::{Binding, LrGroup, ParamStore};
use ghead_core::tape::{concat, Var};
use ghead_core::tensor::Tensor;
use rand::Rng;

pub const SIGNAL_DIM: usize = 32;
pub const AUDIO_ROWS: usize = 16;
pub const AUDIO_COLS: usize = 29;
pub const AUDIO_FLAT: usize = AUDIO_ROWS * AUDIO_COLS;
pub const MOTION_CHANNELS: usize = 3;
pub const MOTION_SIZE: usize = 32;

const DIFF_CHANNELS: [usize; 4] = [3, 8, 16, 32];

/// Elementwise difference I_i − I_cano between motion maps.
pub fn motion_difference(frame: &Tensor, canonical: &Tensor) -> Result<Tensor> {
    if frame.shape() != canonical.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", canonical.shape()),
            got: format!("{:?}", frame.shape()),
        });
    }
    Ok(Tensor::from_vec(
        frame.shape(),
        frame
            .data()
            .iter()
            .zip(canonical.data())
            .map(|(a, b)| a - b)
            .collect(),
    ))
}

/// Repetition padding index for a window position around `center`.
pub fn padded_index(center: isize, offset: isize, len: usize) -> usize {
    (center + offset).clamp(0, len as isize - 1) as usize
}

#[derive(Clone, Debug)]
pub struct SignalPipeline {
    pub j: usize,
    prefix: String,
}

impl SignalPipeline {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, j: usize, rng: &mut R) -> Self {
        // difference encoder convs: 3->8->16->32, 3x3, stride 2
        for l in 0..3 {
            let (ci, co) = (DIFF_CHANNELS[l], DIFF_CHANNELS[l + 1]);
            let fan_in = ci * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..co * ci * 9).map(|_| rng.gen_range(-bound..bound)).collect();
            store.register(
                &format!("{prefix}.diff.c{l}.w"),
                Tensor::from_vec(&[co, ci, 3, 3], w),
                LrGroup::Mlp,
            );
            store.register(
                &format!("{prefix}.diff.c{l}.b"),
                Tensor::zeros(&[co]),
                LrGroup::Mlp,
            );
        }
        let mut dense = |name: String, n_out: usize, n_in: usize, rng: &mut R| {
            let bound = (6.0 / n_in as f64).sqrt();
            let w: Vec<f64> = (0..n_out * n_in).map(|_| rng.gen_range(-bound..bound)).collect();
            store.register(&format!("{name}.w"), Tensor::from_vec(&[n_out, n_in], w), LrGroup::Mlp);
            store.register(&format!("{name}.b"), Tensor::zeros(&[n_out]), LrGroup::Mlp);
        };
        dense(format!("{prefix}.diff.fc"), SIGNAL_DIM, DIFF_CHANNELS[3], rng);
        let window = 2 * j + 1;
        dense(format!("{prefix}.tcnm"), SIGNAL_DIM, window * SIGNAL_DIM, rng);
        dense(format!("{prefix}.audio"), SIGNAL_DIM, AUDIO_FLAT, rng);
        dense(format!("{prefix}.tcna"), SIGNAL_DIM, window * SIGNAL_DIM, rng);
        Self {
            j,
            prefix: prefix.to_string(),
        }
    }

    pub fn attach(prefix: &str, j: usize) -> Self {
        Self {
            j,
            prefix: prefix.to_string(),
        }
    }

    pub fn window(&self) -> usize {
        2 * self.j + 1
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..3 {
            names.push(format!("{}.diff.c{l}.w", self.prefix));
            names.push(format!("{}.diff.c{l}.b", self.prefix));
        }
        for part in ["diff.fc", "tcnm", "audio", "tcna"] {
            names.push(format!("{}.{part}.w", self.prefix));
            names.push(format!("{}.{part}.b", self.prefix));
        }
        names
    }

    fn dense<'t>(&self, binding: &Binding<'t>, part: &str, x: Var<'t>) -> Var<'t> {
        let w = binding.var(&format!("{}.{part}.w", self.prefix));
        let b = binding.var(&format!("{}.{part}.b", self.prefix));
        let n = x.shape()[0];
        x.reshape(&[1, n])
            .linear(w, b)
            .reshape(&[SIGNAL_DIM])
    }

    /// Difference encoder: [3,32,32] map difference -> 32-d motion latent.
    pub fn diff_encode<'t>(&self, binding: &Binding<'t>, delta: Var<'t>) -> Result<Var<'t>> {
        let shape = delta.shape();
        if shape != [MOTION_CHANNELS, MOTION_SIZE, MOTION_SIZE] {
            return Err(CoreError::ShapeMismatch {
                expected: format!("[{MOTION_CHANNELS}, {MOTION_SIZE}, {MOTION_SIZE}]"),
                got: format!("{shape:?}"),
            });
        }
        let mut h = delta;
        for l in 0..3 {
            let w = binding.var(&format!("{}.diff.c{l}.w", self.prefix));
            let b = binding.var(&format!("{}.diff.c{l}.b", self.prefix));
            h = conv2d(h, w, b, 2, 1).leaky_relu(LEAKY_SLOPE);
        }
        let pooled = global_avg_pool(h);
        Ok(self.dense(binding, "diff.fc", pooled))
    }

    /// Single-layer temporal convolution over a (2j+1)-frame latent window.
    pub fn tcn_smooth<'t>(
        &self,
        binding: &Binding<'t>,
        window: &[Var<'t>],
        audio_branch: bool,
    ) -> Result<Var<'t>> {
        if window.len() != self.window() {
            return Err(CoreError::ShapeMismatch {
                expected: format!("window of {}", self.window()),
                got: format!("{}", window.len()),
            });
        }
        let stacked = concat(window);
        let part = if audio_branch { "tcna" } else { "tcnm" };
        Ok(self.dense(binding, part, stacked))
    }

    /// Per-frame audio compression: [16,29] window -> 32-d latent.
    pub fn compress_audio<'t>(&self, binding: &Binding<'t>, frame: Var<'t>) -> Result<Var<'t>> {
        let shape = frame.shape();
        if shape != [AUDIO_ROWS, AUDIO_COLS] {
            return Err(CoreError::ShapeMismatch {
                expected: format!("[{AUDIO_ROWS}, {AUDIO_COLS}]"),
                got: format!("{shape:?}"),
            });
        }
        Ok(self.dense(binding, "audio", frame.reshape(&[AUDIO_FLAT])))
    }

    /// Full motion branch over a sequence of map differences: one smoothed
    /// 32-d feature per frame, with repetition padding at the edges.
    pub fn motion_features<'t>(
        &self,
        binding: &Binding<'t>,
        diffs: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>> {
        let per_frame: Vec<Var<'t>> = diffs
            .iter()
            .map(|&d| self.diff_encode(binding, d))
            .collect::<Result<_>>()?;
        self.smooth_sequence(binding, &per_frame, false)
    }

    /// Full audio branch over a T x 16 x 29 sequence.
    pub fn audio_features<'t>(
        &self,
        binding: &Binding<'t>,
        frames: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>> {
        let per_frame: Vec<Var<'t>> = frames
            .iter()
            .map(|&f| self.compress_audio(binding, f))
            .collect::<Result<_>>()?;
        self.smooth_sequence(binding, &per_frame, true)
    }

    /// Smooth a whole latent sequence; output length equals input length.
    pub fn smooth_sequence<'t>(
        &self,
        binding: &Binding<'t>,
        latents: &[Var<'t>],
        audio_branch: bool,
    ) -> Result<Vec<Var<'t>>> {
        assert!(!latents.is_empty(), "empty latent sequence");
        let j = self.j as isize;
        let mut out = Vec::with_capacity(latents.len());
        for center in 0..latents.len() {
            let window: Vec<Var<'t>> = (-j..=j)
                .map(|o| latents[padded_index(center as isize, o, latents.len())])
                .collect();
            out.push(self.tcn_smooth(binding, &window, audio_branch)?);
        }
        Ok(out)
    }
}

/// Hadamard gating of a per-frame feature by a per-primitive attention map:
/// out[b, i] = attention[b, i] * feature[i].
pub fn region_enhance<'t>(attention: Var<'t>, feature: Var<'t>) -> Var<'t> {
    attention.mul_row_broadcast(feature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ghead_core::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pipeline() -> (ParamStore, SignalPipeline) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = SignalPipeline::register(&mut store, "sig", 2, &mut rng);
        (store, p)
    }

    #[test]
    fn motion_difference_cases() {
        let a = Tensor::full(&[3, 4, 4], 0.7);
        let b = Tensor::full(&[3, 4, 4], 0.2);
        let d = motion_difference(&a, &b).unwrap();
        assert!(d.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let z = motion_difference(&a, &a).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        // cano = 0 -> difference is the map itself
        let zero = Tensor::zeros(&[3, 4, 4]);
        let d = motion_difference(&a, &zero).unwrap();
        assert_eq!(d.data(), a.data());
        // linearity at zero canonical
        let a2 = Tensor::from_vec(&[3, 4, 4], a.data().iter().map(|v| 2.0 * v).collect());
        let d2 = motion_difference(&a2, &zero).unwrap();
        for (x, y) in d2.data().iter().zip(d.data()) {
            assert!((x - 2.0 * y).abs() < 1e-15);
        }
        let bad = Tensor::zeros(&[3, 4, 5]);
        assert!(motion_difference(&a, &bad).is_err());
    }

    #[test]
    fn zero_difference_with_zero_bias_gives_zero_feature() {
        let (store, p) = pipeline();
        let tape = Tape::new();
        let binding = store.bind(&tape, &[]);
        let delta = tape.constant(Tensor::zeros(&[3, 32, 32]));
        let f = p.diff_encode(&binding, delta).unwrap();
        assert_eq!(f.shape(), vec![SIGNAL_DIM]);
        assert!(f.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diff_encode_is_deterministic() {
        let (store, p) = pipeline();
        let run = || {
            let tape = Tape::new();
            let binding = store.bind(&tape, &[]);
            let mut d = Tensor::zeros(&[3, 32, 32]);
            for (i, v) in d.data_mut().iter_mut().enumerate() {
                *v = ((i % 11) as f64 - 5.0) / 10.0;
            }
            let delta = tape.constant(d);
            p.diff_encode(&binding, delta).unwrap().value().data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn tcn_zero_window_and_dimension() {
        for j in [1usize, 2, 3] {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let p = SignalPipeline::register(&mut store, "sig", j, &mut rng);
            let tape = Tape::new();
            let binding = store.bind(&tape, &[]);
            let zeros: Vec<_> = (0..2 * j + 1)
                .map(|_| tape.constant(Tensor::zeros(&[SIGNAL_DIM])))
                .collect();
            let out = p.tcn_smooth(&binding, &zeros, false).unwrap();
            assert_eq!(out.shape(), vec![SIGNAL_DIM]);
            assert!(out.value().data().iter().all(|&v| v == 0.0));
            // wrong window length errors
            assert!(p.tcn_smooth(&binding, &zeros[..2 * j], false).is_err());
        }
    }

    #[test]
    fn audio_sequence_shapes_and_padding() {
        let (store, p) = pipeline();
        let tape = Tape::new();
        let binding = store.bind(&tape, &[]);
        // zero input, zero bias -> zero sequence
        let frames: Vec<_> = (0..4)
            .map(|_| tape.constant(Tensor::zeros(&[AUDIO_ROWS, AUDIO_COLS])))
            .collect();
        let out = p.audio_features(&binding, &frames).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|f| f.value().data().iter().all(|&v| v == 0.0)));

        // T = 1: repetition padding makes the window 2j+1 copies of frame 0,
        // which must equal smoothing an explicit 5-copy window
        let mut a = Tensor::zeros(&[AUDIO_ROWS, AUDIO_COLS]);
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            *v = ((i % 7) as f64 - 3.0) / 7.0;
        }
        let single = tape.constant(a);
        let seq = p.audio_features(&binding, &[single]).unwrap();
        assert_eq!(seq.len(), 1);
        let latent = p.compress_audio(&binding, single).unwrap();
        let window: Vec<_> = (0..5).map(|_| latent).collect();
        let manual = p.tcn_smooth(&binding, &window, true).unwrap();
        assert_eq!(seq[0].value().data(), manual.value().data());
    }

    #[test]
    fn region_enhance_contracts_and_decomposes() {
        let tape = Tape::new();
        let att_data: Vec<f64> = (0..2 * SIGNAL_DIM).map(|i| 1.0 / (1.0 + (i as f64 * 0.1).exp())).collect();
        let att = tape.constant(Tensor::from_vec(&[2, SIGNAL_DIM], att_data.clone()));
        let f_data: Vec<f64> = (0..SIGNAL_DIM).map(|i| (i as f64 - 16.0) / 8.0).collect();
        let f = tape.constant(Tensor::from_vec(&[SIGNAL_DIM], f_data.clone()));
        let out = region_enhance(att, f);
        // zero feature -> zero output
        let zf = tape.constant(Tensor::zeros(&[SIGNAL_DIM]));
        let zo = region_enhance(att, zf);
        assert!(zo.value().data().iter().all(|&v| v == 0.0));
        // |out| < |f| coordinatewise for nonzero f (attention in (0,1))
        for b in 0..2 {
            for i in 0..SIGNAL_DIM {
                let o = out.value().data()[b * SIGNAL_DIM + i];
                if f_data[i] != 0.0 {
                    assert!(o.abs() < f_data[i].abs());
                }
                // definitional: equals elementwise product
                assert!((o - att_data[b * SIGNAL_DIM + i] * f_data[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradients_pass_finite_differences() {
        use ghead_core::gradcheck::grad_check_subset;
        let (store, p) = pipeline();
        // check the motion tcn weight and the audio compressor weight
        for part in ["tcnm", "audio"] {
            let name = format!("sig.{part}.w");
            let point = store.get(&name).data().to_vec();
            let eval = |w: &[f64]| -> (f64, Vec<f64>) {
                let mut s2 = ParamStore::new();
                for n in store.names() {
                    s2.register(n, store.get(n).clone(), LrGroup::Mlp);
                }
                s2.set(&name, Tensor::from_vec(store.get(&name).shape(), w.to_vec()));
                let tape = Tape::new();
                let binding = s2.bind(&tape, &[]);
                let mut a = Tensor::zeros(&[AUDIO_ROWS, AUDIO_COLS]);
                for (i, v) in a.data_mut().iter_mut().enumerate() {
                    *v = ((i % 13) as f64 - 6.0) / 13.0;
                }
                let frames = vec![tape.constant(a.clone()), tape.constant(a)];
                let mut d = Tensor::zeros(&[3, 32, 32]);
                for (i, v) in d.data_mut().iter_mut().enumerate() {
                    *v = ((i % 5) as f64 - 2.0) / 5.0;
                }
                let diffs = vec![tape.constant(d.clone()), tape.constant(d)];
                let fa = p.audio_features(&binding, &frames).unwrap();
                let fm = p.motion_features(&binding, &diffs).unwrap();
                let loss = fa[0].square().sum().add(fm[1].square().sum());
                let l = loss.value().item();
                let g = tape.backward(loss);
                (l, g.get(binding.var(&name)).unwrap().data().to_vec())
            };
            let (_, analytic) = eval(&point);
            // large weight blocks: strided deterministic subset
            let coords: Vec<usize> = (0..point.len()).step_by(37).collect();
            let err =
                grad_check_subset(|w| eval(w).0, &point, &analytic, &coords, 1e-4).unwrap();
            assert!(err <= 1e-4, "{part} grad err {err}");
        }
    }
}
