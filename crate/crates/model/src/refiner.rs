//! Same-resolution coarse-to-fine image refiner: a small U-Net with additive
//! skips and a residual connection to the input. The final layer is
//! zero-initialized, so an untrained refiner is exactly the identity on
//! in-range images.

use ghead_core::conv::{conv2d, conv_transpose2d};
use ghead_core::error::{CoreError, Result};
use ghead_core::mlp::LEAKY_SLOPE;
use ghead_core::optim::{AdamConfig, Binding, LrGroup, LrSchedule, ParamStore};
use ghead_core::tape::{Tape, Var};
use ghead_core::tensor::Tensor;
use ghead_losses::{c2f_loss, PerceptualProxy};
use rand::Rng;

const ENC_CHANNELS: [usize; 4] = [3, 16, 32, 64];
const DEC_CHANNELS: [usize; 4] = [64, 32, 16, 3];

#[derive(Clone, Debug)]
pub struct Refiner {
    prefix: String,
}

impl Refiner {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, rng: &mut R) -> Self {
        for l in 0..3 {
            let (ci, co) = (ENC_CHANNELS[l], ENC_CHANNELS[l + 1]);
            let bound = (6.0 / (ci * 9) as f64).sqrt();
            let w: Vec<f64> = (0..co * ci * 9).map(|_| rng.gen_range(-bound..bound)).collect();
            store.register(
                &format!("{prefix}.e{l}.w"),
                Tensor::from_vec(&[co, ci, 3, 3], w),
                LrGroup::Refiner,
            );
            store.register(&format!("{prefix}.e{l}.b"), Tensor::zeros(&[co]), LrGroup::Refiner);
        }
        for l in 0..3 {
            let (ci, co) = (DEC_CHANNELS[l], DEC_CHANNELS[l + 1]);
            let zero = l == 2;
            let bound = (6.0 / (ci * 4) as f64).sqrt();
            let w: Vec<f64> = (0..ci * co * 4)
                .map(|_| if zero { 0.0 } else { rng.gen_range(-bound..bound) })
                .collect();
            store.register(
                &format!("{prefix}.d{l}.w"),
                Tensor::from_vec(&[ci, co, 2, 2], w),
                LrGroup::Refiner,
            );
            store.register(&format!("{prefix}.d{l}.b"), Tensor::zeros(&[co]), LrGroup::Refiner);
        }
        Self {
            prefix: prefix.to_string(),
        }
    }

    pub fn attach(prefix: &str) -> Self {
        Self {
            prefix: prefix.to_string(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..3 {
            names.push(format!("{}.e{l}.w", self.prefix));
            names.push(format!("{}.e{l}.b", self.prefix));
        }
        for l in 0..3 {
            names.push(format!("{}.d{l}.w", self.prefix));
            names.push(format!("{}.d{l}.b", self.prefix));
        }
        names
    }

    pub fn param_count(&self, store: &ParamStore) -> usize {
        self.param_names()
            .iter()
            .map(|n| store.get(n).numel())
            .sum()
    }

    /// I_fine = clamp(I_coarse + net(I_coarse), 0, 1). Spatial dimensions
    /// must be divisible by 8.
    pub fn refine<'t>(&self, binding: &Binding<'t>, coarse: Var<'t>) -> Result<Var<'t>> {
        let shape = coarse.shape();
        if shape.len() != 3 || shape[0] != 3 || shape[1] % 8 != 0 || shape[2] % 8 != 0 {
            return Err(CoreError::ShapeMismatch {
                expected: "[3, 8k, 8m]".into(),
                got: format!("{shape:?}"),
            });
        }
        let layer = |name: String| -> (Var<'t>, Var<'t>) {
            (
                binding.var(&format!("{name}.w")),
                binding.var(&format!("{name}.b")),
            )
        };
        let (w, b) = layer(format!("{}.e0", self.prefix));
        let e1 = conv2d(coarse, w, b, 2, 1).leaky_relu(LEAKY_SLOPE);
        let (w, b) = layer(format!("{}.e1", self.prefix));
        let e2 = conv2d(e1, w, b, 2, 1).leaky_relu(LEAKY_SLOPE);
        let (w, b) = layer(format!("{}.e2", self.prefix));
        let e3 = conv2d(e2, w, b, 2, 1).leaky_relu(LEAKY_SLOPE);

        let (w, b) = layer(format!("{}.d0", self.prefix));
        let d1 = conv_transpose2d(e3, w, b, 2).leaky_relu(LEAKY_SLOPE).add(e2);
        let (w, b) = layer(format!("{}.d1", self.prefix));
        let d2 = conv_transpose2d(d1, w, b, 2).leaky_relu(LEAKY_SLOPE).add(e1);
        let (w, b) = layer(format!("{}.d2", self.prefix));
        let residual = conv_transpose2d(d2, w, b, 2);
        Ok(coarse.add(residual).clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug)]
pub struct RefinerTrainConfig {
    pub steps: usize,
    pub lambda_p: f64,
    pub perceptual_seed: u64,
    pub lrs: LrSchedule,
    /// Stop early once loss drops to this fraction of the step-0 loss.
    pub target_fraction: Option<f64>,
}

impl Default for RefinerTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lambda_p: 0.1,
            perceptual_seed: 1234,
            lrs: LrSchedule::default(),
            target_fraction: None,
        }
    }
}

#[derive(Debug)]
pub struct RefinerTrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps_run: usize,
}

/// Gradient-descent training of the refiner on (coarse, target) pairs with
/// the L1 + perceptual reconstruction term. Supports warm starts: whatever
/// is in the store is the starting point.
pub fn train_refiner(
    store: &mut ParamStore,
    refiner: &Refiner,
    pairs: &[(Tensor, Tensor)],
    cfg: &RefinerTrainConfig,
) -> Result<RefinerTrainReport> {
    if pairs.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let proxy = PerceptualProxy::new(cfg.perceptual_seed);
    let adam = AdamConfig::default();
    let prefix = format!("{}.", refiner.prefix);

    let mean_loss = |store: &ParamStore| -> Result<f64> {
        let mut acc = 0.0;
        for (coarse, target) in pairs {
            let tape = Tape::new();
            let binding = store.bind(&tape, &[&prefix]);
            let c = tape.constant(coarse.clone());
            let t = tape.constant(target.clone());
            let fine = refiner.refine(&binding, c)?;
            acc += c2f_loss(fine, t, cfg.lambda_p, &proxy)?.value().item();
        }
        Ok(acc / pairs.len() as f64)
    };

    let initial_loss = mean_loss(store)?;
    let mut steps_run = 0;
    let mut running = initial_loss;
    for step in 0..cfg.steps {
        let (coarse, target) = &pairs[step % pairs.len()];
        let tape = Tape::new();
        let binding = store.bind(&tape, &[&prefix]);
        let c = tape.constant(coarse.clone());
        let t = tape.constant(target.clone());
        let fine = refiner.refine(&binding, c)?;
        let loss = c2f_loss(fine, t, cfg.lambda_p, &proxy)?;
        let grads = tape.backward(loss);
        store.apply_step(&binding, &grads, &cfg.lrs, &adam);
        steps_run += 1;
        if let Some(frac) = cfg.target_fraction {
            // check on full epochs to keep the early exit cheap but honest
            if step % pairs.len() == pairs.len() - 1 {
                running = mean_loss(store)?;
                if running <= frac * initial_loss {
                    break;
                }
            }
        }
    }
    if cfg.target_fraction.is_none() {
        running = mean_loss(store)?;
    }
    Ok(RefinerTrainReport {
        initial_loss,
        final_loss: running,
        steps_run,
    })
}
