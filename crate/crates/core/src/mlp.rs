//! Small fully-connected networks: affine stacks with leaky-ReLU hidden
//! activations and a configurable output activation.

use crate::error::{CoreError, Result};
use crate::optim::{Binding, LrGroup, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;
use rand::Rng;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

#[derive(Clone, Debug)]
pub struct MlpSpec {
    /// Layer widths including input and output, e.g. [80, 64, 64, 10].
    pub dims: Vec<usize>,
    pub output: OutputActivation,
    /// Zero-initialize the final layer so the net outputs exactly 0 at start.
    pub zero_init_last: bool,
}

impl MlpSpec {
    pub fn new(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        Self {
            dims: dims.to_vec(),
            output: OutputActivation::Linear,
            zero_init_last: false,
        }
    }

    pub fn with_output(mut self, output: OutputActivation) -> Self {
        self.output = output;
        self
    }

    pub fn with_zero_init_last(mut self) -> Self {
        self.zero_init_last = true;
        self
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    prefix: String,
}

impl Mlp {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        spec: MlpSpec,
        group: LrGroup,
        rng: &mut R,
    ) -> Self {
        for layer in 0..spec.n_layers() {
            let (n_in, n_out) = (spec.dims[layer], spec.dims[layer + 1]);
            let zero = spec.zero_init_last && layer == spec.n_layers() - 1;
            let bound = (6.0 / n_in as f64).sqrt();
            let w: Vec<f64> = (0..n_out * n_in)
                .map(|_| if zero { 0.0 } else { rng.gen_range(-bound..bound) })
                .collect();
            store.register(
                &format!("{prefix}.w{layer}"),
                Tensor::from_vec(&[n_out, n_in], w),
                group,
            );
            store.register(
                &format!("{prefix}.b{layer}"),
                Tensor::zeros(&[n_out]),
                group,
            );
        }
        Self {
            spec,
            prefix: prefix.to_string(),
        }
    }

    pub fn attach(prefix: &str, spec: MlpSpec) -> Self {
        Self {
            spec,
            prefix: prefix.to_string(),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.spec.n_layers())
            .flat_map(|l| {
                [
                    format!("{}.w{l}", self.prefix),
                    format!("{}.b{l}", self.prefix),
                ]
            })
            .collect()
    }

    /// Forward pass over a [B, dims[0]] input.
    pub fn forward<'t>(&self, binding: &Binding<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.spec.dims[0] {
            return Err(CoreError::ShapeMismatch {
                expected: format!("[B, {}]", self.spec.dims[0]),
                got: format!("{shape:?}"),
            });
        }
        let mut h = x;
        for layer in 0..self.spec.n_layers() {
            let w = binding.var(&format!("{}.w{layer}", self.prefix));
            let b = binding.var(&format!("{}.b{layer}", self.prefix));
            h = h.linear(w, b);
            if layer + 1 < self.spec.n_layers() {
                h = h.leaky_relu(LEAKY_SLOPE);
            } else {
                match self.spec.output {
                    OutputActivation::Linear => {}
                    OutputActivation::Sigmoid => h = h.sigmoid(),
                }
            }
        }
        Ok(h)
    }
}
