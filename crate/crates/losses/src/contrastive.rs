//! Contrastive losses over flattened deformation vectors.
//!
//! The similarity-contrastive loss is a softmax over cosine similarities:
//! the general field's position deltas should align with the matching
//! identity's individual deltas and diverge from every other identity's,
//! all fields being queried with the same audio feature. The negative
//! contrast loss penalizes raw positive similarity instead.

use ghead_core::error::{CoreError, Result};
use ghead_core::tape::Var;

const MIN_NORM: f64 = 1e-12;

fn checked_norm(v: &Var<'_>) -> Result<f64> {
    let val = v.value();
    let norm = val.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < MIN_NORM {
        return Err(CoreError::DegenerateSimilarity { norm });
    }
    Ok(norm)
}

/// Differentiable cosine similarity between two nonzero vectors.
pub fn cosine_sim<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    checked_norm(&a)?;
    checked_norm(&b)?;
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    Ok(a.dot(b).div(na.mul(nb)))
}

/// Softmax-over-cosine contrastive loss for identity `k` (0-based) among
/// `individual` deltas, against the general delta:
/// -log( exp(sim(g, i_k)/τ) / Σ_i exp(sim(g, i_i)/τ) ).
pub fn sc_loss<'t>(
    general: Var<'t>,
    individual: &[Var<'t>],
    k: usize,
    tau: f64,
) -> Result<Var<'t>> {
    assert!(tau > 0.0, "temperature must be positive");
    assert!(k < individual.len(), "identity index out of range");
    if individual.len() == 1 {
        // numerator equals denominator: identically zero
        checked_norm(&general)?;
        checked_norm(&individual[0])?;
        return Ok(general
            .tape()
            .constant(ghead_core::tensor::Tensor::scalar(0.0)));
    }
    let sims: Vec<Var<'t>> = individual
        .iter()
        .map(|&i| cosine_sim(general, i))
        .collect::<Result<_>>()?;
    let exps: Vec<Var<'t>> = sims.iter().map(|s| s.scale(1.0 / tau).exp()).collect();
    let mut denom = exps[0];
    for e in &exps[1..] {
        denom = denom.add(*e);
    }
    // -log(exp_k / denom) = log(denom) - sim_k/τ
    Ok(denom.ln().sub(sims[k].scale(1.0 / tau)))
}

/// Pre-training negative contrast: mean over i≠k of max(0, sim(i_k, i_i)).
pub fn nc_loss_pretrain<'t>(individual: &[Var<'t>], k: usize) -> Result<Var<'t>> {
    assert!(individual.len() >= 2, "need at least two identities");
    assert!(k < individual.len());
    let mut acc: Option<Var<'t>> = None;
    let mut count = 0.0;
    for (i, &other) in individual.iter().enumerate() {
        if i == k {
            continue;
        }
        let s = cosine_sim(individual[k], other)?.relu();
        acc = Some(match acc {
            None => s,
            Some(prev) => prev.add(s),
        });
        count += 1.0;
    }
    Ok(acc.unwrap().scale(1.0 / count))
}

/// Adaptation negative contrast: max(0, sim(individual, general)).
pub fn nc_loss_adapt<'t>(individual: Var<'t>, general: Var<'t>) -> Result<Var<'t>> {
    Ok(cosine_sim(individual, general)?.relu())
}
