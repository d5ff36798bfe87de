//! Weighted loss compositions for the two training stages, with per-term
//! logging values.

use crate::perceptual::PerceptualProxy;
use ghead_core::error::Result;
use ghead_core::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub dssim: f64,
    pub sc: f64,
    pub c2f: f64,
    pub perceptual: f64,
    pub nc: f64,
    pub geo: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dssim: 0.2,
            sc: 0.01,
            c2f: 1.0,
            perceptual: 0.1,
            nc: 0.01,
            geo: 0.001,
            tau: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tau <= 0.0 {
            return Err(format!("temperature must be positive, got {}", self.tau));
        }
        for (name, v) in [
            ("dssim", self.dssim),
            ("sc", self.sc),
            ("c2f", self.c2f),
            ("perceptual", self.perceptual),
            ("nc", self.nc),
            ("geo", self.geo),
        ] {
            if v < 0.0 {
                return Err(format!("loss weight {name} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Reconstruction term for the refiner: L1 + λ_p * perceptual.
pub fn c2f_loss<'t>(
    fine: Var<'t>,
    target: Var<'t>,
    lambda_p: f64,
    proxy: &PerceptualProxy,
) -> Result<Var<'t>> {
    let l1 = crate::metrics::l1_loss(fine, target)?;
    let p = proxy.loss(fine, target)?;
    Ok(l1.add(p.scale(lambda_p)))
}

/// Individual term values for one step, in a stable order for logging.
pub type TermLog = Vec<(&'static str, f64)>;

/// L_pre = L1 + λ_DSSIM·L_DSSIM + λ_SC·L_SC + λ_C2F·L_C2F.
/// Optional terms are skipped (ablations, degenerate-similarity steps).
pub fn pretrain_loss<'t>(
    l1: Var<'t>,
    dssim: Var<'t>,
    sc: Option<Var<'t>>,
    c2f: Option<Var<'t>>,
    w: &LossWeights,
) -> (Var<'t>, TermLog) {
    let mut log: TermLog = vec![
        ("l1", l1.value().item()),
        ("dssim", dssim.value().item()),
    ];
    let mut total = l1.add(dssim.scale(w.dssim));
    if let Some(sc) = sc {
        log.push(("sc", sc.value().item()));
        total = total.add(sc.scale(w.sc));
    }
    if let Some(c2f) = c2f {
        log.push(("c2f", c2f.value().item()));
        total = total.add(c2f.scale(w.c2f));
    }
    log.push(("total", total.value().item()));
    (total, log)
}

/// L_ada = L1 + λ_DSSIM·L_DSSIM + λ_C·L_C + λ_Geo·L_Geo.
pub fn adapt_loss<'t>(
    l1: Var<'t>,
    dssim: Var<'t>,
    nc: Option<Var<'t>>,
    geo: Option<Var<'t>>,
    w: &LossWeights,
) -> (Var<'t>, TermLog) {
    let mut log: TermLog = vec![
        ("l1", l1.value().item()),
        ("dssim", dssim.value().item()),
    ];
    let mut total = l1.add(dssim.scale(w.dssim));
    if let Some(nc) = nc {
        log.push(("nc", nc.value().item()));
        total = total.add(nc.scale(w.nc));
    }
    if let Some(geo) = geo {
        log.push(("geo", geo.value().item()));
        total = total.add(geo.scale(w.geo));
    }
    log.push(("total", total.value().item()));
    (total, log)
}
