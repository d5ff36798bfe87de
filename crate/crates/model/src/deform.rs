//! The deformation field stack: one shared general field driven by the
//! motion feature and N identity-private individual fields driven by audio.
//! Each field owns a tri-plane encoder, a region-attention MLP, and separate
//! face / mouth decoders with zero-initialized output layers (so a fresh
//! stack deforms nothing). Deltas from both fields add in raw parameter
//! space before activations.

use crate::signals::{region_enhance, SIGNAL_DIM};
use ghead_core::field::Aabb;
use ghead_core::hash::{TriPlaneEncoder, TriPlaneSpec};
use ghead_core::mlp::{Mlp, MlpSpec, OutputActivation};
use ghead_core::optim::{Binding, LrGroup, ParamStore};
use ghead_core::tape::{concat_cols, concat_rows, Var};
use ghead_core::tensor::Tensor;
use ghead_core::{CoreError, Result};
use rand::Rng;

/// Which Gaussian attributes a field deforms in the face region. The mouth
/// region always receives position deltas only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttributeSet {
    /// Δμ only.
    Mu,
    /// Δμ, Δq, Δs.
    MuQuatScale,
    /// Δμ, Δq, Δs, Δα, Δcolor.
    All,
}

impl AttributeSet {
    pub fn face_dim(self) -> usize {
        match self {
            AttributeSet::Mu => 3,
            AttributeSet::MuQuatScale => 10,
            AttributeSet::All => 14,
        }
    }

    pub fn has_quat_scale(self) -> bool {
        !matches!(self, AttributeSet::Mu)
    }

    pub fn has_appearance(self) -> bool {
        matches!(self, AttributeSet::All)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FieldSizes {
    pub encoder: TriPlaneSpec,
    pub hidden: usize,
}

impl Default for FieldSizes {
    fn default() -> Self {
        Self {
            encoder: TriPlaneSpec::default(),
            hidden: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeformField {
    pub encoder: TriPlaneEncoder,
    pub attention: Mlp,
    pub face_decoder: Mlp,
    pub mouth_decoder: Mlp,
    pub attrs: AttributeSet,
}

impl DeformField {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &FieldSizes,
        bounds: Aabb,
        attrs: AttributeSet,
        rng: &mut R,
    ) -> Self {
        let enc_dim = sizes.encoder.output_dim();
        let encoder = TriPlaneEncoder::register(
            store,
            &format!("{prefix}.enc"),
            sizes.encoder,
            bounds,
            rng,
        );
        let attention = Mlp::register(
            store,
            &format!("{prefix}.att"),
            MlpSpec::new(&[enc_dim, sizes.hidden, SIGNAL_DIM])
                .with_output(OutputActivation::Sigmoid),
            LrGroup::Mlp,
            rng,
        );
        let face_decoder = Mlp::register(
            store,
            &format!("{prefix}.face"),
            MlpSpec::new(&[enc_dim + SIGNAL_DIM, sizes.hidden, sizes.hidden, attrs.face_dim()])
                .with_zero_init_last(),
            LrGroup::Mlp,
            rng,
        );
        let mouth_decoder = Mlp::register(
            store,
            &format!("{prefix}.mouth"),
            MlpSpec::new(&[enc_dim + SIGNAL_DIM, sizes.hidden, sizes.hidden, 3])
                .with_zero_init_last(),
            LrGroup::Mlp,
            rng,
        );
        Self {
            encoder,
            attention,
            face_decoder,
            mouth_decoder,
            attrs,
        }
    }

    pub fn attach(prefix: &str, sizes: &FieldSizes, bounds: Aabb, attrs: AttributeSet) -> Self {
        let enc_dim = sizes.encoder.output_dim();
        Self {
            encoder: TriPlaneEncoder::attach(&format!("{prefix}.enc"), sizes.encoder, bounds),
            attention: Mlp::attach(
                &format!("{prefix}.att"),
                MlpSpec::new(&[enc_dim, sizes.hidden, SIGNAL_DIM])
                    .with_output(OutputActivation::Sigmoid),
            ),
            face_decoder: Mlp::attach(
                &format!("{prefix}.face"),
                MlpSpec::new(&[enc_dim + SIGNAL_DIM, sizes.hidden, sizes.hidden, attrs.face_dim()])
                    .with_zero_init_last(),
            ),
            mouth_decoder: Mlp::attach(
                &format!("{prefix}.mouth"),
                MlpSpec::new(&[enc_dim + SIGNAL_DIM, sizes.hidden, sizes.hidden, 3])
                    .with_zero_init_last(),
            ),
            attrs,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.encoder.table_names();
        names.extend(self.attention.param_names());
        names.extend(self.face_decoder.param_names());
        names.extend(self.mouth_decoder.param_names());
        names
    }

    /// Predict per-primitive deltas for one frame. `mu` is [B,3] with the
    /// face block first (`n_face` rows) and the mouth block after it;
    /// `feature` is the frame's 32-d branch latent.
    pub fn deform<'t>(
        &self,
        binding: &Binding<'t>,
        mu: Var<'t>,
        feature: Var<'t>,
        n_face: usize,
        n_mouth: usize,
    ) -> Result<FieldDelta<'t>> {
        let b = mu.shape()[0];
        if b != n_face + n_mouth {
            return Err(CoreError::ShapeMismatch {
                expected: format!("[{}, 3]", n_face + n_mouth),
                got: format!("{:?}", mu.shape()),
            });
        }
        let enc = self.encoder.encode(binding, mu);
        let att = self.attention.forward(binding, enc)?;
        let fhat = region_enhance(att, feature);
        let joint = concat_cols(&[enc, fhat]);
        let face = self
            .face_decoder
            .forward(binding, joint.slice_rows(0, n_face))?;
        let mouth = self
            .mouth_decoder
            .forward(binding, joint.slice_rows(n_face, b))?;
        Ok(FieldDelta {
            face,
            mouth,
            attrs: self.attrs,
            n_face,
            n_mouth,
        })
    }
}

/// Per-frame deformation output of one field.
#[derive(Clone, Copy)]
pub struct FieldDelta<'t> {
    /// [n_face, face_dim] with columns Δμ(3) | Δq(4) | Δs(3) | Δα(1) | Δc(3)
    /// up to the field's attribute set.
    pub face: Var<'t>,
    /// [n_mouth, 3] position deltas.
    pub mouth: Var<'t>,
    pub attrs: AttributeSet,
    pub n_face: usize,
    pub n_mouth: usize,
}

impl<'t> FieldDelta<'t> {
    pub fn face_mu(&self) -> Var<'t> {
        self.face.select_cols(&[0, 1, 2])
    }

    /// Face-region position deltas flattened to a single vector (the
    /// contrastive losses compare these across fields).
    pub fn face_mu_flat(&self) -> Var<'t> {
        self.face_mu().reshape(&[self.n_face * 3])
    }

    /// All-region position deltas flattened.
    pub fn all_mu_flat(&self) -> Var<'t> {
        concat_rows(&[self.face_mu(), self.mouth]).reshape(&[(self.n_face + self.n_mouth) * 3])
    }
}

/// Raw static-field parameters bound on the tape.
#[derive(Clone, Copy)]
pub struct StaticVars<'t> {
    pub mu: Var<'t>,          // [B,3]
    pub scale_raw: Var<'t>,   // [B,3]
    pub quat_raw: Var<'t>,    // [B,4]
    pub opacity_raw: Var<'t>, // [B]
    pub color_raw: Var<'t>,   // [B,3]
}

impl<'t> StaticVars<'t> {
    pub fn from_binding(binding: &Binding<'t>, prefix: &str) -> Self {
        Self {
            mu: binding.var(&format!("{prefix}.mu")),
            scale_raw: binding.var(&format!("{prefix}.scale_raw")),
            quat_raw: binding.var(&format!("{prefix}.quat_raw")),
            opacity_raw: binding.var(&format!("{prefix}.opacity_raw")),
            color_raw: binding.var(&format!("{prefix}.color_raw")),
        }
    }
}

/// Activated, deformed splat parameters ready for the rasterizer.
#[derive(Clone, Copy)]
pub struct ActivatedSplats<'t> {
    pub mu: Var<'t>,
    pub scale: Var<'t>,
    pub quat: Var<'t>,
    pub opacity: Var<'t>,
    pub color: Var<'t>,
}

/// θ̃ = θ + Σ δ in raw parameter space, then activations. Mouth primitives
/// receive position deltas only; opacity and color change only under the
/// `All` attribute set.
pub fn combine_apply<'t>(
    statics: &StaticVars<'t>,
    deltas: &[&FieldDelta<'t>],
    n_face: usize,
    n_mouth: usize,
) -> Result<ActivatedSplats<'t>> {
    let b = n_face + n_mouth;
    if statics.mu.shape() != vec![b, 3] {
        return Err(CoreError::ShapeMismatch {
            expected: format!("[{b}, 3]"),
            got: format!("{:?}", statics.mu.shape()),
        });
    }
    let tape = statics.mu.tape();
    let mut mu = statics.mu;
    let mut quat_raw = statics.quat_raw;
    let mut scale_raw = statics.scale_raw;
    let mut opacity_raw = statics.opacity_raw;
    let mut color_raw = statics.color_raw;

    for delta in deltas {
        if delta.n_face != n_face || delta.n_mouth != n_mouth {
            return Err(CoreError::ShapeMismatch {
                expected: format!("face {n_face} / mouth {n_mouth}"),
                got: format!("face {} / mouth {}", delta.n_face, delta.n_mouth),
            });
        }
        let d_mu = concat_rows(&[delta.face_mu(), delta.mouth]);
        mu = mu.add(d_mu);
        if delta.attrs.has_quat_scale() {
            let zeros_q = tape.constant(Tensor::zeros(&[n_mouth, 4]));
            let d_quat = concat_rows(&[delta.face.select_cols(&[3, 4, 5, 6]), zeros_q]);
            quat_raw = quat_raw.add(d_quat);
            let zeros_s = tape.constant(Tensor::zeros(&[n_mouth, 3]));
            let d_scale = concat_rows(&[delta.face.select_cols(&[7, 8, 9]), zeros_s]);
            scale_raw = scale_raw.add(d_scale);
        }
        if delta.attrs.has_appearance() {
            let zeros_a = tape.constant(Tensor::zeros(&[n_mouth, 1]));
            let d_op = concat_rows(&[delta.face.select_cols(&[10]), zeros_a]).reshape(&[b]);
            opacity_raw = opacity_raw.add(d_op);
            let zeros_c = tape.constant(Tensor::zeros(&[n_mouth, 3]));
            let d_col = concat_rows(&[delta.face.select_cols(&[11, 12, 13]), zeros_c]);
            color_raw = color_raw.add(d_col);
        }
    }

    // reject degenerate quaternions before normalizing
    let qv = quat_raw.value();
    for r in 0..b {
        let norm = qv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(CoreError::DegenerateQuaternion { norm });
        }
    }

    Ok(ActivatedSplats {
        mu,
        scale: scale_raw.exp(),
        quat: quat_raw.l2_normalize_rows(),
        opacity: opacity_raw.sigmoid(),
        color: color_raw.sigmoid(),
    })
}

/// Which fields' deltas are applied to the static parameters. Both deltas
/// are always computed (the losses need them); routing only affects θ̃.
#[derive(Clone, Copy, Debug)]
pub struct DeformRouting {
    pub apply_general: bool,
    pub apply_individual: bool,
}

impl Default for DeformRouting {
    fn default() -> Self {
        Self {
            apply_general: true,
            apply_individual: true,
        }
    }
}

#[derive(Clone)]
pub struct FieldStack {
    pub general: DeformField,
    pub individuals: Vec<DeformField>,
}

impl FieldStack {
    pub fn individual(&self, k: usize) -> Result<&DeformField> {
        self.individuals.get(k).ok_or(CoreError::InvalidIdentity {
            index: k,
            count: self.individuals.len(),
        })
    }

    pub fn general_deform<'t>(
        &self,
        binding: &Binding<'t>,
        mu: Var<'t>,
        f_m: Var<'t>,
        n_face: usize,
        n_mouth: usize,
    ) -> Result<FieldDelta<'t>> {
        self.general.deform(binding, mu, f_m, n_face, n_mouth)
    }

    pub fn individual_deform<'t>(
        &self,
        k: usize,
        binding: &Binding<'t>,
        mu: Var<'t>,
        f_a: Var<'t>,
        n_face: usize,
        n_mouth: usize,
    ) -> Result<FieldDelta<'t>> {
        self.individual(k)?.deform(binding, mu, f_a, n_face, n_mouth)
    }
}

/// Deltas computed for one frame.
pub struct FrameDeltas<'t> {
    pub general: FieldDelta<'t>,
    pub individual: FieldDelta<'t>,
}

/// Full per-frame composition: both fields' deltas from their branch
/// features, then combine-and-activate under the routing switches.
#[allow(clippy::too_many_arguments)]
pub fn deform_frame<'t>(
    stack: &FieldStack,
    k: usize,
    binding: &Binding<'t>,
    statics: &StaticVars<'t>,
    f_m: Var<'t>,
    f_a: Var<'t>,
    n_face: usize,
    n_mouth: usize,
    routing: DeformRouting,
) -> Result<(ActivatedSplats<'t>, FrameDeltas<'t>)> {
    let general = stack.general_deform(binding, statics.mu, f_m, n_face, n_mouth)?;
    let individual = stack.individual_deform(k, binding, statics.mu, f_a, n_face, n_mouth)?;
    let mut applied: Vec<&FieldDelta<'t>> = Vec::new();
    if routing.apply_general {
        applied.push(&general);
    }
    if routing.apply_individual {
        applied.push(&individual);
    }
    let splats = combine_apply(statics, &applied, n_face, n_mouth)?;
    Ok((splats, FrameDeltas { general, individual }))
}
