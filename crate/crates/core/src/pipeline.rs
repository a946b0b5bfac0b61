//! Per-sample feature preparation and the batched training objective.

use tanger_autograd::{Element, Tensor, Var};

use crate::error::{Result, TangerError};
use crate::losses::{loss_coherence_logits, loss_language_class, loss_total, loss_vision, TargetEncoding};
use crate::model::{ModelConfig, Net};
use crate::ngram::pooled_groups;
use crate::vision::{extract_descriptors, patchify, Image, PatchSequence};
use crate::visual_words::{build_plan_from_words, Codebook, NGramPlan, PatchWords};

/// How each patch picks its n-gram length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlanMode {
    /// Most peaked visual-word histogram over the configured n range.
    Adaptive,
    /// `min(n, i + 1)` for every patch.
    Fixed(usize),
}

/// Model inputs derived from one image, independent of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub seq: PatchSequence,
    /// Absent for models without the pyramid branch.
    pub plan: Option<NGramPlan>,
}

pub fn plan_for(seq: &PatchSequence, config: &ModelConfig, codebook: Option<&Codebook>, mode: PlanMode) -> Result<NGramPlan> {
    match (mode, codebook) {
        (PlanMode::Fixed(n), _) => NGramPlan::fixed(seq.len(), n),
        (PlanMode::Adaptive, Some(cb)) => {
            let d = extract_descriptors(seq, config.descriptor_split)?;
            build_plan_from_words(&PatchWords::assign(&d, cb)?, config.n_range())
        }
        (PlanMode::Adaptive, None) => Err(TangerError::Config("adaptive n-gram plans need a codebook".into())),
    }
}

pub fn prepare_features(
    image: &Image,
    config: &ModelConfig,
    codebook: Option<&Codebook>,
    mode: PlanMode,
) -> Result<Features> {
    if image.height() != config.image_height || image.width() != config.image_width {
        return Err(TangerError::Validation(format!(
            "image is {}x{}, model expects {}x{}",
            image.height(),
            image.width(),
            config.image_height,
            config.image_width
        )));
    }
    let seq = patchify(&image.standardized(), config.patch)?;
    let plan = if config.pyramid {
        Some(plan_for(&seq, config, codebook, mode)?)
    } else {
        None
    };
    Ok(Features { seq, plan })
}

/// A prepared sample: features plus supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Features,
    pub target: TargetEncoding,
    pub text: String,
}

/// Batched inputs as tensors of the model element type.
pub struct BatchInputs<F: Element> {
    /// `[batch, P, raw_dim]`
    pub patches: Tensor<F>,
    /// `[batch, P, pooled_dim]`, present with the pyramid branch.
    pub pooled: Option<Tensor<F>>,
}

pub fn batch_inputs<F: Element>(features: &[&Features], config: &ModelConfig) -> Result<BatchInputs<F>> {
    if features.is_empty() {
        return Err(TangerError::Validation("empty batch".into()));
    }
    let (b, p) = (features.len(), config.patch_count());
    let mut patches = Vec::with_capacity(b * p * config.raw_dim());
    for f in features {
        if f.seq.len() != p || f.seq.raw_dim() != config.raw_dim() {
            return Err(TangerError::Validation(format!(
                "sample has {} patches of {} values, model expects {p} of {}",
                f.seq.len(),
                f.seq.raw_dim(),
                config.raw_dim()
            )));
        }
        patches.extend(f.seq.as_matrix().iter().map(|&v| F::of_f64(v)));
    }
    let pooled = if config.pyramid {
        let mut data = Vec::with_capacity(b * p * config.pooled_dim());
        for f in features {
            let plan = f
                .plan
                .as_ref()
                .ok_or_else(|| TangerError::Validation("sample lacks an n-gram plan".into()))?;
            data.extend(pooled_groups(plan, &f.seq, &config.spp_levels)?.into_iter().map(F::of_f64));
        }
        Some(Tensor::new(vec![b, p, config.pooled_dim()], data)?)
    } else {
        None
    };
    Ok(BatchInputs {
        patches: Tensor::new(vec![b, p, config.raw_dim()], patches)?,
        pooled,
    })
}

/// Scalars of one objective evaluation; `class`/`score` exist with the pyramid branch.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub vision: Var,
    pub class: Option<Var>,
    pub score: Option<Var>,
    pub y: Var,
}

/// Total objective over a batch: `loss_v + alpha * (l_class + l_score)`.
pub fn batch_loss<F: Element>(
    net: &Net<'_, F>,
    inputs: &BatchInputs<F>,
    targets: &[TargetEncoding],
    frozen_chars: Option<&[usize]>,
) -> Result<LossParts> {
    let tape = net.tape;
    let patches = tape.constant(inputs.patches.clone());
    let pooled = inputs.pooled.as_ref().map(|t| tape.constant(t.clone()));
    let out = net.forward(patches, pooled, frozen_chars)?;
    let vision = loss_vision(tape, out.y, targets)?;
    let Some(pyr) = out.pyramid else {
        let v = tape.value(vision)?.item()?;
        if !v.is_finite() {
            return Err(TangerError::Numeric(format!("loss_v is {v}")));
        }
        return Ok(LossParts {
            total: vision,
            vision,
            class: None,
            score: None,
            y: out.y,
        });
    };
    let languages: Vec<Vec<f64>> = targets.iter().map(|t| t.language.clone()).collect();
    let class = loss_language_class(tape, pyr.language, &languages)?;
    let lens: Vec<usize> = targets.iter().map(|t| t.effective_len).collect();
    let score = loss_coherence_logits(tape, pyr.coherence, &lens)?;
    let total = loss_total(tape, vision, class, score, net.config.alpha)?;
    Ok(LossParts {
        total,
        vision,
        class: Some(class),
        score: Some(score),
        y: out.y,
    })
}
