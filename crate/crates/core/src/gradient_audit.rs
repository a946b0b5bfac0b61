//! Finite-difference audit of the full training objective on a tiny model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tanger_autograd::{finite_difference_check, Tape, Tensor};

use crate::error::Result;
use crate::losses::TargetEncoding;
use crate::model::{argmax_chars, Mode, ModelConfig, ModelParams, Net};
use crate::pipeline::{batch_inputs, prepare_features, PlanMode};
use crate::vision::{extract_descriptors, patchify, Image};
use crate::visual_words::build_codebook_from;
use crate::vocab::{PAD, STOP};

/// C=16, depth 1, 2 heads, 8 patches of 4x4 pixels, 12 classes, maxlen 4.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        depth: 1,
        heads: 2,
        maxlen: 4,
        vocab_size: 12,
        patch: 4,
        image_height: 8,
        image_width: 16,
        codebook_size: 4,
        descriptor_split: 2,
        ..ModelConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub max_rel_error: f64,
    /// Worst error per parameter group (`encoder`, `recognition`, ...).
    pub per_group: BTreeMap<String, f64>,
    pub worst_param: String,
    pub entries: usize,
}

/// Checks every parameter gradient of the total loss on a random two-sample batch.
///
/// Dropout runs in training mode with a fixed key, and the coherence head's
/// argmax characters are taken from the unperturbed forward pass and frozen.
pub fn audit_model(config: &ModelConfig, seed: u64, eps: f64) -> Result<AuditReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<Image> = (0..2)
        .map(|_| {
            let n = config.image_height * config.image_width * 3;
            Image::new(config.image_height, config.image_width, (0..n).map(|_| rng.random::<f64>()).collect())
        })
        .collect::<Result<_>>()?;
    let mut pool = Vec::new();
    for img in &images {
        let d = extract_descriptors(&patchify(img, config.patch)?, config.descriptor_split)?;
        pool.push(d);
    }
    let codebook = if config.pyramid {
        let merged: Vec<f64> = pool.iter().flat_map(|d| d.as_matrix().iter().copied()).collect();
        let dim = pool[0].dim();
        let per = pool[0].per_patch();
        let set = crate::vision::DescriptorSet::from_rows(merged.clone(), merged.len() / dim / per, per, dim)?;
        Some(build_codebook_from(&set, config.codebook_size, 5, seed)?)
    } else {
        None
    };
    let features = images
        .iter()
        .map(|img| prepare_features(img, config, codebook.as_ref(), PlanMode::Adaptive))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = features.iter().collect();
    let inputs = batch_inputs::<f64>(&refs, config)?;

    let targets: Vec<TargetEncoding> = (0..2)
        .map(|b| {
            let len = 1 + (b + seed as usize) % (config.maxlen - 1);
            let mut chars: Vec<usize> = (0..len).map(|_| rng.random_range(PAD + 1..config.vocab_size)).collect();
            chars.push(STOP);
            chars.resize(config.maxlen, PAD);
            let mut language: Vec<f64> = (0..config.language_count).map(|_| rng.random::<f64>() + 0.1).collect();
            let s: f64 = language.iter().sum();
            language.iter_mut().for_each(|p| *p /= s);
            TargetEncoding {
                chars,
                effective_len: len + 1,
                language,
            }
        })
        .collect();

    let params = ModelParams::<f64>::init(config, seed)?;
    let mode = Mode::train(seed, 1);
    let frozen = {
        let tape = Tape::new();
        let vars = params.bind(&tape);
        let net = Net::new(&tape, &params, &vars, mode);
        let parts = crate::pipeline::batch_loss(&net, &inputs, &targets, None)?;
        argmax_chars(&tape.value(parts.y)?)
    };
    let tensors: Vec<Tensor<f64>> = params.tensors().to_vec();
    let report = finite_difference_check(&tensors, eps, |tape, vars| {
        let net = Net::new(tape, &params, vars, mode);
        Ok::<_, crate::error::TangerError>(crate::pipeline::batch_loss(&net, &inputs, &targets, Some(&frozen))?.total)
    })?;

    let mut per_group = BTreeMap::new();
    for (name, &err) in params.names().iter().zip(&report.per_param) {
        let group = name.split('.').next().unwrap_or(name).to_string();
        let e = per_group.entry(group).or_insert(0.0f64);
        *e = e.max(err);
    }
    Ok(AuditReport {
        max_rel_error: report.max_rel_error,
        per_group,
        worst_param: params.names()[report.worst.0].clone(),
        entries: report.entries,
    })
}
