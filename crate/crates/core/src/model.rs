//! Dual-branch network: a primary encoder over patch tokens and a three-stage
//! pyramid over n-gram tokens, both running the same encoder stack, plus the
//! recognition, language-category and coherence heads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tanger_autograd::{DropoutKey, Element, Tape, Tensor, Var};

use crate::error::{Result, TangerError};
use crate::ngram::pooled_dim;

const LN_EPS: f64 = 1e-6;
const POS_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub maxlen: usize,
    pub vocab_size: usize,
    pub language_count: usize,
    pub dropout: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub spp_levels: Vec<usize>,
    pub codebook_size: usize,
    pub descriptor_split: usize,
    pub patch: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub alpha: f64,
    /// Whether the pyramid branch and the auxiliary heads exist.
    pub pyramid: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4.0,
            maxlen: 16,
            vocab_size: crate::vocab::Vocab::new().size(),
            language_count: 3,
            dropout: 0.1,
            n_min: 2,
            n_max: 5,
            spp_levels: crate::ngram::DEFAULT_LEVELS.to_vec(),
            codebook_size: 64,
            descriptor_split: 2,
            patch: 8,
            image_height: 32,
            image_width: 128,
            alpha: 0.01,
            pyramid: true,
        }
    }
}

impl ModelConfig {
    pub fn patch_count(&self) -> usize {
        (self.image_height / self.patch) * (self.image_width / self.patch)
    }

    pub fn raw_dim(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn descriptor_dim(&self) -> usize {
        let sub = self.patch / self.descriptor_split.max(1);
        3 * sub * sub
    }

    pub fn pooled_dim(&self) -> usize {
        pooled_dim(self.raw_dim(), &self.spp_levels)
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round() as usize
    }

    pub fn n_range(&self) -> std::ops::RangeInclusive<usize> {
        self.n_min..=self.n_max
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TangerError::Config(msg));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return bad(format!("mlp_ratio {} gives no hidden units", self.mlp_ratio));
        }
        if self.patch < 2 {
            return bad(format!("patch side {} must be at least 2", self.patch));
        }
        if self.image_height % self.patch != 0 || self.image_width % self.patch != 0 || self.image_height == 0 || self.image_width == 0 {
            return bad(format!(
                "image of height {} and width {} cannot be split into {}x{} patches",
                self.image_height, self.image_width, self.patch, self.patch
            ));
        }
        if self.descriptor_split == 0 || self.patch % self.descriptor_split != 0 {
            return bad(format!(
                "descriptor split {} does not divide patch side {}",
                self.descriptor_split, self.patch
            ));
        }
        if self.maxlen < 2 || self.patch_count() < self.maxlen {
            return bad(format!(
                "maxlen {} must be at least 2 and at most the patch count {}",
                self.maxlen,
                self.patch_count()
            ));
        }
        if self.vocab_size < 3 || self.language_count < 1 {
            return bad(format!(
                "vocab_size {} / language_count {} too small",
                self.vocab_size, self.language_count
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad(format!("n range {}..={} is empty", self.n_min, self.n_max));
        }
        if self.spp_levels.is_empty() || self.spp_levels.contains(&0) {
            return bad(format!("invalid pyramid levels {:?}", self.spp_levels));
        }
        if self.codebook_size < 2 {
            return bad(format!("codebook size {} must be at least 2", self.codebook_size));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha {} must be finite and non-negative", self.alpha));
        }
        if self.pyramid && self.patch_count() < 4 {
            return bad(format!(
                "the pyramid branch needs at least 4 patches, got {}",
                self.patch_count()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIx {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIx {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIx {
    pub ln1: NormIx,
    pub qkv: LinearIx,
    pub proj: LinearIx,
    pub ln2: NormIx,
    pub fc1: LinearIx,
    pub fc2: LinearIx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpIx {
    pub fc1: LinearIx,
    pub fc2: LinearIx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidIx {
    pub embed_weight: usize,
    pub embed_pos: usize,
    pub language_primary: MlpIx,
    pub language_supplementary: MlpIx,
    pub char_embed: usize,
    pub coherence: LinearIx,
}

/// Positions of every named tensor inside [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub primary_weight: usize,
    pub primary_pos: usize,
    pub encoder: Vec<BlockIx>,
    pub recognition: LinearIx,
    pub pyramid: Option<PyramidIx>,
}

/// Half of the channels encode the patch column, the other half its row.
fn sincos_2d(token: usize, channel: usize, cols: usize, c: usize) -> f64 {
    let half = c / 2;
    let (coord, j) = if channel < half { (token % cols, channel) } else { (token / cols, channel - half) };
    let freq = 10000f64.powf(-((j / 2 * 2) as f64) / half as f64);
    let angle = coord as f64 * freq;
    if j % 2 == 0 { angle.sin() } else { angle.cos() }
}

enum Init {
    Xavier,
    Normal(f64),
    /// Fixed 2D sine-cosine grid over patch rows and columns.
    SinCos { cols: usize },
    Zeros,
    Ones,
}

struct Builder<F: Element> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    rng: ChaCha8Rng,
}

impl<F: Element> Builder<F> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let n: usize = shape.iter().product();
        let data: Vec<F> = match init {
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| F::of_f64(d.sample(&mut self.rng))).collect()
            }
            Init::SinCos { cols } => {
                let c = shape[1];
                (0..n).map(|i| F::of_f64(sincos_2d(i / c, i % c, cols, c))).collect()
            }
            Init::Xavier => {
                let (fan_in, fan_out) = (shape[0], shape[shape.len() - 1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| F::of_f64(self.rng.random_range(-a..a))).collect()
            }
        };
        self.names.push(name);
        self.tensors.push(Tensor::from_fn(shape, |i| data[i]));
        self.tensors.len() - 1
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> LinearIx {
        LinearIx {
            weight: self.add(format!("{name}.weight"), &[d_in, d_out], Init::Xavier),
            bias: self.add(format!("{name}.bias"), &[d_out], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> NormIx {
        NormIx {
            gamma: self.add(format!("{name}.gamma"), &[c], Init::Ones),
            beta: self.add(format!("{name}.beta"), &[c], Init::Zeros),
        }
    }
}

/// All learned tensors in a fixed, named order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Element> {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Element> ModelParams<F> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.embed_dim;
        let p = config.patch_count();
        let hidden = config.mlp_hidden();
        let mut b = Builder {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let primary_weight = b.add("primary_embed.weight".into(), &[config.raw_dim(), c], Init::Xavier);
        let grid = Init::SinCos { cols: config.image_width / config.patch };
        let primary_pos = b.add("primary_embed.pos".into(), &[p, c], grid);
        let encoder = (0..config.depth)
            .map(|i| {
                let n = format!("encoder.{i}");
                BlockIx {
                    ln1: b.norm(&format!("{n}.ln1"), c),
                    qkv: b.linear(&format!("{n}.qkv"), c, 3 * c),
                    proj: b.linear(&format!("{n}.proj"), c, c),
                    ln2: b.norm(&format!("{n}.ln2"), c),
                    fc1: b.linear(&format!("{n}.fc1"), c, hidden),
                    fc2: b.linear(&format!("{n}.fc2"), hidden, c),
                }
            })
            .collect();
        let recognition = b.linear("recognition", c, config.vocab_size);
        let pyramid = config.pyramid.then(|| {
            let embed_weight = b.add("supplementary_embed.weight".into(), &[config.pooled_dim(), c], Init::Xavier);
            let grid = Init::SinCos { cols: config.image_width / config.patch };
            let embed_pos = b.add("supplementary_embed.pos".into(), &[p, c], grid);
            let lang = config.language_count;
            let mut mlp = |name: &str| MlpIx {
                fc1: b.linear(&format!("{name}.fc1"), c, c),
                fc2: b.linear(&format!("{name}.fc2"), c, lang),
            };
            let language_primary = mlp("language.primary");
            let language_supplementary = mlp("language.supplementary");
            let char_embed = b.add("coherence.char_embed".into(), &[config.vocab_size, c], Init::Normal(POS_STD));
            let coherence = b.linear("coherence.head", 2 * c, 1);
            PyramidIx {
                embed_weight,
                embed_pos,
                language_primary,
                language_supplementary,
                char_embed,
                coherence,
            }
        });
        Ok(Self {
            config: config.clone(),
            layout: Layout {
                primary_weight,
                primary_pos,
                encoder,
                recognition,
                pyramid,
            },
            names: b.names,
            tensors: b.tensors,
        })
    }

    /// Rebuilds parameters from named tensors (e.g. a checkpoint); shapes must match `config`.
    pub fn from_named(config: &ModelConfig, mut named: BTreeMap<String, Tensor<F>>) -> Result<Self> {
        let mut params = Self::init(config, 0)?;
        for (name, slot) in params.names.iter().zip(params.tensors.iter_mut()) {
            let t = named
                .remove(name)
                .ok_or_else(|| TangerError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(TangerError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some(extra) = named.keys().next() {
            return Err(TangerError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn set(&mut self, name: &str, t: Tensor<F>) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| TangerError::Validation(format!("no parameter named {name}")))?;
        if t.shape() != self.tensors[i].shape() {
            return Err(TangerError::Validation(format!(
                "parameter {name} has shape {:?}, got {:?}",
                self.tensors[i].shape(),
                t.shape()
            )));
        }
        self.tensors[i] = t;
        Ok(())
    }

    pub fn cast<G: Element>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Registers every tensor as a trainable leaf, in layout order.
    pub fn bind(&self, tape: &Tape<F>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Scalar count per group (`primary_embed`, `encoder`, `recognition`, ...).
    /// Each tensor is counted once however many stages use it.
    pub fn count_parameters(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let group = name.split('.').next().unwrap_or(name).to_string();
            *out.entry(group).or_insert(0) += t.numel();
        }
        out.entry("encoder".into()).or_insert(0);
        out
    }

    pub fn total_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Closed-form scalar count of one encoder block.
pub fn block_parameter_count(c: usize, hidden: usize) -> usize {
    2 * 2 * c + (c * 3 * c + 3 * c) + (c * c + c) + (c * hidden + hidden) + (hidden * c + c)
}

/// Where a forward pass draws its dropout masks from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub train: bool,
    pub seed: u64,
    pub step: u64,
}

impl Mode {
    pub fn eval() -> Self {
        Self {
            train: false,
            seed: 0,
            step: 0,
        }
    }

    pub fn train(seed: u64, step: u64) -> Self {
        Self { train: true, seed, step }
    }
}

/// Dropout site ids: stage 0 is the primary branch, 1..=3 the pyramid stages.
fn site(stage: u64, block: u64, slot: u64) -> u64 {
    (stage << 32) | (block << 8) | slot
}

/// Bound parameters plus the pieces of configuration forward passes need.
pub struct Net<'a, F: Element> {
    pub tape: &'a Tape<F>,
    pub vars: &'a [Var],
    pub layout: &'a Layout,
    pub config: &'a ModelConfig,
    pub mode: Mode,
}

impl<'a, F: Element> Net<'a, F> {
    pub fn new(tape: &'a Tape<F>, params: &'a ModelParams<F>, vars: &'a [Var], mode: Mode) -> Self {
        Self {
            tape,
            vars,
            layout: &params.layout,
            config: &params.config,
            mode,
        }
    }

    fn v(&self, i: usize) -> Var {
        self.vars[i]
    }

    fn pyramid_ix(&self) -> Result<&'a PyramidIx> {
        self.layout
            .pyramid
            .as_ref()
            .ok_or_else(|| TangerError::Config("model was built without the pyramid branch".into()))
    }

    fn linear(&self, x: Var, ix: LinearIx) -> Result<Var> {
        let y = self.tape.matmul(x, self.v(ix.weight))?;
        Ok(self.tape.add_bias(y, self.v(ix.bias))?)
    }

    fn dropout(&self, x: Var, site: u64) -> Result<Var> {
        let key = DropoutKey::new(self.mode.seed, site, self.mode.step);
        Ok(self.tape.dropout(x, self.config.dropout, key, self.mode.train)?)
    }

    fn attention(&self, x: Var, ix: &BlockIx, site_id: u64) -> Result<Var> {
        let t = self.tape;
        let s = t.shape(x)?;
        let (b, l, c) = (s[0], s[1], s[2]);
        let h = self.config.heads;
        let d = c / h;
        let qkv = self.linear(x, ix.qkv)?;
        let qkv = t.reshape(qkv, &[b, l, 3, h, d])?;
        let qkv = t.permute(qkv, &[2, 0, 3, 1, 4])?;
        let qkv = t.reshape(qkv, &[3, b * h, l, d])?;
        let q = t.reshape(t.slice(qkv, 0, 0, 1)?, &[b * h, l, d])?;
        let k = t.reshape(t.slice(qkv, 0, 1, 1)?, &[b * h, l, d])?;
        let v = t.reshape(t.slice(qkv, 0, 2, 1)?, &[b * h, l, d])?;
        let scores = t.scale(t.matmul_nt(q, k)?, 1.0 / (d as f64).sqrt())?;
        let attn = self.dropout(t.softmax(scores, 2)?, site_id)?;
        let out = t.matmul(attn, v)?;
        let out = t.reshape(out, &[b, h, l, d])?;
        let out = t.permute(out, &[0, 2, 1, 3])?;
        let out = t.reshape(out, &[b, l, c])?;
        self.linear(out, ix.proj)
    }

    fn block(&self, x: Var, ix: &BlockIx, stage: u64, index: u64) -> Result<Var> {
        let t = self.tape;
        let h = t.layer_norm(x, self.v(ix.ln1.gamma), self.v(ix.ln1.beta), LN_EPS)?;
        let a = self.attention(h, ix, site(stage, index, 3))?;
        let x = t.add(x, self.dropout(a, site(stage, index, 1))?)?;
        let h = t.layer_norm(x, self.v(ix.ln2.gamma), self.v(ix.ln2.beta), LN_EPS)?;
        let h = t.gelu(self.linear(h, ix.fc1)?)?;
        let h = self.linear(h, ix.fc2)?;
        Ok(t.add(x, self.dropout(h, site(stage, index, 2))?)?)
    }

    /// The shared encoder stack over `[batch, len, C]` tokens.
    pub fn encoder_stack(&self, x: Var, stage: u64) -> Result<Var> {
        let s = self.tape.shape(x)?;
        if s.len() != 3 || s[2] != self.config.embed_dim {
            return Err(TangerError::Validation(format!(
                "encoder expects [batch, len, {}] tokens, got {s:?}",
                self.config.embed_dim
            )));
        }
        let mut x = x;
        for (i, ix) in self.layout.encoder.iter().enumerate() {
            x = self.block(x, ix, stage, i as u64)?;
        }
        Ok(x)
    }

    /// `[batch, P, raw_dim]` patch features to `[batch, P, C]` embedded tokens.
    pub fn embed_primary(&self, patches: Var) -> Result<Var> {
        let x = crate::vision::embed_tokens(self.tape, patches, self.v(self.layout.primary_weight), self.v(self.layout.primary_pos))?;
        self.dropout(x, site(0, 0xff, 0))
    }

    /// `[batch, P, pooled_dim]` n-gram features to `[batch, P, C]` supplementary tokens.
    pub fn embed_supplementary(&self, pooled: Var) -> Result<Var> {
        let ix = self.pyramid_ix()?;
        let x = crate::vision::embed_tokens(self.tape, pooled, self.v(ix.embed_weight), self.v(ix.embed_pos))?;
        self.dropout(x, site(1, 0xff, 0))
    }

    pub fn encode_primary(&self, tokens: Var) -> Result<Var> {
        let s = self.tape.shape(tokens)?;
        if s.len() != 3 || s[1] != self.config.patch_count() {
            return Err(TangerError::Validation(format!(
                "primary tokens {s:?} do not have {} positions",
                self.config.patch_count()
            )));
        }
        self.encoder_stack(tokens, 0)
    }

    /// Stage outputs `(F2, F3, F4)`; `F4` is the supplementary feature `T_st`.
    pub fn encode_pyramid(&self, tokens: Var) -> Result<(Var, Var, Var)> {
        let s = self.tape.shape(tokens)?;
        if s.len() != 3 || s[1] < 4 {
            return Err(TangerError::Config(format!(
                "the pyramid needs at least 4 tokens, got shape {s:?}"
            )));
        }
        let f2 = self.encoder_stack(tokens, 1)?;
        let f3 = self.encoder_stack(reduce_sequence(self.tape, f2)?, 2)?;
        let f4 = self.encoder_stack(reduce_sequence(self.tape, f3)?, 3)?;
        Ok((f2, f3, f4))
    }

    /// Logits `[batch, maxlen, vocab]` read from the first `maxlen` primary features.
    pub fn recognition_logits(&self, t_pt: Var) -> Result<Var> {
        let lead = self.tape.slice(t_pt, 1, 0, self.config.maxlen)?;
        self.linear(lead, self.layout.recognition)
    }

    fn mlp(&self, x: Var, ix: MlpIx) -> Result<Var> {
        let h = self.tape.gelu(self.linear(x, ix.fc1)?)?;
        self.linear(h, ix.fc2)
    }

    /// `[batch, language_count]`: each branch MLP is max-pooled over its own tokens, then summed.
    pub fn language_logits(&self, t_pt: Var, t_st: Var) -> Result<Var> {
        let ix = self.pyramid_ix()?;
        let a = self.tape.max_axis(self.mlp(t_pt, ix.language_primary)?, 1)?;
        let b = self.tape.max_axis(self.mlp(t_st, ix.language_supplementary)?, 1)?;
        Ok(self.tape.add(a, b)?)
    }

    /// Pre-sigmoid coherence logits `[batch, maxlen]` for the given character ids.
    pub fn coherence_logits(&self, chars: &[usize], t_st: Var) -> Result<Var> {
        let ix = self.pyramid_ix()?;
        let t = self.tape;
        let s = t.shape(t_st)?;
        let (b, c, maxlen) = (s[0], s[2], self.config.maxlen);
        if chars.len() != b * maxlen {
            return Err(TangerError::Validation(format!(
                "{} character ids for a batch of {b} x {maxlen}",
                chars.len()
            )));
        }
        let emb = t.reshape(t.gather(self.v(ix.char_embed), chars)?, &[b, maxlen, c])?;
        let pooled = t.reshape(t.max_axis(t_st, 1)?, &[b, 1, c])?;
        let ctx = t.repeat(pooled, 1, maxlen)?;
        let joint = t.concat(&[emb, ctx], 2)?;
        let logit = self.linear(joint, ix.coherence)?;
        Ok(t.reshape(logit, &[b, maxlen])?)
    }

    /// Coherence scores in `(0, 1)` for the greedy characters of `y`.
    pub fn coherence_scores(&self, y: Var, t_st: Var) -> Result<Var> {
        let chars = argmax_chars(&self.tape.value(y)?);
        Ok(self.tape.sigmoid(self.coherence_logits(&chars, t_st)?)?)
    }
}

/// Pairwise max over non-overlapping windows of 2 along the sequence axis.
pub fn reduce_sequence<F: Element>(tape: &Tape<F>, x: Var) -> Result<Var> {
    Ok(tape.max_pool(x, 1, 2, 2)?)
}

/// Row-wise argmax of a `[.., vocab]` tensor, ties to the lowest id.
pub fn argmax_chars<F: Element>(y: &Tensor<F>) -> Vec<usize> {
    let v = *y.shape().last().unwrap_or(&1);
    y.data()
        .chunks_exact(v)
        .map(|row| {
            let mut best = 0;
            for (i, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Everything one forward pass produces.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub t_pt: Var,
    pub y: Var,
    pub pyramid: Option<PyramidOutputs>,
}

#[derive(Debug, Clone, Copy)]
pub struct PyramidOutputs {
    pub f2: Var,
    pub f3: Var,
    pub f4: Var,
    pub language: Var,
    /// Pre-sigmoid coherence logits for the argmax characters of `y`.
    pub coherence: Var,
}

impl<F: Element> Net<'_, F> {
    /// Full forward over a batch. `pooled` is required when the pyramid branch exists;
    /// `frozen_chars` overrides the argmax used by the coherence head.
    pub fn forward(&self, patches: Var, pooled: Option<Var>, frozen_chars: Option<&[usize]>) -> Result<Forward> {
        let t_pt = self.encode_primary(self.embed_primary(patches)?)?;
        let y = self.recognition_logits(t_pt)?;
        let pyramid = match (self.layout.pyramid.is_some(), pooled) {
            (false, _) => None,
            (true, None) => {
                return Err(TangerError::Validation("pyramid branch needs pooled n-gram features".into()))
            }
            (true, Some(pooled)) => {
                let (f2, f3, f4) = self.encode_pyramid(self.embed_supplementary(pooled)?)?;
                let language = self.language_logits(t_pt, f4)?;
                let chars = match frozen_chars {
                    Some(c) => c.to_vec(),
                    None => argmax_chars(&self.tape.value(y)?),
                };
                let coherence = self.coherence_logits(&chars, f4)?;
                Some(PyramidOutputs {
                    f2,
                    f3,
                    f4,
                    language,
                    coherence,
                })
            }
        };
        Ok(Forward { t_pt, y, pyramid })
    }
}
