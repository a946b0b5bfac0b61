//! Run configuration: a flat `key = value` file with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Result, TangerError};
use crate::model::ModelConfig;
use crate::optim::AdamConfig;
use crate::pipeline::PlanMode;
use crate::synth::GenConfig;

/// Every setting of a run. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub generator: GenConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub train_count: u64,
    pub val_count: u64,
    /// Datasets are rendered in memory when these are unset.
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub plan_mode: PlanMode,
    pub codebook_iters: usize,
    /// Upper bound on descriptors sampled for k-means; 0 uses all of them.
    pub codebook_pool: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            generator: GenConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 20,
            seed: 42,
            data_seed: 42,
            train_count: 500,
            val_count: 100,
            train_dir: None,
            val_dir: None,
            output_dir: PathBuf::from("run"),
            plan_mode: PlanMode::Adaptive,
            codebook_iters: 25,
            codebook_pool: 16384,
        }
    }
}

/// Documented keys, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for initialization, shuffling and dropout"),
    ("data_seed", "seed of the rendered datasets"),
    ("train_count", "training samples rendered when train_dir is unset"),
    ("val_count", "validation samples rendered when val_dir is unset"),
    ("train_dir", "dataset directory with manifest.tsv (optional)"),
    ("val_dir", "dataset directory with manifest.tsv (optional)"),
    ("output_dir", "where checkpoints and reports are written"),
    ("epochs", "training epochs"),
    ("batch_size", "samples per optimizer step"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("embed_dim", "token width C"),
    ("depth", "encoder blocks"),
    ("heads", "attention heads"),
    ("mlp_ratio", "hidden width of encoder MLPs relative to C"),
    ("maxlen", "decoded positions including the stop token"),
    ("dropout", "dropout rate"),
    ("alpha", "weight of the language and coherence losses"),
    ("pyramid", "build the n-gram pyramid branch (true/false)"),
    ("plan_mode", "adaptive, or fixed:N for a constant n"),
    ("n_min", "smallest candidate n"),
    ("n_max", "largest candidate n"),
    ("spp_levels", "comma-separated pyramid pooling levels"),
    ("codebook_size", "visual words K"),
    ("codebook_iters", "k-means iterations"),
    ("codebook_pool", "max descriptors sampled for k-means (0 = all)"),
    ("descriptor_split", "descriptors per patch side"),
    ("patch", "patch side m in pixels"),
    ("image_height", "image height in pixels"),
    ("image_width", "image width in pixels"),
    ("text_min_len", "shortest rendered text"),
    ("text_max_len", "longest rendered text"),
    ("mix_prob", "probability of mixed-script text"),
    ("scale_min_pct", "smallest glyph scale in percent"),
    ("scale_max_pct", "largest glyph scale in percent"),
    ("max_rotation_decideg", "rotation bound in tenths of a degree"),
    ("max_noise_milli", "noise sigma bound in thousandths"),
    ("pitch", "character advance in pixels"),
    ("script_seed", "seed of the synthetic glyph shapes"),
    ("gen_max_retries", "text shortenings tried before giving up"),
    ("min_contrast", "minimum text/background luminance gap (0-255)"),
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| TangerError::Config(format!("value {v:?} of {key} is not valid")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(TangerError::Config(format!("{key} must be true or false, got {v:?}"))),
    }
}

pub fn parse_plan_mode(v: &str) -> Result<PlanMode> {
    if v == "adaptive" {
        return Ok(PlanMode::Adaptive);
    }
    match v.strip_prefix("fixed:").map(str::parse::<usize>) {
        Some(Ok(n)) if n >= 1 => Ok(PlanMode::Fixed(n)),
        _ => Err(TangerError::Config(format!(
            "plan_mode must be adaptive or fixed:N, got {v:?}"
        ))),
    }
}

pub fn plan_mode_text(mode: PlanMode) -> String {
    match mode {
        PlanMode::Adaptive => "adaptive".into(),
        PlanMode::Fixed(n) => format!("fixed:{n}"),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let g = &mut self.generator;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            "train_count" => self.train_count = parse_num(key, v)?,
            "val_count" => self.val_count = parse_num(key, v)?,
            "train_dir" => self.train_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "val_dir" => self.val_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.adam.lr = parse_num(key, v)?,
            "beta1" => self.adam.beta1 = parse_num(key, v)?,
            "beta2" => self.adam.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam.eps = parse_num(key, v)?,
            "embed_dim" => m.embed_dim = parse_num(key, v)?,
            "depth" => m.depth = parse_num(key, v)?,
            "heads" => m.heads = parse_num(key, v)?,
            "mlp_ratio" => m.mlp_ratio = parse_num(key, v)?,
            "maxlen" => m.maxlen = parse_num(key, v)?,
            "dropout" => m.dropout = parse_num(key, v)?,
            "alpha" => m.alpha = parse_num(key, v)?,
            "pyramid" => m.pyramid = parse_bool(key, v)?,
            "plan_mode" => self.plan_mode = parse_plan_mode(v)?,
            "n_min" => m.n_min = parse_num(key, v)?,
            "n_max" => m.n_max = parse_num(key, v)?,
            "spp_levels" => {
                m.spp_levels = v
                    .split(',')
                    .map(|x| parse_num(key, x.trim()))
                    .collect::<Result<_>>()?
            }
            "codebook_size" => m.codebook_size = parse_num(key, v)?,
            "codebook_iters" => self.codebook_iters = parse_num(key, v)?,
            "codebook_pool" => self.codebook_pool = parse_num(key, v)?,
            "descriptor_split" => m.descriptor_split = parse_num(key, v)?,
            "patch" => m.patch = parse_num(key, v)?,
            "image_height" => {
                m.image_height = parse_num(key, v)?;
                g.height = m.image_height;
            }
            "image_width" => {
                m.image_width = parse_num(key, v)?;
                g.width = m.image_width;
            }
            "text_min_len" => g.min_len = parse_num(key, v)?,
            "text_max_len" => g.max_len = parse_num(key, v)?,
            "mix_prob" => g.mix_prob = parse_num(key, v)?,
            "scale_min_pct" => g.scale_min_pct = parse_num(key, v)?,
            "scale_max_pct" => g.scale_max_pct = parse_num(key, v)?,
            "max_rotation_decideg" => g.max_rotation_decideg = parse_num(key, v)?,
            "max_noise_milli" => g.max_noise_milli = parse_num(key, v)?,
            "pitch" => g.pitch = parse_num(key, v)?,
            "script_seed" => g.script_seed = parse_num(key, v)?,
            "gen_max_retries" => g.max_retries = parse_num(key, v)?,
            "min_contrast" => g.min_contrast = parse_num(key, v)?,
            _ => return Err(TangerError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let (m, g, a) = (&self.model, &self.generator, &self.adam);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "seed" => self.seed.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "train_count" => self.train_count.to_string(),
            "val_count" => self.val_count.to_string(),
            "train_dir" => path(&self.train_dir),
            "val_dir" => path(&self.val_dir),
            "output_dir" => self.output_dir.display().to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => a.lr.to_string(),
            "beta1" => a.beta1.to_string(),
            "beta2" => a.beta2.to_string(),
            "adam_eps" => a.eps.to_string(),
            "embed_dim" => m.embed_dim.to_string(),
            "depth" => m.depth.to_string(),
            "heads" => m.heads.to_string(),
            "mlp_ratio" => m.mlp_ratio.to_string(),
            "maxlen" => m.maxlen.to_string(),
            "dropout" => m.dropout.to_string(),
            "alpha" => m.alpha.to_string(),
            "pyramid" => m.pyramid.to_string(),
            "plan_mode" => plan_mode_text(self.plan_mode),
            "n_min" => m.n_min.to_string(),
            "n_max" => m.n_max.to_string(),
            "spp_levels" => m.spp_levels.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "codebook_size" => m.codebook_size.to_string(),
            "codebook_iters" => self.codebook_iters.to_string(),
            "codebook_pool" => self.codebook_pool.to_string(),
            "descriptor_split" => m.descriptor_split.to_string(),
            "patch" => m.patch.to_string(),
            "image_height" => m.image_height.to_string(),
            "image_width" => m.image_width.to_string(),
            "text_min_len" => g.min_len.to_string(),
            "text_max_len" => g.max_len.to_string(),
            "mix_prob" => g.mix_prob.to_string(),
            "scale_min_pct" => g.scale_min_pct.to_string(),
            "scale_max_pct" => g.scale_max_pct.to_string(),
            "max_rotation_decideg" => g.max_rotation_decideg.to_string(),
            "max_noise_milli" => g.max_noise_milli.to_string(),
            "pitch" => g.pitch.to_string(),
            "script_seed" => g.script_seed.to_string(),
            "gen_max_retries" => g.max_retries.to_string(),
            "min_contrast" => g.min_contrast.to_string(),
            _ => unreachable!("key list and accessor disagree on {key}"),
        }
    }

    /// Parses `key = value` lines over the defaults, then validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TangerError::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(TangerError::Config(format!("line {}: {key} set twice", n + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| TangerError::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        // an unreadable config file is a user error, not a runtime failure
        let text = std::fs::read_to_string(path)
            .map_err(|e| TangerError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| TangerError::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical text form; `parse(to_text())` reproduces the configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            writeln!(out, "{key} = {}", self.get(key)).expect("writing to a String");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.generator.validate()?;
        let bad = |m: String| Err(TangerError::Config(m));
        if self.model.vocab_size != crate::vocab::Vocab::new().size() || self.model.language_count != 3 {
            return bad("vocabulary size and language count are fixed by the character set".into());
        }
        if self.generator.height != self.model.image_height || self.generator.width != self.model.image_width {
            return bad("generator and model image sizes differ".into());
        }
        if self.generator.max_len + 1 > self.model.maxlen {
            return bad(format!(
                "text_max_len {} leaves no room for the stop token within maxlen {}",
                self.generator.max_len, self.model.maxlen
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return bad("Adam settings out of range".into());
        }
        if self.codebook_iters == 0 {
            return bad("codebook_iters must be positive".into());
        }
        if self.codebook_pool != 0 && self.codebook_pool < self.model.codebook_size {
            return bad(format!(
                "codebook_pool {} is smaller than codebook_size {}",
                self.codebook_pool, self.model.codebook_size
            ));
        }
        if let PlanMode::Fixed(0) = self.plan_mode {
            return bad("fixed n must be at least 1".into());
        }
        Ok(())
    }
}
