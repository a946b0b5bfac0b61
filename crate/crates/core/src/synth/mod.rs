//! Deterministic multi-script text images and their on-disk layout.

mod dataset;
mod glyphs;
mod render;

pub use dataset::{generate_dataset, load_dataset, read_ppm, write_ppm, DatasetReader, MANIFEST};
pub use glyphs::{is_lit, mirror, Glyph, ScriptTable, GLYPH_COLS, GLYPH_ROWS};
pub use render::{cos_sin_q16, RenderMeta, RenderParams, Renderer, Sample};

use crate::error::{Result, TangerError};

/// Generator settings. Angles are in tenths of a degree, noise in thousandths.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub height: usize,
    pub width: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a sample mixes at least two scripts.
    pub mix_prob: f64,
    pub scale_min_pct: u32,
    pub scale_max_pct: u32,
    pub max_rotation_decideg: u32,
    pub max_noise_milli: u32,
    /// Horizontal advance per character, in pixels.
    pub pitch: usize,
    pub script_seed: u64,
    pub max_retries: usize,
    /// Minimum luminance gap between text and background, 0..=255.
    pub min_contrast: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 128,
            min_len: 3,
            max_len: 10,
            mix_prob: 0.5,
            scale_min_pct: 70,
            scale_max_pct: 140,
            max_rotation_decideg: 150,
            max_noise_milli: 100,
            pitch: 8,
            script_seed: 0x5eed,
            max_retries: 8,
            min_contrast: 96,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TangerError::Config(m));
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("text length range {}..={} is empty", self.min_len, self.max_len));
        }
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return bad(format!("mix probability {} outside [0, 1]", self.mix_prob));
        }
        if self.scale_min_pct == 0 || self.scale_min_pct > self.scale_max_pct || self.scale_max_pct > 400 {
            return bad(format!(
                "scale range {}..={} percent is invalid",
                self.scale_min_pct, self.scale_max_pct
            ));
        }
        if self.max_rotation_decideg > 450 {
            return bad(format!("rotation bound {} exceeds 45 degrees", self.max_rotation_decideg));
        }
        if self.max_noise_milli > 1000 {
            return bad(format!("noise bound {} exceeds 1.0", self.max_noise_milli));
        }
        if self.pitch == 0 || self.height == 0 || self.width == 0 {
            return bad("image size and pitch must be positive".into());
        }
        if self.min_contrast > 200 {
            return bad(format!("contrast {} is unattainable", self.min_contrast));
        }
        Ok(())
    }
}
