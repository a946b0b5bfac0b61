//! Integer rasterization of glyph strings with scale, rotation and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::glyphs::{is_lit, ScriptTable, GLYPH_COLS, GLYPH_ROWS};
use super::GenConfig;
use crate::error::{Result, TangerError};
use crate::losses::soft_language_target;
use crate::vision::Image;
use crate::vocab::Script;

const ONE: i64 = 1 << 16;

/// `(cos, sin)` of an angle in tenths of a degree, in Q16 fixed point.
///
/// Uses a truncated Taylor series with plain IEEE arithmetic so the result
/// does not depend on the platform's libm.
pub fn cos_sin_q16(decideg: i32) -> (i64, i64) {
    let x = f64::from(decideg) * std::f64::consts::PI / 1800.0;
    let (mut sin, mut cos) = (0.0, 0.0);
    let mut term = 1.0;
    for k in 0..20 {
        // term = x^k / k!
        if k % 2 == 0 {
            cos += if k % 4 == 0 { term } else { -term };
        } else {
            sin += if k % 4 == 1 { term } else { -term };
        }
        term = term * x / f64::from(k + 1);
    }
    ((cos * ONE as f64).round() as i64, (sin * ONE as f64).round() as i64)
}

/// Everything that determines a clean rendering besides the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderParams {
    pub scales_pct: Vec<u32>,
    pub rotation_decideg: i32,
    pub noise_milli: u32,
    pub foreground: [u8; 3],
    pub background: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderMeta {
    pub params: RenderParams,
    pub placement: Placement,
    /// Characters dropped to make the text fit.
    pub retries: usize,
}

/// Where the text box sits: hugging the top-left corner with its rotated
/// corners kept inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    /// Left edge of the unrotated box in pixels.
    pub x_offset: usize,
    /// Pixel row of the rotation centre.
    pub y_center: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub text: String,
    pub language: Vec<f64>,
    pub meta: Option<RenderMeta>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn luminance(c: [u8; 3]) -> u32 {
    (299 * u32::from(c[0]) + 587 * u32::from(c[1]) + 114 * u32::from(c[2])) / 1000
}

/// Renders samples from a [`GenConfig`] and a glyph table.
#[derive(Debug, Clone)]
pub struct Renderer {
    config: GenConfig,
    table: ScriptTable,
}

impl Renderer {
    pub fn new(config: GenConfig) -> Result<Self> {
        config.validate()?;
        let table = ScriptTable::new(config.script_seed)?;
        Ok(Self { config, table })
    }

    pub fn config(&self) -> &GenConfig {
        &self.config
    }

    pub fn table(&self) -> &ScriptTable {
        &self.table
    }

    /// Where every text starts: far enough from the top-left corner that the
    /// largest configured glyph at the largest tilt stays inside the image.
    pub fn anchor(&self) -> Placement {
        let (c, s) = cos_sin_q16(self.config.max_rotation_decideg as i32);
        let (ex, ey) = glyph_extent(self.config.scale_max_pct, c, s.abs());
        let overhang = (ex - self.config.pitch as i64 * ONE / 2).max(0);
        Placement {
            x_offset: ((overhang + ONE - 1) / ONE) as usize,
            y_center: ((ey + ONE - 1) / ONE) as usize,
        }
    }

    /// Whether `len` characters fit on one line from the anchor.
    pub fn fits(&self, len: usize) -> bool {
        let at = self.anchor();
        let end = 2 * at.x_offset + len * self.config.pitch;
        end <= self.config.width && 2 * at.y_center <= self.config.height
    }

    /// Rasterizes `text` with explicit parameters; noise is drawn from `noise_seed`.
    pub fn render_text(&self, text: &str, params: &RenderParams, at: Placement, noise_seed: u64) -> Result<Image> {
        let glyphs = text
            .chars()
            .map(|ch| {
                self.table
                    .glyph(ch)
                    .ok_or_else(|| TangerError::Vocabulary(format!("no glyph for {ch:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if glyphs.len() != params.scales_pct.len() || params.scales_pct.contains(&0) {
            return Err(TangerError::Generation(format!(
                "{} scales for {} characters",
                params.scales_pct.len(),
                glyphs.len()
            )));
        }
        let (h, w) = (self.config.height, self.config.width);
        let pitch = self.config.pitch as i64 * ONE;
        let (c, s) = cos_sin_q16(params.rotation_decideg);
        let x0 = at.x_offset as i64 * ONE;
        let cy = at.y_center as i64 * ONE;

        let glyph_lit = |k: i64, px: i64, py: i64| {
            if !(0..glyphs.len() as i64).contains(&k) {
                return false;
            }
            let dx = px - (x0 + (2 * k + 1) * pitch / 2);
            let dy = py - cy;
            let u = (dx * c + dy * s) >> 16;
            let v = (dy * c - dx * s) >> 16;
            let scale = i64::from(params.scales_pct[k as usize]);
            let gx = (u * 100).div_euclid(scale) + (GLYPH_COLS as i64 + 1) * ONE / 2;
            let gy = (v * 100).div_euclid(scale) + (GLYPH_ROWS as i64 + 1) * ONE / 2;
            let (col, row) = (gx.div_euclid(ONE), gy.div_euclid(ONE));
            (0..GLYPH_COLS as i64).contains(&col)
                && (0..GLYPH_ROWS as i64).contains(&row)
                && is_lit(glyphs[k as usize], row as usize, col as usize)
        };
        // a turned glyph can reach into the neighbouring cells
        let lit_at = |px: i64, py: i64| {
            let k = (px - x0).div_euclid(pitch);
            (k - 1..=k + 1).any(|k| glyph_lit(k, px, py))
        };
        let mut bytes = Vec::with_capacity(h * w * 3);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                // 4x4 supersample; coverage blends background into foreground
                let n = (0..16)
                    .filter(|i| lit_at((8 * x + 2 * (i % 4) + 1) * ONE / 8, (8 * y + 2 * (i / 4) + 1) * ONE / 8))
                    .count() as u32;
                for (f, b) in params.foreground.iter().zip(&params.background) {
                    bytes.push(((u32::from(*f) * n + u32::from(*b) * (16 - n) + 8) / 16) as u8);
                }
            }
        }
        if params.noise_milli > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            for b in &mut bytes {
                // Irwin-Hall: twelve 16-bit uniforms give a unit normal in Q16
                let z: i64 = (0..12).map(|_| i64::from(rng.random::<u16>())).sum::<i64>() - 6 * 65535;
                let delta = z * 255 * i64::from(params.noise_milli);
                let denom = 1000 * ONE;
                let delta = if delta >= 0 {
                    (delta + denom / 2) / denom
                } else {
                    -((denom / 2 - delta) / denom)
                };
                *b = (i64::from(*b) + delta).clamp(0, 255) as u8;
            }
        }
        Image::from_rgb8(h, w, &bytes)
    }

    fn draw_text(&self, rng: &mut ChaCha8Rng) -> String {
        let cfg = &self.config;
        let mut len = rng.random_range(cfg.min_len as u32..=cfg.max_len as u32) as usize;
        let mixed = rng.random_bool(cfg.mix_prob);
        let mut scripts: Vec<Script> = if mixed {
            len = len.max(2);
            let mut v: Vec<Script> = (0..len).map(|_| Script::ALL[rng.random_range(0..3u32) as usize]).collect();
            if v.iter().all(|&s| s == v[0]) {
                let shift = 1 + rng.random_range(0..2u32) as usize;
                v[len - 1] = Script::ALL[(v[0].index() + shift) % 3];
            }
            v
        } else {
            vec![Script::ALL[rng.random_range(0..3u32) as usize]; len]
        };
        scripts.truncate(len);
        scripts
            .iter()
            .map(|s| {
                let chars = s.chars();
                chars[rng.random_range(0..chars.len() as u32) as usize]
            })
            .collect()
    }

    /// Dark background, bright foreground, at least `min_contrast` apart in luminance.
    fn draw_colors(&self, rng: &mut ChaCha8Rng) -> ([u8; 3], [u8; 3]) {
        let bg: [u8; 3] = [rng.random_range(0..96), rng.random_range(0..96), rng.random_range(0..96)];
        for _ in 0..64 {
            let fg: [u8; 3] = [rng.random_range(96..=255), rng.random_range(96..=255), rng.random_range(96..=255)];
            if luminance(fg) >= luminance(bg) + self.config.min_contrast {
                return (fg, bg);
            }
        }
        ([255, 255, 255], bg)
    }

    /// The sample at `index` of the stream identified by `seed`.
    pub fn render_sample(&self, seed: u64, index: u64) -> Result<Sample> {
        let cfg = &self.config;
        let stream = splitmix(splitmix(seed) ^ index);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let mut chars: Vec<char> = self.draw_text(&mut rng).chars().collect();
        let min_scripts = if distinct_scripts(&chars) >= 2 { 2 } else { 1 };
        let scales: Vec<u32> = (0..chars.len())
            .map(|_| rng.random_range(cfg.scale_min_pct..=cfg.scale_max_pct))
            .collect();
        let bound = cfg.max_rotation_decideg as i32;
        let rotation = rng.random_range(-bound..=bound);
        let noise = rng.random_range(0..=cfg.max_noise_milli);
        let (foreground, background) = self.draw_colors(&mut rng);
        let noise_seed = rng.random::<u64>();

        let mut scales = scales;
        let mut retries = 0;
        let placement = loop {
            if self.fits(chars.len()) {
                break self.anchor();
            }
            if retries == cfg.max_retries {
                return Err(TangerError::Generation(format!(
                    "sample {index}: text does not fit after {retries} retries"
                )));
            }
            let drop = (0..chars.len()).rev().find(|&j| {
                let mut rest = chars.clone();
                rest.remove(j);
                !rest.is_empty() && distinct_scripts(&rest) >= min_scripts
            });
            let Some(j) = drop else {
                return Err(TangerError::Generation(format!(
                    "sample {index}: text cannot be shortened further"
                )));
            };
            chars.remove(j);
            scales.remove(j);
            retries += 1;
        };
        let text: String = chars.into_iter().collect();
        let params = RenderParams {
            scales_pct: scales,
            rotation_decideg: rotation,
            noise_milli: noise,
            foreground,
            background,
        };
        let image = self.render_text(&text, &params, placement, noise_seed)?;
        Ok(Sample {
            language: soft_language_target(&text)?,
            image,
            text,
            meta: Some(RenderMeta {
                params,
                placement,
                retries,
            }),
        })
    }
}

/// Half extents of the box around one turned glyph at `scale_pct`; rows
/// reach half a cell further above the centre than below, so the larger side counts.
fn glyph_extent(scale_pct: u32, c: i64, s: i64) -> (i64, i64) {
    let hw = (GLYPH_COLS as i64 + 1) * ONE * i64::from(scale_pct) / 200;
    let hh = (GLYPH_ROWS as i64 + 1) * ONE * i64::from(scale_pct) / 200;
    ((hw * c + hh * s) >> 16, (hw * s + hh * c) >> 16)
}

fn distinct_scripts(chars: &[char]) -> usize {
    let mut seen = [false; 3];
    for &c in chars {
        if let Some(s) = Script::of(c) {
            seen[s.index()] = true;
        }
    }
    seen.iter().filter(|&&b| b).count()
}
