//! PPM images plus a tab-separated manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::render::{Renderer, Sample};
use crate::error::{Result, TangerError};
use crate::losses::soft_language_target;
use crate::vision::Image;
use crate::vocab::Script;

pub const MANIFEST: &str = "manifest.tsv";

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.extend_from_slice(&image.to_rgb8());
    fs::write(path, bytes).map_err(|e| TangerError::io(path, e))
}

fn ppm_err(path: &Path, detail: impl Into<String>) -> TangerError {
    TangerError::Load {
        path: path.to_path_buf(),
        line: 1,
        detail: detail.into(),
    }
}

/// Reads a binary `P6` image with maximum value 255.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| TangerError::io(path, e))?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ppm_err(path, "truncated PPM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P6" {
        return Err(ppm_err(path, format!("expected P6 magic, found {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| ppm_err(path, format!("bad header field {s:?}")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(ppm_err(path, format!("maximum value {max}, expected 255")));
    }
    let need = w * h * 3;
    if bytes.len() < pos || bytes.len() - pos != need {
        return Err(ppm_err(
            path,
            format!("raster has {} bytes, header promises {need}", bytes.len().saturating_sub(pos)),
        ));
    }
    Image::from_rgb8(h, w, &bytes[pos..])
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(text: &str) -> Option<String> {
    let mut out = String::with_capacity(text.len());
    let mut it = text.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next()? {
            '\\' => out.push('\\'),
            't' => out.push('\t'),
            'n' => out.push('\n'),
            _ => return None,
        }
    }
    Some(out)
}

pub fn image_name(index: u64) -> String {
    format!("{index:06}.ppm")
}

fn manifest_line(name: &str, text: &str, language: &[f64]) -> String {
    let weights: Vec<String> = Script::ALL
        .iter()
        .zip(language)
        .map(|(s, w)| format!("{}:{w}", s.name()))
        .collect();
    format!("{name}\t{}\t{}\n", escape(text), weights.join(","))
}

/// Renders samples `0..count` of stream `seed` into `dir`.
pub fn generate_dataset(renderer: &Renderer, seed: u64, count: u64, dir: &Path) -> Result<Vec<Sample>> {
    fs::create_dir_all(dir).map_err(|e| TangerError::io(dir, e))?;
    let mut manifest = String::new();
    let mut samples = Vec::with_capacity(count as usize);
    for index in 0..count {
        let sample = renderer.render_sample(seed, index)?;
        let name = image_name(index);
        write_ppm(&dir.join(&name), &sample.image)?;
        manifest.push_str(&manifest_line(&name, &sample.text, &sample.language));
        samples.push(sample);
    }
    let path = dir.join(MANIFEST);
    let mut f = fs::File::create(&path).map_err(|e| TangerError::io(&path, e))?;
    f.write_all(manifest.as_bytes()).map_err(|e| TangerError::io(&path, e))?;
    Ok(samples)
}

/// Streams samples of a dataset directory in manifest order.
pub struct DatasetReader {
    dir: PathBuf,
    manifest: PathBuf,
    lines: std::io::Lines<BufReader<fs::File>>,
    line: usize,
    geometry: Option<(usize, usize)>,
}

impl DatasetReader {
    /// `geometry` is the required `(height, width)`; when absent, the first image sets it.
    pub fn open(dir: &Path, geometry: Option<(usize, usize)>) -> Result<Self> {
        let manifest = dir.join(MANIFEST);
        let f = fs::File::open(&manifest).map_err(|e| TangerError::io(&manifest, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            lines: BufReader::new(f).lines(),
            line: 0,
            geometry,
        })
    }

    fn load_err(&self, detail: impl Into<String>) -> TangerError {
        TangerError::Load {
            path: self.manifest.clone(),
            line: self.line,
            detail: detail.into(),
        }
    }

    fn parse(&mut self, raw: &str) -> Result<Sample> {
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(self.load_err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let name = fields[0];
        if name.is_empty() || name.contains('/') || name.contains('\\') {
            return Err(self.load_err(format!("bad image file name {name:?}")));
        }
        let text = unescape(fields[1]).ok_or_else(|| self.load_err("bad escape in text"))?;
        let mut language = vec![None; Script::ALL.len()];
        for part in fields[2].split(',') {
            let (tag, w) = part
                .split_once(':')
                .ok_or_else(|| self.load_err(format!("malformed script weight {part:?}")))?;
            let script: Script = tag.parse().map_err(|_| {
                TangerError::Vocabulary(format!("{}:{}: unknown script tag {tag:?}", self.manifest.display(), self.line))
            })?;
            let w: f64 = w
                .parse()
                .map_err(|_| self.load_err(format!("weight {w:?} is not a number")))?;
            if language[script.index()].replace(w).is_some() {
                return Err(self.load_err(format!("script {tag} listed twice")));
            }
        }
        let language: Vec<f64> = language.into_iter().map(|w| w.unwrap_or(0.0)).collect();
        let expected = soft_language_target(&text).map_err(|e| match e {
            TangerError::Vocabulary(m) => {
                TangerError::Vocabulary(format!("{}:{}: {m}", self.manifest.display(), self.line))
            }
            other => self.load_err(other.to_string()),
        })?;
        if expected.iter().zip(&language).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(self.load_err(format!(
                "script weights {language:?} disagree with the text's {expected:?}"
            )));
        }
        let path = self.dir.join(name);
        if !path.is_file() {
            return Err(self.load_err(format!("missing image {}", path.display())));
        }
        let image = read_ppm(&path).map_err(|e| self.load_err(e.to_string()))?;
        let dims = (image.height(), image.width());
        match self.geometry {
            None => self.geometry = Some(dims),
            Some(g) if g != dims => {
                return Err(self.load_err(format!(
                    "image {name} is {}x{}, expected {}x{}",
                    dims.0, dims.1, g.0, g.1
                )))
            }
            Some(_) => {}
        }
        Ok(Sample {
            image,
            text,
            language,
            meta: None,
        })
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        let raw = self.lines.next()?;
        self.line += 1;
        Some(match raw {
            Ok(raw) => self.parse(&raw),
            Err(e) => Err(TangerError::io(&self.manifest, e)),
        })
    }
}

pub fn load_dataset(dir: &Path, geometry: Option<(usize, usize)>) -> Result<Vec<Sample>> {
    DatasetReader::open(dir, geometry)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_round_trip() {
        for t in ["plain", "tab\there", "back\\slash", "new\nline", "\\t"] {
            assert_eq!(unescape(&escape(t)).unwrap(), t);
            assert!(!escape(t).contains('\t'));
        }
        assert!(unescape("bad\\x").is_none());
    }
}
