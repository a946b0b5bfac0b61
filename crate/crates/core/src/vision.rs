//! Image to patch sequence, per-patch descriptors, and primary token embedding.

use tanger_autograd::{Element, Tape, Tensor, Var};

use crate::error::{Result, TangerError};

/// RGB image, row-major with interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(TangerError::Validation(format!(
                "image {height}x{width}x3 needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 8-bit channel values, `round(255 * v)` clamped.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Zero mean, unit variance over all pixels and channels; a flat image
    /// only loses its mean.
    pub fn standardized(&self) -> Self {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        let var = self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = if var > 1e-12 { var.sqrt().recip() } else { 1.0 };
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v - mean) * scale).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }
}

/// Non-overlapping `side x side` patches in row-major scan order.
///
/// Patch features are the raw RGB values of the patch, pixel-row-major with
/// interleaved channels, so `raw_dim = 3 * side^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    patches: Vec<f64>,
    rows: usize,
    cols: usize,
    side: usize,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn raw_dim(&self) -> usize {
        3 * self.side * self.side
    }

    /// All patches as a `len x raw_dim` row-major matrix.
    pub fn as_matrix(&self) -> &[f64] {
        &self.patches
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let d = self.raw_dim();
        &self.patches[i * d..(i + 1) * d]
    }

    /// Rows `start..=end` of the patch matrix.
    pub fn patch_range(&self, start: usize, end: usize) -> &[f64] {
        let d = self.raw_dim();
        &self.patches[start * d..(end + 1) * d]
    }
}

pub fn patchify(image: &Image, side: usize) -> Result<PatchSequence> {
    let (h, w) = (image.height, image.width);
    if side < 2 || h % side != 0 || w % side != 0 {
        return Err(TangerError::Validation(format!(
            "image of height {h} and width {w} cannot be split into {side}x{side} patches"
        )));
    }
    let (rows, cols) = (h / side, w / side);
    let mut patches = Vec::with_capacity(h * w * 3);
    for pr in 0..rows {
        for pc in 0..cols {
            for y in pr * side..(pr + 1) * side {
                let start = (y * w + pc * side) * 3;
                patches.extend_from_slice(&image.data[start..start + side * 3]);
            }
        }
    }
    Ok(PatchSequence {
        patches,
        rows,
        cols,
        side,
    })
}

/// Inverse of [`patchify`].
pub fn reassemble(seq: &PatchSequence) -> Image {
    let (side, w) = (seq.side, seq.cols * seq.side);
    let h = seq.rows * side;
    let mut data = vec![0.0; h * w * 3];
    for i in 0..seq.len() {
        let (pr, pc) = (i / seq.cols, i % seq.cols);
        for (dy, row) in seq.patch(i).chunks_exact(side * 3).enumerate() {
            let start = ((pr * side + dy) * w + pc * side) * 3;
            data[start..start + side * 3].copy_from_slice(row);
        }
    }
    Image {
        height: h,
        width: w,
        data,
    }
}

/// `split^2` sub-block descriptors per patch (raw RGB of each sub-block).
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    data: Vec<f64>,
    patches: usize,
    per_patch: usize,
    dim: usize,
}

impl DescriptorSet {
    /// Builds a set from explicit descriptors, `per_patch` consecutive rows per patch.
    pub fn from_rows(data: Vec<f64>, patches: usize, per_patch: usize, dim: usize) -> Result<Self> {
        if dim == 0 || per_patch == 0 || data.len() != patches * per_patch * dim {
            return Err(TangerError::Validation(format!(
                "{} values do not form {patches} patches x {per_patch} descriptors x {dim}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            patches,
            per_patch,
            dim,
        })
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn per_patch(&self) -> usize {
        self.per_patch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.patches * self.per_patch
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All descriptors as a `len x dim` row-major matrix.
    pub fn as_matrix(&self) -> &[f64] {
        &self.data
    }

    pub fn descriptor(&self, patch: usize, j: usize) -> &[f64] {
        let at = (patch * self.per_patch + j) * self.dim;
        &self.data[at..at + self.dim]
    }

    /// The descriptors of one patch, `per_patch x dim`.
    pub fn of_patch(&self, patch: usize) -> &[f64] {
        let n = self.per_patch * self.dim;
        &self.data[patch * n..(patch + 1) * n]
    }
}

pub fn extract_descriptors(seq: &PatchSequence, split: usize) -> Result<DescriptorSet> {
    let m = seq.side;
    if split == 0 || m % split != 0 {
        return Err(TangerError::Validation(format!(
            "descriptor split {split} does not divide patch side {m}"
        )));
    }
    let sub = m / split;
    let dim = 3 * sub * sub;
    let mut data = Vec::with_capacity(seq.len() * split * split * dim);
    for i in 0..seq.len() {
        let p = seq.patch(i);
        for qy in 0..split {
            for qx in 0..split {
                for y in qy * sub..(qy + 1) * sub {
                    let start = (y * m + qx * sub) * 3;
                    data.extend_from_slice(&p[start..start + sub * 3]);
                }
            }
        }
    }
    Ok(DescriptorSet {
        data,
        patches: seq.len(),
        per_patch: split * split,
        dim,
    })
}

/// `tokens[b, i] = x[b, i] @ weight + pos[i]` for a `[batch, len, d_in]` input.
///
/// Only the first `len` rows of the position table are used.
pub fn embed_tokens<F: Element>(tape: &Tape<F>, x: Var, weight: Var, pos: Var) -> Result<Var> {
    let shape = tape.shape(x)?;
    let pos_shape = tape.shape(pos)?;
    if shape.len() != 3 || pos_shape.len() != 2 {
        return Err(TangerError::Validation(format!(
            "embedding expects [batch, len, dim] input and [len, C] positions, got {shape:?} / {pos_shape:?}"
        )));
    }
    let (batch, len) = (shape[0], shape[1]);
    if pos_shape[0] < len {
        return Err(TangerError::Config(format!(
            "position table has {} rows but the sequence has {len} patches",
            pos_shape[0]
        )));
    }
    let c = pos_shape[1];
    let tokens = tape.matmul(x, weight)?;
    let pos = if pos_shape[0] == len { pos } else { tape.slice(pos, 0, 0, len)? };
    let pos = tape.reshape(pos, &[len * c])?;
    let flat = tape.reshape(tokens, &[batch, len * c])?;
    let flat = tape.add_bias(flat, pos)?;
    Ok(tape.reshape(flat, &[batch, len, c])?)
}

/// Primary embedding of one patch sequence: `P x C` tokens.
pub fn embed_primary<F: Element>(tape: &Tape<F>, seq: &PatchSequence, weight: Var, pos: Var) -> Result<Var> {
    let x = Tensor::new(
        vec![1, seq.len(), seq.raw_dim()],
        seq.as_matrix().iter().map(|&v| F::of_f64(v)).collect(),
    )?;
    let x = tape.constant(x);
    let tokens = embed_tokens(tape, x, weight, pos)?;
    let c = tape.shape(tokens)?[2];
    Ok(tape.reshape(tokens, &[seq.len(), c])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::new(h, w, (0..h * w * 3).map(|i| (i % 251) as f64 / 251.0).collect()).unwrap()
    }

    #[test]
    fn patch_grid_counts() {
        let s = patchify(&Image::filled(32, 128, 0.0), 8).unwrap();
        assert_eq!((s.len(), s.rows(), s.cols(), s.raw_dim()), (64, 4, 16, 192));
        let s = patchify(&Image::filled(24, 24, 0.0), 8).unwrap();
        assert_eq!((s.len(), s.rows(), s.cols()), (9, 3, 3));
    }

    #[test]
    fn non_divisible_image_is_rejected() {
        let err = patchify(&Image::filled(30, 128, 0.0), 8).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("30") && msg.contains("128") && msg.contains('8'), "{msg}");
        assert!(patchify(&Image::filled(8, 8, 0.0), 1).is_err());
    }

    #[test]
    fn patches_follow_row_major_scan() {
        let img = ramp(16, 24);
        let s = patchify(&img, 8).unwrap();
        // patch 4 is row 1, column 1; its first value is pixel (8, 8)
        assert_eq!(s.patch(4)[..3], img.pixel(8, 8));
        assert_eq!(s.patch(2)[3..6], img.pixel(0, 17));
        assert_eq!(reassemble(&s), img);
    }

    #[test]
    fn descriptor_layout() {
        let s = patchify(&ramp(8, 16), 8).unwrap();
        let d = extract_descriptors(&s, 2).unwrap();
        assert_eq!((d.len(), d.per_patch(), d.dim()), (8, 4, 48));
        // quadrant (1, 0) of patch 0 starts at pixel (4, 0)
        assert_eq!(d.descriptor(0, 2)[..3], s.patch(0)[4 * 8 * 3..4 * 8 * 3 + 3]);
        assert!(extract_descriptors(&s, 3).is_err());
    }

    #[test]
    fn uniform_patch_has_identical_descriptors() {
        let s = patchify(&Image::filled(8, 8, 0.5), 8).unwrap();
        let d = extract_descriptors(&s, 2).unwrap();
        for j in 1..4 {
            assert_eq!(d.descriptor(0, j), d.descriptor(0, 0));
        }
    }

    #[test]
    fn embed_primary_cases() {
        let tape = Tape::<f64>::new();
        let s = patchify(&Image::filled(16, 16, 0.0), 8).unwrap();
        let w = tape.param(Tensor::full(&[192, 4], 0.3));
        let pos = tape.param(Tensor::zeros(&[4, 4]));
        let t = embed_primary(&tape, &s, w, pos).unwrap();
        assert!(tape.value(t).unwrap().data().iter().all(|&v| v == 0.0));

        let img = ramp(8, 16);
        let s = patchify(&img, 2).unwrap();
        let w = tape.param(Tensor::eye(12));
        let pos = tape.param(Tensor::zeros(&[s.len(), 12]));
        let t = embed_primary(&tape, &s, w, pos).unwrap();
        assert_eq!(tape.value(t).unwrap().data(), s.as_matrix());

        let short = tape.param(Tensor::zeros(&[3, 12]));
        assert!(matches!(embed_primary(&tape, &s, w, short), Err(TangerError::Config(_))));
    }
}
