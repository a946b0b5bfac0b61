//! Fixed-size n-gram features through 1-D spatial pyramid pooling.

use std::ops::Range;

use tanger_autograd::{Element, Tape, Tensor, Var};

use crate::error::{Result, TangerError};
use crate::vision::{embed_tokens, PatchSequence};
use crate::visual_words::NGramPlan;

pub const DEFAULT_LEVELS: [usize; 3] = [1, 2, 4];

/// Row range of bin `j` when `n` rows are split into `level` adaptive bins.
pub fn spp_bin(n: usize, level: usize, j: usize) -> Range<usize> {
    (j * n) / level..((j + 1) * n).div_ceil(level)
}

pub fn pooled_dim(d_raw: usize, levels: &[usize]) -> usize {
    d_raw * levels.iter().sum::<usize>()
}

/// Max-pools `n x d_raw` rows into `sum(levels)` bins, concatenated level by level.
pub fn spp_pool(group: &[f64], d_raw: usize, levels: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pooled_dim(d_raw, levels));
    spp_pool_into(group, d_raw, levels, &mut out)?;
    Ok(out)
}

fn spp_pool_into(group: &[f64], d_raw: usize, levels: &[usize], out: &mut Vec<f64>) -> Result<()> {
    if d_raw == 0 || group.is_empty() || group.len() % d_raw != 0 {
        return Err(TangerError::Validation(format!(
            "cannot pool a group of {} values with row width {d_raw}",
            group.len()
        )));
    }
    if levels.is_empty() || levels.contains(&0) {
        return Err(TangerError::Validation(format!("invalid pyramid levels {levels:?}")));
    }
    let n = group.len() / d_raw;
    for &level in levels {
        for j in 0..level {
            let bin = spp_bin(n, level, j);
            let at = out.len();
            out.extend_from_slice(&group[bin.start * d_raw..(bin.start + 1) * d_raw]);
            for r in bin.start + 1..bin.end {
                for (o, &v) in out[at..].iter_mut().zip(&group[r * d_raw..(r + 1) * d_raw]) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Pooled n-gram feature of every patch, `P x pooled_dim` row-major.
pub fn pooled_groups(plan: &NGramPlan, seq: &PatchSequence, levels: &[usize]) -> Result<Vec<f64>> {
    if plan.len() != seq.len() {
        return Err(TangerError::Validation(format!(
            "plan covers {} patches but the sequence has {}",
            plan.len(),
            seq.len()
        )));
    }
    let mut out = Vec::with_capacity(seq.len() * pooled_dim(seq.raw_dim(), levels));
    for i in 0..seq.len() {
        let g = plan.group(i);
        spp_pool_into(seq.patch_range(*g.start(), *g.end()), seq.raw_dim(), levels, &mut out)?;
    }
    Ok(out)
}

/// Supplementary tokens of one image: `P x C`.
pub fn embed_supplementary<F: Element>(
    tape: &Tape<F>,
    plan: &NGramPlan,
    seq: &PatchSequence,
    levels: &[usize],
    weight: Var,
    pos: Var,
) -> Result<Var> {
    let pooled = pooled_groups(plan, seq, levels)?;
    let dim = pooled_dim(seq.raw_dim(), levels);
    let x = tape.constant(Tensor::new(
        vec![1, seq.len(), dim],
        pooled.into_iter().map(F::of_f64).collect(),
    )?);
    let tokens = embed_tokens(tape, x, weight, pos)?;
    let c = tape.shape(tokens)?[2];
    Ok(tape.reshape(tokens, &[seq.len(), c])?)
}
