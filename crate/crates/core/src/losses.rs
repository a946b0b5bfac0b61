//! Training targets and the vision, language-category, coherence and total losses.

use tanger_autograd::{Element, Tape, Tensor, Var};

use crate::error::{Result, TangerError};
use crate::vocab::{Script, Vocab, PAD, STOP};

/// Supervision for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEncoding {
    /// `maxlen` class ids: the text, `[s]`, then pad.
    pub chars: Vec<usize>,
    /// Text length plus one for `[s]`.
    pub effective_len: usize,
    pub language: Vec<f64>,
}

impl TargetEncoding {
    pub fn new(text: &str, vocab: &Vocab, maxlen: usize) -> Result<Self> {
        let mut chars = vocab.encode(text)?;
        if chars.is_empty() || chars.len() + 1 > maxlen {
            return Err(TangerError::Validation(format!(
                "text {text:?} has {} characters; need 1..={}",
                chars.len(),
                maxlen.saturating_sub(1)
            )));
        }
        let effective_len = chars.len() + 1;
        chars.push(STOP);
        chars.resize(maxlen, PAD);
        Ok(Self {
            chars,
            effective_len,
            language: soft_language_target(text)?,
        })
    }
}

/// Per-script share of the characters of `text`, in [`Script::ALL`] order.
pub fn soft_language_target(text: &str) -> Result<Vec<f64>> {
    let mut counts = [0usize; 3];
    for c in text.chars() {
        let s = Script::of(c).ok_or_else(|| {
            TangerError::Vocabulary(format!("character {c:?} (U+{:04X}) belongs to no script", c as u32))
        })?;
        counts[s.index()] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(TangerError::Validation("empty text has no language distribution".into()));
    }
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

fn check_batch<F: Element>(tape: &Tape<F>, x: Var, rank: usize, batch: usize, what: &str) -> Result<Vec<usize>> {
    let s = tape.shape(x)?;
    if s.len() != rank || s[0] != batch {
        return Err(TangerError::Validation(format!(
            "{what} has shape {s:?} for a batch of {batch}"
        )));
    }
    Ok(s)
}

/// Mean over the batch of the per-sample mean cross entropy over positions up to `[s]`.
pub fn loss_vision<F: Element>(tape: &Tape<F>, y: Var, targets: &[TargetEncoding]) -> Result<Var> {
    let b = targets.len();
    let s = check_batch(tape, y, 3, b, "recognition logits")?;
    let (maxlen, v) = (s[1], s[2]);
    let mut w = vec![F::zero(); b * maxlen * v];
    for (bi, t) in targets.iter().enumerate() {
        if t.chars.len() != maxlen || t.effective_len > maxlen {
            return Err(TangerError::Validation(format!(
                "target of {} positions does not match maxlen {maxlen}",
                t.chars.len()
            )));
        }
        let scale = F::of_f64(1.0 / (t.effective_len * b) as f64);
        for (i, &c) in t.chars[..t.effective_len].iter().enumerate() {
            w[(bi * maxlen + i) * v + c] = scale;
        }
    }
    let logp = tape.log_softmax(y, 2)?;
    let weights = tape.constant(Tensor::new(s, w)?);
    let picked = tape.sum(tape.mul(logp, weights)?)?;
    Ok(tape.scale(picked, -1.0)?)
}

/// Soft cross entropy `-sum_c t_c log softmax(z)_c`, averaged over the batch.
pub fn loss_language_class<F: Element>(tape: &Tape<F>, logits: Var, targets: &[Vec<f64>]) -> Result<Var> {
    let s = check_batch(tape, logits, 2, targets.len(), "language logits")?;
    let mut data = Vec::with_capacity(s[0] * s[1]);
    for t in targets {
        if t.len() != s[1] {
            return Err(TangerError::Validation(format!(
                "language target has {} entries, logits have {}",
                t.len(),
                s[1]
            )));
        }
        data.extend(t.iter().map(|&p| F::of_f64(p)));
    }
    Ok(tape.cross_entropy(logits, &Tensor::new(s, data)?)?)
}

fn position_weights<F: Element>(effective_lens: &[usize], maxlen: usize) -> Result<Tensor<F>> {
    let b = effective_lens.len();
    let mut w = vec![F::zero(); b * maxlen];
    for (bi, &len) in effective_lens.iter().enumerate() {
        if len == 0 || len > maxlen {
            return Err(TangerError::Validation(format!(
                "effective length {len} outside 1..={maxlen}"
            )));
        }
        let scale = F::of_f64(1.0 / (len * b) as f64);
        w[bi * maxlen..bi * maxlen + len].fill(scale);
    }
    Ok(Tensor::new(vec![b, maxlen], w)?)
}

/// `-mean log score` over supervised positions, averaged over the batch.
/// Scores are `[batch, maxlen]` and must lie strictly inside `(0, 1)`.
pub fn loss_coherence<F: Element>(tape: &Tape<F>, scores: Var, effective_lens: &[usize]) -> Result<Var> {
    let s = check_batch(tape, scores, 2, effective_lens.len(), "coherence scores")?;
    let values = tape.value(scores)?;
    for (bi, &len) in effective_lens.iter().enumerate() {
        for &v in values.data()[bi * s[1]..].iter().take(len.min(s[1])) {
            if !(v > F::zero() && v < F::one()) {
                return Err(TangerError::Numeric(format!("coherence score {v} outside (0, 1)")));
            }
        }
    }
    let w = tape.constant(position_weights(effective_lens, s[1])?);
    let total = tape.sum(tape.mul(tape.log(scores)?, w)?)?;
    Ok(tape.scale(total, -1.0)?)
}

/// Same quantity as [`loss_coherence`] computed from pre-sigmoid logits.
pub fn loss_coherence_logits<F: Element>(tape: &Tape<F>, logits: Var, effective_lens: &[usize]) -> Result<Var> {
    let s = check_batch(tape, logits, 2, effective_lens.len(), "coherence logits")?;
    let w = tape.constant(position_weights(effective_lens, s[1])?);
    let total = tape.sum(tape.mul(tape.log_sigmoid(logits)?, w)?)?;
    Ok(tape.scale(total, -1.0)?)
}

/// `loss_v + alpha * (l_class + l_score)`.
pub fn loss_total<F: Element>(tape: &Tape<F>, loss_v: Var, l_class: Var, l_score: Var, alpha: f64) -> Result<Var> {
    for (name, v) in [("loss_v", loss_v), ("l_class", l_class), ("l_score", l_score)] {
        let x = tape.value(v)?.item()?;
        if !x.is_finite() {
            return Err(TangerError::Numeric(format!("{name} is {x}")));
        }
    }
    if !alpha.is_finite() {
        return Err(TangerError::Numeric(format!("alpha is {alpha}")));
    }
    let clr = tape.add(l_class, l_score)?;
    Ok(tape.add(loss_v, tape.scale(clr, alpha)?)?)
}
