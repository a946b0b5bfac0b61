//! Greedy decoding, edit distance, character accuracy and edit-distance histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Result, TangerError};
use crate::vocab::{Script, Vocab, STOP};

/// Distances at or above this land in the last bucket.
pub const TAIL_BUCKET: usize = 10;

/// Per-position ids truncated at the first `[s]`; pad and unknown ids are dropped.
pub fn decode_ids(ids: &[usize], vocab: &Vocab) -> String {
    ids.iter()
        .take_while(|&&id| id != STOP)
        .filter_map(|&id| vocab.char_of(id))
        .collect()
}

/// Levenshtein distance over Unicode scalar values with unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `max(0, 1 - sum ED / sum len(gt))` over `(prediction, ground truth)` pairs.
pub fn char_accuracy<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, T)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(TangerError::Validation("no pairs to score".into()));
    }
    let mut dist = 0usize;
    let mut len = 0usize;
    for (pred, gt) in pairs {
        let (pred, gt) = (pred.as_ref(), gt.as_ref());
        if gt.is_empty() {
            return Err(TangerError::Validation("ground-truth text is empty".into()));
        }
        dist += edit_distance(pred, gt);
        len += gt.chars().count();
    }
    Ok((1.0 - dist as f64 / len as f64).max(0.0))
}

/// Subsets of samples a histogram can be restricted to, by ground-truth scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScriptFilter {
    All,
    /// Ground truth written entirely in one script.
    Only(Script),
    /// Ground truth mixing at least two scripts.
    Mixed,
}

impl ScriptFilter {
    pub const REPORTED: [ScriptFilter; 5] = [
        ScriptFilter::All,
        ScriptFilter::Only(Script::Latin),
        ScriptFilter::Only(Script::Digits),
        ScriptFilter::Only(Script::Synth),
        ScriptFilter::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptFilter::All => "all",
            ScriptFilter::Only(s) => s.name(),
            ScriptFilter::Mixed => "mixed",
        }
    }

    pub fn matches(self, gt: &str) -> bool {
        let mut seen = [false; 3];
        for c in gt.chars() {
            if let Some(s) = Script::of(c) {
                seen[s.index()] = true;
            }
        }
        let count = seen.iter().filter(|&&b| b).count();
        match self {
            ScriptFilter::All => true,
            ScriptFilter::Only(s) => count == 1 && seen[s.index()],
            ScriptFilter::Mixed => count >= 2,
        }
    }
}

/// Bucketed counts of per-pair edit distances, buckets `0..=TAIL_BUCKET`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditHistogram {
    pub buckets: [usize; TAIL_BUCKET + 1],
}

impl EditHistogram {
    pub fn total(&self) -> usize {
        self.buckets.iter().sum()
    }
}

pub fn edit_distance_histogram<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, T)], filter: ScriptFilter) -> EditHistogram {
    let mut buckets = [0; TAIL_BUCKET + 1];
    for (pred, gt) in pairs {
        if filter.matches(gt.as_ref()) {
            buckets[edit_distance(pred.as_ref(), gt.as_ref()).min(TAIL_BUCKET)] += 1;
        }
    }
    EditHistogram { buckets }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub char_accuracy: f64,
    pub mean_edit_distance: f64,
    pub samples: usize,
    pub histograms: BTreeMap<ScriptFilter, EditHistogram>,
    /// Character accuracy restricted to each non-empty reported subset.
    pub subset_accuracy: BTreeMap<ScriptFilter, f64>,
}

impl MetricsReport {
    pub fn from_pairs<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, T)]) -> Result<Self> {
        let accuracy = char_accuracy(pairs)?;
        let total: usize = pairs.iter().map(|(p, g)| edit_distance(p.as_ref(), g.as_ref())).sum();
        Ok(Self {
            char_accuracy: accuracy,
            mean_edit_distance: total as f64 / pairs.len() as f64,
            samples: pairs.len(),
            histograms: ScriptFilter::REPORTED
                .iter()
                .map(|&f| (f, edit_distance_histogram(pairs, f)))
                .collect(),
            subset_accuracy: ScriptFilter::REPORTED
                .iter()
                .filter_map(|&f| {
                    let subset: Vec<(&str, &str)> = pairs
                        .iter()
                        .filter(|(_, g)| f.matches(g.as_ref()))
                        .map(|(p, g)| (p.as_ref(), g.as_ref()))
                        .collect();
                    char_accuracy(&subset).ok().map(|a| (f, a))
                })
                .collect(),
        })
    }

    /// `script,distance_bucket,frequency` rows; the tail bucket is written `>=10`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("script,distance_bucket,frequency\n");
        for (filter, h) in &self.histograms {
            for (d, n) in h.buckets.iter().enumerate() {
                let bucket = if d == TAIL_BUCKET { format!(">={TAIL_BUCKET}") } else { d.to_string() };
                writeln!(out, "{},{bucket},{n}", filter.name()).expect("writing to a String");
            }
        }
        out
    }
}
