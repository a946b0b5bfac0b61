//! Bag-of-visual-words codebook and adaptive n-gram selection.
//!
//! Patches and words are indexed from 0 here. Patch `i` can form an n-gram
//! with its `n - 1` predecessors in scan order as long as `n <= i + 1`.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Result, TangerError};
use crate::vision::DescriptorSet;

/// Default candidate gram counts.
pub const DEFAULT_N_RANGE: RangeInclusive<usize> = 2..=5;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f64>,
    k: usize,
    dim: usize,
    digest: String,
}

impl Codebook {
    pub fn new(centroids: Vec<f64>, k: usize, dim: usize, digest: String) -> Result<Self> {
        if k < 2 {
            return Err(TangerError::Validation(format!("codebook needs at least 2 words, got {k}")));
        }
        if dim == 0 || centroids.len() != k * dim {
            return Err(TangerError::Validation(format!(
                "{} centroid values do not form {k} words of dim {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(TangerError::Numeric("codebook contains non-finite centroids".into()));
        }
        Ok(Self {
            centroids,
            k,
            dim,
            digest,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn centroid(&self, w: usize) -> &[f64] {
        &self.centroids[w * self.dim..(w + 1) * self.dim]
    }

    /// Hex SHA-256 of the descriptors the codebook was trained on.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Nearest word by squared distance; ties go to the lowest index.
    pub fn assign(&self, descriptor: &[f64]) -> Result<usize> {
        if descriptor.len() != self.dim {
            return Err(TangerError::Validation(format!(
                "descriptor has dim {}, codebook expects {}",
                descriptor.len(),
                self.dim
            )));
        }
        Ok(nearest(&self.centroids, self.dim, descriptor).0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (w, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (w, d);
        }
    }
    best
}

pub fn assign_word(descriptor: &[f64], codebook: &Codebook) -> Result<usize> {
    codebook.assign(descriptor)
}

pub fn descriptor_digest(pool: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in pool {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Codebook plus the within-cluster sum of squares after each assignment pass.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook,
    pub wcss: Vec<f64>,
}

/// Lloyd's k-means over a `rows x dim` pool with farthest-point initialization.
pub fn build_codebook(pool: &[f64], dim: usize, k: usize, iters: usize, seed: u64) -> Result<Codebook> {
    Ok(fit_kmeans(pool, dim, k, iters, seed)?.codebook)
}

pub fn build_codebook_from(descriptors: &DescriptorSet, k: usize, iters: usize, seed: u64) -> Result<Codebook> {
    build_codebook(descriptors.as_matrix(), descriptors.dim(), k, iters, seed)
}

pub fn fit_kmeans(pool: &[f64], dim: usize, k: usize, iters: usize, seed: u64) -> Result<KMeansFit> {
    if k < 2 {
        return Err(TangerError::Validation(format!("codebook needs at least 2 words, got {k}")));
    }
    if iters == 0 {
        return Err(TangerError::Validation("k-means needs at least one iteration".into()));
    }
    if dim == 0 || pool.len() % dim != 0 {
        return Err(TangerError::Validation(format!(
            "pool of {} values is not a whole number of dim-{dim} descriptors",
            pool.len()
        )));
    }
    let rows = pool.len() / dim;
    if rows < k {
        return Err(TangerError::Validation(format!(
            "descriptor pool has {rows} entries, fewer than K = {k}"
        )));
    }
    if pool.iter().any(|v| !v.is_finite()) {
        return Err(TangerError::Numeric("descriptor pool contains non-finite values".into()));
    }
    let row = |r: usize| &pool[r * dim..(r + 1) * dim];
    if (1..rows).all(|r| row(r) == row(0)) {
        return Err(TangerError::Degenerate(format!(
            "all {rows} descriptors are identical; cannot form {k} distinct words"
        )));
    }

    // farthest-point initialization from a seeded first pick
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..rows);
    let mut centroids = row(first).to_vec();
    let mut min_d: Vec<f64> = (0..rows).map(|r| sq_dist(row(r), row(first))).collect();
    for _ in 1..k {
        let far = argmax_first(&min_d);
        centroids.extend_from_slice(row(far));
        for (r, m) in min_d.iter_mut().enumerate() {
            *m = m.min(sq_dist(row(r), row(far)));
        }
    }

    let mut assign = vec![0usize; rows];
    let mut dist = vec![0.0f64; rows];
    let mut wcss = Vec::with_capacity(iters);
    for _ in 0..iters {
        for r in 0..rows {
            let (w, d) = nearest(&centroids, dim, row(r));
            assign[r] = w;
            dist[r] = d;
        }
        wcss.push(dist.iter().sum());

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for r in 0..rows {
            counts[assign[r]] += 1;
            for (s, v) in sums[assign[r] * dim..(assign[r] + 1) * dim].iter_mut().zip(row(r)) {
                *s += v;
            }
        }
        for w in 0..k {
            let c = &mut centroids[w * dim..(w + 1) * dim];
            if counts[w] > 0 {
                let inv = 1.0 / counts[w] as f64;
                for (c, s) in c.iter_mut().zip(&sums[w * dim..(w + 1) * dim]) {
                    *c = s * inv;
                }
            } else {
                let far = argmax_first(&dist);
                c.copy_from_slice(row(far));
                dist[far] = 0.0;
            }
        }
    }
    let codebook = Codebook::new(centroids, k, dim, descriptor_digest(pool))?;
    Ok(KMeansFit { codebook, wcss })
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u32>,
    total: u32,
}

impl Histogram {
    pub fn from_words(words: &[usize], k: usize) -> Self {
        let mut counts = vec![0u32; k];
        for &w in words {
            counts[w] += 1;
        }
        Self {
            counts,
            total: words.len() as u32,
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    /// Peakedness `max_k count_k / total`.
    pub fn peak_ratio(&self) -> f64 {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        f64::from(max) / f64::from(self.total)
    }
}

/// Word index of every descriptor, grouped per patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchWords {
    words: Vec<usize>,
    per_patch: usize,
    k: usize,
}

impl PatchWords {
    pub fn new(words: Vec<usize>, per_patch: usize, k: usize) -> Result<Self> {
        if per_patch == 0 || words.len() % per_patch != 0 || words.iter().any(|&w| w >= k) {
            return Err(TangerError::Validation(format!(
                "{} word ids do not form whole patches of {per_patch} words below {k}",
                words.len()
            )));
        }
        Ok(Self { words, per_patch, k })
    }

    pub fn assign(descriptors: &DescriptorSet, codebook: &Codebook) -> Result<Self> {
        let words = descriptors
            .as_matrix()
            .chunks_exact(descriptors.dim())
            .map(|d| codebook.assign(d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(words, descriptors.per_patch(), codebook.k())
    }

    pub fn patches(&self) -> usize {
        self.words.len() / self.per_patch
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn of_patch(&self, i: usize) -> &[usize] {
        &self.words[i * self.per_patch..(i + 1) * self.per_patch]
    }

    /// Histogram over patches `i + 1 - n ..= i`.
    pub fn group_histogram(&self, i: usize, n: usize) -> Result<Histogram> {
        if n == 0 || n > i + 1 || i >= self.patches() {
            return Err(TangerError::Validation(format!(
                "patch {i} has no {n}-gram (needs n in 1..={} within {} patches)",
                i + 1,
                self.patches()
            )));
        }
        let start = (i + 1 - n) * self.per_patch;
        let end = (i + 1) * self.per_patch;
        Ok(Histogram::from_words(&self.words[start..end], self.k))
    }

    pub fn probability(&self, i: usize, n: usize) -> Result<f64> {
        Ok(self.group_histogram(i, n)?.peak_ratio())
    }

    /// Feasible `n` with the highest probability, smallest on ties; 1 when nothing is feasible.
    pub fn select_n(&self, i: usize, n_range: RangeInclusive<usize>) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for n in n_range.filter(|&n| n >= 1 && n <= i + 1) {
            let p = self.probability(i, n)?;
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((n, p));
            }
        }
        Ok(best.map_or(1, |(n, _)| n))
    }
}

/// Probability of the `n`-gram ending at patch `i`.
pub fn ngram_probability(i: usize, n: usize, descriptors: &DescriptorSet, codebook: &Codebook) -> Result<f64> {
    if n == 0 || n > i + 1 || i >= descriptors.patches() {
        return Err(TangerError::Validation(format!(
            "patch {i} has no {n}-gram (needs n in 1..={} within {} patches)",
            i + 1,
            descriptors.patches()
        )));
    }
    let mut words = Vec::with_capacity(n * descriptors.per_patch());
    for p in i + 1 - n..=i {
        for d in descriptors.of_patch(p).chunks_exact(descriptors.dim()) {
            words.push(codebook.assign(d)?);
        }
    }
    Ok(Histogram::from_words(&words, codebook.k()).peak_ratio())
}

pub fn select_n(
    i: usize,
    descriptors: &DescriptorSet,
    codebook: &Codebook,
    n_range: RangeInclusive<usize>,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for n in n_range.filter(|&n| n >= 1 && n <= i + 1) {
        let p = ngram_probability(i, n, descriptors, codebook)?;
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((n, p));
        }
    }
    Ok(best.map_or(1, |(n, _)| n))
}

/// Chosen gram count per patch; patch `i` groups patches `i + 1 - n_i ..= i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NGramPlan {
    n: Vec<usize>,
}

impl NGramPlan {
    pub fn new(n: Vec<usize>) -> Result<Self> {
        for (i, &ni) in n.iter().enumerate() {
            if ni == 0 || ni > i + 1 {
                return Err(TangerError::Validation(format!(
                    "patch {i} cannot use a {ni}-gram"
                )));
            }
        }
        Ok(Self { n })
    }

    /// Every patch uses `min(n, i + 1)`.
    pub fn fixed(patches: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(TangerError::Validation("fixed gram count must be at least 1".into()));
        }
        Ok(Self {
            n: (0..patches).map(|i| n.min(i + 1)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    pub fn n(&self, i: usize) -> usize {
        self.n[i]
    }

    pub fn counts(&self) -> &[usize] {
        &self.n
    }

    pub fn group(&self, i: usize) -> RangeInclusive<usize> {
        i + 1 - self.n[i]..=i
    }
}

pub fn build_plan_from_words(words: &PatchWords, n_range: RangeInclusive<usize>) -> Result<NGramPlan> {
    let n = (0..words.patches())
        .map(|i| words.select_n(i, n_range.clone()))
        .collect::<Result<Vec<_>>>()?;
    NGramPlan::new(n)
}

pub fn build_plan(
    descriptors: &DescriptorSet,
    codebook: &Codebook,
    n_range: RangeInclusive<usize>,
) -> Result<NGramPlan> {
    build_plan_from_words(&PatchWords::assign(descriptors, codebook)?, n_range)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_book() -> Codebook {
        // words at 0, 1, 2, 3 on a line (dim 1)
        Codebook::new(vec![0.0, 1.0, 2.0, 3.0], 4, 1, String::new()).unwrap()
    }

    fn set(values: &[f64], per_patch: usize) -> DescriptorSet {
        DescriptorSet::from_rows(values.to_vec(), values.len() / per_patch, per_patch, 1).unwrap()
    }

    #[test]
    fn assignment_and_ties() {
        let b = line_book();
        assert_eq!(assign_word(&[2.0], &b).unwrap(), 2);
        assert_eq!(assign_word(&[0.5], &b).unwrap(), 0);
        assert!(assign_word(&[0.5, 1.0], &b).is_err());
    }

    #[test]
    fn probability_examples() {
        let b = line_book();
        // one descriptor per patch, words [0,0,1,2,0]
        let d = set(&[0.0, 0.0, 1.0, 2.0, 0.0], 1);
        assert_eq!(ngram_probability(4, 5, &d, &b).unwrap(), 0.6);
        let d = set(&[0.0, 1.0, 2.0, 0.0, 1.0, 2.0], 1);
        assert!((ngram_probability(5, 6, &d, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let d = set(&[3.0; 6], 1);
        assert_eq!(ngram_probability(5, 4, &d, &b).unwrap(), 1.0);
        assert!(ngram_probability(1, 3, &d, &b).is_err());
    }

    #[test]
    fn selection_rules() {
        let b = line_book();
        let d = set(&[0.0, 3.0, 3.0, 3.0], 1);
        assert_eq!(select_n(0, &d, &b, DEFAULT_N_RANGE).unwrap(), 1);
        assert_eq!(select_n(1, &d, &b, DEFAULT_N_RANGE).unwrap(), 2);
        // n=2 -> 1.0, n=3 -> 1.0, n=4 -> 0.75
        assert_eq!(select_n(3, &d, &b, DEFAULT_N_RANGE).unwrap(), 2);
        // patch 5: n=2 -> 0.5, n=3 -> 2/3, n=4 -> 0.5, n=5 -> 0.6
        let d = set(&[1.0, 0.0, 2.0, 0.0, 1.0, 0.0], 1);
        assert_eq!(select_n(5, &d, &b, DEFAULT_N_RANGE).unwrap(), 3);
    }

    #[test]
    fn kmeans_rejects_bad_pools() {
        assert!(matches!(build_codebook(&[0.0, 1.0], 1, 1, 5, 0), Err(TangerError::Validation(_))));
        assert!(matches!(build_codebook(&[0.0], 1, 2, 5, 0), Err(TangerError::Validation(_))));
        assert!(matches!(build_codebook(&[0.5; 8], 2, 2, 5, 0), Err(TangerError::Degenerate(_))));
    }

    #[test]
    fn fixed_plan_forcing() {
        let p = NGramPlan::fixed(6, 2).unwrap();
        assert_eq!(p.counts(), &[1, 2, 2, 2, 2, 2]);
        assert_eq!(p.group(3), 2..=3);
        assert!(NGramPlan::new(vec![2]).is_err());
    }
}
