//! Fixed-vs-adaptive n and with/without auxiliary-loss comparisons.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::config::RunConfig;
use crate::error::{Result, TangerError};
use crate::pipeline::PlanMode;
use crate::metrics::ScriptFilter;
use crate::train::{sig6, train, Datasets, EpochLog, TrainOutcome};

/// One configuration of a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Every patch uses `min(n, i + 1)` predecessors-plus-self.
    FixedN(usize),
    /// n chosen per patch from visual-word histograms.
    AdaptiveN,
    /// Auxiliary losses on with the configured weight (adaptive n).
    ClrOn,
    /// Auxiliary weight forced to zero (adaptive n).
    ClrOff,
}

impl Variant {
    /// Applies the variant on top of a shared configuration.
    pub fn apply(self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.model.pyramid = true;
        match self {
            Variant::FixedN(n) => cfg.plan_mode = PlanMode::Fixed(n),
            Variant::AdaptiveN | Variant::ClrOn => cfg.plan_mode = PlanMode::Adaptive,
            Variant::ClrOff => {
                cfg.plan_mode = PlanMode::Adaptive;
                cfg.model.alpha = 0.0;
            }
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::FixedN(n) => write!(f, "fixed-n={n}"),
            Variant::AdaptiveN => f.write_str("adaptive-n"),
            Variant::ClrOn => f.write_str("clr-on"),
            Variant::ClrOff => f.write_str("clr-off"),
        }
    }
}

/// A set of variants compared side by side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Study {
    pub name: String,
    pub variants: Vec<Variant>,
}

impl FromStr for Study {
    type Err = TangerError;

    /// `ngram` (n = 2..5 plus adaptive), `clr` (on/off), or a single variant
    /// (`fixed:N`, `adaptive`, `clr-on`, `clr-off`).
    fn from_str(s: &str) -> Result<Self> {
        let variants = match s {
            "ngram" => vec![
                Variant::FixedN(2),
                Variant::FixedN(3),
                Variant::FixedN(4),
                Variant::FixedN(5),
                Variant::AdaptiveN,
            ],
            "clr" => vec![Variant::ClrOn, Variant::ClrOff],
            "adaptive" => vec![Variant::AdaptiveN],
            "clr-on" => vec![Variant::ClrOn],
            "clr-off" => vec![Variant::ClrOff],
            _ => match s.strip_prefix("fixed:").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 1 => vec![Variant::FixedN(n)],
                _ => {
                    return Err(TangerError::Validation(format!(
                        "unknown ablation mode {s:?}; use ngram, clr, adaptive, clr-on, clr-off or fixed:N"
                    )))
                }
            },
        };
        Ok(Self {
            name: s.to_string(),
            variants,
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Final-epoch validation accuracy over all samples and over mixed-script ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub all: f64,
    /// NaN when the validation set has no mixed-script sample.
    pub mixed: f64,
}

impl Score {
    pub fn of(outcome: &TrainOutcome) -> Self {
        Self {
            all: outcome.val_report.char_accuracy,
            mixed: outcome
                .val_report
                .subset_accuracy
                .get(&ScriptFilter::Mixed)
                .copied()
                .unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub per_seed: Vec<Score>,
    pub median: Score,
}

/// Trains every variant once per seed on shared data. Variants that resolve
/// to the same configuration (adaptive and clr-on) share one run per seed.
pub fn run_ablation(
    base: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
    data: &Datasets,
    mut on_run: impl FnMut(Variant, u64, &TrainOutcome),
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(TangerError::Validation("ablation needs at least one seed".into()));
    }
    let mut done: HashMap<String, Score> = HashMap::new();
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = variant.apply(base, seed);
            let key = cfg.to_text();
            let score = match done.get(&key) {
                Some(&score) => score,
                None => {
                    let out = train(&cfg, &data.train, &data.val, |_: &EpochLog| {})?;
                    on_run(variant, seed, &out);
                    let score = Score::of(&out);
                    done.insert(key, score);
                    score
                }
            };
            per_seed.push(score);
        }
        let all: Vec<f64> = per_seed.iter().map(|s| s.all).collect();
        let mixed: Vec<f64> = per_seed.iter().map(|s| s.mixed).collect();
        rows.push(AblationRow {
            variant,
            median: Score {
                all: median(&all),
                mixed: median(&mixed),
            },
            per_seed,
        });
    }
    Ok(rows)
}

/// One row per variant: medians over seeds, then the per-seed accuracies.
pub fn ablation_csv(rows: &[AblationRow], seeds: &[u64]) -> String {
    let mut out = String::from("variant,median_val_char_acc,median_mixed_char_acc");
    for s in seeds {
        out.push_str(&format!(",seed_{s}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}", r.variant, sig6(r.median.all), sig6(r.median.mixed)));
        for a in &r.per_seed {
            out.push(',');
            out.push_str(&sig6(a.all));
        }
        out.push('\n');
    }
    out
}
