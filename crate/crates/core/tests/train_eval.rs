use std::collections::BTreeMap;

use tanger_core::ablation::{ablation_csv, median, run_ablation, Study, Variant};
use tanger_core::checkpoint::{Checkpoint, Container, Record, CODEBOOK_RECORD, CONFIG_RECORD};
use tanger_core::config::RunConfig;
use tanger_core::error::TangerError;
use tanger_core::metrics::ScriptFilter;
use tanger_core::pipeline::PlanMode;
use tanger_core::synth::Renderer;
use tanger_core::train::{evaluate, load_or_render, log_csv, train, write_run, Datasets};

const SMALL: &str = "
embed_dim = 16
depth = 1
heads = 2
text_max_len = 4
maxlen = 5
train_count = 8
val_count = 4
epochs = 1
batch_size = 4
codebook_size = 4
codebook_iters = 3
codebook_pool = 0
";

fn small() -> RunConfig {
    RunConfig::parse(SMALL).unwrap()
}

fn data(cfg: &RunConfig) -> Datasets {
    load_or_render(cfg).unwrap()
}

fn bits(xs: &[(f64, f64)]) -> Vec<(u64, u64)> {
    xs.iter().map(|(a, b)| (a.to_bits(), b.to_bits())).collect()
}

#[test]
fn one_epoch_smoke_run() {
    let cfg = small();
    let d = data(&cfg);
    assert_eq!((d.train.len(), d.val.len()), (8, 4));
    let mut seen = Vec::new();
    let out = train(&cfg, &d.train, &d.val, |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, vec![1]);
    assert_eq!(out.step_losses.len(), 2);
    assert!(out.step_losses.iter().all(|(t, v)| t.is_finite() && v.is_finite() && t >= v));
    assert!(out.log[0].train_loss.is_finite());
    assert!(out.checkpoint.codebook.is_some());
    assert_eq!(out.val_report.samples, 4);
    assert_eq!(out.val_report.histograms[&ScriptFilter::All].total(), 4);
    assert_eq!(log_csv(&out.log).lines().count(), 2);
}

#[test]
fn fixed_seed_reruns_are_bitwise_identical() {
    let mut cfg = small();
    cfg.epochs = 2;
    let d = data(&cfg);
    let a = train(&cfg, &d.train, &d.val, |_| {}).unwrap();
    let b = train(&cfg, &d.train, &d.val, |_| {}).unwrap();
    assert_eq!(bits(&a.step_losses), bits(&b.step_losses));
    assert_eq!(a.checkpoint.to_container().to_bytes(), b.checkpoint.to_container().to_bytes());
    cfg.seed = 43;
    let c = train(&cfg, &d.train, &d.val, |_| {}).unwrap();
    assert_ne!(bits(&a.step_losses), bits(&c.step_losses));
}

#[test]
fn zero_alpha_trains_on_the_vision_loss_alone() {
    let mut cfg = small();
    cfg.model.alpha = 0.0;
    let d = data(&cfg);
    let out = train(&cfg, &d.train, &d.val, |_| {}).unwrap();
    for (t, v) in &out.step_losses {
        assert_eq!(t.to_bits(), v.to_bits());
    }
}

#[test]
fn empty_and_mismatched_sets_are_rejected() {
    let cfg = small();
    let d = data(&cfg);
    assert!(matches!(train(&cfg, &[], &d.val, |_| {}), Err(TangerError::Validation(_))));
    let out = train(&cfg, &d.train, &d.val, |_| {}).unwrap();
    assert!(matches!(evaluate(&out.checkpoint, &[]), Err(TangerError::Validation(_))));

    let mut other = small();
    other.set("image_height", "24").unwrap();
    let renderer = Renderer::new(other.generator.clone()).unwrap();
    let wrong = vec![renderer.render_sample(1, 0).unwrap()];
    let err = evaluate(&out.checkpoint, &wrong).unwrap_err();
    assert!(err.is_validation() && err.to_string().contains("24x128"), "{err}");

    let report = evaluate(&out.checkpoint, &d.train).unwrap();
    assert_eq!(report.samples, 8);
    assert!((0.0..=1.0).contains(&report.char_accuracy));
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let cfg = small();
    let d = data(&cfg);
    let out = train(&cfg, &d.train, &d.val, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(&out, dir.path()).unwrap();
    let loaded = Checkpoint::<f32>::load(&dir.path().join("checkpoint.tngr")).unwrap();
    assert_eq!(loaded, out.checkpoint);
    assert_eq!(loaded.codebook.as_ref().unwrap().digest(), out.checkpoint.codebook.as_ref().unwrap().digest());
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log, log_csv(&out.log));

    let c = out.checkpoint.to_container();
    assert!(matches!(c.get(CONFIG_RECORD), Some(Record::Text(t)) if RunConfig::parse(t).unwrap() == cfg));
    assert!(matches!(c.get(CODEBOOK_RECORD), Some(Record::F64(t)) if t.shape() == [4, 48]));

    // same predictions after reloading
    let a = evaluate(&out.checkpoint, &d.val).unwrap();
    let b = evaluate(&loaded, &d.val).unwrap();
    assert_eq!(a, b);
}

#[test]
fn damaged_checkpoints_are_reported() {
    let cfg = small();
    let d = data(&cfg);
    let out = train(&cfg, &d.train, &d.val, |_| {}).unwrap();
    let bytes = out.checkpoint.to_container().to_bytes();
    assert!(matches!(Container::from_bytes(&bytes[..bytes.len() - 3]), Err(TangerError::Checkpoint(_))));
    assert!(Container::from_bytes(b"NOPE!").is_err());

    let mut c = out.checkpoint.to_container();
    c.records.retain(|(name, _)| name != "recognition.bias");
    assert!(Checkpoint::<f32>::from_container(&c).is_err());

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.tngr");
    assert!(matches!(Checkpoint::<f32>::load(&missing), Err(TangerError::Io { .. })));
}

#[test]
fn config_text_round_trips_and_rejects_unknown_keys() {
    let cfg = small();
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());

    let err = RunConfig::parse("epochs = 3\nlearning_rate = 0.1\n").unwrap_err();
    assert!(matches!(&err, TangerError::Config(m) if m.contains("line 2") && m.contains("learning_rate")), "{err}");
    assert!(RunConfig::parse("epochs = 3\nepochs = 4\n").is_err());
    assert!(RunConfig::parse("epochs 3\n").is_err());
    assert!(RunConfig::parse("epochs = 0\n").is_err());
    assert!(RunConfig::parse("plan_mode = fixed:0\n").is_err());
    assert!(RunConfig::parse("pyramid = yes\n").is_err());

    let mut c = RunConfig::default();
    c.set("plan_mode", "fixed:3").unwrap();
    c.set("alpha", "0.25").unwrap();
    c.set("spp_levels", "1, 2").unwrap();
    assert_eq!(c.plan_mode, PlanMode::Fixed(3));
    assert_eq!(c.model.alpha, 0.25);
    assert_eq!(c.model.spp_levels, vec![1, 2]);
    assert!(c.set("nonsense", "1").is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# comment\nepochs = 7 # trailing\n").unwrap();
    assert_eq!(RunConfig::load(&path).unwrap().epochs, 7);
    let absent = dir.path().join("absent.cfg");
    let err = RunConfig::load(&absent).unwrap_err();
    assert!(err.to_string().contains("absent.cfg"), "{err}");
}

#[test]
fn fixed_plan_runs_without_a_codebook() {
    let mut cfg = small();
    cfg.plan_mode = PlanMode::Fixed(2);
    let d = data(&cfg);
    let out = train(&cfg, &d.train, &d.val, |_| {}).unwrap();
    assert!(out.checkpoint.codebook.is_none());
    assert!(out.step_losses.iter().all(|(t, _)| t.is_finite()));
}

#[test]
fn study_names_expand_to_variants() {
    let ngram: Study = "ngram".parse().unwrap();
    assert_eq!(ngram.variants.len(), 5);
    assert_eq!(ngram.variants[4], Variant::AdaptiveN);
    let clr: Study = "clr".parse().unwrap();
    assert_eq!(clr.variants, vec![Variant::ClrOn, Variant::ClrOff]);
    assert_eq!("fixed:7".parse::<Study>().unwrap().variants, vec![Variant::FixedN(7)]);
    assert!("fixed:0".parse::<Study>().unwrap_err().is_validation());
    assert!("bogus".parse::<Study>().is_err());

    let base = small();
    let off = Variant::ClrOff.apply(&base, 9);
    assert_eq!((off.seed, off.model.alpha, off.plan_mode), (9, 0.0, PlanMode::Adaptive));
    assert_eq!(Variant::FixedN(3).apply(&base, 1).plan_mode, PlanMode::Fixed(3));

    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
}

#[test]
fn ablation_table_has_one_row_per_variant() {
    let cfg = small();
    let d = data(&cfg);
    let variants = [Variant::FixedN(2), Variant::AdaptiveN, Variant::ClrOn];
    let mut runs: BTreeMap<(String, u64), usize> = BTreeMap::new();
    let rows = run_ablation(&cfg, &variants, &[1, 2], &d, |v, s, _| {
        *runs.entry((v.to_string(), s)).or_default() += 1;
    })
    .unwrap();
    // clr-on resolves to the adaptive configuration and reuses its runs
    assert_eq!(runs.len(), 4);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].per_seed, rows[2].per_seed);
    let csv = ablation_csv(&rows, &[1, 2]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,median_val_char_acc,median_mixed_char_acc,seed_1,seed_2");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("fixed-n=2,") && lines[2].starts_with("adaptive-n,"));
    assert!(run_ablation(&cfg, &variants, &[], &d, |_, _, _| {}).is_err());
}
