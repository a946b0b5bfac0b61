//! Training loop, prediction and evaluation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tanger_autograd::{Element, Tape, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Result, TangerError};
use crate::losses::TargetEncoding;
use crate::metrics::{decode_ids, MetricsReport};
use crate::model::{argmax_chars, Mode, ModelParams, Net};
use crate::optim::{adam_step, OptimizerState};
use crate::pipeline::{batch_inputs, batch_loss, prepare_features, Example, Features};
use crate::synth::{load_dataset, Renderer, Sample};
use crate::vision::{extract_descriptors, patchify};
use crate::visual_words::{build_codebook, Codebook};
use crate::vocab::Vocab;

const EVAL_BATCH: usize = 50;
/// Stream offset separating validation renders from training renders.
const VAL_STREAM: u64 = 0x5641_4c5f_5354_524d;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_char_acc: f64,
}

/// `x` with six significant digits, in the style of C's `%g`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mant, e) = sci.split_once('e').expect("exponent form");
    let exp: i32 = e.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        return format!("{}e{exp}", trim(mant));
    }
    trim(&format!("{x:.*}", (5 - exp) as usize))
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_char_acc\n");
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.epoch, sig6(e.train_loss), sig6(e.val_char_acc)));
    }
    out
}

/// Training and validation samples.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Loads the configured directories, rendering in memory where none is given.
pub fn load_or_render(cfg: &RunConfig) -> Result<Datasets> {
    let geometry = Some((cfg.model.image_height, cfg.model.image_width));
    let renderer = Renderer::new(cfg.generator.clone())?;
    let get = |dir: &Option<std::path::PathBuf>, seed: u64, count: u64| -> Result<Vec<Sample>> {
        match dir {
            Some(d) => load_dataset(d, geometry),
            None => (0..count).map(|i| renderer.render_sample(seed, i)).collect(),
        }
    };
    Ok(Datasets {
        train: get(&cfg.train_dir, cfg.data_seed, cfg.train_count)?,
        val: get(&cfg.val_dir, val_seed(cfg.data_seed), cfg.val_count)?,
    })
}

pub fn val_seed(data_seed: u64) -> u64 {
    data_seed ^ VAL_STREAM
}

/// k-means codebook over descriptors of the training images.
pub fn fit_codebook(cfg: &RunConfig, train: &[Sample]) -> Result<Codebook> {
    let m = &cfg.model;
    let mut pool = Vec::new();
    let mut dim = 0;
    for s in train {
        let d = extract_descriptors(&patchify(&s.image, m.patch)?, m.descriptor_split)?;
        dim = d.dim();
        pool.extend_from_slice(d.as_matrix());
    }
    if dim == 0 {
        return Err(TangerError::Validation("no training images to build a codebook from".into()));
    }
    let rows = pool.len() / dim;
    if cfg.codebook_pool != 0 && rows > cfg.codebook_pool {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut keep = rand::seq::index::sample(&mut rng, rows, cfg.codebook_pool).into_vec();
        keep.sort_unstable();
        pool = keep.iter().flat_map(|&r| pool[r * dim..(r + 1) * dim].to_vec()).collect();
    }
    build_codebook(&pool, dim, m.codebook_size, cfg.codebook_iters, cfg.seed)
}

pub fn prepare_examples(cfg: &RunConfig, samples: &[Sample], codebook: Option<&Codebook>) -> Result<Vec<Example>> {
    let vocab = Vocab::new();
    samples
        .iter()
        .map(|s| {
            Ok(Example {
                features: prepare_features(&s.image, &cfg.model, codebook, cfg.plan_mode)?,
                target: TargetEncoding::new(&s.text, &vocab, cfg.model.maxlen)?,
                text: s.text.clone(),
            })
        })
        .collect()
}

/// Greedy transcriptions from the recognition head in eval mode.
pub fn predict<F: Element>(params: &ModelParams<F>, features: &[&Features]) -> Result<Vec<String>> {
    let vocab = Vocab::new();
    let cfg = params.config();
    let primary_only = crate::model::ModelConfig {
        pyramid: false,
        ..cfg.clone()
    };
    let mut out = Vec::with_capacity(features.len());
    for chunk in features.chunks(EVAL_BATCH) {
        let inputs = batch_inputs::<F>(chunk, &primary_only)?;
        let tape = Tape::new();
        let vars = params.bind(&tape);
        let net = Net::new(&tape, params, &vars, Mode::eval());
        let x = tape.constant(inputs.patches);
        let t_pt = net.encode_primary(net.embed_primary(x)?)?;
        let y = tape.value(net.recognition_logits(t_pt)?)?;
        let ids = argmax_chars(&y);
        out.extend(ids.chunks(cfg.maxlen).map(|row| decode_ids(row, &vocab)));
    }
    Ok(out)
}

/// Per-sample language posteriors (softmax of the language head); needs the pyramid branch.
pub fn language_posterior<F: Element>(params: &ModelParams<F>, features: &Features) -> Result<Vec<f64>> {
    let inputs = batch_inputs::<F>(&[features], params.config())?;
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let net = Net::new(&tape, params, &vars, Mode::eval());
    let patches = tape.constant(inputs.patches);
    let pooled = inputs.pooled.map(|p| tape.constant(p));
    let out = net.forward(patches, pooled, None)?;
    let pyr = out
        .pyramid
        .ok_or_else(|| TangerError::Config("model has no language head".into()))?;
    let p = tape.value(tape.softmax(pyr.language, 1)?)?;
    Ok(p.data().iter().map(|v| v.as_f64()).collect())
}

pub fn evaluate_examples<F: Element>(params: &ModelParams<F>, examples: &[Example]) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(TangerError::Validation("cannot evaluate on an empty dataset".into()));
    }
    let feats: Vec<&Features> = examples.iter().map(|e| &e.features).collect();
    let preds = predict(params, &feats)?;
    let pairs: Vec<(String, &str)> = preds.into_iter().zip(examples.iter().map(|e| e.text.as_str())).collect();
    MetricsReport::from_pairs(&pairs)
}

/// Evaluates a checkpoint on samples of the same geometry.
pub fn evaluate(checkpoint: &Checkpoint<f32>, samples: &[Sample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(TangerError::Validation("cannot evaluate on an empty dataset".into()));
    }
    let cfg = &checkpoint.config;
    for s in samples {
        if (s.image.height(), s.image.width()) != (cfg.model.image_height, cfg.model.image_width) {
            return Err(TangerError::Validation(format!(
                "dataset image is {}x{}, checkpoint expects {}x{}",
                s.image.height(),
                s.image.width(),
                cfg.model.image_height,
                cfg.model.image_width
            )));
        }
    }
    let primary = RunConfig {
        model: crate::model::ModelConfig {
            pyramid: false,
            ..cfg.model.clone()
        },
        ..cfg.clone()
    };
    let examples = prepare_examples(&primary, samples, None)?;
    evaluate_examples(&checkpoint.params, &examples)
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub log: Vec<EpochLog>,
    /// Per-step totals and vision losses, in step order.
    pub step_losses: Vec<(f64, f64)>,
    /// Validation metrics after the last epoch.
    pub val_report: MetricsReport,
}

/// Trains from scratch on `train`, logging validation accuracy after every epoch.
pub fn train(
    cfg: &RunConfig,
    train: &[Sample],
    val: &[Sample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TangerError::Validation("training and validation sets must be non-empty".into()));
    }
    let codebook = match (cfg.model.pyramid, cfg.plan_mode) {
        (true, crate::pipeline::PlanMode::Adaptive) => Some(fit_codebook(cfg, train)?),
        _ => None,
    };
    let train_ex = prepare_examples(cfg, train, codebook.as_ref())?;
    let val_ex = prepare_examples(
        &RunConfig {
            model: crate::model::ModelConfig {
                pyramid: false,
                ..cfg.model.clone()
            },
            ..cfg.clone()
        },
        val,
        None,
    )?;

    let mut params = ModelParams::<f32>::init(&cfg.model, cfg.seed)?;
    let mut state = OptimizerState::new(&params);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    let mut val_report = None;
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let feats: Vec<&Features> = batch.iter().map(|&i| &train_ex[i].features).collect();
            let targets: Vec<TargetEncoding> = batch.iter().map(|&i| train_ex[i].target.clone()).collect();
            let inputs = batch_inputs::<f32>(&feats, &cfg.model)?;
            let tape = Tape::new();
            let vars = params.bind(&tape);
            let net = Net::new(&tape, &params, &vars, Mode::train(cfg.seed, state.step + 1));
            let diverged = |what: String| {
                TangerError::Numeric(format!("epoch {epoch}, batch {}: {what}", bi + 1))
            };
            let parts = batch_loss(&net, &inputs, &targets, None).map_err(|e| match e {
                TangerError::Numeric(m) => diverged(m),
                other => other,
            })?;
            let total = tape.value(parts.total)?.item()?.as_f64();
            let vision = tape.value(parts.vision)?.item()?.as_f64();
            if !total.is_finite() {
                return Err(diverged(format!("loss is {total}")));
            }
            let grads = tape.backward(parts.total)?;
            let grads: Vec<Tensor<f32>> = vars
                .iter()
                .map(|v| grads.get(*v).cloned().ok_or_else(|| TangerError::Numeric("missing gradient".into())))
                .collect::<Result<_>>()?;
            adam_step(&mut params, &grads, &mut state, &cfg.adam).map_err(|e| match e {
                TangerError::Numeric(m) => diverged(m),
                other => other,
            })?;
            loss_sum += total * batch.len() as f64;
            step_losses.push((total, vision));
        }
        let report = evaluate_examples(&params, &val_ex)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_ex.len() as f64,
            val_char_acc: report.char_accuracy,
        };
        on_epoch(&entry);
        log.push(entry);
        val_report = Some(report);
    }
    let val_report = val_report.expect("epochs validated positive");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            params,
            codebook,
        },
        log,
        step_losses,
        val_report,
    })
}

/// Writes `checkpoint.tngr` and `train_log.csv` into `dir`.
pub fn write_run(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| TangerError::io(dir, e))?;
    outcome.checkpoint.save(&dir.join("checkpoint.tngr"))?;
    let log = dir.join("train_log.csv");
    std::fs::write(&log, log_csv(&outcome.log)).map_err(|e| TangerError::io(&log, e))
}
