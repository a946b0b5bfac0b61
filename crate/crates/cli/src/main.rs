//! `tanger`: generate data, train, evaluate and compare model variants.
//!
//! Exit status is 0 on success, 1 for bad input (usage, config, data) and 2
//! for runtime failures.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use tanger_core::ablation::{ablation_csv, run_ablation, Study};
use tanger_core::checkpoint::{Checkpoint, Container, Record, CODEBOOK_RECORD, CONFIG_RECORD, DIGEST_RECORD};
use tanger_core::config::RunConfig;
use tanger_core::gradient_audit::{audit_model, tiny_config};
use tanger_core::pipeline::prepare_features;
use tanger_core::synth::{generate_dataset, load_dataset, read_ppm, Renderer, Sample};
use tanger_core::train::{self, evaluate, fit_codebook, load_or_render, predict, val_seed, write_run};
use tanger_core::vocab::Script;
use tanger_core::{Result, TangerError};

/// Largest relative gradient error `grad-check` accepts.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "tanger", version, about = "Multi-script text recognition with adaptive n-gram patch embeddings")]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset directory (PPM images plus manifest).
    GenData {
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of samples; defaults to the configured count of the split.
        #[arg(long)]
        count: Option<u64>,
    },
    /// Fit the visual-word codebook on the training set.
    BuildCodebook {
        /// Output file; defaults to `<output_dir>/codebook.tngr`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train from scratch and write checkpoint, epoch log and validation histogram.
    Train,
    /// Character accuracy and edit-distance histogram of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the validation set of the checkpoint's config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the histogram CSV here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Transcribe one PPM image and print the per-script posterior.
    Recognize {
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare variants over seeds: `ngram`, `clr`, `adaptive`, `clr-on`, `clr-off` or `fixed:N`.
    Ablate {
        mode: String,
        #[arg(long, value_delimiter = ',', default_values_t = [42u64, 43, 44])]
        seeds: Vec<u64>,
    },
    /// Finite-difference check of every parameter gradient on a tiny model.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Val,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| TangerError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| TangerError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| TangerError::io(path, e))
}

fn val_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let geometry = Some((cfg.model.image_height, cfg.model.image_width));
    match &cfg.val_dir {
        Some(dir) => load_dataset(dir, geometry),
        None => {
            let renderer = Renderer::new(cfg.generator.clone())?;
            let seed = val_seed(cfg.data_seed);
            (0..cfg.val_count).map(|i| renderer.render_sample(seed, i)).collect()
        }
    }
}

fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    let say = |out: &mut dyn Write, line: String| {
        // a closed stdout is not worth failing a finished computation over
        let _ = writeln!(out, "{line}");
    };
    match &cli.command {
        Command::GenData { split, out: dir, count } => {
            let cfg = load_config(cli)?;
            let renderer = Renderer::new(cfg.generator.clone())?;
            let (seed, default) = match split {
                Split::Train => (cfg.data_seed, cfg.train_count),
                Split::Val => (val_seed(cfg.data_seed), cfg.val_count),
            };
            let samples = generate_dataset(&renderer, seed, count.unwrap_or(default), dir)?;
            say(out, format!("wrote {} samples to {}", samples.len(), dir.display()));
        }
        Command::BuildCodebook { out: path } => {
            let cfg = load_config(cli)?;
            let data = load_or_render(&cfg)?;
            let cb = fit_codebook(&cfg, &data.train)?;
            let path = path.clone().unwrap_or_else(|| cfg.output_dir.join("codebook.tngr"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            let mut c = Container::default();
            c.push(CONFIG_RECORD, Record::Text(cfg.to_text()));
            let t = tanger_autograd::Tensor::new(vec![cb.k(), cb.dim()], cb.centroids().to_vec())?;
            c.push(CODEBOOK_RECORD, Record::F64(t));
            c.push(DIGEST_RECORD, Record::Text(cb.digest().to_string()));
            write_file(&path, c.to_bytes())?;
            say(out, format!("codebook K={} dim={} digest={}", cb.k(), cb.dim(), cb.digest()));
            say(out, format!("wrote {}", path.display()));
        }
        Command::Train => {
            let cfg = load_config(cli)?;
            let data = load_or_render(&cfg)?;
            let start = Instant::now();
            let outcome = train::train(&cfg, &data.train, &data.val, |e| {
                say(
                    &mut *out,
                    format!(
                        "epoch {:>3}  loss {:.5}  val_char_acc {:.4}  ({:.0?})",
                        e.epoch,
                        e.train_loss,
                        e.val_char_acc,
                        start.elapsed()
                    ),
                );
            })?;
            write_run(&outcome, &cfg.output_dir)?;
            write_file(&cfg.output_dir.join("val_histogram.csv"), outcome.val_report.histogram_csv())?;
            say(out, format!("wrote {}", cfg.output_dir.display()));
        }
        Command::Eval {
            checkpoint,
            data,
            report,
        } => {
            let ck = Checkpoint::<f32>::load(checkpoint)?;
            let samples = match data {
                Some(dir) => load_dataset(dir, None)?,
                None => val_samples(&ck.config)?,
            };
            let r = evaluate(&ck, &samples)?;
            say(out, format!("samples {}", r.samples));
            say(out, format!("char_accuracy {}", train::sig6(r.char_accuracy)));
            say(out, format!("mean_edit_distance {}", train::sig6(r.mean_edit_distance)));
            for (filter, acc) in &r.subset_accuracy {
                say(out, format!("char_accuracy[{}] {}", filter.name(), train::sig6(*acc)));
            }
            if let Some(path) = report {
                write_file(path, r.histogram_csv())?;
            }
        }
        Command::Recognize { image, checkpoint } => {
            let ck = Checkpoint::<f32>::load(checkpoint)?;
            let img = read_ppm(image)?;
            let m = &ck.config.model;
            if (img.height(), img.width()) != (m.image_height, m.image_width) {
                return Err(TangerError::Validation(format!(
                    "{} is {}x{}, the checkpoint expects {}x{}",
                    image.display(),
                    img.height(),
                    img.width(),
                    m.image_height,
                    m.image_width
                )));
            }
            let features = prepare_features(&img, m, ck.codebook.as_ref(), ck.config.plan_mode)?;
            let text = predict(&ck.params, &[&features])?.remove(0);
            say(out, format!("text\t{text}"));
            if m.pyramid {
                let posterior = train::language_posterior(&ck.params, &features)?;
                for (script, p) in Script::ALL.iter().zip(posterior) {
                    say(out, format!("{}\t{:.4}", script.name(), p));
                }
            } else {
                say(out, "no language head in this checkpoint".into());
            }
        }
        Command::Ablate { mode, seeds } => {
            let study: Study = mode.parse()?;
            let cfg = load_config(cli)?;
            let data = load_or_render(&cfg)?;
            let rows = run_ablation(&cfg, &study.variants, seeds, &data, |v, seed, o| {
                say(
                    &mut *out,
                    format!("{v} seed {seed}: val_char_acc {}", train::sig6(o.val_report.char_accuracy)),
                );
            })?;
            let csv = ablation_csv(&rows, seeds);
            create_dir(&cfg.output_dir)?;
            write_file(&cfg.output_dir.join(format!("ablation_{}.csv", study.name.replace(':', "_"))), &csv)?;
            let _ = out.write_all(csv.as_bytes());
        }
        Command::GradCheck { seed, eps } => {
            let start = Instant::now();
            let r = audit_model(&tiny_config(), *seed, *eps)?;
            for (group, err) in &r.per_group {
                say(out, format!("{group:<22} {err:.3e}"));
            }
            say(
                out,
                format!(
                    "max relative error {:.3e} ({}, {} entries, {:.1?})",
                    r.max_rel_error,
                    r.worst_param,
                    r.entries,
                    start.elapsed()
                ),
            );
            if !(r.max_rel_error < GRAD_TOLERANCE) {
                return Err(TangerError::Numeric(format!(
                    "max relative error {:.3e} exceeds {GRAD_TOLERANCE:e}",
                    r.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
