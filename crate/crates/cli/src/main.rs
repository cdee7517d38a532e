use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cunet::audio::{load_wav, resample, write_wav, AudioSignal, SampleFormat, SAMPLE_RATE};
use cunet::conditioning::{Embedding, FilmMode};
use cunet::config::ExperimentConfig;
use cunet::evaluation::{
    compare_models, evaluate_model, mixture_baseline, parse_results_csv, separate_signal, summary_table,
    write_results_csv, Comparison, CorrelationReport, Grouping,
};
use cunet::training::{load_checkpoint, save_checkpoint, synth_dataset, train, Dataset, ModelSpec, Partition};

#[derive(Parser, Debug)]
#[command(name = "cunet", version, about = "Conditioned U-Net source separation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    film: Option<FilmArg>,
    #[arg(long, global = true, value_enum)]
    embedding: Option<EmbeddingArg>,
    #[arg(long, global = true, overrides_with = "no_progressive")]
    progressive: bool,
    #[arg(long, global = true, overrides_with = "progressive")]
    no_progressive: bool,
    #[arg(long, global = true)]
    filter_len: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset root; defaults to the config value, then CUNET_DATA_ROOT.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FilmArg {
    Simple,
    Complex,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum EmbeddingArg {
    Fc,
    Cnn,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic 4-stem dataset.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 30)]
        tracks: usize,
        #[arg(long, default_value_t = 10)]
        test: usize,
        /// Seconds per track.
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
    },
    /// Train the conditioned model, or a dedicated one with --dedicated.
    Train {
        #[arg(long)]
        dedicated: Option<String>,
    },
    /// Separate one source from a mixture WAV.
    Separate {
        mixture: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a checkpoint on the test split and write a results CSV.
    Evaluate {
        checkpoint: Option<PathBuf>,
        /// Score the unprocessed mixture instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        baseline: bool,
    },
    /// Correlate two results files.
    Compare { results_a: PathBuf, results_b: PathBuf },
    /// Parameter counts of the dedicated and conditioned variants.
    Params { config: Option<PathBuf> },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn experiment(common: &Common, config: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match config.or(common.config.as_deref()) {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(f) = common.film {
        cfg.model.film_mode = match f {
            FilmArg::Simple => FilmMode::Simple,
            FilmArg::Complex => FilmMode::Complex,
        };
    }
    if let Some(e) = common.embedding {
        cfg.generator.embedding = match e {
            EmbeddingArg::Fc => Embedding::FullyConnected,
            EmbeddingArg::Cnn => Embedding::Cnn,
        };
    }
    if common.progressive {
        cfg.train.progressive = true;
    }
    if common.no_progressive {
        cfg.train.progressive = false;
    }
    if let Some(l) = common.filter_len {
        cfg.filter_len = l;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(d) = &common.data_root {
        cfg.data_root = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn model_name(spec: &ModelSpec) -> String {
    match (&spec.dedicated_task, &spec.generator) {
        (Some(task), _) => format!("dedicated-{task}"),
        (None, Some(g)) => format!("cunet-{}", g.variant_name()),
        (None, None) => "cunet".into(),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Synth { dir, tracks, test, duration } => {
            let seed = common.seed.unwrap_or(0);
            let manifest = synth_dataset(tracks, test, duration, seed, &dir)?;
            println!("wrote {} tracks to {}", manifest.tracks.len(), dir.display());
        }
        Command::Train { dedicated } => {
            let cfg = experiment(common, None)?;
            let spec = cfg.spec(dedicated.as_deref())?;
            let dataset = Dataset::open(cfg.data_root.as_deref(), &spec.tasks)?;
            let outcome = train(&spec, &cfg.train, &dataset)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join(format!("{}.ckpt", model_name(&spec)));
            save_checkpoint(&outcome.checkpoint, &path)?;
            let mut log = String::from("epoch,train_loss,val_loss\n");
            for r in &outcome.history {
                log.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.train_loss, r.val_loss));
            }
            std::fs::write(path.with_extension("history.csv"), log)?;
            println!(
                "saved {} (epoch {}, val loss {:.4}{})",
                path.display(),
                outcome.checkpoint.epoch,
                outcome.checkpoint.val_loss,
                if outcome.stopped_early { ", stopped early" } else { "" }
            );
        }
        Command::Separate { mixture, task, checkpoint } => {
            let cfg = experiment(common, None)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let spec = &ckpt.spec;
            let index = spec.task_index(&task)?;
            if let Some(d) = &spec.dedicated_task {
                if *d != task {
                    bail!("checkpoint is dedicated to `{d}`, not `{task}`");
                }
            }
            let input = load_wav(&mixture)?;
            let estimate = separate_signal(&ckpt.model, &input, index)?;
            let mix = resample(&input, SAMPLE_RATE)?;
            let rest: Vec<f64> = mix.samples.iter().zip(&estimate.samples).map(|(m, e)| m - e).collect();
            let accompaniment = AudioSignal::new(rest, SAMPLE_RATE)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let stem = mixture.file_stem().and_then(|s| s.to_str()).unwrap_or("mixture");
            let target_path = cfg.output_dir.join(format!("{stem}_{task}.wav"));
            let acc_path = cfg.output_dir.join(format!("{stem}_{task}_accompaniment.wav"));
            write_wav(&target_path, &estimate, SampleFormat::Float32)?;
            write_wav(&acc_path, &accompaniment, SampleFormat::Float32)?;
            println!("wrote {} and {}", target_path.display(), acc_path.display());
        }
        Command::Evaluate { checkpoint, baseline } => {
            let cfg = experiment(common, None)?;
            let (name, tasks, results) = match checkpoint {
                Some(path) => {
                    let ckpt = load_checkpoint(&path)?;
                    let spec = ckpt.spec.clone();
                    let dataset = Dataset::open(cfg.data_root.as_deref(), &spec.tasks)?;
                    let tracks = dataset.load_all(&dataset.manifest.ids(Partition::Test))?;
                    info!("evaluating {} on {} test tracks", model_name(&spec), tracks.len());
                    let results = evaluate_model(&ckpt.model, &spec, &tracks, cfg.filter_len)?;
                    let tasks = match &spec.dedicated_task {
                        Some(t) => vec![t.clone()],
                        None => spec.tasks.clone(),
                    };
                    (model_name(&spec), tasks, results)
                }
                None if baseline => {
                    let dataset = Dataset::open(cfg.data_root.as_deref(), &cfg.tasks)?;
                    let tracks = dataset.load_all(&dataset.manifest.ids(Partition::Test))?;
                    let mut results = Vec::new();
                    for t in &tracks {
                        results.extend(mixture_baseline(t, &cfg.tasks, cfg.filter_len)?);
                    }
                    ("mixture".to_string(), cfg.tasks.clone(), results)
                }
                None => bail!("evaluate needs a checkpoint or --baseline"),
            };
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join(format!("{name}.csv"));
            std::fs::write(&path, write_results_csv(&results)?)?;
            print!("{}", summary_table(&name, &results, &tasks));
            println!("wrote {}", path.display());
        }
        Command::Compare { results_a, results_b } => {
            let read = |p: &Path| -> anyhow::Result<_> {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(parse_results_csv(&text)?)
            };
            let a = read(&results_a)?;
            let b = read(&results_b)?;
            let cmp = compare_models(&a, &b)?;
            print_comparison(&cmp);
            let mut tasks: Vec<String> = Vec::new();
            for r in a.iter().chain(&b) {
                if !tasks.contains(&r.task) {
                    tasks.push(r.task.clone());
                }
            }
            print!("{}", summary_table(&label(&results_a), &a, &tasks));
            print!("{}", summary_table(&label(&results_b), &b, &tasks));
        }
        Command::Params { config } => {
            let cfg = experiment(common, config.as_deref())?;
            print!("{}", params_table(&cfg)?);
        }
    }
    Ok(())
}

fn label(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("results").to_string()
}

fn report_line(r: &CorrelationReport) -> String {
    let name = match &r.grouping {
        Grouping::Global => "global",
        Grouping::PerTask(t) | Grouping::PerMetric(t) => t.as_str(),
    };
    format!("{name:<12} r = {:.4}  p = {:.3e}  n = {}", r.r, r.p_value, r.n_points)
}

fn print_comparison(cmp: &Comparison) {
    for r in std::iter::once(&cmp.global).chain(&cmp.per_task).chain(&cmp.per_metric) {
        println!("{}", report_line(r));
    }
    println!("matched rows {}, dropped {}", cmp.matched_rows, cmp.dropped_rows);
}

fn params_table(cfg: &ExperimentConfig) -> anyhow::Result<String> {
    let mut out = String::new();
    let dedicated = cfg.spec(Some(&cfg.tasks[0]))?;
    let ded = dedicated.model.total_param_count(None);
    let n = cfg.tasks.len();
    out.push_str(&format!("{:<10} {:>12} {:>12} {:>12}\n", "model", "core", "generator", "total"));
    out.push_str(&format!(
        "{:<10} {:>12} {:>12} {:>12}   ({n} tasks x {ded})\n",
        "Fix",
        n * ded,
        0,
        n * ded
    ));
    for (film, emb) in [
        (FilmMode::Simple, Embedding::FullyConnected),
        (FilmMode::Complex, Embedding::FullyConnected),
        (FilmMode::Simple, Embedding::Cnn),
        (FilmMode::Complex, Embedding::Cnn),
    ] {
        let mut c = cfg.clone();
        c.model.film_mode = film;
        c.generator.embedding = emb;
        let spec = c.spec(None)?;
        let gen = spec.generator.as_ref().expect("conditioned spec has a generator");
        let core = spec.model.core_param_count();
        let total = spec.model.total_param_count(Some(gen));
        out.push_str(&format!("{:<10} {:>12} {:>12} {:>12}\n", gen.variant_name(), core, total - core, total));
    }
    Ok(out)
}
