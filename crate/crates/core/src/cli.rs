//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::data::{make_sine_corpus, make_sine_markov_corpus, read_corpus, write_corpus, write_stats, CorpusStats};
use crate::eval::{evaluate, EvalConfig, MetricConfig};
use crate::pipeline::{gradcheck, GradcheckConfig, Model, TrainConfig, Trainer};
use crate::schedule::DiffusionSchedule;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "seqdiff", version, about = "Mixed-type time-series diffusion: train, sample, evaluate")]
pub struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus CSV and its stats sidecar.
    GenData(GenDataArgs),
    /// Train a model from a config file and/or flags.
    Train(TrainArgs),
    /// Generate sequences from a checkpoint.
    Sample(SampleArgs),
    /// Score a synthetic corpus against real train/test corpora.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Check the cosine schedule's invariants.
    ValidateSchedule(ScheduleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    /// Sine numerical channels plus Markov discrete channels.
    #[value(alias = "sine+markov")]
    SineMarkov,
    /// Sine numerical channels only.
    Sine,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "sine-markov")]
    kind: Kind,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Numerical channels.
    #[arg(long, default_value_t = 2)]
    numeric: usize,
    /// Discrete channels.
    #[arg(long, default_value_t = 1)]
    discrete: usize,
    /// Categories per discrete channel.
    #[arg(long, default_value_t = 2)]
    categories: usize,
    #[arg(long, default_value_t = 24)]
    len: usize,
    #[arg(long, default_value_t = 0.15)]
    missing_rate: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Corpus path; stats go to `<out>.stats`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Flat `key = value` config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    diffusion_steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    real_train: PathBuf,
    #[arg(long)]
    real_test: PathBuf,
    #[arg(long)]
    synth: PathBuf,
    /// Master seed for the metric reruns.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    reruns: usize,
    /// Optimizer steps per metric model.
    #[arg(long, default_value_t = 2000)]
    metric_steps: usize,
    /// Skip the train-on-real predictive baseline.
    #[arg(long)]
    no_baseline: bool,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    numeric: usize,
    /// Category count of each discrete channel.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    categories: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    len: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 1000)]
    diffusion_steps: usize,
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Sample(a) => sample(&a),
        Command::Eval(a) => eval(&a),
        Command::Gradcheck(a) => run_gradcheck(&a),
        Command::ValidateSchedule(a) => validate_schedule(&a),
    }
}

/// `<corpus>.stats`
pub fn stats_path(corpus: &Path) -> PathBuf {
    let mut s = corpus.as_os_str().to_owned();
    s.push(".stats");
    PathBuf::from(s)
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let corpus = match a.kind {
        Kind::SineMarkov => {
            make_sine_markov_corpus(a.n, a.numeric, a.discrete, a.categories, a.len, a.missing_rate, a.seed)?
        }
        Kind::Sine => make_sine_corpus(a.n, a.numeric, a.len, a.seed)?,
    };
    write_corpus(&a.out, &corpus)?;
    write_stats(&stats_path(&a.out), &CorpusStats::from_corpus(&corpus), &corpus.categories)?;
    println!("wrote {} sequences to {}", corpus.n(), a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            TrainConfig::from_kv(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = &a.corpus {
        c.corpus = v.clone();
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = &a.out {
        c.checkpoint = v.clone();
    }
    if let Some(v) = a.steps {
        c.steps = v;
    }
    if let Some(v) = a.lambda {
        c.lambda = v;
    }
    if let Some(v) = a.diffusion_steps {
        c.diffusion_steps = v;
    }
    if let Some(v) = a.batch {
        c.batch = v;
    }
    c.validate()?;
    Ok(c)
}

fn train(a: &TrainArgs) -> Result<()> {
    let config = train_config(a)?;
    let corpus = read_corpus(&config.corpus)?;
    let path = config.checkpoint.clone();
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume_with(&Checkpoint::load(p)?, &corpus, config)?,
        None => Trainer::new(config, &corpus)?,
    };
    trainer.train(Some(&path))?;
    let tail = &trainer.losses[trainer.losses.len().saturating_sub(100)..];
    let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    println!("trained to step {}; mean loss over the last {} steps {mean:.5}; checkpoint {}", trainer.step, tail.len(), path.display());
    Ok(())
}

fn sample(a: &SampleArgs) -> Result<()> {
    let model = Model::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let corpus = model.sample(a.n, a.seed)?;
    write_corpus(&a.out, &corpus)?;
    println!("wrote {} sequences to {}", corpus.n(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = EvalConfig {
        reruns: a.reruns,
        seed: a.seed,
        metric: MetricConfig {
            steps: a.metric_steps,
            ..MetricConfig::default()
        },
        baseline: !a.no_baseline,
        ..EvalConfig::default()
    };
    let report = evaluate(&read_corpus(&a.real_train)?, &read_corpus(&a.real_test)?, &read_corpus(&a.synth)?, &cfg)?;
    let json = report.to_json();
    match &a.out {
        Some(p) => fs::write(p, &json).map_err(|e| Error::io(format!("writing {}", p.display()), e))?,
        None => print!("{json}"),
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let report = gradcheck(&GradcheckConfig {
        numeric_channels: a.numeric,
        categories: a.categories.clone(),
        len: a.len,
        hidden: a.hidden,
        embed_dim: a.embed_dim,
        seed: a.seed,
        ..GradcheckConfig::default()
    })?;
    print!("{}", report.table());
    if report.pass() {
        println!("PASS ({} parameters)", report.param_count);
        Ok(())
    } else {
        Err(Error::Numerical("gradient check failed".into()))
    }
}

fn validate_schedule(a: &ScheduleArgs) -> Result<()> {
    let s = DiffusionSchedule::cosine(a.diffusion_steps)?;
    let violations = s.validate();
    let t = s.total_steps();
    println!("T = {t}: alpha_bar(T) = {:.3e}, posterior variance at t=1 = {}", s.alpha_bar(t), s.posterior_var(1));
    if violations.is_empty() {
        println!("no violations");
        Ok(())
    } else {
        for v in &violations {
            println!("{v:?}");
        }
        Err(Error::Numerical(format!("{} schedule violations", violations.len())))
    }
}
