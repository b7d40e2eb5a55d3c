//! `rco`: synthesize data, train, evaluate, sweep γ and export learned
//! permutations. Data products go to files; stdout carries one summary line
//! per result.

mod overrides;
mod source;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rco::checkpoint::Checkpoint;
use rco::data::{synthesize, Split, SyntheticTaskSpec};
use rco::nn::PermutationMode;
use rco::rco::write_matrix_csv;
use rco::trainer::{evaluate, sweep_gamma, timing_report, MetricLog, TrainConfig, Trainer, PAPER_GAMMAS};

use source::{DataSource, TargetArgs};

const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Parser)]
#[command(name = "rco", version, about = "Learnable axis permutations for CNN-LSTM forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-permutation series and its sidecar.
    Synth(SynthArgs),
    /// Train one model and write metrics, checkpoint and permutations.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train a baseline plus one model per γ over several seeds.
    Sweep(SweepArgs),
    /// Export the soft and hardened matrices of a checkpoint.
    InspectPerm(InspectArgs),
    /// Compare epoch and inference time with and without the operator.
    Timing(TimingArgs),
}

#[derive(Args)]
struct Output {
    /// Output directory, created if absent.
    #[arg(short, long)]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML or JSON task description; flags below take precedence.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    turbines: Option<usize>,
    #[arg(long)]
    attrs: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the canonical order.
    #[arg(long)]
    no_shuffle: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct DataArgs {
    /// Series CSV, or a directory containing series.csv.
    #[arg(short, long)]
    data: PathBuf,
    #[arg(long)]
    target_turbine: Option<String>,
    #[arg(long)]
    target_attribute: Option<String>,
    /// Attribute columns to keep, comma separated.
    #[arg(long, value_delimiter = ',')]
    attributes: Option<Vec<String>>,
}

impl DataArgs {
    fn target(&self) -> TargetArgs {
        TargetArgs {
            turbine: self.target_turbine.clone(),
            attribute: self.target_attribute.clone(),
            attributes: self.attributes.clone(),
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// TrainConfig as TOML, or JSON for `.json` files.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Enable the permutation operator.
    #[arg(long, overrides_with = "no_rco")]
    rco: bool,
    /// Train the plain backbone.
    #[arg(long)]
    no_rco: bool,
    /// Evaluate with hardened permutations.
    #[arg(long)]
    hard_eval: bool,
    /// Any other config field, e.g. `--set network.lstm_hidden=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        for set in &self.sets {
            config = overrides::apply(&config, set)?;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.gamma {
            config.gamma = v;
        }
        if let Some(v) = self.lambda {
            config.lambda = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if self.rco {
            config.rco_enabled = true;
        }
        if self.no_rco {
            config.rco_enabled = false;
        }
        if self.hard_eval {
            config.hard_eval = true;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file or the run directory holding it.
    checkpoint: PathBuf,
    /// Override the series recorded in the checkpoint.
    #[arg(short, long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    hard_eval: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// γ values; defaults to 0, 0.2, …, 1.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "val")]
    split: Split,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct InspectArgs {
    checkpoint: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct TimingArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 5)]
    timing_epochs: usize,
    #[arg(long, default_value_t = 20)]
    rounds: usize,
    #[command(flatten)]
    output: Output,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RCO_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": ").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::InspectPerm(a) => inspect(a),
        Command::Timing(a) => timing(a),
    }
}

/// Creates the directory and checks that none of `files` exist unless
/// forced.
fn prepare(output: &Output, files: &[&str]) -> Result<()> {
    std::fs::create_dir_all(&output.out).with_context(|| format!("creating {}", output.out.display()))?;
    if !output.force {
        if let Some(f) = files.iter().map(|f| output.out.join(f)).find(|p| p.exists()) {
            bail!("{} exists; pass --force to overwrite", f.display());
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SyntheticTaskSpec = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text)?
            } else {
                toml::from_str(&text)?
            }
        }
        None => SyntheticTaskSpec::default(),
    };
    spec.turbines = a.turbines.unwrap_or(spec.turbines);
    spec.attributes = a.attrs.unwrap_or(spec.attributes);
    spec.length = a.length.unwrap_or(spec.length);
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.shuffle &= !a.no_shuffle;
    prepare(&a.output, &[source::SERIES_FILE, source::SIDECAR_FILE])?;
    let task = synthesize(&spec)?;
    task.export(&spec, &a.output.out)?;
    println!(
        "synth turbines={} attributes={} timesteps={} target={}/{} out={}",
        spec.turbines,
        spec.attributes,
        spec.length,
        task.table.turbines[task.target_turbine],
        task.table.attributes[task.target_attribute],
        a.output.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let loaded = source::load(&a.data.data, &a.data.target())?;
    let data = loaded.source.windows(&loaded.table, config.history, config.horizon)?;
    prepare(&a.output, &["metrics.csv", CHECKPOINT_FILE, "config.toml", "permutations.json"])?;

    let mut trainer = Trainer::new(&config, &data)?;
    let mut log = MetricLog::default();
    for _ in 0..config.epochs {
        log.rows.extend(trainer.run_epoch(&data)?);
    }
    let out = &a.output.out;
    log.write_csv(&out.join("metrics.csv"))?;
    std::fs::write(out.join("config.toml"), toml::to_string(&config)?)?;
    let metadata = serde_json::json!({ "data": loaded.source });
    let ckpt = Checkpoint::new(config.clone(), trainer.model, config.epochs, metadata);
    ckpt.save(&out.join(CHECKPOINT_FILE))?;
    export_permutations(&ckpt, out)?;

    let last = |s| log.last(s).map_or("-".to_string(), |r| format!("{:.6}", r.rmse));
    println!(
        "train epochs={} rco={} gamma={} train_rmse={} val_rmse={} out={}",
        config.epochs,
        config.rco_enabled,
        config.gamma,
        last(Split::Train),
        last(Split::Val),
        out.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    Checkpoint::load(&file).with_context(|| format!("loading {}", file.display()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let mut src: DataSource = serde_json::from_value(ckpt.metadata["data"].clone())
        .context("checkpoint does not record its data source")?;
    if let Some(path) = &a.data {
        src.series = if path.is_dir() { path.join(source::SERIES_FILE) } else { path.clone() };
    }
    let table = src.reload()?;
    let data = src.windows(&table, ckpt.config.history, ckpt.config.horizon)?;
    let mode = if a.hard_eval || ckpt.config.hard_eval {
        PermutationMode::Hard
    } else {
        PermutationMode::Soft
    };
    let predictions = format!("predictions_{}.csv", a.split);
    prepare(&a.output, &[&predictions])?;
    let result = evaluate(&ckpt.model, &data, a.split, mode, ckpt.config.execution)?;
    result.write_csv(&a.output.out.join(&predictions))?;
    println!(
        "eval split={} mode={:?} windows={} rmse={:.6}",
        a.split,
        mode,
        result.predictions.len(),
        result.rmse
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let loaded = source::load(&a.data.data, &a.data.target())?;
    let data = loaded.source.windows(&loaded.table, config.history, config.horizon)?;
    prepare(&a.output, &["sweep_long.csv", "sweep_wide.csv"])?;
    let gammas = a.gammas.unwrap_or_else(|| PAPER_GAMMAS.to_vec());
    let table = sweep_gamma(&config, &data, &gammas, &a.seeds, a.split)?;
    table.write(&a.output.out.join("sweep_long.csv"), &a.output.out.join("sweep_wide.csv"))?;
    for row in &table.rows {
        println!("sweep {} rmse={}", row.label, row.rmse);
    }
    Ok(())
}

fn export_permutations(ckpt: &Checkpoint, out: &Path) -> Result<usize> {
    let Some(state) = &ckpt.model.rco else {
        write_json(&out.join("permutations.json"), &Vec::<()>::new())?;
        return Ok(0);
    };
    let exports = state.exports()?;
    for e in &exports {
        write_matrix_csv(&out.join(format!("axis{}_soft.csv", e.axis)), &e.soft)?;
        write_matrix_csv(&out.join(format!("axis{}_hard.csv", e.axis)), &e.hard)?;
    }
    write_json(&out.join("permutations.json"), &exports)?;
    Ok(exports.len())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    prepare(&a.output, &["permutations.json"])?;
    let axes = export_permutations(&ckpt, &a.output.out)?;
    match &ckpt.model.rco {
        Some(state) => {
            for (axis, sel) in state.hard_selections()?.iter().enumerate() {
                if let Some(sel) = sel {
                    println!("axis {axis} rows->columns {sel:?}");
                }
            }
            println!("inspect axes={axes} tau={:e} out={}", state.tau, a.output.out.display());
        }
        None => println!("inspect axes=0 (operator disabled) out={}", a.output.out.display()),
    }
    Ok(())
}

fn timing(a: TimingArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let loaded = source::load(&a.data.data, &a.data.target())?;
    let data = loaded.source.windows(&loaded.table, config.history, config.horizon)?;
    prepare(&a.output, &["timing.json"])?;
    let report = timing_report(&config, &data, a.timing_epochs, a.rounds)?;
    write_json(&a.output.out.join("timing.json"), &report)?;
    println!(
        "timing train_ratio={:.3} infer_ratio={:.3} epoch_baseline={:.4}s epoch_rco={:.4}s",
        report.train_ratio, report.infer_ratio, report.train_epoch_baseline, report.train_epoch_rco
    );
    Ok(())
}
