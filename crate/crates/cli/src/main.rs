use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mew_core::check::{fft_suite, grad_suite, modulation_suite, CheckLine};
use mew_core::data::{synth_generate, SynthConfig};
use mew_core::kv::KeyValues;
use mew_core::train::{ablate, check_compatible, evaluate, train_with, AblationConfig, LOG_HEADER};
use mew_core::{Checkpoint, Manifest, Split, TrainConfig};

#[derive(Parser)]
#[command(name = "mew", version, about = "MEW-UNet segmentation: data, training, evaluation, checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic PGM dataset with a manifest.
    Synth(SynthArgs),
    /// Train from a manifest; writes train.log, config.txt and checkpoints.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Finite-difference gradient checks for every op, a block, and the network.
    Gradcheck(GradArgs),
    /// FFT and spectral modulation against direct transforms.
    Fftcheck(FftArgs),
    /// Branch and normalization sweep on synthetic data.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    extent: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// `key=value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting preset: isic or synapse.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// adamw or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of hw, cw, ch, dw.
    #[arg(long)]
    branches: Option<String>,
    /// group or batch.
    #[arg(long)]
    norm: Option<String>,
    /// standard or toy.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Where to write the JSON report (default: next to the checkpoint).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Directory for `<id>_pred.pgm` label maps.
    #[arg(long)]
    export: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// HD95 pixel spacing as `row,col`.
    #[arg(long, default_value = "1,1", value_parser = parse_spacing)]
    spacing: (f64, f64),
}

#[derive(Args)]
struct GradArgs {
    /// Skip the end-to-end network check.
    #[arg(long)]
    ops_only: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct FftArgs {
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    extent: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_spacing(s: &str) -> std::result::Result<(f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [y, x] if y > 0.0 && x > 0.0 => Ok((y, x)),
        _ => Err(format!("expected two positive numbers, got `{s}`")),
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut kv = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            KeyValues::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => KeyValues::new(),
    };
    if let Some(p) = &a.preset {
        kv.set("preset", p);
    }
    let mut cfg = TrainConfig::from_kv(&kv)?;
    let mut over = KeyValues::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            over.set(k, v);
        }
    };
    put("manifest", a.manifest.as_ref().map(|p| p.display().to_string()));
    put("out_dir", a.out.as_ref().map(|p| p.display().to_string()));
    put("lr", a.lr.map(|v| v.to_string()));
    put("epochs", a.epochs.map(|v| v.to_string()));
    put("optimizer", a.optimizer.clone());
    put("batch_size", a.batch_size.map(|v| v.to_string()));
    put("seed", a.seed.map(|v| v.to_string()));
    put("branches", a.branches.clone());
    put("norm", a.norm.clone());
    put("model", a.model.clone());
    put("num_classes", a.classes.map(|v| v.to_string()));
    put("augment", a.no_augment.then(|| "false".to_string()));
    cfg.apply(&over)?;
    Ok(cfg)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    let out = train_with(&cfg, |rec| {
        if rec.epoch == 1 {
            println!("{LOG_HEADER}");
        }
        println!("{}", rec.to_line());
    })?;
    eprintln!(
        "best epoch {} (val DSC {}); checkpoints in {}",
        out.best_epoch,
        out.best.meta.get("val_dsc").unwrap_or("n/a"),
        cfg.out_dir.display()
    );
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let manifest = Manifest::load(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let ds = manifest.load_split(a.split, ck.config.num_classes)?;
    check_compatible(&ck, &ds)?;
    let net = ck.restore()?;
    let report = evaluate(&net, &ds, a.batch_size, a.spacing, a.export.as_deref())?;
    print!("{}", report.to_tsv());
    let json = a.json.clone().unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("metrics_{}.json", a.split))
    });
    std::fs::write(&json, report.to_json()).with_context(|| format!("writing {}", json.display()))?;
    eprintln!("wrote {}", json.display());
    Ok(())
}

fn print_checks(lines: &[CheckLine]) -> bool {
    for l in lines {
        println!("{}", l.to_line());
    }
    lines.iter().all(CheckLine::passed)
}

fn run_ablate(a: &AblateArgs) -> Result<()> {
    let mut cfg = AblationConfig::standard();
    if let Some(e) = a.epochs {
        cfg.base.epochs = e;
    }
    if let Some(e) = a.extent {
        cfg.extent = e;
    }
    if let Some(lr) = a.lr {
        cfg.base.lr = lr;
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(s) = a.data_seed {
        cfg.data_seed = s;
    }
    let start = Instant::now();
    let report = ablate(&cfg, |line| eprintln!("{line}\t{:.0}s", start.elapsed().as_secs_f64()))?;
    let table = report.to_tsv();
    print!("{table}");
    if let Some(p) = &a.out {
        std::fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Synth(a) => {
            let cfg = SynthConfig {
                count: a.count,
                extent: a.extent,
                num_classes: a.classes,
                channels: a.channels,
                seed: a.seed,
            };
            let m = synth_generate(&a.out, &cfg)?;
            eprintln!("wrote {} samples to {}", m.entries.len(), a.out.display());
        }
        Cmd::Train(a) => run_train(a)?,
        Cmd::Eval(a) => run_eval(a)?,
        Cmd::Gradcheck(a) => {
            if !print_checks(&grad_suite(!a.ops_only, a.seed)?) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Fftcheck(a) => {
            if a.max_len == 0 || a.trials == 0 {
                bail!("--max-len and --trials must be positive");
            }
            let mut lines = fft_suite(a.max_len, a.trials, a.seed)?;
            lines.extend(modulation_suite(a.seed)?);
            if !print_checks(&lines) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Ablate(a) => run_ablate(a)?,
    }
    Ok(ExitCode::SUCCESS)
}
