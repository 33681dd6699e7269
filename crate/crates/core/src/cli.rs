//! The `robust-detect` command line.
//!
//! Exit codes: 0 on success (including `--help`), 1 on usage errors, 2 on
//! runtime failures such as I/O errors or a non-finite loss. Human-readable
//! summaries go to stdout; machine-readable files go to the output
//! directory.
//!
//! Seed precedence, highest first: `--seed`, `--set seed=..`, the config
//! file, the `ROBUST_CLF_SEED` environment variable, the built-in default.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::bank::{generate_synthetic, load_bank, save_bank, BankFormat, FeatureBank};
use crate::config::{ConfigError, TrainConfig};
use crate::metrics::{evaluate, write_roc_csv};
use crate::net::{load_checkpoint, save_checkpoint};
use crate::trainer::{
    landscape_slice, run_ablation, run_staged_sweep, run_sweep, split_holdout, train_with_progress,
    write_ablation_csv, write_landscape_csv, write_sweep_csv, SweepParam, SweepRow,
};

pub const SEED_ENV: &str = "ROBUST_CLF_SEED";

#[derive(Debug, Parser)]
#[command(name = "robust-detect", version, about = "Train and evaluate a real-vs-generated image detector on CLIP feature banks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic two-class Gaussian bank.
    GenSynth(GenSynthArgs),
    /// Print class counts and dimension of a bank.
    InspectBank(InspectArgs),
    /// Train a detector and write a checkpoint plus run record.
    Train(TrainArgs),
    /// Score a bank with a checkpoint and report exact AUC.
    Eval(EvalArgs),
    /// Train the five ablation variants and compare held-out AUC.
    Ablate(ExperimentArgs),
    /// Sweep alpha or gamma (or alpha then gamma) and record held-out AUC.
    Sweep(SweepArgs),
    /// Evaluate the loss on a 2-D slice of parameter space around a checkpoint.
    Landscape(LandscapeArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long)]
    n_pos: usize,
    #[arg(long)]
    n_neg: usize,
    #[arg(long)]
    dim: usize,
    /// Mean shift of the positive class along the first coordinate.
    #[arg(long, default_value_t = 6.0)]
    sep: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; a `.csv` extension selects the CSV format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    bank: PathBuf,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. `--set alpha=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    bank: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Training bank.
    #[arg(long)]
    bank: PathBuf,
    /// Held-out bank. Without it, a stratified split of `--bank` is held out.
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Fraction of each class held out when `--heldout` is absent.
    #[arg(long, default_value_t = 0.2)]
    holdout_fraction: f64,
    /// Concurrent training runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepTarget {
    Alpha,
    Gamma,
    /// Alpha first, then gamma at the best alpha.
    Staged,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum)]
    parameter: SweepTarget,
    /// `start:stop:step` (inclusive) or a comma list.
    #[arg(long, default_value = "0.1:0.9:0.1")]
    values: String,
    /// Gamma values for the second stage of a staged sweep.
    #[arg(long, default_value = "0.1:0.9:0.1")]
    gamma_values: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LandscapeArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 21)]
    grid: usize,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::GenSynth(a) => gen_synth(a, out),
        Command::InspectBank(a) => inspect(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Ablate(a) => ablate_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Landscape(a) => landscape_cmd(a, out),
    }
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    Ok(flag.or(env_seed()?).unwrap_or(0))
}

fn effective_config(args: &ConfigArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        cfg.merge_kv(&text)?;
    }
    for kv in &args.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_bank(path: &Path) -> Result<FeatureBank, CliError> {
    load_bank(path, BankFormat::from_path(path)).map_err(CliError::runtime)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut w = io::BufWriter::new(file);
    f(&mut w)
        .and_then(|()| w.flush())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text).map_err(CliError::runtime)
}

fn gen_synth(a: GenSynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.dim == 0 {
        return Err(CliError::Usage("--dim must be at least 1".into()));
    }
    let seed = resolve_seed(a.seed)?;
    let bank = generate_synthetic(a.n_pos, a.n_neg, a.dim, a.sep, seed).map_err(CliError::runtime)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_bank(&bank, &a.out, BankFormat::from_path(&a.out)).map_err(CliError::runtime)?;
    say(
        out,
        format_args!(
            "wrote {} ({} positive, {} negative, dim {}, seed {seed})\n",
            a.out.display(),
            a.n_pos,
            a.n_neg,
            a.dim
        ),
    )
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bank = read_bank(&a.bank)?;
    let c = bank.class_counts();
    say(
        out,
        format_args!(
            "examples={}\nn_pos={}\nn_neg={}\ndim={}\n",
            bank.len(),
            c.n_pos,
            c.n_neg,
            bank.dim()
        ),
    )
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = effective_config(&a.config)?;
    let bank = read_bank(&a.bank)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.cfg"), |w| w.write_all(cfg.to_kv().as_bytes()))?;
    let (model, mut record) = train_with_progress(&bank, &cfg, |e| {
        let _ = writeln!(
            out,
            "epoch {:>3}  loss {:.6}  cvar {:.6}  auc-term {:.6}  lambda {:.6}  lr {:.3e}  {:.2}s",
            e.epoch, e.mean_total, e.mean_cvar, e.mean_auc, e.mean_lambda, e.lr, e.wall_seconds
        );
    })
    .map_err(CliError::runtime)?;
    let ckpt = a.out.join("model.ckpt");
    save_checkpoint(&model, &ckpt).map_err(CliError::runtime)?;
    record.checkpoint = Some(ckpt.clone());
    write_file(&a.out.join("run_record.txt"), |w| w.write_all(record.to_kv().as_bytes()))?;
    if record.auc_term_disabled {
        say(out, format_args!("note: bank has a single class, AUC term was inactive\n"))?;
    }
    say(out, format_args!("checkpoint {}\n", ckpt.display()))
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checkpoint(&a.model).map_err(CliError::runtime)?;
    let bank = read_bank(&a.bank)?;
    let report = evaluate(&model, &bank).map_err(CliError::runtime)?;
    let dir = a
        .out
        .unwrap_or_else(|| a.model.parent().map(Path::to_path_buf).unwrap_or_default());
    if !dir.as_os_str().is_empty() {
        create_dir(&dir)?;
    }
    write_file(&dir.join("roc.csv"), |w| write_roc_csv(&report.roc_points, w))?;
    write_file(&dir.join("eval_report.txt"), |w| w.write_all(report.to_kv().as_bytes()))?;
    say(
        out,
        format_args!(
            "n_pos {}  n_neg {}\nAUC {}\nAUC {}%\n",
            report.n_pos,
            report.n_neg,
            report.auc,
            report.auc_percent()
        ),
    )
}

fn load_split(d: &DataArgs, seed: u64) -> Result<(FeatureBank, FeatureBank), CliError> {
    if d.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let bank = read_bank(&d.bank)?;
    match &d.heldout {
        Some(path) => Ok((bank, read_bank(path)?)),
        None => {
            if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
                return Err(CliError::Usage("--holdout-fraction must be in (0, 1)".into()));
            }
            Ok(split_holdout(&bank, d.holdout_fraction, seed))
        }
    }
}

fn ablate_cmd(a: ExperimentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = effective_config(&a.config)?;
    let (train_bank, heldout) = load_split(&a.data, cfg.seed)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.cfg"), |w| w.write_all(cfg.to_kv().as_bytes()))?;
    let rows = run_ablation(&train_bank, &heldout, &cfg, a.data.jobs).map_err(CliError::runtime)?;
    write_file(&a.out.join("ablation.csv"), |w| write_ablation_csv(&rows, w))?;
    say(out, format_args!("variant  cvar   auc    sam    held-out AUC\n"))?;
    for r in &rows {
        let mark = |b: bool| if b { "yes" } else { "no" };
        say(
            out,
            format_args!(
                "{:<8} {:<6} {:<6} {:<6} {:.6}\n",
                r.variant.name(),
                mark(r.ablation.use_cvar),
                mark(r.ablation.use_auc),
                mark(r.ablation.use_sam),
                r.auc
            ),
        )?;
    }
    Ok(())
}

/// Parses `start:stop:step` (inclusive, values rounded to 1e-9) or `a,b,c`.
pub fn parse_values(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| -> Result<f64, String> {
        let v: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{s:?} is not finite"))
        }
    };
    let parts: Vec<&str> = text.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step <= 0.0 || stop < start {
                return Err(format!("range {text:?} needs start <= stop and step > 0"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
            (0..n)
                .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
                .collect()
        }
        [_] => text.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(format!("cannot parse values {text:?}")),
    };
    if values.is_empty() {
        return Err("no values given".into());
    }
    Ok(values)
}

fn write_sweep(dir: &Path, param: SweepParam, rows: &[SweepRow], out: &mut dyn Write) -> Result<(), CliError> {
    let path = dir.join(format!("sweep_{}.csv", param.key()));
    write_file(&path, |w| write_sweep_csv(param, rows, w))?;
    say(out, format_args!("{:<8} held-out AUC\n", param.key()))?;
    for r in rows {
        say(out, format_args!("{:<8} {:.6}\n", r.value, r.auc))?;
    }
    say(out, format_args!("wrote {}\n", path.display()))
}

fn sweep_cmd(a: SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = effective_config(&a.config)?;
    let values = parse_values(&a.values).map_err(CliError::Usage)?;
    let (train_bank, heldout) = load_split(&a.data, cfg.seed)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.cfg"), |w| w.write_all(cfg.to_kv().as_bytes()))?;
    let jobs = a.data.jobs;
    let single = |param: SweepParam| -> Result<Vec<SweepRow>, CliError> {
        for &v in &values {
            param.apply(&cfg, v).validate()?;
        }
        run_sweep(&train_bank, &heldout, &cfg, param, &values, jobs).map_err(CliError::runtime)
    };
    match a.parameter {
        SweepTarget::Alpha => write_sweep(&a.out, SweepParam::Alpha, &single(SweepParam::Alpha)?, out),
        SweepTarget::Gamma => write_sweep(&a.out, SweepParam::Gamma, &single(SweepParam::Gamma)?, out),
        SweepTarget::Staged => {
            let gammas = parse_values(&a.gamma_values).map_err(CliError::Usage)?;
            for &v in &values {
                SweepParam::Alpha.apply(&cfg, v).validate()?;
            }
            for &v in &gammas {
                SweepParam::Gamma.apply(&cfg, v).validate()?;
            }
            let staged =
                run_staged_sweep(&train_bank, &heldout, &cfg, &values, &gammas, jobs).map_err(CliError::runtime)?;
            write_sweep(&a.out, SweepParam::Alpha, &staged.alpha_rows, out)?;
            say(out, format_args!("best alpha {}\n", staged.best_alpha))?;
            write_sweep(&a.out, SweepParam::Gamma, &staged.gamma_rows, out)?;
            say(out, format_args!("best gamma {}\n", staged.best_gamma))
        }
    }
}

fn landscape_cmd(a: LandscapeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = effective_config(&a.config)?;
    if a.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    if !(a.radius > 0.0 && a.radius.is_finite()) {
        return Err(CliError::Usage("--radius must be positive".into()));
    }
    let model = load_checkpoint(&a.model).map_err(CliError::runtime)?;
    let bank = read_bank(&a.bank)?;
    let grid = landscape_slice(&model, &bank, &cfg, a.grid, a.radius, cfg.seed).map_err(CliError::runtime)?;
    create_dir(&a.out)?;
    let path = a.out.join("landscape.csv");
    write_file(&path, |w| write_landscape_csv(&grid, w))?;
    let min = grid.losses.iter().copied().fold(f64::INFINITY, f64::min);
    let max = grid.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    say(
        out,
        format_args!(
            "grid {g}x{g}  radius {}  center loss {}  min {min}  max {max}\nwrote {}\n",
            a.radius,
            grid.center_loss,
            path.display(),
            g = a.grid
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("robust-detect").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn value_ranges() {
        let v = parse_values("0.1:0.9:0.1").unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v[2], 0.3);
        assert_eq!(v[8], 0.9);
        assert_eq!(parse_values("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_values("0.2, 0.4").unwrap(), vec![0.2, 0.4]);
        assert!(parse_values("1:0:0.1").is_err());
        assert!(parse_values("a,b").is_err());
        assert!(parse_values("0:1").is_err());
    }

    #[test]
    fn help_and_usage_codes() {
        let (code, out, _) = run_str(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("gen-synth"));
        for sub in ["gen-synth", "inspect-bank", "train", "eval", "ablate", "sweep", "landscape"] {
            assert_eq!(run_str(&[sub, "--help"]).0, 0, "{sub}");
        }
        let (code, _, err) = run_str(&["frobnicate"]);
        assert_eq!(code, 1);
        assert!(!err.is_empty());
        assert_eq!(run_str(&["train", "--bogus"]).0, 1);
    }

    #[test]
    fn missing_bank_is_a_runtime_error() {
        let (code, _, err) = run_str(&["inspect-bank", "/nonexistent/bank.fb"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error:"));
    }
}
