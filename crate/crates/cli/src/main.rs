use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use docsig::store::load_manifest;
use docsig_cli::config::{ExperimentConfig, Signature, SweepSpec};
use docsig_cli::error::{CliError, Result};
use docsig_cli::synth::{gen_synthetic, SynthSpec};
use docsig_cli::{evaluate, extract, patents, report, sweep, train};

#[derive(Parser)]
#[command(name = "docsig", version, about = "Run-length and Fisher vector document signatures")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON Lines corpus manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Signature kinds to use (rl, fv, fused).
    #[arg(long = "signature", global = true, value_parser = parse_signature)]
    signatures: Vec<Signature>,
    #[arg(long, global = true)]
    rl_size: Option<usize>,
    #[arg(long, global = true)]
    rl_levels: Option<usize>,
    #[arg(long, global = true)]
    rl_bins: Option<usize>,
    #[arg(long, global = true)]
    fv_size: Option<usize>,
    #[arg(long, global = true)]
    fv_window: Option<usize>,
    #[arg(long, global = true)]
    fv_dim: Option<usize>,
    /// Gaussian exponent g (2^(g+3) Gaussians).
    #[arg(long, global = true)]
    fv_gaussians: Option<usize>,
    #[arg(long, global = true)]
    fv_scales: Option<usize>,
    #[arg(long, global = true)]
    fv_levels: Option<usize>,
    /// Allow FV extraction on large unresized pages.
    #[arg(long, global = true)]
    allow_small_windows: bool,
    #[arg(long, global = true)]
    knn_k: Option<usize>,
    #[arg(long, global = true)]
    ml_dim: Option<usize>,
    #[arg(long, global = true)]
    splits: Option<usize>,
    #[arg(long, global = true)]
    train_ratio: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute signature stores for the manifest.
    Extract,
    /// Learn the PCA and GMM of the FV vocabulary.
    TrainVocab,
    /// Train a one-vs-all SVM on every labeled item.
    TrainClf,
    /// Evaluate classifiers and retrieval over the splits.
    Eval,
    /// Extract and evaluate a parameter grid.
    Sweep {
        /// Signature to sweep, overriding the config.
        #[arg(long, value_parser = parse_signature)]
        over: Option<Signature>,
        /// Axis values such as `L=1,2,3`; repeatable.
        #[arg(long = "axis")]
        axes: Vec<String>,
    },
    /// Rank patents with the configured strategy cells.
    Patent,
    /// Write a synthetic corpus and its manifest into --out.
    GenSynthetic {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 60)]
        per_class: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 336)]
        height: usize,
        /// Spread the images over this many patent groups.
        #[arg(long)]
        patents: Option<usize>,
    },
    /// Generate the train/test splits.
    Splits,
}

fn parse_signature(s: &str) -> std::result::Result<Signature, String> {
    match s {
        "rl" => Ok(Signature::Rl),
        "fv" => Ok(Signature::Fv),
        "fused" => Ok(Signature::Fused),
        _ => Err(format!("unknown signature {s:?}; expected rl, fv or fused")),
    }
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($field:expr => $flag:expr),* $(,)?) => {
            $(if let Some(v) = $flag.clone() { $field = v; })*
        };
    }
    set! {
        cfg.seed => c.seed,
        cfg.out => c.out,
        cfg.manifest => c.manifest,
        cfg.rl.size => c.rl_size,
        cfg.rl.levels => c.rl_levels,
        cfg.rl.bins => c.rl_bins,
        cfg.fv.size => c.fv_size,
        cfg.fv.window => c.fv_window,
        cfg.fv.descriptor_dim => c.fv_dim,
        cfg.fv.gaussians => c.fv_gaussians,
        cfg.fv.scales => c.fv_scales,
        cfg.fv.levels => c.fv_levels,
        cfg.classifiers.k => c.knn_k,
        cfg.classifiers.ml_dim => c.ml_dim,
        cfg.splits.count => c.splits,
        cfg.splits.ratio => c.train_ratio,
    }
    if !c.signatures.is_empty() {
        cfg.signatures = c.signatures.clone();
    }
    if c.allow_small_windows {
        cfg.fv.allow_small_windows = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_axes(specs: &[String]) -> Result<BTreeMap<String, Vec<usize>>> {
    specs
        .iter()
        .map(|s| {
            let (name, values) = s
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("axis {s:?} is not NAME=v1,v2")))?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| CliError::config(format!("axis {s:?}: {e}")))?;
            Ok((name.trim().to_string(), values))
        })
        .collect()
}

fn print<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.common)?;
    if let Command::GenSynthetic {
        classes,
        per_class,
        width,
        height,
        patents,
    } = cli.command
    {
        let spec = SynthSpec {
            classes,
            per_class,
            seed: cfg.seed,
            width,
            height,
            patents,
        };
        let m = gen_synthetic(&spec, &cfg.out)?;
        eprintln!(
            "wrote {} images in {} classes to {}",
            m.len(),
            m.classes().len(),
            cfg.out.join("manifest.jsonl").display()
        );
        return Ok(());
    }
    if let Command::Sweep { over, axes } = &cli.command {
        if !axes.is_empty() || over.is_some() {
            let base = cfg.sweep.take();
            let signature = over
                .or(base.as_ref().map(|s| s.signature))
                .unwrap_or(Signature::Rl);
            let axes = if axes.is_empty() {
                base.map(|s| s.axes).unwrap_or_default()
            } else {
                parse_axes(axes)?
            };
            cfg.sweep = Some(SweepSpec { signature, axes });
        }
    }
    cfg.write_snapshot()?;
    let manifest = load_manifest(&cfg.manifest)?;
    match cli.command {
        Command::Extract => {
            let outcomes = extract::run_extract(&cfg, &manifest)?;
            report::write_json(cfg.reports_dir().join("extract.json"), &outcomes)?;
            for o in &outcomes {
                eprintln!(
                    "{}: {} rows of dimension {}{}, {} failure(s)",
                    o.tag,
                    o.rows,
                    o.dim,
                    if o.reused { " (unchanged)" } else { "" },
                    o.failures.len()
                );
            }
            print(&outcomes);
        }
        Command::TrainVocab => print(&extract::train_vocab(&cfg, &manifest, &cfg.fv)?),
        Command::TrainClf => {
            let sig = cfg.signatures[0];
            let path = train::run_train_clf(&cfg, &manifest, sig)?;
            println!("{}", path.display());
        }
        Command::Eval => {
            let summary = evaluate::run_eval(&cfg, &manifest)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            print(&summary.configs.iter().map(|c| (&c.name, c.mean, c.std)).collect::<Vec<_>>());
        }
        Command::Sweep { .. } => {
            let summary = sweep::run_sweep(&cfg, &manifest)?;
            print(&summary.stats);
        }
        Command::Patent => print(&patents::run_patent(&cfg, &manifest)?),
        Command::Splits => {
            let plan = evaluate::make_splits(&cfg, &manifest)?;
            for w in &plan.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("wrote {} split(s) to {}", plan.splits.len(), cfg.out.join("splits.json").display());
        }
        Command::GenSynthetic { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
