use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use siatrans::checkpoint::Checkpoint;
use siatrans::config::{Preset, RunConfig};
use siatrans::cost::count_cost;
use siatrans::data::save_map;
use siatrans::gradient_suite::{end_to_end_probe, op_suite};
use siatrans::model::FusionPolicy;
use siatrans::pipeline;
use siatrans::{Error, Result};

/// RGB-D salient object detection with a siamese transformer.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Log level when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a dataset directory.
    Train(TrainArgs),
    /// Predict saliency maps for one pair or a directory of pairs.
    Infer(InferArgs),
    /// Write depth-quality labels for a dataset using a baseline checkpoint.
    LabelDepth(LabelArgs),
    /// Score predicted maps against ground truth.
    Eval(EvalArgs),
    /// Report parameters and multiply-accumulates.
    CountParams(CountArgs),
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Every option mirrors a field of the run configuration. Values given here
/// override those from `--config`.
#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset root with RGB/, depth/, GT/ and optionally labels.tsv.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with any of the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated, zero-based.
    #[arg(long, value_delimiter = ',')]
    decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    adaptive_fusion: Option<bool>,
    #[arg(long)]
    interactive_attention: Option<bool>,
    #[arg(long)]
    siamese: Option<bool>,
    #[arg(long)]
    classification_loss: Option<bool>,
    /// Seven comma-separated weights.
    #[arg(long, value_delimiter = ',')]
    loss_weights: Option<Vec<f64>>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl TrainArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut run = match (&self.config, self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(Preset::Desk)) => RunConfig::desk(),
            (None, _) => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    run.$field = v;
                }
            )*};
        }
        set!(preset, batch_size, epochs, lr, decay_epochs, decay_factor, beta1, beta2, eps, seed);
        set!(adaptive_fusion, interactive_attention, siamese, classification_loss, checkpoint_every);
        if self.image_size.is_some() {
            run.image_size = self.image_size;
        }
        if self.max_steps.is_some() {
            run.max_steps = self.max_steps;
        }
        if let Some(w) = &self.loss_weights {
            run.loss_weights = w
                .as_slice()
                .try_into()
                .map_err(|_| Error::Usage(format!("--loss-weights needs 7 values, got {}", w.len())))?;
        }
        Ok(run)
    }
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// RGB image of a single pair.
    #[arg(long, requires = "depth", conflicts_with = "data")]
    rgb: Option<PathBuf>,
    #[arg(long, requires = "rgb")]
    depth: Option<PathBuf>,
    /// Directory with RGB/ and depth/.
    #[arg(long, required_unless_present = "rgb")]
    data: Option<PathBuf>,
    /// Output PNG for a single pair, or output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "gated")]
    policy: FusionPolicy,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Defaults to labels.tsv inside the dataset.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of predicted maps.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth masks with the same file names.
    #[arg(long)]
    gt: PathBuf,
    /// Where to write `<name>.csv` and `<name>_pr.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    name: String,
}

#[derive(Debug, Args)]
struct CountArgs {
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    #[arg(long)]
    image_size: Option<usize>,
    /// Model options from a run configuration; `--preset` and `--image-size` win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Expected parameters in millions.
    #[arg(long)]
    expect_params: Option<f64>,
    /// Expected multiply-accumulates in billions.
    #[arg(long)]
    expect_macs: Option<f64>,
    /// Allowed relative deviation from the expectations.
    #[arg(long, default_value_t = 0.10)]
    tolerance: f64,
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    log::info!("{}: epoch {}, image size {}", path.display(), ckpt.epoch, ckpt.config.image_size());
    Ok(ckpt)
}

fn train(args: &TrainArgs) -> Result<()> {
    let run = args.run_config()?;
    let history = pipeline::train_dir(&run, &args.data, &args.out)?;
    if let Some(last) = history.last() {
        println!(
            "trained {} epochs, final loss {:.6}, checkpoint {}",
            last.epoch + 1,
            last.total,
            args.out.join(pipeline::FINAL_CHECKPOINT).display()
        );
    }
    Ok(())
}

fn infer(args: &InferArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    match (&args.rgb, &args.depth, &args.data) {
        (Some(rgb), Some(depth), None) => {
            let (pred, map) = pipeline::infer_files(&ckpt, rgb, depth, args.policy)?;
            save_map(&args.out, &map.data, map.height, map.width)?;
            let id = rgb.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
            println!("{}", pred.record(id)?.to_line());
        }
        (None, None, Some(data)) => {
            for r in pipeline::infer_dir(&ckpt, data, &args.out, args.policy)? {
                println!("{}", r.to_line());
            }
        }
        _ => return Err(Error::Usage("give either --rgb and --depth, or --data".into())),
    }
    Ok(())
}

fn label_depth(args: &LabelArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (path, records) = pipeline::label_dir(&ckpt, &args.data, args.out.as_deref(), args.batch_size)?;
    let good = records.iter().filter(|r| r.label == 1).count();
    println!("{} labels ({good} usable depth) written to {}", records.len(), path.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let result = pipeline::evaluate_dirs(&args.pred, &args.gt)?;
    if let Some(dir) = &args.out {
        result.write(dir, &args.name)?;
    }
    let s = &result.summary;
    println!(
        "{} images  MAE {:.4}  max-F {:.4}  S {:.4}  max-E {:.4}",
        s.images, s.mae, s.max_f, s.s_measure, s.max_e
    );
    Ok(())
}

fn count_params(args: &CountArgs) -> Result<()> {
    let mut run = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    run.preset = args.preset;
    if args.image_size.is_some() {
        run.image_size = args.image_size;
    }
    let report = count_cost(&run.model_config()?);
    print!("{report}");
    let params = report.total.params as f64 / 1e6;
    let macs = report.total.macs as f64 / 1e9;
    let mut outside = Vec::new();
    for (what, actual, expected) in [("params (M)", params, args.expect_params), ("MACs (G)", macs, args.expect_macs)] {
        if let Some(e) = expected {
            let dev = (actual - e) / e;
            println!("{what}: {actual:.3} vs expected {e:.3} ({:+.1}%)", 100.0 * dev);
            if dev.abs() > args.tolerance {
                outside.push(what);
            }
        }
    }
    if !outside.is_empty() {
        return Err(Error::Numeric {
            context: "count-params".into(),
            detail: format!("{} outside ±{:.0}%", outside.join(" and "), 100.0 * args.tolerance),
        });
    }
    Ok(())
}

fn gradcheck(seed: u64) -> Result<()> {
    let mut results = op_suite(seed)?;
    results.push(end_to_end_probe(seed)?);
    for r in &results {
        println!(
            "{:<24} max rel err {:.2e} (tolerance {:.0e}) {}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Error::Numeric {
            context: "gradcheck".into(),
            detail: format!("failed: {}", failed.join(", ")),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::LabelDepth(a) => label_depth(a),
        Command::Eval(a) => eval(a),
        Command::CountParams(a) => count_params(a),
        Command::Gradcheck { seed } => gradcheck(*seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_overrides_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "preset = \"desk\"\nbatch_size = 4\nlr = 0.001\nadaptive_fusion = false\n").unwrap();
        let cli = Cli::try_parse_from([
            "siatrans", "train", "--data", "d", "--out", "o", "--config", path.to_str().unwrap(), "--lr", "0.01",
            "--decay-epochs", "5,9", "--siamese", "false",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else { panic!("not train") };
        let run = args.run_config().unwrap();
        assert_eq!((run.preset, run.batch_size, run.lr), (Preset::Desk, 4, 0.01));
        assert_eq!(run.decay_epochs, vec![5, 9]);
        assert!(!run.adaptive_fusion && !run.siamese && run.interactive_attention);
    }

    #[test]
    fn bad_weights_and_unknown_keys_are_usage_errors() {
        let cli = Cli::try_parse_from(["siatrans", "train", "--data", "d", "--out", "o", "--loss-weights", "1,2"]).unwrap();
        let Command::Train(args) = cli.command else { panic!("not train") };
        assert_eq!(args.run_config().unwrap_err().exit_code(), 1);
        assert!(RunConfig::from_toml_str("batch = 3").is_err());
    }
}
