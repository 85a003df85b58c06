//! Command-line front end: synthetic data generation, training, retrieval
//! evaluation, gradient checking, weight-curve tables, and the
//! multi-similarity v1/v2 comparison harness.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pairweight::data::{gen_synthetic_clusters, load_csv_dataset, save_csv_dataset, Dataset};
use pairweight::eval::zero_shot_split;
use pairweight::gradcheck::{all_variants, run_variant, DEFAULT_TOLERANCE};
use pairweight::model::{load_checkpoint_file, save_checkpoint_file, MlpEmbedder};
use pairweight::trainer::{
    evaluate_model, train, EpochSnapshot, LossConfig, LossMode, MiningMode, TrainConfig,
};
use pairweight::weighting::{weight_curves, write_weight_curves_csv, WeightScheme, WeightVariant};

use config::{EvalConfig, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config file contents; exit code 2.
    Config(String),
    /// Failure while doing the work; exit code 1.
    Runtime(String),
}

impl CliError {
    fn runtime(err: pairweight::Error) -> CliError {
        CliError::Runtime(err.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "pairweight",
    about = "Metric-learning losses with mining and pair weighting: train, evaluate, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-cluster dataset CSV.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        center_scale: f64,
        #[arg(long, default_value_t = 0.3)]
        noise_sigma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON config; writes checkpoint, history and report.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset with Recall@K.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
        ks: Vec<usize>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients against finite differences for every loss variant.
    Gradcheck {
        /// Comma-separated variant names; default checks all.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long, default_value_t = 20)]
        batches: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Corrupt one analytic gradient on purpose (harness self-test).
        #[arg(long, hide = true)]
        inject_error: bool,
    },
    /// Train pair-E, MS v1 and MS v2 with matched seeds and emit a Recall@1 curve CSV.
    CompareMs {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path; defaults to <output_dir>/ms_compare.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate positive/negative weight curves over a distance grid.
    WeightCurves {
        #[arg(long, value_parser = ["constant", "power", "exponential"])]
        variant: String,
        #[arg(long, default_value_t = 0.0)]
        p: f64,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        m1: f64,
        #[arg(long, default_value_t = 0.8)]
        m2: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        #[arg(long, default_value_t = 2.0)]
        max_distance: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth {
            classes,
            per_class,
            dim,
            center_scale,
            noise_sigma,
            seed,
            out,
        } => cmd_synth(classes, per_class, dim, center_scale, noise_sigma, seed, &out),
        Command::Train { config } => cmd_train(&config),
        Command::Eval {
            checkpoint,
            dataset,
            ks,
            out,
        } => cmd_eval(&checkpoint, &dataset, &ks, out.as_deref()),
        Command::Gradcheck {
            variants,
            batches,
            seed,
            step,
            tolerance,
            inject_error,
        } => cmd_gradcheck(&variants, batches, seed, step, tolerance, inject_error),
        Command::CompareMs { config, out } => cmd_compare_ms(&config, out.as_deref()),
        Command::WeightCurves {
            variant,
            p,
            q,
            alpha,
            beta,
            m1,
            m2,
            points,
            max_distance,
            out,
        } => cmd_weight_curves(&variant, p, q, alpha, beta, m1, m2, points, max_distance, &out),
    }
}

fn cmd_synth(
    classes: usize,
    per_class: usize,
    dim: usize,
    center_scale: f64,
    noise_sigma: f64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let dataset = gen_synthetic_clusters(classes, per_class, dim, center_scale, noise_sigma, seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    save_csv_dataset(&dataset, out).map_err(CliError::runtime)?;
    println!(
        "wrote {} rows ({} classes x {} samples, dim {}) to {}",
        dataset.len(),
        classes,
        per_class,
        dim,
        out.display()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    load_csv_dataset(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Split per the eval section, or return the full dataset for both roles.
fn split_for_eval(
    dataset: &Dataset,
    eval: &Option<EvalConfig>,
) -> Result<(Dataset, Option<Dataset>, Vec<usize>), CliError> {
    match eval {
        Some(cfg) => {
            let (train_ds, test_ds) =
                zero_shot_split(dataset, cfg.train_class_fraction, cfg.split_seed)
                    .map_err(|e| CliError::Config(e.to_string()))?;
            Ok((train_ds, Some(test_ds), cfg.ks.clone()))
        }
        None => Ok((dataset.clone(), None, vec![1, 2, 4, 8])),
    }
}

fn snapshots_json(snapshots: &[EpochSnapshot]) -> String {
    let mut out = String::from("[");
    for (i, snap) in snapshots.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let report = snap.recall.to_json();
        // splice the epoch into the report object
        let _ = write!(out, "{{\"epoch\": {}, {}", snap.epoch, &report[1..]);
    }
    out.push(']');
    out
}

fn cmd_train(config_path: &Path) -> Result<(), CliError> {
    let mut config = RunConfig::load(config_path)?;
    let dataset = load_dataset(&config.dataset)?;
    config.resolve(&dataset)?;
    let (train_ds, test_ds, ks) = split_for_eval(&dataset, &config.eval)?;

    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", config.output_dir.display())))?;

    let (model, history) = train(&config.train, &train_ds, test_ds.as_ref(), &ks)
        .map_err(CliError::runtime)?;

    let checkpoint_path = config.output_dir.join("model.json");
    save_checkpoint_file(&model, &checkpoint_path).map_err(CliError::runtime)?;
    let history_path = config.output_dir.join("history.csv");
    fs::write(&history_path, history.to_csv())
        .map_err(|e| CliError::Runtime(format!("writing history: {e}")))?;
    if !history.snapshots.is_empty() {
        let snap_path = config.output_dir.join("snapshots.json");
        fs::write(&snap_path, snapshots_json(&history.snapshots))
            .map_err(|e| CliError::Runtime(format!("writing snapshots: {e}")))?;
    }

    // final report: zero-shot test split when configured, else the train data
    let report_set = test_ds.as_ref().unwrap_or(&train_ds);
    let report = evaluate_model(&model, report_set, &ks).map_err(CliError::runtime)?;
    let report_path = config.output_dir.join("report.json");
    fs::write(&report_path, report.to_json())
        .map_err(|e| CliError::Runtime(format!("writing report: {e}")))?;

    let final_loss = history.losses.last().copied().unwrap_or(0.0);
    println!(
        "trained {} steps (final loss {final_loss:.6}); outputs in {}",
        history.losses.len(),
        config.output_dir.display()
    );
    println!("report: {}", report.to_json());
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    dataset_path: &Path,
    ks: &[usize],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let model = load_checkpoint_file(checkpoint).map_err(CliError::runtime)?;
    let dataset = load_dataset(dataset_path)?;
    let report = evaluate_model(&model, &dataset, ks).map_err(CliError::runtime)?;
    match out {
        Some(path) => {
            fs::write(path, report.to_json())
                .map_err(|e| CliError::Runtime(format!("writing report: {e}")))?;
            println!("wrote {}", path.display());
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn cmd_gradcheck(
    names: &[String],
    batches: usize,
    seed: u64,
    step: f64,
    tolerance: f64,
    inject_error: bool,
) -> Result<(), CliError> {
    let catalog = all_variants();
    let selected: Vec<_> = if names.is_empty() {
        catalog.iter().collect()
    } else {
        let mut picked = Vec::new();
        for name in names {
            match catalog.iter().find(|v| v.name == name) {
                Some(v) => picked.push(v),
                None => {
                    let known: Vec<&str> = catalog.iter().map(|v| v.name).collect();
                    return Err(CliError::Config(format!(
                        "unknown variant `{name}`; expected one of {}",
                        known.join(", ")
                    )));
                }
            }
        }
        picked
    };
    if !(step > 0.0) {
        return Err(CliError::Config(format!("step must be positive, got {step}")));
    }
    println!(
        "{:<22} {:>7} {:>8} {:>13}  status",
        "variant", "batches", "coords", "max_rel_err"
    );
    let mut all_ok = true;
    for variant in selected {
        let outcome =
            run_variant(variant, batches, seed, step, inject_error).map_err(CliError::runtime)?;
        let ok = outcome.passed(tolerance);
        all_ok &= ok;
        println!(
            "{:<22} {:>7} {:>8} {:>13.3e}  {}",
            outcome.variant,
            outcome.batches,
            outcome.checked_coords,
            outcome.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "at least one variant exceeded the {tolerance:.0e} gradient tolerance"
        )))
    }
}

/// The three matched-seed runs of the comparison harness.
fn comparison_configs(base: &TrainConfig) -> [(&'static str, TrainConfig); 3] {
    let mut ours = base.clone();
    ours.loss_mode = LossMode::GeneralPair;
    ours.mining = MiningMode::Thresholds;
    ours.scheme = WeightScheme::exponential(2.0, 50.0, true);
    ours.loss = LossConfig {
        m1: 0.0,
        m2: 1.0,
        m: 1.0,
        epsilon: 0.1,
        ms_plus_one: true,
    };
    let mut msv1 = base.clone();
    msv1.loss_mode = LossMode::MultiSimilarity;
    msv1.mining = MiningMode::Ms;
    msv1.scheme = WeightScheme::exponential(2.0, 50.0, false);
    msv1.loss = LossConfig {
        m1: 0.0,
        m2: 1.0,
        m: 1.0,
        epsilon: 0.1,
        ms_plus_one: true,
    };
    let mut msv2 = msv1.clone();
    msv2.loss.ms_plus_one = false;
    [("ours", ours), ("msv1", msv1), ("msv2", msv2)]
}

fn cmd_compare_ms(config_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let mut config = RunConfig::load(config_path)?;
    let dataset = load_dataset(&config.dataset)?;
    config.resolve(&dataset)?;
    let (train_ds, test_ds, _) = split_for_eval(&dataset, &config.eval)?;
    let test_ds = test_ds.ok_or_else(|| {
        CliError::Config("compare-ms needs an `eval` section for the zero-shot split".into())
    })?;
    let ks = vec![1usize];

    let runs = comparison_configs(&config.train);
    for (_, cfg) in &runs {
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }

    // identical init for all three: recall before any training
    let init_model =
        MlpEmbedder::new(&config.train.model).map_err(|e| CliError::Config(e.to_string()))?;
    let initial = evaluate_model(&init_model, &test_ds, &ks).map_err(CliError::runtime)?;
    let initial_r1 = initial.recall_at[&1];

    let mut curves: Vec<Vec<f64>> = Vec::new();
    let mut final_r1 = Vec::new();
    for (name, cfg) in &runs {
        let (_, history) = train(cfg, &train_ds, Some(&test_ds), &ks)
            .map_err(|e| CliError::Runtime(format!("{name}: {e}")))?;
        let curve: Vec<f64> = history
            .snapshots
            .iter()
            .map(|s| s.recall.recall_at[&1])
            .collect();
        final_r1.push((*name, curve.last().copied().unwrap_or(initial_r1)));
        curves.push(curve);
    }

    let mut csv = String::from("epoch,recall1_ours,recall1_msv1,recall1_msv2\n");
    let _ = writeln!(csv, "0,{initial_r1:.4},{initial_r1:.4},{initial_r1:.4}");
    for epoch in 0..config.train.epochs {
        let _ = writeln!(
            csv,
            "{},{:.4},{:.4},{:.4}",
            epoch + 1,
            curves[0][epoch],
            curves[1][epoch],
            curves[2][epoch]
        );
    }
    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", config.output_dir.display())))?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join("ms_compare.csv"));
    fs::write(&out_path, &csv).map_err(|e| CliError::Runtime(format!("writing curve: {e}")))?;

    final_r1.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite recall"));
    let ordering = final_r1
        .iter()
        .map(|(name, r1)| format!("{name} ({r1:.4})"))
        .collect::<Vec<_>>()
        .join(" >= ");
    println!("wrote {}", out_path.display());
    println!("final Recall@1 ordering: {ordering}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_weight_curves(
    variant: &str,
    p: f64,
    q: f64,
    alpha: f64,
    beta: f64,
    m1: f64,
    m2: f64,
    points: usize,
    max_distance: f64,
    out: &Path,
) -> Result<(), CliError> {
    if points < 2 {
        return Err(CliError::Config("need at least 2 grid points".into()));
    }
    if !(m1 >= 0.0 && m1 <= m2) {
        return Err(CliError::Config(format!(
            "need 0 <= m1 <= m2, got m1={m1}, m2={m2}"
        )));
    }
    let variant = match variant {
        "constant" => WeightVariant::Constant,
        "power" => WeightVariant::Power { p, q },
        "exponential" => WeightVariant::Exponential { alpha, beta },
        other => return Err(CliError::Config(format!("unknown variant `{other}`"))),
    };
    let scheme = WeightScheme {
        variant,
        normalize: false,
    };
    scheme
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let grid: Vec<f64> = (0..points)
        .map(|i| max_distance * i as f64 / (points - 1) as f64)
        .collect();
    let rows = weight_curves(&variant, m1, m2, &grid);
    let file = fs::File::create(out)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", out.display())))?;
    write_weight_curves_csv(std::io::BufWriter::new(file), &rows)
        .map_err(|e| CliError::Runtime(format!("writing curves: {e}")))?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}
