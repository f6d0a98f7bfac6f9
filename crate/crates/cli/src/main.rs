//! Experiment command line: stability sweeps, ES policy training,
//! supervised training, and appendix-bound audits, with seeded
//! reproducibility and CSV/JSON artifacts.
//!
//! Exit codes: 0 success (and, for `stability`/`verify-bounds`, every
//! assertion passing), 1 assertion or runtime failure, 2 configuration
//! error.

mod config;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use orthoflow::envs::{rollout_objective, Environment};
use orthoflow::es::train_es;
use orthoflow::flows::{ThetaDims, ThetaParams};
use orthoflow::stability::{baseline_contrast, verify_appendix_bounds, verify_lemma1};
use orthoflow::supervised::{load_csv, synth_dataset, train_supervised};

use config::{DatasetSource, ExperimentConfig};
use output::OutputWriter;

#[derive(Parser)]
#[command(
    name = "orthoflow",
    about = "Orthogonal-flow network experiments: gradient-stability verification, ES policy training, supervised training",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config file (TOML subset); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report CSVs and summary.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker-thread cap; results are independent of this value.
    #[arg(long)]
    threads: Option<usize>,
    /// Suppress the timestamp header line for byte-identical outputs.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Gradient-ratio bound sweep plus the baseline contrast report.
    Stability(CommonArgs),
    /// ES policy training on the synthetic environment.
    TrainEs {
        #[command(flatten)]
        common: CommonArgs,
        /// Update iterations per seed; overrides the config file.
        #[arg(long)]
        iterations: Option<usize>,
        /// Number of independent training seeds.
        #[arg(long)]
        train_seeds: Option<usize>,
    },
    /// Gradient training of the flow classifier.
    TrainSupervised {
        #[command(flatten)]
        common: CommonArgs,
        /// Epochs; overrides the config file.
        #[arg(long)]
        epochs: Option<usize>,
        /// Dataset: "blobs", "rings", or a CSV path.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Policy-norm, Lipschitz, ES second-moment and contraction audits.
    VerifyBounds(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Stability(common) => run_stability(&common),
        Command::TrainEs {
            common,
            iterations,
            train_seeds,
        } => run_train_es(&common, iterations, train_seeds),
        Command::TrainSupervised {
            common,
            epochs,
            dataset,
        } => run_train_supervised(&common, epochs, dataset),
        Command::VerifyBounds(common) => run_verify_bounds(&common),
    };
    std::process::exit(code);
}

/// Loads the config file (or defaults), applies common-flag overrides, and
/// validates. Errors here are configuration errors (exit 2).
fn prepare(common: &CommonArgs) -> Result<(ExperimentConfig, u64), String> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(threads) = common.threads {
        cfg.threads = Some(threads);
    }
    cfg.validate()?;
    let seed = cfg.seed.unwrap_or(0);
    if let Some(threads) = cfg.threads {
        if threads == 0 {
            return Err("threads must be at least 1".into());
        }
        // ignore the error if a pool already exists (e.g. repeated calls
        // under one test process): results do not depend on thread count
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok((cfg, seed))
}

fn fail_config(message: String) -> i32 {
    eprintln!("configuration error: {message}");
    2
}

fn fail_run(message: String) -> i32 {
    eprintln!("error: {message}");
    1
}

fn run_stability(common: &CommonArgs) -> i32 {
    let (cfg, seed) = match prepare(common) {
        Ok(v) => v,
        Err(e) => return fail_config(e),
    };
    let report = match verify_lemma1(&cfg.stability.to_grid(), seed) {
        Ok(r) => r,
        Err(e) => return fail_run(e.to_string()),
    };
    let contrast = match baseline_contrast(&cfg.contrast.to_config(), &cfg.contrast.seeds) {
        Ok(r) => r,
        Err(e) => return fail_run(e.to_string()),
    };

    let mut writer = match OutputWriter::new(&common.out, common.no_timestamp) {
        Ok(w) => w,
        Err(e) => return fail_run(e),
    };
    if let Err(e) = writer.write_csv("report.csv", &report.to_csv()) {
        return fail_run(e);
    }
    if let Err(e) = writer.write_csv("contrast.csv", &contrast.to_csv()) {
        return fail_run(e);
    }

    #[derive(Serialize)]
    struct Results<'a> {
        all_pass: bool,
        cells: usize,
        failed_cells: usize,
        asymptotic_lower: f64,
        asymptotic_upper: f64,
        contrast_constrained_pass: bool,
        contrast: &'a orthoflow::stability::ContrastReport,
    }
    let results = Results {
        all_pass: report.all_pass,
        cells: report.cells.len(),
        failed_cells: report.cells.iter().filter(|c| !c.pass).count(),
        asymptotic_lower: report.asymptotic_lower,
        asymptotic_upper: report.asymptotic_upper,
        contrast_constrained_pass: contrast.constrained_pass,
        contrast: &contrast,
    };
    if let Err(e) = writer.write_summary("stability", seed, cfg.threads, &cfg, &results) {
        return fail_run(e);
    }

    for cell in report.cells.iter().filter(|c| !c.pass) {
        eprintln!(
            "FAIL d={} N={} {} {} seed={}: ratios [{:.6}, {:.6}] outside [{:.6}, {:.6}]",
            cell.dim,
            cell.depth,
            cell.generator,
            cell.nonlinearity,
            cell.seed,
            cell.min_ratio,
            cell.max_ratio,
            cell.lower_bound,
            cell.upper_bound
        );
    }
    println!(
        "stability: {}/{} cells within bounds; contrast constrained side {}",
        report.cells.len() - report.cells.iter().filter(|c| !c.pass).count(),
        report.cells.len(),
        if contrast.constrained_pass { "pass" } else { "FAIL" }
    );
    if report.all_pass && contrast.constrained_pass {
        0
    } else {
        1
    }
}

fn run_train_es(common: &CommonArgs, iterations: Option<usize>, train_seeds: Option<usize>) -> i32 {
    let (mut cfg, seed) = match prepare(common) {
        Ok(v) => v,
        Err(e) => return fail_config(e),
    };
    if let Some(iters) = iterations {
        cfg.es.iterations = iters;
    }
    if let Some(seeds) = train_seeds {
        cfg.es.train_seeds = seeds;
    }
    if cfg.es.iterations == 0 || cfg.es.train_seeds == 0 {
        return fail_config("iterations and train_seeds must be at least 1".into());
    }

    let env = cfg.env.build();
    let flow = cfg.flow.to_flow_config();
    let dims = ThetaDims::new(
        env.spec().state_dim,
        cfg.es.hidden_dim,
        env.spec().action_dim,
    );
    let objective = rollout_objective(&env, dims, &flow);
    let bounds = cfg.es.norm_bounds();

    let mut csv = String::from(
        "seed,iteration,objective,rgrad_norm_sq,running_min_rgrad_sq,max_manifold_defect,n_spectral_norm,q_spectral_norm,bias_norm,bounds_exceeded\n",
    );
    let mut initial_sum = 0.0;
    let mut final_sum = 0.0;
    let mut per_seed = Vec::new();
    for k in 0..cfg.es.train_seeds {
        let run_seed = seed.wrapping_add(k as u64);
        let theta0 = ThetaParams::random(dims, 1.0, 0.0, run_seed);
        let es_cfg = cfg.es.to_es_config(run_seed);
        let history = match train_es(&objective, &theta0, &es_cfg, cfg.es.iterations, bounds) {
            Ok(h) => h,
            Err(e) => return fail_run(e.to_string()),
        };
        for r in &history.records {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                run_seed,
                r.iteration,
                r.objective,
                r.rgrad_norm_sq,
                r.running_min_rgrad_sq,
                r.max_manifold_defect,
                r.n_spectral_norm,
                r.q_spectral_norm,
                r.bias_norm,
                r.bounds_exceeded
            ));
        }
        initial_sum += history.initial_objective();
        final_sum += history.final_objective();
        per_seed.push((run_seed, history.initial_objective(), history.final_objective()));
    }
    let mean_initial = initial_sum / cfg.es.train_seeds as f64;
    let mean_final = final_sum / cfg.es.train_seeds as f64;

    let mut writer = match OutputWriter::new(&common.out, common.no_timestamp) {
        Ok(w) => w,
        Err(e) => return fail_run(e),
    };
    if let Err(e) = writer.write_csv("history.csv", &csv) {
        return fail_run(e);
    }

    #[derive(Serialize)]
    struct Results {
        mean_initial_reward: f64,
        mean_final_reward: f64,
        improved: bool,
        per_seed: Vec<(u64, f64, f64)>,
    }
    let results = Results {
        mean_initial_reward: mean_initial,
        mean_final_reward: mean_final,
        improved: mean_final > mean_initial,
        per_seed,
    };
    if let Err(e) = writer.write_summary("train-es", seed, cfg.threads, &cfg, &results) {
        return fail_run(e);
    }
    println!(
        "train-es: mean reward {mean_initial:.4} -> {mean_final:.4} over {} seed(s)",
        cfg.es.train_seeds
    );
    0
}

fn run_train_supervised(
    common: &CommonArgs,
    epochs: Option<usize>,
    dataset: Option<String>,
) -> i32 {
    let (mut cfg, seed) = match prepare(common) {
        Ok(v) => v,
        Err(e) => return fail_config(e),
    };
    if let Some(epochs) = epochs {
        cfg.supervised.epochs = epochs;
    }
    if let Some(dataset) = dataset {
        cfg.supervised.dataset = dataset;
    }
    let sup_cfg = cfg.supervised.to_supervised_config(seed);
    if let Err(e) = sup_cfg.validate() {
        return fail_config(e.to_string());
    }

    let data = match cfg.supervised.dataset_source() {
        DatasetSource::Synth(kind) => synth_dataset(kind, cfg.supervised.count, seed),
        DatasetSource::Csv(path) => load_csv(&path),
    };
    let data = match data {
        Ok(d) => d,
        Err(e) => return fail_config(e.to_string()),
    };

    let (classifier, history) = match train_supervised(&data, &sup_cfg) {
        Ok(v) => v,
        Err(e) => return fail_run(e.to_string()),
    };
    let accuracy = match orthoflow::supervised::evaluate_accuracy(
        &classifier,
        &data,
        &sup_cfg.flow_config(),
    ) {
        Ok(a) => a,
        Err(e) => return fail_run(e.to_string()),
    };

    let mut csv = String::from("epoch,loss,accuracy,min_ratio,max_ratio\n");
    for e in &history.epochs {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.loss, e.accuracy, e.min_ratio, e.max_ratio
        ));
    }

    let mut writer = match OutputWriter::new(&common.out, common.no_timestamp) {
        Ok(w) => w,
        Err(e) => return fail_run(e),
    };
    if let Err(e) = writer.write_csv("history.csv", &csv) {
        return fail_run(e);
    }

    #[derive(Serialize)]
    struct Results {
        final_train_accuracy: f64,
        final_loss: f64,
        ratio_lower_bound: f64,
        ratio_upper_bound: f64,
        ratios_within_bounds: bool,
    }
    let results = Results {
        final_train_accuracy: accuracy,
        final_loss: history.final_loss(),
        ratio_lower_bound: history.ratio_lower_bound,
        ratio_upper_bound: history.ratio_upper_bound,
        ratios_within_bounds: history.ratios_within_bounds(1e-9),
    };
    if let Err(e) = writer.write_summary("train-supervised", seed, cfg.threads, &cfg, &results) {
        return fail_run(e);
    }
    println!(
        "train-supervised: accuracy {accuracy:.4}, loss {:.6}, ratios within bounds: {}",
        history.final_loss(),
        results.ratios_within_bounds
    );
    0
}

fn run_verify_bounds(common: &CommonArgs) -> i32 {
    let (cfg, seed) = match prepare(common) {
        Ok(v) => v,
        Err(e) => return fail_config(e),
    };
    let env = cfg.env.build();
    let flow = cfg.flow.to_flow_config();
    let audit_cfg = cfg.bounds.to_audit_config(cfg.es.sigma, seed);
    let report = match verify_appendix_bounds(&env, &flow, &audit_cfg) {
        Ok(r) => r,
        Err(e) => return fail_run(e.to_string()),
    };

    let mut writer = match OutputWriter::new(&common.out, common.no_timestamp) {
        Ok(w) => w,
        Err(e) => return fail_run(e),
    };
    if let Err(e) = writer.write_csv("report.csv", &report.to_csv()) {
        return fail_run(e);
    }
    if let Err(e) = writer.write_summary("verify-bounds", seed, cfg.threads, &cfg, &report) {
        return fail_run(e);
    }

    for audit in &report.audits {
        println!(
            "{}: {} (worst margin {:.3e}, slack {:.3e})",
            audit.name,
            if audit.pass { "pass" } else { "FAIL" },
            audit.worst_margin,
            audit.slack
        );
    }
    if report.all_pass {
        0
    } else {
        1
    }
}
