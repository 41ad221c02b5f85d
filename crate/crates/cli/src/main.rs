mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use config::{ExperimentConfig, Source};
use eldrop::data::{load_idx, split, synth_gaussians, Dataset};
use eldrop::inference::{error_rate, measure_gap, InferenceConfig};
use eldrop::network::{Activation, Architecture, Network};
use eldrop::tensor::{streams, RngStream};
use eldrop::theory::{jensen_check, penalty, scale_to_linearize, validate_thm3, validate_thm3_with, Estimator};
use eldrop::trainer::train;

#[derive(Parser)]
#[command(name = "eldrop", about = "Dropout training with an expectation-linearity penalty")]
struct Cli {
    /// Experiment configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network; writes model.bin, its config sidecar and train_log.csv.
    Train,
    /// Print test error under standard and Monte-Carlo inference.
    Eval {
        /// Defaults to `<out>/model.bin`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Measure gap-bound inputs on the test set; writes gap_report.json.
    Gap {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Check the theory results on small enumerable networks.
    Verify {
        #[arg(long, default_value_t = 20)]
        nets: u64,
    },
    /// Train once per `sweep.lambdas` value; writes sweep_lambda.csv.
    SweepLambda,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

/// `# `-prefixed copy of the resolved config, for text artifacts.
fn config_header(cfg: &ExperimentConfig) -> String {
    cfg.render().lines().map(|l| format!("# {l}\n")).collect()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write(&cfg.out.join("config.resolved"), &cfg.render())
}

fn existing(p: &Option<PathBuf>) -> Result<&Path> {
    let p = p.as_deref().expect("idx paths are checked when the config is parsed");
    if !p.is_file() {
        bail!("dataset file not found: {}", p.display());
    }
    Ok(p)
}

struct Data {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let d = &cfg.data;
    let (full, test) = match d.source {
        Source::Synth => (
            synth_gaussians(d.classes, d.dim, d.per_class, d.separation, d.seed)?,
            synth_gaussians(d.classes, d.dim, d.test_per_class, d.separation, d.seed.wrapping_add(1))?,
        ),
        Source::Idx => {
            let train = load_idx(existing(&d.train_images)?, existing(&d.train_labels)?)
                .with_context(|| format!("loading {}", d.train_images.as_ref().unwrap().display()))?;
            let test = load_idx(existing(&d.test_images)?, existing(&d.test_labels)?)
                .with_context(|| format!("loading {}", d.test_images.as_ref().unwrap().display()))?;
            (train, test)
        }
    };
    let (train, val) = if d.validation > 0 {
        split(&full, d.validation, d.seed)?
    } else {
        let empty = full.subset(&[]);
        (full, empty)
    };
    info!("data: {} train, {} validation, {} test", train.len(), val.len(), test.len());
    Ok(Data { train, val, test })
}

fn classes(data: &Data) -> usize {
    data.train.classes().max(data.test.classes())
}

fn train_once(cfg: &ExperimentConfig, data: &Data, lambda: f64) -> Result<(Network, eldrop::trainer::TrainLog)> {
    let arch = cfg.architecture(data.train.dim(), classes(data));
    let init = Network::glorot(&arch, &mut RngStream::new(cfg.seed, streams::INIT))?;
    let tc = eldrop::trainer::TrainConfig {
        lambda,
        ..cfg.train_config()
    };
    Ok(train(&init, &data.train, &data.val, &tc)?)
}

fn model_path(cfg: &ExperimentConfig, model: &Option<PathBuf>) -> Result<PathBuf> {
    let p = model.clone().unwrap_or_else(|| cfg.out.join("model.bin"));
    if !p.is_file() {
        bail!("model file not found: {}", p.display());
    }
    Ok(p)
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let data = load_data(cfg)?;
    prepare_out(cfg)?;
    let (net, log) = train_once(cfg, &data, cfg.train.lambda)?;
    for r in &log.records {
        info!(
            "epoch {} lr {:.5} nll {:.4} penalty {:.5} val_error {}",
            r.epoch,
            r.lr,
            r.nll,
            r.penalty,
            r.val_error.map_or("-".into(), |e| format!("{e:.2}%"))
        );
    }
    let model = cfg.out.join("model.bin");
    net.save(&model).with_context(|| format!("writing {}", model.display()))?;
    write(&cfg.out.join("model.bin.conf"), &cfg.render())?;
    write(&cfg.out.join("train_log.csv"), &(config_header(cfg) + &log.to_csv()))?;
    let err = error_rate(&net, &data.test, &InferenceConfig::standard())?;
    println!("test error (standard): {err:.2}%");
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, model: &Option<PathBuf>) -> Result<()> {
    let net = Network::load(model_path(cfg, model)?)?;
    let data = load_data(cfg)?;
    let standard = error_rate(&net, &data.test, &InferenceConfig::standard())?;
    let m = cfg.inference.mc_samples.max(1);
    let mc = error_rate(&net, &data.test, &InferenceConfig::monte_carlo(m, cfg.seed))?;
    println!("standard: {standard:.2}%");
    println!("monte_carlo: {mc:.2}% ({m} samples)");
    Ok(())
}

fn cmd_gap(cfg: &ExperimentConfig, model: &Option<PathBuf>) -> Result<()> {
    let net = Network::load(model_path(cfg, model)?)?;
    let data = load_data(cfg)?;
    let n = cfg.theory.examples;
    let ds = if n == 0 || n >= data.test.len() {
        data.test
    } else {
        data.test.subset(&(0..n).collect::<Vec<_>>())
    };
    prepare_out(cfg)?;
    let report = validate_thm3_with(&net, &ds, &cfg.validation_config())?;
    let doc = serde_json::json!({
        "seed": cfg.seed,
        "config": cfg.render(),
        "report": report,
    });
    write(&cfg.out.join("gap_report.json"), &serde_json::to_string_pretty(&doc)?)?;
    println!(
        "delta_mean {:.6} (se {:.2e}), thm3 bound {:.6}, regime {}, holds {}",
        report.delta_mean, report.delta_mean_std_error, report.thm3_bound, report.regime, report.holds
    );
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.lambdas.is_empty() {
        bail!("sweep.lambdas is empty");
    }
    let data = load_data(cfg)?;
    prepare_out(cfg)?;
    let mut csv = config_header(cfg) + "lambda,error,delta_hat\n";
    for &lambda in &cfg.lambdas {
        let (net, _) = train_once(cfg, &data, lambda)?;
        let err = error_rate(&net, &data.test, &cfg.inference_config())?;
        let gap = measure_gap(&net, &data.test, cfg.train.gap_mc_samples.max(2), cfg.seed)?;
        info!("lambda {lambda}: error {err:.2}%, delta_hat {:.6}", gap.delta_hat);
        csv.push_str(&format!("{lambda},{err},{}\n", gap.delta_hat));
    }
    write(&cfg.out.join("sweep_lambda.csv"), &csv)
}

/// Small network whose masks can all be enumerated.
fn verify_net(seed: u64, depth: usize, activation: Activation, weight_scale: f64) -> Result<Network> {
    let arch = Architecture {
        input_dim: 3,
        hidden: vec![4; depth],
        hidden_activation: activation,
        output_dim: 3,
        output_activation: if activation == Activation::Identity {
            Activation::Identity
        } else {
            Activation::Softmax
        },
        input_keep: 0.8,
        hidden_keep: 0.5,
    };
    let mut net = Network::glorot(&arch, &mut RngStream::new(seed, streams::INIT))?;
    for l in net.layers_mut() {
        l.weights.scale(weight_scale);
    }
    Ok(net)
}

fn verify_data(seed: u64) -> Result<Dataset> {
    Ok(synth_gaussians(3, 3, 3, 2.0, seed)?)
}

fn cmd_verify(nets: u64) -> Result<bool> {
    let acts = [Activation::Sigmoid, Activation::Tanh, Activation::Relu];
    let mut checks: Vec<(&str, u64)> = Vec::new();

    let mut ok = 0;
    for i in 0..nets {
        let net = verify_net(i, 1 + (i % 2) as usize, acts[(i % 3) as usize], 2.0)?;
        let (lvm, expected) = jensen_check(&net, &verify_data(i)?)?;
        ok += u64::from(lvm <= expected + 1e-12);
    }
    checks.push(("jensen inequality", ok));

    let mut ok = 0;
    for i in 0..nets {
        let net = verify_net(i, 1 + (i % 3) as usize, Activation::Sigmoid, 2.0)?;
        let r = validate_thm3(&net, &verify_data(i)?, 200, i)?;
        ok += u64::from(r.holds);
    }
    checks.push(("depth bound", ok));

    let mut ok = 0;
    for i in 0..nets {
        let net = verify_net(i, 1, acts[(i % 3) as usize], 4.0)?;
        let ds = verify_data(i)?;
        let mut all = true;
        for delta in [0.05, 0.2, 0.5] {
            let lin = scale_to_linearize(&net, delta, &ds)?;
            all &= penalty(&lin.network, &ds, Estimator::Exact)?.value <= delta;
        }
        ok += u64::from(all);
    }
    checks.push(("output scaling", ok));

    let mut ok = 0;
    for i in 0..nets {
        let net = verify_net(i, 1 + (i % 2) as usize, Activation::Identity, 1.5)?;
        ok += u64::from(penalty(&net, &verify_data(i)?, Estimator::Exact)?.value <= 1e-12);
    }
    checks.push(("affine exactness", ok));

    let mut pass = true;
    for (name, ok) in checks {
        let good = ok == nets;
        pass &= good;
        println!("{} {name}: {ok}/{nets} nets", if good { "PASS" } else { "FAIL" });
    }
    Ok(pass)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Train => cmd_train(&cfg)?,
        Command::Eval { model } => cmd_eval(&cfg, model)?,
        Command::Gap { model } => cmd_gap(&cfg, model)?,
        Command::Verify { nets } => return cmd_verify(*nets),
        Command::SweepLambda => cmd_sweep(&cfg)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
