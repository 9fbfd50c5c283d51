use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beampred::eval::{Method, REPORT_FILE};
use beampred::experiment::{self, ExperimentConfig, EXPERIMENT_FILE};
use beampred::{selfcheck, Error};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beampred", version, about = "Beam prediction with transfer learning and domain adaptation")]
struct Cli {
    /// Experiment configuration (UTF-8 JSON). Defaults to the experiment
    /// file in --out, then to the built-in desk preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the base seed of the scenario and of pretraining.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory.
    #[arg(long, global = true, default_value = "beampred-out")]
    out: PathBuf,
    /// Pilot duration T_p in seconds.
    #[arg(long, global = true)]
    t_pilot: Option<f64>,
    /// Beam coherence time T_B in seconds.
    #[arg(long, global = true)]
    t_beam_coherence: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Synthesize both deployments and write the datasets.
    Generate,
    /// Train one source model per BS.
    Pretrain,
    /// Fine-tune with domain adaptation for every size and seed.
    Transfer,
    /// Fine-tune without domain adaptation.
    Finetune,
    /// Train on target data from fresh initialization.
    Scratch,
    /// Evaluate every trained cell on the target test users.
    Evaluate,
    /// Write report.csv and plots from evaluated cells.
    Report,
    /// Run the built-in gradient and oracle checks.
    Selfcheck,
}

fn load_config(cli: &Cli) -> beampred::Result<ExperimentConfig> {
    let saved = cli.out.join(EXPERIMENT_FILE);
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if saved.is_file() => ExperimentConfig::load(&saved)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.t_pilot {
        cfg.overhead.t_pilot = t;
    }
    if let Some(t) = cli.t_beam_coherence {
        cfg.overhead.t_beam_coherence = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(cfg: &ExperimentConfig, out: &Path, method: Method) -> beampred::Result<()> {
    let data = experiment::load_data(out)?;
    experiment::train_stage(cfg, out, &data, method)?;
    eprintln!("{} runs written under {}", method.name(), out.join("runs").display());
    Ok(())
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> beampred::Result<()> {
    let out = cli.out.as_path();
    match cli.command {
        Command::Generate => {
            let d = experiment::generate(cfg, out)?;
            eprintln!(
                "{} source, {} target-pool and {} target-test samples in {}",
                d.source.len(),
                d.target_pool.len(),
                d.target_test.len(),
                out.join("data").display()
            );
        }
        Command::Pretrain => {
            let data = experiment::load_data(out)?;
            experiment::pretrain_stage(cfg, out, &data)?;
            eprintln!("pretrained models in {}", out.join("pretrain").display());
        }
        Command::Transfer => train(cfg, out, Method::TransferDa)?,
        Command::Finetune => train(cfg, out, Method::FinetunePure)?,
        Command::Scratch => train(cfg, out, Method::Scratch)?,
        Command::Evaluate => {
            let data = experiment::load_data(out)?;
            let cells = experiment::evaluate_stage(cfg, out, &data)?;
            eprintln!("{} cells evaluated", cells.len());
        }
        Command::Report => {
            let rep = experiment::report_stage(cfg, out)?;
            println!("method,train_size,mean_eff_rate,std_eff_rate,mean_top1,mean_top3,trainable_params");
            for s in &rep.summaries {
                println!(
                    "{},{},{:.4},{:.4},{:.4},{:.4},{}",
                    s.method.name(),
                    s.train_size,
                    s.mean_eff_rate,
                    s.std_eff_rate,
                    s.mean_top1,
                    s.mean_top3,
                    s.trainable_params
                );
            }
            eprintln!("wrote {}", out.join("report").join(REPORT_FILE).display());
        }
        Command::Selfcheck => unreachable!(),
    }
    Ok(())
}

fn selfcheck_cmd() -> ExitCode {
    let checks = selfcheck::run();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_validation() { 1 } else { 2 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Command::Selfcheck = cli.command {
        return selfcheck_cmd();
    }
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
