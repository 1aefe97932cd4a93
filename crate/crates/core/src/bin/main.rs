use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use protoflow::eval::{
    emit_report, evaluate_closed_loop, perturbation_sweep, run_ablation, AblationAxis, ScenarioFile,
};
use protoflow::pipeline::{
    grad_check_foresight, grad_check_policy, train_foresight, train_policy, write_loss_csv, ForesightBundle,
    PolicyBundle, Stage, TrainConfig, GRAD_CHECK_TOLERANCE,
};
use protoflow::world::{generate_dataset, Dataset, PerturbKind};
use protoflow::{Error, Result};

#[derive(Parser)]
#[command(name = "protoflow", version, about = "Object-aware foresight policies on a synthetic manipulation world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Module {
    Foresight,
    Policy,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "verbatim")]
enum Axis {
    #[value(name = "horizon_M")]
    HorizonM,
    #[value(name = "clusters_K")]
    ClustersK,
    #[value(name = "denoise_T")]
    DenoiseT,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted-expert demonstrations.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stage I: train the foresight model.
    TrainForesight {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage II: train the policy against a frozen foresight model.
    TrainPolicy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        foresight: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop evaluation, optionally under perturbations.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        foresight: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated perturbation kinds.
        #[arg(long, value_delimiter = ',')]
        perturb: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.05, 0.1, 0.2])]
        magnitudes: Vec<f64>,
    },
    /// Inference-time sweep over M, K or T.
    Ablate {
        #[arg(long)]
        axis: Axis,
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        foresight: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of a model's loss gradient.
    GradCheck {
        #[arg(long)]
        module: Module,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf, stage: Stage) -> Result<TrainConfig> {
    let cfg = TrainConfig::from_json_file(path)?;
    if cfg.stage != stage {
        return Err(Error::InvalidArgument(format!("config stage is {:?}, expected {stage:?}", cfg.stage)));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, seed } => {
            let file = ScenarioFile::read(&config)?;
            let n = file
                .episodes
                .ok_or_else(|| Error::InvalidArgument("scenario file needs \"episodes\" for gen-data".into()))?;
            let m = generate_dataset(&file.build()?, n, seed, &out)?;
            let ok = m.success.iter().filter(|&&s| s).count();
            println!("episodes={} successful={ok} out={}", m.n_episodes, out.display());
        }
        Command::TrainForesight { config, data, out } => {
            let cfg = load_config(&config, Stage::Foresight)?;
            let ds = Dataset::load(&data)?;
            let (bundle, curve) = train_foresight(&cfg, &ds)?;
            bundle.save(&out)?;
            write_loss_csv(&out.join("loss.csv"), &curve)?;
            println!("steps={} final_loss={}", cfg.steps, curve.last().map_or(f64::NAN, |c| c.1));
        }
        Command::TrainPolicy { config, data, foresight, out } => {
            let cfg = load_config(&config, Stage::Policy)?;
            let ds = Dataset::load(&data)?;
            let fb = ForesightBundle::load(&foresight)?;
            let (bundle, curve) = train_policy(&cfg, &ds, &fb)?;
            bundle.save(&out)?;
            write_loss_csv(&out.join("loss.csv"), &curve)?;
            println!("steps={} final_loss={}", cfg.steps, curve.last().map_or(f64::NAN, |c| c.1));
        }
        Command::Eval {
            policy,
            foresight,
            scenarios,
            episodes,
            seed,
            out,
            perturb,
            magnitudes,
        } => {
            let pb = PolicyBundle::load(&policy)?;
            let fb = ForesightBundle::load(&foresight)?;
            let sc = ScenarioFile::read(&scenarios)?.build()?;
            let report = if perturb.is_empty() {
                evaluate_closed_loop(&pb, &fb, &sc, episodes, seed)?
            } else {
                let kinds = perturb.iter().map(|k| k.parse()).collect::<Result<Vec<PerturbKind>>>()?;
                perturbation_sweep(&pb, &fb, &sc, &kinds, &magnitudes, episodes, seed)?
            };
            emit_report(&report, &out)?;
            println!("rows={} out={}", report.rows.len(), out.display());
        }
        Command::Ablate {
            axis,
            values,
            policy,
            foresight,
            scenarios,
            episodes,
            seed,
            out,
        } => {
            let axis = match axis {
                Axis::HorizonM => AblationAxis::HorizonM,
                Axis::ClustersK => AblationAxis::ClustersK,
                Axis::DenoiseT => AblationAxis::DenoiseT,
            };
            let pb = PolicyBundle::load(&policy)?;
            let fb = ForesightBundle::load(&foresight)?;
            let sc = ScenarioFile::read(&scenarios)?.build()?;
            let report = run_ablation(axis, &values, &pb, &fb, &sc, episodes, seed)?;
            emit_report(&report, &out)?;
            println!("rows={} out={}", report.rows.len(), out.display());
        }
        Command::GradCheck { module, seed } => {
            let rep = match module {
                Module::Foresight => grad_check_foresight(seed)?,
                Module::Policy => grad_check_policy(seed)?,
            };
            println!("max_relative_error={:e} entries={}", rep.max_relative_error, rep.entries_checked);
            if rep.max_relative_error > GRAD_CHECK_TOLERANCE {
                return Err(Error::GradCheck(format!(
                    "{:e} > {GRAD_CHECK_TOLERANCE:e} at {:?}",
                    rep.max_relative_error, rep.worst
                )));
            }
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error[usage]: {}", one_line(&e.to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
