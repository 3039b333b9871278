use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use secon::config::load_config_file;
use secon::harness::{
    derive_seed, run_sweep, run_trial, write_sweep_csv, write_trial_csv, ExperimentConfig,
    ModelKind, PolicyKind, SweepTable,
};
use secon::RewardKind;

#[derive(Parser)]
#[command(name = "secon", version, about = "Simultaneous estimation and control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop trial and report its total reward.
    Trial(RunArgs),
    /// Run the configured sweep and report mean reward with standard error.
    Sweep(RunArgs),
    /// Run the sweep under both planners and print them side by side.
    Compare(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "1d")]
    OneD,
    Pm,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Mcts,
    Mpc,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    L1,
    L2,
}

#[derive(Args)]
struct RunArgs {
    /// System to control.
    #[arg(long)]
    model: Option<ModelArg>,
    /// Planner acting on the belief.
    #[arg(long)]
    policy: Option<PolicyArg>,
    /// Stage reward shape.
    #[arg(long)]
    reward: Option<RewardArg>,
    /// Tree-search simulations per step.
    #[arg(long)]
    iters: Option<usize>,
    /// Master seed for trial seed derivation.
    #[arg(long)]
    seed: Option<u64>,
    /// Process noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    /// Configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn build_config(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => load_config_file(path).map_err(|e| e.to_string())?,
            None => {
                let model = match self.model {
                    Some(ModelArg::Pm) => ModelKind::Planar,
                    _ => ModelKind::OneD,
                };
                ExperimentConfig::defaults(model)
            }
        };
        if let Some(model) = self.model {
            let kind = match model {
                ModelArg::OneD => ModelKind::OneD,
                ModelArg::Pm => ModelKind::Planar,
            };
            if kind != cfg.model {
                // A model flag that disagrees with the config file restarts
                // from that model's defaults before reapplying CLI flags.
                cfg = ExperimentConfig::defaults(kind);
            }
        }
        if let Some(policy) = self.policy {
            cfg.policy = match policy {
                PolicyArg::Mcts => PolicyKind::Mcts,
                PolicyArg::Mpc => PolicyKind::Mpc,
            };
        }
        if let Some(reward) = self.reward {
            cfg.reward = match reward {
                RewardArg::L1 => RewardKind::L1,
                RewardArg::L2 => RewardKind::L2,
            };
        }
        if let Some(iters) = self.iters {
            cfg.mcts.iterations = iters;
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(noise) = self.noise {
            cfg.process_noise_sigma = noise;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn policy_name(policy: PolicyKind) -> &'static str {
    match policy {
        PolicyKind::Mcts => "mcts",
        PolicyKind::Mpc => "mpc",
    }
}

fn print_sweep(table: &SweepTable, label: &str) {
    println!("{label}:");
    println!("{:>14} {:>16} {:>12} {:>7} {:>8}", "sweep_value", "mean_reward", "sem", "trials", "flagged");
    for row in &table.rows {
        println!(
            "{:>14.6} {:>16.2} {:>12.2} {:>7} {:>8}",
            row.sweep_value, row.mean_reward, row.sem, row.trials, row.flagged
        );
    }
}

fn write_to(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), String> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| e.to_string())?);
    f(&mut w).map_err(|e| e.to_string())?;
    w.flush().map_err(|e| e.to_string())
}

fn with_suffix(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Trial(args) => {
            let cfg = args.build_config()?;
            let seed = derive_seed(cfg.master_seed, 0, 0);
            let result = run_trial(&cfg, seed);
            println!(
                "trial: policy {} seed {seed} steps {} total reward {:.2} mean step {:.2} ms",
                policy_name(cfg.policy),
                result.steps.len(),
                result.total_reward,
                result.mean_wall_ms()
            );
            let final_state: Vec<String> =
                result.final_truth.iter().map(|v| format!("{v:.4}")).collect();
            println!("final true state [{}]", final_state.join(", "));
            if let Some(flag) = &result.flag {
                println!("flagged: {flag}");
            }
            if let Some(out) = &args.out {
                write_to(out, |w| write_trial_csv(&result, w))?;
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let cfg = args.build_config()?;
            let table = run_sweep(&cfg);
            print_sweep(&table, policy_name(cfg.policy));
            if let Some(out) = &args.out {
                write_to(out, |w| write_sweep_csv(&table, w))?;
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Compare(args) => {
            let base = args.build_config()?;
            for policy in [PolicyKind::Mcts, PolicyKind::Mpc] {
                let mut cfg = base.clone();
                cfg.policy = policy;
                let table = run_sweep(&cfg);
                print_sweep(&table, policy_name(policy));
                if let Some(out) = &args.out {
                    let path = with_suffix(out, policy_name(policy));
                    write_to(&path, |w| write_sweep_csv(&table, w))?;
                    println!("wrote {}", path.display());
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
