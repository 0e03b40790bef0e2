use clap::{Parser, Subcommand};
use pam_node::pipeline::{self, PipelineError, RunConfig};
use pam_node::plant::GridSpec;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pam-node", version, about = "Hybrid neural-ODE toolkit for antagonistic pneumatic-muscle joints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (dataset directory for `generate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the 15 × 15 pressure grid.
    #[arg(long, global = true)]
    full_grid: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Synthesize trials over the pressure grid.
    Generate,
    /// Fit the hybrid model to the staged training subset.
    Train,
    /// R² of every trial, held-out and training.
    Evaluate,
    /// Feedforward mass plan for the configured profile.
    Plan,
    /// Perturbation identification of the plan on the synthetic plant.
    Identify,
    /// Same protocol for the learned-model and equilibrium-point plans.
    CompareEp,
    /// Plots and an index of existing results.
    Report,
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.full_grid {
        cfg.generate.grid = GridSpec::full();
    }
    let out = match (&cli.out, cli.command) {
        (Some(o), _) => o.clone(),
        (None, Command::Generate) => cfg.data_dir.clone(),
        (None, _) => cfg.checkpoint.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
    };
    if cli.out.is_some() && cfg.checkpoint == RunConfig::default().checkpoint {
        cfg.checkpoint = out.join("model.json");
    }
    match cli.command {
        Command::Generate => {
            let m = pipeline::generate(&cfg, &out)?;
            println!("wrote {} trials to {}", m.trials.len(), out.display());
        }
        Command::Train => {
            let (_, log) = pipeline::train(&cfg, &out)?;
            let last = log.records.last().map(|r| r.loss_total).unwrap_or(f64::NAN);
            match log.best_epoch {
                Some(e) => println!("final loss {last:.6e}, best {:.6e} at epoch {e}", log.best_loss),
                None => println!("final loss {last:.6e}, no epochs run"),
            }
        }
        Command::Evaluate => {
            let (_, s) = pipeline::evaluate(&cfg, &out)?;
            println!("grid mean R² {:.2}, held-out {:.2} ({}), training {:.2} ({})", s.grid_mean, s.held_out_mean, s.n_held_out, s.train_mean, s.n_train);
        }
        Command::Plan => {
            let (_, s) = pipeline::plan(&cfg, &out)?;
            println!("{} steps, {} infeasible, model tracking RMS {:.4} mm", s.n_steps, s.n_infeasible, s.model_tracking.rms_mm);
        }
        Command::Identify => {
            let s = pipeline::identify(&cfg, &out)?;
            for l in &s.comparison.levels {
                println!("K_d {:6.1}  identified {:7.2} N/mm  ({} poor fits)", l.k_d, l.k_all_mean, l.n_poor_fit);
            }
        }
        Command::CompareEp => {
            let c = pipeline::compare_ep(&cfg, &out)?;
            println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "K_d", "NN Δ%", "NN p", "EP Δ%", "EP p");
            for (a, b) in c.nn.comparison.levels.iter().zip(&c.ep.comparison.levels) {
                println!("{:6.1} {:10.2} {:10.3e} {:10.2} {:10.3e}", a.k_d, a.delta_pct, a.p_value(), b.delta_pct, b.p_value());
            }
        }
        Command::Report => {
            for p in pipeline::report(&cfg, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
