use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecl_lab::{
    cmd_compare, cmd_evaluate, cmd_generate, cmd_gradcheck, cmd_train, thread_cap, CliError,
    Experiment, Overrides,
};

#[derive(Parser, Debug)]
#[command(
    name = "ecl-lab",
    version,
    about = "Long-tailed classification lab: data, training, comparison and gradient checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic dataset as CSV.
    Generate(Common),
    /// Train one method and evaluate the best-validation checkpoint.
    Train(Common),
    /// Re-evaluate a trained checkpoint.
    Evaluate(Common),
    /// Train every method on every seed and tabulate mean (std).
    Compare(Common),
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Perturb one analytic gradient entry (negative control).
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn load(common: &Common) -> Result<Experiment, CliError> {
    Experiment::load(
        &common.config,
        &Overrides {
            out: common.out.clone(),
            seed: common.seed,
        },
    )
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => {
            let path = cmd_generate(&load(&c)?)?;
            println!("wrote {}", path.display());
        }
        Command::Train(c) => {
            let exp = load(&c)?;
            let run = cmd_train(&exp)?;
            let t = &run.test;
            println!(
                "{} seed {}: best epoch {} (val acc {:.4}); {} acc {:.4} pre {:.4} sen {:.4} f1 {:.4} auc {:.4}",
                run.method.name(),
                run.seed,
                run.best_epoch,
                run.best_val_acc,
                exp.config.eval_split.as_str(),
                t.acc,
                t.pre,
                t.sen,
                t.f1,
                t.auc
            );
            println!("artifacts in {}", exp.out.display());
        }
        Command::Evaluate(c) => {
            let exp = load(&c)?;
            let r = cmd_evaluate(&exp)?;
            println!(
                "{}: acc {:.4} pre {:.4} sen {:.4} f1 {:.4} auc {:.4}",
                exp.config.eval_split.as_str(),
                r.acc,
                r.pre,
                r.sen,
                r.f1,
                r.auc
            );
        }
        Command::Compare(c) => {
            let exp = load(&c)?;
            let cmp = cmd_compare(&exp, thread_cap()?)?;
            print!("{}", cmp.table);
        }
        Command::Gradcheck {
            common,
            corrupt_gradient,
        } => {
            let exp = load(&common)?;
            let out = cmd_gradcheck(&exp, corrupt_gradient)?;
            for (name, check) in out.report.checks() {
                println!(
                    "{name:<8} max error {:.3e} over {} coordinates",
                    check.max_rel_error, check.coordinates
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ecl-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
