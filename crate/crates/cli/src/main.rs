//! Batch front-end for certification experiments: dataset generation,
//! training, certification, shift evaluation, attacks, poisoning, and the
//! tv/psi verification tables.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 failed
//! verification check.

mod commands;
mod config;
mod error;
mod model;
mod output;

use std::path::PathBuf;

use clap::Parser;

use crate::config::Overlay;
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "certshift",
    version,
    about = "Certified classifier accuracy under bounded distribution shifts"
)]
struct Cli {
    /// Worker thread count (default: logical cores). Results never depend
    /// on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML config file with keys named after long flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData(commands::GenDataArgs),
    /// Train a built-in model, optionally under smoothing noise.
    Train(commands::TrainArgs),
    /// Certify smoothed accuracy under bounded distribution shifts.
    Certify(commands::CertifyArgs),
    /// Shift a dataset and check the accuracy gap against psi.
    ShiftEval(commands::ShiftEvalArgs),
    /// Run a strategic or adaptive attack sweep.
    Attack(commands::AttackArgs),
    /// Run the offline-poisoning unlearnability experiment.
    Poison(commands::PoisonArgs),
    /// Verify tv <= psi on random transform parameters.
    TvCheck(commands::TvCheckArgs),
    /// Tabulate psi and the tv oracle over an epsilon grid.
    PsiTable(commands::PsiTableArgs),
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("config error: --threads must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("runtime error: --threads: {e}");
            return 2;
        }
    }
    let overlay = match Overlay::load(cli.config.as_deref()) {
        Ok(overlay) => overlay,
        Err(e) => return report(&e),
    };
    let result = match &cli.command {
        Command::GenData(args) => commands::gen_data(args, &overlay),
        Command::Train(args) => commands::cmd_train(args, &overlay),
        Command::Certify(args) => commands::cmd_certify(args, &overlay),
        Command::ShiftEval(args) => commands::cmd_shift_eval(args, &overlay),
        Command::Attack(args) => commands::cmd_attack(args, &overlay),
        Command::Poison(args) => commands::cmd_poison(args, &overlay),
        Command::TvCheck(args) => commands::cmd_tv_check(args, &overlay),
        Command::PsiTable(args) => commands::cmd_psi_table(args, &overlay),
    };
    match result {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> i32 {
    eprintln!("{e}");
    e.exit_code()
}
