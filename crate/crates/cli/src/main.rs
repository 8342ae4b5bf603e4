//! `corrsense`: sparse-correlation detection toolkit.
//!
//! Subcommands: `kl`, `bounds`, `calibrate`, `simulate`, `sweep`,
//! `optimal-p`, `replay`. All flags are long-form. Exit codes: 0 success,
//! 1 partial failure (some sweep rows failed), 2 validation/domain error.

mod commands;
mod config;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "corrsense",
    version,
    about = "Sparse-correlation detection under a measurement budget",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate KL divergences as CSV (columns model,rho,k,kl).
    Kl {
        /// normalized | unnormalized | chi2-scale | all
        #[arg(long, default_value = "all")]
        model: String,
        /// Comma-separated correlation values.
        #[arg(long, value_delimiter = ',', required = true)]
        rho: Vec<f64>,
        /// Comma-separated contaminated-set sizes.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        k: Vec<u32>,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        output: Option<String>,
    },
    /// Print minimax bound calculators for one configuration as JSON.
    Bounds {
        /// ksets | kintervals | disjoint-kintervals
        #[arg(long)]
        class: String,
        #[arg(long)]
        n: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        rho: f64,
        /// Full-vector-equivalent measurements (budget M = m n).
        #[arg(long)]
        m: u32,
        /// normalized | unnormalized
        #[arg(long, default_value = "normalized")]
        model: String,
        #[arg(long)]
        output: Option<String>,
    },
    /// Precompute and print a procedure's calibration (thresholds, medians).
    Calibrate {
        /// Experiment config JSON (single grid point).
        #[arg(long)]
        config: String,
        #[arg(long)]
        output: Option<String>,
    },
    /// Run one configuration through the risk engine.
    Simulate {
        /// Experiment config JSON (single grid point).
        #[arg(long)]
        config: String,
        /// Summary CSV path (falls back to the config's `output`, then stdout).
        #[arg(long)]
        summary: Option<String>,
        /// Per-trial JSONL path (defaults to `<summary>.trials.jsonl` when
        /// the summary goes to a file).
        #[arg(long)]
        trials_out: Option<String>,
        /// Write the first alternative trial's session trace as JSONL.
        #[arg(long)]
        trace_out: Option<String>,
    },
    /// Run a grid of configurations, one summary row per point (resumable).
    Sweep {
        /// Experiment config JSON with grids over n/k/rho/m.
        #[arg(long)]
        config: String,
        /// Output CSV path (falls back to the config's `output`).
        #[arg(long)]
        output: Option<String>,
        /// Continue an interrupted sweep from its manifest.
        #[arg(long)]
        resume: bool,
    },
    /// Scan the truncation width p maximizing floor(mk/p) * KL(rho, p).
    OptimalP {
        #[arg(long)]
        k: u32,
        #[arg(long)]
        m: u32,
        /// normalized | unnormalized
        #[arg(long, default_value = "unnormalized")]
        model: String,
        /// Comma-separated correlation values.
        #[arg(long, value_delimiter = ',', required = true)]
        rho: Vec<f64>,
        #[arg(long)]
        output: Option<String>,
    },
    /// Validate and summarize a session trace (JSONL, one round per line).
    Replay {
        #[arg(long)]
        trace: String,
        /// Budget to audit the trace against.
        #[arg(long)]
        budget: Option<u64>,
    },
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Kl {
            model,
            rho,
            k,
            output,
        } => commands::kl(&model, &rho, &k, output.as_deref()),
        Command::Bounds {
            class,
            n,
            k,
            rho,
            m,
            model,
            output,
        } => commands::bounds(&class, n, k, rho, m, &model, output.as_deref()),
        Command::Calibrate { config, output } => commands::calibrate(&config, output.as_deref()),
        Command::Simulate {
            config,
            summary,
            trials_out,
            trace_out,
        } => commands::simulate(
            &config,
            summary.as_deref(),
            trials_out.as_deref(),
            trace_out.as_deref(),
        ),
        Command::Sweep {
            config,
            output,
            resume,
        } => commands::sweep(&config, output.as_deref(), resume),
        Command::OptimalP {
            k,
            m,
            model,
            rho,
            output,
        } => commands::optimal_p(k, m, &model, &rho, output.as_deref()),
        Command::Replay { trace, budget } => commands::replay(&trace, budget),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    }
}
