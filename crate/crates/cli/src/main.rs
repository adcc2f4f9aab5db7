use std::process::ExitCode;

use clap::Parser;

use ris_nlos::exec::Execution;
use ris_nlos_cli::run::{run, Cli};

/// Caps the worker pool when set.
const THREADS_ENV: &str = "RIS_NLOS_THREADS";

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("{THREADS_ENV}={v} is not a thread count"))?;
        if n == 0 {
            anyhow::bail!("{THREADS_ENV} must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(&cli, Execution::Parallel)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
