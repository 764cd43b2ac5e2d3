use anyhow::Context;
use clap::Parser;

use casimir_gas::cli::{self, Cli};

fn main() -> anyhow::Result<()> {
    let args = Cli::parse();
    let code = cli::run(&args).context("failed to write run artifacts")?;
    std::process::exit(code);
}
