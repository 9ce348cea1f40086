use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use omm_expcli::config::Figure;
use omm_expcli::{checks, output, plot, CliError, Command, Result, RunConfig};

/// Datasets for the levitated-mirror distance-sensing study.
///
/// Without --config each command runs the configuration shipped for its figure.
/// Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
/// 4 failed check in `reproduce`, 1 other I/O failure.
#[derive(Parser, Debug)]
#[command(name = "omm", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides [output] dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Also write SVG charts next to the CSV files.
    #[arg(long, global = true)]
    emit_plots: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Trap frequency and dω/dd against array separation.
    Trap,
    /// Decoupled-state QFI against photon number, with power-law fits.
    Scaling,
    /// Lossless evolution: QFI, infidelity of the closed form, quadratures, purity.
    Evolve,
    /// QFI under photon loss for several loss rates.
    Decohere,
    /// Homodyne and SLD-basis Fisher information against the QFI.
    Cfi,
    /// Runs a figure's pipeline with its shipped configuration and checks the result.
    Reproduce {
        /// One of 1b, 2, 3, 4, 5.
        figure: Figure,
    },
}

fn command_for(figure: Figure) -> Command {
    match figure {
        Figure::Fig1b => Command::Trap,
        Figure::Fig2 => Command::Scaling,
        Figure::Fig3 => Command::Evolve,
        Figure::Fig4 => Command::Decohere,
        Figure::Fig5 => Command::Cfi,
    }
}

fn figure_for(command: Command) -> Figure {
    *Figure::ALL.iter().find(|f| command_for(**f) == command).expect("every command has a figure")
}

fn load(path: Option<&Path>, figure: Figure) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::from_toml(figure.pinned()),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let (command, figure, reproduce) = match cli.command {
        Cmd::Trap => (Command::Trap, figure_for(Command::Trap), false),
        Cmd::Scaling => (Command::Scaling, figure_for(Command::Scaling), false),
        Cmd::Evolve => (Command::Evolve, figure_for(Command::Evolve), false),
        Cmd::Decohere => (Command::Decohere, figure_for(Command::Decohere), false),
        Cmd::Cfi => (Command::Cfi, figure_for(Command::Cfi), false),
        Cmd::Reproduce { figure } => (command_for(figure), figure, true),
    };
    let cfg = load(cli.config.as_deref(), figure)?;
    let mut dir = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    if reproduce {
        dir = dir.join(format!("fig{}", figure.id()));
    }
    let hash = cfg.hash();

    let tables = command.run(&cfg)?;
    output::create_dir(&dir)?;
    for t in &tables {
        println!("wrote {}", output::write_csv(&dir, t, command.name(), &hash)?.display());
    }
    if cli.emit_plots || cfg.output.emit_plots {
        for p in plot::write_plots(&dir, &tables)? {
            println!("wrote {}", p.display());
        }
    }
    if reproduce {
        let results = checks::run(figure, &tables);
        let failed = results.iter().filter(|c| !c.pass).count();
        for c in &results {
            println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        if failed > 0 {
            return Err(CliError::Acceptance(failed));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("omm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
