use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hqr::cqed::{self, material_presets};
use hqr::experiment::{self, Config, ConfigSource, ExperimentError, ExperimentName, OutputFormat};

#[derive(Parser)]
#[command(name = "hqr", version, about = "Hybrid quantum repeater experiments")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Data file to write; metadata goes next to it as `<file>.meta.json`.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// TOML configuration, or a metadata file from an earlier run.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Set one configuration entry, e.g. `network.n_segments=16`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Repeater rate against link success probability, white-noise errors.
    Fig2,
    /// Fidelity and success probability against distinguishability.
    Fig5,
    /// Optimized fidelity against success probability per fiber length.
    Fig6,
    /// C-Z gate infidelity against local loss.
    Fig7,
    /// Repeater rate and fidelity with physical link and gate errors.
    Fig8,
    /// Silicon saturation sweeps.
    Fig9,
    /// ZnSe and trapped-ion saturation sweeps.
    Fig10,
    /// One repeater run with the configured network, noise and policy.
    Custom,
    /// Material presets.
    Presets {
        #[command(subcommand)]
        action: PresetsAction,
    },
    /// Check a configuration file without running anything.
    Validate { path: PathBuf },
}

#[derive(Subcommand)]
enum PresetsAction {
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    if let Some(n) = cli.workers {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let name = match cli.command {
        Command::Presets { action: PresetsAction::List } => {
            list_presets();
            return Ok(());
        }
        Command::Validate { path } => {
            let report = experiment::validate_config(&ConfigSource::read(&path)?)?;
            print!("{report}");
            if let Some(resolved) = report.resolved.as_ref().filter(|_| report.ok()) {
                println!("\n# resolved configuration\n{resolved}");
            }
            return if report.ok() {
                Ok(())
            } else {
                Err(ExperimentError::Invalid(
                    report.unknown_keys.iter().map(|k| format!("unknown key `{k}`")).chain(report.problems.clone()).collect(),
                ))
            };
        }
        Command::Fig2 => ExperimentName::Fig2,
        Command::Fig5 => ExperimentName::Fig5,
        Command::Fig6 => ExperimentName::Fig6,
        Command::Fig7 => ExperimentName::Fig7,
        Command::Fig8 => ExperimentName::Fig8,
        Command::Fig9 => ExperimentName::Fig9,
        Command::Fig10 => ExperimentName::Fig10,
        Command::Custom => ExperimentName::Custom,
    };
    let source = cli.config.as_deref().map(ConfigSource::read).transpose()?;
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = Config::load(source.as_ref(), &overrides)?;
    let format = match cli.format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    };
    let output = cli
        .output
        .unwrap_or_else(|| PathBuf::from(format!("{name}.{}", format.extension())));
    let data = experiment::run_experiment(name, &cfg)?;
    let files = experiment::write_outputs(name, &cfg, &data, format, &output)?;
    eprintln!(
        "{name}: {} rows -> {} (metadata {})",
        data.rows.len(),
        files.data.display(),
        files.metadata.display()
    );
    Ok(())
}

fn list_presets() {
    println!("materials:");
    for p in material_presets() {
        let q = &p.params;
        println!(
            "  {:<5} Φ = {:>7.3}  g/2π = {:>10.4} MHz  γ/2π = {:>10.4} MHz  τ = {:.3e} s{}",
            p.material.name(),
            cqed::cooperativity(q),
            q.g / (2.0 * std::f64::consts::PI * 1e6),
            q.gamma_cav / (2.0 * std::f64::consts::PI * 1e6),
            q.lifetime(),
            if p.externally_sourced { "  (externally sourced)" } else { "" }
        );
        println!("        {}", p.description);
    }
    println!("experiments:");
    for e in ExperimentName::ALL {
        println!("  {:<7} {}", e.as_str(), e.description());
    }
}
