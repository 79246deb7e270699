use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stiffid::commands::{cmd_benchmark, cmd_identify, cmd_simulate, BenchmarkArgs, Format, SimulationSpec, Study};
use stiffid::manifest::{EstimatorKind, ManifestOptions};
use stiffid::Failure;
use stiffid_core::AngleExtraction;

#[derive(Parser)]
#[command(name = "stiffid", version, about = "Compliance and stiffness matrix identification from displacement fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Lin,
    Svd,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyArg {
    Amplitude,
    Noise,
    ZeroDetection,
}

#[derive(Subcommand)]
enum Command {
    /// Identify the compliance matrix from a manifest of field files.
    Identify {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorArg>,
        /// plus, minus, avg, plus-asin, minus-asin or avg-asin.
        #[arg(long)]
        angles: Option<AngleExtraction>,
        #[arg(long)]
        outlier_fraction: Option<f64>,
        #[arg(long)]
        confidence_multiplier: Option<f64>,
        #[arg(long)]
        no_symmetrize: bool,
    },
    /// Write synthetic beam-tip fields and a manifest.
    Simulate {
        /// JSON simulation spec; defaults are used when omitted.
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Run a benchmark study and check it against its acceptance bands.
    Benchmark {
        #[arg(value_enum)]
        study: StudyArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        confidence_multiplier: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let format = match cli.format {
        FormatArg::Json => Format::Json,
        FormatArg::Text => Format::Text,
        FormatArg::Csv => Format::Csv,
    };
    match cli.command {
        Command::Identify {
            manifest,
            estimator,
            angles,
            outlier_fraction,
            confidence_multiplier,
            no_symmetrize,
        } => {
            let overrides = ManifestOptions {
                estimator: estimator.map(|e| match e {
                    EstimatorArg::Lin => EstimatorKind::Lin,
                    EstimatorArg::Svd => EstimatorKind::Svd,
                }),
                angles,
                outlier_fraction,
                confidence_multiplier,
                symmetrize: no_symmetrize.then_some(false),
                ..Default::default()
            };
            let out = cmd_identify(&manifest, &overrides)?;
            if let Some(dir) = &cli.out {
                out.write_to(dir)?;
            }
            print!("{}", out.render(format));
        }
        Command::Simulate { spec, seed, sigma } => {
            let mut spec = match spec {
                Some(path) => SimulationSpec::load(&path)?,
                None => SimulationSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(sigma) = sigma {
                spec.sigma = sigma;
            }
            let dir = cli.out.unwrap_or_else(|| PathBuf::from("."));
            let manifest = cmd_simulate(&spec, &dir)?;
            println!("{}", manifest.display());
        }
        Command::Benchmark {
            study,
            seed,
            sigma,
            trials,
            confidence_multiplier,
        } => {
            let study = match study {
                StudyArg::Amplitude => Study::Amplitude,
                StudyArg::Noise => Study::Noise,
                StudyArg::ZeroDetection => Study::ZeroDetection,
            };
            let args = BenchmarkArgs {
                seed,
                sigma,
                trials,
                confidence_multiplier,
            };
            let out = cmd_benchmark(study, &args)?;
            if let Some(dir) = &cli.out {
                out.write_to(dir)?;
            }
            print!("{}", out.render(format));
            if !out.passed() {
                let names: Vec<_> = out.failures().iter().map(|b| b.name.clone()).collect();
                return Err(Failure::band(format!("bands failed: {}", names.join("; "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STIFFID_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code as u8)
        }
    }
}
