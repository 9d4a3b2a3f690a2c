use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fbqlink_cli::commands::{self, AnalyzeArgs, CommandError, DemoArgs, PredictArgs, SatelliteArgs, SimulateArgs};
use fbqlink_core::{Basis, JitterConvention};

// stdout may be a closed pipe (`fbqlink demo | head`); that is not an error
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "fbqlink",
    version,
    about = "Frequency-bin qubit link simulator and tag analyzer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    Fwhm,
    StdDev,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Z,
    X,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic visibility against bin spacing or detector jitter.
    Predict {
        #[arg(long, default_value = "out/predict")]
        out: PathBuf,
        /// start:stop:count in rad/s
        #[arg(long)]
        delta_omega_sweep: Option<String>,
        /// start:stop:count of jitter FWHM in ps
        #[arg(long)]
        jitter_sweep: Option<String>,
        #[arg(long, default_value_t = 0.95)]
        v0: f64,
        /// Jitter FWHM held fixed during a spacing sweep, ps
        #[arg(long, default_value_t = 100.0)]
        jitter_ps: f64,
        /// Spacing held fixed during a jitter sweep, rad/s
        #[arg(long)]
        delta_omega: Option<f64>,
        #[arg(long, value_enum, default_value = "fwhm")]
        convention: ConventionArg,
    },
    /// Simulate a tag stream from a scenario.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/simulate")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// dotted.key=value, applied to the config before validation
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Fold a tag stream on the beat period and estimate visibilities.
    Analyze {
        /// Tag CSV; a `.meta.json` sidecar is picked up if present
        tags: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/analyze")]
        out: PathBuf,
        /// dotted.key=value, applied to the analysis settings
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Phase drift and compensation budget for a moving platform.
    Satellite {
        #[arg(long, default_value = "out/satellite")]
        out: PathBuf,
        /// CSV with columns t_s,range_m
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = 6e3)]
        velocity: f64,
        #[arg(long, default_value_t = 500e3)]
        range: f64,
        #[arg(long, default_value_t = 10.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 1.0)]
        step_s: f64,
        #[arg(long)]
        delta_omega: Option<f64>,
    },
    /// Simulate and analyze both receiver bases and print a summary.
    Demo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/demo")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the built-in scenario as JSON.
    DefaultConfig {
        #[arg(long, value_enum, default_value = "z")]
        basis: BasisArg,
    },
}

fn run(cmd: Command) -> Result<(), CommandError> {
    match cmd {
        Command::Predict {
            out,
            delta_omega_sweep,
            jitter_sweep,
            v0,
            jitter_ps,
            delta_omega,
            convention,
        } => {
            let mut args = PredictArgs::new(out);
            args.delta_omega_sweep = delta_omega_sweep;
            args.jitter_sweep = jitter_sweep;
            args.v0 = v0;
            args.fixed_jitter_ps = jitter_ps;
            if let Some(dw) = delta_omega {
                args.fixed_delta_omega = dw;
            }
            args.convention = match convention {
                ConventionArg::Fwhm => JitterConvention::Fwhm,
                ConventionArg::StdDev => JitterConvention::StdDev,
            };
            for f in commands::predict(&args)? {
                outln!("wrote {}", f.display());
            }
        }
        Command::Simulate {
            config,
            out,
            seed,
            overrides,
        } => {
            for f in commands::simulate_cmd(&SimulateArgs {
                config,
                out,
                seed,
                overrides,
            })? {
                outln!("wrote {}", f.display());
            }
        }
        Command::Analyze {
            tags,
            config,
            out,
            overrides,
        } => {
            let res = commands::analyze_cmd(&AnalyzeArgs {
                tags,
                config,
                out,
                overrides,
            })?;
            outln!(
                "{}",
                serde_json::to_string_pretty(&res.analysis.report).expect("report")
            );
            for w in res.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Satellite {
            out,
            trajectory,
            velocity,
            range,
            duration_s,
            step_s,
            delta_omega,
        } => {
            let mut args = SatelliteArgs::new(out);
            args.trajectory = trajectory;
            args.velocity_m_per_s = velocity;
            args.range_m = range;
            args.duration_s = duration_s;
            args.step_s = step_s;
            if let Some(dw) = delta_omega {
                args.delta_omega = dw;
            }
            out!("{}", commands::satellite(&args)?.summary);
        }
        Command::Demo {
            config,
            out,
            seed,
            overrides,
        } => {
            let res = commands::demo(&DemoArgs {
                config,
                out,
                seed,
                overrides,
            })?;
            out!("{}", res.summary);
        }
        Command::DefaultConfig { basis } => {
            let basis = match basis {
                BasisArg::Z => Basis::Z,
                BasisArg::X => Basis::X,
            };
            outln!(
                "{}",
                serde_json::to_string_pretty(&commands::default_config_json(basis)).expect("json")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
