use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lunar_rdv::scenario::{parse_scenario, OutputFormat, Scenario};
use lunar_rdv::sim::{compare_runs, run_batch, run_scenario, write_orbit_only, Overrides};
use lunar_rdv::Error;

/// Default output root when neither --out nor the scenario names one.
const OUT_ENV: &str = "LUNAR_RDV_OUT";

#[derive(Parser)]
#[command(
    name = "lunar-rdv",
    version,
    about = "Minimum-propellant NMPC rendezvous on lunar halo orbits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop scenario (or a directory of them with --batch).
    Run {
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Emit only the target orbit and its events.
        #[arg(long)]
        orbit_only: bool,
        /// Run every *.cfg in this directory in parallel.
        #[arg(long, value_name = "DIR", conflicts_with = "scenario")]
        batch: Option<PathBuf>,
    },
    /// Correct the target orbit and write it with its apolune/perilune events.
    Orbit {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare two run CSV logs.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Thrust level for the bang-bang audit; defaults to the largest logged magnitude.
        #[arg(long)]
        u_max: Option<f64>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Parse and validate a scenario, printing the resolved configuration.
    Validate { scenario: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Orbit seed `x,z,vy` (normalized), replacing the scenario's orbit source.
    #[arg(long, value_name = "X,Z,VY", value_parser = parse_seed)]
    seed_orbit: Option<[f64; 3]>,
    /// BVP tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Comma-separated smoothing schedule.
    #[arg(long, value_name = "EPS,...", value_delimiter = ',')]
    epsilon_schedule: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_format)]
    format: Option<OutputFormat>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            bvp_tolerance: self.tolerance,
            epsilon_schedule: self.epsilon_schedule.clone(),
            seed: self.seed_orbit,
            format: self.format,
        }
    }
}

fn parse_seed(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected 3 values, got {}", v.len()))
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    OutputFormat::parse(s).ok_or_else(|| format!("expected csv or json, got `{s}`"))
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from)
}

fn out_dir(cli: Option<&Path>, s: &Scenario) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| s.output_dir.clone())
        .unwrap_or_else(|| out_root().join(&s.name))
}

fn load(path: &Path, common: &Common) -> Result<Scenario, Error> {
    let mut s = parse_scenario(path)?;
    common.overrides().apply(&mut s)?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    Ok(s)
}

fn orbit(path: &Path, common: &Common) -> Result<u8, Error> {
    let s = load(path, common)?;
    let dir = out_dir(common.out.as_deref(), &s);
    for f in write_orbit_only(&s, &dir)? {
        println!("{}", f.display());
    }
    Ok(0)
}

fn run(path: &Path, common: &Common) -> Result<u8, Error> {
    let s = load(path, common)?;
    let dir = out_dir(common.out.as_deref(), &s);
    let report = run_scenario(&s, &dir)?;
    let r = &report.summary.run;
    println!(
        "{}: {:?} after {} s, I_u = {:.3} m/s",
        s.name, r.termination, r.duration_s, r.impulse_mps
    );
    println!(
        "final error: position {:?} m, velocity {:?} m/s",
        r.final_position_error_m, r.final_velocity_error_mps
    );
    println!("outputs in {}", dir.display());
    if report.partial() {
        eprintln!("error: run stopped early; outputs are partial");
        return Ok(3);
    }
    Ok(0)
}

fn batch(dir: &Path, common: &Common) -> Result<u8, Error> {
    let root = common.out.clone().unwrap_or_else(out_root);
    let mut worst = 0u8;
    for (path, res) in run_batch(dir, &root, &common.overrides())? {
        match res {
            Ok(rep) if !rep.partial() => {
                println!("{}: ok, I_u = {:.3} m/s", path.display(), rep.summary.run.impulse_mps)
            }
            Ok(_) => {
                println!("{}: partial", path.display());
                worst = worst.max(3);
            }
            Err(e) => {
                println!("{}: {e}", path.display());
                worst = worst.max(e.exit_code() as u8);
            }
        }
    }
    Ok(worst)
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run {
            scenario,
            common,
            orbit_only,
            batch: batch_dir,
        } => match (scenario, batch_dir) {
            (_, Some(dir)) => batch(&dir, &common),
            (Some(p), None) if orbit_only => orbit(&p, &common),
            (Some(p), None) => run(&p, &common),
            (None, None) => Err(Error::Validation("a scenario file or --batch is required".into())),
        },
        Command::Orbit { scenario, common } => orbit(&scenario, &common),
        Command::Compare { a, b, u_max, json } => {
            let rep = compare_runs(&a, &b, u_max)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes"));
            } else {
                print!("{}", rep.to_text());
            }
            Ok(0)
        }
        Command::Validate { scenario } => {
            let s = parse_scenario(&scenario)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            for n in &s.notes {
                println!("# note: {n}");
            }
            print!("{}", s.to_config_string());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
