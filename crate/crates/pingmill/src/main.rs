//! Thin command-line front end; all logic lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use pingmill::pipeline::{run, Subcommand};

const USAGE: &str = "\
pingmill <subcommand> [--config <path>] [--key value ...] [--workers N] [--out DIR]

Subcommands:
  stats         per-user activity statistics
  homework      home/work location inference
  od            origin-destination commuting matrix
  landuse       hour-of-week profiles and land-use clustering
  displacement  post-event displacement rates by group
  anomalies     tile population density anomalies
  poi           POI daily visits and visit-rate changes
  grid          emit a uniform grid tessellation as GeoJSON

Options:
  --config <path>   TOML run configuration (defaults apply without one)
  --key value       override any config field by dotted path,
                    e.g. --privacy.k_anonymity 5 --filter.bbox '[0,0,1,1]'
  --workers N       shorthand for --engine.workers N
  --out DIR         shorthand for --output.dir DIR
  --help, --version

Conventions: weekdays are indexed Monday=0 .. Sunday=6; all local-time
math uses the fixed offset in [clock] utc_offset_minutes; hour-of-week
bin 0 is Monday 00:00-00:59 local. Spill space comes from
[engine] work_dir, the PINGMILL_WORK_DIR environment variable, or the
system temp directory, in that order.
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match cli(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn cli(args: &[String]) -> pingmill::Result<ExitCode> {
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        print!("{USAGE}");
        return Ok(ExitCode::from(if args.is_empty() { 2 } else { 0 }));
    }
    if args[0] == "--version" || args[0] == "-V" {
        println!("pingmill {}", env!("CARGO_PKG_VERSION"));
        return Ok(ExitCode::SUCCESS);
    }
    let Some(subcommand) = Subcommand::parse(&args[0]) else {
        eprintln!("unknown subcommand '{}'\n", args[0]);
        print!("{USAGE}");
        return Ok(ExitCode::from(2));
    };

    let mut config_path: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let flag = &args[i];
        let Some(key) = flag.strip_prefix("--") else {
            eprintln!("expected a --key, got '{flag}'\n");
            print!("{USAGE}");
            return Ok(ExitCode::from(2));
        };
        let Some(value) = args.get(i + 1) else {
            eprintln!("flag --{key} is missing its value\n");
            print!("{USAGE}");
            return Ok(ExitCode::from(2));
        };
        match key {
            "config" => config_path = Some(PathBuf::from(value)),
            "workers" => overrides.push(("engine.workers".into(), value.clone())),
            "out" => overrides.push(("output.dir".into(), value.clone())),
            dotted => overrides.push((dotted.to_string(), value.clone())),
        }
        i += 2;
    }

    let outcome = run(subcommand, config_path.as_deref(), &overrides)?;
    println!(
        "{}: wrote {} files to {}",
        args[0],
        outcome.outputs.len(),
        outcome.output_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}
