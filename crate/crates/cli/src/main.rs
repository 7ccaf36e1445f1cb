use hypocert_cli::config::{parse_config_file, Command, ScenarioConfig};
use hypocert_cli::scenario::run_scenario;
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
hypocert - decay-rate certificates for kinetic Fokker-Planck dynamics

usage: hypocert <command> [--config <path>] [--out <dir>] [--seed <u64>] [--quiet]

commands:
  certify         compute the certificate constants and validate identities
  simulate-pde    run the phase-space solver and audit the decay bounds
  simulate-sde    run the Langevin ensemble and fit the relaxation rate
  lions-check     solve the divergence equation on random sources
  sweep-friction  sweep the friction and compare rates with the certificate

exit codes: 0 all audits pass, 1 usage/parse error, 2 validation error,
3 numerical refusal, 4 audit failure, 5 i/o error
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(code) => code,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(args: &[String]) -> Result<ExitCode, (u8, String)> {
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        print!("{USAGE}");
        return Ok(ExitCode::SUCCESS);
    }
    let command = Command::parse(&args[0])
        .ok_or((1u8, format!("unknown command `{}`\n{USAGE}", args[0])))?;
    let mut config_path: Option<PathBuf> = None;
    let mut out_dir = PathBuf::from("out");
    let mut seed: Option<u64> = None;
    let mut quiet = false;
    let mut it = args[1..].iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--config" => {
                config_path = Some(PathBuf::from(it.next().ok_or((
                    1u8,
                    "--config needs a path".to_string(),
                ))?));
            }
            "--out" => {
                out_dir = PathBuf::from(it.next().ok_or((1u8, "--out needs a dir".to_string()))?);
            }
            "--seed" => {
                let v = it.next().ok_or((1u8, "--seed needs a u64".to_string()))?;
                seed = Some(
                    v.parse()
                        .map_err(|_| (1u8, format!("--seed: `{v}` is not a u64")))?,
                );
            }
            "--quiet" => quiet = true,
            other => return Err((1, format!("unknown flag `{other}`\n{USAGE}"))),
        }
    }
    let mut cfg: ScenarioConfig = match &config_path {
        Some(p) => parse_config_file(p).map_err(|e| {
            let code = match &e {
                hypocert_cli::config::ConfigError::Parse { .. } => 1u8,
                hypocert_cli::config::ConfigError::Validation { .. } => 2,
                hypocert_cli::config::ConfigError::Io(..) => 5,
                hypocert_cli::config::ConfigError::Model(_) => 2,
            };
            (code, e.to_string())
        })?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match run_scenario(command, &cfg, &out_dir, quiet) {
        Ok(outcome) => {
            if outcome.passed {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(4))
            }
        }
        Err(e) => Err((e.exit_code() as u8, e.to_string())),
    }
}
