use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use steepwell::config::{parse_config, Experiment};
use steepwell::run::{error_record, run};
use steepwell::Error;

/// Runs one steep-well experiment from a TOML config.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    config: PathBuf,
    /// Overrides `experiment` in the config.
    #[arg(long)]
    experiment: Option<String>,
    /// Overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(cli: &Cli) -> Result<steepwell::config::RunConfig, Error> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| Error::Config {
        line: None,
        message: format!("cannot read {}: {e}", cli.config.display()),
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(name) = &cli.experiment {
        cfg = cfg.with_experiment(name.parse::<Experiment>()?)?;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = std::env::var("STEEPWELL_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            println!("{}", error_record(&e));
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("study failed: {e}");
            let record = error_record(&e);
            if std::fs::create_dir_all(&cfg.output).is_ok() {
                let _ = std::fs::write(cfg.output.join("error.json"), format!("{record}\n"));
            }
            println!("{record}");
            ExitCode::from(if matches!(e, Error::Config { .. }) { 2 } else { 3 })
        }
    }
}
