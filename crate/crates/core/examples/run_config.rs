use steepwell::config::parse_config;
use steepwell::run::run;

// cargo run --example run_config -- configs/trotter_kato.toml
fn main() -> steepwell::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/spectral.toml").into());
    let mut cfg = parse_config(&std::fs::read_to_string(&path)?)?;
    cfg.output = std::env::temp_dir().join("steepwell-example");
    let outcome = run(&cfg)?;
    for f in &outcome.files {
        println!("{}", f.display());
    }
    println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap());
    Ok(())
}
