//! Run a scenario, save it, and check every trajectory invariant on the
//! saved files.
//!
//! Run with `cargo run --release --example verify_run -- [builtin:name | file.toml]`.

use etsync::cli::{cmd_run, cmd_verify, read_scenario_text};
use etsync::config::Overrides;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let target = std::env::args().nth(1).unwrap_or_else(|| "builtin:benchmark_checked".into());
    let text = read_scenario_text(&target)?;
    let dir = std::env::temp_dir().join("etsync-verify");
    cmd_run(&text, &Overrides::default(), &dir)?;
    let report = cmd_verify(dir.to_str().expect("utf-8 path"), &Overrides::default())?;
    print!("{}", report.render());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
