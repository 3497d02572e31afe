//! Full two-layer run of the benchmark network, writing the CLI file set.
//!
//! Run with `cargo run --release --example benchmark_run -- [out_dir]`.

use std::path::PathBuf;

use etsync::cli::cmd_run;
use etsync::config::{bundled, Overrides};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("etsync-benchmark"));
    let summary = cmd_run(bundled("benchmark").expect("bundled scenario"), &Overrides::default(), &out_dir)?;
    print!("{}", summary.metrics_text);

    let trace = &summary.output.trace;
    let sync = trace.series("sync_error").expect("sync_error column");
    let times = trace.times();
    for target in [0.0, 5.0, 10.0, 20.0, 30.0] {
        let k = times.partition_point(|&t| t < target).min(times.len() - 1);
        println!("t = {:>5.1}  sync_error = {:.4e}", times[k], sync[k]);
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}
