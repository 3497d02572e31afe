//! Event-triggered consensus of the reference models alone.
//!
//! Run with `cargo run --release --example consensus_only`.

use etsync::config::{bundled, parse_config, Overrides};
use etsync::sim::{run_scenario, Family};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(bundled("consensus_only").expect("bundled scenario"), &Overrides::default())?;
    let sc = &cfg.scenario;
    let out = run_scenario(sc)?;
    let m = &out.metrics;
    println!("||p(0)|| = {:.4e}, ||p(T)|| = {:.4e}", m.initial_p_norm, m.final_p_norm);
    for i in 0..sc.agent_count() {
        let events: Vec<_> = out.log.of(i, Family::Consensus).collect();
        let timer = events.iter().filter(|e| e.dt.is_some_and(|dt| dt <= sc.design.b)).count();
        println!(
            "agent {i}: {} events, {} on the timer floor, min interval {:.4e}",
            events.len(),
            timer,
            m.agents[i].consensus.min_interval.unwrap_or(f64::NAN)
        );
    }
    println!("samples with V increasing: {} of {}", m.v_increase_count, m.samples);
    Ok(())
}
