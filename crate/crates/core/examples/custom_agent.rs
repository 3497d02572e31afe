//! Plug a user-defined plant into the scenario loader.
//!
//! The plant `ż = −2z + x`, `ẋ = z + w x + u` has relative degree one and a
//! steady-state input that is a harmonic of the reference frequency, so the
//! bundled generator matrices apply unchanged.
//!
//! Run with `cargo run --release --example custom_agent`.

use std::sync::Arc;

use etsync::config::{bundled, parse_config_with, ModelRegistry, Overrides};
use etsync::numerics::Vector;
use etsync::regulation::{benchmark_generator_spec, AgentModel};
use etsync::sim::run_scenario;

#[derive(Debug)]
struct LinearLag;

impl AgentModel for LinearLag {
    fn z_dim(&self) -> usize {
        1
    }

    fn relative_degree(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn f0(&self, z: &[f64], x1: f64, _w: &[f64]) -> Vector {
        Vector::from_vec(vec![-2.0 * z[0] + x1])
    }

    fn f(&self, _stage: usize, z: &[f64], x: &[f64], w: &[f64]) -> f64 {
        z[0] + w[0] * x[0]
    }

    fn b(&self, _stage: usize, _w: &[f64]) -> f64 {
        1.0
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut registry = ModelRegistry::default();
    registry.register("linear_lag", Arc::new(LinearLag), Some(vec![benchmark_generator_spec()]));

    let text = bundled("benchmark")
        .expect("bundled scenario")
        .replace("model = \"benchmark\"", "model = \"linear_lag\"")
        .replace("name = \"benchmark\"", "name = \"linear_lag\"");
    let text = text
        .lines()
        .map(|l| if l.starts_with("z0 = ") { "z0 = [0.1]" } else { l })
        .collect::<Vec<_>>()
        .join("\n");

    let cfg = parse_config_with(&text, &Overrides::default(), &registry)?;
    let out = run_scenario(&cfg.scenario)?;
    let m = &out.metrics;
    println!("final sync_error = {:.4e}", m.final_sync_error);
    for (i, a) in m.agents.iter().enumerate() {
        println!(
            "agent {i}: {} consensus events, {} regulation events",
            a.consensus.count, a.regulation.count
        );
    }
    Ok(())
}
