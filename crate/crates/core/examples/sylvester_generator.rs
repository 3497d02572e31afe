//! Steady-state generator: Sylvester solve `MT + NΨ = TΦ` and `ΨT⁻¹`.
//!
//! Run with `cargo run --example sylvester_generator`.

use etsync::numerics::solve_sylvester;
use etsync::regulation::{benchmark_generator_spec, build_generator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = benchmark_generator_spec();
    let generator = build_generator(std::slice::from_ref(&spec))?;
    let block = &generator.blocks[0];
    println!("T = {}", block.t);
    println!("Psi T^-1 = {:?}", block.psi_t_inv.as_slice());
    println!("residual = {:.3e}", generator.max_sylvester_residual());

    // Same solve through the general routine: M T − T Φ = −N Ψ.
    let t = solve_sylvester(&spec.m, &(-&spec.phi), &(-(&spec.n * &spec.psi)))?;
    println!("direct solve difference = {:.3e}", (&t - &block.t).amax());
    Ok(())
}
