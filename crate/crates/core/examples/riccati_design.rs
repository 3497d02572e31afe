//! Riccati design for the harmonic reference model and the derived
//! consensus constants of the bundled benchmark network.
//!
//! Run with `cargo run --example riccati_design`.

use etsync::config::{bundled, parse_config, Overrides};
use etsync::numerics::{are_residual, solve_are, Matrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let b = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let (lambda, beta) = (0.19, 2.5);

    let p = solve_are(&a, &b, lambda, beta)?;
    let k = b.transpose() * &p;
    println!("P = {p}");
    println!("K = B'P = {k}");
    println!("residual = {:.3e}", are_residual(&p, &a, &b, lambda, beta).amax());

    let cfg = parse_config(bundled("benchmark").expect("bundled scenario"), &Overrides::default())?;
    let d = &cfg.scenario.design;
    println!("lambda2_hat = {:.6}", d.lambda2_hat);
    println!("lambda bound = {:.6} (lambda = {})", d.lambda_bound, d.lambda);
    println!("beta = {} (required {:.3})", d.beta, d.beta_required);
    println!("b1 = {:.4}, b2 = {:.4}, b = {:.6e}", d.b1, d.b2, d.b);
    println!("all hypotheses hold: {}", d.checks.all_pass());
    Ok(())
}
