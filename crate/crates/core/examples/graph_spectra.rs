//! Left eigenvector, symmetrized Laplacian and `λ̂₂` for a few directed graphs.
//!
//! Run with `cargo run --example graph_spectra`.

use etsync::graph::{is_strongly_connected, DirectedGraph, GraphSpectra};

fn show(name: &str, rows: &[Vec<f64>]) -> Result<(), Box<dyn std::error::Error>> {
    let g = DirectedGraph::from_rows(rows)?;
    println!("== {name}");
    if !is_strongly_connected(&g) {
        println!("not strongly connected");
        return Ok(());
    }
    let s = GraphSpectra::compute(&g)?;
    println!("r = {:?}", s.r.as_slice());
    println!("L_hat = {}", s.l_hat);
    println!("lambda2_hat = {:.9}, lambda bound = {:.9}", s.lambda2_hat, s.lambda_bound());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    show(
        "directed ring",
        &[
            vec![0.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ],
    )?;
    show(
        "weighted, unbalanced",
        &[vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 0.5], vec![1.0, 1.0, 0.0]],
    )?;
    show("directed path", &[vec![0.0, 0.0], vec![1.0, 0.0]])?;
    Ok(())
}
