//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::time::Instant;

use etsync::config::{bundled, parse_config, Overrides};
use etsync::graph::{is_strongly_connected, DirectedGraph, GraphSpectra};
use etsync::numerics::{are_residual, solve_are, solve_sylvester, Matrix};
use etsync::regulation::{benchmark_generator_spec, build_generator};
use etsync::sim::run_scenario;
use etsync::verify::{verify, Status, VerifyReport};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    name: &'static str,
    ok: bool,
    detail: String,
}

fn harmonic_a() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

fn run_and_verify(name: &str, overrides: &Overrides) -> (etsync::sim::SimOutput, VerifyReport, f64) {
    let cfg = parse_config(bundled(name).unwrap(), overrides).unwrap();
    let start = Instant::now();
    let out = run_scenario(&cfg.scenario).unwrap();
    let report = verify(&cfg.scenario, &out.trace, &out.log).unwrap();
    (out, report, start.elapsed().as_secs_f64())
}

fn passes(report: &VerifyReport, check: &str) -> bool {
    report.get(check).is_some_and(|c| c.status == Status::Pass)
}

fn are_reproduction() -> Outcome {
    let a = harmonic_a();
    let b = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let start = Instant::now();
    let p = solve_are(&a, &b, 0.19, 2.5).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let k = b.transpose() * &p;
    let expected_p = [[6.07, -1.12], [-1.12, 5.00]];
    let p_err = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (p[(i, j)] - expected_p[i][j]).abs())
        .fold(0.0, f64::max);
    let k_err = (k[(0, 0)] + 1.12).abs().max((k[(0, 1)] - 5.00).abs());
    let residual = are_residual(&p, &a, &b, 0.19, 2.5).amax();
    Outcome {
        name: "ARE reproduction",
        ok: p_err <= 0.01 && k_err <= 0.01 && residual <= 1e-8 && elapsed < 1.0,
        detail: format!("|P err| {p_err:.4}, |K err| {k_err:.4}, residual {residual:.1e}, {elapsed:.4} s"),
    }
}

fn constant_reproduction() -> Outcome {
    let cfg = parse_config(bundled("benchmark").unwrap(), &Overrides::default()).unwrap();
    let d = &cfg.scenario.design;
    let s = &cfg.scenario.spectra;
    let r_exact = s.r.iter().all(|&x| x == 0.25);
    let b_formula = (1.03f64).ln() / (11.25 + 10.25 * 0.045 * 2.0);
    let ok = (d.b1 - 11.25).abs() <= 0.01
        && (d.b2 - 10.25).abs() <= 0.01
        && (s.lambda2_hat - 0.5).abs() <= 1e-9
        && r_exact
        && (b_formula - 0.002428).abs() <= 1e-6;
    Outcome {
        name: "Constant reproduction",
        ok,
        detail: format!(
            "b1 {:.4}, b2 {:.4}, lambda2 {:.12}, r = 1/4 exactly: {r_exact}, b(formula) {b_formula:.7}, b(design) {:.7}",
            d.b1, d.b2, s.lambda2_hat, d.b
        ),
    }
}

fn consensus_suite() -> Outcome {
    let (_, rep, t1) = run_and_verify("benchmark", &Overrides::default());
    let (_, checked, t2) = run_and_verify("benchmark_checked", &Overrides::default());
    let lyap = checked.get("lyapunov_slope").unwrap();
    let ok = ["consensus_convergence", "consensus_dwell", "threshold_window_bound", "combined_condition"]
        .iter()
        .all(|c| passes(&rep, c) && passes(&checked, c))
        && rep.get("threshold_window_bound").unwrap().evaluated > 0
        && lyap.status == Status::Pass
        && lyap.evaluated > 0
        && t1 + t2 < 30.0;
    Outcome {
        name: "Consensus property suite",
        ok,
        detail: format!(
            "{}; Lyapunov slope on checked design: {} over {} sample pairs; {:.2} s + {:.2} s",
            rep.get("consensus_convergence").unwrap().detail,
            lyap.status.as_str(),
            lyap.evaluated,
            t1,
            t2
        ),
    }
}

fn regulation_suite() -> Outcome {
    let (_, rep, _) = run_and_verify("benchmark", &Overrides::default());
    let gen = build_generator(&[benchmark_generator_spec()]).unwrap();
    let t = &gen.blocks[0].t;
    let t_expected = Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.8, 0.4]);
    let t_err = (t - &t_expected).amax();
    let ok = passes(&rep, "trigger_safety")
        && passes(&rep, "regulation_zeno")
        && gen.max_sylvester_residual() <= 1e-9
        && t_err <= 1e-9;
    Outcome {
        name: "Regulation property suite",
        ok,
        detail: format!(
            "{}; {}; T err {t_err:.1e}, residual {:.1e}",
            rep.get("trigger_safety").unwrap().detail,
            rep.get("regulation_zeno").unwrap().detail,
            gen.max_sylvester_residual()
        ),
    }
}

fn end_to_end() -> Outcome {
    let (out, rep, _) = run_and_verify("benchmark", &Overrides::default());
    let cfg = parse_config(bundled("benchmark").unwrap(), &Overrides::default()).unwrap();
    let halved = Overrides {
        step: Some(cfg.scenario.step / 2.0),
        ..Overrides::default()
    };
    let (out_half, _, _) = run_and_verify("benchmark", &halved);
    let e1 = out.metrics.final_sync_error;
    let e2 = out_half.metrics.final_sync_error;
    let rel = (e1 - e2).abs() / e1.abs().max(e2.abs());
    Outcome {
        name: "End-to-end synchronization",
        ok: passes(&rep, "sync_error_terminal") && rel < 0.05,
        detail: format!(
            "{}; final sync_error {e1:.6e} (h) vs {e2:.6e} (h/2), relative change {rel:.2e}",
            rep.get("sync_error_terminal").unwrap().detail
        ),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = bundled("benchmark").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    etsync::cli::cmd_run(text, &Overrides::default(), &a).unwrap();
    etsync::cli::cmd_run(text, &Overrides::default(), &b).unwrap();
    let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    let ok = same("trajectory.csv") && same("events.csv");
    Outcome {
        name: "Determinism",
        ok,
        detail: format!(
            "trajectory.csv identical: {}, events.csv identical: {}",
            same("trajectory.csv"),
            same("events.csv")
        ),
    }
}

/// Characteristic-polynomial coefficients by Faddeev–LeVerrier:
/// `det(sI − M) = s^n + c[1] s^{n−1} + … + c[n]`.
fn char_poly(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut c = vec![1.0];
    let mut mk = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        mk = m * &mk + DMatrix::<f64>::identity(n, n) * c[k - 1];
        let ck = -(m * &mk).trace() / k as f64;
        c.push(ck);
    }
    c
}

/// Real roots by sign-change scanning and bisection.
fn poly_roots(c: &[f64], bound: f64) -> Vec<f64> {
    let eval = |x: f64| c.iter().fold(0.0, |acc, &ck| acc * x + ck);
    let steps = 200_000;
    let mut roots = Vec::new();
    let mut prev_x = -bound;
    let mut prev = eval(prev_x);
    for k in 1..=steps {
        let x = -bound + 2.0 * bound * k as f64 / steps as f64;
        let fx = eval(x);
        if prev == 0.0 {
            roots.push(prev_x);
        } else if prev * fx < 0.0 {
            let (mut lo, mut hi) = (prev_x, x);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if eval(lo) * eval(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_x = x;
        prev = fx;
    }
    roots
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20240917);
    let graph = loop {
        let mut w = vec![vec![0.0; 3]; 3];
        for (i, row) in w.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                if i != j && rng.gen_bool(0.6) {
                    *x = rng.gen_range(0.1..2.0);
                }
            }
        }
        let g = DirectedGraph::from_rows(&w).unwrap();
        if is_strongly_connected(&g) {
            break g;
        }
    };
    let spectra = GraphSpectra::compute(&graph).unwrap();
    let l_hat = DMatrix::from_fn(3, 3, |i, j| spectra.l_hat[(i, j)]);
    let bound = l_hat.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max) + 1.0;
    let mut roots = poly_roots(&char_poly(&l_hat), bound);
    roots.sort_by(f64::total_cmp);
    let lambda2_err = if roots.len() == 3 {
        (roots[1] - spectra.lambda2_hat).abs()
    } else {
        f64::INFINITY
    };

    let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(3, 3) * 4.0;
    let b = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(2, 2) * 4.0;
    let c = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
    let x = solve_sylvester(&a, &b, &c).unwrap();
    // (I ⊗ A + Bᵀ ⊗ I) vec(X) = vec(C), column-major vec
    let mut k = DMatrix::<f64>::zeros(6, 6);
    for col in 0..2 {
        for i in 0..3 {
            for j in 0..3 {
                k[(col * 3 + i, col * 3 + j)] += a[(i, j)];
            }
            for other in 0..2 {
                k[(col * 3 + i, other * 3 + i)] += b[(other, col)];
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(6, c.iter().copied());
    let oracle = k.lu().solve(&rhs).unwrap();
    let sylvester_err = x.iter().zip(oracle.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    Outcome {
        name: "Oracle equivalence",
        ok: lambda2_err <= 1e-7 && sylvester_err <= 1e-9,
        detail: format!("lambda2 Jacobi vs char-poly roots {lambda2_err:.1e}; Sylvester vs Kronecker LU {sylvester_err:.1e}"),
    }
}

fn main() {
    let criteria: [fn() -> Outcome; 7] = [
        are_reproduction,
        constant_reproduction,
        consensus_suite,
        regulation_suite,
        end_to_end,
        determinism,
        oracle_equivalence,
    ];
    let mut failed = 0;
    for criterion in criteria {
        let o = criterion();
        println!("[{}] {}: {}", if o.ok { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.ok);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
