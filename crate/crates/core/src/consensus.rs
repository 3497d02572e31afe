//! Reference-model consensus layer.
//!
//! Each agent runs a linear reference model `v̇_i = A v_i + B μ_i` driven by the
//! piecewise-constant broadcast controller `μ_i = g_i Bᵀ P p_i^c`. Agent `i`
//! samples its relative measurement `p_i` at its own trigger instants, holds it,
//! and broadcasts it to its out-neighbors. The next trigger is the first time
//! the integral of `‖A‖ s_ik + w_ik + w_i(τ)` reaches `s_ik`, floored by the
//! dwell-time timer `b`.

use std::collections::BTreeMap;

use crate::graph::{DirectedGraph, GraphSpectra};
use crate::numerics::{self, Matrix, NumericsError, Vector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("reference model: {0}")]
    InvalidModel(String),
    #[error(
        "lambda out of range: require 0 < lambda < lambda2(L_hat)/N, got lambda = {lambda} with lambda2(L_hat)/N = {bound}"
    )]
    LambdaOutOfRange { lambda: f64, bound: f64 },
    #[error("varphi = rho^2 eta^2 + N rho^2 phi^2 = {varphi} is not < 1")]
    VarphiNotLessThanOne { varphi: f64 },
    #[error("gain g[{agent}] = {g} must satisfy g_i >= r_i = {r}")]
    GainBelowLeftEigenvector { agent: usize, g: f64, r: f64 },
    #[error("eta_i[{agent}] = {eta_i} must satisfy 0 < eta_i <= eta = {eta}")]
    BadEta { agent: usize, eta_i: f64, eta: f64 },
    #[error("phi = {0} must be positive")]
    BadPhi(f64),
    #[error(
        "beta = {given} differs from 1/lambda_min(GR) = {required}; an explicit beta needs unchecked mode"
    )]
    BetaOverride { given: f64, required: f64 },
    #[error("expected {expected} per-agent values for {what}, got {got}")]
    WrongLength { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Linear reference model `v̇ = A v + B μ` with scalar input.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModelSpec {
    a: Matrix,
    b: Matrix,
}

impl ReferenceModelSpec {
    /// Validates that `B ≠ 0` and that `A` has simple eigenvalues on the
    /// imaginary axis.
    pub fn new(a: Matrix, b: Matrix) -> Result<Self, DesignError> {
        let q = a.nrows();
        if a.ncols() != q || q == 0 {
            return Err(DesignError::InvalidModel(format!("A must be square, got {:?}", a.shape())));
        }
        if b.shape() != (q, 1) {
            return Err(DesignError::InvalidModel(format!(
                "B must be {q}x1, got {:?}",
                b.shape()
            )));
        }
        if !numerics::is_finite(&a) || !numerics::is_finite(&b) {
            return Err(DesignError::InvalidModel("non-finite entries".into()));
        }
        if b.iter().all(|&x| x == 0.0) {
            return Err(DesignError::InvalidModel("B must be nonzero".into()));
        }
        let eig = a.complex_eigenvalues();
        let scale = numerics::norm_inf(&a).max(1.0);
        for (k, e) in eig.iter().enumerate() {
            if e.re.abs() > 1e-6 {
                return Err(DesignError::InvalidModel(format!(
                    "eigenvalue {e} of A has nonzero real part"
                )));
            }
            if eig.iter().skip(k + 1).any(|f| (e - f).norm() <= 1e-8 * scale) {
                return Err(DesignError::InvalidModel(format!("eigenvalue {e} of A is repeated")));
            }
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `A v + B μ`.
    pub fn derivative(&self, v: &Vector, mu: f64) -> Vector {
        &self.a * v + self.b.column(0) * mu
    }
}

/// Inputs to [`design_consensus`].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignInputs {
    pub lambda: f64,
    /// Explicit Riccati weight; only honored in unchecked mode.
    pub beta: Option<f64>,
    pub g: Vec<f64>,
    pub eta_i: Vec<f64>,
    pub eta: f64,
    pub phi: f64,
    pub unchecked: bool,
}

/// Pass/fail state of each design hypothesis, reported even in unchecked mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignChecks {
    pub lambda_in_range: bool,
    pub beta_matches: bool,
    pub varphi_below_one: Option<bool>,
    pub gains_dominate_r: bool,
}

impl DesignChecks {
    pub fn all_pass(&self) -> bool {
        self.lambda_in_range
            && self.beta_matches
            && self.varphi_below_one == Some(true)
            && self.gains_dominate_r
    }
}

/// All gains and triggering constants of the consensus layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusDesign {
    pub p: Matrix,
    /// `K = Bᵀ P`.
    pub k: Matrix,
    pub g: Vec<f64>,
    pub lambda: f64,
    pub beta: f64,
    /// `1/λ_min(GR)`, the value the stability argument requires for β.
    pub beta_required: f64,
    pub eta_i: Vec<f64>,
    pub eta: f64,
    pub phi: f64,
    /// `ρ`; undefined when `λ ≥ λ₂(L̂)/N`.
    pub rho: Option<f64>,
    /// `ϕ̄ = ρ²η² + Nρ²φ²`.
    pub varphi: Option<f64>,
    pub b1: f64,
    pub b2: f64,
    /// Dwell-time floor of the consensus trigger.
    pub b: f64,
    /// `‖LG‖`, standing in for the largest eigenvalue of `LG`.
    pub lambda_lg_norm: f64,
    pub norm_a: f64,
    /// `‖B Bᵀ P‖`.
    pub norm_bbtp: f64,
    /// `B Bᵀ P`, cached for the trigger bookkeeping.
    pub bbtp: Matrix,
    pub lambda2_hat: f64,
    pub lambda_bound: f64,
    pub unchecked: bool,
    pub checks: DesignChecks,
}

impl ConsensusDesign {
    pub fn agent_count(&self) -> usize {
        self.g.len()
    }
}

/// Timer floor `b = ln(φ+1) / (b₁ + b₂ max{η, φ} √N)`.
pub fn dwell_time_floor(b1: f64, b2: f64, eta: f64, phi: f64, n: usize) -> f64 {
    (phi + 1.0).ln() / (b1 + b2 * eta.max(phi) * (n as f64).sqrt())
}

/// Compute the consensus gains and triggering constants.
pub fn design_consensus(
    model: &ReferenceModelSpec,
    spectra: &GraphSpectra,
    inputs: &DesignInputs,
) -> Result<ConsensusDesign, DesignError> {
    let n = spectra.agent_count();
    for (what, len) in [("g", inputs.g.len()), ("eta_i", inputs.eta_i.len())] {
        if len != n {
            return Err(DesignError::WrongLength { what, expected: n, got: len });
        }
    }
    for (agent, (&g, &r)) in inputs.g.iter().zip(spectra.r.iter()).enumerate() {
        if !(g >= r) {
            return Err(DesignError::GainBelowLeftEigenvector { agent, g, r });
        }
    }
    for (agent, &eta_i) in inputs.eta_i.iter().enumerate() {
        if !(eta_i > 0.0 && eta_i <= inputs.eta) {
            return Err(DesignError::BadEta { agent, eta_i, eta: inputs.eta });
        }
    }
    if !(inputs.phi > 0.0 && inputs.phi.is_finite()) {
        return Err(DesignError::BadPhi(inputs.phi));
    }

    let lambda_bound = spectra.lambda_bound();
    let lambda = inputs.lambda;
    let lambda_in_range = lambda > 0.0 && lambda < lambda_bound;
    if !lambda_in_range && (!inputs.unchecked || !(lambda > 0.0)) {
        return Err(DesignError::LambdaOutOfRange { lambda, bound: lambda_bound });
    }

    let g_mat = Matrix::from_diagonal(&Vector::from_vec(inputs.g.clone()));
    let gr = &g_mat * &spectra.r_diag;
    let beta_required = 1.0 / numerics::symmetric_eigenvalues(&gr)?[0];
    let beta = match inputs.beta {
        Some(given) if (given - beta_required).abs() > 1e-9 * beta_required => {
            if !inputs.unchecked {
                return Err(DesignError::BetaOverride { given, required: beta_required });
            }
            given
        }
        Some(given) => given,
        None => beta_required,
    };
    let beta_matches = (beta - beta_required).abs() <= 1e-9 * beta_required;

    let p = numerics::solve_are(model.a(), model.b(), lambda, beta)?;
    let k = model.b().transpose() * &p;
    let bbtp = model.b() * &k;

    let lg = &spectra.laplacian * &g_mat;
    let lambda_lg_norm = numerics::spectral_norm(&lg)?;
    let norm_a = numerics::spectral_norm(model.a())?;
    let norm_bbtp = numerics::spectral_norm(&bbtp)?;
    let b1 = norm_a + lambda_lg_norm * norm_bbtp;
    let b2 = lambda_lg_norm * norm_bbtp;

    let rho = if lambda_in_range {
        let coupling = numerics::kron(&(&spectra.r_diag * &lg), &k);
        Some(numerics::spectral_norm(&coupling)? / (lambda_bound - lambda).sqrt())
    } else {
        None
    };
    let varphi = rho.map(|rho| rho * rho * (inputs.eta * inputs.eta + n as f64 * inputs.phi * inputs.phi));
    let varphi_below_one = varphi.map(|v| v < 1.0);
    if !inputs.unchecked {
        if let Some(v) = varphi.filter(|v| !(*v < 1.0)) {
            return Err(DesignError::VarphiNotLessThanOne { varphi: v });
        }
    }

    let b = dwell_time_floor(b1, b2, inputs.eta, inputs.phi, n);

    Ok(ConsensusDesign {
        p,
        k,
        g: inputs.g.clone(),
        lambda,
        beta,
        beta_required,
        eta_i: inputs.eta_i.clone(),
        eta: inputs.eta,
        phi: inputs.phi,
        rho,
        varphi,
        b1,
        b2,
        b,
        lambda_lg_norm,
        norm_a,
        norm_bbtp,
        bbtp,
        lambda2_hat: spectra.lambda2_hat,
        lambda_bound,
        unchecked: inputs.unchecked,
        checks: DesignChecks {
            lambda_in_range,
            beta_matches,
            varphi_below_one,
            gains_dominate_r: true,
        },
    })
}

/// `μ_i = g_i K p_i^c`.
pub fn consensus_control(design: &ConsensusDesign, agent: usize, p_held: &Vector) -> f64 {
    design.g[agent] * (&design.k * p_held)[(0, 0)]
}

/// `p_i = Σ_j a_ij (v_j − v_i)`.
pub fn relative_measurement(v_all: &[Vector], g: &DirectedGraph, agent: usize) -> Vector {
    let mut p = Vector::zeros(v_all[agent].len());
    for j in g.in_neighbors(agent) {
        p += (&v_all[j] - &v_all[agent]) * g.weight(agent, j);
    }
    p
}

/// Stacked relative measurements `p = −(L ⊗ I) v`.
pub fn stacked_measurements(v_all: &[Vector], g: &DirectedGraph) -> Vec<Vector> {
    (0..v_all.len()).map(|i| relative_measurement(v_all, g, i)).collect()
}

/// `V(p) = ½ pᵀ (GR ⊗ P) p`.
pub fn lyapunov_v(p: &[Vector], design: &ConsensusDesign, spectra: &GraphSpectra) -> f64 {
    p.iter()
        .enumerate()
        .map(|(i, pi)| 0.5 * design.g[i] * spectra.r[i] * (pi.transpose() * &design.p * pi)[(0, 0)])
        .sum()
}

/// Broadcast emitted at an agent's own consensus event.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub from: usize,
    pub time: f64,
    pub p_held: Vector,
}

/// Which rule produced the spacing of a consensus window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerBranch {
    /// The integral threshold was reached at or after the timer floor.
    Threshold,
    /// The timer floor `b` dominated.
    Timer,
}

/// Per-agent consensus trigger bookkeeping between own events.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTriggerState {
    pub agent: usize,
    /// Time of the last own event `t^c_ik`.
    pub t_last: f64,
    pub p_held_self: Vector,
    pub s_ik: f64,
    pub w_ik: f64,
    /// Current neighbor term `w_i(t)`.
    pub w_i: f64,
    /// `∫ (‖A‖ s_ik + w_ik + w_i) dτ` from `t_last` up to `accrued_to`.
    pub integral_acc: f64,
    pub accrued_to: f64,
    /// Crossing offset `τ_ik`, once the integral is known to have reached `s_ik`.
    pub crossing: Option<f64>,
    pub neighbor_holds: BTreeMap<usize, Vector>,
    /// Number of own events so far.
    pub k: u64,
}

impl AgentTriggerState {
    /// Fresh state before the agent's first event; neighbors' holds start at zero.
    pub fn new(agent: usize, graph: &DirectedGraph, q: usize) -> Self {
        Self {
            agent,
            t_last: 0.0,
            p_held_self: Vector::zeros(q),
            s_ik: 0.0,
            w_ik: 0.0,
            w_i: 0.0,
            integral_acc: 0.0,
            accrued_to: 0.0,
            crossing: None,
            neighbor_holds: graph.in_neighbors(agent).map(|j| (j, Vector::zeros(q))).collect(),
            k: 0,
        }
    }

    /// Integrand rate on the current segment.
    pub fn rate(&self, norm_a: f64) -> f64 {
        norm_a * self.s_ik + self.w_ik + self.w_i
    }

    /// Advance the running integral to `t`, recording the crossing if it
    /// happened on the way.
    fn accrue(&mut self, t: f64, norm_a: f64) {
        if self.crossing.is_none() && t > self.accrued_to {
            let rate = self.rate(norm_a);
            let remaining = self.s_ik - self.integral_acc;
            if remaining <= 0.0 {
                self.crossing = Some(self.accrued_to - self.t_last);
            } else if rate > 0.0 && self.accrued_to + remaining / rate <= t {
                self.crossing = Some(self.accrued_to + remaining / rate - self.t_last);
                self.integral_acc = self.s_ik;
            } else {
                self.integral_acc += rate * (t - self.accrued_to);
            }
        }
        if t > self.accrued_to {
            self.accrued_to = t;
        }
    }

    fn recompute_neighbor_term(&mut self, design: &ConsensusDesign, graph: &DirectedGraph) {
        let q = self.p_held_self.len();
        let mut sum = Vector::zeros(q);
        for (&j, pj) in &self.neighbor_holds {
            sum += pj * (graph.weight(self.agent, j) * design.g[j]);
        }
        self.w_i = (&design.bbtp * sum).norm();
    }
}

/// Own consensus event: hold `p_now`, reset the integral, emit the broadcast.
pub fn on_own_event(
    state: &mut AgentTriggerState,
    t: f64,
    p_now: &Vector,
    design: &ConsensusDesign,
    model: &ReferenceModelSpec,
    graph: &DirectedGraph,
) -> Broadcast {
    let i = state.agent;
    let eta_i = design.eta_i[i];
    state.t_last = t;
    state.p_held_self = p_now.clone();
    state.k += 1;
    state.integral_acc = 0.0;
    state.accrued_to = t;
    state.crossing = None;
    state.s_ik = eta_i / (1.0 + eta_i) * p_now.norm();
    let closed = model.a() - &design.bbtp * (design.g[i] * graph.in_degree(i));
    state.w_ik = (closed * p_now).norm();
    if state.s_ik <= 0.0 {
        state.crossing = Some(0.0);
    }
    Broadcast {
        from: i,
        time: t,
        p_held: p_now.clone(),
    }
}

/// A neighbor's broadcast arrives: accrue the integral with the old rate, then
/// replace the held value and refresh `w_i`.
pub fn on_neighbor_broadcast(
    state: &mut AgentTriggerState,
    t: f64,
    from: usize,
    p_j_c: &Vector,
    design: &ConsensusDesign,
    graph: &DirectedGraph,
) {
    if !state.neighbor_holds.contains_key(&from) {
        return;
    }
    state.accrue(t, design.norm_a);
    state.neighbor_holds.insert(from, p_j_c.clone());
    state.recompute_neighbor_term(design, graph);
}

/// Offset `τ_ik` of the threshold crossing under the current segment rate,
/// `None` if the integral never reaches `s_ik`.
pub fn provisional_crossing(state: &AgentTriggerState, norm_a: f64) -> Option<f64> {
    if let Some(tau) = state.crossing {
        return Some(tau);
    }
    let remaining = state.s_ik - state.integral_acc;
    if remaining <= 0.0 {
        return Some(state.accrued_to - state.t_last);
    }
    let rate = state.rate(norm_a);
    (rate > 0.0).then(|| state.accrued_to + remaining / rate - state.t_last)
}

/// Next own event time `t_last + max{τ_ik, b}` and the branch that set it.
/// Infinite if the threshold is never reached.
pub fn next_consensus_trigger(
    state: &AgentTriggerState,
    design: &ConsensusDesign,
    norm_a: f64,
) -> (f64, TriggerBranch) {
    match provisional_crossing(state, norm_a) {
        Some(tau) if tau > design.b => (state.t_last + tau, TriggerBranch::Threshold),
        Some(_) => (state.t_last + design.b, TriggerBranch::Timer),
        None => (f64::INFINITY, TriggerBranch::Threshold),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graph::DirectedGraph;
    use approx::assert_abs_diff_eq;

    pub(crate) fn harmonic() -> ReferenceModelSpec {
        ReferenceModelSpec::new(
            Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    pub(crate) fn cycle4() -> DirectedGraph {
        DirectedGraph::from_rows(&[
            vec![0.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ])
        .unwrap()
    }

    pub(crate) fn benchmark_inputs() -> DesignInputs {
        DesignInputs {
            lambda: 0.19,
            beta: Some(2.5),
            g: vec![1.0; 4],
            eta_i: vec![0.0425; 4],
            eta: 0.045,
            phi: 0.03,
            unchecked: true,
        }
    }

    fn benchmark_design() -> ConsensusDesign {
        let spectra = GraphSpectra::compute(&cycle4()).unwrap();
        design_consensus(&harmonic(), &spectra, &benchmark_inputs()).unwrap()
    }

    #[test]
    fn model_validation() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(ReferenceModelSpec::new(a.clone(), Matrix::zeros(2, 1)).is_err());
        // double integrator: repeated zero eigenvalue
        let di = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(ReferenceModelSpec::new(di, Matrix::from_row_slice(2, 1, &[0.0, 1.0])).is_err());
        let unstable = Matrix::from_row_slice(1, 1, &[1.0]);
        assert!(ReferenceModelSpec::new(unstable, Matrix::from_row_slice(1, 1, &[1.0])).is_err());
    }

    #[test]
    fn benchmark_constants() {
        let d = benchmark_design();
        assert_abs_diff_eq!(d.p, Matrix::from_row_slice(2, 2, &[6.07, -1.12, -1.12, 5.00]), epsilon = 0.01);
        assert_abs_diff_eq!(d.k, Matrix::from_row_slice(1, 2, &[-1.12, 5.00]), epsilon = 0.01);
        assert_abs_diff_eq!(d.b1, 11.25, epsilon = 0.01);
        assert_abs_diff_eq!(d.b2, 10.25, epsilon = 0.01);
        assert_abs_diff_eq!(d.beta_required, 4.0, epsilon = 1e-12);
        assert!(d.rho.is_none());
        assert!(!d.checks.lambda_in_range);
        assert!(!d.checks.beta_matches);
        assert!(d.b > 0.0);
    }

    #[test]
    fn dwell_time_formula() {
        let b = dwell_time_floor(11.25, 10.25, 0.045, 0.03, 4);
        assert_abs_diff_eq!(b, 0.002428, epsilon = 1e-6);
    }

    #[test]
    fn checked_mode_rejects_lambda() {
        let spectra = GraphSpectra::compute(&cycle4()).unwrap();
        let mut inputs = benchmark_inputs();
        inputs.unchecked = false;
        inputs.beta = None;
        inputs.lambda = 0.0;
        assert!(matches!(
            design_consensus(&harmonic(), &spectra, &inputs),
            Err(DesignError::LambdaOutOfRange { .. })
        ));
        inputs.lambda = 0.19;
        match design_consensus(&harmonic(), &spectra, &inputs) {
            Err(DesignError::LambdaOutOfRange { bound, .. }) => assert_abs_diff_eq!(bound, 0.125, epsilon = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checked_mode_rejects_beta_override_and_large_varphi() {
        let spectra = GraphSpectra::compute(&cycle4()).unwrap();
        let mut inputs = benchmark_inputs();
        inputs.unchecked = false;
        inputs.lambda = 0.1;
        assert!(matches!(
            design_consensus(&harmonic(), &spectra, &inputs),
            Err(DesignError::BetaOverride { .. })
        ));
        inputs.beta = None;
        assert!(matches!(
            design_consensus(&harmonic(), &spectra, &inputs),
            Err(DesignError::VarphiNotLessThanOne { .. })
        ));
        inputs.eta_i = vec![0.02; 4];
        inputs.eta = 0.02;
        inputs.phi = 0.01;
        let d = design_consensus(&harmonic(), &spectra, &inputs).unwrap();
        assert!(d.checks.all_pass());
        assert!(d.varphi.unwrap() < 1.0);
    }

    #[test]
    fn gains_below_r_rejected() {
        let spectra = GraphSpectra::compute(&cycle4()).unwrap();
        let mut inputs = benchmark_inputs();
        inputs.g = vec![0.1; 4];
        assert!(matches!(
            design_consensus(&harmonic(), &spectra, &inputs),
            Err(DesignError::GainBelowLeftEigenvector { .. })
        ));
    }

    #[test]
    fn control_examples() {
        let mut d = benchmark_design();
        assert_eq!(consensus_control(&d, 0, &Vector::zeros(2)), 0.0);
        d.k = Matrix::from_row_slice(1, 2, &[-1.12, 5.00]);
        let p = Vector::from_vec(vec![1.0, 0.0]);
        assert_abs_diff_eq!(consensus_control(&d, 0, &p), -1.12, epsilon = 1e-15);
        d.g[0] = 2.0;
        assert_abs_diff_eq!(consensus_control(&d, 0, &p), -2.24, epsilon = 1e-15);
    }

    #[test]
    fn relative_measurement_examples() {
        let g = cycle4();
        let same = vec![Vector::from_vec(vec![0.3, -0.2]); 4];
        assert_eq!(relative_measurement(&same, &g, 2), Vector::zeros(2));

        let pair = DirectedGraph::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let v = vec![Vector::zeros(2), Vector::from_vec(vec![1.0, 0.0])];
        assert_eq!(relative_measurement(&v, &pair, 0), Vector::from_vec(vec![1.0, 0.0]));

        let mut v = vec![Vector::zeros(2); 4];
        v[0] = Vector::from_vec(vec![1.0, 0.0]);
        assert_eq!(relative_measurement(&v, &g, 1), Vector::from_vec(vec![1.0, 0.0]));
        assert_eq!(relative_measurement(&v, &g, 0), Vector::from_vec(vec![-1.0, 0.0]));
    }

    #[test]
    fn own_event_quantities() {
        let g = cycle4();
        let d = benchmark_design();
        let model = harmonic();
        let mut st = AgentTriggerState::new(0, &g, 2);
        on_own_event(&mut st, 0.0, &Vector::zeros(2), &d, &model, &g);
        assert_eq!((st.s_ik, st.w_ik), (0.0, 0.0));

        let p = Vector::from_vec(vec![1.0, 0.0]);
        let bc = on_own_event(&mut st, 1.0, &p, &d, &model, &g);
        assert_eq!(bc.from, 0);
        assert_abs_diff_eq!(st.s_ik, 0.0425 / 1.0425, epsilon = 1e-15);
        assert_abs_diff_eq!(st.s_ik, 0.040767, epsilon = 1e-6);
        let want = ((model.a() - &d.bbtp) * &p).norm();
        assert_abs_diff_eq!(st.w_ik, want, epsilon = 1e-14);
        assert_eq!(st.integral_acc, 0.0);
        assert_eq!(st.k, 2);
    }

    #[test]
    fn neighbor_broadcast_updates() {
        let g = cycle4();
        let d = benchmark_design();
        // agent 1 listens to agent 0 only
        let mut st = AgentTriggerState::new(1, &g, 2);
        let pj = Vector::from_vec(vec![0.5, -0.25]);
        on_neighbor_broadcast(&mut st, 0.0, 0, &pj, &d, &g);
        let want = (&d.bbtp * &pj * (g.weight(1, 0) * d.g[0])).norm();
        assert_abs_diff_eq!(st.w_i, want, epsilon = 1e-14);
        // not an in-neighbor: ignored
        let before = st.clone();
        on_neighbor_broadcast(&mut st, 0.0, 2, &pj, &d, &g);
        assert_eq!(st, before);
    }

    #[test]
    fn simultaneous_broadcasts_last_writer_wins() {
        let g = DirectedGraph::from_rows(&[
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let spectra = GraphSpectra::compute(&g).unwrap();
        let d = design_consensus(
            &harmonic(),
            &spectra,
            &DesignInputs {
                lambda: 0.5 * spectra.lambda_bound(),
                beta: None,
                g: vec![1.0; 3],
                eta_i: vec![0.01; 3],
                eta: 0.01,
                phi: 0.001,
                unchecked: true,
            },
        )
        .unwrap();
        let model = harmonic();
        let mut st = AgentTriggerState::new(0, &g, 2);
        on_own_event(&mut st, 0.0, &Vector::from_vec(vec![1.0, 1.0]), &d, &model, &g);
        on_neighbor_broadcast(&mut st, 0.01, 1, &Vector::from_vec(vec![1.0, 0.0]), &d, &g);
        let acc = st.integral_acc;
        on_neighbor_broadcast(&mut st, 0.01, 1, &Vector::from_vec(vec![0.0, 2.0]), &d, &g);
        assert_eq!(st.integral_acc, acc);
        assert_eq!(st.neighbor_holds[&1], Vector::from_vec(vec![0.0, 2.0]));
    }

    fn bare_state(s: f64, w_ik: f64, w_i: f64) -> AgentTriggerState {
        AgentTriggerState {
            agent: 0,
            t_last: 2.0,
            p_held_self: Vector::zeros(2),
            s_ik: s,
            w_ik,
            w_i,
            integral_acc: 0.0,
            accrued_to: 2.0,
            crossing: if s == 0.0 { Some(0.0) } else { None },
            neighbor_holds: BTreeMap::new(),
            k: 1,
        }
    }

    #[test]
    fn next_trigger_examples() {
        let mut d = benchmark_design();
        d.b = 0.01;
        assert_eq!(next_consensus_trigger(&bare_state(0.0, 0.0, 0.0), &d, 1.0), (2.01, TriggerBranch::Timer));
        assert_eq!(next_consensus_trigger(&bare_state(1.0, 0.0, 0.0), &d, 1.0), (3.0, TriggerBranch::Threshold));
        assert_eq!(next_consensus_trigger(&bare_state(1.0, 1e4, 0.0), &d, 1.0), (2.01, TriggerBranch::Timer));
        assert_eq!(next_consensus_trigger(&bare_state(1.0, 0.0, 0.0), &d, 0.0).0, f64::INFINITY);
    }

    #[test]
    fn crossing_survives_rate_change() {
        let mut d = benchmark_design();
        d.b = 0.5;
        d.norm_a = 1.0;
        let g = cycle4();
        let mut st = bare_state(0.1, 0.0, 0.0);
        st.agent = 1;
        st.neighbor_holds.insert(0, Vector::zeros(2));
        // rate 0.1 ⇒ crossing at τ = 1
        assert_abs_diff_eq!(provisional_crossing(&st, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        on_neighbor_broadcast(&mut st, 2.5, 0, &Vector::from_vec(vec![0.0, 1.0]), &d, &g);
        assert_abs_diff_eq!(st.integral_acc, 0.05, epsilon = 1e-15);
        let tau = provisional_crossing(&st, 1.0).unwrap();
        let rate = st.rate(1.0);
        assert_abs_diff_eq!(tau, 0.5 + 0.05 / rate, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_quadratic() {
        let spectra = GraphSpectra::compute(&cycle4()).unwrap();
        let d = benchmark_design();
        let zero = vec![Vector::zeros(2); 4];
        assert_eq!(lyapunov_v(&zero, &d, &spectra), 0.0);
        let p: Vec<Vector> = (0..4).map(|i| Vector::from_vec(vec![i as f64 - 1.5, 0.3 * i as f64])).collect();
        let v1 = lyapunov_v(&p, &d, &spectra);
        assert!(v1 > 0.0);
        let p2: Vec<Vector> = p.iter().map(|x| x * 2.0).collect();
        assert_abs_diff_eq!(lyapunov_v(&p2, &d, &spectra), 4.0 * v1, epsilon = 1e-12);
    }
}
