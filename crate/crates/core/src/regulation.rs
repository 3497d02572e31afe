//! Per-agent event-triggered output regulation.
//!
//! An agent is a lower-triangular nonlinear plant
//!
//! ```text
//! ż   = f₀(z, x₁, w)
//! ẋ_j = f_j(z, x₁..x_j, w) + b_j(w) x_{j+1},   j = 1..r,  x_{r+1} = u
//! y   = x₁
//! ```
//!
//! wrapped by internal-model compensators: an actuator compensator
//! `u = ū + Ψ_r T_r⁻¹ η_r`, `η̇_r = M_r η_r + N_r u`, and sensor compensators
//! `η̇_j = M_j η_j + N_j x_{j+1}` producing `x̄_j = x_j − Ψ_{j−1} T_{j−1}⁻¹ η_{j−1}`
//! (`x̄₁ = e`). The held input `ū = κ(x̄(t_k))` is refreshed whenever
//! `|κ(x̄(t_k)) − κ(x̄(t))|` reaches `σ(|dκ(x̄(t))/dt|)`.
//!
//! # Plugin contract
//!
//! A plant is supplied through [`AgentModel`]. Stages are indexed from zero:
//! stage `k` is the equation of `x_{k+1}` and generator block `k` produces the
//! steady-state value of `x_{k+2}` (the input `u` for the last block).
//!
//! * `f(k, z, x, w)` receives `x = [x₁, …, x_{k+1}]` and must vanish when `z`
//!   and `x` are zero, for every admissible `w`.
//! * `b(k, w)` must be strictly positive.
//! * [`AgentModel::regulator_solution`] and [`AgentModel::generator_coordinates`]
//!   are optional and only feed the transformed-coordinate diagnostic.
//!
//! The feedback law `κ` ([`RegulationLaw`]) and its gradient, the trigger gain
//! `σ` ([`TriggerGain`]) and the tracked output map `c` ([`OutputMap`]) are
//! plugins as well. [`CubicFeedback`], [`LinearGain`] and [`LinearOutput`] are
//! the built-in instances.

use std::fmt::Debug;
use std::sync::Arc;

use crate::numerics::{self, Matrix, NumericsError, Vector};
use thiserror::Error;

/// Both `|ϖ|` and `|q|` at or below this value suppress triggering.
pub const EXEMPTION_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegulationError {
    #[error("generator block {block}: (Psi, Phi) is not observable")]
    NotObservable { block: usize },
    #[error("generator block {block}: (M, N) is not controllable")]
    NotControllable { block: usize },
    #[error("generator block {block}: M is not Hurwitz (eigenvalue real part {re})")]
    NotHurwitz { block: usize, re: f64 },
    #[error("generator block {block}: T is singular or the Sylvester equation has no unique solution ({reason})")]
    SingularT { block: usize, reason: String },
    #[error("generator block {block}: {reason}")]
    BadShape { block: usize, reason: String },
    #[error("agent model: {0}")]
    InvalidModel(String),
    #[error("trigger gain: {0}")]
    InvalidGain(String),
    #[error("non-finite derivative in component {component}")]
    NonFiniteState { component: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Steady-state manifold from the regulator equations.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorSolution {
    pub z: Vector,
    /// `x₁(v,w), …, x_{r+1}(v,w)`; the last entry is the steady-state input.
    pub x: Vec<f64>,
}

/// Lower-triangular nonlinear plant with uncertain parameters `w`.
pub trait AgentModel: Send + Sync + Debug {
    fn z_dim(&self) -> usize;
    fn relative_degree(&self) -> usize;
    /// Number of uncertain parameters.
    fn param_dim(&self) -> usize;
    fn f0(&self, z: &[f64], x1: f64, w: &[f64]) -> Vector;
    fn f(&self, stage: usize, z: &[f64], x: &[f64], w: &[f64]) -> f64;
    fn b(&self, stage: usize, w: &[f64]) -> f64;
    fn regulator_solution(&self, _v: &Vector, _w: &[f64]) -> Option<RegulatorSolution> {
        None
    }
    /// `ϑ_j(v, w)` of the observable steady-state generator for block `block`.
    fn generator_coordinates(&self, _block: usize, _v: &Vector, _w: &[f64]) -> Option<Vector> {
        None
    }
}

/// Tracked output map `c(v)`.
pub trait OutputMap: Send + Sync + Debug {
    fn value(&self, v: &Vector) -> f64;
    fn gradient(&self, v: &Vector) -> Vector;
}

/// Stabilizing feedback `κ(x̄)` and its gradient.
pub trait RegulationLaw: Send + Sync + Debug {
    fn value(&self, x_bar: &[f64]) -> f64;
    fn gradient(&self, x_bar: &[f64]) -> Vec<f64>;
}

/// Class-K trigger gain `σ`.
pub trait TriggerGain: Send + Sync + Debug {
    fn sigma(&self, s: f64) -> f64;
}

/// `c(v) = C v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOutput {
    pub row: Vector,
}

impl LinearOutput {
    pub fn new(row: Vec<f64>) -> Self {
        Self {
            row: Vector::from_vec(row),
        }
    }
}

impl OutputMap for LinearOutput {
    fn value(&self, v: &Vector) -> f64 {
        self.row.dot(v)
    }

    fn gradient(&self, _v: &Vector) -> Vector {
        self.row.clone()
    }
}

/// `κ(x̄) = −Σ_k (linear_k x̄_k + cubic_k x̄_k³)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicFeedback {
    pub linear: Vec<f64>,
    pub cubic: Vec<f64>,
}

impl RegulationLaw for CubicFeedback {
    fn value(&self, x_bar: &[f64]) -> f64 {
        -x_bar
            .iter()
            .zip(self.linear.iter().zip(&self.cubic))
            .map(|(x, (l, c))| l * x + c * x * x * x)
            .sum::<f64>()
    }

    fn gradient(&self, x_bar: &[f64]) -> Vec<f64> {
        x_bar
            .iter()
            .zip(self.linear.iter().zip(&self.cubic))
            .map(|(x, (l, c))| -(l + 3.0 * c * x * x))
            .collect()
    }
}

/// `σ(s) = (c/γ₀) s`, the inverse of a linear gain `γ(s) = γ₀ s` scaled by `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGain {
    pub c: f64,
    pub gamma0: f64,
}

impl LinearGain {
    pub fn new(c: f64, gamma0: f64) -> Result<Self, RegulationError> {
        if !(c > 0.0 && c < 1.0) {
            return Err(RegulationError::InvalidGain(format!("c = {c} must lie in (0, 1)")));
        }
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(RegulationError::InvalidGain(format!("gamma0 = {gamma0} must be positive")));
        }
        Ok(Self { c, gamma0 })
    }
}

impl TriggerGain for LinearGain {
    fn sigma(&self, s: f64) -> f64 {
        self.c / self.gamma0 * s
    }
}

/// Matrices describing one internal-model block.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub psi: Matrix,
    pub phi: Matrix,
    pub m: Matrix,
    pub n: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorBlock {
    pub psi: Matrix,
    pub phi: Matrix,
    pub m: Matrix,
    pub n: Matrix,
    /// Solution of `M T + N Ψ = T Φ`.
    pub t: Matrix,
    /// `Ψ T⁻¹`, a row vector.
    pub psi_t_inv: Vector,
    pub sylvester_residual: f64,
}

impl GeneratorBlock {
    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }
}

/// One block per relative-degree stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateGenerator {
    pub blocks: Vec<GeneratorBlock>,
}

impl SteadyStateGenerator {
    pub fn max_sylvester_residual(&self) -> f64 {
        self.blocks.iter().map(|b| b.sylvester_residual).fold(0.0, f64::max)
    }
}

fn full_rank(stack: &Matrix) -> Result<bool, NumericsError> {
    let gram = stack.transpose() * stack;
    let eig = numerics::symmetric_eigenvalues(&gram)?;
    let top = eig.last().copied().unwrap_or(0.0);
    Ok(top > 0.0 && eig[0] > 1e-12 * top)
}

/// Solve the Sylvester equation for each block and validate it.
pub fn build_generator(specs: &[GeneratorSpec]) -> Result<SteadyStateGenerator, RegulationError> {
    let mut blocks = Vec::with_capacity(specs.len());
    for (block, spec) in specs.iter().enumerate() {
        let l = spec.phi.nrows();
        let shape_err = |reason: String| RegulationError::BadShape { block, reason };
        if spec.phi.shape() != (l, l) || l == 0 {
            return Err(shape_err(format!("Phi must be square, got {:?}", spec.phi.shape())));
        }
        if spec.psi.shape() != (1, l) {
            return Err(shape_err(format!("Psi must be 1x{l}, got {:?}", spec.psi.shape())));
        }
        if spec.m.shape() != (l, l) {
            return Err(shape_err(format!("M must be {l}x{l}, got {:?}", spec.m.shape())));
        }
        if spec.n.shape() != (l, 1) {
            return Err(shape_err(format!("N must be {l}x1, got {:?}", spec.n.shape())));
        }
        for mat in [&spec.psi, &spec.phi, &spec.m, &spec.n] {
            if !numerics::is_finite(mat) {
                return Err(shape_err("non-finite entry".into()));
            }
        }

        let mut obs = Matrix::zeros(l, l);
        let mut ctrb = Matrix::zeros(l, l);
        let mut row = spec.psi.clone();
        let mut col = spec.n.clone();
        for k in 0..l {
            obs.row_mut(k).copy_from(&row);
            ctrb.column_mut(k).copy_from(&col);
            row = &row * &spec.phi;
            col = &spec.m * &col;
        }
        if !full_rank(&obs)? {
            return Err(RegulationError::NotObservable { block });
        }
        if !full_rank(&ctrb)? {
            return Err(RegulationError::NotControllable { block });
        }
        if let Some(e) = spec.m.complex_eigenvalues().iter().find(|e| e.re >= 0.0) {
            return Err(RegulationError::NotHurwitz { block, re: e.re });
        }

        // M T + T (−Φ) = −N Ψ
        let rhs = -(&spec.n * &spec.psi);
        let t = numerics::solve_sylvester(&spec.m, &(-&spec.phi), &rhs).map_err(|e| {
            RegulationError::SingularT {
                block,
                reason: e.to_string(),
            }
        })?;
        let residual = numerics::norm_inf(&(&spec.m * &t + &spec.n * &spec.psi - &t * &spec.phi));
        if residual > numerics::tol::SYLVESTER_RESIDUAL * (1.0 + numerics::norm_inf(&rhs)) {
            return Err(RegulationError::SingularT {
                block,
                reason: format!("Sylvester residual {residual:.3e}"),
            });
        }
        let col_norms: f64 = t.column_iter().map(|c| c.norm()).product();
        if !(col_norms > 0.0) || t.determinant().abs() <= 1e-10 * col_norms {
            return Err(RegulationError::SingularT {
                block,
                reason: format!("det(T) = {:.3e}", t.determinant()),
            });
        }
        let t_inv = numerics::inverse(&t).map_err(|e| RegulationError::SingularT {
            block,
            reason: e.to_string(),
        })?;
        let psi_t_inv: Vector = (&spec.psi * t_inv).transpose().column(0).into_owned();
        blocks.push(GeneratorBlock {
            psi: spec.psi.clone(),
            phi: spec.phi.clone(),
            m: spec.m.clone(),
            n: spec.n.clone(),
            t,
            psi_t_inv,
            sylvester_residual: residual,
        });
    }
    Ok(SteadyStateGenerator { blocks })
}

/// Sampled-data state of the regulation trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldInput {
    pub u_bar: f64,
    pub x_bar: Vec<f64>,
    pub t_last: f64,
    /// Number of regulation events so far.
    pub k: u64,
}

/// Signals derived from the plant state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulationSignals {
    pub e: f64,
    pub x_bar: Vec<f64>,
    pub x_bar_dot: Vec<f64>,
    pub varpi: f64,
    pub q: f64,
    /// `σ(|q|)`.
    pub sigma_q: f64,
    /// Trigger function `|ϖ| − σ(|q|)`.
    pub trigger: f64,
}

impl RegulationSignals {
    /// Both `ϖ` and `q` vanish, so no event is generated.
    pub fn exempt(&self) -> bool {
        is_exempt(self.varpi, self.q)
    }

    /// The trigger condition has been met.
    pub fn fires(&self) -> bool {
        self.trigger >= 0.0 && !self.exempt()
    }
}

pub fn is_exempt(varpi: f64, q: f64) -> bool {
    varpi.abs() <= EXEMPTION_THRESHOLD && q.abs() <= EXEMPTION_THRESHOLD
}

/// `e = x₁ − c(v)`.
pub fn tracking_error(x1: f64, v: &Vector, c: &dyn OutputMap) -> f64 {
    x1 - c.value(v)
}

/// Output of [`RegulationPlant::transformed_coordinates`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedCoordinates {
    pub z0: Vector,
    pub zj: Vec<Vector>,
    pub x_bar: Vec<f64>,
}

/// One agent's plant, compensators, feedback law and trigger.
///
/// The continuous state is kept outside the struct as a flat slice laid out as
/// `[z (m), x (r), η₁ (ℓ₁), …, η_r (ℓ_r)]`.
#[derive(Debug, Clone)]
pub struct RegulationPlant {
    pub model: Arc<dyn AgentModel>,
    pub w: Vec<f64>,
    pub generator: SteadyStateGenerator,
    pub kappa: Arc<dyn RegulationLaw>,
    pub sigma: Arc<dyn TriggerGain>,
    pub output: Arc<dyn OutputMap>,
    pub held: HeldInput,
    eta_offsets: Vec<usize>,
}

impl RegulationPlant {
    pub fn new(
        model: Arc<dyn AgentModel>,
        w: Vec<f64>,
        generator: SteadyStateGenerator,
        kappa: Arc<dyn RegulationLaw>,
        sigma: Arc<dyn TriggerGain>,
        output: Arc<dyn OutputMap>,
    ) -> Result<Self, RegulationError> {
        let r = model.relative_degree();
        let m = model.z_dim();
        if r == 0 {
            return Err(RegulationError::InvalidModel("relative degree must be >= 1".into()));
        }
        if generator.blocks.len() != r {
            return Err(RegulationError::InvalidModel(format!(
                "relative degree {r} needs {r} generator blocks, got {}",
                generator.blocks.len()
            )));
        }
        if w.len() != model.param_dim() {
            return Err(RegulationError::InvalidModel(format!(
                "expected {} uncertain parameters, got {}",
                model.param_dim(),
                w.len()
            )));
        }
        validate_model(model.as_ref(), &w)?;
        let mut eta_offsets = Vec::with_capacity(r);
        let mut off = m + r;
        for block in &generator.blocks {
            eta_offsets.push(off);
            off += block.dim();
        }
        Ok(Self {
            model,
            w,
            generator,
            kappa,
            sigma,
            output,
            held: HeldInput {
                u_bar: 0.0,
                x_bar: vec![0.0; r],
                t_last: 0.0,
                k: 0,
            },
            eta_offsets,
        })
    }

    pub fn relative_degree(&self) -> usize {
        self.model.relative_degree()
    }

    pub fn state_dim(&self) -> usize {
        self.model.z_dim()
            + self.relative_degree()
            + self.generator.blocks.iter().map(GeneratorBlock::dim).sum::<usize>()
    }

    pub fn z<'a>(&self, state: &'a [f64]) -> &'a [f64] {
        &state[..self.model.z_dim()]
    }

    pub fn x<'a>(&self, state: &'a [f64]) -> &'a [f64] {
        let m = self.model.z_dim();
        &state[m..m + self.relative_degree()]
    }

    pub fn eta<'a>(&self, state: &'a [f64], block: usize) -> &'a [f64] {
        let off = self.eta_offsets[block];
        &state[off..off + self.generator.blocks[block].dim()]
    }

    /// Measured output `y = x₁`.
    pub fn y(&self, state: &[f64]) -> f64 {
        self.x(state)[0]
    }

    fn compensator_output(&self, state: &[f64], block: usize) -> f64 {
        let eta = self.eta(state, block);
        self.generator.blocks[block]
            .psi_t_inv
            .iter()
            .zip(eta)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Plant input `u = ū + Ψ_r T_r⁻¹ η_r`.
    pub fn input(&self, state: &[f64]) -> f64 {
        self.held.u_bar + self.compensator_output(state, self.relative_degree() - 1)
    }

    /// Sensor compensator output `x̄`.
    pub fn sensor_bar_x(&self, state: &[f64], e: f64) -> Vec<f64> {
        let x = self.x(state);
        let mut out = Vec::with_capacity(x.len());
        out.push(e);
        for k in 1..x.len() {
            out.push(x[k] - self.compensator_output(state, k - 1));
        }
        out
    }

    /// Time derivative of the flat plant state under the held input.
    pub fn closed_loop_derivative(&self, state: &[f64]) -> Result<Vector, RegulationError> {
        let m = self.model.z_dim();
        let r = self.relative_degree();
        let z = self.z(state);
        let x = self.x(state);
        let u = self.input(state);
        let mut d = Vector::zeros(state.len());

        let dz = self.model.f0(z, x[0], &self.w);
        d.rows_mut(0, m).copy_from(&dz);
        for k in 0..r {
            let next = if k + 1 < r { x[k + 1] } else { u };
            d[m + k] = self.model.f(k, z, &x[..=k], &self.w) + self.model.b(k, &self.w) * next;
            let block = &self.generator.blocks[k];
            let eta = Vector::from_column_slice(self.eta(state, k));
            let deta = &block.m * eta + block.n.column(0) * next;
            d.rows_mut(self.eta_offsets[k], block.dim()).copy_from(&deta);
        }
        if let Some(component) = d.iter().position(|v| !v.is_finite()) {
            return Err(RegulationError::NonFiniteState { component });
        }
        Ok(d)
    }

    /// `d x̄/dt` by the chain rule, given the plant derivative and `v̇`.
    pub fn bar_x_dot(&self, state: &[f64], deriv: &Vector, v: &Vector, v_dot: &Vector) -> Vec<f64> {
        let m = self.model.z_dim();
        let r = self.relative_degree();
        let mut out = Vec::with_capacity(r);
        out.push(deriv[m] - self.output.gradient(v).dot(v_dot));
        for k in 1..r {
            let block = &self.generator.blocks[k - 1];
            let deta = deriv.rows(self.eta_offsets[k - 1], block.dim());
            out.push(deriv[m + k] - block.psi_t_inv.dot(&deta));
        }
        let _ = state;
        out
    }

    /// `ϖ = κ(x̄_held) − κ(x̄)` and `q = ∇κ(x̄)·x̄̇`.
    pub fn varpi_and_q(&self, x_bar: &[f64], x_bar_dot: &[f64]) -> (f64, f64) {
        let varpi = self.kappa.value(&self.held.x_bar) - self.kappa.value(x_bar);
        let q = self
            .kappa
            .gradient(x_bar)
            .iter()
            .zip(x_bar_dot)
            .map(|(g, d)| g * d)
            .sum();
        (varpi, q)
    }

    /// `|ϖ| − σ(|q|)`.
    pub fn regulation_trigger_value(&self, varpi: f64, q: f64) -> f64 {
        varpi.abs() - self.sigma.sigma(q.abs())
    }

    /// Evaluate all regulation signals at one instant.
    pub fn signals(
        &self,
        state: &[f64],
        v: &Vector,
        v_dot: &Vector,
    ) -> Result<RegulationSignals, RegulationError> {
        let e = tracking_error(self.y(state), v, self.output.as_ref());
        let x_bar = self.sensor_bar_x(state, e);
        let deriv = self.closed_loop_derivative(state)?;
        let x_bar_dot = self.bar_x_dot(state, &deriv, v, v_dot);
        let (varpi, q) = self.varpi_and_q(&x_bar, &x_bar_dot);
        let sigma_q = self.sigma.sigma(q.abs());
        Ok(RegulationSignals {
            e,
            trigger: varpi.abs() - sigma_q,
            x_bar,
            x_bar_dot,
            varpi,
            q,
            sigma_q,
        })
    }

    /// Sample `x̄` and refresh the held input `ū = κ(x̄)`.
    pub fn on_regulation_event(&mut self, state: &[f64], v: &Vector, t: f64) {
        let e = tracking_error(self.y(state), v, self.output.as_ref());
        let x_bar = self.sensor_bar_x(state, e);
        self.held.u_bar = self.kappa.value(&x_bar);
        self.held.x_bar = x_bar;
        self.held.t_last = t;
        self.held.k += 1;
    }

    /// `z₀ = z − z(v,w)`, `z_j = η_j − T_j ϑ_j(v,w) − b_j(w)⁻¹ N_j x̄_j`.
    ///
    /// Diagnostic only; `None` when the model does not expose its regulator
    /// solution or generator coordinates.
    pub fn transformed_coordinates(&self, state: &[f64], v: &Vector) -> Option<TransformedCoordinates> {
        let sol = self.model.regulator_solution(v, &self.w)?;
        let z0 = Vector::from_column_slice(self.z(state)) - sol.z;
        let e = tracking_error(self.y(state), v, self.output.as_ref());
        let x_bar = self.sensor_bar_x(state, e);
        let mut zj = Vec::with_capacity(self.relative_degree());
        for (k, block) in self.generator.blocks.iter().enumerate() {
            let vartheta = self.model.generator_coordinates(k, v, &self.w)?;
            let theta = &block.t * vartheta;
            let eta = Vector::from_column_slice(self.eta(state, k));
            zj.push(eta - theta - block.n.column(0) * (x_bar[k] / self.model.b(k, &self.w)));
        }
        Some(TransformedCoordinates { z0, zj, x_bar })
    }

    /// Plant state lying exactly on the steady-state manifold at `v`, if the
    /// model exposes it.
    pub fn steady_state(&self, v: &Vector) -> Option<Vec<f64>> {
        let sol = self.model.regulator_solution(v, &self.w)?;
        let r = self.relative_degree();
        let mut state = Vec::with_capacity(self.state_dim());
        state.extend(sol.z.iter());
        state.extend(&sol.x[..r]);
        for (k, block) in self.generator.blocks.iter().enumerate() {
            let theta = &block.t * self.model.generator_coordinates(k, v, &self.w)?;
            state.extend(theta.iter());
        }
        Some(state)
    }
}

/// Check `f_j(0, …, 0, w) = 0` and `b_j(w) > 0`.
pub fn validate_model(model: &dyn AgentModel, w: &[f64]) -> Result<(), RegulationError> {
    let m = model.z_dim();
    let r = model.relative_degree();
    let z = vec![0.0; m];
    let x = vec![0.0; r];
    let f0 = model.f0(&z, 0.0, w);
    if f0.len() != m {
        return Err(RegulationError::InvalidModel(format!(
            "f0 returned {} entries, z has dimension {m}",
            f0.len()
        )));
    }
    if f0.amax() > 1e-12 {
        return Err(RegulationError::InvalidModel("f0(0, 0, w) != 0".into()));
    }
    for k in 0..r {
        let fk = model.f(k, &z, &x[..=k], w);
        if fk.abs() > 1e-12 {
            return Err(RegulationError::InvalidModel(format!("f_{}(0, w) = {fk} != 0", k + 1)));
        }
        let bk = model.b(k, w);
        if !(bk > 0.0) {
            return Err(RegulationError::InvalidModel(format!("b_{}(w) = {bk} must be positive", k + 1)));
        }
    }
    Ok(())
}

/// Residual of the regulator equations at `v`, using central differences
/// for the directional derivatives along `A v`.
pub fn regulator_equation_residual(
    model: &dyn AgentModel,
    output: &dyn OutputMap,
    a: &Matrix,
    v: &Vector,
    w: &[f64],
) -> Option<f64> {
    let h = 1e-6;
    let av = a * v;
    let plus = model.regulator_solution(&(v + &av * h), w)?;
    let minus = model.regulator_solution(&(v - &av * h), w)?;
    let sol = model.regulator_solution(v, w)?;
    let r = model.relative_degree();
    let dz = (&plus.z - &minus.z) / (2.0 * h);
    let mut worst = (dz - model.f0(sol.z.as_slice(), sol.x[0], w)).amax();
    worst = worst.max((sol.x[0] - output.value(v)).abs());
    for k in 0..r {
        let dx = (plus.x[k] - minus.x[k]) / (2.0 * h);
        let rhs = model.f(k, sol.z.as_slice(), &sol.x[..=k], w) + model.b(k, w) * sol.x[k + 1];
        worst = worst.max((dx - rhs).abs());
    }
    Some(worst)
}

/// Built-in benchmark agent with `z ∈ ℝ²`, relative degree one and a scalar
/// uncertainty `w`:
///
/// ```text
/// ż = −z + [0, 2]ᵀ x
/// ẋ = −z₂ + z₁ x + w x + u
/// ```
///
/// Tracks `c(v) = v₁` for the harmonic exosystem `v̇ = [[0,−1],[1,0]] v`; the
/// steady state is `z = (0, v₁+v₂)`, `x = v₁`, `u = (1−w) v₁`, generated by
/// `ϑ = (1−w) v` with `Ψ = [1, 0]`, `Φ = [[0,−1],[1,0]]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BenchmarkAgent;

impl AgentModel for BenchmarkAgent {
    fn z_dim(&self) -> usize {
        2
    }

    fn relative_degree(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn f0(&self, z: &[f64], x1: f64, _w: &[f64]) -> Vector {
        Vector::from_vec(vec![-z[0], -z[1] + 2.0 * x1])
    }

    fn f(&self, _stage: usize, z: &[f64], x: &[f64], w: &[f64]) -> f64 {
        -z[1] + z[0] * x[0] + w[0] * x[0]
    }

    fn b(&self, _stage: usize, _w: &[f64]) -> f64 {
        1.0
    }

    fn regulator_solution(&self, v: &Vector, w: &[f64]) -> Option<RegulatorSolution> {
        Some(RegulatorSolution {
            z: Vector::from_vec(vec![0.0, v[0] + v[1]]),
            x: vec![v[0], (1.0 - w[0]) * v[0]],
        })
    }

    fn generator_coordinates(&self, _block: usize, v: &Vector, w: &[f64]) -> Option<Vector> {
        Some(v * (1.0 - w[0]))
    }
}

/// Generator matrices paired with [`BenchmarkAgent`].
pub fn benchmark_generator_spec() -> GeneratorSpec {
    GeneratorSpec {
        psi: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
        phi: Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        m: Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
        n: Matrix::from_row_slice(2, 1, &[1.0, 2.0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn benchmark_plant(w: f64) -> RegulationPlant {
        RegulationPlant::new(
            Arc::new(BenchmarkAgent),
            vec![w],
            build_generator(&[benchmark_generator_spec()]).unwrap(),
            Arc::new(CubicFeedback {
                linear: vec![30.0],
                cubic: vec![1.0],
            }),
            Arc::new(LinearGain::new(0.99, 40.0).unwrap()),
            Arc::new(LinearOutput::new(vec![1.0, 0.0])),
        )
        .unwrap()
    }

    /// Relative-degree-two test plant: `ż = −z`, `ẋ₁ = x₂`, `ẋ₂ = u`.
    #[derive(Debug)]
    struct DoubleIntegrator;

    impl AgentModel for DoubleIntegrator {
        fn z_dim(&self) -> usize {
            1
        }
        fn relative_degree(&self) -> usize {
            2
        }
        fn param_dim(&self) -> usize {
            0
        }
        fn f0(&self, z: &[f64], _x1: f64, _w: &[f64]) -> Vector {
            Vector::from_vec(vec![-z[0]])
        }
        fn f(&self, _stage: usize, _z: &[f64], _x: &[f64], _w: &[f64]) -> f64 {
            0.0
        }
        fn b(&self, _stage: usize, _w: &[f64]) -> f64 {
            1.0
        }
    }

    fn identity_block() -> GeneratorBlock {
        GeneratorBlock {
            psi: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            phi: Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            m: Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            n: Matrix::from_row_slice(2, 1, &[1.0, 2.0]),
            t: Matrix::identity(2, 2),
            psi_t_inv: Vector::from_vec(vec![1.0, 0.0]),
            sylvester_residual: 0.0,
        }
    }

    #[test]
    fn generator_examples() {
        let gen = build_generator(&[benchmark_generator_spec()]).unwrap();
        let t = &gen.blocks[0].t;
        assert_abs_diff_eq!(*t, Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.8, 0.4]), epsilon = 1e-12);
        assert!(gen.max_sylvester_residual() <= 1e-9);

        let scalar = GeneratorSpec {
            psi: Matrix::from_element(1, 1, 1.0),
            phi: Matrix::from_element(1, 1, 0.0),
            m: Matrix::from_element(1, 1, -1.0),
            n: Matrix::from_element(1, 1, 1.0),
        };
        let gen = build_generator(&[scalar.clone()]).unwrap();
        assert_abs_diff_eq!(gen.blocks[0].t[(0, 0)], 1.0, epsilon = 1e-15);

        let unstable = GeneratorSpec {
            m: Matrix::from_element(1, 1, 1.0),
            ..scalar
        };
        assert!(matches!(build_generator(&[unstable]), Err(RegulationError::NotHurwitz { .. })));
    }

    #[test]
    fn generator_rejects_unobservable_and_uncontrollable() {
        let mut spec = benchmark_generator_spec();
        spec.phi = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        spec.psi = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(matches!(build_generator(&[spec]), Err(RegulationError::NotObservable { .. })));
        let mut spec = benchmark_generator_spec();
        spec.n = Matrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(matches!(build_generator(&[spec]), Err(RegulationError::NotControllable { .. })));
    }

    #[test]
    fn sensor_examples() {
        let plant = benchmark_plant(0.0);
        let state = [0.0, 0.0, 3.0, 0.4, -0.1];
        assert_eq!(plant.sensor_bar_x(&state, 0.7), vec![0.7]);

        let di = RegulationPlant::new(
            Arc::new(DoubleIntegrator),
            vec![],
            SteadyStateGenerator {
                blocks: vec![identity_block(), identity_block()],
            },
            Arc::new(CubicFeedback {
                linear: vec![1.0, 1.0],
                cubic: vec![0.0, 0.0],
            }),
            Arc::new(LinearGain::new(0.5, 1.0).unwrap()),
            Arc::new(LinearOutput::new(vec![1.0, 0.0])),
        )
        .unwrap();
        // [z, x1, x2, η1 (2), η2 (2)]
        let state = [0.0, 0.0, 1.0, 0.3, 0.0, 0.0, 0.0];
        assert_abs_diff_eq!(di.sensor_bar_x(&state, 0.2)[1], 0.7, epsilon = 1e-15);
        let state = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(di.sensor_bar_x(&state, 0.2), vec![0.2, 1.0]);
    }

    #[test]
    fn derivative_examples() {
        let mut plant = benchmark_plant(0.0);
        let zero = [0.0; 5];
        assert_eq!(plant.closed_loop_derivative(&zero).unwrap(), Vector::zeros(5));

        // z = 0, x = 1, η = 0, ū = κ(e) with e = 1 ⇒ ẋ = u = ū
        plant.held.u_bar = plant.kappa.value(&[1.0]);
        let state = [0.0, 0.0, 1.0, 0.0, 0.0];
        let d = plant.closed_loop_derivative(&state).unwrap();
        assert_abs_diff_eq!(d[2], -31.0, epsilon = 1e-12);

        // constant input c₀: η* = −M⁻¹ N c₀ is an equilibrium of the filter
        let block = &plant.generator.blocks[0];
        let c0 = 0.37;
        let eta_star = -numerics::inverse(&block.m).unwrap() * block.n.column(0) * c0;
        let u_from_eta = block.psi_t_inv.dot(&eta_star);
        plant.held.u_bar = c0 - u_from_eta;
        let state = [0.0, 0.0, 0.0, eta_star[0], eta_star[1]];
        let d = plant.closed_loop_derivative(&state).unwrap();
        assert_abs_diff_eq!(d[3], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d[4], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn nonfinite_derivative_reported() {
        let plant = benchmark_plant(0.0);
        let state = [f64::NAN, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(
            plant.closed_loop_derivative(&state),
            Err(RegulationError::NonFiniteState { .. })
        ));
    }

    #[test]
    fn varpi_q_examples() {
        let mut plant = benchmark_plant(0.0);
        plant.held.x_bar = vec![1.0];
        let (varpi, q) = plant.varpi_and_q(&[1.0], &[0.5]);
        assert_eq!(varpi, 0.0);
        assert_abs_diff_eq!(q, -16.5, epsilon = 1e-14);

        let linear = CubicFeedback {
            linear: vec![4.0],
            cubic: vec![0.0],
        };
        plant.kappa = Arc::new(linear);
        let (_, q) = plant.varpi_and_q(&[0.3], &[-2.0]);
        assert_abs_diff_eq!(q, 8.0, epsilon = 1e-14);
    }

    #[test]
    fn trigger_value_examples() {
        let plant = benchmark_plant(0.0);
        assert!(plant.regulation_trigger_value(0.0, 3.0) <= 0.0);
        assert_abs_diff_eq!(plant.regulation_trigger_value(0.1, 1.0), 0.07525, epsilon = 1e-15);
        assert!(is_exempt(0.0, 0.0));
        assert!(!is_exempt(0.0, 1e-6));
    }

    #[test]
    fn regulation_event_examples() {
        let mut plant = benchmark_plant(0.0);
        let v = Vector::from_vec(vec![0.0, 0.0]);
        let state = [0.0, 0.0, 0.2, 0.0, 0.0];
        plant.on_regulation_event(&state, &v, 1.5);
        assert_abs_diff_eq!(plant.held.u_bar, -6.008, epsilon = 1e-12);
        let s = plant.signals(&state, &v, &Vector::zeros(2)).unwrap();
        assert_eq!(s.varpi, 0.0);
        let held = plant.held.clone();
        plant.on_regulation_event(&state, &v, 1.5);
        assert_eq!((plant.held.u_bar, &plant.held.x_bar), (held.u_bar, &held.x_bar));
    }

    #[test]
    fn tracking_error_examples() {
        let c = LinearOutput::new(vec![1.0, 0.0]);
        let v = Vector::from_vec(vec![1.5, -4.0]);
        assert_eq!(tracking_error(1.5, &v, &c), 0.0);
        assert_eq!(tracking_error(2.0, &v, &c), 0.5);
        let v2 = Vector::from_vec(vec![2.0, 0.0]);
        assert_eq!(tracking_error(1.5, &v2, &c), -tracking_error(2.0, &Vector::from_vec(vec![1.5, 0.0]), &c));
    }

    #[test]
    fn transformed_coordinates_examples() {
        let plant = benchmark_plant(0.3);
        let v = Vector::from_vec(vec![0.8, -0.4]);
        let steady = plant.steady_state(&v).unwrap();
        let tc = plant.transformed_coordinates(&steady, &v).unwrap();
        assert!(tc.z0.amax() < 1e-15);
        assert!(tc.zj[0].amax() < 1e-15);
        assert_eq!(tc.x_bar, vec![0.0]);

        let mut shifted = steady.clone();
        shifted[0] += 0.25;
        shifted[1] -= 0.5;
        let tc = plant.transformed_coordinates(&shifted, &v).unwrap();
        assert_abs_diff_eq!(tc.z0, Vector::from_vec(vec![0.25, -0.5]), epsilon = 1e-15);
        assert_abs_diff_eq!(steady[1], v[0] + v[1], epsilon = 1e-15);
    }

    #[test]
    fn benchmark_regulator_equations_hold() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let c = LinearOutput::new(vec![1.0, 0.0]);
        for (v, w) in [([0.3, -1.2], 0.5), ([2.0, 0.7], -1.0), ([-0.1, 0.0], 0.0)] {
            let v = Vector::from_vec(v.to_vec());
            let res = regulator_equation_residual(&BenchmarkAgent, &c, &a, &v, &[w]).unwrap();
            assert!(res < 1e-8, "residual {res}");
        }
    }

    #[test]
    fn steady_state_is_invariant_under_zero_held_input() {
        // on the manifold with ū = 0 the plant follows v exactly
        let plant = benchmark_plant(-0.6);
        let a = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let v = Vector::from_vec(vec![0.9, 0.2]);
        let state = plant.steady_state(&v).unwrap();
        let d = plant.closed_loop_derivative(&state).unwrap();
        let v_dot = &a * &v;
        let h = 1e-6;
        let ahead = plant.steady_state(&(&v + &v_dot * h)).unwrap();
        let behind = plant.steady_state(&(&v - &v_dot * h)).unwrap();
        for k in 0..state.len() {
            assert_abs_diff_eq!(d[k], (ahead[k] - behind[k]) / (2.0 * h), epsilon = 1e-7);
        }
    }

    #[test]
    fn gain_validation() {
        assert!(LinearGain::new(1.0, 40.0).is_err());
        assert!(LinearGain::new(0.5, 0.0).is_err());
        assert_abs_diff_eq!(LinearGain::new(0.99, 40.0).unwrap().sigma(1.0), 0.02475, epsilon = 1e-15);
    }

    #[test]
    fn model_validation_catches_bad_plugin() {
        #[derive(Debug)]
        struct Offset;
        impl AgentModel for Offset {
            fn z_dim(&self) -> usize {
                1
            }
            fn relative_degree(&self) -> usize {
                1
            }
            fn param_dim(&self) -> usize {
                0
            }
            fn f0(&self, _z: &[f64], _x1: f64, _w: &[f64]) -> Vector {
                Vector::from_vec(vec![0.0])
            }
            fn f(&self, _: usize, _: &[f64], _: &[f64], _: &[f64]) -> f64 {
                1.0
            }
            fn b(&self, _: usize, _: &[f64]) -> f64 {
                1.0
            }
        }
        assert!(validate_model(&Offset, &[]).is_err());
    }
}
