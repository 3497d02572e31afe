//! Deterministic hybrid simulation of the two-layer closed loop.
//!
//! All continuous states are integrated with fixed-step RK4 while sampled
//! inputs (`μ_i` and `ū_i`) are held. Consensus events are scheduled in closed
//! form and hit exactly as step targets. Regulation triggers are monitored at
//! step boundaries; a sign change is localized by bisection on a re-integrated
//! sub-step and the event is applied at the upper bracket.
//!
//! Event order at equal timestamps: consensus events in ascending agent index,
//! then all broadcasts, then trigger re-queries, then regulation checks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::consensus::{
    self, AgentTriggerState, ConsensusDesign, ReferenceModelSpec,
};
use crate::graph::{DirectedGraph, GraphSpectra};
use crate::numerics::Vector;
use crate::regulation::{OutputMap, RegulationError, RegulationPlant};

/// Events of one family for one agent beyond this count abort the run.
pub const ZENO_GUARD: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("non-finite state at t = {t}: agent {agent}: {detail}")]
    NonFiniteState { t: f64, agent: usize, detail: String },
    #[error("Zeno guard tripped: agent {agent} produced more than {ZENO_GUARD} {family} events (t = {t})")]
    ZenoGuardTripped { agent: usize, family: Family, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Consensus,
    Regulation,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Consensus => "consensus",
            Family::Regulation => "regulation",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consensus" => Ok(Family::Consensus),
            "regulation" => Ok(Family::Regulation),
            other => Err(format!("unknown event family `{other}`")),
        }
    }
}

/// One agent: reference-model initial state and an optional regulated plant.
#[derive(Debug, Clone)]
pub struct AgentSetup {
    pub v0: Vector,
    pub plant: Option<RegulationPlant>,
    /// Initial plant state `[z, x, η₁, …, η_r]`; empty without a plant.
    pub plant0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub graph: DirectedGraph,
    pub spectra: GraphSpectra,
    pub model: ReferenceModelSpec,
    pub output: Arc<dyn OutputMap>,
    pub design: ConsensusDesign,
    pub agents: Vec<AgentSetup>,
    pub horizon: f64,
    pub step: f64,
}

impl Scenario {
    /// `h > 0`, `horizon ≥ h` (or exactly zero) and `h ≤ b/4`.
    pub fn validate(&self) -> Result<(), SimError> {
        let h = self.step;
        if !(h > 0.0 && h.is_finite()) {
            return Err(SimError::Invalid(format!("step h = {h} must be positive")));
        }
        if !(self.horizon == 0.0 || self.horizon >= h) || !self.horizon.is_finite() {
            return Err(SimError::Invalid(format!(
                "horizon {} must be zero or at least the step {h}",
                self.horizon
            )));
        }
        if h > self.design.b / 4.0 {
            return Err(SimError::Invalid(format!(
                "step h = {h} exceeds b/4 = {} (timer floor b = {})",
                self.design.b / 4.0,
                self.design.b
            )));
        }
        let n = self.graph.agent_count();
        if self.agents.len() != n {
            return Err(SimError::Invalid(format!("graph has {n} agents, scenario defines {}", self.agents.len())));
        }
        let q = self.model.state_dim();
        for (i, a) in self.agents.iter().enumerate() {
            if a.v0.len() != q {
                return Err(SimError::Invalid(format!("agent {i}: v0 has length {}, expected {q}", a.v0.len())));
            }
            let expected = a.plant.as_ref().map_or(0, RegulationPlant::state_dim);
            if a.plant0.len() != expected {
                return Err(SimError::Invalid(format!(
                    "agent {i}: plant state has length {}, expected {expected}",
                    a.plant0.len()
                )));
            }
            if a.v0.iter().chain(&a.plant0).any(|x| !x.is_finite()) {
                return Err(SimError::Invalid(format!("agent {i}: non-finite initial condition")));
            }
        }
        Ok(())
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }
}

/// Replace every initial condition with a uniform draw from `[−scale, scale]`.
pub fn randomize_initial_conditions(scenario: &mut Scenario, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for agent in &mut scenario.agents {
        for x in agent.v0.iter_mut() {
            *x = rng.gen_range(-scale..=scale);
        }
        for x in agent.plant0.iter_mut() {
            *x = rng.gen_range(-scale..=scale);
        }
    }
}

/// One classical Runge–Kutta step of length `h` for an autonomous system.
pub fn rk4_step<E>(
    y: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
) -> Result<Vec<f64>, E> {
    let n = y.len();
    let axpy = |a: &[f64], k: &[f64], s: f64| -> Vec<f64> { (0..n).map(|i| a[i] + s * k[i]).collect() };
    let k1 = f(y)?;
    let k2 = f(&axpy(y, &k1, 0.5 * h))?;
    let k3 = f(&axpy(y, &k2, 0.5 * h))?;
    let k4 = f(&axpy(y, &k3, h))?;
    Ok((0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Bisection for the first time in `(lo, hi]` at which `fires` holds, given
/// `fires(hi)` and not `fires(lo)`. Returns the upper bracket once
/// `hi − lo ≤ tol`.
pub fn locate_crossing<E>(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut fires: impl FnMut(f64) -> Result<bool, E>,
) -> Result<f64, E> {
    while hi - lo > tol {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if fires(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// A logged trigger instant.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub agent: usize,
    pub family: Family,
    /// Zero-based event index within the agent and family.
    pub k: u64,
    pub t: f64,
    /// Inter-event interval; `None` for the first event. For consensus events
    /// this is the scheduled spacing `max{τ_ik, b}`.
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn of(&self, agent: usize, family: Family) -> impl Iterator<Item = &EventRecord> + '_ {
        self.records
            .iter()
            .filter(move |r| r.agent == agent && r.family == family)
    }
}

/// Sampled trajectory: one row per grid time, columns named by [`trace_columns`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimTrace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SimTrace {
    pub fn col(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.col(name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    /// Consecutive columns `prefix_0, prefix_1, …` of one row.
    pub fn vector(&self, row: usize, prefix: &str, len: usize) -> Option<Vector> {
        let first = self.col(&format!("{prefix}_0"))?;
        Some(Vector::from_column_slice(&self.rows[row][first..first + len]))
    }
}

/// Column names: `t`, then per agent `i`: `v{i}_*`, `z{i}_*`, `x{i}_*`,
/// `eta{i}_{j}_*`, `p{i}_*`, `eps{i}_*`, `mu{i}`, and with a plant `e{i}`,
/// `varpi{i}`, `q{i}`, `sigma_q{i}`; always `y{i}`. Then `y_inf`,
/// `sync_error`, `V`. Agent, stage and component indices start at zero.
pub fn trace_columns(scenario: &Scenario) -> Vec<String> {
    let q = scenario.model.state_dim();
    let mut cols = vec!["t".to_string()];
    for (i, a) in scenario.agents.iter().enumerate() {
        cols.extend((0..q).map(|k| format!("v{i}_{k}")));
        if let Some(plant) = &a.plant {
            cols.extend((0..plant.model.z_dim()).map(|k| format!("z{i}_{k}")));
            cols.extend((0..plant.relative_degree()).map(|k| format!("x{i}_{k}")));
            for (j, block) in plant.generator.blocks.iter().enumerate() {
                cols.extend((0..block.dim()).map(|k| format!("eta{i}_{j}_{k}")));
            }
        }
        cols.extend((0..q).map(|k| format!("p{i}_{k}")));
        cols.extend((0..q).map(|k| format!("eps{i}_{k}")));
        cols.push(format!("mu{i}"));
        if a.plant.is_some() {
            cols.extend(["e", "varpi", "q", "sigma_q"].iter().map(|s| format!("{s}{i}")));
        }
        cols.push(format!("y{i}"));
    }
    cols.extend(["y_inf", "sync_error", "V"].iter().map(|s| s.to_string()));
    cols
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FamilyStats {
    pub count: usize,
    pub min_interval: Option<f64>,
    pub mean_interval: Option<f64>,
    /// Largest number of events in any half-open window of unit length.
    pub max_per_unit_time: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentMetrics {
    pub consensus: FamilyStats,
    pub regulation: FamilyStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub initial_p_norm: f64,
    pub final_p_norm: f64,
    pub final_sync_error: f64,
    pub agents: Vec<AgentMetrics>,
    /// Number of adjacent samples with `V(t_{k+1}) > V(t_k)`.
    pub v_increase_count: usize,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: SimTrace,
    pub log: EventLog,
    pub metrics: Metrics,
}

struct Layout {
    q: usize,
    v_off: Vec<usize>,
    plant_off: Vec<usize>,
    plant_len: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(scenario: &Scenario) -> Self {
        let q = scenario.model.state_dim();
        let mut off = 0;
        let (mut v_off, mut plant_off, mut plant_len) = (vec![], vec![], vec![]);
        for a in &scenario.agents {
            v_off.push(off);
            off += q;
            plant_off.push(off);
            plant_len.push(a.plant0.len());
            off += a.plant0.len();
        }
        Self {
            q,
            v_off,
            plant_off,
            plant_len,
            len: off,
        }
    }

    fn v(&self, state: &[f64], i: usize) -> Vector {
        Vector::from_column_slice(&state[self.v_off[i]..self.v_off[i] + self.q])
    }

    fn plant<'a>(&self, state: &'a [f64], i: usize) -> &'a [f64] {
        &state[self.plant_off[i]..self.plant_off[i] + self.plant_len[i]]
    }
}

struct Simulator<'a> {
    sc: &'a Scenario,
    layout: Layout,
    state: Vec<f64>,
    t: f64,
    plants: Vec<Option<RegulationPlant>>,
    triggers: Vec<AgentTriggerState>,
    /// Next own consensus event: (time, scheduled spacing).
    next_c: Vec<(f64, Option<f64>)>,
    mu: Vec<f64>,
    log: EventLog,
    counts: Vec<[u64; 2]>,
    trace: SimTrace,
}

fn regulation_err(t: f64, agent: usize, e: RegulationError) -> SimError {
    SimError::NonFiniteState {
        t,
        agent,
        detail: e.to_string(),
    }
}

impl<'a> Simulator<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let layout = Layout::new(sc);
        let mut state = vec![0.0; layout.len];
        for (i, a) in sc.agents.iter().enumerate() {
            state[layout.v_off[i]..layout.v_off[i] + layout.q].copy_from_slice(a.v0.as_slice());
            state[layout.plant_off[i]..layout.plant_off[i] + layout.plant_len[i]].copy_from_slice(&a.plant0);
        }
        let n = sc.agent_count();
        let q = layout.q;
        Self {
            layout,
            state,
            t: 0.0,
            plants: sc.agents.iter().map(|a| a.plant.clone()).collect(),
            triggers: (0..n).map(|i| AgentTriggerState::new(i, &sc.graph, q)).collect(),
            next_c: vec![(0.0, None); n],
            mu: vec![0.0; n],
            log: EventLog::default(),
            counts: vec![[0, 0]; n],
            trace: SimTrace {
                columns: trace_columns(sc),
                rows: Vec::new(),
            },
            sc,
        }
    }

    fn derivative(&self, state: &[f64]) -> Result<Vec<f64>, SimError> {
        let mut d = vec![0.0; state.len()];
        for i in 0..self.sc.agent_count() {
            let v = self.layout.v(state, i);
            let dv = self.sc.model.derivative(&v, self.mu[i]);
            d[self.layout.v_off[i]..self.layout.v_off[i] + self.layout.q].copy_from_slice(dv.as_slice());
            if let Some(plant) = &self.plants[i] {
                let dp = plant
                    .closed_loop_derivative(self.layout.plant(state, i))
                    .map_err(|e| regulation_err(self.t, i, e))?;
                let off = self.layout.plant_off[i];
                d[off..off + dp.len()].copy_from_slice(dp.as_slice());
            }
        }
        if let Some(k) = d.iter().position(|x| !x.is_finite()) {
            let agent = self.layout.v_off.iter().rposition(|&o| o <= k).unwrap_or(0);
            return Err(SimError::NonFiniteState {
                t: self.t,
                agent,
                detail: format!("state component {k}"),
            });
        }
        Ok(d)
    }

    fn integrate(&self, from: &[f64], h: f64) -> Result<Vec<f64>, SimError> {
        rk4_step(from, h, |y| self.derivative(y))
    }

    fn record(&mut self, agent: usize, family: Family, k: u64, dt: Option<f64>) -> Result<(), SimError> {
        let slot = &mut self.counts[agent][family as usize];
        *slot += 1;
        if *slot > ZENO_GUARD {
            return Err(SimError::ZenoGuardTripped {
                agent,
                family,
                t: self.t,
            });
        }
        self.log.records.push(EventRecord {
            agent,
            family,
            k,
            t: self.t,
            dt,
        });
        Ok(())
    }

    fn v_all(&self, state: &[f64]) -> Vec<Vector> {
        (0..self.sc.agent_count()).map(|i| self.layout.v(state, i)).collect()
    }

    fn refresh_schedule(&mut self) {
        let b = self.sc.design.b;
        for (i, st) in self.triggers.iter().enumerate() {
            self.next_c[i] = match consensus::provisional_crossing(st, self.sc.design.norm_a) {
                Some(tau) => {
                    let gap = tau.max(b);
                    (st.t_last + gap, Some(gap))
                }
                None => (f64::INFINITY, None),
            };
        }
    }

    fn next_consensus_time(&self) -> f64 {
        self.next_c.iter().map(|c| c.0).fold(f64::INFINITY, f64::min)
    }

    /// Fire every consensus event due at the current time.
    fn consensus_events(&mut self) -> Result<(), SimError> {
        loop {
            let due: Vec<usize> = (0..self.sc.agent_count())
                .filter(|&i| self.next_c[i].0 <= self.t)
                .collect();
            if due.is_empty() {
                return Ok(());
            }
            let p_all = consensus::stacked_measurements(&self.v_all(&self.state), &self.sc.graph);
            let mut broadcasts = Vec::with_capacity(due.len());
            for &i in &due {
                let first = self.triggers[i].k == 0;
                let gap = self.next_c[i].1;
                let bc = consensus::on_own_event(
                    &mut self.triggers[i],
                    self.t,
                    &p_all[i],
                    &self.sc.design,
                    &self.sc.model,
                    &self.sc.graph,
                );
                self.mu[i] = consensus::consensus_control(&self.sc.design, i, &p_all[i]);
                let k = self.triggers[i].k - 1;
                self.record(i, Family::Consensus, k, if first { None } else { gap })?;
                broadcasts.push(bc);
            }
            for bc in &broadcasts {
                let receivers: Vec<usize> = self.sc.graph.out_neighbors(bc.from).collect();
                for j in receivers {
                    consensus::on_neighbor_broadcast(
                        &mut self.triggers[j],
                        self.t,
                        bc.from,
                        &bc.p_held,
                        &self.sc.design,
                        &self.sc.graph,
                    );
                }
            }
            self.refresh_schedule();
        }
    }

    fn plant_fires(&self, state: &[f64], i: usize) -> Result<bool, SimError> {
        let Some(plant) = &self.plants[i] else {
            return Ok(false);
        };
        let v = self.layout.v(state, i);
        let v_dot = self.sc.model.derivative(&v, self.mu[i]);
        let s = plant
            .signals(self.layout.plant(state, i), &v, &v_dot)
            .map_err(|e| regulation_err(self.t, i, e))?;
        Ok(s.fires())
    }

    fn fire_regulation(&mut self, i: usize) -> Result<(), SimError> {
        let v = self.layout.v(&self.state, i);
        let plant_state = self.layout.plant(&self.state, i).to_vec();
        let plant = self.plants[i].as_mut().expect("regulation event on agent without plant");
        let first = plant.held.k == 0;
        let dt = self.t - plant.held.t_last;
        plant.on_regulation_event(&plant_state, &v, self.t);
        let k = plant.held.k - 1;
        self.record(i, Family::Regulation, k, if first { None } else { Some(dt) })
    }

    /// Fire regulation events whose trigger condition holds now.
    fn regulation_check(&mut self) -> Result<(), SimError> {
        for i in 0..self.sc.agent_count() {
            if self.plant_fires(&self.state, i)? {
                self.fire_regulation(i)?;
            }
        }
        Ok(())
    }

    /// Integrate towards `target`, stopping early at a localized regulation event.
    fn advance(&mut self, target: f64) -> Result<(), SimError> {
        let h = target - self.t;
        if h <= 0.0 {
            return Ok(());
        }
        let s0 = self.state.clone();
        let s1 = self.integrate(&s0, h)?;
        let mut firing = Vec::new();
        for i in 0..self.sc.agent_count() {
            if self.plant_fires(&s1, i)? {
                firing.push(i);
            }
        }
        if firing.is_empty() {
            self.state = s1;
            self.t = target;
            return Ok(());
        }
        let tol = 1e-10 * (1.0 + self.t.abs());
        let mut tau_star = h;
        for &i in &firing {
            let tau = locate_crossing(0.0, tau_star, tol, |tau| {
                let s = self.integrate(&s0, tau)?;
                self.plant_fires(&s, i)
            })?;
            tau_star = tau_star.min(tau);
        }
        if tau_star < h {
            self.state = self.integrate(&s0, tau_star)?;
            self.t += tau_star;
        } else {
            self.state = s1;
            self.t = target;
        }
        self.regulation_check()
    }

    fn log_sample(&mut self) -> Result<(), SimError> {
        let sc = self.sc;
        let v_all = self.v_all(&self.state);
        let p_all = consensus::stacked_measurements(&v_all, &sc.graph);
        let mut row = Vec::with_capacity(self.trace.columns.len());
        row.push(self.t);
        let mut v_inf = Vector::zeros(self.layout.q);
        for (i, v) in v_all.iter().enumerate() {
            v_inf += v * sc.spectra.r[i];
        }
        let y_inf = sc.output.value(&v_inf);
        let mut sync_error: f64 = 0.0;
        for i in 0..sc.agent_count() {
            row.extend(v_all[i].iter());
            let plant_state = self.layout.plant(&self.state, i);
            row.extend(plant_state);
            row.extend(p_all[i].iter());
            row.extend((&self.triggers[i].p_held_self - &p_all[i]).iter());
            row.push(self.mu[i]);
            let y = match &self.plants[i] {
                Some(plant) => {
                    let v_dot = sc.model.derivative(&v_all[i], self.mu[i]);
                    let s = plant
                        .signals(plant_state, &v_all[i], &v_dot)
                        .map_err(|e| regulation_err(self.t, i, e))?;
                    row.extend([s.e, s.varpi, s.q, s.sigma_q]);
                    plant.y(plant_state)
                }
                None => sc.output.value(&v_all[i]),
            };
            row.push(y);
            sync_error = sync_error.max((y - y_inf).abs());
        }
        row.push(y_inf);
        row.push(sync_error);
        row.push(consensus::lyapunov_v(&p_all, &sc.design, &sc.spectra));
        if let Some(c) = row.iter().position(|x| !x.is_finite()) {
            return Err(SimError::NonFiniteState {
                t: self.t,
                agent: 0,
                detail: format!("logged column `{}`", self.trace.columns[c]),
            });
        }
        self.trace.rows.push(row);
        Ok(())
    }
}

/// Run a validated scenario to its horizon.
pub fn run_scenario(scenario: &Scenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let mut sim = Simulator::new(scenario);
    sim.consensus_events()?;
    for i in 0..scenario.agent_count() {
        if sim.plants[i].is_some() {
            sim.fire_regulation(i)?;
        }
    }
    sim.log_sample()?;

    let h = scenario.step;
    let horizon = scenario.horizon;
    let grid_count = if horizon == 0.0 {
        0
    } else {
        (horizon / h - 1e-9).ceil() as u64
    };
    let grid = |n: u64| if n >= grid_count { horizon } else { n as f64 * h };
    let mut n = 0;
    while n < grid_count {
        let grid_t = grid(n + 1);
        let target = grid_t.min(sim.next_consensus_time());
        sim.advance(target)?;
        if sim.t < target {
            continue;
        }
        if sim.next_consensus_time() <= sim.t {
            sim.consensus_events()?;
            sim.regulation_check()?;
        }
        if target == grid_t {
            n += 1;
            sim.t = grid_t;
            sim.log_sample()?;
        }
    }
    let metrics = metrics(&sim.trace, &sim.log, scenario);
    Ok(SimOutput {
        trace: sim.trace,
        log: sim.log,
        metrics,
    })
}

fn family_stats(log: &EventLog, agent: usize, family: Family) -> FamilyStats {
    let times: Vec<f64> = log.of(agent, family).map(|r| r.t).collect();
    let intervals: Vec<f64> = log.of(agent, family).filter_map(|r| r.dt).collect();
    let mut max_per_unit_time = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[hi] - times[lo] >= 1.0 {
            lo += 1;
        }
        max_per_unit_time = max_per_unit_time.max(hi - lo + 1);
    }
    FamilyStats {
        count: times.len(),
        min_interval: intervals.iter().copied().reduce(f64::min),
        mean_interval: (!intervals.is_empty()).then(|| intervals.iter().sum::<f64>() / intervals.len() as f64),
        max_per_unit_time,
    }
}

/// Summary statistics of a completed run.
pub fn metrics(trace: &SimTrace, log: &EventLog, scenario: &Scenario) -> Metrics {
    let n = scenario.agent_count();
    let q = scenario.model.state_dim();
    let p_norm = |row: usize| -> f64 {
        (0..n)
            .map(|i| trace.vector(row, &format!("p{i}"), q).map_or(0.0, |p| p.norm_squared()))
            .sum::<f64>()
            .sqrt()
    };
    let last = trace.rows.len().saturating_sub(1);
    let sync = trace.col("sync_error");
    let v_col = trace.col("V");
    let v_increase_count = v_col.map_or(0, |c| trace.rows.windows(2).filter(|w| w[1][c] > w[0][c]).count());
    Metrics {
        initial_p_norm: if trace.rows.is_empty() { 0.0 } else { p_norm(0) },
        final_p_norm: if trace.rows.is_empty() { 0.0 } else { p_norm(last) },
        final_sync_error: match (sync, trace.rows.last()) {
            (Some(c), Some(r)) => r[c],
            _ => 0.0,
        },
        agents: (0..n)
            .map(|i| AgentMetrics {
                consensus: family_stats(log, i, Family::Consensus),
                regulation: family_stats(log, i, Family::Regulation),
            })
            .collect(),
        v_increase_count,
        samples: trace.rows.len(),
    }
}
