//! Trajectory invariants checked after a run.
//!
//! Every check reads only the sampled trace, the event log and the design
//! constants, so it applies equally to an in-memory run and to files read
//! back from disk.

use crate::sim::{EventLog, Family, Scenario, SimTrace};

/// Slack on the trigger safety inequality `|ϖ| ≤ σ(|q|)`.
pub const TRIGGER_SAFETY_SLACK: f64 = 1e-6;
/// Slack on the Lyapunov decrease rate, relative to `‖p‖²`.
pub const LYAPUNOV_SLACK: f64 = 1e-3;
/// Required contraction `‖p(T)‖ / ‖p(0)‖`.
pub const CONSENSUS_RATIO: f64 = 1e-3;
/// Bound on the synchronization error over the last tenth of the horizon.
pub const SYNC_ERROR_BOUND: f64 = 5e-2;
/// `|μ_i|` below which the regulation loop is treated as unperturbed.
pub const ISS_MU_THRESHOLD: f64 = 1e-3;
/// Window length for the peak-decay check.
pub const ISS_WINDOW: f64 = 5.0;
/// Peaks of `|e_i|` below this are treated as converged.
pub const ISS_FLOOR: f64 = 1e-9;
/// Slack on pointwise norm inequalities that hold exactly in continuous time.
pub const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotApplicable => "N/A",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: Status,
    /// Number of samples, windows or events the check was evaluated on.
    pub evaluated: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!("{:<4} {:<26} n={:<8} {}\n", c.status.as_str(), c.name, c.evaluated, c.detail));
        }
        out.push_str(if self.passed() { "verify: PASS\n" } else { "verify: FAIL\n" });
        out
    }
}

fn result(name: &'static str, ok: bool, evaluated: usize, detail: String) -> CheckResult {
    CheckResult {
        name,
        status: if ok { Status::Pass } else { Status::Fail },
        evaluated,
        detail,
    }
}

fn not_applicable(name: &'static str, detail: &str) -> CheckResult {
    CheckResult {
        name,
        status: Status::NotApplicable,
        evaluated: 0,
        detail: detail.to_string(),
    }
}

/// Column lookups shared by the checks.
struct Cols {
    t: Vec<f64>,
    p: Vec<Vec<usize>>,
    eps: Vec<Vec<usize>>,
    mu: Vec<usize>,
    plant: Vec<Option<[usize; 4]>>,
    sync: usize,
    v: usize,
}

impl Cols {
    fn new(trace: &SimTrace, n: usize, q: usize) -> Result<Self, String> {
        let col = |name: String| trace.col(&name).ok_or_else(|| format!("trace lacks column `{name}`"));
        let mut p = vec![];
        let mut eps = vec![];
        let mut mu = vec![];
        let mut plant = vec![];
        for i in 0..n {
            p.push((0..q).map(|k| col(format!("p{i}_{k}"))).collect::<Result<Vec<_>, _>>()?);
            eps.push((0..q).map(|k| col(format!("eps{i}_{k}"))).collect::<Result<Vec<_>, _>>()?);
            mu.push(col(format!("mu{i}"))?);
            plant.push(match trace.col(&format!("e{i}")) {
                Some(e) => Some([e, col(format!("varpi{i}"))?, col(format!("q{i}"))?, col(format!("sigma_q{i}"))?]),
                None => None,
            });
        }
        Ok(Self {
            t: trace.times(),
            p,
            eps,
            mu,
            plant,
            sync: col("sync_error".into())?,
            v: col("V".into())?,
        })
    }

    fn norm(row: &[f64], idx: &[usize]) -> f64 {
        idx.iter().map(|&c| row[c] * row[c]).sum::<f64>().sqrt()
    }
}

struct Ctx<'a> {
    sc: &'a Scenario,
    trace: &'a SimTrace,
    log: &'a EventLog,
    cols: Cols,
}

impl Ctx<'_> {
    fn p_norm(&self, row: usize) -> f64 {
        let r = &self.trace.rows[row];
        self.cols.p.iter().map(|idx| Cols::norm(r, idx).powi(2)).sum::<f64>().sqrt()
    }

    fn eps_norm(&self, row: usize) -> f64 {
        let r = &self.trace.rows[row];
        self.cols.eps.iter().map(|idx| Cols::norm(r, idx).powi(2)).sum::<f64>().sqrt()
    }

    /// Per-agent condition `‖ε_i‖ ≤ max{η_i‖p_i‖, φ‖p‖}` at every agent.
    fn combined_holds(&self, row: usize) -> bool {
        let r = &self.trace.rows[row];
        let p = self.p_norm(row);
        let d = &self.sc.design;
        (0..self.sc.agent_count()).all(|i| {
            let e = Cols::norm(r, &self.cols.eps[i]);
            let pi = Cols::norm(r, &self.cols.p[i]);
            e <= (d.eta_i[i] * pi).max(d.phi * p)
        })
    }

    fn event_times(&self, agent: usize, family: Family) -> Vec<f64> {
        self.log.of(agent, family).map(|r| r.t).collect()
    }
}

fn check_event_log(ctx: &Ctx) -> CheckResult {
    let mut bad = Vec::new();
    let mut n = 0;
    for i in 0..ctx.sc.agent_count() {
        for fam in [Family::Consensus, Family::Regulation] {
            let recs: Vec<_> = ctx.log.of(i, fam).collect();
            for (k, w) in recs.windows(2).enumerate() {
                n += 1;
                let dt = w[1].dt.unwrap_or(f64::NAN);
                let gap = w[1].t - w[0].t;
                if !(w[1].t > w[0].t) || !(dt > 0.0) || w[1].k != w[0].k + 1 {
                    bad.push(format!("agent {i} {fam} event {}: non-increasing", k + 1));
                } else if (gap - dt).abs() > 1e-9 * (1.0 + w[1].t.abs()) {
                    bad.push(format!("agent {i} {fam} event {}: dt {dt:e} vs time gap {gap:e}", k + 1));
                }
            }
        }
    }
    result(
        "event_log_monotone",
        bad.is_empty(),
        n,
        bad.first().cloned().unwrap_or_else(|| "times strictly increasing, intervals positive".into()),
    )
}

fn check_consensus_dwell(ctx: &Ctx) -> CheckResult {
    let b = ctx.sc.design.b;
    let mut min = f64::INFINITY;
    let mut n = 0;
    for r in ctx.log.records.iter().filter(|r| r.family == Family::Consensus) {
        if let Some(dt) = r.dt {
            n += 1;
            min = min.min(dt);
        }
    }
    result("consensus_dwell", min >= b, n, format!("min interval {min:.6e} vs b = {b:.6e}"))
}

/// `‖ε_i‖ ≤ η_i‖p_i‖` at samples inside windows whose spacing came from the
/// threshold rule. The still-open last window is skipped.
fn check_threshold_window_bound(ctx: &Ctx) -> CheckResult {
    let b = ctx.sc.design.b;
    let mut n = 0;
    let mut worst: Option<(f64, usize, f64)> = None;
    let mut fails = 0;
    for i in 0..ctx.sc.agent_count() {
        let eta_i = ctx.sc.design.eta_i[i];
        let recs: Vec<_> = ctx.log.of(i, Family::Consensus).collect();
        let mut row = 0;
        for w in recs.windows(2) {
            let (start, end) = (w[0].t, w[1].t);
            if w[1].dt.is_none_or(|dt| dt <= b) {
                continue;
            }
            while row < ctx.cols.t.len() && ctx.cols.t[row] < start {
                row += 1;
            }
            let mut k = row;
            while k < ctx.cols.t.len() && ctx.cols.t[k] < end {
                let r = &ctx.trace.rows[k];
                let e = Cols::norm(r, &ctx.cols.eps[i]);
                let p = Cols::norm(r, &ctx.cols.p[i]);
                n += 1;
                let excess = e - eta_i * p;
                if excess > NORM_SLACK * (1.0 + p) {
                    fails += 1;
                    if worst.is_none_or(|w| excess > w.0) {
                        worst = Some((excess, i, ctx.cols.t[k]));
                    }
                }
                k += 1;
            }
        }
    }
    let detail = match worst {
        Some((x, i, t)) => format!("{fails} violations; worst agent {i} at t = {t:.6} exceeds by {x:.3e}"),
        None if n == 0 => "no samples inside threshold-branch windows".into(),
        None => "||eps_i|| <= eta_i ||p_i|| at every sample".into(),
    };
    result("threshold_window_bound", fails == 0, n, detail)
}

/// Where the per-agent condition holds, `‖ε‖² ≤ (η² + Nφ²)‖p‖²`.
fn check_combined_condition(ctx: &Ctx) -> CheckResult {
    let d = &ctx.sc.design;
    let bound = d.eta * d.eta + ctx.sc.agent_count() as f64 * d.phi * d.phi;
    let mut n = 0;
    let mut fails = 0;
    for row in 0..ctx.trace.rows.len() {
        if !ctx.combined_holds(row) {
            continue;
        }
        n += 1;
        let p2 = ctx.p_norm(row).powi(2);
        if ctx.eps_norm(row).powi(2) > bound * p2 + NORM_SLACK * (1.0 + p2) {
            fails += 1;
        }
    }
    result(
        "combined_condition",
        fails == 0,
        n,
        format!("{fails} violations of ||eps||^2 <= {bound:.6e} ||p||^2"),
    )
}

/// Finite-difference slope of `V` against `−(1−ϕ̄)/2 ‖p‖² + slack·‖p‖²`,
/// averaged over both endpoints, on sample pairs where the combined
/// condition holds at both ends.
fn check_lyapunov_slope(ctx: &Ctx) -> CheckResult {
    let Some(varphi) = ctx.sc.design.varphi else {
        return not_applicable("lyapunov_slope", "rho undefined (lambda >= lambda_2/N); no decrease rate to test");
    };
    if varphi >= 1.0 {
        return not_applicable("lyapunov_slope", "varphi >= 1");
    }
    let rate = -(1.0 - varphi) / 2.0 + LYAPUNOV_SLACK;
    let mut n = 0;
    let mut fails = 0;
    let mut worst = f64::NEG_INFINITY;
    let rows = &ctx.trace.rows;
    for k in 0..rows.len().saturating_sub(1) {
        if !(ctx.combined_holds(k) && ctx.combined_holds(k + 1)) {
            continue;
        }
        let dt = ctx.cols.t[k + 1] - ctx.cols.t[k];
        if dt <= 0.0 {
            continue;
        }
        let slope = (rows[k + 1][ctx.cols.v] - rows[k][ctx.cols.v]) / dt;
        let p2 = 0.5 * (ctx.p_norm(k).powi(2) + ctx.p_norm(k + 1).powi(2));
        if p2 == 0.0 {
            continue;
        }
        n += 1;
        let margin = slope - rate * p2;
        worst = worst.max(margin / p2);
        if margin > NORM_SLACK {
            fails += 1;
        }
    }
    result(
        "lyapunov_slope",
        fails == 0,
        n,
        format!("varphi = {varphi:.6}; {fails} violations; worst relative margin {worst:.3e}"),
    )
}

fn check_consensus_convergence(ctx: &Ctx) -> CheckResult {
    if ctx.trace.rows.is_empty() {
        return not_applicable("consensus_convergence", "empty trace");
    }
    let p0 = ctx.p_norm(0);
    let pt = ctx.p_norm(ctx.trace.rows.len() - 1);
    result(
        "consensus_convergence",
        pt <= CONSENSUS_RATIO * p0,
        ctx.trace.rows.len(),
        format!("||p(T)|| = {pt:.6e}, ||p(0)|| = {p0:.6e}, ratio {:.3e}", if p0 > 0.0 { pt / p0 } else { 0.0 }),
    )
}

/// `|ϖ_i| ≤ σ(|q_i|) + slack` at samples strictly between regulation events.
fn check_trigger_safety(ctx: &Ctx) -> CheckResult {
    if ctx.cols.plant.iter().all(Option::is_none) {
        return not_applicable("trigger_safety", "no regulated plants");
    }
    let mut n = 0;
    let mut fails = 0;
    let mut worst = f64::NEG_INFINITY;
    for (i, cols) in ctx.cols.plant.iter().enumerate() {
        let Some([_, varpi, _, sigma_q]) = *cols else { continue };
        let events = ctx.event_times(i, Family::Regulation);
        let mut next = 0;
        for (k, r) in ctx.trace.rows.iter().enumerate() {
            let t = ctx.cols.t[k];
            while next < events.len() && events[next] < t {
                next += 1;
            }
            if next < events.len() && events[next] == t {
                continue;
            }
            n += 1;
            let excess = r[varpi].abs() - r[sigma_q];
            worst = worst.max(excess);
            if excess > TRIGGER_SAFETY_SLACK {
                fails += 1;
            }
        }
    }
    result(
        "trigger_safety",
        fails == 0,
        n,
        format!("{fails} violations; max |varpi| - sigma(|q|) = {worst:.3e}"),
    )
}

fn check_regulation_zeno(ctx: &Ctx) -> CheckResult {
    if ctx.cols.plant.iter().all(Option::is_none) {
        return not_applicable("regulation_zeno", "no regulated plants");
    }
    let horizon = ctx.cols.t.last().copied().unwrap_or(0.0);
    let floor = 1e-10 * (1.0 + horizon);
    let mut min = f64::INFINITY;
    let mut n = 0;
    let mut densest = 0;
    for i in 0..ctx.sc.agent_count() {
        let times = ctx.event_times(i, Family::Regulation);
        let mut lo = 0;
        for hi in 0..times.len() {
            while times[hi] - times[lo] >= 1.0 {
                lo += 1;
            }
            densest = densest.max(hi - lo + 1);
        }
        for r in ctx.log.of(i, Family::Regulation) {
            if let Some(dt) = r.dt {
                n += 1;
                min = min.min(dt);
            }
        }
    }
    result(
        "regulation_zeno",
        min > floor,
        n,
        format!("min interval {min:.6e} (floor {floor:.1e}); at most {densest} events per unit time"),
    )
}

/// After `|μ_i|` stays below the threshold, peaks of `|e_i|` over consecutive
/// windows must not increase.
fn check_iss_peak_decay(ctx: &Ctx) -> CheckResult {
    if ctx.cols.plant.iter().all(Option::is_none) {
        return not_applicable("iss_peak_decay", "no regulated plants");
    }
    let rows = &ctx.trace.rows;
    let mut windows = 0;
    let mut fails = Vec::new();
    for (i, cols) in ctx.cols.plant.iter().enumerate() {
        let Some([e_col, ..]) = *cols else { continue };
        let mu = ctx.cols.mu[i];
        let Some(last_big) = rows.iter().rposition(|r| r[mu].abs() >= ISS_MU_THRESHOLD) else {
            continue;
        };
        let start_row = last_big + 1;
        if start_row >= rows.len() {
            continue;
        }
        let start = ctx.cols.t[start_row];
        let mut peaks = Vec::new();
        let mut w = 0;
        loop {
            let lo = start + w as f64 * ISS_WINDOW;
            let hi = lo + ISS_WINDOW;
            if hi > *ctx.cols.t.last().unwrap() + 1e-12 {
                break;
            }
            let peak = rows
                .iter()
                .zip(&ctx.cols.t)
                .filter(|(_, &t)| t >= lo && t < hi)
                .map(|(r, _)| r[e_col].abs())
                .fold(0.0, f64::max);
            peaks.push(peak);
            w += 1;
        }
        for (k, pair) in peaks.windows(2).enumerate() {
            windows += 1;
            if pair[1] > pair[0] && pair[1] > ISS_FLOOR {
                fails.push(format!("agent {i}: window {} peak {:.3e} > {:.3e}", k + 1, pair[1], pair[0]));
            }
        }
    }
    if windows == 0 {
        return not_applicable("iss_peak_decay", "|mu_i| never settles below the threshold for two full windows");
    }
    result(
        "iss_peak_decay",
        fails.is_empty(),
        windows,
        fails.first().cloned().unwrap_or_else(|| "peaks of |e_i| non-increasing".into()),
    )
}

fn check_sync_error(ctx: &Ctx) -> CheckResult {
    let Some(&t_end) = ctx.cols.t.last() else {
        return not_applicable("sync_error_terminal", "empty trace");
    };
    let from = 0.9 * t_end;
    let vals: Vec<f64> = ctx
        .trace
        .rows
        .iter()
        .zip(&ctx.cols.t)
        .filter(|(_, &t)| t >= from)
        .map(|(r, _)| r[ctx.cols.sync])
        .collect();
    let max = vals.iter().copied().fold(0.0, f64::max);
    result(
        "sync_error_terminal",
        max <= SYNC_ERROR_BOUND,
        vals.len(),
        format!("max sync_error on [{from:.3}, {t_end:.3}] = {max:.6e} (bound {SYNC_ERROR_BOUND:e})"),
    )
}

fn check_sylvester(ctx: &Ctx) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for a in &ctx.sc.agents {
        if let Some(p) = &a.plant {
            for blk in &p.generator.blocks {
                n += 1;
                let res = crate::numerics::norm_inf(&(&blk.m * &blk.t + &blk.n * &blk.psi - &blk.t * &blk.phi));
                worst = worst.max(res);
            }
        }
    }
    if n == 0 {
        return not_applicable("sylvester_residual", "no regulated plants");
    }
    result(
        "sylvester_residual",
        worst <= crate::numerics::tol::SYLVESTER_RESIDUAL,
        n,
        format!("max ||MT + N Psi - T Phi|| = {worst:.3e}"),
    )
}

/// Run every invariant against a trace and event log.
pub fn verify(scenario: &Scenario, trace: &SimTrace, log: &EventLog) -> Result<VerifyReport, String> {
    let cols = Cols::new(trace, scenario.agent_count(), scenario.model.state_dim())?;
    let ctx = Ctx {
        sc: scenario,
        trace,
        log,
        cols,
    };
    Ok(VerifyReport {
        checks: vec![
            check_event_log(&ctx),
            check_consensus_dwell(&ctx),
            check_threshold_window_bound(&ctx),
            check_combined_condition(&ctx),
            check_lyapunov_slope(&ctx),
            check_consensus_convergence(&ctx),
            check_trigger_safety(&ctx),
            check_regulation_zeno(&ctx),
            check_iss_peak_decay(&ctx),
            check_sync_error(&ctx),
            check_sylvester(&ctx),
        ],
    })
}
