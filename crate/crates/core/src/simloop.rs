//! Closed-loop simulation of the nonlinear plant under NOM, network and
//! relinearized LQR control, plus trace metrics and CSV output.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{fmt_num, parse_num};
use crate::error::{Error, Result};
use crate::neural::{infer, ControllerNet};
use crate::nom::{nom_solve, NomConfig};
use crate::ocp::{self, OcpInstance, OcpPoint, OcpWeights, SymmetricMatrix, FEASIBILITY_TOL};
use crate::plant::{linearize, step, PlantModel, SteadyStateTarget};
use crate::rng::derive_seed;

pub const DEFAULT_STEPS: usize = 100;
pub const RICCATI_TOL: f64 = 1e-10;
pub const RICCATI_MAX_ITERS: usize = 10_000;

/// A closed-loop run. `states` has one more entry than `inputs`; the
/// per-step columns (`lyapunov`, `residuals`, `p_matrices`) align with `inputs`
/// and hold `NaN` / `None` where the controller provides no `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub controller_tag: String,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub lyapunov: Vec<f64>,
    pub residuals: Vec<f64>,
    pub p_matrices: Vec<Option<SymmetricMatrix>>,
    /// Steps where the emitted `P` was not positive definite.
    pub non_pd_steps: Vec<usize>,
    /// Set when a non-finite state ended the run early.
    pub truncated: bool,
    /// Set when the controller failed and the run was aborted.
    pub error: Option<String>,
}

impl Trace {
    fn new(tag: &str, x0: &DVector<f64>) -> Self {
        Self {
            controller_tag: tag.to_string(),
            states: vec![x0.clone()],
            inputs: Vec::new(),
            lyapunov: Vec::new(),
            residuals: Vec::new(),
            p_matrices: Vec::new(),
            non_pd_steps: Vec::new(),
            truncated: false,
            error: None,
        }
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn times(&self) -> Vec<usize> {
        (0..self.states.len()).collect()
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trace holds the initial state")
    }

    /// Applies `u` through the true plant; returns false when the run must stop.
    fn advance(&mut self, model: &PlantModel, u: DVector<f64>, v: f64, residual: f64, p: Option<SymmetricMatrix>) -> bool {
        let next = match step(model, self.last_state(), &u) {
            Ok(x) if x.iter().all(|v| v.is_finite()) => Some(x),
            _ => None,
        };
        self.inputs.push(u);
        self.lyapunov.push(v);
        self.residuals.push(residual);
        self.p_matrices.push(p);
        match next {
            Some(x) => {
                self.states.push(x);
                true
            }
            None => {
                // Drop the step whose successor is not finite.
                self.inputs.pop();
                self.lyapunov.pop();
                self.residuals.pop();
                self.p_matrices.pop();
                self.truncated = true;
                false
            }
        }
    }

    /// Re-simulates from the initial state with the stored inputs.
    pub fn replay(&self, model: &PlantModel) -> Result<Vec<DVector<f64>>> {
        let mut xs = vec![self.states[0].clone()];
        for u in &self.inputs {
            let next = step(model, xs.last().expect("non-empty"), u)?;
            xs.push(next);
        }
        Ok(xs)
    }
}

fn check_start(model: &PlantModel, target: &SteadyStateTarget, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != model.n() || target.x_bar.len() != model.n() || target.u_bar.len() != model.q() {
        return Err(Error::InvalidInput("initial state or target has the wrong dimension".into()));
    }
    if !model.operating_region.contains(x0) {
        return Err(Error::InvalidInput(format!(
            "initial state {:?} is outside the operating region",
            x0.as_slice()
        )));
    }
    Ok(())
}

/// Online NOM control: relinearize, solve, apply `u*` to the true plant.
/// Step `t` uses the NOM seed `derive_seed(cfg.seed, [t])`.
pub fn run_nom_controller(
    model: &PlantModel,
    target: &SteadyStateTarget,
    weights: &OcpWeights,
    cfg: &NomConfig,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Trace> {
    check_start(model, target, x0)?;
    let mut trace = Trace::new("nom", x0);
    for t in 0..steps {
        let x = trace.last_state().clone();
        let step_cfg = NomConfig {
            seed: derive_seed(cfg.seed, &[t as u64]),
            ..cfg.clone()
        };
        let solved = OcpInstance::at(model, &x, target, weights).and_then(|inst| nom_solve(&inst, &step_cfg));
        let sol = match solved {
            Ok(sol) => sol,
            Err(e) => {
                trace.error = Some(format!("step {t}: {e}"));
                break;
            }
        };
        if !sol.feasible {
            log::warn!("step {t}: NOM solution is infeasible (residual {:e})", sol.residual);
        }
        let v = ocp::lyapunov_value(&x, target, &sol.p_star);
        if !trace.advance(model, sol.u_star.clone(), v, sol.residual, Some(sol.p_star)) {
            break;
        }
    }
    Ok(trace)
}

/// Network control: apply `ũ` from the network; `P̃` is used as emitted.
pub fn run_nn_controller(
    model: &PlantModel,
    target: &SteadyStateTarget,
    net: &ControllerNet,
    weights: &OcpWeights,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Trace> {
    check_start(model, target, x0)?;
    let mut trace = Trace::new("nn", x0);
    for t in 0..steps {
        let x = trace.last_state().clone();
        let (u, p) = match infer(net, &x, &target.r) {
            Ok(out) => out,
            Err(e) => {
                trace.error = Some(format!("step {t}: {e}"));
                break;
            }
        };
        if !p.min_eigenvalue().map_or(false, |l| l > 0.0) {
            trace.non_pd_steps.push(t);
        }
        let residual = linearize(model, &x)
            .and_then(|lin| OcpInstance::new(lin, target.clone(), weights.clone(), x.clone()))
            .map(|inst| ocp::contractive_residual(&inst, &OcpPoint::new(u.clone(), p.clone())))
            .unwrap_or(f64::NAN);
        let v = ocp::lyapunov_value(&x, target, &p);
        if !trace.advance(model, u, v, residual, Some(p)) {
            break;
        }
    }
    Ok(trace)
}

/// Discrete algebraic Riccati equation by fixed-point iteration from `P = Q`.
/// Returns `(P, K)` with `u = −K x`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = r + b.transpose() * p * b;
        let rhs = b.transpose() * p * a;
        s.clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| s.lu().solve(&rhs))
            .ok_or_else(|| Error::NumericalFailure("Riccati gain system is singular".into()))
    };
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITERS {
        let k = gain(&p)?;
        let mut next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        next = 0.5 * (&next + next.transpose());
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("Riccati iteration diverged".into()));
        }
        let change = (&next - &p).amax();
        p = next;
        if change <= RICCATI_TOL * (1.0 + p.amax()) {
            let k = gain(&p)?;
            return Ok((p, k));
        }
    }
    Err(Error::NumericalFailure(format!(
        "Riccati iteration did not converge in {RICCATI_MAX_ITERS} iterations"
    )))
}

/// Relinearized LQR: at each state solve the Riccati equation of the local
/// model and apply `u = ū − K(x − x̄)`.
pub fn run_ilqr_controller(
    model: &PlantModel,
    target: &SteadyStateTarget,
    qx: &DMatrix<f64>,
    qu: &DMatrix<f64>,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Trace> {
    check_start(model, target, x0)?;
    if qx.shape() != (model.n(), model.n()) || qu.shape() != (model.q(), model.q()) {
        return Err(Error::InvalidInput("LQR weights have the wrong shape".into()));
    }
    let mut trace = Trace::new("ilqr", x0);
    for t in 0..steps {
        let x = trace.last_state().clone();
        let solved = linearize(model, &x).and_then(|lin| solve_dare(&lin.a, &lin.b, qx, qu));
        let (p, k) = match solved {
            Ok(pk) => pk,
            Err(e) => {
                trace.error = Some(format!("step {t}: {e}"));
                break;
            }
        };
        let e = &x - &target.x_bar;
        let u = &target.u_bar - &k * &e;
        let v = e.dot(&(&p * &e)).abs().sqrt();
        if !trace.advance(model, u, v, f64::NAN, None) {
            break;
        }
    }
    Ok(trace)
}

/// Runs a system `x⁺ = A x + B u` under the fixed LQR gain of `(A, B)`.
pub fn run_linear_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    qx: &DMatrix<f64>,
    qu: &DMatrix<f64>,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let (_, k) = solve_dare(a, b, qx, qu)?;
    let mut xs = vec![x0.clone()];
    for _ in 0..steps {
        let x = xs.last().expect("non-empty");
        let u = -(&k * x);
        xs.push(a * x + b * u);
    }
    Ok(xs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// `Σ_t Σ_i |u_i(t)|`
    pub control_effort: f64,
    pub terminal_error: f64,
    /// Largest `‖x(t) − x̄‖` over the second half of the trace.
    pub max_error_after_settle: f64,
    /// Steps whose contractive residual exceeds `1e-6`.
    pub violation_count: usize,
}

pub fn compute_metrics(trace: &Trace, target: &SteadyStateTarget) -> Metrics {
    let errors: Vec<f64> = trace.states.iter().map(|x| (x - &target.x_bar).norm()).collect();
    let settle = errors.len() / 2;
    Metrics {
        control_effort: trace.inputs.iter().flat_map(|u| u.iter()).map(|v| v.abs()).sum(),
        terminal_error: *errors.last().expect("trace holds the initial state"),
        max_error_after_settle: errors[settle..].iter().copied().fold(0.0, f64::max),
        violation_count: trace.residuals.iter().filter(|r| **r > FEASIBILITY_TOL).count(),
    }
}

pub fn trace_header(n: usize, q: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=q).map(|i| format!("u{i}")));
    cols.push("V".into());
    cols.push("residual".into());
    cols.join(",")
}

fn opt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        fmt_num(v)
    }
}

/// CSV with one row per state; the final row leaves the per-step columns empty.
pub fn trace_to_csv(trace: &Trace) -> String {
    let n = trace.states[0].len();
    let q = trace.inputs.first().map_or(0, |u| u.len());
    let mut out = trace_header(n, q);
    out.push('\n');
    for (t, x) in trace.states.iter().enumerate() {
        let mut fields = vec![t.to_string()];
        fields.extend(x.iter().map(|v| fmt_num(*v)));
        if t < trace.inputs.len() {
            fields.extend(trace.inputs[t].iter().map(|v| fmt_num(*v)));
            fields.push(opt_num(trace.lyapunov[t]));
            fields.push(opt_num(trace.residuals[t]));
        } else {
            fields.extend(std::iter::repeat(String::new()).take(q + 2));
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trace_to_csv(trace))?;
    Ok(())
}

/// Columns of a trace CSV: states and inputs per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

pub fn read_trace_csv(text: &str) -> Result<TraceTable> {
    let bad = |msg: String| Error::InvalidInput(format!("trace file: {msg}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty".into()))?.split(',').collect();
    let xs: Vec<String> = header.iter().filter(|c| c.starts_with('x')).map(|c| c.to_string()).collect();
    let us: Vec<String> = header.iter().filter(|c| c.starts_with('u')).map(|c| c.to_string()).collect();
    let (n, q) = (xs.len(), us.len());
    if header.first() != Some(&"t") || header.len() != n + q + 3 {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut table = TraceTable {
        state_names: xs,
        input_names: us,
        states: Vec::new(),
        inputs: Vec::new(),
    };
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(bad(format!("row '{line}' has {} fields", f.len())));
        }
        let nums = |s: &[&str]| -> Result<Vec<f64>> {
            s.iter().map(|v| parse_num(v).ok_or_else(|| bad(format!("bad number '{v}'")))).collect()
        };
        table.states.push(nums(&f[1..1 + n])?);
        if f[1 + n].trim().is_empty() {
            continue;
        }
        table.inputs.push(nums(&f[1 + n..1 + n + q])?);
    }
    Ok(table)
}

/// Long-format panels `(t, series, value)`, one per state and input column.
/// Shorter series are padded with empty values up to the longest horizon.
pub fn plot_panels(traces: &[(String, TraceTable)]) -> Result<Vec<(String, String)>> {
    let first = &traces.first().ok_or_else(|| Error::InvalidInput("no traces given".into()))?.1;
    for (tag, t) in traces {
        if t.state_names != first.state_names || t.input_names != first.input_names {
            return Err(Error::InvalidInput(format!("trace '{tag}' has different columns")));
        }
    }
    let horizon = traces.iter().map(|(_, t)| t.states.len()).max().unwrap_or(0);
    if traces.iter().any(|(_, t)| t.states.len() != horizon) {
        log::warn!("traces have different horizons; shorter ones are padded");
    }
    let mut panels = Vec::new();
    let mut emit = |name: &str, len: usize, get: &dyn Fn(&TraceTable, usize) -> Option<f64>| {
        let mut out = String::from("t,series,value\n");
        for t in 0..len {
            for (tag, table) in traces {
                let v = get(table, t).map(fmt_num).unwrap_or_default();
                let _ = writeln!(out, "{t},{tag},{v}");
            }
        }
        panels.push((name.to_string(), out));
    };
    for (i, name) in first.state_names.iter().enumerate() {
        emit(name, horizon, &|tb, t| tb.states.get(t).map(|s| s[i]));
    }
    for (i, name) in first.input_names.iter().enumerate() {
        emit(name, horizon.saturating_sub(1), &|tb, t| tb.inputs.get(t).map(|s| s[i]));
    }
    Ok(panels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::benchmark_model;
    use rand::SeedableRng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn origin() -> SteadyStateTarget {
        SteadyStateTarget {
            r: v(&[0.0]),
            x_bar: v(&[0.0, 0.0]),
            u_bar: v(&[0.0]),
        }
    }

    fn trace_with_inputs(us: &[f64]) -> Trace {
        let mut t = Trace::new("test", &v(&[0.0, 0.0]));
        for &u in us {
            t.inputs.push(v(&[u]));
            t.states.push(v(&[0.0, 0.0]));
            t.lyapunov.push(f64::NAN);
            t.residuals.push(f64::NAN);
            t.p_matrices.push(None);
        }
        t
    }

    #[test]
    fn control_effort_definition() {
        assert_eq!(compute_metrics(&trace_with_inputs(&[0.0, 0.0]), &origin()).control_effort, 0.0);
        assert_eq!(compute_metrics(&trace_with_inputs(&[1.0, -2.0, 0.5]), &origin()).control_effort, 3.5);
    }

    #[test]
    fn scalar_riccati_matches_hand_solution() {
        // x⁺ = 2x + u, q = r = 1: p² − 4p − 1 = 0, so p = 2 + √5 and k = 2p/(1 + p).
        let one = DMatrix::from_element(1, 1, 1.0);
        let (p, k) = solve_dare(&DMatrix::from_element(1, 1, 2.0), &one, &one, &one).unwrap();
        let p_hand = 2.0 + 5f64.sqrt();
        assert!((p[(0, 0)] - p_hand).abs() <= 1e-9);
        assert!((k[(0, 0)] - 2.0 * p_hand / (1.0 + p_hand)).abs() <= 1e-9);
    }

    #[test]
    fn linear_lqr_converges_geometrically() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let xs = run_linear_lqr(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1), &v(&[3.0, -2.0]), 200)
            .unwrap();
        assert!(xs[200].norm() <= 1e-6, "{}", xs[200].norm());
        let (_, k) = solve_dare(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        let closed = &a - &b * &k;
        let rho = closed.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(rho < 1.0);
    }

    #[test]
    fn ilqr_from_target_is_stationary() {
        let model = benchmark_model();
        let tr = run_ilqr_controller(&model, &origin(), &DMatrix::identity(2, 2), &DMatrix::identity(1, 1), &v(&[0.0, 0.0]), 20)
            .unwrap();
        assert!(tr.states.iter().all(|x| x.norm() == 0.0));
        assert!(tr.inputs.iter().all(|u| u.norm() == 0.0));
    }

    #[test]
    fn ilqr_benchmark_converges_and_replays() {
        let model = benchmark_model();
        let w = OcpWeights::benchmark();
        let tr = run_ilqr_controller(&model, &origin(), &w.qx, &w.qu, &v(&[1.0, 0.0]), 100).unwrap();
        assert!(tr.error.is_none());
        assert_eq!(tr.steps(), 100);
        assert!(compute_metrics(&tr, &origin()).terminal_error <= 0.05);
        assert_eq!(tr.replay(&model).unwrap(), tr.states);
    }

    #[test]
    fn nom_from_target_is_stationary() {
        let model = benchmark_model();
        let cfg = NomConfig {
            epochs: 300,
            ..NomConfig::default()
        };
        let tr = run_nom_controller(&model, &origin(), &OcpWeights::benchmark(), &cfg, &v(&[0.0, 0.0]), 3).unwrap();
        assert_eq!(tr.steps(), 3);
        for u in &tr.inputs {
            assert!(u[0].abs() <= 1e-3);
        }
        assert_eq!(tr.replay(&model).unwrap(), tr.states);
    }

    #[test]
    fn start_outside_region_is_rejected() {
        let model = benchmark_model();
        let w = OcpWeights::benchmark();
        assert!(run_ilqr_controller(&model, &origin(), &w.qx, &w.qu, &v(&[6.0, 0.0]), 5).is_err());
    }

    #[test]
    fn random_net_trace_is_finite_or_truncated() {
        let model = benchmark_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = ControllerNet::new(2, 1, 1, &[4], &mut rng).unwrap();
        net.output_scaler.scale = vec![1e3; 4];
        let tr = run_nn_controller(&model, &origin(), &net, &OcpWeights::benchmark(), &v(&[4.0, 4.0]), 100).unwrap();
        assert!(tr.states.iter().all(|x| x.iter().all(|c| c.is_finite())));
        assert_eq!(tr.states.len(), tr.inputs.len() + 1);
        assert!(tr.truncated || tr.steps() == 100);
        let m = compute_metrics(&tr, &origin());
        assert!(m.control_effort.is_finite());
    }

    #[test]
    fn csv_round_trip_and_panels() {
        let model = benchmark_model();
        let w = OcpWeights::benchmark();
        let a = run_ilqr_controller(&model, &origin(), &w.qx, &w.qu, &v(&[1.0, 0.0]), 10).unwrap();
        let b = run_ilqr_controller(&model, &origin(), &w.qx, &w.qu, &v(&[1.0, 0.0]), 6).unwrap();
        let csv = trace_to_csv(&a);
        assert!(csv.starts_with("t,x1,x2,u1,V,residual\n"));
        let table = read_trace_csv(&csv).unwrap();
        assert_eq!(table.states.len(), 11);
        assert_eq!(table.inputs.len(), 10);
        assert_eq!(table.states[3], a.states[3].as_slice());
        assert_eq!(table.inputs[9], a.inputs[9].as_slice());

        let tb = read_trace_csv(&trace_to_csv(&b)).unwrap();
        let panels = plot_panels(&[("long".into(), table.clone()), ("short".into(), tb)]).unwrap();
        let names: Vec<&str> = panels.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["x1", "x2", "u1"]);
        let x1 = &panels[0].1;
        assert_eq!(x1.lines().count(), 1 + 2 * 11);
        assert!(x1.lines().any(|l| l == "10,short,"));

        let single = plot_panels(&[("only".into(), table)]).unwrap();
        assert_eq!(single[0].1.lines().next(), Some("t,series,value"));
        assert!(plot_panels(&[]).is_err());
    }
}
