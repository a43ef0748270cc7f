//! Neural optimization machine for the contractive control problem.
//!
//! Each decision variable `z_k` (the entries of `u` followed by the parameters
//! of `P`) is produced by a one-to-one linear neuron `z_k = ω_k·ẑ_k + β_k`
//! fed with a fixed starting point `ẑ`. Gradient descent runs on the weights
//! and biases; the loss is the objective plus the two constraint neurons.
//! Several starting points are taken from the best cells of a grid over the
//! `(u, P)` space and the lowest final loss wins.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ocp::{self, LossTerms, OcpInstance, OcpPoint, SymmetricMatrix};
use crate::rng::{derive_seed, seeded_rng};

/// Closed interval `[lo, hi]` sampled at cell centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn cell_center(&self, cells: usize, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width() / cells as f64
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Search region for the decision variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub u: Interval,
    pub p_diag: Interval,
    pub p_off: Interval,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            u: Interval::new(-10.0, 10.0),
            p_diag: Interval::new(0.1, 10.0),
            p_off: Interval::new(-10.0, 10.0),
        }
    }
}

impl SearchBox {
    /// Interval of every flat decision coordinate `[u; params(P)]`.
    pub fn intervals(&self, q: usize, n: usize) -> Vec<Interval> {
        let mut out = vec![self.u; q];
        out.extend((0..SymmetricMatrix::param_count(n)).map(|k| {
            if SymmetricMatrix::is_diagonal_param(n, k) {
                self.p_diag
            } else {
                self.p_off
            }
        }));
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [("u", self.u), ("P diagonal", self.p_diag), ("P off-diagonal", self.p_off)] {
            if !(iv.lo < iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite() {
                return Err(Error::InvalidInput(format!("{name} search interval is degenerate")));
            }
        }
        if self.p_diag.lo < 0.0 {
            return Err(Error::InvalidInput("P diagonal cells must be positive".into()));
        }
        Ok(())
    }
}

/// Step size as a function of the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant,
    /// Cosine decay from the base rate down to `final_lr`.
    Cosine { final_lr: f64 },
    /// Geometric decay from the base rate down to `final_lr`.
    Geometric { final_lr: f64 },
}

impl StepSchedule {
    pub fn label(&self) -> String {
        match *self {
            StepSchedule::Constant => "constant".into(),
            StepSchedule::Cosine { final_lr } => format!("cosine:{final_lr:e}"),
            StepSchedule::Geometric { final_lr } => format!("geometric:{final_lr:e}"),
        }
    }

    /// Inverse of [`StepSchedule::label`].
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unknown step schedule '{s}'"));
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a.parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        match (kind, arg) {
            ("constant", None) => Ok(StepSchedule::Constant),
            ("cosine", Some(final_lr)) => Ok(StepSchedule::Cosine { final_lr }),
            ("geometric", Some(final_lr)) if final_lr > 0.0 => Ok(StepSchedule::Geometric { final_lr }),
            _ => Err(bad()),
        }
    }

    /// Step size at `epoch`; the decaying schedules never exceed `base`.
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        if base <= 0.0 {
            return 0.0;
        }
        let frac = if epochs <= 1 { 0.0 } else { epoch as f64 / (epochs - 1) as f64 };
        match *self {
            StepSchedule::Constant => base,
            StepSchedule::Cosine { final_lr } => {
                let final_lr = final_lr.min(base);
                final_lr + 0.5 * (base - final_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            StepSchedule::Geometric { final_lr } => base * (final_lr.min(base) / base).powf(frac),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NomConfig {
    pub num_starts: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub schedule: StepSchedule,
    /// Half-width of the uniform perturbation applied to the initial weights and biases.
    pub eps_init: f64,
    /// Cells per decision coordinate; a single entry applies to every coordinate.
    pub cell_grid: Vec<usize>,
    pub search: SearchBox,
    /// Cap on the Euclidean norm of the weight-space gradient; `None` disables it.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for NomConfig {
    fn default() -> Self {
        Self {
            num_starts: 15,
            epochs: 2000,
            learning_rate: 0.01,
            schedule: StepSchedule::Cosine { final_lr: 1e-12 },
            eps_init: 1e-3,
            cell_grid: vec![9],
            search: SearchBox::default(),
            grad_clip: Some(10.0),
            seed: 0,
        }
    }
}

impl NomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_starts == 0 {
            return Err(Error::InvalidInput("at least one starting point is required".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("at least one epoch is required".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidInput("learning rate must be finite and >= 0".into()));
        }
        if !(self.eps_init >= 0.0) {
            return Err(Error::InvalidInput("eps_init must be >= 0".into()));
        }
        if self.cell_grid.is_empty() || self.cell_grid.contains(&0) {
            return Err(Error::InvalidInput("cell grid counts must be positive".into()));
        }
        if let Some(clip) = self.grad_clip {
            if !(clip > 0.0) {
                return Err(Error::InvalidInput("gradient clip must be > 0".into()));
            }
        }
        self.search.validate()
    }

    /// Cell counts for `dims` coordinates.
    pub fn cells(&self, dims: usize) -> Result<Vec<usize>> {
        match self.cell_grid.len() {
            1 => Ok(vec![self.cell_grid[0]; dims]),
            len if len == dims => Ok(self.cell_grid.clone()),
            len => Err(Error::InvalidInput(format!(
                "cell grid has {len} entries for {dims} decision coordinates"
            ))),
        }
    }

    /// Stable text digest of the configuration, recorded in dataset metadata.
    pub fn digest(&self) -> String {
        let cells: Vec<String> = self.cell_grid.iter().map(|c| c.to_string()).collect();
        format!(
            "S={};epochs={};lr={:e};sched={};eps={:e};cells={};u=[{:e},{:e}];pd=[{:e},{:e}];po=[{:e},{:e}];clip={};seed={}",
            self.num_starts,
            self.epochs,
            self.learning_rate,
            self.schedule.label(),
            self.eps_init,
            cells.join("x"),
            self.search.u.lo,
            self.search.u.hi,
            self.search.p_diag.lo,
            self.search.p_diag.hi,
            self.search.p_off.lo,
            self.search.p_off.hi,
            self.grad_clip.map_or("none".to_string(), |c| format!("{c:e}")),
            self.seed
        )
    }
}

/// Weights and biases of the starting-point layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NomWeights {
    pub omega_u: Vec<f64>,
    pub beta_u: Vec<f64>,
    pub omega_p: Vec<f64>,
    pub beta_p: Vec<f64>,
}

impl NomWeights {
    /// `ω = 1 + ε`, `β = ε` with an independent `ε ~ U[−eps, eps]` per entry.
    pub fn perturbed_identity<R: Rng>(q: usize, np: usize, eps: f64, rng: &mut R) -> Self {
        let mut draw = |len: usize, offset: f64| -> Vec<f64> {
            (0..len)
                .map(|_| offset + if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 })
                .collect()
        };
        let omega_u = draw(q, 1.0);
        let omega_p = draw(np, 1.0);
        let beta_u = draw(q, 0.0);
        let beta_p = draw(np, 0.0);
        Self {
            omega_u,
            beta_u,
            omega_p,
            beta_p,
        }
    }

    /// `u = Ω_u ⊙ û + B_u`, `P = Ω_P ⊙ P̂ + B_P`.
    pub fn reconstruct(&self, start: &OcpPoint) -> OcpPoint {
        let u = start
            .u
            .iter()
            .zip(self.omega_u.iter().zip(&self.beta_u))
            .map(|(s, (w, b))| w * s + b);
        let p: Vec<f64> = start
            .p
            .params()
            .iter()
            .zip(self.omega_p.iter().zip(&self.beta_p))
            .map(|(s, (w, b))| w * s + b)
            .collect();
        OcpPoint::new(
            nalgebra::DVector::from_iterator(start.u.len(), u),
            SymmetricMatrix::new(start.p.dim(), p).expect("parameter count preserved"),
        )
    }

}

/// Loss of the weights: the NOM loss at the reconstructed point.
pub fn weight_loss(inst: &OcpInstance, start: &OcpPoint, w: &NomWeights) -> Result<f64> {
    ocp::nom_loss(inst, &w.reconstruct(start))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NomSolution {
    pub u_star: nalgebra::DVector<f64>,
    pub p_star: SymmetricMatrix,
    pub loss: f64,
    pub objective: f64,
    pub g1: f64,
    pub g2: f64,
    /// Contractive residual at the solution (not clipped).
    pub residual: f64,
    pub lambda_min: f64,
    pub feasible: bool,
    pub start_index: usize,
    pub epochs_used: usize,
    pub converged: bool,
}

impl NomSolution {
    pub fn from_terms(
        point: OcpPoint,
        terms: &LossTerms,
        c: f64,
        start_index: usize,
        epochs_used: usize,
        converged: bool,
    ) -> Self {
        Self {
            u_star: point.u,
            p_star: point.p,
            loss: terms.loss(),
            objective: terms.objective,
            g1: terms.g1,
            g2: terms.g2,
            residual: terms.residual,
            lambda_min: terms.lambda_min,
            feasible: terms.is_feasible(c),
            start_index,
            epochs_used,
            converged,
        }
    }

    pub fn point(&self) -> OcpPoint {
        OcpPoint::new(self.u_star.clone(), self.p_star.clone())
    }
}

/// Evaluates the loss at every cell center and returns the `S` best, ordered by
/// loss with ties broken by cell index.
pub fn select_starting_points(inst: &OcpInstance, cfg: &NomConfig) -> Result<Vec<OcpPoint>> {
    cfg.validate()?;
    let (q, n) = (inst.q(), inst.n());
    let intervals = cfg.search.intervals(q, n);
    let cells = cfg.cells(intervals.len())?;
    let total: usize = cells.iter().product();
    if total < cfg.num_starts {
        return Err(Error::InsufficientStarts {
            available: total,
            requested: cfg.num_starts,
        });
    }

    let center = |mut index: usize| -> Vec<f64> {
        let mut flat = vec![0.0; cells.len()];
        for d in (0..cells.len()).rev() {
            flat[d] = intervals[d].cell_center(cells[d], index % cells[d]);
            index /= cells[d];
        }
        flat
    };

    let mut scored: Vec<(f64, usize)> = (0..total)
        .into_par_iter()
        .filter_map(|idx| {
            let pt = OcpPoint::from_flat(q, n, &center(idx));
            match ocp::nom_loss(inst, &pt) {
                Ok(loss) if loss.is_finite() => Some((loss, idx)),
                _ => None,
            }
        })
        .collect();
    if scored.len() < cfg.num_starts {
        return Err(Error::InsufficientStarts {
            available: scored.len(),
            requested: cfg.num_starts,
        });
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(cfg.num_starts)
        .map(|(_, idx)| OcpPoint::from_flat(q, n, &center(idx)))
        .collect())
}

const CONVERGENCE_WINDOW: usize = 10;
const CONVERGENCE_TOL: f64 = 1e-10;

/// Runs gradient descent on the weights of one starting point.
///
/// Returns the lowest-loss iterate seen; stops early once the loss has changed
/// by less than `1e-10` (relative) over the last ten epochs.
pub fn descend_one_start(
    inst: &OcpInstance,
    start: &OcpPoint,
    cfg: &NomConfig,
    start_index: usize,
    seed: u64,
) -> Result<NomSolution> {
    if start.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("starting point is not finite".into()));
    }
    let (q, n) = (inst.q(), inst.n());
    let c = inst.weights.penalty_c;
    let mut rng = seeded_rng(seed);
    let init = NomWeights::perturbed_identity(q, start.p.params().len(), cfg.eps_init, &mut rng);

    // Flat layout: [u coordinates; P parameters] for both weights and biases.
    let anchor = start.to_flat();
    let dims = anchor.len();
    let mut omega: Vec<f64> = init.omega_u.iter().chain(&init.omega_p).copied().collect();
    let mut beta: Vec<f64> = init.beta_u.iter().chain(&init.beta_p).copied().collect();
    let mut z = vec![0.0; dims];

    let mut history: Vec<f64> = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(bool, f64, Vec<f64>, LossTerms)> = None;
    let mut converged = false;
    let mut epochs_used = 0;

    for epoch in 0..=cfg.epochs {
        for k in 0..dims {
            z[k] = omega[k] * anchor[k] + beta[k];
        }
        let point = OcpPoint::from_flat(q, n, &z);
        let (terms, grad) = ocp::loss_and_gradient(inst, &point).map_err(|_| Error::DivergedStart {
            start: start_index,
            epoch,
        })?;
        let loss = terms.loss();
        if !loss.is_finite() {
            return Err(Error::DivergedStart {
                start: start_index,
                epoch,
            });
        }
        // Feasible iterates rank ahead of infeasible ones, then by loss.
        let feasible = terms.is_feasible(c);
        if best
            .as_ref()
            .map_or(true, |(bf, bl, _, _)| (feasible, -loss) > (*bf, -*bl))
        {
            best = Some((feasible, loss, z.clone(), terms));
        }
        history.push(loss);
        if history.len() > CONVERGENCE_WINDOW {
            let old = history[history.len() - 1 - CONVERGENCE_WINDOW];
            if (loss - old).abs() <= CONVERGENCE_TOL * loss.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        if epoch == cfg.epochs {
            break;
        }

        // ∂L/∂ω_k = ∂L/∂z_k · ẑ_k,  ∂L/∂β_k = ∂L/∂z_k
        let g = grad.to_flat();
        let mut scale = 1.0;
        if let Some(clip) = cfg.grad_clip {
            let norm = g
                .iter()
                .zip(&anchor)
                .map(|(gk, ak)| gk * gk * (ak * ak + 1.0))
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                scale = clip / norm;
            }
        }
        let step = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs) * scale;
        for k in 0..dims {
            omega[k] -= step * g[k] * anchor[k];
            beta[k] -= step * g[k];
        }
        epochs_used = epoch + 1;
        if omega.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::DivergedStart {
                start: start_index,
                epoch,
            });
        }
    }

    let (_, _, z_best, terms) = best.expect("at least one epoch evaluated");
    Ok(NomSolution::from_terms(
        OcpPoint::from_flat(q, n, &z_best),
        &terms,
        c,
        start_index,
        epochs_used,
        converged,
    ))
}

/// Per-start outcomes of a multi-start solve.
#[derive(Debug)]
pub struct MultiStartReport {
    pub starts: Vec<OcpPoint>,
    pub outcomes: Vec<Result<NomSolution>>,
    pub best: NomSolution,
}

/// Seed of start `j` under the configuration seed.
pub fn start_seed(cfg_seed: u64, start_index: usize) -> u64 {
    derive_seed(cfg_seed, &[start_index as u64])
}

pub fn nom_solve_detailed(inst: &OcpInstance, cfg: &NomConfig) -> Result<MultiStartReport> {
    let starts = select_starting_points(inst, cfg)?;
    let outcomes: Vec<Result<NomSolution>> = starts
        .par_iter()
        .enumerate()
        .map(|(j, start)| descend_one_start(inst, start, cfg, j, start_seed(cfg.seed, j)))
        .collect();
    let best = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok())
        .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.start_index.cmp(&b.start_index)))
        .cloned()
        .ok_or(Error::AllStartsDiverged(starts.len()))?;
    Ok(MultiStartReport {
        starts,
        outcomes,
        best,
    })
}

/// Multi-start NOM solve; deterministic for a fixed `cfg.seed`.
pub fn nom_solve(inst: &OcpInstance, cfg: &NomConfig) -> Result<NomSolution> {
    Ok(nom_solve_detailed(inst, cfg)?.best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::OcpWeights;
    use crate::plant::{benchmark_model, linearize, SteadyStateTarget};
    use nalgebra::DVector;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn bench_instance(x: &[f64]) -> OcpInstance {
        let model = benchmark_model();
        let x = v(x);
        let target = SteadyStateTarget {
            r: v(&[0.0]),
            x_bar: v(&[0.0, 0.0]),
            u_bar: v(&[0.0]),
        };
        OcpInstance::new(linearize(&model, &x).unwrap(), target, OcpWeights::benchmark(), x).unwrap()
    }

    /// One cell whose center is `(u, P) = (0, I)`.
    fn unit_cell_config() -> NomConfig {
        NomConfig {
            num_starts: 1,
            epochs: 50,
            cell_grid: vec![1],
            search: SearchBox {
                u: Interval::new(-1.0, 1.0),
                p_diag: Interval::new(0.0, 2.0),
                p_off: Interval::new(-1.0, 1.0),
            },
            ..NomConfig::default()
        }
    }

    #[test]
    fn single_cell_start_at_target() {
        let inst = bench_instance(&[0.0, 0.0]);
        let starts = select_starting_points(&inst, &unit_cell_config()).unwrap();
        assert_eq!(starts.len(), 1);
        assert_eq!(starts[0].to_flat(), vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ocp::nom_loss(&inst, &starts[0]).unwrap(), 0.0);
    }

    #[test]
    fn starting_points_are_sorted_and_distinct() {
        let inst = bench_instance(&[1.0, 0.0]);
        let cfg = NomConfig {
            cell_grid: vec![5],
            search: SearchBox {
                u: Interval::new(-10.0, 10.0),
                p_diag: Interval::new(0.0, 10.0),
                p_off: Interval::new(-10.0, 10.0),
            },
            ..NomConfig::default()
        };
        let starts = select_starting_points(&inst, &cfg).unwrap();
        assert_eq!(starts.len(), 15);
        let losses: Vec<f64> = starts.iter().map(|s| ocp::nom_loss(&inst, s).unwrap()).collect();
        assert!(losses.windows(2).all(|w| w[0] <= w[1]));
        for i in 0..starts.len() {
            for j in i + 1..starts.len() {
                assert_ne!(starts[i], starts[j]);
            }
        }
        // Brute-force ranking over all 625 centers agrees on the best loss.
        let intervals = cfg.search.intervals(1, 2);
        let mut all = Vec::new();
        for a in 0..5 {
            for b in 0..5 {
                for c in 0..5 {
                    for d in 0..5 {
                        let flat: Vec<f64> = [a, b, c, d]
                            .iter()
                            .zip(&intervals)
                            .map(|(i, iv)| iv.cell_center(5, *i))
                            .collect();
                        all.push(ocp::nom_loss(&inst, &OcpPoint::from_flat(1, 2, &flat)).unwrap());
                    }
                }
            }
        }
        all.sort_by(f64::total_cmp);
        assert_eq!(&all[..15], &losses[..]);
    }

    #[test]
    fn selecting_every_cell_returns_all_centers() {
        let inst = bench_instance(&[0.5, 0.5]);
        let cfg = NomConfig {
            num_starts: 16,
            cell_grid: vec![2],
            ..NomConfig::default()
        };
        assert_eq!(select_starting_points(&inst, &cfg).unwrap().len(), 16);
        let too_many = NomConfig {
            num_starts: 17,
            ..cfg
        };
        assert!(matches!(
            select_starting_points(&inst, &too_many),
            Err(Error::InsufficientStarts { available: 16, requested: 17 })
        ));
    }

    #[test]
    fn weight_space_reconstruction_is_exact() {
        let inst = bench_instance(&[1.0, -2.0]);
        let start = OcpPoint::from_flat(1, 2, &[0.7, 2.0, -0.3, 1.5]);
        let mut rng = seeded_rng(5);
        for _ in 0..50 {
            let w = NomWeights::perturbed_identity(1, 3, 0.5, &mut rng);
            let pt = w.reconstruct(&start);
            let expected: Vec<f64> = start
                .to_flat()
                .iter()
                .zip(w.omega_u.iter().chain(&w.omega_p).zip(w.beta_u.iter().chain(&w.beta_p)))
                .map(|(s, (o, b))| o * s + b)
                .collect();
            assert_eq!(pt.to_flat(), expected);
            assert_eq!(weight_loss(&inst, &start, &w).unwrap(), ocp::nom_loss(&inst, &pt).unwrap());
        }
    }

    #[test]
    fn initial_weights_are_perturbed_identity() {
        let mut rng = seeded_rng(1);
        let w = NomWeights::perturbed_identity(2, 6, 1e-3, &mut rng);
        for o in w.omega_u.iter().chain(&w.omega_p) {
            assert!((o - 1.0).abs() <= 1e-3);
        }
        for b in w.beta_u.iter().chain(&w.beta_p) {
            assert!(b.abs() <= 1e-3);
        }
        assert_ne!(w.omega_p[0], w.omega_p[1]);
    }

    #[test]
    fn descent_from_global_minimum_stays() {
        let inst = bench_instance(&[0.0, 0.0]);
        let cfg = NomConfig {
            eps_init: 0.0,
            ..unit_cell_config()
        };
        let start = OcpPoint::from_flat(1, 2, &[0.0, 1.0, 0.0, 1.0]);
        let sol = descend_one_start(&inst, &start, &cfg, 0, 9).unwrap();
        assert_eq!(sol.loss, 0.0);
        assert_eq!(sol.point(), start);
        assert!(sol.feasible);
    }

    #[test]
    fn perturbed_start_at_target_stays_near_it() {
        let inst = bench_instance(&[0.0, 0.0]);
        let cfg = NomConfig {
            epochs: NomConfig::default().epochs,
            ..unit_cell_config()
        };
        let start = OcpPoint::from_flat(1, 2, &[0.0, 1.0, 0.0, 1.0]);
        let sol = descend_one_start(&inst, &start, &cfg, 0, 9).unwrap();
        let w = NomWeights::perturbed_identity(1, 3, cfg.eps_init, &mut seeded_rng(9));
        let initial = weight_loss(&inst, &start, &w).unwrap();
        assert!(sol.feasible, "{sol:?}");
        assert!(sol.u_star[0].abs() <= cfg.eps_init);
        assert!(sol.loss <= initial * 1e-3, "{} vs {initial}", sol.loss);
    }

    #[test]
    fn zero_learning_rate_keeps_perturbed_start() {
        let inst = bench_instance(&[1.0, 0.0]);
        let cfg = NomConfig {
            learning_rate: 0.0,
            epochs: 20,
            ..NomConfig::default()
        };
        let start = OcpPoint::from_flat(1, 2, &[-3.0, 2.0, 1.0, 3.0]);
        let sol = descend_one_start(&inst, &start, &cfg, 0, 11).unwrap();
        let mut rng = seeded_rng(11);
        let w = NomWeights::perturbed_identity(1, 3, cfg.eps_init, &mut rng);
        assert_eq!(sol.point(), w.reconstruct(&start));
        for (a, b) in sol.point().to_flat().iter().zip(start.to_flat()) {
            assert!((a - b).abs() <= cfg.eps_init * (1.0 + b.abs()));
        }
    }

    #[test]
    fn solve_at_target() {
        let inst = bench_instance(&[0.0, 0.0]);
        let sol = nom_solve(&inst, &NomConfig::default()).unwrap();
        assert!(sol.feasible);
        assert!(sol.loss <= 1e-6, "loss {}", sol.loss);
        assert!(sol.u_star[0].abs() <= 1e-3);
    }

    #[test]
    fn solve_benchmark_point_is_feasible_and_deterministic() {
        let inst = bench_instance(&[1.0, 0.0]);
        let cfg = NomConfig::default();
        let report = nom_solve_detailed(&inst, &cfg).unwrap();
        let sol = &report.best;
        assert!(sol.feasible, "{sol:?}");
        assert!(sol.g1 == 0.0 || sol.g1 <= 1e-6 * inst.weights.penalty_c);
        // Re-verify by direct evaluation.
        assert!(ocp::contractive_residual(&inst, &sol.point()) <= 1e-6);
        assert!(sol.p_star.min_eigenvalue().unwrap() > 0.0);
        let recomputed = ocp::nom_loss(&inst, &sol.point()).unwrap();
        assert!((recomputed - sol.loss).abs() <= 1e-12 * sol.loss.abs().max(1.0));

        // Dominance over every start and descent sanity per start.
        for (j, (start, outcome)) in report.starts.iter().zip(&report.outcomes).enumerate() {
            let o = outcome.as_ref().unwrap();
            assert!(sol.loss <= o.loss);
            let w = NomWeights::perturbed_identity(1, 3, cfg.eps_init, &mut seeded_rng(start_seed(cfg.seed, j)));
            let first = ocp::evaluate(&inst, &w.reconstruct(start)).unwrap();
            let first_feasible = first.is_feasible(inst.weights.penalty_c);
            assert!(o.feasible >= first_feasible);
            if o.feasible == first_feasible {
                assert!(o.loss <= first.loss());
            }
        }

        let again = nom_solve(&inst, &cfg).unwrap();
        assert_eq!(&again, sol);
    }
}
