//! Brute-force reference solver: iterated grid refinement over `(u, P)`.
//!
//! Each round evaluates the loss on a uniform grid (inclusive endpoints),
//! recenters the box on the incumbent and shrinks it. The box never leaves the
//! original search region.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nom::{Interval, NomSolution, SearchBox};
use crate::ocp::{self, OcpInstance, OcpPoint};
use crate::plant::linspace;

/// Largest number of grid points evaluated in one round.
pub const GRID_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Points per decision coordinate; a single entry applies to all.
    pub coarse_grid: Vec<usize>,
    pub refine_rounds: usize,
    pub shrink: f64,
    /// One interval per flat coordinate `[u; params(P)]`. A zero-width
    /// interval pins that coordinate.
    pub boxes: Vec<Interval>,
}

impl OracleConfig {
    /// Config over the same region as a NOM search box.
    pub fn from_search_box(q: usize, n: usize, search: &SearchBox) -> Self {
        Self {
            coarse_grid: vec![9],
            refine_rounds: 6,
            shrink: 0.35,
            boxes: search.intervals(q, n),
        }
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        if self.refine_rounds == 0 {
            return Err(Error::InvalidInput("at least one refinement round is required".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidInput(format!("shrink must lie in (0, 1), got {}", self.shrink)));
        }
        if self.boxes.len() != dims {
            return Err(Error::InvalidInput(format!(
                "{} oracle boxes for {dims} decision coordinates",
                self.boxes.len()
            )));
        }
        if self.boxes.iter().any(|b| !(b.lo <= b.hi) || !b.lo.is_finite() || !b.hi.is_finite()) {
            return Err(Error::InvalidInput("oracle boxes must be finite with lo <= hi".into()));
        }
        self.counts(dims).map(|_| ())
    }

    fn counts(&self, dims: usize) -> Result<Vec<usize>> {
        let counts = match self.coarse_grid.len() {
            1 => vec![self.coarse_grid[0]; dims],
            len if len == dims => self.coarse_grid.clone(),
            len => {
                return Err(Error::InvalidInput(format!(
                    "oracle grid has {len} entries for {dims} decision coordinates"
                )))
            }
        };
        if counts.contains(&0) {
            return Err(Error::InvalidInput("oracle grid counts must be positive".into()));
        }
        Ok(counts)
    }
}

/// Result of a refinement run with the incumbent loss after every round.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub solution: NomSolution,
    pub round_losses: Vec<f64>,
}

pub fn oracle_solve(inst: &OcpInstance, cfg: &OracleConfig) -> Result<NomSolution> {
    Ok(oracle_solve_detailed(inst, cfg)?.solution)
}

pub fn oracle_solve_detailed(inst: &OcpInstance, cfg: &OracleConfig) -> Result<OracleReport> {
    let (q, n) = (inst.q(), inst.n());
    let dims = q + ocp::SymmetricMatrix::param_count(n);
    cfg.validate(dims)?;
    let counts = cfg.counts(dims)?;
    let points = counts
        .iter()
        .try_fold(1u64, |acc, &c| acc.checked_mul(c as u64))
        .unwrap_or(u64::MAX);
    if points > GRID_BUDGET {
        return Err(Error::BudgetExceeded {
            points,
            budget: GRID_BUDGET,
        });
    }

    let loss_at = |flat: &[f64]| -> f64 {
        match ocp::nom_loss(inst, &OcpPoint::from_flat(q, n, flat)) {
            Ok(l) if l.is_finite() => l,
            _ => f64::INFINITY,
        }
    };

    let mut center: Vec<f64> = cfg.boxes.iter().map(|b| 0.5 * (b.lo + b.hi)).collect();
    let mut half: Vec<f64> = cfg.boxes.iter().map(|b| 0.5 * b.width()).collect();
    let mut incumbent = center.clone();
    let mut best = loss_at(&incumbent);
    let mut round_losses = Vec::with_capacity(cfg.refine_rounds);

    for _ in 0..cfg.refine_rounds {
        let axes: Vec<Vec<f64>> = (0..dims)
            .map(|d| {
                let b = cfg.boxes[d];
                let lo = b.clamp(center[d] - half[d]);
                let hi = b.clamp(center[d] + half[d]);
                linspace(lo, hi, counts[d])
            })
            .collect();
        let point = |mut idx: u64| -> Vec<f64> {
            let mut flat = vec![0.0; dims];
            for d in (0..dims).rev() {
                let c = counts[d] as u64;
                flat[d] = axes[d][(idx % c) as usize];
                idx /= c;
            }
            flat
        };
        let round_best = (0..points)
            .into_par_iter()
            .map(|idx| (loss_at(&point(idx)), idx))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((loss, idx)) = round_best {
            if loss < best {
                best = loss;
                incumbent = point(idx);
            }
        }
        round_losses.push(best);
        center.clone_from(&incumbent);
        for h in &mut half {
            *h *= cfg.shrink;
        }
    }

    let pt = OcpPoint::from_flat(q, n, &incumbent);
    let terms = ocp::evaluate(inst, &pt)?;
    if !terms.loss().is_finite() {
        return Err(Error::NumericalFailure("oracle found no finite-loss point".into()));
    }
    Ok(OracleReport {
        solution: NomSolution::from_terms(pt, &terms, inst.weights.penalty_c, 0, cfg.refine_rounds, true),
        round_losses,
    })
}
