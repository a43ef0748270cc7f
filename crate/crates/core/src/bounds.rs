//! Estimated constants of the tracking-ball bound, the bound itself and the
//! threshold on `θ`, plus the loop that raises `θ` until the threshold holds.
//!
//! All suprema are taken over finite data (dataset records, grid states,
//! validation errors), so the resulting radius is an estimate `σ̂`, not a
//! certified bound.

use nalgebra::DVector;

use crate::dataset::{generate, split, Dataset};
use crate::error::{Error, Result};
use crate::neural::{approximation_error, train, ControllerNet, TrainConfig};
use crate::nom::NomConfig;
use crate::plant::{linearize, PlantModel, SteadyStateTarget};

/// Factor applied to the threshold when the loop raises `θ`.
pub const THETA_STEP: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundEstimates {
    /// `sup λ_max(P)` over the feasible records.
    pub lambda_bar_p: f64,
    /// `inf λ_min(P)` over the feasible records.
    pub lambda_underbar_p: f64,
    /// `sup ‖f(x) − A(x)·x‖` over the record states.
    pub delta: f64,
    pub delta_u_bar: f64,
    pub delta_p_bar: f64,
    pub mu_g: f64,
    /// `‖g(x̄)‖₂`
    pub g_at_target_norm: f64,
    pub theta: f64,
    /// Radius estimate; `None` while `θ` is at or below the threshold.
    pub sigma: Option<f64>,
    pub theta_threshold: f64,
}

impl BoundEstimates {
    /// Fills in `theta_threshold` and `sigma` from the other fields.
    pub fn refresh(&mut self) {
        self.theta_threshold = threshold(self);
        self.sigma = sigma_bound(self).ok();
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self.refresh();
        self
    }
}

fn threshold(est: &BoundEstimates) -> f64 {
    let sl = est.lambda_bar_p.sqrt();
    let sdp = est.delta_p_bar.sqrt();
    let ratio = if sdp == 0.0 { 0.0 } else { sdp * sl / est.lambda_underbar_p.sqrt() };
    sdp + ratio + (sl + sdp) * est.mu_g * est.delta_u_bar
}

/// Constants from the feasible records of `ds`; network errors from the
/// feasible records of `val` (zero when `net` is `None`).
pub fn estimate_constants(
    ds: &Dataset,
    val: &Dataset,
    net: Option<&ControllerNet>,
    model: &PlantModel,
    target: &SteadyStateTarget,
) -> Result<BoundEstimates> {
    let mut lambda_bar: f64 = f64::NEG_INFINITY;
    let mut lambda_under: f64 = f64::INFINITY;
    let mut delta: f64 = 0.0;
    let mut count = 0usize;
    for rec in ds.feasible_records() {
        let eig = rec.p.eigenvalues()?;
        lambda_bar = lambda_bar.max(eig.max());
        lambda_under = lambda_under.min(eig.min());
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoData("no feasible records to estimate constants from".into()));
    }
    for rec in &ds.records {
        delta = delta.max(linearize(model, &rec.x)?.residual_delta);
    }
    let (delta_u_bar, delta_p_bar) = match net {
        Some(net) => approximation_error(net, val)?,
        None => (0.0, 0.0),
    };
    let g = model.g(&target.x_bar);
    let g_norm = if g.is_empty() { 0.0 } else { g.singular_values().max() };
    let mut est = BoundEstimates {
        lambda_bar_p: lambda_bar,
        lambda_underbar_p: lambda_under,
        delta,
        delta_u_bar,
        delta_p_bar,
        mu_g: model.mu_g,
        g_at_target_norm: g_norm,
        theta: ds.meta.weights.theta,
        sigma: None,
        theta_threshold: 0.0,
    };
    est.refresh();
    Ok(est)
}

/// Radius of the attractive ball; fails when `θ` does not exceed the threshold.
pub fn sigma_bound(est: &BoundEstimates) -> Result<f64> {
    let sl = est.lambda_bar_p.sqrt();
    let sdp = est.delta_p_bar.sqrt();
    let thr = threshold(est);
    let den = est.theta - thr;
    if !(den > 0.0) {
        return Err(Error::ThetaTooSmall {
            theta: est.theta,
            threshold: thr,
        });
    }
    let num = 3.0 * sl * est.delta + sdp * est.delta + (sl + sdp) * est.g_at_target_norm * est.delta_u_bar;
    Ok(num / den)
}

/// `(θ > threshold, threshold)`
pub fn theta_check(est: &BoundEstimates) -> (bool, f64) {
    let thr = threshold(est);
    (est.theta > thr, thr)
}

#[derive(Debug, Clone)]
pub struct RetrainConfig {
    pub max_rounds: usize,
    pub nom: NomConfig,
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
}

/// Artifacts of one round of the retraining loop.
#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub net: ControllerNet,
    pub estimates: BoundEstimates,
    pub dataset: Dataset,
    pub rounds_used: usize,
    /// `θ` of every round so far.
    pub thetas: Vec<f64>,
}

/// Train, estimate, and while the threshold fails set `θ ← 1.1·threshold`,
/// regenerate the dataset with the new `θ` and train again.
///
/// Round one uses `ds` as given unless `theta` differs from the dataset's.
/// On failure the error carries the round that came closest to passing.
pub fn retrain_loop(
    ds: &Dataset,
    model: &PlantModel,
    target: &SteadyStateTarget,
    theta: f64,
    cfg: &RetrainConfig,
) -> Result<RetrainOutcome> {
    if cfg.max_rounds == 0 {
        return Err(Error::InvalidInput("max_rounds must be at least 1".into()));
    }
    let regenerate = |theta: f64| -> Result<Dataset> {
        let weights = ds.meta.weights.clone().with_theta(theta);
        generate(model, &ds.meta.refs, &ds.meta.grid, &weights, &cfg.nom, ds.meta.seed)
    };
    let mut data = if theta == ds.meta.weights.theta { ds.clone() } else { regenerate(theta)? };
    let mut best: Option<RetrainOutcome> = None;
    let mut thetas = Vec::new();
    let mut rounds = 0;
    for round in 1..=cfg.max_rounds {
        rounds = round;
        thetas.push(data.meta.weights.theta);
        let attempt = (|| -> Result<RetrainOutcome> {
            let (tr, va) = split(&data, cfg.train_fraction, cfg.split_seed)?;
            let (net, _) = train(&tr, &va, &cfg.train)?;
            let estimates = estimate_constants(&data, &va, Some(&net), model, target)?;
            Ok(RetrainOutcome {
                net,
                estimates,
                dataset: data.clone(),
                rounds_used: round,
                thetas: thetas.clone(),
            })
        })();
        let outcome = match (attempt, best.is_some()) {
            (Ok(o), _) => o,
            (Err(e), false) => return Err(e),
            (Err(e), true) => {
                log::warn!("round {round} failed: {e}");
                break;
            }
        };
        let (ok, thr) = theta_check(&outcome.estimates);
        log::info!("round {round}: theta {:e}, threshold {thr:e}", outcome.estimates.theta);
        if ok {
            return Ok(outcome);
        }
        let gap = |o: &RetrainOutcome| o.estimates.theta_threshold / o.estimates.theta;
        if best.as_ref().map_or(true, |b| gap(&outcome) < gap(b)) {
            best = Some(outcome);
        }
        if round < cfg.max_rounds {
            match regenerate(THETA_STEP * thr) {
                Ok(d) => data = d,
                Err(e) => {
                    log::warn!("regeneration after round {round} failed: {e}");
                    break;
                }
            }
        }
    }
    let mut best = best.expect("at least one round ran");
    best.thetas = thetas;
    Err(Error::ThresholdNotMet {
        rounds,
        theta: best.estimates.theta,
        threshold: best.estimates.theta_threshold,
        best: Box::new(best),
    })
}

/// `√|eᵀPe|` helper for tests and reports.
pub fn weighted_norm(p: &nalgebra::DMatrix<f64>, e: &DVector<f64>) -> f64 {
    e.dot(&(p * e)).abs().sqrt()
}
