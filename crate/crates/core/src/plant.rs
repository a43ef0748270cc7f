//! Discrete-time affine nonlinear plants `x⁺ = f(x) + g(x)·u`, `y = h(x, u)`.
//!
//! A plant is described by an [`AffineDynamics`] implementation and wrapped in a
//! [`PlantModel`] that carries the operating region and the Lipschitz constant of
//! the input gain. Built-in models are reachable by name through [`by_name`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// The maps defining an affine plant. Implementations must be pure.
pub trait AffineDynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// `f(x)`
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `g(x)`, an `n × q` matrix.
    fn input_gain(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// `h(x, u)`
    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// Analytic `∂f/∂x`.
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidInput("region bounds differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidInput("region must be non-degenerate".into()));
        }
        Ok(Self {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Uniform grid with inclusive endpoints, row-major (last coordinate fastest).
    /// A count of 1 places the single point at the box midpoint.
    pub fn grid(&self, counts: &[usize]) -> Result<Vec<DVector<f64>>> {
        if counts.len() != self.dim() || counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidInput(format!(
                "grid counts {counts:?} do not match a {}-dimensional region",
                self.dim()
            )));
        }
        let axes: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .map(|(d, &c)| linspace(self.lower[d], self.upper[d], c))
            .collect();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; counts.len()];
        for _ in 0..total {
            out.push(DVector::from_iterator(
                counts.len(),
                idx.iter().enumerate().map(|(d, &i)| axes[d][i]),
            ));
            for d in (0..counts.len()).rev() {
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }
}

/// Inclusive uniform spacing; endpoints are reproduced exactly.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| {
                if i == count - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// A plant together with its operating region and the Lipschitz constant of `g`.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub name: String,
    pub dynamics: Arc<dyn AffineDynamics>,
    pub mu_g: f64,
    pub operating_region: Region,
}

impl PlantModel {
    /// Wraps user dynamics; `mu_g` is estimated by sampling when not supplied.
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn AffineDynamics>,
        operating_region: Region,
        mu_g: Option<f64>,
    ) -> Result<Self> {
        if operating_region.dim() != dynamics.state_dim() {
            return Err(Error::InvalidInput(
                "operating region dimension differs from state dimension".into(),
            ));
        }
        let mu_g = match mu_g {
            Some(v) if v >= 0.0 && v.is_finite() => v,
            Some(v) => return Err(Error::InvalidInput(format!("mu_g must be >= 0, got {v}"))),
            None => estimate_gain_lipschitz(dynamics.as_ref(), &operating_region, 10_000, 0),
        };
        Ok(Self {
            name: name.into(),
            dynamics,
            mu_g,
            operating_region,
        })
    }

    pub fn n(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn q(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn m(&self) -> usize {
        self.dynamics.output_dim()
    }

    pub fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        self.dynamics.drift(x)
    }

    pub fn g(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.dynamics.input_gain(x)
    }

    pub fn h(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.dynamics.output(x, u)
    }

    pub fn jac_f(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.dynamics.drift_jacobian(x)
    }
}

/// Max of `‖g(a) − g(b)‖_F / ‖a − b‖` over random pairs in the region.
pub fn estimate_gain_lipschitz(
    dynamics: &dyn AffineDynamics,
    region: &Region,
    pairs: usize,
    seed: u64,
) -> f64 {
    let mut rng = seeded_rng(seed);
    let n = region.dim();
    let sample = |rng: &mut rand_chacha::ChaCha8Rng| {
        DVector::from_iterator(
            n,
            (0..n).map(|d| rng.random_range(region.lower[d]..=region.upper[d])),
        )
    };
    let mut best = 0.0f64;
    for _ in 0..pairs {
        let a = sample(&mut rng);
        let b = sample(&mut rng);
        let dist = (&a - &b).norm();
        if dist < 1e-12 {
            continue;
        }
        let ratio = (dynamics.input_gain(&a) - dynamics.input_gain(&b)).norm() / dist;
        best = best.max(ratio);
    }
    best
}

/// Affine model of the plant around a state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// `‖f(x0) − A·x0‖`
    pub residual_delta: f64,
}

/// Equilibrium pair for a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateTarget {
    pub r: DVector<f64>,
    pub x_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
}

fn all_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    it.all(|v| v.is_finite())
}

pub fn linearize(model: &PlantModel, x: &DVector<f64>) -> Result<LinearizedDynamics> {
    if x.len() != model.n() {
        return Err(Error::InvalidInput(format!(
            "state has {} entries, model expects {}",
            x.len(),
            model.n()
        )));
    }
    if !model.operating_region.contains(x) {
        log::warn!("linearizing outside the operating region at {:?}", x.as_slice());
    }
    let fx = model.f(x);
    let a = model.jac_f(x);
    if !all_finite(fx.iter()) || !all_finite(a.iter()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite f or ∂f/∂x at {:?}",
            x.as_slice()
        )));
    }
    let b = model.g(x);
    let residual_delta = (&fx - &a * x).norm();
    Ok(LinearizedDynamics {
        a,
        b,
        x0: x.clone(),
        residual_delta,
    })
}

pub fn step(model: &PlantModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if !all_finite(x.iter()) || !all_finite(u.iter()) {
        return Err(Error::NumericalFailure("non-finite state or input".into()));
    }
    let next = model.f(x) + model.g(x) * u;
    if !all_finite(next.iter()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite successor of {:?}",
            x.as_slice()
        )));
    }
    Ok(next)
}

const NEWTON_MAX_ITERS: usize = 200;
const NEWTON_TOL: f64 = 1e-10;

/// Stacked residual `[x − f(x) − g(x)u ; r − h(x, u)]`.
fn steady_residual(model: &PlantModel, r: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let n = model.n();
    let x = z.rows(0, n).into_owned();
    let u = z.rows(n, model.q()).into_owned();
    let dyn_res = &x - model.f(&x) - model.g(&x) * &u;
    let out_res = r - model.h(&x, &u);
    let mut res = DVector::zeros(n + model.m());
    res.rows_mut(0, n).copy_from(&dyn_res);
    res.rows_mut(n, model.m()).copy_from(&out_res);
    res
}

/// Solves the equilibrium equations for `r` by damped Newton from `guess = (x, u)`.
pub fn solve_steady_state(
    model: &PlantModel,
    r: &DVector<f64>,
    guess: (&DVector<f64>, &DVector<f64>),
) -> Result<SteadyStateTarget> {
    let (n, q, m) = (model.n(), model.q(), model.m());
    if r.len() != m || guess.0.len() != n || guess.1.len() != q {
        return Err(Error::InvalidInput("steady-state dimensions mismatch".into()));
    }
    if !all_finite(r.iter()) {
        return Err(Error::NoSteadyState("reference is not finite".into()));
    }
    if !all_finite(guess.0.iter()) || !all_finite(guess.1.iter()) {
        return Err(Error::NoSteadyState("initial guess is not finite".into()));
    }

    let mut z = DVector::zeros(n + q);
    z.rows_mut(0, n).copy_from(guess.0);
    z.rows_mut(n, q).copy_from(guess.1);
    let mut res = steady_residual(model, r, &z);
    let mut norm = res.norm();

    let mut iters = 0;
    while norm > NEWTON_TOL {
        if iters == NEWTON_MAX_ITERS {
            return Err(Error::NoSteadyState(format!(
                "Newton did not converge in {NEWTON_MAX_ITERS} iterations (residual {norm:e})"
            )));
        }
        iters += 1;

        // Central-difference Jacobian of the stacked residual.
        let mut jac = DMatrix::zeros(n + m, n + q);
        for j in 0..n + q {
            let h = 1e-7 * (1.0 + z[j].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let col = (steady_residual(model, r, &zp) - steady_residual(model, r, &zm)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let svd = jac.svd(true, true);
        let dz = svd
            .solve(&(-&res), 1e-12)
            .map_err(|e| Error::NoSteadyState(e.to_string()))?;

        let mut alpha = 1.0;
        loop {
            let trial = &z + alpha * &dz;
            let trial_res = steady_residual(model, r, &trial);
            let trial_norm = trial_res.norm();
            if trial_norm.is_finite() && trial_norm < norm {
                z = trial;
                res = trial_res;
                norm = trial_norm;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(Error::NoSteadyState(format!(
                    "line search stalled at residual {norm:e}"
                )));
            }
        }
    }

    let target = SteadyStateTarget {
        r: r.clone(),
        x_bar: z.rows(0, n).into_owned(),
        u_bar: z.rows(n, q).into_owned(),
    };
    if !model.operating_region.contains(&target.x_bar) {
        return Err(Error::NotAdmissible(Box::new(target)));
    }
    Ok(target)
}

/// PBH test: `[A − λI, B]` has full row rank for every eigenvalue with `|λ| ≥ 1`.
/// Diagnostic only; nothing in the pipeline enforces it.
pub fn is_stabilizable(lin: &LinearizedDynamics) -> bool {
    let n = lin.a.nrows();
    let q = lin.b.ncols();
    let eigs = lin.a.complex_eigenvalues();
    eigs.iter().filter(|l| l.norm() >= 1.0 - 1e-12).all(|lambda| {
        let mut pbh = DMatrix::<Complex<f64>>::zeros(n, n + q);
        for i in 0..n {
            for j in 0..n {
                let mut v = Complex::new(lin.a[(i, j)], 0.0);
                if i == j {
                    v -= *lambda;
                }
                pbh[(i, j)] = v;
            }
            for j in 0..q {
                pbh[(i, n + j)] = Complex::new(lin.b[(i, j)], 0.0);
            }
        }
        let sv = pbh.singular_values();
        let scale = sv.max().max(1.0);
        sv.iter().filter(|s| **s > 1e-9 * scale).count() == n
    })
}

/// Euler discretization of `ẋ₁ = x₂`, `ẋ₂ = x₁³ + (x₂² + 1)u` with output `y = x₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicDoubleIntegrator {
    pub dt: f64,
}

impl AffineDynamics for CubicDoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0] + self.dt * x[1], x[1] + self.dt * x[0].powi(3)])
    }

    fn input_gain(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_vec(2, 1, vec![0.0, self.dt * (x[1] * x[1] + 1.0)])
    }

    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0])
    }

    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, self.dt, 3.0 * self.dt * x[0] * x[0], 1.0])
    }
}

pub const BENCHMARK_NAME: &str = "benchmark2d";
pub const BENCHMARK_DT: f64 = 0.1;

/// The two-state cubic benchmark on `X = [−5, 5]²` with `ΔT = 0.1`.
pub fn benchmark_model() -> PlantModel {
    let dt = BENCHMARK_DT;
    let bound = 5.0;
    PlantModel {
        name: BENCHMARK_NAME.to_string(),
        dynamics: Arc::new(CubicDoubleIntegrator { dt }),
        // ‖∂g/∂x‖ = 2·ΔT·|x₂| ≤ 2·ΔT·5 on X.
        mu_g: 2.0 * dt * bound,
        operating_region: Region {
            lower: DVector::from_element(2, -bound),
            upper: DVector::from_element(2, bound),
        },
    }
}

/// Built-in model registry.
pub fn by_name(name: &str) -> Result<PlantModel> {
    match name {
        BENCHMARK_NAME => Ok(benchmark_model()),
        other => Err(Error::InvalidInput(format!("unknown model '{other}'"))),
    }
}

pub fn model_names() -> &'static [&'static str] {
    &[BENCHMARK_NAME]
}
