//! The contractive one-step-ahead control problem at a single state.
//!
//! Decision variables are the input `u` and a symmetric Lyapunov matrix `P`:
//!
//! ```text
//! min  ‖x⁺ − x̄‖²_Qx + ‖u − ū‖²_Qu + V(x, P)²
//! s.t. x⁺ = A x + B u,   P ≻ 0,   V(x⁺, P) − V(x, P) ≤ −θ ‖x − x̄‖
//! ```
//!
//! with `V(x, P) = √|(x − x̄)ᵀ P (x − x̄)|`. Constraints enter the loss as the
//! rectified penalties `G1` (contraction) and `G2` (positive definiteness).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::{linearize, LinearizedDynamics, PlantModel, SteadyStateTarget};

/// `P` is accepted as positive definite only when `λ_min(P) > PD_MARGIN`.
pub const PD_MARGIN: f64 = 1e-9;
/// Residuals closer than this to zero sit on the ReLU kink; their gradient is 0.
pub const KINK_TOL: f64 = 1e-12;
/// Floor on `|eᵀPe|` in the denominator of `∂√s`.
pub const SQRT_GUARD: f64 = 1e-12;
pub const DEFAULT_PENALTY: f64 = 1e4;

/// Symmetric `n × n` matrix stored as its `n(n+1)/2` upper-triangular entries,
/// row-major: `p₁₁, p₁₂, …, p₁ₙ, p₂₂, …, pₙₙ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    params: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn param_count(n: usize) -> usize {
        n * (n + 1) / 2
    }

    /// Position of entry `(i, j)` in the parameter vector.
    pub fn param_index(n: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * i.saturating_sub(1) / 2 + (j - i)
    }

    pub fn new(n: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(n) {
            return Err(Error::InvalidInput(format!(
                "{} parameters cannot form a {n}×{n} symmetric matrix",
                params.len()
            )));
        }
        Ok(Self { n, params })
    }

    /// Parameter count must be triangular; infers `n`.
    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        let mut n = 0;
        while Self::param_count(n) < params.len() {
            n += 1;
        }
        Self::new(n, params)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_dense(&DMatrix::identity(n, n))
    }

    /// Reads the upper triangle of `m`.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut params = Vec::with_capacity(Self::param_count(n));
        for i in 0..n {
            for j in i..n {
                params.push(m[(i, j)]);
            }
        }
        Self { n, params }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                m[(i, j)] = self.params[k];
                m[(j, i)] = self.params[k];
                k += 1;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    /// Whether parameter `k` sits on the diagonal.
    pub fn is_diagonal_param(n: usize, k: usize) -> bool {
        let mut start = 0;
        for i in 0..n {
            if k == start {
                return true;
            }
            start += n - i;
        }
        false
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            n: self.n,
            params: self.params.iter().map(|p| p * alpha).collect(),
        }
    }

    pub fn eigenvalues(&self) -> Result<DVector<f64>> {
        Ok(self.eigen()?.0)
    }

    /// Smallest eigenvalue and a unit eigenvector. On ties the first one the
    /// solver returns wins.
    pub fn min_eigen(&self) -> Result<(f64, DVector<f64>)> {
        let (values, vectors) = self.eigen()?;
        let mut best = 0;
        for k in 1..values.len() {
            if values[k] < values[best] {
                best = k;
            }
        }
        Ok((values[best], vectors.column(best).into_owned()))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.min_eigen()?.0)
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.max())
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.amax())
    }

    fn eigen(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericalFailure("non-finite Lyapunov matrix".into()));
        }
        if self.n == 2 {
            return Ok(eigen_2x2(self.params[0], self.params[1], self.params[2]));
        }
        let eig = self
            .to_dense()
            .try_symmetric_eigen(f64::EPSILON, 10_000)
            .ok_or_else(|| Error::NumericalFailure("symmetric eigen-solve did not converge".into()))?;
        Ok((eig.eigenvalues, eig.eigenvectors))
    }
}

/// Closed-form eigen-decomposition of `[[a, b], [b, c]]`, eigenvalues ascending.
fn eigen_2x2(a: f64, b: f64, c: f64) -> (DVector<f64>, DMatrix<f64>) {
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let radius = half_diff.hypot(b);
    let lo = mean - radius;
    let hi = mean + radius;
    // Eigenvector of `lo`: rotate by the half angle of atan2(2b, a − c).
    let phi = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = phi.sin_cos();
    let v_hi = [co, s];
    let v_lo = [-s, co];
    (
        DVector::from_vec(vec![lo, hi]),
        DMatrix::from_column_slice(2, 2, &[v_lo[0], v_lo[1], v_hi[0], v_hi[1]]),
    )
}

/// Weights and constants shared by every instance in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpWeights {
    pub qx: DMatrix<f64>,
    pub qu: DMatrix<f64>,
    pub theta: f64,
    pub penalty_c: f64,
}

impl OcpWeights {
    /// `Qx = diag{10, 0.1}`, `Qu = 1`, `θ = 0.1`, `c = 10⁴`.
    pub fn benchmark() -> Self {
        Self {
            qx: DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 0.1])),
            qu: DMatrix::from_element(1, 1, 1.0),
            theta: 0.1,
            penalty_c: DEFAULT_PENALTY,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sym_eigs = |m: &DMatrix<f64>, name: &str| -> Result<DVector<f64>> {
            if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                return Err(Error::InvalidInput(format!("{name} must be symmetric")));
            }
            Ok(m.clone().symmetric_eigenvalues())
        };
        if sym_eigs(&self.qx, "Qx")?.min() < -1e-12 {
            return Err(Error::InvalidInput("Qx must be positive semidefinite".into()));
        }
        if sym_eigs(&self.qu, "Qu")?.min() <= 0.0 {
            return Err(Error::InvalidInput("Qu must be positive definite".into()));
        }
        // θ = −∞ switches the contraction constraint off.
        let disabled = self.theta == f64::NEG_INFINITY;
        if !disabled && (!(self.theta > 0.0) || !self.theta.is_finite()) {
            return Err(Error::InvalidInput(format!("theta must be > 0, got {}", self.theta)));
        }
        if !(self.penalty_c > 0.0) || !self.penalty_c.is_finite() {
            return Err(Error::InvalidInput(format!(
                "penalty constant must be > 0, got {}",
                self.penalty_c
            )));
        }
        Ok(())
    }
}

/// One instance of the control problem at state `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpInstance {
    pub lin: LinearizedDynamics,
    pub target: SteadyStateTarget,
    pub weights: OcpWeights,
    pub x: DVector<f64>,
}

impl OcpInstance {
    pub fn new(
        lin: LinearizedDynamics,
        target: SteadyStateTarget,
        weights: OcpWeights,
        x: DVector<f64>,
    ) -> Result<Self> {
        weights.validate()?;
        let n = x.len();
        let q = lin.b.ncols();
        if lin.a.shape() != (n, n)
            || lin.b.nrows() != n
            || target.x_bar.len() != n
            || target.u_bar.len() != q
            || weights.qx.shape() != (n, n)
            || weights.qu.shape() != (q, q)
        {
            return Err(Error::InvalidInput("problem dimensions disagree".into()));
        }
        Ok(Self {
            lin,
            target,
            weights,
            x,
        })
    }

    /// Linearizes `model` at `x` and builds the instance for `target`.
    pub fn at(model: &PlantModel, x: &DVector<f64>, target: &SteadyStateTarget, weights: &OcpWeights) -> Result<Self> {
        Self::new(linearize(model, x)?, target.clone(), weights.clone(), x.clone())
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn q(&self) -> usize {
        self.lin.b.ncols()
    }

    /// `x − x̄`
    pub fn error(&self) -> DVector<f64> {
        &self.x - &self.target.x_bar
    }
}

/// Candidate decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpPoint {
    pub u: DVector<f64>,
    pub p: SymmetricMatrix,
}

impl OcpPoint {
    pub fn new(u: DVector<f64>, p: SymmetricMatrix) -> Self {
        Self { u, p }
    }

    /// Flat vector `[u; params(P)]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.u.iter().chain(self.p.params()).copied().collect()
    }

    pub fn from_flat(q: usize, n: usize, flat: &[f64]) -> Self {
        Self {
            u: DVector::from_column_slice(&flat[..q]),
            p: SymmetricMatrix {
                n,
                params: flat[q..].to_vec(),
            },
        }
    }
}

/// `eᵀ M e` for symmetric `M` given as parameters, without building the dense matrix.
fn quad_form(p: &SymmetricMatrix, e: &DVector<f64>) -> f64 {
    let n = p.n;
    let mut acc = 0.0;
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let w = if i == j { 1.0 } else { 2.0 };
            acc += w * p.params[k] * e[i] * e[j];
            k += 1;
        }
    }
    acc
}

/// `‖x − x̄‖_P = √|eᵀPe|`.
pub fn lyapunov_value(x: &DVector<f64>, target: &SteadyStateTarget, p: &SymmetricMatrix) -> f64 {
    quad_form(p, &(x - &target.x_bar)).abs().sqrt()
}

/// `A x + B u`
pub fn predict_linear(lin: &LinearizedDynamics, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    &lin.a * x + &lin.b * u
}

fn weighted_sq(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

pub fn objective(inst: &OcpInstance, pt: &OcpPoint) -> f64 {
    let x_plus = predict_linear(&inst.lin, &inst.x, &pt.u);
    let e_plus = &x_plus - &inst.target.x_bar;
    let du = &pt.u - &inst.target.u_bar;
    weighted_sq(&inst.weights.qx, &e_plus)
        + weighted_sq(&inst.weights.qu, &du)
        + quad_form(&pt.p, &inst.error()).abs()
}

/// `V(x⁺) − V(x) + θ‖x − x̄‖`; the constraint holds iff this is `≤ 0`.
pub fn contractive_residual(inst: &OcpInstance, pt: &OcpPoint) -> f64 {
    let x_plus = predict_linear(&inst.lin, &inst.x, &pt.u);
    let v_plus = lyapunov_value(&x_plus, &inst.target, &pt.p);
    let v_now = lyapunov_value(&inst.x, &inst.target, &pt.p);
    let e_norm = inst.error().norm();
    // Avoid −∞·0 when the constraint is switched off at the target.
    let contraction = if e_norm == 0.0 { 0.0 } else { inst.weights.theta * e_norm };
    v_plus - v_now + contraction
}

/// `c · max(0, residual)`
pub fn relu_penalty(residual: f64, c: f64) -> f64 {
    if residual > 0.0 {
        c * residual
    } else {
        0.0
    }
}

pub fn penalty_g1(inst: &OcpInstance, pt: &OcpPoint) -> f64 {
    relu_penalty(contractive_residual(inst, pt), inst.weights.penalty_c)
}

/// Positive-definiteness penalty as a function of `λ_min`.
pub fn pd_penalty(lambda_min: f64, c: f64) -> f64 {
    if lambda_min > PD_MARGIN {
        0.0
    } else if lambda_min >= 0.0 {
        c * (PD_MARGIN - lambda_min)
    } else {
        c * lambda_min.abs()
    }
}

pub fn penalty_g2(p: &SymmetricMatrix, c: f64) -> Result<f64> {
    Ok(pd_penalty(p.min_eigenvalue()?, c))
}

/// All loss terms at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub objective: f64,
    pub residual: f64,
    pub g1: f64,
    pub g2: f64,
    pub lambda_min: f64,
}

impl LossTerms {
    pub fn loss(&self) -> f64 {
        self.objective + self.g1 + self.g2
    }

    /// Both penalties within `tol_rel · c`.
    pub fn is_feasible(&self, c: f64) -> bool {
        self.g1 <= FEASIBILITY_TOL * c && self.g2 <= FEASIBILITY_TOL * c && self.lambda_min > 0.0
    }
}

/// Relative (to `c`) tolerance on each penalty for a point to count as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

pub fn evaluate(inst: &OcpInstance, pt: &OcpPoint) -> Result<LossTerms> {
    let c = inst.weights.penalty_c;
    let residual = contractive_residual(inst, pt);
    let lambda_min = pt.p.min_eigenvalue()?;
    Ok(LossTerms {
        objective: objective(inst, pt),
        residual,
        g1: relu_penalty(residual, c),
        g2: pd_penalty(lambda_min, c),
        lambda_min,
    })
}

pub fn nom_loss(inst: &OcpInstance, pt: &OcpPoint) -> Result<f64> {
    Ok(evaluate(inst, pt)?.loss())
}

/// Gradient of the NOM loss with respect to `u` and the parameters of `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub u: DVector<f64>,
    pub p: Vec<f64>,
}

impl LossGradient {
    pub fn to_flat(&self) -> Vec<f64> {
        self.u.iter().chain(&self.p).copied().collect()
    }
}

/// Adds `scale · e eᵀ` to a dense-gradient accumulator stored as parameters,
/// doubling off-diagonal entries because each appears twice in the dense matrix.
fn accumulate_outer(acc: &mut [f64], e: &DVector<f64>, scale: f64) {
    let n = e.len();
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let w = if i == j { 1.0 } else { 2.0 };
            acc[k] += w * scale * e[i] * e[j];
            k += 1;
        }
    }
}

/// `d√|s| / ds`, zero at `s = 0`.
fn sqrt_abs_derivative(s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.signum() / (2.0 * s.abs().max(SQRT_GUARD).sqrt())
    }
}

pub fn loss_gradient(inst: &OcpInstance, pt: &OcpPoint) -> Result<LossGradient> {
    Ok(loss_and_gradient(inst, pt)?.1)
}

/// Loss terms and gradient in a single pass.
pub fn loss_and_gradient(inst: &OcpInstance, pt: &OcpPoint) -> Result<(LossTerms, LossGradient)> {
    let w = &inst.weights;
    let c = w.penalty_c;
    let e = inst.error();
    let x_plus = predict_linear(&inst.lin, &inst.x, &pt.u);
    let e_plus = &x_plus - &inst.target.x_bar;
    let du = &pt.u - &inst.target.u_bar;

    let s_now = quad_form(&pt.p, &e);
    let s_plus = quad_form(&pt.p, &e_plus);
    let e_norm = e.norm();
    let contraction = if e_norm == 0.0 { 0.0 } else { w.theta * e_norm };
    let residual = s_plus.abs().sqrt() - s_now.abs().sqrt() + contraction;
    let (lambda_min, v_min) = pt.p.min_eigen()?;

    let terms = LossTerms {
        objective: weighted_sq(&w.qx, &e_plus) + weighted_sq(&w.qu, &du) + s_now.abs(),
        residual,
        g1: relu_penalty(residual, c),
        g2: pd_penalty(lambda_min, c),
        lambda_min,
    };

    // Objective.
    let mut grad_u = 2.0 * inst.lin.b.transpose() * (&w.qx * &e_plus) + 2.0 * (&w.qu * &du);
    let mut grad_p = vec![0.0; pt.p.params.len()];
    accumulate_outer(&mut grad_p, &e, s_now.signum() * (s_now != 0.0) as u8 as f64);

    // G1: active strictly beyond the kink.
    if residual > KINK_TOL {
        let d_plus = sqrt_abs_derivative(s_plus);
        let d_now = sqrt_abs_derivative(s_now);
        // ∂s⁺/∂u = 2 Bᵀ P e⁺
        let pe_plus = pt.p.to_dense() * &e_plus;
        grad_u += (2.0 * c * d_plus) * (inst.lin.b.transpose() * pe_plus);
        accumulate_outer(&mut grad_p, &e_plus, c * d_plus);
        accumulate_outer(&mut grad_p, &e, -c * d_now);
    }

    // G2: ∂λ_min/∂P = v vᵀ for a simple eigenvalue.
    if lambda_min <= PD_MARGIN {
        accumulate_outer(&mut grad_p, &v_min, -c);
    }

    Ok((terms, LossGradient { u: grad_u, p: grad_p }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{benchmark_model, linearize};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn origin_target() -> SteadyStateTarget {
        SteadyStateTarget {
            r: v(&[0.0]),
            x_bar: v(&[0.0, 0.0]),
            u_bar: v(&[0.0]),
        }
    }

    fn bench_instance(x: &[f64]) -> OcpInstance {
        let model = benchmark_model();
        let x = v(x);
        OcpInstance::new(
            linearize(&model, &x).unwrap(),
            origin_target(),
            OcpWeights::benchmark(),
            x,
        )
        .unwrap()
    }

    fn pt(u: f64, p: &[f64]) -> OcpPoint {
        OcpPoint::new(v(&[u]), SymmetricMatrix::new(2, p.to_vec()).unwrap())
    }

    #[test]
    fn symmetric_layout() {
        let p = SymmetricMatrix::new(3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let d = p.to_dense();
        assert_eq!(d, DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]));
        assert_eq!(SymmetricMatrix::from_dense(&d), p);
        assert!(SymmetricMatrix::new(3, vec![1.0; 5]).is_err());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p.params()[SymmetricMatrix::param_index(3, i, j)], d[(i, j)]);
            }
        }
        let diag: Vec<usize> = (0..6).filter(|&k| SymmetricMatrix::is_diagonal_param(3, k)).collect();
        assert_eq!(diag, vec![0, 3, 5]);
        assert_eq!(SymmetricMatrix::from_params(vec![0.0; 6]).unwrap().dim(), 3);
    }

    #[test]
    fn closed_form_eigen_matches_general_solver() {
        for (a, b, c) in [(2.0, 1.0, 2.0), (1.0, 0.0, -2.0), (0.3, -4.0, 7.0), (1.0, 0.0, 1.0), (-1.0, 1e-9, 5.0)] {
            let (vals, vecs) = eigen_2x2(a, b, c);
            let m = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
            let mut reference: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
            reference.sort_by(f64::total_cmp);
            assert_relative_eq!(vals[0], reference[0], epsilon = 1e-12);
            assert_relative_eq!(vals[1], reference[1], epsilon = 1e-12);
            for k in 0..2 {
                let col = vecs.column(k).into_owned();
                assert_relative_eq!(&m * &col, vals[k] * &col, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lyapunov_value_examples() {
        let t = origin_target();
        let id = SymmetricMatrix::identity(2);
        assert_eq!(lyapunov_value(&v(&[1.0, 0.0]), &t, &id), 1.0);
        let p = pt(0.0, &[2.0, 1.0, 2.0]).p;
        assert_eq!(lyapunov_value(&v(&[0.0, 0.0]), &t, &p), 0.0);
        let dense = p.to_dense();
        let x = v(&[1.0, 1.0]);
        assert_relative_eq!(lyapunov_value(&x, &t, &p), x.dot(&(dense * &x)).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(lyapunov_value(&x, &t, &p), 6f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn predict_linear_examples() {
        let ident = LinearizedDynamics {
            a: DMatrix::identity(2, 2),
            b: DMatrix::zeros(2, 1),
            x0: v(&[0.0, 0.0]),
            residual_delta: 0.0,
        };
        assert_eq!(predict_linear(&ident, &v(&[3.0, -1.0]), &v(&[5.0])), v(&[3.0, -1.0]));
        let inst = bench_instance(&[1.0, 0.0]);
        assert_relative_eq!(predict_linear(&inst.lin, &inst.x, &v(&[0.0])), v(&[1.0, 0.3]), epsilon = 1e-15);
        let inst0 = bench_instance(&[0.0, 0.0]);
        assert_relative_eq!(predict_linear(&inst0.lin, &inst0.x, &v(&[1.0])), v(&[0.0, 0.1]), epsilon = 1e-15);
    }

    /// Dense-algebra evaluation of the objective, independent of `quad_form`.
    fn dense_objective(inst: &OcpInstance, p: &OcpPoint) -> f64 {
        let xp = &inst.lin.a * &inst.x + &inst.lin.b * &p.u;
        let ep = xp - &inst.target.x_bar;
        let du = &p.u - &inst.target.u_bar;
        let e = inst.error();
        (ep.transpose() * &inst.weights.qx * &ep)[0]
            + (du.transpose() * &inst.weights.qu * &du)[0]
            + (e.transpose() * p.p.to_dense() * &e)[0].abs()
    }

    #[test]
    fn objective_examples() {
        let at_target = bench_instance(&[0.0, 0.0]);
        assert_eq!(objective(&at_target, &pt(0.0, &[3.0, 1.0, 2.0])), 0.0);

        let inst = bench_instance(&[1.0, 0.0]);
        let p0 = pt(0.0, &[1.0, 0.0, 1.0]);
        assert_relative_eq!(objective(&inst, &p0), 11.009, epsilon = 1e-12);
        assert_relative_eq!(objective(&inst, &p0), dense_objective(&inst, &p0), epsilon = 1e-12);
        let p3 = pt(-3.0, &[1.0, 0.0, 1.0]);
        assert_relative_eq!(objective(&inst, &p3), 20.0, epsilon = 1e-12);
        assert_relative_eq!(objective(&inst, &p3), dense_objective(&inst, &p3), epsilon = 1e-12);
    }

    #[test]
    fn contractive_residual_examples() {
        let at_target = bench_instance(&[0.0, 0.0]);
        assert_eq!(contractive_residual(&at_target, &pt(0.0, &[1.0, 0.0, 1.0])), 0.0);

        let inst = bench_instance(&[1.0, 0.0]);
        let r0 = contractive_residual(&inst, &pt(0.0, &[1.0, 0.0, 1.0]));
        assert_relative_eq!(r0, 1.09f64.sqrt() - 1.0 + 0.1, epsilon = 1e-12);
        assert_relative_eq!(r0, 0.144030650891055, epsilon = 1e-12);
        assert_relative_eq!(contractive_residual(&inst, &pt(-3.0, &[1.0, 0.0, 1.0])), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(relu_penalty(-0.2, 1e4), 0.0);
        assert_relative_eq!(relu_penalty(0.1, 1e4), 1000.0, epsilon = 1e-9);
        assert_eq!(relu_penalty(0.0, 123.0), 0.0);

        assert_eq!(penalty_g2(&SymmetricMatrix::identity(2), 1e4).unwrap(), 0.0);
        // diag{1, −2}: characteristic polynomial (1 − λ)(−2 − λ), λ_min = −2
        assert_relative_eq!(penalty_g2(&pt(0.0, &[1.0, 0.0, -2.0]).p, 1e4).unwrap(), 2e4, epsilon = 1e-9);
        // PSD boundary is shifted by the margin.
        assert_relative_eq!(penalty_g2(&pt(0.0, &[1.0, 0.0, 0.0]).p, 1e4).unwrap(), 1e4 * PD_MARGIN, epsilon = 1e-18);
        assert!(penalty_g2(&pt(0.0, &[f64::NAN, 0.0, 1.0]).p, 1.0).is_err());
    }

    #[test]
    fn nom_loss_examples() {
        let inst = bench_instance(&[1.0, 0.0]);
        let loss = nom_loss(&inst, &pt(0.0, &[1.0, 0.0, 1.0])).unwrap();
        assert_relative_eq!(loss, 11.009 + 1e4 * (1.09f64.sqrt() - 0.9), epsilon = 1e-9);
        assert!((loss - 1451.3).abs() < 0.05);

        let at_target = bench_instance(&[0.0, 0.0]);
        assert_eq!(nom_loss(&at_target, &pt(0.0, &[1.0, 0.0, 1.0])).unwrap(), 0.0);

        // x⁺ = [0.1, 0.8] with P = I: residual ≈ −0.094.
        let feasible = bench_instance(&[0.0, 1.0]);
        let p = pt(-1.0, &[1.0, 0.0, 1.0]);
        let terms = evaluate(&feasible, &p).unwrap();
        assert!(terms.residual < 0.0);
        assert_eq!(nom_loss(&feasible, &p).unwrap(), objective(&feasible, &p));
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let inst = bench_instance(&[0.0, 0.0]);
        let g = loss_gradient(&inst, &pt(0.0, &[1.0, 0.0, 1.0])).unwrap();
        assert!(g.u.iter().chain(&g.p).all(|x| *x == 0.0));
    }

    #[test]
    fn g2_gradient_matches_finite_differences() {
        let p = pt(0.0, &[1.0, 0.4, -2.0]).p;
        let c = 1e4;
        let (_, vmin) = p.min_eigen().unwrap();
        let mut grad = vec![0.0; 3];
        accumulate_outer(&mut grad, &vmin, -c);
        for k in 0..3 {
            let h = 1e-6;
            let mut plus = p.params.clone();
            let mut minus = p.params.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (penalty_g2(&SymmetricMatrix::new(2, plus).unwrap(), c).unwrap()
                - penalty_g2(&SymmetricMatrix::new(2, minus).unwrap(), c).unwrap())
                / (2.0 * h);
            assert_relative_eq!(grad[k], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn validation_rejects_bad_weights() {
        let mut w = OcpWeights::benchmark();
        assert!(w.validate().is_ok());
        w.theta = 0.0;
        assert!(w.validate().is_err());
        let mut w = OcpWeights::benchmark();
        w.qu = DMatrix::from_element(1, 1, 0.0);
        assert!(w.validate().is_err());
        let mut w = OcpWeights::benchmark();
        w.qx = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(w.validate().is_err());
    }
}
