//! Primal log-barrier interior-point method for smooth convex objectives over
//! `{x : A x ≤ b}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait ConvexObjective {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `f(x) = cᵀx`.
pub struct Linear(pub DVector<f64>);

impl ConvexObjective for Linear {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.0.dot(x)
    }
    fn gradient(&self, _: &DVector<f64>) -> DVector<f64> {
        self.0.clone()
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// Affine inequalities `A x ≤ b` with rows scaled to unit Euclidean norm so
/// slacks are distances to the constraint planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Polyhedron {
    /// Rows must be nonzero; the caller decides what an all-zero row means.
    pub fn new(dim: usize, rows: &[(Vec<f64>, f64)]) -> Result<Self> {
        let mut a = DMatrix::zeros(rows.len(), dim);
        let mut b = DVector::zeros(rows.len());
        for (i, (coef, rhs)) in rows.iter().enumerate() {
            if coef.len() != dim {
                return Err(Error::input("rows", format!("row {i} has {} coefficients, expected {dim}", coef.len())));
            }
            let n = coef.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite() && rhs.is_finite()) {
                return Err(Error::input("rows", format!("row {i} is zero or not finite")));
            }
            for (j, c) in coef.iter().enumerate() {
                a[(i, j)] = c / n;
            }
            b[i] = rhs / n;
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * x
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Same rows with a shared slack variable appended: `A x − s ≤ b`.
    fn lifted(&self) -> Self {
        let (m, n) = self.a.shape();
        let mut a = self.a.clone().insert_column(n, 0.0);
        for i in 0..m {
            a[(i, n)] = -1.0;
        }
        Self { a, b: self.b.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierSettings {
    /// Initial barrier weight μ₀.
    pub mu0: f64,
    /// μ is divided by this after every centering stage.
    pub mu_factor: f64,
    /// Stop once the duality-gap bound `m·μ` falls below this.
    pub gap_tol: f64,
    /// Centering stops when half the squared Newton decrement of `f/μ + φ`
    /// is below this.
    pub newton_tol: f64,
    pub max_newton_steps: usize,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self { mu0: 1.0, mu_factor: 10.0, gap_tol: 1e-8, newton_tol: 1e-12, max_newton_steps: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSolution {
    pub x: DVector<f64>,
    /// Estimated Lagrange multipliers `μ / sᵢ`.
    pub multipliers: DVector<f64>,
    /// `‖∇f + Aᵀλ‖∞ / max(1, ‖∇f‖∞)`.
    pub stationarity: f64,
    /// `max λᵢ sᵢ`, equal to the final μ.
    pub complementarity: f64,
    pub newton_steps: usize,
}

impl BarrierSolution {
    pub fn kkt_residual(&self) -> f64 {
        self.stationarity.max(self.complementarity)
    }
}

const ARMIJO: f64 = 0.25;
const BACKTRACK: f64 = 0.5;

/// Cholesky solve, retried with a growing ridge when the system is
/// numerically singular (flat directions of a non-unique optimum), then LU.
fn solve_spd(h: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = h.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-14 * scale;
    while ridge <= 1e-6 * scale {
        let mut reg = h.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        if let Some(chol) = reg.cholesky() {
            return Ok(chol.solve(rhs));
        }
        ridge *= 100.0;
    }
    h.lu().solve(rhs).ok_or_else(|| Error::Solver("singular Newton system".into()))
}

/// Minimizes `f` over the polyhedron from a strictly feasible `x0`.
pub fn minimize<F: ConvexObjective>(
    f: &F,
    poly: &Polyhedron,
    x0: DVector<f64>,
    settings: &BarrierSettings,
) -> Result<BarrierSolution> {
    let m = poly.num_rows() as f64;
    let a = poly.matrix();
    let mut x = x0;
    if poly.slack(&x).iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Solver("barrier start is not strictly feasible".into()));
    }
    let phi = |x: &DVector<f64>, mu: f64| -> f64 {
        let s = poly.slack(x);
        if s.iter().any(|&v| !(v > 0.0)) {
            return f64::INFINITY;
        }
        f.value(x) - mu * s.iter().map(|v| v.ln()).sum::<f64>()
    };
    let mut mu = settings.mu0;
    let mut steps = 0usize;
    loop {
        // centering
        loop {
            let s = poly.slack(&x);
            let inv: DVector<f64> = s.map(|v| 1.0 / v);
            let grad = f.gradient(&x) + a.transpose() * inv.scale(mu);
            let mut hess = f.hessian(&x);
            let weighted = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * inv[i]);
            hess += weighted.transpose() * &weighted * mu;
            let dx = solve_spd(hess, &(-&grad))?;
            let decrement = -grad.dot(&dx);
            if !(decrement.is_finite()) {
                return Err(Error::Solver("non-finite Newton decrement".into()));
            }
            if decrement * 0.5 <= settings.newton_tol * mu {
                break;
            }
            steps += 1;
            if steps > settings.max_newton_steps {
                return Err(Error::Solver(format!("no convergence after {steps} Newton steps")));
            }
            let current = phi(&x, mu);
            if decrement * 0.5 <= 1e-15 * current.abs().max(1.0) {
                // Progress is below the resolution of φ, so the line search
                // would only see rounding. One full step polishes the center.
                let cand = &x + &dx;
                if poly.slack(&cand).iter().all(|&v| v > 0.0) {
                    x = cand;
                }
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            // stop once the demanded decrease is below the resolution of φ,
            // where rounding alone would satisfy the test
            while ARMIJO * t * decrement > f64::EPSILON * current.abs() {
                let cand = &x + dx.scale(t);
                let v = phi(&cand, mu);
                if v <= current - ARMIJO * t * decrement {
                    x = cand;
                    accepted = true;
                    break;
                }
                t *= BACKTRACK;
            }
            if !accepted {
                // no further progress is representable at this μ
                break;
            }
        }
        if m * mu <= settings.gap_tol || m == 0.0 {
            break;
        }
        mu /= settings.mu_factor;
    }
    let s = poly.slack(&x);
    let gf = f.gradient(&x);
    let barrier_estimate: DVector<f64> = s.map(|v| mu / v);
    let mut best = kkt_terms(a, &s, &gf, barrier_estimate);
    if let Some(refined) = refine_multipliers(a, &s, &gf, mu) {
        let cand = kkt_terms(a, &s, &gf, refined);
        if cand.1.max(cand.2) < best.1.max(best.2) {
            best = cand;
        }
    }
    let (multipliers, stationarity, complementarity) = best;
    Ok(BarrierSolution { x, multipliers, stationarity, complementarity, newton_steps: steps })
}

fn kkt_terms(a: &DMatrix<f64>, s: &DVector<f64>, gf: &DVector<f64>, lambda: DVector<f64>) -> (DVector<f64>, f64, f64) {
    let stationarity = (gf + a.transpose() * &lambda).amax() / gf.amax().max(1.0);
    let complementarity = lambda.iter().zip(s.iter()).map(|(l, v)| l * v).fold(0.0, f64::max);
    (lambda, stationarity, complementarity)
}

/// `μ/sᵢ` loses relative accuracy once slacks approach the rounding level of
/// `x`. Re-fits the multipliers of the rows that are active at this μ by
/// least squares against the rest of the stationarity residual. `None` if
/// any comes out negative.
fn refine_multipliers(a: &DMatrix<f64>, s: &DVector<f64>, gf: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let active: Vec<usize> = (0..s.len()).filter(|&i| s[i] <= 1e3 * mu).collect();
    if active.is_empty() {
        return None;
    }
    let mut lambda: DVector<f64> = s.map(|v| mu / v);
    for &i in &active {
        lambda[i] = 0.0;
    }
    let rest = gf + a.transpose() * &lambda;
    let at = DMatrix::from_fn(a.ncols(), active.len(), |j, c| a[(active[c], j)]);
    let fitted = at.svd(true, true).solve(&(-rest), 1e-12).ok()?;
    if fitted.iter().any(|&l| l < 0.0) {
        return None;
    }
    for (c, &i) in active.iter().enumerate() {
        lambda[i] = fitted[c];
    }
    Some(lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOne {
    pub x: DVector<f64>,
    /// Optimal largest constraint violation; negative means strictly feasible.
    pub max_violation: f64,
}

impl PhaseOne {
    pub fn strictly_feasible(&self) -> bool {
        self.max_violation < -PHASE_ONE_MARGIN
    }
}

/// Interiors thinner than this are treated as empty.
pub const PHASE_ONE_MARGIN: f64 = 1e-12;

/// Finds the point that maximizes the smallest slack. The polyhedron must
/// keep the lifted problem bounded below, which holds whenever it contains a
/// bounded set of rows such as a simplex.
pub fn phase_one(poly: &Polyhedron, x0: DVector<f64>, settings: &BarrierSettings) -> Result<PhaseOne> {
    let n = poly.dim();
    let lifted = poly.lifted();
    let worst = (-poly.slack(&x0)).max();
    let s0 = if poly.num_rows() == 0 { 0.0 } else { worst.max(0.0) + 1.0 };
    let z0 = x0.insert_row(n, s0);
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let sol = minimize(&Linear(c), &lifted, z0, settings)?;
    let x = sol.x.rows(0, n).into_owned();
    // report the actual violation at x, which can only be smaller than s
    let max_violation = (-poly.slack(&x)).max();
    Ok(PhaseOne { x, max_violation })
}
