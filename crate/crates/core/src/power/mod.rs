//! Rate kernel and stage-two power allocation.
//!
//! Users inside a group are listed in decoding order, strongest first. User
//! `k` sees intra-group interference from the users listed before it and
//! removes the ones listed after it by SIC.

pub mod barrier;
mod sca;

pub use sca::{
    allocate_power, sca_power_allocation, solve_subproblem, Allocation, PowerConfig, PowerProblem, ScaOutcome,
    ScaTraceRow, SubproblemSolution, SCA_TRACE_HEADER,
};

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// Stage-one scheduling `u*`: which users ride on which RF chain, in
/// decoding order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleMask {
    num_users: usize,
    groups: Vec<Vec<usize>>,
}

impl ScheduleMask {
    /// Each group holds one or two distinct users and every user appears at
    /// most once.
    pub fn new(num_users: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; num_users];
        for (r, g) in groups.iter().enumerate() {
            if g.is_empty() || g.len() > 2 {
                return Err(Error::input("groups", format!("chain {r} carries {} users, expected 1 or 2", g.len())));
            }
            for &k in g {
                if k >= num_users {
                    return Err(Error::input("groups", format!("user {k} out of range for {num_users} users")));
                }
                if std::mem::replace(&mut seen[k], true) {
                    return Err(Error::input("groups", format!("user {k} scheduled twice")));
                }
            }
        }
        Ok(Self { num_users, groups })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_chains(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn u(&self, k: usize, r: usize) -> bool {
        self.groups.get(r).is_some_and(|g| g.contains(&k))
    }

    pub fn chain_of(&self, k: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&k))
    }

    /// The binary `K × N_RF` matrix.
    pub fn u_star(&self) -> DMatrix<u8> {
        DMatrix::from_fn(self.num_users, self.groups.len(), |k, r| u8::from(self.u(k, r)))
    }

    /// Scheduled `(user, chain)` pairs, chain by chain in decoding order.
    pub fn variables(&self) -> Vec<(usize, usize)> {
        self.groups.iter().enumerate().flat_map(|(r, g)| g.iter().map(move |&k| (k, r))).collect()
    }

    /// `(strong, weak, chain)` for every SIC decoding relation.
    pub fn sic_pairs(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (r, g) in self.groups.iter().enumerate() {
            for a in 0..g.len() {
                for b in a + 1..g.len() {
                    out.push((g[a], g[b], r));
                }
            }
        }
        out
    }

    /// Re-sorts the listed chains by descending effective gain.
    pub fn reordered_by_gain(&self, chains: &[usize], gains: &LinkGains) -> Self {
        let mut groups = self.groups.clone();
        for &r in chains {
            groups[r].sort_by(|&x, &y| gains.get(y, r).total_cmp(&gains.get(x, r)).then(x.cmp(&y)));
        }
        Self { num_users: self.num_users, groups }
    }
}

/// `a_{k,r} = |h̃_kᴴ g_r|²`, the power gain from chain `r` to user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    a: DMatrix<f64>,
}

impl LinkGains {
    /// `h_eff` is `N_RF × K` (one effective channel per column) and `g` is
    /// the `N_RF × N` digital precoder.
    pub fn new(h_eff: &CMatrix, g: &CMatrix) -> Result<Self> {
        if h_eff.nrows() != g.nrows() {
            return Err(Error::input("g", format!("{} rows, effective channels have {}", g.nrows(), h_eff.nrows())));
        }
        Ok(Self { a: (h_eff.adjoint() * g).map(|z| z.norm_sqr()) })
    }

    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::input("gains", "entries must be finite and nonnegative"));
        }
        Ok(Self { a })
    }

    pub fn get(&self, k: usize, r: usize) -> f64 {
        self.a[(k, r)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn check(&self, mask: &ScheduleMask) -> Result<()> {
        if self.a.nrows() != mask.num_users() || self.a.ncols() < mask.num_chains() {
            return Err(Error::input(
                "gains",
                format!("{}x{} gains for {} users on {} chains", self.a.nrows(), self.a.ncols(), mask.num_users(), mask.num_chains()),
            ));
        }
        Ok(())
    }
}

/// `p_{k,r}` in milliwatts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerVector {
    p: DMatrix<f64>,
}

impl PowerVector {
    pub fn zeros(num_users: usize, num_chains: usize) -> Self {
        Self { p: DMatrix::zeros(num_users, num_chains) }
    }

    pub fn from_matrix(p: DMatrix<f64>) -> Self {
        Self { p }
    }

    /// Scatters values of the scheduled variables (ordered as
    /// [`ScheduleMask::variables`]) into a full matrix.
    pub fn from_variables(mask: &ScheduleMask, values: &[f64]) -> Self {
        let mut p = DMatrix::zeros(mask.num_users(), mask.num_chains());
        for (&(k, r), &v) in mask.variables().iter().zip(values) {
            p[(k, r)] = v;
        }
        Self { p }
    }

    pub fn variables(&self, mask: &ScheduleMask) -> Vec<f64> {
        mask.variables().iter().map(|&(k, r)| self.p[(k, r)]).collect()
    }

    pub fn get(&self, k: usize, r: usize) -> f64 {
        self.p[(k, r)]
    }

    pub fn set(&mut self, k: usize, r: usize, v: f64) {
        self.p[(k, r)] = v;
    }

    pub fn total(&self) -> f64 {
        self.p.sum()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SicRate {
    /// The user performing SIC.
    pub strong: usize,
    /// The user whose message is decoded and removed.
    pub weak: usize,
    pub chain: usize,
    /// Rate at which `strong` can decode `weak`'s message, bits/s/Hz.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `R_{k,r}`, zero off the schedule.
    pub individual: DMatrix<f64>,
    pub sic: Vec<SicRate>,
    pub per_user: Vec<f64>,
    pub sum: f64,
}

impl RateReport {
    /// Smallest `R_{k,i,r} − R_{i,r}` over all SIC relations; `+∞` without
    /// any pair.
    pub fn sic_margin(&self) -> f64 {
        self.sic
            .iter()
            .map(|s| s.rate - self.individual[(s.weak, s.chain)])
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest `R_k − R_min,k` over scheduled users.
    pub fn qos_margin(&self, mask: &ScheduleMask, r_min: &[f64]) -> f64 {
        mask.variables()
            .iter()
            .map(|&(k, _)| self.per_user[k] - r_min[k])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Inter-group interference at user `k` served on chain `r`.
fn inter(p: &PowerVector, mask: &ScheduleMask, gains: &LinkGains, k: usize, r: usize) -> f64 {
    mask.groups()
        .iter()
        .enumerate()
        .filter(|&(rr, _)| rr != r)
        .map(|(rr, g)| gains.get(k, rr) * g.iter().map(|&d| p.get(d, rr)).sum::<f64>())
        .sum()
}

/// Individual rates, SIC decoding rates and the sum-rate at power `p`.
pub fn rate_report(p: &PowerVector, mask: &ScheduleMask, gains: &LinkGains, noise_mw: f64) -> Result<RateReport> {
    gains.check(mask)?;
    let k_total = mask.num_users();
    let mut individual = DMatrix::zeros(k_total, mask.num_chains());
    let mut sic = Vec::new();
    for (r, g) in mask.groups().iter().enumerate() {
        for (pos, &k) in g.iter().enumerate() {
            let a = gains.get(k, r);
            let i_inter = inter(p, mask, gains, k, r);
            let before = |upto: usize| g[..upto].iter().map(|&d| p.get(d, r)).sum::<f64>();
            individual[(k, r)] = (1.0 + p.get(k, r) * a / (i_inter + a * before(pos) + noise_mw)).log2();
            for (wpos, &i) in g.iter().enumerate().skip(pos + 1) {
                let rate = (1.0 + p.get(i, r) * a / (i_inter + a * before(wpos) + noise_mw)).log2();
                sic.push(SicRate { strong: k, weak: i, chain: r, rate });
            }
        }
    }
    let per_user: Vec<f64> = (0..k_total).map(|k| individual.row(k).sum()).collect();
    let sum = per_user.iter().sum();
    Ok(RateReport { individual, sic, per_user, sum })
}

/// The two convex parts of `−R_sum = H1 − H2` and the gradient of `H2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcParts {
    pub h1: f64,
    pub h2: f64,
    /// `∂H2/∂p_{k,r}`, zero off the schedule.
    pub grad_h2: PowerVector,
}

/// Affine interference model over the scheduled variables: `D2_j(p) = σ² +
/// Σᵢ c_{ji} pᵢ` is what variable `j`'s user sees besides its own signal and
/// `D1_j = D2_j + own_j·p_j`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DcModel {
    pub vars: Vec<(usize, usize)>,
    pub own: DVector<f64>,
    pub c2: DMatrix<f64>,
    /// Inter-group part of `c2` only.
    pub inter: DMatrix<f64>,
    pub noise: f64,
}

impl DcModel {
    /// Coefficients scaled by `scale`, so that with `scale = p_BS/σ²` and
    /// `noise = 1` the model works on normalized powers `p/p_BS`.
    pub fn new(mask: &ScheduleMask, gains: &LinkGains, scale: f64, noise: f64) -> Self {
        let vars = mask.variables();
        let n = vars.len();
        let mut c2 = DMatrix::zeros(n, n);
        let mut inter = DMatrix::zeros(n, n);
        let position = |k: usize, r: usize| mask.groups()[r].iter().position(|&u| u == k).unwrap_or(usize::MAX);
        for (j, &(k, r)) in vars.iter().enumerate() {
            for (i, &(d, rr)) in vars.iter().enumerate() {
                if rr != r {
                    inter[(j, i)] = gains.get(k, rr) * scale;
                    c2[(j, i)] = inter[(j, i)];
                } else if position(d, r) < position(k, r) {
                    c2[(j, i)] = gains.get(k, r) * scale;
                }
            }
        }
        let own = DVector::from_iterator(n, vars.iter().map(|&(k, r)| gains.get(k, r) * scale));
        Self { vars, own, c2, inter, noise }
    }

    pub fn d2(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.c2 * x).add_scalar(self.noise)
    }

    pub fn d1(&self, x: &DVector<f64>) -> DVector<f64> {
        self.d2(x) + self.own.component_mul(x)
    }

    /// `Σ_j log2 D1_j(x) − log2 D2_j(x)`.
    pub fn sum_rate(&self, x: &DVector<f64>) -> f64 {
        let d1 = self.d1(x);
        let d2 = self.d2(x);
        d1.iter().zip(d2.iter()).map(|(a, b)| (a / b).log2()).sum()
    }

    pub fn h1(&self, x: &DVector<f64>) -> f64 {
        -self.d1(x).iter().map(|v| v.log2()).sum::<f64>()
    }

    pub fn h2(&self, x: &DVector<f64>) -> f64 {
        -self.d2(x).iter().map(|v| v.log2()).sum::<f64>()
    }

    /// `∂H2/∂x_i = −(1/ln 2) Σ_j c_{ji} / D2_j`.
    pub fn grad_h2(&self, x: &DVector<f64>) -> DVector<f64> {
        let inv = self.d2(x).map(|v| 1.0 / v);
        -(self.c2.transpose() * inv) / LN_2
    }

    /// Matrix whose row `j` is the gradient of `D1_j`.
    pub fn c1(&self) -> DMatrix<f64> {
        let mut c1 = self.c2.clone();
        for j in 0..self.vars.len() {
            c1[(j, j)] += self.own[j];
        }
        c1
    }
}

/// `H1`, `H2` and `∇H2` at `p`, summed over the scheduled `(k, r)` pairs.
pub fn dc_objective_parts(p: &PowerVector, mask: &ScheduleMask, gains: &LinkGains, noise_mw: f64) -> Result<DcParts> {
    gains.check(mask)?;
    let model = DcModel::new(mask, gains, 1.0, noise_mw);
    let x = DVector::from_vec(p.variables(mask));
    debug_assert!(model.d2(&x).iter().all(|&v| v > 0.0), "interference-plus-noise must stay positive");
    let grad = model.grad_h2(&x);
    Ok(DcParts {
        h1: model.h1(&x),
        h2: model.h2(&x),
        grad_h2: PowerVector::from_variables(mask, grad.as_slice()),
    })
}
