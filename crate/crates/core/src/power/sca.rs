//! Successive convex approximation of the D.C. power allocation problem.
//!
//! Internally powers are normalized to `x = p / p_BS` and interference to
//! multiples of σ², which keeps every solver quantity near unit scale.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::barrier::{self, BarrierSettings, ConvexObjective, Polyhedron};
use super::{rate_report, DcModel, LinkGains, PowerVector, RateReport, ScheduleMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    /// Convergence tolerance is `eps_scale·√p_BS` on the power step (mW).
    pub eps_scale: f64,
    pub iter_max: usize,
    /// Impose per-user minimum rates; infeasible drops fall back to solving
    /// without them.
    pub enforce_qos: bool,
    pub barrier: BarrierSettings,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self { eps_scale: 1e-3, iter_max: 30, enforce_qos: true, barrier: BarrierSettings::default() }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_scale > 0.0) {
            return Err(Error::config("power.eps_scale", "must be positive"));
        }
        if self.iter_max == 0 {
            return Err(Error::config("power.iter_max", "must be at least 1"));
        }
        let b = &self.barrier;
        if !(b.mu0 > 0.0 && b.mu_factor > 1.0 && b.gap_tol > 0.0 && b.newton_tol > 0.0) {
            return Err(Error::config("power.barrier", "needs mu0 > 0, mu_factor > 1 and positive tolerances"));
        }
        Ok(())
    }
}

/// Everything the power allocation needs for one set of groups.
#[derive(Debug, Clone, Copy)]
pub struct PowerProblem<'a> {
    pub mask: &'a ScheduleMask,
    pub gains: &'a LinkGains,
    pub noise_mw: f64,
    pub p_bs_mw: f64,
    /// Per-user minimum rates in bits/s/Hz; `None` drops the QoS constraints.
    pub r_min: Option<&'a [f64]>,
    /// Keep the SIC decodability constraints. OMA runs without them.
    pub sic_constraints: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowKind {
    Nonnegative,
    Budget,
    Sic { chain: usize },
    Qos { user: usize },
}

struct Constraints {
    model: DcModel,
    rows: Vec<(Vec<f64>, f64)>,
    kinds: Vec<RowKind>,
}

impl Constraints {
    fn build(pb: &PowerProblem) -> Result<Self> {
        if !(pb.noise_mw > 0.0 && pb.p_bs_mw > 0.0) {
            return Err(Error::input("power", "noise and budget must be positive"));
        }
        pb.gains.check(pb.mask)?;
        let scale = pb.p_bs_mw / pb.noise_mw;
        let model = DcModel::new(pb.mask, pb.gains, scale, 1.0);
        let n = model.vars.len();
        let mut rows = Vec::new();
        let mut kinds = Vec::new();
        for j in 0..n {
            let mut r = vec![0.0; n];
            r[j] = -1.0;
            rows.push((r, 0.0));
            kinds.push(RowKind::Nonnegative);
        }
        rows.push((vec![1.0; n], 1.0));
        kinds.push(RowKind::Budget);

        if pb.sic_constraints {
            let index = |k: usize| model.vars.iter().position(|&(u, _)| u == k).expect("scheduled user");
            let mut bad_chains = Vec::new();
            for (strong, weak, chain) in pb.mask.sic_pairs() {
                let (js, jw) = (index(strong), index(weak));
                let (bs, bw) = (model.own[js], model.own[jw]);
                // bw·(Inter_s + 1) ≤ bs·(Inter_w + 1)
                let coef: Vec<f64> = (0..n).map(|i| bw * model.inter[(js, i)] - bs * model.inter[(jw, i)]).collect();
                let rhs = bs - bw;
                if coef.iter().all(|&c| c == 0.0) {
                    if rhs < 0.0 {
                        bad_chains.push(chain);
                    }
                    continue;
                }
                rows.push((coef, rhs));
                kinds.push(RowKind::Sic { chain });
            }
            if !bad_chains.is_empty() {
                bad_chains.dedup();
                return Err(Error::InfeasibleSic { chains: bad_chains });
            }
        }
        if let Some(r_min) = pb.r_min {
            if r_min.len() != pb.mask.num_users() {
                return Err(Error::input("r_min", format!("{} entries for {} users", r_min.len(), pb.mask.num_users())));
            }
            for (j, &(k, _)) in model.vars.iter().enumerate() {
                let gamma = 2f64.powf(r_min[k]) - 1.0;
                if gamma <= 0.0 {
                    continue;
                }
                // γ·(D2_j − 1) − own_j·x_j ≤ −γ
                let mut coef: Vec<f64> = model.c2.row(j).iter().map(|c| gamma * c).collect();
                coef[j] -= model.own[j];
                rows.push((coef, -gamma));
                kinds.push(RowKind::Qos { user: k });
            }
        }
        Ok(Self { model, rows, kinds })
    }

    fn polyhedron(&self, keep: impl Fn(RowKind) -> bool) -> Result<(Polyhedron, Vec<RowKind>)> {
        let (rows, kinds): (Vec<_>, Vec<_>) =
            self.rows.iter().cloned().zip(self.kinds.iter().copied()).filter(|(_, k)| keep(*k)).unzip();
        Ok((Polyhedron::new(self.model.vars.len(), &rows)?, kinds))
    }

    /// Strictly feasible starting point, first for C1–C3 and then with C4.
    fn feasible_start(&self, settings: &BarrierSettings) -> Result<(Polyhedron, DVector<f64>)> {
        let n = self.model.vars.len();
        let x0 = DVector::from_element(n, 0.5 / n as f64);
        let (base, base_kinds) = self.polyhedron(|k| !matches!(k, RowKind::Qos { .. }))?;
        let p1 = barrier::phase_one(&base, x0, settings)?;
        if !p1.strictly_feasible() {
            let mut chains: Vec<usize> = violated(&base, &base_kinds, &p1.x)
                .filter_map(|k| if let RowKind::Sic { chain } = k { Some(chain) } else { None })
                .collect();
            if chains.is_empty() {
                chains = self.kinds.iter().filter_map(|k| if let RowKind::Sic { chain } = k { Some(*chain) } else { None }).collect();
            }
            chains.sort_unstable();
            chains.dedup();
            return Err(Error::InfeasibleSic { chains });
        }
        if self.kinds.len() == base_kinds.len() {
            return Ok((base, p1.x));
        }
        let (full, full_kinds) = self.polyhedron(|_| true)?;
        let p2 = barrier::phase_one(&full, p1.x, settings)?;
        if !p2.strictly_feasible() {
            let mut users: Vec<usize> = violated(&full, &full_kinds, &p2.x)
                .filter_map(|k| if let RowKind::Qos { user } = k { Some(user) } else { None })
                .collect();
            if users.is_empty() {
                users = self.kinds.iter().filter_map(|k| if let RowKind::Qos { user } = k { Some(*user) } else { None }).collect();
            }
            users.sort_unstable();
            return Err(Error::InfeasibleQos { users });
        }
        Ok((full, p2.x))
    }
}

fn violated<'a>(poly: &Polyhedron, kinds: &'a [RowKind], x: &DVector<f64>) -> impl Iterator<Item = RowKind> + 'a {
    let slack = poly.slack(x);
    kinds.iter().zip(slack.iter().copied().collect::<Vec<_>>()).filter(|(_, s)| *s <= 0.0).map(|(k, _)| *k)
}

/// `H1(x) − gᵀx` in normalized units, with `g` the linearized `∇H2`.
struct Surrogate {
    c1: DMatrix<f64>,
    lin: DVector<f64>,
}

impl Surrogate {
    fn d1(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.c1 * x).add_scalar(1.0)
    }
}

impl ConvexObjective for Surrogate {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let d1 = self.d1(x);
        if d1.iter().any(|&v| !(v > 0.0)) {
            return f64::INFINITY;
        }
        -d1.iter().map(|v| v.log2()).sum::<f64>() - self.lin.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let inv = self.d1(x).map(|v| 1.0 / v);
        -(self.c1.transpose() * inv) / LN_2 - &self.lin
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let inv = self.d1(x).map(|v| 1.0 / v);
        let weighted = DMatrix::from_fn(self.c1.nrows(), self.c1.ncols(), |j, i| self.c1[(j, i)] * inv[j]);
        weighted.transpose() * weighted / LN_2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub power: PowerVector,
    /// Largest of the scaled stationarity and complementarity residuals.
    pub kkt: f64,
}

/// Minimizes `H1(p) − ∇H2(p_iter)ᵀp` over the feasible polyhedron. Without
/// `p_iter` the objective is `H1` alone, which is the SCA initialization.
pub fn solve_subproblem(
    pb: &PowerProblem,
    p_iter: Option<&PowerVector>,
    settings: &BarrierSettings,
) -> Result<SubproblemSolution> {
    let cons = Constraints::build(pb)?;
    let (poly, start) = cons.feasible_start(settings)?;
    let lin = match p_iter {
        Some(p) => {
            let x = DVector::from_vec(p.variables(pb.mask)).unscale(pb.p_bs_mw);
            cons.model.grad_h2(&x)
        }
        None => DVector::zeros(cons.model.vars.len()),
    };
    let f = Surrogate { c1: cons.model.c1(), lin };
    let sol = barrier::minimize(&f, &poly, start, settings)?;
    Ok(SubproblemSolution {
        power: PowerVector::from_variables(pb.mask, sol.x.scale(pb.p_bs_mw).as_slice()),
        kkt: sol.kkt_residual(),
    })
}

pub const SCA_TRACE_HEADER: &str = "iteration,sum_rate,step_norm,kkt_residual";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaTraceRow {
    pub iteration: usize,
    pub sum_rate: f64,
    /// `‖p_iter − p_{iter−1}‖` in mW; the first row measures from the
    /// phase-one point.
    pub step_norm: f64,
    pub kkt: f64,
}

impl ScaTraceRow {
    pub fn csv_row(&self) -> String {
        format!("{},{:.12e},{:.6e},{:.3e}", self.iteration, self.sum_rate, self.step_norm, self.kkt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaOutcome {
    pub power: PowerVector,
    pub report: RateReport,
    pub trace: Vec<ScaTraceRow>,
    pub converged: bool,
}

impl ScaOutcome {
    pub fn max_kkt(&self) -> f64 {
        self.trace.iter().map(|r| r.kkt).fold(0.0, f64::max)
    }
}

/// Runs the SCA loop until the power step falls below `ε` or `iter_max`
/// subproblems have been solved.
pub fn sca_power_allocation(pb: &PowerProblem, cfg: &PowerConfig) -> Result<ScaOutcome> {
    let cons = Constraints::build(pb)?;
    let (poly, start) = cons.feasible_start(&cfg.barrier)?;
    let model = &cons.model;
    let c1 = model.c1();
    let eps = cfg.eps_scale * pb.p_bs_mw.sqrt();

    let mut trace = Vec::new();
    let mut prev = start.clone();
    let mut lin = DVector::zeros(model.vars.len());
    let mut converged = false;
    for iteration in 1..=cfg.iter_max {
        let f = Surrogate { c1: c1.clone(), lin };
        let sol = barrier::minimize(&f, &poly, start.clone(), &cfg.barrier)?;
        let step_norm = (&sol.x - &prev).norm() * pb.p_bs_mw;
        trace.push(ScaTraceRow { iteration, sum_rate: model.sum_rate(&sol.x), step_norm, kkt: sol.kkt_residual() });
        prev = sol.x;
        lin = model.grad_h2(&prev);
        if iteration > 1 && step_norm <= eps {
            converged = true;
            break;
        }
    }
    let power = PowerVector::from_variables(pb.mask, prev.scale(pb.p_bs_mw).as_slice());
    let report = rate_report(&power, pb.mask, pb.gains, pb.noise_mw)?;
    Ok(ScaOutcome { power, report, trace, converged })
}

/// Power allocation with the two documented fallbacks: a chain whose SIC
/// constraints are infeasible in the given decoding order is re-sorted by
/// effective gain, and a drop whose QoS targets are infeasible is solved
/// without them.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub outcome: ScaOutcome,
    /// The mask actually used, in its final decoding order.
    pub mask: ScheduleMask,
    pub qos_enforced: bool,
    pub sic_reordered: bool,
}

pub fn allocate_power(pb: &PowerProblem, cfg: &PowerConfig) -> Result<Allocation> {
    let with_reorder = |r_min: Option<&[f64]>| -> Result<(ScaOutcome, ScheduleMask, bool)> {
        let attempt = PowerProblem { r_min, ..*pb };
        let mut mask = pb.mask.clone();
        let mut reordered: Vec<usize> = Vec::new();
        loop {
            // phase one reports only the chains it found violated, so more
            // may surface once those are fixed
            match sca_power_allocation(&PowerProblem { mask: &mask, ..attempt }, cfg) {
                Err(Error::InfeasibleSic { chains }) if chains.iter().any(|c| !reordered.contains(c)) => {
                    reordered.extend(chains);
                    reordered.sort_unstable();
                    reordered.dedup();
                    mask = pb.mask.reordered_by_gain(&reordered, pb.gains);
                }
                other => return other.map(|o| (o, mask, !reordered.is_empty())),
            }
        }
    };
    let r_min = if cfg.enforce_qos { pb.r_min } else { None };
    let (result, qos_enforced) = match with_reorder(r_min) {
        Err(Error::InfeasibleQos { .. }) => (with_reorder(None)?, false),
        other => (other?, r_min.is_some()),
    };
    let (outcome, mask, sic_reordered) = result;
    Ok(Allocation { outcome, mask, qos_enforced, sic_reordered })
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_instance;
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const NOISE: f64 = 1e-8;
    const P_BS: f64 = 1e3;

    fn problem<'a>(mask: &'a ScheduleMask, gains: &'a LinkGains, r_min: Option<&'a [f64]>) -> PowerProblem<'a> {
        PowerProblem { mask, gains, noise_mw: NOISE, p_bs_mw: P_BS, r_min, sic_constraints: true }
    }

    /// Water-filling over parallel channels with normalized gains `b`.
    fn water_filling(b: &[f64]) -> Vec<f64> {
        let (mut lo, mut hi) = (0.0, 1.0 + b.iter().map(|v| 1.0 / v).fold(0.0, f64::max));
        for _ in 0..200 {
            let nu = 0.5 * (lo + hi);
            let used: f64 = b.iter().map(|v| (nu - 1.0 / v).max(0.0)).sum();
            if used > 1.0 {
                hi = nu;
            } else {
                lo = nu;
            }
        }
        b.iter().map(|v| (lo - 1.0 / v).max(0.0)).collect()
    }

    /// Best sum-rate over a `n × n` grid of the simplex for a single-chain
    /// pair, counting only points that meet the SIC and QoS constraints.
    fn grid_pair(a_strong: f64, a_weak: f64, r_min: Option<[f64; 2]>, n: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let p1 = P_BS * i as f64 / n as f64;
                let p2 = P_BS * j as f64 / n as f64;
                let r1 = (1.0 + p1 * a_strong / NOISE).log2();
                let r2 = (1.0 + p2 * a_weak / (a_weak * p1 + NOISE)).log2();
                let r12 = (1.0 + p2 * a_strong / (a_strong * p1 + NOISE)).log2();
                if r12 < r2 - 1e-12 {
                    continue;
                }
                if let Some([m1, m2]) = r_min {
                    if r1 < m1 || r2 < m2 {
                        continue;
                    }
                }
                best = best.max(r1 + r2);
            }
        }
        best
    }

    #[test]
    fn single_user_takes_full_power() {
        let mask = ScheduleMask::new(1, vec![vec![0]]).unwrap();
        let gains = LinkGains::from_matrix(DMatrix::from_element(1, 1, 1e-7)).unwrap();
        let sol = solve_subproblem(&problem(&mask, &gains, None), None, &BarrierSettings::default()).unwrap();
        assert_relative_eq!(sol.power.total(), P_BS, max_relative = 1e-8);
        assert!(sol.power.total() <= P_BS + 1e-9);
        assert!(sol.kkt <= 1e-6);
    }

    #[test]
    fn interference_free_chains_water_fill() {
        let b = [3e-9, 1e-8, 4e-10, 2e-11];
        let a = DMatrix::from_fn(4, 4, |k, r| if k == r { b[k] } else { 0.0 });
        let gains = LinkGains::from_matrix(a).unwrap();
        let mask = ScheduleMask::new(4, (0..4).map(|k| vec![k]).collect()).unwrap();
        let out = sca_power_allocation(&problem(&mask, &gains, None), &PowerConfig::default()).unwrap();
        assert!(out.trace.len() <= 2, "{:?}", out.trace);
        assert!(out.converged);
        let normalized: Vec<f64> = b.iter().map(|v| v * P_BS / NOISE).collect();
        let wf = water_filling(&normalized);
        for k in 0..4 {
            assert!((out.power.get(k, k) / P_BS - wf[k]).abs() < 1e-6, "user {k}: {} vs {}", out.power.get(k, k) / P_BS, wf[k]);
        }
    }

    #[test]
    fn pair_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a_strong = 10f64.powf(rng.random_range(-9.5..-8.0));
            let a_weak = a_strong * rng.random_range(0.01..0.9);
            let r_min = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
            let gains = LinkGains::from_matrix(DMatrix::from_column_slice(2, 1, &[a_strong, a_weak])).unwrap();
            let mask = ScheduleMask::new(2, vec![vec![0, 1]]).unwrap();
            let pb = problem(&mask, &gains, Some(&r_min));
            let alloc = allocate_power(&pb, &PowerConfig::default()).unwrap();
            let grid = grid_pair(a_strong, a_weak, alloc.qos_enforced.then_some(r_min), 200);
            let sca = alloc.outcome.report.sum;
            assert!(sca >= 0.99 * grid, "sca {sca} grid {grid}");
            assert!(alloc.outcome.report.sic_margin() >= -1e-6);
            if alloc.qos_enforced {
                assert!(alloc.outcome.report.qos_margin(&mask, &r_min) >= -1e-6);
            }
        }
    }

    #[test]
    fn trace_is_monotone_and_constraints_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..40 {
            let (mask, gains) = random_instance(seed, 5, vec![vec![0, 3], vec![1, 4], vec![2]]);
            let r_min: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let pb = problem(&mask, &gains, Some(&r_min));
            let alloc = allocate_power(&pb, &PowerConfig::default()).unwrap();
            let out = &alloc.outcome;
            for w in out.trace.windows(2) {
                assert!(w[1].sum_rate >= w[0].sum_rate - 1e-7, "seed {seed}: {:?}", out.trace);
            }
            assert!(out.max_kkt() <= 1e-6, "seed {seed}: kkt {}", out.max_kkt());
            assert!(out.power.total() <= P_BS + 1e-9);
            assert!(out.power.matrix().iter().all(|&v| v >= 0.0));
            assert!(out.report.sic_margin() >= -1e-6);
            if alloc.qos_enforced {
                assert!(out.report.qos_margin(&alloc.mask, &r_min) >= -1e-6);
            }
            assert_relative_eq!(out.trace.last().unwrap().sum_rate, out.report.sum, max_relative = 1e-9);
        }
    }

    #[test]
    fn sca_improves_on_the_initial_point() {
        let (mask, gains) = random_instance(3, 4, vec![vec![0, 2], vec![1, 3]]);
        let pb = problem(&mask, &gains, None);
        let out = sca_power_allocation(&pb, &PowerConfig::default()).unwrap();
        let init = solve_subproblem(&pb, None, &BarrierSettings::default()).unwrap();
        let r0 = rate_report(&init.power, &mask, &gains, NOISE).unwrap().sum;
        assert!(out.report.sum >= r0 - 1e-7);
        assert_relative_eq!(out.trace[0].sum_rate, r0, max_relative = 1e-9);
    }

    #[test]
    fn unreachable_rates_report_the_users() {
        let gains = LinkGains::from_matrix(DMatrix::from_column_slice(2, 1, &[1e-9, 1e-12])).unwrap();
        let mask = ScheduleMask::new(2, vec![vec![0, 1]]).unwrap();
        let r_min = [0.5, 20.0];
        let pb = problem(&mask, &gains, Some(&r_min));
        match sca_power_allocation(&pb, &PowerConfig::default()) {
            Err(Error::InfeasibleQos { users }) => assert!(users.contains(&1)),
            other => panic!("expected InfeasibleQos, got {other:?}"),
        }
        let alloc = allocate_power(&pb, &PowerConfig::default()).unwrap();
        assert!(!alloc.qos_enforced);
        assert!(alloc.outcome.report.sum > 0.0);
    }

    #[test]
    fn misordered_single_chain_is_reordered() {
        // the listed "strong" user has the weaker effective gain
        let gains = LinkGains::from_matrix(DMatrix::from_column_slice(2, 1, &[1e-10, 1e-9])).unwrap();
        let mask = ScheduleMask::new(2, vec![vec![0, 1]]).unwrap();
        let pb = problem(&mask, &gains, None);
        assert!(matches!(sca_power_allocation(&pb, &PowerConfig::default()), Err(Error::InfeasibleSic { .. })));
        let alloc = allocate_power(&pb, &PowerConfig::default()).unwrap();
        assert!(alloc.sic_reordered);
        assert_eq!(alloc.mask.groups(), &[vec![1, 0]]);
        assert!(alloc.outcome.report.sic_margin() >= -1e-6);
    }

    #[test]
    fn subproblem_points_are_feasible() {
        let (mask, gains) = random_instance(5, 3, vec![vec![0, 1], vec![2]]);
        let r_min = [0.2, 0.2, 0.2];
        let pb = problem(&mask, &gains, Some(&r_min));
        let Ok(init) = solve_subproblem(&pb, None, &BarrierSettings::default()) else { return };
        let next = solve_subproblem(&pb, Some(&init.power), &BarrierSettings::default()).unwrap();
        let cons = Constraints::build(&pb).unwrap();
        let x = DVector::from_vec(next.power.variables(&mask)).unscale(P_BS);
        let (poly, _) = cons.polyhedron(|_| true).unwrap();
        assert!(poly.slack(&x).min() >= -1e-8);
        assert!(next.kkt <= 1e-6);
    }

    #[test]
    fn trace_csv_row() {
        let row = ScaTraceRow { iteration: 3, sum_rate: 12.5, step_norm: 0.01, kkt: 1e-9 };
        assert_eq!(row.csv_row().split(',').count(), SCA_TRACE_HEADER.split(',').count());
        assert!(row.csv_row().starts_with("3,1.25"));
    }

    #[test]
    fn config_validation() {
        assert!(PowerConfig::default().validate().is_ok());
        let bad = PowerConfig { iter_max: 0, ..PowerConfig::default() };
        assert!(bad.validate().is_err());
    }
}
