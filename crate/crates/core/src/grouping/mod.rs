//! Stage one: user grouping and antenna allocation.
//!
//! Users form coalitions of at most two; each coalition is served by one RF
//! chain whose array is split between its members. Candidates are scored by
//! the conditional sum-rate, which assumes equal power `p_BS/K` per user
//! and an identity digital precoder.

mod exhaustive;
mod formation;

pub use exhaustive::{exhaustive_grouping, exhaustive_search_size, partition_count};
pub use formation::{
    coalition_formation, fit_to_rf_chains, is_stable, try_leave_join, try_switch, FormationOutcome, Operation,
    TraceEntry,
};

use serde::{Deserialize, Serialize};

use crate::beamforming::{AnalogBeam, RfAssignment, RfMember, UserProjection};
use crate::channel::{DropConfig, UserChannel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coalition {
    members: Vec<usize>,
    antennas: Vec<usize>,
}

impl Coalition {
    pub fn singleton(user: usize, m_bs: usize) -> Self {
        Self { members: vec![user], antennas: vec![m_bs] }
    }

    /// Pair with `m_a` antennas for `a` and `m_b` for `b`; stored by
    /// ascending user index.
    pub fn pair(a: usize, b: usize, m_a: usize, m_b: usize) -> Self {
        if a < b {
            Self { members: vec![a, b], antennas: vec![m_a, m_b] }
        } else {
            Self { members: vec![b, a], antennas: vec![m_b, m_a] }
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn antennas(&self) -> &[usize] {
        &self.antennas
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_pair(&self) -> bool {
        self.members.len() == 2
    }

    pub fn contains(&self, user: usize) -> bool {
        self.members.contains(&user)
    }

    pub fn antennas_of(&self, user: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == user).map(|i| self.antennas[i])
    }

    fn set_split(&mut self, first: usize, m_bs: usize) {
        debug_assert!(self.is_pair());
        self.antennas = vec![first, m_bs - first];
    }
}

/// A coalitional structure together with its antenna strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    coalitions: Vec<Coalition>,
}

impl Partition {
    /// Every user alone with the full array.
    pub fn singletons(num_users: usize, m_bs: usize) -> Self {
        Self { coalitions: (0..num_users).map(|k| Coalition::singleton(k, m_bs)).collect() }
    }

    /// Builds and validates a partition of users `0..num_users`.
    pub fn new(mut coalitions: Vec<Coalition>, num_users: usize, m_bs: usize, m_min: usize) -> Result<Self> {
        coalitions.sort_by_key(|c| c.members[0]);
        let p = Self { coalitions };
        p.validate(num_users, m_bs, m_min)?;
        Ok(p)
    }

    pub fn coalitions(&self) -> &[Coalition] {
        &self.coalitions
    }

    pub fn len(&self) -> usize {
        self.coalitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coalitions.is_empty()
    }

    pub fn coalition_of(&self, user: usize) -> Option<usize> {
        self.coalitions.iter().position(|c| c.contains(user))
    }

    /// Disjoint cover, sizes 1..=2, singletons on the full array and pairs
    /// splitting it with at least `m_min` each.
    pub fn validate(&self, num_users: usize, m_bs: usize, m_min: usize) -> Result<()> {
        let mut seen = vec![false; num_users];
        for c in &self.coalitions {
            if c.members.is_empty() || c.members.len() > 2 || c.members.len() != c.antennas.len() {
                return Err(Error::input("partition", format!("bad coalition {:?}", c.members)));
            }
            for &u in &c.members {
                if u >= num_users || std::mem::replace(&mut seen[u], true) {
                    return Err(Error::input("partition", format!("user {u} missing or duplicated")));
                }
            }
            let used: usize = c.antennas.iter().sum();
            if used != m_bs {
                return Err(Error::AntennaBudget { used, available: m_bs });
            }
            if c.is_pair() && c.antennas.iter().any(|&m| m < m_min) {
                return Err(Error::input("partition", format!("pair {:?} violates m_min", c.members)));
            }
        }
        if let Some(u) = seen.iter().position(|s| !s) {
            return Err(Error::input("partition", format!("user {u} is not covered")));
        }
        Ok(())
    }

    fn canonicalize(&mut self) {
        self.coalitions.sort_by_key(|c| c.members[0]);
    }

    /// RF-chain assignments, one per coalition, steered at the given AODs.
    pub fn rf_assignments(&self, steer: &[f64]) -> Result<Vec<RfAssignment>> {
        self.coalitions
            .iter()
            .enumerate()
            .map(|(r, c)| rf_assignment(r, c, steer))
            .collect()
    }
}

fn rf_assignment(r: usize, c: &Coalition, steer: &[f64]) -> Result<RfAssignment> {
    let members = c
        .members
        .iter()
        .zip(&c.antennas)
        .map(|(&user, &antennas)| RfMember { user, antennas, steer: steer[user] })
        .collect();
    RfAssignment::new(r, members)
}

/// Which channel knowledge drives the grouping stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    /// LOS path only.
    #[default]
    Los,
    /// All paths.
    Full,
}

/// How the two pairs touched by a switch are re-optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchSearch {
    /// Alternating one-dimensional scans until neither split moves.
    #[default]
    Decomposed,
    /// Full scan over both splits.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    pub csi: CsiMode,
    pub switch_search: SwitchSearch,
    /// Sweep cap as a multiple of the user count.
    pub max_sweeps_per_user: usize,
    pub rel_tol: f64,
    /// Largest number of rate evaluations the exhaustive search may take.
    pub exhaustive_cap: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            csi: CsiMode::Los,
            switch_search: SwitchSearch::Decomposed,
            max_sweeps_per_user: 10,
            rel_tol: 1e-9,
            exhaustive_cap: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingParams {
    pub num_users: usize,
    pub n_rf: usize,
    pub m_bs: usize,
    pub m_min: usize,
    pub m_ue: usize,
    pub p_bs_mw: f64,
    pub noise_mw: f64,
    pub switch_search: SwitchSearch,
    pub max_sweeps: usize,
    pub rel_tol: f64,
    pub exhaustive_cap: f64,
}

impl GroupingParams {
    pub fn new(drop: &DropConfig, cfg: &GroupingConfig) -> Self {
        Self {
            num_users: drop.num_users,
            n_rf: drop.num_rf_chains,
            m_bs: drop.m_bs,
            m_min: drop.m_min,
            m_ue: drop.m_ue,
            p_bs_mw: drop.bs_power_mw(),
            noise_mw: drop.noise_mw(),
            switch_search: cfg.switch_search,
            max_sweeps: cfg.max_sweeps_per_user * drop.num_users.max(1),
            rel_tol: cfg.rel_tol,
            exhaustive_cap: cfg.exhaustive_cap,
        }
    }

    /// Equal per-user power used by the conditional rates.
    pub fn p_user(&self) -> f64 {
        self.p_bs_mw / self.num_users as f64
    }

    pub fn split_range(&self) -> std::ops::RangeInclusive<usize> {
        self.m_min..=self.m_bs - self.m_min
    }

    /// `N_RF/|B|` when there are more coalitions than chains.
    pub fn time_sharing(&self, coalitions: usize) -> f64 {
        if coalitions > self.n_rf {
            self.n_rf as f64 / coalitions as f64
        } else {
            1.0
        }
    }

    /// Strict improvement test with a relative tolerance.
    pub fn improves(&self, candidate: f64, current: f64) -> bool {
        candidate > current + self.rel_tol * current.abs().max(f64::MIN_POSITIVE)
    }
}

/// Scores partitions by the conditional sum-rate.
///
/// Keeps, per coalition, the column of effective channel powers
/// `|h̃_{k,r}|²` over all users so that re-scoring after a local change only
/// recomputes the touched coalitions.
#[derive(Debug, Clone)]
pub struct ConditionalEvaluator {
    params: GroupingParams,
    projections: Vec<UserProjection>,
    steer: Vec<f64>,
}

impl ConditionalEvaluator {
    /// `channels` should already be reduced to the CSI the scheduler sees.
    pub fn new(channels: &[UserChannel], params: GroupingParams) -> Result<Self> {
        if channels.len() != params.num_users {
            return Err(Error::input(
                "channels",
                format!("expected {} users, got {}", params.num_users, channels.len()),
            ));
        }
        if params.m_bs < 2 * params.m_min || params.m_min == 0 {
            return Err(Error::input(
                "m_min",
                format!("need 1 <= m_min and 2*m_min <= m_bs, got {} and {}", params.m_min, params.m_bs),
            ));
        }
        let projections = channels.iter().map(|uc| UserProjection::new(uc, params.m_ue)).collect();
        let steer = channels.iter().map(|uc| uc.los.aod).collect();
        Ok(Self { params, projections, steer })
    }

    pub fn params(&self) -> &GroupingParams {
        &self.params
    }

    pub fn steer(&self) -> &[f64] {
        &self.steer
    }

    pub fn num_users(&self) -> usize {
        self.projections.len()
    }

    pub fn beam(&self, c: &Coalition) -> AnalogBeam {
        let assign = rf_assignment(0, c, &self.steer).expect("coalitions are valid RF assignments");
        AnalogBeam::from_assignment(&assign, self.params.m_bs).expect("coalitions respect the antenna budget")
    }

    /// `|h̃_{k}ᴴ w_c|²` for every user `k`.
    pub fn column(&self, c: &Coalition) -> Vec<f64> {
        let beam = self.beam(c);
        self.projections.iter().map(|p| p.gain(&beam).norm_sqr()).collect()
    }

    pub fn columns(&self, partition: &Partition) -> Vec<Vec<f64>> {
        partition.coalitions.iter().map(|c| self.column(c)).collect()
    }

    /// Time-shared conditional sum-rate from precomputed columns.
    pub fn value_from_columns(&self, coalitions: &[Coalition], columns: &[Vec<f64>]) -> f64 {
        let p = self.params.p_user();
        let noise = self.params.noise_mw;
        let factor = self.params.time_sharing(coalitions.len());
        let mut sum = 0.0;
        for (r, c) in coalitions.iter().enumerate() {
            for (pos, &k) in c.members.iter().enumerate() {
                let own = columns[r][k];
                let inter: f64 = coalitions
                    .iter()
                    .zip(columns)
                    .enumerate()
                    .filter(|(r2, _)| *r2 != r)
                    .map(|(_, (c2, col))| col[k] * p * c2.len() as f64)
                    .sum();
                // Members are stored strongest first, so `pos` stronger users
                // precede `k` in the decoding order.
                let intra = own * p * pos as f64;
                sum += (1.0 + p * own / (inter + intra + noise)).log2();
            }
        }
        factor * sum
    }

    /// Conditional rate of user `k` on coalition `r`, without time sharing;
    /// zero when `k` is not a member.
    pub fn conditional_rate(&self, partition: &Partition, k: usize, r: usize) -> f64 {
        let Some(c) = partition.coalitions.get(r) else { return 0.0 };
        let Some(pos) = c.members.iter().position(|&m| m == k) else { return 0.0 };
        let p = self.params.p_user();
        let own = self.column(c)[k];
        let inter: f64 = partition
            .coalitions
            .iter()
            .enumerate()
            .filter(|(r2, _)| *r2 != r)
            .map(|(_, c2)| self.column(c2)[k] * p * c2.len() as f64)
            .sum();
        let intra = own * p * pos as f64;
        (1.0 + p * own / (inter + intra + self.params.noise_mw)).log2()
    }

    /// Time-shared payoff of user `k`.
    pub fn payoff(&self, partition: &Partition, k: usize) -> f64 {
        let r = partition.coalition_of(k).expect("user is covered");
        self.params.time_sharing(partition.len()) * self.conditional_rate(partition, k, r)
    }

    pub fn conditional_sum_rate(&self, partition: &Partition) -> f64 {
        self.value_from_columns(&partition.coalitions, &self.columns(partition))
    }

    /// Scans the split of pair `idx` with everything else fixed, leaves the
    /// best split in place and returns its value. Ties keep the smaller
    /// allocation for the stronger member.
    pub(crate) fn optimize_split(&self, coalitions: &mut [Coalition], columns: &mut [Vec<f64>], idx: usize) -> f64 {
        let m_bs = self.params.m_bs;
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for m in self.params.split_range() {
            coalitions[idx].set_split(m, m_bs);
            columns[idx] = self.column(&coalitions[idx]);
            let v = self.value_from_columns(coalitions, columns);
            if best.as_ref().map_or(true, |b| v > b.1) {
                best = Some((m, v, columns[idx].clone()));
            }
        }
        let (m, v, col) = best.expect("split range is nonempty");
        coalitions[idx].set_split(m, m_bs);
        columns[idx] = col;
        v
    }

    /// Best split of a two-user coalition inside `partition`, all other
    /// strategies fixed. Returns `(M_a, M_b, value)` for the members in
    /// ascending index order.
    pub fn best_pair_split(&self, partition: &Partition, idx: usize) -> Result<(usize, usize, f64)> {
        let Some(c) = partition.coalitions.get(idx) else {
            return Err(Error::input("idx", "no such coalition"));
        };
        if !c.is_pair() {
            return Err(Error::input("idx", "coalition is not a pair"));
        }
        let mut coalitions = partition.coalitions.clone();
        let mut columns = self.columns(partition);
        let v = self.optimize_split(&mut coalitions, &mut columns, idx);
        Ok((coalitions[idx].antennas[0], coalitions[idx].antennas[1], v))
    }
}
