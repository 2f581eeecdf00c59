//! The shared downlink pipeline. Every scheme reduces to one or two slots of
//! analog beams with user groups on top. The slot pipeline is the same for
//! all schemes: effective channels, equivalent channels, ZF precoder, link
//! gains, then power allocation.

use serde::{Deserialize, Serialize};

use crate::beamforming::{effective_channel_from, AnalogBeam, UserProjection};
use crate::channel::{DropConfig, UserChannel};
use crate::error::{Error, Result};
use crate::grouping::{coalition_formation, fit_to_rf_chains, ConditionalEvaluator, CsiMode, GroupingConfig, GroupingParams, Partition};
use crate::grouping::{exhaustive_grouping, FormationOutcome};
use crate::power::{allocate_power, Allocation, LinkGains, PowerConfig, PowerProblem, ScheduleMask};
use crate::precoding::{equivalent_channels, zf_leakage, zf_precoder, DigitalPrecoder, EquivalentChannels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecodingConfig {
    /// Drops whose equivalent channel matrix exceeds this condition number
    /// are skipped for the affected scheme.
    pub condition_cap: f64,
}

impl Default for PrecodingConfig {
    fn default() -> Self {
        Self { condition_cap: 1e8 }
    }
}

/// Everything one drop needs besides the channels themselves.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub drop: DropConfig,
    pub grouping: GroupingConfig,
    pub precoding: PrecodingConfig,
    pub power: PowerConfig,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.drop.validate()?;
        self.power.validate()?;
        if !(self.precoding.condition_cap > 1.0) {
            return Err(Error::config("precoding.condition_cap", "must exceed 1"));
        }
        let g = &self.grouping;
        if g.max_sweeps_per_user == 0 {
            return Err(Error::config("grouping.max_sweeps_per_user", "must be at least 1"));
        }
        if !(g.rel_tol >= 0.0 && g.rel_tol < 1e-3) {
            return Err(Error::config("grouping.rel_tol", "must lie in [0, 1e-3)"));
        }
        if !(g.exhaustive_cap >= 1.0) {
            return Err(Error::config("grouping.exhaustive_cap", "must be at least 1"));
        }
        Ok(())
    }
}

/// One transmission slot: `beams[r]` serves `groups[r]`, listed in decoding
/// order, for a fraction `duty` of the time.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub beams: Vec<AnalogBeam>,
    pub groups: Vec<Vec<usize>>,
    pub duty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub allocation: Allocation,
    pub gains: LinkGains,
    pub equivalent: EquivalentChannels,
    pub precoder: DigitalPrecoder,
    pub duty: f64,
}

impl SlotOutcome {
    /// Largest normalized ZF leakage between equivalent channels.
    pub fn zf_leakage(&self) -> f64 {
        zf_leakage(&self.equivalent, &self.precoder)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOutcome {
    /// Duty-weighted sum-rate, bits/s/Hz.
    pub sum_rate: f64,
    /// Duty-weighted per-user rates.
    pub per_user: Vec<f64>,
    pub slots: Vec<SlotOutcome>,
    /// `false` when at least one slot fell back to solving without QoS.
    pub qos_enforced: bool,
}

/// Per-drop inputs shared by all schemes.
#[derive(Debug, Clone)]
pub struct DropContext<'a> {
    pub channels: &'a [UserChannel],
    pub projections: Vec<UserProjection>,
    pub r_min: &'a [f64],
    pub cfg: &'a SystemConfig,
}

impl<'a> DropContext<'a> {
    pub fn new(channels: &'a [UserChannel], r_min: &'a [f64], cfg: &'a SystemConfig) -> Result<Self> {
        if r_min.len() != channels.len() {
            return Err(Error::input("r_min", format!("{} entries for {} users", r_min.len(), channels.len())));
        }
        let projections = channels.iter().map(|uc| UserProjection::new(uc, cfg.drop.m_ue)).collect();
        Ok(Self { channels, projections, r_min, cfg })
    }

    pub fn num_users(&self) -> usize {
        self.channels.len()
    }
}

/// Runs the stage-two pipeline on one slot. `sic` keeps the SIC
/// decodability constraints.
pub fn serve_slot(ctx: &DropContext, slot: &Slot, sic: bool) -> Result<SlotOutcome> {
    let cfg = ctx.cfg;
    let h_eff = effective_channel_from(&slot.beams, &ctx.projections);
    let eq = equivalent_channels(&h_eff, &slot.groups)?;
    let pre = zf_precoder(&eq, cfg.precoding.condition_cap)?;
    let gains = LinkGains::new(&h_eff, &pre.g)?;
    let mask = ScheduleMask::new(ctx.num_users(), slot.groups.clone())?;
    let pb = PowerProblem {
        mask: &mask,
        gains: &gains,
        noise_mw: cfg.drop.noise_mw(),
        p_bs_mw: cfg.drop.bs_power_mw(),
        r_min: Some(ctx.r_min),
        sic_constraints: sic,
    };
    let allocation = allocate_power(&pb, &cfg.power)?;
    Ok(SlotOutcome { allocation, gains, equivalent: eq, precoder: pre, duty: slot.duty })
}

/// Serves every slot and accumulates duty-weighted rates.
pub fn serve(ctx: &DropContext, slots: &[Slot], sic: bool) -> Result<SchemeOutcome> {
    let mut per_user = vec![0.0; ctx.num_users()];
    let mut outcomes = Vec::with_capacity(slots.len());
    for slot in slots {
        let out = serve_slot(ctx, slot, sic)?;
        for (acc, r) in per_user.iter_mut().zip(&out.allocation.outcome.report.per_user) {
            *acc += slot.duty * r;
        }
        outcomes.push(out);
    }
    let qos_enforced = outcomes.iter().all(|o| o.allocation.qos_enforced);
    Ok(SchemeOutcome { sum_rate: per_user.iter().sum(), per_user, slots: outcomes, qos_enforced })
}

/// Stage-one result of the proposed scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingOutcome {
    /// Structure that fits on the RF chains.
    pub partition: Partition,
    /// Its conditional sum-rate.
    pub value: f64,
    /// `None` for exhaustive grouping.
    pub formation: Option<FormationOutcome>,
    pub merges: usize,
}

fn evaluator(ctx: &DropContext) -> Result<ConditionalEvaluator> {
    let cfg = ctx.cfg;
    let seen: Vec<UserChannel> = match cfg.grouping.csi {
        CsiMode::Los => ctx.channels.iter().map(UserChannel::los_only).collect(),
        CsiMode::Full => ctx.channels.to_vec(),
    };
    ConditionalEvaluator::new(&seen, GroupingParams::new(&cfg.drop, &cfg.grouping))
}

/// Coalition formation followed by the RF-chain fit.
pub fn group_users(ctx: &DropContext) -> Result<GroupingOutcome> {
    let ev = evaluator(ctx)?;
    let formation = coalition_formation(&ev)?;
    let (partition, value, merges) = fit_to_rf_chains(&ev, &formation.partition);
    Ok(GroupingOutcome { partition, value, formation: Some(formation), merges: merges.len() })
}

/// Globally optimal stage one by enumeration; small instances only.
pub fn group_users_exhaustively(ctx: &DropContext) -> Result<GroupingOutcome> {
    let ev = evaluator(ctx)?;
    let (partition, value) = exhaustive_grouping(&ev)?;
    Ok(GroupingOutcome { partition, value, formation: None, merges: 0 })
}

/// Beams and decoding-ordered groups for a stage-one structure, steered at
/// the LOS AODs.
pub fn partition_slot(ctx: &DropContext, partition: &Partition) -> Result<Slot> {
    let steer: Vec<f64> = ctx.channels.iter().map(|uc| uc.los.aod).collect();
    let m_bs = ctx.cfg.drop.m_bs;
    let beams = partition
        .rf_assignments(&steer)?
        .iter()
        .map(|a| AnalogBeam::from_assignment(a, m_bs))
        .collect::<Result<Vec<_>>>()?;
    // Coalition members are kept in ascending index order, which is
    // descending LOS power, so they are already in decoding order.
    let groups = partition.coalitions().iter().map(|c| c.members().to_vec()).collect();
    Ok(Slot { beams, groups, duty: 1.0 })
}

/// The proposed multi-beam NOMA scheme end to end.
pub fn multi_beam_noma(ctx: &DropContext, grouping: &GroupingOutcome) -> Result<SchemeOutcome> {
    let slot = partition_slot(ctx, &grouping.partition)?;
    serve(ctx, &[slot], true)
}
