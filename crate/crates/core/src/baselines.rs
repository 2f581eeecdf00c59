//! Reference schemes: OMA over two time slots and single-beam NOMA.
//!
//! Both reuse the slot pipeline in [`crate::downlink`], so they differ from
//! the proposed scheme only in scheduling and beamforming.

use crate::beamforming::AnalogBeam;
use crate::channel::UserChannel;
use crate::downlink::{serve, DropContext, SchemeOutcome, Slot};
use crate::error::{Error, Result};

/// Served units per slot. A unit is one user or a single-beam NOMA pair,
/// listed in decoding order.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSchedule {
    pub slots: Vec<Vec<Vec<usize>>>,
    /// 1 for a single slot, 1/2 for two.
    pub duty: f64,
}

impl SlotSchedule {
    /// One slot when the units fit on the chains, otherwise two slots filled
    /// alternately in the given order.
    fn split(units: Vec<Vec<usize>>, n_rf: usize) -> Result<Self> {
        if units.len() <= n_rf {
            return Ok(Self { slots: vec![units], duty: 1.0 });
        }
        if units.len() > 2 * n_rf {
            return Err(Error::input("num_users", format!("{} units do not fit two slots of {n_rf} chains", units.len())));
        }
        let mut slots = vec![Vec::new(), Vec::new()];
        for (i, u) in units.into_iter().enumerate() {
            slots[i % 2].push(u);
        }
        Ok(Self { slots, duty: 0.5 })
    }

    pub fn users_in_slot(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.slots[s].iter().flatten().copied()
    }

    /// Full-array beams, one per unit, steered at the unit's first user.
    fn into_slots(self, channels: &[UserChannel], m_bs: usize) -> Vec<Slot> {
        let duty = self.duty;
        self.slots
            .into_iter()
            .map(|units| Slot {
                beams: units.iter().map(|u| AnalogBeam::single(m_bs, u[0], channels[u[0]].los.aod)).collect(),
                groups: units,
                duty,
            })
            .collect()
    }
}

/// User indices by descending LOS power, ties by index.
fn by_los_power(channels: &[UserChannel]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..channels.len()).collect();
    order.sort_by(|&a, &b| channels[b].los_power().total_cmp(&channels[a].los_power()).then(a.cmp(&b)));
    order
}

/// Users sorted by LOS gain and dealt alternately into the two slots.
pub fn oma_schedule(channels: &[UserChannel], n_rf: usize) -> Result<SlotSchedule> {
    SlotSchedule::split(by_los_power(channels).into_iter().map(|k| vec![k]).collect(), n_rf)
}

/// Width of the -3 dB main lobe of an `m`-element array, in degrees.
pub fn single_beam_threshold_deg(m_bs: usize) -> f64 {
    102.1 / m_bs as f64
}

/// Greedy angle-difference pairing: candidate pairs closer than the main
/// lobe width are taken in ascending AOD difference, each user at most once.
/// Pairs list the stronger user first.
pub fn single_beam_pairs(channels: &[UserChannel], m_bs: usize) -> Vec<[usize; 2]> {
    let threshold = single_beam_threshold_deg(m_bs).to_radians();
    let rank: Vec<usize> = {
        let mut rank = vec![0; channels.len()];
        for (pos, k) in by_los_power(channels).into_iter().enumerate() {
            rank[k] = pos;
        }
        rank
    };
    let mut candidates = Vec::new();
    for a in 0..channels.len() {
        for b in a + 1..channels.len() {
            let diff = (channels[a].los.aod - channels[b].los.aod).abs();
            if diff < threshold {
                candidates.push((diff, a, b));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut used = vec![false; channels.len()];
    let mut pairs = Vec::new();
    for (_, a, b) in candidates {
        if used[a] || used[b] {
            continue;
        }
        used[a] = true;
        used[b] = true;
        pairs.push(if rank[a] < rank[b] { [a, b] } else { [b, a] });
    }
    pairs
}

/// Single-beam NOMA schedule. When the pairs and leftover users fit on the
/// chains they share one slot, each pair on one beam. Otherwise both slots
/// run OMA: the two users of a same-beam pair go to different slots, and the
/// remaining users fill the emptier slot in LOS order. Without pairs this is
/// exactly [`oma_schedule`].
pub fn single_beam_schedule(channels: &[UserChannel], n_rf: usize, m_bs: usize) -> Result<SlotSchedule> {
    let pairs = single_beam_pairs(channels, m_bs);
    let k = channels.len();
    if k - pairs.len() <= n_rf {
        let mut unit_of = vec![None; k];
        for (i, p) in pairs.iter().enumerate() {
            unit_of[p[0]] = Some(i);
            unit_of[p[1]] = Some(i);
        }
        let mut units = Vec::new();
        for u in by_los_power(channels) {
            match unit_of[u] {
                Some(i) if pairs[i][0] == u => units.push(pairs[i].to_vec()),
                Some(_) => {}
                None => units.push(vec![u]),
            }
        }
        return SlotSchedule::split(units, n_rf);
    }
    if k > 2 * n_rf {
        return Err(Error::input("num_users", format!("{k} users do not fit two slots of {n_rf} chains")));
    }
    let mut slots: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let mut placed = vec![false; k];
    for (i, p) in pairs.iter().enumerate() {
        slots[i % 2].push(vec![p[0]]);
        slots[1 - i % 2].push(vec![p[1]]);
        placed[p[0]] = true;
        placed[p[1]] = true;
    }
    for u in by_los_power(channels).into_iter().filter(|&u| !placed[u]) {
        let s = usize::from(slots[1].len() < slots[0].len());
        slots[s].push(vec![u]);
    }
    // keep each slot in LOS order, like OMA
    let rank = |u: usize| by_los_power(channels).iter().position(|&x| x == u).unwrap();
    for slot in &mut slots {
        slot.sort_by_key(|unit| rank(unit[0]));
    }
    Ok(SlotSchedule { slots: slots.into(), duty: 0.5 })
}

fn check_load(ctx: &DropContext) -> Result<()> {
    let k = ctx.num_users();
    let n_rf = ctx.cfg.drop.num_rf_chains;
    if k == 0 || k > 2 * n_rf {
        return Err(Error::input("num_users", format!("baselines need 1..={} users for {n_rf} chains, got {k}", 2 * n_rf)));
    }
    Ok(())
}

/// OMA: full-array beams, no intra-group terms, no SIC constraints.
pub fn oma_baseline(ctx: &DropContext) -> Result<SchemeOutcome> {
    check_load(ctx)?;
    let drop = &ctx.cfg.drop;
    let slots = oma_schedule(ctx.channels, drop.num_rf_chains)?.into_slots(ctx.channels, drop.m_bs);
    serve(ctx, &slots, false)
}

/// Single-beam NOMA: pairs share one full-array beam steered at the stronger
/// member, with SCA power allocation across the pair.
pub fn single_beam_noma_baseline(ctx: &DropContext) -> Result<SchemeOutcome> {
    check_load(ctx)?;
    let drop = &ctx.cfg.drop;
    let slots = single_beam_schedule(ctx.channels, drop.num_rf_chains, drop.m_bs)?.into_slots(ctx.channels, drop.m_bs);
    serve(ctx, &slots, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::UserProjection;
    use crate::channel::PathComponent;
    use crate::downlink::SystemConfig;
    use crate::linalg::C64;
    use approx::assert_relative_eq;

    fn los_user(index: usize, cos_aod: f64, gain: f64) -> UserChannel {
        UserChannel {
            index,
            los: PathComponent::new(cos_aod.acos(), std::f64::consts::FRAC_PI_2, C64::new(gain, 0.0)).unwrap(),
            nlos: Vec::new(),
            distance_m: 50.0,
            position: (0.0, 50.0),
            los_blocked: false,
        }
    }

    fn cfg(k: usize, n_rf: usize, m_bs: usize) -> SystemConfig {
        let mut cfg = SystemConfig::default();
        cfg.drop.num_users = k;
        cfg.drop.num_rf_chains = n_rf;
        cfg.drop.m_bs = m_bs;
        cfg
    }

    fn p2p_rate(ctx: &DropContext, k: usize, power_mw: f64) -> f64 {
        let beam = AnalogBeam::single(ctx.cfg.drop.m_bs, k, ctx.channels[k].los.aod);
        let a = ctx.projections[k].gain(&beam).norm_sqr();
        (1.0 + power_mw * a / ctx.cfg.drop.noise_mw()).log2()
    }

    /// Sum of log2(1 + p_i a_i/σ²) maximized over Σp ≤ P by bisection on the
    /// water level.
    fn water_filling(a: &[f64], p: f64, noise: f64) -> f64 {
        let alloc = |level: f64| -> Vec<f64> { a.iter().map(|&g| (level - noise / g).max(0.0)).collect() };
        let (mut lo, mut hi) = (0.0, p + a.iter().map(|&g| noise / g).fold(0.0, f64::max));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if alloc(mid).iter().sum::<f64>() > p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        alloc(lo).iter().zip(a).map(|(&pi, &g)| (1.0 + pi * g / noise).log2()).sum()
    }

    #[test]
    fn oma_alternates_by_los_gain() {
        let users: Vec<_> = [0.9, 0.5, 0.1, -0.3, -0.7]
            .iter()
            .enumerate()
            .map(|(i, &c)| los_user(i, c, [1e-5, 3e-5, 2e-5, 5e-5, 4e-5][i]))
            .collect();
        let s = oma_schedule(&users, 3).unwrap();
        assert_eq!(s.duty, 0.5);
        assert_eq!(s.slots, vec![vec![vec![3], vec![1], vec![0]], vec![vec![4], vec![2]]]);
    }

    #[test]
    fn k_equal_to_chains_is_one_sdma_slot() {
        let users: Vec<_> = (0..3).map(|i| los_user(i, 0.5 - 0.4 * i as f64, 1e-5)).collect();
        let s = oma_schedule(&users, 3).unwrap();
        assert_eq!(s.slots.len(), 1);
        assert_eq!(s.duty, 1.0);
    }

    #[test]
    fn two_slot_single_users_get_half_their_capacity() {
        let users = vec![los_user(0, 0.3, 2e-5), los_user(1, -0.4, 1e-5)];
        let r_min = [0.0, 0.0];
        let cfg = cfg(2, 1, 16);
        let ctx = DropContext::new(&users, &r_min, &cfg).unwrap();
        let out = oma_baseline(&ctx).unwrap();
        let p = cfg.drop.bs_power_mw();
        let expect = 0.5 * (p2p_rate(&ctx, 0, p) + p2p_rate(&ctx, 1, p));
        assert_relative_eq!(out.sum_rate, expect, max_relative = 1e-6);
    }

    #[test]
    fn orthogonal_users_water_fill_within_each_slot() {
        // cos-AOD spacing of 0.5 on 16 elements makes all beams orthogonal
        let cos = [0.75, 0.25, -0.25, -0.75];
        let gains = [4e-5, 3e-5, 2e-5, 1e-5];
        let users: Vec<_> = (0..4).map(|i| los_user(i, cos[i], gains[i])).collect();
        let r_min = [0.0; 4];
        let cfg = cfg(4, 2, 16);
        let ctx = DropContext::new(&users, &r_min, &cfg).unwrap();
        let out = oma_baseline(&ctx).unwrap();
        let a = |k: usize| {
            let beam = AnalogBeam::single(16, k, users[k].los.aod);
            UserProjection::new(&users[k], cfg.drop.m_ue).gain(&beam).norm_sqr()
        };
        let p = cfg.drop.bs_power_mw();
        let n = cfg.drop.noise_mw();
        let expect = 0.5 * (water_filling(&[a(0), a(2)], p, n) + water_filling(&[a(1), a(3)], p, n));
        assert_relative_eq!(out.sum_rate, expect, max_relative = 1e-6);
    }

    #[test]
    fn pairing_threshold_is_the_main_lobe_width() {
        assert_relative_eq!(single_beam_threshold_deg(100), 1.021, epsilon = 1e-12);
        let at = |deg: f64| los_user(0, deg.to_radians().cos(), 1e-5);
        let mut inside = vec![at(60.0), at(61.0)];
        inside[1].index = 1;
        assert_eq!(single_beam_pairs(&inside, 100), vec![[0, 1]]);
        let mut outside = vec![at(60.0), at(61.05)];
        outside[1].index = 1;
        assert!(single_beam_pairs(&outside, 100).is_empty());
    }

    #[test]
    fn identical_aods_pair_with_stronger_user_first() {
        let users = vec![los_user(0, 0.2, 1e-5), los_user(1, 0.2, 3e-5), los_user(2, -0.6, 2e-5)];
        assert_eq!(single_beam_pairs(&users, 64), vec![[1, 0]]);
        let s = single_beam_schedule(&users, 2, 64).unwrap();
        assert_eq!(s.slots, vec![vec![vec![1, 0], vec![2]]]);
        assert_eq!(s.duty, 1.0);
    }

    #[test]
    fn greedy_pairing_prefers_the_closest_pair() {
        let deg = [50.0f64, 50.9, 51.2];
        let users: Vec<_> = (0..3).map(|i| los_user(i, deg[i].to_radians().cos(), 1e-5 * (3 - i) as f64)).collect();
        assert_eq!(single_beam_pairs(&users, 64), vec![[1, 2]]);
    }

    #[test]
    fn no_pairs_means_single_beam_equals_oma() {
        let cos = [0.75, 0.25, -0.25, -0.75];
        let users: Vec<_> = (0..4).map(|i| los_user(i, cos[i], 1e-5 * (4 - i) as f64)).collect();
        let r_min = [0.1; 4];
        let cfg = cfg(4, 2, 16);
        let ctx = DropContext::new(&users, &r_min, &cfg).unwrap();
        assert_eq!(single_beam_schedule(&users, 2, 16).unwrap(), oma_schedule(&users, 2).unwrap());
        let a = oma_baseline(&ctx).unwrap();
        let b = single_beam_noma_baseline(&ctx).unwrap();
        assert_eq!(a.sum_rate, b.sum_rate);
    }

    #[test]
    fn two_slot_pairs_are_split_across_slots() {
        // seven users on four chains, two same-beam pairs: still two slots
        let cos = [0.9, -0.2, 0.8999, 0.3, -0.6, 0.2999, -0.8];
        let users: Vec<_> = (0..7).map(|i| los_user(i, cos[i], 1e-5 / (i + 1) as f64)).collect();
        let pairs = single_beam_pairs(&users, 100);
        assert_eq!(pairs.len(), 2);
        let s = single_beam_schedule(&users, 4, 100).unwrap();
        assert_eq!(s.duty, 0.5);
        for [a, b] in pairs {
            let slot_of = |u| (0..2).find(|&i| s.users_in_slot(i).any(|x| x == u)).unwrap();
            assert_ne!(slot_of(a), slot_of(b));
        }
        assert!(s.slots.iter().flatten().all(|unit| unit.len() == 1));
    }

    #[test]
    fn every_user_is_served_in_exactly_one_slot() {
        let cos = [0.9, 0.899, 0.3, 0.299, -0.2, -0.6, -0.8];
        let users: Vec<_> = (0..7).map(|i| los_user(i, cos[i], 1e-5 / (i + 1) as f64)).collect();
        for s in [oma_schedule(&users, 4).unwrap(), single_beam_schedule(&users, 4, 100).unwrap()] {
            let mut all: Vec<usize> = (0..s.slots.len()).flat_map(|i| s.users_in_slot(i).collect::<Vec<_>>()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..7).collect::<Vec<_>>());
            assert!(s.slots.iter().all(|slot| slot.len() <= 4));
        }
    }

    #[test]
    fn overload_is_rejected() {
        let users: Vec<_> = (0..5).map(|i| los_user(i, 0.8 - 0.4 * i as f64, 1e-5)).collect();
        assert!(oma_schedule(&users, 2).is_err());
    }
}
