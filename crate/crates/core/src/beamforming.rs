//! Beam-splitting analog beamformers, user combiners and effective channels.
//!
//! An RF chain serving two users splits the BS array into two contiguous
//! subarrays, one steered at each user. Weights follow the same phase
//! convention as [`array_response`], so a lone full-array beam reaches the
//! coherent gain `√M_BS` at its steering angle.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::channel::{array_response, UserChannel};
use crate::error::{Error, Result};
use crate::linalg::{cis, geometric_sum, CMatrix, CVector, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfMember {
    pub user: usize,
    pub antennas: usize,
    /// LOS angle of departure the subarray is steered at.
    pub steer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfAssignment {
    pub rf_index: usize,
    /// Sorted by user index.
    pub members: Vec<RfMember>,
}

impl RfAssignment {
    pub fn new(rf_index: usize, mut members: Vec<RfMember>) -> Result<Self> {
        if members.is_empty() || members.len() > 2 {
            return Err(Error::input("members", format!("an RF chain serves 1 or 2 users, got {}", members.len())));
        }
        if members.iter().any(|m| m.antennas == 0) {
            return Err(Error::input("antennas", "every member needs at least one antenna"));
        }
        members.sort_by_key(|m| m.user);
        if members.windows(2).any(|w| w[0].user == w[1].user) {
            return Err(Error::input("members", "duplicate user on one RF chain"));
        }
        Ok(Self { rf_index, members })
    }

    pub fn antennas_used(&self) -> usize {
        self.members.iter().map(|m| m.antennas).sum()
    }

    /// Checks the antenna budget and the per-user minimum.
    pub fn validate(&self, m_bs: usize, m_min: usize) -> Result<()> {
        let used = self.antennas_used();
        if used > m_bs {
            return Err(Error::AntennaBudget { used, available: m_bs });
        }
        if let Some(m) = self.members.iter().find(|m| m.antennas < m_min.min(m_bs)) {
            return Err(Error::input("antennas", format!("user {} has {} < m_min = {m_min}", m.user, m.antennas)));
        }
        Ok(())
    }
}

/// Contiguous block of antennas steered at one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subarray {
    pub user: usize,
    pub start: usize,
    pub len: usize,
    pub steer: f64,
    /// Common phase applied to the block to keep it aligned with the
    /// preceding subarrays.
    pub phase: f64,
}

/// Analog weight vector of one RF chain, stored as its subarray layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogBeam {
    pub m_bs: usize,
    pub subarrays: Vec<Subarray>,
}

impl AnalogBeam {
    /// Full-array beam steered at one user.
    pub fn single(m_bs: usize, user: usize, steer: f64) -> Self {
        Self {
            m_bs,
            subarrays: vec![Subarray { user, start: 0, len: m_bs, steer, phase: 0.0 }],
        }
    }

    pub fn from_assignment(assign: &RfAssignment, m_bs: usize) -> Result<Self> {
        let used = assign.antennas_used();
        if used > m_bs {
            return Err(Error::AntennaBudget { used, available: m_bs });
        }
        let mut start = 0;
        let mut phase = 0.0;
        let mut subarrays = Vec::with_capacity(assign.members.len());
        for m in &assign.members {
            subarrays.push(Subarray { user: m.user, start, len: m.antennas, steer: m.steer, phase });
            start += m.antennas;
            phase -= m.antennas as f64 * PI * m.steer.cos();
        }
        Ok(Self { m_bs, subarrays })
    }

    /// `a_BS(θ)ᴴ w` in closed form.
    pub fn response(&self, theta: f64) -> C64 {
        let c = theta.cos();
        let scale = 1.0 / (self.m_bs as f64).sqrt();
        self.subarrays
            .iter()
            .map(|s| {
                cis(s.phase + s.start as f64 * PI * c) * geometric_sum(s.len, PI * (c - s.steer.cos())) * scale
            })
            .sum()
    }

    /// Dense weight vector, zero on unused antennas.
    pub fn weights(&self) -> CVector {
        let mut w = CVector::zeros(self.m_bs);
        for s in &self.subarrays {
            let block = subarray_weights(s.len, s.steer, s.phase, self.m_bs).expect("nonempty subarray");
            w.rows_mut(s.start, s.len).copy_from(&block);
        }
        w
    }

    pub fn users(&self) -> impl Iterator<Item = usize> + '_ {
        self.subarrays.iter().map(|s| s.user)
    }
}

/// Weights of one subarray: `(1/√M_BS)·e^{j·offset}·e^{-j·i·π·cos(steer)}`.
pub fn subarray_weights(m_k: usize, steer: f64, phase_offset: f64, m_bs: usize) -> Result<CVector> {
    if m_k == 0 {
        return Err(Error::input("m_k", "subarray must have at least one antenna"));
    }
    let scale = 1.0 / (m_bs as f64).sqrt();
    let step = -PI * steer.cos();
    Ok(CVector::from_iterator(m_k, (0..m_k).map(|i| cis(phase_offset + i as f64 * step) * scale)))
}

pub fn rf_chain_beamformer(assign: &RfAssignment, m_bs: usize) -> Result<CVector> {
    Ok(AnalogBeam::from_assignment(assign, m_bs)?.weights())
}

/// `|a_BS(θ)ᴴ w|` over a grid of angles.
pub fn beam_pattern(w: &CVector, angles: &[f64]) -> Result<Vec<f64>> {
    angles
        .iter()
        .map(|&theta| Ok(array_response(w.len(), theta)?.dotc(w).norm()))
        .collect()
}

/// Two-column CSV of a pattern, gains in dB.
pub fn pattern_csv(angles: &[f64], gains: &[f64]) -> String {
    let mut out = String::from("angle_deg,gain_db\n");
    for (a, g) in angles.iter().zip(gains) {
        let _ = writeln!(out, "{:.6},{:.6}", a.to_degrees(), 20.0 * g.max(1e-300).log10());
    }
    out
}

/// Uniform grid inside (0, π) with the given spacing in degrees, skipping
/// the endpoints.
pub fn angle_grid_deg(step_deg: f64) -> Vec<f64> {
    let n = (180.0 / step_deg).round() as usize;
    (1..n).map(|i| (i as f64 * step_deg).to_radians()).collect()
}

/// Matched filter `a_UE(aoa)/√M_UE`.
pub fn user_combiner(aoa: f64, m_ue: usize) -> Result<CVector> {
    Ok(array_response(m_ue, aoa)?.unscale((m_ue as f64).sqrt()))
}

/// A user's channel seen through its combiner, kept per path so that
/// `v_kᴴ H_k w` can be evaluated for any beam without forming matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProjection {
    /// `(θ_l, α_l·v_kᴴ a_UE(φ_l))` per path.
    pub terms: Vec<(f64, C64)>,
}

impl UserProjection {
    pub fn new(uc: &UserChannel, m_ue: usize) -> Self {
        let c0 = uc.los.aoa.cos();
        let scale = 1.0 / (m_ue as f64).sqrt();
        let terms = uc
            .paths()
            .map(|p| (p.aod, p.gain * geometric_sum(m_ue, PI * (c0 - p.aoa.cos())) * scale))
            .collect();
        Self { terms }
    }

    /// `v_kᴴ H_k w` for the given beam.
    pub fn gain(&self, beam: &AnalogBeam) -> C64 {
        self.terms.iter().map(|&(aod, c)| c * beam.response(aod)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerBank {
    pub beams: Vec<AnalogBeam>,
    pub combiners: Vec<CVector>,
}

impl BeamformerBank {
    pub fn new(beams: Vec<AnalogBeam>, channels: &[UserChannel], m_ue: usize) -> Result<Self> {
        let combiners = channels
            .iter()
            .map(|uc| user_combiner(uc.los.aoa, m_ue))
            .collect::<Result<_>>()?;
        Ok(Self { beams, combiners })
    }
}

/// `N_RF × K` matrix with entry `(r, k) = v_kᴴ H_k w_r`.
pub fn effective_channel(bank: &BeamformerBank, channels: &[UserChannel], m_ue: usize) -> CMatrix {
    let projections: Vec<UserProjection> = channels.iter().map(|uc| UserProjection::new(uc, m_ue)).collect();
    effective_channel_from(&bank.beams, &projections)
}

pub fn effective_channel_from(beams: &[AnalogBeam], projections: &[UserProjection]) -> CMatrix {
    CMatrix::from_fn(beams.len(), projections.len(), |r, k| projections[k].gain(&beams[r]))
}
