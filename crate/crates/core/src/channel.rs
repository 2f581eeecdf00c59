//! Saleh-Valenzuela channel model and per-drop user geometry.
//!
//! The BS sits at the centre of a flat-top hexagonal cell with its ULA laid
//! along the y axis, so broadside points along +x and the LOS angle of
//! departure of a user at `(x, y)` is `acos(y / d)`.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, CVector, C64};

/// Smallest distance kept between an angle and the open-interval endpoints.
const ANGLE_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    /// Angle of departure at the BS, radians in (0, π).
    pub aod: f64,
    /// Angle of arrival at the user, radians in (0, π).
    pub aoa: f64,
    /// Complex amplitude; `|gain|²` is the linear power gain.
    pub gain: C64,
}

impl PathComponent {
    pub fn new(aod: f64, aoa: f64, gain: C64) -> Result<Self> {
        check_angle("aod", aod)?;
        check_angle("aoa", aoa)?;
        if !(gain.re.is_finite() && gain.im.is_finite()) || gain.norm_sqr() == 0.0 {
            return Err(Error::input("gain", format!("must be finite and nonzero, got {gain}")));
        }
        Ok(Self { aod, aoa, gain })
    }

    pub fn power(&self) -> f64 {
        self.gain.norm_sqr()
    }
}

fn check_angle(field: &'static str, angle: f64) -> Result<()> {
    if angle > 0.0 && angle < PI {
        Ok(())
    } else {
        Err(Error::input(field, format!("angle {angle} is outside (0, π)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    /// 0-based user index; users are ordered by descending LOS power.
    pub index: usize,
    pub los: PathComponent,
    pub nlos: Vec<PathComponent>,
    pub distance_m: f64,
    pub position: (f64, f64),
    /// The LOS slot holds the strongest scattered path.
    pub los_blocked: bool,
}

impl UserChannel {
    pub fn los_power(&self) -> f64 {
        self.los.power()
    }

    /// LOS path followed by the NLOS paths.
    pub fn paths(&self) -> impl Iterator<Item = &PathComponent> {
        std::iter::once(&self.los).chain(self.nlos.iter())
    }

    /// Copy that keeps only the LOS component, i.e. the CSI available to
    /// the scheduler.
    pub fn los_only(&self) -> Self {
        Self {
            nlos: Vec::new(),
            ..self.clone()
        }
    }
}

/// Log-distance path loss, `PL(dB) = intercept + slope·log10(d)` plus
/// lognormal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossModel {
    pub los_intercept_db: f64,
    pub los_slope_db: f64,
    pub los_shadowing_db: f64,
    pub nlos_intercept_db: f64,
    pub nlos_slope_db: f64,
    pub nlos_shadowing_db: f64,
}

impl Default for PathLossModel {
    // 28 GHz urban micro fits.
    fn default() -> Self {
        Self {
            los_intercept_db: 61.4,
            los_slope_db: 20.0,
            los_shadowing_db: 5.8,
            nlos_intercept_db: 72.0,
            nlos_slope_db: 29.2,
            nlos_shadowing_db: 8.7,
        }
    }
}

impl PathLossModel {
    pub fn los_db(&self, distance_m: f64) -> f64 {
        self.los_intercept_db + self.los_slope_db * distance_m.log10()
    }

    pub fn nlos_db(&self, distance_m: f64) -> f64 {
        self.nlos_intercept_db + self.nlos_slope_db * distance_m.log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropConfig {
    pub num_users: usize,
    pub num_rf_chains: usize,
    pub m_bs: usize,
    pub m_ue: usize,
    pub m_min: usize,
    pub num_nlos_paths: usize,
    pub cell_radius_m: f64,
    pub min_distance_m: f64,
    /// Fraction of the cell in {1, 1/2, ..., 1/6}.
    pub cell_portion: f64,
    pub noise_power_dbm: f64,
    pub bs_power_dbm: f64,
    /// Rate requirements are uniform on `(low, high]` bits/s/Hz.
    pub r_min_range: (f64, f64),
    pub los_blockage_prob: f64,
    /// Seed used by [`seeded_drop`]. Monte Carlo runs ignore it and derive
    /// one stream per drop from the experiment's master seed.
    pub rng_seed: u64,
    pub path_loss: PathLossModel,
}

impl Default for DropConfig {
    fn default() -> Self {
        Self {
            num_users: 7,
            num_rf_chains: 4,
            m_bs: 100,
            m_ue: 10,
            m_min: 10,
            num_nlos_paths: 10,
            cell_radius_m: 200.0,
            min_distance_m: 10.0,
            cell_portion: 1.0,
            noise_power_dbm: -80.0,
            bs_power_dbm: 46.0,
            r_min_range: (0.0, 5.0),
            los_blockage_prob: 0.0,
            rng_seed: 0,
            path_loss: PathLossModel::default(),
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

impl DropConfig {
    pub fn validate(&self) -> Result<()> {
        let (k, n) = (self.num_users, self.num_rf_chains);
        if n == 0 {
            return Err(Error::config("num_rf_chains", "must be at least 1"));
        }
        if k < n || k > 2 * n {
            return Err(Error::config(
                "num_users",
                format!("need num_rf_chains <= num_users <= 2*num_rf_chains, got {k} users on {n} chains"),
            ));
        }
        if self.m_ue == 0 {
            return Err(Error::config("m_ue", "must be at least 1"));
        }
        if self.m_min == 0 || 2 * self.m_min > self.m_bs {
            return Err(Error::config(
                "m_min",
                format!("need 1 <= m_min and 2*m_min <= m_bs, got m_min={} m_bs={}", self.m_min, self.m_bs),
            ));
        }
        if !(self.cell_radius_m > 0.0) {
            return Err(Error::config("cell_radius_m", "must be positive"));
        }
        let inradius = self.cell_radius_m * 3f64.sqrt() / 2.0;
        if !(self.min_distance_m > 0.0 && self.min_distance_m < inradius) {
            return Err(Error::config(
                "min_distance_m",
                format!("must lie in (0, {inradius:.1}) for this cell radius"),
            ));
        }
        self.portion_denominator()?;
        let (lo, hi) = self.r_min_range;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config("r_min_range", format!("need 0 <= low < high, got ({lo}, {hi})")));
        }
        if !(0.0..=1.0).contains(&self.los_blockage_prob) {
            return Err(Error::config("los_blockage_prob", "must be a probability"));
        }
        if !self.noise_power_dbm.is_finite() || !self.bs_power_dbm.is_finite() {
            return Err(Error::config("noise_power_dbm", "powers must be finite"));
        }
        Ok(())
    }

    /// `n` such that `cell_portion = 1/n`.
    pub fn portion_denominator(&self) -> Result<u32> {
        let p = self.cell_portion;
        (1..=6u32)
            .find(|&n| (p - 1.0 / n as f64).abs() < 1e-9)
            .ok_or_else(|| Error::config("cell_portion", format!("must be one of 1, 1/2, ..., 1/6, got {p}")))
    }

    pub fn noise_mw(&self) -> f64 {
        dbm_to_mw(self.noise_power_dbm)
    }

    pub fn bs_power_mw(&self) -> f64 {
        dbm_to_mw(self.bs_power_dbm)
    }
}

/// `a(angle)`, entry `i` equal to `e^{-j·i·π·cos(angle)}`.
pub fn array_response(m: usize, angle: f64) -> Result<CVector> {
    if m == 0 {
        return Err(Error::input("m", "array must have at least one antenna"));
    }
    check_angle("angle", angle)?;
    let step = -PI * angle.cos();
    Ok(CVector::from_iterator(m, (0..m).map(|i| cis(i as f64 * step))))
}

/// `H = Σ_l α_l a_UE(φ_l) a_BS(θ_l)ᴴ` over the LOS and NLOS paths.
pub fn channel_matrix(uc: &UserChannel, m_ue: usize, m_bs: usize) -> Result<CMatrix> {
    let mut h = CMatrix::zeros(m_ue, m_bs);
    for path in uc.paths() {
        let a_ue = array_response(m_ue, path.aoa)?;
        let a_bs = array_response(m_bs, path.aod)?;
        h += (a_ue * a_bs.adjoint()) * path.gain;
    }
    Ok(h)
}

pub fn in_hexagon(x: f64, y: f64, radius: f64) -> bool {
    let s3 = 3f64.sqrt();
    y.abs() <= radius * s3 / 2.0 && s3 * x.abs() + y.abs() <= s3 * radius
}

/// Wedge of angular width `2π/denominator` centred on the array axis (+y).
pub fn in_portion(x: f64, y: f64, denominator: u32) -> bool {
    if denominator == 1 {
        return true;
    }
    let half_width = PI / denominator as f64;
    // Half-widths never exceed π/2 here, so the wedge cannot straddle the
    // atan2 branch cut at ±π.
    (y.atan2(x) - PI / 2.0).abs() <= half_width + 1e-12
}

/// LOS angle of departure for a user at `(x, y)`.
pub fn los_aod(x: f64, y: f64) -> f64 {
    let d = x.hypot(y);
    (y / d).clamp(-1.0, 1.0).acos().clamp(ANGLE_GUARD, PI - ANGLE_GUARD)
}

/// Uniform point in the selected cell portion, at least `min_distance_m`
/// away from the BS.
pub fn sample_position<R: Rng + ?Sized>(cfg: &DropConfig, denominator: u32, rng: &mut R) -> (f64, f64) {
    let r = cfg.cell_radius_m;
    let half_h = r * 3f64.sqrt() / 2.0;
    loop {
        let x = rng.random_range(-r..=r);
        let y = rng.random_range(-half_h..=half_h);
        if in_hexagon(x, y, r) && x.hypot(y) >= cfg.min_distance_m && in_portion(x, y, denominator) {
            return (x, y);
        }
    }
}

fn uniform_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0.0..PI).clamp(ANGLE_GUARD, PI - ANGLE_GUARD)
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn draw_user<R: Rng + ?Sized>(cfg: &DropConfig, denominator: u32, rng: &mut R) -> UserChannel {
    let pl = &cfg.path_loss;
    let (x, y) = sample_position(cfg, denominator, rng);
    let d = x.hypot(y);

    let los_shadow = Normal::new(0.0, pl.los_shadowing_db).expect("finite sigma").sample(rng);
    let nlos_shadow = Normal::new(0.0, pl.nlos_shadowing_db).expect("finite sigma").sample(rng);
    let psi = rng.random_range(0.0..TAU);
    let los_aoa = uniform_angle(rng);
    let blocked = rng.random::<f64>() < cfg.los_blockage_prob;

    let los_amp = 10f64.powf(-(pl.los_db(d) + los_shadow) / 20.0);
    let nlos_amp = 10f64.powf(-(pl.nlos_db(d) + nlos_shadow) / 20.0);

    let n_draw = cfg.num_nlos_paths + usize::from(blocked);
    let mut nlos: Vec<PathComponent> = (0..n_draw)
        .map(|_| {
            let aod = uniform_angle(rng);
            let aoa = uniform_angle(rng);
            let mut g = complex_normal(rng);
            if g.norm_sqr() == 0.0 {
                g = C64::new(f64::MIN_POSITIVE.sqrt(), 0.0);
            }
            PathComponent { aod, aoa, gain: g * nlos_amp }
        })
        .collect();

    let los = if blocked {
        let strongest = nlos
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.power().total_cmp(&b.1.power()))
            .map(|(i, _)| i)
            .expect("at least one scattered path when blocked");
        nlos.remove(strongest)
    } else {
        PathComponent {
            aod: los_aod(x, y),
            aoa: los_aoa,
            gain: cis(psi) * los_amp,
        }
    };

    UserChannel {
        index: 0,
        los,
        nlos,
        distance_m: d,
        position: (x, y),
        los_blocked: blocked,
    }
}

/// Draws `K` users and returns them sorted by descending LOS power.
pub fn generate_drop<R: Rng + ?Sized>(cfg: &DropConfig, rng: &mut R) -> Result<Vec<UserChannel>> {
    cfg.validate()?;
    let denominator = cfg.portion_denominator()?;
    let mut users: Vec<UserChannel> = (0..cfg.num_users).map(|_| draw_user(cfg, denominator, rng)).collect();
    // Stable sort keeps generation order among exact ties.
    users.sort_by(|a, b| b.los_power().total_cmp(&a.los_power()));
    for (i, u) in users.iter_mut().enumerate() {
        u.index = i;
    }
    Ok(users)
}

/// A drop drawn from a ChaCha8 stream seeded with `cfg.rng_seed`.
pub fn seeded_drop(cfg: &DropConfig) -> Result<Vec<UserChannel>> {
    generate_drop(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(cfg.rng_seed))
}

/// Per-user minimum rates, uniform on `(low, high]`.
pub fn draw_rate_requirements<R: Rng + ?Sized>(cfg: &DropConfig, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = cfg.r_min_range;
    (0..cfg.num_users)
        .map(|_| hi - (hi - lo) * rng.random::<f64>())
        .collect()
}
