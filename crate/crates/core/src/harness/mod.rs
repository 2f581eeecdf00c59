//! Monte Carlo orchestration: per-drop pipeline, experiment presets, CSV
//! output and the acceptance gates.

mod experiment;
pub mod oracle;

pub use experiment::{
    load_config, run_experiment, ConfigFile, ConvergenceRow, Experiment, ExperimentOutput, ExperimentSection, Preset,
    RawRow, ResultRow, CONVERGENCE_HEADER, RAW_HEADER, RESULT_HEADER,
};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{oma_baseline, single_beam_noma_baseline};
use crate::channel::{draw_rate_requirements, generate_drop, UserChannel};
use crate::downlink::{group_users, group_users_exhaustively, multi_beam_noma, DropContext, GroupingOutcome, SchemeOutcome, SystemConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Multi-beam NOMA with coalition-formation grouping.
    Proposed,
    /// Multi-beam NOMA with exhaustively optimal grouping; small drops only.
    Exhaustive,
    SingleBeam,
    Oma,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Proposed, Scheme::Exhaustive, Scheme::SingleBeam, Scheme::Oma];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Exhaustive => "exhaustive",
            Scheme::SingleBeam => "single_beam",
            Scheme::Oma => "oma",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::config("schemes", format!("unknown scheme `{s}`, expected one of proposed, exhaustive, single_beam, oma")))
    }
}

/// RNG for drop `drop`: one ChaCha stream per drop under the master seed, so
/// a drop is identical whatever the thread count or the other drops.
pub fn drop_rng(master_seed: u64, drop: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(drop);
    rng
}

/// One scheme on one drop. `outcome` is an error only for drops the scheme
/// cannot serve at all (ill-conditioned or vanishing equivalent channels);
/// such drops are left out of that scheme's averages.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRun {
    pub scheme: Scheme,
    pub outcome: std::result::Result<SchemeOutcome, Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropReport {
    pub drop: u64,
    pub channels: Vec<UserChannel>,
    pub r_min: Vec<f64>,
    /// Stage-one result of the proposed scheme, when it ran.
    pub grouping: Option<GroupingOutcome>,
    pub runs: Vec<SchemeRun>,
}

impl DropReport {
    pub fn run(&self, scheme: Scheme) -> Option<&SchemeRun> {
        self.runs.iter().find(|r| r.scheme == scheme)
    }

    /// Sum-rate of `scheme`, if it ran and served the drop.
    pub fn sum_rate(&self, scheme: Scheme) -> Option<f64> {
        self.run(scheme)?.outcome.as_ref().ok().map(|o| o.sum_rate)
    }
}

fn skippable(e: &Error) -> bool {
    matches!(e, Error::IllConditioned { .. } | Error::DegenerateChannel { .. })
}

/// Draws drop `drop` and runs every requested scheme on the same users.
pub fn run_single_drop(cfg: &SystemConfig, master_seed: u64, drop: u64, schemes: &[Scheme]) -> Result<DropReport> {
    let go = || -> Result<DropReport> {
        let mut rng = drop_rng(master_seed, drop);
        let channels = generate_drop(&cfg.drop, &mut rng)?;
        let r_min = draw_rate_requirements(&cfg.drop, &mut rng);
        let ctx = DropContext::new(&channels, &r_min, cfg)?;
        let mut grouping = None;
        let mut runs = Vec::with_capacity(schemes.len());
        for &scheme in schemes {
            let outcome = match scheme {
                Scheme::Proposed => {
                    let g = group_users(&ctx)?;
                    let out = multi_beam_noma(&ctx, &g);
                    grouping = Some(g);
                    out
                }
                Scheme::Exhaustive => multi_beam_noma(&ctx, &group_users_exhaustively(&ctx)?),
                Scheme::SingleBeam => single_beam_noma_baseline(&ctx),
                Scheme::Oma => oma_baseline(&ctx),
            };
            match outcome {
                Err(e) if !skippable(&e) => return Err(e),
                outcome => runs.push(SchemeRun { scheme, outcome }),
            }
        }
        Ok(DropReport { drop, channels: channels.clone(), r_min: r_min.clone(), grouping, runs })
    };
    go().map_err(|e| e.in_drop(drop))
}

/// Pairwise summation, which keeps rounding error at O(log n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Sample mean and standard error of the mean (zero for fewer than two
/// samples).
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn drop_streams_are_independent_of_order() {
        let a: u64 = drop_rng(7, 3).random();
        let _ = drop_rng(7, 2).random::<u64>();
        assert_eq!(a, drop_rng(7, 3).random::<u64>());
        assert_ne!(a, drop_rng(7, 4).random::<u64>());
        assert_ne!(a, drop_rng(8, 3).random::<u64>());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!(matches!("noma".parse::<Scheme>(), Err(Error::Config { .. })));
    }

    #[test]
    fn statistics_match_direct_formulas() {
        let xs: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        let direct_mean = xs.iter().sum::<f64>() / 37.0;
        let direct_var = xs.iter().map(|x| (x - direct_mean).powi(2)).sum::<f64>() / 36.0;
        let (m, se) = mean_and_std_error(&xs);
        assert_relative_eq!(m, direct_mean, max_relative = 1e-14);
        assert_relative_eq!(se, (direct_var / 37.0).sqrt(), max_relative = 1e-12);
        assert_eq!(mean_and_std_error(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn schemes_share_one_drop() {
        let mut cfg = SystemConfig::default();
        cfg.drop.num_users = 4;
        cfg.drop.num_rf_chains = 2;
        let rep = run_single_drop(&cfg, 11, 5, &[Scheme::Proposed, Scheme::Oma]).unwrap();
        let alone = run_single_drop(&cfg, 11, 5, &[Scheme::Oma]).unwrap();
        assert_eq!(rep.channels, alone.channels);
        assert_eq!(rep.sum_rate(Scheme::Oma), alone.sum_rate(Scheme::Oma));
        assert!(rep.grouping.is_some() && alone.grouping.is_none());
    }
}
