use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_and_std_error, run_single_drop, DropReport, Scheme};
use crate::channel::DropConfig;
use crate::downlink::{PrecodingConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::grouping::GroupingConfig;
use crate::power::{PowerConfig, SCA_TRACE_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Coalition formation trace; sweeps the RF chain count with
    /// `K = N_RF + 2`.
    Convergence,
    /// Sum-rate against BS transmit power in dBm.
    SumrateVsPower,
    /// Sum-rate against BS array size.
    SumrateVsAntennas,
    /// Sum-rate against user density, as the covered fraction of the cell.
    SumrateVsDensity,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Convergence, Preset::SumrateVsPower, Preset::SumrateVsAntennas, Preset::SumrateVsDensity];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Convergence => "convergence",
            Preset::SumrateVsPower => "sumrate_vs_power",
            Preset::SumrateVsAntennas => "sumrate_vs_antennas",
            Preset::SumrateVsDensity => "sumrate_vs_density",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Preset::Convergence => vec![3.0, 6.0],
            Preset::SumrateVsPower => (0..14).map(|i| 20.0 + 2.0 * i as f64).collect(),
            Preset::SumrateVsAntennas => vec![50.0, 100.0, 150.0, 200.0],
            Preset::SumrateVsDensity => vec![1.0, 1.0 / 2.0, 1.0 / 4.0, 1.0 / 6.0],
        }
    }

    pub fn default_schemes(self) -> Vec<Scheme> {
        match self {
            Preset::Convergence => vec![Scheme::Proposed],
            _ => vec![Scheme::Proposed, Scheme::SingleBeam, Scheme::Oma],
        }
    }

    pub fn base_config(self) -> SystemConfig {
        let mut cfg = SystemConfig::default();
        let (k, n) = match self {
            Preset::Convergence => (5, 3),
            Preset::SumrateVsDensity => (12, 8),
            _ => (7, 4),
        };
        cfg.drop.num_users = k;
        cfg.drop.num_rf_chains = n;
        cfg.drop.bs_power_dbm = 30.0;
        cfg
    }

    /// `base` with the swept parameter set to `value`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut cfg = base.clone();
        let whole = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= 1e6 {
                Ok(value as usize)
            } else {
                Err(Error::config("experiment.grid", format!("{} needs positive integers, got {value}", self.name())))
            }
        };
        match self {
            Preset::Convergence => {
                cfg.drop.num_rf_chains = whole()?;
                cfg.drop.num_users = cfg.drop.num_rf_chains + 2;
            }
            Preset::SumrateVsPower => cfg.drop.bs_power_dbm = value,
            Preset::SumrateVsAntennas => cfg.drop.m_bs = whole()?,
            Preset::SumrateVsDensity => cfg.drop.cell_portion = value,
        }
        Ok(cfg)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config("preset", format!("unknown preset `{s}`")))
    }
}

/// The `[experiment]` table; unset fields keep the preset defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub drops: Option<usize>,
    pub seed: Option<u64>,
    pub grid: Option<Vec<f64>>,
    pub schemes: Option<Vec<Scheme>>,
    pub trace: Option<bool>,
}

/// A TOML config file. A section that is present replaces the preset's
/// defaults for that section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub drop: Option<DropConfig>,
    pub grouping: Option<GroupingConfig>,
    pub precoding: Option<PrecodingConfig>,
    pub power: Option<PowerConfig>,
    pub experiment: ExperimentSection,
}

impl FromStr for ConfigFile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config("config", e.message().to_string()))
    }
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    fs::read_to_string(path)?.parse()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub preset: Preset,
    pub grid: Vec<f64>,
    pub drops: usize,
    pub seed: u64,
    pub base: SystemConfig,
    pub schemes: Vec<Scheme>,
    /// Also collect per-drop SCA traces.
    pub trace: bool,
}

impl Experiment {
    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            grid: preset.default_grid(),
            drops: 200,
            seed: 1,
            base: preset.base_config(),
            schemes: preset.default_schemes(),
            trace: false,
        }
    }

    pub fn with_config(preset: Preset, file: &ConfigFile) -> Self {
        let mut exp = Self::new(preset);
        if let Some(d) = &file.drop {
            exp.base.drop = d.clone();
        }
        if let Some(g) = &file.grouping {
            exp.base.grouping = g.clone();
        }
        if let Some(p) = &file.precoding {
            exp.base.precoding = p.clone();
        }
        if let Some(p) = &file.power {
            exp.base.power = p.clone();
        }
        let e = &file.experiment;
        exp.drops = e.drops.unwrap_or(exp.drops);
        exp.seed = e.seed.unwrap_or(exp.seed);
        exp.grid = e.grid.clone().unwrap_or(exp.grid);
        exp.schemes = e.schemes.clone().unwrap_or(exp.schemes);
        exp.trace = e.trace.unwrap_or(exp.trace);
        exp
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::config("experiment.grid", "must not be empty"));
        }
        if self.drops == 0 {
            return Err(Error::config("experiment.drops", "must be at least 1"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("experiment.schemes", "must not be empty"));
        }
        let mut seen = self.schemes.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return Err(Error::config("experiment.schemes", "lists a scheme twice"));
        }
        for &v in &self.grid {
            self.preset.apply(&self.base, v)?.validate().map_err(|e| match e {
                Error::Config { field, reason } => Error::config(field, format!("{reason} (at grid value {v})")),
                other => other,
            })?;
        }
        Ok(())
    }
}

pub const RESULT_HEADER: &str = "preset,sweep,scheme,mean_sum_rate,std_error,infeasible_qos_fraction,drops";
pub const RAW_HEADER: &str = "preset,sweep,scheme,drop,sum_rate,qos_enforced,status";
pub const CONVERGENCE_HEADER: &str = "sweep,operation,mean_sum_rate,active_drops";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub preset: Preset,
    pub sweep: f64,
    pub scheme: Scheme,
    pub mean_sum_rate: f64,
    pub std_error: f64,
    /// Fraction of served drops that needed the QoS fallback.
    pub infeasible_qos_fraction: f64,
    /// Drops the scheme served.
    pub drops: usize,
}

impl ResultRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{},{:.9},{:.9},{:.6},{}",
            self.preset, self.sweep, self.scheme, self.mean_sum_rate, self.std_error, self.infeasible_qos_fraction, self.drops
        )
    }
}

/// One scheme on one drop, as dumped to the raw CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub sweep: f64,
    pub scheme: Scheme,
    pub drop: u64,
    /// `None` when the scheme could not serve the drop.
    pub sum_rate: Option<f64>,
    pub qos_enforced: bool,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub sweep: f64,
    pub operation: usize,
    /// Conditional sum-rate after this many accepted operations, averaged
    /// over drops; drops that stopped earlier contribute their final value.
    pub mean_sum_rate: f64,
    /// Drops that accepted at least this many operations.
    pub active_drops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub preset: Preset,
    pub rows: Vec<ResultRow>,
    pub raw: Vec<RawRow>,
    pub convergence: Vec<ConvergenceRow>,
    /// Accepted coalition formation operations per drop, for each sweep point.
    pub operations: Vec<(f64, Vec<usize>)>,
    /// Per-slot SCA trace lines, when requested.
    pub sca_trace: Vec<String>,
}

impl ExperimentOutput {
    pub fn row(&self, sweep: f64, scheme: Scheme) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.sweep == sweep && r.scheme == scheme)
    }

    pub fn results_csv(&self) -> String {
        csv(RESULT_HEADER, self.rows.iter().map(ResultRow::csv_row))
    }

    pub fn raw_csv(&self) -> String {
        csv(
            RAW_HEADER,
            self.raw.iter().map(|r| {
                let rate = r.sum_rate.map(|v| format!("{v:.12e}")).unwrap_or_default();
                format!("{},{:.6},{},{},{},{},{}", self.preset, r.sweep, r.scheme, r.drop, rate, r.qos_enforced, r.status)
            }),
        )
    }

    pub fn convergence_csv(&self) -> String {
        csv(
            CONVERGENCE_HEADER,
            self.convergence
                .iter()
                .map(|c| format!("{:.6},{},{:.9},{}", c.sweep, c.operation, c.mean_sum_rate, c.active_drops)),
        )
    }

    pub fn sca_trace_csv(&self) -> String {
        csv(&format!("sweep,scheme,drop,slot,{SCA_TRACE_HEADER}"), self.sca_trace.iter().cloned())
    }

    /// Writes `<preset>.csv`, `<preset>_raw.csv` and, when present, the
    /// convergence and SCA trace files. Returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let name = self.preset.name();
        let mut files = vec![(format!("{name}.csv"), self.results_csv()), (format!("{name}_raw.csv"), self.raw_csv())];
        if !self.convergence.is_empty() {
            files.push((format!("{name}_formation.csv"), self.convergence_csv()));
        }
        if !self.sca_trace.is_empty() {
            files.push((format!("{name}_sca_trace.csv"), self.sca_trace_csv()));
        }
        let mut paths = Vec::new();
        for (file, body) in files {
            let path = dir.join(file);
            fs::write(&path, body)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

fn csv(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

fn status(e: &Error) -> &'static str {
    match e {
        Error::IllConditioned { .. } => "ill_conditioned",
        Error::DegenerateChannel { .. } => "degenerate_channel",
        _ => "error",
    }
}

fn convergence_rows(sweep: f64, reports: &[DropReport]) -> Vec<ConvergenceRow> {
    let traces: Vec<Vec<f64>> = reports
        .iter()
        .filter_map(|r| r.grouping.as_ref()?.formation.as_ref())
        .map(|f| f.trace.iter().map(|t| t.value).collect())
        .collect();
    let longest = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|op| {
            let vals: Vec<f64> = traces.iter().map(|t| t[op.min(t.len() - 1)]).collect();
            ConvergenceRow {
                sweep,
                operation: op,
                mean_sum_rate: super::pairwise_sum(&vals) / vals.len() as f64,
                active_drops: traces.iter().filter(|t| t.len() > op).count(),
            }
        })
        .collect()
}

/// Runs every sweep point over `exp.drops` drops. Drop `i` uses the same
/// random stream at every sweep point, so points differ only in the swept
/// parameter. Output is deterministic for a given seed.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentOutput> {
    exp.validate()?;
    let mut out = ExperimentOutput {
        preset: exp.preset,
        rows: Vec::new(),
        raw: Vec::new(),
        convergence: Vec::new(),
        operations: Vec::new(),
        sca_trace: Vec::new(),
    };
    for &sweep in &exp.grid {
        let cfg = exp.preset.apply(&exp.base, sweep)?;
        let reports = (0..exp.drops as u64)
            .into_par_iter()
            .map(|d| run_single_drop(&cfg, exp.seed, d, &exp.schemes))
            .collect::<Result<Vec<_>>>()?;
        for &scheme in &exp.schemes {
            let mut rates = Vec::with_capacity(reports.len());
            let mut fallbacks = 0;
            for rep in &reports {
                let run = rep.run(scheme).expect("every requested scheme runs on every drop");
                let raw = match &run.outcome {
                    Ok(o) => {
                        rates.push(o.sum_rate);
                        fallbacks += usize::from(!o.qos_enforced);
                        if exp.trace {
                            for (s, slot) in o.slots.iter().enumerate() {
                                for t in &slot.allocation.outcome.trace {
                                    out.sca_trace.push(format!("{sweep:.6},{scheme},{},{s},{}", rep.drop, t.csv_row()));
                                }
                            }
                        }
                        RawRow { sweep, scheme, drop: rep.drop, sum_rate: Some(o.sum_rate), qos_enforced: o.qos_enforced, status: "ok".into() }
                    }
                    Err(e) => RawRow { sweep, scheme, drop: rep.drop, sum_rate: None, qos_enforced: false, status: status(e).into() },
                };
                out.raw.push(raw);
            }
            let (mean, se) = mean_and_std_error(&rates);
            let n = rates.len();
            out.rows.push(ResultRow {
                preset: exp.preset,
                sweep,
                scheme,
                mean_sum_rate: mean,
                std_error: se,
                infeasible_qos_fraction: if n == 0 { 0.0 } else { fallbacks as f64 / n as f64 },
                drops: n,
            });
        }
        if exp.schemes.contains(&Scheme::Proposed) {
            out.operations.push((
                sweep,
                reports.iter().filter_map(|r| r.grouping.as_ref()?.formation.as_ref()).map(|f| f.operations).collect(),
            ));
            if exp.preset == Preset::Convergence {
                out.convergence.extend(convergence_rows(sweep, &reports));
            }
        }
    }
    Ok(out)
}
