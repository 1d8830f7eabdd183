//! TOML configuration: system parameters, layout and sweep definitions.
//!
//! Every field is optional; absent fields take the default simulation
//! parameters. Powers accept a plain number (watts) or a string with a unit:
//! `"30 dBm"`, `"0 dBW"`, `"1 W"`, `"100 mW"`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::candidate_angles;
use crate::scenario::{Layout, SystemParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{origin}:{line}:{column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },

    #[error("invalid override `{0}` (expected dotted.key=value)")]
    Override(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// A power given either in watts or as text with a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PowerValue {
    Watts(f64),
    Text(String),
}

impl PowerValue {
    pub fn watts(&self) -> Result<f64, String> {
        match self {
            PowerValue::Watts(w) => Ok(*w),
            PowerValue::Text(t) => parse_power(t),
        }
    }
}

/// Parses `"<number> <unit>"` with unit dBm, dBW, W or mW (case-insensitive).
pub fn parse_power(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let split = t
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(|| format!("power `{text}` has no unit (use dBm, dBW, W or mW)"))?;
    let (num, unit) = t.split_at(split);
    let value: f64 = num.trim().parse().map_err(|_| format!("power `{text}` has no valid number"))?;
    let w = match unit.trim().to_ascii_lowercase().as_str() {
        "dbm" => crate::dbm_to_watts(value),
        "dbw" => 10f64.powf(value / 10.0),
        "w" => value,
        "mw" => value * 1e-3,
        other => return Err(format!("unknown power unit `{other}` in `{text}`")),
    };
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    CrbVsK,
    CrbVsN,
    RateVsInvCrb,
    RateVsK,
    RateVsN,
    DofSlope,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 6] = [
        ExperimentName::CrbVsK,
        ExperimentName::CrbVsN,
        ExperimentName::RateVsInvCrb,
        ExperimentName::RateVsK,
        ExperimentName::RateVsN,
        ExperimentName::DofSlope,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::CrbVsK => "crb_vs_k",
            ExperimentName::CrbVsN => "crb_vs_n",
            ExperimentName::RateVsInvCrb => "rate_vs_inv_crb",
            ExperimentName::RateVsK => "rate_vs_k",
            ExperimentName::RateVsN => "rate_vs_n",
            ExperimentName::DofSlope => "dof_slope",
        }
    }

    /// Schemes that make sense for this sweep.
    fn accepts(&self, scheme: Scheme) -> bool {
        use Scheme::*;
        match self {
            ExperimentName::CrbVsK | ExperimentName::CrbVsN => {
                matches!(scheme, SensingOriented | CommOriented | MaxEigenmode)
            }
            ExperimentName::DofSlope => matches!(scheme, CommOriented),
            _ => true,
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ExperimentName::ALL.iter().map(|e| e.as_str()).collect();
                format!("unknown experiment `{s}` (expected one of {}, or all)", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    SensingOriented,
    CommOriented,
    MaxEigenmode,
    Proposed,
    TimeSwitching,
    /// Proposed design restricted to deployments of exactly this many sites.
    FixedK(usize),
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::SensingOriented => f.write_str("sensing_oriented"),
            Scheme::CommOriented => f.write_str("comm_oriented"),
            Scheme::MaxEigenmode => f.write_str("max_eigenmode"),
            Scheme::Proposed => f.write_str("proposed"),
            Scheme::TimeSwitching => f.write_str("time_switching"),
            Scheme::FixedK(k) => write!(f, "fixed_k={k}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sensing_oriented" => Ok(Scheme::SensingOriented),
            "comm_oriented" => Ok(Scheme::CommOriented),
            "max_eigenmode" => Ok(Scheme::MaxEigenmode),
            "proposed" => Ok(Scheme::Proposed),
            "time_switching" => Ok(Scheme::TimeSwitching),
            _ => match s.strip_prefix("fixed_k=") {
                Some(k) => k
                    .trim()
                    .parse()
                    .map(Scheme::FixedK)
                    .map_err(|_| format!("scheme `{s}` needs an integer site count")),
                None => Err(format!(
                    "unknown scheme `{s}` (expected sensing_oriented, comm_oriented, max_eigenmode, \
                     proposed, time_switching or fixed_k=K)"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSetting {
    /// Co-located search when the CU and target coincide, SCA otherwise.
    Auto,
    CoLocated,
    General,
}

impl FromStr for ModeSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(ModeSetting::Auto),
            "co_located" => Ok(ModeSetting::CoLocated),
            "general" => Ok(ModeSetting::General),
            _ => Err(format!("unknown search mode `{s}` (expected auto, co_located or general)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawSystem {
    pub m_t: usize,
    pub m_r: usize,
    pub n_r: usize,
    pub n_total: usize,
    pub t_symbols: usize,
    pub p_max: PowerValue,
    pub sigma2_c: PowerValue,
    pub sigma2_s: PowerValue,
    /// Target reflection coefficient power.
    pub beta_sq: f64,
}

impl Default for RawSystem {
    fn default() -> Self {
        RawSystem {
            m_t: 32,
            m_r: 8,
            n_r: 8,
            n_total: 800,
            t_symbols: 256,
            p_max: PowerValue::Text("30 dBm".into()),
            sigma2_c: PowerValue::Text("-80 dBm".into()),
            sigma2_s: PowerValue::Text("-110 dBm".into()),
            beta_sq: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawGeometry {
    pub bs: [f64; 2],
    pub cu: [f64; 2],
    pub target: [f64; 2],
    pub ring_radius: f64,
    pub k0_db: f64,
    pub alpha: f64,
    pub candidates: usize,
}

impl Default for RawGeometry {
    fn default() -> Self {
        let l = Layout::default();
        RawGeometry {
            bs: l.bs,
            cu: l.cu,
            target: l.target,
            ring_radius: l.ring_radius,
            k0_db: l.k0_db,
            alpha: l.alpha,
            candidates: l.candidates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrbVsKSweep {
    pub k_grid: Vec<usize>,
    pub schemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrbVsNSweep {
    pub n_grid: Vec<usize>,
    pub k_values: Vec<usize>,
    pub schemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateVsInvCrbSweep {
    /// `10 log10(1 / epsilon)` values.
    pub inv_crb_db: Vec<f64>,
    pub schemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateVsKSweep {
    pub k_grid: Vec<usize>,
    pub epsilon_db: f64,
    pub schemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateVsNSweep {
    pub n_grid: Vec<usize>,
    pub epsilon_db: f64,
    pub schemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DofSlopeSweep {
    pub k_values: Vec<usize>,
    pub p_grid_dbm: Vec<f64>,
    pub schemes: Vec<String>,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

const CRB_SCHEMES: [&str; 3] = ["sensing_oriented", "comm_oriented", "max_eigenmode"];
const N_GRID: [usize; 5] = [200, 400, 600, 800, 1000];

impl Default for CrbVsKSweep {
    fn default() -> Self {
        CrbVsKSweep { k_grid: vec![1, 2, 4, 8], schemes: names(&CRB_SCHEMES) }
    }
}

impl Default for CrbVsNSweep {
    fn default() -> Self {
        CrbVsNSweep { n_grid: N_GRID.to_vec(), k_values: vec![1, 4, 8], schemes: names(&CRB_SCHEMES) }
    }
}

impl Default for RateVsInvCrbSweep {
    fn default() -> Self {
        RateVsInvCrbSweep {
            inv_crb_db: (0..=14).map(|i| 20.0 + 1.5 * i as f64).collect(),
            schemes: names(&["proposed", "comm_oriented", "time_switching"]),
        }
    }
}

impl Default for RateVsKSweep {
    fn default() -> Self {
        RateVsKSweep { k_grid: vec![1, 2, 4, 8], epsilon_db: -36.0, schemes: names(&["proposed", "comm_oriented"]) }
    }
}

impl Default for RateVsNSweep {
    fn default() -> Self {
        RateVsNSweep {
            n_grid: N_GRID.to_vec(),
            epsilon_db: -42.0,
            schemes: names(&["proposed", "time_switching", "fixed_k=1", "fixed_k=8"]),
        }
    }
}

impl Default for DofSlopeSweep {
    fn default() -> Self {
        DofSlopeSweep {
            k_values: vec![1, 4, 8],
            p_grid_dbm: (0..=6).map(|i| 40.0 + 10.0 * i as f64).collect(),
            schemes: names(&["comm_oriented"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawExperiment {
    /// One experiment name or `all`.
    pub name: String,
    pub seed: u64,
    pub output: String,
    /// `auto`, `co_located` or `general`.
    pub mode: String,
    /// Random restarts of the SCA beyond the default initialization.
    pub sca_restarts: usize,
    pub sca_max_iter: usize,
    pub sca_tol: f64,
    pub symmetry_shortcut: bool,
    pub crb_vs_k: CrbVsKSweep,
    pub crb_vs_n: CrbVsNSweep,
    pub rate_vs_inv_crb: RateVsInvCrbSweep,
    pub rate_vs_k: RateVsKSweep,
    pub rate_vs_n: RateVsNSweep,
    pub dof_slope: DofSlopeSweep,
}

impl Default for RawExperiment {
    fn default() -> Self {
        RawExperiment {
            name: "all".into(),
            seed: 0,
            output: "results.csv".into(),
            mode: "auto".into(),
            sca_restarts: 0,
            sca_max_iter: 200,
            sca_tol: 1e-6,
            symmetry_shortcut: true,
            crb_vs_k: CrbVsKSweep::default(),
            crb_vs_n: CrbVsNSweep::default(),
            rate_vs_inv_crb: RateVsInvCrbSweep::default(),
            rate_vs_k: RateVsKSweep::default(),
            rate_vs_n: RateVsNSweep::default(),
            dof_slope: DofSlopeSweep::default(),
        }
    }
}

/// Configuration file contents, before validation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawConfig {
    pub system: RawSystem,
    pub geometry: RawGeometry,
    pub experiment: RawExperiment,
}

/// Sweep of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    SiteCount { k_grid: Vec<usize> },
    ElementCount { n_grid: Vec<usize>, k_values: Vec<usize> },
    InverseCrb { inv_crb_db: Vec<f64> },
    SiteCountAtCrb { k_grid: Vec<usize>, epsilon: f64 },
    ElementCountAtCrb { n_grid: Vec<usize>, epsilon: f64 },
    Power { k_values: Vec<usize>, p_grid_dbm: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub schemes: Vec<Scheme>,
    pub sweep: Sweep,
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemParams,
    pub layout: Layout,
    pub experiments: Vec<ExperimentSpec>,
    pub seed: u64,
    pub output: PathBuf,
    pub mode: ModeSetting,
    pub sca_restarts: usize,
    pub sca_max_iter: usize,
    pub sca_tol: f64,
    pub symmetry_shortcut: bool,
    /// Effective configuration, echoed into the run metadata.
    pub raw: RawConfig,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn parse_error(origin: &str, text: &str, err: toml::de::Error) -> ConfigError {
    let (line, column) = err.span().map_or((0, 0), |s| line_column(text, s.start));
    ConfigError::Parse { origin: origin.into(), line, column, message: err.message().trim().to_string() }
}

/// Applies `dotted.key=value` overrides. Values are read as TOML when
/// possible (`3`, `[1, 2]`, `true`) and as bare strings otherwise.
fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), ConfigError> {
    for item in overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| ConfigError::Override(item.clone()))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::Override(item.clone()));
        }
        let value = value.trim();
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut node = &mut *table;
        for part in &path[..path.len() - 1] {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry.as_table_mut().ok_or_else(|| ConfigError::Override(item.clone()))?;
        }
        node.insert(path[path.len() - 1].to_string(), parsed);
    }
    Ok(())
}

/// Parses configuration text, applies overrides and validates.
pub fn parse_config(text: &str, origin: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    // Typed parse of the file alone first, for errors located in the file.
    let raw: RawConfig = toml::from_str(text).map_err(|e| parse_error(origin, text, e))?;
    let raw = if overrides.is_empty() {
        raw
    } else {
        let mut table: toml::Table = text.parse().map_err(|e| parse_error(origin, text, e))?;
        apply_overrides(&mut table, overrides)?;
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            origin: "--set".into(),
            line: 0,
            column: 0,
            message: e.message().trim().to_string(),
        })?
    };
    validate(raw)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text, &path.display().to_string(), overrides)
}

/// Default configuration as TOML text.
pub fn defaults_text() -> String {
    toml::to_string_pretty(&RawConfig::default()).expect("default configuration serializes")
}

fn check_grid<T: PartialOrd + Copy + fmt::Debug>(label: &str, grid: &[T], errors: &mut Vec<String>) {
    if grid.is_empty() {
        errors.push(format!("{label} is empty"));
    } else if grid.windows(2).any(|w| !(w[1] > w[0])) {
        errors.push(format!("{label} must be strictly increasing, got {grid:?}"));
    }
}

fn check_sites(label: &str, ks: &[usize], candidates: usize, errors: &mut Vec<String>) {
    for &k in ks {
        if k == 0 || k > candidates {
            errors.push(format!("{label}: K = {k} outside 1..={candidates} candidate sites"));
        }
    }
}

fn check_divisible(label: &str, n: usize, ks: &[usize], errors: &mut Vec<String>) {
    for &k in ks {
        if k > 0 && !n.is_multiple_of(k) {
            errors.push(format!("{label}: N = {n} is not divisible by K = {k}"));
        }
    }
}

fn parse_schemes(
    name: ExperimentName,
    list: &[String],
    candidates: usize,
    errors: &mut Vec<String>,
) -> Vec<Scheme> {
    if list.is_empty() {
        errors.push(format!("experiment.{name}.schemes is empty"));
    }
    let mut out = Vec::new();
    for s in list {
        match s.parse::<Scheme>() {
            Ok(scheme) if !name.accepts(scheme) => {
                errors.push(format!("scheme {scheme} does not apply to {name}"));
            }
            Ok(Scheme::FixedK(k)) if k == 0 || k > candidates => {
                errors.push(format!("scheme fixed_k={k} outside 1..={candidates} candidate sites"));
            }
            Ok(scheme) if out.contains(&scheme) => errors.push(format!("scheme {scheme} listed twice for {name}")),
            Ok(scheme) => out.push(scheme),
            Err(e) => errors.push(e),
        }
    }
    out
}

fn validate(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut errors = Vec::new();
    let sys = &raw.system;
    let mut power = |label: &str, v: &PowerValue| match v.watts() {
        Ok(w) if w > 0.0 && w.is_finite() => w,
        Ok(w) => {
            errors.push(format!("system.{label} must be a positive power, got {w} W"));
            f64::NAN
        }
        Err(e) => {
            errors.push(format!("system.{label}: {e}"));
            f64::NAN
        }
    };
    let p_max = power("p_max", &sys.p_max);
    let sigma2_c = power("sigma2_c", &sys.sigma2_c);
    let sigma2_s = power("sigma2_s", &sys.sigma2_s);
    for (label, v) in [("m_t", sys.m_t), ("m_r", sys.m_r), ("n_r", sys.n_r), ("n_total", sys.n_total), ("t_symbols", sys.t_symbols)] {
        if v == 0 {
            errors.push(format!("system.{label} must be positive"));
        }
    }
    if !(sys.beta_sq > 0.0 && sys.beta_sq.is_finite()) {
        errors.push(format!("system.beta_sq must be positive, got {}", sys.beta_sq));
    }
    let system = SystemParams {
        m_t: sys.m_t,
        m_r: sys.m_r,
        n_r: sys.n_r,
        n_total: sys.n_total,
        t_symbols: sys.t_symbols,
        p_max,
        sigma2_c,
        sigma2_s,
        beta_sq: sys.beta_sq,
    };

    let g = &raw.geometry;
    let layout = Layout {
        bs: g.bs,
        cu: g.cu,
        target: g.target,
        ring_radius: g.ring_radius,
        k0_db: g.k0_db,
        alpha: g.alpha,
        candidates: g.candidates,
    };
    let coords_ok = g.bs.iter().chain(&g.cu).chain(&g.target).all(|x| x.is_finite());
    if !coords_ok {
        errors.push("geometry coordinates must be finite".into());
    }
    if !(g.ring_radius > 0.0) {
        errors.push(format!("geometry.ring_radius must be positive, got {}", g.ring_radius));
    }
    if !g.k0_db.is_finite() || !g.alpha.is_finite() {
        errors.push("geometry.k0_db and geometry.alpha must be finite".into());
    }
    if g.candidates == 0 {
        errors.push("geometry.candidates must be positive".into());
    } else if sys.m_t > 0 && sys.m_r > 0 {
        if let Err(e) = candidate_angles(sys.m_t, sys.m_r, g.candidates) {
            errors.push(format!("geometry.candidates: {e}"));
        }
    }
    if errors.is_empty() {
        if let Err(e) = layout.site_positions(sys.m_t, sys.m_r) {
            errors.push(format!("geometry: {e}"));
        }
    }

    let ex = &raw.experiment;
    let mode = ex.mode.parse::<ModeSetting>().unwrap_or_else(|e| {
        errors.push(format!("experiment.mode: {e}"));
        ModeSetting::Auto
    });
    let colocated = g.cu == g.target;
    if mode == ModeSetting::CoLocated && !colocated {
        errors.push("experiment.mode = co_located needs geometry.target equal to geometry.cu".into());
    }
    if !(ex.sca_tol > 0.0) {
        errors.push(format!("experiment.sca_tol must be positive, got {}", ex.sca_tol));
    }
    if ex.sca_max_iter == 0 {
        errors.push("experiment.sca_max_iter must be positive".into());
    }
    let selected: Vec<ExperimentName> = if ex.name == "all" {
        ExperimentName::ALL.to_vec()
    } else {
        match ex.name.parse() {
            Ok(n) => vec![n],
            Err(e) => {
                errors.push(format!("experiment.name: {e}"));
                Vec::new()
            }
        }
    };
    let cands = g.candidates;
    let n_total = sys.n_total;
    let mut experiments = Vec::new();
    for name in selected {
        let (schemes, sweep) = match name {
            ExperimentName::CrbVsK => {
                let s = &ex.crb_vs_k;
                check_grid("experiment.crb_vs_k.k_grid", &s.k_grid, &mut errors);
                check_sites("experiment.crb_vs_k.k_grid", &s.k_grid, cands, &mut errors);
                check_divisible("experiment.crb_vs_k", n_total, &s.k_grid, &mut errors);
                (&s.schemes, Sweep::SiteCount { k_grid: s.k_grid.clone() })
            }
            ExperimentName::CrbVsN => {
                let s = &ex.crb_vs_n;
                check_grid("experiment.crb_vs_n.n_grid", &s.n_grid, &mut errors);
                check_grid("experiment.crb_vs_n.k_values", &s.k_values, &mut errors);
                check_sites("experiment.crb_vs_n.k_values", &s.k_values, cands, &mut errors);
                for &n in &s.n_grid {
                    check_divisible("experiment.crb_vs_n", n, &s.k_values, &mut errors);
                }
                (&s.schemes, Sweep::ElementCount { n_grid: s.n_grid.clone(), k_values: s.k_values.clone() })
            }
            ExperimentName::RateVsInvCrb => {
                let s = &ex.rate_vs_inv_crb;
                check_grid("experiment.rate_vs_inv_crb.inv_crb_db", &s.inv_crb_db, &mut errors);
                if s.inv_crb_db.iter().any(|x| !x.is_finite()) {
                    errors.push("experiment.rate_vs_inv_crb.inv_crb_db must be finite".into());
                }
                check_divisible("experiment.rate_vs_inv_crb (all candidate sites)", n_total, &[cands], &mut errors);
                (&s.schemes, Sweep::InverseCrb { inv_crb_db: s.inv_crb_db.clone() })
            }
            ExperimentName::RateVsK => {
                let s = &ex.rate_vs_k;
                check_grid("experiment.rate_vs_k.k_grid", &s.k_grid, &mut errors);
                check_sites("experiment.rate_vs_k.k_grid", &s.k_grid, cands, &mut errors);
                check_divisible("experiment.rate_vs_k", n_total, &s.k_grid, &mut errors);
                if !s.epsilon_db.is_finite() {
                    errors.push("experiment.rate_vs_k.epsilon_db must be finite".into());
                }
                let epsilon = 10f64.powf(s.epsilon_db / 10.0);
                (&s.schemes, Sweep::SiteCountAtCrb { k_grid: s.k_grid.clone(), epsilon })
            }
            ExperimentName::RateVsN => {
                let s = &ex.rate_vs_n;
                check_grid("experiment.rate_vs_n.n_grid", &s.n_grid, &mut errors);
                if s.n_grid.first() == Some(&0) {
                    errors.push("experiment.rate_vs_n.n_grid must be positive".into());
                }
                if !s.epsilon_db.is_finite() {
                    errors.push("experiment.rate_vs_n.epsilon_db must be finite".into());
                }
                let epsilon = 10f64.powf(s.epsilon_db / 10.0);
                (&s.schemes, Sweep::ElementCountAtCrb { n_grid: s.n_grid.clone(), epsilon })
            }
            ExperimentName::DofSlope => {
                let s = &ex.dof_slope;
                check_grid("experiment.dof_slope.k_values", &s.k_values, &mut errors);
                check_sites("experiment.dof_slope.k_values", &s.k_values, cands, &mut errors);
                check_divisible("experiment.dof_slope", n_total, &s.k_values, &mut errors);
                check_grid("experiment.dof_slope.p_grid_dbm", &s.p_grid_dbm, &mut errors);
                if s.p_grid_dbm.len() == 1 {
                    errors.push("experiment.dof_slope.p_grid_dbm needs at least two powers".into());
                }
                (&s.schemes, Sweep::Power { k_values: s.k_values.clone(), p_grid_dbm: s.p_grid_dbm.clone() })
            }
        };
        let schemes = parse_schemes(name, schemes, cands, &mut errors);
        experiments.push(ExperimentSpec { name, schemes, sweep });
    }

    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    Ok(ExperimentConfig {
        system,
        layout,
        experiments,
        seed: ex.seed,
        output: PathBuf::from(&ex.output),
        mode,
        sca_restarts: ex.sca_restarts,
        sca_max_iter: ex.sca_max_iter,
        sca_tol: ex.sca_tol,
        symmetry_shortcut: ex.symmetry_shortcut,
        raw,
    })
}
