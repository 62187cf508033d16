use std::path::Path;

use asip_core::grid::BinGrid;
use asip_core::maps::IntervalMap;
use asip_core::observables::{builtin, Observable};
use asip_core::statistics::{Init, LagRule, Sampler, VarianceEstimator};
use serde::{Deserialize, Serialize};

use crate::RunError;

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub map: Option<MapConfig>,
    #[serde(default)]
    pub observable: Option<ObservableConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKindConfig {
    Doubling,
    Tent,
    PiecewiseLinear,
    Lsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub kind: MapKindConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slopes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    Cosine,
    PowerLaw,
    LogDampedPower,
    Indicator,
    CenteredLinear,
    Constant,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    pub kind: ObservableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ys: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSchemeConfig {
    Uniform,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Defaults to `uniform` for piecewise-linear maps and `geometric` for LSV.
    pub scheme: Option<GridSchemeConfig>,
    pub bins: usize,
    pub first_width: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub exact_depth: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { scheme: None, bins: 4096, first_width: 1e-8, max_iter: 100_000, tol: 1e-12, exact_depth: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    Stationary,
    LebesgueBurnin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub n: usize,
    pub trajectories: usize,
    pub init: InitConfig,
    pub burnin: usize,
    pub sampler: Sampler,
    pub checkpoints: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            n: 4096,
            trajectories: 10_000,
            init: InitConfig::Stationary,
            burnin: 1000,
            sampler: Sampler::Auto,
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    MapValidate,
    Density,
    Correlations,
    Gordin,
    Variance,
    Mixing,
    Decompose,
    Clt,
    Wip,
    Lil,
    Martingale,
    Ddm,
    NormalizationScan,
    CouplingDemo,
}

impl Operation {
    pub const ALL: [Operation; 14] = [
        Operation::MapValidate,
        Operation::Density,
        Operation::Correlations,
        Operation::Gordin,
        Operation::Variance,
        Operation::Mixing,
        Operation::Decompose,
        Operation::Clt,
        Operation::Wip,
        Operation::Lil,
        Operation::Martingale,
        Operation::Ddm,
        Operation::NormalizationScan,
        Operation::CouplingDemo,
    ];

    pub fn requires(self) -> &'static [Operation] {
        use Operation::*;
        match self {
            MapValidate | Density | CouplingDemo => &[],
            Correlations | Gordin | Variance | Mixing | Decompose | NormalizationScan => &[Density],
            Clt | Wip => &[Density, Variance],
            Lil | Martingale | Ddm => &[Density, Mixing],
        }
    }

    pub fn needs_map(self) -> bool {
        self != Operation::CouplingDemo
    }

    pub fn needs_observable(self) -> bool {
        !matches!(self, Operation::CouplingDemo | Operation::MapValidate | Operation::Density | Operation::Mixing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceRuleConfig {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub operations: Vec<Operation>,
    pub validate_grid: usize,
    pub correlation_lags: usize,
    pub gordin_lags: usize,
    pub variance_rule: VarianceRuleConfig,
    pub variance_lags: usize,
    pub variance_threshold: f64,
    pub ks_tolerance: f64,
    pub wip_times: Vec<f64>,
    /// The primary LIL threshold is `lil_multiplier·C·M`.
    pub lil_multiplier: f64,
    pub lil_thresholds: Vec<f64>,
    pub kmax: usize,
    pub horizon: Option<usize>,
    pub phi1_bins: usize,
    pub pair_bins: usize,
    pub pair_gap: Option<usize>,
    pub decompose_m: Vec<f64>,
    pub l2_eps: Vec<f64>,
    /// Class size `M`; defaults to the largest piece norm in `L²(ν)`.
    pub class_m: Option<f64>,
    pub martingale_n: Option<usize>,
    pub martingale_paths: usize,
    pub martingale_groups: usize,
    pub min_visits: usize,
    pub remainder_x: Vec<f64>,
    pub scan_ns: Vec<usize>,
    pub scan_trajectories: usize,
    pub scan_estimator: VarianceEstimator,
    pub coupling_levels: usize,
    pub coupling_ns: Vec<usize>,
    pub coupling_runs: usize,
    pub coupling_safety: f64,
    pub coupling_sigma: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            operations: Vec::new(),
            validate_grid: 10_000,
            correlation_lags: 20,
            gordin_lags: 60,
            variance_rule: VarianceRuleConfig::Adaptive,
            variance_lags: 60,
            variance_threshold: 1e-12,
            ks_tolerance: 0.02,
            wip_times: vec![0.25, 0.5, 1.0],
            lil_multiplier: 3.0,
            lil_thresholds: vec![1.0, 2.0],
            kmax: 30,
            horizon: None,
            phi1_bins: 1024,
            pair_bins: 64,
            pair_gap: None,
            decompose_m: vec![1.0, 2.0, 5.0, 10.0, 100.0],
            l2_eps: vec![0.1, 0.01],
            class_m: None,
            martingale_n: None,
            martingale_paths: 64,
            martingale_groups: 32,
            min_visits: 30,
            remainder_x: Vec::new(),
            scan_ns: (10..=16).map(|e| 1usize << e).collect(),
            scan_trajectories: 2000,
            scan_estimator: VarianceEstimator::Sample,
            coupling_levels: 5,
            coupling_ns: vec![10_000, 100_000, 1_000_000],
            coupling_runs: 100,
            coupling_safety: 2.0,
            coupling_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub format: Format,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, format: Format::Csv }
    }
}

/// A run recorded next to its outputs; accepted as input in place of a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: u32,
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub operations: Vec<Operation>,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
}

fn cfg_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

/// Reads a TOML config, or a JSON manifest when the file ends in `.json`.
pub fn load(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| cfg_err(format!("config::load: cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| cfg_err(format!("config::load: bad manifest: {e}")))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(cfg_err(format!("config::load: manifest schema {} is not {MANIFEST_SCHEMA}", m.schema)));
        }
        let mut c = m.config;
        c.run.seed = m.seed;
        c.analysis.operations = m.operations;
        Ok(c)
    } else {
        toml::from_str(&text).map_err(|e| cfg_err(format!("config::load: {e}")))
    }
}

fn need<T: Copy>(v: Option<T>, what: &str) -> Result<T, RunError> {
    v.ok_or_else(|| cfg_err(format!("config::observable: missing `{what}`")))
}

impl ExperimentConfig {
    pub fn build_map(&self) -> Result<IntervalMap, RunError> {
        let m = self.map.as_ref().ok_or_else(|| cfg_err("config::map: missing [map] block"))?;
        let map = match m.kind {
            MapKindConfig::Doubling => IntervalMap::doubling(),
            MapKindConfig::Tent => IntervalMap::tent(),
            MapKindConfig::PiecewiseLinear => {
                let s = m.slopes.as_ref().ok_or_else(|| cfg_err("config::map: missing `slopes`"))?;
                IntervalMap::piecewise_linear(s)?
            }
            MapKindConfig::Lsv => IntervalMap::lsv(m.gamma.ok_or_else(|| cfg_err("config::map: missing `gamma`"))?)?,
        };
        Ok(map)
    }

    pub fn build_observable(&self) -> Result<Observable, RunError> {
        let o = self.observable.as_ref().ok_or_else(|| cfg_err("config::observable: missing [observable] block"))?;
        let f = match o.kind {
            ObservableKind::Cosine => builtin::cosine(o.k.unwrap_or(1))?,
            ObservableKind::PowerLaw => builtin::power_law(need(o.a, "a")?, o.shift.unwrap_or(0.0))?,
            ObservableKind::LogDampedPower => builtin::log_damped_power(need(o.a, "a")?, o.b.unwrap_or(0.0))?,
            ObservableKind::Indicator => builtin::indicator(need(o.lo, "lo")?, need(o.hi, "hi")?)?,
            ObservableKind::CenteredLinear => builtin::centered_linear()?,
            ObservableKind::Constant => builtin::constant(o.c.unwrap_or(1.0))?,
            ObservableKind::Table => {
                let xs = o.xs.clone().ok_or_else(|| cfg_err("config::observable: missing `xs`"))?;
                let ys = o.ys.clone().ok_or_else(|| cfg_err("config::observable: missing `ys`"))?;
                builtin::table(xs, ys)?
            }
        };
        Ok(f)
    }

    pub fn build_grid(&self, map: &IntervalMap) -> Result<BinGrid, RunError> {
        let g = &self.grid;
        let scheme = g.scheme.unwrap_or(if map.gamma().is_some() {
            GridSchemeConfig::Geometric
        } else {
            GridSchemeConfig::Uniform
        });
        Ok(match scheme {
            GridSchemeConfig::Uniform => BinGrid::uniform(g.bins)?,
            GridSchemeConfig::Geometric => BinGrid::geometric_near_zero(g.bins, g.first_width)?,
        })
    }

    pub fn init(&self) -> Init {
        match self.run.init {
            InitConfig::Stationary => Init::Stationary,
            InitConfig::LebesgueBurnin => Init::LebesgueBurnin { steps: self.run.burnin },
        }
    }

    pub fn lag_rule(&self) -> LagRule {
        let a = &self.analysis;
        match a.variance_rule {
            VarianceRuleConfig::Fixed => LagRule::Fixed { lags: a.variance_lags },
            VarianceRuleConfig::Adaptive => {
                LagRule::Adaptive { threshold: a.variance_threshold, max_lag: a.variance_lags.max(1) * 10 }
            }
        }
    }

    /// Fills defaults that depend on other blocks and checks every value
    /// that would otherwise fail midway through a run.
    pub fn resolve(&mut self, ops: &[Operation]) -> Result<(), RunError> {
        let needs_map = ops.iter().any(|o| o.needs_map());
        let needs_obs = ops.iter().any(|o| o.needs_observable());
        if needs_map {
            let map = self.build_map()?;
            if self.grid.scheme.is_none() {
                self.grid.scheme =
                    Some(if map.gamma().is_some() { GridSchemeConfig::Geometric } else { GridSchemeConfig::Uniform });
            }
            self.build_grid(&map)?;
        }
        if needs_obs {
            self.build_observable()?;
        }
        let r = &self.run;
        let a = &self.analysis;
        let checks: [(bool, &str); 12] = [
            (r.n >= 16, "run.n must be at least 16"),
            (r.trajectories >= 2, "run.trajectories must be at least 2"),
            (self.grid.bins >= 2, "grid.bins must be at least 2"),
            (self.grid.tol > 0.0 && self.grid.max_iter > 0, "grid.tol and grid.max_iter must be positive"),
            (a.wip_times.iter().all(|&t| t > 0.0 && t <= 1.0), "analysis.wip_times must lie in (0, 1]"),
            (a.ks_tolerance > 0.0, "analysis.ks_tolerance must be positive"),
            (a.kmax >= 1, "analysis.kmax must be positive"),
            (a.decompose_m.iter().all(|&m| m > 0.0), "analysis.decompose_m entries must be positive"),
            (a.l2_eps.iter().all(|&e| e > 0.0), "analysis.l2_eps entries must be positive"),
            (a.class_m.is_none_or(|m| m > 0.0), "analysis.class_m must be positive"),
            (a.coupling_levels >= 3 && a.coupling_runs >= 1, "analysis.coupling_levels ≥ 3 and coupling_runs ≥ 1"),
            (
                a.coupling_ns.iter().all(|&n| n >= 16) && !a.coupling_ns.is_empty(),
                "analysis.coupling_ns entries must be ≥ 16",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(cfg_err(format!("config::resolve: {msg}")));
            }
        }
        if ops.contains(&Operation::NormalizationScan) && a.scan_ns.len() < 5 {
            return Err(cfg_err("config::resolve: analysis.scan_ns needs at least 5 horizons"));
        }
        Ok(())
    }
}

/// Requested operations plus their prerequisites, in execution order.
pub fn expand(ops: &[Operation]) -> Vec<Operation> {
    let mut set: Vec<Operation> = Vec::new();
    for &op in ops {
        for &d in op.requires() {
            set.push(d);
        }
        set.push(op);
    }
    set.sort();
    set.dedup();
    set
}
