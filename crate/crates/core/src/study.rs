//! Monte Carlo study harness: the 2⁶ scenario grid, replicate pipeline
//! (networks → contagion → exposure → features → estimation), performance
//! metrics, covariate inclusion frequencies, and the sensitivity regression.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contagion::{self, Affectivity, ContagionConfig, ContagionRun, ExposureMode};
use crate::estimate::{
    estimate_effect, Aggregation, ClusterFrame, EstimateOptions, ModelSpec, NamedStrategy, Strategy,
};
use crate::features::{compute_features, FeatureConfig, FeatureMatrix, FEATURE_NAMES};
use crate::glm::{fit_linear, Columns, RegressionError};
use crate::graph::Network;
use crate::netgen::{self, ClusterSetSpec, DegreeSpec, MixingSpec, NetgenError, RewireSpec};
use crate::rng;

pub const FLAG_NAMES: [&str; 6] =
    ["high_degree", "powerlaw", "assortative", "heterogeneous_blocks", "degree_affectivity", "high_baseline"];

/// Row labels of the sensitivity regression, intercept first.
pub const SENSITIVITY_TERMS: [&str; 7] = [
    "(Intercept)",
    "High vs. Low Degree",
    "Powerlaw vs. Poisson",
    "Assortative vs. Disassortative",
    "Communities vs. No Communities",
    "Degree vs. Unit Infectivity",
    "High vs. Low Baseline",
];

/// Name of the confounder column (cluster total of X9 at baseline).
pub const CONFOUNDER: &str = "confounder";
/// Name of the pure-noise node-level column added to every replicate.
pub const NOISE: &str = "noise";

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid scenario id {0:?}: expected six 0/1 characters")]
    BadScenario(String),
    #[error("invalid study config: {0}")]
    Config(String),
    #[error("sensitivity regression needs all 64 scenarios; missing {0:?}")]
    MissingScenarios(Vec<String>),
    #[error("no usable replicates for scenario {0}")]
    NoReplicates(String),
    #[error(transparent)]
    Netgen(#[from] NetgenError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// One cell of the grid, flags in the order of [`FLAG_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scenario {
    pub flags: [bool; 6],
}

impl Scenario {
    pub fn parse(id: &str) -> Result<Self, StudyError> {
        let bytes = id.as_bytes();
        if bytes.len() != 6 || bytes.iter().any(|b| *b != b'0' && *b != b'1') {
            return Err(StudyError::BadScenario(id.into()));
        }
        let mut flags = [false; 6];
        for (f, b) in flags.iter_mut().zip(bytes) {
            *f = *b == b'1';
        }
        Ok(Self { flags })
    }

    /// The scenario whose bit string is the binary form of `index`.
    pub fn from_index(index: u8) -> Self {
        let mut flags = [false; 6];
        for (k, f) in flags.iter_mut().enumerate() {
            *f = index >> (5 - k) & 1 == 1;
        }
        Self { flags }
    }

    pub fn index(&self) -> u8 {
        self.flags.iter().fold(0, |acc, &f| acc << 1 | u8::from(f))
    }

    pub fn id(&self) -> String {
        self.flags.iter().map(|&f| if f { '1' } else { '0' }).collect()
    }

    /// All 64 scenarios, 000000 through 111111.
    pub fn all() -> Vec<Self> {
        (0..64).map(Self::from_index).collect()
    }

    pub fn high_degree(&self) -> bool {
        self.flags[0]
    }
    pub fn powerlaw(&self) -> bool {
        self.flags[1]
    }
    pub fn assortative(&self) -> bool {
        self.flags[2]
    }
    pub fn heterogeneous(&self) -> bool {
        self.flags[3]
    }
    pub fn degree_affectivity(&self) -> bool {
        self.flags[4]
    }
    pub fn high_baseline(&self) -> bool {
        self.flags[5]
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.id())
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Levels of every simulation setting; each scenario flag picks one of a
/// pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub clusters: usize,
    pub size_min: usize,
    pub size_max: usize,
    pub blocks: usize,
    pub mean_degree: (f64, f64),
    pub powerlaw_exponent: f64,
    pub assortativity: (f64, f64),
    pub rewire_tolerance: f64,
    /// Swap attempts per rewiring run; `None` means 50 per edge.
    pub rewire_max_attempts: Option<usize>,
    /// `(λ, μ)` for the random and heterogeneous block structures.
    pub mixing: ((f64, f64), (f64, f64)),
    /// `(S, B)` for low and high baseline prevalence.
    pub prevalence: ((f64, f64), (f64, f64)),
    pub steps: usize,
    pub p0: f64,
    pub p1: f64,
    pub exposure_mode: ExposureMode,
    pub features: FeatureConfig,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            clusters: 48,
            size_min: 120,
            size_max: 280,
            blocks: 8,
            mean_degree: (2.0, 10.0),
            powerlaw_exponent: 2.5,
            assortativity: (-0.3, 0.3),
            rewire_tolerance: 0.02,
            rewire_max_attempts: None,
            mixing: ((0.0, 0.0), (0.3, 0.3)),
            prevalence: ((0.01, 0.02), (0.10, 0.25)),
            steps: 5,
            p0: 0.3,
            p1: 0.1,
            exposure_mode: ExposureMode::Bernoulli,
            features: FeatureConfig::default(),
        }
    }
}

impl SimulationSettings {
    /// Six-fold larger networks, otherwise identical.
    pub fn large_networks() -> Self {
        let d = Self::default();
        Self { size_min: d.size_min * 6, size_max: d.size_max * 6, ..d }
    }

    pub fn cluster_spec(&self, s: &Scenario) -> ClusterSetSpec {
        let pick = |flag: bool, (lo, hi): (f64, f64)| if flag { hi } else { lo };
        let mean = pick(s.high_degree(), self.mean_degree);
        let degree = if s.powerlaw() {
            DegreeSpec::powerlaw(mean, self.powerlaw_exponent)
        } else {
            DegreeSpec::poisson(mean)
        };
        let (lambda, mu) = if s.heterogeneous() { self.mixing.1 } else { self.mixing.0 };
        ClusterSetSpec {
            clusters: self.clusters,
            size_range: (self.size_min, self.size_max),
            degree,
            mixing: MixingSpec { blocks: self.blocks, lambda, mu },
            rewire: Some(RewireSpec {
                target_assortativity: pick(s.assortative(), self.assortativity),
                tolerance: self.rewire_tolerance,
                max_sweeps: self.rewire_max_attempts,
            }),
        }
    }

    pub fn contagion_config(&self, s: &Scenario) -> ContagionConfig {
        let (seed_frac, baseline_frac) = if s.high_baseline() { self.prevalence.1 } else { self.prevalence.0 };
        let affectivity = if s.degree_affectivity() { Affectivity::Degree } else { Affectivity::Unit };
        ContagionConfig {
            steps: self.steps,
            p0: self.p0,
            p1: self.p1,
            ..ContagionConfig::new(seed_frac, baseline_frac, affectivity)
        }
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        for s in [Scenario::from_index(0), Scenario::from_index(63)] {
            self.cluster_spec(&s).validate()?;
            self.contagion_config(&s).validate().map_err(|e| StudyError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// The study's standard strategies: unadjusted GEE, X9 only, X1..X10, and
/// stepwise over X1..X12, with the propensity model on the confounder.
pub fn standard_strategies() -> Vec<NamedStrategy> {
    let ps = ModelSpec::fixed(&[CONFOUNDER]);
    vec![
        NamedStrategy::new("None", Strategy::gee()),
        NamedStrategy::new("X9", Strategy::dr(ModelSpec::fixed(&["X9"]), ps.clone())),
        NamedStrategy::new("All", Strategy::dr(ModelSpec::fixed(&FEATURE_NAMES[..10]), ps.clone())),
        NamedStrategy::new("Stepwise", Strategy::dr(ModelSpec::stepwise(&FEATURE_NAMES, &[]), ps)),
    ]
}

/// Correctly specified models used to define the true effect: true
/// propensity scores and an outcome model on the confounder and X9.
pub fn oracle_strategy() -> NamedStrategy {
    NamedStrategy::new("Oracle", Strategy::dr(ModelSpec::fixed(&[CONFOUNDER, "X9"]), ModelSpec::Known))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSelection {
    /// The string "all".
    All(AllMarker),
    List(Vec<Scenario>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllMarker {
    All,
}

impl ScenarioSelection {
    pub fn resolve(&self) -> Vec<Scenario> {
        match self {
            Self::All(_) => Scenario::all(),
            Self::List(v) => {
                let mut v = v.clone();
                v.sort();
                v.dedup();
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub master_seed: u64,
    pub scenarios: ScenarioSelection,
    pub replicates: usize,
    pub strategies: Vec<NamedStrategy>,
    /// Strategy whose RMSE is the reference for improvement.
    pub baseline_strategy: String,
    /// Correctly specified strategy whose mean defines the true effect.
    pub oracle: NamedStrategy,
    pub settings: SimulationSettings,
    pub estimation: EstimateOptions,
    /// Attempts per replicate before it is recorded as failed.
    pub max_attempts: usize,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            master_seed: 20_240_601,
            scenarios: ScenarioSelection::All(AllMarker::All),
            replicates: 500,
            strategies: standard_strategies(),
            baseline_strategy: "None".into(),
            oracle: oracle_strategy(),
            settings: SimulationSettings::default(),
            estimation: EstimateOptions { ps_aggregation: Aggregation::Sum, ..EstimateOptions::default() },
            max_attempts: 20,
            threads: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), StudyError> {
        self.settings.validate()?;
        if self.replicates < 2 {
            return Err(StudyError::Config("need at least 2 replicates".into()));
        }
        if self.max_attempts == 0 {
            return Err(StudyError::Config("max_attempts must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(StudyError::Config("threads must be positive".into()));
        }
        let mut names: Vec<&str> = self.strategies.iter().map(|s| s.name.as_str()).collect();
        names.push(&self.oracle.name);
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(StudyError::Config("strategy names must be unique".into()));
        }
        if !self.strategies.iter().any(|s| s.name == self.baseline_strategy) {
            return Err(StudyError::Config(format!("baseline strategy {:?} not configured", self.baseline_strategy)));
        }
        let known: Vec<&str> = FEATURE_NAMES.iter().copied().chain([CONFOUNDER, NOISE]).collect();
        for s in self.strategies.iter().chain([&self.oracle]) {
            if let Strategy::Dr { om, ps } = &s.strategy {
                if *om == ModelSpec::Known {
                    return Err(StudyError::Config(format!("strategy {}: outcome model cannot be 'known'", s.name)));
                }
                for c in om.covariates().iter().chain(ps.covariates().iter()) {
                    if !known.contains(&c.as_str()) {
                        return Err(StudyError::Config(format!("strategy {}: unknown covariate {c}", s.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Every strategy run per replicate: the configured ones then the oracle.
    pub fn all_strategies(&self) -> Vec<NamedStrategy> {
        let mut v = self.strategies.clone();
        v.push(self.oracle.clone());
        v
    }
}

/// One realized replicate dataset.
#[derive(Debug, Clone)]
pub struct ReplicateData {
    pub networks: Vec<Network>,
    pub contagion: ContagionRun,
    pub features: Vec<FeatureMatrix>,
    pub frame: ClusterFrame<f64>,
    /// Attempts used (1 when the first draw succeeded).
    pub attempts: usize,
}

fn attempt_replicate(
    scenario: &Scenario,
    settings: &SimulationSettings,
    seed: u64,
    replicate: u64,
    attempt: u64,
) -> Result<ReplicateData, String> {
    let keys = |part: u64| [u64::from(scenario.index()), replicate, attempt, part];
    let spec = settings.cluster_spec(scenario);
    let networks =
        netgen::generate_cluster_set(&spec, rng::derive_seed(seed, &keys(0))).map_err(|e| e.to_string())?;
    let cfg = settings.contagion_config(scenario);
    let mut crng = rng::stream(seed, &keys(1));
    let run = contagion::simulate(&networks, &cfg, settings.exposure_mode, &mut crng).map_err(|e| e.to_string())?;
    let exposure = run.state.exposure.clone().expect("assigned");
    if exposure.iter().all(|&a| a) || !exposure.iter().any(|&a| a) {
        return Err("all clusters in one exposure arm".into());
    }
    let baseline = run.state.baseline_nodes().map_err(|e| e.to_string())?;
    let features: Vec<FeatureMatrix> = networks
        .iter()
        .zip(&baseline)
        .map(|(g, b)| compute_features(g, b, &settings.features))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut frame = ClusterFrame::from_features(&features, &run.outcomes, exposure).map_err(|e| e.to_string())?;
    frame.add_cluster_column(CONFOUNDER, run.confounder.clone()).map_err(|e| e.to_string())?;
    let mut nrng = rng::stream(seed, &keys(2));
    let noise: Vec<f64> = (0..frame.nodes()).map(|_| StandardNormal.sample(&mut nrng)).collect();
    frame.add_node_column(NOISE, noise).map_err(|e| e.to_string())?;
    frame.known_ps = Some(run.propensity.clone());
    Ok(ReplicateData { networks, contagion: run, features, frame, attempts: (attempt + 1) as usize })
}

/// Draws a replicate dataset, redrawing (with a new attempt key) when the
/// contagion stalls or exposure is degenerate.
pub fn simulate_replicate(
    scenario: &Scenario,
    settings: &SimulationSettings,
    master_seed: u64,
    replicate: usize,
    max_attempts: usize,
) -> Result<ReplicateData, String> {
    let mut last = String::new();
    for attempt in 0..max_attempts.max(1) {
        match attempt_replicate(scenario, settings, master_seed, replicate as u64, attempt as u64) {
            Ok(d) => return Ok(d),
            Err(e) => {
                log::debug!("scenario {scenario} replicate {replicate} attempt {attempt}: {e}");
                last = e;
            }
        }
    }
    Err(format!("{} attempts failed; last error: {last}", max_attempts.max(1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyEstimate {
    pub strategy: String,
    pub estimate: f64,
    pub std_error: f64,
    /// Covariates chosen in the outcome models for arms 0 and 1.
    pub om_selected: Option<[Vec<String>; 2]>,
    pub error: Option<String>,
}

impl StrategyEstimate {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.estimate.is_finite() && self.std_error.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub scenario: Scenario,
    pub replicate: usize,
    pub attempts: usize,
    /// Per-strategy estimates, or the reason every attempt failed.
    pub outcome: Result<Vec<StrategyEstimate>, String>,
}

/// Runs every strategy on the same data.
pub fn estimate_all(
    frame: &ClusterFrame<f64>,
    strategies: &[NamedStrategy],
    opts: &EstimateOptions,
) -> Vec<StrategyEstimate> {
    strategies
        .iter()
        .map(|s| match estimate_effect(frame, &s.strategy, opts) {
            Ok(e) => StrategyEstimate {
                strategy: s.name.clone(),
                estimate: e.fit.effect(),
                std_error: e.fit.effect_se(),
                om_selected: e.om.as_ref().map(|[a, b]| [a.selected.clone(), b.selected.clone()]),
                error: None,
            },
            Err(err) => StrategyEstimate {
                strategy: s.name.clone(),
                estimate: f64::NAN,
                std_error: f64::NAN,
                om_selected: None,
                error: Some(err.to_string()),
            },
        })
        .collect()
}

/// One full pipeline pass for `(scenario, replicate)`.
pub fn run_replicate(
    scenario: &Scenario,
    replicate: usize,
    strategies: &[NamedStrategy],
    cfg: &StudyConfig,
) -> ReplicateResult {
    match simulate_replicate(scenario, &cfg.settings, cfg.master_seed, replicate, cfg.max_attempts) {
        Ok(data) => ReplicateResult {
            scenario: *scenario,
            replicate,
            attempts: data.attempts,
            outcome: Ok(estimate_all(&data.frame, strategies, &cfg.estimation)),
        },
        Err(e) => ReplicateResult { scenario: *scenario, replicate, attempts: cfg.max_attempts, outcome: Err(e) },
    }
}

fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, StudyError> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| StudyError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs replicates `0..R` for each scenario in parallel; results are ordered
/// by (scenario, replicate) regardless of scheduling.
pub fn run_replicates(
    scenarios: &[Scenario],
    replicates: usize,
    strategies: &[NamedStrategy],
    cfg: &StudyConfig,
) -> Result<Vec<ReplicateResult>, StudyError> {
    let jobs: Vec<(Scenario, usize)> =
        scenarios.iter().flat_map(|s| (0..replicates).map(move |r| (*s, r))).collect();
    with_pool(cfg.threads, || {
        jobs.par_iter().map(|(s, r)| run_replicate(s, *r, strategies, cfg)).collect()
    })
}

/// Mean of `R` oracle estimates for one scenario.
pub fn true_effect(scenario: &Scenario, replicates: usize, cfg: &StudyConfig) -> Result<f64, StudyError> {
    let results = run_replicates(&[*scenario], replicates, &[cfg.oracle.clone()], cfg)?;
    let est: Vec<f64> = results
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .filter_map(|v| v.first().filter(|e| e.ok()).map(|e| e.estimate))
        .collect();
    if est.is_empty() {
        return Err(StudyError::NoReplicates(scenario.id()));
    }
    Ok(est.iter().sum::<f64>() / est.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyMetrics {
    pub strategy: String,
    pub bias: f64,
    pub est_se: f64,
    pub emp_se: f64,
    pub rmse: f64,
    pub improvement: f64,
    pub power: f64,
    pub coverage: f64,
}

/// Metrics per strategy from `(β̂_r, ŝd_r)` pairs. Improvement is relative
/// to `baseline`; if the baseline is absent it is reported as NaN.
pub fn compute_metrics(
    estimates: &[(String, Vec<(f64, f64)>)],
    beta_star: f64,
    baseline: &str,
) -> Vec<StrategyMetrics> {
    let z = 1.96;
    let mut out: Vec<StrategyMetrics> = estimates
        .iter()
        .map(|(name, pairs)| {
            let r = pairs.len() as f64;
            let mean = pairs.iter().map(|p| p.0).sum::<f64>() / r;
            let var = if pairs.len() > 1 {
                pairs.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (r - 1.0)
            } else {
                0.0
            };
            let bias = beta_star - mean;
            let pct = |f: &dyn Fn(&(f64, f64)) -> bool| 100.0 * pairs.iter().filter(|p| f(p)).count() as f64 / r;
            StrategyMetrics {
                strategy: name.clone(),
                bias,
                est_se: pairs.iter().map(|p| p.1).sum::<f64>() / r,
                emp_se: var.sqrt(),
                rmse: (bias * bias + var).sqrt(),
                improvement: f64::NAN,
                power: pct(&|&(b, s)| (b - z * s) > 0.0 || (b + z * s) < 0.0),
                coverage: pct(&|&(b, s)| (b - z * s) <= beta_star && beta_star <= (b + z * s)),
            }
        })
        .collect();
    if let Some(base) = out.iter().find(|m| m.strategy == baseline).map(|m| m.rmse) {
        for m in &mut out {
            m.improvement = if m.strategy == baseline { 0.0 } else { 100.0 * (1.0 - m.rmse / base) };
        }
    }
    out
}

/// Inclusion proportion of one covariate in one arm's outcome model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionRow {
    pub scenario: String,
    pub strategy: String,
    /// "unexposed" or "exposed".
    pub arm: String,
    pub covariate: String,
    pub frequency: f64,
}

pub const ARM_LABELS: [&str; 2] = ["unexposed", "exposed"];

/// Fraction of replicates whose outcome model for each arm selected each of
/// `covariates`, for every strategy that reports selections.
pub fn covariate_inclusion_frequency(
    scenario: &Scenario,
    estimates: &[&StrategyEstimate],
    covariates: &[&str],
) -> Vec<InclusionRow> {
    let mut by_strategy: BTreeMap<&str, Vec<&[Vec<String>; 2]>> = BTreeMap::new();
    for e in estimates {
        if let (Some(sel), true) = (&e.om_selected, e.ok()) {
            by_strategy.entry(e.strategy.as_str()).or_default().push(sel);
        }
    }
    let mut rows = Vec::new();
    for (strategy, sels) in by_strategy {
        for (arm, label) in ARM_LABELS.iter().enumerate() {
            for &cov in covariates {
                let hits = sels.iter().filter(|s| s[arm].iter().any(|c| c == cov)).count();
                rows.push(InclusionRow {
                    scenario: scenario.id(),
                    strategy: strategy.into(),
                    arm: (*label).into(),
                    covariate: cov.into(),
                    frequency: hits as f64 / sels.len() as f64,
                });
            }
        }
    }
    rows
}

/// Min, quartiles, and max of inclusion frequencies across scenarios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionSummary {
    pub strategy: String,
    pub arm: String,
    pub covariate: String,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_inclusion(rows: &[InclusionRow]) -> Vec<InclusionSummary> {
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.strategy.clone(), r.arm.clone(), r.covariate.clone())).or_default().push(r.frequency);
    }
    groups
        .into_iter()
        .map(|((strategy, arm, covariate), mut v)| {
            v.sort_by(f64::total_cmp);
            InclusionSummary {
                strategy,
                arm,
                covariate,
                min: v[0],
                q25: quantile_sorted(&v, 0.25),
                median: quantile_sorted(&v, 0.5),
                q75: quantile_sorted(&v, 0.75),
                max: v[v.len() - 1],
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub strategy: String,
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
}

/// OLS of each strategy's improvement on the six scenario flags. Requires
/// all 64 scenarios.
pub fn sensitivity_regression(
    improvements: &BTreeMap<Scenario, Vec<(String, f64)>>,
) -> Result<Vec<SensitivityRow>, StudyError> {
    let missing: Vec<String> =
        Scenario::all().into_iter().filter(|s| !improvements.contains_key(s)).map(|s| s.id()).collect();
    if !missing.is_empty() {
        return Err(StudyError::MissingScenarios(missing));
    }
    let scenarios = Scenario::all();
    let mut strategies: Vec<String> = Vec::new();
    for v in improvements.values() {
        for (name, _) in v {
            if !strategies.contains(name) {
                strategies.push(name.clone());
            }
        }
    }
    let mut rows = Vec::new();
    for strategy in strategies {
        let mut y = Vec::new();
        let mut flags: Vec<Vec<f64>> = vec![Vec::new(); 6];
        for s in &scenarios {
            let Some(v) = improvements[s].iter().find(|(n, _)| *n == strategy).map(|p| p.1) else { continue };
            if !v.is_finite() {
                continue;
            }
            y.push(v);
            for (k, f) in s.flags.iter().enumerate() {
                flags[k].push(f64::from(u8::from(*f)));
            }
        }
        if y.len() < 7 {
            continue;
        }
        let mut x = Columns::new(y.len());
        for (k, col) in flags.into_iter().enumerate() {
            x.push(SENSITIVITY_TERMS[k + 1], col)?;
        }
        let fit = fit_linear(&x, &y)?;
        for (name, (b, se)) in fit.names.iter().zip(fit.coefficients.iter().zip(&fit.standard_errors)) {
            rows.push(SensitivityRow { strategy: strategy.clone(), term: name.clone(), estimate: *b, std_error: *se });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub beta_star: f64,
    /// Replicates where every strategy produced an estimate.
    pub usable: usize,
    /// Replicates that never produced data.
    pub failed: usize,
    /// Replicates with at least one failed strategy.
    pub partial: usize,
    pub metrics: Vec<StrategyMetrics>,
}

#[derive(Debug, Clone)]
pub struct StudyResults {
    pub replicates: Vec<ReplicateResult>,
    pub summaries: Vec<ScenarioSummary>,
    pub inclusion: Vec<InclusionRow>,
    pub sensitivity: Option<Vec<SensitivityRow>>,
}

/// Summarizes one scenario's replicates. Only replicates where every
/// strategy (oracle included) succeeded are used; the oracle mean over those
/// replicates is β*.
pub fn summarize_scenario(
    scenario: &Scenario,
    results: &[&ReplicateResult],
    oracle: &str,
    baseline: &str,
) -> Result<ScenarioSummary, StudyError> {
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    let ok: Vec<&Vec<StrategyEstimate>> = results.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let usable: Vec<&Vec<StrategyEstimate>> = ok.iter().copied().filter(|v| v.iter().all(|e| e.ok())).collect();
    if usable.len() < 2 {
        return Err(StudyError::NoReplicates(scenario.id()));
    }
    let names: Vec<String> = usable[0].iter().map(|e| e.strategy.clone()).collect();
    let series: Vec<(String, Vec<(f64, f64)>)> = names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.clone(), usable.iter().map(|v| (v[k].estimate, v[k].std_error)).collect()))
        .collect();
    let beta_star = series
        .iter()
        .find(|(n, _)| n == oracle)
        .map(|(_, v)| v.iter().map(|p| p.0).sum::<f64>() / v.len() as f64)
        .ok_or_else(|| StudyError::Config(format!("oracle strategy {oracle:?} missing from estimates")))?;
    let reported: Vec<(String, Vec<(f64, f64)>)> = series.into_iter().filter(|(n, _)| n != oracle).collect();
    Ok(ScenarioSummary {
        scenario: *scenario,
        beta_star,
        usable: usable.len(),
        failed,
        partial: ok.len() - usable.len(),
        metrics: compute_metrics(&reported, beta_star, baseline),
    })
}

/// Builds summaries, inclusion frequencies, and (when all 64 scenarios are
/// present) the sensitivity regression from a replicate log.
pub fn summarize(
    replicates: Vec<ReplicateResult>,
    oracle: &str,
    baseline: &str,
) -> Result<StudyResults, StudyError> {
    let mut by_scenario: BTreeMap<Scenario, Vec<&ReplicateResult>> = BTreeMap::new();
    for r in &replicates {
        by_scenario.entry(r.scenario).or_default().push(r);
    }
    let mut summaries = Vec::new();
    let mut inclusion = Vec::new();
    for (s, rs) in &by_scenario {
        summaries.push(summarize_scenario(s, rs, oracle, baseline)?);
        let ests: Vec<&StrategyEstimate> =
            rs.iter().filter_map(|r| r.outcome.as_ref().ok()).flatten().filter(|e| e.strategy != oracle).collect();
        inclusion.extend(covariate_inclusion_frequency(s, &ests, &FEATURE_NAMES));
    }
    let sensitivity = if by_scenario.len() == 64 {
        let imp: BTreeMap<Scenario, Vec<(String, f64)>> = summaries
            .iter()
            .map(|s| {
                (
                    s.scenario,
                    s.metrics
                        .iter()
                        .filter(|m| m.strategy != baseline)
                        .map(|m| (m.strategy.clone(), m.improvement))
                        .collect(),
                )
            })
            .collect();
        Some(sensitivity_regression(&imp)?)
    } else {
        None
    };
    Ok(StudyResults { replicates, summaries, inclusion, sensitivity })
}

/// Runs the configured grid end to end.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResults, StudyError> {
    cfg.validate()?;
    let scenarios = cfg.scenarios.resolve();
    let results = run_replicates(&scenarios, cfg.replicates, &cfg.all_strategies(), cfg)?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} replicates failed after {} attempts", cfg.max_attempts);
    }
    summarize(results, &cfg.oracle.name, &cfg.baseline_strategy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_ids_round_trip() {
        let all = Scenario::all();
        assert_eq!(all.len(), 64);
        assert_eq!(all[0].id(), "000000");
        assert_eq!(all[63].id(), "111111");
        let s = Scenario::parse("111110").unwrap();
        assert!(s.high_degree() && s.powerlaw() && s.degree_affectivity() && !s.high_baseline());
        assert_eq!(Scenario::from_index(s.index()), s);
        assert!(Scenario::parse("11111").is_err());
        assert!(Scenario::parse("11111x").is_err());
        for (i, s) in all.iter().enumerate() {
            assert_eq!(s.index() as usize, i);
        }
    }

    #[test]
    fn metrics_hand_examples() {
        let exact = compute_metrics(&[("A".into(), vec![(0.2, 0.01); 5])], 0.2, "A");
        assert_eq!(exact[0].bias, 0.0);
        assert_eq!(exact[0].rmse, 0.0);
        assert_eq!(exact[0].coverage, 100.0);
        assert_eq!(exact[0].improvement, 0.0);

        let m = compute_metrics(&[("A".into(), vec![(0.1, 0.1), (0.3, 0.1)])], 0.2, "A");
        assert!(m[0].bias.abs() < 1e-15);
        assert!((m[0].emp_se - 0.1414213562373095).abs() < 1e-12);
        assert!((m[0].rmse - 0.1414213562373095).abs() < 1e-12);
        assert_eq!(m[0].coverage, 100.0);
        assert_eq!(m[0].power, 50.0);
    }

    #[test]
    fn improvement_relative_to_baseline() {
        let m = compute_metrics(
            &[("None".into(), vec![(0.0, 0.1), (0.4, 0.1)]), ("X".into(), vec![(0.1, 0.05), (0.3, 0.05)])],
            0.2,
            "None",
        );
        assert_eq!(m[0].improvement, 0.0);
        assert!((m[1].improvement - 50.0).abs() < 1e-9);
    }

    #[test]
    fn sensitivity_exact_recovery() {
        let imp: BTreeMap<Scenario, Vec<(String, f64)>> = Scenario::all()
            .into_iter()
            .map(|s| (s, vec![("A".into(), 10.0 + 20.0 * f64::from(u8::from(s.high_baseline()))), ("B".into(), 7.0)]))
            .collect();
        let rows = sensitivity_regression(&imp).unwrap();
        let get = |st: &str, term: &str| rows.iter().find(|r| r.strategy == st && r.term == term).unwrap().estimate;
        assert!((get("A", "(Intercept)") - 10.0).abs() < 1e-9);
        assert!((get("A", "High vs. Low Baseline") - 20.0).abs() < 1e-9);
        assert!(get("A", "Powerlaw vs. Poisson").abs() < 1e-9);
        for t in &SENSITIVITY_TERMS[1..] {
            assert!(get("B", t).abs() < 1e-9);
        }
        let mut partial = imp.clone();
        partial.remove(&Scenario::parse("000111").unwrap());
        match sensitivity_regression(&partial) {
            Err(StudyError::MissingScenarios(m)) => assert_eq!(m, vec!["000111".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inclusion_frequency_forced_and_absent() {
        let s = Scenario::from_index(0);
        let mk = |sel: [Vec<String>; 2]| StrategyEstimate {
            strategy: "Stepwise".into(),
            estimate: 0.0,
            std_error: 1.0,
            om_selected: Some(sel),
            error: None,
        };
        let a = mk([vec!["X1".into(), "X9".into()], vec!["X1".into()]]);
        let b = mk([vec!["X1".into()], vec!["X1".into(), "X2".into()]]);
        let rows = covariate_inclusion_frequency(&s, &[&a, &b], &FEATURE_NAMES);
        let f = |arm: &str, c: &str| rows.iter().find(|r| r.arm == arm && r.covariate == c).unwrap().frequency;
        assert_eq!(f("unexposed", "X1"), 1.0);
        assert_eq!(f("unexposed", "X9"), 0.5);
        assert_eq!(f("exposed", "X2"), 0.5);
        assert_eq!(f("exposed", "X12"), 0.0);
    }

    #[test]
    fn quantiles_type7() {
        let v = [0.1, 0.2, 0.3, 0.4];
        assert!((quantile_sorted(&v, 0.75) - 0.325).abs() < 1e-12);
        assert_eq!(quantile_sorted(&v, 0.0), 0.1);
        assert_eq!(quantile_sorted(&v, 1.0), 0.4);
    }

    #[test]
    fn default_config_validates() {
        StudyConfig::default().validate().unwrap();
        let bad = StudyConfig { baseline_strategy: "nope".into(), ..StudyConfig::default() };
        assert!(bad.validate().is_err());
    }
}
