//! Observational cluster datasets on disk: loading and validation, the
//! top-quartile exposure rule, the four-strategy analysis report, and
//! synthetic fixtures with a known exposure effect.

use std::path::Path;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::estimate::{estimate_effect, ClusterFrame, EffectEstimate, EstimateOptions, ModelSpec, NamedStrategy, Strategy};
use crate::features::{compute_features, FeatureConfig, FeatureMatrix, FEATURE_NAMES};
use crate::gee::WorkingCorrelation;
use crate::glm::CoefRow;
use crate::graph::Network;
use crate::io::{
    create, read_cluster_table, read_networks, read_node_table, read_outcomes, sig6, split_by_cluster,
    write_cluster_table, write_networks, write_node_table, write_outcomes, IoError, Table,
};
use crate::netgen::{generate_cluster_set, ClusterSetSpec, DegreeSpec, MixingSpec};
use crate::rng;
use crate::study::CONFOUNDER;

/// Node column flagging nodes affected at baseline.
pub const BASELINE_COLUMN: &str = "baseline_affected";
/// Cluster column holding true propensity scores, when known.
pub const PROPENSITY_COLUMN: &str = "propensity";

pub const EDGES_FILE: &str = "edges.tsv";
pub const NODES_FILE: &str = "nodes.tsv";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const OUTCOMES_FILE: &str = "outcomes.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";

/// Networks with node covariates and binary outcomes, all aligned to the
/// network node order (clusters stacked).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDataset {
    pub networks: Vec<Network>,
    pub covariates: Table,
    pub outcomes: Vec<Vec<bool>>,
    /// Optional cluster-level columns.
    pub clusters: Option<Table>,
}

impl EmpiricalDataset {
    pub fn nodes(&self) -> usize {
        self.networks.iter().map(Network::node_count).sum()
    }

    /// Baseline-affected node sets from [`BASELINE_COLUMN`]; empty sets when
    /// the column is absent.
    pub fn baseline(&self) -> Result<Vec<Vec<usize>>, IoError> {
        let Some(col) = self.covariates.column(BASELINE_COLUMN) else {
            log::warn!("no {BASELINE_COLUMN} column; baseline contagion covariates are zero");
            return Ok(vec![Vec::new(); self.networks.len()]);
        };
        split_by_cluster(&self.networks, col)
            .into_iter()
            .zip(&self.networks)
            .map(|(v, g)| {
                if let Some(j) = v.iter().position(|&x| x != 0.0 && x != 1.0) {
                    return Err(IoError::Data(format!(
                        "{BASELINE_COLUMN} must be 0/1; node {} in cluster {} has {}",
                        j + 1,
                        g.cluster_id(),
                        v[j]
                    )));
                }
                Ok(v.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(j, _)| j).collect())
            })
            .collect()
    }

    /// Per-cluster mean of a node covariate.
    pub fn cluster_means(&self, column: &str) -> Result<Vec<f64>, IoError> {
        let col = self
            .covariates
            .column(column)
            .ok_or_else(|| IoError::Config(format!("unknown covariate column {column:?}")))?;
        Ok(split_by_cluster(&self.networks, col)
            .into_iter()
            .map(|v| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 })
            .collect())
    }
}

fn required(dir: &Path, name: &str) -> Result<std::path::PathBuf, IoError> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(IoError::Data(format!("missing required file {}", p.display())))
    }
}

/// Loads `edges.tsv`, `nodes.tsv`, `covariates.csv`, `outcomes.csv` and, if
/// present, `clusters.csv` from `dir`.
pub fn load_empirical(dir: &Path) -> Result<EmpiricalDataset, IoError> {
    let nodes = required(dir, NODES_FILE)?;
    let edges = required(dir, EDGES_FILE)?;
    let covariates = required(dir, COVARIATES_FILE)?;
    let outcomes = required(dir, OUTCOMES_FILE)?;
    let networks = read_networks(&edges, &nodes)?;
    let covariates = read_node_table(&covariates, &networks)?;
    let outcomes = read_outcomes(&outcomes, &networks)?;
    let clusters_path = dir.join(CLUSTERS_FILE);
    let clusters = if clusters_path.is_file() { Some(read_cluster_table(&clusters_path, &networks)?) } else { None };
    Ok(EmpiricalDataset { networks, covariates, outcomes, clusters })
}

/// Writes the dataset in the layout [`load_empirical`] reads.
pub fn write_empirical(dir: &Path, ds: &EmpiricalDataset) -> Result<(), IoError> {
    fn csv_err(p: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
        move |e| IoError::Data(format!("{}: {e}", p.display()))
    }
    write_networks(dir, &ds.networks)?;
    let p = dir.join(COVARIATES_FILE);
    write_node_table(create(&p)?, &ds.networks, &ds.covariates).map_err(csv_err(&p))?;
    let p = dir.join(OUTCOMES_FILE);
    write_outcomes(create(&p)?, &ds.networks, &ds.outcomes).map_err(csv_err(&p))?;
    if let Some(t) = &ds.clusters {
        let p = dir.join(CLUSTERS_FILE);
        write_cluster_table(create(&p)?, &ds.networks, t).map_err(csv_err(&p))?;
    }
    Ok(())
}

/// How cluster exposure is defined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ExposureRule {
    /// Exposed iff the cluster mean of a node column is strictly above the
    /// type-7 75th percentile across clusters.
    Quartile { column: String },
    /// A 0/1 cluster column, or a node column constant within clusters.
    Explicit { column: String },
}

impl ExposureRule {
    pub fn column(&self) -> &str {
        match self {
            Self::Quartile { column } | Self::Explicit { column } => column,
        }
    }
}

/// `A_i = 1` iff `fractions[i]` exceeds the type-7 75th percentile.
pub fn define_exposure_quartile(fractions: &[f64]) -> Result<Vec<bool>, IoError> {
    if fractions.len() < 4 {
        return Err(IoError::Data(format!("quartile exposure needs at least 4 clusters, got {}", fractions.len())));
    }
    if fractions.iter().any(|f| !f.is_finite()) {
        return Err(IoError::Data("quartile exposure: non-finite cluster fraction".into()));
    }
    let mut sorted = fractions.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(IoError::Data("quartile exposure: all cluster fractions are equal".into()));
    }
    let q = crate::study::quantile_sorted(&sorted, 0.75);
    Ok(fractions.iter().map(|&f| f > q).collect())
}

pub fn resolve_exposure(ds: &EmpiricalDataset, rule: &ExposureRule) -> Result<Vec<bool>, IoError> {
    let exposure = match rule {
        ExposureRule::Quartile { column } => define_exposure_quartile(&ds.cluster_means(column)?)?,
        ExposureRule::Explicit { column } => {
            let values: Vec<f64> = match ds.clusters.as_ref().and_then(|t| t.column(column)) {
                Some(c) => c.to_vec(),
                None => {
                    let col = ds
                        .covariates
                        .column(column)
                        .ok_or_else(|| IoError::Config(format!("unknown exposure column {column:?}")))?;
                    split_by_cluster(&ds.networks, col)
                        .into_iter()
                        .zip(&ds.networks)
                        .map(|(v, g)| match v.first() {
                            Some(&x) if v.iter().all(|&y| y == x) => Ok(x),
                            Some(_) => Err(IoError::Data(format!(
                                "exposure column {column:?} varies within cluster {}",
                                g.cluster_id()
                            ))),
                            None => Err(IoError::Data(format!("cluster {} has no nodes", g.cluster_id()))),
                        })
                        .collect::<Result<_, _>>()?
                }
            };
            if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(IoError::Data(format!("exposure column {column:?} must be 0/1, found {v}")));
            }
            values.iter().map(|&v| v == 1.0).collect()
        }
    };
    if exposure.iter().all(|&a| a) || !exposure.iter().any(|&a| a) {
        return Err(IoError::Data("exposure has no contrast: all clusters in one arm".into()));
    }
    Ok(exposure)
}

/// Analysis-ready frame plus the covariate groups available to strategies.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub features: Vec<FeatureMatrix>,
    pub frame: ClusterFrame<f64>,
    /// X1..X10, without X4 when the networks carry no block labels.
    pub network_covariates: Vec<String>,
    /// Node covariates other than the baseline flag and the exposure column.
    pub other_covariates: Vec<String>,
}

/// Computes network features and assembles the estimation frame. The
/// cluster total of X9 is added as `confounder` unless a cluster column of
/// that name exists; a `propensity` cluster column becomes the known
/// propensity score.
pub fn prepare(ds: &EmpiricalDataset, rule: &ExposureRule, cfg: &FeatureConfig) -> Result<PreparedData, IoError> {
    let exposure = resolve_exposure(ds, rule)?;
    let baseline = ds.baseline()?;
    let features: Vec<FeatureMatrix> = ds
        .networks
        .iter()
        .zip(&baseline)
        .map(|(g, b)| compute_features(g, b, cfg))
        .collect::<Result<_, _>>()
        .map_err(|e| IoError::Data(e.to_string()))?;
    let data_err = |e: crate::estimate::EstimateError| IoError::Data(e.to_string());
    let mut frame = ClusterFrame::from_features(&features, &ds.outcomes, exposure).map_err(data_err)?;
    let mut other = Vec::new();
    for (name, col) in ds.covariates.names.iter().zip(&ds.covariates.columns) {
        if FEATURE_NAMES.contains(&name.as_str()) {
            return Err(IoError::Data(format!("covariate column {name:?} clashes with a network feature name")));
        }
        frame.add_node_column(name, col.clone()).map_err(data_err)?;
        if name != BASELINE_COLUMN && name != rule.column() {
            other.push(name.clone());
        }
    }
    if let Some(t) = &ds.clusters {
        for (name, col) in t.names.iter().zip(&t.columns) {
            if frame.has_column(name) {
                return Err(IoError::Data(format!("cluster column {name:?} duplicates another column")));
            }
            frame.add_cluster_column(name, col.clone()).map_err(data_err)?;
        }
        if let Some(ps) = t.column(PROPENSITY_COLUMN) {
            frame.known_ps = Some(ps.to_vec());
        }
    }
    if !frame.has_column(CONFOUNDER) {
        let x9 = features.iter().map(|f| f.column("X9").expect("X9 computed").iter().sum()).collect();
        frame.add_cluster_column(CONFOUNDER, x9).map_err(data_err)?;
    }
    let has_blocks = ds.networks.iter().all(|g| g.blocks().is_some());
    let network_covariates = FEATURE_NAMES[..10]
        .iter()
        .filter(|&&n| has_blocks || n != "X4")
        .map(|n| n.to_string())
        .collect();
    Ok(PreparedData { features, frame, network_covariates, other_covariates: other })
}

pub const CRUDE_LABEL: &str = "Crude Estimate";
pub const GEE_LABEL: &str = "Unadjusted GEE Estimate";
pub const NETWORK_LABEL: &str = "Network Covariates Only";
pub const FULL_LABEL: &str = "Network & Sociodemographic";

/// The four report strategies: crude, unadjusted GEE, and doubly-robust
/// GEE with stepwise outcome and propensity models over network covariates
/// alone and together with the other node covariates.
pub fn empirical_strategies(network: &[String], other: &[String]) -> Vec<NamedStrategy> {
    let both: Vec<String> = network.iter().chain(other).cloned().collect();
    let dr = |c: &[String]| Strategy::dr(ModelSpec::stepwise(c, &[]), ModelSpec::stepwise(c, &[]));
    vec![
        NamedStrategy::new(CRUDE_LABEL, Strategy::Crude),
        NamedStrategy::new(GEE_LABEL, Strategy::Gee { working: WorkingCorrelation::Independence }),
        NamedStrategy::new(NETWORK_LABEL, dr(network)),
        NamedStrategy::new(FULL_LABEL, dr(&both)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub estimation: EstimateOptions,
    /// Sociodemographic covariates; defaults to every node covariate except
    /// the baseline flag and the exposure column.
    #[serde(default)]
    pub sociodemographic: Option<Vec<String>>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { features: FeatureConfig::default(), estimation: EstimateOptions::default(), sociodemographic: None }
    }
}

#[derive(Debug, Clone)]
pub struct StrategyReport {
    pub name: String,
    pub result: Result<EffectEstimate<f64>, String>,
}

#[derive(Debug, Clone)]
pub struct EmpiricalReport {
    pub clusters: usize,
    pub exposed: usize,
    pub nodes: usize,
    pub strategies: Vec<StrategyReport>,
}

/// One Wald row: adjustment, parameter, estimate, SE, Wald score, p-value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectRow {
    pub adjustment: String,
    pub parameter: String,
    pub estimate: f64,
    pub std_error: f64,
    pub wald: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub adjustment: String,
    pub model: String,
    pub parameter: String,
    pub estimate: f64,
    pub std_error: f64,
    pub statistic: f64,
    pub p_value: f64,
}

pub const EXPOSURE_PARAMETER: &str = "Exposure";

fn two_sided(z: f64) -> f64 {
    2.0 * Normal::new(0.0, 1.0).expect("standard normal").sf(z.abs())
}

impl EmpiricalReport {
    pub fn effect_rows(&self) -> Vec<EffectRow> {
        let mut rows = Vec::new();
        for s in &self.strategies {
            let Ok(e) = &s.result else { continue };
            let se = e.fit.std_errors();
            for (k, parameter) in [crate::glm::INTERCEPT, EXPOSURE_PARAMETER].iter().enumerate() {
                let wald = e.fit.beta[k] / se[k];
                rows.push(EffectRow {
                    adjustment: s.name.clone(),
                    parameter: (*parameter).into(),
                    estimate: e.fit.beta[k],
                    std_error: se[k],
                    wald,
                    p_value: two_sided(wald),
                });
            }
        }
        rows
    }

    /// Coefficient tables of every fitted outcome and propensity model.
    pub fn model_rows(&self) -> Vec<ModelRow> {
        let mut rows = Vec::new();
        let mut push = |adj: &str, model: &str, table: Vec<CoefRow>| {
            rows.extend(table.into_iter().map(|c| ModelRow {
                adjustment: adj.into(),
                model: model.into(),
                parameter: c.parameter,
                estimate: c.estimate,
                std_error: c.std_error,
                statistic: c.statistic,
                p_value: c.p_value,
            }))
        };
        for s in &self.strategies {
            let Ok(e) = &s.result else { continue };
            if let Some([m0, m1]) = &e.om {
                push(&s.name, "outcome_unexposed", m0.report());
                push(&s.name, "outcome_exposed", m1.report());
            }
            if let Some(ps) = &e.ps {
                push(&s.name, "propensity", ps.report());
            }
        }
        rows
    }

    pub fn get(&self, name: &str) -> Option<&EffectEstimate<f64>> {
        self.strategies.iter().find(|s| s.name == name).and_then(|s| s.result.as_ref().ok())
    }
}

pub fn run_strategies(
    frame: &ClusterFrame<f64>,
    strategies: &[NamedStrategy],
    opts: &EstimateOptions,
) -> Vec<StrategyReport> {
    strategies
        .iter()
        .map(|s| StrategyReport {
            name: s.name.clone(),
            result: estimate_effect(frame, &s.strategy, opts).map_err(|e| e.to_string()),
        })
        .collect()
}

/// Runs the four report strategies on a dataset.
pub fn analyze_empirical(
    ds: &EmpiricalDataset,
    rule: &ExposureRule,
    opts: &AnalyzeOptions,
) -> Result<EmpiricalReport, IoError> {
    let prep = prepare(ds, rule, &opts.features)?;
    let other = match &opts.sociodemographic {
        Some(list) => {
            if let Some(bad) = list.iter().find(|c| !prep.frame.has_column(c)) {
                return Err(IoError::Config(format!("unknown sociodemographic covariate {bad:?}")));
            }
            list.clone()
        }
        None => prep.other_covariates.clone(),
    };
    let strategies = empirical_strategies(&prep.network_covariates, &other);
    let reports = run_strategies(&prep.frame, &strategies, &opts.estimation);
    for r in &reports {
        if let Err(e) = &r.result {
            log::warn!("{}: {e}", r.name);
        }
    }
    Ok(EmpiricalReport {
        clusters: prep.frame.clusters(),
        exposed: prep.frame.exposure.iter().filter(|&&a| a).count(),
        nodes: prep.frame.nodes(),
        strategies: reports,
    })
}

pub fn write_effect_report<W: std::io::Write>(w: W, rows: &[EffectRow]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["adjustment", "parameter", "estimate", "std_error", "wald", "p_value"])?;
    for r in rows {
        wtr.write_record([
            r.adjustment.clone(),
            r.parameter.clone(),
            sig6(r.estimate),
            sig6(r.std_error),
            sig6(r.wald),
            sig6(r.p_value),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_model_report<W: std::io::Write>(w: W, rows: &[ModelRow]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["adjustment", "model", "parameter", "estimate", "std_error", "statistic", "p_value"])?;
    for r in rows {
        wtr.write_record([
            r.adjustment.clone(),
            r.model.clone(),
            r.parameter.clone(),
            sig6(r.estimate),
            sig6(r.std_error),
            sig6(r.statistic),
            sig6(r.p_value),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- fixtures

/// Two villages of three nodes: a triangle and a path plus an isolate.
pub fn toy_dataset() -> EmpiricalDataset {
    let networks = vec![
        Network::new(1, 3, [(0, 1), (1, 2), (0, 2)], None).expect("valid toy graph"),
        Network::new(2, 3, [(0, 1)], None).expect("valid toy graph"),
    ];
    let mut covariates = Table::default();
    covariates.push("age", vec![34.0, 51.0, 27.0, 45.0, 38.0, 62.0]);
    covariates.push("female", vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
    covariates.push("leader", vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    covariates.push(BASELINE_COLUMN, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let outcomes = vec![vec![true, true, false], vec![false, true, false]];
    EmpiricalDataset { networks, covariates, outcomes, clusters: None }
}

/// Synthetic observational dataset with a known marginal risk difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub size_range: (usize, usize),
    pub mean_degree: f64,
    /// True exposure risk difference, `|beta_a| <= 0.1`.
    pub beta_a: f64,
    /// Range of per-cluster leader rates.
    pub leader_rate: (f64, f64),
    /// Baseline-affected rate at the lowest leader rate.
    pub baseline_rate: f64,
    /// Extra baseline rate per unit leader rate; nonzero values confound
    /// exposure with baseline contagion.
    pub confounding: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            clusters: 49,
            size_range: (850, 1180),
            mean_degree: 8.0,
            beta_a: -0.08,
            leader_rate: (0.02, 0.2),
            baseline_rate: 0.05,
            confounding: 0.0,
            seed: 1,
        }
    }
}

/// Generates networks, covariates (`age`, `female`, `leader`,
/// `baseline_affected`), top-quartile exposure on the leader fraction, and
/// outcomes with
/// `P(Y=1) = 0.18 + βA·A + 0.2·min(X9, 3)/3 + 0.08·female + 0.04·age`,
/// `age ~ U(-1, 1)`. Returns the dataset and its exposure vector.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<(EmpiricalDataset, Vec<bool>), IoError> {
    if spec.beta_a.abs() > 0.1 {
        return Err(IoError::Config(format!("beta_a must lie in [-0.1, 0.1], got {}", spec.beta_a)));
    }
    let (lr0, lr1) = spec.leader_rate;
    let max_rate = spec.baseline_rate + spec.confounding * lr1;
    if !(0.0..=1.0).contains(&lr0) || !(lr0..=1.0).contains(&lr1) || !(0.0..=1.0).contains(&max_rate) {
        return Err(IoError::Config("synthetic rates must lie in [0, 1]".into()));
    }
    let net_spec = ClusterSetSpec {
        clusters: spec.clusters,
        size_range: spec.size_range,
        degree: DegreeSpec::poisson(spec.mean_degree),
        mixing: MixingSpec::random(8),
        rewire: None,
    };
    let networks = generate_cluster_set(&net_spec, rng::derive_seed(spec.seed, &[0]))
        .map_err(|e| IoError::Config(e.to_string()))?;
    let mut r = rng::stream(spec.seed, &[1]);
    let rate = Uniform::new_inclusive(lr0, lr1).map_err(|e| IoError::Config(e.to_string()))?;
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let mut cov = Table::default();
    let (mut age, mut female, mut leader, mut baseline) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for g in &networks {
        let lr: f64 = rate.sample(&mut r);
        let base = Bernoulli::new(spec.baseline_rate + spec.confounding * lr).expect("checked rate");
        let lead = Bernoulli::new(lr).expect("checked rate");
        for _ in 0..g.node_count() {
            age.push(unit.sample(&mut r));
            female.push(f64::from(u8::from(r.random_bool(0.5))));
            leader.push(f64::from(u8::from(lead.sample(&mut r))));
            baseline.push(f64::from(u8::from(base.sample(&mut r))));
        }
    }
    cov.push("age", age);
    cov.push("female", female);
    cov.push("leader", leader);
    cov.push(BASELINE_COLUMN, baseline);
    let mut ds = EmpiricalDataset { networks, covariates: cov, outcomes: Vec::new(), clusters: None };
    let exposure = define_exposure_quartile(&ds.cluster_means("leader")?)?;
    let base = ds.covariates.column(BASELINE_COLUMN).expect("pushed").to_vec();
    let age = ds.covariates.column("age").expect("pushed").to_vec();
    let female = ds.covariates.column("female").expect("pushed").to_vec();
    let mut off = 0;
    for (i, g) in ds.networks.iter().enumerate() {
        let a = if exposure[i] { 1.0 } else { 0.0 };
        let y = (0..g.node_count())
            .map(|j| {
                let x9 = g.neighbors(j).iter().filter(|&&v| base[off + v as usize] == 1.0).count() as f64;
                let p = 0.18 + spec.beta_a * a + 0.2 * x9.min(3.0) / 3.0 + 0.08 * female[off + j] + 0.04 * age[off + j];
                r.random_bool(p)
            })
            .collect();
        ds.outcomes.push(y);
        off += g.node_count();
    }
    Ok((ds, exposure))
}
