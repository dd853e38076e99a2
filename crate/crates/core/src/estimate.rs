//! Exposure-effect estimation strategies on a clustered data frame: crude
//! difference in means, classical GEE, and doubly-robust augmented GEE with
//! per-arm outcome models and a cluster-level propensity model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ColumnLevel, FeatureMatrix};
use crate::gee::{
    crude_estimate, solve_augmented_gee, solve_classical_gee, ClusterObs, GeeError, GeeFit, GeeOptions,
    WorkingCorrelation, PS_MAX, PS_MIN,
};
use crate::glm::{
    fit_linear, fit_logistic, stepwise_select, Columns, Criterion, ModelKind, RegressionError, RegressionFit,
    StepwiseOptions,
};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown covariate {0}")]
    UnknownCovariate(String),
    #[error("strategy needs known propensity scores but none were supplied")]
    NoKnownPropensity,
    #[error("known propensity scores are not a valid outcome-model specification")]
    KnownOutcomeModel,
    #[error("outcome model for arm {arm}: {source}")]
    OutcomeModel { arm: u8, source: RegressionError },
    #[error("propensity model: {0}")]
    PropensityModel(RegressionError),
    #[error(transparent)]
    Gee(#[from] GeeError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

/// How node-level covariates are collapsed to one value per cluster for the
/// propensity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

/// Per-node outcomes and covariates for a set of clusters, plus cluster-level
/// covariates and exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFrame<T> {
    pub cluster_ids: Vec<u32>,
    offsets: Vec<usize>,
    pub outcomes: Vec<T>,
    pub exposure: Vec<bool>,
    /// Node-level columns (one row per node, clusters stacked).
    pub node: Columns<T>,
    /// Cluster-level columns (one row per cluster).
    pub cluster: Columns<T>,
    /// True propensity scores when known (simulation).
    pub known_ps: Option<Vec<T>>,
}

impl<T: Real> ClusterFrame<T> {
    pub fn new(
        cluster_ids: Vec<u32>,
        sizes: &[usize],
        outcomes: Vec<T>,
        exposure: Vec<bool>,
    ) -> Result<Self, EstimateError> {
        let m = cluster_ids.len();
        if sizes.len() != m || exposure.len() != m {
            return Err(EstimateError::Dimension(format!(
                "{m} cluster ids, {} sizes, {} exposures",
                sizes.len(),
                exposure.len()
            )));
        }
        let mut offsets = vec![0];
        for &s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        let n = *offsets.last().unwrap();
        if outcomes.len() != n {
            return Err(EstimateError::Dimension(format!("{} outcomes for {n} nodes", outcomes.len())));
        }
        Ok(Self {
            cluster_ids,
            offsets,
            outcomes,
            exposure,
            node: Columns::new(n),
            cluster: Columns::new(m),
            known_ps: None,
        })
    }

    /// Builds a frame from per-cluster feature matrices; cluster-level
    /// features are also registered as cluster columns.
    pub fn from_features(
        features: &[FeatureMatrix],
        outcomes: &[Vec<bool>],
        exposure: Vec<bool>,
    ) -> Result<Self, EstimateError> {
        if features.len() != outcomes.len() {
            return Err(EstimateError::Dimension(format!(
                "{} feature matrices for {} outcome vectors",
                features.len(),
                outcomes.len()
            )));
        }
        for (f, y) in features.iter().zip(outcomes) {
            if f.rows() != y.len() {
                return Err(EstimateError::Dimension(format!(
                    "cluster {}: {} feature rows for {} outcomes",
                    f.cluster_id,
                    f.rows(),
                    y.len()
                )));
            }
        }
        let sizes: Vec<usize> = outcomes.iter().map(Vec::len).collect();
        let ys = outcomes.iter().flatten().map(|&b| if b { T::one() } else { T::zero() }).collect();
        let ids = features.iter().map(|f| f.cluster_id).collect();
        let mut frame = Self::new(ids, &sizes, ys, exposure)?;
        if let Some(first) = features.first() {
            for (c, name) in first.names.iter().enumerate() {
                let node: Vec<T> = features.iter().flat_map(|f| (0..f.rows()).map(move |r| T::lit(f.get(r, c)))).collect();
                frame.add_node_column(name, node)?;
                if first.levels[c] == ColumnLevel::Cluster {
                    let per: Vec<T> = features
                        .iter()
                        .map(|f| if f.rows() > 0 { T::lit(f.get(0, c)) } else { T::zero() })
                        .collect();
                    frame.add_cluster_column(name, per)?;
                }
            }
        }
        Ok(frame)
    }

    pub fn clusters(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn nodes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn add_node_column(&mut self, name: &str, values: Vec<T>) -> Result<(), EstimateError> {
        Ok(self.node.push(name, values)?)
    }

    pub fn add_cluster_column(&mut self, name: &str, values: Vec<T>) -> Result<(), EstimateError> {
        Ok(self.cluster.push(name, values)?)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.node.get(name).is_some() || self.cluster.get(name).is_some()
    }

    /// Node-level design: node columns as is, cluster columns broadcast.
    pub fn node_design(&self, names: &[String]) -> Result<Columns<T>, EstimateError> {
        let mut out = Columns::new(self.nodes());
        for name in names {
            let values = if let Some(c) = self.node.get(name) {
                c.to_vec()
            } else if let Some(c) = self.cluster.get(name) {
                (0..self.clusters()).flat_map(|i| std::iter::repeat(c[i]).take(self.range(i).len())).collect()
            } else {
                return Err(EstimateError::UnknownCovariate(name.clone()));
            };
            out.push(name, values)?;
        }
        Ok(out)
    }

    /// Cluster-level design: cluster columns as is, node columns aggregated.
    pub fn cluster_design(&self, names: &[String], agg: Aggregation) -> Result<Columns<T>, EstimateError> {
        let mut out = Columns::new(self.clusters());
        for name in names {
            let values = if let Some(c) = self.cluster.get(name) {
                c.to_vec()
            } else if let Some(c) = self.node.get(name) {
                (0..self.clusters())
                    .map(|i| {
                        let r = self.range(i);
                        let n = r.len();
                        let s: T = c[r].iter().copied().sum();
                        match agg {
                            Aggregation::Sum => s,
                            Aggregation::Mean if n > 0 => s / T::from_count(n),
                            Aggregation::Mean => T::zero(),
                        }
                    })
                    .collect()
            } else {
                return Err(EstimateError::UnknownCovariate(name.clone()));
            };
            out.push(name, values)?;
        }
        Ok(out)
    }

    fn observations(&self) -> Vec<ClusterObs<T>> {
        (0..self.clusters())
            .map(|i| ClusterObs::new(self.outcomes[self.range(i)].to_vec(), self.exposure[i]))
            .collect()
    }

    /// A copy of the frame restricted to the given clusters, in order.
    pub fn subset(&self, clusters: &[usize]) -> Result<Self, EstimateError> {
        let sizes: Vec<usize> = clusters.iter().map(|&i| self.range(i).len()).collect();
        let rows: Vec<usize> = clusters.iter().flat_map(|&i| self.range(i)).collect();
        let mut out = Self::new(
            clusters.iter().map(|&i| self.cluster_ids[i]).collect(),
            &sizes,
            rows.iter().map(|&r| self.outcomes[r]).collect(),
            clusters.iter().map(|&i| self.exposure[i]).collect(),
        )?;
        for (k, name) in self.node.names().iter().enumerate() {
            let col = self.node.column(k);
            out.add_node_column(name, rows.iter().map(|&r| col[r]).collect())?;
        }
        for (k, name) in self.cluster.names().iter().enumerate() {
            let col = self.cluster.column(k);
            out.add_cluster_column(name, clusters.iter().map(|&i| col[i]).collect())?;
        }
        out.known_ps = self.known_ps.as_ref().map(|ps| clusters.iter().map(|&i| ps[i]).collect());
        Ok(out)
    }
}

/// Covariate specification for a nuisance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    /// Use the supplied true propensity scores (propensity model only).
    Known,
    /// Exactly these covariates.
    Fixed { covariates: Vec<String> },
    /// Stepwise selection over `candidates`, always keeping `forced`.
    Stepwise {
        candidates: Vec<String>,
        #[serde(default)]
        forced: Vec<String>,
    },
}

impl ModelSpec {
    pub fn fixed<S: AsRef<str>>(covariates: &[S]) -> Self {
        Self::Fixed { covariates: covariates.iter().map(|s| s.as_ref().to_string()).collect() }
    }

    pub fn stepwise<S: AsRef<str>>(candidates: &[S], forced: &[S]) -> Self {
        Self::Stepwise {
            candidates: candidates.iter().map(|s| s.as_ref().to_string()).collect(),
            forced: forced.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    /// Every covariate the model may touch.
    pub fn covariates(&self) -> Vec<String> {
        match self {
            Self::Known => Vec::new(),
            Self::Fixed { covariates } => covariates.clone(),
            Self::Stepwise { candidates, forced } => {
                let mut all = candidates.clone();
                all.extend(forced.iter().filter(|f| !candidates.contains(f)).cloned());
                all
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Strategy {
    /// Difference of pooled arm means with a cluster-robust SE.
    Crude,
    /// Classical (unadjusted) GEE.
    Gee {
        #[serde(default)]
        working: WorkingCorrelation,
    },
    /// Doubly-robust augmented GEE.
    Dr { om: ModelSpec, ps: ModelSpec },
}

impl Strategy {
    pub fn gee() -> Self {
        Self::Gee { working: WorkingCorrelation::Independence }
    }

    pub fn dr(om: ModelSpec, ps: ModelSpec) -> Self {
        Self::Dr { om, ps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedStrategy {
    pub name: String,
    #[serde(flatten)]
    pub strategy: Strategy,
}

impl NamedStrategy {
    pub fn new(name: &str, strategy: Strategy) -> Self {
        Self { name: name.into(), strategy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    #[serde(default)]
    pub gee: GeeOptions,
    /// Aggregation of node-level covariates in the propensity model.
    #[serde(default)]
    pub ps_aggregation: Aggregation,
    #[serde(default)]
    pub criterion: Criterion,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { gee: GeeOptions::default(), ps_aggregation: Aggregation::Mean, criterion: Criterion::Aic }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate<T> {
    pub fit: GeeFit<T>,
    /// Outcome models for arms 0 and 1.
    pub om: Option<[RegressionFit<T>; 2]>,
    pub ps: Option<RegressionFit<T>>,
    /// Propensity scores used for weighting.
    pub ps_values: Option<Vec<T>>,
    /// Number of propensity scores clamped into `[PS_MIN, PS_MAX]`.
    pub ps_trimmed: usize,
}

fn fit_spec<T: Real>(
    spec: &ModelSpec,
    x: &Columns<T>,
    y: &[T],
    kind: ModelKind,
    criterion: Criterion,
) -> Result<RegressionFit<T>, RegressionError> {
    match spec {
        ModelSpec::Known => unreachable!("handled by caller"),
        ModelSpec::Fixed { .. } => match kind {
            ModelKind::Linear => fit_linear(x, y),
            ModelKind::Logistic => fit_logistic(x, y),
        },
        ModelSpec::Stepwise { forced, .. } => {
            let opts = StepwiseOptions { kind, criterion, forced: forced.clone(), max_steps: 100 };
            stepwise_select(x, y, &opts)
        }
    }
}

/// Fits one linear outcome model per arm and predicts both arms for every
/// node, clamped to `[0, 1]`.
pub fn fit_outcome_models<T: Real>(
    frame: &ClusterFrame<T>,
    spec: &ModelSpec,
    criterion: Criterion,
) -> Result<([RegressionFit<T>; 2], [Vec<T>; 2]), EstimateError> {
    if *spec == ModelSpec::Known {
        return Err(EstimateError::KnownOutcomeModel);
    }
    let design = frame.node_design(&spec.covariates())?;
    let mut arm_of_row = vec![false; frame.nodes()];
    for i in 0..frame.clusters() {
        for r in frame.range(i) {
            arm_of_row[r] = frame.exposure[i];
        }
    }
    let mut fits = Vec::with_capacity(2);
    let mut preds = Vec::with_capacity(2);
    for arm in [false, true] {
        let mask: Vec<bool> = arm_of_row.iter().map(|&a| a == arm).collect();
        let x = design.filter_rows(&mask);
        let y: Vec<T> = frame.outcomes.iter().zip(&mask).filter(|(_, &m)| m).map(|(&y, _)| y).collect();
        let fit = fit_spec(spec, &x, &y, ModelKind::Linear, criterion)
            .map_err(|source| EstimateError::OutcomeModel { arm: u8::from(arm), source })?;
        let p = fit.predict(&design)?.into_iter().map(|v| v.clamp_to(T::zero(), T::one())).collect();
        fits.push(fit);
        preds.push(p);
    }
    let (f1, f0) = (fits.pop().unwrap(), fits.pop().unwrap());
    let (p1, p0) = (preds.pop().unwrap(), preds.pop().unwrap());
    Ok(([f0, f1], [p0, p1]))
}

/// Fits (or looks up) the propensity score and trims it into
/// `[PS_MIN, PS_MAX]`. Returns the fit, scores, and number trimmed.
pub fn fit_propensity<T: Real>(
    frame: &ClusterFrame<T>,
    spec: &ModelSpec,
    opts: &EstimateOptions,
) -> Result<(Option<RegressionFit<T>>, Vec<T>, usize), EstimateError> {
    let (fit, raw) = match spec {
        ModelSpec::Known => (None, frame.known_ps.clone().ok_or(EstimateError::NoKnownPropensity)?),
        _ => {
            let x = frame.cluster_design(&spec.covariates(), opts.ps_aggregation)?;
            let a: Vec<T> = frame.exposure.iter().map(|&e| if e { T::one() } else { T::zero() }).collect();
            let fit = fit_spec(spec, &x, &a, ModelKind::Logistic, opts.criterion)
                .map_err(EstimateError::PropensityModel)?;
            let values = fit.fitted.clone();
            (Some(fit), values)
        }
    };
    let (lo, hi) = (T::lit(PS_MIN), T::lit(PS_MAX));
    let trimmed = raw.iter().filter(|&&g| g < lo || g > hi).count();
    if trimmed > 0 {
        log::debug!("trimmed {trimmed} propensity scores into [{PS_MIN}, {PS_MAX}]");
    }
    Ok((fit, raw.into_iter().map(|g| g.clamp_to(lo, hi)).collect(), trimmed))
}

/// Estimates the marginal exposure effect with one strategy.
pub fn estimate_effect<T: Real>(
    frame: &ClusterFrame<T>,
    strategy: &Strategy,
    opts: &EstimateOptions,
) -> Result<EffectEstimate<T>, EstimateError> {
    let plain = |fit| EffectEstimate { fit, om: None, ps: None, ps_values: None, ps_trimmed: 0 };
    match strategy {
        Strategy::Crude => Ok(plain(crude_estimate(&frame.observations())?)),
        Strategy::Gee { working } => {
            let gee = GeeOptions { working: *working, ..opts.gee };
            Ok(plain(solve_classical_gee(&frame.observations(), &gee)?))
        }
        Strategy::Dr { om, ps } => {
            let (om_fits, [b0, b1]) = fit_outcome_models(frame, om, opts.criterion)?;
            let (ps_fit, g, trimmed) = fit_propensity(frame, ps, opts)?;
            let data: Vec<ClusterObs<T>> = frame
                .observations()
                .into_iter()
                .enumerate()
                .map(|(i, c)| {
                    let r = frame.range(i);
                    c.with_nuisance(b0[r.clone()].to_vec(), b1[r].to_vec(), g[i])
                })
                .collect();
            let fit = solve_augmented_gee(&data, &opts.gee)?;
            Ok(EffectEstimate { fit, om: Some(om_fits), ps: ps_fit, ps_values: Some(g), ps_trimmed: trimmed })
        }
    }
}
