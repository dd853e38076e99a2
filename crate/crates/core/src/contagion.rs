//! Susceptible-infected contagion across a set of cluster networks:
//! seeding, spread to a pooled baseline prevalence, confounded cluster
//! exposure, and post-exposure spread under arm-specific transmission.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::total_neighbor_infections;
use crate::graph::Network;
use crate::scalar::{expit, logit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContagionError {
    #[error("invalid contagion config: {0}")]
    Config(String),
    #[error("seed fraction {frac} of {nodes} nodes rounds to zero seeds")]
    NoSeeds { frac: f64, nodes: usize },
    #[error("contagion stalled at prevalence {prevalence:.4} before reaching baseline {target}")]
    Stalled { prevalence: f64, target: f64 },
    #[error("confounder is constant across clusters; exposure cannot be calibrated")]
    ConstantConfounder,
    #[error("baseline snapshot not taken yet")]
    NoBaseline,
    #[error("exposure not assigned yet")]
    NoExposure,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Affectivity {
    /// Each affected node contacts one random neighbor per step.
    Unit,
    /// Each affected node contacts all of its neighbors per step.
    Degree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExposureMode {
    /// Independent Bernoulli draws from the propensity score.
    #[default]
    Bernoulli,
    /// Expose the half of the clusters with the highest propensity score.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContagionConfig {
    pub seed_frac: f64,
    pub baseline_frac: f64,
    pub steps: usize,
    pub p0: f64,
    pub p1: f64,
    pub affectivity: Affectivity,
    /// Safety cap on steps taken while spreading to baseline.
    #[serde(default = "default_max_baseline_steps")]
    pub max_baseline_steps: usize,
}

fn default_max_baseline_steps() -> usize {
    10_000
}

impl ContagionConfig {
    pub fn new(seed_frac: f64, baseline_frac: f64, affectivity: Affectivity) -> Self {
        Self {
            seed_frac,
            baseline_frac,
            steps: 5,
            p0: 0.3,
            p1: 0.1,
            affectivity,
            max_baseline_steps: default_max_baseline_steps(),
        }
    }

    pub fn validate(&self) -> Result<(), ContagionError> {
        let bad = |m: String| Err(ContagionError::Config(m));
        if !(self.seed_frac > 0.0 && self.seed_frac < 1.0) {
            return bad(format!("seed fraction {} must lie in (0, 1)", self.seed_frac));
        }
        if !(self.baseline_frac > self.seed_frac && self.baseline_frac < 1.0) {
            return bad(format!(
                "baseline fraction {} must lie in (seed fraction, 1)",
                self.baseline_frac
            ));
        }
        for (name, p) in [("p0", self.p0), ("p1", self.p1)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} must lie in [0, 1]"));
            }
        }
        if self.max_baseline_steps == 0 {
            return bad("max_baseline_steps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContagionState {
    pub affected: Vec<Vec<bool>>,
    pub baseline: Option<Vec<Vec<bool>>>,
    pub exposure: Option<Vec<bool>>,
    pub time: usize,
    /// Affected (cluster, node) pairs in order of infection.
    order: Vec<(u32, u32)>,
}

impl ContagionState {
    /// A state with the given nodes affected.
    pub fn from_affected(nets: &[Network], seeds: &[(usize, usize)]) -> Result<Self, ContagionError> {
        let mut affected: Vec<Vec<bool>> = nets.iter().map(|g| vec![false; g.node_count()]).collect();
        let mut order = Vec::new();
        for &(c, j) in seeds {
            let slot = affected
                .get_mut(c)
                .and_then(|a| a.get_mut(j))
                .ok_or_else(|| ContagionError::Dimension(format!("seed ({c}, {j}) out of range")))?;
            if !*slot {
                *slot = true;
                order.push((c as u32, j as u32));
            }
        }
        Ok(Self { affected, baseline: None, exposure: None, time: 0, order })
    }

    pub fn total_nodes(&self) -> usize {
        self.affected.iter().map(Vec::len).sum()
    }

    pub fn affected_count(&self) -> usize {
        self.order.len()
    }

    pub fn prevalence(&self) -> f64 {
        self.affected_count() as f64 / self.total_nodes().max(1) as f64
    }

    /// Indices of nodes affected at baseline, per cluster.
    pub fn baseline_nodes(&self) -> Result<Vec<Vec<usize>>, ContagionError> {
        let base = self.baseline.as_ref().ok_or(ContagionError::NoBaseline)?;
        Ok(base
            .iter()
            .map(|c| c.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j).collect())
            .collect())
    }

    fn has_frontier(&self, nets: &[Network]) -> bool {
        self.order.iter().any(|&(c, j)| {
            nets[c as usize]
                .neighbors(j as usize)
                .iter()
                .any(|&v| !self.affected[c as usize][v as usize])
        })
    }
}

/// Affects `round(S·N)` nodes drawn uniformly without replacement from all
/// clusters pooled.
pub fn seed_initial<R: Rng + ?Sized>(
    nets: &[Network],
    seed_frac: f64,
    rng: &mut R,
) -> Result<ContagionState, ContagionError> {
    if !(seed_frac > 0.0 && seed_frac < 1.0) {
        return Err(ContagionError::Config(format!("seed fraction {seed_frac} must lie in (0, 1)")));
    }
    let total: usize = nets.iter().map(Network::node_count).sum();
    let k = (seed_frac * total as f64).round() as usize;
    if k == 0 {
        return Err(ContagionError::NoSeeds { frac: seed_frac, nodes: total });
    }
    let mut offsets = Vec::with_capacity(nets.len());
    let mut acc = 0;
    for g in nets {
        offsets.push(acc);
        acc += g.node_count();
    }
    let mut picks = index::sample(rng, total, k.min(total)).into_vec();
    picks.sort_unstable();
    let seeds: Vec<(usize, usize)> = picks
        .into_iter()
        .map(|p| {
            let c = offsets.partition_point(|&o| o <= p) - 1;
            (c, p - offsets[c])
        })
        .collect();
    ContagionState::from_affected(nets, &seeds)
}

/// One synchronous step. Affected nodes are visited in random order, each
/// contacting one random neighbor (unit) or all neighbors (degree); a
/// contacted susceptible becomes affected with its cluster's probability.
/// Nodes affected during this step start transmitting next step. Returns the
/// number of new infections.
pub fn step<R: Rng + ?Sized>(
    state: &mut ContagionState,
    nets: &[Network],
    p: &[f64],
    affectivity: Affectivity,
    rng: &mut R,
) -> Result<usize, ContagionError> {
    if p.len() != nets.len() || state.affected.len() != nets.len() {
        return Err(ContagionError::Dimension(format!(
            "{} probabilities, {} state clusters, {} networks",
            p.len(),
            state.affected.len(),
            nets.len()
        )));
    }
    let mut transmitters = state.order.clone();
    transmitters.shuffle(rng);
    let before = state.order.len();
    for (c, j) in transmitters {
        let (c, j) = (c as usize, j as usize);
        let pc = p[c];
        let nbrs = nets[c].neighbors(j);
        if nbrs.is_empty() || pc <= 0.0 {
            continue;
        }
        let contact = |v: usize, rng: &mut R, state: &mut ContagionState| {
            if !state.affected[c][v] && (pc >= 1.0 || rng.random::<f64>() < pc) {
                state.affected[c][v] = true;
                state.order.push((c as u32, v as u32));
            }
        };
        match affectivity {
            Affectivity::Unit => {
                let v = nbrs[rng.random_range(0..nbrs.len())] as usize;
                contact(v, rng, state);
            }
            Affectivity::Degree => {
                for &v in nbrs {
                    contact(v as usize, rng, state);
                }
            }
        }
    }
    state.time += 1;
    Ok(state.order.len() - before)
}

/// Spreads with `p0` everywhere until pooled prevalence reaches the baseline
/// fraction, then snapshots the affected set.
///
/// Stalls when no affected node has a susceptible neighbor (the target is
/// unreachable) or the step cap is hit.
pub fn run_to_baseline<R: Rng + ?Sized>(
    state: &mut ContagionState,
    nets: &[Network],
    cfg: &ContagionConfig,
    rng: &mut R,
) -> Result<(), ContagionError> {
    cfg.validate()?;
    let total = state.total_nodes() as f64;
    let reached = |s: &ContagionState| s.affected_count() as f64 >= cfg.baseline_frac * total - 1e-9;
    let p = vec![cfg.p0; nets.len()];
    let mut steps = 0;
    while !reached(state) {
        let stalled = steps >= cfg.max_baseline_steps
            || cfg.p0 <= 0.0
            || (step(state, nets, &p, cfg.affectivity, rng)? == 0 && !state.has_frontier(nets));
        if stalled {
            return Err(ContagionError::Stalled { prevalence: state.prevalence(), target: cfg.baseline_frac });
        }
        steps += 1;
    }
    state.baseline = Some(state.affected.clone());
    Ok(())
}

/// Per-cluster confounder: total number of affected neighbors at baseline,
/// summed over the cluster's nodes.
pub fn baseline_confounder(state: &ContagionState, nets: &[Network]) -> Result<Vec<f64>, ContagionError> {
    let nodes = state.baseline_nodes()?;
    Ok(nets.iter().zip(&nodes).map(|(g, b)| total_neighbor_infections(g, b)).collect())
}

/// Logistic coefficients mapping the observed confounder range onto
/// probabilities `[0.1, 0.9]`.
pub fn calibrate_psi(confounder: &[f64]) -> Result<(f64, f64), ContagionError> {
    let lo = confounder.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = confounder.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(ContagionError::ConstantConfounder);
    }
    let psi_a = (logit(0.9) - logit(0.1)) / (hi - lo);
    Ok((logit(0.1) - psi_a * lo, psi_a))
}

pub fn propensity(confounder: &[f64], (psi0, psi_a): (f64, f64)) -> Vec<f64> {
    confounder.iter().map(|&x| expit(psi0 + psi_a * x)).collect()
}

/// Sets cluster exposure from the propensity scores and returns them.
pub fn assign_exposure<R: Rng + ?Sized>(
    state: &mut ContagionState,
    confounder: &[f64],
    psi: (f64, f64),
    mode: ExposureMode,
    rng: &mut R,
) -> Result<Vec<f64>, ContagionError> {
    if state.baseline.is_none() {
        return Err(ContagionError::NoBaseline);
    }
    if confounder.len() != state.affected.len() {
        return Err(ContagionError::Dimension(format!(
            "{} confounder values for {} clusters",
            confounder.len(),
            state.affected.len()
        )));
    }
    let ps = propensity(confounder, psi);
    let exposure = match mode {
        ExposureMode::Bernoulli => ps.iter().map(|&g| rng.random::<f64>() < g).collect(),
        ExposureMode::Balanced => {
            let mut idx: Vec<usize> = (0..ps.len()).collect();
            idx.sort_by(|&a, &b| ps[b].total_cmp(&ps[a]).then(a.cmp(&b)));
            let mut e = vec![false; ps.len()];
            for &i in &idx[..ps.len() / 2] {
                e[i] = true;
            }
            e
        }
    };
    state.exposure = Some(exposure);
    Ok(ps)
}

/// Runs `T` more steps with `p1` in exposed and `p0` in unexposed clusters.
/// Returns the final affected indicators as outcomes.
pub fn run_post_exposure<R: Rng + ?Sized>(
    state: &mut ContagionState,
    nets: &[Network],
    cfg: &ContagionConfig,
    rng: &mut R,
) -> Result<Vec<Vec<bool>>, ContagionError> {
    let exposure = state.exposure.as_ref().ok_or(ContagionError::NoExposure)?;
    let p: Vec<f64> = exposure.iter().map(|&a| if a { cfg.p1 } else { cfg.p0 }).collect();
    for _ in 0..cfg.steps {
        step(state, nets, &p, cfg.affectivity, rng)?;
    }
    Ok(state.affected.clone())
}

/// Everything one contagion realization produces.
#[derive(Debug, Clone)]
pub struct ContagionRun {
    pub state: ContagionState,
    pub confounder: Vec<f64>,
    pub psi: (f64, f64),
    pub propensity: Vec<f64>,
    pub outcomes: Vec<Vec<bool>>,
}

/// Seeds, spreads to baseline, assigns exposure, and spreads `T` more steps.
pub fn simulate<R: Rng + ?Sized>(
    nets: &[Network],
    cfg: &ContagionConfig,
    mode: ExposureMode,
    rng: &mut R,
) -> Result<ContagionRun, ContagionError> {
    cfg.validate()?;
    let mut state = seed_initial(nets, cfg.seed_frac, rng)?;
    run_to_baseline(&mut state, nets, cfg, rng)?;
    let confounder = baseline_confounder(&state, nets)?;
    let psi = calibrate_psi(&confounder)?;
    let propensity = assign_exposure(&mut state, &confounder, psi, mode, rng)?;
    let outcomes = run_post_exposure(&mut state, nets, cfg, rng)?;
    Ok(ContagionRun { state, confounder, psi, propensity, outcomes })
}
