//! Classical and doubly-robust augmented GEE for a binary cluster exposure
//! under an identity link, with empirical sandwich covariance.
//!
//! The mean model is `μ_ij = β0 + βA·A_i`, so `D_i = [1, A_i]·1` and the mean
//! is constant within a cluster. With `V_i = φ v C(α)`, `v = μ(1−μ)`, every
//! product `D_iᵀ V_i⁻¹ r` reduces to `(1, A_i)ᵀ Σ_j r_j / (φ v (1 − α + n_i α))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::scalar::Real;

/// Lower clamp for the variance function `μ(1−μ)`.
const MIN_VARIANCE: f64 = 0.001 * 0.999;
pub const PS_MIN: f64 = 0.01;
pub const PS_MAX: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeeError {
    #[error("need at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("exposure arm {0} has no clusters")]
    EmptyArm(u8),
    #[error("cluster {0} has no observations")]
    EmptyCluster(usize),
    #[error("cluster {cluster}: {what}")]
    Dimension { cluster: usize, what: String },
    #[error("propensity scores outside [{PS_MIN}, {PS_MAX}] in clusters {0:?}")]
    PropensityOutOfRange(Vec<usize>),
    #[error("cluster {0} lacks outcome-model predictions or a propensity score")]
    MissingNuisance(usize),
    #[error("singular bread matrix (degenerate design)")]
    SingularBread,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WorkingCorrelation {
    #[default]
    Independence,
    Exchangeable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeeKind {
    /// Unweighted difference of pooled arm means.
    Crude,
    Classical,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeeOptions {
    #[serde(default)]
    pub working: WorkingCorrelation,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Evaluate `V_i(a)` in the augmentation term at the arm-specific mean
    /// `μ(a)` (default) rather than at the observed arm's mean.
    #[serde(default = "default_true")]
    pub arm_specific_variance: bool,
}

fn default_max_iter() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-10
}
fn default_true() -> bool {
    true
}

impl Default for GeeOptions {
    fn default() -> Self {
        Self {
            working: WorkingCorrelation::Independence,
            max_iter: default_max_iter(),
            tol: default_tol(),
            arm_specific_variance: true,
        }
    }
}

/// One cluster's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterObs<T> {
    pub y: Vec<T>,
    pub exposed: bool,
    /// Outcome-model predictions `[B_i(X, 0), B_i(X, 1)]`.
    pub om: Option<[Vec<T>; 2]>,
    /// Propensity score `g_i`.
    pub ps: Option<T>,
}

impl<T: Real> ClusterObs<T> {
    pub fn new(y: Vec<T>, exposed: bool) -> Self {
        Self { y, exposed, om: None, ps: None }
    }

    pub fn with_nuisance(mut self, om0: Vec<T>, om1: Vec<T>, ps: T) -> Self {
        self.om = Some([om0, om1]);
        self.ps = Some(ps);
        self
    }

    fn arm(&self) -> usize {
        usize::from(self.exposed)
    }

    /// `G_i` diagonal value: `A/g + (1−A)/(1−g)`.
    fn ipw(&self) -> T {
        let g = self.ps.expect("validated");
        if self.exposed {
            T::one() / g
        } else {
            T::one() / (T::one() - g)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeeFit<T> {
    pub kind: GeeKind,
    /// `(β0, βA)`.
    pub beta: [T; 2],
    pub covariance: Matrix<T>,
    pub converged: bool,
    pub iterations: usize,
    pub working: WorkingCorrelation,
    pub alpha: T,
    pub phi: T,
    pub clusters: usize,
    pub observations: usize,
    pub warnings: Vec<String>,
}

impl<T: Real> GeeFit<T> {
    pub fn effect(&self) -> T {
        self.beta[1]
    }

    pub fn std_errors(&self) -> [T; 2] {
        [self.covariance[(0, 0)].max(T::zero()).sqrt(), self.covariance[(1, 1)].max(T::zero()).sqrt()]
    }

    pub fn effect_se(&self) -> T {
        self.std_errors()[1]
    }
}

struct Working<T> {
    phi: T,
    alpha: T,
}

impl<T: Real> Working<T> {
    /// `1ᵀ V⁻¹ r / Σ r` for a cluster of size `n` with variance `v`.
    fn weight(&self, n: usize, v: T) -> T {
        let a = T::one() - self.alpha;
        T::one() / (self.phi * v * (a + T::from_count(n) * self.alpha))
    }
}

fn variance<T: Real>(mu: T) -> T {
    (mu * (T::one() - mu)).max(T::lit(MIN_VARIANCE))
}

fn arm_means<T: Real>(beta: &[T; 2]) -> [T; 2] {
    [beta[0], beta[0] + beta[1]]
}

fn validate<T: Real>(data: &[ClusterObs<T>], kind: GeeKind) -> Result<(), GeeError> {
    if data.len() < 2 {
        return Err(GeeError::TooFewClusters(data.len()));
    }
    for arm in [false, true] {
        if !data.iter().any(|c| c.exposed == arm) {
            return Err(GeeError::EmptyArm(u8::from(arm)));
        }
    }
    for (i, c) in data.iter().enumerate() {
        if c.y.is_empty() {
            return Err(GeeError::EmptyCluster(i));
        }
        if kind == GeeKind::Augmented {
            let (Some(om), Some(_)) = (&c.om, c.ps) else {
                return Err(GeeError::MissingNuisance(i));
            };
            if om.iter().any(|b| b.len() != c.y.len()) {
                return Err(GeeError::Dimension {
                    cluster: i,
                    what: format!("outcome-model predictions do not match {} outcomes", c.y.len()),
                });
            }
        }
    }
    if kind == GeeKind::Augmented {
        let bad: Vec<usize> = data
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let g = c.ps.unwrap();
                !(g >= T::lit(PS_MIN) && g <= T::lit(PS_MAX))
            })
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            return Err(GeeError::PropensityOutOfRange(bad));
        }
    }
    Ok(())
}

/// Per-cluster estimating-function contributions and the (positive) bread
/// `Σ D ᵀV⁻¹ D` at `beta`.
fn contributions<T: Real>(
    data: &[ClusterObs<T>],
    kind: GeeKind,
    beta: &[T; 2],
    w: &Working<T>,
    opts: &GeeOptions,
) -> (Vec<[T; 2]>, Matrix<T>) {
    let mu = arm_means(beta);
    let v = [variance(mu[0]), variance(mu[1])];
    let mut bread = Matrix::zeros(2, 2);
    let mut add_bread = |scale: T, a: usize| {
        let af = T::from_count(a);
        bread[(0, 0)] += scale;
        bread[(0, 1)] += scale * af;
        bread[(1, 0)] += scale * af;
        bread[(1, 1)] += scale * af * af;
    };
    let mut units = Vec::with_capacity(data.len());
    for c in data {
        let n = c.y.len();
        let obs = c.arm();
        let u = match kind {
            GeeKind::Crude | GeeKind::Classical => {
                let wt = if kind == GeeKind::Crude { T::one() } else { w.weight(n, v[obs]) };
                let r: T = c.y.iter().map(|&y| y - mu[obs]).sum();
                add_bread(wt * T::from_count(n), obs);
                let s = wt * r;
                [s, s * T::from_count(obs)]
            }
            GeeKind::Augmented => {
                let om = c.om.as_ref().unwrap();
                let wt = w.weight(n, v[obs]) * c.ipw();
                let r: T = c.y.iter().zip(&om[obs]).map(|(&y, &b)| y - b).sum();
                let s = wt * r;
                let mut u = [s, s * T::from_count(obs)];
                for a in 0..2 {
                    let va = if opts.arm_specific_variance { v[a] } else { v[obs] };
                    let wa = w.weight(n, va);
                    let d: T = om[a].iter().map(|&b| b - mu[a]).sum();
                    u[0] += wa * d;
                    u[1] += wa * d * T::from_count(a);
                    add_bread(wa * T::from_count(n), a);
                }
                u
            }
        };
        units.push(u);
    }
    (units, bread)
}

/// Pearson-moment estimates of `(φ, α)` from residuals at the observed arm.
fn moments<T: Real>(data: &[ClusterObs<T>], beta: &[T; 2], working: WorkingCorrelation) -> (T, T) {
    let mu = arm_means(beta);
    let p = T::lit(2.0);
    let (mut ss, mut cross, mut pairs, mut total) = (T::zero(), T::zero(), T::zero(), 0usize);
    let mut n_max = 1;
    for c in data {
        let m = mu[c.arm()];
        let sd = variance(m).sqrt();
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for &y in &c.y {
            let e = (y - m) / sd;
            s1 += e;
            s2 += e * e;
        }
        ss += s2;
        cross += (s1 * s1 - s2) * T::lit(0.5);
        let n = c.y.len();
        pairs += T::from_count(n * (n - 1) / 2);
        total += n;
        n_max = n_max.max(n);
    }
    let df = (T::from_count(total) - p).max(T::one());
    let phi = (ss / df).max(T::lit(1e-12));
    let alpha = match working {
        WorkingCorrelation::Independence => T::zero(),
        WorkingCorrelation::Exchangeable if n_max > 1 && pairs > p => {
            let raw = cross / (phi * (pairs - p));
            let lower = -T::one() / T::from_count(n_max - 1) + T::lit(1e-6);
            raw.max(lower).min(T::lit(0.999))
        }
        WorkingCorrelation::Exchangeable => T::zero(),
    };
    (phi, alpha)
}

fn sandwich<T: Real>(units: &[[T; 2]], bread: &Matrix<T>) -> Result<Matrix<T>, GeeError> {
    let mut meat = Matrix::zeros(2, 2);
    for u in units {
        for a in 0..2 {
            for b in 0..2 {
                meat[(a, b)] += u[a] * u[b];
            }
        }
    }
    // The derivative of the estimating function is −bread; the signs cancel.
    let inv = bread.inverse().map_err(|_| GeeError::SingularBread)?;
    let cov = inv.matmul(&meat)?.matmul(&inv.transpose())?;
    // Symmetrize away rounding.
    Ok(Matrix::from_fn(2, 2, |a, b| (cov[(a, b)] + cov[(b, a)]) * T::lit(0.5)))
}

fn solve<T: Real>(data: &[ClusterObs<T>], kind: GeeKind, opts: &GeeOptions) -> Result<GeeFit<T>, GeeError> {
    validate(data, kind)?;
    // Start from the pooled arm means.
    let mut sums = [T::zero(); 2];
    let mut counts = [0usize; 2];
    for c in data {
        sums[c.arm()] += c.y.iter().copied().sum::<T>();
        counts[c.arm()] += c.y.len();
    }
    let m0 = sums[0] / T::from_count(counts[0]);
    let m1 = sums[1] / T::from_count(counts[1]);
    let mut beta = [m0, m1 - m0];
    let mut w = Working { phi: T::one(), alpha: T::zero() };
    let mut converged = false;
    let mut iterations = 0;
    // The (β, α) fixed point can cycle when α sits near its lower bound;
    // the α step is halved each time its direction flips.
    let mut damping = T::one();
    let mut last_step = T::zero();
    for it in 1..=opts.max_iter.max(1) {
        iterations = it;
        let (units, bread) = contributions(data, kind, &beta, &w, opts);
        let u = units.iter().fold([T::zero(); 2], |acc, x| [acc[0] + x[0], acc[1] + x[1]]);
        let delta = bread.inverse().map_err(|_| GeeError::SingularBread)?.matvec(&u)?;
        beta = [beta[0] + delta[0], beta[1] + delta[1]];
        let (phi, target) = moments(data, &beta, opts.working);
        let alpha_step = target - w.alpha;
        if alpha_step * last_step < T::zero() {
            damping = (damping * T::lit(0.5)).max(T::lit(1.0 / 64.0));
        }
        last_step = alpha_step;
        let alpha = w.alpha + damping * alpha_step;
        let alpha_shift = alpha_step.abs();
        w = Working { phi, alpha };
        let step = delta[0].abs().max(delta[1].abs());
        if step < T::lit(opts.tol) && alpha_shift < T::lit(opts.tol.sqrt()) {
            converged = true;
            break;
        }
    }
    let (units, bread) = contributions(data, kind, &beta, &w, opts);
    let covariance = sandwich(&units, &bread)?;
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("did not converge in {} iterations", opts.max_iter));
    }
    if data.len() < 10 {
        warnings.push(format!("only {} clusters; sandwich covariance is unreliable", data.len()));
    }
    let mu = arm_means(&beta);
    if mu.iter().any(|&m| m < T::zero() || m > T::one()) {
        warnings.push("fitted arm mean outside [0, 1]".into());
    }
    for msg in &warnings {
        log::warn!("{msg}");
    }
    Ok(GeeFit {
        kind,
        beta,
        covariance,
        converged,
        iterations,
        working: opts.working,
        alpha: w.alpha,
        phi: w.phi,
        clusters: data.len(),
        observations: data.iter().map(|c| c.y.len()).sum(),
        warnings,
    })
}

/// Difference of pooled arm means with a cluster-robust covariance, i.e.
/// `Σ D_iᵀ (Y_i − μ_i) = 0`.
pub fn crude_estimate<T: Real>(data: &[ClusterObs<T>]) -> Result<GeeFit<T>, GeeError> {
    solve(data, GeeKind::Crude, &GeeOptions::default())
}

/// Solves `Σ D_iᵀ V_i⁻¹ (Y_i − μ_i) = 0`.
pub fn solve_classical_gee<T: Real>(data: &[ClusterObs<T>], opts: &GeeOptions) -> Result<GeeFit<T>, GeeError> {
    solve(data, GeeKind::Classical, opts)
}

/// Solves the augmented estimating equation
/// `Σ_i D_iᵀ V_i⁻¹ G_i (Y_i − B_i(A_i)) + Σ_i Σ_a D_i(a)ᵀ V_i(a)⁻¹ (B_i(a) − μ_i(a)) = 0`.
pub fn solve_augmented_gee<T: Real>(data: &[ClusterObs<T>], opts: &GeeOptions) -> Result<GeeFit<T>, GeeError> {
    solve(data, GeeKind::Augmented, opts)
}

/// The summed estimating function at `beta` using the fit's working
/// parameters.
pub fn estimating_function<T: Real>(
    data: &[ClusterObs<T>],
    fit: &GeeFit<T>,
    beta: &[T; 2],
    opts: &GeeOptions,
) -> [T; 2] {
    let w = Working { phi: fit.phi, alpha: fit.alpha };
    let (units, _) = contributions(data, fit.kind, beta, &w, opts);
    units.iter().fold([T::zero(); 2], |acc, x| [acc[0] + x[0], acc[1] + x[1]])
}

/// Recomputes `bread⁻¹ · meat · bread⁻ᵀ` at the fitted coefficients.
pub fn sandwich_covariance<T: Real>(
    fit: &GeeFit<T>,
    data: &[ClusterObs<T>],
    opts: &GeeOptions,
) -> Result<Matrix<T>, GeeError> {
    validate(data, fit.kind)?;
    let w = Working { phi: fit.phi, alpha: fit.alpha };
    let (units, bread) = contributions(data, fit.kind, &fit.beta, &w, opts);
    sandwich(&units, &bread)
}
