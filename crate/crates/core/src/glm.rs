//! Nuisance-model regressions: linear-probability outcome models, logistic
//! propensity models, and bidirectional stepwise covariate selection.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::linalg::{AliasingQr, LinalgError, Matrix};
use crate::scalar::{expit, Real};

pub const INTERCEPT: &str = "(Intercept)";

/// Relative tolerance for declaring a design column aliased.
const ALIAS_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{rows} rows cannot identify {cols} coefficients")]
    TooFewRows { rows: usize, cols: usize },
    #[error("response must be 0/1 for a logistic fit (row {0})")]
    NotBinary(usize),
    #[error("response has a single class; the logistic fit is not identified")]
    SingleClass,
    #[error("complete or quasi-complete separation detected; remove covariates {0:?}")]
    Separation(Vec<String>),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("duplicate column {0}")]
    DuplicateColumn(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Named, equal-length covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns<T> {
    rows: usize,
    names: Vec<String>,
    data: Vec<Vec<T>>,
}

impl<T: Real> Columns<T> {
    pub fn new(rows: usize) -> Self {
        Self { rows, names: Vec::new(), data: Vec::new() }
    }

    pub fn push(&mut self, name: &str, values: Vec<T>) -> Result<(), RegressionError> {
        if values.len() != self.rows {
            return Err(RegressionError::Dimension(format!(
                "column {name} has {} rows, expected {}",
                values.len(),
                self.rows
            )));
        }
        if self.names.iter().any(|n| n == name) || name == INTERCEPT {
            return Err(RegressionError::DuplicateColumn(name.into()));
        }
        self.names.push(name.into());
        self.data.push(values);
        Ok(())
    }

    pub fn with(mut self, name: &str, values: Vec<T>) -> Result<Self, RegressionError> {
        self.push(name, values)?;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.names.iter().position(|n| n == name).map(|i| self.data[i].as_slice())
    }

    pub fn column(&self, i: usize) -> &[T] {
        &self.data[i]
    }

    /// Columns restricted to `names`, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self, RegressionError> {
        let mut out = Self::new(self.rows);
        for n in names {
            let col = self.get(n).ok_or_else(|| RegressionError::UnknownColumn(n.clone()))?;
            out.push(n, col.to_vec())?;
        }
        Ok(out)
    }

    /// Rows whose mask entry is true.
    pub fn filter_rows(&self, mask: &[bool]) -> Self {
        let keep: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        Self {
            rows: keep.len(),
            names: self.names.clone(),
            data: self.data.iter().map(|c| keep.iter().map(|&i| c[i]).collect()).collect(),
        }
    }

    fn design(&self) -> Matrix<T> {
        Matrix::from_fn(self.rows, self.len() + 1, |r, c| if c == 0 { T::one() } else { self.data[c - 1][r] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefRow {
    pub parameter: String,
    pub estimate: f64,
    pub std_error: f64,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit<T> {
    pub kind: ModelKind,
    /// Intercept first, then the selected covariates.
    pub names: Vec<String>,
    pub coefficients: Vec<T>,
    pub standard_errors: Vec<T>,
    pub fitted: Vec<T>,
    /// Covariates in the model (excluding the intercept).
    pub selected: Vec<String>,
    /// Covariates dropped as aliased.
    pub dropped: Vec<String>,
    pub df_residual: usize,
    /// Residual variance (linear) or 1 (logistic).
    pub dispersion: T,
    /// `n ln(RSS/n) + penalty·k` for linear fits, deviance + penalty·k for logistic.
    pub aic: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> RegressionFit<T> {
    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    /// Predictions (response scale) for new rows.
    pub fn predict(&self, x: &Columns<T>) -> Result<Vec<T>, RegressionError> {
        let cols: Vec<&[T]> = self
            .selected
            .iter()
            .map(|n| x.get(n).ok_or_else(|| RegressionError::UnknownColumn(n.clone())))
            .collect::<Result<_, _>>()?;
        Ok((0..x.rows())
            .map(|r| {
                let eta = cols
                    .iter()
                    .zip(&self.coefficients[1..])
                    .fold(self.coefficients[0], |s, (c, &b)| s + b * c[r]);
                match self.kind {
                    ModelKind::Linear => eta,
                    ModelKind::Logistic => expit(eta),
                }
            })
            .collect())
    }

    /// Coefficient table with t (linear) or Wald z (logistic) statistics.
    pub fn report(&self) -> Vec<CoefRow> {
        let t_dist = (self.kind == ModelKind::Linear && self.df_residual > 0)
            .then(|| StudentsT::new(0.0, 1.0, self.df_residual as f64).ok())
            .flatten();
        let normal = Normal::new(0.0, 1.0).unwrap();
        self.names
            .iter()
            .zip(self.coefficients.iter().zip(&self.standard_errors))
            .map(|(name, (&b, &se))| {
                let (b, se) = (b.as_f64(), se.as_f64());
                let stat = b / se;
                let tail = match &t_dist {
                    Some(t) => t.sf(stat.abs()),
                    None => normal.sf(stat.abs()),
                };
                CoefRow {
                    parameter: name.clone(),
                    estimate: b,
                    std_error: se,
                    statistic: stat,
                    p_value: if stat.is_finite() { 2.0 * tail } else { f64::NAN },
                }
            })
            .collect()
    }
}

/// Splits the design into kept and aliased covariates.
fn alias_check<T: Real>(x: &Columns<T>) -> (Vec<usize>, Vec<String>) {
    let qr = AliasingQr::new(&x.design(), T::lit(ALIAS_TOL));
    let mut kept: Vec<usize> = qr.perm[..qr.rank].iter().filter(|&&c| c > 0).map(|&c| c - 1).collect();
    kept.sort_unstable();
    let dropped = qr.perm[qr.rank..].iter().filter(|&&c| c > 0).map(|&c| x.names[c - 1].clone()).collect();
    (kept, dropped)
}

fn check_rows<T: Real>(x: &Columns<T>, y: &[T]) -> Result<(), RegressionError> {
    if y.len() != x.rows() {
        return Err(RegressionError::Dimension(format!("{} responses for {} rows", y.len(), x.rows())));
    }
    if x.rows() < x.len() + 1 {
        return Err(RegressionError::TooFewRows { rows: x.rows(), cols: x.len() + 1 });
    }
    Ok(())
}

/// Ordinary least squares with an intercept. Aliased columns are dropped with
/// a warning.
pub fn fit_linear<T: Real>(x: &Columns<T>, y: &[T]) -> Result<RegressionFit<T>, RegressionError> {
    fit_linear_penalized(x, y, T::lit(2.0))
}

fn fit_linear_penalized<T: Real>(x: &Columns<T>, y: &[T], penalty: T) -> Result<RegressionFit<T>, RegressionError> {
    check_rows(x, y)?;
    let (kept, dropped) = alias_check(x);
    if !dropped.is_empty() {
        log::warn!("dropping aliased columns {dropped:?}");
    }
    let names: Vec<String> = kept.iter().map(|&i| x.names[i].clone()).collect();
    let sub = x.select(&names)?;
    let design = sub.design();
    let qr = AliasingQr::new(&design, T::lit(ALIAS_TOL));
    let n = x.rows();
    let k = qr.rank;
    let beta_stored = qr.solve(y);
    let mut coefficients = vec![T::zero(); design.cols()];
    for (pos, &col) in qr.perm[..k].iter().enumerate() {
        coefficients[col] = beta_stored[pos];
    }
    let fitted = design.matvec(&coefficients)?;
    let rss: T = y.iter().zip(&fitted).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let df = n - k;
    let sigma2 = if df > 0 { rss / T::from_count(df) } else { T::nan() };
    let unscaled = qr.unscaled_covariance();
    let mut standard_errors = vec![T::zero(); design.cols()];
    for (pos, &col) in qr.perm[..k].iter().enumerate() {
        standard_errors[col] = (unscaled[(pos, pos)] * sigma2).sqrt();
    }
    let yy: T = {
        let mean = y.iter().copied().sum::<T>() / T::from_count(n);
        y.iter().map(|&v| (v - mean) * (v - mean)).sum()
    };
    let nf = T::from_count(n);
    let aic = nf * (floor_rss(rss, yy) / nf).ln() + penalty * T::from_count(k);
    let mut all_names = vec![INTERCEPT.to_string()];
    all_names.extend(names.iter().cloned());
    Ok(RegressionFit {
        kind: ModelKind::Linear,
        names: all_names,
        coefficients,
        standard_errors,
        fitted,
        selected: names,
        dropped,
        df_residual: df,
        dispersion: sigma2,
        aic,
        iterations: 1,
        converged: true,
    })
}

fn floor_rss<T: Real>(rss: T, total_ss: T) -> T {
    rss.max(total_ss * T::lit(1e-14)).max(T::min_positive_value())
}

/// Maximum-likelihood logistic regression by iteratively reweighted least
/// squares with step halving. Converges when the max absolute score is below
/// `1e-8` or after 50 iterations.
pub fn fit_logistic<T: Real>(x: &Columns<T>, y: &[T]) -> Result<RegressionFit<T>, RegressionError> {
    fit_logistic_penalized(x, y, T::lit(2.0))
}

fn fit_logistic_penalized<T: Real>(
    x: &Columns<T>,
    y: &[T],
    penalty: T,
) -> Result<RegressionFit<T>, RegressionError> {
    check_rows(x, y)?;
    if let Some(i) = y.iter().position(|&v| v != T::zero() && v != T::one()) {
        return Err(RegressionError::NotBinary(i));
    }
    let ones = y.iter().filter(|&&v| v == T::one()).count();
    if ones == 0 || ones == y.len() {
        return Err(RegressionError::SingleClass);
    }
    let (kept, dropped) = alias_check(x);
    if !dropped.is_empty() {
        log::warn!("dropping aliased columns {dropped:?}");
    }
    let names: Vec<String> = kept.iter().map(|&i| x.names[i].clone()).collect();
    let design = x.select(&names)?.design();
    let (n, p) = (design.rows(), design.cols());

    let deviance = |beta: &[T]| -> T {
        let eta = design.matvec(beta).expect("conformable");
        eta.iter()
            .zip(y)
            .map(|(&e, &yi)| {
                // -2 log-likelihood, stable for large |eta|.
                let l = if e > T::zero() { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                T::lit(2.0) * (l - yi * e)
            })
            .sum()
    };

    let ybar = T::from_count(ones) / T::from_count(n);
    let mut beta = vec![T::zero(); p];
    beta[0] = (ybar / (T::one() - ybar)).ln();
    let mut dev = deviance(&beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = Matrix::zeros(p, p);
    let tol = T::lit(1e-8);
    for it in 0..=50 {
        let eta = design.matvec(&beta)?;
        let mu: Vec<T> = eta.iter().map(|&e| expit(e)).collect();
        let resid: Vec<T> = y.iter().zip(&mu).map(|(&a, &m)| a - m).collect();
        let score = design.t_matvec(&resid)?;
        info = Matrix::zeros(p, p);
        for r in 0..n {
            let w = mu[r] * (T::one() - mu[r]);
            let row = design.row(r);
            for a in 0..p {
                let wa = w * row[a];
                for b in 0..=a {
                    info[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        iterations = it;
        if score.iter().all(|s| s.abs() < tol) {
            converged = true;
            break;
        }
        if it == 50 {
            break;
        }
        let delta = match info.cholesky_solve(&score) {
            Ok(d) => d,
            Err(_) => break,
        };
        let mut stepsize = T::one();
        let mut next: Vec<T> = beta.iter().zip(&delta).map(|(&b, &d)| b + d).collect();
        let mut next_dev = deviance(&next);
        let mut halvings = 0;
        while !(next_dev <= dev + T::lit(1e-12) * dev.abs().max(T::one())) && halvings < 30 {
            stepsize = stepsize * T::lit(0.5);
            next = beta.iter().zip(&delta).map(|(&b, &d)| b + stepsize * d).collect();
            next_dev = deviance(&next);
            halvings += 1;
        }
        beta = next;
        dev = next_dev;
    }
    let eta = design.matvec(&beta)?;
    let max_eta = eta.iter().fold(T::zero(), |m, e| m.max(e.abs()));
    if !converged || max_eta > T::lit(20.0) {
        return Err(RegressionError::Separation(names));
    }
    let cov = info.inverse()?;
    let standard_errors = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    let fitted = eta.iter().map(|&e| expit(e)).collect();
    let mut all_names = vec![INTERCEPT.to_string()];
    all_names.extend(names.iter().cloned());
    Ok(RegressionFit {
        kind: ModelKind::Logistic,
        names: all_names,
        coefficients: beta,
        standard_errors,
        fitted,
        selected: names,
        dropped,
        df_residual: n - p,
        dispersion: T::one(),
        aic: dev + penalty * T::from_count(p),
        iterations,
        converged,
    })
}

pub fn fit<T: Real>(kind: ModelKind, x: &Columns<T>, y: &[T]) -> Result<RegressionFit<T>, RegressionError> {
    match kind {
        ModelKind::Linear => fit_linear(x, y),
        ModelKind::Logistic => fit_logistic(x, y),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseOptions {
    pub kind: ModelKind,
    #[serde(default)]
    pub criterion: Criterion,
    /// Covariates kept in every candidate model.
    #[serde(default)]
    pub forced: Vec<String>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    100
}

impl StepwiseOptions {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, criterion: Criterion::Aic, forced: Vec::new(), max_steps: default_max_steps() }
    }
}

/// Scores candidate subsets for linear models from one centered Gram matrix.
struct LinearScorer<T> {
    gram: Matrix<T>,
    xty: Vec<T>,
    total_ss: T,
    n: T,
}

impl<T: Real> LinearScorer<T> {
    fn new(x: &Columns<T>, y: &[T]) -> Self {
        let n = x.rows();
        let nf = T::from_count(n);
        let centered: Vec<Vec<T>> = (0..x.len())
            .map(|i| {
                let c = x.column(i);
                let m = c.iter().copied().sum::<T>() / nf;
                c.iter().map(|&v| v - m).collect()
            })
            .collect();
        let ym = y.iter().copied().sum::<T>() / nf;
        let yc: Vec<T> = y.iter().map(|&v| v - ym).collect();
        let p = centered.len();
        let gram = Matrix::from_fn(p, p, |a, b| crate::linalg::dot(&centered[a], &centered[b]));
        let xty = centered.iter().map(|c| crate::linalg::dot(c, &yc)).collect();
        let total_ss = crate::linalg::dot(&yc, &yc);
        Self { gram, xty, total_ss, n: nf }
    }

    /// Criterion value, or `None` when the subset is rank deficient.
    fn score(&self, subset: &[usize], penalty: T) -> Option<T> {
        let k = subset.len();
        let mut l = Matrix::zeros(k, k);
        for j in 0..k {
            let gjj = self.gram[(subset[j], subset[j])];
            let mut d = gjj;
            for m in 0..j {
                d -= l[(j, m)] * l[(j, m)];
            }
            if !(d > T::lit(1e-10) * gjj) || !(gjj > T::zero()) {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..k {
                let mut s = self.gram[(subset[i], subset[j])];
                for m in 0..j {
                    s -= l[(i, m)] * l[(j, m)];
                }
                l[(i, j)] = s / djj;
            }
        }
        // Explained SS = |L^{-1} c|^2.
        let mut z: Vec<T> = subset.iter().map(|&s| self.xty[s]).collect();
        for i in 0..k {
            for m in 0..i {
                let v = l[(i, m)] * z[m];
                z[i] -= v;
            }
            z[i] /= l[(i, i)];
        }
        let explained: T = z.iter().map(|&v| v * v).sum();
        let rss = floor_rss(self.total_ss - explained, self.total_ss);
        Some(self.n * (rss / self.n).ln() + penalty * T::from_count(k + 1))
    }
}

/// Bidirectional stepwise search from the intercept-only (plus forced) model.
/// Each step takes the single addition or removal that lowers the criterion
/// most; ties go to the smaller model and then to the earlier candidate.
pub fn stepwise_select<T: Real>(
    candidates: &Columns<T>,
    y: &[T],
    opts: &StepwiseOptions,
) -> Result<RegressionFit<T>, RegressionError> {
    check_rows(&Columns::<T>::new(candidates.rows()), y)?;
    let penalty = match opts.criterion {
        Criterion::Aic => T::lit(2.0),
        Criterion::Bic => T::from_count(candidates.rows()).ln(),
    };
    let forced: Vec<usize> = opts
        .forced
        .iter()
        .map(|f| {
            candidates
                .names()
                .iter()
                .position(|n| n == f)
                .ok_or_else(|| RegressionError::UnknownColumn(f.clone()))
        })
        .collect::<Result<_, _>>()?;

    let linear = (opts.kind == ModelKind::Linear).then(|| LinearScorer::new(candidates, y));
    let score = |subset: &[usize]| -> Option<T> {
        if subset.len() + 1 > candidates.rows() {
            return None;
        }
        match &linear {
            Some(s) => s.score(subset, penalty),
            None => {
                let names: Vec<String> = subset.iter().map(|&i| candidates.names()[i].clone()).collect();
                let x = candidates.select(&names).ok()?;
                match fit_logistic_penalized(&x, y, penalty) {
                    Ok(f) if f.dropped.is_empty() => Some(f.aic),
                    _ => None,
                }
            }
        }
    };

    let mut current: Vec<usize> = forced.clone();
    current.sort_unstable();
    current.dedup();
    let mut current_score = match score(&current) {
        Some(s) => s,
        None if opts.kind == ModelKind::Logistic && current.is_empty() => {
            return Err(RegressionError::SingleClass);
        }
        None => T::infinity(),
    };
    for _ in 0..opts.max_steps {
        // (score, size, candidate, is_add)
        let mut best: Option<(T, usize, usize)> = None;
        let mut consider = |s: Option<T>, size: usize, cand: usize| {
            if let Some(s) = s {
                let better = match best {
                    None => true,
                    Some((bs, bsize, _)) => s < bs || (s == bs && size < bsize),
                };
                if better {
                    best = Some((s, size, cand));
                }
            }
        };
        for &c in &current {
            if forced.contains(&c) {
                continue;
            }
            let trial: Vec<usize> = current.iter().copied().filter(|&v| v != c).collect();
            consider(score(&trial), trial.len(), c);
        }
        for c in 0..candidates.len() {
            if current.contains(&c) {
                continue;
            }
            let mut trial = current.clone();
            trial.push(c);
            trial.sort_unstable();
            consider(score(&trial), trial.len(), c);
        }
        let Some((s, _, c)) = best else { break };
        let margin = T::lit(1e-9) * current_score.abs().max(T::one());
        if !(s < current_score - margin) {
            break;
        }
        if let Some(pos) = current.iter().position(|&v| v == c) {
            current.remove(pos);
        } else {
            current.push(c);
            current.sort_unstable();
        }
        current_score = s;
    }
    let names: Vec<String> = current.iter().map(|&i| candidates.names()[i].clone()).collect();
    let x = candidates.select(&names)?;
    match opts.kind {
        ModelKind::Linear => fit_linear_penalized(&x, y, penalty),
        ModelKind::Logistic => fit_logistic_penalized(&x, y, penalty),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_cols(n: usize, k: usize, seed: u64) -> Columns<f64> {
        let mut r = rng::stream(seed, &[]);
        let mut x = Columns::new(n);
        for i in 0..k {
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
            x.push(&format!("x{}", i + 1), v).unwrap();
        }
        x
    }

    #[test]
    fn exact_linear_fit() {
        let x = Columns::new(5).with("a", vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y: Vec<f64> = (1..=5).map(|v| 2.0 + 3.0 * v as f64).collect();
        let f = fit_linear(&x, &y).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((f.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(f.fitted.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn intercept_only_is_mean() {
        let y = [0.0f64, 1.0, 1.0, 0.0, 1.0];
        let f = fit_linear(&Columns::new(5), &y).unwrap();
        assert!((f.coefficients[0] - 0.6).abs() < 1e-15);
        assert_eq!(f.names, vec![INTERCEPT.to_string()]);
    }

    #[test]
    fn linear_matches_normal_equations_and_residuals_orthogonal() {
        let x = normal_cols(50, 3, 1);
        let mut r = rng::stream(2, &[]);
        let y: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        let f = fit_linear(&x, &y).unwrap();
        let d = x.design();
        let ne = d.gram().cholesky_solve(&d.t_matvec(&y).unwrap()).unwrap();
        for (a, b) in f.coefficients.iter().zip(&ne) {
            assert!((a - b).abs() < 1e-10);
        }
        let resid: Vec<f64> = y.iter().zip(&f.fitted).map(|(a, b)| a - b).collect();
        assert!(d.t_matvec(&resid).unwrap().iter().all(|v| v.abs() < 1e-8));
        // SE oracle: sqrt(diag((X'X)^{-1}) sigma^2).
        let inv = d.gram().inverse().unwrap();
        let s2 = resid.iter().map(|v| v * v).sum::<f64>() / 46.0;
        for i in 0..4 {
            assert!((f.standard_errors[i] - (inv[(i, i)] * s2).sqrt()).abs() < 1e-10);
        }
        let rep = f.report();
        assert_eq!(rep.len(), 4);
        assert!(rep.iter().all(|r| (0.0..=1.0).contains(&r.p_value)));
    }

    #[test]
    fn aliased_column_dropped() {
        let x = normal_cols(30, 2, 3);
        let dup = x.get("x1").unwrap().to_vec();
        let x = x.with("x1copy", dup).unwrap();
        let y: Vec<f64> = x.get("x2").unwrap().iter().map(|v| v * 0.5).collect();
        let f = fit_linear(&x, &y).unwrap();
        assert_eq!(f.dropped, vec!["x1copy".to_string()]);
        assert_eq!(f.selected, vec!["x1".to_string(), "x2".to_string()]);
    }

    #[test]
    fn logistic_recovers_generating_coefficients() {
        let n = 100_000;
        let x = normal_cols(n, 1, 4);
        let mut r = rng::stream(5, &[]);
        let (b0, b1) = (-0.7, 1.3);
        let y: Vec<f64> = x
            .get("x1")
            .unwrap()
            .iter()
            .map(|&v| f64::from(r.random::<f64>() < expit(b0 + b1 * v)))
            .collect();
        let f = fit_logistic(&x, &y).unwrap();
        assert!(f.converged);
        assert!((f.coefficients[0] - b0).abs() < 3.0 * f.standard_errors[0]);
        assert!((f.coefficients[1] - b1).abs() < 3.0 * f.standard_errors[1]);
        // Score identity with an intercept.
        let sum_fit: f64 = f.fitted.iter().sum();
        assert!((sum_fit - y.iter().sum::<f64>()).abs() < 1e-6);
        assert!(f.fitted.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn logistic_preconditions() {
        let x = Columns::new(4).with("a", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(fit_logistic(&x, &[1.0; 4]), Err(RegressionError::SingleClass));
        assert_eq!(fit_logistic(&x, &[0.0, 2.0, 1.0, 0.0]), Err(RegressionError::NotBinary(1)));
        let sep = fit_logistic(&x, &[0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(sep, Err(RegressionError::Separation(_))), "{sep:?}");
    }

    #[test]
    fn symmetric_balanced_design_gives_zero_slope() {
        let x = Columns::<f64>::new(4).with("a", vec![-1.0, -1.0, 1.0, 1.0]).unwrap();
        let f = fit_logistic(&x, &[0.0f64, 1.0, 0.0, 1.0]).unwrap();
        assert!(f.coefficients.iter().all(|b| b.abs() < 1e-10));
    }

    #[test]
    fn stepwise_finds_predictive_column() {
        let x = normal_cols(200, 4, 6);
        let y: Vec<f64> = x.get("x3").unwrap().iter().map(|v| 1.0 + 2.0 * v).collect();
        let f = stepwise_select(&x, &y, &StepwiseOptions::new(ModelKind::Linear)).unwrap();
        assert!(f.selected.contains(&"x3".to_string()));
    }

    #[test]
    fn stepwise_keeps_one_copy_of_duplicate() {
        let x = normal_cols(200, 2, 7);
        let dup = x.get("x1").unwrap().to_vec();
        let x = x.with("x1copy", dup).unwrap();
        let mut r = rng::stream(8, &[]);
        let y: Vec<f64> = x.get("x1").unwrap().iter().map(|v| v + 0.1 * r.random::<f64>()).collect();
        let f = stepwise_select(&x, &y, &StepwiseOptions::new(ModelKind::Linear)).unwrap();
        let copies = f.selected.iter().filter(|s| s.starts_with("x1")).count();
        assert_eq!(copies, 1);
    }

    #[test]
    fn stepwise_noise_selects_few() {
        let mut sizes: Vec<usize> = (0..10)
            .map(|rep| {
                let x = normal_cols(1000, 5, 100 + rep);
                let mut r = rng::stream(200 + rep, &[]);
                let y: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut r)).collect();
                let f = stepwise_select(&x, &y, &StepwiseOptions::new(ModelKind::Linear)).unwrap();
                let null = fit_linear(&Columns::new(1000), &y).unwrap();
                assert!(f.aic <= null.aic + 1e-9);
                f.selected.len()
            })
            .collect();
        sizes.sort_unstable();
        assert!(sizes[4] <= 1, "{sizes:?}");
    }

    #[test]
    fn stepwise_matches_direct_refit_aic() {
        let x = normal_cols(120, 5, 9);
        let mut r = rng::stream(10, &[]);
        let y: Vec<f64> = (0..120)
            .map(|i| 0.5 * x.column(0)[i] - 0.3 * x.column(2)[i] + { let e: f64 = StandardNormal.sample(&mut r); e })
            .collect();
        let f = stepwise_select(&x, &y, &StepwiseOptions::new(ModelKind::Linear)).unwrap();
        let direct = fit_linear(&x.select(&f.selected).unwrap(), &y).unwrap();
        assert!((f.aic - direct.aic).abs() < 1e-8);
    }

    #[test]
    fn stepwise_logistic_with_forced_column() {
        let n = 400;
        let x = normal_cols(n, 3, 11);
        let mut r = rng::stream(12, &[]);
        let y: Vec<f64> = x
            .get("x2")
            .unwrap()
            .iter()
            .map(|&v| f64::from(r.random::<f64>() < expit(1.5 * v)))
            .collect();
        let mut opts = StepwiseOptions::new(ModelKind::Logistic);
        opts.forced = vec!["x3".into()];
        let f = stepwise_select(&x, &y, &opts).unwrap();
        assert!(f.selected.contains(&"x3".to_string()));
        assert!(f.selected.contains(&"x2".to_string()));
    }

    #[test]
    fn f32_linear_fit() {
        let x = Columns::<f32>::new(4).with("a", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let f = fit_linear(&x, &[1.0f32, 3.0, 5.0, 7.0]).unwrap();
        assert!((f.coefficients[1] - 2.0).abs() < 1e-5);
    }
}
