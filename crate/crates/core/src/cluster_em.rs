//! Finite-mixture clustering of point patterns by EM, with IID-cluster
//! components.
//!
//! The M-step reuses the weighted separated estimators from [`crate::learn`]:
//! pattern `n` contributes to component `k` with weight `r[n][k]`, both through
//! its cardinality and through every one of its features.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{
    fit_cardinality_weighted, fit_feature_weighted, fit_iid_cluster_weighted, weighted_gaussian, CardFamily,
    FeatFamily, FitOptions, GmmOptions, WeightedPoints,
};
use crate::math::{argmax, log_sum_exp, normalize_log_weights};
use crate::models::{CardinalityDist, FeatureDensity, Gaussian, PointProcessModel};
use crate::pattern::PointPattern;
use crate::rng;

/// Column totals below this count as an empty cluster.
pub const EMPTY_CLUSTER_MASS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMixture {
    weights: Vec<f64>,
    components: Vec<PointProcessModel>,
}

impl FiniteMixture {
    pub fn new(weights: Vec<f64>, components: Vec<PointProcessModel>) -> Result<Self> {
        let m = Self { weights, components };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.weights.len() != self.components.len() {
            return Err(Error::InvalidParameter(
                "mixture needs one weight per component and at least one component".into(),
            ));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}")));
        }
        let d = self.components[0].dim();
        for c in &self.components {
            c.validate()?;
            if c.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: c.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[PointProcessModel] {
        &self.components
    }

    /// `log π_k + log f(X | θ_k)` for every component.
    pub fn log_joint(&self, x: &PointPattern) -> Result<Vec<f64>> {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| Ok(w.ln() + c.log_density(x)?))
            .collect()
    }

    pub fn log_density(&self, x: &PointPattern) -> Result<f64> {
        Ok(log_sum_exp(&self.log_joint(x)?))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, PointPattern) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.k() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        (k, self.components[k].sample(rng))
    }
}

/// Row-major `N × K` matrix of cluster-membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    k: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::Empty("responsibility rows"));
        }
        let mut values = Vec::with_capacity(rows.len() * k);
        for r in rows {
            if r.len() != k {
                return Err(Error::LengthMismatch {
                    left: k,
                    right: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Ok(Self { k, values })
    }

    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("need at least one cluster".into()));
        }
        let mut values = vec![0.0; labels.len() * k];
        for (n, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::InvalidParameter(format!("label {l} outside 0..{k}")));
            }
            values[n * k + l] = 1.0;
        }
        Ok(Self { k, values })
    }

    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            k,
            values: vec![1.0 / k as f64; n * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.k..(n + 1) * self.k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.chunks_exact(self.k).map(|r| r[k]).collect()
    }

    pub fn column_totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.k];
        for r in self.values.chunks_exact(self.k) {
            for (acc, v) in t.iter_mut().zip(r) {
                *acc += v;
            }
        }
        t
    }

    /// Mode of each row; ties go to the lower cluster index.
    pub fn labels(&self) -> Vec<usize> {
        self.values.chunks_exact(self.k).map(argmax).collect()
    }

    fn set_one_hot(&mut self, n: usize, k: usize) {
        let kk = self.k;
        let row = &mut self.values[n * kk..(n + 1) * kk];
        row.fill(0.0);
        row[k] = 1.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Relative tolerance on the observed-data log-likelihood increment.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-7,
            restarts: 5,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.restarts == 0 || !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "EM needs max_iters >= 1, restarts >= 1 and tol >= 0".into(),
            ));
        }
        self.fit.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub mixture: FiniteMixture,
    pub responsibilities: Responsibilities,
    pub labels: Vec<usize>,
    /// Observed-data log-likelihood after each E-step.
    pub trace: Vec<f64>,
    /// Restart that produced this fit.
    pub restart: usize,
    /// Number of empty-cluster reseeds performed.
    pub reseeds: usize,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// E-step with the per-pattern log mixture densities.
pub fn e_step_with_loglik(m: &FiniteMixture, data: &[PointPattern]) -> Result<(Responsibilities, Vec<f64>)> {
    let rows: Vec<(Vec<f64>, f64)> = data
        .par_iter()
        .map(|x| {
            let (probs, lse) = normalize_log_weights(&m.log_joint(x)?);
            Ok((probs, lse))
        })
        .collect::<Result<_>>()?;
    let k = m.k();
    let mut values = Vec::with_capacity(data.len() * k);
    let mut loglik = Vec::with_capacity(data.len());
    for (n, (probs, lse)) in rows.into_iter().enumerate() {
        if lse == f64::NEG_INFINITY {
            log::warn!("pattern {n} has zero density under every component; using a uniform row");
        }
        values.extend(probs);
        loglik.push(lse);
    }
    Ok((Responsibilities { k, values }, loglik))
}

pub fn e_step(m: &FiniteMixture, data: &[PointPattern]) -> Result<Responsibilities> {
    Ok(e_step_with_loglik(m, data)?.0)
}

/// Column means of the responsibilities.
pub fn m_step_weights(r: &Responsibilities) -> Vec<f64> {
    let totals = r.column_totals();
    let sum: f64 = totals.iter().sum();
    totals.into_iter().map(|t| t / sum).collect()
}

pub fn m_step_cardinality(
    r: &Responsibilities,
    cards: &[usize],
    family: &CardFamily,
    max_card: Option<usize>,
) -> Result<Vec<CardinalityDist>> {
    if cards.len() != r.len() {
        return Err(Error::LengthMismatch {
            left: cards.len(),
            right: r.len(),
        });
    }
    (0..r.k())
        .into_par_iter()
        .map(|k| fit_cardinality_weighted(cards, &r.column(k), family, max_card))
        .collect()
}

fn check_data(r: &Responsibilities, data: &[PointPattern]) -> Result<usize> {
    if data.len() != r.len() {
        return Err(Error::LengthMismatch {
            left: data.len(),
            right: r.len(),
        });
    }
    Ok(data.first().ok_or(Error::Empty("clustering data"))?.dim())
}

/// Weighted Gaussian feature fit per cluster, each feature weighted by its pattern's responsibility.
pub fn m_step_gaussian(r: &Responsibilities, data: &[PointPattern]) -> Result<Vec<Gaussian>> {
    let d = check_data(r, data)?;
    (0..r.k())
        .into_par_iter()
        .map(|k| weighted_gaussian(&WeightedPoints::from_patterns(d, data, &r.column(k))?))
        .collect()
}

/// Weighted GMM feature fit per cluster, warm-started from `warm[k]` when given.
pub fn m_step_gmm(
    r: &Responsibilities,
    data: &[PointPattern],
    opts: &GmmOptions,
    warm: Option<&[FeatureDensity]>,
    seed: u64,
) -> Result<Vec<FeatureDensity>> {
    let d = check_data(r, data)?;
    let family = FeatFamily::Gmm(opts.clone());
    (0..r.k())
        .into_par_iter()
        .map(|k| {
            let pts = WeightedPoints::from_patterns(d, data, &r.column(k))?;
            fit_feature_weighted(&pts, &family, warm.map(|w| &w[k]), rng::child_seed(seed, k as u64))
        })
        .collect()
}

/// Full M-step. A component whose fit fails numerically keeps its previous
/// parameters, or falls back to `fallback` when there are none.
pub fn m_step(
    r: &Responsibilities,
    data: &[PointPattern],
    fit: &FitOptions,
    max_card: Option<usize>,
    prev: Option<&FiniteMixture>,
    fallback: &PointProcessModel,
    seed: u64,
) -> Result<FiniteMixture> {
    check_data(r, data)?;
    let weights = m_step_weights(r);
    let components = (0..r.k())
        .into_par_iter()
        .map(|k| {
            let warm = prev.map(|p| &p.components[k].feat);
            let opts = FitOptions {
                seed: rng::child_seed(seed, k as u64),
                ..fit.clone()
            };
            match fit_iid_cluster_weighted(data, &r.column(k), &opts, max_card, warm) {
                Ok(m) => Ok(m),
                Err(e) if e.is_numerical() || matches!(e, Error::Empty(_)) => {
                    Ok(prev.map_or_else(|| fallback.clone(), |p| p.components[k].clone()))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    FiniteMixture::new(weights, components)
}

/// Contiguous equal-size groups of patterns sorted by cardinality.
pub fn cardinality_quantile_labels(data: &[PointPattern], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by_key(|&n| (data[n].cardinality(), n));
    let mut labels = vec![0; data.len()];
    for (rank, &n) in order.iter().enumerate() {
        labels[n] = rank * k / data.len();
    }
    labels
}

fn random_labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, 0);
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// Moves every empty cluster onto one of the worst-explained patterns.
fn reseed_empty(r: &mut Responsibilities, loglik: &[f64]) -> usize {
    let totals = r.column_totals();
    let empty: Vec<usize> = (0..r.k()).filter(|&k| totals[k] < EMPTY_CLUSTER_MASS).collect();
    if empty.is_empty() {
        return 0;
    }
    let mut order: Vec<usize> = (0..loglik.len()).collect();
    order.sort_by(|&a, &b| loglik[a].total_cmp(&loglik[b]).then(a.cmp(&b)));
    for (&k, &n) in empty.iter().zip(&order) {
        r.set_one_hot(n, k);
    }
    empty.len()
}

fn validate_input(data: &[PointPattern], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one cluster".into()));
    }
    if data.len() < k {
        return Err(Error::InsufficientPoints {
            what: "EM clustering patterns",
            needed: k,
            found: data.len(),
        });
    }
    let d = data[0].dim();
    for x in data {
        x.check_dim(d)?;
    }
    Ok(d)
}

/// One EM chain from the given initial responsibilities.
pub fn em_from_responsibilities(data: &[PointPattern], init: Responsibilities, opts: &EmOptions) -> Result<EmFit> {
    opts.validate()?;
    let k = init.k();
    validate_input(data, k)?;
    if init.len() != data.len() {
        return Err(Error::LengthMismatch {
            left: data.len(),
            right: init.len(),
        });
    }
    let cards: Vec<usize> = data.iter().map(PointPattern::cardinality).collect();
    let max_card = opts.fit.resolve_max_card(&cards);
    let pooled = fit_iid_cluster_weighted(data, &vec![1.0; data.len()], &opts.fit, max_card, None)?;

    let mut resp = init;
    let mut reseeds = 0;
    let mut mixture = m_step(
        &resp,
        data,
        &opts.fit,
        max_card,
        None,
        &pooled,
        rng::child_seed(opts.seed, 0),
    )?;
    let mut trace: Vec<f64> = Vec::new();
    for iter in 0..opts.max_iters {
        let (r, loglik) = e_step_with_loglik(&mixture, data)?;
        resp = r;
        let ll: f64 = loglik.iter().sum();
        let converged = trace
            .last()
            .is_some_and(|&prev| ll.is_finite() && prev.is_finite() && ll - prev <= opts.tol * prev.abs());
        trace.push(ll);
        if converged || iter + 1 == opts.max_iters {
            break;
        }
        let mut next = resp.clone();
        reseeds += reseed_empty(&mut next, &loglik);
        mixture = m_step(
            &next,
            data,
            &opts.fit,
            max_card,
            Some(&mixture),
            &pooled,
            rng::child_seed(opts.seed, iter as u64 + 1),
        )?;
    }
    let labels = resp.labels();
    Ok(EmFit {
        mixture,
        responsibilities: resp,
        labels,
        trace,
        restart: 0,
        reseeds,
    })
}

/// Best of `opts.restarts` EM chains by final log-likelihood. The first chain
/// starts from cardinality quantile bins, the others from random one-hot labels.
pub fn em_fit(data: &[PointPattern], k: usize, opts: &EmOptions) -> Result<EmFit> {
    opts.validate()?;
    validate_input(data, k)?;
    let fits: Vec<Result<EmFit>> = (0..opts.restarts)
        .into_par_iter()
        .map(|restart| {
            let seed = rng::child_seed(opts.seed, restart as u64);
            let labels = if restart == 0 {
                cardinality_quantile_labels(data, k)
            } else {
                random_labels(data.len(), k, seed)
            };
            let chain = EmOptions { seed, ..opts.clone() };
            let mut fit = em_from_responsibilities(data, Responsibilities::one_hot(&labels, k)?, &chain)?;
            fit.restart = restart;
            Ok(fit)
        })
        .collect();
    let mut best: Option<EmFit> = None;
    for fit in fits {
        let fit = fit?;
        let better = best
            .as_ref()
            .is_none_or(|b| fit.final_log_likelihood() > b.final_log_likelihood());
        if better {
            best = Some(fit);
        }
    }
    best.ok_or(Error::Empty("EM restarts"))
}
