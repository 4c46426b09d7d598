//! Maximum-likelihood fitting of IID-cluster and Poisson point-process models.
//!
//! The IID-cluster likelihood of a set of patterns factorizes into a term in
//! the cardinalities and a term in the pooled features, so the two MLEs are
//! computed separately. Every estimator here takes per-pattern weights; the
//! unweighted fits are the all-ones case, and EM clustering reuses the same
//! code with responsibilities as weights.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::normalize_log_weights;
use crate::models::{CardinalityDist, FeatureDensity, Gaussian, GaussianMixture, PointProcessModel};
use crate::pattern::{cmp_points, PointPattern};
use crate::rng;

/// Poisson rates below this are clamped.
pub const MIN_RATE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CardFamily {
    /// Categorical on `0..=max` with Laplace smoothing `laplace`. `max: None`
    /// means the largest training cardinality plus 20% headroom.
    Categorical { max: Option<usize>, laplace: f64 },
    #[default]
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub components: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl GmmOptions {
    pub fn with_components(components: usize) -> Self {
        Self {
            components,
            ..Self::default()
        }
    }
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            components: 3,
            max_iters: 200,
            tol: 1e-8,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FeatFamily {
    #[default]
    Gaussian,
    Gmm(GmmOptions),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub card: CardFamily,
    pub feat: FeatFamily,
    pub seed: u64,
    pub unit_u: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            card: CardFamily::Poisson,
            feat: FeatFamily::Gaussian,
            seed: 0,
            unit_u: 1.0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if let CardFamily::Categorical { laplace, .. } = self.card {
            if !(laplace.is_finite() && laplace >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "laplace smoothing must be >= 0, got {laplace}"
                )));
            }
        }
        if let FeatFamily::Gmm(g) = &self.feat {
            if g.components == 0 || g.restarts == 0 || g.max_iters == 0 || !(g.tol >= 0.0) {
                return Err(Error::InvalidParameter(
                    "gmm needs components, restarts, max_iters >= 1 and tol >= 0".into(),
                ));
            }
        }
        if !(self.unit_u.is_finite() && self.unit_u > 0.0) {
            return Err(Error::InvalidParameter("unit hyper-volume must be positive".into()));
        }
        Ok(())
    }

    /// Categorical support maximum for the given training cardinalities.
    pub fn resolve_max_card(&self, cards: &[usize]) -> Option<usize> {
        match self.card {
            CardFamily::Categorical { max: Some(m), .. } => Some(m),
            CardFamily::Categorical { max: None, .. } => {
                Some(default_max_cardinality(cards.iter().copied().max().unwrap_or(0)))
            }
            CardFamily::Poisson => None,
        }
    }
}

/// Largest observed cardinality plus 20% headroom, rounded up.
pub fn default_max_cardinality(max_observed: usize) -> usize {
    (max_observed * 6).div_ceil(5)
}

/// Categorical cardinality MLE with Laplace smoothing:
/// `ξ_k ∝ ε + #{n : |X_n| = k}` for `k = 0..=max`.
pub fn mle_categorical_card(cards: &[usize], max: usize, laplace: f64) -> Result<CardinalityDist> {
    weighted_categorical_card(cards, &vec![1.0; cards.len()], max, laplace)
}

pub fn weighted_categorical_card(
    cards: &[usize],
    weights: &[f64],
    max: usize,
    laplace: f64,
) -> Result<CardinalityDist> {
    check_lengths(cards.len(), weights.len())?;
    if !(laplace.is_finite() && laplace >= 0.0) {
        return Err(Error::InvalidParameter(format!("laplace must be >= 0, got {laplace}")));
    }
    let mut counts = vec![laplace; max + 1];
    for (&c, &w) in cards.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        if c > max {
            return Err(Error::CardinalityOutOfSupport { cardinality: c, max });
        }
        counts[c] += w;
    }
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Empty("no cardinality mass to normalize"));
    }
    CardinalityDist::categorical(counts.into_iter().map(|c| c / total).collect())
}

/// Poisson rate MLE: the mean cardinality, clamped to [`MIN_RATE`].
pub fn mle_poisson_rate(cards: &[usize]) -> Result<CardinalityDist> {
    if cards.is_empty() {
        return Err(Error::Empty("cardinality list"));
    }
    weighted_poisson_rate(cards, &vec![1.0; cards.len()])
}

pub fn weighted_poisson_rate(cards: &[usize], weights: &[f64]) -> Result<CardinalityDist> {
    check_lengths(cards.len(), weights.len())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&c, &w) in cards.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        num += c as f64 * w;
        den += w;
    }
    if !(den > 0.0) {
        return Err(Error::Empty("no weight for poisson rate"));
    }
    let mut rate = num / den;
    if rate < MIN_RATE {
        log::warn!("mean cardinality {rate} clamped to {MIN_RATE}");
        rate = MIN_RATE;
    }
    CardinalityDist::poisson(rate)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(Error::LengthMismatch { left: a, right: b })
    } else {
        Ok(())
    }
}

/// Pooled features with per-point weights, in a canonical order.
///
/// Points are sorted lexicographically so that every estimator built on top
/// is a function of the weighted multiset alone, bit for bit.
#[derive(Debug, Clone)]
pub struct WeightedPoints {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedPoints {
    /// Pools the points of `patterns`, giving every point of pattern `n`
    /// the weight `weights[n]`. Zero-weight patterns are dropped.
    pub fn from_patterns(dim: usize, patterns: &[PointPattern], weights: &[f64]) -> Result<Self> {
        check_lengths(patterns.len(), weights.len())?;
        let mut items: Vec<(&[f64], f64)> = Vec::new();
        for (p, &w) in patterns.iter().zip(weights) {
            p.check_dim(dim)?;
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParameter(format!("invalid weight {w}")));
            }
            if w > 0.0 {
                items.extend(p.points().map(|x| (x, w)));
            }
        }
        items.sort_by(|a, b| cmp_points(a.0, b.0).then(a.1.total_cmp(&b.1)));
        let mut coords = Vec::with_capacity(items.len() * dim);
        let mut ws = Vec::with_capacity(items.len());
        for (x, w) in items {
            coords.extend_from_slice(x);
            ws.push(w);
        }
        Ok(Self {
            dim,
            coords,
            weights: ws,
        })
    }

    pub fn unweighted(dim: usize, patterns: &[PointPattern]) -> Result<Self> {
        Self::from_patterns(dim, patterns, &vec![1.0; patterns.len()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

/// Weighted mean and biased (divide by total weight) covariance.
fn weighted_moments(pts: &WeightedPoints, extra: Option<&[f64]>) -> (Vec<f64>, Vec<f64>, f64) {
    let d = pts.dim;
    let w_at = |i: usize| pts.weights[i] * extra.map_or(1.0, |e| e[i]);
    let mut total = 0.0;
    let mut mean = vec![0.0; d];
    for i in 0..pts.len() {
        let w = w_at(i);
        if w == 0.0 {
            continue;
        }
        total += w;
        for (m, x) in mean.iter_mut().zip(pts.point(i)) {
            *m += w * x;
        }
    }
    for m in &mut mean {
        *m /= total;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..pts.len() {
        let w = w_at(i);
        if w == 0.0 {
            continue;
        }
        let x = pts.point(i);
        for a in 0..d {
            let da = x[a] - mean[a];
            for b in 0..=a {
                cov[a * d + b] += w * da * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            cov[a * d + b] /= total;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    (mean, cov, total)
}

fn gaussian_from_moments(d: usize, mean: Vec<f64>, cov: Vec<f64>) -> Result<Gaussian> {
    Gaussian::new(DVector::from_vec(mean), DMatrix::from_row_slice(d, d, &cov))
}

/// Weighted Gaussian MLE. Requires total weight of at least `d + 1`.
pub fn weighted_gaussian(pts: &WeightedPoints) -> Result<Gaussian> {
    let d = pts.dim;
    let total = pts.total_weight();
    if pts.is_empty() || total < (d + 1) as f64 {
        return Err(Error::InsufficientPoints {
            what: "gaussian feature fit",
            needed: d + 1,
            found: total.floor() as usize,
        });
    }
    let (mean, cov, _) = weighted_moments(pts, None);
    gaussian_from_moments(d, mean, cov)
}

/// Sample mean and biased sample covariance of a point list.
pub fn mle_gaussian(points: &PointPattern) -> Result<Gaussian> {
    weighted_gaussian(&WeightedPoints::unweighted(points.dim(), std::slice::from_ref(points))?)
}

/// Result of a (weighted) Gaussian-mixture EM run.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Weighted log-likelihood after each E-step of the selected run.
    pub trace: Vec<f64>,
}

impl GmmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Weighted GMM log-likelihood and responsibilities (row-major, `n x J`).
fn gmm_e_step(pts: &WeightedPoints, mix: &GaussianMixture) -> (Vec<f64>, f64) {
    let j = mix.weights().len();
    let mut resp = vec![0.0; pts.len() * j];
    let mut ll = 0.0;
    let mut terms = vec![0.0; j];
    for i in 0..pts.len() {
        let x = pts.point(i);
        for (t, (w, c)) in terms.iter_mut().zip(mix.weights().iter().zip(mix.components())) {
            *t = if *w > 0.0 {
                w.ln() + c.log_pdf(x)
            } else {
                f64::NEG_INFINITY
            };
        }
        let (probs, lse) = normalize_log_weights(&terms);
        resp[i * j..(i + 1) * j].copy_from_slice(&probs);
        ll += pts.weight(i) * lse;
    }
    (resp, ll)
}

/// M-step from responsibilities; components that cannot be estimated fall
/// back to `fallback` (previous parameters or the pooled fit).
fn gmm_m_step(pts: &WeightedPoints, resp: &[f64], j: usize, fallback: &[Gaussian]) -> Result<GaussianMixture> {
    let total = pts.total_weight();
    let mut weights = Vec::with_capacity(j);
    let mut comps = Vec::with_capacity(j);
    let mut col = vec![0.0; pts.len()];
    for k in 0..j {
        for (i, c) in col.iter_mut().enumerate() {
            *c = resp[i * j + k];
        }
        let (mean, cov, nk) = weighted_moments(pts, Some(&col));
        let comp = if nk > 1e-10 * total {
            gaussian_from_moments(pts.dim, mean, cov).ok()
        } else {
            None
        };
        weights.push(nk / total);
        comps.push(comp.unwrap_or_else(|| fallback[k].clone()));
    }
    let s: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= s;
    }
    GaussianMixture::new(weights, comps)
}

fn run_gmm_em(pts: &WeightedPoints, mut mix: GaussianMixture, opts: &GmmOptions) -> Result<GmmFit> {
    let j = mix.weights().len();
    let mut trace = Vec::new();
    for _ in 0..opts.max_iters {
        let (resp, ll) = gmm_e_step(pts, &mix);
        let converged = trace
            .last()
            .is_some_and(|prev: &f64| ll - prev <= opts.tol * prev.abs());
        trace.push(ll);
        if converged {
            break;
        }
        let prev = mix.components().to_vec();
        mix = gmm_m_step(pts, &resp, j, &prev)?;
    }
    Ok(GmmFit { mixture: mix, trace })
}

/// Initial mixture: means picked by weighted D^2 (k-means++) seeding over the
/// points, every component with the pooled covariance and equal weight.
fn seed_mixture<R: Rng + ?Sized>(
    pts: &WeightedPoints,
    pooled: &Gaussian,
    j: usize,
    rng: &mut R,
) -> Result<GaussianMixture> {
    let n = pts.len();
    let d = pts.dim;
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let pick = |scores: &[f64], rng: &mut R| -> usize {
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) {
            return rng.random_range(0..n);
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, s) in scores.iter().enumerate() {
            acc += s;
            if u < acc {
                return i;
            }
        }
        n - 1
    };
    let mut chosen = vec![pick(&pts.weights, rng)];
    let mut dist: Vec<f64> = (0..n).map(|i| sq(pts.point(i), pts.point(chosen[0]))).collect();
    while chosen.len() < j {
        let scores: Vec<f64> = (0..n).map(|i| pts.weights[i] * dist[i]).collect();
        let next = pick(&scores, rng);
        chosen.push(next);
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq(pts.point(i), pts.point(next)));
        }
    }
    let comps = chosen
        .iter()
        .map(|&c| Gaussian::new(DVector::from_column_slice(pts.point(c)), pooled.cov().clone()))
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(comps[0].dim(), d);
    GaussianMixture::new(vec![1.0 / j as f64; j], comps)
}

/// Weighted GMM-EM. With `init`, runs a single warm-started chain; otherwise
/// the best of `opts.restarts` seeded initializations by final
/// log-likelihood. `J = 1` reduces to [`weighted_gaussian`].
pub fn fit_gmm_weighted(
    pts: &WeightedPoints,
    opts: &GmmOptions,
    init: Option<&GaussianMixture>,
    seed: u64,
) -> Result<GmmFit> {
    let j = opts.components;
    let d = pts.dim;
    if j == 0 {
        return Err(Error::InvalidParameter("gmm needs at least one component".into()));
    }
    let needed = j * (d + 1);
    if pts.total_weight() < needed as f64 {
        return Err(Error::InsufficientPoints {
            what: "gaussian mixture fit",
            needed,
            found: pts.total_weight().floor() as usize,
        });
    }
    if j == 1 {
        let g = weighted_gaussian(pts)?;
        let mixture = GaussianMixture::new(vec![1.0], vec![g])?;
        let (_, ll) = gmm_e_step(pts, &mixture);
        return Ok(GmmFit {
            mixture,
            trace: vec![ll],
        });
    }
    let pooled = weighted_gaussian(pts)?;
    if let Some(init) = init {
        if init.weights().len() != j || init.dim() != d {
            return Err(Error::InvalidParameter("warm start does not match gmm options".into()));
        }
        return run_gmm_em(pts, init.clone(), opts);
    }
    let mut best: Option<GmmFit> = None;
    for r in 0..opts.restarts {
        let mut rng = rng::stream(seed, r as u64);
        let start = seed_mixture(pts, &pooled, j, &mut rng)?;
        let fit = run_gmm_em(pts, start, opts)?;
        if best
            .as_ref()
            .is_none_or(|b| fit.final_log_likelihood() > b.final_log_likelihood())
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Unweighted GMM maximum likelihood by EM.
pub fn mle_gmm(points: &PointPattern, opts: &GmmOptions, seed: u64) -> Result<GmmFit> {
    let pts = WeightedPoints::unweighted(points.dim(), std::slice::from_ref(points))?;
    fit_gmm_weighted(&pts, opts, None, seed)
}

/// Weighted feature-density MLE for the family in `opts`.
pub fn fit_feature_weighted(
    pts: &WeightedPoints,
    feat: &FeatFamily,
    warm: Option<&FeatureDensity>,
    seed: u64,
) -> Result<FeatureDensity> {
    match feat {
        FeatFamily::Gaussian => Ok(FeatureDensity::Gaussian(weighted_gaussian(pts)?)),
        FeatFamily::Gmm(g) => {
            let init = match warm {
                Some(FeatureDensity::GaussianMixture(m)) if m.weights().len() == g.components => Some(m),
                _ => None,
            };
            Ok(FeatureDensity::GaussianMixture(
                fit_gmm_weighted(pts, g, init, seed)?.mixture,
            ))
        }
    }
}

/// Weighted cardinality MLE for the family in `opts`.
pub fn fit_cardinality_weighted(
    cards: &[usize],
    weights: &[f64],
    card: &CardFamily,
    max_card: Option<usize>,
) -> Result<CardinalityDist> {
    match card {
        CardFamily::Poisson => weighted_poisson_rate(cards, weights),
        CardFamily::Categorical { laplace, .. } => {
            let max =
                max_card.ok_or_else(|| Error::InvalidParameter("categorical fit needs a support maximum".into()))?;
            weighted_categorical_card(cards, weights, max, *laplace)
        }
    }
}

/// Weighted IID-cluster MLE: cardinality parameters from the weighted
/// cardinalities, feature parameters from the weighted pooled features.
pub fn fit_iid_cluster_weighted(
    data: &[PointPattern],
    weights: &[f64],
    opts: &FitOptions,
    max_card: Option<usize>,
    warm: Option<&FeatureDensity>,
) -> Result<PointProcessModel> {
    opts.validate()?;
    let first = data.first().ok_or(Error::Empty("training data"))?;
    let d = first.dim();
    let cards: Vec<usize> = data.iter().map(PointPattern::cardinality).collect();
    let card = fit_cardinality_weighted(&cards, weights, &opts.card, max_card)?;
    let pts = WeightedPoints::from_patterns(d, data, weights)?;
    let feat = fit_feature_weighted(&pts, &opts.feat, warm, opts.seed)?;
    PointProcessModel::new(card, feat, opts.unit_u)
}

/// IID-cluster MLE from fully observed patterns.
pub fn fit_iid_cluster(data: &[PointPattern], opts: &FitOptions) -> Result<PointProcessModel> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let cards: Vec<usize> = data.iter().map(PointPattern::cardinality).collect();
    let max = opts.resolve_max_card(&cards);
    fit_iid_cluster_weighted(data, &vec![1.0; data.len()], opts, max, None)
}

/// `Σ_n log f(X_n)`.
pub fn total_log_likelihood(model: &PointProcessModel, data: &[PointPattern]) -> Result<f64> {
    data.iter().map(|x| model.log_density(x)).sum()
}
