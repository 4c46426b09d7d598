//! Dirichlet-process mixture of Poisson point processes with Gaussian
//! features, sampled by collapsed Gibbs over cluster labels.
//!
//! The base measure is a Gamma prior on the Poisson rate times a
//! Normal–inverse-Wishart prior on the feature Gaussian, so both integrate out
//! in closed form. A cluster is summarized by its pattern count, its total
//! cardinality and the centered moments of its pooled features; the
//! predictive density of a pattern is the ratio of cluster marginals with and
//! without it. The unit hyper-volume is fixed to 1 here: `U^|X|` is common to
//! every candidate cluster and cancels from the label conditionals.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::MIN_RATE;
use crate::math::{ln_gamma, ln_multigamma, normalize_log_weights};
use crate::pattern::PointPattern;
use crate::rng;

const LN_2: f64 = std::f64::consts::LN_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log determinant of a symmetric positive-definite row-major `d × d` matrix.
fn log_det_spd(a: &[f64], d: usize) -> Option<f64> {
    let mut l = a.to_vec();
    let mut acc = 0.0;
    for j in 0..d {
        let mut diag = l[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if !(diag > 0.0) {
            return None;
        }
        let diag = diag.sqrt();
        l[j * d + j] = diag;
        acc += diag.ln();
        for i in j + 1..d {
            let mut v = l[i * d + j];
            for k in 0..j {
                v -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = v / diag;
        }
    }
    Some(2.0 * acc)
}

#[derive(Serialize, Deserialize)]
struct HyperRepr {
    eta: f64,
    alpha: f64,
    beta: f64,
    m0: Vec<f64>,
    kappa0: f64,
    nu0: f64,
    psi0: Vec<Vec<f64>>,
}

/// Prior hyperparameters: concentration `eta`, Gamma(`alpha`, `beta`) on the
/// rate, and NIW(`m0`, `kappa0`, `nu0`, `psi0`) on the feature Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperRepr", into = "HyperRepr")]
pub struct DpHyper {
    eta: f64,
    alpha: f64,
    beta: f64,
    m0: Vec<f64>,
    kappa0: f64,
    nu0: f64,
    psi0: Vec<f64>,
    ln_z0: f64,
}

impl TryFrom<HyperRepr> for DpHyper {
    type Error = Error;
    fn try_from(r: HyperRepr) -> Result<Self> {
        DpHyper::new(r.eta, r.alpha, r.beta, r.m0, r.kappa0, r.nu0, &r.psi0)
    }
}

impl From<DpHyper> for HyperRepr {
    fn from(h: DpHyper) -> Self {
        let d = h.m0.len();
        HyperRepr {
            eta: h.eta,
            alpha: h.alpha,
            beta: h.beta,
            psi0: h.psi0.chunks_exact(d).map(<[f64]>::to_vec).collect(),
            m0: h.m0,
            kappa0: h.kappa0,
            nu0: h.nu0,
        }
    }
}

impl DpHyper {
    pub fn new(
        eta: f64,
        alpha: f64,
        beta: f64,
        m0: Vec<f64>,
        kappa0: f64,
        nu0: f64,
        psi0: &[Vec<f64>],
    ) -> Result<Self> {
        let d = m0.len();
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        for (name, v) in [("eta", eta), ("alpha", alpha), ("beta", beta), ("kappa0", kappa0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(nu0.is_finite() && nu0 > d as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!("nu0 must exceed d - 1, got {nu0}")));
        }
        if let Some(i) = m0.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        if psi0.len() != d || psi0.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: psi0.len(),
            });
        }
        let flat: Vec<f64> = psi0.iter().flatten().copied().collect();
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (flat[i * d + j], flat[j * d + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidParameter("psi0 must be symmetric".into()));
                }
            }
        }
        let mut h = Self {
            eta,
            alpha,
            beta,
            m0,
            kappa0,
            nu0,
            psi0: flat,
            ln_z0: 0.0,
        };
        h.ln_z0 = h.ln_z(&ClusterStats::empty(d))?;
        Ok(h)
    }

    /// Weakly informative defaults scaled to the data: `eta = alpha = 1`,
    /// `beta` = 1 / mean cardinality, `m0` and `psi0` the pooled feature mean
    /// and covariance, `kappa0 = 0.01`, `nu0 = d + 2`.
    pub fn from_data(data: &[PointPattern]) -> Result<Self> {
        let first = data.first().ok_or(Error::Empty("clustering data"))?;
        let d = first.dim();
        let mut all = ClusterStats::empty(d);
        for x in data {
            all.merge(&ClusterStats::from_pattern(x)?)?;
        }
        if all.n_feat == 0 {
            return Err(Error::InsufficientPoints {
                what: "features for default hyperparameters",
                needed: 1,
                found: 0,
            });
        }
        let mean_card = (all.total_card as f64 / all.count as f64).max(MIN_RATE);
        let n = all.n_feat as f64;
        let mut cov: Vec<f64> = all.scatter.iter().map(|s| s / n).collect();
        let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
        let ridge = (1e-6 * trace / d as f64).max(1e-9);
        for i in 0..d {
            cov[i * d + i] += ridge;
        }
        let psi0: Vec<Vec<f64>> = cov.chunks_exact(d).map(<[f64]>::to_vec).collect();
        Self::new(1.0, 1.0, 1.0 / mean_card, all.mean.clone(), 0.01, d as f64 + 2.0, &psi0)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.m0.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn m0(&self) -> &[f64] {
        &self.m0
    }

    pub fn kappa0(&self) -> f64 {
        self.kappa0
    }

    pub fn nu0(&self) -> f64 {
        self.nu0
    }

    /// Row-major `psi0`.
    pub fn psi0(&self) -> &[f64] {
        &self.psi0
    }

    /// Posterior NIW parameters `(m, kappa, nu, psi)` after the features in `s`.
    pub fn posterior(&self, s: &ClusterStats) -> (Vec<f64>, f64, f64, Vec<f64>) {
        let d = self.dim();
        let n = s.n_feat as f64;
        let kappa = self.kappa0 + n;
        let nu = self.nu0 + n;
        let mut psi = self.psi0.clone();
        let mut m = self.m0.clone();
        if s.n_feat > 0 {
            let diff: Vec<f64> = s.mean.iter().zip(&self.m0).map(|(a, b)| a - b).collect();
            let c = self.kappa0 * n / kappa;
            for i in 0..d {
                m[i] = (self.kappa0 * self.m0[i] + n * s.mean[i]) / kappa;
                for j in 0..d {
                    psi[i * d + j] += s.scatter[i * d + j] + c * diff[i] * diff[j];
                }
            }
        }
        (m, kappa, nu, psi)
    }

    /// Log NIW normalizing constant at the posterior given `s`.
    fn ln_z(&self, s: &ClusterStats) -> Result<f64> {
        let d = self.dim();
        let df = d as f64;
        let (_, kappa, nu, psi) = self.posterior(s);
        let ld = log_det_spd(&psi, d).ok_or(Error::NotPositiveDefinite)?;
        Ok(nu * df / 2.0 * LN_2 + ln_multigamma(d, nu / 2.0) + df / 2.0 * (LN_2PI - kappa.ln()) - nu / 2.0 * ld)
    }

    /// Log marginal likelihood of every pattern summarized in `s` belonging to one cluster.
    pub fn cluster_log_marginal(&self, s: &ClusterStats) -> Result<f64> {
        Ok(self.card_log_marginal(s) + self.feat_log_marginal(s, self.ln_z(s)?))
    }

    fn card_log_marginal(&self, s: &ClusterStats) -> f64 {
        let a = self.alpha + s.total_card as f64;
        let b = self.beta + s.count as f64;
        self.alpha * self.beta.ln() - ln_gamma(self.alpha) + ln_gamma(a) - a * b.ln()
    }

    fn feat_log_marginal(&self, s: &ClusterStats, ln_z: f64) -> f64 {
        ln_z - self.ln_z0 - (s.n_feat * self.dim()) as f64 / 2.0 * LN_2PI
    }
}

/// Sufficient statistics of a set of patterns: pattern count, total
/// cardinality, and count, mean and scatter of the pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    dim: usize,
    count: usize,
    total_card: usize,
    n_feat: usize,
    mean: Vec<f64>,
    scatter: Vec<f64>,
}

impl ClusterStats {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            total_card: 0,
            n_feat: 0,
            mean: vec![0.0; dim],
            scatter: vec![0.0; dim * dim],
        }
    }

    pub fn from_pattern(x: &PointPattern) -> Result<Self> {
        let d = x.dim();
        let n = x.cardinality();
        let mut s = Self::empty(d);
        s.count = 1;
        s.total_card = n;
        s.n_feat = n;
        if n == 0 {
            return Ok(s);
        }
        for p in x.points() {
            for (m, v) in s.mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        for m in &mut s.mean {
            *m /= n as f64;
        }
        for p in x.points() {
            for i in 0..d {
                let di = p[i] - s.mean[i];
                for j in 0..d {
                    s.scatter[i * d + j] += di * (p[j] - s.mean[j]);
                }
            }
        }
        Ok(s)
    }

    pub fn from_patterns<'a>(dim: usize, xs: impl IntoIterator<Item = &'a PointPattern>) -> Result<Self> {
        let mut s = Self::empty(dim);
        for x in xs {
            x.check_dim(dim)?;
            s.merge(&Self::from_pattern(x)?)?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn total_card(&self) -> usize {
        self.total_card
    }

    pub fn n_feat(&self) -> usize {
        self.n_feat
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major centered scatter `Σ (x - mean)(x - mean)ᵀ`.
    pub fn scatter(&self) -> &[f64] {
        &self.scatter
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// Adds the patterns summarized by `other`.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.check(other)?;
        self.count += other.count;
        self.total_card += other.total_card;
        if other.n_feat == 0 {
            return Ok(());
        }
        if self.n_feat == 0 {
            self.n_feat = other.n_feat;
            self.mean.clone_from(&other.mean);
            self.scatter.clone_from(&other.scatter);
            return Ok(());
        }
        let d = self.dim;
        let (na, nb) = (self.n_feat as f64, other.n_feat as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let c = na * nb / n;
        for i in 0..d {
            for j in 0..d {
                self.scatter[i * d + j] += other.scatter[i * d + j] + c * delta[i] * delta[j];
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.n_feat += other.n_feat;
        Ok(())
    }

    /// Removes patterns previously merged in as `other`.
    pub fn unmerge(&mut self, other: &Self) -> Result<()> {
        self.check(other)?;
        if other.count > self.count || other.total_card > self.total_card || other.n_feat > self.n_feat {
            return Err(Error::InconsistentState("removing more than the cluster holds".into()));
        }
        self.count -= other.count;
        self.total_card -= other.total_card;
        if other.n_feat == 0 {
            return Ok(());
        }
        if other.n_feat == self.n_feat {
            self.n_feat = 0;
            self.mean.fill(0.0);
            self.scatter.fill(0.0);
            return Ok(());
        }
        let d = self.dim;
        let n = self.n_feat as f64;
        let nb = other.n_feat as f64;
        let na = n - nb;
        let mean_a: Vec<f64> = self
            .mean
            .iter()
            .zip(&other.mean)
            .map(|(m, mb)| (n * m - nb * mb) / na)
            .collect();
        let delta: Vec<f64> = other.mean.iter().zip(&mean_a).map(|(b, a)| b - a).collect();
        let c = na * nb / n;
        for i in 0..d {
            for j in 0..d {
                self.scatter[i * d + j] -= other.scatter[i * d + j] + c * delta[i] * delta[j];
            }
        }
        self.mean = mean_a;
        self.n_feat -= other.n_feat;
        Ok(())
    }

    /// Largest absolute difference in any statistic.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let ints = [
            (self.count, other.count),
            (self.total_card, other.total_card),
            (self.n_feat, other.n_feat),
        ];
        let mut worst = ints
            .iter()
            .map(|&(a, b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max);
        for (a, b) in self
            .mean
            .iter()
            .zip(&other.mean)
            .chain(self.scatter.iter().zip(&other.scatter))
        {
            worst = worst.max((a - b).abs());
        }
        worst
    }
}

/// Log predictive density of `x` joining the cluster summarized by `stats`
/// (an empty `stats` gives the density under a fresh cluster).
pub fn predictive_loglik(x: &PointPattern, stats: &ClusterStats, h: &DpHyper) -> Result<f64> {
    x.check_dim(h.dim())?;
    let xs = ClusterStats::from_pattern(x)?;
    predictive_from_stats(&xs, stats, h.ln_z(stats)?, h)
}

fn predictive_from_stats(xs: &ClusterStats, stats: &ClusterStats, ln_z_stats: f64, h: &DpHyper) -> Result<f64> {
    let n = xs.total_card as f64;
    let a = h.alpha + stats.total_card as f64;
    let b = h.beta + stats.count as f64;
    let card = ln_gamma(a + n) - ln_gamma(a) + a * b.ln() - (a + n) * (b + 1.0).ln();
    if xs.n_feat == 0 {
        return Ok(card);
    }
    let mut joined = stats.clone();
    joined.merge(xs)?;
    let feat = h.ln_z(&joined)? - ln_z_stats - (xs.n_feat * h.dim()) as f64 / 2.0 * LN_2PI;
    Ok(card + feat)
}

/// Log Polya-urn probability of a partition with the given cluster sizes.
pub fn polya_log_prior(sizes: &[usize], eta: f64) -> f64 {
    let n: usize = sizes.iter().sum();
    let mut acc = ln_gamma(eta) - ln_gamma(eta + n as f64) + sizes.len() as f64 * eta.ln();
    for &s in sizes {
        acc += ln_gamma(s as f64);
    }
    acc
}

/// Relabels by order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Log joint probability of a labeling and the data: Polya-urn prior plus
/// every cluster's marginal likelihood.
pub fn partition_log_score(labels: &[usize], data: &[PointPattern], h: &DpHyper) -> Result<f64> {
    if labels.len() != data.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: data.len(),
        });
    }
    let mut groups: BTreeMap<usize, ClusterStats> = BTreeMap::new();
    for (&l, x) in labels.iter().zip(data) {
        x.check_dim(h.dim())?;
        groups
            .entry(l)
            .or_insert_with(|| ClusterStats::empty(h.dim()))
            .merge(&ClusterStats::from_pattern(x)?)?;
    }
    let sizes: Vec<usize> = groups.values().map(|s| s.count).collect();
    let mut acc = polya_log_prior(&sizes, h.eta);
    for s in groups.values() {
        acc += h.cluster_log_marginal(s)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
struct Cluster {
    stats: ClusterStats,
    ln_z: f64,
}

/// Target of a label draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Existing(usize),
    New,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub choices: Vec<Choice>,
    pub probs: Vec<f64>,
}

/// Cluster labels and per-cluster statistics of a Gibbs chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DpGibbsState {
    labels: Vec<Option<usize>>,
    clusters: BTreeMap<usize, Cluster>,
    pattern_stats: Vec<ClusterStats>,
    next_id: usize,
}

impl DpGibbsState {
    /// All patterns detached; no clusters.
    pub fn detached(data: &[PointPattern], h: &DpHyper) -> Result<Self> {
        let pattern_stats = data
            .iter()
            .map(|x| {
                x.check_dim(h.dim())?;
                ClusterStats::from_pattern(x)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            labels: vec![None; data.len()],
            clusters: BTreeMap::new(),
            pattern_stats,
            next_id: 0,
        })
    }

    pub fn from_labels(labels: &[usize], data: &[PointPattern], h: &DpHyper) -> Result<Self> {
        if labels.len() != data.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: data.len(),
            });
        }
        let mut s = Self::detached(data, h)?;
        let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
        for (n, l) in labels.iter().enumerate() {
            let choice = match ids.get(l) {
                Some(&id) => Choice::Existing(id),
                None => {
                    ids.insert(*l, s.next_id);
                    Choice::New
                }
            };
            s.insert(n, choice, h)?;
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn label(&self, n: usize) -> Option<usize> {
        self.labels[n]
    }

    /// Labels in order of first appearance; detached patterns are an error.
    pub fn labels(&self) -> Result<Vec<usize>> {
        let raw = self
            .labels
            .iter()
            .enumerate()
            .map(|(n, l)| l.ok_or_else(|| Error::InconsistentState(format!("pattern {n} is detached"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(canonical_labels(&raw))
    }

    pub fn cluster_stats(&self, id: usize) -> Option<&ClusterStats> {
        self.clusters.get(&id).map(|c| &c.stats)
    }

    pub fn cluster_ids(&self) -> Vec<usize> {
        self.clusters.keys().copied().collect()
    }

    /// Detaches pattern `n`, deleting its cluster if it empties.
    pub fn remove(&mut self, n: usize, h: &DpHyper) -> Result<()> {
        let id = self.labels[n].ok_or_else(|| Error::InconsistentState(format!("pattern {n} is already detached")))?;
        let cluster = self
            .clusters
            .get_mut(&id)
            .ok_or_else(|| Error::InconsistentState(format!("missing cluster {id}")))?;
        cluster.stats.unmerge(&self.pattern_stats[n])?;
        if cluster.stats.count == 0 {
            self.clusters.remove(&id);
        } else {
            cluster.ln_z = h.ln_z(&cluster.stats)?;
        }
        self.labels[n] = None;
        Ok(())
    }

    /// Attaches detached pattern `n`; returns the cluster id used.
    pub fn insert(&mut self, n: usize, choice: Choice, h: &DpHyper) -> Result<usize> {
        if self.labels[n].is_some() {
            return Err(Error::InconsistentState(format!("pattern {n} is already attached")));
        }
        let id = match choice {
            Choice::Existing(id) => id,
            Choice::New => {
                let id = self.next_id;
                self.next_id += 1;
                self.clusters.insert(
                    id,
                    Cluster {
                        stats: ClusterStats::empty(h.dim()),
                        ln_z: h.ln_z0,
                    },
                );
                id
            }
        };
        let cluster = self
            .clusters
            .get_mut(&id)
            .ok_or_else(|| Error::InconsistentState(format!("missing cluster {id}")))?;
        cluster.stats.merge(&self.pattern_stats[n])?;
        cluster.ln_z = h.ln_z(&cluster.stats)?;
        self.labels[n] = Some(id);
        Ok(id)
    }

    /// Largest deviation between the incremental statistics and ones rebuilt from the labels.
    pub fn rebuild_error(&self) -> Result<f64> {
        let mut rebuilt: BTreeMap<usize, ClusterStats> = BTreeMap::new();
        for (n, l) in self.labels.iter().enumerate() {
            if let Some(id) = l {
                let d = self.pattern_stats[n].dim;
                rebuilt
                    .entry(*id)
                    .or_insert_with(|| ClusterStats::empty(d))
                    .merge(&self.pattern_stats[n])?;
            }
        }
        if rebuilt.len() != self.clusters.len() {
            return Err(Error::InconsistentState("cluster table does not match labels".into()));
        }
        let mut worst: f64 = 0.0;
        for (id, s) in &rebuilt {
            let c = self
                .clusters
                .get(id)
                .ok_or_else(|| Error::InconsistentState(format!("missing cluster {id}")))?;
            worst = worst.max(c.stats.max_abs_diff(s));
        }
        Ok(worst)
    }

    /// Log joint score of the current labeling.
    pub fn log_score(&self, h: &DpHyper) -> f64 {
        let sizes: Vec<usize> = self.clusters.values().map(|c| c.stats.count).collect();
        let mut acc = polya_log_prior(&sizes, h.eta);
        for c in self.clusters.values() {
            acc += h.card_log_marginal(&c.stats) + h.feat_log_marginal(&c.stats, c.ln_z);
        }
        acc
    }
}

/// Unnormalized log-weights of the label of detached pattern `n`: popularity
/// (or `eta` for a new cluster) times the predictive density.
pub fn conditional_log_weights(n: usize, state: &DpGibbsState, h: &DpHyper) -> Result<(Vec<Choice>, Vec<f64>)> {
    if state.labels[n].is_some() {
        return Err(Error::InconsistentState(format!(
            "pattern {n} must be detached before its conditional is formed"
        )));
    }
    let xs = &state.pattern_stats[n];
    let mut choices = Vec::with_capacity(state.clusters.len() + 1);
    let mut log_w = Vec::with_capacity(state.clusters.len() + 1);
    for (&id, c) in &state.clusters {
        choices.push(Choice::Existing(id));
        log_w.push((c.stats.count as f64).ln() + predictive_from_stats(xs, &c.stats, c.ln_z, h)?);
    }
    choices.push(Choice::New);
    log_w.push(h.eta.ln() + predictive_from_stats(xs, &ClusterStats::empty(h.dim()), h.ln_z0, h)?);
    Ok((choices, log_w))
}

pub fn gibbs_conditional(n: usize, state: &DpGibbsState, h: &DpHyper) -> Result<Conditional> {
    let (choices, log_w) = conditional_log_weights(n, state, h)?;
    let (probs, lse) = normalize_log_weights(&log_w);
    if !lse.is_finite() {
        return Err(Error::InconsistentState(format!(
            "pattern {n} has no finite label weight"
        )));
    }
    Ok(Conditional { choices, probs })
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Resamples every label once, in pattern order.
pub fn gibbs_sweep<R: Rng + ?Sized>(state: &mut DpGibbsState, h: &DpHyper, rng: &mut R) -> Result<()> {
    for n in 0..state.len() {
        state.remove(n, h)?;
        let c = gibbs_conditional(n, state, h)?;
        state.insert(n, c.choices[draw(&c.probs, rng)], h)?;
    }
    Ok(())
}

/// Seats patterns one at a time from the urn, each conditioned on those before it.
pub fn sequential_init<R: Rng + ?Sized>(data: &[PointPattern], h: &DpHyper, rng: &mut R) -> Result<DpGibbsState> {
    let mut state = DpGibbsState::detached(data, h)?;
    for n in 0..data.len() {
        let c = gibbs_conditional(n, &state, h)?;
        state.insert(n, c.choices[draw(&c.probs, rng)], h)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpRunOptions {
    pub burnin: usize,
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for DpRunOptions {
    fn default() -> Self {
        Self {
            burnin: 100,
            samples: 100,
            thin: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpRun {
    /// Collected labelings, canonically relabeled.
    pub samples: Vec<Vec<usize>>,
    /// Collected labeling with the highest joint score.
    pub point_estimate: Vec<usize>,
    pub point_estimate_score: f64,
    /// Number of clusters in each collected sample.
    pub cluster_counts: Vec<usize>,
}

pub fn run_dp_clustering(data: &[PointPattern], h: &DpHyper, opts: &DpRunOptions) -> Result<DpRun> {
    if data.is_empty() {
        return Err(Error::Empty("clustering data"));
    }
    if opts.samples == 0 || opts.thin == 0 {
        return Err(Error::InvalidParameter("samples and thin must be at least 1".into()));
    }
    let mut rng = rng::stream(opts.seed, 0);
    let mut state = sequential_init(data, h, &mut rng)?;
    for _ in 0..opts.burnin {
        gibbs_sweep(&mut state, h, &mut rng)?;
    }
    let mut samples = Vec::with_capacity(opts.samples);
    let mut cluster_counts = Vec::with_capacity(opts.samples);
    let mut best: Option<(f64, usize)> = None;
    for i in 0..opts.samples {
        for _ in 0..opts.thin {
            gibbs_sweep(&mut state, h, &mut rng)?;
        }
        let score = state.log_score(h);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, i));
        }
        samples.push(state.labels()?);
        cluster_counts.push(state.num_clusters());
    }
    let (point_estimate_score, idx) = best.ok_or(Error::Empty("collected samples"))?;
    Ok(DpRun {
        point_estimate: samples[idx].clone(),
        point_estimate_score,
        samples,
        cluster_counts,
    })
}
