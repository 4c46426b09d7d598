//! Novelty detection for point patterns by thresholding a ranking score.
//!
//! The point-process density is a poor novelty score: its reference measure
//! is not uniform across cardinalities, so a dense pattern of an unlikely size
//! can outrank a typical one. The ranking function replaces the
//! trans-dimensional weight `|X|! U^|X|` by `1/‖p_f‖²` per point, which makes
//! its expectation given `|X| = n` equal to `p_c(n)` and removes the units.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{nb_log_likelihood, PointProcessModel};
use crate::pattern::PointPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// `log p_c(|X|) + Σ [log p_f(x) - log ‖p_f‖²]`.
    #[default]
    Ranking,
    /// The point-process log density.
    Density,
    /// The naive-Bayes product of feature densities.
    NaiveBayes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Normal,
    Novel,
}

#[derive(Serialize, Deserialize)]
struct DetectorRepr {
    model: PointProcessModel,
    mode: RankMode,
    threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DetectorRepr", into = "DetectorRepr")]
pub struct NoveltyDetector {
    model: PointProcessModel,
    log_energy: f64,
    threshold: Option<f64>,
    mode: RankMode,
}

impl TryFrom<DetectorRepr> for NoveltyDetector {
    type Error = Error;
    fn try_from(r: DetectorRepr) -> Result<Self> {
        let mut d = NoveltyDetector::new(r.model, r.mode)?;
        if let Some(t) = r.threshold {
            d.set_threshold(t)?;
        }
        Ok(d)
    }
}

impl From<NoveltyDetector> for DetectorRepr {
    fn from(d: NoveltyDetector) -> Self {
        DetectorRepr {
            model: d.model,
            mode: d.mode,
            threshold: d.threshold,
        }
    }
}

impl NoveltyDetector {
    pub fn new(model: PointProcessModel, mode: RankMode) -> Result<Self> {
        model.validate()?;
        let log_energy = model.feat.log_l2_energy();
        if !log_energy.is_finite() {
            return Err(Error::InvalidParameter(
                "feature density has no finite L2 energy".into(),
            ));
        }
        Ok(Self {
            model,
            log_energy,
            threshold: None,
            mode,
        })
    }

    pub fn model(&self) -> &PointProcessModel {
        &self.model
    }

    pub fn mode(&self) -> RankMode {
        self.mode
    }

    /// Switches the scoring mode; a fitted threshold no longer applies.
    pub fn with_mode(mut self, mode: RankMode) -> Self {
        if mode != self.mode {
            self.threshold = None;
        }
        self.mode = mode;
        self
    }

    pub fn log_energy(&self) -> f64 {
        self.log_energy
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn set_threshold(&mut self, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::InvalidParameter(format!("threshold must be finite, got {t}")));
        }
        self.threshold = Some(t);
        Ok(())
    }

    /// Score of `x` in the active mode; lower means more novel.
    pub fn log_rank(&self, x: &PointPattern) -> Result<f64> {
        match self.mode {
            RankMode::Ranking => {
                let feat = self.model.feat.log_pdf_sum(x)?;
                let n = x.cardinality();
                let lc = self.model.card.log_pmf(n);
                if lc == f64::NEG_INFINITY {
                    return Ok(f64::NEG_INFINITY);
                }
                Ok(lc + feat - n as f64 * self.log_energy)
            }
            RankMode::Density => self.model.log_density(x),
            RankMode::NaiveBayes => nb_log_likelihood(&self.model.feat, x),
        }
    }

    pub fn log_rank_batch(&self, xs: &[PointPattern]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.log_rank(x)).collect()
    }

    /// Sets the threshold to the lower `q`-quantile of the training scores.
    pub fn fit_threshold(&mut self, train: &[PointPattern], q: f64) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Empty("novelty training set"));
        }
        let ranks = self.log_rank_batch(train)?;
        let t = empirical_quantile(&ranks, q)?;
        self.set_threshold(t)?;
        Ok(t)
    }

    /// Novel iff the score falls strictly below the threshold.
    pub fn detect(&self, x: &PointPattern) -> Result<Decision> {
        let t = self.threshold.ok_or(Error::ThresholdNotFitted)?;
        Ok(decide(self.log_rank(x)?, t))
    }
}

/// Boundary rule: a score equal to the threshold is normal.
pub fn decide(log_rank: f64, threshold: f64) -> Decision {
    if log_rank < threshold {
        Decision::Novel
    } else {
        Decision::Normal
    }
}

/// Lower (inverted-CDF) empirical quantile: the `ceil(q n)`-th smallest value.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of no values"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile must lie in (0,1), got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Harmonic mean of precision and recall, with `F1(0, 0) = 0`.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CardinalityDist, FeatureDensity, Gaussian, UniformBox};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn peaked_card() -> CardinalityDist {
        let mut probs = vec![0.2 / 20.0; 21];
        probs[10] = 0.8;
        CardinalityDist::categorical(probs).unwrap()
    }

    fn uniform_model(width: f64) -> PointProcessModel {
        PointProcessModel::new(
            peaked_card(),
            FeatureDensity::UniformBox(UniformBox::new(vec![0.0], vec![width]).unwrap()),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_features_rank_by_cardinality() {
        for width in [20.0, 0.05] {
            let d = NoveltyDetector::new(uniform_model(width), RankMode::Ranking).unwrap();
            let card = peaked_card();
            for n in 0..=20usize {
                let x = PointPattern::from_flat(1, vec![width / 2.0; n]).unwrap();
                assert_relative_eq!(d.log_rank(&x).unwrap(), card.log_pmf(n), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn empty_pattern_ranks_at_cardinality_mass() {
        let d = NoveltyDetector::new(uniform_model(3.0), RankMode::Ranking).unwrap();
        let e = PointPattern::empty(1).unwrap();
        assert_relative_eq!(d.log_rank(&e).unwrap(), (0.01f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn gaussian_per_point_term_at_mean() {
        let m = PointProcessModel::new(
            CardinalityDist::poisson(3.0).unwrap(),
            FeatureDensity::Gaussian(Gaussian::isotropic(&[0.0], 1.0).unwrap()),
            1.0,
        )
        .unwrap();
        let d = NoveltyDetector::new(m.clone(), RankMode::Ranking).unwrap();
        let x = PointPattern::from_flat(1, vec![0.0]).unwrap();
        let per_point = d.log_rank(&x).unwrap() - m.card.log_pmf(1);
        // log(1/sqrt(2π)) - log(1/(2 sqrt(π))) = log(sqrt(2))
        let expected =
            (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln() - (1.0 / (2.0 * std::f64::consts::PI.sqrt())).ln();
        assert_relative_eq!(expected, 2f64.sqrt().ln(), epsilon = 1e-15);
        assert_relative_eq!(per_point, expected, epsilon = 1e-8);
    }

    #[test]
    fn quantile_convention() {
        assert_eq!(empirical_quantile(&[3.0; 7], 0.2).unwrap(), 3.0);
        let v: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.2).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&v, 0.01).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&v, 0.99).unwrap(), 10.0);
        assert!(empirical_quantile(&[], 0.2).is_err());
        assert!(empirical_quantile(&v, 1.0).is_err());
    }

    #[test]
    fn threshold_flags_about_q_of_training() {
        let m = PointProcessModel::new(
            CardinalityDist::poisson(15.0).unwrap(),
            FeatureDensity::Gaussian(Gaussian::isotropic(&[0.0, 0.0], 2.0).unwrap()),
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let train: Vec<PointPattern> = (0..400).map(|_| m.sample(&mut rng)).collect();
        let q = 0.2;
        for mode in [RankMode::Ranking, RankMode::Density, RankMode::NaiveBayes] {
            let mut d = NoveltyDetector::new(m.clone(), mode).unwrap();
            d.fit_threshold(&train, q).unwrap();
            let flagged = train.iter().filter(|x| d.detect(x).unwrap() == Decision::Novel).count();
            let frac = flagged as f64 / train.len() as f64;
            let band = 2.0 / (train.len() as f64).sqrt();
            assert!((frac - q).abs() <= band, "{mode:?}: {frac}");
            assert!(frac <= q);
        }
    }

    #[test]
    fn detect_boundary_and_errors() {
        let mut d = NoveltyDetector::new(uniform_model(1.0), RankMode::Ranking).unwrap();
        let x = PointPattern::from_flat(1, vec![0.5; 10]).unwrap();
        assert_eq!(d.detect(&x), Err(Error::ThresholdNotFitted));
        let r = d.log_rank(&x).unwrap();
        d.set_threshold(r).unwrap();
        assert_eq!(d.detect(&x).unwrap(), Decision::Normal);
        assert!(d.fit_threshold(&[], 0.2).is_err());
    }

    #[test]
    fn most_probable_cardinality_is_normal() {
        let m = uniform_model(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let train: Vec<PointPattern> = (0..300).map(|_| m.sample(&mut rng)).collect();
        let x = PointPattern::from_flat(1, vec![0.5; 10]).unwrap();
        for q in [0.1, 0.2, 0.5, 0.8] {
            let mut d = NoveltyDetector::new(m.clone(), RankMode::Ranking).unwrap();
            d.fit_threshold(&train, q).unwrap();
            assert_eq!(d.detect(&x).unwrap(), Decision::Normal);
        }
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert_eq!(f1(1.0, 1.0), 1.0);
        assert_relative_eq!(f1(0.5, 1.0), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn ranking_is_unit_invariant_and_nb_shifts() {
        let m = PointProcessModel::new(
            CardinalityDist::poisson(6.0).unwrap(),
            FeatureDensity::Gaussian(Gaussian::from_slices(&[1.0, -2.0], &[vec![2.0, 0.3], vec![0.3, 0.5]]).unwrap()),
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for s in [0.01, 0.5, 3.0, 100.0] {
            let ms = m.rescale(s).unwrap();
            let r = NoveltyDetector::new(m.clone(), RankMode::Ranking).unwrap();
            let rs = NoveltyDetector::new(ms.clone(), RankMode::Ranking).unwrap();
            let nb = NoveltyDetector::new(m.clone(), RankMode::NaiveBayes).unwrap();
            let nbs = NoveltyDetector::new(ms, RankMode::NaiveBayes).unwrap();
            for _ in 0..20 {
                let x = m.sample(&mut rng);
                let xs = x.map_coords(|c| c * s).unwrap();
                let a = r.log_rank(&x).unwrap();
                assert!((rs.log_rank(&xs).unwrap() - a).abs() < 1e-9 * a.abs().max(1.0));
                let shift = -(x.cardinality() as f64) * 2.0 * s.ln();
                let b = nb.log_rank(&x).unwrap();
                assert_relative_eq!(nbs.log_rank(&xs).unwrap() - b, shift, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sparse_overlapping_novelty_only_caught_by_ranking() {
        let normal = PointProcessModel::new(
            CardinalityDist::poisson(40.0).unwrap(),
            FeatureDensity::Gaussian(Gaussian::isotropic(&[0.0, 0.0], 25.0).unwrap()),
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let train: Vec<PointPattern> = (0..300).map(|_| normal.sample(&mut rng)).collect();
        let sparse = PointPattern::new(2, &[vec![1.0, -2.0], vec![-3.0, 0.5], vec![2.0, 2.0]]).unwrap();
        let expected = [
            (RankMode::Ranking, Decision::Novel),
            (RankMode::Density, Decision::Normal),
            (RankMode::NaiveBayes, Decision::Normal),
        ];
        for (mode, want) in expected {
            let mut d = NoveltyDetector::new(normal.clone(), mode).unwrap();
            d.fit_threshold(&train, 0.2).unwrap();
            assert_eq!(d.detect(&sparse).unwrap(), want, "{mode:?}");
        }
    }

    #[test]
    fn serde_round_trip_keeps_threshold() {
        let mut d = NoveltyDetector::new(uniform_model(2.0), RankMode::Density).unwrap();
        d.set_threshold(-3.25).unwrap();
        let js = serde_json::to_string(&d).unwrap();
        let back: NoveltyDetector = serde_json::from_str(&js).unwrap();
        assert_eq!(back, d);
    }

    proptest::proptest! {
        #[test]
        fn decisions_ignore_common_shift(r in -1e3f64..1e3, t in -1e3f64..1e3, c in -1e3f64..1e3) {
            // exact when the shift preserves the order of r and t
            let shifted = decide(r + c, t + c);
            if (r + c < t + c) == (r < t) {
                proptest::prop_assert_eq!(shifted, decide(r, t));
            }
        }
    }
}
