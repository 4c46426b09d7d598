//! Bayes classification of point patterns over per-class point-process models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{fit_iid_cluster, FitOptions};
use crate::math::{argmax, normalize_log_weights};
use crate::models::{nb_log_likelihood, PointProcessModel};
use crate::pattern::{LabeledPattern, PointPattern};

/// Which likelihood scores a pattern under a class model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// Full point-process density (cardinality and features).
    #[default]
    PointProcess,
    /// Product of feature densities only.
    NaiveBayes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    #[default]
    Uniform,
    /// Class frequencies in the training data.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    prior: Vec<f64>,
    class_models: Vec<PointProcessModel>,
    mode: LikelihoodMode,
}

/// Class posterior for one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub probs: Vec<f64>,
    /// Set when every class likelihood was zero and the uniform fallback was used.
    pub degenerate: bool,
}

impl Classifier {
    pub fn new(prior: Vec<f64>, class_models: Vec<PointProcessModel>, mode: LikelihoodMode) -> Result<Self> {
        let c = Self {
            prior,
            class_models,
            mode,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_models.is_empty() || self.prior.len() != self.class_models.len() {
            return Err(Error::InvalidParameter(
                "classifier needs one prior weight per class model".into(),
            ));
        }
        if self.prior.iter().any(|p| !p.is_finite() || *p < 0.0) || (self.prior.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidParameter("class prior is not a simplex".into()));
        }
        let d = self.class_models[0].dim();
        for m in &self.class_models {
            m.validate()?;
            if m.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_models.len()
    }

    pub fn dim(&self) -> usize {
        self.class_models[0].dim()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn class_models(&self) -> &[PointProcessModel] {
        &self.class_models
    }

    pub fn mode(&self) -> LikelihoodMode {
        self.mode
    }

    pub fn with_mode(mut self, mode: LikelihoodMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_prior(mut self, prior: Vec<f64>) -> Result<Self> {
        self.prior = prior;
        self.validate()?;
        Ok(self)
    }

    /// Log-likelihood of `x` under class `k` in the active mode.
    pub fn class_log_likelihood(&self, k: usize, x: &PointPattern) -> Result<f64> {
        let m = &self.class_models[k];
        match self.mode {
            LikelihoodMode::PointProcess => m.log_density(x),
            LikelihoodMode::NaiveBayes => nb_log_likelihood(&m.feat, x),
        }
    }

    pub fn posterior(&self, x: &PointPattern) -> Result<Posterior> {
        x.check_dim(self.dim())?;
        let scores = (0..self.num_classes())
            .map(|k| Ok(self.prior[k].ln() + self.class_log_likelihood(k, x)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(posterior_from_scores(&scores))
    }

    /// Mode of the class posterior; ties go to the smallest label.
    pub fn predict(&self, x: &PointPattern) -> Result<usize> {
        Ok(argmax(&self.posterior(x)?.probs))
    }

    pub fn posterior_batch(&self, xs: &[PointPattern]) -> Result<Vec<Posterior>> {
        xs.par_iter().map(|x| self.posterior(x)).collect()
    }

    pub fn predict_batch(&self, xs: &[PointPattern]) -> Result<Vec<usize>> {
        Ok(self.posterior_batch(xs)?.iter().map(|p| argmax(&p.probs)).collect())
    }
}

/// Softmax of per-class log scores (log prior + log likelihood).
pub fn posterior_from_scores(scores: &[f64]) -> Posterior {
    let (probs, lse) = normalize_log_weights(scores);
    Posterior {
        probs,
        degenerate: !lse.is_finite(),
    }
}

/// Empirical class frequencies `p(y = k) = #{n : y_n = k} / N`.
pub fn empirical_prior(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_classes];
    for &y in labels {
        counts[y] += 1.0;
    }
    let n = labels.len() as f64;
    counts.into_iter().map(|c| c / n).collect()
}

/// Fits one IID-cluster model per class with the separated MLE.
pub fn train_classifier(
    data: &[LabeledPattern],
    opts: &FitOptions,
    prior_mode: PriorMode,
    mode: LikelihoodMode,
) -> Result<Classifier> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let k = data.iter().map(|lp| lp.label).max().unwrap_or(0) + 1;
    let mut per_class: Vec<Vec<PointPattern>> = vec![Vec::new(); k];
    for lp in data {
        per_class[lp.label].push(lp.pattern.clone());
    }
    if let Some(empty) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(empty));
    }
    let models = per_class
        .par_iter()
        .map(|pats| fit_iid_cluster(pats, opts))
        .collect::<Result<Vec<_>>>()?;
    let prior = match prior_mode {
        PriorMode::Uniform => vec![1.0 / k as f64; k],
        PriorMode::Empirical => {
            let labels: Vec<usize> = data.iter().map(|lp| lp.label).collect();
            empirical_prior(&labels, k)
        }
    };
    Classifier::new(prior, models, mode)
}

pub fn posterior(c: &Classifier, x: &PointPattern) -> Result<Posterior> {
    c.posterior(x)
}

pub fn predict(c: &Classifier, x: &PointPattern) -> Result<usize> {
    c.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CardinalityDist, FeatureDensity, Gaussian};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poisson_model(rate: f64, mean: &[f64], var: f64) -> PointProcessModel {
        PointProcessModel::new(
            CardinalityDist::poisson(rate).unwrap(),
            FeatureDensity::Gaussian(Gaussian::isotropic(mean, var).unwrap()),
            1.0,
        )
        .unwrap()
    }

    fn sample_labeled(models: &[PointProcessModel], per_class: usize, seed: u64) -> Vec<LabeledPattern> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (label, m) in models.iter().enumerate() {
            for _ in 0..per_class {
                out.push(LabeledPattern {
                    pattern: m.sample(&mut rng),
                    label,
                });
            }
        }
        out
    }

    #[test]
    fn priors() {
        let models = [poisson_model(5.0, &[0.0], 1.0), poisson_model(9.0, &[0.0], 1.0)];
        let data = sample_labeled(&models, 10, 1);
        let c = train_classifier(
            &data,
            &FitOptions::default(),
            PriorMode::Empirical,
            LikelihoodMode::PointProcess,
        )
        .unwrap();
        assert_eq!(c.prior(), &[0.5, 0.5]);

        let p = empirical_prior(&[0, 0, 1], 2);
        assert_relative_eq!(p[0], 2.0 / 3.0);
        assert_relative_eq!(p[1], 1.0 / 3.0);
    }

    #[test]
    fn fitted_rates_are_class_mean_cardinalities() {
        let models = [poisson_model(5.0, &[0.0], 1.0), poisson_model(9.0, &[3.0], 1.0)];
        let data = sample_labeled(&models, 40, 2);
        let c = train_classifier(
            &data,
            &FitOptions::default(),
            PriorMode::Uniform,
            LikelihoodMode::PointProcess,
        )
        .unwrap();
        for k in 0..2 {
            let cards: Vec<f64> = data
                .iter()
                .filter(|d| d.label == k)
                .map(|d| d.pattern.cardinality() as f64)
                .collect();
            let mean = cards.iter().sum::<f64>() / cards.len() as f64;
            assert_eq!(c.class_models()[k].card, CardinalityDist::Poisson { rate: mean });
        }
    }

    #[test]
    fn empty_class_is_named() {
        let m = poisson_model(6.0, &[0.0], 1.0);
        let mut data = sample_labeled(&[m], 5, 3);
        data[0].label = 2;
        let err = train_classifier(
            &data,
            &FitOptions::default(),
            PriorMode::Uniform,
            LikelihoodMode::PointProcess,
        )
        .unwrap_err();
        assert_eq!(err, Error::EmptyClass(1));
    }

    #[test]
    fn posterior_edge_cases() {
        let m = poisson_model(4.0, &[0.0], 1.0);
        let x = PointPattern::from_flat(1, vec![0.1, 0.2]).unwrap();
        let single = Classifier::new(vec![1.0], vec![m.clone()], LikelihoodMode::PointProcess).unwrap();
        assert_eq!(single.posterior(&x).unwrap().probs, vec![1.0]);

        let twin = Classifier::new(vec![0.5, 0.5], vec![m.clone(), m.clone()], LikelihoodMode::PointProcess).unwrap();
        let p = twin.posterior(&x).unwrap();
        assert_eq!(p.probs, vec![0.5, 0.5]);
        assert_eq!(twin.predict(&x).unwrap(), 0);

        let p = posterior_from_scores(&[0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()]);
        assert_eq!(argmax(&p.probs), 1);

        let p = posterior_from_scores(&[f64::NEG_INFINITY, f64::NEG_INFINITY]);
        assert!(p.degenerate);
        assert_eq!(p.probs, vec![0.5, 0.5]);

        assert!(twin.posterior(&PointPattern::empty(2).unwrap()).is_err());
    }

    #[test]
    fn cardinality_separates_overlapping_features() {
        let models = [
            poisson_model(10.0, &[0.0, 0.0], 1.0),
            poisson_model(40.0, &[0.0, 0.0], 1.0),
            poisson_model(90.0, &[0.0, 0.0], 1.0),
        ];
        let train = sample_labeled(&models, 50, 4);
        let c = train_classifier(
            &train,
            &FitOptions::default(),
            PriorMode::Uniform,
            LikelihoodMode::PointProcess,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = loop {
            let x = models[1].sample(&mut rng);
            if (35..=45).contains(&x.cardinality()) {
                break x;
            }
        };
        let p = c.posterior(&x).unwrap();
        assert!(p.probs[1] > 0.99, "{:?}", p.probs);
    }

    #[test]
    fn training_accuracy_on_separated_features() {
        let models = [
            poisson_model(20.0, &[0.0, 0.0], 1.0),
            poisson_model(22.0, &[8.0, 0.0], 1.0),
            poisson_model(24.0, &[0.0, 8.0], 1.0),
        ];
        let train = sample_labeled(&models, 60, 6);
        let c = train_classifier(
            &train,
            &FitOptions::default(),
            PriorMode::Uniform,
            LikelihoodMode::PointProcess,
        )
        .unwrap();
        let pats: Vec<PointPattern> = train.iter().map(|t| t.pattern.clone()).collect();
        let pred = c.predict_batch(&pats).unwrap();
        let correct = pred.iter().zip(&train).filter(|(p, t)| **p == t.label).count();
        assert!(correct as f64 / train.len() as f64 >= 0.95);
    }

    #[test]
    fn predict_is_invariant_to_shared_unit() {
        let a = poisson_model(5.0, &[0.0], 1.0);
        let b = poisson_model(8.0, &[1.0], 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = Classifier::new(vec![0.5, 0.5], vec![a.clone(), b.clone()], LikelihoodMode::PointProcess).unwrap();
        for u in [0.01, 3.0, 250.0] {
            let mut au = a.clone();
            let mut bu = b.clone();
            au.unit_u = u;
            bu.unit_u = u;
            let c = Classifier::new(vec![0.5, 0.5], vec![au, bu], LikelihoodMode::PointProcess).unwrap();
            for _ in 0..20 {
                let x = b.sample(&mut rng);
                let p0 = base.posterior(&x).unwrap().probs;
                let p1 = c.posterior(&x).unwrap().probs;
                assert_relative_eq!(p0[0], p1[0], epsilon = 1e-12);
                assert_eq!(base.predict(&x).unwrap(), c.predict(&x).unwrap());
            }
        }
    }

    #[test]
    fn identical_features_means_cardinality_decides() {
        let g = FeatureDensity::Gaussian(Gaussian::isotropic(&[0.0], 1.0).unwrap());
        let a = PointProcessModel::new(CardinalityDist::poisson(3.0).unwrap(), g.clone(), 1.0).unwrap();
        let b = PointProcessModel::new(CardinalityDist::poisson(12.0).unwrap(), g, 1.0).unwrap();
        let c = Classifier::new(vec![0.5, 0.5], vec![a, b], LikelihoodMode::PointProcess).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for n in 0..20usize {
            let x1 = PointPattern::from_flat(1, vec![0.0; n]).unwrap();
            let x2 = PointPattern::from_flat(1, (0..n).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
            assert_eq!(c.predict(&x1).unwrap(), c.predict(&x2).unwrap());
        }
    }

    proptest::proptest! {
        #[test]
        fn posterior_ignores_common_shift(
            scores in proptest::collection::vec(-50.0f64..50.0, 1..6),
            shift in -1e3f64..1e3,
        ) {
            let a = posterior_from_scores(&scores);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let b = posterior_from_scores(&shifted);
            proptest::prop_assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.probs.iter().zip(&b.probs) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
