//! Simulation configs and the built-in synthetic scenarios.
//!
//! Built-in parameter values are hand-designed to produce the separation and
//! overlap structure each scenario is named for; they are not calibrated to
//! any external data.

use serde::{Deserialize, Serialize};
use setproc::models::{CardinalityDist, FeatureDensity, Gaussian, PointProcessModel};
use setproc::rng;
use setproc::{Error, LabeledPattern, Result};

/// One generating point process and how many patterns to draw from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: usize,
    pub count: usize,
    pub model: PointProcessModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub dim: usize,
    pub classes: Vec<ClassSpec>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Empty("scenario classes"));
        }
        for c in &self.classes {
            c.model.validate()?;
            if c.model.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: c.model.dim(),
                });
            }
        }
        Ok(())
    }

    /// Overrides the per-class counts: one value for every class, or one per class.
    pub fn with_counts(mut self, counts: &[usize]) -> Result<Self> {
        match counts.len() {
            0 => {}
            1 => self.classes.iter_mut().for_each(|c| c.count = counts[0]),
            n if n == self.classes.len() => {
                for (c, &k) in self.classes.iter_mut().zip(counts) {
                    c.count = k;
                }
            }
            n => {
                return Err(Error::LengthMismatch {
                    left: self.classes.len(),
                    right: n,
                })
            }
        }
        Ok(self)
    }

    /// Draws every class in order; class `i` uses stream `i` of `seed`.
    pub fn simulate(&self, seed: u64) -> Result<Vec<LabeledPattern>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.classes.iter().map(|c| c.count).sum());
        for (i, c) in self.classes.iter().enumerate() {
            let mut r = rng::stream(seed, i as u64);
            for _ in 0..c.count {
                out.push(LabeledPattern {
                    pattern: c.model.sample(&mut r),
                    label: c.label,
                });
            }
        }
        Ok(out)
    }
}

fn poisson_gaussian(rate: f64, mean: [f64; 2], var: f64) -> PointProcessModel {
    PointProcessModel::new(
        CardinalityDist::poisson(rate).expect("positive rate"),
        FeatureDensity::Gaussian(Gaussian::isotropic(&mean, var).expect("positive variance")),
        1.0,
    )
    .expect("valid built-in model")
}

fn class(label: usize, count: usize, model: PointProcessModel) -> ClassSpec {
    ClassSpec { label, count, model }
}

pub const BUILTIN_NAMES: [&str; 6] = ["cls-a", "cls-b", "cls-c", "nov-a", "nov-b", "nov-c"];

/// Normal data shared by the novelty scenarios.
pub fn novelty_normal_model() -> PointProcessModel {
    poisson_gaussian(40.0, [0.0, 0.0], 25.0)
}

/// Built-in scenario by name.
///
/// - `cls-a`: three classes apart in feature space, similar rates.
/// - `cls-b`: one shared feature density, rates 10, 40 and 90.
/// - `cls-c`: class 0 apart in features but matching class 1 in rate;
///   classes 1 and 2 share features and differ in rate.
/// - `nov-*`: label 0 is normal (rate 40, wide Gaussian), label 1 novel.
///   `nov-a` novelties sit far away in feature space with the normal rate;
///   `nov-b` novelties overlap in feature and come with very low or very high
///   cardinality; `nov-c` keeps only the low-cardinality ones.
pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    let classes = match name {
        "cls-a" => vec![
            class(0, 200, poisson_gaussian(20.0, [0.0, 0.0], 1.0)),
            class(1, 200, poisson_gaussian(22.0, [4.0, 0.0], 1.0)),
            class(2, 200, poisson_gaussian(25.0, [0.0, 4.0], 1.0)),
        ],
        "cls-b" => vec![
            class(0, 200, poisson_gaussian(10.0, [0.0, 0.0], 1.0)),
            class(1, 200, poisson_gaussian(40.0, [0.0, 0.0], 1.0)),
            class(2, 200, poisson_gaussian(90.0, [0.0, 0.0], 1.0)),
        ],
        "cls-c" => vec![
            class(0, 200, poisson_gaussian(20.0, [5.0, 5.0], 1.0)),
            class(1, 200, poisson_gaussian(20.0, [0.0, 0.0], 1.0)),
            class(2, 200, poisson_gaussian(60.0, [0.0, 0.0], 1.0)),
        ],
        "nov-a" => vec![
            class(0, 100, novelty_normal_model()),
            class(1, 100, poisson_gaussian(40.0, [35.0, 0.0], 25.0)),
        ],
        "nov-b" => vec![
            class(0, 100, novelty_normal_model()),
            class(1, 50, poisson_gaussian(3.0, [4.0, 0.0], 25.0)),
            class(1, 50, poisson_gaussian(100.0, [4.0, 0.0], 25.0)),
        ],
        "nov-c" => vec![
            class(0, 100, novelty_normal_model()),
            class(1, 100, poisson_gaussian(3.0, [4.0, 0.0], 25.0)),
        ],
        _ => return None,
    };
    Some(ScenarioConfig {
        name: name.to_string(),
        dim: 2,
        classes,
    })
}
