//! Point patterns ("bags"): finite multisets of d-dimensional feature vectors.

use crate::error::{Error, Result};

/// A finite multiset of points in `R^d`.
///
/// Coordinates are stored row-major in a single buffer. The stored order
/// carries no meaning; duplicates are allowed.
#[derive(Debug, Clone)]
pub struct PointPattern {
    dim: usize,
    coords: Vec<f64>,
}

impl PointPattern {
    /// Builds a pattern from a list of points, validating dimension and finiteness.
    pub fn new(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
            coords.extend_from_slice(p);
        }
        Ok(Self { dim, coords })
    }

    /// Builds a pattern from a flat row-major coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "flat buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i / dim });
        }
        Ok(Self { dim, coords })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::from_flat(dim, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points, counting duplicates.
    pub fn cardinality(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    /// Applies `f` to every coordinate, returning a new pattern.
    pub fn map_coords(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_flat(self.dim, self.coords.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim != dim {
            Err(Error::DimensionMismatch {
                expected: dim,
                found: self.dim,
            })
        } else {
            Ok(())
        }
    }

    fn sorted_points(&self) -> Vec<&[f64]> {
        let mut pts: Vec<&[f64]> = self.points().collect();
        pts.sort_by(|a, b| cmp_points(a, b));
        pts
    }
}

/// Multiset equality: same dimension and the same points with the same multiplicities.
impl PartialEq for PointPattern {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.cardinality() == other.cardinality()
            && self.sorted_points() == other.sorted_points()
    }
}

/// Total lexicographic order on points, used to canonicalize accumulation order.
pub(crate) fn cmp_points(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// The cardinality `|X|` of a pattern.
pub fn cardinality(x: &PointPattern) -> usize {
    x.cardinality()
}

/// Multiset union of patterns. Errors if dimensions differ or the list is empty.
pub fn pool<'a, I>(patterns: I) -> Result<PointPattern>
where
    I: IntoIterator<Item = &'a PointPattern>,
{
    let mut iter = patterns.into_iter();
    let first = iter.next().ok_or(Error::Empty("pool of zero patterns"))?;
    let dim = first.dim;
    let mut coords = first.coords.clone();
    for p in iter {
        p.check_dim(dim)?;
        coords.extend_from_slice(&p.coords);
    }
    Ok(PointPattern { dim, coords })
}

/// A pattern with an attached class or cluster label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPattern {
    pub pattern: PointPattern,
    pub label: usize,
}

/// A collection of patterns of homogeneous dimension, optionally labeled.
#[derive(Debug, Clone)]
pub struct Dataset {
    dim: usize,
    patterns: Vec<PointPattern>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(dim: usize, patterns: Vec<PointPattern>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        for p in &patterns {
            p.check_dim(dim)?;
        }
        Ok(Self {
            dim,
            patterns,
            labels: None,
        })
    }

    pub fn labeled(dim: usize, patterns: Vec<PointPattern>, labels: Vec<usize>) -> Result<Self> {
        if patterns.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: patterns.len(),
                right: labels.len(),
            });
        }
        let mut ds = Self::new(dim, patterns)?;
        ds.labels = Some(labels);
        Ok(ds)
    }

    pub fn from_labeled(dim: usize, items: Vec<LabeledPattern>) -> Result<Self> {
        let (patterns, labels) = items.into_iter().map(|lp| (lp.pattern, lp.label)).unzip();
        Self::labeled(dim, patterns, labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[PointPattern] {
        &self.patterns
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of classes implied by the labels (`max + 1`), or 0 if unlabeled.
    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |m| m + 1)
    }

    pub fn labeled_patterns(&self) -> Option<Vec<LabeledPattern>> {
        let labels = self.labels.as_ref()?;
        Some(
            self.patterns
                .iter()
                .zip(labels)
                .map(|(p, &label)| LabeledPattern {
                    pattern: p.clone(),
                    label,
                })
                .collect(),
        )
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.patterns.iter().map(PointPattern::cardinality).collect()
    }
}
