//! Feature vectors, labeled examples, finite-support distributions, and the
//! columnar sample block used on training hot paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability mass sums (finite-support validation).
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub id: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        for &v in &values {
            if !v.is_finite() {
                return Err(Error::NonFinite(v));
            }
        }
        Ok(FeatureVector {
            id: id.into(),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: f64,
}

impl LabeledExample {
    pub fn new(features: FeatureVector, label: f64) -> Result<Self> {
        check_unit(label)?;
        Ok(LabeledExample { features, label })
    }
}

pub(crate) fn check_unit(v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite(v));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfUnitRange { value: v });
    }
    Ok(v)
}

/// One point of a finite-support distribution: features, marginal mass, and
/// the conditional label distribution at that point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    #[serde(flatten)]
    pub features: FeatureVector,
    pub mass: f64,
    /// `(label, probability)` pairs; probabilities sum to one.
    pub labels: Vec<(f64, f64)>,
}

impl SupportPoint {
    /// Conditional label mean at this point.
    pub fn label_mean(&self) -> f64 {
        self.labels.iter().map(|&(y, p)| p * y).sum()
    }

    /// Conditional expectation of an arbitrary label function at this point.
    pub fn label_expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.labels.iter().map(|&(y, p)| p * f(y)).sum()
    }
}

/// Finite-support joint distribution with exact per-point label laws
/// (exact-access training and auditing mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    pub support: Vec<SupportPoint>,
}

impl FiniteDistribution {
    pub fn new(support: Vec<SupportPoint>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Format("empty support".into()));
        }
        let dim = support[0].features.values.len();
        let mut total = 0.0;
        for pt in &support {
            if pt.features.values.len() != dim {
                return Err(Error::Format(format!(
                    "point {:?} has dimension {} but distribution has {}",
                    pt.features.id,
                    pt.features.values.len(),
                    dim
                )));
            }
            if !pt.mass.is_finite() || pt.mass < 0.0 {
                return Err(Error::Format(format!(
                    "point {:?} has invalid mass {}",
                    pt.features.id, pt.mass
                )));
            }
            total += pt.mass;
            let mut law = 0.0;
            for &(y, p) in &pt.labels {
                check_unit(y)?;
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::Format(format!(
                        "point {:?} has invalid label probability {}",
                        pt.features.id, p
                    )));
                }
                law += p;
            }
            if (law - 1.0).abs() > MASS_TOL {
                return Err(Error::Format(format!(
                    "label law of point {:?} sums to {}",
                    pt.features.id, law
                )));
            }
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Format(format!("masses sum to {}", total)));
        }
        Ok(FiniteDistribution { support })
    }

    pub fn dim(&self) -> usize {
        self.support[0].features.values.len()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Per-point conditional label means, in support order.
    pub fn point_means(&self) -> Vec<f64> {
        self.support.iter().map(|p| p.label_mean()).collect()
    }
}

/// Columnar block of examples (row-major feature storage). Hot training
/// paths use this layout to avoid per-example allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    pub dim: usize,
    pub xs: Vec<f64>,
    pub labels: Vec<f64>,
}

impl SampleBlock {
    pub fn with_capacity(dim: usize, n: usize) -> Self {
        SampleBlock {
            dim,
            xs: Vec::with_capacity(dim * n),
            labels: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        debug_assert_eq!(x.len(), self.dim);
        self.xs.extend_from_slice(x);
        self.labels.push(y);
    }

    pub fn features(&self, idx: usize) -> &[f64] {
        &self.xs[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn from_examples(dim: usize, examples: &[LabeledExample]) -> Result<Self> {
        let mut block = SampleBlock::with_capacity(dim, examples.len());
        for ex in examples {
            if ex.features.values.len() != dim {
                return Err(Error::Format(format!(
                    "example {:?} has dimension {}, expected {}",
                    ex.features.id,
                    ex.features.values.len(),
                    dim
                )));
            }
            block.push(&ex.features.values, ex.label);
        }
        Ok(block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_point() -> FiniteDistribution {
        FiniteDistribution::new(vec![
            SupportPoint {
                features: FeatureVector::new("x1", vec![0.0]).unwrap(),
                mass: 0.5,
                labels: vec![(0.0, 1.0)],
            },
            SupportPoint {
                features: FeatureVector::new("x2", vec![1.0]).unwrap(),
                mass: 0.5,
                labels: vec![(1.0, 1.0)],
            },
        ])
        .unwrap()
    }

    #[test]
    fn masses_must_sum_to_one() {
        let mut d = two_point();
        d.support[0].mass = 0.75;
        assert!(FiniteDistribution::new(d.support).is_err());
    }

    #[test]
    fn label_law_must_sum_to_one() {
        let bad = SupportPoint {
            features: FeatureVector::new("x", vec![0.0]).unwrap(),
            mass: 1.0,
            labels: vec![(0.0, 0.5), (1.0, 0.4)],
        };
        assert!(FiniteDistribution::new(vec![bad]).is_err());
    }

    #[test]
    fn labels_outside_unit_interval_rejected() {
        assert!(LabeledExample::new(FeatureVector::new("x", vec![0.0]).unwrap(), 1.2).is_err());
        assert!(LabeledExample::new(FeatureVector::new("x", vec![0.0]).unwrap(), -0.1).is_err());
    }

    #[test]
    fn block_layout_round_trips() {
        let examples = vec![
            LabeledExample::new(FeatureVector::new("a", vec![0.1, 0.2]).unwrap(), 0.3).unwrap(),
            LabeledExample::new(FeatureVector::new("b", vec![0.4, 0.5]).unwrap(), 0.6).unwrap(),
        ];
        let block = SampleBlock::from_examples(2, &examples).unwrap();
        assert_eq!(block.len(), 2);
        assert_eq!(block.features(1), &[0.4, 0.5]);
        assert_eq!(block.labels[1], 0.6);
    }
}
