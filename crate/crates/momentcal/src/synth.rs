//! Seeded synthetic distributions and sample streams used by tests,
//! examples, and the `synth` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureVector, FiniteDistribution, SampleBlock, SupportPoint};
use crate::error::{Error, Result};
use crate::sample::SampleStream;

/// Generator descriptions. All generators are deterministic under a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SyntheticSpec {
    /// Uniform over two points with deterministic labels 0 and 1: the
    /// minimal example where per-point moments vanish but the pooled
    /// variance is 1/4.
    TwoPoint,
    /// Random finite grid: seeded feature positions, masses, and discrete
    /// label laws over `label_values` atoms.
    FiniteGrid {
        points: usize,
        dim: usize,
        label_values: usize,
    },
    /// Continuous features uniform on `[0,1]^dim` with Bernoulli labels of
    /// success rate `intercept + slope * x[0]` (heteroskedastic variance).
    BernoulliField { dim: usize, intercept: f64, slope: f64 },
    /// Finite-support Bernoulli field: `points` equally likely feature
    /// values on an even grid over `x[0]`.
    BernoulliGrid {
        points: usize,
        intercept: f64,
        slope: f64,
    },
    /// Uniform features with a single deterministic label value.
    ConstantLabel { dim: usize, value: f64 },
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        fn rate_in_range(intercept: f64, slope: f64) -> Result<()> {
            let lo = intercept.min(intercept + slope);
            let hi = intercept.max(intercept + slope);
            if lo < 0.0 || hi > 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "Bernoulli rate {intercept} + {slope} * x0 leaves [0,1]"
                )));
            }
            Ok(())
        }
        match self {
            SyntheticSpec::TwoPoint => Ok(()),
            SyntheticSpec::FiniteGrid {
                points,
                dim,
                label_values,
            } => {
                if *points == 0 || *dim == 0 || *label_values == 0 {
                    return Err(Error::InvalidParameter(
                        "finite grid needs positive points, dim, and label values".into(),
                    ));
                }
                Ok(())
            }
            SyntheticSpec::BernoulliField { dim, intercept, slope } => {
                if *dim == 0 {
                    return Err(Error::InvalidParameter("dim must be positive".into()));
                }
                rate_in_range(*intercept, *slope)
            }
            SyntheticSpec::BernoulliGrid {
                points,
                intercept,
                slope,
            } => {
                if *points == 0 {
                    return Err(Error::InvalidParameter("grid needs points".into()));
                }
                rate_in_range(*intercept, *slope)
            }
            SyntheticSpec::ConstantLabel { dim, value } => {
                if *dim == 0 {
                    return Err(Error::InvalidParameter("dim must be positive".into()));
                }
                crate::data::check_unit(*value).map(|_| ())
            }
        }
    }

    /// Bernoulli success rate at a feature vector, where applicable.
    pub fn bernoulli_rate(&self, x: &[f64]) -> Option<f64> {
        match self {
            SyntheticSpec::BernoulliField { intercept, slope, .. }
            | SyntheticSpec::BernoulliGrid { intercept, slope, .. } => {
                Some(intercept + slope * x[0])
            }
            _ => None,
        }
    }

    /// Closed-form conditional label mean at `x`, where defined.
    pub fn analytic_mean(&self, x: &[f64]) -> Option<f64> {
        match self {
            SyntheticSpec::TwoPoint => Some(x[0]),
            SyntheticSpec::ConstantLabel { value, .. } => Some(*value),
            SyntheticSpec::BernoulliField { .. } | SyntheticSpec::BernoulliGrid { .. } => {
                self.bernoulli_rate(x)
            }
            SyntheticSpec::FiniteGrid { .. } => None,
        }
    }

    /// Closed-form conditional central moment at `x`, where defined. For a
    /// Bernoulli rate q this is `(1-q)(-q)^a + q(1-q)^a`.
    pub fn analytic_central_moment(&self, x: &[f64], degree: u32) -> Option<f64> {
        match self {
            SyntheticSpec::TwoPoint | SyntheticSpec::ConstantLabel { .. } => Some(0.0),
            SyntheticSpec::BernoulliField { .. } | SyntheticSpec::BernoulliGrid { .. } => {
                let q = self.bernoulli_rate(x)?;
                let a = degree as i32;
                Some((1.0 - q) * (-q).powi(a) + q * (1.0 - q).powi(a))
            }
            SyntheticSpec::FiniteGrid { .. } => None,
        }
    }

    /// Finite-support realization (exact-access mode). Errors for
    /// continuous-feature specs.
    pub fn distribution(&self, seed: u64) -> Result<FiniteDistribution> {
        self.validate()?;
        match self {
            SyntheticSpec::TwoPoint => FiniteDistribution::new(vec![
                SupportPoint {
                    features: FeatureVector::new("x1", vec![0.0])?,
                    mass: 0.5,
                    labels: vec![(0.0, 1.0)],
                },
                SupportPoint {
                    features: FeatureVector::new("x2", vec![1.0])?,
                    mass: 0.5,
                    labels: vec![(1.0, 1.0)],
                },
            ]),
            SyntheticSpec::FiniteGrid {
                points,
                dim,
                label_values,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut raw_masses = Vec::with_capacity(*points);
                let mut support = Vec::with_capacity(*points);
                for t in 0..*points {
                    let values: Vec<f64> = (0..*dim).map(|_| rng.random::<f64>()).collect();
                    raw_masses.push(0.2 + 0.8 * rng.random::<f64>());
                    let mut probs: Vec<f64> =
                        (0..*label_values).map(|_| 0.05 + rng.random::<f64>()).collect();
                    let total: f64 = probs.iter().sum();
                    for p in &mut probs {
                        *p /= total;
                    }
                    let labels: Vec<(f64, f64)> = probs
                        .into_iter()
                        .map(|p| (rng.random::<f64>(), p))
                        .collect();
                    support.push(SupportPoint {
                        features: FeatureVector::new(format!("p{t}"), values)?,
                        mass: 0.0,
                        labels,
                    });
                }
                let total: f64 = raw_masses.iter().sum();
                // Normalize and absorb rounding into the last point so the
                // masses sum to one exactly.
                let mut acc = 0.0;
                let last = support.len() - 1;
                for (pt, raw) in support.iter_mut().zip(&raw_masses) {
                    pt.mass = raw / total;
                    acc += pt.mass;
                }
                support[last].mass += 1.0 - acc;
                FiniteDistribution::new(support)
            }
            SyntheticSpec::BernoulliGrid {
                points,
                intercept,
                slope,
            } => {
                let n = *points;
                let mut support = Vec::with_capacity(n);
                let mut acc = 0.0;
                for t in 0..n {
                    let x0 = (t as f64 + 0.5) / n as f64;
                    let q = intercept + slope * x0;
                    let mass = if t + 1 == n {
                        1.0 - acc
                    } else {
                        1.0 / n as f64
                    };
                    acc += mass;
                    support.push(SupportPoint {
                        features: FeatureVector::new(format!("g{t}"), vec![x0])?,
                        mass,
                        labels: vec![(0.0, 1.0 - q), (1.0, q)],
                    });
                }
                FiniteDistribution::new(support)
            }
            SyntheticSpec::BernoulliField { .. } | SyntheticSpec::ConstantLabel { .. } => {
                Err(Error::InvalidParameter(
                    "spec has continuous features; use a sample stream".into(),
                ))
            }
        }
    }

    /// Seeded sample stream for any spec (finite specs sample their own
    /// finite-support realization).
    pub fn stream(&self, seed: u64) -> Result<Box<dyn SampleStream + Send>> {
        self.validate()?;
        match self {
            SyntheticSpec::BernoulliField { dim, intercept, slope } => {
                Ok(Box::new(BernoulliFieldStream {
                    dim: *dim,
                    intercept: *intercept,
                    slope: *slope,
                    rng: ChaCha8Rng::seed_from_u64(seed),
                }))
            }
            SyntheticSpec::ConstantLabel { dim, value } => Ok(Box::new(ConstantLabelStream {
                dim: *dim,
                value: *value,
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            _ => {
                let dist = self.distribution(seed)?;
                Ok(Box::new(crate::sample::DistributionSampler::new(
                    dist,
                    seed.wrapping_add(1),
                )))
            }
        }
    }
}

struct BernoulliFieldStream {
    dim: usize,
    intercept: f64,
    slope: f64,
    rng: ChaCha8Rng,
}

impl SampleStream for BernoulliFieldStream {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw_block(&mut self, n: usize) -> Result<SampleBlock> {
        let mut block = SampleBlock::with_capacity(self.dim, n);
        let mut x = vec![0.0; self.dim];
        for _ in 0..n {
            for v in &mut x {
                *v = self.rng.random::<f64>();
            }
            let q = self.intercept + self.slope * x[0];
            let y = if self.rng.random::<f64>() < q { 1.0 } else { 0.0 };
            block.push(&x, y);
        }
        Ok(block)
    }
}

struct ConstantLabelStream {
    dim: usize,
    value: f64,
    rng: ChaCha8Rng,
}

impl SampleStream for ConstantLabelStream {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw_block(&mut self, n: usize) -> Result<SampleBlock> {
        let mut block = SampleBlock::with_capacity(self.dim, n);
        let mut x = vec![0.0; self.dim];
        for _ in 0..n {
            for v in &mut x {
                *v = self.rng.random::<f64>();
            }
            block.push(&x, self.value);
        }
        Ok(block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::true_mean_and_moments;

    #[test]
    fn two_point_fixture_moments() {
        let d = SyntheticSpec::TwoPoint.distribution(0).unwrap();
        let (mean, moments) = true_mean_and_moments(&d, |_, _| true, 4).unwrap();
        assert!((mean - 0.5).abs() < 1e-15);
        assert!((moments[0] - 0.25).abs() < 1e-15);
        // Per-point moments vanish: labels are deterministic given features.
        for (i, pt) in d.support.iter().enumerate() {
            let (_, ms) = true_mean_and_moments(&d, |j, _| j == i, 4).unwrap();
            assert!(ms.iter().all(|m| m.abs() < 1e-15));
            assert_eq!(pt.labels.len(), 1);
        }
    }

    #[test]
    fn bernoulli_grid_matches_analytic_moments() {
        let spec = SyntheticSpec::BernoulliGrid {
            points: 8,
            intercept: 0.2,
            slope: 0.6,
        };
        let d = spec.distribution(7).unwrap();
        for (i, pt) in d.support.iter().enumerate() {
            let (mean, moments) = true_mean_and_moments(&d, |j, _| j == i, 4).unwrap();
            let x = &pt.features.values;
            assert!((mean - spec.analytic_mean(x).unwrap()).abs() < 1e-10);
            assert!((moments[0] - spec.analytic_central_moment(x, 2).unwrap()).abs() < 1e-10);
            assert!((moments[2] - spec.analytic_central_moment(x, 4).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn finite_grid_is_seed_deterministic() {
        let spec = SyntheticSpec::FiniteGrid {
            points: 12,
            dim: 2,
            label_values: 3,
        };
        let a = spec.distribution(42).unwrap();
        let b = spec.distribution(42).unwrap();
        assert_eq!(a, b);
        let c = spec.distribution(43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rate_leaving_unit_interval_rejected() {
        let spec = SyntheticSpec::BernoulliField {
            dim: 1,
            intercept: 0.5,
            slope: 0.8,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn streams_are_seed_deterministic() {
        let spec = SyntheticSpec::BernoulliField {
            dim: 2,
            intercept: 0.2,
            slope: 0.5,
        };
        let mut s1 = spec.stream(9).unwrap();
        let mut s2 = spec.stream(9).unwrap();
        assert_eq!(s1.draw_block(100).unwrap(), s2.draw_block(100).unwrap());
        let mut s3 = spec.stream(10).unwrap();
        assert_ne!(
            spec.stream(9).unwrap().draw_block(100).unwrap(),
            s3.draw_block(100).unwrap()
        );
    }
}
