//! Marginal prediction intervals from calibrated moment predictors.
//!
//! For a bundle that is mean-conditioned moment calibrated at slacks
//! `(alpha, beta, epsilon)` with `m` buckets, the interval at `x` has
//! half-width
//!
//! `width = alpha/gamma + epsilon + 1/m
//!            + ((moment_k(x) + epsilon + 1/m + beta/gamma) / delta)^(1/k)`
//!
//! and is centered at the predicted mean. Averaged over any audited cell of
//! mass at least `gamma`, the label falls outside the interval with
//! probability at most `delta`: within a cell the predictions pin the mean
//! and moment to one bucket, calibration converts them to the cell's true
//! mean and moment, and the polynomial tail bound finishes.

use serde::{Deserialize, Serialize};

use crate::bundle::{MomentKind, PredictorBundle};
use crate::error::{Error, Result};
use crate::predicate::GroupFamily;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalParams {
    /// Minimum cell mass the coverage guarantee applies to.
    pub gamma: f64,
    /// Coverage failure probability.
    pub delta: f64,
    /// Moment degree used for the tail bound.
    pub degree: u32,
    /// Calibration slacks of the bundle.
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub bucket_count: u32,
}

impl IntervalParams {
    /// Parameters for a bundle trained at levels `(alpha, beta)`: such a
    /// bundle is `(alpha, beta + degree*alpha, degree/m)`-calibrated for
    /// each tracked degree.
    pub fn for_trained_bundle(
        bundle: &PredictorBundle,
        degree: u32,
        gamma: f64,
        delta: f64,
        train_alpha: f64,
        train_beta: f64,
    ) -> Result<Self> {
        let params = IntervalParams {
            gamma,
            delta,
            degree,
            alpha: train_alpha,
            beta: train_beta + f64::from(degree) * train_alpha,
            epsilon: f64::from(degree) / f64::from(bundle.bucket_count),
            bucket_count: bundle.bucket_count,
        };
        params.validate_for(bundle)?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0,1], got {}",
                self.gamma
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("epsilon", self.epsilon),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a nonnegative slack, got {v}"
                )));
            }
        }
        if self.bucket_count == 0 {
            return Err(Error::InvalidParameter("bucket count must be positive".into()));
        }
        Ok(())
    }

    pub fn validate_for(&self, bundle: &PredictorBundle) -> Result<()> {
        self.validate()?;
        if bundle.degree_index(self.degree).is_none() {
            return Err(Error::InvalidParameter(format!(
                "bundle does not track moment degree {}",
                self.degree
            )));
        }
        if self.degree % 2 == 1 && bundle.moment_kind == MomentKind::Central {
            return Err(Error::InvalidParameter(format!(
                "odd degree {} requires an absolute-central-moment bundle",
                self.degree
            )));
        }
        Ok(())
    }
}

/// Interval half-width given the replayed moment prediction at a point.
pub fn width_from_moment(moment: f64, params: &IntervalParams) -> Result<f64> {
    params.validate()?;
    let m = f64::from(params.bucket_count);
    let inner =
        (moment + params.epsilon + 1.0 / m + params.beta / params.gamma) / params.delta;
    Ok(params.alpha / params.gamma
        + params.epsilon
        + 1.0 / m
        + inner.powf(1.0 / f64::from(params.degree)))
}

/// Interval half-width at a point, replaying the bundle.
pub fn interval_width(
    bundle: &PredictorBundle,
    family: &GroupFamily,
    x: &[f64],
    params: &IntervalParams,
) -> Result<f64> {
    params.validate_for(bundle)?;
    let pred = bundle.evaluate(family, x)?;
    let idx = bundle.degree_index(params.degree).expect("validated degree");
    width_from_moment(pred.moments[idx], params)
}

/// A prediction interval: raw endpoints for the theory checks, clipped
/// endpoints for reporting (labels live in the unit interval, so clipping
/// cannot reduce coverage).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub center: f64,
    pub width: f64,
    pub raw_lo: f64,
    pub raw_hi: f64,
    pub lo: f64,
    pub hi: f64,
}

impl PredictionInterval {
    pub fn around(center: f64, width: f64) -> Self {
        PredictionInterval {
            center,
            width,
            raw_lo: center - width,
            raw_hi: center + width,
            lo: (center - width).max(0.0),
            hi: (center + width).min(1.0),
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        (y - self.center).abs() <= self.width
    }
}

/// Marginal prediction interval at a point.
pub fn prediction_interval(
    bundle: &PredictorBundle,
    family: &GroupFamily,
    x: &[f64],
    params: &IntervalParams,
) -> Result<PredictionInterval> {
    params.validate_for(bundle)?;
    let pred = bundle.evaluate(family, x)?;
    let idx = bundle.degree_index(params.degree).expect("validated degree");
    let width = width_from_moment(pred.moments[idx], params)?;
    Ok(PredictionInterval::around(pred.mean, width))
}

/// Polynomial tail bound from an even central moment:
/// `P(|X - mean| >= t) <= min(1, moment_k / t^k)`.
pub fn chebyshev_tail(moment: f64, degree: u32, t: f64) -> Result<f64> {
    if degree == 0 || degree % 2 == 1 {
        return Err(Error::InvalidParameter(format!(
            "tail bound needs a positive even degree, got {degree}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be positive, got {t}"
        )));
    }
    if !(moment >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "even central moment must be nonnegative, got {moment}"
        )));
    }
    Ok((moment / t.powi(degree as i32)).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> IntervalParams {
        IntervalParams {
            gamma: 0.25,
            delta: 0.1,
            degree: 2,
            alpha: 0.005,
            beta: 0.005,
            epsilon: 0.001,
            bucket_count: 1000,
        }
    }

    // Frozen by independent evaluation of the width formula.
    const FROZEN_WIDTH: f64 = 0.5876854249492380;

    #[test]
    fn width_matches_frozen_value() {
        let w = width_from_moment(0.01, &params()).unwrap();
        assert!((w - FROZEN_WIDTH).abs() < 1e-12);
    }

    #[test]
    fn width_reduces_to_bare_tail_radius_without_slack() {
        // With slacks zero and a huge bucket count, the width approaches the
        // plain moment tail radius (m_k / delta)^(1/k).
        let p = IntervalParams {
            gamma: 0.5,
            delta: 0.1,
            degree: 2,
            alpha: 0.0,
            beta: 0.0,
            epsilon: 0.0,
            bucket_count: u32::MAX,
        };
        let w = width_from_moment(0.04, &p).unwrap();
        assert!((w - (0.04f64 / 0.1).sqrt()).abs() < 1e-4);
        let w0 = width_from_moment(0.0, &p).unwrap();
        assert!(w0 < 1e-4);
    }

    #[test]
    fn width_monotonicity() {
        let base = params();
        let w = width_from_moment(0.01, &base).unwrap();
        // Nondecreasing in the moment and each slack.
        assert!(width_from_moment(0.02, &base).unwrap() >= w);
        for field in ["alpha", "beta", "epsilon"] {
            let mut p = base.clone();
            match field {
                "alpha" => p.alpha *= 2.0,
                "beta" => p.beta *= 2.0,
                _ => p.epsilon *= 2.0,
            }
            assert!(width_from_moment(0.01, &p).unwrap() >= w, "{field}");
        }
        // Nonincreasing in gamma, bucket count, and delta.
        let mut p = base.clone();
        p.gamma = 0.5;
        assert!(width_from_moment(0.01, &p).unwrap() <= w);
        let mut p = base.clone();
        p.delta = 0.2;
        assert!(width_from_moment(0.01, &p).unwrap() <= w);
        let mut p = base.clone();
        p.bucket_count = 2000;
        assert!(width_from_moment(0.01, &p).unwrap() <= w);
    }

    #[test]
    fn interval_clipping_preserves_raw_endpoints() {
        let iv = PredictionInterval::around(0.5, 0.3);
        assert_eq!((iv.lo, iv.hi), (0.2, 0.8));
        let wide = PredictionInterval::around(0.5, 1.2);
        assert_eq!((wide.lo, wide.hi), (0.0, 1.0));
        assert_eq!((wide.raw_lo, wide.raw_hi), (-0.7, 1.7));
        assert!(wide.contains(0.0) && wide.contains(1.0));
    }

    #[test]
    fn delta_zero_rejected() {
        let mut p = params();
        p.delta = 0.0;
        assert!(width_from_moment(0.01, &p).is_err());
    }

    #[test]
    fn tail_bound_values() {
        assert_eq!(chebyshev_tail(0.25, 2, 1.0).unwrap(), 0.25);
        assert_eq!(chebyshev_tail(0.25, 2, 0.5).unwrap(), 1.0);
        assert!(chebyshev_tail(0.25, 2, 0.0).is_err());
        assert!(chebyshev_tail(0.25, 3, 1.0).is_err());
    }

    #[test]
    fn tail_bound_dominates_exact_tail_on_discrete_laws() {
        // Exact tails by summation over small label laws, compared on a
        // grid of thresholds.
        let laws: &[&[(f64, f64)]] = &[
            &[(0.0, 0.5), (1.0, 0.5)],
            &[(0.1, 0.3), (0.5, 0.4), (0.9, 0.3)],
            &[(0.2, 0.25), (0.4, 0.25), (0.6, 0.25), (0.8, 0.25)],
        ];
        for law in laws {
            let mean: f64 = law.iter().map(|&(y, p)| p * y).sum();
            for degree in [2u32, 4] {
                let moment: f64 = law
                    .iter()
                    .map(|&(y, p)| p * (y - mean).powi(degree as i32))
                    .sum();
                for step in 1..=20 {
                    let t = step as f64 * 0.05;
                    let exact: f64 = law
                        .iter()
                        .filter(|&&(y, _)| (y - mean).abs() >= t)
                        .map(|&(_, p)| p)
                        .sum();
                    let bound = chebyshev_tail(moment, degree, t).unwrap();
                    assert!(
                        bound >= exact - 1e-12,
                        "degree {degree} t {t}: bound {bound} < exact {exact}"
                    );
                }
            }
        }
    }
}
