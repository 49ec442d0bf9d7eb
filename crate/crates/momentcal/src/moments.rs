//! Exact conditional means and central moments on finite-support
//! distributions, and the mixture recombination identity.

use crate::data::{FiniteDistribution, SupportPoint};
use crate::error::{Error, Result};

/// Exact binomial coefficient as f64 (exact for the small degrees used here).
pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..u128::from(k) {
        num *= u128::from(n) - i;
        den *= i + 1;
    }
    (num / den) as f64
}

/// Conditional mean and central moments of the label distribution on a
/// filtered subset of the support.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    /// Marginal mass of the subset.
    pub mass: f64,
    /// Conditional label mean.
    pub mean: f64,
    /// `central[a]` is the a-th central moment, for `a = 0..=k`
    /// (`central[0] = 1`, `central[1] = 0` up to rounding).
    pub central: Vec<f64>,
}

/// Exact conditional mean and central moments up to degree `k` on the subset
/// selected by `filter`. Returns `None` when the subset has zero mass (the
/// designated empty-set signal; auditors skip such sets).
pub fn conditional_moments(
    dist: &FiniteDistribution,
    filter: impl Fn(usize, &SupportPoint) -> bool,
    k: u32,
) -> Option<ConditionalMoments> {
    let members: Vec<usize> = dist
        .support
        .iter()
        .enumerate()
        .filter(|(i, pt)| filter(*i, pt))
        .map(|(i, _)| i)
        .collect();
    let mass: f64 = members.iter().map(|&i| dist.support[i].mass).sum();
    if mass <= 0.0 {
        return None;
    }
    let mean = members
        .iter()
        .map(|&i| dist.support[i].mass * dist.support[i].label_mean())
        .sum::<f64>()
        / mass;
    let mut central = Vec::with_capacity(k as usize + 1);
    for a in 0..=k {
        let m_a = members
            .iter()
            .map(|&i| {
                dist.support[i].mass
                    * dist.support[i].label_expectation(|y| (y - mean).powi(a as i32))
            })
            .sum::<f64>()
            / mass;
        central.push(m_a);
    }
    Some(ConditionalMoments { mass, mean, central })
}

/// Exact conditional mean together with the central moments of degrees
/// `2..=k`, or `None` for a zero-mass subset.
pub fn true_mean_and_moments(
    dist: &FiniteDistribution,
    filter: impl Fn(usize, &SupportPoint) -> bool,
    k: u32,
) -> Option<(f64, Vec<f64>)> {
    let cm = conditional_moments(dist, filter, k)?;
    Some((cm.mean, cm.central[2.min(cm.central.len())..].to_vec()))
}

/// One component of a mixture: weight, mean, and central moments
/// `central[0..=k]` with `central[0] = 1` and `central[1] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub central: Vec<f64>,
}

/// k-th central moment of a mixture from its components' means and central
/// moments:
///
/// `m_k = sum_l w_l * sum_{a=0..k} C(k,a) (mean_l - mean)^(k-a) central[a]_l`
///
/// When all component means coincide this reduces to the convex combination
/// of the component moments.
pub fn mixture_moment(components: &[MixtureComponent], k: u32) -> Result<f64> {
    if components.is_empty() {
        return Err(Error::InvalidParameter("empty mixture".into()));
    }
    let mut total_weight = 0.0;
    for c in components {
        if !c.weight.is_finite() || c.weight < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "invalid mixture weight {}",
                c.weight
            )));
        }
        total_weight += c.weight;
        if c.central.len() < k as usize + 1 {
            return Err(Error::InvalidParameter(format!(
                "component needs central moments up to degree {k}, got {}",
                c.central.len().saturating_sub(1)
            )));
        }
        if (c.central[0] - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "component zeroth central moment must be 1, got {}",
                c.central[0]
            )));
        }
        if k >= 1 && c.central[1].abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "component first central moment must be 0, got {}",
                c.central[1]
            )));
        }
    }
    if (total_weight - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "mixture weights sum to {total_weight}"
        )));
    }
    let mean: f64 = components.iter().map(|c| c.weight * c.mean).sum();
    let mut out = 0.0;
    for c in components {
        let shift = c.mean - mean;
        let mut inner = 0.0;
        for a in 0..=k {
            inner += binomial(k, a) * shift.powi((k - a) as i32) * c.central[a as usize];
        }
        out += c.weight * inner;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureVector, SupportPoint};

    fn point(id: &str, x: f64, mass: f64, labels: Vec<(f64, f64)>) -> SupportPoint {
        SupportPoint {
            features: FeatureVector::new(id, vec![x]).unwrap(),
            mass,
            labels,
        }
    }

    fn two_point() -> FiniteDistribution {
        FiniteDistribution::new(vec![
            point("x1", 0.0, 0.5, vec![(0.0, 1.0)]),
            point("x2", 1.0, 0.5, vec![(1.0, 1.0)]),
        ])
        .unwrap()
    }

    #[test]
    fn pooled_two_point_variance_is_one_quarter() {
        let d = two_point();
        let (mean, moments) = true_mean_and_moments(&d, |_, _| true, 2).unwrap();
        assert!((mean - 0.5).abs() < 1e-15);
        assert!((moments[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn point_mass_has_zero_moments() {
        let d = FiniteDistribution::new(vec![point("x", 0.0, 1.0, vec![(0.7, 1.0)])]).unwrap();
        let (mean, moments) = true_mean_and_moments(&d, |_, _| true, 6).unwrap();
        assert!((mean - 0.7).abs() < 1e-15);
        for m in moments {
            assert!(m.abs() < 1e-15);
        }
    }

    #[test]
    fn fair_coin_fourth_moment() {
        // Brute-force over both outcomes: E[(y - 1/2)^4] = 1/16.
        let d = FiniteDistribution::new(vec![point(
            "x",
            0.0,
            1.0,
            vec![(0.0, 0.5), (1.0, 0.5)],
        )])
        .unwrap();
        let (_, moments) = true_mean_and_moments(&d, |_, _| true, 4).unwrap();
        assert!((moments[2] - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn empty_subset_yields_none() {
        let d = two_point();
        assert!(true_mean_and_moments(&d, |_, _| false, 2).is_none());
    }

    #[test]
    fn equal_mean_mixture_is_convex_combination() {
        let comps = vec![
            MixtureComponent {
                weight: 0.5,
                mean: 0.3,
                central: vec![1.0, 0.0, 0.1],
            },
            MixtureComponent {
                weight: 0.5,
                mean: 0.3,
                central: vec![1.0, 0.0, 0.2],
            },
        ];
        let m2 = mixture_moment(&comps, 2).unwrap();
        assert!((m2 - 0.15).abs() < 1e-15);
    }

    #[test]
    fn point_masses_at_zero_and_one_mix_to_quarter_variance() {
        let comps = vec![
            MixtureComponent {
                weight: 0.5,
                mean: 0.0,
                central: vec![1.0, 0.0, 0.0],
            },
            MixtureComponent {
                weight: 0.5,
                mean: 1.0,
                central: vec![1.0, 0.0, 0.0],
            },
        ];
        let m2 = mixture_moment(&comps, 2).unwrap();
        assert!((m2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_component_mixture_is_identity() {
        let comps = vec![MixtureComponent {
            weight: 1.0,
            mean: 0.4,
            central: vec![1.0, 0.0, 0.17, 0.03],
        }];
        assert!((mixture_moment(&comps, 3).unwrap() - 0.03).abs() < 1e-15);
    }

    #[test]
    fn malformed_components_rejected() {
        let bad = vec![MixtureComponent {
            weight: 1.0,
            mean: 0.4,
            central: vec![0.9, 0.0, 0.1],
        }];
        assert!(mixture_moment(&bad, 2).is_err());
        let short = vec![MixtureComponent {
            weight: 1.0,
            mean: 0.4,
            central: vec![1.0, 0.0],
        }];
        assert!(mixture_moment(&short, 3).is_err());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(6, 0), 1.0);
        assert_eq!(binomial(6, 6), 1.0);
        assert_eq!(binomial(10, 3), 120.0);
        assert_eq!(binomial(3, 5), 0.0);
    }
}
