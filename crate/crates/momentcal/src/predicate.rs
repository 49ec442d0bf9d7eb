//! Group membership predicates and named group families.
//!
//! A group family is an ordered list of named predicates over feature
//! vectors. Predicates are pure and deterministic; supported forms are
//! per-coordinate interval boxes, linear thresholds `w·x >= b`, and boolean
//! combinations of these. The JSON encoding of this grammar doubles as the
//! group-family file format and as the hypothesis grammar spoken by external
//! learning oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive interval constraint on one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordBound {
    pub coord: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Membership predicate over feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    /// Conjunction of inclusive per-coordinate bounds. An empty bound list
    /// matches every point.
    Box { bounds: Vec<CoordBound> },
    /// Linear threshold `weights · x >= bias`.
    Threshold { weights: Vec<f64>, bias: f64 },
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(std::boxed::Box<Predicate>),
}

impl Predicate {
    /// Predicate matching the whole domain.
    pub fn always() -> Self {
        Predicate::Box { bounds: vec![] }
    }

    /// Predicate matching nothing (the empty disjunction).
    pub fn never() -> Self {
        Predicate::Or(vec![])
    }

    pub fn is_always(&self) -> bool {
        matches!(self, Predicate::Box { bounds } if bounds.is_empty())
    }

    pub fn eval(&self, x: &[f64]) -> bool {
        match self {
            Predicate::Box { bounds } => bounds.iter().all(|b| {
                x.get(b.coord)
                    .map(|&v| v >= b.lo && v <= b.hi)
                    .unwrap_or(false)
            }),
            Predicate::Threshold { weights, bias } => {
                let dot: f64 = weights.iter().zip(x).map(|(w, v)| w * v).sum();
                dot >= *bias
            }
            Predicate::And(ps) => ps.iter().all(|p| p.eval(x)),
            Predicate::Or(ps) => ps.iter().any(|p| p.eval(x)),
            Predicate::Not(p) => !p.eval(x),
        }
    }

    /// Largest coordinate index mentioned anywhere in the predicate.
    fn max_coord(&self) -> Option<usize> {
        match self {
            Predicate::Box { bounds } => bounds.iter().map(|b| b.coord).max(),
            Predicate::Threshold { weights, .. } => weights.len().checked_sub(1),
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().filter_map(|p| p.max_coord()).max(),
            Predicate::Not(p) => p.max_coord(),
        }
    }
}

/// One named group of the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedGroup {
    pub name: String,
    pub predicate: Predicate,
}

/// Ordered collection of named membership predicates (the audited
/// subpopulations). Order is significant: trainers and auditors scan groups
/// in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroupFamily {
    pub groups: Vec<NamedGroup>,
}

impl GroupFamily {
    pub fn new(groups: Vec<NamedGroup>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for g in &groups {
            if !seen.insert(g.name.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate group name {:?}",
                    g.name
                )));
            }
        }
        Ok(GroupFamily { groups })
    }

    pub fn from_named(pairs: Vec<(&str, Predicate)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, predicate)| NamedGroup {
                    name: name.to_string(),
                    predicate,
                })
                .collect(),
        )
    }

    /// Family with the single group covering the whole domain.
    pub fn whole_domain() -> Self {
        GroupFamily {
            groups: vec![NamedGroup {
                name: "all".to_string(),
                predicate: Predicate::always(),
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn get(&self, idx: usize) -> Result<&NamedGroup> {
        self.groups.get(idx).ok_or(Error::UnknownGroup(idx))
    }

    pub fn member(&self, idx: usize, x: &[f64]) -> Result<bool> {
        Ok(self.get(idx)?.predicate.eval(x))
    }

    /// Validate that no predicate mentions a coordinate beyond `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        for g in &self.groups {
            if let Some(c) = g.predicate.max_coord() {
                if c >= dim {
                    return Err(Error::InvalidParameter(format!(
                        "group {:?} references coordinate {} but data has dimension {}",
                        g.name, c, dim
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_bounds_are_inclusive() {
        let p = Predicate::Box {
            bounds: vec![CoordBound {
                coord: 0,
                lo: 0.25,
                hi: 0.5,
            }],
        };
        assert!(p.eval(&[0.25]));
        assert!(p.eval(&[0.5]));
        assert!(!p.eval(&[0.5000001]));
    }

    #[test]
    fn empty_box_matches_everything() {
        assert!(Predicate::always().eval(&[]));
        assert!(Predicate::always().eval(&[1.0, -3.0]));
        assert!(!Predicate::never().eval(&[0.0]));
    }

    #[test]
    fn threshold_and_boolean_combinations() {
        let half = Predicate::Threshold {
            weights: vec![1.0, -1.0],
            bias: 0.0,
        };
        assert!(half.eval(&[0.7, 0.2]));
        assert!(!half.eval(&[0.1, 0.2]));
        let not = Predicate::Not(Box::new(half.clone()));
        assert!(not.eval(&[0.1, 0.2]));
        let both = Predicate::And(vec![half, Predicate::always()]);
        assert!(both.eval(&[0.7, 0.2]));
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = GroupFamily::from_named(vec![
            ("g", Predicate::always()),
            ("g", Predicate::never()),
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn predicate_json_round_trip() {
        let p = Predicate::And(vec![
            Predicate::Box {
                bounds: vec![CoordBound {
                    coord: 1,
                    lo: 0.0,
                    hi: 0.5,
                }],
            },
            Predicate::Not(Box::new(Predicate::Threshold {
                weights: vec![0.5, 0.5],
                bias: 0.25,
            })),
        ]);
        let s = serde_json::to_string(&p).unwrap();
        let q: Predicate = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }
}
