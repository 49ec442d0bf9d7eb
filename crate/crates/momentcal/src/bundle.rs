//! The predictor bundle: a replayable, clamped update log jointly defining
//! the mean predictor and the higher-central-moment predictors.
//!
//! Out-of-sample evaluation replays the log from the all-zeros
//! initialization, applying each clamped step to the points matched by its
//! selector. Selectors are evaluated against the replay state at that point
//! in the log, so bucket constraints refer to the predictor values as they
//! were when the update was recorded. This is the only representation that
//! reproduces training exactly on unseen points, because each step clamps
//! into `[0,1]` before the next selector is tested.

use serde::{Deserialize, Serialize};

use crate::bucket::{bucket_of, clamp01};
use crate::error::{Error, Result};
use crate::predicate::{GroupFamily, Predicate};

/// Group part of a selector: a named family member or a learned predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSel {
    /// Index into the group family the bundle is evaluated against.
    Family(usize),
    /// Free-standing predicate (learned hypotheses, domain-wide refinements).
    Learned(Predicate),
}

impl GroupSel {
    pub fn eval(&self, family: &GroupFamily, x: &[f64]) -> Result<bool> {
        match self {
            GroupSel::Family(g) => family.member(*g, x),
            GroupSel::Learned(p) => Ok(p.eval(x)),
        }
    }

    pub fn describe(&self, family: &GroupFamily) -> String {
        match self {
            GroupSel::Family(g) => family
                .get(*g)
                .map(|n| n.name.clone())
                .unwrap_or_else(|_| format!("group#{g}")),
            GroupSel::Learned(p) if p.is_always() => "domain".to_string(),
            GroupSel::Learned(_) => "learned".to_string(),
        }
    }
}

/// Constraint on one moment predictor's bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentConstraint {
    pub degree: u32,
    pub bucket: u32,
}

/// Membership test defining the set an update (or audit) applies to: a group
/// restriction, optionally a mean-prediction bucket, and optionally a
/// moment-prediction bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDescriptor {
    pub group: GroupSel,
    pub mean_bucket: Option<u32>,
    pub moment: Option<MomentConstraint>,
}

impl SetDescriptor {
    pub fn validate(&self, bucket_count: u32) -> Result<()> {
        for b in self
            .mean_bucket
            .iter()
            .chain(self.moment.iter().map(|mc| &mc.bucket))
        {
            if *b < 1 || *b > bucket_count {
                return Err(Error::InvalidParameter(format!(
                    "bucket index {b} outside 1..={bucket_count}"
                )));
            }
        }
        Ok(())
    }
}

/// Which predictor an update touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateTarget {
    Mean,
    Moment { degree: u32 },
}

/// One recorded gradient step. Replay applies
/// `state := clamp01(state - step)` to the target on matched points, so
/// `step` is the signed learning rate (rate times violation sign).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub target: UpdateTarget,
    pub step: f64,
    pub selector: SetDescriptor,
}

/// Whether moment predictors estimate central moments `E[(y-mean)^a]` or
/// absolute central moments `E[|y-mean|^a]`. Odd degrees require absolute
/// mode: signed pseudo-moment labels can leave `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    #[default]
    Central,
    Absolute,
}

/// Replayed predictor values at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Aligned with the bundle's `moment_degrees`.
    pub moments: Vec<f64>,
}

impl Prediction {
    pub fn zeros(n_degrees: usize) -> Self {
        Prediction {
            mean: 0.0,
            moments: vec![0.0; n_degrees],
        }
    }
}

/// Joint mean and moment predictors as a replayable clamped update log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorBundle {
    pub bucket_count: u32,
    pub max_degree: u32,
    pub moment_degrees: Vec<u32>,
    #[serde(default)]
    pub moment_kind: MomentKind,
    pub updates: Vec<UpdateRecord>,
}

/// Default moment degrees: every even degree in `2..=k`.
pub fn even_degrees(max_degree: u32) -> Vec<u32> {
    (2..=max_degree).filter(|a| a % 2 == 0).collect()
}

impl PredictorBundle {
    pub fn new(
        bucket_count: u32,
        max_degree: u32,
        moment_degrees: Vec<u32>,
        moment_kind: MomentKind,
    ) -> Result<Self> {
        if bucket_count == 0 {
            return Err(Error::InvalidParameter("bucket count must be positive".into()));
        }
        if max_degree < 2 {
            return Err(Error::InvalidParameter("max degree must be at least 2".into()));
        }
        let mut sorted = moment_degrees.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != moment_degrees {
            return Err(Error::InvalidParameter(
                "moment degrees must be sorted and unique".into(),
            ));
        }
        for &a in &moment_degrees {
            if a < 2 || a > max_degree {
                return Err(Error::InvalidParameter(format!(
                    "moment degree {a} outside 2..={max_degree}"
                )));
            }
            if a % 2 == 1 && moment_kind == MomentKind::Central {
                return Err(Error::InvalidParameter(format!(
                    "odd degree {a} requires absolute-central-moment mode"
                )));
            }
        }
        Ok(PredictorBundle {
            bucket_count,
            max_degree,
            moment_degrees,
            moment_kind,
            updates: Vec::new(),
        })
    }

    pub fn degree_index(&self, degree: u32) -> Option<usize> {
        self.moment_degrees.iter().position(|&a| a == degree)
    }

    pub fn push_update(&mut self, record: UpdateRecord) -> Result<()> {
        if !record.step.is_finite() {
            return Err(Error::NonFinite(record.step));
        }
        record.selector.validate(self.bucket_count)?;
        if let UpdateTarget::Moment { degree } = record.target {
            if self.degree_index(degree).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "update targets untracked moment degree {degree}"
                )));
            }
        }
        if let Some(mc) = &record.selector.moment {
            if self.degree_index(mc.degree).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "selector constrains untracked moment degree {}",
                    mc.degree
                )));
            }
        }
        self.updates.push(record);
        Ok(())
    }

    /// Does `x` satisfy `selector` given the replay state `at`?
    pub fn selector_matches(
        &self,
        family: &GroupFamily,
        selector: &SetDescriptor,
        x: &[f64],
        at: &Prediction,
    ) -> Result<bool> {
        if !selector.group.eval(family, x)? {
            return Ok(false);
        }
        if let Some(i) = selector.mean_bucket {
            if bucket_of(at.mean, self.bucket_count) != i {
                return Ok(false);
            }
        }
        if let Some(mc) = &selector.moment {
            let idx = self.degree_index(mc.degree).ok_or_else(|| {
                Error::InvalidParameter(format!("untracked moment degree {}", mc.degree))
            })?;
            if bucket_of(at.moments[idx], self.bucket_count) != mc.bucket {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn apply_record(&self, record: &UpdateRecord, state: &mut Prediction) {
        match record.target {
            UpdateTarget::Mean => state.mean = clamp01(state.mean - record.step),
            UpdateTarget::Moment { degree } => {
                // Degree validated on push.
                let idx = self.degree_index(degree).expect("tracked degree");
                state.moments[idx] = clamp01(state.moments[idx] - record.step);
            }
        }
    }

    /// Replay the update log at `x` from the all-zeros initialization.
    pub fn evaluate(&self, family: &GroupFamily, x: &[f64]) -> Result<Prediction> {
        let mut state = Prediction::zeros(self.moment_degrees.len());
        for record in &self.updates {
            if self.selector_matches(family, &record.selector, x, &state)? {
                self.apply_record(record, &mut state);
            }
        }
        Ok(state)
    }

    /// Membership of `x` in the cell named by `key`, using replayed values.
    pub fn cell_membership(&self, family: &GroupFamily, key: &CellKey, x: &[f64]) -> Result<bool> {
        let pred = self.evaluate(family, x)?;
        self.prediction_in_cell(family, key, x, &pred)
    }

    /// Cell membership when the replayed prediction is already at hand.
    pub fn prediction_in_cell(
        &self,
        family: &GroupFamily,
        key: &CellKey,
        x: &[f64],
        pred: &Prediction,
    ) -> Result<bool> {
        if !family.member(key.group, x)? {
            return Ok(false);
        }
        if bucket_of(pred.mean, self.bucket_count) != key.mean_bucket {
            return Ok(false);
        }
        if let Some(mc) = &key.moment {
            let idx = self.degree_index(mc.degree).ok_or_else(|| {
                Error::InvalidParameter(format!("untracked moment degree {}", mc.degree))
            })?;
            if bucket_of(pred.moments[idx], self.bucket_count) != mc.bucket {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Pseudo-moment observed label `(y - mean)^a`, or `|y - mean|^a` in
    /// absolute mode.
    pub fn pseudo_label(&self, degree: u32, mean: f64, y: f64) -> f64 {
        let d = y - mean;
        match self.moment_kind {
            MomentKind::Central => d.powi(degree as i32),
            MomentKind::Absolute => d.abs().powi(degree as i32),
        }
    }
}

/// A group-and-buckets cell identifier: the set of points of one group whose
/// replayed predictions fall into fixed buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKey {
    pub group: usize,
    pub mean_bucket: u32,
    pub moment: Option<MomentConstraint>,
}

impl CellKey {
    pub fn mean_only(group: usize, mean_bucket: u32) -> Self {
        CellKey {
            group,
            mean_bucket,
            moment: None,
        }
    }

    pub fn with_moment(group: usize, mean_bucket: u32, degree: u32, bucket: u32) -> Self {
        CellKey {
            group,
            mean_bucket,
            moment: Some(MomentConstraint { degree, bucket }),
        }
    }

    pub fn to_descriptor(&self) -> SetDescriptor {
        SetDescriptor {
            group: GroupSel::Family(self.group),
            mean_bucket: Some(self.mean_bucket),
            moment: self.moment,
        }
    }

    pub fn describe(&self, family: &GroupFamily) -> String {
        let name = family
            .get(self.group)
            .map(|g| g.name.clone())
            .unwrap_or_else(|_| format!("group#{}", self.group));
        match &self.moment {
            None => format!("{name}[mean@{}]", self.mean_bucket),
            Some(mc) => format!(
                "{name}[mean@{},m{}@{}]",
                self.mean_bucket, mc.degree, mc.bucket
            ),
        }
    }
}

/// Per-example replayed predictions kept in sync with an update log.
///
/// Training appends many updates and needs the current predictions for every
/// training point after each one; replaying the whole log each time is
/// quadratic. Applying a new record to states that already reflect the log
/// prefix is exactly what replay would do, so the cache stays bit-identical
/// to `PredictorBundle::evaluate`.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    pub preds: Vec<Prediction>,
}

impl ReplayCache {
    pub fn build<'a>(
        bundle: &PredictorBundle,
        family: &GroupFamily,
        xs: impl Iterator<Item = &'a [f64]>,
    ) -> Result<Self> {
        let preds = xs
            .map(|x| bundle.evaluate(family, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReplayCache { preds })
    }

    /// Advance every cached state by one record. Must be called once per
    /// appended record, in append order, with the same point list used to
    /// build the cache.
    pub fn apply<'a>(
        &mut self,
        bundle: &PredictorBundle,
        family: &GroupFamily,
        record: &UpdateRecord,
        xs: impl Iterator<Item = &'a [f64]>,
    ) -> Result<()> {
        for (state, x) in self.preds.iter_mut().zip(xs) {
            if bundle.selector_matches(family, &record.selector, x, state)? {
                bundle.apply_record(record, state);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_step(step: f64, selector: SetDescriptor) -> UpdateRecord {
        UpdateRecord {
            target: UpdateTarget::Mean,
            step,
            selector,
        }
    }

    fn domain_bucket(i: u32) -> SetDescriptor {
        SetDescriptor {
            group: GroupSel::Learned(Predicate::always()),
            mean_bucket: Some(i),
            moment: None,
        }
    }

    #[test]
    fn empty_log_evaluates_to_zero() {
        let b = PredictorBundle::new(10, 4, vec![2, 4], MomentKind::Central).unwrap();
        let fam = GroupFamily::whole_domain();
        let p = b.evaluate(&fam, &[0.3]).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.moments, vec![0.0, 0.0]);
    }

    #[test]
    fn single_step_and_projection_at_boundary() {
        let fam = GroupFamily::whole_domain();
        let mut b = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        b.push_update(mean_step(-0.1, domain_bucket(1))).unwrap();
        let p = b.evaluate(&fam, &[0.0]).unwrap();
        assert!((p.mean - 0.1).abs() < 1e-15);

        let mut b2 = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        b2.push_update(mean_step(0.1, domain_bucket(1))).unwrap();
        let p2 = b2.evaluate(&fam, &[0.0]).unwrap();
        assert_eq!(p2.mean, 0.0);
    }

    #[test]
    fn selector_buckets_follow_replay_state() {
        let fam = GroupFamily::whole_domain();
        let mut b = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        // First step moves mean into bucket 2; second step only matches
        // bucket 2, so it applies; third still targets bucket 1 and must not.
        b.push_update(mean_step(-0.15, domain_bucket(1))).unwrap();
        b.push_update(mean_step(-0.1, domain_bucket(2))).unwrap();
        b.push_update(mean_step(-0.7, domain_bucket(1))).unwrap();
        let p = b.evaluate(&fam, &[0.5]).unwrap();
        assert!((p.mean - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unknown_group_reference_errors() {
        let fam = GroupFamily::whole_domain();
        let mut b = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        b.push_update(mean_step(
            -0.1,
            SetDescriptor {
                group: GroupSel::Family(3),
                mean_bucket: Some(1),
                moment: None,
            },
        ))
        .unwrap();
        assert!(b.evaluate(&fam, &[0.0]).is_err());
    }

    #[test]
    fn odd_degrees_need_absolute_mode() {
        assert!(PredictorBundle::new(10, 3, vec![2, 3], MomentKind::Central).is_err());
        assert!(PredictorBundle::new(10, 3, vec![2, 3], MomentKind::Absolute).is_ok());
    }

    #[test]
    fn whole_domain_selector_is_allowed() {
        let fam = GroupFamily::whole_domain();
        let mut b = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        b.push_update(mean_step(
            -0.5,
            SetDescriptor {
                group: GroupSel::Learned(Predicate::always()),
                mean_bucket: None,
                moment: None,
            },
        ))
        .unwrap();
        assert_eq!(b.evaluate(&fam, &[0.0]).unwrap().mean, 0.5);
    }

    #[test]
    fn out_of_range_bucket_rejected() {
        let mut b = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        assert!(b.push_update(mean_step(-0.1, domain_bucket(11))).is_err());
        assert!(b.push_update(mean_step(-0.1, domain_bucket(0))).is_err());
    }

    #[test]
    fn cell_membership_of_empty_log() {
        let fam = GroupFamily::whole_domain();
        let b = PredictorBundle::new(10, 4, vec![2, 4], MomentKind::Central).unwrap();
        // All replayed values are 0, which lies in bucket 1.
        assert!(b
            .cell_membership(&fam, &CellKey::mean_only(0, 1), &[0.2])
            .unwrap());
        assert!(!b
            .cell_membership(&fam, &CellKey::mean_only(0, 2), &[0.2])
            .unwrap());
        assert!(b
            .cell_membership(&fam, &CellKey::with_moment(0, 1, 2, 1), &[0.2])
            .unwrap());
    }

    #[test]
    fn serialization_round_trips_exactly() {
        let mut b = PredictorBundle::new(10, 4, vec![2, 4], MomentKind::Central).unwrap();
        b.push_update(mean_step(-0.1f64 * 3.0_f64.sqrt(), domain_bucket(1)))
            .unwrap();
        b.push_update(UpdateRecord {
            target: UpdateTarget::Moment { degree: 2 },
            step: 0.3 / 7.0,
            selector: SetDescriptor {
                group: GroupSel::Learned(Predicate::Threshold {
                    weights: vec![1.0 / 3.0],
                    bias: 0.1,
                }),
                mean_bucket: Some(2),
                moment: Some(MomentConstraint {
                    degree: 2,
                    bucket: 1,
                }),
            },
        })
        .unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let b2: PredictorBundle = serde_json::from_str(&s).unwrap();
        assert_eq!(b, b2);
        assert_eq!(
            b.updates[0].step.to_bits(),
            b2.updates[0].step.to_bits()
        );
        assert_eq!(
            b.updates[1].step.to_bits(),
            b2.updates[1].step.to_bits()
        );
    }
}
