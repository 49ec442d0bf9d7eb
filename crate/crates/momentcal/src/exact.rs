//! Training with exact distribution access.
//!
//! The mean phase repeatedly finds a cell whose exact conditional mean gap
//! exceeds the mass-scaled level and applies one signed clamped step to its
//! members; after every mean step, each tracked degree runs a pseudo-moment
//! loop that drives the moment predictor toward the plug-in labels
//! `E[(y - mean(x))^a | x]` on its own cells. The alternating procedure
//! halts once no audited cell violates, which the projected-descent regret
//! argument guarantees within `ceil(1/alpha^2) - 1` outer rounds and
//! `ceil(1/beta^2) - 1` steps per inner loop; exceeding either cap in exact
//! mode is an internal logic error, not a tunable.

use serde::{Deserialize, Serialize};

use crate::bundle::{
    even_degrees, CellKey, MomentKind, PredictorBundle, ReplayCache, SetDescriptor, UpdateRecord,
    UpdateTarget,
};
use crate::cells::{mean_phase_cells, moment_phase_cells};
use crate::data::FiniteDistribution;
use crate::error::{Error, Result};
use crate::predicate::GroupFamily;
use crate::trace::{iteration_cap, HaltReason, TraceEvent, TrainReport, TrainTrace, UpdatePhase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactTrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub bucket_count: u32,
    pub max_degree: u32,
    pub moment_degrees: Vec<u32>,
    pub moment_kind: MomentKind,
    /// Scan policy: first violating cell in canonical order (default), or
    /// the cell with the largest mass-scaled violation.
    pub max_violation_search: bool,
}

impl ExactTrainConfig {
    pub fn new(alpha: f64, beta: f64, bucket_count: u32, max_degree: u32) -> Self {
        ExactTrainConfig {
            alpha,
            beta,
            bucket_count,
            max_degree,
            moment_degrees: even_degrees(max_degree),
            moment_kind: MomentKind::Central,
            max_violation_search: false,
        }
    }

    pub fn with_degrees(mut self, degrees: Vec<u32>) -> Self {
        self.moment_degrees = degrees;
        self
    }

    pub fn with_kind(mut self, kind: MomentKind) -> Self {
        self.moment_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0,1), got {v}"
                )));
            }
        }
        // Bundle construction re-checks bucket count and degree list.
        PredictorBundle::new(
            self.bucket_count,
            self.max_degree,
            self.moment_degrees.clone(),
            self.moment_kind,
        )
        .map(|_| ())
    }

    pub fn outer_cap(&self) -> u64 {
        iteration_cap(self.alpha)
    }

    pub fn inner_cap(&self) -> u64 {
        iteration_cap(self.beta)
    }

    pub fn fresh_bundle(&self) -> Result<PredictorBundle> {
        PredictorBundle::new(
            self.bucket_count,
            self.max_degree,
            self.moment_degrees.clone(),
            self.moment_kind,
        )
    }
}

/// Append one signed mean step: members of `selector` move by
/// `clamp01(mean - eta * sign)`.
pub fn mean_consistency_update(
    bundle: &mut PredictorBundle,
    selector: SetDescriptor,
    sign: i8,
    eta: f64,
) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be positive, got {eta}"
        )));
    }
    bundle.push_update(UpdateRecord {
        target: UpdateTarget::Mean,
        step: eta * f64::from(sign),
        selector,
    })
}

/// Append one signed moment step for `degree`.
pub fn moment_consistency_update(
    bundle: &mut PredictorBundle,
    degree: u32,
    selector: SetDescriptor,
    sign: i8,
    rate: f64,
) -> Result<()> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be positive, got {rate}"
        )));
    }
    bundle.push_update(UpdateRecord {
        target: UpdateTarget::Moment { degree },
        step: rate * f64::from(sign),
        selector,
    })
}

/// Mass-weighted per-cell sums: `mass`, `sum mass * predicted`,
/// `sum mass * observed-expectation`.
#[derive(Debug, Clone, Copy, Default)]
struct MassStat {
    mass: f64,
    wpred: f64,
    wobs: f64,
}

struct ExactSums {
    m: u32,
    degrees: Vec<u32>,
    mean_cells: Vec<MassStat>,
    moment_cells: Vec<MassStat>,
}

impl ExactSums {
    fn mean_idx(&self, g: usize, i: u32) -> usize {
        g * self.m as usize + (i - 1) as usize
    }

    fn moment_idx(&self, g: usize, d: usize, i: u32, j: u32) -> usize {
        ((g * self.degrees.len() + d) * self.m as usize + (i - 1) as usize) * self.m as usize
            + (j - 1) as usize
    }

    fn stat(&self, cell: &CellKey) -> Result<MassStat> {
        match &cell.moment {
            None => Ok(self.mean_cells[self.mean_idx(cell.group, cell.mean_bucket)]),
            Some(mc) => {
                let d = self
                    .degrees
                    .iter()
                    .position(|&a| a == mc.degree)
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!("untracked moment degree {}", mc.degree))
                    })?;
                Ok(self.moment_cells[self.moment_idx(cell.group, d, cell.mean_bucket, mc.bucket)])
            }
        }
    }
}

/// A found violation: cell, sign, conditional gap, and cell mass.
struct FoundViolation {
    cell: CellKey,
    sign: i8,
    gap: f64,
    mass: f64,
}

/// Scan cells in order for `mass * |gap| >= level`; first match, or the
/// largest mass-scaled violation under max-search.
fn find_violation(
    sums: &ExactSums,
    cells: &[CellKey],
    level: f64,
    max_search: bool,
) -> Result<Option<FoundViolation>> {
    let mut best: Option<(f64, FoundViolation)> = None;
    for cell in cells {
        let st = sums.stat(cell)?;
        if st.mass <= 0.0 {
            continue;
        }
        let wdiff = st.wpred - st.wobs;
        if wdiff.abs() >= level {
            let found = FoundViolation {
                cell: *cell,
                sign: if wdiff > 0.0 { 1 } else { -1 },
                gap: wdiff / st.mass,
                mass: st.mass,
            };
            if !max_search {
                return Ok(Some(found));
            }
            if best.as_ref().map(|(w, _)| wdiff.abs() > *w).unwrap_or(true) {
                best = Some((wdiff.abs(), found));
            }
        }
    }
    Ok(best.map(|(_, f)| f))
}

/// Shared exact-mode training state: the bundle, per-point replayed values,
/// and the static per-point masses, label means, and group memberships.
pub struct ExactTrainer<'a> {
    pub config: ExactTrainConfig,
    dist: &'a FiniteDistribution,
    family: &'a GroupFamily,
    pub bundle: PredictorBundle,
    cache: ReplayCache,
    member: Vec<Vec<bool>>,
    masses: Vec<f64>,
    point_mean: Vec<f64>,
    pub trace: TrainTrace,
}

pub struct ExactOutcome {
    pub bundle: PredictorBundle,
    pub report: TrainReport,
    pub trace: TrainTrace,
}

impl<'a> ExactTrainer<'a> {
    pub fn new(
        config: ExactTrainConfig,
        dist: &'a FiniteDistribution,
        family: &'a GroupFamily,
    ) -> Result<Self> {
        config.validate()?;
        family.check_dim(dist.dim())?;
        Self::with_bundle(config.fresh_bundle()?, config, dist, family)
    }

    /// Start from an existing bundle (used by the standalone pseudo-moment
    /// loop and by tests that pre-position the predictors).
    pub fn with_bundle(
        bundle: PredictorBundle,
        config: ExactTrainConfig,
        dist: &'a FiniteDistribution,
        family: &'a GroupFamily,
    ) -> Result<Self> {
        let cache = ReplayCache::build(
            &bundle,
            family,
            dist.support.iter().map(|p| p.features.values.as_slice()),
        )?;
        let member = (0..family.len())
            .map(|g| {
                dist.support
                    .iter()
                    .map(|p| family.member(g, &p.features.values))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExactTrainer {
            config,
            dist,
            family,
            cache,
            member,
            masses: dist.support.iter().map(|p| p.mass).collect(),
            point_mean: dist.point_means(),
            bundle,
            trace: TrainTrace::default(),
        })
    }

    fn apply(&mut self, record: UpdateRecord) -> Result<()> {
        self.bundle.push_update(record.clone())?;
        self.cache.apply(
            &self.bundle,
            self.family,
            &record,
            self.dist.support.iter().map(|p| p.features.values.as_slice()),
        )
    }

    /// Exact squared-error potential of the mean predictor against the true
    /// conditional means.
    pub fn mean_potential(&self) -> f64 {
        self.masses
            .iter()
            .zip(&self.cache.preds)
            .zip(&self.point_mean)
            .map(|((mass, pred), mu)| mass * (pred.mean - mu).powi(2))
            .sum()
    }

    /// Plug-in pseudo-moment labels `E[(y - mean(x))^degree | x]` under the
    /// current mean predictor.
    pub fn pseudo_labels(&self, degree: u32) -> Vec<f64> {
        self.dist
            .support
            .iter()
            .zip(&self.cache.preds)
            .map(|(pt, pred)| {
                pt.label_expectation(|y| self.bundle.pseudo_label(degree, pred.mean, y))
            })
            .collect()
    }

    /// Squared-error potential of one moment predictor against the current
    /// pseudo-moment labels.
    pub fn moment_potential(&self, degree: u32, pseudo: &[f64]) -> f64 {
        let d = self.bundle.degree_index(degree).expect("tracked degree");
        self.masses
            .iter()
            .zip(&self.cache.preds)
            .zip(pseudo)
            .map(|((mass, pred), label)| mass * (pred.moments[d] - label).powi(2))
            .sum()
    }

    fn mean_phase_sums(&self) -> ExactSums {
        let m = self.bundle.bucket_count;
        let degrees = self.bundle.moment_degrees.clone();
        let n_groups = self.family.len();
        let mut sums = ExactSums {
            m,
            degrees,
            mean_cells: vec![MassStat::default(); n_groups * m as usize],
            moment_cells: vec![
                MassStat::default();
                n_groups * self.bundle.moment_degrees.len() * (m as usize).pow(2)
            ],
        };
        for (s, pred) in self.cache.preds.iter().enumerate() {
            let mass = self.masses[s];
            let wpred = mass * pred.mean;
            let wobs = mass * self.point_mean[s];
            let i = crate::bucket::bucket_of(pred.mean, m);
            for g in 0..n_groups {
                if !self.member[g][s] {
                    continue;
                }
                let idx = sums.mean_idx(g, i);
                let st = &mut sums.mean_cells[idx];
                st.mass += mass;
                st.wpred += wpred;
                st.wobs += wobs;
                for (d, &mom) in pred.moments.iter().enumerate() {
                    let j = crate::bucket::bucket_of(mom, m);
                    let idx = sums.moment_idx(g, d, i, j);
                    let st = &mut sums.moment_cells[idx];
                    st.mass += mass;
                    st.wpred += wpred;
                    st.wobs += wobs;
                }
            }
        }
        sums
    }

    fn moment_phase_sums(&self, degree: u32, pseudo: &[f64]) -> ExactSums {
        let m = self.bundle.bucket_count;
        let d_idx = self.bundle.degree_index(degree).expect("tracked degree");
        let n_groups = self.family.len();
        let mut sums = ExactSums {
            m,
            degrees: vec![degree],
            mean_cells: vec![MassStat::default(); n_groups * m as usize],
            moment_cells: vec![MassStat::default(); n_groups * (m as usize).pow(2)],
        };
        for (s, pred) in self.cache.preds.iter().enumerate() {
            let mass = self.masses[s];
            let wpred = mass * pred.moments[d_idx];
            let wobs = mass * pseudo[s];
            let i = crate::bucket::bucket_of(pred.mean, m);
            let j = crate::bucket::bucket_of(pred.moments[d_idx], m);
            for g in 0..n_groups {
                if !self.member[g][s] {
                    continue;
                }
                let idx = sums.moment_idx(g, 0, i, j);
                let st = &mut sums.moment_cells[idx];
                st.mass += mass;
                st.wpred += wpred;
                st.wobs += wobs;
            }
        }
        sums
    }

    /// Run one pseudo-moment loop for `degree` with the mean predictor
    /// frozen. Returns the number of steps taken.
    pub fn pseudo_moment_loop(&mut self, degree: u32, outer_round: u64) -> Result<u64> {
        let cap = self.config.inner_cap();
        let cells = moment_phase_cells(self.family.len(), self.bundle.bucket_count, degree);
        let pseudo = self.pseudo_labels(degree);
        let mut steps = 0u64;
        loop {
            let sums = self.moment_phase_sums(degree, &pseudo);
            let found = find_violation(
                &sums,
                &cells,
                self.config.beta,
                self.config.max_violation_search,
            )?;
            let Some(v) = found else {
                return Ok(steps);
            };
            steps += 1;
            if steps > cap {
                return Err(Error::IterationCap(format!(
                    "pseudo-moment loop for degree {degree} exceeded its cap of {cap} steps; \
                     the exact-mode convergence guarantee is violated (internal logic error)"
                )));
            }
            let before = self.moment_potential(degree, &pseudo);
            let selector = v.cell.to_descriptor();
            self.apply(UpdateRecord {
                target: UpdateTarget::Moment { degree },
                step: self.config.beta * f64::from(v.sign),
                selector: selector.clone(),
            })?;
            self.trace.events.push(TraceEvent {
                phase: UpdatePhase::Moment { degree },
                outer_round,
                selector,
                sign: v.sign,
                violation: v.gap,
                mass: v.mass,
                potential_before: Some(before),
                potential_after: Some(self.moment_potential(degree, &pseudo)),
            });
        }
    }

    /// Full alternating descent from the zero-initialized bundle.
    pub fn run(mut self) -> Result<ExactOutcome> {
        let outer_cap = self.config.outer_cap();
        let mut report = TrainReport::new(outer_cap, self.config.inner_cap());
        let cells = mean_phase_cells(
            self.family.len(),
            self.bundle.bucket_count,
            &self.bundle.moment_degrees,
        );
        loop {
            let sums = self.mean_phase_sums();
            let found = find_violation(
                &sums,
                &cells,
                self.config.alpha,
                self.config.max_violation_search,
            )?;
            let Some(v) = found else {
                report.halt_reason = HaltReason::Converged;
                break;
            };
            report.outer_iterations += 1;
            if report.outer_iterations > outer_cap {
                return Err(Error::IterationCap(format!(
                    "alternating descent exceeded its cap of {outer_cap} outer rounds; \
                     the exact-mode convergence guarantee is violated (internal logic error)"
                )));
            }
            let before = self.mean_potential();
            let selector = v.cell.to_descriptor();
            self.apply(UpdateRecord {
                target: UpdateTarget::Mean,
                step: self.config.alpha * f64::from(v.sign),
                selector: selector.clone(),
            })?;
            report.record_mean_update();
            self.trace.events.push(TraceEvent {
                phase: UpdatePhase::Mean,
                outer_round: report.outer_iterations,
                selector,
                sign: v.sign,
                violation: v.gap,
                mass: v.mass,
                potential_before: Some(before),
                potential_after: Some(self.mean_potential()),
            });
            for degree in self.bundle.moment_degrees.clone() {
                let steps = self.pseudo_moment_loop(degree, report.outer_iterations)?;
                for _ in 0..steps {
                    report.record_moment_update(degree);
                }
            }
        }
        Ok(ExactOutcome {
            bundle: self.bundle,
            report,
            trace: self.trace,
        })
    }
}

/// Standalone pseudo-moment loop on an existing bundle (the mean predictor
/// stays fixed for the duration of the call).
pub fn exact_pseudo_moment_loop(
    degree: u32,
    beta: f64,
    bundle: &mut PredictorBundle,
    dist: &FiniteDistribution,
    family: &GroupFamily,
) -> Result<u64> {
    let mut config = ExactTrainConfig::new(0.5, beta, bundle.bucket_count, bundle.max_degree)
        .with_degrees(bundle.moment_degrees.clone())
        .with_kind(bundle.moment_kind);
    config.beta = beta;
    let mut trainer = ExactTrainer::with_bundle(bundle.clone(), config, dist, family)?;
    let steps = trainer.pseudo_moment_loop(degree, 0)?;
    *bundle = trainer.bundle;
    Ok(steps)
}

/// Alternating descent against an exactly known finite distribution.
pub fn exact_alternating_descent(
    config: &ExactTrainConfig,
    dist: &FiniteDistribution,
    family: &GroupFamily,
) -> Result<ExactOutcome> {
    ExactTrainer::new(config.clone(), dist, family)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::GroupSel;
    use crate::data::{FeatureVector, SupportPoint};
    use crate::predicate::{CoordBound, Predicate};

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

    fn domain_selector() -> SetDescriptor {
        SetDescriptor {
            group: GroupSel::Learned(Predicate::always()),
            mean_bucket: None,
            moment: None,
        }
    }

    #[test]
    fn mean_update_examples() {
        let fam = GroupFamily::whole_domain();
        let mut b = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        // Position the mean at 0.5 everywhere, then one signed step.
        mean_consistency_update(&mut b, domain_selector(), -1, 0.5).unwrap();
        mean_consistency_update(&mut b, domain_selector(), -1, 0.1).unwrap();
        assert!((b.evaluate(&fam, &[0.3]).unwrap().mean - 0.6).abs() < 1e-15);

        // Projection floor: stepping down from zero stays at zero.
        let mut b2 = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        mean_consistency_update(&mut b2, domain_selector(), 1, 0.1).unwrap();
        assert_eq!(b2.evaluate(&fam, &[0.3]).unwrap().mean, 0.0);

        // Empty selector leaves every evaluation unchanged.
        let mut b3 = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        mean_consistency_update(
            &mut b3,
            SetDescriptor {
                group: GroupSel::Learned(Predicate::never()),
                mean_bucket: None,
                moment: None,
            },
            -1,
            0.1,
        )
        .unwrap();
        assert_eq!(b3.evaluate(&fam, &[0.3]).unwrap().mean, 0.0);
    }

    #[test]
    fn pseudo_moment_loop_no_op_when_labels_match() {
        // Labels deterministically equal the replayed mean (zero), so every
        // pseudo-moment label is zero and the zero-initialized predictor is
        // already consistent.
        let dist = FiniteDistribution::new(vec![point("x", 0.5, 1.0, vec![(0.0, 1.0)])]).unwrap();
        let fam = GroupFamily::whole_domain();
        let mut b = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        let steps = exact_pseudo_moment_loop(2, 0.3, &mut b, &dist, &fam).unwrap();
        assert_eq!(steps, 0);
        assert!(b.updates.is_empty());
    }

    #[test]
    fn pseudo_moment_loop_steps_toward_constant_label() {
        // One populated cell with plug-in moment 0.5 forces at least one
        // +0.3 step on that cell.
        let dist =
            FiniteDistribution::new(vec![point("x", 0.5, 1.0, vec![(0.0, 0.5), (1.0, 0.5)])])
                .unwrap();
        let fam = GroupFamily::whole_domain();
        let mut b = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        let steps = exact_pseudo_moment_loop(2, 0.3, &mut b, &dist, &fam).unwrap();
        assert!(steps >= 1);
        let pred = b.evaluate(&fam, &[0.5]).unwrap();
        assert!(pred.moments[0] >= 0.3 - 1e-15);
        // Exit condition: no remaining violating cell at level beta.
        let trainer = ExactTrainer::with_bundle(
            b.clone(),
            ExactTrainConfig::new(0.5, 0.3, 10, 2).with_degrees(vec![2]),
            &dist,
            &fam,
        )
        .unwrap();
        let pseudo = trainer.pseudo_labels(2);
        let sums = trainer.moment_phase_sums(2, &pseudo);
        let cells = moment_phase_cells(1, 10, 2);
        assert!(find_violation(&sums, &cells, 0.3, false).unwrap().is_none());
    }

    #[test]
    fn pseudo_moment_loop_with_true_means_exits_consistent() {
        // With the mean predictor replaying the true conditional means of
        // the two-point data, the plug-in moment labels vanish; brute-force
        // enumeration confirms the exit condition on every cell.
        let dist = two_point();
        let fam = GroupFamily::whole_domain();
        let mut b = PredictorBundle::new(20, 2, vec![2], MomentKind::Central).unwrap();
        mean_consistency_update(
            &mut b,
            SetDescriptor {
                group: GroupSel::Learned(Predicate::Box {
                    bounds: vec![CoordBound {
                        coord: 0,
                        lo: 0.5,
                        hi: 1.5,
                    }],
                }),
                mean_bucket: None,
                moment: None,
            },
            -1,
            1.0,
        )
        .unwrap();
        let beta = 0.05;
        let steps = exact_pseudo_moment_loop(2, beta, &mut b, &dist, &fam).unwrap();
        assert_eq!(steps, 0);
        let trainer = ExactTrainer::with_bundle(
            b,
            ExactTrainConfig::new(0.5, beta, 20, 2).with_degrees(vec![2]),
            &dist,
            &fam,
        )
        .unwrap();
        let pseudo = trainer.pseudo_labels(2);
        for cell in moment_phase_cells(1, 20, 2) {
            let sums = trainer.moment_phase_sums(2, &pseudo);
            let st = sums.stat(&cell).unwrap();
            if st.mass > 0.0 {
                assert!((st.wpred - st.wobs).abs() < beta);
            }
        }
    }

    #[test]
    fn deterministic_zero_labels_halt_immediately() {
        let dist = FiniteDistribution::new(vec![
            point("a", 0.2, 0.5, vec![(0.0, 1.0)]),
            point("b", 0.8, 0.5, vec![(0.0, 1.0)]),
        ])
        .unwrap();
        let fam = GroupFamily::whole_domain();
        let config = ExactTrainConfig::new(0.1, 0.1, 10, 4);
        let out = exact_alternating_descent(&config, &dist, &fam).unwrap();
        assert_eq!(out.report.outer_iterations, 0);
        assert_eq!(out.report.total_updates, 0);
        assert!(out.bundle.updates.is_empty());
    }

    #[test]
    fn pooled_two_point_family_calibrates_to_the_mixture() {
        // With only the trivial group, predicting the pooled mean 1/2 for
        // both points and pooled variance 1/4 is exactly the calibrated
        // answer: the cell of points sharing a prediction mixes both labels.
        let dist = two_point();
        let fam = GroupFamily::whole_domain();
        let config = ExactTrainConfig::new(0.05, 0.05, 20, 2);
        let out = exact_alternating_descent(&config, &dist, &fam).unwrap();
        let p = out.bundle.evaluate(&fam, &[0.0]).unwrap();
        assert!((p.mean - 0.5).abs() < 0.1, "pooled mean = {}", p.mean);
        assert!(
            (p.moments[0] - 0.25).abs() < 0.1,
            "pooled variance = {}",
            p.moments[0]
        );
    }

    #[test]
    fn two_point_descent_converges_and_respects_caps() {
        let dist = two_point();
        // A separating family forces the per-point conditional means.
        let fam = GroupFamily::from_named(vec![
            ("all", Predicate::always()),
            (
                "low",
                Predicate::Box {
                    bounds: vec![CoordBound {
                        coord: 0,
                        lo: -0.5,
                        hi: 0.5,
                    }],
                },
            ),
            (
                "high",
                Predicate::Box {
                    bounds: vec![CoordBound {
                        coord: 0,
                        lo: 0.5,
                        hi: 1.5,
                    }],
                },
            ),
        ])
        .unwrap();
        let config = ExactTrainConfig::new(0.05, 0.05, 20, 2);
        let out = exact_alternating_descent(&config, &dist, &fam).unwrap();
        assert!(out.report.outer_iterations <= config.outer_cap());
        assert!(out.report.total_updates <= out.report.update_cap(1));
        // Post-convergence: no audited cell still violates at level alpha.
        let trainer =
            ExactTrainer::with_bundle(out.bundle.clone(), config.clone(), &dist, &fam).unwrap();
        let sums = trainer.mean_phase_sums();
        let cells = mean_phase_cells(3, 20, &[2]);
        assert!(find_violation(&sums, &cells, config.alpha, false)
            .unwrap()
            .is_none());
        // Each point's mass is 1/2, so its cell-level budget is alpha/0.5.
        let p0 = out.bundle.evaluate(&fam, &[0.0]).unwrap();
        let p1 = out.bundle.evaluate(&fam, &[1.0]).unwrap();
        assert!(p0.mean <= 0.05 / 0.5 + 1e-12, "mean at x1 = {}", p0.mean);
        assert!(p1.mean >= 1.0 - 0.05 / 0.5 - 1e-12, "mean at x2 = {}", p1.mean);
    }

    #[test]
    fn trace_potentials_decrease_by_the_guaranteed_margin() {
        let dist = FiniteDistribution::new(vec![
            point("a", 0.1, 0.25, vec![(0.9, 1.0)]),
            point("b", 0.4, 0.25, vec![(0.1, 0.5), (0.9, 0.5)]),
            point("c", 0.6, 0.25, vec![(0.3, 1.0)]),
            point("d", 0.9, 0.25, vec![(0.2, 0.5), (0.6, 0.5)]),
        ])
        .unwrap();
        let fam = GroupFamily::from_named(vec![
            ("all", Predicate::always()),
            (
                "low",
                Predicate::Box {
                    bounds: vec![CoordBound {
                        coord: 0,
                        lo: 0.0,
                        hi: 0.5,
                    }],
                },
            ),
        ])
        .unwrap();
        let config = ExactTrainConfig::new(0.1, 0.1, 10, 2);
        let out = exact_alternating_descent(&config, &dist, &fam).unwrap();
        assert!(out.report.total_updates > 0);
        for ev in &out.trace.events {
            let rate = match ev.phase {
                UpdatePhase::Mean => config.alpha,
                UpdatePhase::Moment { .. } => config.beta,
            };
            let drop = ev.potential_before.unwrap() - ev.potential_after.unwrap();
            let margin = 2.0 * rate * rate - rate * rate * ev.mass;
            assert!(
                drop >= margin - 1e-9,
                "potential drop {drop} below margin {margin}"
            );
        }
    }
}
