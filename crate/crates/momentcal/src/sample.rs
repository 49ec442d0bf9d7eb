//! Finite-sample training: fresh-block sources and the sample-mode
//! pseudo-moment and alternating-descent loops.
//!
//! Every audit consumes one fresh block of `n` examples; blocks are never
//! reused, because the audited predictors and cell collections change
//! adaptively between rounds. An audit verdict is a true mass-scaled
//! violation with high probability, so the exact-mode iteration caps carry
//! over as high-probability bounds: a cap overrun is a statistical failure
//! event that is logged and counted, never silently discarded, and training
//! continues to the auditor's NULL (a hard stop far beyond the cap guards
//! against a broken source).

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::auditor::{chernoff_radius, BlockEval, CellAuditRecord, CellSums, SingleSetAudit};
use crate::bundle::{
    even_degrees, CellKey, MomentKind, PredictorBundle, UpdateRecord, UpdateTarget,
};
use crate::cells::{mean_phase_cells, moment_phase_cells};
use crate::data::{FeatureVector, FiniteDistribution, LabeledExample, SampleBlock};
use crate::error::{Error, Result};
use crate::predicate::GroupFamily;
use crate::trace::{iteration_cap, HaltReason, TraceEvent, TrainReport, TrainTrace, UpdatePhase};

/// Single-consumer source of fresh sample blocks.
pub trait SampleStream {
    fn dim(&self) -> usize;
    fn draw_block(&mut self, n: usize) -> Result<SampleBlock>;
}

/// Seeded sampler over a finite-support distribution.
pub struct DistributionSampler {
    dist: FiniteDistribution,
    cdf: Vec<f64>,
    rng: ChaCha8Rng,
}

impl DistributionSampler {
    pub fn new(dist: FiniteDistribution, seed: u64) -> Self {
        let mut acc = 0.0;
        let cdf = dist
            .support
            .iter()
            .map(|p| {
                acc += p.mass;
                acc
            })
            .collect();
        DistributionSampler {
            dist,
            cdf,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn draw_point(&mut self) -> usize {
        let u = self.rng.random::<f64>();
        match self
            .cdf
            .binary_search_by(|probe| probe.partial_cmp(&u).expect("finite cdf"))
        {
            Ok(i) | Err(i) => i.min(self.dist.support.len() - 1),
        }
    }

    fn draw_label(&mut self, point: usize) -> f64 {
        let u = self.rng.random::<f64>();
        let mut acc = 0.0;
        let labels = &self.dist.support[point].labels;
        for &(y, p) in labels {
            acc += p;
            if u < acc {
                return y;
            }
        }
        labels.last().expect("nonempty law").0
    }

    /// Draw labeled examples (evaluation-side convenience; ids are
    /// sequential placeholders).
    pub fn draw_examples(&mut self, n: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| {
                let pt = self.draw_point();
                let y = self.draw_label(pt);
                LabeledExample {
                    features: FeatureVector {
                        id: format!("s{i}"),
                        values: self.dist.support[pt].features.values.clone(),
                    },
                    label: y,
                }
            })
            .collect()
    }
}

impl SampleStream for DistributionSampler {
    fn dim(&self) -> usize {
        self.dist.dim()
    }

    fn draw_block(&mut self, n: usize) -> Result<SampleBlock> {
        let mut block = SampleBlock::with_capacity(self.dim(), n);
        for _ in 0..n {
            let pt = self.draw_point();
            let y = self.draw_label(pt);
            block.push(&self.dist.support[pt].features.values, y);
        }
        Ok(block)
    }
}

/// Exhaustible pool of pre-drawn examples consumed in disjoint blocks.
pub struct PoolSource {
    pool: SampleBlock,
    cursor: usize,
    blocks_consumed: usize,
}

impl PoolSource {
    pub fn new(pool: SampleBlock) -> Self {
        PoolSource {
            pool,
            cursor: 0,
            blocks_consumed: 0,
        }
    }

    pub fn from_examples(dim: usize, examples: &[LabeledExample]) -> Result<Self> {
        Ok(Self::new(SampleBlock::from_examples(dim, examples)?))
    }

    pub fn remaining(&self) -> usize {
        self.pool.len() - self.cursor
    }
}

impl SampleStream for PoolSource {
    fn dim(&self) -> usize {
        self.pool.dim
    }

    fn draw_block(&mut self, n: usize) -> Result<SampleBlock> {
        if self.remaining() < n {
            return Err(Error::PoolExhausted {
                block_size: n,
                remaining: self.remaining(),
                blocks_consumed: self.blocks_consumed,
                deficit: n - self.remaining(),
            });
        }
        let dim = self.pool.dim;
        let lo = self.cursor;
        let hi = self.cursor + n;
        self.cursor = hi;
        self.blocks_consumed += 1;
        Ok(SampleBlock {
            dim,
            xs: self.pool.xs[lo * dim..hi * dim].to_vec(),
            labels: self.pool.labels[lo..hi].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// Fresh-block size.
    pub n: usize,
    pub bucket_count: u32,
    pub max_degree: u32,
    pub moment_degrees: Vec<u32>,
    pub moment_kind: MomentKind,
}

impl SampleTrainConfig {
    pub fn new(alpha: f64, beta: f64, delta: f64, n: usize, bucket_count: u32, max_degree: u32) -> Self {
        SampleTrainConfig {
            alpha,
            beta,
            delta,
            n,
            bucket_count,
            max_degree,
            moment_degrees: even_degrees(max_degree),
            moment_kind: MomentKind::Central,
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
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("block size must be positive".into()));
        }
        let bound = 2.0 * chernoff_radius(self.delta, self.n as f64);
        if bound > self.alpha || bound > self.beta {
            return Err(Error::InvalidParameter(format!(
                "precondition violated: 2*sqrt(ln(2/delta)/(2n)) = {bound} must not exceed \
                 alpha = {} or beta = {}",
                self.alpha, self.beta
            )));
        }
        self.fresh_bundle().map(|_| ())
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

pub struct SampleOutcome {
    pub bundle: PredictorBundle,
    pub report: TrainReport,
    pub trace: TrainTrace,
}

/// A violating cell together with the audit measurements that flagged it.
pub(crate) struct SampleViolation {
    pub cell: CellKey,
    pub sign: i8,
    pub audit: SingleSetAudit,
}

/// Scan cells in order and return the first empirical violation.
pub(crate) fn first_sample_violation(
    sums: &CellSums,
    cells: &[CellKey],
    level: f64,
    delta: f64,
    mut trace: Option<&mut Vec<CellAuditRecord>>,
) -> Result<Option<SampleViolation>> {
    for cell in cells {
        let st = sums.stat(cell)?;
        let audit =
            crate::auditor::threshold_test(st.sum_pred, st.sum_obs, st.count, sums.n, level, delta)?;
        let violation = audit.violation;
        if let Some(records) = trace.as_deref_mut() {
            records.push(CellAuditRecord {
                cell: *cell,
                audit: audit.clone(),
            });
        }
        if let Some(sign) = violation {
            return Ok(Some(SampleViolation {
                cell: *cell,
                sign,
                audit,
            }));
        }
    }
    Ok(None)
}

/// Hard stop well past the high-probability cap; reaching it means the
/// source keeps producing violations that the descent cannot absorb.
fn hard_stop(cap: u64) -> u64 {
    10 * cap + 100
}

pub struct SampleTrainer<'a, S: SampleStream + ?Sized> {
    pub config: SampleTrainConfig,
    family: &'a GroupFamily,
    source: &'a mut S,
    pub bundle: PredictorBundle,
    pub report: TrainReport,
    pub trace: TrainTrace,
    warned_empty_groups: bool,
}

impl<'a, S: SampleStream + ?Sized> SampleTrainer<'a, S> {
    pub fn new(config: SampleTrainConfig, source: &'a mut S, family: &'a GroupFamily) -> Result<Self> {
        config.validate()?;
        family.check_dim(source.dim())?;
        let bundle = config.fresh_bundle()?;
        let report = TrainReport::new(config.outer_cap(), config.inner_cap());
        Ok(SampleTrainer {
            config,
            family,
            source,
            bundle,
            report,
            trace: TrainTrace::default(),
            warned_empty_groups: false,
        })
    }

    pub fn with_bundle(
        bundle: PredictorBundle,
        config: SampleTrainConfig,
        source: &'a mut S,
        family: &'a GroupFamily,
    ) -> Result<Self> {
        config.validate()?;
        family.check_dim(source.dim())?;
        let report = TrainReport::new(config.outer_cap(), config.inner_cap());
        Ok(SampleTrainer {
            config,
            family,
            source,
            bundle,
            report,
            trace: TrainTrace::default(),
            warned_empty_groups: false,
        })
    }

    fn draw_eval(&mut self) -> Result<(SampleBlock, BlockEval)> {
        let block = self.source.draw_block(self.config.n)?;
        self.report.blocks_consumed += 1;
        self.report.samples_consumed += block.len() as u64;
        let ev = BlockEval::build(&self.bundle, self.family, &block)?;
        if !self.warned_empty_groups {
            for (g, members) in ev.group_member.iter().enumerate() {
                if !members.iter().any(|&b| b) {
                    log::warn!(
                        "group {:?} has zero empirical mass in the drawn block",
                        self.family.get(g).map(|n| n.name.clone()).unwrap_or_default()
                    );
                    self.warned_empty_groups = true;
                }
            }
        }
        Ok((block, ev))
    }

    fn apply(&mut self, record: UpdateRecord) -> Result<()> {
        self.bundle.push_update(record)
    }

    /// One pseudo-moment loop for `degree`; the mean predictor is frozen.
    pub fn pseudo_moment_loop(&mut self, degree: u32, outer_round: u64) -> Result<u64> {
        let cap = self.config.inner_cap();
        let cells = moment_phase_cells(self.family.len(), self.bundle.bucket_count, degree);
        let mut steps = 0u64;
        loop {
            let (block, ev) = self.draw_eval()?;
            let sums = CellSums::moment_phase(&ev, &block.labels, &self.bundle, degree)?;
            let found =
                first_sample_violation(&sums, &cells, self.config.beta, self.config.delta, None)?;
            let Some(v) = found else {
                return Ok(steps);
            };
            steps += 1;
            if steps == cap + 1 {
                self.report.statistical_failures += 1;
                log::warn!(
                    "pseudo-moment loop for degree {degree} exceeded its high-probability cap \
                     of {cap} steps (statistical failure event); continuing"
                );
            }
            if steps > hard_stop(cap) {
                return Err(Error::IterationCap(format!(
                    "pseudo-moment loop for degree {degree} still violating after {steps} steps \
                     (hard stop at {} = 10x cap + 100)",
                    hard_stop(cap)
                )));
            }
            let selector = v.cell.to_descriptor();
            self.apply(UpdateRecord {
                target: UpdateTarget::Moment { degree },
                step: self.config.beta * f64::from(v.sign),
                selector: selector.clone(),
            })?;
            self.report.record_moment_update(degree);
            self.trace.events.push(TraceEvent {
                phase: UpdatePhase::Moment { degree },
                outer_round,
                selector,
                sign: v.sign,
                violation: v.audit.predicted_avg.unwrap_or(f64::NAN)
                    - v.audit.observed_avg.unwrap_or(f64::NAN),
                mass: v.audit.n_prime as f64 / self.config.n as f64,
                potential_before: None,
                potential_after: None,
            });
        }
    }

    /// Alternating descent driven by fresh-block audits.
    pub fn run(mut self) -> Result<SampleOutcome> {
        let outer_cap = self.config.outer_cap();
        let cells = mean_phase_cells(
            self.family.len(),
            self.bundle.bucket_count,
            &self.bundle.moment_degrees.clone(),
        );
        loop {
            let (block, ev) = self.draw_eval()?;
            let sums = CellSums::mean_phase(&ev, &block.labels, &self.bundle);
            let found =
                first_sample_violation(&sums, &cells, self.config.alpha, self.config.delta, None)?;
            let Some(v) = found else {
                break;
            };
            self.report.outer_iterations += 1;
            if self.report.outer_iterations == outer_cap + 1 {
                self.report.statistical_failures += 1;
                log::warn!(
                    "alternating descent exceeded its high-probability cap of {outer_cap} \
                     outer rounds (statistical failure event); continuing"
                );
            }
            if self.report.outer_iterations > hard_stop(outer_cap) {
                return Err(Error::IterationCap(format!(
                    "alternating descent still violating after {} rounds (hard stop)",
                    self.report.outer_iterations
                )));
            }
            let selector = v.cell.to_descriptor();
            self.apply(UpdateRecord {
                target: UpdateTarget::Mean,
                step: self.config.alpha * f64::from(v.sign),
                selector: selector.clone(),
            })?;
            self.report.record_mean_update();
            self.trace.events.push(TraceEvent {
                phase: UpdatePhase::Mean,
                outer_round: self.report.outer_iterations,
                selector,
                sign: v.sign,
                violation: v.audit.predicted_avg.unwrap_or(f64::NAN)
                    - v.audit.observed_avg.unwrap_or(f64::NAN),
                mass: v.audit.n_prime as f64 / self.config.n as f64,
                potential_before: None,
                potential_after: None,
            });
            for degree in self.bundle.moment_degrees.clone() {
                let round = self.report.outer_iterations;
                self.pseudo_moment_loop(degree, round)?;
            }
        }
        if self.report.statistical_failures > 0 {
            self.report.halt_reason = HaltReason::ConvergedWithCapOverrun;
        }
        Ok(SampleOutcome {
            bundle: self.bundle,
            report: self.report,
            trace: self.trace,
        })
    }
}

/// Standalone sample-mode pseudo-moment loop on an existing bundle.
pub fn sample_pseudo_moment_loop<S: SampleStream + ?Sized>(
    degree: u32,
    config: &SampleTrainConfig,
    bundle: &mut PredictorBundle,
    source: &mut S,
    family: &GroupFamily,
) -> Result<u64> {
    let mut trainer = SampleTrainer::with_bundle(bundle.clone(), config.clone(), source, family)?;
    let steps = trainer.pseudo_moment_loop(degree, 0)?;
    *bundle = trainer.bundle;
    Ok(steps)
}

/// Sample-mode alternating descent from the zero-initialized bundle.
pub fn sample_alternating_descent<S: SampleStream + ?Sized>(
    config: &SampleTrainConfig,
    source: &mut S,
    family: &GroupFamily,
) -> Result<SampleOutcome> {
    SampleTrainer::new(config.clone(), source, family)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticSpec;

    #[test]
    fn pool_blocks_are_disjoint_and_exhaust_with_deficit() {
        let spec = SyntheticSpec::ConstantLabel { dim: 1, value: 0.5 };
        let pool = spec.stream(3).unwrap().draw_block(25).unwrap();
        let mut source = PoolSource::new(pool.clone());
        let b1 = source.draw_block(10).unwrap();
        let b2 = source.draw_block(10).unwrap();
        assert_eq!(b1.xs, pool.xs[0..10]);
        assert_eq!(b2.xs, pool.xs[10..20]);
        let err = source.draw_block(10).unwrap_err();
        match err {
            Error::PoolExhausted {
                deficit,
                remaining,
                blocks_consumed,
                block_size,
            } => {
                assert_eq!(deficit, 5);
                assert_eq!(remaining, 5);
                assert_eq!(blocks_consumed, 2);
                assert_eq!(block_size, 10);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn precondition_violation_names_the_inequality() {
        let config = SampleTrainConfig::new(0.01, 0.01, 0.05, 100, 10, 2);
        let err = config.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2*sqrt(ln(2/delta)/(2n))"), "{msg}");
    }

    #[test]
    fn zero_labels_halt_immediately() {
        let spec = SyntheticSpec::ConstantLabel { dim: 1, value: 0.0 };
        let mut source = spec.stream(11).unwrap();
        let config = SampleTrainConfig::new(0.2, 0.2, 0.05, 2000, 10, 2);
        let out = sample_alternating_descent(&config, source.as_mut(), &GroupFamily::whole_domain())
            .unwrap();
        assert_eq!(out.report.total_updates, 0);
        assert_eq!(out.report.blocks_consumed, 1);
        assert_eq!(out.report.halt_reason, HaltReason::Converged);
    }

    #[test]
    fn constant_label_source_is_learned_within_budget() {
        let spec = SyntheticSpec::ConstantLabel { dim: 1, value: 0.7 };
        let mut source = spec.stream(11).unwrap();
        let config = SampleTrainConfig::new(0.1, 0.1, 0.05, 4000, 10, 2);
        let fam = GroupFamily::whole_domain();
        let out = sample_alternating_descent(&config, source.as_mut(), &fam).unwrap();
        assert!(out.report.outer_iterations <= config.outer_cap());
        let pred = out.bundle.evaluate(&fam, &[0.5]).unwrap();
        // Full-domain cell budget is alpha; empirical slop stays well under
        // one bucket width here.
        assert!((pred.mean - 0.7).abs() < 0.2, "mean = {}", pred.mean);
        // Labels are deterministic, so every pseudo-moment label is
        // (0.7 - mean)^2, small once the mean converges.
        assert!(pred.moments[0] < 0.2, "m2 = {}", pred.moments[0]);
    }

    #[test]
    fn identical_seed_and_config_reproduce_identical_bundles() {
        let spec = SyntheticSpec::BernoulliField {
            dim: 1,
            intercept: 0.3,
            slope: 0.4,
        };
        let config = SampleTrainConfig::new(0.15, 0.15, 0.05, 3000, 10, 2);
        let fam = GroupFamily::whole_domain();
        let run = |seed: u64| {
            let mut source = spec.stream(seed).unwrap();
            sample_alternating_descent(&config, source.as_mut(), &fam)
                .unwrap()
                .bundle
        };
        let a = run(5);
        let b = run(5);
        assert!(!a.updates.is_empty());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn fresh_block_accounting() {
        let spec = SyntheticSpec::BernoulliField {
            dim: 1,
            intercept: 0.4,
            slope: 0.2,
        };
        let mut source = spec.stream(2).unwrap();
        let config = SampleTrainConfig::new(0.2, 0.2, 0.05, 2000, 10, 2);
        let fam = GroupFamily::whole_domain();
        let out = sample_alternating_descent(&config, source.as_mut(), &fam).unwrap();
        // One block per audit: every mean round audits once, every
        // pseudo-moment call audits once per step plus its final NULL.
        let mean_rounds = out.report.outer_iterations;
        let degree_calls = mean_rounds * out.bundle.moment_degrees.len() as u64;
        let moment_updates: u64 = out.report.per_degree_updates.values().sum();
        let expected = (mean_rounds + 1) + degree_calls + moment_updates;
        assert_eq!(out.report.blocks_consumed, expected);
        assert_eq!(
            out.report.samples_consumed,
            out.report.blocks_consumed * config.n as u64
        );
    }
}
