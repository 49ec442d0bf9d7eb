//! Oracle-efficient auditing and training.
//!
//! Instead of enumerating every group, the auditor hands a learning oracle
//! the positive and negative residuals `pred(x) - obs(x,y)` restricted to a
//! bucket refinement `R` of the whole domain. The mass-weighted residual
//! expectation of a hypothesis equals its mass-weighted consistency gap on
//! `R intersect S`, so a near-optimal hypothesis exposes the worst
//! violating intersection. Candidate sets learned on one fresh block are
//! then re-audited on an independent check block: the oracle never sees the
//! check data, and the verdict is computed only from it.

use std::io::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::auditor::{threshold_test, AuditVerdict, BlockEval, SingleSetAudit};
use crate::bundle::{
    GroupSel, MomentConstraint, PredictorBundle, SetDescriptor, UpdateRecord, UpdateTarget,
};
use crate::cells::{mean_phase_refinements, moment_phase_refinements};
use crate::data::{FiniteDistribution, LabeledExample, SampleBlock};
use crate::error::{Error, Result};
use crate::predicate::{GroupFamily, Predicate};
use crate::sample::{SampleOutcome, SampleStream, SampleTrainConfig};
use crate::trace::{HaltReason, TraceEvent, TrainReport, TrainTrace, UpdatePhase};

/// An agnostic learning oracle over some hypothesis class: given weighted
/// examples with weights in `[-1,1]`, it returns a hypothesis whose expected
/// weighted value is within `rho` of the best in class, except with a
/// failure rate that shrinks in the sample size.
pub trait AgnosticOracle {
    fn name(&self) -> &str;

    /// Approximation slack of the returned hypothesis.
    fn rho(&self) -> f64;

    /// Human-readable envelope for the failure rate `p(n)`.
    fn failure_rate_description(&self) -> String;

    /// Learn from weighted examples. The returned selector must be pure and
    /// deterministic.
    fn learn(&self, block: &SampleBlock, weights: &[f64]) -> Result<GroupSel>;
}

/// Reference oracle: exhaustive enumeration of a finite hypothesis list
/// (slack zero). The all-zeros hypothesis is always admitted, so the
/// returned value is never negative.
pub struct ExhaustiveOracle {
    name: String,
    hypotheses: Vec<(GroupSel, Predicate)>,
}

impl ExhaustiveOracle {
    /// Enumerate the members of a group family. Returned hypotheses carry
    /// their family index, so selectors built from them serialize exactly
    /// like enumeration-audit selectors.
    pub fn from_family(family: &GroupFamily) -> Result<Self> {
        if family.is_empty() {
            return Err(Error::InvalidParameter("empty hypothesis class".into()));
        }
        Ok(ExhaustiveOracle {
            name: "exhaustive".into(),
            hypotheses: family
                .groups
                .iter()
                .enumerate()
                .map(|(i, g)| (GroupSel::Family(i), g.predicate.clone()))
                .collect(),
        })
    }

    pub fn from_predicates(predicates: Vec<Predicate>) -> Result<Self> {
        if predicates.is_empty() {
            return Err(Error::InvalidParameter("empty hypothesis class".into()));
        }
        Ok(ExhaustiveOracle {
            name: "exhaustive".into(),
            hypotheses: predicates
                .into_iter()
                .map(|p| (GroupSel::Learned(p.clone()), p))
                .collect(),
        })
    }
}

impl AgnosticOracle for ExhaustiveOracle {
    fn name(&self) -> &str {
        &self.name
    }

    fn rho(&self) -> f64 {
        0.0
    }

    fn failure_rate_description(&self) -> String {
        format!(
            "p(n) <= 2*{}*exp(-2*n*t^2) for distributional argmax margin t \
             (empirical argmax over a finite class)",
            self.hypotheses.len() + 1
        )
    }

    fn learn(&self, block: &SampleBlock, weights: &[f64]) -> Result<GroupSel> {
        let n = block.len() as f64;
        let mut best: Option<(f64, &GroupSel)> = None;
        for (sel, pred) in &self.hypotheses {
            let mut value = 0.0;
            for s in 0..block.len() {
                if pred.eval(block.features(s)) {
                    value += weights[s];
                }
            }
            let value = value / n;
            if best.map(|(v, _)| value > v).unwrap_or(true) {
                best = Some((value, sel));
            }
        }
        let (value, sel) = best.expect("nonempty class");
        if value < 0.0 {
            // The empty hypothesis realizes value zero.
            return Ok(GroupSel::Learned(Predicate::never()));
        }
        Ok(sel.clone())
    }
}

/// Empirical-risk axis-aligned decision stump learner over hypotheses
/// `x[c] >= t` and `x[c] < t`. The declared `rho` is a uniform-convergence
/// estimate supplied by the caller, not a proven bound.
pub struct StumpOracle {
    rho: f64,
}

impl StumpOracle {
    pub fn new(rho: f64) -> Self {
        StumpOracle { rho }
    }
}

impl AgnosticOracle for StumpOracle {
    fn name(&self) -> &str {
        "stump"
    }

    fn rho(&self) -> f64 {
        self.rho
    }

    fn failure_rate_description(&self) -> String {
        "p(n) <= 4*d*(n+1)*exp(-n*rho^2/2) (stump class growth function)".into()
    }

    fn learn(&self, block: &SampleBlock, weights: &[f64]) -> Result<GroupSel> {
        let n = block.len();
        if n == 0 {
            return Ok(GroupSel::Learned(Predicate::never()));
        }
        let total: f64 = weights.iter().sum();
        // Best value so far; the empty hypothesis scores zero.
        let mut best_value = 0.0;
        let mut best: Option<Predicate> = None;
        for c in 0..block.dim {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                block.features(a)[c]
                    .partial_cmp(&block.features(b)[c])
                    .expect("finite features")
            });
            // prefix[i] = weight of the first i samples in sorted order.
            let mut prefix = Vec::with_capacity(n + 1);
            prefix.push(0.0);
            for &s in &order {
                prefix.push(prefix.last().unwrap() + weights[s]);
            }
            // Cut after position i (0..=n): "x >= t" keeps the suffix,
            // "x < t" keeps the prefix. Only cuts between distinct feature
            // values are realizable.
            for i in 0..=n {
                let boundary_ok = i == 0
                    || i == n
                    || block.features(order[i - 1])[c] < block.features(order[i])[c];
                if !boundary_ok {
                    continue;
                }
                let t = if i == 0 {
                    f64::NEG_INFINITY
                } else if i == n {
                    f64::INFINITY
                } else {
                    0.5 * (block.features(order[i - 1])[c] + block.features(order[i])[c])
                };
                let suffix_value = total - prefix[i];
                if suffix_value > best_value && t.is_finite() {
                    best_value = suffix_value;
                    let mut w = vec![0.0; block.dim];
                    w[c] = 1.0;
                    best = Some(Predicate::Threshold { weights: w, bias: t });
                } else if i == 0 && suffix_value > best_value {
                    // Threshold below every value: the all-ones stump.
                    best_value = suffix_value;
                    best = Some(Predicate::always());
                }
                let prefix_value = prefix[i];
                if prefix_value > best_value && t.is_finite() {
                    best_value = prefix_value;
                    let mut w = vec![0.0; block.dim];
                    w[c] = 1.0;
                    best = Some(Predicate::Not(Box::new(Predicate::Threshold {
                        weights: w,
                        bias: t,
                    })));
                }
            }
        }
        Ok(GroupSel::Learned(best.unwrap_or_else(Predicate::never)))
    }
}

/// External oracle speaking a line-delimited JSON protocol. One request is
/// written to the child's stdin:
///
/// `{"dim": <d>, "examples": [[x_1, ..., x_d, weight], ...]}`
///
/// and one response line is read from its stdout, either
/// `{"predicate": <predicate in the group-family grammar>}` or
/// `{"error": "<message>"}`. The child is spawned per call.
pub struct SubprocessOracle {
    pub program: String,
    pub args: Vec<String>,
    pub rho: f64,
}

#[derive(Serialize)]
struct OracleRequest<'a> {
    dim: usize,
    examples: &'a [Vec<f64>],
}

#[derive(Deserialize)]
struct OracleResponse {
    predicate: Option<Predicate>,
    error: Option<String>,
}

impl AgnosticOracle for SubprocessOracle {
    fn name(&self) -> &str {
        &self.program
    }

    fn rho(&self) -> f64 {
        self.rho
    }

    fn failure_rate_description(&self) -> String {
        "declared by the external oracle".into()
    }

    fn learn(&self, block: &SampleBlock, weights: &[f64]) -> Result<GroupSel> {
        let examples: Vec<Vec<f64>> = (0..block.len())
            .map(|s| {
                let mut row = block.features(s).to_vec();
                row.push(weights[s]);
                row
            })
            .collect();
        let request = serde_json::to_string(&OracleRequest {
            dim: block.dim,
            examples: &examples,
        })?;
        let mut child = std::process::Command::new(&self.program)
            .args(&self.args)
            .stdin(std::process::Stdio::piped())
            .stdout(std::process::Stdio::piped())
            .spawn()?;
        {
            let stdin = child.stdin.as_mut().expect("piped stdin");
            stdin.write_all(request.as_bytes())?;
            stdin.write_all(b"\n")?;
        }
        let output = child.wait_with_output()?;
        if !output.status.success() {
            return Err(Error::OracleFailure {
                refinement: String::new(),
                message: format!("subprocess exited with {}", output.status),
            });
        }
        let line = String::from_utf8_lossy(&output.stdout);
        let line = line.lines().next().unwrap_or("");
        let response: OracleResponse = serde_json::from_str(line)?;
        if let Some(message) = response.error {
            return Err(Error::OracleFailure {
                refinement: String::new(),
                message,
            });
        }
        response
            .predicate
            .map(GroupSel::Learned)
            .ok_or_else(|| Error::OracleFailure {
                refinement: String::new(),
                message: "response carried neither predicate nor error".into(),
            })
    }
}

/// Residual relabelings of a dataset for one refinement: `r_plus(x,y) =
/// (pred(x) - obs(x,y)) * [x in R]` and its negation. Returned weight
/// vectors align with `data`.
pub fn residual_labels(
    spec: &crate::auditor::LabelSpec,
    in_refinement: impl Fn(&[f64]) -> bool,
    data: &[LabeledExample],
) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::with_capacity(data.len());
    let mut neg = Vec::with_capacity(data.len());
    for ex in data {
        let x = &ex.features.values;
        let r = if in_refinement(x) {
            (spec.predicted)(x) - (spec.observed)(x, ex.label)
        } else {
            0.0
        };
        pos.push(r);
        neg.push(-r);
    }
    (pos, neg)
}

/// Exact residual expectation `E[chi_S(x) * r_R(x,y)]` on a finite
/// distribution (identity-check facility).
pub fn exact_residual_expectation(
    dist: &FiniteDistribution,
    spec: &crate::auditor::LabelSpec,
    in_refinement: impl Fn(&[f64]) -> bool,
    in_set: impl Fn(&[f64]) -> bool,
) -> f64 {
    dist.support
        .iter()
        .map(|pt| {
            let x = &pt.features.values;
            if !in_refinement(x) || !in_set(x) {
                return 0.0;
            }
            pt.mass
                * pt.label_expectation(|y| (spec.predicted)(x) - (spec.observed)(x, y))
        })
        .sum()
}

/// Which labels an oracle audit compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditKind {
    Mean,
    Moment { degree: u32 },
}

fn labels_for(
    kind: AuditKind,
    bundle: &PredictorBundle,
    ev: &BlockEval,
    labels: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    match kind {
        AuditKind::Mean => Ok((ev.mean.clone(), labels.to_vec())),
        AuditKind::Moment { degree } => {
            let d = bundle.degree_index(degree).ok_or_else(|| {
                Error::InvalidParameter(format!("untracked moment degree {degree}"))
            })?;
            let obs = (0..ev.n)
                .map(|s| bundle.pseudo_label(degree, ev.mean[s], labels[s]))
                .collect();
            Ok((ev.moments[d].clone(), obs))
        }
    }
}

/// Membership of each sample in a bucket refinement (group part is the
/// whole domain).
fn refinement_members(
    bundle: &PredictorBundle,
    ev: &BlockEval,
    refinement: &SetDescriptor,
) -> Result<Vec<bool>> {
    let mut members = vec![true; ev.n];
    if let Some(i) = refinement.mean_bucket {
        for (s, member) in members.iter_mut().enumerate() {
            *member &= ev.mean_bucket[s] == i;
        }
    }
    if let Some(MomentConstraint { degree, bucket }) = refinement.moment {
        let d = bundle
            .degree_index(degree)
            .ok_or_else(|| Error::InvalidParameter(format!("untracked moment degree {degree}")))?;
        for (s, member) in members.iter_mut().enumerate() {
            *member &= ev.moment_bucket[d][s] == bucket;
        }
    }
    Ok(members)
}

fn hypothesis_members(
    family: &GroupFamily,
    ev: &BlockEval,
    block: &SampleBlock,
    hypothesis: &GroupSel,
) -> Result<Vec<bool>> {
    match hypothesis {
        GroupSel::Family(g) => {
            family.get(*g)?;
            Ok(ev.group_member[*g].clone())
        }
        GroupSel::Learned(p) => Ok((0..block.len()).map(|s| p.eval(block.features(s))).collect()),
    }
}

/// Outcome of one oracle-backed audit round.
pub struct OracleAudit {
    pub verdict: AuditVerdict,
    /// Audit measurements for the violating candidate, when any.
    pub measurement: Option<SingleSetAudit>,
    pub oracle_calls: u64,
    pub oracle_seconds: f64,
}

/// Learn candidate violating sets on the train block, then audit them on
/// the independent check block. A violation certifies a true mass-scaled
/// consistency violation (with high probability); a null certifies
/// consistency at level `alpha_prime + rho` on every refinement-hypothesis
/// intersection.
#[allow(clippy::too_many_arguments)]
pub fn oracle_audit_wrapper(
    bundle: &PredictorBundle,
    family: &GroupFamily,
    kind: AuditKind,
    alpha: f64,
    delta: f64,
    train: &SampleBlock,
    check: &SampleBlock,
    refinements: &[SetDescriptor],
    oracle: &dyn AgnosticOracle,
) -> Result<OracleAudit> {
    let train_ev = BlockEval::build(bundle, family, train)?;
    let check_ev = BlockEval::build(bundle, family, check)?;
    oracle_audit_on_evals(
        bundle, family, kind, alpha, delta, train, &train_ev, check, &check_ev, refinements,
        oracle,
    )
}

#[allow(clippy::too_many_arguments)]
fn oracle_audit_on_evals(
    bundle: &PredictorBundle,
    family: &GroupFamily,
    kind: AuditKind,
    alpha: f64,
    delta: f64,
    train: &SampleBlock,
    train_ev: &BlockEval,
    check: &SampleBlock,
    check_ev: &BlockEval,
    refinements: &[SetDescriptor],
    oracle: &dyn AgnosticOracle,
) -> Result<OracleAudit> {
    let (train_pred, train_obs) = labels_for(kind, bundle, train_ev, &train.labels)?;
    let (check_pred, check_obs) = labels_for(kind, bundle, check_ev, &check.labels)?;
    let mut candidates: Vec<SetDescriptor> = Vec::new();
    let mut oracle_calls = 0u64;
    let mut oracle_seconds = 0.0f64;
    for refinement in refinements {
        let members = refinement_members(bundle, train_ev, refinement)?;
        if !members.iter().any(|&b| b) {
            continue;
        }
        let mut pos = vec![0.0; train.len()];
        let mut neg = vec![0.0; train.len()];
        for s in 0..train.len() {
            if members[s] {
                let r = train_pred[s] - train_obs[s];
                pos[s] = r;
                neg[s] = -r;
            }
        }
        for weights in [&pos, &neg] {
            let started = Instant::now();
            let hypothesis = oracle.learn(train, weights).map_err(|e| match e {
                Error::OracleFailure { message, .. } => Error::OracleFailure {
                    refinement: format!("{refinement:?}"),
                    message,
                },
                other => Error::OracleFailure {
                    refinement: format!("{refinement:?}"),
                    message: other.to_string(),
                },
            })?;
            oracle_seconds += started.elapsed().as_secs_f64();
            oracle_calls += 1;
            candidates.push(SetDescriptor {
                group: hypothesis,
                mean_bucket: refinement.mean_bucket,
                moment: refinement.moment,
            });
        }
    }
    // Final verdict from the check block only.
    for candidate in candidates {
        let hyp_members = hypothesis_members(family, check_ev, check, &candidate.group)?;
        let ref_members = refinement_members(bundle, check_ev, &candidate)?;
        let mut n_prime = 0u64;
        let mut sum_pred = 0.0;
        let mut sum_obs = 0.0;
        for s in 0..check.len() {
            if hyp_members[s] && ref_members[s] {
                n_prime += 1;
                sum_pred += check_pred[s];
                sum_obs += check_obs[s];
            }
        }
        let audit = threshold_test(sum_pred, sum_obs, n_prime, check.len() as u64, alpha, delta)?;
        if let Some(sign) = audit.violation {
            return Ok(OracleAudit {
                verdict: AuditVerdict::Violation {
                    set: candidate,
                    sign,
                },
                measurement: Some(audit),
                oracle_calls,
                oracle_seconds,
            });
        }
    }
    Ok(OracleAudit {
        verdict: AuditVerdict::Null,
        measurement: None,
        oracle_calls,
        oracle_seconds,
    })
}

pub struct OracleTrainer<'a, S: SampleStream + ?Sized> {
    pub config: SampleTrainConfig,
    family: &'a GroupFamily,
    source: &'a mut S,
    oracle: &'a dyn AgnosticOracle,
    pub bundle: PredictorBundle,
    pub report: TrainReport,
    pub trace: TrainTrace,
}

impl<'a, S: SampleStream + ?Sized> OracleTrainer<'a, S> {
    pub fn new(
        config: SampleTrainConfig,
        source: &'a mut S,
        family: &'a GroupFamily,
        oracle: &'a dyn AgnosticOracle,
    ) -> Result<Self> {
        config.validate()?;
        family.check_dim(source.dim())?;
        let bundle = config.fresh_bundle()?;
        let report = TrainReport::new(config.outer_cap(), config.inner_cap());
        Ok(OracleTrainer {
            config,
            family,
            source,
            oracle,
            bundle,
            report,
            trace: TrainTrace::default(),
        })
    }

    /// Draw the train and check blocks for one audit (two fresh blocks).
    fn draw_pair(&mut self) -> Result<(SampleBlock, SampleBlock)> {
        let train = self.source.draw_block(self.config.n)?;
        let check = self.source.draw_block(self.config.n)?;
        self.report.blocks_consumed += 2;
        self.report.samples_consumed += (train.len() + check.len()) as u64;
        Ok((train, check))
    }

    fn audit(&mut self, kind: AuditKind, refinements: &[SetDescriptor], level: f64) -> Result<OracleAudit> {
        let (train, check) = self.draw_pair()?;
        let audit = oracle_audit_wrapper(
            &self.bundle,
            self.family,
            kind,
            level,
            self.config.delta,
            &train,
            &check,
            refinements,
            self.oracle,
        )?;
        self.report.oracle_calls += audit.oracle_calls;
        self.report.oracle_seconds += audit.oracle_seconds;
        Ok(audit)
    }

    pub fn pseudo_moment_loop(&mut self, degree: u32, outer_round: u64) -> Result<u64> {
        let cap = self.config.inner_cap();
        let refinements = moment_phase_refinements(self.bundle.bucket_count, degree);
        let mut steps = 0u64;
        loop {
            let audit = self.audit(AuditKind::Moment { degree }, &refinements, self.config.beta)?;
            let AuditVerdict::Violation { set, sign } = audit.verdict else {
                return Ok(steps);
            };
            steps += 1;
            if steps == cap + 1 {
                self.report.statistical_failures += 1;
                log::warn!(
                    "oracle pseudo-moment loop for degree {degree} exceeded its cap of {cap} \
                     (statistical failure event); continuing"
                );
            }
            if steps > 10 * cap + 100 {
                return Err(Error::IterationCap(format!(
                    "oracle pseudo-moment loop for degree {degree} still violating after \
                     {steps} steps (hard stop)"
                )));
            }
            self.bundle.push_update(UpdateRecord {
                target: UpdateTarget::Moment { degree },
                step: self.config.beta * f64::from(sign),
                selector: set.clone(),
            })?;
            self.report.record_moment_update(degree);
            let m = audit.measurement.expect("violation carries measurement");
            self.trace.events.push(TraceEvent {
                phase: UpdatePhase::Moment { degree },
                outer_round,
                selector: set,
                sign,
                violation: m.predicted_avg.unwrap_or(f64::NAN)
                    - m.observed_avg.unwrap_or(f64::NAN),
                mass: m.n_prime as f64 / self.config.n as f64,
                potential_before: None,
                potential_after: None,
            });
        }
    }

    pub fn run(mut self) -> Result<SampleOutcome> {
        let outer_cap = self.config.outer_cap();
        let refinements = mean_phase_refinements(
            self.bundle.bucket_count,
            &self.bundle.moment_degrees.clone(),
        );
        loop {
            let audit = self.audit(AuditKind::Mean, &refinements, self.config.alpha)?;
            let AuditVerdict::Violation { set, sign } = audit.verdict else {
                break;
            };
            self.report.outer_iterations += 1;
            if self.report.outer_iterations == outer_cap + 1 {
                self.report.statistical_failures += 1;
                log::warn!(
                    "oracle alternating descent exceeded its cap of {outer_cap} rounds \
                     (statistical failure event); continuing"
                );
            }
            if self.report.outer_iterations > 10 * outer_cap + 100 {
                return Err(Error::IterationCap(
                    "oracle alternating descent still violating (hard stop)".into(),
                ));
            }
            self.bundle.push_update(UpdateRecord {
                target: UpdateTarget::Mean,
                step: self.config.alpha * f64::from(sign),
                selector: set.clone(),
            })?;
            self.report.record_mean_update();
            let m = audit.measurement.expect("violation carries measurement");
            self.trace.events.push(TraceEvent {
                phase: UpdatePhase::Mean,
                outer_round: self.report.outer_iterations,
                selector: set,
                sign,
                violation: m.predicted_avg.unwrap_or(f64::NAN)
                    - m.observed_avg.unwrap_or(f64::NAN),
                mass: m.n_prime as f64 / self.config.n as f64,
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

/// Standalone oracle-backed pseudo-moment loop.
pub fn oracle_pseudo_moment_loop<S: SampleStream + ?Sized>(
    degree: u32,
    config: &SampleTrainConfig,
    bundle: &mut PredictorBundle,
    source: &mut S,
    family: &GroupFamily,
    oracle: &dyn AgnosticOracle,
) -> Result<u64> {
    let mut trainer = OracleTrainer::new(config.clone(), source, family, oracle)?;
    trainer.bundle = bundle.clone();
    let steps = trainer.pseudo_moment_loop(degree, 0)?;
    *bundle = trainer.bundle;
    Ok(steps)
}

/// Oracle-backed alternating descent (hypothesis class must contain the
/// audited family for the calibration guarantee to transfer).
pub fn oracle_alternating_descent<S: SampleStream + ?Sized>(
    config: &SampleTrainConfig,
    source: &mut S,
    family: &GroupFamily,
    oracle: &dyn AgnosticOracle,
) -> Result<SampleOutcome> {
    OracleTrainer::new(config.clone(), source, family, oracle)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auditor::LabelSpec;
    use crate::bundle::MomentKind;
    use crate::data::{FeatureVector, SupportPoint};
    use crate::predicate::CoordBound;

    fn block_of(rows: &[(f64, f64)]) -> SampleBlock {
        let mut b = SampleBlock::with_capacity(1, rows.len());
        for &(x, y) in rows {
            b.push(&[x], y);
        }
        b
    }

    #[test]
    fn exhaustive_oracle_picks_the_best_hypothesis() {
        let family = GroupFamily::from_named(vec![
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
            ("all", Predicate::always()),
        ])
        .unwrap();
        let oracle = ExhaustiveOracle::from_family(&family).unwrap();
        let block = block_of(&[(0.2, 0.0), (0.4, 0.0), (0.8, 0.0)]);
        // Positive weight on low points, negative elsewhere: "low" wins.
        let sel = oracle.learn(&block, &[0.5, 0.5, -0.9]).unwrap();
        assert_eq!(sel, GroupSel::Family(0));
        // All weights negative: the empty hypothesis (value zero) wins.
        let sel = oracle.learn(&block, &[-0.5, -0.5, -0.9]).unwrap();
        assert_eq!(sel, GroupSel::Learned(Predicate::never()));
        // Zero weights: value ties at zero, first hypothesis kept.
        let sel = oracle.learn(&block, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(sel, GroupSel::Family(0));
    }

    #[test]
    fn exhaustive_oracle_matches_brute_force_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let predicates: Vec<Predicate> = (0..6)
            .map(|i| Predicate::Box {
                bounds: vec![CoordBound {
                    coord: 0,
                    lo: i as f64 * 0.15,
                    hi: i as f64 * 0.15 + 0.4,
                }],
            })
            .collect();
        let oracle = ExhaustiveOracle::from_predicates(predicates.clone()).unwrap();
        for _ in 0..50 {
            let rows: Vec<(f64, f64)> = (0..40)
                .map(|_| (rng.random::<f64>(), 0.0))
                .collect();
            let block = block_of(&rows);
            let weights: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let sel = oracle.learn(&block, &weights).unwrap();
            let value_of = |p: &Predicate| {
                (0..block.len())
                    .filter(|&s| p.eval(block.features(s)))
                    .map(|s| weights[s])
                    .sum::<f64>()
                    / block.len() as f64
            };
            let best = predicates
                .iter()
                .map(value_of)
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0);
            let got = match &sel {
                GroupSel::Learned(p) => value_of(p),
                GroupSel::Family(_) => unreachable!("predicate-built oracle"),
            };
            assert!((got - best).abs() < 1e-12);
        }
    }

    #[test]
    fn stump_oracle_finds_planted_threshold() {
        let rows: Vec<(f64, f64)> = (0..100).map(|i| (i as f64 / 100.0, 0.0)).collect();
        let block = block_of(&rows);
        // Weights positive above 0.63, negative below.
        let weights: Vec<f64> = rows
            .iter()
            .map(|&(x, _)| if x >= 0.63 { 1.0 } else { -1.0 })
            .collect();
        let oracle = StumpOracle::new(0.05);
        let sel = oracle.learn(&block, &weights).unwrap();
        let GroupSel::Learned(p) = sel else {
            panic!("stump returns predicates")
        };
        for (s, &(x, _)) in rows.iter().enumerate() {
            assert_eq!(p.eval(block.features(s)), x >= 0.63, "x = {x}");
        }
    }

    #[test]
    fn residual_labels_examples() {
        let data: Vec<LabeledExample> = [(0.2, 0.0), (0.8, 0.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| LabeledExample {
                features: FeatureVector::new(format!("e{i}"), vec![x]).unwrap(),
                label: y,
            })
            .collect();
        // Predicted one, observed zero, refinement = everything.
        let spec = LabelSpec::raw(|_| 1.0, |_, _| 0.0);
        let (pos, neg) = residual_labels(&spec, |_| true, &data);
        assert_eq!(pos, vec![1.0, 1.0]);
        assert_eq!(neg, vec![-1.0, -1.0]);
        // Restricted refinement zeroes the residual off the set.
        let (pos, _) = residual_labels(&spec, |x| x[0] < 0.5, &data);
        assert_eq!(pos, vec![1.0, 0.0]);
        // Identical labels give identically zero residuals.
        let spec = LabelSpec::raw(|x| x[0], |x, _| x[0]);
        let (pos, neg) = residual_labels(&spec, |_| true, &data);
        assert_eq!(pos, vec![0.0, 0.0]);
        assert_eq!(neg, vec![0.0, 0.0]);
    }

    #[test]
    fn residual_expectation_identity_on_finite_distribution() {
        // E[chi_S * r_R] equals mass(R & S) * (pred - obs gap on R & S),
        // exactly, for every refinement/set pair tested.
        let dist = FiniteDistribution::new(vec![
            SupportPoint {
                features: FeatureVector::new("a", vec![0.1]).unwrap(),
                mass: 0.2,
                labels: vec![(0.1, 0.5), (0.9, 0.5)],
            },
            SupportPoint {
                features: FeatureVector::new("b", vec![0.4]).unwrap(),
                mass: 0.3,
                labels: vec![(0.3, 1.0)],
            },
            SupportPoint {
                features: FeatureVector::new("c", vec![0.7]).unwrap(),
                mass: 0.5,
                labels: vec![(0.6, 0.25), (0.2, 0.75)],
            },
        ])
        .unwrap();
        let spec = LabelSpec::raw(|x| x[0], |_, y| y);
        let sets: Vec<Box<dyn Fn(&[f64]) -> bool>> = vec![
            Box::new(|_: &[f64]| true),
            Box::new(|x: &[f64]| x[0] < 0.5),
            Box::new(|x: &[f64]| x[0] >= 0.3),
        ];
        for r in &sets {
            for s in &sets {
                let lhs = exact_residual_expectation(&dist, &spec, r, s);
                // Right-hand side via conditional quantities.
                let both = |x: &[f64]| r(x) && s(x);
                let mass: f64 = dist
                    .support
                    .iter()
                    .filter(|pt| both(&pt.features.values))
                    .map(|pt| pt.mass)
                    .sum();
                let rhs = if mass > 0.0 {
                    let pred: f64 = dist
                        .support
                        .iter()
                        .filter(|pt| both(&pt.features.values))
                        .map(|pt| pt.mass * (spec.predicted)(&pt.features.values))
                        .sum::<f64>()
                        / mass;
                    let obs: f64 = dist
                        .support
                        .iter()
                        .filter(|pt| both(&pt.features.values))
                        .map(|pt| {
                            pt.mass
                                * pt.label_expectation(|y| {
                                    (spec.observed)(&pt.features.values, y)
                                })
                        })
                        .sum::<f64>()
                        / mass;
                    mass * (pred - obs)
                } else {
                    0.0
                };
                assert!((lhs - rhs).abs() < 1e-15, "lhs {lhs} rhs {rhs}");
            }
        }
    }

    #[test]
    fn wrapper_null_when_labels_agree() {
        let family = GroupFamily::whole_domain();
        let bundle = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        let oracle = ExhaustiveOracle::from_family(&family).unwrap();
        // Labels equal the replayed mean (zero) everywhere.
        let train = block_of(&[(0.2, 0.0), (0.6, 0.0), (0.9, 0.0)]);
        let check = train.clone();
        let refinements = mean_phase_refinements(10, &[2]);
        let audit = oracle_audit_wrapper(
            &bundle,
            &family,
            AuditKind::Mean,
            0.1,
            0.05,
            &train,
            &check,
            &refinements,
            &oracle,
        )
        .unwrap();
        assert_eq!(audit.verdict, AuditVerdict::Null);
        assert!(audit.oracle_calls > 0);
    }

    #[test]
    fn wrapper_finds_planted_violation() {
        // A planted group holding half the data with labels far from the
        // zero-initialized mean inside the only populated refinement.
        let family = GroupFamily::from_named(vec![
            (
                "planted",
                Predicate::Box {
                    bounds: vec![CoordBound {
                        coord: 0,
                        lo: 0.0,
                        hi: 0.5,
                    }],
                },
            ),
            ("all", Predicate::always()),
        ])
        .unwrap();
        let bundle = PredictorBundle::new(10, 2, vec![2], MomentKind::Central).unwrap();
        let oracle = ExhaustiveOracle::from_family(&family).unwrap();
        let rows: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let x = (i as f64 + 0.5) / 200.0;
                (x, if x < 0.5 { 1.0 } else { 0.0 })
            })
            .collect();
        let train = block_of(&rows);
        let check = train.clone();
        let refinements = mean_phase_refinements(10, &[2]);
        let audit = oracle_audit_wrapper(
            &bundle,
            &family,
            AuditKind::Mean,
            0.05,
            0.05,
            &train,
            &check,
            &refinements,
            &oracle,
        )
        .unwrap();
        match audit.verdict {
            AuditVerdict::Violation { set, sign } => {
                assert_eq!(sign, -1);
                assert_eq!(set.group, GroupSel::Family(0));
                assert_eq!(set.mean_bucket, Some(1));
            }
            AuditVerdict::Null => panic!("planted violation missed"),
        }
    }
}
