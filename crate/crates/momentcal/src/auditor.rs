//! Finite-sample consistency auditing.
//!
//! The single-set test compares empirical averages of a predicted label
//! against an observed label on the examples falling in a set. With `n'`
//! members out of a full draw of `n`, a violation is declared when
//!
//! `|avg_pred - avg_obs| - 2*sqrt(ln(2/delta)/(2n'))
//!      >= alpha / (n'/n - sqrt(ln(2/delta)/(2n)))`
//!
//! (natural logarithm throughout). When the denominator is nonpositive the
//! threshold is vacuous and the test reports no violation. A YES under the
//! closeness event certifies a true mass-scaled consistency violation with
//! the reported sign; a NULL certifies consistency at the inflated level
//! given by [`alpha_prime`] on every audited set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{CellKey, Prediction, PredictorBundle, SetDescriptor};
use crate::data::{FiniteDistribution, LabeledExample, SampleBlock};
use crate::error::{Error, Result};
use crate::predicate::GroupFamily;

/// Chernoff deviation radius `sqrt(ln(2/delta) / (2n))`.
pub fn chernoff_radius(delta: f64, n: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n)).sqrt()
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "consistency level must be positive, got {alpha}"
        )));
    }
    Ok(())
}

/// Violation sign: +1 when the predicted average exceeds the observed one.
pub type Sign = i8;

/// Outcome of auditing a single set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSetAudit {
    pub n_prime: u64,
    pub predicted_avg: Option<f64>,
    pub observed_avg: Option<f64>,
    /// Empirical deviation margin `2*sqrt(ln(2/delta)/(2n'))`.
    pub margin: Option<f64>,
    /// Right-hand threshold; `None` when vacuous (empty set or nonpositive
    /// denominator).
    pub threshold: Option<f64>,
    pub violation: Option<Sign>,
}

impl SingleSetAudit {
    fn null(n_prime: u64) -> Self {
        SingleSetAudit {
            n_prime,
            predicted_avg: None,
            observed_avg: None,
            margin: None,
            threshold: None,
            violation: None,
        }
    }
}

/// Core threshold test on precomputed sums over the members of a set.
pub fn threshold_test(
    sum_pred: f64,
    sum_obs: f64,
    n_prime: u64,
    n: u64,
    alpha: f64,
    delta: f64,
) -> Result<SingleSetAudit> {
    check_delta(delta)?;
    check_alpha(alpha)?;
    if n_prime == 0 {
        return Ok(SingleSetAudit::null(0));
    }
    if n_prime > n {
        return Err(Error::InvalidParameter(format!(
            "subset size {n_prime} exceeds sample size {n}"
        )));
    }
    let np = n_prime as f64;
    let pred = sum_pred / np;
    let obs = sum_obs / np;
    let diff = pred - obs;
    let margin = 2.0 * chernoff_radius(delta, np);
    let denom = np / (n as f64) - chernoff_radius(delta, n as f64);
    let (threshold, violation) = if denom > 0.0 {
        let thr = alpha / denom;
        let hit = diff.abs() - margin >= thr;
        let sign = if hit {
            Some(if diff > 0.0 { 1 } else { -1 })
        } else {
            None
        };
        (Some(thr), sign)
    } else {
        (None, None)
    };
    Ok(SingleSetAudit {
        n_prime,
        predicted_avg: Some(pred),
        observed_avg: Some(obs),
        margin: Some(margin),
        threshold,
        violation,
    })
}

/// A pair of label functions: the prediction to audit and the observed
/// quantity it should match on average.
pub struct LabelSpec<'a> {
    pub predicted: Box<dyn Fn(&[f64]) -> f64 + 'a>,
    pub observed: Box<dyn Fn(&[f64], f64) -> f64 + 'a>,
}

impl<'a> LabelSpec<'a> {
    pub fn raw(
        predicted: impl Fn(&[f64]) -> f64 + 'a,
        observed: impl Fn(&[f64], f64) -> f64 + 'a,
    ) -> Self {
        LabelSpec {
            predicted: Box::new(predicted),
            observed: Box::new(observed),
        }
    }

    /// Mean-consistency spec: predicted mean against the raw label.
    pub fn mean_of(bundle: &'a PredictorBundle, family: &'a GroupFamily) -> Self {
        LabelSpec {
            predicted: Box::new(move |x| {
                bundle.evaluate(family, x).map(|p| p.mean).unwrap_or(f64::NAN)
            }),
            observed: Box::new(|_, y| y),
        }
    }

    /// Pseudo-moment spec for one degree: predicted moment against the
    /// plug-in label `(y - mean(x))^a` (absolute variant in absolute mode).
    pub fn pseudo_moment_of(
        bundle: &'a PredictorBundle,
        family: &'a GroupFamily,
        degree: u32,
    ) -> Self {
        LabelSpec {
            predicted: Box::new(move |x| {
                let idx = bundle.degree_index(degree);
                match (bundle.evaluate(family, x), idx) {
                    (Ok(p), Some(i)) => p.moments[i],
                    _ => f64::NAN,
                }
            }),
            observed: Box::new(move |x, y| {
                bundle
                    .evaluate(family, x)
                    .map(|p| bundle.pseudo_label(degree, p.mean, y))
                    .unwrap_or(f64::NAN)
            }),
        }
    }
}

/// Audit one set: `subset` holds the examples of the full draw (of size `n`)
/// that fall in the set.
pub fn audit_single_set(
    spec: &LabelSpec,
    alpha: f64,
    delta: f64,
    n: u64,
    subset: &[LabeledExample],
) -> Result<SingleSetAudit> {
    let sum_pred: f64 = subset
        .iter()
        .map(|ex| (spec.predicted)(&ex.features.values))
        .sum();
    let sum_obs: f64 = subset
        .iter()
        .map(|ex| (spec.observed)(&ex.features.values, ex.label))
        .sum();
    threshold_test(sum_pred, sum_obs, subset.len() as u64, n, alpha, delta)
}

/// Verdict of a multi-set audit: the first violating set in scan order with
/// its sign, or null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AuditVerdict {
    Violation { set: SetDescriptor, sign: Sign },
    Null,
}

impl AuditVerdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, AuditVerdict::Violation { .. })
    }
}

/// Per-cell audit record (structured audit output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAuditRecord {
    pub cell: CellKey,
    #[serde(flatten)]
    pub audit: SingleSetAudit,
}

/// Reference multi-set auditor: restricts `data` to each cell in order and
/// returns the first violation. Cell membership uses replayed predictions.
pub fn consistency_auditor(
    bundle: &PredictorBundle,
    family: &GroupFamily,
    spec: &LabelSpec,
    alpha: f64,
    delta: f64,
    data: &[LabeledExample],
    cells: &[CellKey],
    mut trace: Option<&mut Vec<CellAuditRecord>>,
) -> Result<AuditVerdict> {
    check_delta(delta)?;
    check_alpha(alpha)?;
    let n = data.len() as u64;
    let preds: Vec<Prediction> = data
        .iter()
        .map(|ex| bundle.evaluate(family, &ex.features.values))
        .collect::<Result<Vec<_>>>()?;
    for cell in cells {
        let mut sum_pred = 0.0;
        let mut sum_obs = 0.0;
        let mut n_prime = 0u64;
        for (ex, pred) in data.iter().zip(&preds) {
            if bundle.prediction_in_cell(family, cell, &ex.features.values, pred)? {
                sum_pred += (spec.predicted)(&ex.features.values);
                sum_obs += (spec.observed)(&ex.features.values, ex.label);
                n_prime += 1;
            }
        }
        let audit = threshold_test(sum_pred, sum_obs, n_prime, n, alpha, delta)?;
        let violation = audit.violation;
        if let Some(records) = trace.as_deref_mut() {
            records.push(CellAuditRecord { cell: *cell, audit });
        }
        if let Some(sign) = violation {
            return Ok(AuditVerdict::Violation {
                set: cell.to_descriptor(),
                sign,
            });
        }
    }
    Ok(AuditVerdict::Null)
}

/// Consistency level certified by a NULL audit:
/// `alpha + 4r_n + (alpha - 2r_n)^-2 * 2r_n` with `r_n` the Chernoff radius.
pub fn alpha_prime(alpha: f64, delta: f64, n: f64) -> Result<f64> {
    check_delta(delta)?;
    check_alpha(alpha)?;
    if !(n > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sample size must be positive, got {n}"
        )));
    }
    let r = chernoff_radius(delta, n);
    if alpha <= 2.0 * r {
        return Err(Error::InvalidParameter(format!(
            "precondition violated: alpha = {alpha} must exceed 2*sqrt(ln(2/delta)/(2n)) = {}",
            2.0 * r
        )));
    }
    Ok(alpha + 4.0 * r + (alpha - 2.0 * r).powi(-2) * (2.0 * r))
}

/// The empirical-closeness event for one set (test facility; requires the
/// true distribution). Checks membership counts and both empirical averages
/// against their exact conditional expectations at the Chernoff radii.
pub fn closeness_holds(
    dist: &FiniteDistribution,
    data: &[LabeledExample],
    membership: &dyn Fn(&[f64]) -> bool,
    spec: &LabelSpec,
    delta: f64,
) -> Result<bool> {
    check_delta(delta)?;
    let n = data.len();
    if n == 0 {
        return Ok(false);
    }
    let mut n_prime = 0u64;
    let mut sum_pred = 0.0;
    let mut sum_obs = 0.0;
    for ex in data {
        if membership(&ex.features.values) {
            n_prime += 1;
            sum_pred += (spec.predicted)(&ex.features.values);
            sum_obs += (spec.observed)(&ex.features.values, ex.label);
        }
    }
    if n_prime == 0 {
        return Ok(false);
    }
    let mass: f64 = dist
        .support
        .iter()
        .filter(|pt| membership(&pt.features.values))
        .map(|pt| pt.mass)
        .sum();
    let r_n = chernoff_radius(delta, n as f64);
    if (n_prime as f64 / n as f64 - mass).abs() > r_n {
        return Ok(false);
    }
    if mass <= 0.0 {
        return Ok(false);
    }
    let exact_pred: f64 = dist
        .support
        .iter()
        .filter(|pt| membership(&pt.features.values))
        .map(|pt| pt.mass * (spec.predicted)(&pt.features.values))
        .sum::<f64>()
        / mass;
    let exact_obs: f64 = dist
        .support
        .iter()
        .filter(|pt| membership(&pt.features.values))
        .map(|pt| {
            pt.mass
                * pt.labels
                    .iter()
                    .map(|&(y, p)| p * (spec.observed)(&pt.features.values, y))
                    .sum::<f64>()
        })
        .sum::<f64>()
        / mass;
    let r_np = chernoff_radius(delta, n_prime as f64);
    let np = n_prime as f64;
    Ok((sum_pred / np - exact_pred).abs() <= r_np && (sum_obs / np - exact_obs).abs() <= r_np)
}

/// Targets for the sample-size calculator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeTargets {
    pub alpha_prime: f64,
    pub beta_prime: f64,
    pub delta_prime: f64,
    pub epsilon: f64,
    pub group_count: u64,
    pub max_degree: u32,
    pub bucket_count: u32,
}

/// Parameters produced by the calculator; feeding them to the sample trainer
/// yields the target calibration levels with probability `1 - delta_prime`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizePlan {
    pub q_bar: f64,
    pub delta: f64,
    pub n_alpha: f64,
    pub n_beta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n: f64,
}

/// Worst-case sample-size plan for target calibration levels.
///
/// The published derivation writes the second per-parameter sample size with
/// the beta expression but labels it `n_alpha` twice; this implements the
/// evident intent (`n_beta`).
pub fn sample_size_calculator(t: &SampleSizeTargets) -> Result<SampleSizePlan> {
    check_delta(t.delta_prime)?;
    if !(t.epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    if t.epsilon >= t.alpha_prime || t.epsilon >= t.beta_prime {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {} must be smaller than both targets (alpha' = {}, beta' = {})",
            t.epsilon, t.alpha_prime, t.beta_prime
        )));
    }
    if t.group_count == 0 || t.bucket_count == 0 || t.max_degree < 2 {
        return Err(Error::InvalidParameter(
            "need at least one group, one bucket, and max degree >= 2".into(),
        ));
    }
    let g = t.group_count as f64;
    let k = f64::from(t.max_degree);
    let m = f64::from(t.bucket_count);
    let scale = 6.0 + 2.0 / (t.epsilon * t.epsilon);
    let ra = (t.alpha_prime - t.epsilon) / scale;
    let rb = (t.beta_prime - t.epsilon) / scale;
    let q_bar = 6.0 * g * k * m * m / (ra * ra * rb * rb);
    let delta = t.delta_prime / (3.0 * g * (k * m * m + m)).max(q_bar);
    let ln_big = (2.0 * q_bar / delta).ln();
    let n_alpha = ln_big / (2.0 * ra * ra);
    let n_beta = ln_big / (2.0 * rb * rb);
    let alpha = 2.0 * (ln_big / (2.0 * n_alpha)).sqrt() + t.epsilon;
    let beta = 2.0 * (ln_big / (2.0 * n_beta)).sqrt() + t.epsilon;
    let ln_small = (2.0 / delta).ln();
    let n = (ln_big / ln_small * n_alpha)
        .max(ln_big / ln_small * n_beta)
        .max(2.0 * ln_small / (alpha * alpha))
        .max(2.0 * ln_small / (beta * beta));
    Ok(SampleSizePlan {
        q_bar,
        delta,
        n_alpha,
        n_beta,
        alpha,
        beta,
        n,
    })
}

/// Per-example replayed predictions, bucket indices, and group memberships
/// for one sample block (the vectorized audit path used by trainers).
#[derive(Debug, Clone)]
pub struct BlockEval {
    pub n: usize,
    pub mean: Vec<f64>,
    /// `[degree index][sample]`.
    pub moments: Vec<Vec<f64>>,
    pub mean_bucket: Vec<u32>,
    /// `[degree index][sample]`.
    pub moment_bucket: Vec<Vec<u32>>,
    /// `[group][sample]`.
    pub group_member: Vec<Vec<bool>>,
}

/// Fixed parallel chunk size; sums are merged in chunk order so results do
/// not depend on the worker count.
const CHUNK: usize = 1 << 14;

struct ChunkEval {
    mean: Vec<f64>,
    moments: Vec<Vec<f64>>,
    mean_bucket: Vec<u32>,
    moment_bucket: Vec<Vec<u32>>,
    group_member: Vec<Vec<bool>>,
}

impl BlockEval {
    pub fn build(
        bundle: &PredictorBundle,
        family: &GroupFamily,
        block: &SampleBlock,
    ) -> Result<Self> {
        let n = block.len();
        let n_deg = bundle.moment_degrees.len();
        let n_groups = family.len();
        let m = bundle.bucket_count;
        let n_chunks = n.div_ceil(CHUNK).max(1);
        let chunks: Vec<Result<ChunkEval>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = ((c + 1) * CHUNK).min(n);
                let len = hi - lo;
                let mut out = ChunkEval {
                    mean: Vec::with_capacity(len),
                    moments: vec![Vec::with_capacity(len); n_deg],
                    mean_bucket: Vec::with_capacity(len),
                    moment_bucket: vec![Vec::with_capacity(len); n_deg],
                    group_member: vec![Vec::with_capacity(len); n_groups],
                };
                for s in lo..hi {
                    let x = block.features(s);
                    let pred = bundle.evaluate(family, x)?;
                    out.mean.push(pred.mean);
                    out.mean_bucket.push(crate::bucket::bucket_of(pred.mean, m));
                    for (d, &v) in pred.moments.iter().enumerate() {
                        out.moments[d].push(v);
                        out.moment_bucket[d].push(crate::bucket::bucket_of(v, m));
                    }
                    for (g, row) in out.group_member.iter_mut().enumerate() {
                        row.push(family.member(g, x)?);
                    }
                }
                Ok(out)
            })
            .collect();
        let mut ev = BlockEval {
            n,
            mean: Vec::with_capacity(n),
            moments: vec![Vec::with_capacity(n); n_deg],
            mean_bucket: Vec::with_capacity(n),
            moment_bucket: vec![Vec::with_capacity(n); n_deg],
            group_member: vec![Vec::with_capacity(n); n_groups],
        };
        for chunk in chunks {
            let chunk = chunk?;
            ev.mean.extend_from_slice(&chunk.mean);
            ev.mean_bucket.extend_from_slice(&chunk.mean_bucket);
            for d in 0..n_deg {
                ev.moments[d].extend_from_slice(&chunk.moments[d]);
                ev.moment_bucket[d].extend_from_slice(&chunk.moment_bucket[d]);
            }
            for g in 0..n_groups {
                ev.group_member[g].extend_from_slice(&chunk.group_member[g]);
            }
        }
        Ok(ev)
    }
}

/// Running `(count, sum_pred, sum_obs)` for one cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellStat {
    pub count: u64,
    pub sum_pred: f64,
    pub sum_obs: f64,
}

/// Per-cell sums over a block for a fixed audit phase, laid out densely over
/// groups x buckets (x degree x buckets for moment cells).
pub struct CellSums {
    pub m: u32,
    pub n_groups: usize,
    pub degrees: Vec<u32>,
    pub n: u64,
    pub mean_cells: Vec<CellStat>,
    pub moment_cells: Vec<CellStat>,
}

impl CellSums {
    fn mean_idx(&self, g: usize, i: u32) -> usize {
        g * self.m as usize + (i - 1) as usize
    }

    fn moment_idx(&self, g: usize, d: usize, i: u32, j: u32) -> usize {
        ((g * self.degrees.len() + d) * self.m as usize + (i - 1) as usize) * self.m as usize
            + (j - 1) as usize
    }

    pub fn stat(&self, cell: &CellKey) -> Result<CellStat> {
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

    /// Sums for the mean phase: predicted label is the replayed mean,
    /// observed label is `y`; accumulated for mean cells and for the moment
    /// cells of every tracked degree.
    pub fn mean_phase(ev: &BlockEval, labels: &[f64], bundle: &PredictorBundle) -> Self {
        let m = bundle.bucket_count;
        let degrees = bundle.moment_degrees.clone();
        let n_groups = ev.group_member.len();
        let mut sums = CellSums {
            m,
            n_groups,
            degrees,
            n: ev.n as u64,
            mean_cells: vec![CellStat::default(); n_groups * m as usize],
            moment_cells: vec![
                CellStat::default();
                n_groups * bundle.moment_degrees.len() * (m as usize).pow(2)
            ],
        };
        for s in 0..ev.n {
            let pred = ev.mean[s];
            let obs = labels[s];
            let i = ev.mean_bucket[s];
            for g in 0..n_groups {
                if !ev.group_member[g][s] {
                    continue;
                }
                let idx = sums.mean_idx(g, i);
                let st = &mut sums.mean_cells[idx];
                st.count += 1;
                st.sum_pred += pred;
                st.sum_obs += obs;
                for d in 0..sums.degrees.len() {
                    let j = ev.moment_bucket[d][s];
                    let idx = sums.moment_idx(g, d, i, j);
                    let st = &mut sums.moment_cells[idx];
                    st.count += 1;
                    st.sum_pred += pred;
                    st.sum_obs += obs;
                }
            }
        }
        sums
    }

    /// Sums for one pseudo-moment phase: predicted label is the replayed
    /// moment of `degree`, observed label is the plug-in pseudo-moment.
    pub fn moment_phase(
        ev: &BlockEval,
        labels: &[f64],
        bundle: &PredictorBundle,
        degree: u32,
    ) -> Result<Self> {
        let m = bundle.bucket_count;
        let d_idx = bundle
            .degree_index(degree)
            .ok_or_else(|| Error::InvalidParameter(format!("untracked moment degree {degree}")))?;
        let n_groups = ev.group_member.len();
        let mut sums = CellSums {
            m,
            n_groups,
            degrees: vec![degree],
            n: ev.n as u64,
            mean_cells: vec![CellStat::default(); n_groups * m as usize],
            moment_cells: vec![CellStat::default(); n_groups * (m as usize).pow(2)],
        };
        for s in 0..ev.n {
            let pred = ev.moments[d_idx][s];
            let obs = bundle.pseudo_label(degree, ev.mean[s], labels[s]);
            let i = ev.mean_bucket[s];
            let j = ev.moment_bucket[d_idx][s];
            for g in 0..n_groups {
                if !ev.group_member[g][s] {
                    continue;
                }
                let idx = sums.moment_idx(g, 0, i, j);
                let st = &mut sums.moment_cells[idx];
                st.count += 1;
                st.sum_pred += pred;
                st.sum_obs += obs;
            }
        }
        Ok(sums)
    }

    /// First violating cell in `cells` order.
    pub fn first_violation(
        &self,
        cells: &[CellKey],
        alpha: f64,
        delta: f64,
        mut trace: Option<&mut Vec<CellAuditRecord>>,
    ) -> Result<AuditVerdict> {
        for cell in cells {
            let st = self.stat(cell)?;
            let audit = threshold_test(st.sum_pred, st.sum_obs, st.count, self.n, alpha, delta)?;
            let violation = audit.violation;
            if let Some(records) = trace.as_deref_mut() {
                records.push(CellAuditRecord { cell: *cell, audit });
            }
            if let Some(sign) = violation {
                return Ok(AuditVerdict::Violation {
                    set: cell.to_descriptor(),
                    sign,
                });
            }
        }
        Ok(AuditVerdict::Null)
    }
}
