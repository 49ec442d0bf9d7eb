//! Ground-truth and held-out calibration audits and coverage measurement.
//!
//! The exact audit enumerates every positive-mass cell of a finite
//! distribution and compares replayed predictions against exact conditional
//! quantities: mean gaps against the budget `alpha / mass`, moment gaps
//! against `(beta + a*alpha) / mass + a/m`. The empirical audit is the
//! count-based analogue on held-out data, with optional Chernoff
//! uncertainty annotations and a flat slack for sampling noise.

use serde::{Deserialize, Serialize};

use crate::bucket::bucket_of;
use crate::bundle::{CellKey, MomentKind, PredictorBundle};
use crate::data::{FiniteDistribution, LabeledExample};
use crate::error::{Error, Result};
use crate::intervals::{width_from_moment, IntervalParams, PredictionInterval};
use crate::predicate::GroupFamily;

/// Per-point predictor values, either replayed from a bundle or the true
/// conditional quantities of a finite distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPredictions {
    pub degrees: Vec<u32>,
    pub mean: Vec<f64>,
    /// `[degree index][point]`.
    pub moments: Vec<Vec<f64>>,
}

impl PointPredictions {
    pub fn from_bundle(
        bundle: &PredictorBundle,
        family: &GroupFamily,
        dist: &FiniteDistribution,
    ) -> Result<Self> {
        let mut mean = Vec::with_capacity(dist.len());
        let mut moments = vec![Vec::with_capacity(dist.len()); bundle.moment_degrees.len()];
        for pt in &dist.support {
            let pred = bundle.evaluate(family, &pt.features.values)?;
            mean.push(pred.mean);
            for (d, &v) in pred.moments.iter().enumerate() {
                moments[d].push(v);
            }
        }
        Ok(PointPredictions {
            degrees: bundle.moment_degrees.clone(),
            mean,
            moments,
        })
    }

    pub fn from_examples(
        bundle: &PredictorBundle,
        family: &GroupFamily,
        data: &[LabeledExample],
    ) -> Result<Self> {
        let mut mean = Vec::with_capacity(data.len());
        let mut moments = vec![Vec::with_capacity(data.len()); bundle.moment_degrees.len()];
        for ex in data {
            let pred = bundle.evaluate(family, &ex.features.values)?;
            mean.push(pred.mean);
            for (d, &v) in pred.moments.iter().enumerate() {
                moments[d].push(v);
            }
        }
        Ok(PointPredictions {
            degrees: bundle.moment_degrees.clone(),
            mean,
            moments,
        })
    }

    /// True per-point conditional means and central moments (the reference
    /// predictor, which is calibrated at every positive level).
    pub fn true_values(
        dist: &FiniteDistribution,
        degrees: &[u32],
        kind: MomentKind,
    ) -> Result<Self> {
        for &a in degrees {
            if a % 2 == 1 && kind == MomentKind::Central {
                return Err(Error::InvalidParameter(format!(
                    "odd degree {a} requires absolute-central-moment mode"
                )));
            }
        }
        let mut mean = Vec::with_capacity(dist.len());
        let mut moments = vec![Vec::with_capacity(dist.len()); degrees.len()];
        for pt in &dist.support {
            let mu = pt.label_mean();
            mean.push(mu);
            for (d, &a) in degrees.iter().enumerate() {
                let v = pt.label_expectation(|y| match kind {
                    MomentKind::Central => (y - mu).powi(a as i32),
                    MomentKind::Absolute => (y - mu).abs().powi(a as i32),
                });
                moments[d].push(v);
            }
        }
        Ok(PointPredictions {
            degrees: degrees.to_vec(),
            mean,
            moments,
        })
    }
}

/// One audited cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub cell: CellKey,
    /// Exact mass or empirical fraction of the cell.
    pub mass: f64,
    pub mean_gap: f64,
    pub mean_budget: f64,
    pub mean_pass: bool,
    pub moment_gap: Option<f64>,
    pub moment_budget: Option<f64>,
    pub moment_pass: Option<bool>,
    /// Chernoff annotation `2*sqrt(ln(2/delta)/(2n'))` for empirical audits.
    pub uncertainty: Option<f64>,
    /// Worst gap-to-budget ratio of the row (sort key).
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub alpha: f64,
    pub beta: f64,
    /// Flat slack added to every budget (empirical audits).
    pub slack: f64,
    /// Rows for every positive-mass audited cell, worst ratio first.
    pub rows: Vec<CalibrationRow>,
    pub violations: usize,
    pub worst_ratio: f64,
}

impl CalibrationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn finalize(mut self) -> Self {
        self.rows.sort_by(|a, b| {
            b.worst_ratio
                .partial_cmp(&a.worst_ratio)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        self.violations = self
            .rows
            .iter()
            .filter(|r| !r.mean_pass || r.moment_pass == Some(false))
            .count();
        self.worst_ratio = self.rows.first().map(|r| r.worst_ratio).unwrap_or(0.0);
        self
    }
}

struct CellAccum {
    mass: f64,
    wpred_mean: f64,
    wobs_mean: f64,
    wpred_moment: f64,
    members: Vec<usize>,
}

impl CellAccum {
    fn new() -> Self {
        CellAccum {
            mass: 0.0,
            wpred_mean: 0.0,
            wobs_mean: 0.0,
            wpred_moment: 0.0,
            members: Vec::new(),
        }
    }
}

/// Exhaustive exact-mode calibration audit of arbitrary per-point
/// predictions (used both for trained bundles and for reference
/// predictors).
pub fn exact_calibration_audit_of(
    preds: &PointPredictions,
    dist: &FiniteDistribution,
    family: &GroupFamily,
    bucket_count: u32,
    kind: MomentKind,
    alpha: f64,
    beta: f64,
) -> Result<CalibrationReport> {
    let m = bucket_count;
    let n_groups = family.len();
    let member = (0..n_groups)
        .map(|g| {
            dist.support
                .iter()
                .map(|p| family.member(g, &p.features.values))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let point_mean = dist.point_means();
    let mut rows = Vec::new();

    // Mean-only cells.
    for g in 0..n_groups {
        for i in 1..=m {
            let mut acc = CellAccum::new();
            for (p, pt) in dist.support.iter().enumerate() {
                if member[g][p] && bucket_of(preds.mean[p], m) == i {
                    acc.mass += pt.mass;
                    acc.wpred_mean += pt.mass * preds.mean[p];
                    acc.wobs_mean += pt.mass * point_mean[p];
                }
            }
            if acc.mass <= 0.0 {
                continue;
            }
            let gap = (acc.wpred_mean - acc.wobs_mean).abs() / acc.mass;
            let budget = alpha / acc.mass;
            rows.push(CalibrationRow {
                cell: CellKey::mean_only(g, i),
                mass: acc.mass,
                mean_gap: gap,
                mean_budget: budget,
                mean_pass: gap <= budget,
                moment_gap: None,
                moment_budget: None,
                moment_pass: None,
                uncertainty: None,
                worst_ratio: gap / budget,
            });
        }
    }

    // Moment cells: mean consistency at alpha/mass, moment consistency at
    // (beta + a*alpha)/mass + a/m against the cell's true central moment.
    for (d, &a) in preds.degrees.iter().enumerate() {
        for g in 0..n_groups {
            for i in 1..=m {
                for j in 1..=m {
                    let mut acc = CellAccum::new();
                    for (p, pt) in dist.support.iter().enumerate() {
                        if member[g][p]
                            && bucket_of(preds.mean[p], m) == i
                            && bucket_of(preds.moments[d][p], m) == j
                        {
                            acc.mass += pt.mass;
                            acc.wpred_mean += pt.mass * preds.mean[p];
                            acc.wobs_mean += pt.mass * point_mean[p];
                            acc.wpred_moment += pt.mass * preds.moments[d][p];
                            acc.members.push(p);
                        }
                    }
                    if acc.mass <= 0.0 {
                        continue;
                    }
                    let cell_mean = acc.wobs_mean / acc.mass;
                    let true_moment = acc
                        .members
                        .iter()
                        .map(|&p| {
                            let pt = &dist.support[p];
                            pt.mass
                                * pt.label_expectation(|y| match kind {
                                    MomentKind::Central => (y - cell_mean).powi(a as i32),
                                    MomentKind::Absolute => {
                                        (y - cell_mean).abs().powi(a as i32)
                                    }
                                })
                        })
                        .sum::<f64>()
                        / acc.mass;
                    let mean_gap = (acc.wpred_mean - acc.wobs_mean).abs() / acc.mass;
                    let mean_budget = alpha / acc.mass;
                    let moment_gap = (acc.wpred_moment / acc.mass - true_moment).abs();
                    let moment_budget =
                        (beta + f64::from(a) * alpha) / acc.mass + f64::from(a) / f64::from(m);
                    rows.push(CalibrationRow {
                        cell: CellKey::with_moment(g, i, a, j),
                        mass: acc.mass,
                        mean_gap,
                        mean_budget,
                        mean_pass: mean_gap <= mean_budget,
                        moment_gap: Some(moment_gap),
                        moment_budget: Some(moment_budget),
                        moment_pass: Some(moment_gap <= moment_budget),
                        uncertainty: None,
                        worst_ratio: (mean_gap / mean_budget).max(moment_gap / moment_budget),
                    });
                }
            }
        }
    }

    Ok(CalibrationReport {
        alpha,
        beta,
        slack: 0.0,
        rows,
        violations: 0,
        worst_ratio: 0.0,
    }
    .finalize())
}

/// Exhaustive exact-mode audit of a trained bundle.
pub fn exact_calibration_audit(
    bundle: &PredictorBundle,
    dist: &FiniteDistribution,
    family: &GroupFamily,
    alpha: f64,
    beta: f64,
) -> Result<CalibrationReport> {
    let preds = PointPredictions::from_bundle(bundle, family, dist)?;
    exact_calibration_audit_of(
        &preds,
        dist,
        family,
        bundle.bucket_count,
        bundle.moment_kind,
        alpha,
        beta,
    )
}

/// Held-out empirical calibration audit with count-based masses. Budgets
/// gain `slack`; rows carry the Chernoff uncertainty for `annotate_delta`.
pub fn empirical_calibration_audit(
    bundle: &PredictorBundle,
    data: &[LabeledExample],
    family: &GroupFamily,
    alpha: f64,
    beta: f64,
    annotate_delta: Option<f64>,
    slack: f64,
) -> Result<CalibrationReport> {
    let m = bundle.bucket_count;
    let n = data.len();
    let mut report = CalibrationReport {
        alpha,
        beta,
        slack,
        rows: Vec::new(),
        violations: 0,
        worst_ratio: 0.0,
    };
    if n == 0 {
        return Ok(report);
    }
    let preds = PointPredictions::from_examples(bundle, family, data)?;
    let member = (0..family.len())
        .map(|g| {
            data.iter()
                .map(|ex| family.member(g, &ex.features.values))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let uncertainty = |count: u64| {
        annotate_delta.map(|d| 2.0 * crate::auditor::chernoff_radius(d, count as f64))
    };

    for g in 0..family.len() {
        for i in 1..=m {
            let members: Vec<usize> = (0..n)
                .filter(|&p| member[g][p] && bucket_of(preds.mean[p], m) == i)
                .collect();
            if members.is_empty() {
                continue;
            }
            let count = members.len() as u64;
            let frac = count as f64 / n as f64;
            let avg_pred =
                members.iter().map(|&p| preds.mean[p]).sum::<f64>() / count as f64;
            let avg_label =
                members.iter().map(|&p| data[p].label).sum::<f64>() / count as f64;
            let gap = (avg_pred - avg_label).abs();
            let budget = alpha / frac + slack;
            report.rows.push(CalibrationRow {
                cell: CellKey::mean_only(g, i),
                mass: frac,
                mean_gap: gap,
                mean_budget: budget,
                mean_pass: gap <= budget,
                moment_gap: None,
                moment_budget: None,
                moment_pass: None,
                uncertainty: uncertainty(count),
                worst_ratio: gap / budget,
            });
        }
    }

    for (d, &a) in preds.degrees.iter().enumerate() {
        for g in 0..family.len() {
            for i in 1..=m {
                for j in 1..=m {
                    let members: Vec<usize> = (0..n)
                        .filter(|&p| {
                            member[g][p]
                                && bucket_of(preds.mean[p], m) == i
                                && bucket_of(preds.moments[d][p], m) == j
                        })
                        .collect();
                    if members.is_empty() {
                        continue;
                    }
                    let count = members.len() as f64;
                    let frac = count / n as f64;
                    let avg_pred_mean =
                        members.iter().map(|&p| preds.mean[p]).sum::<f64>() / count;
                    let avg_label =
                        members.iter().map(|&p| data[p].label).sum::<f64>() / count;
                    let avg_pred_moment =
                        members.iter().map(|&p| preds.moments[d][p]).sum::<f64>() / count;
                    let emp_moment = members
                        .iter()
                        .map(|&p| {
                            let dlt = data[p].label - avg_label;
                            match bundle.moment_kind {
                                MomentKind::Central => dlt.powi(a as i32),
                                MomentKind::Absolute => dlt.abs().powi(a as i32),
                            }
                        })
                        .sum::<f64>()
                        / count;
                    let mean_gap = (avg_pred_mean - avg_label).abs();
                    let mean_budget = alpha / frac + slack;
                    let moment_gap = (avg_pred_moment - emp_moment).abs();
                    let moment_budget = (beta + f64::from(a) * alpha) / frac
                        + f64::from(a) / f64::from(m)
                        + slack;
                    report.rows.push(CalibrationRow {
                        cell: CellKey::with_moment(g, i, a, j),
                        mass: frac,
                        mean_gap,
                        mean_budget,
                        mean_pass: mean_gap <= mean_budget,
                        moment_gap: Some(moment_gap),
                        moment_budget: Some(moment_budget),
                        moment_pass: Some(moment_gap <= moment_budget),
                        uncertainty: uncertainty(members.len() as u64),
                        worst_ratio: (mean_gap / mean_budget).max(moment_gap / moment_budget),
                    });
                }
            }
        }
    }

    Ok(report.finalize())
}

/// Coverage of one qualifying cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub cell: CellKey,
    pub mass: f64,
    /// Probability (exact) or fraction (empirical) of labels inside the
    /// interval.
    pub coverage: f64,
    pub required: f64,
    pub pass: bool,
}

/// Exact interval coverage per qualifying cell, computed by summation over
/// the support and label laws (no sampling noise).
pub fn exact_coverage_audit(
    bundle: &PredictorBundle,
    dist: &FiniteDistribution,
    family: &GroupFamily,
    params: &IntervalParams,
) -> Result<Vec<CoverageRow>> {
    params.validate_for(bundle)?;
    let m = bundle.bucket_count;
    let d_idx = bundle.degree_index(params.degree).expect("validated");
    let preds = PointPredictions::from_bundle(bundle, family, dist)?;
    let mut rows = Vec::new();
    for g in 0..family.len() {
        for i in 1..=m {
            for j in 1..=m {
                let mut mass = 0.0;
                let mut hit = 0.0;
                for (p, pt) in dist.support.iter().enumerate() {
                    if !family.member(g, &pt.features.values)?
                        || bucket_of(preds.mean[p], m) != i
                        || bucket_of(preds.moments[d_idx][p], m) != j
                    {
                        continue;
                    }
                    let width = width_from_moment(preds.moments[d_idx][p], params)?;
                    let interval = PredictionInterval::around(preds.mean[p], width);
                    mass += pt.mass;
                    hit += pt.mass * pt.label_expectation(|y| f64::from(interval.contains(y)));
                }
                if mass >= params.gamma {
                    let coverage = hit / mass;
                    rows.push(CoverageRow {
                        cell: CellKey::with_moment(g, i, params.degree, j),
                        mass,
                        coverage,
                        required: 1.0 - params.delta,
                        pass: coverage >= 1.0 - params.delta,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Empirical interval coverage on held-out data, per cell with empirical
/// mass at least `gamma`. `extra_slack` loosens the pass flag for binomial
/// noise.
pub fn coverage_audit(
    bundle: &PredictorBundle,
    data: &[LabeledExample],
    family: &GroupFamily,
    params: &IntervalParams,
    extra_slack: f64,
) -> Result<Vec<CoverageRow>> {
    params.validate_for(bundle)?;
    let m = bundle.bucket_count;
    let d_idx = bundle.degree_index(params.degree).expect("validated");
    let n = data.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let preds = PointPredictions::from_examples(bundle, family, data)?;
    let mut rows = Vec::new();
    for g in 0..family.len() {
        for i in 1..=m {
            for j in 1..=m {
                let mut count = 0u64;
                let mut hit = 0u64;
                for (p, ex) in data.iter().enumerate() {
                    if !family.member(g, &ex.features.values)?
                        || bucket_of(preds.mean[p], m) != i
                        || bucket_of(preds.moments[d_idx][p], m) != j
                    {
                        continue;
                    }
                    let width = width_from_moment(preds.moments[d_idx][p], params)?;
                    let interval = PredictionInterval::around(preds.mean[p], width);
                    count += 1;
                    if interval.contains(ex.label) {
                        hit += 1;
                    }
                }
                let frac = count as f64 / n as f64;
                if count > 0 && frac >= params.gamma {
                    let coverage = hit as f64 / count as f64;
                    let required = 1.0 - params.delta - extra_slack;
                    rows.push(CoverageRow {
                        cell: CellKey::with_moment(g, i, params.degree, j),
                        mass: frac,
                        coverage,
                        required,
                        pass: coverage >= required,
                    });
                }
            }
        }
    }
    Ok(rows)
}
