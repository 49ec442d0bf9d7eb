//! Multi-moment interval selection as submodular-cost set cover.
//!
//! Each qualifying cell (mass at least `gamma`, one even degree) is a
//! candidate set whose per-point cost is that degree's interval width. A
//! chosen sub-family must cover every point; a covered point's interval
//! takes the widest width among the chosen sets containing it, so any cover
//! yields valid intervals and the objective is the mass-weighted expected
//! width `sum_x mass(x) * max_{chosen S containing x} width_S(x)`.
//!
//! The greedy solver repeatedly adds the set minimizing marginal objective
//! increase per newly covered point (zero-increase sets come first for
//! free; ties break to the lowest set index). The generic greedy guarantee
//! for this problem class is a factor `(k/2) * H_l` with `H_l` the harmonic
//! number of the largest set size; the brute-force optimum is available for
//! desk-scale comparison.

use serde::{Deserialize, Serialize};

use crate::bundle::{CellKey, PredictorBundle};
use crate::cells::moment_phase_cells;
use crate::data::{FiniteDistribution, LabeledExample};
use crate::error::{Error, Result};
use crate::eval::PointPredictions;
use crate::intervals::{width_from_moment, IntervalParams};
use crate::predicate::GroupFamily;

/// One candidate set: a qualifying cell with per-member interval widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSet {
    pub cell: CellKey,
    pub degree: u32,
    /// Point indices into the instance.
    pub members: Vec<usize>,
    /// Interval width per member, aligned with `members`.
    pub widths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverInstance {
    pub point_ids: Vec<String>,
    pub masses: Vec<f64>,
    pub sets: Vec<CoverSet>,
    /// True when masses are empirical counts rather than exact probabilities.
    pub empirical_masses: bool,
}

impl CoverInstance {
    /// Validate coverage (every point in at least one set) and mass sanity.
    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if self.point_ids.len() != n {
            return Err(Error::Format("point ids and masses disagree".into()));
        }
        let total: f64 = self.masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "point masses sum to {total}"
            )));
        }
        let mut covered = vec![false; n];
        for set in &self.sets {
            if set.members.len() != set.widths.len() {
                return Err(Error::Format("set members and widths disagree".into()));
            }
            for &p in &set.members {
                if p >= n {
                    return Err(Error::Format(format!("set references point {p} >= {n}")));
                }
                covered[p] = true;
            }
        }
        if let Some(p) = covered.iter().position(|&c| !c) {
            return Err(Error::UncoveredPoint {
                id: self.point_ids[p].clone(),
            });
        }
        Ok(())
    }

    /// Largest set cardinality (the harmonic-number argument).
    pub fn max_set_size(&self) -> usize {
        self.sets.iter().map(|s| s.members.len()).max().unwrap_or(0)
    }

    /// Number of distinct degrees contributing sets.
    pub fn degree_count(&self) -> usize {
        let mut degrees: Vec<u32> = self.sets.iter().map(|s| s.degree).collect();
        degrees.sort_unstable();
        degrees.dedup();
        degrees.len()
    }
}

fn qualifying_sets(
    preds: &PointPredictions,
    member: &[Vec<bool>],
    masses: &[f64],
    bundle: &PredictorBundle,
    n_groups: usize,
    params_per_degree: &[IntervalParams],
) -> Result<Vec<CoverSet>> {
    let m = bundle.bucket_count;
    let mut sets = Vec::new();
    for params in params_per_degree {
        params.validate_for(bundle)?;
        let d_idx = bundle.degree_index(params.degree).expect("validated");
        for cell in moment_phase_cells(n_groups, m, params.degree) {
            let mut members = Vec::new();
            let mut widths = Vec::new();
            let mut mass = 0.0;
            for p in 0..masses.len() {
                if !member[cell.group][p] {
                    continue;
                }
                if crate::bucket::bucket_of(preds.mean[p], m) != cell.mean_bucket {
                    continue;
                }
                let mom = preds.moments[d_idx][p];
                if crate::bucket::bucket_of(mom, m) != cell.moment.unwrap().bucket {
                    continue;
                }
                members.push(p);
                widths.push(width_from_moment(mom, params)?);
                mass += masses[p];
            }
            if !members.is_empty() && mass >= params.gamma {
                sets.push(CoverSet {
                    cell,
                    degree: params.degree,
                    members,
                    widths,
                });
            }
        }
    }
    Ok(sets)
}

/// Build a cover instance from exact masses.
pub fn build_cover_instance(
    bundle: &PredictorBundle,
    family: &GroupFamily,
    dist: &FiniteDistribution,
    params_per_degree: &[IntervalParams],
) -> Result<CoverInstance> {
    let preds = PointPredictions::from_bundle(bundle, family, dist)?;
    let member = (0..family.len())
        .map(|g| {
            dist.support
                .iter()
                .map(|p| family.member(g, &p.features.values))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let masses: Vec<f64> = dist.support.iter().map(|p| p.mass).collect();
    let sets = qualifying_sets(
        &preds,
        &member,
        &masses,
        bundle,
        family.len(),
        params_per_degree,
    )?;
    let instance = CoverInstance {
        point_ids: dist
            .support
            .iter()
            .map(|p| p.features.id.clone())
            .collect(),
        masses,
        sets,
        empirical_masses: false,
    };
    instance.validate()?;
    Ok(instance)
}

/// Build a cover instance from held-out examples with empirical masses
/// `1/n` per example (flagged in the output).
pub fn build_cover_instance_empirical(
    bundle: &PredictorBundle,
    family: &GroupFamily,
    data: &[LabeledExample],
    params_per_degree: &[IntervalParams],
) -> Result<CoverInstance> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("empty data".into()));
    }
    let preds = PointPredictions::from_examples(bundle, family, data)?;
    let member = (0..family.len())
        .map(|g| {
            data.iter()
                .map(|ex| family.member(g, &ex.features.values))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len();
    let mut masses = vec![1.0 / n as f64; n];
    let acc: f64 = masses.iter().take(n - 1).sum();
    masses[n - 1] = 1.0 - acc;
    let sets = qualifying_sets(
        &preds,
        &member,
        &masses,
        bundle,
        family.len(),
        params_per_degree,
    )?;
    let instance = CoverInstance {
        point_ids: data.iter().map(|ex| ex.features.id.clone()).collect(),
        masses,
        sets,
        empirical_masses: true,
    };
    instance.validate()?;
    Ok(instance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSolution {
    /// Indices into the instance's set list, in selection order.
    pub chosen: Vec<usize>,
    /// Mass-weighted expected width under the max-width rule.
    pub objective: f64,
}

fn objective_of(instance: &CoverInstance, chosen: &[usize]) -> f64 {
    let mut widest = vec![0.0f64; instance.masses.len()];
    for &s in chosen {
        let set = &instance.sets[s];
        for (&p, &w) in set.members.iter().zip(&set.widths) {
            if w > widest[p] {
                widest[p] = w;
            }
        }
    }
    instance
        .masses
        .iter()
        .zip(&widest)
        .map(|(mass, w)| mass * w)
        .sum()
}

/// Greedy cover: iteratively add the set with the smallest marginal
/// objective increase per newly covered point.
pub fn greedy_cover(instance: &CoverInstance) -> Result<CoverSolution> {
    instance.validate()?;
    let n = instance.masses.len();
    let mut covered = vec![false; n];
    let mut widest = vec![0.0f64; n];
    let mut n_covered = 0usize;
    let mut chosen = Vec::new();
    let mut used = vec![false; instance.sets.len()];
    while n_covered < n {
        let mut best: Option<(f64, usize, usize)> = None; // (ratio, idx, new)
        for (idx, set) in instance.sets.iter().enumerate() {
            if used[idx] {
                continue;
            }
            let mut increase = 0.0;
            let mut newly = 0usize;
            for (&p, &w) in set.members.iter().zip(&set.widths) {
                if !covered[p] {
                    newly += 1;
                    increase += instance.masses[p] * w;
                } else if w > widest[p] {
                    increase += instance.masses[p] * (w - widest[p]);
                }
            }
            if newly == 0 {
                continue;
            }
            let ratio = increase / newly as f64;
            let better = match &best {
                None => true,
                Some((r, _, _)) => ratio < *r,
            };
            if better {
                best = Some((ratio, idx, newly));
            }
        }
        let Some((_, idx, _)) = best else {
            return Err(Error::InfeasibleCover(
                "no remaining set covers an uncovered point".into(),
            ));
        };
        used[idx] = true;
        chosen.push(idx);
        let set = &instance.sets[idx];
        for (&p, &w) in set.members.iter().zip(&set.widths) {
            if !covered[p] {
                covered[p] = true;
                n_covered += 1;
            }
            if w > widest[p] {
                widest[p] = w;
            }
        }
    }
    let objective = instance
        .masses
        .iter()
        .zip(&widest)
        .map(|(mass, w)| mass * w)
        .sum();
    Ok(CoverSolution { chosen, objective })
}

/// Exhaustive optimum over all covering subsets (desk-scale comparator).
pub fn brute_force_cover(instance: &CoverInstance) -> Result<CoverSolution> {
    instance.validate()?;
    let k = instance.sets.len();
    if k > 24 {
        return Err(Error::InvalidParameter(format!(
            "brute force limited to 24 sets, got {k}"
        )));
    }
    let n = instance.masses.len();
    let mut best: Option<CoverSolution> = None;
    for mask in 1u32..(1 << k) {
        let chosen: Vec<usize> = (0..k).filter(|&s| mask & (1 << s) != 0).collect();
        let mut covered = vec![false; n];
        for &s in &chosen {
            for &p in &instance.sets[s].members {
                covered[p] = true;
            }
        }
        if covered.iter().all(|&c| c) {
            let objective = objective_of(instance, &chosen);
            let better = best
                .as_ref()
                .map(|b| objective < b.objective)
                .unwrap_or(true);
            if better {
                best = Some(CoverSolution { chosen, objective });
            }
        }
    }
    best.ok_or_else(|| Error::InfeasibleCover("no subset covers all points".into()))
}

/// Half-width assigned to a point by a cover: the maximum width among
/// chosen sets containing it.
pub fn cover_width_at(
    instance: &CoverInstance,
    solution: &CoverSolution,
    point: usize,
) -> Result<f64> {
    let mut width: Option<f64> = None;
    for &s in &solution.chosen {
        let set = &instance.sets[s];
        for (&p, &w) in set.members.iter().zip(&set.widths) {
            if p == point {
                width = Some(width.map_or(w, |cur: f64| cur.max(w)));
            }
        }
    }
    width.ok_or_else(|| Error::UncoveredPoint {
        id: instance
            .point_ids
            .get(point)
            .cloned()
            .unwrap_or_else(|| format!("#{point}")),
    })
}

/// Interval for a covered point, centered at its predicted mean.
pub fn per_point_interval_from_cover(
    instance: &CoverInstance,
    solution: &CoverSolution,
    point: usize,
    mean: f64,
) -> Result<(f64, f64)> {
    let w = cover_width_at(instance, solution, point)?;
    Ok((mean - w, mean + w))
}

/// l-th harmonic number.
pub fn harmonic(l: usize) -> f64 {
    (1..=l).map(|i| 1.0 / i as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_instance(sets: Vec<(Vec<usize>, f64)>) -> CoverInstance {
        let n = 1 + sets
            .iter()
            .flat_map(|(m, _)| m.iter())
            .copied()
            .max()
            .unwrap_or(0);
        let mut masses = vec![1.0 / n as f64; n];
        let acc: f64 = masses.iter().take(n - 1).sum();
        masses[n - 1] = 1.0 - acc;
        CoverInstance {
            point_ids: (0..n).map(|i| format!("p{i}")).collect(),
            masses,
            sets: sets
                .into_iter()
                .enumerate()
                .map(|(idx, (members, width))| CoverSet {
                    cell: CellKey::mean_only(0, idx as u32 + 1),
                    degree: 2,
                    widths: vec![width; members.len()],
                    members,
                })
                .collect(),
            empirical_masses: false,
        }
    }

    #[test]
    fn worked_three_point_instance() {
        // Uniform points {a,b,c}; sets {a,b}@0.2, {b,c}@0.3, {a,b,c}@0.5.
        // Greedy picks the first two; expected max-width is 4/15.
        let instance = uniform_instance(vec![
            (vec![0, 1], 0.2),
            (vec![1, 2], 0.3),
            (vec![0, 1, 2], 0.5),
        ]);
        let greedy = greedy_cover(&instance).unwrap();
        assert_eq!(greedy.chosen, vec![0, 1]);
        assert!((greedy.objective - 0.26666666666666666).abs() < 1e-9);
        let opt = brute_force_cover(&instance).unwrap();
        assert!((opt.objective - greedy.objective).abs() < 1e-12);
    }

    #[test]
    fn single_covering_set() {
        let instance = uniform_instance(vec![(vec![0, 1, 2], 0.4)]);
        let greedy = greedy_cover(&instance).unwrap();
        assert_eq!(greedy.chosen, vec![0]);
        assert!((greedy.objective - 0.4).abs() < 1e-12);
    }

    #[test]
    fn max_rule_for_overlapping_choices() {
        let instance = uniform_instance(vec![(vec![0, 1], 0.2), (vec![0, 1], 0.3)]);
        let sol = CoverSolution {
            chosen: vec![0, 1],
            objective: 0.0,
        };
        assert!((cover_width_at(&instance, &sol, 0).unwrap() - 0.3).abs() < 1e-12);
        let (lo, hi) = per_point_interval_from_cover(&instance, &sol, 1, 0.5).unwrap();
        assert!((lo - 0.2).abs() < 1e-12 && (hi - 0.8).abs() < 1e-12);
    }

    #[test]
    fn uncovered_point_is_reported_by_id() {
        let mut instance = uniform_instance(vec![(vec![0, 1], 0.2)]);
        instance.point_ids.push("p2".into());
        instance.masses = vec![0.25, 0.25, 0.5];
        let err = instance.validate().unwrap_err();
        assert!(err.to_string().contains("p2"), "{err}");
    }

    #[test]
    fn harmonic_numbers() {
        assert!((harmonic(1) - 1.0).abs() < 1e-15);
        assert!((harmonic(3) - (1.0 + 0.5 + 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(harmonic(0), 0.0);
    }

    #[test]
    fn greedy_prefers_zero_increase_sets() {
        // A set fully inside already-covered points with smaller width has
        // zero marginal cost for its new points.
        let instance = uniform_instance(vec![
            (vec![0, 1, 2], 0.5),
            (vec![3], 0.0),
            (vec![3], 0.4),
        ]);
        let sol = greedy_cover(&instance).unwrap();
        assert!(sol.chosen.contains(&1));
        assert!(!sol.chosen.contains(&2));
    }
}
