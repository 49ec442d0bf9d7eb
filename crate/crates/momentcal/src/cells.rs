//! Deterministic cell enumeration orders shared by trainers and auditors.
//!
//! Violation scans take the first violating cell in this order: groups in
//! declaration order; within a group, mean-only cells by ascending bucket,
//! then moment cells by ascending (degree, mean bucket, moment bucket).

use crate::bundle::{CellKey, GroupSel, MomentConstraint, SetDescriptor};
use crate::predicate::Predicate;

/// Cells audited during the mean phase: every mean-only cell and every
/// moment cell of every tracked degree.
pub fn mean_phase_cells(n_groups: usize, bucket_count: u32, degrees: &[u32]) -> Vec<CellKey> {
    let m = bucket_count;
    let mut cells =
        Vec::with_capacity(n_groups * (m as usize + degrees.len() * (m as usize).pow(2)));
    for g in 0..n_groups {
        for i in 1..=m {
            cells.push(CellKey::mean_only(g, i));
        }
        for &a in degrees {
            for i in 1..=m {
                for j in 1..=m {
                    cells.push(CellKey::with_moment(g, i, a, j));
                }
            }
        }
    }
    cells
}

/// Cells audited by one pseudo-moment loop: the moment cells of one degree.
pub fn moment_phase_cells(n_groups: usize, bucket_count: u32, degree: u32) -> Vec<CellKey> {
    let m = bucket_count;
    let mut cells = Vec::with_capacity(n_groups * (m as usize).pow(2));
    for g in 0..n_groups {
        for i in 1..=m {
            for j in 1..=m {
                cells.push(CellKey::with_moment(g, i, degree, j));
            }
        }
    }
    cells
}

/// Domain-wide refinements for oracle-backed audits (no group restriction):
/// the bucket structure of the mean phase.
pub fn mean_phase_refinements(bucket_count: u32, degrees: &[u32]) -> Vec<SetDescriptor> {
    let m = bucket_count;
    let mut out = Vec::new();
    for i in 1..=m {
        out.push(SetDescriptor {
            group: GroupSel::Learned(Predicate::always()),
            mean_bucket: Some(i),
            moment: None,
        });
    }
    for &a in degrees {
        for i in 1..=m {
            for j in 1..=m {
                out.push(SetDescriptor {
                    group: GroupSel::Learned(Predicate::always()),
                    mean_bucket: Some(i),
                    moment: Some(MomentConstraint {
                        degree: a,
                        bucket: j,
                    }),
                });
            }
        }
    }
    out
}

/// Domain-wide refinements for one pseudo-moment phase.
pub fn moment_phase_refinements(bucket_count: u32, degree: u32) -> Vec<SetDescriptor> {
    let m = bucket_count;
    let mut out = Vec::with_capacity((m as usize).pow(2));
    for i in 1..=m {
        for j in 1..=m {
            out.push(SetDescriptor {
                group: GroupSel::Learned(Predicate::always()),
                mean_bucket: Some(i),
                moment: Some(MomentConstraint {
                    degree,
                    bucket: j,
                }),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_phase_order_is_group_major() {
        let cells = mean_phase_cells(2, 2, &[2]);
        // Per group: 2 mean cells + 4 moment cells.
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0], CellKey::mean_only(0, 1));
        assert_eq!(cells[1], CellKey::mean_only(0, 2));
        assert_eq!(cells[2], CellKey::with_moment(0, 1, 2, 1));
        assert_eq!(cells[5], CellKey::with_moment(0, 2, 2, 2));
        assert_eq!(cells[6], CellKey::mean_only(1, 1));
    }

    #[test]
    fn moment_phase_counts() {
        let cells = moment_phase_cells(3, 4, 2);
        assert_eq!(cells.len(), 3 * 16);
        assert!(cells.iter().all(|c| c.moment.unwrap().degree == 2));
    }

    #[test]
    fn refinements_mirror_cell_structure() {
        assert_eq!(mean_phase_refinements(3, &[2, 4]).len(), 3 + 2 * 9);
        assert_eq!(moment_phase_refinements(3, 4).len(), 9);
    }
}
