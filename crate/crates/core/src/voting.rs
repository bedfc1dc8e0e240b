//! Vote activation, masking and aggregation.
//!
//! Pipeline used by the orchestrator: raw 0-100 scores are normalized to
//! `[0, 1]`, the diagonal is masked, and columns are aggregated with a
//! signed square root. [`qv_activate`] is the budget-clamped activation
//! applied to an evaluator's full raw row; it feeds the reported
//! confidence, not winner selection.

use thiserror::Error;

use crate::core_types::VoteMatrix;

pub const DEFAULT_VOTE_BUDGET: f64 = 100.0;
pub const MAX_RAW_SCORE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VotingError {
    #[error("vote at index {index} is negative or not a number: {value}")]
    NegativeVote { index: usize, value: f64 },
    #[error("vote budget must be positive, got {0}")]
    NonPositiveBudget(f64),
    #[error("vote matrix is not square")]
    NonSquareMatrix,
    #[error("raw score {0} outside [0, 100]")]
    OutOfRange(f64),
    #[error("column {index} out of range for {n} proposers")]
    IndexOutOfRange { index: usize, n: usize },
}

/// One evaluator's raw allocation over all candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVoteVector {
    pub votes: Vec<f64>,
    pub budget: f64,
}

impl RawVoteVector {
    pub fn new(votes: Vec<f64>, budget: f64) -> Self {
        Self { votes, budget }
    }
}

/// Square-root activation with a proportional clamp on overspend.
///
/// Each element is `sqrt(min(v, v / sum * budget)) / sqrt(budget)`.
pub fn qv_activate(v: &RawVoteVector) -> Result<Vec<f64>, VotingError> {
    if !(v.budget > 0.0) || !v.budget.is_finite() {
        return Err(VotingError::NonPositiveBudget(v.budget));
    }
    for (index, &value) in v.votes.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(VotingError::NegativeVote { index, value });
        }
    }
    let total: f64 = v.votes.iter().sum();
    if total == 0.0 {
        return Ok(vec![0.0; v.votes.len()]);
    }
    let root_budget = v.budget.sqrt();
    Ok(v.votes
        .iter()
        .map(|&x| {
            let spend = if total > v.budget {
                x / total * v.budget
            } else {
                x
            };
            (spend.sqrt() / root_budget).min(1.0)
        })
        .collect())
}

/// Zeroes self-votes.
pub fn apply_diagonal_mask(v: &VoteMatrix) -> Result<VoteMatrix, VotingError> {
    if !v.is_square() {
        return Err(VotingError::NonSquareMatrix);
    }
    let mut out = v.clone();
    for (j, row) in out.entries.iter_mut().enumerate() {
        row[j] = 0.0;
    }
    Ok(out)
}

/// Column-wise `sum_j sign(v_ji) * sqrt(|v_ji|)`.
pub fn quadratic_aggregate(v: &VoteMatrix) -> Result<Vec<f64>, VotingError> {
    if !v.is_square() {
        return Err(VotingError::NonSquareMatrix);
    }
    let n = v.rows();
    let mut s = vec![0.0; n];
    for row in &v.entries {
        for (i, &x) in row.iter().enumerate() {
            if x != 0.0 {
                s[i] += x.signum() * x.abs().sqrt();
            }
        }
    }
    Ok(s)
}

/// Maps a raw 0-100 score into `[0, 1]`.
pub fn normalize_score(raw: f64) -> Result<f64, VotingError> {
    if !(0.0..=MAX_RAW_SCORE).contains(&raw) {
        return Err(VotingError::OutOfRange(raw));
    }
    Ok(raw / MAX_RAW_SCORE)
}

/// Population variance of column `k`, excluding the diagonal entry.
pub fn controversy_score(v: &VoteMatrix, k: usize) -> Result<f64, VotingError> {
    if !v.is_square() {
        return Err(VotingError::NonSquareMatrix);
    }
    let n = v.rows();
    if k >= n {
        return Err(VotingError::IndexOutOfRange { index: k, n });
    }
    let sample: Vec<f64> = (0..n).filter(|&j| j != k).map(|j| v.get(j, k)).collect();
    if sample.is_empty() {
        return Ok(0.0);
    }
    let m = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / m;
    Ok(sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn full_budget_is_one() {
        let out = qv_activate(&RawVoteVector::new(vec![100.0], 100.0)).unwrap();
        assert_eq!(out, vec![1.0]);
    }

    #[test]
    fn zero_votes_give_zero() {
        let out = qv_activate(&RawVoteVector::new(vec![0.0; 3], 100.0)).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn overspend_is_clamped_proportionally() {
        let out = qv_activate(&RawVoteVector::new(vec![80.0, 80.0], 100.0)).unwrap();
        let want = 50f64.sqrt() / 10.0;
        assert!(close(out[0], want) && close(out[1], want));
        assert!(close(out[0], std::f64::consts::FRAC_1_SQRT_2));
    }

    #[test]
    fn underspend_is_plain_root() {
        let out = qv_activate(&RawVoteVector::new(vec![25.0], 100.0)).unwrap();
        assert!(close(out[0], 0.5));
    }

    #[test]
    fn activation_errors() {
        assert!(matches!(
            qv_activate(&RawVoteVector::new(vec![1.0, -2.0], 100.0)),
            Err(VotingError::NegativeVote { index: 1, .. })
        ));
        assert!(matches!(
            qv_activate(&RawVoteVector::new(vec![1.0], 0.0)),
            Err(VotingError::NonPositiveBudget(_))
        ));
    }

    #[test]
    fn mask_examples() {
        let m = VoteMatrix::new(1, vec![vec![5.0, 3.0], vec![2.0, 7.0]]);
        let out = apply_diagonal_mask(&m).unwrap();
        assert_eq!(out.entries, vec![vec![0.0, 3.0], vec![2.0, 0.0]]);

        let z = VoteMatrix::zeros(1, 3);
        assert_eq!(apply_diagonal_mask(&z).unwrap(), z);

        let ones = VoteMatrix::new(1, vec![vec![1.0; 3]; 3]);
        let out = apply_diagonal_mask(&ones).unwrap();
        for j in 0..3 {
            for i in 0..3 {
                assert_eq!(out.get(j, i), if i == j { 0.0 } else { 1.0 });
            }
        }

        let ragged = VoteMatrix::new(1, vec![vec![1.0, 2.0], vec![1.0]]);
        assert_eq!(
            apply_diagonal_mask(&ragged),
            Err(VotingError::NonSquareMatrix)
        );
    }

    #[test]
    fn aggregate_examples() {
        // Column 0 holds [49, 0, 16]; the diagonal entry (0,0) is 49 on
        // purpose since aggregation does not mask.
        let m = VoteMatrix::new(
            1,
            vec![
                vec![49.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0],
                vec![16.0, 0.0, 0.0],
            ],
        );
        assert_eq!(quadratic_aggregate(&m).unwrap(), vec![11.0, 0.0, 0.0]);
        assert_eq!(
            quadratic_aggregate(&VoteMatrix::zeros(1, 4)).unwrap(),
            vec![0.0; 4]
        );
        let unit = VoteMatrix::new(1, vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(quadratic_aggregate(&unit).unwrap()[0], 2.0);
    }

    #[test]
    fn aggregate_keeps_sign() {
        let m = VoteMatrix::new(1, vec![vec![0.0, -0.25], vec![0.0, 0.0]]);
        assert_eq!(quadratic_aggregate(&m).unwrap(), vec![0.0, -0.5]);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_score(100.0).unwrap(), 1.0);
        assert_eq!(normalize_score(0.0).unwrap(), 0.0);
        assert_eq!(normalize_score(50.0).unwrap(), 0.5);
        assert_eq!(normalize_score(100.5), Err(VotingError::OutOfRange(100.5)));
        assert!(normalize_score(f64::NAN).is_err());
    }

    fn col_matrix(col: &[f64]) -> VoteMatrix {
        // Column 0 gets `col` on rows 1.., diagonal left at a nonzero value
        // to prove it is excluded.
        let n = col.len() + 1;
        let mut e = vec![vec![0.0; n]; n];
        e[0][0] = 0.9;
        for (j, &x) in col.iter().enumerate() {
            e[j + 1][0] = x;
        }
        VoteMatrix::new(1, e)
    }

    #[test]
    fn controversy_examples() {
        assert_eq!(controversy_score(&col_matrix(&[0.5, 0.5]), 0).unwrap(), 0.0);
        assert!(close(
            controversy_score(&col_matrix(&[0.0, 1.0]), 0).unwrap(),
            0.25
        ));
        assert!(close(
            controversy_score(&col_matrix(&[0.2, 0.8, 0.5]), 0).unwrap(),
            0.06
        ));
        assert_eq!(
            controversy_score(&col_matrix(&[0.5]), 5),
            Err(VotingError::IndexOutOfRange { index: 5, n: 2 })
        );
    }

    fn square(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..=1.0, n), n)
    }

    fn sized_square() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..8).prop_flat_map(square)
    }

    proptest! {
        #[test]
        fn activation_monotone(
            votes in prop::collection::vec(0.0f64..=100.0, 1..8),
            idx in 0usize..8,
            bump in 0.0f64..50.0,
        ) {
            let i = idx % votes.len();
            let base = qv_activate(&RawVoteVector::new(votes.clone(), 100.0)).unwrap();
            let mut up = votes.clone();
            up[i] += bump;
            let raised = qv_activate(&RawVoteVector::new(up, 100.0)).unwrap();
            prop_assert!(raised[i] + 1e-12 >= base[i]);
        }

        #[test]
        fn activation_in_unit_interval(
            votes in prop::collection::vec(0.0f64..=100.0, 0..10),
            budget in 1.0f64..500.0,
        ) {
            for x in qv_activate(&RawVoteVector::new(votes, budget)).unwrap() {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn overspend_scale_invariant(
            votes in prop::collection::vec(1.0f64..=100.0, 2..8),
            c in 1.0f64..20.0,
        ) {
            let total: f64 = votes.iter().sum();
            prop_assume!(total > 100.0);
            let a = qv_activate(&RawVoteVector::new(votes.clone(), 100.0)).unwrap();
            let scaled: Vec<f64> = votes.iter().map(|x| x * c).collect();
            let b = qv_activate(&RawVoteVector::new(scaled, 100.0)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn self_vote_has_no_effect(e in sized_square(), j in 0usize..8) {
            let n = e.len();
            let j = j % n;
            let masked = apply_diagonal_mask(&VoteMatrix::new(1, e.clone())).unwrap();
            let s = quadratic_aggregate(&masked).unwrap();
            let mut without = masked.clone();
            without.entries[j] = vec![0.0; n];
            let s2 = quadratic_aggregate(&without).unwrap();
            prop_assert_eq!(s[j], s2[j]);
        }

        #[test]
        fn row_order_irrelevant(e in sized_square(), rot in 0usize..8) {
            let masked = apply_diagonal_mask(&VoteMatrix::new(1, e)).unwrap();
            let s = quadratic_aggregate(&masked).unwrap();
            let mut rows = masked.entries.clone();
            let n = rows.len();
            rows.rotate_left(rot % n);
            rows.reverse();
            let s2 = quadratic_aggregate(&VoteMatrix::new(1, rows)).unwrap();
            for (a, b) in s.iter().zip(&s2) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn mask_zeroes_only_diagonal(e in sized_square()) {
            let v = VoteMatrix::new(1, e.clone());
            let m = apply_diagonal_mask(&v).unwrap();
            prop_assert!(m.is_masked_unit());
            for (j, row) in e.iter().enumerate() {
                for (i, &x) in row.iter().enumerate() {
                    if i != j {
                        prop_assert_eq!(m.get(j, i), x);
                    }
                }
            }
        }
    }
}
