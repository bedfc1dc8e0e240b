//! Consensus state updates, halting, and final answer selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_types::{
    ConsensusEntry, DeliberationState, HistorySummary, Proposal, RoundRecord, TemporalKernel,
};

pub const DEFAULT_SCORE_TOLERANCE: f64 = 0.05;
pub const DEFAULT_EPSILON: f64 = 0.02;
pub const DEFAULT_RETENTION_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ACTIVE_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("history is empty")]
    EmptyHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Converged,
    FatigueLimit,
    BudgetExhausted,
}

/// Per-round summary kept in the session record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u32,
    pub winner: Proposal,
    pub winner_score: f64,
    pub delta_magnitude: f64,
    pub gamma_t: f64,
}

/// Commits a finished round.
///
/// The winner becomes the consensus. The previous consensus stays
/// verbatim when `gamma_t >= retention_threshold`, otherwise it and any
/// retained entries are compressed. Rounds older than the active window
/// are compressed as well.
pub fn commit_state(
    prev: DeliberationState,
    record: RoundRecord,
    gamma_t: f64,
    retention_threshold: f64,
) -> DeliberationState {
    let mut s = prev;
    let entry = ConsensusEntry {
        proposal: record.winning_proposal().clone(),
        score: record.winning_score(),
    };
    if let Some(old) = s.consensus.take() {
        if gamma_t >= retention_threshold {
            s.retained.push(old);
        } else {
            for r in std::mem::take(&mut s.retained) {
                s.insert_summary(HistorySummary::of(&r));
            }
            s.insert_summary(HistorySummary::of(&old));
        }
    }
    let t = record.round;
    s.history.push(record);
    s.consensus = Some(entry);

    let cutoff = t.saturating_sub(s.active_window as u32);
    let stale: Vec<ConsensusEntry> = s
        .history
        .iter()
        .filter(|r| r.round < cutoff)
        .map(|r| ConsensusEntry {
            proposal: r.winning_proposal().clone(),
            score: r.winning_score(),
        })
        .collect();
    for e in &stale {
        s.insert_summary(HistorySummary::of(e));
    }
    let (keep, old): (Vec<_>, Vec<_>) = std::mem::take(&mut s.retained)
        .into_iter()
        .partition(|e| e.proposal.round >= cutoff);
    for e in &old {
        s.insert_summary(HistorySummary::of(e));
    }
    s.retained = keep;
    s
}

/// Scalar stand-in for the amount of new information in a round.
///
/// Zero when the winning answer is unchanged and its score moved less
/// than `tolerance`; the score change when the answer is unchanged but
/// the score moved; the new score when the answer changed.
pub fn convergence_delta(
    winner_score: f64,
    prev_winner_score: f64,
    winner_changed: bool,
    tolerance: f64,
) -> f64 {
    if winner_changed {
        return winner_score.abs();
    }
    let d = (winner_score - prev_winner_score).abs();
    if d < tolerance {
        0.0
    } else {
        d
    }
}

/// `None` means keep going.
pub fn should_halt(
    delta: f64,
    epsilon: f64,
    gamma_t: f64,
    t: u32,
    t_max: u32,
) -> Option<HaltReason> {
    if delta < epsilon {
        Some(HaltReason::Converged)
    } else if gamma_t <= 0.0 {
        Some(HaltReason::FatigueLimit)
    } else if t >= t_max {
        Some(HaltReason::BudgetExhausted)
    } else {
        None
    }
}

/// Every proposal in the history with its confidence score.
pub fn history_candidates(history: &[RoundRecord]) -> Vec<ConsensusEntry> {
    history
        .iter()
        .flat_map(|r| {
            r.proposals
                .iter()
                .zip(&r.confidence)
                .map(|(p, &score)| ConsensusEntry {
                    proposal: p.clone(),
                    score,
                })
        })
        .collect()
}

/// Argmax of `score * weight(round)`. Ties go to the later round, then
/// to the lower author id.
pub fn select_consensus(
    candidates: &[ConsensusEntry],
    kernel: &TemporalKernel,
) -> Result<ConsensusEntry, ConsensusError> {
    let last = candidates
        .iter()
        .map(|c| c.proposal.round)
        .max()
        .ok_or(ConsensusError::EmptyHistory)?;
    let pool: Vec<&ConsensusEntry> = {
        let weighted: Vec<_> = candidates
            .iter()
            .filter(|c| kernel.weight(c.proposal.round, last) > 0.0)
            .collect();
        if weighted.is_empty() {
            candidates.iter().collect()
        } else {
            weighted
        }
    };
    let value = |c: &ConsensusEntry| c.score * kernel.weight(c.proposal.round, last);
    let best = pool
        .into_iter()
        .max_by(|a, b| {
            value(a)
                .total_cmp(&value(b))
                .then(a.proposal.round.cmp(&b.proposal.round))
                .then(b.proposal.author.cmp(&a.proposal.author))
        })
        .expect("nonempty");
    Ok(best.clone())
}
