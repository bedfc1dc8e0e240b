//! Seeded stochastic agent over a symbolic answer space.
//!
//! Each task has one correct token and a handful of wrong ones. A
//! generator proposes the correct token with its base rate, or copies a
//! well-scored consensus, possibly wrong. A verifier scores correct
//! candidates high with its true-positive rate and wrong ones high with
//! its false-positive rate; score noise grows with the square of the
//! round number.

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, BlindedCandidate, ContextPacket, Draft, Evaluation, Timed};
use crate::core_types::AgentId;

pub const CORRECT_ANSWER: &str = "CORRECT";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyDist {
    pub mean_s: f64,
    #[serde(default)]
    pub jitter_s: f64,
}

impl LatencyDist {
    pub const fn fixed(mean_s: f64) -> Self {
        Self {
            mean_s,
            jitter_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Chance of proposing the correct answer unaided.
    pub p_g: f64,
    /// Chance a correct candidate is scored high.
    pub p_v: f64,
    /// Chance a wrong candidate is scored high.
    pub fp_rate: f64,
    /// Chance of copying a consensus whose score reached `adopt_threshold`.
    pub adopt_rate: f64,
    pub adopt_threshold: f64,
    /// Score noise standard deviation per squared round.
    pub fatigue_kappa: f64,
    /// Chance of re-checking a copied answer; a failed check means
    /// proposing afresh.
    pub repulsion: f64,
    /// Distinct wrong answers per task.
    pub wrong_answers: u32,
    pub gen_latency: LatencyDist,
    pub eval_latency: LatencyDist,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            p_g: 0.675,
            p_v: 0.75,
            fp_rate: 0.25,
            adopt_rate: 0.9,
            adopt_threshold: 0.6,
            fatigue_kappa: 0.4,
            repulsion: 0.2,
            wrong_answers: 4,
            gen_latency: LatencyDist::fixed(30.0),
            eval_latency: LatencyDist::fixed(15.0),
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("p_g", self.p_g),
            ("p_v", self.p_v),
            ("fp_rate", self.fp_rate),
            ("adopt_rate", self.adopt_rate),
            ("adopt_threshold", self.adopt_threshold),
            ("repulsion", self.repulsion),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.fatigue_kappa >= 0.0) {
            return Err(format!(
                "fatigue_kappa = {} is negative",
                self.fatigue_kappa
            ));
        }
        if self.wrong_answers == 0 {
            return Err("wrong_answers must be >= 1".into());
        }
        Ok(())
    }
}

pub fn wrong_answer(k: u32) -> String {
    format!("WRONG-{k}")
}

pub struct SimulatedAgent {
    id: AgentId,
    params: SimParams,
    rng: ChaCha8Rng,
}

impl SimulatedAgent {
    pub fn new(id: AgentId, params: SimParams) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(params.seed);
        Self { id, params, rng }
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    fn latency(&mut self, d: LatencyDist) -> f64 {
        let z: f64 = if d.jitter_s > 0.0 {
            Normal::new(0.0, d.jitter_s)
                .expect("positive sd")
                .sample(&mut self.rng)
        } else {
            0.0
        };
        (d.mean_s + z).max(0.0)
    }

    /// Unaided proposal, avoiding `exclude` among wrong answers when possible.
    fn fresh(&mut self, exclude: &[&str]) -> String {
        if self.rng.random::<f64>() < self.params.p_g {
            return CORRECT_ANSWER.to_owned();
        }
        let options: Vec<String> = (0..self.params.wrong_answers)
            .map(wrong_answer)
            .filter(|w| !exclude.contains(&w.as_str()))
            .collect();
        let options = if options.is_empty() {
            (0..self.params.wrong_answers).map(wrong_answer).collect()
        } else {
            options
        };
        let k = self.rng.random_range(0..options.len());
        options[k].clone()
    }

    /// Proposal for one round.
    pub fn propose(&mut self, ctx: &ContextPacket) -> String {
        let adopt = ctx.consensus.as_ref().and_then(|c| {
            (c.score >= self.params.adopt_threshold
                && self.rng.random::<f64>() < self.params.adopt_rate)
                .then(|| c.answer.clone())
        });
        match adopt {
            Some(a) => {
                if self.rejects_on_recheck(&a) {
                    let seen = ctx.answers_in_view();
                    self.fresh(&seen)
                } else {
                    a
                }
            }
            None => self.fresh(&[]),
        }
    }

    /// Raw 0-100 score for one candidate answer in round `round`.
    /// Re-checks a copied answer with the agent's own verifier; a low
    /// check drops it with probability `repulsion`. Dropping depends only on
    /// what the verifier can see, so a coin-flip verifier drops right and
    /// wrong answers alike.
    fn rejects_on_recheck(&mut self, answer: &str) -> bool {
        let p_low = if answer == CORRECT_ANSWER {
            1.0 - self.params.p_v
        } else {
            1.0 - self.params.fp_rate
        };
        self.rng.random::<f64>() < self.params.repulsion && self.rng.random::<f64>() < p_low
    }

    pub fn score(&mut self, answer: &str, round: u32) -> f64 {
        let correct = answer == CORRECT_ANSWER;
        let p_high = if correct {
            self.params.p_v
        } else {
            self.params.fp_rate
        };
        let high = self.rng.random::<f64>() < p_high;
        let base = if high {
            self.rng.random_range(70.0..=100.0)
        } else {
            self.rng.random_range(0.0..=30.0)
        };
        let t = f64::from(round);
        let sd = self.params.fatigue_kappa * t * t;
        let noise = if sd > 0.0 {
            Normal::new(0.0, sd)
                .expect("positive sd")
                .sample(&mut self.rng)
        } else {
            0.0
        };
        (base + noise).clamp(0.0, 100.0)
    }
}

#[async_trait]
impl Agent for SimulatedAgent {
    fn id(&self) -> &AgentId {
        &self.id
    }

    async fn generate(&mut self, ctx: &ContextPacket) -> Result<Timed<Draft>, AgentError> {
        let answer = self.propose(ctx);
        let elapsed = self.latency(self.params.gen_latency);
        Ok(Timed::new(
            Draft {
                reasoning: format!("round {} proposal", ctx.round),
                answer,
            },
            elapsed,
        ))
    }

    async fn evaluate(
        &mut self,
        candidates: &[BlindedCandidate],
        ctx: &ContextPacket,
    ) -> Result<Timed<Vec<Evaluation>>, AgentError> {
        let evals = candidates
            .iter()
            .map(|c| {
                let score = self.score(&c.answer, ctx.round);
                let critique = if score >= 50.0 {
                    "consistent with my own derivation"
                } else {
                    "does not hold up under checking"
                };
                Evaluation {
                    target: c.blinded_id.clone(),
                    score,
                    critique: critique.to_owned(),
                }
            })
            .collect();
        let elapsed = self.latency(self.params.eval_latency);
        Ok(Timed::new(evals, elapsed))
    }
}
