//! Post-session accounting: vote-share influence, win-rate grids and
//! round latency, plus lossless CSV and JSON export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::ensemble_key;
use crate::consensus::HaltReason;
use crate::core_types::{AgentId, RoundRecord};
use crate::orchestrator::SessionRecord;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("agent {0} never took part in the session")]
    UnknownAgent(AgentId),
    #[error("no rounds recorded")]
    EmptyHistory,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad export file {file}: {reason}")]
    Format { file: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub round: u32,
    pub gen_s: f64,
    pub eval_s: f64,
    pub total_s: f64,
    pub cumulative_s: f64,
}

/// Per-agent wall times for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub round: u32,
    pub gen_s: Vec<f64>,
    pub eval_s: Vec<f64>,
}

impl From<&RoundRecord> for RoundTiming {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            gen_s: r.gen_s.clone(),
            eval_s: r.eval_s.clone(),
        }
    }
}

/// One cell of a win-rate grid in long form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateRow {
    pub ensemble: String,
    pub agent: AgentId,
    pub round: u32,
    pub win_rate: f64,
    /// Sessions of this ensemble that reached the round.
    pub sessions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub session_id: String,
    pub agents: Vec<AgentId>,
    /// `influence[j][i]`: mean normalized vote from voter `j` to proposer `i`.
    pub influence: Vec<Vec<f64>>,
    pub influence_scores: Vec<f64>,
    pub win_rates: Vec<WinRateRow>,
    pub latency: Vec<LatencyRow>,
    pub rounds: u32,
    pub halt_reason: Option<HaltReason>,
}

impl InfluenceReport {
    pub fn from_session(record: &SessionRecord, overhead_s: f64) -> Self {
        let agents = session_agents(&record.rounds);
        let influence = influence_matrix(&record.rounds, &agents);
        let influence_scores = (0..agents.len())
            .map(|i| column_mass(&influence, i))
            .collect();
        let timings: Vec<RoundTiming> = record.rounds.iter().map(RoundTiming::from).collect();
        Self {
            session_id: record.session_id.clone(),
            agents,
            influence,
            influence_scores,
            win_rates: win_rate_matrix(std::slice::from_ref(record)),
            latency: latency_report(&timings, overhead_s),
            rounds: record.rounds_run(),
            halt_reason: Some(record.halt_reason),
        }
    }

    pub fn converged_at(&self) -> Option<u32> {
        (self.halt_reason == Some(HaltReason::Converged)).then_some(self.rounds)
    }

    pub fn top_influencer(&self) -> Option<(&AgentId, f64)> {
        self.agents
            .iter()
            .zip(self.influence_scores.iter().copied())
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(a.0)))
    }
}

fn column_mass(m: &[Vec<f64>], i: usize) -> f64 {
    m.iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, row)| row[i])
        .sum()
}

/// Everyone who took part in any round, in first-seen order.
pub fn session_agents(rounds: &[RoundRecord]) -> Vec<AgentId> {
    let mut out: Vec<AgentId> = Vec::new();
    for r in rounds {
        for p in &r.participants {
            if !out.contains(p) {
                out.push(p.clone());
            }
        }
    }
    out
}

/// Mean vote share matrix over all rounds; rounds where a pair was absent
/// contribute zero.
pub fn influence_matrix(rounds: &[RoundRecord], agents: &[AgentId]) -> Vec<Vec<f64>> {
    let n = agents.len();
    let mut m = vec![vec![0.0; n]; n];
    if rounds.is_empty() {
        return m;
    }
    for r in rounds {
        let idx: Vec<Option<usize>> = r
            .participants
            .iter()
            .map(|p| agents.iter().position(|a| a == p))
            .collect();
        for (j, row) in r.votes.entries.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if let (Some(a), Some(b)) = (idx[j], idx[i]) {
                    if a != b {
                        m[a][b] += v;
                    }
                }
            }
        }
    }
    let t = rounds.len() as f64;
    for row in &mut m {
        for x in row.iter_mut() {
            *x /= t;
        }
    }
    m
}

/// Mean over rounds of the off-diagonal vote mass `agent` received.
pub fn influence_score(rounds: &[RoundRecord], agent: &AgentId) -> Result<f64, TelemetryError> {
    if rounds.is_empty() {
        return Err(TelemetryError::EmptyHistory);
    }
    let mut total = 0.0;
    let mut seen = false;
    for r in rounds {
        if let Some(i) = r.participants.iter().position(|p| p == agent) {
            seen = true;
            total += r
                .votes
                .column(i)
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v)
                .sum::<f64>();
        }
    }
    if !seen {
        return Err(TelemetryError::UnknownAgent(agent.clone()));
    }
    Ok(total / rounds.len() as f64)
}

/// Fraction of sessions, per ensemble and round, won by each agent.
pub fn win_rate_matrix(sessions: &[SessionRecord]) -> Vec<WinRateRow> {
    // ensemble -> (agents in first-seen order, round -> (reached, wins per agent))
    type Tally = (Vec<AgentId>, BTreeMap<u32, (u32, BTreeMap<AgentId, u32>)>);
    let mut groups: BTreeMap<String, Tally> = BTreeMap::new();
    for s in sessions {
        let (agents, rounds) = groups
            .entry(ensemble_key(&s.manifest.agents))
            .or_insert_with(|| (s.manifest.agents.clone(), BTreeMap::new()));
        for r in &s.rounds {
            let w = r.winning_proposal().author.clone();
            if !agents.contains(&w) {
                agents.push(w.clone());
            }
            let (reached, wins) = rounds.entry(r.round).or_default();
            *reached += 1;
            *wins.entry(w).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for (ensemble, (agents, rounds)) in groups {
        for a in &agents {
            for (&round, (reached, wins)) in &rounds {
                let k = wins.get(a).copied().unwrap_or(0);
                out.push(WinRateRow {
                    ensemble: ensemble.clone(),
                    agent: a.clone(),
                    round,
                    win_rate: f64::from(k) / f64::from(*reached),
                    sessions: *reached,
                });
            }
        }
    }
    out
}

/// Each phase waits for its slowest agent.
pub fn latency_report(timings: &[RoundTiming], overhead_s: f64) -> Vec<LatencyRow> {
    let mut cumulative = 0.0;
    timings
        .iter()
        .map(|t| {
            let gen_s = t.gen_s.iter().copied().fold(0.0, f64::max);
            let eval_s = t.eval_s.iter().copied().fold(0.0, f64::max);
            let total_s = gen_s + eval_s + overhead_s;
            cumulative += total_s;
            LatencyRow {
                round: t.round,
                gen_s,
                eval_s,
                total_s,
                cumulative_s: cumulative,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TimingRow {
    round: u32,
    agent: String,
    gen_s: f64,
    eval_s: f64,
}

/// Reads per-agent timings from `round,agent,gen_s,eval_s` CSV.
pub fn read_timings_csv(path: &Path) -> Result<Vec<RoundTiming>, TelemetryError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut by_round: BTreeMap<u32, RoundTiming> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: TimingRow = row?;
        let t = by_round.entry(row.round).or_insert_with(|| RoundTiming {
            round: row.round,
            gen_s: Vec::new(),
            eval_s: Vec::new(),
        });
        t.gen_s.push(row.gen_s);
        t.eval_s.push(row.eval_s);
    }
    Ok(by_round.into_values().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Json,
    Csv,
}

pub const JSON_BUNDLE: &str = "report.json";
pub const INFLUENCE_CSV: &str = "influence.csv";
pub const SCORES_CSV: &str = "influence_scores.csv";
pub const WIN_RATE_CSV: &str = "win_rates.csv";
pub const LATENCY_CSV: &str = "latency.csv";
pub const SESSION_CSV: &str = "session.csv";

#[derive(Debug, Serialize, Deserialize)]
struct SessionRow {
    session_id: String,
    rounds: u32,
    halt_reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    agent: AgentId,
    influence_score: f64,
}

fn halt_str(h: Option<HaltReason>) -> String {
    h.map(|h| {
        serde_json::to_value(h)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    })
    .unwrap_or_default()
}

fn parse_halt(s: &str) -> Result<Option<HaltReason>, TelemetryError> {
    if s.is_empty() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_value(serde_json::Value::String(
        s.to_owned(),
    ))?))
}

/// Writes the report into `dir`.
///
/// JSON produces a single bundle. CSV produces the heatmap-ready influence
/// matrix (voter rows, proposer columns), per-agent scores, the win-rate
/// grid in long form, latency rows and a one-row session header.
pub fn export(
    report: &InfluenceReport,
    dir: &Path,
    format: ExportFormat,
) -> Result<Vec<PathBuf>, TelemetryError> {
    std::fs::create_dir_all(dir)?;
    match format {
        ExportFormat::Json => {
            let path = dir.join(JSON_BUNDLE);
            std::fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
            Ok(vec![path])
        }
        ExportFormat::Csv => {
            let mut written = Vec::new();

            let path = dir.join(INFLUENCE_CSV);
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["voter".to_owned()];
            header.extend(report.agents.iter().map(|a| a.0.clone()));
            w.write_record(&header)?;
            for (a, row) in report.agents.iter().zip(&report.influence) {
                let mut rec = vec![a.0.clone()];
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
            written.push(path);

            let scores: Vec<ScoreRow> = report
                .agents
                .iter()
                .zip(&report.influence_scores)
                .map(|(a, s)| ScoreRow {
                    agent: a.clone(),
                    influence_score: *s,
                })
                .collect();
            written.push(write_rows(
                &dir.join(SCORES_CSV),
                &["agent", "influence_score"],
                &scores,
            )?);
            written.push(write_rows(
                &dir.join(WIN_RATE_CSV),
                &["ensemble", "agent", "round", "win_rate", "sessions"],
                &report.win_rates,
            )?);
            written.push(write_rows(
                &dir.join(LATENCY_CSV),
                &["round", "gen_s", "eval_s", "total_s", "cumulative_s"],
                &report.latency,
            )?);
            written.push(write_rows(
                &dir.join(SESSION_CSV),
                &["session_id", "rounds", "halt_reason"],
                &[SessionRow {
                    session_id: report.session_id.clone(),
                    rounds: report.rounds,
                    halt_reason: halt_str(report.halt_reason),
                }],
            )?);
            Ok(written)
        }
    }
}

/// Writes rows with an explicit header so empty inputs still yield one.
pub fn write_rows<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: &[T],
) -> Result<PathBuf, TelemetryError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, TelemetryError> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize()
        .map(|r| r.map_err(TelemetryError::from))
        .collect()
}

/// Reads back what [`export`] wrote.
pub fn import(dir: &Path, format: ExportFormat) -> Result<InfluenceReport, TelemetryError> {
    match format {
        ExportFormat::Json => Ok(serde_json::from_str(&std::fs::read_to_string(
            dir.join(JSON_BUNDLE),
        )?)?),
        ExportFormat::Csv => {
            let bad = |file: &str, reason: String| TelemetryError::Format {
                file: file.to_owned(),
                reason,
            };
            let mut rdr = csv::Reader::from_path(dir.join(INFLUENCE_CSV))?;
            let agents: Vec<AgentId> = rdr.headers()?.iter().skip(1).map(AgentId::new).collect();
            let mut influence = Vec::with_capacity(agents.len());
            for (k, rec) in rdr.records().enumerate() {
                let rec = rec?;
                if rec.get(0) != agents.get(k).map(|a| a.as_str()) {
                    return Err(bad(
                        INFLUENCE_CSV,
                        format!("row {k} voter does not match header"),
                    ));
                }
                let row = rec
                    .iter()
                    .skip(1)
                    .map(|x| {
                        x.parse::<f64>()
                            .map_err(|e| bad(INFLUENCE_CSV, e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                influence.push(row);
            }
            let scores: Vec<ScoreRow> = read_rows(&dir.join(SCORES_CSV))?;
            if scores.iter().map(|s| &s.agent).ne(agents.iter()) {
                return Err(bad(
                    SCORES_CSV,
                    "agents do not match the influence matrix".into(),
                ));
            }
            let session: Vec<SessionRow> = read_rows(&dir.join(SESSION_CSV))?;
            let [session] = <[SessionRow; 1]>::try_from(session)
                .map_err(|v| bad(SESSION_CSV, format!("expected one row, found {}", v.len())))?;
            Ok(InfluenceReport {
                session_id: session.session_id,
                agents,
                influence,
                influence_scores: scores.into_iter().map(|s| s.influence_score).collect(),
                win_rates: read_rows(&dir.join(WIN_RATE_CSV))?,
                latency: read_rows(&dir.join(LATENCY_CSV))?,
                rounds: session.rounds,
                halt_reason: parse_halt(&session.halt_reason)?,
            })
        }
    }
}

/// Short human-readable summary.
pub fn summarize(report: &InfluenceReport, planned_rounds: Option<u32>) -> String {
    let mut s = format!("session {}: {} rounds", report.session_id, report.rounds);
    if let Some(h) = report.halt_reason {
        s.push_str(&format!(", halted: {}", halt_str(Some(h))));
    }
    s.push('\n');
    match report.top_influencer() {
        Some((a, x)) => s.push_str(&format!("top influencer: {a} ({x:.3})\n")),
        None => s.push_str("top influencer: none\n"),
    }
    match (report.converged_at(), planned_rounds) {
        (Some(c), Some(t)) if c < t => s.push_str(&format!(
            "converged at round {c}, {} before the planned stop {t}\n",
            t - c
        )),
        (Some(c), Some(t)) => s.push_str(&format!("converged at round {c} (planned stop {t})\n")),
        (Some(c), None) => s.push_str(&format!("converged at round {c}\n")),
        (None, Some(t)) => s.push_str(&format!("did not converge; planned stop {t}\n")),
        (None, None) => s.push_str("did not converge\n"),
    }
    if let Some(last) = report.latency.last() {
        s.push_str(&format!("total latency {:.2}s\n", last.cumulative_s));
    }
    for (a, x) in report.agents.iter().zip(&report.influence_scores) {
        s.push_str(&format!("  {a:<24} influence {x:.3}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::{BlindedId, Proposal, VoteMatrix};
    use proptest::prelude::*;

    fn round(t: u32, ids: &[&str], votes: Vec<Vec<f64>>, winner: usize) -> RoundRecord {
        let n = ids.len();
        RoundRecord {
            round: t,
            participants: ids.iter().map(|&s| s.into()).collect(),
            proposals: ids
                .iter()
                .map(|&s| Proposal {
                    round: t,
                    author: s.into(),
                    blinded_id: BlindedId(format!("b{s}")),
                    reasoning: String::new(),
                    answer: s.into(),
                })
                .collect(),
            raw_scores: vec![vec![0.0; n]; n],
            critiques: vec![vec![String::new(); n]; n],
            votes: VoteMatrix::new(t, votes),
            scores: vec![0.0; n],
            confidence: vec![0.0; n],
            qv_confidence: vec![0.0; n],
            winner,
            gen_s: vec![1.0; n],
            eval_s: vec![1.0; n],
        }
    }

    #[test]
    fn single_vote_influence() {
        let r = round(1, &["a", "b"], vec![vec![0.0, 0.0], vec![0.8, 0.0]], 0);
        assert_eq!(influence_score(&[r], &"a".into()).unwrap(), 0.8);
    }

    #[test]
    fn zero_votes_zero_influence() {
        let r = round(1, &["a", "b"], vec![vec![0.0; 2]; 2], 0);
        assert_eq!(influence_score(&[r], &"b".into()).unwrap(), 0.0);
    }

    #[test]
    fn influence_is_mean_over_rounds() {
        let r1 = round(
            1,
            &["a", "b", "c"],
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
                vec![0.7, 0.0, 0.0],
            ],
            0,
        );
        let r2 = round(
            2,
            &["a", "b", "c"],
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.25, 0.0, 0.0],
                vec![0.35, 0.0, 0.0],
            ],
            0,
        );
        assert!((influence_score(&[r1, r2], &"a".into()).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn unknown_agent_and_empty_history() {
        let r = round(1, &["a"], vec![vec![0.0]], 0);
        assert!(matches!(
            influence_score(&[r], &"z".into()),
            Err(TelemetryError::UnknownAgent(_))
        ));
        assert!(matches!(
            influence_score(&[], &"a".into()),
            Err(TelemetryError::EmptyHistory)
        ));
    }

    #[test]
    fn table_round_one_latency() {
        let rows = latency_report(
            &[RoundTiming {
                round: 1,
                gen_s: vec![31.87, 12.0],
                eval_s: vec![20.93, 3.0],
            }],
            0.0,
        );
        assert!((rows[0].total_s - 52.80).abs() < 1e-9);
    }

    #[test]
    fn instantaneous_agent_costs_only_overhead() {
        let rows = latency_report(
            &[RoundTiming {
                round: 1,
                gen_s: vec![0.0],
                eval_s: vec![0.0],
            }],
            2.0,
        );
        assert_eq!(rows[0].total_s, 2.0);
    }

    #[test]
    fn cumulative_is_prefix_sum() {
        let timings: Vec<RoundTiming> = (1..=7)
            .map(|t| RoundTiming {
                round: t,
                gen_s: vec![f64::from(t), 0.5],
                eval_s: vec![1.0],
            })
            .collect();
        let rows = latency_report(&timings, 0.0);
        // totals are t + 1, prefix sums t(t+1)/2 + t
        for (k, r) in rows.iter().enumerate() {
            let t = (k + 1) as f64;
            assert!((r.cumulative_s - (t * (t + 1.0) / 2.0 + t)).abs() < 1e-12);
        }
    }

    fn report(n: usize) -> InfluenceReport {
        let agents: Vec<AgentId> = (0..n).map(|k| AgentId::new(format!("agent-{k}"))).collect();
        let influence: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                (0..n)
                    .map(|i| {
                        if i == j {
                            0.0
                        } else {
                            0.1 + 0.7 / (1.0 + (i * 3 + j) as f64)
                        }
                    })
                    .collect()
            })
            .collect();
        InfluenceReport {
            session_id: "s-1".into(),
            influence_scores: (0..n).map(|i| column_mass(&influence, i)).collect(),
            agents: agents.clone(),
            influence,
            win_rates: agents
                .iter()
                .map(|a| WinRateRow {
                    ensemble: "e".into(),
                    agent: a.clone(),
                    round: 1,
                    win_rate: 1.0 / 3.0,
                    sessions: 3,
                })
                .collect(),
            latency: latency_report(
                &[RoundTiming {
                    round: 1,
                    gen_s: vec![0.1 + 0.2],
                    eval_s: vec![1.0 / 7.0],
                }],
                0.0,
            ),
            rounds: 1,
            halt_reason: Some(HaltReason::FatigueLimit),
        }
    }

    #[test]
    fn csv_matrix_has_zero_diagonal() {
        let dir = tempfile::tempdir().unwrap();
        export(&report(3), dir.path(), ExportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(dir.path().join(INFLUENCE_CSV)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        for (k, line) in lines[1..].iter().enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 4);
            assert_eq!(cells[k + 1], "0");
        }
    }

    #[test]
    fn round_trip_both_formats() {
        for fmt in [ExportFormat::Json, ExportFormat::Csv] {
            let dir = tempfile::tempdir().unwrap();
            let r = report(3);
            export(&r, dir.path(), fmt).unwrap();
            assert_eq!(import(dir.path(), fmt).unwrap(), r);
        }
    }

    #[test]
    fn empty_report_gives_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = InfluenceReport {
            session_id: "empty".into(),
            agents: vec![],
            influence: vec![],
            influence_scores: vec![],
            win_rates: win_rate_matrix(&[]),
            latency: vec![],
            rounds: 0,
            halt_reason: None,
        };
        export(&r, dir.path(), ExportFormat::Csv).unwrap();
        for f in [INFLUENCE_CSV, SCORES_CSV, WIN_RATE_CSV, LATENCY_CSV] {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert_eq!(text.lines().count(), 1, "{f}");
        }
        assert_eq!(import(dir.path(), ExportFormat::Csv).unwrap(), r);
    }

    proptest! {
        #[test]
        fn conservation_matches_direct_sum(
            n in 2usize..5,
            t in 1usize..5,
            seed in proptest::collection::vec(0.0f64..1.0, 100),
        ) {
            let ids: Vec<String> = (0..n).map(|k| format!("x{k}")).collect();
            let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let mut k = 0;
            let rounds: Vec<RoundRecord> = (0..t)
                .map(|r| {
                    let votes = (0..n)
                        .map(|j| (0..n).map(|i| { k += 1; if i == j { 0.0 } else { seed[k % seed.len()] } }).collect())
                        .collect();
                    round(r as u32 + 1, &id_refs, votes, 0)
                })
                .collect();
            let total: f64 = id_refs
                .iter()
                .map(|a| influence_score(&rounds, &AgentId::new(*a)).unwrap())
                .sum();
            let direct: f64 = rounds
                .iter()
                .map(|r| (0..n).flat_map(|j| (0..n).map(move |i| (j, i))).filter(|(j, i)| j != i).map(|(j, i)| r.votes.get(j, i)).sum::<f64>())
                .sum::<f64>() / t as f64;
            prop_assert!((total - direct).abs() < 1e-9);
            let agents = session_agents(&rounds);
            let m = influence_matrix(&rounds, &agents);
            for (j, row) in m.iter().enumerate() {
                prop_assert_eq!(row[j], 0.0);
                for &x in row { prop_assert!((0.0..=1.0).contains(&x)); }
            }
        }

        #[test]
        fn cumulative_nondecreasing(gens in proptest::collection::vec(0.0f64..100.0, 1..10), overhead in 0.0f64..5.0) {
            let timings: Vec<RoundTiming> = gens
                .iter()
                .enumerate()
                .map(|(k, &g)| RoundTiming { round: k as u32 + 1, gen_s: vec![g, g / 2.0], eval_s: vec![g / 3.0] })
                .collect();
            let rows = latency_report(&timings, overhead);
            for w in rows.windows(2) {
                prop_assert!(w[1].cumulative_s >= w[0].cumulative_s);
            }
        }

        #[test]
        fn csv_round_trip_is_exact(n in 0usize..5, x in proptest::num::f64::NORMAL) {
            let mut r = report(n);
            if let Some(first) = r.influence_scores.first_mut() { *first = x; }
            r.latency[0].gen_s = x;
            let dir = tempfile::tempdir().unwrap();
            export(&r, dir.path(), ExportFormat::Csv).unwrap();
            prop_assert_eq!(import(dir.path(), ExportFormat::Csv).unwrap(), r);
        }
    }
}
