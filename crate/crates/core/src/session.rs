//! Trial records and session logs, with the JSON Lines file format shared by
//! the simulator and ingestion.
//!
//! A log file holds one phase of one session: a header line
//! `{"participant":…,"session":…,"phase":…,"seed":…}` followed by one
//! trial record per line.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::DEADLINE_S;
use crate::workspace::{Point3, WorkspaceSpec};

pub const MAX_TRIALS: usize = 100;
pub const MAX_CUE_DELAY_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(format!("unknown side '{s}' (expected left or right)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
    None,
}

impl Hand {
    pub fn side(self) -> Option<Side> {
        match self {
            Hand::Left => Some(Side::Left),
            Hand::Right => Some(Side::Right),
            Hand::None => None,
        }
    }
}

impl From<Side> for Hand {
    fn from(s: Side) -> Self {
        match s {
            Side::Left => Hand::Left,
            Side::Right => Hand::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Free hand choice.
    Spontaneous,
    /// Reaches with the affected arm only.
    Constrained,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Spontaneous => "spontaneous",
            Phase::Constrained => "constrained",
        })
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spontaneous" => Ok(Phase::Spontaneous),
            "constrained" => Ok(Phase::Constrained),
            _ => Err(format!(
                "unknown phase '{s}' (expected spontaneous or constrained)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub trial: u8,
    pub phase: Phase,
    pub target: Point3,
    /// Seconds between arm arrival with both hands home and the cue.
    pub cue_delay: f64,
    /// Seconds from home release to button press; absent on timeout.
    pub reach_time: Option<f64>,
    pub success: bool,
    pub hand: Hand,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<(), String> {
        if usize::from(self.trial) >= MAX_TRIALS {
            return Err(format!(
                "trial index {} outside 0..{}",
                self.trial,
                MAX_TRIALS - 1
            ));
        }
        if !(0.0..=MAX_CUE_DELAY_S).contains(&self.cue_delay) {
            return Err(format!(
                "cue delay {} s outside [0, {MAX_CUE_DELAY_S}]",
                self.cue_delay
            ));
        }
        match (self.success, self.reach_time, self.hand) {
            (true, Some(t), hand) if hand != Hand::None => {
                if !(t > 0.0 && t <= DEADLINE_S) {
                    return Err(format!(
                        "reach time {t} s outside the (0, {DEADLINE_S}] s deadline bound"
                    ));
                }
            }
            (true, None, _) => return Err("successful trial without a reach time".into()),
            (true, Some(_), _) => return Err("successful trial must name a hand".into()),
            (false, Some(_), _) => return Err("timed-out trial carries a reach time".into()),
            (false, None, Hand::None) => {}
            (false, None, _) => return Err("timed-out trial must have hand \"none\"".into()),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    participant: String,
    session: u8,
    phase: Phase,
    seed: u64,
}

/// One phase of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub participant: String,
    /// 1-based session index.
    pub session: u8,
    pub phase: Phase,
    pub seed: u64,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {reason}")]
pub struct IngestError {
    pub line: usize,
    pub reason: String,
}

fn at(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError {
        line,
        reason: reason.into(),
    }
}

impl SessionLog {
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            participant: self.participant.clone(),
            session: self.session,
            phase: self.phase,
            seed: self.seed,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for t in &self.trials {
            out.push_str(&serde_json::to_string(t).expect("trial serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses and validates a log; errors carry 1-based line numbers.
    pub fn from_jsonl(text: &str) -> Result<Self, IngestError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| at(1, "missing header line"))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| at(1, format!("invalid header: {e}")))?;
        if !(1..=3).contains(&header.session) {
            return Err(at(
                1,
                format!("session index {} outside 1..3", header.session),
            ));
        }
        let mut log = SessionLog {
            participant: header.participant,
            session: header.session,
            phase: header.phase,
            seed: header.seed,
            trials: Vec::new(),
        };
        let mut targets = HashSet::new();
        let mut indices = HashSet::new();
        for (i, raw) in lines {
            let line = i + 1;
            if log.trials.len() == MAX_TRIALS {
                return Err(at(
                    line,
                    format!("more than {MAX_TRIALS} trials in one phase"),
                ));
            }
            let rec: TrialRecord = serde_json::from_str(raw)
                .map_err(|e| at(line, format!("invalid trial record: {e}")))?;
            rec.validate().map_err(|r| at(line, r))?;
            if rec.phase != log.phase {
                return Err(at(
                    line,
                    format!(
                        "trial phase {} differs from header phase {}",
                        rec.phase, log.phase
                    ),
                ));
            }
            if !indices.insert(rec.trial) {
                return Err(at(line, format!("duplicate trial index {}", rec.trial)));
            }
            let key = (
                rec.target.x.to_bits(),
                rec.target.y.to_bits(),
                rec.target.z.to_bits(),
            );
            if !targets.insert(key) {
                return Err(at(
                    line,
                    format!("duplicate target {:?} within phase", rec.target),
                ));
            }
            log.trials.push(rec);
        }
        Ok(log)
    }

    /// Checks every target against the workspace; line numbers refer to the
    /// JSON Lines form.
    pub fn check_workspace(&self, spec: &WorkspaceSpec) -> Result<(), IngestError> {
        for (i, t) in self.trials.iter().enumerate() {
            if !spec.contains(&t.target) {
                return Err(at(
                    i + 2,
                    format!("target {:?} lies outside the workspace", t.target),
                ));
            }
        }
        Ok(())
    }

    pub fn successes(&self) -> usize {
        self.trials.iter().filter(|t| t.success).count()
    }

    /// Successful trials reached with `side`, as (target, reach time).
    pub fn reaches_with(&self, side: Side) -> impl Iterator<Item = (Point3, f64)> + '_ {
        self.trials
            .iter()
            .filter(move |t| t.hand.side() == Some(side))
            .filter_map(|t| t.reach_time.map(|r| (t.target, r)))
    }
}
