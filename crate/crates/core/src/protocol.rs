//! Trial state machine and the device datagram codec.
//!
//! Time is a logical millisecond clock. A trial runs
//! Idle → ArmMoving → AwaitHome → CueScheduled → Reaching → Logged → Idle.
//! The reaching hand is the side whose home contact is released first after
//! the cue and stays released until the press.

use std::fmt;

use serde_json::Value;
use thiserror::Error;

use crate::gp::DEADLINE_S;
use crate::session::{Hand, Phase, Side, TrialRecord};
use crate::workspace::Point3;

pub const DEADLINE_MS: u64 = 3100;
/// Home telemetry period (20 Hz).
pub const TELEMETRY_PERIOD_MS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateKind {
    Idle,
    ArmMoving,
    AwaitHome,
    CueScheduled,
    Reaching,
    Logged,
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    BeginTrial {
        trial: u8,
        phase: Phase,
        target: Point3,
        t_ms: u64,
    },
    ArmArrived {
        t_ms: u64,
    },
    HomeBothTouched {
        t_ms: u64,
    },
    CueFired {
        t_ms: u64,
    },
    HomeReleased {
        side: Side,
        t_ms: u64,
    },
    HomeTouched {
        side: Side,
        t_ms: u64,
    },
    ButtonPressed {
        t_ms: u64,
    },
    DeadlineElapsed {
        t_ms: u64,
    },
    Reset,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::BeginTrial { .. } => "begin_trial",
            Event::ArmArrived { .. } => "arm_arrived",
            Event::HomeBothTouched { .. } => "home_both_touched",
            Event::CueFired { .. } => "cue_fired",
            Event::HomeReleased { .. } => "home_released",
            Event::HomeTouched { .. } => "home_touched",
            Event::ButtonPressed { .. } => "button_pressed",
            Event::DeadlineElapsed { .. } => "deadline_elapsed",
            Event::Reset => "reset",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("protocol violation: {event} in state {state}{}", if .detail.is_empty() { String::new() } else { format!(" ({})", .detail) })]
pub struct ProtocolError {
    pub state: StateKind,
    pub event: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialState {
    kind: StateKind,
    trial: u8,
    phase: Phase,
    target: Point3,
    ready_at: u64,
    cue_at: u64,
    cue_delay_ms: u64,
    release: Option<(Side, u64)>,
    record: Option<TrialRecord>,
}

impl Default for TrialState {
    fn default() -> Self {
        TrialState {
            kind: StateKind::Idle,
            trial: 0,
            phase: Phase::Spontaneous,
            target: Point3::ORIGIN,
            ready_at: 0,
            cue_at: 0,
            cue_delay_ms: 0,
            release: None,
            record: None,
        }
    }
}

impl TrialState {
    pub fn kind(&self) -> StateKind {
        self.kind
    }

    /// The finished trial, available in `Logged`.
    pub fn record(&self) -> Option<&TrialRecord> {
        self.record.as_ref()
    }

    fn finish(mut self, reach_ms: Option<(Side, u64)>) -> TrialState {
        self.record = Some(TrialRecord {
            trial: self.trial,
            phase: self.phase,
            target: self.target,
            cue_delay: self.cue_delay_ms as f64 / 1000.0,
            reach_time: reach_ms.map(|(_, ms)| ms as f64 / 1000.0),
            success: reach_ms.is_some(),
            hand: reach_ms.map(|(s, _)| Hand::from(s)).unwrap_or(Hand::None),
        });
        self.kind = StateKind::Logged;
        self
    }
}

/// Applies one event; illegal events leave no partial state behind.
pub fn step_trial(state: TrialState, event: &Event) -> Result<TrialState, ProtocolError> {
    use StateKind::*;
    let violation = |detail: String| ProtocolError {
        state: state.kind,
        event: event.name(),
        detail,
    };
    let mut s = state.clone();
    match (state.kind, event) {
        (
            Idle,
            Event::BeginTrial {
                trial,
                phase,
                target,
                ..
            },
        ) => {
            s = TrialState {
                kind: ArmMoving,
                trial: *trial,
                phase: *phase,
                target: *target,
                ..TrialState::default()
            };
        }
        (ArmMoving, Event::ArmArrived { .. }) => s.kind = AwaitHome,
        (AwaitHome, Event::HomeBothTouched { t_ms }) => {
            s.kind = CueScheduled;
            s.ready_at = *t_ms;
        }
        // released before the cue: wait for both hands again
        (CueScheduled, Event::HomeReleased { .. }) => s.kind = AwaitHome,
        (CueScheduled, Event::CueFired { t_ms }) => {
            if *t_ms < state.ready_at {
                return Err(violation("cue precedes home contact".into()));
            }
            s.kind = Reaching;
            s.cue_at = *t_ms;
            s.cue_delay_ms = t_ms - state.ready_at;
        }
        (Reaching, Event::HomeReleased { side, t_ms }) => {
            if state.release.is_none() {
                s.release = Some((*side, *t_ms));
            }
        }
        (Reaching, Event::HomeTouched { side, .. }) => {
            if state.release.map(|(r, _)| r) == Some(*side) {
                s.release = None;
            }
        }
        (Reaching, Event::ButtonPressed { t_ms }) => {
            let Some((side, released)) = state.release else {
                return Err(violation("press without a released hand".into()));
            };
            if *t_ms > state.cue_at + DEADLINE_MS {
                return Err(violation(format!(
                    "press after the {DEADLINE_S} s deadline"
                )));
            }
            if *t_ms <= released {
                return Err(violation("press does not follow the release".into()));
            }
            s = s.finish(Some((side, t_ms - released)));
        }
        (Reaching, Event::DeadlineElapsed { t_ms }) => {
            if *t_ms < state.cue_at + DEADLINE_MS {
                return Err(violation(format!("deadline fired before {DEADLINE_S} s")));
            }
            s = s.finish(None);
        }
        (Logged, Event::Reset) => s = TrialState::default(),
        _ => return Err(violation(String::new())),
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// Datagrams

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datagram {
    Home { seq: u32, left: bool, right: bool },
    Arm { trial: u8 },
    Light { on: bool, trial: u8 },
    Press { trial: u8, t_ms: u32 },
}

impl Datagram {
    /// Reach time in seconds carried by a press report.
    pub fn reach_time(&self) -> Option<f64> {
        match self {
            Datagram::Press { t_ms, .. } => Some(f64::from(*t_ms) / 1000.0),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("malformed datagram at byte {offset}: {reason}")]
pub struct DecodeError {
    pub offset: usize,
    pub reason: String,
}

pub fn encode_datagram(msg: &Datagram) -> Vec<u8> {
    let line = match msg {
        Datagram::Home { seq, left, right } => {
            format!("{{\"dev\":\"home\",\"seq\":{seq},\"left\":{left},\"right\":{right}}}\n")
        }
        Datagram::Arm { trial } => {
            format!("{{\"dev\":\"target\",\"msg\":\"arm\",\"trial\":{trial}}}\n")
        }
        Datagram::Light { on, trial } => {
            format!("{{\"dev\":\"target\",\"msg\":\"light\",\"on\":{on},\"trial\":{trial}}}\n")
        }
        Datagram::Press { trial, t_ms } => {
            format!("{{\"dev\":\"target\",\"msg\":\"press\",\"trial\":{trial},\"t_ms\":{t_ms}}}\n")
        }
    };
    line.into_bytes()
}

/// Decodes one datagram. Only the canonical byte form is accepted; the
/// error offset points at the first deviating byte.
pub fn decode_datagram(bytes: &[u8]) -> Result<Datagram, DecodeError> {
    let err = |offset: usize, reason: &str| DecodeError {
        offset,
        reason: reason.to_string(),
    };
    let Some(body) = bytes.strip_suffix(b"\n") else {
        return Err(err(bytes.len(), "missing newline terminator"));
    };
    let value: Value = serde_json::from_slice(body).map_err(|e| {
        let offset = line_offset(body, e.line(), e.column());
        DecodeError {
            offset,
            reason: e.to_string(),
        }
    })?;
    let obj = value
        .as_object()
        .ok_or_else(|| err(0, "expected a JSON object"))?;
    let text = |k: &str| obj.get(k).and_then(Value::as_str);
    let flag = |k: &str| obj.get(k).and_then(Value::as_bool);
    let int = |k: &str| obj.get(k).and_then(Value::as_u64);
    let small = |k: &str| int(k).and_then(|v| u8::try_from(v).ok());
    let word = |k: &str| int(k).and_then(|v| u32::try_from(v).ok());
    let msg = match (text("dev"), text("msg")) {
        (Some("home"), _) => match (word("seq"), flag("left"), flag("right")) {
            (Some(seq), Some(left), Some(right)) => Datagram::Home { seq, left, right },
            _ => return Err(err(0, "home report needs seq, left and right")),
        },
        (Some("target"), Some("arm")) => match small("trial") {
            Some(trial) => Datagram::Arm { trial },
            None => return Err(err(0, "arm message needs a trial index")),
        },
        (Some("target"), Some("light")) => match (flag("on"), small("trial")) {
            (Some(on), Some(trial)) => Datagram::Light { on, trial },
            _ => return Err(err(0, "light message needs on and trial")),
        },
        (Some("target"), Some("press")) => match (small("trial"), word("t_ms")) {
            (Some(trial), Some(t_ms)) => Datagram::Press { trial, t_ms },
            _ => return Err(err(0, "press report needs trial and t_ms")),
        },
        _ => return Err(err(0, "unknown device or message type")),
    };
    let canonical = encode_datagram(&msg);
    if let Some(offset) = canonical.iter().zip(bytes).position(|(a, b)| a != b) {
        return Err(err(offset, "non-canonical field order or formatting"));
    }
    if canonical.len() != bytes.len() {
        return Err(err(
            canonical.len().min(bytes.len()),
            "unexpected datagram length",
        ));
    }
    Ok(msg)
}

fn line_offset(body: &[u8], line: usize, column: usize) -> usize {
    let start: usize = body
        .split(|&b| b == b'\n')
        .take(line.saturating_sub(1))
        .map(|l| l.len() + 1)
        .sum();
    (start + column.saturating_sub(1)).min(body.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn begin() -> Event {
        Event::BeginTrial {
            trial: 3,
            phase: Phase::Spontaneous,
            target: Point3::new(0.0, 20.0, 0.0),
            t_ms: 0,
        }
    }

    fn run(events: &[Event]) -> Result<TrialState, ProtocolError> {
        events.iter().try_fold(TrialState::default(), step_trial)
    }

    fn to_reaching() -> Vec<Event> {
        vec![
            begin(),
            Event::ArmArrived { t_ms: 1500 },
            Event::HomeBothTouched { t_ms: 1500 },
            Event::CueFired { t_ms: 2000 },
        ]
    }

    #[test]
    fn nominal_press() {
        let mut ev = to_reaching();
        ev.push(Event::HomeReleased {
            side: Side::Left,
            t_ms: 2000,
        });
        ev.push(Event::ButtonPressed { t_ms: 3200 });
        let s = run(&ev).unwrap();
        let r = s.record().unwrap();
        assert!(r.success);
        assert_eq!(r.reach_time, Some(1.2));
        assert_eq!(r.hand, Hand::Left);
        assert_eq!(r.cue_delay, 0.5);
        assert_eq!(
            step_trial(s, &Event::Reset).unwrap().kind(),
            StateKind::Idle
        );
    }

    #[test]
    fn timeout_has_no_hand() {
        let mut ev = to_reaching();
        ev.push(Event::DeadlineElapsed {
            t_ms: 2000 + DEADLINE_MS,
        });
        let r = run(&ev).unwrap().record().cloned().unwrap();
        assert!(!r.success);
        assert_eq!(r.hand, Hand::None);
        assert_eq!(r.reach_time, None);
    }

    #[test]
    fn deadline_is_exact() {
        let mut ev = to_reaching();
        ev.push(Event::DeadlineElapsed {
            t_ms: 2000 + DEADLINE_MS - 1,
        });
        assert!(run(&ev).is_err());
        let mut ev = to_reaching();
        ev.push(Event::HomeReleased {
            side: Side::Right,
            t_ms: 2000,
        });
        ev.push(Event::ButtonPressed {
            t_ms: 2000 + DEADLINE_MS,
        });
        assert_eq!(run(&ev).unwrap().record().unwrap().reach_time, Some(3.1));
        let mut ev = to_reaching();
        ev.push(Event::HomeReleased {
            side: Side::Right,
            t_ms: 2000,
        });
        ev.push(Event::ButtonPressed {
            t_ms: 2001 + DEADLINE_MS,
        });
        assert!(run(&ev).is_err());
    }

    #[test]
    fn first_sustained_release_picks_the_hand() {
        let mut ev = to_reaching();
        ev.push(Event::HomeReleased {
            side: Side::Right,
            t_ms: 2100,
        });
        ev.push(Event::HomeReleased {
            side: Side::Left,
            t_ms: 2150,
        });
        ev.push(Event::HomeTouched {
            side: Side::Right,
            t_ms: 2200,
        });
        ev.push(Event::HomeReleased {
            side: Side::Left,
            t_ms: 2300,
        });
        ev.push(Event::ButtonPressed { t_ms: 3000 });
        let r = run(&ev).unwrap().record().cloned().unwrap();
        assert_eq!(r.hand, Hand::Left);
        assert_eq!(r.reach_time, Some(0.7));
    }

    #[test]
    fn early_release_returns_to_await_home() {
        let ev = vec![
            begin(),
            Event::ArmArrived { t_ms: 10 },
            Event::HomeBothTouched { t_ms: 20 },
            Event::HomeReleased {
                side: Side::Left,
                t_ms: 30,
            },
        ];
        assert_eq!(run(&ev).unwrap().kind(), StateKind::AwaitHome);
    }

    #[test]
    fn illegal_event_names_state_and_event() {
        let err = step_trial(TrialState::default(), &Event::CueFired { t_ms: 0 }).unwrap_err();
        assert_eq!(err.state, StateKind::Idle);
        assert_eq!(err.event, "cue_fired");
        assert!(err.to_string().contains("cue_fired in state Idle"));
    }

    #[test]
    fn home_datagram_bytes() {
        let msg = Datagram::Home {
            seq: 5,
            left: true,
            right: true,
        };
        let bytes = encode_datagram(&msg);
        assert_eq!(
            bytes,
            b"{\"dev\":\"home\",\"seq\":5,\"left\":true,\"right\":true}\n"
        );
        assert_eq!(bytes.len(), 48);
        assert_eq!(decode_datagram(&bytes).unwrap(), msg);
    }

    #[test]
    fn press_carries_reach_time() {
        let bytes = encode_datagram(&Datagram::Press {
            trial: 7,
            t_ms: 1234,
        });
        assert_eq!(decode_datagram(&bytes).unwrap().reach_time(), Some(1.234));
    }

    #[test]
    fn malformed_datagrams_report_offsets() {
        let good = encode_datagram(&Datagram::Light { on: true, trial: 9 });
        let truncated = &good[..20];
        assert_eq!(decode_datagram(truncated).unwrap_err().offset, 20);
        let cut_json = [&good[..20], b"\n"].concat();
        assert!(decode_datagram(&cut_json).is_err());
        let reordered = b"{\"dev\":\"target\",\"msg\":\"light\",\"trial\":9,\"on\":true}\n";
        assert_eq!(decode_datagram(reordered).unwrap_err().offset, 31);
        let spaced = b"{\"dev\": \"home\",\"seq\":1,\"left\":true,\"right\":false}\n";
        assert_eq!(decode_datagram(spaced).unwrap_err().offset, 7);
        assert!(
            decode_datagram(b"{\"dev\":\"home\",\"seq\":-1,\"left\":true,\"right\":true}\n")
                .is_err()
        );
    }
}
