//! Synthetic participants and simulated BARTR sessions.
//!
//! Hand choice is logistic in the lateral position of the target,
//! logit P(right | x) = β₀ + λ·x/‖(x, y)‖ ∓ γ, where the nonuse severity γ
//! shifts choices away from the affected side. Reach time is
//! τ₀ + ‖x‖/v + β_z·z + N(0, σ_t²), with reaches over the 3.1 s deadline
//! becoming timeouts. Every trial is driven through the protocol state
//! machine on a 1 ms logical clock, optionally recording the device
//! datagrams it would produce.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as Gaussian};
use thiserror::Error;

use crate::gp::DEADLINE_S;
use crate::protocol::{
    encode_datagram, step_trial, Datagram, Event, ProtocolError, TrialState, DEADLINE_MS,
    TELEMETRY_PERIOD_MS,
};
use crate::session::{Phase, SessionLog, Side};
use crate::workspace::{Point3, WorkspaceError, WorkspaceSpec};

/// Robot arm travel time to a target.
pub const ARM_TRAVEL_MS: u64 = 1500;
/// Time for the reaching hand to return home after the trial ends.
pub const RETURN_MS: u64 = 600;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid behavior model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorModel {
    /// β₀: log-odds of choosing the right hand at the midline.
    pub handedness_bias: f64,
    /// λ: log-odds gain per unit lateral direction (−1 far left, +1 far right).
    pub lateral_gain: f64,
    /// γ: log-odds shift away from the affected side.
    pub nonuse_severity: f64,
    /// v, cm/s.
    pub speed: f64,
    /// τ₀, s.
    pub latency: f64,
    /// β_z, s/cm.
    pub vertical_penalty: f64,
    /// σ_t, s.
    pub time_noise: f64,
    pub affected_side: Side,
}

impl BehaviorModel {
    /// Neurotypical preset; β₀ gives a 60–40 right-hand split over the grid.
    pub fn neurotypical() -> Self {
        BehaviorModel {
            handedness_bias: 0.934_198_6,
            lateral_gain: 3.0,
            nonuse_severity: 0.0,
            speed: 40.0,
            latency: 0.3,
            vertical_penalty: 0.005,
            time_noise: 0.1,
            affected_side: Side::Left,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("handedness_bias", self.handedness_bias),
            ("lateral_gain", self.lateral_gain),
            ("nonuse_severity", self.nonuse_severity),
            ("speed", self.speed),
            ("latency", self.latency),
            ("vertical_penalty", self.vertical_penalty),
            ("time_noise", self.time_noise),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(SimError::InvalidModel(format!("{name} must be finite")));
        }
        if self.speed <= 0.0 {
            return Err(SimError::InvalidModel("speed must be positive".into()));
        }
        if self.time_noise < 0.0 {
            return Err(SimError::InvalidModel(
                "time_noise must be non-negative".into(),
            ));
        }
        if self.nonuse_severity < 0.0 {
            return Err(SimError::InvalidModel(
                "nonuse_severity must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Closed-form fields implied by a behavior model.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    model: BehaviorModel,
}

pub fn ground_truth_fields(bm: &BehaviorModel) -> GroundTruth {
    GroundTruth { model: bm.clone() }
}

impl GroundTruth {
    /// Spontaneous-phase probability of reaching with the right hand.
    pub fn right_choice(&self, x: &Point3) -> f64 {
        let m = &self.model;
        let planar = x.radius();
        let lateral = if planar > 0.0 { x.x / planar } else { 0.0 };
        let toward_affected = match m.affected_side {
            Side::Right => 1.0,
            Side::Left => -1.0,
        };
        logistic(m.handedness_bias + m.lateral_gain * lateral - m.nonuse_severity * toward_affected)
    }

    /// Spontaneous-phase probability of reaching with `side`.
    pub fn choice(&self, side: Side, x: &Point3) -> f64 {
        match side {
            Side::Right => self.right_choice(x),
            Side::Left => 1.0 - self.right_choice(x),
        }
    }

    pub fn affected_choice(&self, x: &Point3) -> f64 {
        self.choice(self.model.affected_side, x)
    }

    /// Mean reach time before deadline truncation, seconds.
    pub fn mean_time(&self, x: &Point3) -> f64 {
        let m = &self.model;
        m.latency + x.distance(&Point3::ORIGIN) / m.speed + m.vertical_penalty * x.z
    }

    /// Probability that a reach beats the deadline.
    pub fn success(&self, x: &Point3) -> f64 {
        let mu = self.mean_time(x);
        if self.model.time_noise == 0.0 {
            return if mu <= DEADLINE_S { 1.0 } else { 0.0 };
        }
        Gaussian::new(mu, self.model.time_noise)
            .expect("valid normal")
            .cdf(DEADLINE_S)
    }
}

/// One datagram on the logical clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub t_ms: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub log: SessionLog,
    /// Time-ordered datagrams, including 20 Hz home reports.
    pub transcript: Vec<Frame>,
}

pub fn run_session(
    bm: &BehaviorModel,
    phase: Phase,
    spec: &WorkspaceSpec,
    seed: u64,
) -> Result<SessionLog, SimError> {
    Ok(simulate(bm, phase, spec, seed, false)?.log)
}

/// [`run_session`] plus the device transcript.
pub fn run_session_with_transcript(
    bm: &BehaviorModel,
    phase: Phase,
    spec: &WorkspaceSpec,
    seed: u64,
) -> Result<Simulation, SimError> {
    simulate(bm, phase, spec, seed, true)
}

fn simulate(
    bm: &BehaviorModel,
    phase: Phase,
    spec: &WorkspaceSpec,
    seed: u64,
    record_frames: bool,
) -> Result<Simulation, SimError> {
    bm.validate()?;
    let mut targets = spec.generate_grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    targets.shuffle(&mut rng);
    let truth = ground_truth_fields(bm);
    let noise = Normal::new(0.0, bm.time_noise).expect("validated noise");

    let mut frames = Vec::new();
    // hand away from home over [from, until)
    let mut away: Vec<(Side, u64, u64)> = Vec::new();
    let mut trials = Vec::with_capacity(targets.len());
    let mut clock = 0u64;
    for (i, target) in targets.into_iter().enumerate() {
        let trial = i as u8;
        let mut emit = |t_ms: u64, msg: Datagram| {
            if record_frames {
                frames.push(Frame {
                    t_ms,
                    bytes: encode_datagram(&msg),
                });
            }
        };
        let cue_delay_ms = (rng.gen_range(0.0..=2.0f64) * 1000.0).round() as u64;
        let hand = match phase {
            Phase::Spontaneous => {
                if rng.gen_bool(truth.right_choice(&target)) {
                    Side::Right
                } else {
                    Side::Left
                }
            }
            Phase::Constrained => bm.affected_side,
        };
        let reach_s = truth.mean_time(&target) + noise.sample(&mut rng);
        let reach_ms = ((reach_s * 1000.0).round().max(1.0)) as u64;

        let arrived = clock + ARM_TRAVEL_MS;
        let cue = arrived + cue_delay_ms;
        let mut events = vec![
            Event::BeginTrial {
                trial,
                phase,
                target,
                t_ms: clock,
            },
            Event::ArmArrived { t_ms: arrived },
            Event::HomeBothTouched { t_ms: arrived },
            Event::CueFired { t_ms: cue },
            Event::HomeReleased {
                side: hand,
                t_ms: cue,
            },
        ];
        emit(clock, Datagram::Arm { trial });
        emit(cue, Datagram::Light { on: true, trial });
        let end = if reach_ms <= DEADLINE_MS {
            events.push(Event::ButtonPressed {
                t_ms: cue + reach_ms,
            });
            emit(
                cue + reach_ms,
                Datagram::Press {
                    trial,
                    t_ms: reach_ms as u32,
                },
            );
            cue + reach_ms
        } else {
            events.push(Event::DeadlineElapsed {
                t_ms: cue + DEADLINE_MS,
            });
            cue + DEADLINE_MS
        };
        emit(end, Datagram::Light { on: false, trial });

        let state = events.iter().try_fold(TrialState::default(), step_trial)?;
        trials.push(state.record().cloned().expect("trial reached Logged"));
        step_trial(state, &Event::Reset)?;
        away.push((hand, cue, end + RETURN_MS));
        clock = end + RETURN_MS;
    }

    if record_frames {
        let mut seq = 0u32;
        let mut t = 0;
        while t <= clock {
            let released = |side: Side| {
                away.iter()
                    .any(|&(s, from, until)| s == side && from <= t && t < until)
            };
            frames.push(Frame {
                t_ms: t,
                bytes: encode_datagram(&Datagram::Home {
                    seq,
                    left: !released(Side::Left),
                    right: !released(Side::Right),
                }),
            });
            seq += 1;
            t += TELEMETRY_PERIOD_MS;
        }
        frames.sort_by_key(|f| f.t_ms);
    }

    Ok(Simulation {
        log: SessionLog {
            participant: "synthetic".into(),
            session: 1,
            phase,
            seed,
            trials,
        },
        transcript: frames,
    })
}
