//! Seeded synthetic highway scenes.
//!
//! Vehicles start on distinct slots along a straight multi-lane road and
//! follow one of three motion patterns:
//!
//! - lane keeping at constant speed,
//! - a single lane change along a normalized logistic ramp,
//! - stop-and-go with sinusoidally modulated speed.
//!
//! Positions are generated in closed form per frame, then optionally
//! perturbed with i.i.d. Gaussian noise.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{window, SceneWindow, TrackPoint, Units, WindowConfig, DEFAULT_T_IN, DEFAULT_T_OUT};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverMix {
    pub lane_keep: f64,
    pub lane_change: f64,
    pub stop_and_go: f64,
}

impl Default for ManeuverMix {
    fn default() -> Self {
        Self {
            lane_keep: 0.5,
            lane_change: 0.3,
            stop_and_go: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_vehicles: usize,
    pub lane_count: usize,
    pub lane_width: f64,
    /// Longitudinal extent of the initial placement.
    pub road_length: f64,
    /// Minimum initial longitudinal gap between vehicles in one lane.
    pub min_gap: f64,
    /// Speeds in units per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    pub maneuver_mix: ManeuverMix,
    pub noise_std: f64,
    /// Frames a lane change takes.
    pub lane_change_frames: usize,
    /// Relative speed modulation of stop-and-go vehicles, in `[0, 1]`.
    pub stop_go_amplitude: f64,
    pub stop_go_period: f64,
    pub units: Units,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_vehicles: 8,
            lane_count: 3,
            lane_width: 3.7,
            road_length: 120.0,
            min_gap: 2.0,
            speed_min: 1.5,
            speed_max: 3.0,
            maneuver_mix: ManeuverMix::default(),
            noise_std: 0.05,
            lane_change_frames: 20,
            stop_go_amplitude: 0.6,
            stop_go_period: 40.0,
            units: Units::Meters,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn slots_per_lane(&self) -> usize {
        (self.road_length / self.min_gap).floor().max(0.0) as usize
    }

    pub fn capacity(&self) -> usize {
        self.lane_count * self.slots_per_lane()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.maneuver_mix;
        let fractions = [m.lane_keep, m.lane_change, m.stop_and_go];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("maneuver_mix fractions {fractions:?} must be in [0,1] and sum to 1")));
        }
        if self.n_vehicles == 0 {
            return Err(Error::Config("n_vehicles must be at least 1".into()));
        }
        if self.lane_count == 0 || !(self.lane_width > 0.0) {
            return Err(Error::Config("lane_count and lane_width must be positive".into()));
        }
        if !(self.min_gap > 0.0) || !(self.road_length > 0.0) {
            return Err(Error::Config("road_length and min_gap must be positive".into()));
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max) {
            return Err(Error::Config(format!(
                "speed range [{}, {}] is invalid",
                self.speed_min, self.speed_max
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.stop_go_amplitude) || !(self.stop_go_period > 0.0) {
            return Err(Error::Config("stop_go_amplitude must be in [0,1] and stop_go_period positive".into()));
        }
        if self.lane_change_frames == 0 {
            return Err(Error::Config("lane_change_frames must be at least 1".into()));
        }
        if self.n_vehicles > self.capacity() {
            return Err(Error::Config(format!(
                "{} vehicles do not fit: {} lanes × {} slots of {} units",
                self.n_vehicles,
                self.lane_count,
                self.slots_per_lane(),
                self.min_gap
            )));
        }
        Ok(())
    }
}

/// Steepness of the lane-change ramp.
const RAMP_STEEPNESS: f64 = 10.0;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic ramp rescaled to hit 0 at `phase = 0` and 1 at `phase = 1`.
pub(crate) fn lane_change_ramp(phase: f64) -> f64 {
    let phase = phase.clamp(0.0, 1.0);
    let lo = sigmoid(-RAMP_STEEPNESS / 2.0);
    let hi = sigmoid(RAMP_STEEPNESS / 2.0);
    (sigmoid(RAMP_STEEPNESS * (phase - 0.5)) - lo) / (hi - lo)
}

#[derive(Debug, Clone, Copy)]
enum Motion {
    Keep,
    Change { from: f64, to: f64, start: f64, frames: f64 },
    StopGo { amplitude: f64, period: f64, phase: f64 },
}

struct Vehicle {
    x0: f64,
    y0: f64,
    speed: f64,
    motion: Motion,
}

impl Vehicle {
    fn position(&self, k: f64) -> [f64; 2] {
        match self.motion {
            Motion::Keep => [self.x0 + self.speed * k, self.y0],
            Motion::Change { from, to, start, frames } => {
                let phase = (k - start) / frames;
                let y = if phase >= 1.0 {
                    to
                } else if phase <= 0.0 {
                    from
                } else {
                    from + (to - from) * lane_change_ramp(phase)
                };
                [self.x0 + self.speed * k, y]
            }
            Motion::StopGo { amplitude, period, phase } => {
                // x' = v (1 + A sin(2πk/P + φ))
                let w = 2.0 * PI / period;
                let x = self.x0 + self.speed * k - self.speed * amplitude / w * ((w * k + phase).cos() - phase.cos());
                [x, self.y0]
            }
        }
    }
}

/// Generates `duration_frames` frames (0-based) for every vehicle of `spec`.
pub fn synthesize(spec: &SyntheticSpec, duration_frames: usize) -> Result<Vec<TrackPoint>> {
    spec.validate()?;
    if duration_frames < DEFAULT_T_IN + DEFAULT_T_OUT {
        return Err(Error::Config(format!(
            "duration {duration_frames} is shorter than one window ({} frames)",
            DEFAULT_T_IN + DEFAULT_T_OUT
        )));
    }
    let mut rng = rng::stream(spec.seed, "synth", 0);
    let per_lane = spec.slots_per_lane();
    let spacing = spec.road_length / per_lane as f64;
    let mut slots = index::sample(&mut rng, spec.capacity(), spec.n_vehicles).into_vec();
    slots.sort_unstable();

    let mix = spec.maneuver_mix;
    let mut vehicles = Vec::with_capacity(slots.len());
    for slot in slots {
        let lane = slot / per_lane;
        let x0 = (slot % per_lane) as f64 * spacing;
        let y0 = (lane as f64 + 0.5) * spec.lane_width;
        let speed = if spec.speed_max > spec.speed_min {
            rng.random_range(spec.speed_min..spec.speed_max)
        } else {
            spec.speed_min
        };
        let draw: f64 = rng.random();
        let motion = if draw < mix.lane_keep {
            Motion::Keep
        } else if draw < mix.lane_keep + mix.lane_change && spec.lane_count > 1 {
            let target = if lane == 0 {
                1
            } else if lane + 1 == spec.lane_count || rng.random::<bool>() {
                lane - 1
            } else {
                lane + 1
            };
            let frames = spec.lane_change_frames.min(duration_frames - 1) as f64;
            let latest = (duration_frames - 1) as f64 - frames;
            Motion::Change {
                from: y0,
                to: (target as f64 + 0.5) * spec.lane_width,
                start: rng.random_range(0.0..=latest),
                frames,
            }
        } else if draw < mix.lane_keep + mix.lane_change {
            Motion::Keep
        } else {
            Motion::StopGo {
                amplitude: spec.stop_go_amplitude,
                period: spec.stop_go_period,
                phase: rng.random_range(0.0..2.0 * PI),
            }
        };
        vehicles.push(Vehicle { x0, y0, speed, motion });
    }

    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("valid stddev"));
    let mut out = Vec::with_capacity(vehicles.len() * duration_frames);
    for (i, v) in vehicles.iter().enumerate() {
        for k in 0..duration_frames {
            let [mut x, mut y] = v.position(k as f64);
            if let Some(n) = &noise {
                x += n.sample(&mut rng);
                y += n.sample(&mut rng);
            }
            out.push(TrackPoint {
                vehicle_id: i as i64 + 1,
                frame: k as i64,
                x,
                y,
            });
        }
    }
    Ok(out)
}

/// Windows drawn from `scenes` independent scenes. Scene `s` reseeds the spec
/// with a seed derived from `(spec.seed, s)`.
pub fn synthesize_corpus(
    spec: &SyntheticSpec,
    scenes: usize,
    duration_frames: usize,
    cfg: &WindowConfig,
) -> Result<Vec<SceneWindow>> {
    let mut out = Vec::new();
    for s in 0..scenes {
        let scene = SyntheticSpec {
            seed: rng::derive_seed(spec.seed, "scene", s as u64),
            ..spec.clone()
        };
        let tracks = synthesize(&scene, duration_frames)?;
        out.extend(window(&tracks, cfg, spec.units)?);
    }
    Ok(out)
}
