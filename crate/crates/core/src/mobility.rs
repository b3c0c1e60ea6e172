//! UE mobility: straight-line trajectories and random waypoint.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

pub fn distance(p: Position, q: Position) -> f64 {
    (p.x - q.x).hypot(p.y - q.y)
}

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(width_m: f64, height_m: f64) -> Self {
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: width_m,
            y_max: height_m,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
    }

    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        Position::new(
            rng.random_range(self.x_min..=self.x_max),
            rng.random_range(self.y_min..=self.y_max),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityRange {
    pub min_mps: f64,
    pub max_mps: f64,
}

impl VelocityRange {
    pub fn fixed(v_mps: f64) -> Self {
        Self {
            min_mps: v_mps,
            max_mps: v_mps,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min_mps && v <= self.max_mps
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min_mps == self.max_mps {
            self.min_mps
        } else {
            rng.random_range(self.min_mps..=self.max_mps)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityMode {
    Linear,
    RandomWaypoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    /// Moves from the current position toward `end` and stops there.
    Linear {
        end: Position,
    },
    RandomWaypoint {
        waypoint: Position,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobilityState {
    pub position: Position,
    pub velocity_mps: f64,
    pub velocity_range: VelocityRange,
    pub motion: Motion,
}

impl MobilityState {
    pub fn linear(start: Position, end: Position, velocity_mps: f64) -> Self {
        Self {
            position: start,
            velocity_mps,
            velocity_range: VelocityRange::fixed(velocity_mps),
            motion: Motion::Linear { end },
        }
    }

    /// Uniform initial position, waypoint and velocity.
    pub fn random_waypoint<R: Rng + ?Sized>(
        region: &Region,
        velocity_range: VelocityRange,
        rng: &mut R,
    ) -> Result<Self> {
        if region.is_degenerate() {
            return Err(Error::config(
                "region",
                "random waypoint needs a region with positive area",
            ));
        }
        let position = region.sample(rng);
        let waypoint = region.sample(rng);
        let velocity_mps = velocity_range.sample(rng);
        Ok(Self {
            position,
            velocity_mps,
            velocity_range,
            motion: Motion::RandomWaypoint { waypoint },
        })
    }

    pub fn mode(&self) -> MobilityMode {
        match self.motion {
            Motion::Linear { .. } => MobilityMode::Linear,
            Motion::RandomWaypoint { .. } => MobilityMode::RandomWaypoint,
        }
    }
}

/// Moves toward `target` by at most `max_step`; returns the new position and
/// whether the target was reached.
fn advance(from: Position, target: Position, max_step: f64) -> (Position, bool) {
    let d = distance(from, target);
    if d <= max_step {
        return (target, true);
    }
    let f = max_step / d;
    (
        Position::new(from.x + (target.x - from.x) * f, from.y + (target.y - from.y) * f),
        false,
    )
}

/// Advances one UE by `dt_s` seconds.
///
/// Displacement is `velocity * dt`, clamped at the waypoint (waypoint mode)
/// or at the segment end (linear mode). Arriving at a waypoint draws a new
/// waypoint and velocity; there is no pause.
pub fn step<R: Rng + ?Sized>(state: &MobilityState, dt_s: f64, region: &Region, rng: &mut R) -> Result<MobilityState> {
    if !(dt_s > 0.0) {
        return Err(Error::Domain(format!("mobility step needs dt > 0, got {dt_s}")));
    }
    let mut next = *state;
    let max_step = state.velocity_mps * dt_s;
    match state.motion {
        Motion::Linear { end } => {
            next.position = advance(state.position, end, max_step).0;
        }
        Motion::RandomWaypoint { waypoint } => {
            if region.is_degenerate() {
                return Err(Error::config(
                    "region",
                    "random waypoint needs a region with positive area",
                ));
            }
            let (position, arrived) = advance(state.position, waypoint, max_step);
            next.position = position;
            if arrived {
                next.motion = Motion::RandomWaypoint {
                    waypoint: region.sample(rng),
                };
                next.velocity_mps = state.velocity_range.sample(rng);
            }
        }
    }
    Ok(next)
}
