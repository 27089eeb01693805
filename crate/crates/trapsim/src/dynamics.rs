//! Vehicle kinematics and the discrete ego action set.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Pose and scalar forward speed of one vehicle in world coordinates.
///
/// All vehicles share the same footprint: 5 m long, 2 m wide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal position of the vehicle center (m).
    pub x: f64,
    /// Lateral position of the vehicle center (m).
    pub y: f64,
    /// Yaw angle (rad), normalized to (-pi, pi].
    pub heading: f64,
    /// Scalar forward speed (m/s), clamped to [0, 40].
    pub speed: f64,
}

impl VehicleState {
    pub const LENGTH: f64 = 5.0;
    pub const WIDTH: f64 = 2.0;
    pub const MAX_SPEED: f64 = 40.0;

    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        VehicleState { x, y, heading, speed }
    }

    /// Longitudinal velocity component (speed projected on the road axis).
    pub fn v_lon(&self) -> f64 {
        self.speed * self.heading.cos()
    }

    /// Lateral velocity component.
    pub fn v_lat(&self) -> f64 {
        self.speed * self.heading.sin()
    }
}

/// Acceleration values of the discrete action set (m/s^2).
pub const ACCELS: [f64; 3] = [-1.0, 0.0, 1.0];
/// Steering values of the discrete action set (rad).
pub const STEERS: [f64; 3] = [-PI / 50.0, 0.0, PI / 50.0];
/// Number of discrete actions.
pub const ACTION_COUNT: usize = 9;

/// One of the 9 discrete (acceleration, steering) commands.
///
/// The enumeration is fixed: `index = 3 * accel_idx + steer_idx` with
/// accelerations ordered (-1, 0, 1) and steering ordered (-pi/50, 0, pi/50).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteAction {
    index: usize,
}

impl DiscreteAction {
    pub fn new(index: usize) -> Result<Self> {
        if index >= ACTION_COUNT {
            return Err(Error::InvalidAction(index));
        }
        Ok(DiscreteAction { index })
    }

    pub fn from_parts(accel_idx: usize, steer_idx: usize) -> Result<Self> {
        if accel_idx >= 3 || steer_idx >= 3 {
            return Err(Error::InvalidAction(3 * accel_idx + steer_idx));
        }
        Ok(DiscreteAction { index: 3 * accel_idx + steer_idx })
    }

    /// The straight-coast action (zero acceleration, zero steering).
    pub fn coast() -> Self {
        DiscreteAction { index: 4 }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn accel(&self) -> f64 {
        ACCELS[self.index / 3]
    }

    pub fn steer(&self) -> f64 {
        STEERS[self.index % 3]
    }
}

/// Decodes an action index into its (acceleration, steering) pair.
pub fn decode_action(index: usize) -> Result<(f64, f64)> {
    let a = DiscreteAction::new(index)?;
    Ok((a.accel(), a.steer()))
}

/// Normalizes an angle to (-pi, pi].
pub fn normalize_angle(mut angle: f64) -> f64 {
    while angle > PI {
        angle -= 2.0 * PI;
    }
    while angle <= -PI {
        angle += 2.0 * PI;
    }
    angle
}

/// Advances one vehicle by a fixed-step kinematic bicycle update.
///
/// The reference point is the vehicle center with a half-length lever arm:
/// slip angle `beta = atan(tan(steer) / 2)`, position advances along
/// `heading + beta`, the heading rate is `v / (L/2) * sin(beta)`, and the
/// speed integrates the commanded acceleration before clamping to [0, 40].
pub fn step_kinematics(
    state: &VehicleState,
    accel: f64,
    steer: f64,
    dt: f64,
) -> Result<VehicleState> {
    if !(state.x.is_finite()
        && state.y.is_finite()
        && state.heading.is_finite()
        && state.speed.is_finite()
        && accel.is_finite()
        && steer.is_finite()
        && dt.is_finite())
    {
        return Err(Error::NonFinite("step_kinematics input"));
    }
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if steer.abs() > PI / 4.0 {
        return Err(Error::InvalidArgument(format!(
            "steer {steer} exceeds pi/4 magnitude limit"
        )));
    }

    let beta = (0.5 * steer.tan()).atan();
    let v = state.speed;
    let x = state.x + v * (state.heading + beta).cos() * dt;
    let y = state.y + v * (state.heading + beta).sin() * dt;
    let heading = normalize_angle(state.heading + v / (VehicleState::LENGTH / 2.0) * beta.sin() * dt);
    let speed = (v + accel * dt).clamp(0.0, VehicleState::MAX_SPEED);

    Ok(VehicleState { x, y, heading, speed })
}
