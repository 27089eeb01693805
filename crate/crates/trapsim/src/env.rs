//! The trap-scenario episodic environment: a 2 Hz reset/step loop with
//! observation encoding, reward shaping, termination checks, and escape
//! bookkeeping.
//!
//! The scenario boxes the ego in behind two slow "trap" vehicles in its own
//! lane while regular traffic approaches from behind in the adjacent lane.
//! Escaping requires giving up speed now to merge into the backward gap of
//! the adjacent lane and only pays off many steps later.

use crate::dynamics::{step_kinematics, DiscreteAction, VehicleState};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::traffic::{
    advance_traffic, IdmParams, MobilParams, Road, TrapParams, Vehicle, VehicleKind,
};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Observation vector length: ego block (6) plus four neighbor blocks (5 each).
pub const OBS_DIM: usize = 26;
/// Number of neighbor slots in the observation.
pub const NEIGHBOR_SLOTS: usize = 4;

/// Position features are divided by this before entering the observation.
pub const POS_SCALE: f64 = 100.0;
/// Velocity features are divided by this before entering the observation.
pub const VEL_SCALE: f64 = 30.0;

/// Scenario randomization ranges, lane geometry, and episode limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Initial bumper gap range from the ego to the leading trap vehicle (m).
    pub d1_range: [f64; 2],
    /// Initial bumper gap range from the ego to the near trap vehicle (m).
    pub d2_range: [f64; 2],
    pub lanes: usize,
    pub lane_width: f64,
    /// Episode cap in steps (2 Hz -> 300 steps = 150 s).
    pub max_steps: usize,
    pub trap: TrapParams,
    /// Trailing IDM vehicles spawned in the adjacent lane.
    pub n_traffic: usize,
    /// Base RNG seed for the experiment; episodes fork from it.
    pub seed: u64,
    /// Ego spawn speed (m/s).
    pub ego_speed: f64,
    /// Spawn speed of trailing traffic (m/s).
    pub traffic_speed: f64,
    /// Center-to-center spacing of the trailing traffic column (m).
    pub traffic_spacing: f64,
    /// Uniform jitter applied to each traffic spawn position (m).
    pub traffic_jitter: f64,
    /// Simulation step (s); 0.5 s = 2 Hz.
    pub dt: f64,
    pub idm: IdmParams,
    pub mobil: MobilParams,
    pub reward: RewardWeights,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            d1_range: [14.80, 16.44],
            d2_range: [4.06, 7.43],
            lanes: 2,
            lane_width: 4.0,
            max_steps: 300,
            trap: TrapParams::default(),
            n_traffic: 3,
            seed: 0,
            ego_speed: 10.0,
            traffic_speed: 12.5,
            traffic_spacing: 30.0,
            traffic_jitter: 2.0,
            dt: 0.5,
            idm: IdmParams::default(),
            mobil: MobilParams::default(),
            reward: RewardWeights::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn road(&self) -> Road {
        Road { lanes: self.lanes, lane_width: self.lane_width }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lanes < 2 {
            return Err(Error::Config("at least 2 lanes required".into()));
        }
        if self.lane_width <= 0.0 || self.dt <= 0.0 || self.max_steps == 0 {
            return Err(Error::Config("lane_width, dt, and max_steps must be positive".into()));
        }
        if self.d1_range[0] > self.d1_range[1] || self.d2_range[0] > self.d2_range[1] {
            return Err(Error::Config("distance ranges must be ordered".into()));
        }
        if self.trap.speed <= 0.0 || self.trap.speed >= self.idm.v_desired {
            return Err(Error::Config(
                "trap speed must be positive and below the traffic desired speed".into(),
            ));
        }
        Ok(())
    }
}

/// Weights of the shaped reward terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_v: f64,
    pub w_y: f64,
    pub w_theta: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { w_v: 1.5, w_y: 0.05, w_theta: 0.05 }
    }
}

/// Speed-tracking reward; peaks at 15 m/s, zero at and below 5 m/s.
pub fn reward_velocity(v: f64) -> f64 {
    if v > 15.0 {
        (-(v - 15.0).powi(2)).exp()
    } else if v > 12.5 {
        8.0 / 25.0 * v - 19.0 / 5.0
    } else if v > 5.0 {
        2.0 / 75.0 * v - 2.0 / 15.0
    } else {
        0.0
    }
}

/// Lane-centering reward from the lateral offset to the nearest lane center.
pub fn reward_lane(d_e: f64) -> f64 {
    (-1.5 * d_e * d_e).exp()
}

/// Steering penalty.
pub fn reward_steer(theta: f64) -> f64 {
    -theta.sin().abs()
}

/// Weighted step reward, or the flat accident penalty.
pub fn total_reward(v_lon: f64, d_e: f64, theta: f64, accident: bool, w: &RewardWeights) -> f64 {
    if accident {
        return -10.0;
    }
    (w.w_v * reward_velocity(v_lon) + w.w_y * reward_lane(d_e) + w.w_theta * reward_steer(theta))
        / (w.w_v + w.w_y + w.w_theta)
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationCause {
    Collision,
    OffRoad,
    Stopped,
    Timeout,
    None,
}

/// The 26-scalar ego + neighbors feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub values: [f64; OBS_DIM],
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn ego_v_lon(&self) -> f64 {
        self.values[3] * VEL_SCALE
    }

    pub fn ego_v_lat(&self) -> f64 {
        self.values[4] * VEL_SCALE
    }

    pub fn ego_y(&self) -> f64 {
        self.values[2] * POS_SCALE
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub cause: TerminationCause,
    /// Whether the ego is currently ahead of the leading trap vehicle.
    pub escaped: bool,
}

/// Compact world summary consumed by the rule-based controller.
///
/// Built either from the full simulation state or decoded from an
/// observation vector, so the controller can be queried on replayed
/// observations as well as live worlds.
#[derive(Debug, Clone)]
pub struct TrafficView {
    pub ego_lane: usize,
    pub ego_y: f64,
    pub ego_heading: f64,
    pub ego_v_lon: f64,
    pub ego_speed: f64,
    pub others: Vec<NeighborView>,
    pub lanes: usize,
    pub lane_width: f64,
}

/// One non-ego vehicle as seen from the ego.
#[derive(Debug, Clone, Copy)]
pub struct NeighborView {
    pub lane: usize,
    /// Longitudinal center offset relative to the ego (m), negative behind.
    pub dx: f64,
    pub speed: f64,
}

impl TrafficView {
    /// Reconstructs a view from an encoded observation.
    ///
    /// Absent neighbor slots are skipped. Neighbor speeds use the
    /// longitudinal component, which matches the scalar speed for
    /// lane-aligned traffic.
    pub fn from_observation(obs: &Observation, road: &Road) -> TrafficView {
        let ego_y = obs.values[2] * POS_SCALE;
        let v_lon = obs.values[3] * VEL_SCALE;
        let v_lat = obs.values[4] * VEL_SCALE;
        let mut others = Vec::with_capacity(NEIGHBOR_SLOTS);
        for n in 0..NEIGHBOR_SLOTS {
            let base = 6 + 5 * n;
            if obs.values[base] < 0.5 {
                continue;
            }
            let dx = obs.values[base + 1] * POS_SCALE;
            let dy = obs.values[base + 2] * POS_SCALE;
            let dv_lon = obs.values[base + 3] * VEL_SCALE;
            others.push(NeighborView {
                lane: road.lane_index(ego_y + dy),
                dx,
                speed: v_lon + dv_lon,
            });
        }
        TrafficView {
            ego_lane: road.lane_index(ego_y),
            ego_y,
            ego_heading: v_lat.atan2(v_lon),
            ego_v_lon: v_lon,
            ego_speed: (v_lon * v_lon + v_lat * v_lat).sqrt(),
            others,
            lanes: road.lanes,
            lane_width: road.lane_width,
        }
    }
}

/// One row of the trajectory export.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub step: usize,
    pub vehicle_id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub lane: usize,
    pub is_ego: bool,
    pub is_trap: bool,
}

/// Indices of the fixed scenario actors in the vehicle list.
const EGO: usize = 0;
const TRAP1: usize = 1;
const TRAP2: usize = 2;

/// The episodic trap-scenario environment.
#[derive(Debug, Clone)]
pub struct TrapEnv {
    config: ScenarioConfig,
    road: Road,
    vehicles: Vec<Vehicle>,
    steps: usize,
    terminated: bool,
    truncated: bool,
    cause: TerminationCause,
    slow_steps: usize,
    record: bool,
    trajectory: Vec<TrajectoryRow>,
    started: bool,
}

impl TrapEnv {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let road = config.road();
        Ok(TrapEnv {
            config,
            road,
            vehicles: Vec::new(),
            steps: 0,
            terminated: false,
            truncated: false,
            cause: TerminationCause::None,
            slow_steps: 0,
            record: false,
            trajectory: Vec::new(),
            started: false,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn road(&self) -> &Road {
        &self.road
    }

    /// Enables trajectory recording for subsequent episodes.
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    /// Starts a new episode. The seed fully determines the spawn layout;
    /// the same (config, seed) pair always produces the same episode.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = Rng::seed(self.config.seed).fork(seed).fork(0x5ce9);
        let d1 = rng.uniform(self.config.d1_range[0], self.config.d1_range[1]);
        let d2 = rng.uniform(self.config.d2_range[0], self.config.d2_range[1]);

        let lane0 = self.road.lane_center(0);
        let adjacent = self.road.lane_center(1);
        let len = VehicleState::LENGTH;

        self.vehicles = vec![
            Vehicle {
                id: EGO,
                kind: VehicleKind::Ego,
                state: VehicleState::new(0.0, lane0, 0.0, self.config.ego_speed),
                target_lane: 0,
            },
            Vehicle {
                id: TRAP1,
                kind: VehicleKind::Trap,
                state: VehicleState::new(d1 + len, lane0, 0.0, self.config.trap.speed),
                target_lane: 0,
            },
            Vehicle {
                id: TRAP2,
                kind: VehicleKind::Trap,
                state: VehicleState::new(d2 + len, lane0, 0.0, self.config.trap.speed),
                target_lane: 0,
            },
        ];
        for k in 0..self.config.n_traffic {
            let jitter = rng.uniform(-self.config.traffic_jitter, self.config.traffic_jitter);
            let x = -(self.config.traffic_spacing * (k + 1) as f64) + jitter;
            self.vehicles.push(Vehicle {
                id: TRAP2 + 1 + k,
                kind: VehicleKind::Traffic,
                state: VehicleState::new(x, adjacent, 0.0, self.config.traffic_speed),
                target_lane: 1,
            });
        }

        self.steps = 0;
        self.terminated = false;
        self.truncated = false;
        self.cause = TerminationCause::None;
        self.slow_steps = 0;
        self.trajectory.clear();
        self.started = true;
        if self.record {
            self.record_frame();
        }
        self.observe()
    }

    /// Advances the world by one action. Errors if the episode is over.
    pub fn step(&mut self, action: DiscreteAction) -> Result<StepOutcome> {
        if !self.started {
            return Err(Error::Config("step before reset".into()));
        }
        if self.terminated || self.truncated {
            return Err(Error::EpisodeFinished);
        }

        let ego_next = step_kinematics(
            &self.vehicles[EGO].state,
            action.accel(),
            action.steer(),
            self.config.dt,
        )?;
        advance_traffic(
            &mut self.vehicles,
            &self.road,
            &self.config.idm,
            &self.config.mobil,
            self.config.dt,
        )?;
        self.vehicles[EGO].state = ego_next;
        self.steps += 1;

        if self.vehicles[EGO].state.speed < 0.5 {
            self.slow_steps += 1;
        } else {
            self.slow_steps = 0;
        }

        self.cause = self.check_termination();
        match self.cause {
            TerminationCause::Collision | TerminationCause::OffRoad | TerminationCause::Stopped => {
                self.terminated = true;
            }
            TerminationCause::Timeout => {
                self.truncated = true;
            }
            TerminationCause::None => {}
        }

        let accident = self.terminated;
        let ego = &self.vehicles[EGO].state;
        let d_e = self.lateral_offset(ego.y);
        let reward = total_reward(ego.v_lon(), d_e, action.steer(), accident, &self.config.reward);

        if self.record {
            self.record_frame();
        }

        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            terminated: self.terminated,
            truncated: self.truncated,
            cause: self.cause,
            escaped: self.escaped(),
        })
    }

    /// Whether the ego is currently ahead of the leading trap vehicle.
    pub fn escaped(&self) -> bool {
        self.vehicles[EGO].state.x > self.vehicles[TRAP1].state.x
    }

    /// Episode success: the ego overtook the leading trap vehicle and stayed
    /// ahead through the final step. A crash after overtaking still counts
    /// as an escape; it is reported separately under the collision rate.
    pub fn is_success(&self) -> bool {
        (self.terminated || self.truncated) && self.escaped()
    }

    pub fn is_finished(&self) -> bool {
        self.terminated || self.truncated
    }

    pub fn cause(&self) -> TerminationCause {
        self.cause
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn ego(&self) -> &VehicleState {
        &self.vehicles[EGO].state
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn trajectory(&self) -> &[TrajectoryRow] {
        &self.trajectory
    }

    /// Signed offset from the nearest lane center.
    pub fn lateral_offset(&self, y: f64) -> f64 {
        y - self.road.lane_center(self.road.lane_index(y))
    }

    fn check_termination(&self) -> TerminationCause {
        let ego = &self.vehicles[EGO].state;
        for v in &self.vehicles[1..] {
            if rectangles_overlap(ego, &v.state) {
                return TerminationCause::Collision;
            }
        }
        let (lo, hi) = self.road.lateral_bounds();
        if ego.y < lo || ego.y > hi {
            return TerminationCause::OffRoad;
        }
        if self.slow_steps >= 10 {
            return TerminationCause::Stopped;
        }
        if self.steps >= self.config.max_steps {
            return TerminationCause::Timeout;
        }
        TerminationCause::None
    }

    /// Encodes the current world into the observation vector.
    pub fn observe(&self) -> Observation {
        let ego = &self.vehicles[EGO].state;
        let mut values = [0.0; OBS_DIM];
        values[0] = 1.0;
        values[1] = ego.x / POS_SCALE;
        values[2] = ego.y / POS_SCALE;
        values[3] = ego.v_lon() / VEL_SCALE;
        values[4] = ego.v_lat() / VEL_SCALE;
        values[5] = self.lateral_offset(ego.y) / self.road.lane_width;

        let mut neighbors: Vec<&Vehicle> = self.vehicles[1..].iter().collect();
        neighbors.sort_by(|a, b| {
            let ka = ((a.state.x - ego.x).abs(), (a.state.y - ego.y).abs());
            let kb = ((b.state.x - ego.x).abs(), (b.state.y - ego.y).abs());
            ka.partial_cmp(&kb).unwrap()
        });
        for (slot, v) in neighbors.iter().take(NEIGHBOR_SLOTS).enumerate() {
            let base = 6 + 5 * slot;
            values[base] = 1.0;
            values[base + 1] = (v.state.x - ego.x) / POS_SCALE;
            values[base + 2] = (v.state.y - ego.y) / POS_SCALE;
            values[base + 3] = (v.state.v_lon() - ego.v_lon()) / VEL_SCALE;
            values[base + 4] = (v.state.v_lat() - ego.v_lat()) / VEL_SCALE;
        }
        Observation { values }
    }

    /// Builds the controller view from the full world state.
    pub fn view(&self) -> TrafficView {
        let ego = &self.vehicles[EGO].state;
        let others = self.vehicles[1..]
            .iter()
            .map(|v| NeighborView {
                lane: self.road.lane_index(v.state.y),
                dx: v.state.x - ego.x,
                speed: v.state.speed,
            })
            .collect();
        TrafficView {
            ego_lane: self.road.lane_index(ego.y),
            ego_y: ego.y,
            ego_heading: ego.heading,
            ego_v_lon: ego.v_lon(),
            ego_speed: ego.speed,
            others,
            lanes: self.road.lanes,
            lane_width: self.road.lane_width,
        }
    }

    fn record_frame(&mut self) {
        for v in &self.vehicles {
            self.trajectory.push(TrajectoryRow {
                step: self.steps,
                vehicle_id: v.id,
                x: v.state.x,
                y: v.state.y,
                heading: v.state.heading,
                speed: v.state.speed,
                lane: self.road.lane_index(v.state.y),
                is_ego: v.kind == VehicleKind::Ego,
                is_trap: v.kind == VehicleKind::Trap,
            });
        }
    }

    /// Writes the recorded trajectory as CSV.
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,vehicle_id,x,y,heading,speed,lane,is_ego,is_trap")?;
        for r in &self.trajectory {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}",
                r.step,
                r.vehicle_id,
                r.x,
                r.y,
                r.heading,
                r.speed,
                r.lane,
                r.is_ego as u8,
                r.is_trap as u8
            )?;
        }
        Ok(())
    }
}

/// Exact oriented-rectangle overlap via the separating axis test.
/// Touching boundaries do not count as overlap.
pub fn rectangles_overlap(a: &VehicleState, b: &VehicleState) -> bool {
    let hl = VehicleState::LENGTH / 2.0;
    let hw = VehicleState::WIDTH / 2.0;
    let axes = [
        (a.heading.cos(), a.heading.sin()),
        (-a.heading.sin(), a.heading.cos()),
        (b.heading.cos(), b.heading.sin()),
        (-b.heading.sin(), b.heading.cos()),
    ];
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    for &(ax, ay) in &axes {
        let dist = (dx * ax + dy * ay).abs();
        let ra = (hl * a.heading.cos() * ax + hl * a.heading.sin() * ay).abs()
            + (hw * -a.heading.sin() * ax + hw * a.heading.cos() * ay).abs();
        let rb = (hl * b.heading.cos() * ax + hl * b.heading.sin() * ay).abs()
            + (hw * -b.heading.sin() * ax + hw * b.heading.cos() * ay).abs();
        if dist >= ra + rb {
            return false;
        }
    }
    true
}
