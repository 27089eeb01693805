//! The suboptimal rule-based overtaking controller and its stochastic
//! wrapper.
//!
//! The controller follows a fixed recipe: while boxed in behind its lane
//! leader it tracks the highest predefined speed that stays below every
//! visible leader, waits until the target lane offers a safe slot (no
//! constraining leader ahead, nobody behind who would be forced to brake
//! hard), then commands the lane change. Once settled in the target lane it
//! reverts to plain adaptive cruising. Safe and reliable, but never faster
//! than the traffic it follows: deliberately suboptimal.

use crate::dynamics::{DiscreteAction, VehicleState, ACTION_COUNT, STEERS};
use crate::env::{NeighborView, Observation, TrafficView};
use crate::rng::Rng;
use crate::traffic::{idm_acceleration, IdmParams, Road};
use serde::{Deserialize, Serialize};

/// Tuning of the rule controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicParams {
    /// Safety time distance to the preceding vehicle (s).
    pub t_safe: f64,
    /// Lowest candidate tracking speed (m/s).
    pub v_min: f64,
    /// Highest candidate tracking speed (m/s).
    pub v_max: f64,
    /// Number of uniformly spaced speed candidates.
    pub n_speeds: usize,
    /// Whether overtaking is permitted at all.
    pub o_dec: bool,
    /// Lane used for the overtaking maneuver.
    pub l_target: usize,
    /// Perception range for leaders and followers (m).
    pub horizon: f64,
    /// Comfort braking limit imposed on the target-lane follower (m/s^2).
    pub b_safe: f64,
    /// Lateral proportional gain on the lane-center offset.
    pub k_y: f64,
    /// Proportional gain on the heading error.
    pub k_heading: f64,
    /// Speed deadband before an acceleration command is issued (m/s).
    pub accel_deadband: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        HeuristicParams {
            t_safe: 1.5,
            v_min: 6.0,
            v_max: 15.0,
            n_speeds: 5,
            o_dec: true,
            l_target: 1,
            horizon: 60.0,
            b_safe: 2.0,
            k_y: 0.1,
            k_heading: 1.0,
            accel_deadband: 0.25,
        }
    }
}

/// Minimum separation required from the current preceding vehicle before
/// committing the maneuver, from the ego speed, the slower of the two
/// lane leaders, and the longitudinal offsets of both reference vehicles.
/// The target-lane offset may be negative (backward gap).
pub fn safety_distance(
    v_ego: f64,
    v_l_current: f64,
    v_l_target: f64,
    dx_l_current: f64,
    dx_l_target: f64,
    params: &HeuristicParams,
) -> f64 {
    (v_ego - v_l_current.min(v_l_target)) * params.t_safe + dx_l_current - dx_l_target
}

/// The uniformly spaced candidate tracking speeds.
pub fn speed_candidates(params: &HeuristicParams) -> Vec<f64> {
    let n = params.n_speeds.max(2);
    (0..n)
        .map(|i| params.v_min + i as f64 / (n - 1) as f64 * (params.v_max - params.v_min))
        .collect()
}

/// Largest candidate speed strictly below both leader speeds; falls back to
/// the minimum candidate when no candidate qualifies. Absent leaders are
/// passed as `f64::INFINITY` and never constrain.
pub fn target_speed(v_l_current: f64, v_l_target: f64, params: &HeuristicParams) -> f64 {
    let cap = v_l_current.min(v_l_target);
    speed_candidates(params)
        .into_iter()
        .filter(|&c| c < cap)
        .fold(f64::NAN, f64::max)
        .max(params.v_min)
        .min(if cap.is_finite() { f64::INFINITY } else { params.v_max })
}

/// Nearest vehicle ahead of the ego in `lane`, within the perception
/// horizon.
fn leader(view: &TrafficView, lane: usize, horizon: f64) -> Option<&NeighborView> {
    view.others
        .iter()
        .filter(|v| v.lane == lane && v.dx > 0.0 && v.dx <= horizon)
        .min_by(|a, b| a.dx.partial_cmp(&b.dx).unwrap())
}

/// Nearest vehicle behind the ego in `lane`, within the perception horizon.
fn follower(view: &TrafficView, lane: usize, horizon: f64) -> Option<&NeighborView> {
    view.others
        .iter()
        .filter(|v| v.lane == lane && v.dx <= 0.0 && v.dx >= -horizon)
        .max_by(|a, b| a.dx.partial_cmp(&b.dx).unwrap())
}

/// Whether merging in front of the nearest target-lane follower would force
/// it to brake beyond the comfort limit, judged by its hypothetical IDM
/// response to the ego as its new leader.
fn rear_gap_safe(view: &TrafficView, lane: usize, params: &HeuristicParams, idm: &IdmParams) -> bool {
    match follower(view, lane, params.horizon) {
        None => true,
        Some(rear) => {
            let gap = -rear.dx - VehicleState::LENGTH;
            if gap <= 0.0 {
                return false;
            }
            let dv = rear.speed - view.ego_v_lon;
            match idm_acceleration(rear.speed, dv, gap, idm) {
                Ok(a) => a >= -params.b_safe,
                Err(_) => false,
            }
        }
    }
}

/// Per-step decision of the rule controller: a tracking speed and a lane.
///
/// While the ego is still in its original lane the decision follows the
/// overtaking recipe; once it occupies the target lane (or when overtaking
/// is disabled) it degrades to adaptive cruising behind whoever is ahead.
pub fn overtake_decision(
    view: &TrafficView,
    params: &HeuristicParams,
    idm: &IdmParams,
) -> (f64, usize) {
    let lane = view.ego_lane;

    if !params.o_dec || lane == params.l_target {
        // Cruise phase: track the leader's speed, capped at v_max.
        let v = match leader(view, lane, params.horizon) {
            Some(l) => l.speed.min(params.v_max),
            None => params.v_max,
        };
        return (v, lane);
    }

    let lead_current = leader(view, lane, params.horizon);
    let lead_target = leader(view, params.l_target, params.horizon);

    let v_lc = lead_current.map_or(f64::INFINITY, |l| l.speed);
    let v_lt = lead_target.map_or(f64::INFINITY, |l| l.speed);
    let v_cmd = target_speed(v_lc, v_lt, params);

    let slot_open = match lead_target {
        // No constraining vehicle ahead in the target lane.
        None => true,
        Some(t) => {
            let dx_lc = lead_current.map_or(0.0, |l| l.dx);
            let ds = safety_distance(view.ego_v_lon, v_lc, t.speed, dx_lc, t.dx, params);
            ds - dx_lc > 0.0
        }
    };

    if slot_open && rear_gap_safe(view, params.l_target, params, idm) {
        (v_cmd, params.l_target)
    } else {
        (v_cmd, lane)
    }
}

/// Quantizes a continuous steering demand to the nearest discrete value.
fn quantize_steer(raw: f64) -> usize {
    let half = STEERS[2] / 2.0;
    if raw > half {
        2
    } else if raw < -half {
        0
    } else {
        1
    }
}

/// Maps a (speed, lane) command onto the discrete action set: bang-bang
/// speed tracking with a deadband, and a proportional steering law on the
/// lateral and heading errors.
pub fn low_level_track(
    ego: &VehicleState,
    target_speed: f64,
    target_lane: usize,
    road: &Road,
    params: &HeuristicParams,
) -> DiscreteAction {
    let accel_idx = if ego.speed < target_speed - params.accel_deadband {
        2
    } else if ego.speed > target_speed + params.accel_deadband {
        0
    } else {
        1
    };

    let y_err = ego.y - road.lane_center(target_lane);
    let raw = -params.k_y * y_err - params.k_heading * ego.heading;
    let steer_idx = quantize_steer(raw);

    DiscreteAction::from_parts(accel_idx, steer_idx).expect("indices in range")
}

/// The deterministic rule controller, bundled with everything it needs to
/// act from either a world view or a raw observation.
#[derive(Debug, Clone)]
pub struct RulePolicy {
    pub params: HeuristicParams,
    pub idm: IdmParams,
    pub road: Road,
}

impl RulePolicy {
    pub fn new(params: HeuristicParams, idm: IdmParams, road: Road) -> Self {
        RulePolicy { params, idm, road }
    }

    /// Deterministic action for a world view.
    pub fn action(&self, view: &TrafficView) -> DiscreteAction {
        let (v_cmd, lane_cmd) = overtake_decision(view, &self.params, &self.idm);
        let ego = VehicleState::new(0.0, view.ego_y, view.ego_heading, view.ego_speed);
        low_level_track(&ego, v_cmd, lane_cmd, &self.road, &self.params)
    }

    /// Deterministic action recovered from an encoded observation.
    pub fn action_from_obs(&self, obs: &Observation) -> DiscreteAction {
        self.action(&TrafficView::from_observation(obs, &self.road))
    }
}

/// Stochastic wrapper spreading a small probability over off-rule actions.
#[derive(Debug, Clone)]
pub struct StochasticRulePolicy {
    pub base: RulePolicy,
    /// Probability mass on the deterministic rule action.
    pub p_rule: f64,
}

impl StochasticRulePolicy {
    pub fn new(base: RulePolicy, p_rule: f64) -> Self {
        assert!(
            p_rule > 1.0 / ACTION_COUNT as f64 && p_rule <= 1.0,
            "p_rule must exceed the uniform mass"
        );
        StochasticRulePolicy { base, p_rule }
    }

    /// Distribution with mass `p_rule` on `rule_index` and the rest spread
    /// evenly over the other actions.
    pub fn distribution_for(&self, rule_index: usize) -> [f64; ACTION_COUNT] {
        let off = (1.0 - self.p_rule) / (ACTION_COUNT - 1) as f64;
        let mut masses = [off; ACTION_COUNT];
        masses[rule_index] = self.p_rule;
        masses
    }

    pub fn distribution(&self, view: &TrafficView) -> [f64; ACTION_COUNT] {
        self.distribution_for(self.base.action(view).index())
    }

    pub fn distribution_from_obs(&self, obs: &Observation) -> [f64; ACTION_COUNT] {
        self.distribution_for(self.base.action_from_obs(obs).index())
    }

    /// Samples an action from the wrapped distribution.
    pub fn sample(&self, view: &TrafficView, rng: &mut Rng) -> DiscreteAction {
        let masses = self.distribution(view);
        DiscreteAction::new(rng.categorical(&masses)).expect("index in range")
    }
}
