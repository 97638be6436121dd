//! Step-wise action policies. The search treats a policy as frozen: it only
//! ever calls [`Policy::propose`] and [`Policy::reset`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionChunk, DELTA_BOUND, MAX_CHUNK};
use crate::error::{Error, Result};
use crate::seed::mix;
use crate::world::{step, Body, Observation, TaskKind};

/// Clearance above a pick or place target for the approach pose.
pub const HOVER: f64 = 0.08;
/// Horizontal error tolerated before descending onto a target.
pub const ALIGN_XY: f64 = 0.015;
/// Distance to the grasp or place pose at which the gripper is toggled.
pub const AT_POSE: f64 = 0.01;

pub trait Policy {
    /// Next chunk of actions for the current observation.
    fn propose(&mut self, obs: &Observation) -> Result<ActionChunk>;
    /// Clears per-episode state.
    fn reset(&mut self, episode_seed: u64);
    fn chunk_len(&self) -> usize;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Expert,
    /// Expert actions corrupted by a random-walk bias of step `eta` and white
    /// noise of scale `sigma`.
    Drift { eta: f64, sigma: f64, seed: u64 },
}

/// A scripted expert or its drift-corrupted variant.
#[derive(Clone, Debug)]
pub struct PolicyHandle {
    kind: PolicyKind,
    chunk_len: usize,
    bias: [f64; 3],
    rng: ChaCha8Rng,
}

impl PolicyHandle {
    pub fn new(kind: PolicyKind, chunk_len: usize) -> Result<Self> {
        if chunk_len == 0 || chunk_len > MAX_CHUNK {
            return Err(Error::param(format!("chunk_len {chunk_len} outside 1..={MAX_CHUNK}")));
        }
        if let PolicyKind::Drift { eta, sigma, .. } = kind {
            if !(eta >= 0.0 && eta.is_finite() && sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::param("drift rates must be finite and nonnegative"));
            }
        }
        let mut p = PolicyHandle {
            kind,
            chunk_len,
            bias: [0.0; 3],
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        p.reset(0);
        Ok(p)
    }

    pub fn expert(chunk_len: usize) -> Result<Self> {
        Self::new(PolicyKind::Expert, chunk_len)
    }

    pub fn drift(eta: f64, sigma: f64, seed: u64, chunk_len: usize) -> Result<Self> {
        Self::new(PolicyKind::Drift { eta, sigma, seed }, chunk_len)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Accumulated drift bias (zero for the expert).
    pub fn bias(&self) -> [f64; 3] {
        self.bias
    }

    fn corrupt(&mut self, a: Action, eta: f64, sigma: f64) -> Action {
        let mut out = a;
        for i in 0..3 {
            let z: f64 = self.rng.sample(StandardNormal);
            out.delta[i] = a.delta[i] + self.bias[i] + sigma * z;
        }
        // random-walk increment along a uniformly random direction
        let u: [f64; 3] = std::array::from_fn(|_| self.rng.sample(StandardNormal));
        let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        if norm > 0.0 {
            for i in 0..3 {
                self.bias[i] += eta * u[i] / norm;
            }
        }
        out.clamped()
    }
}

impl Policy for PolicyHandle {
    fn propose(&mut self, obs: &Observation) -> Result<ActionChunk> {
        let mut plan = Vec::with_capacity(self.chunk_len);
        let mut state = obs.clone();
        for t in 0..self.chunk_len {
            let a = expert_action(&state);
            if t + 1 < self.chunk_len {
                state = step(&state, &a)?;
            }
            plan.push(a);
        }
        if let PolicyKind::Drift { eta, sigma, .. } = self.kind {
            for a in plan.iter_mut() {
                *a = self.corrupt(*a, eta, sigma);
            }
        }
        ActionChunk::new(plan)
    }

    fn reset(&mut self, episode_seed: u64) {
        self.bias = [0.0; 3];
        let seed = match self.kind {
            PolicyKind::Expert => 0,
            PolicyKind::Drift { seed, .. } => seed,
        };
        self.rng = ChaCha8Rng::seed_from_u64(mix(seed, episode_seed));
    }

    fn chunk_len(&self) -> usize {
        self.chunk_len
    }
}

fn toward(from: &[f64; 3], to: &[f64; 3], grip: f64) -> Action {
    Action {
        delta: std::array::from_fn(|i| (to[i] - from[i]).clamp(-DELTA_BOUND, DELTA_BOUND)),
        grip,
    }
}

fn hdist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (hdist(a, b).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// What the expert wants right now: a point to move toward (or none, when
/// it is toggling the gripper in place) and the gripper command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertCommand {
    pub target: Option<[f64; 3]>,
    pub grip: f64,
}

impl ExpertCommand {
    fn go(target: [f64; 3], grip: f64) -> Self {
        ExpertCommand {
            target: Some(target),
            grip,
        }
    }

    fn hold(grip: f64) -> Self {
        ExpertCommand { target: None, grip }
    }
}

/// Approach `pose` from above, descend, then toggle the gripper.
fn approach(g: &[f64; 3], pose: &[f64; 3], carrying: bool) -> ExpertCommand {
    let grip_now = if carrying { 1.0 } else { 0.0 };
    let hover = [pose[0], pose[1], pose[2] + HOVER];
    if hdist(g, pose) > ALIGN_XY {
        // climb before travelling when low, so a carried cube clears obstacles
        if carrying && g[2] < pose[2] + HOVER / 2.0 {
            return ExpertCommand::go([g[0], g[1], hover[2]], grip_now);
        }
        return ExpertCommand::go(hover, grip_now);
    }
    if dist(g, pose) <= AT_POSE {
        return ExpertCommand::hold(1.0 - grip_now);
    }
    ExpertCommand::go(*pose, grip_now)
}

/// Resting pose of `src` on top of `dst`.
fn place_pose(src: &Body, dst: &Body) -> [f64; 3] {
    [dst.pos[0], dst.pos[1], dst.pos[2] + dst.half_size + src.half_size]
}

/// Stateless waypoint controller; every decision is read off the observation.
pub fn expert_command(obs: &Observation) -> ExpertCommand {
    match obs.task.kind {
        TaskKind::FollowCircle { .. } => match obs.task.waypoints().get(obs.waypoints_reached) {
            Some(wp) => ExpertCommand::go(*wp, 0.0),
            None => ExpertCommand::hold(0.0),
        },
        TaskKind::Stack { src, dst } => {
            let goal = place_pose(&obs.objects[src], &obs.objects[dst]);
            transfer(obs, src, goal)
        }
        TaskKind::PickPlace {
            src, zone_center, ..
        } => {
            let s = &obs.objects[src];
            transfer(obs, src, [zone_center[0], zone_center[1], s.half_size])
        }
    }
}

/// The expert's action: the per-axis clamped step toward its current target.
pub fn expert_action(obs: &Observation) -> Action {
    let cmd = expert_command(obs);
    match cmd.target {
        Some(t) => toward(&obs.gripper_pos, &t, cmd.grip),
        None => Action::hold(cmd.grip),
    }
}

fn transfer(obs: &Observation, src: usize, goal: [f64; 3]) -> ExpertCommand {
    let g = obs.gripper_pos;
    match obs.held_object {
        Some(h) if h == src => approach(&g, &goal, true),
        // holding the wrong thing: let go
        Some(_) => ExpertCommand::hold(0.0),
        None if crate::world::is_success(obs) || obs.grip_closed => ExpertCommand::hold(0.0),
        None => approach(&g, &obs.objects[src].pos, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{is_success, reset, TaskSpec};

    fn run(policy: &mut PolicyHandle, task: &TaskSpec, seed: u64) -> (bool, u32) {
        policy.reset(seed);
        let mut obs = reset(task, seed).unwrap();
        while obs.step_index < task.horizon {
            for a in policy.propose(&obs).unwrap().actions() {
                obs = step(&obs, a).unwrap();
                if is_success(&obs) {
                    return (true, obs.step_index);
                }
            }
        }
        (false, obs.step_index)
    }

    #[test]
    fn expert_solves_every_task_family() {
        for task in [TaskSpec::stack(), TaskSpec::pick_place(), TaskSpec::follow_circle()] {
            let mut p = PolicyHandle::expert(1).unwrap();
            let wins = (0..50).filter(|&s| run(&mut p, &task, s).0).count();
            assert_eq!(wins, 50, "{}", task.kind_name());
        }
    }

    #[test]
    fn chunked_expert_also_succeeds() {
        let mut p = PolicyHandle::expert(4).unwrap();
        let task = TaskSpec::stack();
        let wins = (0..50).filter(|&s| run(&mut p, &task, s).0).count();
        assert_eq!(wins, 50);
    }

    #[test]
    fn zero_drift_equals_expert() {
        let task = TaskSpec::stack();
        let mut e = PolicyHandle::expert(1).unwrap();
        let mut d = PolicyHandle::drift(0.0, 0.0, 77, 1).unwrap();
        d.reset(4);
        let mut obs = reset(&task, 4).unwrap();
        for _ in 0..30 {
            let a = e.propose(&obs).unwrap();
            assert_eq!(a, d.propose(&obs).unwrap());
            obs = step(&obs, a.first()).unwrap();
        }
    }

    #[test]
    fn reset_zeroes_bias_and_replays() {
        let task = TaskSpec::stack();
        let obs = reset(&task, 1).unwrap();
        let mut d = PolicyHandle::drift(0.01, 0.0, 5, 1).unwrap();
        d.reset(9);
        // zero bias and sigma: first action is the expert's
        assert_eq!(d.propose(&obs).unwrap().first(), &expert_action(&obs));
        let stream = |p: &mut PolicyHandle| -> Vec<ActionChunk> {
            p.reset(9);
            (0..10).map(|_| p.propose(&obs).unwrap()).collect()
        };
        let first = stream(&mut d);
        assert_ne!(d.bias(), [0.0; 3]);
        assert_eq!(first, stream(&mut d));
        d.reset(9);
        assert_eq!(d.bias(), [0.0; 3]);
    }

    #[test]
    fn expert_moves_toward_active_target() {
        let mut checked = 0;
        for task in [TaskSpec::stack(), TaskSpec::pick_place(), TaskSpec::follow_circle()] {
            for seed in 0..20 {
                let mut obs = reset(&task, seed).unwrap();
                for _ in 0..40 {
                    let cmd = expert_command(&obs);
                    let a = expert_action(&obs);
                    if let Some(t) = cmd.target {
                        let off: [f64; 3] = std::array::from_fn(|i| t[i] - obs.gripper_pos[i]);
                        if dist(&t, &obs.gripper_pos) > task.tolerance {
                            let dot: f64 = (0..3).map(|i| off[i] * a.delta[i]).sum();
                            assert!(dot > 0.0);
                            checked += 1;
                        }
                    }
                    obs = step(&obs, &a).unwrap();
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(PolicyHandle::expert(0).is_err());
        assert!(PolicyHandle::expert(MAX_CHUNK + 1).is_err());
        assert!(PolicyHandle::drift(-1.0, 0.0, 0, 1).is_err());
    }
}
