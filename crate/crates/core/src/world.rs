//! Kinematic tabletop world: cubes on a table in the unit workspace, a point
//! gripper that can grasp and release them, and three task families.
//!
//! Object positions are cube centers. A free cube's center sits `half_size`
//! above the top of whatever supports it (the table top is `z = 0`).
//! Stepping is a pure function of `(observation, action)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{Action, ACTION_DIM, DELTA_BOUND};
use crate::error::{Error, Result};
use crate::search::WorldModel;
use crate::seed::{mix, StableHasher};

/// Grasp succeeds when an object center is within this distance of the gripper.
pub const GRASP_RADIUS: f64 = 0.03;
/// Uniform horizontal jitter applied to nominal object positions at reset.
pub const RESET_JITTER: f64 = 0.03;
/// Gripper pose at reset.
pub const HOME: [f64; 3] = [0.5, 0.25, 0.25];
/// Numerical slack for contact and overlap tests.
pub const CONTACT_TOL: f64 = 1e-6;

const DEFAULT_HORIZON: u32 = 80;
const DEFAULT_TOLERANCE: f64 = 0.04;

fn default_horizon() -> u32 {
    DEFAULT_HORIZON
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    /// Nominal (x, y) of the cube center before jitter.
    pub nominal: [f64; 2],
    pub half_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Put object `src` on top of object `dst`.
    Stack { src: usize, dst: usize },
    /// Put object `src` on the table inside a circular zone.
    PickPlace {
        src: usize,
        zone_center: [f64; 2],
        zone_radius: f64,
    },
    /// Visit `n_waypoints` evenly spaced points of a horizontal circle, in order.
    FollowCircle {
        center: [f64; 3],
        radius: f64,
        n_waypoints: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub objects: Vec<ObjectSpec>,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::stack()
    }
}

impl TaskSpec {
    /// Two cubes; the source sits off to one side of the gripper's home pose
    /// and the destination diagonally across from it.
    pub fn stack() -> Self {
        TaskSpec {
            kind: TaskKind::Stack { src: 0, dst: 1 },
            objects: vec![
                ObjectSpec {
                    nominal: [0.3, 0.45],
                    half_size: 0.02,
                },
                ObjectSpec {
                    nominal: [0.65, 0.6],
                    half_size: 0.02,
                },
            ],
            horizon: DEFAULT_HORIZON,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn pick_place() -> Self {
        TaskSpec {
            kind: TaskKind::PickPlace {
                src: 0,
                zone_center: [0.7, 0.55],
                zone_radius: 0.05,
            },
            objects: vec![ObjectSpec {
                nominal: [0.3, 0.45],
                half_size: 0.02,
            }],
            horizon: DEFAULT_HORIZON,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn follow_circle() -> Self {
        TaskSpec {
            kind: TaskKind::FollowCircle {
                center: [0.5, 0.5, 0.12],
                radius: 0.15,
                n_waypoints: 8,
            },
            objects: vec![ObjectSpec {
                nominal: [0.5, 0.5],
                half_size: 0.03,
            }],
            horizon: DEFAULT_HORIZON,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    /// Short identifier of the task family.
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            TaskKind::Stack { .. } => "stack",
            TaskKind::PickPlace { .. } => "pick_place",
            TaskKind::FollowCircle { .. } => "follow_circle",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objects.len();
        let check_index = |i: usize| {
            if i < n {
                Ok(())
            } else {
                Err(Error::param(format!("object index {i} out of range ({n} objects)")))
            }
        };
        match &self.kind {
            TaskKind::Stack { src, dst } => {
                check_index(*src)?;
                check_index(*dst)?;
                if src == dst {
                    return Err(Error::param("stack source and destination coincide"));
                }
            }
            TaskKind::PickPlace {
                src,
                zone_center,
                zone_radius,
            } => {
                check_index(*src)?;
                if !(*zone_radius > 0.0) || !in_unit(zone_center) {
                    return Err(Error::param("pick-place zone must be inside the workspace with positive radius"));
                }
            }
            TaskKind::FollowCircle {
                center,
                radius,
                n_waypoints,
            } => {
                if !(*radius > 0.0) || *n_waypoints == 0 {
                    return Err(Error::param("circle needs a positive radius and at least one waypoint"));
                }
                let lo = center[0].min(center[1]) - radius;
                let hi = center[0].max(center[1]) + radius;
                if lo < 0.0 || hi > 1.0 || !(0.0..=1.0).contains(&center[2]) {
                    return Err(Error::param("circle leaves the workspace"));
                }
            }
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::param("tolerance must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::param("horizon must be at least 1"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.half_size > 0.0 && o.half_size < 0.25) {
                return Err(Error::param(format!("object {i} has invalid half size")));
            }
            let margin = RESET_JITTER + o.half_size;
            if o.nominal.iter().any(|&c| !(c >= margin && c <= 1.0 - margin)) {
                return Err(Error::param(format!("object {i} nominal position too close to the workspace edge")));
            }
            for (j, p) in self.objects.iter().enumerate().skip(i + 1) {
                let gap = o.half_size + p.half_size + 2.0 * RESET_JITTER;
                let dx = (o.nominal[0] - p.nominal[0]).abs();
                let dy = (o.nominal[1] - p.nominal[1]).abs();
                if dx < gap && dy < gap {
                    return Err(Error::param(format!("objects {i} and {j} may overlap after jitter")));
                }
            }
        }
        Ok(())
    }

    /// Waypoints of a circle task, empty otherwise.
    pub fn waypoints(&self) -> Vec<[f64; 3]> {
        match self.kind {
            TaskKind::FollowCircle {
                center,
                radius,
                n_waypoints,
            } => (0..n_waypoints)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n_waypoints as f64;
                    [center[0] + radius * t.cos(), center[1] + radius * t.sin(), center[2]]
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

fn in_unit(xy: &[f64; 2]) -> bool {
    xy.iter().all(|c| (0.0..=1.0).contains(c))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub pos: [f64; 3],
    pub half_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub gripper_pos: [f64; 3],
    pub grip_closed: bool,
    pub held_object: Option<usize>,
    pub objects: Vec<Body>,
    pub task: TaskSpec,
    pub step_index: u32,
    /// Circle tasks: number of waypoints reached so far, in order.
    #[serde(default)]
    pub waypoints_reached: usize,
}

fn footprints_overlap(a: &[f64; 3], ha: f64, b: &[f64; 3], hb: f64) -> bool {
    let reach = ha + hb - CONTACT_TOL;
    (a[0] - b[0]).abs() < reach && (a[1] - b[1]).abs() < reach
}

fn interpenetrate(a: &[f64; 3], ha: f64, b: &[f64; 3], hb: f64) -> bool {
    footprints_overlap(a, ha, b, hb) && (a[2] - b[2]).abs() < ha + hb - CONTACT_TOL
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn hdist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Observation {
    /// Highest top surface below a cube of half size `half` centered at
    /// `xy`, ignoring object `skip`. The table top is 0.
    pub fn support_top(&self, skip: usize, xy: &[f64; 3], half: f64) -> f64 {
        self.objects
            .iter()
            .enumerate()
            .filter(|&(j, b)| j != skip && b.pos[2] < xy[2] && footprints_overlap(xy, half, &b.pos, b.half_size))
            .map(|(_, b)| b.pos[2] + b.half_size)
            .fold(0.0, f64::max)
    }

    /// True if some free object rests on object `i`.
    pub fn is_loaded(&self, i: usize) -> bool {
        let base = &self.objects[i];
        self.objects.iter().enumerate().any(|(j, b)| {
            j != i
                && Some(j) != self.held_object
                && b.pos[2] > base.pos[2]
                && footprints_overlap(&b.pos, b.half_size, &base.pos, base.half_size)
        })
    }

    /// Whether object `i` could occupy `pos` without entering the table or
    /// any other object.
    fn placement_ok(&self, i: usize, pos: &[f64; 3]) -> bool {
        let h = self.objects[i].half_size;
        pos[2] >= h - CONTACT_TOL
            && self
                .objects
                .iter()
                .enumerate()
                .all(|(j, b)| j == i || !interpenetrate(pos, h, &b.pos, b.half_size))
    }

    /// Checks every structural invariant of a world state.
    pub fn check_invariants(&self) -> Result<()> {
        let inside = |p: &[f64; 3]| p.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c));
        if !inside(&self.gripper_pos) {
            return Err(Error::state("gripper outside the workspace"));
        }
        if self.objects.len() != self.task.objects.len() {
            return Err(Error::state("object count does not match the task"));
        }
        for (i, b) in self.objects.iter().enumerate() {
            if !inside(&b.pos) || !(b.half_size > 0.0) {
                return Err(Error::state(format!("object {i} outside the workspace")));
            }
        }
        if let Some(h) = self.held_object {
            if h >= self.objects.len() {
                return Err(Error::state("held object index out of range"));
            }
            if self.objects[h].pos != self.gripper_pos {
                return Err(Error::state("held object detached from the gripper"));
            }
            if !self.grip_closed {
                return Err(Error::state("object held with an open gripper"));
            }
        }
        for i in 0..self.objects.len() {
            for j in i + 1..self.objects.len() {
                let (a, b) = (&self.objects[i], &self.objects[j]);
                if interpenetrate(&a.pos, a.half_size, &b.pos, b.half_size) {
                    return Err(Error::state(format!("objects {i} and {j} interpenetrate")));
                }
            }
            if Some(i) != self.held_object {
                let b = &self.objects[i];
                let rest = self.support_top(i, &b.pos, b.half_size) + b.half_size;
                if (b.pos[2] - rest).abs() > CONTACT_TOL {
                    return Err(Error::state(format!("free object {i} is not resting on a support")));
                }
            }
        }
        Ok(())
    }
}

/// Objects at nominal positions plus seeded horizontal jitter, gripper at
/// [`HOME`], open and empty.
pub fn reset(task: &TaskSpec, seed: u64) -> Result<Observation> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5e7));
    let objects = task
        .objects
        .iter()
        .map(|o| {
            let jx = rng.random_range(-RESET_JITTER..=RESET_JITTER);
            let jy = rng.random_range(-RESET_JITTER..=RESET_JITTER);
            Body {
                pos: [o.nominal[0] + jx, o.nominal[1] + jy, o.half_size],
                half_size: o.half_size,
            }
        })
        .collect();
    Ok(Observation {
        gripper_pos: HOME,
        grip_closed: false,
        held_object: None,
        objects,
        task: task.clone(),
        step_index: 0,
        waypoints_reached: 0,
    })
}

/// Moves the gripper while carrying object `held`. Motion that would push the
/// held cube into the table or another cube is reduced: first by resting on
/// the obstacle if that needs no extra travel, otherwise by cancelling the
/// horizontal part of the move.
fn carry(obs: &Observation, held: usize, from: [f64; 3], to: [f64; 3]) -> [f64; 3] {
    if obs.placement_ok(held, &to) {
        return to;
    }
    let h = obs.objects[held].half_size;
    let floor = obs.support_top(held, &to, h) + h;
    let lifted = [to[0], to[1], to[2].max(floor)];
    if lifted[2] <= from[2].max(to[2]) && obs.placement_ok(held, &lifted) {
        return lifted;
    }
    let vertical = [from[0], from[1], to[2]];
    if obs.placement_ok(held, &vertical) {
        return vertical;
    }
    let floor_here = obs.support_top(held, &from, h) + h;
    let settled = [from[0], from[1], to[2].max(floor_here)];
    if obs.placement_ok(held, &settled) {
        return settled;
    }
    from
}

/// Advances the world by one action.
///
/// The gripper moves by `delta` (clamped to the workspace). Closing the
/// gripper attaches the nearest unloaded object within [`GRASP_RADIUS`],
/// raising the gripper to the object's resting height if it is lower;
/// opening it drops a held object onto the highest surface under it.
pub fn step(obs: &Observation, action: &Action) -> Result<Observation> {
    action.validate()?;
    let mut next = obs.clone();
    next.step_index = obs.step_index.saturating_add(1);

    let g = obs.gripper_pos;
    let mut p = [0.0; 3];
    for i in 0..3 {
        p[i] = (g[i] + action.delta[i]).clamp(0.0, 1.0);
    }
    if let Some(h) = obs.held_object {
        p = carry(obs, h, g, p);
        next.objects[h].pos = p;
    }
    next.gripper_pos = p;

    let closing = action.closes();
    if closing && !obs.grip_closed {
        let target = (0..next.objects.len())
            .filter(|&i| !next.is_loaded(i))
            .map(|i| (dist(&p, &next.objects[i].pos), i))
            .filter(|&(d, _)| d <= GRASP_RADIUS)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, i)) = target {
            // a gripper below the object's resting height lifts to it
            let half = next.objects[i].half_size;
            let rest = next.support_top(i, &next.objects[i].pos, half) + half;
            let q = [p[0], p[1], p[2].max(rest)];
            if q[2] - g[2] <= DELTA_BOUND && next.placement_ok(i, &q) {
                next.gripper_pos = q;
                next.objects[i].pos = q;
                next.held_object = Some(i);
            }
        }
    } else if !closing && obs.grip_closed {
        if let Some(h) = next.held_object.take() {
            let half = next.objects[h].half_size;
            let z = next.support_top(h, &p, half) + half;
            next.objects[h].pos = [p[0], p[1], z];
        }
    }
    next.grip_closed = closing;

    if let TaskKind::FollowCircle { n_waypoints, .. } = next.task.kind {
        if next.waypoints_reached < n_waypoints {
            let wp = next.task.waypoints()[next.waypoints_reached];
            if dist(&next.gripper_pos, &wp) <= next.task.tolerance {
                next.waypoints_reached += 1;
            }
        }
    }
    Ok(next)
}

/// Task completion test.
pub fn is_success(obs: &Observation) -> bool {
    let released = !obs.grip_closed && obs.held_object.is_none();
    match obs.task.kind {
        TaskKind::Stack { src, dst } => {
            let (Some(s), Some(d)) = (obs.objects.get(src), obs.objects.get(dst)) else {
                return false;
            };
            released
                && hdist(&s.pos, &d.pos) <= obs.task.tolerance
                && (s.pos[2] - (d.pos[2] + d.half_size + s.half_size)).abs() <= CONTACT_TOL
        }
        TaskKind::PickPlace {
            src,
            zone_center,
            zone_radius,
        } => {
            let Some(s) = obs.objects.get(src) else {
                return false;
            };
            let zone = [zone_center[0], zone_center[1], s.pos[2]];
            released && hdist(&s.pos, &zone) <= zone_radius && (s.pos[2] - s.half_size).abs() <= CONTACT_TOL
        }
        TaskKind::FollowCircle { n_waypoints, .. } => obs.waypoints_reached >= n_waypoints,
    }
}

/// [`step`] followed by a bounded, deterministic perturbation emulating a
/// learned model's error. Every gripper and free-object coordinate moves by
/// at most `epsilon`; a perturbation that would break a world invariant is
/// withdrawn for that body. Free objects keep their resting height.
pub fn imperfect_step(obs: &Observation, action: &Action, epsilon: f64, model_seed: u64) -> Result<Observation> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!("model error must be >= 0, got {epsilon}")));
    }
    let mut next = step(obs, action)?;
    if epsilon == 0.0 {
        return Ok(next);
    }
    let mut hasher = StableHasher::new(model_seed);
    hasher
        .floats(&obs.gripper_pos)
        .word(obs.grip_closed as u64)
        .word(obs.held_object.map_or(u64::MAX, |h| h as u64))
        .word(obs.step_index as u64)
        .floats(&action.to_array());
    for b in &obs.objects {
        hasher.floats(&b.pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
    let mut jitter = || rng.random_range(-epsilon..=epsilon);

    let offsets: [f64; 3] = [jitter(), jitter(), jitter()];
    let mut g = next.gripper_pos;
    for i in 0..3 {
        g[i] = (g[i] + offsets[i]).clamp(0.0, 1.0);
    }
    let accept_gripper = match next.held_object {
        Some(h) => next.placement_ok(h, &g),
        None => true,
    };
    if accept_gripper {
        next.gripper_pos = g;
        if let Some(h) = next.held_object {
            next.objects[h].pos = g;
        }
    }

    for i in 0..next.objects.len() {
        let (dx, dy) = (jitter(), jitter());
        if Some(i) == next.held_object {
            continue;
        }
        let old = next.objects[i].pos;
        let moved = [(old[0] + dx).clamp(0.0, 1.0), (old[1] + dy).clamp(0.0, 1.0), old[2]];
        next.objects[i].pos = moved;
        if next.check_invariants().is_err() {
            next.objects[i].pos = old;
        }
    }
    Ok(next)
}

/// Length of [`render_features`] for a task.
pub fn feature_len(task: &TaskSpec) -> usize {
    5 + 6 * task.objects.len() + 4
}

/// Hand-crafted state features standing in for a visual encoder.
///
/// Layout: gripper position (3), grip flag, held flag, every object position
/// (3 each), per-axis gripper-to-object distances (3 each), per-axis distance
/// from the source object to its goal (3), source height above its support.
/// Circle tasks use the gripper and the next waypoint for the goal block and
/// the completed fraction for the last entry. Distances are absolute values,
/// so a common translation of the scene leaves them unchanged.
pub fn render_features(obs: &Observation) -> Vec<f64> {
    let g = obs.gripper_pos;
    let mut f = Vec::with_capacity(feature_len(&obs.task));
    f.extend_from_slice(&g);
    f.push(obs.grip_closed as u8 as f64);
    f.push(obs.held_object.is_some() as u8 as f64);
    for b in &obs.objects {
        f.extend_from_slice(&b.pos);
    }
    for b in &obs.objects {
        f.extend((0..3).map(|i| (g[i] - b.pos[i]).abs()));
    }
    let zero = Body {
        pos: [0.0; 3],
        half_size: 0.0,
    };
    match obs.task.kind {
        TaskKind::Stack { src, dst } => {
            let s = obs.objects.get(src).unwrap_or(&zero);
            let d = obs.objects.get(dst).unwrap_or(&zero);
            f.extend((0..3).map(|i| (s.pos[i] - d.pos[i]).abs()));
            f.push(src_height(obs, src));
        }
        TaskKind::PickPlace { src, zone_center, .. } => {
            let s = obs.objects.get(src).unwrap_or(&zero);
            let goal = [zone_center[0], zone_center[1], s.half_size];
            f.extend((0..3).map(|i| (s.pos[i] - goal[i]).abs()));
            f.push(src_height(obs, src));
        }
        TaskKind::FollowCircle { n_waypoints, .. } => {
            let wps = obs.task.waypoints();
            match wps.get(obs.waypoints_reached) {
                Some(wp) => f.extend((0..3).map(|i| (g[i] - wp[i]).abs())),
                None => f.extend([0.0; 3]),
            }
            f.push(obs.waypoints_reached as f64 / n_waypoints.max(1) as f64);
        }
    }
    f
}

fn src_height(obs: &Observation, src: usize) -> f64 {
    match obs.objects.get(src) {
        Some(s) => s.pos[2] - s.half_size - obs.support_top(src, &s.pos, s.half_size),
        None => 0.0,
    }
}

/// The tabletop dynamics as a search world model. With `epsilon = 0` this is
/// the ground-truth simulator; otherwise [`imperfect_step`] keyed by
/// `model_seed`. Flattened chunks are applied action by action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TabletopModel {
    pub epsilon: f64,
    pub model_seed: u64,
}

impl TabletopModel {
    pub fn exact() -> Self {
        TabletopModel {
            epsilon: 0.0,
            model_seed: 0,
        }
    }
}

impl WorldModel for TabletopModel {
    type State = Observation;

    fn transition(&self, state: &Observation, action: &[f64]) -> Result<Observation> {
        if action.is_empty() || action.len() % ACTION_DIM != 0 {
            return Err(Error::Shape {
                expected: ACTION_DIM * action.len().div_ceil(ACTION_DIM).max(1),
                got: action.len(),
            });
        }
        let mut s = state.clone();
        for a in action.chunks_exact(ACTION_DIM) {
            let a = Action::from_slice(a)?;
            s = if self.epsilon == 0.0 {
                step(&s, &a)?
            } else {
                imperfect_step(&s, &a, self.epsilon, self.model_seed)?
            };
        }
        Ok(s)
    }
}
