//! Actions, action chunks and the injection rule that mixes a policy action
//! with a searched one.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Components per action: three position deltas plus the gripper channel.
pub const ACTION_DIM: usize = 4;
/// Per-step bound on every delta component, in workspace units.
pub const DELTA_BOUND: f64 = 0.05;
/// Longest chunk a policy may emit per query.
pub const MAX_CHUNK: usize = 8;
/// Gripper command at or above this value closes the gripper.
pub const GRIP_THRESHOLD: f64 = 0.5;

/// One control step. Serialized as `[d0, d1, d2, grip]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Action {
    pub delta: [f64; 3],
    pub grip: f64,
}

impl Action {
    pub fn new(delta: [f64; 3], grip: f64) -> Result<Self> {
        let a = Action { delta, grip };
        a.validate()?;
        Ok(a)
    }

    /// Zero motion with the given gripper command.
    pub fn hold(grip: f64) -> Self {
        Action {
            delta: [0.0; 3],
            grip: grip.clamp(0.0, 1.0),
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        check_dim(ACTION_DIM, v.len())?;
        Ok(Action {
            delta: [v[0], v[1], v[2]],
            grip: v[3],
        })
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.delta[0], self.delta[1], self.delta[2], self.grip]
    }

    pub fn closes(&self) -> bool {
        self.grip >= GRIP_THRESHOLD
    }

    /// Checks finiteness and the per-step bounds.
    pub fn validate(&self) -> Result<()> {
        for (i, &d) in self.delta.iter().enumerate() {
            if !d.is_finite() || d.abs() > DELTA_BOUND {
                return Err(Error::param(format!(
                    "delta[{i}] = {d} outside [-{DELTA_BOUND}, {DELTA_BOUND}]"
                )));
            }
        }
        if !self.grip.is_finite() || !(0.0..=1.0).contains(&self.grip) {
            return Err(Error::param(format!("grip = {} outside [0, 1]", self.grip)));
        }
        Ok(())
    }

    /// Projects onto the valid action box. Non-finite components become 0.
    pub fn clamped(self) -> Self {
        let c = |x: f64, lo: f64, hi: f64| if x.is_finite() { x.clamp(lo, hi) } else { 0.0 };
        Action {
            delta: self.delta.map(|d| c(d, -DELTA_BOUND, DELTA_BOUND)),
            grip: c(self.grip, 0.0, 1.0),
        }
    }
}

impl From<Action> for [f64; 4] {
    fn from(a: Action) -> Self {
        a.to_array()
    }
}

impl TryFrom<[f64; 4]> for Action {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Action::new([v[0], v[1], v[2]], v[3])
    }
}

/// A short, time-ordered sequence of actions emitted by one policy query.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionChunk(Vec<Action>);

impl ActionChunk {
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() || actions.len() > MAX_CHUNK {
            return Err(Error::param(format!(
                "chunk length {} outside 1..={MAX_CHUNK}",
                actions.len()
            )));
        }
        Ok(ActionChunk(actions))
    }

    pub fn single(action: Action) -> Self {
        ActionChunk(vec![action])
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn first(&self) -> &Action {
        &self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<Action> {
        self.0
    }
}

/// Concatenates a chunk in time order: action `t` occupies
/// indices `4t..4t+4`.
pub fn flatten_chunk(chunk: &ActionChunk) -> Vec<f64> {
    chunk.0.iter().flat_map(|a| a.to_array()).collect()
}

/// Same as [`flatten_chunk`] for a bare slice; an empty slice is rejected.
pub fn flatten_actions(actions: &[Action]) -> Result<Vec<f64>> {
    if actions.is_empty() {
        return Err(Error::param("cannot flatten an empty chunk"));
    }
    Ok(actions.iter().flat_map(|a| a.to_array()).collect())
}

/// Inverse of [`flatten_chunk`]. Components are taken verbatim (no bound
/// check), so the round trip is bit-exact.
pub fn unflatten_chunk(flat: &[f64], len: usize) -> Result<ActionChunk> {
    check_dim(len * ACTION_DIM, flat.len())?;
    let actions = flat
        .chunks_exact(ACTION_DIM)
        .map(|c| Action {
            delta: [c[0], c[1], c[2]],
            grip: c[3],
        })
        .collect();
    ActionChunk::new(actions)
}

/// L2 distance between two actions or flattened chunks.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(squared_distance(a, b).sqrt())
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-component box for flattened actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ActionBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::param("lower bound exceeds upper bound"));
        }
        Ok(ActionBounds { lo, hi })
    }

    /// Bounds for a flattened chunk of `chunk_len` tabletop actions.
    pub fn for_chunk(chunk_len: usize) -> Self {
        let lo = [-DELTA_BOUND, -DELTA_BOUND, -DELTA_BOUND, 0.0];
        let hi = [DELTA_BOUND, DELTA_BOUND, DELTA_BOUND, 1.0];
        ActionBounds {
            lo: lo.iter().copied().cycle().take(chunk_len * ACTION_DIM).collect(),
            hi: hi.iter().copied().cycle().take(chunk_len * ACTION_DIM).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clamp(&self, v: &mut [f64]) {
        for ((x, &l), &h) in v.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x = x.clamp(l, h);
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("alpha = {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `alpha * vla + (1 - alpha) * reasoner`, componentwise, then clamped to the
/// action box. The gripper channel is blended like the deltas; it is only
/// thresholded when the action is executed.
pub fn blend_actions(vla: &Action, reasoner: &Action, alpha: f64) -> Result<Action> {
    check_alpha(alpha)?;
    let mix = |v: f64, r: f64| alpha * v + (1.0 - alpha) * r;
    let blended = Action {
        delta: [
            mix(vla.delta[0], reasoner.delta[0]),
            mix(vla.delta[1], reasoner.delta[1]),
            mix(vla.delta[2], reasoner.delta[2]),
        ],
        grip: mix(vla.grip, reasoner.grip),
    };
    Ok(blended.clamped())
}

/// Dimension-generic form of [`blend_actions`].
pub fn blend_vectors(
    vla: &[f64],
    reasoner: &[f64],
    alpha: f64,
    bounds: Option<&ActionBounds>,
) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    check_dim(vla.len(), reasoner.len())?;
    let mut out: Vec<f64> = vla
        .iter()
        .zip(reasoner)
        .map(|(v, r)| alpha * v + (1.0 - alpha) * r)
        .collect();
    if let Some(b) = bounds {
        check_dim(b.dim(), out.len())?;
        b.clamp(&mut out);
    }
    Ok(out)
}
