//! Offline trajectory records, one JSON object per line:
//! `{"task_id", "seed", "success", "frames": [{"obs": {...}, "action": [d0, d1, d2, g]}]}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::world::{step, Observation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub obs: Observation,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryDoc")]
pub struct Trajectory {
    pub task_id: String,
    pub seed: u64,
    pub success: bool,
    pub frames: Vec<Frame>,
}

#[derive(Deserialize)]
struct TrajectoryDoc {
    task_id: String,
    seed: u64,
    success: bool,
    frames: Vec<Frame>,
}

impl TryFrom<TrajectoryDoc> for Trajectory {
    type Error = Error;

    fn try_from(d: TrajectoryDoc) -> Result<Self> {
        if d.frames.is_empty() {
            return Err(Error::data("trajectory has no frames"));
        }
        for f in &d.frames {
            f.obs.task.validate()?;
            f.obs.check_invariants()?;
        }
        Ok(Trajectory {
            task_id: d.task_id,
            seed: d.seed,
            success: d.success,
            frames: d.frames,
        })
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.frames.iter().map(|f| &f.obs)
    }

    /// Checks that every observation follows from its predecessor under the
    /// exact dynamics.
    pub fn verify_replay(&self) -> Result<()> {
        for (i, w) in self.frames.windows(2).enumerate() {
            if step(&w[0].obs, &w[0].action)? != w[1].obs {
                return Err(Error::data(format!("frame {} does not follow from frame {i}", i + 1)));
            }
        }
        Ok(())
    }
}

/// Outcome of one evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub seed: u64,
    pub success: bool,
    pub steps_taken: u32,
    pub final_reward: f64,
    /// Wall-clock seconds. Not serialized, so reports stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn write_trajectories<W: Write>(mut w: W, trajectories: &[Trajectory]) -> Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a JSONL trajectory file. Blank lines are skipped.
pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::data(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_trajectories<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::data(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
