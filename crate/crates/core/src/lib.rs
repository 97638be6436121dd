//! Test-time reasoning for step-wise action policies: a density prior over
//! demonstration actions, a learned progress reward, and a short tree search
//! through a world model whose best action is mixed into the policy output.

pub mod action;
pub mod bench;
pub mod error;
pub mod policy;
pub mod prior;
pub mod record;
pub mod reward;
pub mod search;
pub mod seed;
pub mod world;

pub use action::{blend_actions, Action, ActionBounds, ActionChunk};
pub use error::{Error, Result};
pub use policy::{Policy, PolicyHandle, PolicyKind};
pub use prior::{fit_kde, BandwidthRule, KdePrior};
pub use record::{EpisodeResult, Trajectory};
pub use reward::{fit_reward, predict_reward, RewardModel};
pub use search::{act, run_search, Reasoner, SearchConfig, SearchTrace, WorldModel};
pub use world::{reset, step, Observation, TaskSpec};
