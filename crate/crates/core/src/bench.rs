//! Demonstration generation, episode execution and the paired experiment
//! protocols: baseline vs reasoner, injection-strength sweep, sampling and
//! reward ablations, and world-model error sweep.
//!
//! Every comparative report runs all arms on the same episode seeds. Episodes
//! may run on several workers; results are sorted by seed before reporting,
//! so reports do not depend on the worker count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{flatten_actions, Action, ActionBounds};
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyHandle};
use crate::prior::{fit_kde, BandwidthRule, KdePrior};
use crate::record::{read_trajectories, write_trajectories, EpisodeResult, Frame, Trajectory};
use crate::reward::{fit_reward, predict_reward, reward_dataset, FrameBank, RewardModel};
use crate::search::{act, Reasoner, RewardFn, Sampling, SearchConfig};
use crate::seed::mix;
use crate::world::{is_success, reset, step, Observation, TabletopModel, TaskSpec};

/// Environment variable capping the number of episode workers.
pub const THREADS_ENV: &str = "REASONER_THREADS";

const DEMO_LABEL: u64 = 0xde70;
const MODEL_LABEL: u64 = 0x3d1;
const SEARCH_LABEL: u64 = 0x5ea7c4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    /// Random-walk step of the drift bias; 0 together with `sigma = 0` gives
    /// the expert.
    pub eta: f64,
    pub sigma: f64,
    pub chunk_len: usize,
    pub seed: u64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            eta: 0.004,
            sigma: 0.005,
            chunk_len: 1,
            seed: 0,
        }
    }
}

impl PolicyParams {
    pub fn build(&self) -> Result<PolicyHandle> {
        PolicyHandle::drift(self.eta, self.sigma, self.seed, self.chunk_len)
    }
}

/// Demonstration and fitting settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_demos: usize,
    pub stride: usize,
    pub ridge_lambda: f64,
    pub bandwidth: BandwidthRule,
    /// Existing artifacts to load instead of regenerating them.
    pub demos_path: Option<PathBuf>,
    pub prior_path: Option<PathBuf>,
    pub reward_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_demos: 50,
            stride: 4,
            ridge_lambda: 1e-4,
            bandwidth: BandwidthRule::Fixed(0.007),
            demos_path: None,
            prior_path: None,
            reward_path: None,
        }
    }
}

/// File names written under the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputNames {
    pub demos: String,
    pub failures: String,
    pub prior: String,
    pub reward: String,
    pub report: String,
    pub summary: String,
}

impl Default for OutputNames {
    fn default() -> Self {
        OutputNames {
            demos: "demos.jsonl".into(),
            failures: "failures.jsonl".into(),
            prior: "prior.json".into(),
            reward: "reward.json".into(),
            report: "report.json".into(),
            summary: "summary.csv".into(),
        }
    }
}

/// One document describing a whole experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub policy: PolicyParams,
    pub search: SearchConfig,
    pub data: DataConfig,
    pub n_episodes: usize,
    /// Episode `i` resets with seed `seed + i`; demonstrations use seeds
    /// derived from it under a separate label.
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub outputs: OutputNames,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskSpec::stack(),
            policy: PolicyParams::default(),
            search: SearchConfig::default(),
            data: DataConfig::default(),
            n_episodes: 200,
            seed: 0,
            alphas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            epsilons: vec![0.0, 0.002, 0.005, 0.01, 0.02, 0.05],
            outputs: OutputNames::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.search.validate()?;
        self.policy.build()?;
        if self.n_episodes == 0 {
            return Err(Error::param("n_episodes must be at least 1"));
        }
        if self.data.n_demos == 0 || self.data.stride == 0 {
            return Err(Error::param("n_demos and stride must be at least 1"));
        }
        if !(self.data.ridge_lambda >= 0.0 && self.data.ridge_lambda.is_finite()) {
            return Err(Error::param("ridge_lambda must be >= 0"));
        }
        if let BandwidthRule::Fixed(h) = self.data.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::param("fixed bandwidth must be > 0"));
            }
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::param("alphas must lie in [0, 1]"));
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::param("epsilons must be >= 0"));
        }
        Ok(())
    }

    pub fn episode_seeds(&self) -> Vec<u64> {
        (0..self.n_episodes as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

/// Output of [`generate_demos`].
#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    pub kept: Vec<Trajectory>,
    pub failed: Vec<Trajectory>,
}

impl DemoSet {
    pub fn attempted(&self) -> usize {
        self.kept.len() + self.failed.len()
    }

    pub fn write(&self, dir: &Path, names: &OutputNames) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let demos = dir.join(&names.demos);
        let failures = dir.join(&names.failures);
        write_trajectories(BufWriter::new(File::create(&demos)?), &self.kept)?;
        write_trajectories(BufWriter::new(File::create(&failures)?), &self.failed)?;
        Ok((demos, failures))
    }
}

/// Rolls out a policy from `reset(task, seed)` without search. The last frame
/// holds the final observation with a hold action.
pub fn rollout<P: Policy + ?Sized>(task: &TaskSpec, policy: &mut P, seed: u64) -> Result<Trajectory> {
    let mut obs = reset(task, seed)?;
    policy.reset(seed);
    let mut frames = Vec::new();
    'episode: while frames.len() < task.horizon as usize && !is_success(&obs) {
        for a in policy.propose(&obs)?.into_inner() {
            if frames.len() >= task.horizon as usize || is_success(&obs) {
                break 'episode;
            }
            let next = step(&obs, &a)?;
            frames.push(Frame { obs, action: a });
            obs = next;
        }
    }
    let success = is_success(&obs);
    let grip = if obs.grip_closed { 1.0 } else { 0.0 };
    frames.push(Frame {
        obs,
        action: Action::hold(grip),
    });
    Ok(Trajectory {
        task_id: task.kind_name().into(),
        seed,
        success,
        frames,
    })
}

/// Runs the expert on `n` seeded episodes and splits successes from
/// failures.
pub fn generate_demos(task: &TaskSpec, n: usize, seed: u64) -> Result<DemoSet> {
    if n == 0 {
        return Err(Error::param("need at least one demonstration"));
    }
    let mut expert = PolicyHandle::expert(1)?;
    let mut set = DemoSet {
        kept: Vec::new(),
        failed: Vec::new(),
    };
    for i in 0..n as u64 {
        let t = rollout(task, &mut expert, mix(mix(seed, DEMO_LABEL), i))?;
        if t.success {
            set.kept.push(t);
        } else {
            set.failed.push(t);
        }
    }
    if set.kept.is_empty() {
        return Err(Error::data(format!("no successful demonstrations out of {n}")));
    }
    log::info!("kept {} of {} demonstrations", set.kept.len(), n);
    Ok(set)
}

/// Flattened action chunks of length `chunk_len` taken from every window of
/// the demonstrations' actions, excluding each terminal hold frame.
pub fn prior_samples(demos: &[Trajectory], chunk_len: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for t in demos {
        let actions: Vec<Action> = t.frames[..t.len() - 1].iter().map(|f| f.action).collect();
        for w in actions.windows(chunk_len) {
            out.push(flatten_actions(w).expect("windows are non-empty"));
        }
    }
    out
}

pub fn fit_prior(demos: &[Trajectory], chunk_len: usize, rule: BandwidthRule) -> Result<KdePrior> {
    let samples = prior_samples(demos, chunk_len);
    if samples.is_empty() {
        return Err(Error::data("demonstrations are too short for the chunk length"));
    }
    fit_kde(&samples, rule)
}

/// Fitted models a reasoner arm needs.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub prior: KdePrior,
    pub reward: RewardModel,
    /// Labelled demonstration frames for the nearest-frame reward.
    pub bank: FrameBank,
}

pub fn load_demos(path: &Path) -> Result<Vec<Trajectory>> {
    read_trajectories(BufReader::new(File::open(path)?))
}

/// Demonstrations named by the config, or freshly generated ones.
pub fn demos_for(config: &RunConfig) -> Result<Vec<Trajectory>> {
    match &config.data.demos_path {
        Some(p) => load_demos(p),
        None => Ok(generate_demos(&config.task, config.data.n_demos, config.seed)?.kept),
    }
}

impl Artifacts {
    pub fn fit(config: &RunConfig, demos: &[Trajectory]) -> Result<Self> {
        let prior = fit_prior(demos, config.policy.chunk_len, config.data.bandwidth)?;
        let data = reward_dataset(demos, config.data.stride)?;
        let reward = fit_reward(config.task.kind_name(), &data, config.data.ridge_lambda)?.model;
        Ok(Artifacts {
            prior,
            reward,
            bank: FrameBank(data),
        })
    }

    /// Loads the artifacts named in the config and fits the rest.
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let demos = demos_for(config)?;
        let mut art = Self::fit(config, &demos)?;
        if let Some(p) = &config.data.prior_path {
            art.prior = KdePrior::from_json(&std::fs::read_to_string(p)?)?;
        }
        if let Some(p) = &config.data.reward_path {
            art.reward = RewardModel::from_json(&std::fs::read_to_string(p)?)?;
        }
        Ok(art)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    Regressor,
    NearestFrame,
}

/// One column of a paired comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    /// `None` runs the raw policy.
    pub search: Option<SearchConfig>,
    pub reward: RewardSource,
}

impl Arm {
    pub fn baseline() -> Self {
        Arm {
            name: "baseline".into(),
            search: None,
            reward: RewardSource::Regressor,
        }
    }

    pub fn reasoner(name: impl Into<String>, search: SearchConfig) -> Self {
        Arm {
            name: name.into(),
            search: Some(search),
            reward: RewardSource::Regressor,
        }
    }
}

/// Per-arm results over the shared episode seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub success_rate: f64,
    pub n: usize,
    pub mean_steps: f64,
    /// Success rate minus the baseline's on the same seeds.
    pub paired_difference: Option<f64>,
    pub episodes: Vec<EpisodeResult>,
}

impl ArmReport {
    fn new(arm: &Arm, mut episodes: Vec<EpisodeResult>) -> Self {
        episodes.sort_by_key(|e| e.seed);
        let n = episodes.len();
        let successes = episodes.iter().filter(|e| e.success).count();
        let steps: u64 = episodes.iter().map(|e| e.steps_taken as u64).sum();
        ArmReport {
            arm: arm.name.clone(),
            alpha: arm.search.as_ref().map(|s| s.alpha),
            epsilon: arm.search.as_ref().map(|s| s.epsilon_model),
            success_rate: successes as f64 / n as f64,
            n,
            mean_steps: steps as f64 / n as f64,
            paired_difference: None,
            episodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub experiment: String,
    pub config: RunConfig,
    pub arms: Vec<ArmReport>,
    /// Seconds; left out of the serialized report so reruns compare equal.
    #[serde(skip)]
    pub wall_time: f64,
}

impl BenchReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per arm: `arm, alpha, epsilon, success_rate, n, mean_steps`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["arm", "alpha", "epsilon", "success_rate", "n", "mean_steps"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for a in &self.arms {
            out.write_record([
                a.arm.clone(),
                opt(a.alpha),
                opt(a.epsilon),
                a.success_rate.to_string(),
                a.n.to_string(),
                a.mean_steps.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `arm=rate` pairs on one line.
    pub fn summary_line(&self) -> String {
        self.arms
            .iter()
            .map(|a| format!("{}={:.3}", a.arm, a.success_rate))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn write(&self, dir: &Path, names: &OutputNames) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(&names.report);
        let csv = dir.join(&names.summary);
        std::fs::write(&json, self.to_json()? + "\n")?;
        self.write_csv(BufWriter::new(File::create(&csv)?))?;
        Ok((json, csv))
    }
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs experiments for one config and its fitted artifacts.
pub struct Bench {
    config: RunConfig,
    artifacts: Artifacts,
    threads: Option<usize>,
}

impl Bench {
    pub fn new(config: RunConfig, artifacts: Artifacts) -> Result<Self> {
        config.validate()?;
        if artifacts.prior.dim() != ActionBounds::for_chunk(config.policy.chunk_len).dim() {
            return Err(Error::Shape {
                expected: ActionBounds::for_chunk(config.policy.chunk_len).dim(),
                got: artifacts.prior.dim(),
            });
        }
        Ok(Bench {
            config,
            artifacts,
            threads: threads_from_env(),
        })
    }

    /// Generates or loads demonstrations and fits the artifacts.
    pub fn prepare(config: RunConfig) -> Result<Self> {
        let artifacts = Artifacts::prepare(&config)?;
        Self::new(config, artifacts)
    }

    /// Overrides the worker count; `None` uses every core.
    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn artifacts(&self) -> &Artifacts {
        &self.artifacts
    }

    /// One episode; component errors end it as a recorded failure.
    pub fn run_episode(&self, arm: &Arm, seed: u64) -> EpisodeResult {
        let start = Instant::now();
        let mut steps = 0u32;
        let outcome = self.episode(arm, seed, &mut steps);
        let (success, final_reward, error) = match outcome {
            Ok(obs) => (is_success(&obs), predict_reward(&self.artifacts.reward, &obs).unwrap_or(0.0), None),
            Err(e) => (false, 0.0, Some(format!("{}: {e}", e.name()))),
        };
        EpisodeResult {
            task_id: self.config.task.kind_name().into(),
            seed,
            success,
            steps_taken: steps,
            final_reward,
            wall_time: start.elapsed().as_secs_f64(),
            error,
        }
    }

    fn episode(&self, arm: &Arm, seed: u64, steps: &mut u32) -> Result<Observation> {
        let task = &self.config.task;
        let mut policy = self.config.policy.build()?;
        policy.reset(seed);
        let mut obs = reset(task, seed)?;
        let search = match &arm.search {
            None => None,
            Some(cfg) => {
                let model = TabletopModel {
                    epsilon: cfg.epsilon_model,
                    model_seed: mix(seed, MODEL_LABEL),
                };
                Some((cfg, model))
            }
        };
        let bounds = ActionBounds::for_chunk(self.config.policy.chunk_len);
        let reward: &dyn RewardFn<Observation> = match arm.reward {
            RewardSource::Regressor => &self.artifacts.reward,
            RewardSource::NearestFrame => &self.artifacts.bank,
        };
        let mut query = 0u64;
        'episode: while *steps < task.horizon && !is_success(&obs) {
            let chunk = match &search {
                None => policy.propose(&obs)?,
                Some((cfg, model)) => {
                    let reasoner = Reasoner::new(&self.artifacts.prior, model, reward, cfg, bounds.clone());
                    act(&obs, &mut policy, &reasoner, query, mix(seed, SEARCH_LABEL))?.executed
                }
            };
            query += 1;
            for a in chunk.actions() {
                if *steps >= task.horizon || is_success(&obs) {
                    break 'episode;
                }
                obs = step(&obs, a)?;
                *steps += 1;
            }
        }
        Ok(obs)
    }

    /// Runs every arm on every episode seed.
    pub fn run_arms(&self, experiment: &str, arms: &[Arm]) -> Result<BenchReport> {
        let start = Instant::now();
        let seeds = self.config.episode_seeds();
        let jobs: Vec<(usize, u64)> = (0..arms.len())
            .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
            .collect();
        let run = || -> Vec<(usize, EpisodeResult)> {
            jobs.par_iter()
                .map(|&(a, s)| (a, self.run_episode(&arms[a], s)))
                .collect()
        };
        let results = match self.threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::state(format!("worker pool: {e}")))?
                .install(run),
            None => run(),
        };
        let mut per_arm: Vec<Vec<EpisodeResult>> = vec![Vec::new(); arms.len()];
        for (a, r) in results {
            per_arm[a].push(r);
        }
        let mut reports: Vec<ArmReport> = arms.iter().zip(per_arm).map(|(a, e)| ArmReport::new(a, e)).collect();
        if let Some(base) = arms.iter().position(|a| a.search.is_none()) {
            let rate = reports[base].success_rate;
            for (r, a) in reports.iter_mut().zip(arms) {
                if a.search.is_some() {
                    r.paired_difference = Some(r.success_rate - rate);
                }
            }
        }
        Ok(BenchReport {
            experiment: experiment.into(),
            config: self.config.clone(),
            arms: reports,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Baseline vs reasoner with the configured search.
    pub fn run_benchmark(&self) -> Result<BenchReport> {
        self.run_arms(
            "benchmark",
            &[Arm::baseline(), Arm::reasoner("reasoner", self.config.search.clone())],
        )
    }

    /// Baseline plus one reasoner arm per injection strength.
    pub fn sweep_alpha(&self, alphas: &[f64]) -> Result<BenchReport> {
        if alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::param("alphas must be a non-empty subset of [0, 1]"));
        }
        let mut arms = vec![Arm::baseline()];
        for &alpha in alphas {
            let search = SearchConfig {
                alpha,
                ..self.config.search.clone()
            };
            arms.push(Arm::reasoner(format!("alpha={alpha}"), search));
        }
        self.run_arms("sweep_alpha", &arms)
    }

    /// Prior-sampled expansion vs Gaussian noise around the anchor with the
    /// prior's bandwidth and the same pool size.
    pub fn ablate_sampling(&self) -> Result<BenchReport> {
        let kde = SearchConfig {
            sampling: Sampling::Kde,
            ..self.config.search.clone()
        };
        let noise = SearchConfig {
            sampling: Sampling::Noise { sigma: None },
            ..self.config.search.clone()
        };
        self.run_arms(
            "ablate_sampling",
            &[Arm::baseline(), Arm::reasoner("kde", kde), Arm::reasoner("noise", noise)],
        )
    }

    /// Learned regressor vs nearest demonstration frame as the search reward.
    pub fn ablate_reward(&self) -> Result<BenchReport> {
        let search = self.config.search.clone();
        let mut nearest = Arm::reasoner("nearest_frame", search.clone());
        nearest.reward = RewardSource::NearestFrame;
        self.run_arms(
            "ablate_reward",
            &[Arm::baseline(), Arm::reasoner("regressor", search), nearest],
        )
    }

    /// Baseline plus one reasoner arm per world-model error.
    pub fn sweep_model_error(&self, epsilons: &[f64]) -> Result<BenchReport> {
        if epsilons.is_empty() || epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::param("epsilons must be a non-empty list of values >= 0"));
        }
        let mut arms = vec![Arm::baseline()];
        for &epsilon_model in epsilons {
            let search = SearchConfig {
                epsilon_model,
                ..self.config.search.clone()
            };
            arms.push(Arm::reasoner(format!("epsilon={epsilon_model}"), search));
        }
        self.run_arms("sweep_model_error", &arms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> RunConfig {
        RunConfig {
            n_episodes: n,
            data: DataConfig {
                n_demos: 20,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn demos_succeed_and_are_deterministic() {
        let a = generate_demos(&TaskSpec::stack(), 50, 3).unwrap();
        assert!(a.kept.len() >= 45, "{}", a.kept.len());
        assert_eq!(a.attempted(), 50);
        assert!(a.kept.iter().all(|t| t.success && is_success(&t.frames.last().unwrap().obs)));
        for t in &a.kept {
            t.verify_replay().unwrap();
        }
        let b = generate_demos(&TaskSpec::stack(), 50, 3).unwrap();
        assert_eq!(a, b);
        assert!(generate_demos(&TaskSpec::stack(), 0, 3).is_err());
    }

    #[test]
    fn no_successful_demo_is_a_data_error() {
        let task = TaskSpec {
            horizon: 2,
            ..TaskSpec::stack()
        };
        assert!(matches!(generate_demos(&task, 3, 0), Err(Error::Data(_))));
    }

    #[test]
    fn prior_windows_skip_the_terminal_frame() {
        let demos = generate_demos(&TaskSpec::stack(), 2, 1).unwrap().kept;
        let total: usize = demos.iter().map(|t| t.len() - 1).sum();
        assert_eq!(prior_samples(&demos, 1).len(), total);
        let chunked = prior_samples(&demos, 4);
        assert_eq!(chunked.len(), total - 2 * 3);
        assert!(chunked.iter().all(|v| v.len() == 16));
    }

    #[test]
    fn expert_solves_episode_and_success_rate_is_exact() {
        let mut cfg = small(6);
        cfg.policy.eta = 0.0;
        cfg.policy.sigma = 0.0;
        let bench = Bench::prepare(cfg).unwrap();
        let r = bench.run_episode(&Arm::baseline(), 11);
        assert!(r.success && r.error.is_none());
        let report = bench.run_benchmark().unwrap();
        for arm in &report.arms {
            let k = arm.episodes.iter().filter(|e| e.success).count();
            assert_eq!(arm.success_rate, k as f64 / arm.n as f64);
            assert!(arm.episodes.windows(2).all(|w| w[0].seed < w[1].seed));
        }
    }

    #[test]
    fn alpha_one_matches_baseline() {
        let mut cfg = small(8);
        cfg.search.alpha = 1.0;
        let bench = Bench::prepare(cfg).unwrap();
        let report = bench.run_benchmark().unwrap();
        let strip = |a: &ArmReport| serde_json::to_string(&a.episodes).unwrap();
        assert_eq!(strip(&report.arms[0]), strip(&report.arms[1]));
        assert_eq!(report.arms[1].paired_difference, Some(0.0));
    }

    #[test]
    fn csv_layout() {
        let bench = Bench::prepare(small(2)).unwrap();
        let report = bench.sweep_alpha(&[0.5]).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("arm,alpha,epsilon,success_rate,n,mean_steps"));
        assert!(lines.next().unwrap().starts_with("baseline,,,"));
        assert!(lines.next().unwrap().starts_with("alpha=0.5,0.5,0,"));
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = RunConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&s).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
        let c = RunConfig::from_json(r#"{"search": {"alpha": 0.3}, "n_episodes": 5}"#).unwrap();
        assert_eq!(c.search.alpha, 0.3);
        assert_eq!(c.search.k, 8);
        assert!(RunConfig::from_json(r#"{"n_episodes": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"alphas": [1.5]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"policy": {"chunk_len": 9}}"#).is_err());
    }
}
