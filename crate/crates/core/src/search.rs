//! Test-time tree search over a world model.
//!
//! One search builds a single descend-and-expand path: at each depth the
//! selected node is expanded with `k` prior samples near its action, every
//! new child is simulated through the world model and scored, values are
//! backed up to the root, and UCB picks the node to expand next. The root
//! child with the highest value is the searched action, which [`act`] mixes
//! into the policy's own action.
//!
//! Node statistics follow the soft-count scheme: a fresh child's visit count
//! is its density-derived weight, an expanded node's count is the sum of its
//! children's counts, and
//! `Q(i) = (N(i)·r(i) + Σ N(j)·Q(j)) / (N(i) + Σ N(j))` over simulated
//! children `j`.

use serde::{Deserialize, Serialize};

use crate::action::{blend_actions, blend_vectors, flatten_chunk, ActionBounds, ActionChunk};
use crate::error::{check_dim, Error, Result};
use crate::policy::Policy;
use crate::prior::{noise_sample, top_k_near, visit_weights, KdePrior, SamplePool};
use crate::seed::mix;
use crate::world::Observation;

/// Transition function used to imagine the outcome of an action.
pub trait WorldModel {
    type State: Clone;

    /// Next state after applying a (possibly flattened-chunk) action.
    fn transition(&self, state: &Self::State, action: &[f64]) -> Result<Self::State>;
}

/// Scalar progress score of a state.
pub trait RewardFn<S> {
    fn reward(&self, state: &S) -> Result<f64>;
}

impl<S, F: Fn(&S) -> Result<f64>> RewardFn<S> for F {
    fn reward(&self, state: &S) -> Result<f64> {
        self(state)
    }
}

/// Where expansion candidates come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Draws from the fitted action prior.
    #[default]
    Kde,
    /// Isotropic Gaussian noise around the anchor action. `None` matches the
    /// prior's bandwidth.
    Noise { sigma: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Children per expansion.
    pub k: usize,
    /// Prior draws per expansion, from which the `k` nearest are kept.
    pub pool_size: usize,
    pub max_depth: usize,
    /// UCB exploration constant.
    pub c: f64,
    /// Weight of the policy action when mixing in the searched action.
    pub alpha: f64,
    /// Total soft visits shared by the children of one expansion.
    pub visit_budget: u64,
    /// Search on every `invoke_period`-th policy query.
    pub invoke_period: u64,
    /// Per-coordinate error of the imagined transitions.
    pub epsilon_model: f64,
    pub sampling: Sampling,
    /// Blend every action of a chunk instead of only the first.
    pub blend_all: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            k: 8,
            pool_size: 256,
            max_depth: 3,
            c: std::f64::consts::FRAC_1_SQRT_2,
            alpha: 0.6,
            visit_budget: 64,
            invoke_period: 1,
            epsilon_model: 0.0,
            sampling: Sampling::Kde,
            blend_all: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.pool_size {
            return Err(Error::param(format!(
                "need 1 <= k <= pool_size, got k = {}, pool_size = {}",
                self.k, self.pool_size
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::param("max_depth must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::param("exploration constant must be >= 0"));
        }
        if self.invoke_period == 0 {
            return Err(Error::param("invoke_period must be at least 1"));
        }
        if (self.visit_budget as u128) < self.k as u128 {
            return Err(Error::param("visit_budget must be at least k"));
        }
        if !(self.epsilon_model >= 0.0 && self.epsilon_model.is_finite()) {
            return Err(Error::param("epsilon_model must be >= 0"));
        }
        if let Sampling::Noise { sigma: Some(s) } = self.sampling {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::param("noise sigma must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TreeNode<S> {
    pub state: Option<S>,
    /// Incoming action; for the root, the policy proposal.
    pub action: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub visits: u64,
    /// Density-derived count assigned at creation.
    pub prior_visits: u64,
    pub depth: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    simulated: bool,
    expanded: bool,
    key: u64,
}

impl<S> TreeNode<S> {
    pub fn is_simulated(&self) -> bool {
        self.simulated
    }

    pub fn is_expanded(&self) -> bool {
        self.expanded
    }
}

/// `Q + c·sqrt(ln N(parent) / (1 + N(child)))`.
pub fn ucb_score(q: f64, parent_visits: u64, child_visits: u64, c: f64) -> f64 {
    q + c * ((parent_visits as f64).ln() / (1.0 + child_visits as f64)).sqrt()
}

/// Visit-weighted value of a node from its own reward and its children's
/// `(visits, value)` pairs, where the node's own count is the children's total.
pub fn aggregate_value(reward: f64, own_visits: u64, children: &[(u64, f64)]) -> f64 {
    let n_children: u64 = children.iter().map(|c| c.0).sum();
    let denom = (own_visits + n_children) as f64;
    if denom == 0.0 {
        return reward;
    }
    let weighted: f64 = children.iter().map(|&(n, q)| n as f64 * q).sum();
    (own_visits as f64 * reward + weighted) / denom
}

/// Arena-backed search tree. Node 0 is the root.
#[derive(Clone, Debug)]
pub struct Tree<S> {
    nodes: Vec<TreeNode<S>>,
}

impl<S: Clone> Tree<S> {
    pub fn new(root: S, proposal: Vec<f64>, root_reward: f64, seed: u64) -> Self {
        Tree {
            nodes: vec![TreeNode {
                state: Some(root),
                action: proposal,
                reward: root_reward,
                value: root_reward,
                visits: 1,
                prior_visits: 1,
                depth: 0,
                parent: None,
                children: Vec::new(),
                simulated: true,
                expanded: false,
                key: seed,
            }],
        }
    }

    pub fn nodes(&self) -> &[TreeNode<S>] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode<S> {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds children with the given actions and soft visit counts.
    pub fn add_children(&mut self, id: usize, actions: Vec<Vec<f64>>, weights: &[u64]) -> Result<Vec<usize>> {
        if self.nodes[id].expanded {
            return Err(Error::state(format!("node {id} is already expanded")));
        }
        check_dim(actions.len(), weights.len())?;
        let depth = self.nodes[id].depth + 1;
        let parent_key = self.nodes[id].key;
        let mut ids = Vec::with_capacity(actions.len());
        for (slot, (action, &w)) in actions.into_iter().zip(weights).enumerate() {
            let child = self.nodes.len();
            self.nodes.push(TreeNode {
                state: None,
                action,
                reward: 0.0,
                value: 0.0,
                visits: w.max(1),
                prior_visits: w.max(1),
                depth,
                parent: Some(id),
                children: Vec::new(),
                simulated: false,
                expanded: false,
                key: mix(parent_key, slot as u64 + 1),
            });
            ids.push(child);
        }
        self.nodes[id].children = ids.clone();
        self.nodes[id].expanded = true;
        Ok(ids)
    }

    /// Expansion: draw `pool_size` candidates, keep the `k` nearest the
    /// node's action, put the node's action itself in place of the farthest,
    /// and weight the children by prior density.
    pub fn expand(
        &mut self,
        id: usize,
        prior: &KdePrior,
        config: &SearchConfig,
        bounds: &ActionBounds,
    ) -> Result<Vec<usize>> {
        if self.nodes[id].expanded {
            return Err(Error::state(format!("node {id} is already expanded")));
        }
        let anchor = self.nodes[id].action.clone();
        check_dim(prior.dim(), anchor.len())?;
        let pool_seed = mix(self.nodes[id].key, self.nodes[id].depth as u64);
        let pool = match config.sampling {
            Sampling::Kde => prior.sample(config.pool_size, pool_seed, Some(bounds))?,
            Sampling::Noise { sigma } => noise_sample(
                &anchor,
                config.pool_size,
                sigma.unwrap_or(prior.bandwidth()),
                pool_seed,
                Some(bounds),
            )?,
        };
        let pool = SamplePool::new(anchor.clone(), pool, None)?;
        let nearest = top_k_near(&pool, config.k)?;
        let mut actions = Vec::with_capacity(config.k);
        actions.push(anchor);
        actions.extend(nearest[..config.k - 1].iter().map(|&i| pool.candidates[i].clone()));
        let weights = visit_weights(prior, &actions, config.visit_budget)?;
        self.add_children(id, actions, &weights)
    }

    /// Simulation and evaluation: imagine the child's state and score it.
    /// A fresh leaf's value is its reward.
    pub fn simulate<W, R>(&mut self, id: usize, world: &W, reward: &R) -> Result<()>
    where
        W: WorldModel<State = S>,
        R: RewardFn<S> + ?Sized,
    {
        let parent = self.nodes[id]
            .parent
            .ok_or_else(|| Error::state("the root has no incoming transition"))?;
        let parent_state = self.nodes[parent]
            .state
            .as_ref()
            .ok_or_else(|| Error::state(format!("parent {parent} has not been simulated")))?;
        let next = world.transition(parent_state, &self.nodes[id].action)?;
        let r = reward.reward(&next)?;
        if !r.is_finite() {
            return Err(Error::data("reward is not finite"));
        }
        let node = &mut self.nodes[id];
        node.state = Some(next);
        node.reward = r;
        node.value = r;
        node.simulated = true;
        Ok(())
    }

    /// Recomputes counts and values on the path from `leaf`'s parent to the
    /// root.
    pub fn backpropagate(&mut self, leaf: usize) {
        let mut cur = self.nodes[leaf].parent;
        while let Some(id) = cur {
            let stats: Vec<(u64, f64)> = self.nodes[id]
                .children
                .iter()
                .map(|&c| &self.nodes[c])
                .filter(|c| c.simulated)
                .map(|c| (c.visits, c.value))
                .collect();
            let own: u64 = stats.iter().map(|s| s.0).sum();
            let node = &mut self.nodes[id];
            if own > 0 {
                node.visits = own;
                node.value = aggregate_value(node.reward, own, &stats);
            }
            cur = node.parent;
        }
    }

    /// UCB selection among the node's children; ties go to the lower index.
    pub fn select_ucb(&self, id: usize, c: f64) -> Result<usize> {
        let node = &self.nodes[id];
        if !node.expanded || node.children.is_empty() {
            return Err(Error::state(format!("node {id} has no children to select from")));
        }
        let mut best: Option<(f64, usize)> = None;
        for &ch in &node.children {
            let child = &self.nodes[ch];
            if !child.simulated {
                return Err(Error::state(format!("child {ch} has not been simulated")));
            }
            let s = ucb_score(child.value, node.visits, child.visits, c);
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, ch));
            }
        }
        Ok(best.unwrap().1)
    }

    /// Root child with the highest value; ties go to the lower index.
    pub fn best_root_child(&self) -> Result<usize> {
        self.select_ucb(0, 0.0)
    }

    pub fn trace(&self, path: Vec<usize>, chosen: usize) -> SearchTrace {
        SearchTrace {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| TraceNode {
                    id,
                    parent: n.parent,
                    action: n.action.clone(),
                    r: n.reward,
                    q: n.value,
                    n: n.visits,
                    depth: n.depth,
                })
                .collect(),
            path,
            chosen,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub action: Vec<f64>,
    pub r: f64,
    pub q: f64,
    pub n: u64,
    pub depth: usize,
}

/// Flat record of a finished search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub nodes: Vec<TraceNode>,
    /// Nodes chosen by UCB, one per depth.
    pub path: Vec<usize>,
    /// Root child returned as the searched action.
    pub chosen: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub action: Vec<f64>,
    pub trace: SearchTrace,
}

/// Everything a search needs besides the live state and proposal.
pub struct Reasoner<'a, W, R: ?Sized> {
    pub prior: &'a KdePrior,
    pub world: &'a W,
    pub reward: &'a R,
    pub config: &'a SearchConfig,
    pub bounds: ActionBounds,
}

impl<'a, W, R> Reasoner<'a, W, R>
where
    W: WorldModel,
    R: RewardFn<W::State> + ?Sized,
{
    pub fn new(prior: &'a KdePrior, world: &'a W, reward: &'a R, config: &'a SearchConfig, bounds: ActionBounds) -> Self {
        Reasoner {
            prior,
            world,
            reward,
            config,
            bounds,
        }
    }

    /// Runs one search from `state` around the flattened `proposal`.
    pub fn search(&self, state: &W::State, proposal: &[f64], seed: u64) -> Result<SearchOutcome> {
        run_search(state, proposal, self.prior, self.world, self.reward, self.config, &self.bounds, seed)
    }
}

/// Builds the search tree and returns the best root child's action.
#[allow(clippy::too_many_arguments)]
pub fn run_search<W, R>(
    state: &W::State,
    proposal: &[f64],
    prior: &KdePrior,
    world: &W,
    reward: &R,
    config: &SearchConfig,
    bounds: &ActionBounds,
    seed: u64,
) -> Result<SearchOutcome>
where
    W: WorldModel,
    R: RewardFn<W::State> + ?Sized,
{
    config.validate()?;
    check_dim(prior.dim(), proposal.len())?;
    check_dim(prior.dim(), bounds.dim())?;
    let root_reward = reward.reward(state)?;
    let mut tree = Tree::new(state.clone(), proposal.to_vec(), root_reward, seed);
    let mut cur = 0;
    let mut path = Vec::with_capacity(config.max_depth);
    for _ in 0..config.max_depth {
        let children = tree.expand(cur, prior, config, bounds)?;
        for ch in children {
            tree.simulate(ch, world, reward)?;
            tree.backpropagate(ch);
        }
        cur = tree.select_ucb(cur, config.c)?;
        path.push(cur);
    }
    let chosen = tree.best_root_child()?;
    Ok(SearchOutcome {
        action: tree.node(chosen).action.clone(),
        trace: tree.trace(path, chosen),
    })
}

/// What [`act`] did on one policy query.
#[derive(Clone, Debug, PartialEq)]
pub struct ActOutcome {
    /// Actions to execute, in order.
    pub executed: ActionChunk,
    /// The policy's own proposal.
    pub proposal: ActionChunk,
    /// Searched action, when a search ran on this query.
    pub searched: Option<ActionChunk>,
    pub trace: Option<SearchTrace>,
}

/// Queries the policy and, on scheduled queries, injects the searched action:
/// `alpha · proposal + (1 - alpha) · searched`. For chunks only the first
/// action is mixed unless `blend_all` is set.
pub fn act<P, W, R>(
    obs: &Observation,
    policy: &mut P,
    reasoner: &Reasoner<'_, W, R>,
    step_counter: u64,
    seed: u64,
) -> Result<ActOutcome>
where
    P: Policy + ?Sized,
    W: WorldModel<State = Observation>,
    R: RewardFn<Observation> + ?Sized,
{
    let config = reasoner.config;
    config.validate()?;
    let proposal = policy.propose(obs)?;
    if step_counter % config.invoke_period != 0 {
        return Ok(ActOutcome {
            executed: proposal.clone(),
            proposal,
            searched: None,
            trace: None,
        });
    }
    let flat = flatten_chunk(&proposal);
    let outcome = reasoner.search(obs, &flat, mix(seed, step_counter))?;
    let searched = crate::action::unflatten_chunk(&outcome.action, proposal.len())?;
    let executed = if config.blend_all {
        let mixed = blend_vectors(&flat, &outcome.action, config.alpha, Some(&reasoner.bounds))?;
        crate::action::unflatten_chunk(&mixed, proposal.len())?
    } else {
        let mut actions = proposal.actions().to_vec();
        actions[0] = blend_actions(proposal.first(), searched.first(), config.alpha)?;
        ActionChunk::new(actions)?
    };
    Ok(ActOutcome {
        executed,
        proposal,
        searched: Some(searched),
        trace: Some(outcome.trace),
    })
}
