//! Progress rewards learned from demonstrations.
//!
//! Successful demonstrations are downsampled, each kept frame is labelled
//! with its linear progress `i / (M - 1)`, and a ridge-regularized linear
//! model over [`render_features`] is fit to those labels in closed form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::record::Trajectory;
use crate::search::RewardFn;
use crate::world::{feature_len, render_features, Observation};

/// Ridge strength substituted when an unregularized fit is rank deficient.
pub const FALLBACK_RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledFrame {
    pub features: Vec<f64>,
    pub label: f64,
}

/// Linear reward `clamp(ψ·[features; 1], 0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RewardDoc")]
pub struct RewardModel {
    pub task_kind: String,
    pub ridge_lambda: f64,
    pub weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RewardDoc {
    task_kind: String,
    ridge_lambda: f64,
    weights: Vec<f64>,
}

impl TryFrom<RewardDoc> for RewardModel {
    type Error = Error;

    fn try_from(d: RewardDoc) -> Result<Self> {
        if d.weights.len() < 2 || d.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::data("reward weights must be finite with at least one feature"));
        }
        if !(d.ridge_lambda >= 0.0 && d.ridge_lambda.is_finite()) {
            return Err(Error::data("ridge_lambda must be nonnegative"));
        }
        Ok(RewardModel {
            task_kind: d.task_kind,
            ridge_lambda: d.ridge_lambda,
            weights: d.weights,
        })
    }
}

/// Result of [`fit_reward`].
#[derive(Clone, Debug, PartialEq)]
pub struct RewardFit {
    pub model: RewardModel,
    pub train_mse: f64,
    /// True when the requested `ridge_lambda = 0` was replaced by
    /// [`FALLBACK_RIDGE`].
    pub fell_back: bool,
}

/// Indices `0, stride, 2·stride, …` plus the final frame.
pub fn downsample_indices(len: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::param("stride must be at least 1"));
    }
    if len == 0 {
        return Err(Error::data("cannot downsample an empty trajectory"));
    }
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if *idx.last().unwrap() != len - 1 {
        idx.push(len - 1);
    }
    Ok(idx)
}

pub fn downsample(traj: &Trajectory, stride: usize) -> Result<Vec<Observation>> {
    Ok(downsample_indices(traj.len(), stride)?
        .into_iter()
        .map(|i| traj.frames[i].obs.clone())
        .collect())
}

/// Linear progress labels `i / (m - 1)`.
pub fn progress_labels(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::data(format!("need at least 2 frames to label progress, got {m}")));
    }
    let last = (m - 1) as f64;
    Ok((0..m).map(|i| i as f64 / last).collect())
}

pub fn label_progress(frames: &[Observation]) -> Result<Vec<LabeledFrame>> {
    let labels = progress_labels(frames.len())?;
    Ok(frames
        .iter()
        .zip(labels)
        .map(|(o, label)| LabeledFrame {
            features: render_features(o),
            label,
        })
        .collect())
}

/// Labelled frames from the successful trajectories of a data set.
pub fn reward_dataset(trajectories: &[Trajectory], stride: usize) -> Result<Vec<LabeledFrame>> {
    let mut out = Vec::new();
    for t in trajectories.iter().filter(|t| t.success) {
        out.extend(label_progress(&downsample(t, stride)?)?);
    }
    Ok(out)
}

fn design(data: &[LabeledFrame], dim: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = data.len();
    let mut x = DMatrix::zeros(n, dim + 1);
    for (r, f) in data.iter().enumerate() {
        check_dim(dim, f.features.len())?;
        if !f.label.is_finite() || f.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite value in frame {r}")));
        }
        for (c, v) in f.features.iter().enumerate() {
            x[(r, c)] = *v;
        }
        x[(r, dim)] = 1.0;
    }
    let y = DVector::from_iterator(n, data.iter().map(|f| f.label));
    Ok((x, y))
}

/// Minimizes `Σ(ψ·[f; 1] - label)² + λ‖ψ‖²` through the normal equations.
pub fn fit_reward(task_kind: &str, data: &[LabeledFrame], ridge_lambda: f64) -> Result<RewardFit> {
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::param(format!("ridge_lambda must be >= 0, got {ridge_lambda}")));
    }
    let dim = data.first().map(|f| f.features.len()).unwrap_or(0);
    if data.len() < dim + 1 || dim == 0 {
        return Err(Error::data(format!(
            "need at least {} labelled frames, got {}",
            dim + 1,
            data.len()
        )));
    }
    let (x, y) = design(data, dim)?;
    let gram = x.transpose() * &x;
    let rhs = x.transpose() * &y;

    let mut lambda = ridge_lambda;
    let mut fell_back = false;
    if lambda == 0.0 {
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if !(min > max * 1e-12) {
            log::warn!("rank-deficient reward design; using ridge_lambda = {FALLBACK_RIDGE}");
            lambda = FALLBACK_RIDGE;
            fell_back = true;
        }
    }
    let mut a = gram;
    for i in 0..=dim {
        a[(i, i)] += lambda;
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::data("normal equations are not positive definite"))?;
    let mut psi = chol.solve(&rhs);
    // iterative refinement drives the normal-equation residual to round-off
    for _ in 0..3 {
        let r = &rhs - &a * &psi;
        psi += chol.solve(&r);
    }
    let resid = &x * &psi - &y;
    let train_mse = resid.norm_squared() / data.len() as f64;
    Ok(RewardFit {
        model: RewardModel {
            task_kind: task_kind.to_string(),
            ridge_lambda: lambda,
            weights: psi.iter().copied().collect(),
        },
        train_mse,
        fell_back,
    })
}

/// `‖Xᵀ(Xψ - y) + λψ‖∞` for a fitted model on its training data.
pub fn normal_equation_residual(model: &RewardModel, data: &[LabeledFrame]) -> Result<f64> {
    let dim = model.weights.len() - 1;
    let (x, y) = design(data, dim)?;
    let psi = DVector::from_column_slice(&model.weights);
    let g = x.transpose() * (&x * &psi - y) + &psi * model.ridge_lambda;
    Ok(g.amax())
}

impl RewardModel {
    pub fn feature_dim(&self) -> usize {
        self.weights.len() - 1
    }

    /// Unclamped linear score.
    pub fn raw(&self, features: &[f64]) -> Result<f64> {
        check_dim(self.feature_dim(), features.len())?;
        let (w, bias) = self.weights.split_at(self.feature_dim());
        Ok(w.iter().zip(features).map(|(a, b)| a * b).sum::<f64>() + bias[0])
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<f64> {
        let r = self.raw(features)?;
        if !r.is_finite() {
            return Err(Error::data("reward score is not finite"));
        }
        Ok(r.clamp(0.0, 1.0))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Reward of an observation under a fitted model, clamped to `[0, 1]`.
pub fn predict_reward(model: &RewardModel, obs: &Observation) -> Result<f64> {
    if model.task_kind != obs.task.kind_name() {
        return Err(Error::data(format!(
            "reward model fit for '{}' applied to '{}'",
            model.task_kind,
            obs.task.kind_name()
        )));
    }
    check_dim(model.feature_dim(), feature_len(&obs.task))?;
    model.predict_features(&render_features(obs))
}

impl RewardFn<Observation> for RewardModel {
    fn reward(&self, state: &Observation) -> Result<f64> {
        predict_reward(self, state)
    }
}

/// Index of the bank frame nearest to `features`; ties go to the lower index.
pub fn nearest_frame(bank: &[LabeledFrame], features: &[f64]) -> Result<usize> {
    if bank.is_empty() {
        return Err(Error::data("empty demonstration bank"));
    }
    let mut best = (f64::INFINITY, 0usize);
    for (i, f) in bank.iter().enumerate() {
        check_dim(features.len(), f.features.len())?;
        let d = crate::action::squared_distance(&f.features, features);
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best.1)
}

/// Label of the demonstration frame nearest in feature space.
pub fn nearest_frame_reward(bank: &[LabeledFrame], obs: &Observation) -> Result<f64> {
    let i = nearest_frame(bank, &render_features(obs))?;
    Ok(bank[i].label.clamp(0.0, 1.0))
}

/// Nearest-frame lookup as a search reward.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBank(pub Vec<LabeledFrame>);

impl RewardFn<Observation> for FrameBank {
    fn reward(&self, state: &Observation) -> Result<f64> {
        nearest_frame_reward(&self.0, state)
    }
}
