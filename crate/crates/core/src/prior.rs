//! Gaussian kernel density prior over demonstration actions.
//!
//! The prior serves three purposes during search:
//! - it is the proposal distribution for expansion (`sample`, then
//!   [`top_k_near`] around the anchor action),
//! - its density gives each candidate a soft visit count ([`visit_weights`]),
//! - [`noise_sample`] is the isotropic-noise proposal it is compared against.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::action::{squared_distance, ActionBounds};
use crate::error::{check_dim, Error, Result};

/// Bandwidth used when a rule-based bandwidth collapses to zero.
pub const MIN_BANDWIDTH: f64 = 1e-3;

/// How the bandwidth is chosen at fit time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    #[default]
    Scott,
    Silverman,
    Fixed(f64),
}

/// Name of the rule that produced a fitted bandwidth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthKind {
    Scott,
    Silverman,
    Fixed,
}

impl BandwidthRule {
    pub fn kind(&self) -> BandwidthKind {
        match self {
            BandwidthRule::Scott => BandwidthKind::Scott,
            BandwidthRule::Silverman => BandwidthKind::Silverman,
            BandwidthRule::Fixed(_) => BandwidthKind::Fixed,
        }
    }
}

/// Fitted isotropic Gaussian KDE. Immutable after fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorDoc")]
pub struct KdePrior {
    dim: usize,
    bandwidth: f64,
    bandwidth_rule: BandwidthKind,
    points: Vec<Vec<f64>>,
    /// Set when a rule-based bandwidth fell back to [`MIN_BANDWIDTH`].
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    fallback: bool,
}

#[derive(Deserialize)]
struct PriorDoc {
    dim: usize,
    bandwidth: f64,
    bandwidth_rule: BandwidthKind,
    points: Vec<Vec<f64>>,
    #[serde(default)]
    fallback: bool,
}

impl TryFrom<PriorDoc> for KdePrior {
    type Error = Error;

    fn try_from(doc: PriorDoc) -> Result<Self> {
        let prior = KdePrior {
            dim: doc.dim,
            bandwidth: doc.bandwidth,
            bandwidth_rule: doc.bandwidth_rule,
            points: doc.points,
            fallback: doc.fallback,
        };
        prior.validate()?;
        Ok(prior)
    }
}

fn sample_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Fits a Gaussian KDE. Rule-based bandwidths scale the mean per-dimension
/// sample standard deviation by `n^(-1/(d+4))` (Scott) or additionally by
/// `(4/(d+2))^(1/(d+4))` (Silverman).
pub fn fit_kde(actions: &[Vec<f64>], rule: BandwidthRule) -> Result<KdePrior> {
    if actions.len() < 2 {
        return Err(Error::data(format!(
            "need at least 2 actions to fit a prior, got {}",
            actions.len()
        )));
    }
    let dim = actions[0].len();
    if dim == 0 {
        return Err(Error::data("zero-dimensional actions"));
    }
    for a in actions {
        check_dim(dim, a.len())?;
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::data("non-finite action component"));
        }
    }
    let n = actions.len();
    let d = dim as f64;
    let mut fallback = false;
    let bandwidth = match rule {
        BandwidthRule::Fixed(h) => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::param(format!("fixed bandwidth must be > 0, got {h}")));
            }
            h
        }
        BandwidthRule::Scott | BandwidthRule::Silverman => {
            let sigma = (0..dim)
                .map(|j| sample_std(actions.iter().map(move |a| a[j]), n))
                .sum::<f64>()
                / d;
            let mut h = (n as f64).powf(-1.0 / (d + 4.0)) * sigma;
            if rule == BandwidthRule::Silverman {
                h *= (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0));
            }
            if h > 0.0 && h.is_finite() {
                h
            } else {
                log::warn!("zero-variance action data; bandwidth set to {MIN_BANDWIDTH}");
                fallback = true;
                MIN_BANDWIDTH
            }
        }
    };
    Ok(KdePrior {
        dim,
        bandwidth,
        bandwidth_rule: rule.kind(),
        points: actions.to_vec(),
        fallback,
    })
}

impl KdePrior {
    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::data("prior has no support points"));
        }
        if self.dim == 0 {
            return Err(Error::data("prior dimension is zero"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::data(format!("bandwidth {} is not positive", self.bandwidth)));
        }
        for p in &self.points {
            check_dim(self.dim, p.len())?;
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::data("non-finite support point"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn bandwidth_rule(&self) -> BandwidthKind {
        self.bandwidth_rule
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    /// `ln((2π)^(-d/2) h^(-d))`, the log kernel peak.
    fn log_norm(&self) -> f64 {
        let d = self.dim as f64;
        -0.5 * d * (2.0 * PI).ln() - d * self.bandwidth.ln()
    }

    /// Log of the density, evaluated with log-sum-exp so it stays finite far
    /// from the support.
    pub fn log_density(&self, a: &[f64]) -> Result<f64> {
        check_dim(self.dim, a.len())?;
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut max = f64::NEG_INFINITY;
        let exps: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                let e = -squared_distance(a, p) * inv;
                max = max.max(e);
                e
            })
            .collect();
        let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
        Ok(self.log_norm() + max + sum.ln() - (self.points.len() as f64).ln())
    }

    /// `(1/N) Σ K_h(a - a_i)` with `K_h(u) = (2π)^(-d/2) h^(-d) exp(-|u|²/(2h²))`.
    pub fn density(&self, a: &[f64]) -> Result<f64> {
        check_dim(self.dim, a.len())?;
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let sum: f64 = self
            .points
            .iter()
            .map(|p| (-squared_distance(a, p) * inv).exp())
            .sum();
        Ok(self.log_norm().exp() * sum / self.points.len() as f64)
    }

    /// Draws `n` samples: a uniformly chosen support point plus isotropic
    /// Gaussian noise of scale `h`, optionally clamped to `bounds`.
    pub fn sample(&self, n: usize, seed: u64, bounds: Option<&ActionBounds>) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng, bounds)
    }

    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        bounds: Option<&ActionBounds>,
    ) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::param("sample count must be at least 1"));
        }
        if let Some(b) = bounds {
            check_dim(self.dim, b.dim())?;
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let base = &self.points[rng.random_range(0..self.points.len())];
            let mut s: Vec<f64> = base
                .iter()
                .map(|&x| {
                    let z: f64 = rng.sample(StandardNormal);
                    x + self.bandwidth * z
                })
                .collect();
            if let Some(b) = bounds {
                b.clamp(&mut s);
            }
            out.push(s);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Candidates drawn around an anchor action, with their prior densities.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePool {
    pub anchor: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
    pub densities: Vec<f64>,
}

impl SamplePool {
    pub fn new(anchor: Vec<f64>, candidates: Vec<Vec<f64>>, prior: Option<&KdePrior>) -> Result<Self> {
        for c in &candidates {
            check_dim(anchor.len(), c.len())?;
        }
        let densities = match prior {
            Some(p) => candidates.iter().map(|c| p.density(c)).collect::<Result<_>>()?,
            None => vec![0.0; candidates.len()],
        };
        Ok(SamplePool {
            anchor,
            candidates,
            densities,
        })
    }
}

/// Indices of the `k` candidates nearest the anchor, by ascending distance,
/// ties broken by lower candidate index.
pub fn top_k_near(pool: &SamplePool, k: usize) -> Result<Vec<usize>> {
    if k > pool.candidates.len() {
        return Err(Error::param(format!(
            "k = {k} exceeds pool size {}",
            pool.candidates.len()
        )));
    }
    let mut scored: Vec<(f64, usize)> = pool
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            check_dim(pool.anchor.len(), c.len())?;
            Ok((squared_distance(c, &pool.anchor), i))
        })
        .collect::<Result<_>>()?;
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() && k > 0 {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.truncate(k);
    scored.sort_unstable_by(cmp);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// Soft visit counts proportional to prior density:
/// `w_i = 1 + round((budget - m) * p_i / Σ p_j)`.
pub fn visit_weights(prior: &KdePrior, actions: &[Vec<f64>], total_budget: u64) -> Result<Vec<u64>> {
    if actions.is_empty() {
        return Err(Error::param("no actions to weight"));
    }
    let logs: Vec<f64> = actions.iter().map(|a| prior.log_density(a)).collect::<Result<_>>()?;
    // normalizing in log space keeps the shares defined when densities underflow
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    weights_from_shares(&rel, total_budget)
}

/// [`visit_weights`] for precomputed densities.
pub fn visit_weights_from_densities(densities: &[f64], total_budget: u64) -> Result<Vec<u64>> {
    if densities.is_empty() {
        return Err(Error::param("no actions to weight"));
    }
    if densities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::param("densities must be finite and nonnegative"));
    }
    weights_from_shares(densities, total_budget)
}

fn weights_from_shares(shares: &[f64], total_budget: u64) -> Result<Vec<u64>> {
    let m = shares.len() as u64;
    if total_budget < m {
        return Err(Error::param(format!(
            "visit budget {total_budget} smaller than action count {m}"
        )));
    }
    let spare = (total_budget - m) as f64;
    let total: f64 = shares.iter().sum();
    Ok(shares
        .iter()
        .map(|&p| {
            let share = if total > 0.0 { p / total } else { 1.0 / m as f64 };
            1 + (spare * share).round() as u64
        })
        .collect())
}

/// Anchor plus i.i.d. `N(0, sigma²)` noise per component, optionally clamped.
pub fn noise_sample(
    anchor: &[f64],
    n: usize,
    sigma: f64,
    seed: u64,
    bounds: Option<&ActionBounds>,
) -> Result<Vec<Vec<f64>>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("noise sigma must be > 0, got {sigma}")));
    }
    if n == 0 {
        return Err(Error::param("sample count must be at least 1"));
    }
    if let Some(b) = bounds {
        check_dim(anchor.len(), b.dim())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let mut s: Vec<f64> = anchor
                .iter()
                .map(|&x| {
                    let z: f64 = rng.sample(StandardNormal);
                    x + sigma * z
                })
                .collect();
            if let Some(b) = bounds {
                b.clamp(&mut s);
            }
            s
        })
        .collect())
}
