//! Mixup on pooled representations.
//!
//! For one training batch a [`MixPlan`] fixes a coefficient `λ` and a
//! permutation `perm`. Row `k` of the pooled features becomes
//! `λ·h[k] + (1−λ)·h[perm[k]]` and its label is interpolated the same way.
//! The mixed batch replaces the original one, so step counts match the
//! unmixed baseline.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Dual, Tensor};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaPolicy {
    Fixed { value: f64 },
    Beta { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Always,
    /// Active for epochs strictly after `floor(total / 2)`.
    LastHalf,
    /// Active for the listed 1-based epochs.
    EpochSet { epochs: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixupConfig {
    pub enabled: bool,
    pub lambda: LambdaPolicy,
    pub schedule: Schedule,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            enabled: true,
            lambda: LambdaPolicy::Fixed { value: 0.5 },
            schedule: Schedule::LastHalf,
        }
    }
}

impl MixupConfig {
    pub fn disabled() -> Self {
        MixupConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.lambda {
            LambdaPolicy::Fixed { value } if !(0.0..=1.0).contains(&value) => Err(
                Error::validation(format!("fixed lambda {value} is outside [0, 1]")),
            ),
            LambdaPolicy::Beta { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::validation(format!("beta alpha must be positive and finite, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Coefficient and pairing used for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MixPlan {
    pub lambda: f64,
    pub perm: Vec<usize>,
}

impl MixPlan {
    pub fn new(lambda: f64, perm: Vec<usize>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::validation(format!("lambda {lambda} is outside [0, 1]")));
        }
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::validation(format!("{perm:?} is not a permutation")));
            }
        }
        Ok(MixPlan { lambda, perm })
    }

    pub fn batch_size(&self) -> usize {
        self.perm.len()
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.perm.len() {
            return Err(Error::validation(format!(
                "mix plan covers {} rows but the batch has {rows}",
                self.perm.len()
            )));
        }
        Ok(())
    }
}

/// Gamma(shape, 1) variate. Marsaglia–Tsang squeeze for `shape ≥ 1`; smaller
/// shapes use `Gamma(shape+1)·U^(1/shape)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Beta(α, α) via two Gamma(α, 1) draws.
pub fn sample_beta_symmetric<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    loop {
        let g1 = sample_gamma(alpha, rng);
        let g2 = sample_gamma(alpha, rng);
        let total = g1 + g2;
        // both draws can underflow to zero for very small alpha
        if total > 0.0 {
            return (g1 / total).clamp(0.0, 1.0);
        }
    }
}

pub fn sample_lambda<R: Rng + ?Sized>(config: &MixupConfig, rng: &mut R) -> f64 {
    match config.lambda {
        LambdaPolicy::Fixed { value } => value,
        LambdaPolicy::Beta { alpha } => sample_beta_symmetric(alpha, rng),
    }
}

/// One λ for the batch and a uniform Fisher–Yates permutation of its rows.
pub fn make_plan<R: Rng + ?Sized>(batch_size: usize, config: &MixupConfig, rng: &mut R) -> Result<MixPlan> {
    if batch_size == 0 {
        return Err(Error::validation("cannot plan a mix for an empty batch"));
    }
    config.validate()?;
    let lambda = sample_lambda(config, rng);
    let mut perm: Vec<usize> = (0..batch_size).collect();
    rng::shuffle(&mut perm, rng);
    Ok(MixPlan { lambda, perm })
}

/// `out[k] = λ·h[k] + (1−λ)·h[perm[k]]`.
///
/// The backward map sends `λ·g[k]` to row `k` and `(1−λ)·g[k]` to row
/// `perm[k]`, so both members of each pair receive gradient. At `λ = 1` the
/// forward and backward are exact copies; at `λ = 0` they are pure gathers.
pub fn mix_representations(h: &Tensor, plan: &MixPlan) -> Result<Dual> {
    plan.check_rows(h.rows())?;
    let out = mix_rows(h, plan);
    let plan = plan.clone();
    Ok(Dual::new(out, move |g| {
        let lam = plan.lambda;
        if lam == 1.0 {
            return vec![g.clone()];
        }
        let mut dh = g.zeros_like();
        for (k, &p) in plan.perm.iter().enumerate() {
            if lam != 0.0 {
                for (d, v) in dh.row_mut(k).iter_mut().zip(g.row(k)) {
                    *d += lam * v;
                }
            }
            for (d, v) in dh.row_mut(p).iter_mut().zip(g.row(k)) {
                *d += (1.0 - lam) * v;
            }
        }
        vec![dh]
    }))
}

fn mix_rows(t: &Tensor, plan: &MixPlan) -> Tensor {
    let lam = plan.lambda;
    if lam == 1.0 {
        return t.clone();
    }
    if lam == 0.0 {
        return t.select_rows(&plan.perm);
    }
    let mut out = t.zeros_like();
    for (k, &p) in plan.perm.iter().enumerate() {
        let (a, b) = (t.row(k), t.row(p));
        for ((o, x), y) in out.row_mut(k).iter_mut().zip(a).zip(b) {
            *o = lam * x + (1.0 - lam) * y;
        }
    }
    out
}

/// Interpolates label rows (one-hot/soft `[b×c]` or scalar `[b×1]`) with the
/// plan's λ and pairing.
pub fn mix_labels(labels: &Tensor, plan: &MixPlan) -> Result<Tensor> {
    plan.check_rows(labels.rows())?;
    Ok(mix_rows(labels, plan))
}

/// Whether mixup runs in 1-based `epoch` out of `total_epochs`.
pub fn is_active(epoch: usize, total_epochs: usize, config: &MixupConfig) -> Result<bool> {
    if epoch == 0 || epoch > total_epochs {
        return Err(Error::validation(format!(
            "epoch {epoch} outside 1..={total_epochs}"
        )));
    }
    if !config.enabled {
        return Ok(false);
    }
    Ok(match &config.schedule {
        Schedule::Always => true,
        Schedule::LastHalf => epoch > total_epochs / 2,
        Schedule::EpochSet { epochs } => epochs.contains(&epoch),
    })
}
