//! The redistribution objective family: subsequence sampling, the scaled
//! subset-sum return estimator, the deterministic and randomized return
//! decomposition losses, the unbiased variant that subtracts a
//! without-replacement variance estimate, and the non-parametric uniform
//! redistribution proxies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{ActionId, ReplayBuffer, RngStream, StateId, Trajectory};
use crate::reward_model::{GradientVector, ModelError, RewardModel};

/// Longest trajectory for which exhaustive subset enumeration is allowed.
pub const MAX_EXACT_HORIZON: usize = 16;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("batch must contain at least one trajectory")]
    EmptyBatch,
    #[error("index set built for horizon {expected} applied to a trajectory of length {found}")]
    HorizonMismatch { expected: usize, found: usize },
    #[error("exact mode requires trajectory length <= {MAX_EXACT_HORIZON} (got {0})")]
    ExactModeTooLong(usize),
    #[error("subsequence length must be at least 1")]
    InvalidSubsequenceLength,
    #[error("horizon must be at least 1")]
    InvalidHorizon,
    #[error("unbiased estimation needs subsequences of at least 2 indices")]
    UnbiasedNeedsTwo,
    #[error("index {index} out of range for horizon {horizon}")]
    IndexOutOfRange { index: usize, horizon: usize },
    #[error("duplicate index {0} in subsequence")]
    DuplicateIndex(usize),
    #[error("batch has {trajectories} trajectories but {sets} index sets")]
    SetCountMismatch { trajectories: usize, sets: usize },
    #[error("pair (s={state}, a={action}) does not occur in any buffered trajectory")]
    NoSupport { state: usize, action: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A set of K distinct timestep indices drawn from `{0..T-1}`, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsequenceIndexSet {
    indices: Vec<usize>,
    horizon: usize,
}

impl SubsequenceIndexSet {
    pub fn new(mut indices: Vec<usize>, horizon: usize) -> Result<Self, LossError> {
        if horizon == 0 {
            return Err(LossError::InvalidHorizon);
        }
        if indices.is_empty() {
            return Err(LossError::InvalidSubsequenceLength);
        }
        indices.sort_unstable();
        for pair in indices.windows(2) {
            if pair[0] == pair[1] {
                return Err(LossError::DuplicateIndex(pair[0]));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= horizon {
                return Err(LossError::IndexOutOfRange {
                    index: last,
                    horizon,
                });
            }
        }
        Ok(Self { indices, horizon })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Mini-batch geometry for randomized decomposition training: M sampled
/// subsequences of K transitions each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiniBatchSpec {
    pub n_subsequences: usize,
    pub subsequence_length: usize,
}

impl MiniBatchSpec {
    pub fn new(n_subsequences: usize, subsequence_length: usize) -> Result<Self, LossError> {
        if n_subsequences == 0 || subsequence_length == 0 {
            return Err(LossError::InvalidSubsequenceLength);
        }
        Ok(Self {
            n_subsequences,
            subsequence_length,
        })
    }
}

impl Default for MiniBatchSpec {
    /// 4 subsequences of 64 transitions: a 256-transition batch.
    fn default() -> Self {
        Self {
            n_subsequences: 4,
            subsequence_length: 64,
        }
    }
}

/// A loss value together with its decomposition, when one is available,
/// into the plain return-decomposition part and the variance penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    #[serde(rename = "rd")]
    pub rd_component: Option<f64>,
    #[serde(rename = "var")]
    pub variance_component: Option<f64>,
}

impl LossReport {
    pub fn total_only(total: f64) -> Self {
        Self {
            total,
            rd_component: None,
            variance_component: None,
        }
    }

    /// A loss that is entirely return-decomposition error.
    pub fn pure_rd(total: f64) -> Self {
        Self {
            total,
            rd_component: Some(total),
            variance_component: None,
        }
    }

    pub fn with_components(total: f64, rd: f64, var: f64) -> Self {
        debug_assert!((total - (rd + var)).abs() <= 1e-9);
        Self {
            total,
            rd_component: Some(rd),
            variance_component: Some(var),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("loss report serialization cannot fail")
    }
}

fn proxy_values(model: &RewardModel, trajectory: &Trajectory) -> Result<Vec<f64>, LossError> {
    trajectory
        .transitions()
        .iter()
        .map(|tr| model.eval(tr.state, tr.action).map_err(LossError::from))
        .collect()
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Visits every K-subset of `{0..t-1}`, ascending indices.
fn for_each_subset(t: usize, k: usize, mut f: impl FnMut(&[usize])) {
    fn recurse(
        t: usize,
        k: usize,
        start: usize,
        current: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if current.len() == k {
            f(current);
            return;
        }
        let remaining = k - current.len();
        for i in start..=(t - remaining) {
            current.push(i);
            recurse(t, k, i + 1, current, f);
            current.pop();
        }
    }
    if k == 0 || k > t {
        return;
    }
    recurse(t, k, 0, &mut Vec::with_capacity(k), &mut f);
}

/// Draws K distinct indices from `{0..t-1}` with every K-subset equally
/// likely; K larger than the horizon is clamped down to it.
pub fn sample_subsequence(
    t: usize,
    k: usize,
    rng: &mut RngStream,
) -> Result<SubsequenceIndexSet, LossError> {
    if t == 0 {
        return Err(LossError::InvalidHorizon);
    }
    if k == 0 {
        return Err(LossError::InvalidSubsequenceLength);
    }
    let k_eff = k.min(t);
    let indices = rand::seq::index::sample(rng, t, k_eff).into_vec();
    SubsequenceIndexSet::new(indices, t)
}

/// One index set per trajectory, the geometry used by mini-batch training.
pub fn sample_index_sets(
    batch: &[Trajectory],
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<SubsequenceIndexSet>, LossError> {
    batch
        .iter()
        .map(|tr| sample_subsequence(tr.len(), k, rng))
        .collect()
}

/// Scaled subset-sum estimate of the proxy episodic return:
/// `(T / K) * sum over sampled indices of the proxy reward`.
pub fn mc_return_estimate(
    model: &RewardModel,
    trajectory: &Trajectory,
    idx: &SubsequenceIndexSet,
) -> Result<f64, LossError> {
    if idx.horizon() != trajectory.len() {
        return Err(LossError::HorizonMismatch {
            expected: idx.horizon(),
            found: trajectory.len(),
        });
    }
    let transitions = trajectory.transitions();
    let mut sum = 0.0;
    for &t in idx.indices() {
        sum += model.eval(transitions[t].state, transitions[t].action)?;
    }
    Ok(trajectory.len() as f64 / idx.len() as f64 * sum)
}

fn estimate_from_values(values: &[f64], idx: &SubsequenceIndexSet) -> f64 {
    let sum: f64 = idx.indices().iter().map(|&t| values[t]).sum();
    values.len() as f64 / idx.len() as f64 * sum
}

/// Deterministic return decomposition loss: mean squared error between the
/// episodic return and the full proxy sum.
pub fn loss_rd(model: &RewardModel, batch: &[Trajectory]) -> Result<LossReport, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut acc = 0.0;
    for trajectory in batch {
        let sum: f64 = proxy_values(model, trajectory)?.iter().sum();
        let residual = trajectory.episodic_return() - sum;
        acc += residual * residual;
    }
    Ok(LossReport::pure_rd(acc / batch.len() as f64))
}

/// Randomized return decomposition loss evaluated on given index sets:
/// the mean squared residual between the episodic return and the scaled
/// subset-sum estimate.
pub fn loss_rand_rd_on_sets(
    model: &RewardModel,
    batch: &[Trajectory],
    sets: &[SubsequenceIndexSet],
) -> Result<LossReport, LossError> {
    check_batch(batch, sets)?;
    let mut acc = 0.0;
    for (trajectory, idx) in batch.iter().zip(sets) {
        let est = mc_return_estimate(model, trajectory, idx)?;
        let residual = trajectory.episodic_return() - est;
        acc += residual * residual;
    }
    Ok(LossReport::total_only(acc / batch.len() as f64))
}

/// Randomized return decomposition loss with freshly sampled index sets,
/// one per trajectory.
pub fn loss_rand_rd_sampled(
    model: &RewardModel,
    batch: &[Trajectory],
    k: usize,
    rng: &mut RngStream,
) -> Result<LossReport, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let sets = sample_index_sets(batch, k, rng)?;
    loss_rand_rd_on_sets(model, batch, &sets)
}

/// The true expectation of the randomized loss under uniform K-subset
/// sampling, via exhaustive enumeration. Requires every trajectory length
/// to be at most [`MAX_EXACT_HORIZON`]. Reports the decomposition into the
/// deterministic loss and the variance penalty.
pub fn loss_rand_rd_exact(
    model: &RewardModel,
    batch: &[Trajectory],
    k: usize,
) -> Result<LossReport, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if k == 0 {
        return Err(LossError::InvalidSubsequenceLength);
    }
    let mut acc = 0.0;
    for trajectory in batch {
        let t = trajectory.len();
        if t > MAX_EXACT_HORIZON {
            return Err(LossError::ExactModeTooLong(t));
        }
        let values = proxy_values(model, trajectory)?;
        let k_eff = k.min(t);
        let scale = t as f64 / k_eff as f64;
        let ret = trajectory.episodic_return();
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for_each_subset(t, k_eff, |subset| {
            let est = scale * subset.iter().map(|&i| values[i]).sum::<f64>();
            let residual = ret - est;
            sum_sq += residual * residual;
            count += 1;
        });
        acc += sum_sq / count as f64;
    }
    let total = acc / batch.len() as f64;
    let rd = loss_rd(model, batch)?.total;
    Ok(LossReport::with_components(total, rd, total - rd))
}

/// Gradient of the randomized loss with the given index sets held fixed.
pub fn loss_rand_rd_grad_on_sets(
    model: &RewardModel,
    batch: &[Trajectory],
    sets: &[SubsequenceIndexSet],
) -> Result<GradientVector, LossError> {
    check_batch(batch, sets)?;
    let m = batch.len() as f64;
    let mut grad = GradientVector::zeros(model.param_count());
    for (trajectory, idx) in batch.iter().zip(sets) {
        let est = mc_return_estimate(model, trajectory, idx)?;
        let residual = trajectory.episodic_return() - est;
        let scale = trajectory.len() as f64 / idx.len() as f64;
        let coeff = -2.0 * residual * scale / m;
        let transitions = trajectory.transitions();
        for &t in idx.indices() {
            let g = model.grad(transitions[t].state, transitions[t].action)?;
            grad.add_scaled(&g, coeff);
        }
    }
    Ok(grad)
}

/// Samples one index set per trajectory and returns the gradient of the
/// resulting mini-batch loss.
pub fn loss_rand_rd_grad(
    model: &RewardModel,
    batch: &[Trajectory],
    k: usize,
    rng: &mut RngStream,
) -> Result<GradientVector, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let sets = sample_index_sets(batch, k, rng)?;
    loss_rand_rd_grad_on_sets(model, batch, &sets)
}

/// The factor multiplying `T^2 * Var` in the closed-form variance penalty:
/// `(1/K) * (1 - (K-1)/(T-1))`. It is 1 at K=1, 0 at K=T, and defined as 0
/// for single-step trajectories where the only subset is the whole episode.
pub fn interpolation_weight(k: usize, t: usize) -> Result<f64, LossError> {
    if t == 0 {
        return Err(LossError::InvalidHorizon);
    }
    if k == 0 || k > t {
        return Err(LossError::InvalidSubsequenceLength);
    }
    if t == 1 {
        return Ok(0.0);
    }
    Ok((1.0 / k as f64) * (1.0 - (k as f64 - 1.0) / (t as f64 - 1.0)))
}

/// Variance of the scaled subset-sum estimator over all K-subsets, by
/// exhaustive enumeration.
pub fn variance_penalty_exact(
    model: &RewardModel,
    trajectory: &Trajectory,
    k: usize,
) -> Result<f64, LossError> {
    let t = trajectory.len();
    if t > MAX_EXACT_HORIZON {
        return Err(LossError::ExactModeTooLong(t));
    }
    if k == 0 {
        return Err(LossError::InvalidSubsequenceLength);
    }
    let values = proxy_values(model, trajectory)?;
    let k_eff = k.min(t);
    let scale = t as f64 / k_eff as f64;
    let mut estimates = Vec::new();
    for_each_subset(t, k_eff, |subset| {
        estimates.push(scale * subset.iter().map(|&i| values[i]).sum::<f64>());
    });
    Ok(population_variance(&estimates))
}

/// Closed form of the same variance:
/// `T^2 * Var over the trajectory of the per-step proxy rewards * weight`,
/// with the within-trajectory variance taken as the population variance.
pub fn variance_penalty_formula(
    model: &RewardModel,
    trajectory: &Trajectory,
    k: usize,
) -> Result<f64, LossError> {
    if k == 0 {
        return Err(LossError::InvalidSubsequenceLength);
    }
    let t = trajectory.len();
    let k_eff = k.min(t);
    let values = proxy_values(model, trajectory)?;
    let weight = interpolation_weight(k_eff, t)?;
    Ok((t * t) as f64 * population_variance(&values) * weight)
}

fn unbiased_penalty_estimate(values: &[f64], idx: &SubsequenceIndexSet) -> Result<f64, LossError> {
    let t = values.len();
    let k = idx.len();
    if k == t {
        // The estimator is exact; no variance to correct for.
        return Ok(0.0);
    }
    if k < 2 {
        return Err(LossError::UnbiasedNeedsTwo);
    }
    let sample: Vec<f64> = idx.indices().iter().map(|&i| values[i]).collect();
    let mean = sample.iter().sum::<f64>() / k as f64;
    let dev_sq: f64 = sample.iter().map(|v| (v - mean) * (v - mean)).sum();
    let coefficient = (t * (t - k)) as f64 / (k * (k - 1)) as f64;
    Ok(coefficient * dev_sq)
}

/// Unbiased estimate of the deterministic decomposition loss on the given
/// index sets: the randomized squared residual minus the
/// without-replacement variance estimate
/// `T*(T-K)/(K*(K-1)) * sum over the subset of squared deviations`.
pub fn loss_rd_unbiased_on_sets(
    model: &RewardModel,
    batch: &[Trajectory],
    sets: &[SubsequenceIndexSet],
) -> Result<LossReport, LossError> {
    check_batch(batch, sets)?;
    let mut acc = 0.0;
    for (trajectory, idx) in batch.iter().zip(sets) {
        if idx.horizon() != trajectory.len() {
            return Err(LossError::HorizonMismatch {
                expected: idx.horizon(),
                found: trajectory.len(),
            });
        }
        let values = proxy_values(model, trajectory)?;
        let est = estimate_from_values(&values, idx);
        let residual = trajectory.episodic_return() - est;
        acc += residual * residual - unbiased_penalty_estimate(&values, idx)?;
    }
    Ok(LossReport::pure_rd(acc / batch.len() as f64))
}

/// Samples one index set of length K >= 2 per trajectory and estimates the
/// deterministic loss without bias.
pub fn loss_rd_unbiased(
    model: &RewardModel,
    batch: &[Trajectory],
    k: usize,
    rng: &mut RngStream,
) -> Result<LossReport, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if k < 2 {
        return Err(LossError::UnbiasedNeedsTwo);
    }
    let sets = sample_index_sets(batch, k, rng)?;
    loss_rd_unbiased_on_sets(model, batch, &sets)
}

/// Gradient of the unbiased loss with the index sets held fixed.
pub fn loss_rd_unbiased_grad_on_sets(
    model: &RewardModel,
    batch: &[Trajectory],
    sets: &[SubsequenceIndexSet],
) -> Result<GradientVector, LossError> {
    check_batch(batch, sets)?;
    let m = batch.len() as f64;
    let mut grad = GradientVector::zeros(model.param_count());
    for (trajectory, idx) in batch.iter().zip(sets) {
        if idx.horizon() != trajectory.len() {
            return Err(LossError::HorizonMismatch {
                expected: idx.horizon(),
                found: trajectory.len(),
            });
        }
        let values = proxy_values(model, trajectory)?;
        let t = values.len();
        let k = idx.len();
        let est = estimate_from_values(&values, idx);
        let residual = trajectory.episodic_return() - est;
        let scale = t as f64 / k as f64;
        let residual_coeff = -2.0 * residual * scale / m;
        let penalty_coefficient = if k == t {
            0.0
        } else if k < 2 {
            return Err(LossError::UnbiasedNeedsTwo);
        } else {
            (t * (t - k)) as f64 / (k * (k - 1)) as f64
        };
        let sample_mean = idx.indices().iter().map(|&i| values[i]).sum::<f64>() / k as f64;
        let transitions = trajectory.transitions();
        for &ti in idx.indices() {
            let g = model.grad(transitions[ti].state, transitions[ti].action)?;
            let penalty_coeff = -2.0 * penalty_coefficient * (values[ti] - sample_mean) / m;
            grad.add_scaled(&g, residual_coeff + penalty_coeff);
        }
    }
    Ok(grad)
}

/// Samples index sets and returns the gradient of the unbiased loss.
pub fn loss_rd_unbiased_grad(
    model: &RewardModel,
    batch: &[Trajectory],
    k: usize,
    rng: &mut RngStream,
) -> Result<GradientVector, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if k < 2 {
        return Err(LossError::UnbiasedNeedsTwo);
    }
    let sets = sample_index_sets(batch, k, rng)?;
    loss_rd_unbiased_grad_on_sets(model, batch, &sets)
}

/// Non-parametric uniform redistribution proxy: the mean episodic return of
/// buffered trajectories containing `(s, a)` at any timestep, each
/// containing trajectory counted once. With `scaled` the returns are first
/// normalized by trajectory length.
pub fn ircr_proxy(
    buffer: &ReplayBuffer,
    s: StateId,
    a: ActionId,
    scaled: bool,
) -> Result<f64, LossError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for trajectory in buffer.entries() {
        if trajectory.contains_pair(s, a) {
            let value = if scaled {
                trajectory.episodic_return() / trajectory.len() as f64
            } else {
                trajectory.episodic_return()
            };
            sum += value;
            count += 1;
        }
    }
    if count == 0 {
        return Err(LossError::NoSupport {
            state: s.0,
            action: a.0,
        });
    }
    Ok(sum / count as f64)
}

/// Length-weighted closed-form minimizer of the scalar least squares
/// `sum over containing trajectories of (R - T*r)^2`:
/// `sum(T*R) / sum(T^2)`. Reduces to `mean(R)/T` when all lengths agree.
pub fn uniform_fixed_point_weighted(
    buffer: &ReplayBuffer,
    s: StateId,
    a: ActionId,
) -> Result<f64, LossError> {
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut count = 0usize;
    for trajectory in buffer.entries() {
        if trajectory.contains_pair(s, a) {
            let t = trajectory.len() as f64;
            numerator += t * trajectory.episodic_return();
            denominator += t * t;
            count += 1;
        }
    }
    if count == 0 {
        return Err(LossError::NoSupport {
            state: s.0,
            action: a.0,
        });
    }
    Ok(numerator / denominator)
}

fn check_batch(batch: &[Trajectory], sets: &[SubsequenceIndexSet]) -> Result<(), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if batch.len() != sets.len() {
        return Err(LossError::SetCountMismatch {
            trajectories: batch.len(),
            sets: sets.len(),
        });
    }
    Ok(())
}
