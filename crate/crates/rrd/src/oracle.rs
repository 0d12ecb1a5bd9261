//! Independent brute-force references: exhaustive subset enumeration,
//! exact expectations under the uniform K-subset law, finite-difference
//! gradients, and the certificate checks driven by the `verify` command.
//!
//! The enumeration here is written separately from the one inside the loss
//! implementations so the two routes stay independent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{RngStream, Trajectory};
use crate::envs::{make_random_additive_env, UniformRandomAgent};
use crate::redistribution::{
    loss_rand_rd_exact, loss_rand_rd_grad_on_sets, loss_rand_rd_on_sets, loss_rd,
    loss_rd_unbiased_on_sets, mc_return_estimate, sample_index_sets, variance_penalty_exact,
    variance_penalty_formula, SubsequenceIndexSet,
};
use crate::reward_model::{Activation, GradientVector, RewardModel};

/// Longest horizon the enumeration oracles accept.
pub const MAX_ORACLE_HORIZON: usize = 16;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration limited to horizons <= {MAX_ORACLE_HORIZON} (got {0})")]
    HorizonTooLong(usize),
    #[error("subset size {k} invalid for horizon {t}")]
    InvalidSubsetSize { k: usize, t: usize },
}

/// Outcome of one brute-force check over a family of random instances.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VerificationCertificate {
    pub check_name: String,
    pub instances_tested: usize,
    pub max_abs_error: f64,
    pub passed: bool,
    pub tolerance: f64,
}

impl VerificationCertificate {
    pub fn new(
        check_name: impl Into<String>,
        instances_tested: usize,
        max_abs_error: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            check_name: check_name.into(),
            instances_tested,
            max_abs_error,
            passed: max_abs_error <= tolerance,
            tolerance,
        }
    }

    /// One JSON line, suitable for streaming output.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("certificate serialization cannot fail")
    }
}

/// All K-subsets of `{0..t-1}` in lexicographic order.
pub fn enumerate_subsets(t: usize, k: usize) -> Result<Vec<SubsequenceIndexSet>, OracleError> {
    if t == 0 || t > MAX_ORACLE_HORIZON {
        return Err(OracleError::HorizonTooLong(t));
    }
    if k == 0 || k > t {
        return Err(OracleError::InvalidSubsetSize { k, t });
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(
            SubsequenceIndexSet::new(current.clone(), t)
                .expect("enumerated subsets are valid by construction"),
        );
        // Advance to the next combination in lexicographic order.
        let mut i = k;
        while i > 0 {
            i -= 1;
            if current[i] < t - k + i {
                current[i] += 1;
                for j in i + 1..k {
                    current[j] = current[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                return Ok(out);
            }
        }
    }
}

/// Unweighted mean of an estimator over every K-subset: the exact
/// expectation under the uniform subset-sampling law.
pub fn exact_expectation<F>(t: usize, k: usize, mut f: F) -> Result<f64, OracleError>
where
    F: FnMut(&SubsequenceIndexSet) -> f64,
{
    let subsets = enumerate_subsets(t, k)?;
    let total: f64 = subsets.iter().map(&mut f).sum();
    Ok(total / subsets.len() as f64)
}

/// Central finite differences of a scalar function of the parameters.
pub fn finite_difference_grad<F>(model: &RewardModel, f: F, h: f64) -> GradientVector
where
    F: Fn(&RewardModel) -> f64,
{
    assert!(h > 0.0, "step size must be positive");
    let base = model.params().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut up = base.clone();
        up[i] += h;
        let mut down = base.clone();
        down[i] -= h;
        let f_up = f(&model.with_params(up).expect("same length"));
        let f_down = f(&model.with_params(down).expect("same length"));
        grad.push((f_up - f_down) / (2.0 * h));
    }
    GradientVector::new(grad)
}

/// A random verification instance: a small episodic environment, a batch of
/// uniform-random rollouts sharing horizon `t` in 2..=8, and a tabular
/// model with uniform random parameters.
fn random_instance(rng: &mut RngStream) -> (Vec<Trajectory>, RewardModel) {
    use rand::Rng;
    let t = rng.gen_range(2..=8usize);
    let states = rng.gen_range(2..=4usize);
    let actions = rng.gen_range(2..=3usize);
    let env = make_random_additive_env(states, actions, t, rng)
        .expect("dimensions are positive by construction");
    let agent = UniformRandomAgent {
        action_count: actions,
    };
    let batch: Vec<Trajectory> = (0..rng.gen_range(1..=3usize))
        .map(|_| env.rollout(&agent, rng))
        .collect();
    let params: Vec<f64> = (0..states * actions)
        .map(|_| rng.next_f64() * 2.0 - 1.0)
        .collect();
    let model = RewardModel::tabular(states, actions)
        .with_params(params)
        .expect("length matches by construction");
    (batch, model)
}

/// Checks, on random instances and for every K up to the horizon, that the
/// randomized loss splits exactly into the deterministic loss plus the
/// estimator variance, that this matches an independent enumeration of the
/// expected squared residual, and that the closed-form variance (scaled
/// within-trajectory variance times the interpolation weight) agrees with
/// exhaustive enumeration.
pub fn verify_loss_decomposition(
    instance_count: usize,
    rng: &mut RngStream,
) -> VerificationCertificate {
    let mut max_err: f64 = 0.0;
    for _ in 0..instance_count {
        let (batch, model) = random_instance(rng);
        let t = batch
            .iter()
            .map(Trajectory::len)
            .max()
            .expect("non-empty batch");
        let rd = loss_rd(&model, &batch).expect("valid batch").total;
        for k in 1..=t {
            let exact = loss_rand_rd_exact(&model, &batch, k)
                .expect("valid batch")
                .total;

            // Independent route: enumerate the expected squared residual.
            let mut reference = 0.0;
            for trajectory in &batch {
                let k_eff = k.min(trajectory.len());
                reference += exact_expectation(trajectory.len(), k_eff, |idx| {
                    let est = mc_return_estimate(&model, trajectory, idx).expect("valid pair");
                    let residual = trajectory.episodic_return() - est;
                    residual * residual
                })
                .expect("horizon within oracle bounds");
            }
            reference /= batch.len() as f64;
            max_err = max_err.max((exact - reference).abs());

            // Identity: exact randomized loss = plain loss + mean variance.
            let mean_penalty: f64 = batch
                .iter()
                .map(|trajectory| {
                    variance_penalty_exact(&model, trajectory, k.min(trajectory.len()))
                        .expect("within enumeration bounds")
                })
                .sum::<f64>()
                / batch.len() as f64;
            max_err = max_err.max((exact - (rd + mean_penalty)).abs());

            // Closed form against enumeration, per trajectory.
            for trajectory in &batch {
                let k_eff = k.min(trajectory.len());
                let enumerated =
                    variance_penalty_exact(&model, trajectory, k_eff).expect("within bounds");
                let formula =
                    variance_penalty_formula(&model, trajectory, k_eff).expect("within bounds");
                max_err = max_err.max((enumerated - formula).abs());
            }
        }
    }
    VerificationCertificate::new(
        "loss_decomposition_identity",
        instance_count,
        max_err,
        1e-10,
    )
}

/// Checks that averaging the unbiased loss estimate over every K-subset
/// reproduces the deterministic loss exactly.
pub fn verify_unbiased_rd_estimator(
    instance_count: usize,
    rng: &mut RngStream,
) -> VerificationCertificate {
    let mut max_err: f64 = 0.0;
    for _ in 0..instance_count {
        let (batch, model) = random_instance(rng);
        let rd = loss_rd(&model, &batch).expect("valid batch").total;
        let t_max = batch.iter().map(Trajectory::len).max().expect("non-empty");
        for k in 2..=t_max {
            // Expectation per trajectory, then batch mean; index sets are
            // independent across trajectories so the expectations separate.
            let mut expected = 0.0;
            for trajectory in &batch {
                let k_eff = k.min(trajectory.len());
                if k_eff < 2 {
                    // Length-1 trajectory: the single full subset is exact.
                    let full = SubsequenceIndexSet::new(vec![0], 1).expect("valid");
                    expected += loss_rd_unbiased_on_sets(
                        &model,
                        std::slice::from_ref(trajectory),
                        std::slice::from_ref(&full),
                    )
                    .expect("valid pair")
                    .total;
                    continue;
                }
                expected += exact_expectation(trajectory.len(), k_eff, |idx| {
                    loss_rd_unbiased_on_sets(
                        &model,
                        std::slice::from_ref(trajectory),
                        std::slice::from_ref(idx),
                    )
                    .expect("valid pair")
                    .total
                })
                .expect("within oracle bounds");
            }
            expected /= batch.len() as f64;
            max_err = max_err.max((expected - rd).abs());
        }
    }
    VerificationCertificate::new("unbiased_rd_estimator", instance_count, max_err, 1e-10)
}

/// Checks the monotone objective chain `L^(1) >= L^(2) >= ... >= L^(T)` in
/// exact mode, that the chain ends at the deterministic loss, and that
/// every member upper-bounds it. The certificate reports the worst
/// violation (0 when the ordering holds everywhere).
pub fn verify_objective_gap_chain(
    instance_count: usize,
    rng: &mut RngStream,
) -> VerificationCertificate {
    let mut max_violation: f64 = 0.0;
    for _ in 0..instance_count {
        let (batch, model) = random_instance(rng);
        let t = batch.iter().map(Trajectory::len).min().expect("non-empty");
        let rd = loss_rd(&model, &batch).expect("valid batch").total;
        let losses: Vec<f64> = (1..=t)
            .map(|k| {
                loss_rand_rd_exact(&model, &batch, k)
                    .expect("valid batch")
                    .total
            })
            .collect();
        for pair in losses.windows(2) {
            max_violation = max_violation.max(pair[1] - pair[0]);
        }
        for &l in &losses {
            max_violation = max_violation.max(rd - l);
        }
        max_violation = max_violation.max((losses[t - 1] - rd).abs());
    }
    VerificationCertificate::new("objective_gap_chain", instance_count, max_violation, 1e-12)
}

/// Compares the analytic mini-batch gradient against central finite
/// differences with the index sets frozen, for each model family. The
/// certificate's error field holds the worst componentwise relative error.
pub fn verify_gradients(
    instance_count: usize,
    rng: &mut RngStream,
) -> Vec<VerificationCertificate> {
    use rand::Rng;
    let kinds: [&str; 3] = ["tabular", "linear", "mlp"];
    kinds
        .iter()
        .map(|&kind| {
            let mut max_rel: f64 = 0.0;
            for _ in 0..instance_count {
                let (batch, tabular) = random_instance(rng);
                let states = tabular.state_count();
                let actions = tabular.action_count();
                let model = match kind {
                    "tabular" => tabular,
                    "linear" => {
                        let dim = rng.gen_range(2..=4usize);
                        let features: Vec<Vec<f64>> = (0..states * actions)
                            .map(|_| (0..dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect())
                            .collect();
                        let params: Vec<f64> =
                            (0..dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
                        RewardModel::linear(states, actions, features)
                            .expect("well-formed features")
                            .with_params(params)
                            .expect("matching length")
                    }
                    _ => {
                        let model =
                            RewardModel::mlp(states, actions, &[5, 4], Activation::Tanh, rng)
                                .expect("positive widths");
                        let params: Vec<f64> = (0..model.param_count())
                            .map(|_| rng.next_f64() * 2.0 - 1.0)
                            .collect();
                        model.with_params(params).expect("matching length")
                    }
                };
                let k = rng.gen_range(1..=4usize);
                let sets = sample_index_sets(&batch, k, rng).expect("valid batch");
                let analytic =
                    loss_rand_rd_grad_on_sets(&model, &batch, &sets).expect("valid batch");
                let numeric = finite_difference_grad(
                    &model,
                    |m| {
                        loss_rand_rd_on_sets(m, &batch, &sets)
                            .expect("valid batch")
                            .total
                    },
                    1e-5,
                );
                for (a, n) in analytic.values().iter().zip(numeric.values()) {
                    max_rel = max_rel.max((a - n).abs() / (a.abs() + 1e-8));
                }
            }
            VerificationCertificate::new(
                format!("rand_rd_gradient_{kind}"),
                instance_count,
                max_rel,
                1e-4,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{ActionId, StateId};

    fn binomial(n: usize, k: usize) -> usize {
        if k > n {
            return 0;
        }
        let k = k.min(n - k);
        let mut result = 1usize;
        for i in 0..k {
            result = result * (n - i) / (i + 1);
        }
        result
    }

    #[test]
    fn enumerate_counts() {
        assert_eq!(enumerate_subsets(4, 2).unwrap().len(), 6);
        assert_eq!(enumerate_subsets(3, 3).unwrap().len(), 1);
        assert_eq!(enumerate_subsets(5, 1).unwrap().len(), 5);
    }

    #[test]
    fn enumerate_matches_binomial_everywhere() {
        for t in 1..=10 {
            for k in 1..=t {
                assert_eq!(enumerate_subsets(t, k).unwrap().len(), binomial(t, k));
            }
        }
    }

    #[test]
    fn enumerate_is_lexicographic_and_distinct() {
        let subsets = enumerate_subsets(5, 3).unwrap();
        for pair in subsets.windows(2) {
            assert!(pair[0].indices() < pair[1].indices());
        }
        assert_eq!(subsets[0].indices(), &[0, 1, 2]);
        assert_eq!(subsets.last().unwrap().indices(), &[2, 3, 4]);
    }

    #[test]
    fn enumerate_singletons_in_order() {
        let subsets = enumerate_subsets(5, 1).unwrap();
        let flattened: Vec<usize> = subsets.iter().map(|s| s.indices()[0]).collect();
        assert_eq!(flattened, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn enumerate_rejects_large_horizon() {
        assert!(matches!(
            enumerate_subsets(17, 2),
            Err(OracleError::HorizonTooLong(17))
        ));
    }

    #[test]
    fn expectation_of_constant_is_constant() {
        assert_eq!(exact_expectation(6, 3, |_| 1.0).unwrap(), 1.0);
    }

    #[test]
    fn expectation_of_estimator_is_full_sum() {
        let model = RewardModel::tabular(4, 1)
            .with_params(vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let trajectory =
            Trajectory::from_steps(&[(0, 0, 1), (1, 0, 2), (2, 0, 3), (3, 0, 4)], 10.0).unwrap();
        let mean = exact_expectation(4, 2, |idx| {
            mc_return_estimate(&model, &trajectory, idx).unwrap()
        })
        .unwrap();
        assert!((mean - 10.0).abs() < 1e-12);

        let sq = exact_expectation(4, 2, |idx| {
            let r = 10.0 - mc_return_estimate(&model, &trajectory, idx).unwrap();
            r * r
        })
        .unwrap();
        assert!((sq - 20.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_on_quadratic() {
        let model = RewardModel::tabular(1, 2)
            .with_params(vec![3.0, 1.0])
            .unwrap();
        let grad = finite_difference_grad(&model, |m| m.params()[0] * m.params()[0], 1e-5);
        assert!((grad.values()[0] - 6.0).abs() <= 1e-6);
        assert!(grad.values()[1].abs() <= 1e-9);
    }

    #[test]
    fn finite_difference_exact_on_linear() {
        let model = RewardModel::tabular(1, 3)
            .with_params(vec![1.0, -2.0, 0.5])
            .unwrap();
        let grad = finite_difference_grad(
            &model,
            |m| 2.0 * m.params()[0] - 3.0 * m.params()[1] + m.params()[2],
            1e-3,
        );
        assert!((grad.values()[0] - 2.0).abs() < 1e-9);
        assert!((grad.values()[1] + 3.0).abs() < 1e-9);
        assert!((grad.values()[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn finite_difference_matches_loss_gradient() {
        let mut rng = RngStream::new(5);
        let model = RewardModel::tabular(3, 2)
            .with_params((0..6).map(|_| rng.next_f64() * 2.0 - 1.0).collect())
            .unwrap();
        let trajectory =
            Trajectory::from_steps(&[(0, 0, 1), (1, 1, 2), (2, 0, 0), (0, 1, 1)], 2.5).unwrap();
        let batch = vec![trajectory];
        let sets = sample_index_sets(&batch, 2, &mut rng).unwrap();
        let analytic = loss_rand_rd_grad_on_sets(&model, &batch, &sets).unwrap();
        let numeric = finite_difference_grad(
            &model,
            |m| loss_rand_rd_on_sets(m, &batch, &sets).unwrap().total,
            1e-5,
        );
        for (a, n) in analytic.values().iter().zip(numeric.values()) {
            assert!((a - n).abs() / (a.abs() + 1e-8) <= 1e-4);
        }
    }

    #[test]
    fn loss_decomposition_certificate_passes() {
        let mut rng = RngStream::new(1);
        let cert = verify_loss_decomposition(30, &mut rng);
        assert!(cert.passed, "max error {}", cert.max_abs_error);
        assert_eq!(cert.instances_tested, 30);
    }

    #[test]
    fn constant_rewards_give_zero_variance_error() {
        let model = RewardModel::tabular(3, 1)
            .with_params(vec![2.0, 2.0, 2.0])
            .unwrap();
        let trajectory = Trajectory::from_steps(&[(0, 0, 1), (1, 0, 2), (2, 0, 0)], 6.0).unwrap();
        for k in 1..=3 {
            assert_eq!(variance_penalty_exact(&model, &trajectory, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn k_equal_t_collapses_to_plain_loss() {
        let model = RewardModel::tabular(2, 2)
            .with_params(vec![0.3, -0.7, 1.1, 0.2])
            .unwrap();
        let trajectory = Trajectory::from_steps(&[(0, 1, 1), (1, 0, 0)], 1.0).unwrap();
        let batch = vec![trajectory];
        let exact = loss_rand_rd_exact(&model, &batch, 2).unwrap().total;
        let rd = loss_rd(&model, &batch).unwrap().total;
        assert!((exact - rd).abs() < 1e-14);
    }

    #[test]
    fn objective_gap_certificate_passes() {
        let mut rng = RngStream::new(2);
        let cert = verify_objective_gap_chain(30, &mut rng);
        assert!(cert.passed, "max violation {}", cert.max_abs_error);
    }

    #[test]
    fn unbiased_certificate_passes() {
        let mut rng = RngStream::new(3);
        let cert = verify_unbiased_rd_estimator(20, &mut rng);
        assert!(cert.passed, "max error {}", cert.max_abs_error);
    }

    #[test]
    fn gradient_certificates_pass() {
        let mut rng = RngStream::new(4);
        for cert in verify_gradients(7, &mut rng) {
            assert!(cert.passed, "{}: {}", cert.check_name, cert.max_abs_error);
        }
    }

    #[test]
    fn tabular_gradient_check_is_tight() {
        // The tabular Jacobian is exact, so the only error left is the
        // quadratic truncation of central differences, which vanishes too.
        let mut rng = RngStream::new(6);
        let certs = verify_gradients(5, &mut rng);
        let tabular = certs
            .iter()
            .find(|c| c.check_name.ends_with("tabular"))
            .unwrap();
        assert!(tabular.max_abs_error < 1e-6);
    }

    #[test]
    fn certificates_are_deterministic() {
        let a = verify_loss_decomposition(5, &mut RngStream::new(9));
        let b = verify_loss_decomposition(5, &mut RngStream::new(9));
        assert_eq!(a, b);
    }

    #[test]
    fn certificate_json_line() {
        let cert = VerificationCertificate::new("example", 10, 0.0, 1e-10);
        assert_eq!(
            cert.to_json_line(),
            r#"{"check_name":"example","instances_tested":10,"max_abs_error":0.0,"passed":true,"tolerance":1e-10}"#
        );
    }

    #[test]
    fn certificate_passed_matches_invariant() {
        let cert = VerificationCertificate::new("failing", 1, 1.0, 1e-10);
        assert!(!cert.passed);
    }

    #[test]
    fn verify_uses_every_pair_key() {
        // Exercise eval on out-of-instance pairs to make sure the random
        // instances stay within the model's space.
        let mut rng = RngStream::new(8);
        let (batch, model) = super::random_instance(&mut rng);
        for trajectory in &batch {
            for tr in trajectory.transitions() {
                assert!(model.eval(tr.state, tr.action).is_ok());
            }
        }
        assert!(model
            .eval(StateId(model.state_count()), ActionId(0))
            .is_err());
    }
}
