//! Evaluation-error bound: projection error, sampling error for the true
//! value function, and sampling error for the approximate value function,
//! assembled from a dataset, a design matrix, and (at desk scale) the true
//! model.
//!
//! All logarithms are natural. The bound is evaluated on the sampled design
//! points only; nothing is extrapolated to unvisited states.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{empirical_bellman, Dataset, EmpiricalKernel};
use crate::exact::{MixedPolicy, StateSpace};
use crate::features::{sigma_norm, FeatureError, FeatureMatrix};
use crate::game::{expected_reward, transition_distribution, GameParams, State};

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("delta must lie strictly between 0 and 1, got {0}")]
    BadDelta(f64),
    #[error("nu_min must be positive, got {0}")]
    BadNuMin(f64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// All terms of the evaluation-error bound at confidence `1 - delta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    /// Projection error `(1 - gamma^2)^(-1/2) |Q - proj Q|_sigma`.
    pub e_p: f64,
    /// Sampling error for the true value function.
    pub e_st: f64,
    /// Sampling error for the approximate value function.
    pub e_sa: f64,
    /// `e_p + e_st + e_sa`.
    pub total: f64,
    /// Smallest strictly positive eigenvalue of `Phi^T Phi / n`.
    pub nu_min: f64,
    /// Tightest concentration constant fitted on this dataset.
    pub c_p_hat: f64,
    pub delta: f64,
    pub n: usize,
}

fn check_delta(delta: f64) -> Result<(), BoundError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(BoundError::BadDelta(delta))
    }
}

/// Tightest constant `C_P` making the concentration relation
/// `|p_hat(x'|x,a,b) - p(x'|x,a,b)| <= C_P sqrt(ln(1/delta)) w(x,a,b)`
/// hold with equality somewhere on this dataset. Differences are taken over
/// the union of empirical and true successor supports of every observed
/// triple.
pub fn estimate_cp(
    ds: &Dataset,
    kernel: &EmpiricalKernel,
    params: &GameParams,
    delta: f64,
) -> Result<f64, BoundError> {
    check_delta(delta)?;
    if ds.is_empty() {
        return Err(BoundError::EmptyDataset);
    }
    let log_factor = (1.0 / delta).ln().sqrt();
    let mut c_p: f64 = 0.0;
    for (x, a, b, _) in ds.observed_triples() {
        let weight = kernel.weight(x, a, b);
        let empirical = kernel.successor_dist(x, a, b).expect("observed triple");
        let truth = transition_distribution(x, a, b, params);
        let p_emp = |s: &State| {
            empirical.iter().find(|(n, _)| n == s).map_or(0.0, |(_, p)| *p)
        };
        let p_true =
            |s: &State| truth.iter().find(|(n, _)| n == s).map_or(0.0, |(_, p)| *p);
        let mut support: Vec<&State> = empirical.iter().map(|(s, _)| s).collect();
        for (s, _) in &truth {
            if !support.contains(&s) {
                support.push(s);
            }
        }
        for s in support {
            let gap = (p_emp(s) - p_true(s)).abs();
            c_p = c_p.max(gap / (log_factor * weight));
        }
    }
    Ok(c_p)
}

/// `(1 - gamma^2)^(-1/2) |Q - proj Q|_sigma` over the sampled triples.
pub fn projection_error(phi: &FeatureMatrix, q_true: &[f64], gamma: f64) -> f64 {
    let projected = phi.project(q_true);
    let residual: Vec<f64> = q_true.iter().zip(&projected).map(|(q, p)| q - p).collect();
    sigma_norm(&residual) / (1.0 - gamma * gamma).sqrt()
}

/// Closed-form sampling error for the true value function:
/// `gamma L^2 (mL + c_b) / (lambda (1-gamma)^3)
///  * sqrt(2 (m+2) ln(2/delta) / (n nu_min))`.
pub fn sampling_error_true(
    params: &GameParams,
    n: usize,
    nu_min: f64,
    delta: f64,
) -> Result<f64, BoundError> {
    check_delta(delta)?;
    if !nu_min.is_finite() || nu_min <= 0.0 {
        return Err(BoundError::BadNuMin(nu_min));
    }
    assert!(n >= 1);
    let l2 = (params.buffer as f64).powi(2);
    let lead = params.gamma * l2 * params.reward_rate_cap()
        / (params.lambda * (1.0 - params.gamma).powi(3));
    let inner =
        2.0 * params.feature_dim() as f64 * (2.0 / delta).ln() / (n as f64 * nu_min);
    Ok(lead * inner.sqrt())
}

/// Sampling error for the approximate value function:
/// `(1/sqrt(n)) | proj ((mL+c_b)/lambda (1 + gamma/(1-gamma)
///  C_P sqrt(ln(1/delta)) W)) |_2`, with `W_k` the concentration weight of
/// sample `k`'s triple.
pub fn sampling_error_approx(
    ds: &Dataset,
    phi: &FeatureMatrix,
    kernel: &EmpiricalKernel,
    c_p: f64,
    params: &GameParams,
    delta: f64,
) -> Result<f64, BoundError> {
    check_delta(delta)?;
    let scale = params.reward_rate_cap() / params.lambda;
    let amplify = params.gamma / (1.0 - params.gamma) * c_p * (1.0 / delta).ln().sqrt();
    let vector: Vec<f64> = ds
        .samples()
        .iter()
        .map(|s| scale * (1.0 + amplify * kernel.weight(&s.state, s.attack, s.defend)))
        .collect();
    let projected = phi.project(&vector);
    let norm2: f64 = projected.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(norm2 / (ds.len() as f64).sqrt())
}

/// Assembles the full bound report; `q_true` holds the oracle action values
/// at each sampled triple, in dataset order.
pub fn evaluation_error_bound(
    ds: &Dataset,
    phi: &FeatureMatrix,
    kernel: &EmpiricalKernel,
    q_true: &[f64],
    params: &GameParams,
    delta: f64,
) -> Result<BoundReport, BoundError> {
    check_delta(delta)?;
    if ds.is_empty() {
        return Err(BoundError::EmptyDataset);
    }
    assert_eq!(q_true.len(), ds.len());
    let nu_min = phi.gram_min_eig()?;
    let c_p_hat = estimate_cp(ds, kernel, params, delta)?;
    let e_p = projection_error(phi, q_true, params.gamma);
    let e_st = sampling_error_true(params, ds.len(), nu_min, delta)?;
    let e_sa = sampling_error_approx(ds, phi, kernel, c_p_hat, params, delta)?;
    Ok(BoundReport {
        e_p,
        e_st,
        e_sa,
        total: e_p + e_st + e_sa,
        nu_min,
        c_p_hat,
        delta,
        n: ds.len(),
    })
}

/// Both sides of the fixed-point error decomposition
/// `|Q - Qs|^2 <= |Q - proj Q|^2 + (gamma |Q - Qs| + |proj T_hat Q - proj Q|)^2`
/// where `Qs = Phi theta_fixed` is the converged evaluation and `q_true`
/// supplies `Q` as a function for the operator backup.
#[allow(clippy::too_many_arguments)]
pub fn decomposition_check<Q>(
    ds: &Dataset,
    phi: &FeatureMatrix,
    kernel: &EmpiricalKernel,
    beta: &MixedPolicy,
    theta_fixed: &[f64],
    q_true: &Q,
    space: &StateSpace,
    params: &GameParams,
) -> (f64, f64)
where
    Q: Fn(&State, u8, u8) -> f64,
{
    let q_on_samples: Vec<f64> = ds
        .samples()
        .iter()
        .map(|s| q_true(&s.state, s.attack, s.defend))
        .collect();
    let q_fitted = phi.mul(theta_fixed);
    let err: Vec<f64> = q_on_samples.iter().zip(&q_fitted).map(|(a, b)| a - b).collect();
    let err_norm = sigma_norm(&err);
    let lhs = err_norm * err_norm;

    let proj_q = phi.project(&q_on_samples);
    let proj_residual: Vec<f64> =
        q_on_samples.iter().zip(&proj_q).map(|(a, b)| a - b).collect();
    let proj_term = sigma_norm(&proj_residual);

    let tq = empirical_bellman(q_true, ds, kernel, beta, space, params.gamma);
    let proj_tq = phi.project(&tq);
    let op_gap: Vec<f64> = proj_tq.iter().zip(&proj_q).map(|(a, b)| a - b).collect();
    let op_term = sigma_norm(&op_gap);

    let rhs = proj_term * proj_term
        + (params.gamma * err_norm + op_term) * (params.gamma * err_norm + op_term);
    (lhs, rhs)
}

/// Per-triple check of the operator gap: for every observed `(x, a, b)`,
/// `|T_hat q - T q|` against
/// `(mL+c_b)/lambda (1 + gamma/(1-gamma) C_P sqrt(ln(1/delta)) w(x,a,b))`,
/// with the approximate action values clipped to the global cap before the
/// backup. Returns `(lhs, rhs)` pairs in dataset triple order.
#[allow(clippy::too_many_arguments)]
pub fn operator_gap_check<Q>(
    ds: &Dataset,
    kernel: &EmpiricalKernel,
    beta: &MixedPolicy,
    q_approx: &Q,
    c_p: f64,
    space: &StateSpace,
    params: &GameParams,
    delta: f64,
) -> Result<Vec<(f64, f64)>, BoundError>
where
    Q: Fn(&State, u8, u8) -> f64,
{
    check_delta(delta)?;
    let cap = params.q_cap();
    let clipped = |x: &State, a: u8, b: u8| q_approx(x, a, b).clamp(-cap, cap);
    let scale = params.reward_rate_cap() / params.lambda;
    let amplify = params.gamma / (1.0 - params.gamma) * c_p * (1.0 / delta).ln().sqrt();

    let mut results = Vec::new();
    for (x, a, b, _) in ds.observed_triples() {
        let r_hat = kernel.mean_reward(x, a, b).expect("observed triple");
        let mut empirical_future = 0.0;
        for (next, p) in kernel.successor_dist(x, a, b).expect("observed triple") {
            empirical_future +=
                p * crate::evaluation::minimax_backup(&clipped, next, beta, space);
        }
        let t_hat = r_hat + params.gamma * empirical_future;

        let mut true_future = 0.0;
        for (next, p) in transition_distribution(x, a, b, params) {
            true_future +=
                p * crate::evaluation::minimax_backup(&clipped, &next, beta, space);
        }
        let t_true = expected_reward(x, a, b, params) + params.gamma * true_future;

        let lhs = (t_hat - t_true).abs();
        let rhs = scale * (1.0 + amplify * kernel.weight(x, a, b));
        results.push((lhs, rhs));
    }
    Ok(results)
}

/// Tallies of the realized-reward gap `|r_hat - r| <= (mL + c_b)/lambda`
/// against the sojourn deviation that implies it.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RewardGapStats {
    pub samples: usize,
    /// Samples whose sojourn deviates from its mean by more than `1/lambda`.
    pub sojourn_violations: usize,
    /// Samples whose realized reward misses the expected reward by more than
    /// `(mL + c_b)/lambda`.
    pub reward_violations: usize,
    /// Samples with a small sojourn deviation but a large reward gap
    /// (must stay zero whenever `c_a <= mL + c_b`).
    pub implication_failures: usize,
}

/// Checks the reward-gap relation on every sample.
pub fn reward_gap_stats(ds: &Dataset, params: &GameParams) -> RewardGapStats {
    let mut stats = RewardGapStats { samples: ds.len(), ..Default::default() };
    let cap = params.reward_rate_cap() / params.lambda;
    for s in ds.samples() {
        let expected_dt = crate::game::expected_sojourn(&s.state, params);
        let dt_gap = (s.sojourn - expected_dt).abs();
        let r_gap =
            (s.reward - expected_reward(&s.state, s.attack, s.defend, params)).abs();
        let dt_ok = dt_gap <= 1.0 / params.lambda;
        let r_ok = r_gap <= cap + 1e-12;
        if !dt_ok {
            stats.sojourn_violations += 1;
        }
        if !r_ok {
            stats.reward_violations += 1;
        }
        if dt_ok && !r_ok {
            stats.implication_failures += 1;
        }
    }
    stats
}
