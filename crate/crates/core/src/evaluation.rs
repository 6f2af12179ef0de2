//! Policy evaluation from sampled transitions.
//!
//! A [`Dataset`] stores ordered `(x, a, b, r, x', dt)` records with visit
//! counts. Evaluation fits weights by iterating least-squares regression
//! against bootstrapped targets
//! `y = r + gamma * max_a' sum_b' beta(b'|x') q_hat(x', a', b'; theta)`
//! until the weight vector stabilizes. The targets use observed successors;
//! the empirical-kernel form of the same operator (ratio-of-counts `p_hat`,
//! per-triple mean rewards) is provided for error diagnostics, and the two
//! agree after projection onto the feature span.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::exact::{MixedPolicy, StateSpace};
use crate::features::{feature_vector, q_hat, FeatureMatrix};
use crate::game::{instantaneous_reward, GameParams, State};
use crate::linalg;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} samples for a {need}-dimensional regression, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("weight iteration diverged at inner iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("dataset record {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One observed transition of the embedded chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: State,
    pub attack: u8,
    pub defend: u8,
    /// Realized one-step reward `rho(x, a, b) * dt`.
    pub reward: f64,
    pub next_state: State,
    /// Realized sojourn, strictly positive.
    pub sojourn: f64,
}

type TripleKey = (State, u8, u8);

/// Ordered transition samples plus visit counts, frozen once evaluation
/// starts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    counts: BTreeMap<TripleKey, u32>,
    pair_counts: BTreeMap<(TripleKey, State), u32>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    pub fn push(&mut self, sample: Sample) {
        assert!(sample.sojourn > 0.0, "sojourn must be positive");
        let key = (sample.state.clone(), sample.attack, sample.defend);
        *self.counts.entry(key.clone()).or_insert(0) += 1;
        *self.pair_counts.entry((key, sample.next_state.clone())).or_insert(0) += 1;
        self.samples.push(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn visit_count(&self, x: &State, a: u8, b: u8) -> u32 {
        self.counts.get(&(x.clone(), a, b)).copied().unwrap_or(0)
    }

    /// Observed `(x, a, b)` triples in deterministic order.
    pub fn observed_triples(&self) -> impl Iterator<Item = (&State, u8, u8, u32)> {
        self.counts.iter().map(|((x, a, b), count)| (x, *a, *b, *count))
    }

    /// Design matrix over the sampled triples.
    pub fn feature_matrix(&self, params: &GameParams) -> FeatureMatrix {
        FeatureMatrix::from_triples(
            self.samples.iter().map(|s| (&s.state, s.attack, s.defend)),
            params,
        )
    }

    /// Writes newline-delimited records
    /// `x_1,..,x_m a b r x'_1,..,x'_m dt` (one sample per line).
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for s in &self.samples {
            let x: Vec<String> =
                s.state.occupancy().iter().map(|v| v.to_string()).collect();
            let x_next: Vec<String> =
                s.next_state.occupancy().iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{} {} {} {} {} {}",
                x.join(","),
                s.attack,
                s.defend,
                s.reward,
                x_next.join(","),
                s.sojourn
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R, params: &GameParams) -> Result<Self, EvalError> {
        let mut ds = Dataset::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = |message: String| EvalError::MalformedRecord { line: idx + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(record(format!("expected 6 fields, got {}", fields.len())));
            }
            let parse_state = |text: &str| -> Result<State, EvalError> {
                let q: Result<Vec<u32>, _> =
                    text.split(',').map(|v| v.parse::<u32>()).collect();
                let q = q.map_err(|e| EvalError::MalformedRecord {
                    line: idx + 1,
                    message: format!("bad state component: {e}"),
                })?;
                State::new(q, params).map_err(|e| EvalError::MalformedRecord {
                    line: idx + 1,
                    message: e.to_string(),
                })
            };
            let state = parse_state(fields[0])?;
            let attack: u8 = fields[1]
                .parse()
                .map_err(|e| record(format!("bad attacker action: {e}")))?;
            let defend: u8 = fields[2]
                .parse()
                .map_err(|e| record(format!("bad defender action: {e}")))?;
            if attack > 1 || defend > 1 {
                return Err(record("actions must be 0 or 1".to_string()));
            }
            let reward: f64 =
                fields[3].parse().map_err(|e| record(format!("bad reward: {e}")))?;
            let next_state = parse_state(fields[4])?;
            let sojourn: f64 =
                fields[5].parse().map_err(|e| record(format!("bad sojourn: {e}")))?;
            if !sojourn.is_finite() || sojourn <= 0.0 {
                return Err(record("sojourn must be positive".to_string()));
            }
            ds.push(Sample { state, attack, defend, reward, next_state, sojourn });
        }
        Ok(ds)
    }
}

/// Ratio-of-counts transition estimate with per-triple concentration weights
/// and mean realized rewards.
#[derive(Debug, Clone)]
pub struct EmpiricalKernel {
    p_hat: BTreeMap<TripleKey, Vec<(State, f64)>>,
    mean_reward: BTreeMap<TripleKey, f64>,
    weights: BTreeMap<TripleKey, f64>,
    default_weight: f64,
}

impl EmpiricalKernel {
    /// Builds `p_hat(x'|x,a,b)` and `w(x,a,b)` from the dataset counts.
    /// Observed triples get `w = count^(-1/2)`; unobserved triples fall back
    /// to the prior-scale default `(m L + c_b) / (lambda (1 - gamma))`.
    pub fn from_dataset(ds: &Dataset, params: &GameParams) -> Self {
        let mut p_hat: BTreeMap<TripleKey, Vec<(State, f64)>> = BTreeMap::new();
        let mut reward_sums: BTreeMap<TripleKey, f64> = BTreeMap::new();
        let mut weights = BTreeMap::new();
        for ((key, next), &pair_count) in &ds.pair_counts {
            let total = ds.counts[key] as f64;
            p_hat
                .entry(key.clone())
                .or_default()
                .push((next.clone(), pair_count as f64 / total));
        }
        for s in &ds.samples {
            *reward_sums.entry((s.state.clone(), s.attack, s.defend)).or_insert(0.0) +=
                s.reward;
        }
        for (key, &count) in &ds.counts {
            weights.insert(key.clone(), 1.0 / (count as f64).sqrt());
        }
        let mean_reward = reward_sums
            .into_iter()
            .map(|(key, sum)| {
                let count = ds.counts[&key] as f64;
                (key, sum / count)
            })
            .collect();
        EmpiricalKernel {
            p_hat,
            mean_reward,
            weights,
            default_weight: params.q_cap(),
        }
    }

    pub fn successor_dist(&self, x: &State, a: u8, b: u8) -> Option<&[(State, f64)]> {
        self.p_hat.get(&(x.clone(), a, b)).map(|v| v.as_slice())
    }

    /// Concentration weight `w(x, a, b)`.
    pub fn weight(&self, x: &State, a: u8, b: u8) -> f64 {
        self.weights.get(&(x.clone(), a, b)).copied().unwrap_or(self.default_weight)
    }

    pub fn default_weight(&self) -> f64 {
        self.default_weight
    }

    pub fn mean_reward(&self, x: &State, a: u8, b: u8) -> Option<f64> {
        self.mean_reward.get(&(x.clone(), a, b)).copied()
    }
}

/// Realized one-step reward for a sampled sojourn.
pub fn realized_reward(x: &State, a: u8, b: u8, dt: f64, params: &GameParams) -> f64 {
    debug_assert!(dt > 0.0);
    instantaneous_reward(x, a, b, params) * dt
}

/// Defender-fixed backup at a successor state:
/// `max_a' sum_b' beta(b'|x') q(x', a', b')`.
pub fn minimax_backup<Q>(q: &Q, x_next: &State, beta: &MixedPolicy, space: &StateSpace) -> f64
where
    Q: Fn(&State, u8, u8) -> f64,
{
    let mix = beta.probs(space.index(x_next));
    let mut best = f64::NEG_INFINITY;
    for a_next in 0..2u8 {
        let mut avg = 0.0;
        for b_next in 0..2u8 {
            let weight = mix[b_next as usize];
            if weight != 0.0 {
                avg += weight * q(x_next, a_next, b_next);
            }
        }
        best = best.max(avg);
    }
    best
}

/// Sample-wise fitted-Q target using the observed successor.
pub fn bellman_target(
    sample: &Sample,
    beta: &MixedPolicy,
    theta_prev: &[f64],
    space: &StateSpace,
    params: &GameParams,
) -> f64 {
    let q = |x: &State, a: u8, b: u8| q_hat(x, a, b, theta_prev, params);
    sample.reward + params.gamma * minimax_backup(&q, &sample.next_state, beta, space)
}

/// Empirical Bellman operator applied to an arbitrary action-value function,
/// one component per sample:
/// `r_hat(x_k,a_k,b_k) + gamma * sum_x' p_hat(x'|x_k,a_k,b_k) * backup(x')`,
/// with `r_hat` the per-triple mean realized reward.
pub fn empirical_bellman<Q>(
    q: &Q,
    ds: &Dataset,
    kernel: &EmpiricalKernel,
    beta: &MixedPolicy,
    space: &StateSpace,
    gamma: f64,
) -> Vec<f64>
where
    Q: Fn(&State, u8, u8) -> f64,
{
    ds.samples()
        .iter()
        .map(|s| {
            let r_hat = kernel
                .mean_reward(&s.state, s.attack, s.defend)
                .expect("sampled triple is observed");
            let mut future = 0.0;
            if gamma > 0.0 {
                for (next, p) in kernel
                    .successor_dist(&s.state, s.attack, s.defend)
                    .expect("sampled triple is observed")
                {
                    future += p * minimax_backup(q, next, beta, space);
                }
            }
            r_hat + gamma * future
        })
        .collect()
}

/// Precomputed regression state for iterated fitted-Q evaluation: design
/// matrix, retained Gram eigenpairs, and both candidate backup feature rows
/// per successor (the optimizing opponent's action choice is the only
/// theta-dependent part).
pub struct Evaluator {
    phi: FeatureMatrix,
    gram_eigen: Vec<(f64, Vec<f64>)>,
    rewards: Vec<f64>,
    backup_rows: [Vec<f64>; 2],
    /// Attacker maximizes in the defender-side backup; defender minimizes
    /// in the attacker-side backup.
    maximize: bool,
    gamma: f64,
    dim: usize,
}

impl Evaluator {
    /// Defender-side evaluation: backup `max_a' sum_b' beta(b'|x') phi theta`.
    pub fn new(
        ds: &Dataset,
        beta: &MixedPolicy,
        space: &StateSpace,
        params: &GameParams,
    ) -> Result<Self, EvalError> {
        Self::build(ds, beta, space, params, true)
    }

    /// Attacker-side evaluation for self-play opponents: backup
    /// `min_b' sum_a' alpha(a'|x') phi theta`.
    pub fn attacker_side(
        ds: &Dataset,
        alpha: &MixedPolicy,
        space: &StateSpace,
        params: &GameParams,
    ) -> Result<Self, EvalError> {
        Self::build(ds, alpha, space, params, false)
    }

    fn build(
        ds: &Dataset,
        opponent_mix: &MixedPolicy,
        space: &StateSpace,
        params: &GameParams,
        maximize: bool,
    ) -> Result<Self, EvalError> {
        let dim = params.feature_dim();
        if ds.len() < dim {
            return Err(EvalError::InsufficientData { need: dim, got: ds.len() });
        }
        let phi = ds.feature_matrix(params);
        let gram = phi.gram();
        let (eigvals, eigvecs) = linalg::sym_eigen(&gram, dim);
        let max_eig = eigvals.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
        let cutoff = linalg::RANK_CUTOFF * max_eig;
        let gram_eigen = eigvals
            .into_iter()
            .zip(eigvecs)
            .filter(|(lambda, _)| *lambda > cutoff)
            .collect();

        let mut backup_rows = [
            Vec::with_capacity(ds.len() * dim),
            Vec::with_capacity(ds.len() * dim),
        ];
        for s in ds.samples() {
            let mix = opponent_mix.probs(space.index(&s.next_state));
            for (own_next, rows) in backup_rows.iter_mut().enumerate() {
                let mut blended = vec![0.0; dim];
                for opp_next in 0..2u8 {
                    let weight = mix[opp_next as usize];
                    if weight != 0.0 {
                        let (a_next, b_next) = if maximize {
                            (own_next as u8, opp_next)
                        } else {
                            (opp_next, own_next as u8)
                        };
                        let phi_next = feature_vector(&s.next_state, a_next, b_next, params);
                        for (acc, v) in blended.iter_mut().zip(&phi_next) {
                            *acc += weight * v;
                        }
                    }
                }
                rows.extend_from_slice(&blended);
            }
        }
        let rewards = ds.samples().iter().map(|s| s.reward).collect();
        Ok(Evaluator {
            phi,
            gram_eigen,
            rewards,
            backup_rows,
            maximize,
            gamma: params.gamma,
            dim,
        })
    }

    pub fn feature_matrix(&self) -> &FeatureMatrix {
        &self.phi
    }

    fn targets(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.rewards.len();
        let mut y = Vec::with_capacity(n);
        for k in 0..n {
            let row0 = &self.backup_rows[0][k * self.dim..(k + 1) * self.dim];
            let row1 = &self.backup_rows[1][k * self.dim..(k + 1) * self.dim];
            let v0 = linalg::dot(row0, theta);
            let v1 = linalg::dot(row1, theta);
            let backup = if self.maximize { v0.max(v1) } else { v0.min(v1) };
            y.push(self.rewards[k] + self.gamma * backup);
        }
        y
    }

    /// Sigma-norm of the fitted Bellman residual
    /// `Phi theta - (r + gamma * backup(theta))` on the evaluator's data.
    pub fn bellman_residual(&self, theta: &[f64]) -> f64 {
        let fitted = self.phi.mul(theta);
        let targets = self.targets(theta);
        let diff: Vec<f64> = fitted.iter().zip(&targets).map(|(a, b)| a - b).collect();
        crate::features::sigma_norm(&diff)
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim];
        for (lambda, vec) in &self.gram_eigen {
            let coeff = linalg::dot(vec, rhs) / lambda;
            for (t, v) in theta.iter_mut().zip(vec) {
                *t += coeff * v;
            }
        }
        theta
    }

    /// One least-squares step: regress current targets on the features.
    pub fn step(&self, theta: &[f64]) -> Vec<f64> {
        let y = self.targets(theta);
        self.solve(&self.phi.t_mul(&y))
    }

    /// Iterates [`Evaluator::step`] until `|theta_next - theta|_2 < tol`.
    pub fn run(
        &self,
        theta0: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<EvaluationOutcome, EvalError> {
        assert!(tol > 0.0);
        let mut theta = theta0.to_vec();
        for iteration in 1..=max_iter {
            let next = self.step(&theta);
            let norm: f64 = next.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm > 1e12 {
                return Err(EvalError::Diverged { iteration });
            }
            let delta: f64 = next
                .iter()
                .zip(&theta)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            theta = next;
            if delta < tol {
                return Ok(EvaluationOutcome { theta, iterations: iteration, converged: true });
            }
        }
        Ok(EvaluationOutcome { theta, iterations: max_iter, converged: false })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Inner-loop defaults for [`evaluate_policy`].
pub const DEFAULT_EVAL_TOL: f64 = 1e-8;
pub const DEFAULT_EVAL_MAX_ITER: usize = 500;

/// Single least-squares fit against targets computed from `theta_prev`.
pub fn least_squares_step(
    ds: &Dataset,
    beta: &MixedPolicy,
    theta_prev: &[f64],
    space: &StateSpace,
    params: &GameParams,
) -> Result<Vec<f64>, EvalError> {
    Ok(Evaluator::new(ds, beta, space, params)?.step(theta_prev))
}

/// Fitted-Q policy evaluation from zero initial weights with default
/// tolerances.
pub fn evaluate_policy(
    ds: &Dataset,
    beta: &MixedPolicy,
    space: &StateSpace,
    params: &GameParams,
) -> Result<EvaluationOutcome, EvalError> {
    let theta0 = vec![0.0; params.feature_dim()];
    Evaluator::new(ds, beta, space, params)?.run(
        &theta0,
        DEFAULT_EVAL_TOL,
        DEFAULT_EVAL_MAX_ITER,
    )
}
