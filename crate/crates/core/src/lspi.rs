//! Least-squares policy iteration for the routing game: epsilon-greedy data
//! collection against pluggable attacker models, iterated fitted-Q
//! evaluation, minimax policy improvement, and Monte Carlo rollout
//! evaluation.
//!
//! Each outer iteration collects a fresh trajectory, fits weights for the
//! current defender policy, and replaces the policy with the per-state
//! minimax mix of the fitted action values. The defender observes the
//! attacker's realized actions only, never its policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{realized_reward, Dataset, EvalError, Evaluator, Sample};
use crate::exact::{
    best_response_value, MixedPolicy, SolverError, StateSpace, DEFAULT_STATE_CAP,
};
use crate::features::q_hat;
use crate::game::{sample_transition, GameParams, State};
use crate::matrix_game::{solve_attacker, solve_defender, Matrix2};

/// Stream identifiers deriving independent generators from one seed.
const STREAM_COLLECT: u64 = 1;
const STREAM_ROLLOUT: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    BadConfig(&'static str),
    #[error("policy evaluation diverged at outer iteration {iteration}")]
    Diverged { iteration: usize, partial: Box<TrainReport> },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("evaluation: {0}")]
    Eval(EvalError),
}

/// Exploration rate `eps_t = max(eps_min, eps0 * eps_decay^t)` over the
/// global step counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub eps0: f64,
    pub eps_min: f64,
    pub eps_decay: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        ExplorationSchedule { eps0: 1.0, eps_min: 0.05, eps_decay: 0.999 }
    }
}

impl ExplorationSchedule {
    pub fn eps_at(&self, step: u64) -> f64 {
        (self.eps0 * self.eps_decay.powf(step as f64)).max(self.eps_min)
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.eps_min)
            || !(0.0..=1.0).contains(&self.eps0)
            || self.eps_min > self.eps0
        {
            return Err(TrainError::BadConfig("need 0 <= eps_min <= eps0 <= 1"));
        }
        if !self.eps_decay.is_finite() || self.eps_decay <= 0.0 || self.eps_decay > 1.0 {
            return Err(TrainError::BadConfig("need 0 < eps_decay <= 1"));
        }
        Ok(())
    }
}

/// Opponent generating the attacker's realized actions during collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackerModel {
    /// Stationary mixed policy.
    FixedMixed { policy: MixedPolicy },
    /// Recomputes its exact best response to the defender's announced policy
    /// at every outer iteration.
    BestResponder,
    /// Runs its own symmetric least-squares iteration on the shared data.
    MirrorLearner,
    /// Uniform over `{0, 1}` at every state.
    RandomUniform,
}

/// Initial state distribution for trajectories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// Point mass at the empty system (the default).
    #[default]
    Empty,
    /// Uniform over the full state space.
    Uniform,
    /// Point mass at a fixed state.
    Point { state: Vec<u32> },
}

impl InitialState {
    fn sample<R: Rng>(
        &self,
        space: &StateSpace,
        params: &GameParams,
        rng: &mut R,
    ) -> Result<State, TrainError> {
        match self {
            InitialState::Empty => Ok(State::empty(params)),
            InitialState::Uniform => {
                let idx = rng.gen_range(0..space.len());
                Ok(space.state(idx).clone())
            }
            InitialState::Point { state } => State::new(state.clone(), params)
                .map_err(|_| TrainError::BadConfig("initial state is invalid")),
        }
    }
}

/// Live opponent state during training.
enum AttackerRuntime {
    Fixed(MixedPolicy),
    Best { policy: MixedPolicy },
    Mirror { theta: Vec<f64>, policy: MixedPolicy },
    Uniform,
}

impl AttackerRuntime {
    fn new(model: &AttackerModel, space: &StateSpace, params: &GameParams) -> Self {
        match model {
            AttackerModel::FixedMixed { policy } => AttackerRuntime::Fixed(policy.clone()),
            AttackerModel::BestResponder => {
                AttackerRuntime::Best { policy: MixedPolicy::uniform(space.len()) }
            }
            AttackerModel::MirrorLearner => AttackerRuntime::Mirror {
                theta: vec![0.0; params.feature_dim()],
                policy: MixedPolicy::uniform(space.len()),
            },
            AttackerModel::RandomUniform => AttackerRuntime::Uniform,
        }
    }

    fn action<R: Rng>(&self, state_index: usize, rng: &mut R) -> u8 {
        match self {
            AttackerRuntime::Uniform => rng.gen_range(0..2) as u8,
            AttackerRuntime::Fixed(policy)
            | AttackerRuntime::Best { policy }
            | AttackerRuntime::Mirror { policy, .. } => {
                let probs = policy.probs(state_index);
                u8::from(rng.gen::<f64>() >= probs[0])
            }
        }
    }

    /// Adapts the opponent at the start of an outer iteration: the best
    /// responder replans against the announced defender policy; the mirror
    /// learner refits on the previous iteration's data.
    fn begin_iteration(
        &mut self,
        beta: &MixedPolicy,
        previous: Option<&Dataset>,
        space: &StateSpace,
        params: &GameParams,
    ) -> Result<(), TrainError> {
        match self {
            AttackerRuntime::Best { policy } => {
                let (response, _) =
                    best_response_value(beta, space, params, 1e-10, 100_000)?;
                *policy = response;
            }
            AttackerRuntime::Mirror { theta, policy } => {
                if let Some(ds) = previous {
                    let evaluator = Evaluator::attacker_side(ds, policy, space, params)
                        .map_err(TrainError::Eval)?;
                    if let Ok(outcome) = evaluator.run(theta, 1e-8, 200) {
                        *theta = outcome.theta;
                        *policy = improve_attacker_policy(theta, space, params);
                    }
                }
            }
            AttackerRuntime::Fixed(_) | AttackerRuntime::Uniform => {}
        }
        Ok(())
    }
}

/// Epsilon-greedy defender action: explore uniformly with probability `eps`,
/// otherwise sample the policy mix.
pub fn epsilon_greedy<R: Rng>(beta_at_x: [f64; 2], eps: f64, rng: &mut R) -> u8 {
    debug_assert!((0.0..=1.0).contains(&eps));
    if rng.gen::<f64>() < eps {
        rng.gen_range(0..2) as u8
    } else {
        u8::from(rng.gen::<f64>() >= beta_at_x[0])
    }
}

/// Per-state minimax improvement: the defender mix solving the 2x2 game of
/// fitted action values.
pub fn improve_policy(theta: &[f64], space: &StateSpace, params: &GameParams) -> MixedPolicy {
    let mut policy = MixedPolicy::pure(space.len(), 0);
    for (s, x) in space.states().iter().enumerate() {
        let game = fitted_matrix(theta, x, params);
        let solution = solve_defender(&game).expect("fitted values are finite");
        policy.set_probs(s, solution.defender_mix);
    }
    policy
}

/// Attacker-side improvement used by the mirror learner.
pub fn improve_attacker_policy(
    theta: &[f64],
    space: &StateSpace,
    params: &GameParams,
) -> MixedPolicy {
    let mut policy = MixedPolicy::pure(space.len(), 0);
    for (s, x) in space.states().iter().enumerate() {
        let game = fitted_matrix(theta, x, params);
        let solution = solve_attacker(&game).expect("fitted values are finite");
        policy.set_probs(s, solution.attacker_mix);
    }
    policy
}

fn fitted_matrix(theta: &[f64], x: &State, params: &GameParams) -> Matrix2 {
    let mut g = [[0.0; 2]; 2];
    for a in 0..2u8 {
        for b in 0..2u8 {
            g[a as usize][b as usize] = q_hat(x, a, b, theta, params);
        }
    }
    Matrix2::new(g)
}

/// Rolls one trajectory of `n` steps and returns the frozen dataset. The
/// step counter indexes the exploration schedule globally across
/// iterations.
#[allow(clippy::too_many_arguments)]
fn collect_with(
    beta: &MixedPolicy,
    attacker: &AttackerRuntime,
    n: usize,
    schedule: &ExplorationSchedule,
    step_offset: u64,
    space: &StateSpace,
    params: &GameParams,
    rng: &mut ChaCha12Rng,
    initial: &InitialState,
) -> Result<Dataset, TrainError> {
    let mut ds = Dataset::new();
    let mut x = initial.sample(space, params, rng)?;
    for t in 0..n {
        let idx = space.index(&x);
        let eps = schedule.eps_at(step_offset + t as u64);
        let defend = epsilon_greedy(beta.probs(idx), eps, rng);
        let attack = attacker.action(idx, rng);
        let (next, dt) = sample_transition(&x, attack, defend, params, rng);
        let reward = realized_reward(&x, attack, defend, dt, params);
        ds.push(Sample {
            state: x,
            attack,
            defend,
            reward,
            next_state: next.clone(),
            sojourn: dt,
        });
        x = next;
    }
    Ok(ds)
}

/// One epsilon-greedy trajectory against a fixed attacker model.
#[allow(clippy::too_many_arguments)]
pub fn collect(
    beta: &MixedPolicy,
    attacker: &AttackerModel,
    n: usize,
    schedule: &ExplorationSchedule,
    space: &StateSpace,
    params: &GameParams,
    rng: &mut ChaCha12Rng,
    initial: &InitialState,
) -> Result<Dataset, TrainError> {
    let runtime = AttackerRuntime::new(attacker, space, params);
    collect_with(beta, &runtime, n, schedule, 0, space, params, rng, initial)
}

/// Forced-uniform sweep dataset: every `(x, a, b)` triple is visited exactly
/// `visits_per_triple` times, with successors drawn from the true kernel.
pub fn collect_sweep(
    space: &StateSpace,
    params: &GameParams,
    visits_per_triple: usize,
    rng: &mut ChaCha12Rng,
) -> Dataset {
    let mut ds = Dataset::new();
    for _ in 0..visits_per_triple {
        for x in space.states() {
            for a in 0..2u8 {
                for b in 0..2u8 {
                    let (next, dt) = sample_transition(x, a, b, params, rng);
                    let reward = realized_reward(x, a, b, dt, params);
                    ds.push(Sample {
                        state: x.clone(),
                        attack: a,
                        defend: b,
                        reward,
                        next_state: next,
                        sojourn: dt,
                    });
                }
            }
        }
    }
    ds
}

/// Full configuration of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub params: GameParams,
    /// Samples collected per outer iteration; must exceed the feature
    /// dimension.
    pub samples_per_iteration: usize,
    #[serde(default)]
    pub schedule: ExplorationSchedule,
    /// Stop once consecutive weight vectors differ by less than this in
    /// Euclidean norm.
    pub theta_tol: f64,
    pub max_outer_iters: usize,
    pub seed: u64,
    pub attacker: AttackerModel,
    #[serde(default = "default_eval_tol")]
    pub eval_tol: f64,
    #[serde(default = "default_eval_max_iter")]
    pub eval_max_iter: usize,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

fn default_eval_tol() -> f64 {
    crate::evaluation::DEFAULT_EVAL_TOL
}

fn default_eval_max_iter() -> usize {
    crate::evaluation::DEFAULT_EVAL_MAX_ITER
}

fn default_state_cap() -> usize {
    DEFAULT_STATE_CAP
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        self.params
            .validate()
            .map_err(|_| TrainError::BadConfig("invalid game parameters"))?;
        self.schedule.validate()?;
        if self.samples_per_iteration <= self.params.feature_dim() {
            return Err(TrainError::BadConfig(
                "samples_per_iteration must exceed the feature dimension",
            ));
        }
        if !self.theta_tol.is_finite() || self.theta_tol <= 0.0 {
            return Err(TrainError::BadConfig("theta_tol must be positive"));
        }
        if self.max_outer_iters == 0 {
            return Err(TrainError::BadConfig("max_outer_iters must be positive"));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics recorded in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Euclidean distance between consecutive weight vectors.
    pub theta_delta: f64,
    /// Sigma-norm of the fitted Bellman residual on this iteration's data.
    pub sigma_td_error: f64,
    /// Exploration rate at the last step of the iteration.
    pub epsilon_end: f64,
    pub dataset_len: usize,
    pub eval_iterations: usize,
    pub eval_converged: bool,
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Weight vector after each outer iteration.
    pub theta_trace: Vec<Vec<f64>>,
    pub beta_final: MixedPolicy,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Data from the last completed iteration, for post-hoc diagnostics on
    /// the visited triples. Not serialized.
    #[serde(skip)]
    pub final_dataset: Option<Dataset>,
}

/// Runs minimax least-squares policy iteration:
/// collect, evaluate, improve, test `|theta_{k+1} - theta_k| < theta_tol`,
/// with a fresh dataset every outer iteration.
pub fn train(cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let params = &cfg.params;
    let space = StateSpace::enumerate_capped(params, cfg.state_cap)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_COLLECT);

    let mut theta = vec![0.0; params.feature_dim()];
    let mut beta = improve_policy(&theta, &space, params);
    let mut attacker = AttackerRuntime::new(&cfg.attacker, &space, params);
    let mut previous: Option<Dataset> = None;
    let mut step_counter = 0u64;

    let mut report = TrainReport {
        theta_trace: Vec::new(),
        beta_final: beta.clone(),
        converged: false,
        iterations: 0,
        diagnostics: Vec::new(),
        final_dataset: None,
    };

    for k in 0..cfg.max_outer_iters {
        attacker.begin_iteration(&beta, previous.as_ref(), &space, params)?;
        let ds = collect_with(
            &beta,
            &attacker,
            cfg.samples_per_iteration,
            &cfg.schedule,
            step_counter,
            &space,
            params,
            &mut rng,
            &cfg.initial_state,
        )?;
        step_counter += cfg.samples_per_iteration as u64;

        let evaluator = Evaluator::new(&ds, &beta, &space, params).map_err(TrainError::Eval)?;
        let outcome = match evaluator.run(&theta, cfg.eval_tol, cfg.eval_max_iter) {
            Ok(outcome) => outcome,
            Err(EvalError::Diverged { .. }) => {
                report.beta_final = beta;
                report.iterations = k;
                report.final_dataset = previous;
                return Err(TrainError::Diverged { iteration: k, partial: Box::new(report) });
            }
            Err(other) => return Err(TrainError::Eval(other)),
        };

        let delta: f64 = outcome
            .theta
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        theta = outcome.theta;
        report.theta_trace.push(theta.clone());
        beta = improve_policy(&theta, &space, params);

        let residual = evaluator.bellman_residual(&theta);
        report.diagnostics.push(IterationDiagnostics {
            iteration: k,
            theta_delta: delta,
            sigma_td_error: residual,
            epsilon_end: cfg.schedule.eps_at(step_counter.saturating_sub(1)),
            dataset_len: ds.len(),
            eval_iterations: outcome.iterations,
            eval_converged: outcome.converged,
        });
        report.iterations = k + 1;
        previous = Some(ds);

        if delta < cfg.theta_tol {
            report.converged = true;
            break;
        }
    }
    report.beta_final = beta;
    report.final_dataset = previous;
    Ok(report)
}

/// Monte Carlo estimate of the discounted cost of `beta` against a fixed
/// attacker model: mean and standard error over `n_rollouts` truncated
/// trajectories.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy_rollout(
    beta: &MixedPolicy,
    attacker: &AttackerModel,
    horizon: usize,
    n_rollouts: usize,
    space: &StateSpace,
    params: &GameParams,
    seed: u64,
    initial: &InitialState,
) -> Result<(f64, f64), TrainError> {
    if n_rollouts == 0 {
        return Err(TrainError::BadConfig("n_rollouts must be positive"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_ROLLOUT);
    let runtime = AttackerRuntime::new(attacker, space, params);

    let mut total = 0.0;
    let mut total_sq = 0.0;
    for _ in 0..n_rollouts {
        let mut x = initial.sample(space, params, &mut rng)?;
        let mut discount = 1.0;
        let mut value = 0.0;
        for _ in 0..horizon {
            let idx = space.index(&x);
            let defend = u8::from(rng.gen::<f64>() >= beta.probs(idx)[0]);
            let attack = runtime.action(idx, &mut rng);
            let (next, dt) = sample_transition(&x, attack, defend, params, &mut rng);
            value += discount * realized_reward(&x, attack, defend, dt, params);
            discount *= params.gamma;
            if discount == 0.0 {
                break;
            }
            x = next;
        }
        total += value;
        total_sq += value * value;
    }
    let mean = total / n_rollouts as f64;
    let variance = (total_sq / n_rollouts as f64 - mean * mean).max(0.0);
    let se = (variance / n_rollouts as f64).sqrt();
    Ok((mean, se))
}
