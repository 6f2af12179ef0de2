//! Ground-truth solvers on the full enumerated state space: Shapley value
//! iteration for the equilibrium, exact evaluation of arbitrary mixed policy
//! pairs, and single-agent best responses.
//!
//! Everything here is dense over `(L + 1)^m` states, guarded by an
//! enumeration cap; it exists to certify the sampled learners, not to scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{expected_reward, transition_distribution, GameParams, State};
use crate::matrix_game::{solve_defender, Matrix2, MatrixGameError};

/// Default ceiling on the enumerable state count.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("state space has {count} states, exceeding the cap {cap}")]
    StateCapExceeded { count: usize, cap: usize },
    #[error("value iteration did not converge within {0} iterations")]
    MaxIterationsExceeded(usize),
    #[error("matrix game: {0}")]
    MatrixGame(#[from] MatrixGameError),
}

/// Lexicographic enumeration of `{0..L}^m` with a bijective index map.
#[derive(Debug, Clone)]
pub struct StateSpace {
    m: usize,
    buffer: u32,
    states: Vec<State>,
}

impl StateSpace {
    pub fn enumerate(params: &GameParams) -> Result<Self, SolverError> {
        Self::enumerate_capped(params, DEFAULT_STATE_CAP)
    }

    pub fn enumerate_capped(params: &GameParams, cap: usize) -> Result<Self, SolverError> {
        let count = params.state_count();
        if count > cap {
            return Err(SolverError::StateCapExceeded { count, cap });
        }
        let base = params.buffer as usize + 1;
        let mut states = Vec::with_capacity(count);
        let mut q = vec![0u32; params.m];
        loop {
            states.push(
                State::new(q.clone(), params).expect("enumerated states are valid"),
            );
            // lexicographic increment with the last coordinate fastest
            let mut pos = params.m;
            loop {
                if pos == 0 {
                    return Ok(StateSpace { m: params.m, buffer: params.buffer, states });
                }
                pos -= 1;
                q[pos] += 1;
                if (q[pos] as usize) < base {
                    break;
                }
                q[pos] = 0;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &State {
        &self.states[index]
    }

    /// Positional index of a state in the lexicographic enumeration.
    pub fn index(&self, x: &State) -> usize {
        let base = self.buffer as usize + 1;
        let mut idx = 0usize;
        for &v in x.occupancy() {
            idx = idx * base + v as usize;
        }
        idx
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

/// Dense action-value table over the full state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    values: Vec<[[f64; 2]; 2]>,
}

impl QTable {
    pub fn zeros(n_states: usize) -> Self {
        QTable { values: vec![[[0.0; 2]; 2]; n_states] }
    }

    pub fn get(&self, state_index: usize, a: u8, b: u8) -> f64 {
        self.values[state_index][a as usize][b as usize]
    }

    pub fn set(&mut self, state_index: usize, a: u8, b: u8, value: f64) {
        self.values[state_index][a as usize][b as usize] = value;
    }

    pub fn matrix_at(&self, state_index: usize) -> Matrix2 {
        Matrix2::new(self.values[state_index])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        let mut sup = 0.0f64;
        for (mine, theirs) in self.values.iter().zip(&other.values) {
            for a in 0..2 {
                for b in 0..2 {
                    sup = sup.max((mine[a][b] - theirs[a][b]).abs());
                }
            }
        }
        sup
    }
}

/// Per-state probability distribution over the two actions of one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedPolicy {
    probs: Vec<[f64; 2]>,
}

impl MixedPolicy {
    pub fn from_probs(probs: Vec<[f64; 2]>) -> Self {
        for p in &probs {
            debug_assert!(p[0] >= 0.0 && p[1] >= 0.0 && (p[0] + p[1] - 1.0).abs() < 1e-9);
        }
        MixedPolicy { probs }
    }

    pub fn uniform(n_states: usize) -> Self {
        MixedPolicy { probs: vec![[0.5, 0.5]; n_states] }
    }

    pub fn pure(n_states: usize, action: u8) -> Self {
        let mut row = [0.0, 0.0];
        row[action as usize] = 1.0;
        MixedPolicy { probs: vec![row; n_states] }
    }

    pub fn probs(&self, state_index: usize) -> [f64; 2] {
        self.probs[state_index]
    }

    pub fn set_probs(&mut self, state_index: usize, probs: [f64; 2]) {
        self.probs[state_index] = probs;
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn validate(&self, n_states: usize) -> bool {
        self.probs.len() == n_states
            && self.probs.iter().all(|p| {
                p[0] >= -1e-12 && p[1] >= -1e-12 && (p[0] + p[1] - 1.0).abs() < 1e-9
            })
    }
}

/// Sparse transition row: successor state indices with probabilities.
type TransitionRow = Vec<(usize, f64)>;

/// Precomputed rewards and transition rows over an enumerated state space.
#[derive(Debug, Clone)]
pub struct ExactModel {
    rewards: Vec<[[f64; 2]; 2]>,
    transitions: Vec<[[TransitionRow; 2]; 2]>,
}

impl ExactModel {
    pub fn new(space: &StateSpace, params: &GameParams) -> Self {
        let mut rewards = Vec::with_capacity(space.len());
        let mut transitions = Vec::with_capacity(space.len());
        for x in space.states() {
            let mut r = [[0.0; 2]; 2];
            let mut t: [[TransitionRow; 2]; 2] = Default::default();
            for a in 0..2u8 {
                for b in 0..2u8 {
                    r[a as usize][b as usize] = expected_reward(x, a, b, params);
                    t[a as usize][b as usize] = transition_distribution(x, a, b, params)
                        .into_iter()
                        .map(|(next, p)| (space.index(&next), p))
                        .collect();
                }
            }
            rewards.push(r);
            transitions.push(t);
        }
        ExactModel { rewards, transitions }
    }

    pub fn reward(&self, state_index: usize, a: u8, b: u8) -> f64 {
        self.rewards[state_index][a as usize][b as usize]
    }

    pub fn successors(&self, state_index: usize, a: u8, b: u8) -> &[(usize, f64)] {
        &self.transitions[state_index][a as usize][b as usize]
    }

    fn backup(&self, state_index: usize, a: u8, b: u8, gamma: f64, v: &[f64]) -> f64 {
        let mut q = self.reward(state_index, a, b);
        if gamma > 0.0 {
            let mut future = 0.0;
            for &(next, p) in self.successors(state_index, a, b) {
                future += p * v[next];
            }
            q += gamma * future;
        }
        q
    }

    /// One Shapley backup of the whole table given state values `v`.
    pub fn q_from_values(&self, gamma: f64, v: &[f64]) -> QTable {
        let mut q = QTable::zeros(self.rewards.len());
        for s in 0..self.rewards.len() {
            for a in 0..2u8 {
                for b in 0..2u8 {
                    q.set(s, a, b, self.backup(s, a, b, gamma, v));
                }
            }
        }
        q
    }
}

/// Converged equilibrium data from [`shapley_value_iteration`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapleySolution {
    pub q_star: QTable,
    pub v_star: Vec<f64>,
    pub attacker: MixedPolicy,
    pub defender: MixedPolicy,
    pub iterations: usize,
    /// Successive sup-norm changes of the value table, one per iteration.
    pub sup_deltas: Vec<f64>,
}

/// Full-state-space value iteration with the minimax backup
/// `q <- r + gamma * P val(q)`, where `val` solves the per-state 2x2 game.
pub fn shapley_value_iteration(
    space: &StateSpace,
    params: &GameParams,
    tol: f64,
    max_iter: usize,
) -> Result<ShapleySolution, SolverError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let model = ExactModel::new(space, params);
    let n = space.len();
    let mut v = vec![0.0; n];
    let mut q = model.q_from_values(params.gamma, &v);
    let mut sup_deltas = Vec::new();

    for iteration in 1..=max_iter {
        for (s, value) in v.iter_mut().enumerate() {
            *value = solve_defender(&q.matrix_at(s))?.value;
        }
        let next_q = model.q_from_values(params.gamma, &v);
        let delta = next_q.sup_distance(&q);
        sup_deltas.push(delta);
        q = next_q;
        if delta < tol {
            let mut v_star = vec![0.0; n];
            let mut attacker = MixedPolicy::pure(n, 0);
            let mut defender = MixedPolicy::pure(n, 0);
            for (s, star) in v_star.iter_mut().enumerate() {
                let solution = solve_defender(&q.matrix_at(s))?;
                *star = solution.value;
                attacker.set_probs(s, solution.attacker_mix);
                defender.set_probs(s, solution.defender_mix);
            }
            return Ok(ShapleySolution {
                q_star: q,
                v_star,
                attacker,
                defender,
                iterations: iteration,
                sup_deltas,
            });
        }
    }
    Err(SolverError::MaxIterationsExceeded(max_iter))
}

/// Exact discounted action values of a fixed mixed policy pair: solves
/// `v = r_ab + gamma * P_ab v` by fixed-point iteration, then assembles
/// `q(x, a, b) = r(x, a, b) + gamma * sum_x' p(x'|x, a, b) v(x')`.
pub fn policy_value(
    alpha: &MixedPolicy,
    beta: &MixedPolicy,
    space: &StateSpace,
    params: &GameParams,
) -> Result<(QTable, Vec<f64>), SolverError> {
    let model = ExactModel::new(space, params);
    policy_value_with_model(alpha, beta, &model, space, params)
}

pub fn policy_value_with_model(
    alpha: &MixedPolicy,
    beta: &MixedPolicy,
    model: &ExactModel,
    space: &StateSpace,
    params: &GameParams,
) -> Result<(QTable, Vec<f64>), SolverError> {
    let n = space.len();
    let gamma = params.gamma;
    // averaged reward and kernel under the product of the two mixes
    let mut r_avg = vec![0.0; n];
    let mut p_avg: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for s in 0..n {
        let pa = alpha.probs(s);
        let pb = beta.probs(s);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for a in 0..2u8 {
            for b in 0..2u8 {
                let weight = pa[a as usize] * pb[b as usize];
                if weight == 0.0 {
                    continue;
                }
                r_avg[s] += weight * model.reward(s, a, b);
                for &(next, p) in model.successors(s, a, b) {
                    if let Some(entry) = row.iter_mut().find(|(i, _)| *i == next) {
                        entry.1 += weight * p;
                    } else {
                        row.push((next, weight * p));
                    }
                }
            }
        }
        p_avg[s] = row;
    }

    let mut v = vec![0.0; n];
    let tol = 1e-12;
    let max_iter = 2_000_000usize;
    let mut converged = gamma == 0.0;
    if converged {
        v.copy_from_slice(&r_avg);
    }
    for _ in 0..max_iter {
        if converged {
            break;
        }
        let mut delta = 0.0f64;
        let mut next = vec![0.0; n];
        for s in 0..n {
            let mut future = 0.0;
            for &(j, p) in &p_avg[s] {
                future += p * v[j];
            }
            next[s] = r_avg[s] + gamma * future;
            delta = delta.max((next[s] - v[s]).abs());
        }
        v = next;
        if delta * gamma / (1.0 - gamma) < tol {
            converged = true;
        }
    }
    if !converged {
        return Err(SolverError::MaxIterationsExceeded(max_iter));
    }
    Ok((model.q_from_values(gamma, &v), v))
}

/// The attacker's exact best response to a fixed defender policy: value
/// iteration on the single-agent chain with the defender's mix folded into
/// rewards and kernel. Returns the greedy policy and its value.
pub fn best_response_value(
    beta: &MixedPolicy,
    space: &StateSpace,
    params: &GameParams,
    tol: f64,
    max_iter: usize,
) -> Result<(MixedPolicy, Vec<f64>), SolverError> {
    let model = ExactModel::new(space, params);
    best_response_with_model(beta, &model, space, params, tol, max_iter, true)
}

/// The defender's exact best response to a fixed attacker policy
/// (minimizing side of the same construction).
pub fn defender_response_value(
    alpha: &MixedPolicy,
    space: &StateSpace,
    params: &GameParams,
    tol: f64,
    max_iter: usize,
) -> Result<(MixedPolicy, Vec<f64>), SolverError> {
    let model = ExactModel::new(space, params);
    best_response_with_model(alpha, &model, space, params, tol, max_iter, false)
}

pub fn best_response_with_model(
    opponent: &MixedPolicy,
    model: &ExactModel,
    space: &StateSpace,
    params: &GameParams,
    tol: f64,
    max_iter: usize,
    attacker_side: bool,
) -> Result<(MixedPolicy, Vec<f64>), SolverError> {
    assert!(tol > 0.0);
    let n = space.len();
    let gamma = params.gamma;

    // own-action value given opponent mix and state values
    let q_own = |s: usize, own: u8, v: &[f64]| -> f64 {
        let mix = opponent.probs(s);
        let mut total = 0.0;
        for opp in 0..2u8 {
            let weight = mix[opp as usize];
            if weight == 0.0 {
                continue;
            }
            let (a, b) = if attacker_side { (own, opp) } else { (opp, own) };
            total += weight * model.backup(s, a, b, gamma, v);
        }
        total
    };

    let mut v = vec![0.0; n];
    for _ in 0..max_iter {
        let mut delta = 0.0f64;
        let mut next = vec![0.0; n];
        for s in 0..n {
            let q0 = q_own(s, 0, &v);
            let q1 = q_own(s, 1, &v);
            next[s] = if attacker_side { q0.max(q1) } else { q0.min(q1) };
            delta = delta.max((next[s] - v[s]).abs());
        }
        v = next;
        if delta < tol {
            let mut policy = MixedPolicy::pure(n, 0);
            for s in 0..n {
                let q0 = q_own(s, 0, &v);
                let q1 = q_own(s, 1, &v);
                let better = if attacker_side { q1 > q0 } else { q1 < q0 };
                policy.set_probs(s, if better { [0.0, 1.0] } else { [1.0, 0.0] });
            }
            return Ok((policy, v));
        }
    }
    Err(SolverError::MaxIterationsExceeded(max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_gamma(gamma: f64) -> GameParams {
        GameParams::new(2, 2, 1.0, 1.0, 2.0, 1.0, gamma).unwrap()
    }

    #[test]
    fn enumeration_examples() {
        let p = GameParams::new(2, 1, 1.0, 1.0, 0.0, 0.0, 0.5).unwrap();
        let space = StateSpace::enumerate(&p).unwrap();
        let listed: Vec<Vec<u32>> =
            space.states().iter().map(|s| s.occupancy().to_vec()).collect();
        assert_eq!(listed, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        for (i, s) in space.states().iter().enumerate() {
            assert_eq!(space.index(s), i);
        }

        assert_eq!(StateSpace::enumerate(&params_gamma(0.5)).unwrap().len(), 9);

        let p3 = GameParams::new(3, 3, 1.0, 1.0, 0.0, 0.0, 0.5).unwrap();
        assert_eq!(StateSpace::enumerate(&p3).unwrap().len(), 64);

        let err = StateSpace::enumerate_capped(&p3, 10).unwrap_err();
        assert_eq!(err, SolverError::StateCapExceeded { count: 64, cap: 10 });
    }

    #[test]
    fn myopic_game_at_two_one() {
        let p = params_gamma(0.0);
        let space = StateSpace::enumerate(&p).unwrap();
        let solution = shapley_value_iteration(&space, &p, 1e-12, 100).unwrap();
        let idx = space.index(&State::new(vec![2, 1], &p).unwrap());
        let q = solution.q_star.matrix_at(idx).g;
        assert!((q[0][0] - 1.0).abs() < 1e-12);
        assert!((q[0][1] - 4.0 / 3.0).abs() < 1e-12);
        assert!((q[1][0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((q[1][1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((solution.v_star[idx] - 1.0).abs() < 1e-12);
        assert_eq!(solution.defender.probs(idx), [1.0, 0.0]);
    }

    #[test]
    fn gamma_zero_q_equals_reward() {
        let p = params_gamma(0.0);
        let space = StateSpace::enumerate(&p).unwrap();
        let solution = shapley_value_iteration(&space, &p, 1e-12, 10).unwrap();
        for (s, x) in space.states().iter().enumerate() {
            for a in 0..2u8 {
                for b in 0..2u8 {
                    assert!(
                        (solution.q_star.get(s, a, b) - expected_reward(x, a, b, &p)).abs()
                            < 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn value_iteration_contracts() {
        let p = GameParams::new(2, 3, 1.0, 1.0, 2.0, 1.0, 0.9).unwrap();
        let space = StateSpace::enumerate(&p).unwrap();
        let solution = shapley_value_iteration(&space, &p, 1e-10, 10_000).unwrap();
        let deltas = &solution.sup_deltas;
        for pair in deltas.windows(2) {
            assert!(pair[1] <= p.gamma * pair[0] + 1e-12);
        }
    }

    #[test]
    fn policy_value_reproduces_equilibrium() {
        let p = params_gamma(0.9);
        let space = StateSpace::enumerate(&p).unwrap();
        let solution = shapley_value_iteration(&space, &p, 1e-12, 10_000).unwrap();
        let (q, v) =
            policy_value(&solution.attacker, &solution.defender, &space, &p).unwrap();
        assert!(q.sup_distance(&solution.q_star) < 1e-6);
        let cap = p.q_cap();
        for (vi, vs) in v.iter().zip(&solution.v_star) {
            assert!((vi - vs).abs() < 1e-6);
            assert!(vi.abs() <= cap + 1e-9);
        }
    }

    #[test]
    fn policy_value_gamma_zero_is_mixed_reward() {
        let p = params_gamma(0.0);
        let space = StateSpace::enumerate(&p).unwrap();
        let alpha = MixedPolicy::uniform(space.len());
        let beta = MixedPolicy::pure(space.len(), 1);
        let (q, _) = policy_value(&alpha, &beta, &space, &p).unwrap();
        for (s, x) in space.states().iter().enumerate() {
            for a in 0..2u8 {
                for b in 0..2u8 {
                    assert!((q.get(s, a, b) - expected_reward(x, a, b, &p)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn best_response_to_equilibrium_has_no_edge() {
        let p = params_gamma(0.9);
        let space = StateSpace::enumerate(&p).unwrap();
        let solution = shapley_value_iteration(&space, &p, 1e-12, 10_000).unwrap();
        let (_, v_attack) =
            best_response_value(&solution.defender, &space, &p, 1e-10, 100_000).unwrap();
        for (bi, vs) in v_attack.iter().zip(&solution.v_star) {
            assert!((bi - vs).abs() < 1e-6);
        }
        let (_, v_defend) =
            defender_response_value(&solution.attacker, &space, &p, 1e-10, 100_000)
                .unwrap();
        for (di, vs) in v_defend.iter().zip(&solution.v_star) {
            assert!((di - vs).abs() < 1e-6);
        }
    }

    #[test]
    fn always_defend_never_attack_when_myopic() {
        let p = GameParams::new(2, 1, 1.0, 1.0, 2.0, 1.0, 0.0).unwrap();
        let space = StateSpace::enumerate(&p).unwrap();
        let defend_always = MixedPolicy::pure(space.len(), 1);
        let (alpha, _) =
            best_response_value(&defend_always, &space, &p, 1e-10, 1000).unwrap();
        for s in 0..space.len() {
            assert_eq!(alpha.probs(s), [1.0, 0.0]);
        }
    }

    #[test]
    fn bellman_residual_of_converged_table_is_small() {
        let p = params_gamma(0.9);
        let space = StateSpace::enumerate(&p).unwrap();
        let model = ExactModel::new(&space, &p);
        let tol = 1e-10;
        let solution = shapley_value_iteration(&space, &p, tol, 10_000).unwrap();
        let mut v = vec![0.0; space.len()];
        for (s, value) in v.iter_mut().enumerate() {
            *value = solve_defender(&solution.q_star.matrix_at(s)).unwrap().value;
        }
        let backed_up = model.q_from_values(p.gamma, &v);
        let residual = backed_up.sup_distance(&solution.q_star);
        assert!(residual <= tol * (1.0 + p.gamma) / (1.0 - p.gamma));
    }
}
