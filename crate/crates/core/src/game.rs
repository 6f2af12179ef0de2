//! Continuous-time parallel-queue security game and its embedded
//! discrete-time chain: states, joint actions, routing, transition kernel,
//! and one-step rewards.
//!
//! Jobs arrive at rate `lambda` and are routed to the shortest of `m`
//! identical queues (capacity `L` each, service rate `mu`). An attacker may
//! redirect an arrival to the longest queue unless the defender secures the
//! routing decision. Observing the process at its transition epochs yields a
//! discrete-time zero-sum game whose one-step reward is the congestion cost
//! rate times the expected sojourn.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("invalid game parameters: {0}")]
    InvalidParams(&'static str),
    #[error("state has {got} components, expected {expected}")]
    WrongDimension { got: usize, expected: usize },
    #[error("queue {index} holds {value} jobs, exceeds buffer {buffer}")]
    BufferExceeded { index: usize, value: u32, buffer: u32 },
}

/// Model constants for the queueing game.
///
/// `discount` applies per embedded transition epoch. Cost rates accrue per
/// unit of continuous time, so one-step rewards scale with the sojourn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameParams {
    /// Number of parallel servers, at least 2.
    pub m: usize,
    /// Buffer size per server, at least 1.
    #[serde(rename = "L")]
    pub buffer: u32,
    /// Poisson arrival rate, strictly positive.
    pub lambda: f64,
    /// Per-server exponential service rate, strictly positive.
    pub mu: f64,
    /// Attack cost rate per unit time.
    pub c_a: f64,
    /// Defense cost rate per unit time.
    pub c_b: f64,
    /// Discount factor per transition epoch, in (0, 1) (0 allowed for
    /// myopic diagnostics).
    pub gamma: f64,
}

impl GameParams {
    pub fn new(
        m: usize,
        buffer: u32,
        lambda: f64,
        mu: f64,
        c_a: f64,
        c_b: f64,
        gamma: f64,
    ) -> Result<Self, GameError> {
        let params = GameParams { m, buffer, lambda, mu, c_a, c_b, gamma };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.m < 2 {
            return Err(GameError::InvalidParams("m must be at least 2"));
        }
        if self.buffer < 1 {
            return Err(GameError::InvalidParams("L must be at least 1"));
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(GameError::InvalidParams("lambda must be positive"));
        }
        if !self.mu.is_finite() || self.mu <= 0.0 {
            return Err(GameError::InvalidParams("mu must be positive"));
        }
        if self.c_a < 0.0 || self.c_b < 0.0 {
            return Err(GameError::InvalidParams("cost rates must be nonnegative"));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 || self.gamma >= 1.0 {
            return Err(GameError::InvalidParams("gamma must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Dimension of the linear feature map, `m + 2`.
    pub fn feature_dim(&self) -> usize {
        self.m + 2
    }

    /// Largest congestion cost rate, `m*L + c_b`.
    pub fn reward_rate_cap(&self) -> f64 {
        self.m as f64 * self.buffer as f64 + self.c_b
    }

    /// Upper bound on any discounted action value,
    /// `(m*L + c_b) / (lambda * (1 - gamma))`.
    pub fn q_cap(&self) -> f64 {
        self.reward_rate_cap() / (self.lambda * (1.0 - self.gamma))
    }

    /// Whether the nominal load satisfies `lambda < m * mu`. Violations are
    /// permitted (buffers are finite) but worth a warning in front ends.
    pub fn is_stable(&self) -> bool {
        self.lambda < self.m as f64 * self.mu
    }

    /// Number of states `(L + 1)^m`, saturating on overflow.
    pub fn state_count(&self) -> usize {
        let base = self.buffer as usize + 1;
        let mut n = 1usize;
        for _ in 0..self.m {
            n = n.saturating_mul(base);
        }
        n
    }
}

/// Queue-occupancy vector: component `i` counts jobs at server `i`,
/// each in `0..=L`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State {
    q: Vec<u32>,
}

impl State {
    pub fn new(q: Vec<u32>, params: &GameParams) -> Result<Self, GameError> {
        if q.len() != params.m {
            return Err(GameError::WrongDimension { got: q.len(), expected: params.m });
        }
        for (index, &value) in q.iter().enumerate() {
            if value > params.buffer {
                return Err(GameError::BufferExceeded { index, value, buffer: params.buffer });
            }
        }
        Ok(State { q })
    }

    /// The empty system.
    pub fn empty(params: &GameParams) -> Self {
        State { q: vec![0; params.m] }
    }

    pub fn occupancy(&self) -> &[u32] {
        &self.q
    }

    /// One-norm: total jobs in the system.
    pub fn total_jobs(&self) -> u32 {
        self.q.iter().sum()
    }

    /// Number of servers with at least one job.
    pub fn active_servers(&self) -> usize {
        self.q.iter().filter(|&&v| v > 0).count()
    }

    /// Indices attaining the minimum occupancy.
    pub fn shortest_queues(&self) -> Vec<usize> {
        let min = *self.q.iter().min().expect("state is non-empty");
        self.q.iter().enumerate().filter(|(_, &v)| v == min).map(|(i, _)| i).collect()
    }

    /// Indices attaining the maximum occupancy.
    pub fn longest_queues(&self) -> Vec<usize> {
        let max = *self.q.iter().max().expect("state is non-empty");
        self.q.iter().enumerate().filter(|(_, &v)| v == max).map(|(i, _)| i).collect()
    }

    fn with_increment(&self, i: usize) -> State {
        let mut q = self.q.clone();
        q[i] += 1;
        State { q }
    }

    fn with_decrement(&self, i: usize) -> State {
        let mut q = self.q.clone();
        q[i] -= 1;
        State { q }
    }
}

/// Where an arrival is routed under joint action `(a, b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteTarget {
    /// Every routing target is at capacity; the arrival is lost and the
    /// state self-loops.
    Reject,
    /// Tied candidate servers; the dynamics pick uniformly among them.
    Servers(Vec<usize>),
}

/// Congestion cost rate for the defender (reward rate for the attacker):
/// `|x|_1 - c_a * a + c_b * b`.
pub fn instantaneous_reward(x: &State, a: u8, b: u8, params: &GameParams) -> f64 {
    debug_assert!(a <= 1 && b <= 1);
    x.total_jobs() as f64 - params.c_a * a as f64 + params.c_b * b as f64
}

/// Expected time between transition epochs at `x`:
/// `1 / (lambda + k(x) * mu)` where `k` counts active servers.
pub fn expected_sojourn(x: &State, params: &GameParams) -> f64 {
    1.0 / (params.lambda + x.active_servers() as f64 * params.mu)
}

/// Expected one-step reward of the embedded chain:
/// `instantaneous_reward * expected_sojourn`.
pub fn expected_reward(x: &State, a: u8, b: u8, params: &GameParams) -> f64 {
    instantaneous_reward(x, a, b, params) * expected_sojourn(x, params)
}

/// Routing target of the next arrival. A successful attack, `(a, b) = (1, 0)`,
/// sends the job to the longest queue; any other joint action restores
/// shortest-queue routing. A full target rejects the job.
pub fn route_target(x: &State, a: u8, b: u8, params: &GameParams) -> RouteTarget {
    let ties = if (a, b) == (1, 0) { x.longest_queues() } else { x.shortest_queues() };
    // Tied servers share one occupancy level, so either all are full or none.
    if x.occupancy()[ties[0]] >= params.buffer {
        RouteTarget::Reject
    } else {
        RouteTarget::Servers(ties)
    }
}

/// Exact next-state distribution of the embedded chain at `(x, a, b)`.
///
/// The arrival event fires with probability `lambda / (lambda + k*mu)` and
/// routes per [`route_target`] (uniform over ties, self-loop on rejection);
/// each active server departs with probability `mu / (lambda + k*mu)`.
/// Outcomes are merged by next state and sorted for determinism.
pub fn transition_distribution(
    x: &State,
    a: u8,
    b: u8,
    params: &GameParams,
) -> Vec<(State, f64)> {
    let total_rate = params.lambda + x.active_servers() as f64 * params.mu;
    let mut outcomes: Vec<(State, f64)> = Vec::new();
    let mut add = |state: State, p: f64| {
        if let Some(entry) = outcomes.iter_mut().find(|(s, _)| *s == state) {
            entry.1 += p;
        } else {
            outcomes.push((state, p));
        }
    };

    let p_arrival = params.lambda / total_rate;
    match route_target(x, a, b, params) {
        RouteTarget::Reject => add(x.clone(), p_arrival),
        RouteTarget::Servers(ties) => {
            let share = p_arrival / ties.len() as f64;
            for &i in &ties {
                add(x.with_increment(i), share);
            }
        }
    }
    for i in 0..params.m {
        if x.occupancy()[i] > 0 {
            add(x.with_decrement(i), params.mu / total_rate);
        }
    }

    outcomes.sort_by(|(s1, _), (s2, _)| s1.cmp(s2));
    outcomes
}

/// Draw one embedded transition: the next state and the realized sojourn
/// `dt ~ Exp(lambda + k(x) * mu)`.
pub fn sample_transition<R: Rng>(
    x: &State,
    a: u8,
    b: u8,
    params: &GameParams,
    rng: &mut R,
) -> (State, f64) {
    let total_rate = params.lambda + x.active_servers() as f64 * params.mu;
    let dt = -(1.0 - rng.gen::<f64>()).ln() / total_rate;

    let outcomes = transition_distribution(x, a, b, params);
    let mut u = rng.gen::<f64>();
    for (state, p) in &outcomes {
        if u < *p {
            return (state.clone(), dt);
        }
        u -= p;
    }
    let (state, _) = outcomes.last().expect("transition distribution is non-empty");
    (state.clone(), dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn params(m: usize, buffer: u32) -> GameParams {
        GameParams::new(m, buffer, 1.0, 1.0, 2.0, 1.0, 0.9).unwrap()
    }

    fn state(q: &[u32], p: &GameParams) -> State {
        State::new(q.to_vec(), p).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(GameParams::new(1, 1, 1.0, 1.0, 0.0, 0.0, 0.5).is_err());
        assert!(GameParams::new(2, 0, 1.0, 1.0, 0.0, 0.0, 0.5).is_err());
        assert!(GameParams::new(2, 1, 0.0, 1.0, 0.0, 0.0, 0.5).is_err());
        assert!(GameParams::new(2, 1, 1.0, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(GameParams::new(2, 1, 1.0, 1.0, -1.0, 0.0, 0.5).is_err());
        let p = GameParams::new(3, 2, 1.5, 2.0, 1.0, 0.5, 0.9).unwrap();
        assert_eq!(p.feature_dim(), 5);
        assert_eq!(p.state_count(), 27);
    }

    #[test]
    fn state_validation() {
        let p = params(2, 2);
        assert!(State::new(vec![0, 3], &p).is_err());
        assert!(State::new(vec![0, 1, 0], &p).is_err());
        assert_eq!(state(&[2, 1], &p).total_jobs(), 3);
    }

    #[test]
    fn reward_examples() {
        let p = params(2, 2);
        assert_eq!(instantaneous_reward(&state(&[0, 0], &p), 0, 0, &p), 0.0);
        assert_eq!(instantaneous_reward(&state(&[2, 1], &p), 1, 1, &p), 3.0 - 2.0 + 1.0);
        // maximal occupancy with defense only
        assert_eq!(instantaneous_reward(&state(&[2, 2], &p), 0, 1, &p), 4.0 + 1.0);
    }

    #[test]
    fn sojourn_examples() {
        let p = params(2, 2);
        assert_eq!(expected_sojourn(&state(&[0, 0], &p), &p), 1.0);
        assert_eq!(expected_sojourn(&state(&[1, 0], &p), &p), 0.5);
        let fast = GameParams::new(2, 2, 1.0, 2.0, 2.0, 1.0, 0.9).unwrap();
        assert!((expected_sojourn(&state(&[2, 1], &fast), &fast) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn expected_reward_examples() {
        let p = params(2, 2);
        assert_eq!(expected_reward(&state(&[0, 0], &p), 0, 0, &p), 0.0);
        assert!((expected_reward(&state(&[2, 1], &p), 1, 1, &p) - 2.0 / 3.0).abs() < 1e-15);
        assert!((expected_reward(&state(&[2, 1], &p), 0, 0, &p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn expected_reward_stays_within_rate_bounds() {
        let p = params(2, 2);
        for q1 in 0..=2 {
            for q2 in 0..=2 {
                let x = state(&[q1, q2], &p);
                for a in 0..2u8 {
                    for b in 0..2u8 {
                        let r = expected_reward(&x, a, b, &p);
                        assert!(r >= -p.c_a / p.lambda - 1e-12);
                        assert!(r <= p.reward_rate_cap() / p.lambda + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn routing_examples() {
        let p = params(2, 2);
        assert_eq!(
            route_target(&state(&[1, 0], &p), 0, 0, &p),
            RouteTarget::Servers(vec![1])
        );
        // attack routes to the longest queue, which is full here
        assert_eq!(route_target(&state(&[2, 1], &p), 1, 0, &p), RouteTarget::Reject);
        assert_eq!(
            route_target(&state(&[0, 0], &p), 1, 1, &p),
            RouteTarget::Servers(vec![0, 1])
        );
    }

    #[test]
    fn defense_restores_shortest_queue_routing() {
        let p = params(2, 2);
        for q1 in 0..=2 {
            for q2 in 0..=2 {
                let x = state(&[q1, q2], &p);
                let baseline = route_target(&x, 0, 0, &p);
                assert_eq!(route_target(&x, 0, 1, &p), baseline);
                assert_eq!(route_target(&x, 1, 1, &p), baseline);
            }
        }
    }

    #[test]
    fn transition_examples() {
        let p = params(2, 2);
        let dist = transition_distribution(&state(&[1, 0], &p), 0, 0, &p);
        assert_eq!(
            dist,
            vec![(state(&[0, 0], &p), 0.5), (state(&[1, 1], &p), 0.5)]
        );

        // attack hits the full longest queue: rejection self-loop plus departures
        let dist = transition_distribution(&state(&[2, 1], &p), 1, 0, &p);
        let third = 1.0 / 3.0;
        assert_eq!(dist.len(), 3);
        for (s, prob) in &dist {
            assert!((prob - third).abs() < 1e-15, "state {s:?}");
        }
        let support: Vec<State> = dist.iter().map(|(s, _)| s.clone()).collect();
        assert!(support.contains(&state(&[1, 1], &p)));
        assert!(support.contains(&state(&[2, 0], &p)));
        assert!(support.contains(&state(&[2, 1], &p)));

        let dist = transition_distribution(&state(&[0, 0], &p), 0, 1, &p);
        assert_eq!(
            dist,
            vec![(state(&[0, 1], &p), 0.5), (state(&[1, 0], &p), 0.5)]
        );
    }

    #[test]
    fn transitions_sum_to_one_and_move_one_job() {
        let p = params(3, 2);
        for i in 0..3u32.pow(3) {
            let q = vec![i % 3, (i / 3) % 3, (i / 9) % 3];
            let x = State::new(q, &p).unwrap();
            for a in 0..2u8 {
                for b in 0..2u8 {
                    let dist = transition_distribution(&x, a, b, &p);
                    let total: f64 = dist.iter().map(|(_, p)| p).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                    for (next, prob) in &dist {
                        assert!(*prob > 0.0);
                        let diff = next.total_jobs() as i64 - x.total_jobs() as i64;
                        assert!(diff.abs() <= 1);
                    }
                    // support states are distinct
                    for i in 0..dist.len() {
                        for j in i + 1..dist.len() {
                            assert_ne!(dist[i].0, dist[j].0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sample_from_empty_state_adds_one_job() {
        let p = params(2, 2);
        let x = state(&[0, 0], &p);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (next, dt) = sample_transition(&x, 0, 0, &p, &mut rng);
            assert_eq!(next.total_jobs(), 1);
            assert!(dt > 0.0);
        }
    }
}
