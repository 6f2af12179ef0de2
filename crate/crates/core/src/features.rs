//! Linear approximation architecture for action values.
//!
//! The feature map has dimension `d = m + 2`: squared post-routing
//! occupancies `(x_i + delta_i(a, b))^2` for each server, then the attack
//! and defense indicators. `delta` marks the coordinate an arrival would
//! join: the longest queue under a successful attack `(a, b) = (1, 0)`, the
//! shortest queue otherwise, with deterministic lowest-index tie-breaking so
//! features stay reproducible even though the dynamics randomize ties.

use thiserror::Error;

use crate::game::{GameParams, State};
use crate::linalg;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("feature index {0} out of range for {1} servers")]
    IndexOutOfRange(usize, usize),
    #[error("all Gram eigenvalues are numerically zero; features are degenerate")]
    DegenerateFeatures,
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
}

fn argmax_lowest(q: &[u32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

fn argmin_lowest(q: &[u32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v < q[best] {
            best = i;
        }
    }
    best
}

/// The unique coordinate receiving the routing increment under `(a, b)`.
pub fn delta_index(x: &State, a: u8, b: u8) -> usize {
    if (a, b) == (1, 0) {
        argmax_lowest(x.occupancy())
    } else {
        argmin_lowest(x.occupancy())
    }
}

/// Indicator that server `i` (zero-based) receives the routing increment.
pub fn delta(x: &State, a: u8, b: u8, i: usize) -> Result<u8, FeatureError> {
    let m = x.occupancy().len();
    if i >= m {
        return Err(FeatureError::IndexOutOfRange(i, m));
    }
    Ok(u8::from(delta_index(x, a, b) == i))
}

/// Feature vector of length `m + 2`.
pub fn feature_vector(x: &State, a: u8, b: u8, params: &GameParams) -> Vec<f64> {
    let mut phi = Vec::with_capacity(params.feature_dim());
    let bump = delta_index(x, a, b);
    for (i, &q) in x.occupancy().iter().enumerate() {
        let v = q as f64 + f64::from(i == bump);
        phi.push(v * v);
    }
    phi.push(a as f64);
    phi.push(b as f64);
    phi
}

/// Approximate action value `phi(x, a, b) . theta`.
pub fn q_hat(x: &State, a: u8, b: u8, theta: &[f64], params: &GameParams) -> f64 {
    debug_assert_eq!(theta.len(), params.feature_dim());
    linalg::dot(&feature_vector(x, a, b, params), theta)
}

/// Root-mean-square norm: `sqrt(|y|_2^2 / n)`.
pub fn sigma_norm(y: &[f64]) -> f64 {
    assert!(!y.is_empty(), "sigma norm of an empty vector");
    (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt()
}

/// Row-major `n x d` design matrix of feature rows.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        assert!(!rows.is_empty(), "feature matrix needs at least one row");
        let d = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in &rows {
            assert_eq!(row.len(), d, "ragged feature rows");
            data.extend_from_slice(row);
        }
        FeatureMatrix { data, n: rows.len(), d }
    }

    /// Design matrix over the triples `(x_k, a_k, b_k)` of an ordered sample
    /// list.
    pub fn from_triples<'a, I>(triples: I, params: &GameParams) -> Self
    where
        I: IntoIterator<Item = (&'a State, u8, u8)>,
    {
        let d = params.feature_dim();
        let mut data = Vec::new();
        let mut n = 0;
        for (x, a, b) in triples {
            data.extend_from_slice(&feature_vector(x, a, b, params));
            n += 1;
        }
        assert!(n > 0, "feature matrix needs at least one row");
        FeatureMatrix { data, n, d }
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.d..(k + 1) * self.d]
    }

    /// `Phi^T Phi`, row-major `d x d`.
    pub fn gram(&self) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![0.0; d * d];
        for k in 0..self.n {
            let row = self.row(k);
            for i in 0..d {
                for j in i..d {
                    g[i * d + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                g[i * d + j] = g[j * d + i];
            }
        }
        g
    }

    /// `Phi^T y`.
    pub fn t_mul(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n);
        let mut out = vec![0.0; self.d];
        for (k, &target) in y.iter().enumerate() {
            let row = self.row(k);
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * target;
            }
        }
        out
    }

    /// `Phi theta`.
    pub fn mul(&self, theta: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.d);
        (0..self.n).map(|k| linalg::dot(self.row(k), theta)).collect()
    }

    /// Minimum-norm least-squares weights for targets `y`.
    pub fn solve_least_squares(&self, y: &[f64]) -> Vec<f64> {
        linalg::pinv_solve(&self.gram(), self.d, &self.t_mul(y))
    }

    /// Orthogonal projection of `y` onto the span of the feature columns
    /// (pseudoinverse semantics; rank deficiency falls back to the
    /// minimum-norm solution).
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        self.mul(&self.solve_least_squares(y))
    }

    /// Smallest strictly positive eigenvalue of the sample Gram matrix
    /// `Phi^T Phi / n`; eigenvalues below `1e-10` times the largest are
    /// treated as zero.
    pub fn gram_min_eig(&self) -> Result<f64, FeatureError> {
        if self.n < self.d {
            return Err(FeatureError::InsufficientSamples { need: self.d, got: self.n });
        }
        let mut gram = self.gram();
        for v in &mut gram {
            *v /= self.n as f64;
        }
        let (eigvals, _) = linalg::sym_eigen(&gram, self.d);
        let max_eig = eigvals.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
        let cutoff = linalg::RANK_CUTOFF * max_eig;
        eigvals
            .iter()
            .copied()
            .filter(|&e| e > cutoff)
            .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.min(e))))
            .ok_or(FeatureError::DegenerateFeatures)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn params(m: usize, buffer: u32) -> GameParams {
        GameParams::new(m, buffer, 1.0, 1.0, 2.0, 1.0, 0.9).unwrap()
    }

    fn state(q: &[u32], p: &GameParams) -> State {
        State::new(q.to_vec(), p).unwrap()
    }

    #[test]
    fn delta_examples() {
        let p = params(2, 2);
        let x = state(&[2, 1], &p);
        assert_eq!(delta(&x, 1, 0, 0).unwrap(), 1);
        assert_eq!(delta(&x, 1, 0, 1).unwrap(), 0);
        assert_eq!(delta(&x, 0, 0, 0).unwrap(), 0);
        assert_eq!(delta(&x, 0, 0, 1).unwrap(), 1);
        let tie = state(&[0, 0], &p);
        assert_eq!(delta(&tie, 1, 1, 0).unwrap(), 1);
        assert_eq!(delta(&tie, 1, 1, 1).unwrap(), 0);
        assert!(delta(&tie, 0, 0, 2).is_err());
    }

    #[test]
    fn exactly_one_delta_fires() {
        let p = params(3, 2);
        for i in 0..27u32 {
            let x = State::new(vec![i % 3, (i / 3) % 3, (i / 9) % 3], &p).unwrap();
            for a in 0..2u8 {
                for b in 0..2u8 {
                    let total: u8 = (0..3).map(|i| delta(&x, a, b, i).unwrap()).sum();
                    assert_eq!(total, 1);
                }
            }
        }
    }

    #[test]
    fn feature_vector_examples() {
        let p = params(2, 2);
        assert_eq!(feature_vector(&state(&[2, 1], &p), 1, 0, &p), vec![9.0, 1.0, 1.0, 0.0]);
        assert_eq!(feature_vector(&state(&[2, 1], &p), 0, 0, &p), vec![4.0, 4.0, 0.0, 0.0]);
        assert_eq!(feature_vector(&state(&[0, 0], &p), 1, 1, &p), vec![1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn q_hat_examples() {
        let p = params(2, 2);
        let x = state(&[2, 1], &p);
        assert_eq!(q_hat(&x, 1, 0, &[0.0; 4], &p), 0.0);
        assert_eq!(q_hat(&x, 1, 0, &[0.0, 0.0, 1.0, 0.0], &p), 1.0);
        assert_eq!(q_hat(&x, 0, 1, &[0.0, 0.0, 1.0, 0.0], &p), 0.0);
        assert_eq!(q_hat(&x, 1, 0, &[1.0, 1.0, 0.0, 0.0], &p), 10.0);
    }

    #[test]
    fn feature_magnitudes() {
        let p = params(2, 2);
        let cap = (p.buffer as f64 + 1.0).powi(2);
        let soft_cap = (p.buffer as f64).powi(2);
        for q1 in 0..=2 {
            for q2 in 0..=2 {
                let x = state(&[q1, q2], &p);
                for a in 0..2u8 {
                    for b in 0..2u8 {
                        let bump = delta_index(&x, a, b);
                        for (i, &v) in feature_vector(&x, a, b, &p).iter().enumerate() {
                            assert!(v <= cap);
                            // away from the saturated routing target the
                            // squared features respect the nominal L^2 cap
                            if i < p.m && !(i == bump && x.occupancy()[i] == p.buffer) {
                                assert!(v <= soft_cap);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sigma_norm_examples() {
        assert!((sigma_norm(&[3.0, 4.0]) - (25.0f64 / 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(sigma_norm(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(sigma_norm(&[-2.5, -2.5, -2.5, -2.5]), 2.5);
    }

    #[test]
    fn projection_examples() {
        let phi = FeatureMatrix::from_rows(vec![vec![1.0], vec![1.0]]);
        assert_eq!(phi.project(&[0.0, 2.0]), vec![1.0, 1.0]);

        let id = FeatureMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = [3.5, -1.25];
        let proj = id.project(&y);
        assert!((proj[0] - y[0]).abs() < 1e-12);
        assert!((proj[1] - y[1]).abs() < 1e-12);
    }

    #[test]
    fn projection_residual_is_orthogonal_and_idempotent() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.gen_range(3..40);
            let d = rng.gen_range(1..5);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let phi = FeatureMatrix::from_rows(rows);
            let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let proj = phi.project(&y);
            let residual: Vec<f64> = y.iter().zip(&proj).map(|(a, b)| a - b).collect();
            for coeff in phi.t_mul(&residual) {
                assert!(coeff.abs() < 1e-9);
            }
            let twice = phi.project(&proj);
            for (a, b) in twice.iter().zip(&proj) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gram_min_eig_examples() {
        let id = FeatureMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((id.gram_min_eig().unwrap() - 0.5).abs() < 1e-12);

        // duplicated column: the zero eigenvalue is excluded, and with the
        // remaining columns orthogonal the minimum matches the deduplicated
        // design
        let dup = FeatureMatrix::from_rows(vec![
            vec![1.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ]);
        let dedup = FeatureMatrix::from_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ]);
        assert!((dup.gram_min_eig().unwrap() - dedup.gram_min_eig().unwrap()).abs() < 1e-12);
        assert!((dup.gram_min_eig().unwrap() - 1.0 / 3.0).abs() < 1e-12);

        let degenerate = FeatureMatrix::from_rows(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(degenerate.gram_min_eig(), Err(FeatureError::DegenerateFeatures));

        let thin = FeatureMatrix::from_rows(vec![vec![1.0, 0.0]]);
        assert!(matches!(
            thin.gram_min_eig(),
            Err(FeatureError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn full_enumeration_features_are_linearly_independent() {
        let p = params(2, 2);
        let mut rows = Vec::new();
        for q1 in 0..=2 {
            for q2 in 0..=2 {
                let x = state(&[q1, q2], &p);
                for a in 0..2u8 {
                    for b in 0..2u8 {
                        rows.push(feature_vector(&x, a, b, &p));
                    }
                }
            }
        }
        let phi = FeatureMatrix::from_rows(rows);
        assert!(phi.gram_min_eig().unwrap() > 1e-6);
    }
}
