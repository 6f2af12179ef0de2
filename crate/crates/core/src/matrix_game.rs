//! Exact solutions of 2x2 zero-sum matrix games.
//!
//! Rows are attacker actions (maximizer), columns are defender actions
//! (minimizer). With both action sets fixed at `{0, 1}` the defender's
//! linear program collapses to one variable, so saddle points and the
//! fully mixed equilibrium both have closed forms. A grid-scan oracle is
//! kept alongside for independent verification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixGameError {
    #[error("payoff entry ({0}, {1}) is not finite")]
    NonFiniteEntry(usize, usize),
}

/// Payoff matrix `g[a][b]`: attacker plays rows, defender plays columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matrix2 {
    pub g: [[f64; 2]; 2],
}

impl Matrix2 {
    pub fn new(g: [[f64; 2]; 2]) -> Self {
        Matrix2 { g }
    }

    pub fn spread(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &self.g {
            for &v in row {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        hi - lo
    }

    fn check_finite(&self) -> Result<(), MatrixGameError> {
        for (a, row) in self.g.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(MatrixGameError::NonFiniteEntry(a, b));
                }
            }
        }
        Ok(())
    }
}

/// Value and equilibrium mixes of a solved 2x2 game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSolution {
    pub value: f64,
    /// Probabilities over defender actions `(b = 0, b = 1)`.
    pub defender_mix: [f64; 2],
    /// Probabilities over attacker actions `(a = 0, a = 1)`.
    pub attacker_mix: [f64; 2],
}

fn clamp_unit(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

/// Pure saddle point, if one exists: the deterministic minimax solution with
/// lowest-index tie-breaking. `max_a min_b` equals `min_b max_a` exactly at a
/// saddle, and never exceeds it otherwise.
fn saddle(g: &[[f64; 2]; 2]) -> Option<GameSolution> {
    let col_max = [g[0][0].max(g[1][0]), g[0][1].max(g[1][1])];
    let row_min = [g[0][0].min(g[0][1]), g[1][0].min(g[1][1])];
    let upper = col_max[0].min(col_max[1]);
    let lower = row_min[0].max(row_min[1]);
    if lower >= upper {
        let b = if col_max[0] <= col_max[1] { 0 } else { 1 };
        let a = if row_min[0] >= row_min[1] { 0 } else { 1 };
        let mut defender_mix = [0.0; 2];
        let mut attacker_mix = [0.0; 2];
        defender_mix[b] = 1.0;
        attacker_mix[a] = 1.0;
        Some(GameSolution { value: upper, defender_mix, attacker_mix })
    } else {
        None
    }
}

/// Defender's minimax solution: `min` over column mixes of `max` over rows.
pub fn solve_defender(game: &Matrix2) -> Result<GameSolution, MatrixGameError> {
    game.check_finite()?;
    let g = &game.g;
    if let Some(solution) = saddle(g) {
        return Ok(solution);
    }
    // No saddle: the unique equilibrium is fully mixed. The defender weight
    // on b = 0 equalizes the two row payoffs.
    let denom = g[0][0] - g[0][1] - g[1][0] + g[1][1];
    let beta0 = clamp_unit((g[1][1] - g[0][1]) / denom);
    let value = (g[0][0] * g[1][1] - g[0][1] * g[1][0]) / denom;
    let alpha0 = clamp_unit((g[1][1] - g[1][0]) / denom);
    Ok(GameSolution {
        value,
        defender_mix: [beta0, 1.0 - beta0],
        attacker_mix: [alpha0, 1.0 - alpha0],
    })
}

/// Attacker's maximin solution: `max` over row mixes of `min` over columns.
/// Solved on its own (not by delegating to [`solve_defender`]) so the two
/// routes can be cross-checked for minimax duality.
pub fn solve_attacker(game: &Matrix2) -> Result<GameSolution, MatrixGameError> {
    game.check_finite()?;
    let g = &game.g;
    if let Some(solution) = saddle(g) {
        return Ok(solution);
    }
    let denom = g[0][0] - g[0][1] - g[1][0] + g[1][1];
    let alpha0 = clamp_unit((g[1][1] - g[1][0]) / denom);
    // Both columns pay the same under the equalizing mix; evaluate the
    // minimum explicitly rather than reusing the determinant formula.
    let col0 = alpha0 * g[0][0] + (1.0 - alpha0) * g[1][0];
    let col1 = alpha0 * g[0][1] + (1.0 - alpha0) * g[1][1];
    let beta0 = clamp_unit((g[1][1] - g[0][1]) / denom);
    Ok(GameSolution {
        value: col0.min(col1),
        defender_mix: [beta0, 1.0 - beta0],
        attacker_mix: [alpha0, 1.0 - alpha0],
    })
}

/// Grid-scan oracle for the defender's minimax value: scans defender weights
/// `beta0 in {0, step, ..., 1}` and returns the smallest worst-case row
/// payoff. Accurate to `step * spread`.
pub fn brute_force_value(game: &Matrix2, grid_step: f64) -> f64 {
    assert!(grid_step > 0.0 && grid_step <= 0.01, "grid_step must lie in (0, 0.01]");
    let g = &game.g;
    let steps = (1.0 / grid_step).ceil() as usize;
    let mut best = f64::INFINITY;
    for k in 0..=steps {
        let beta0 = (k as f64 * grid_step).min(1.0);
        // interpolation form that is exact for constant rows
        let row0 = g[0][1] + beta0 * (g[0][0] - g[0][1]);
        let row1 = g[1][1] + beta0 * (g[1][0] - g[1][1]);
        best = best.min(row0.max(row1));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn saddle_point_game() {
        let g = Matrix2::new([[1.0, 2.0], [0.0, 3.0]]);
        let s = solve_defender(&g).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.defender_mix, [1.0, 0.0]);
        let s = solve_attacker(&g).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.attacker_mix, [1.0, 0.0]);
    }

    #[test]
    fn fully_mixed_game() {
        let g = Matrix2::new([[0.0, 2.0], [3.0, 1.0]]);
        let s = solve_defender(&g).unwrap();
        assert!((s.value - 1.5).abs() < 1e-12);
        assert!((s.defender_mix[0] - 0.25).abs() < 1e-12);
        assert!((s.defender_mix[1] - 0.75).abs() < 1e-12);
        let s = solve_attacker(&g).unwrap();
        assert!((s.value - 1.5).abs() < 1e-12);
        assert!((s.attacker_mix[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matching_pennies() {
        let g = Matrix2::new([[1.0, 0.0], [0.0, 1.0]]);
        let s = solve_defender(&g).unwrap();
        assert!((s.value - 0.5).abs() < 1e-12);
        assert!((s.defender_mix[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_pick_column_minimum() {
        let g = Matrix2::new([[2.0, 5.0], [2.0, 5.0]]);
        let s = solve_attacker(&g).unwrap();
        assert_eq!(s.value, 2.0);
        assert_eq!(s.defender_mix, [1.0, 0.0]);
    }

    #[test]
    fn nan_entry_is_rejected() {
        let g = Matrix2::new([[f64::NAN, 0.0], [0.0, 0.0]]);
        assert_eq!(solve_defender(&g), Err(MatrixGameError::NonFiniteEntry(0, 0)));
        assert!(solve_attacker(&g).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let g = Matrix2::new([[0.0, 2.0], [3.0, 1.0]]);
        assert!((brute_force_value(&g, 1e-3) - 1.5).abs() <= 2e-3);
        let c = Matrix2::new([[4.2, 4.2], [4.2, 4.2]]);
        assert_eq!(brute_force_value(&c, 1e-3), 4.2);
        let s = Matrix2::new([[1.0, 2.0], [0.0, 3.0]]);
        assert_eq!(brute_force_value(&s, 1e-3), 1.0);
    }

    #[test]
    fn defender_mix_achieves_the_value() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..500 {
            let g = Matrix2::new([
                [rng.gen::<f64>() * 20.0 - 10.0, rng.gen::<f64>() * 20.0 - 10.0],
                [rng.gen::<f64>() * 20.0 - 10.0, rng.gen::<f64>() * 20.0 - 10.0],
            ]);
            let s = solve_defender(&g).unwrap();
            let row0 = s.defender_mix[0] * g.g[0][0] + s.defender_mix[1] * g.g[0][1];
            let row1 = s.defender_mix[0] * g.g[1][0] + s.defender_mix[1] * g.g[1][1];
            assert!((row0.max(row1) - s.value).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_shift_moves_value_only() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..200 {
            let base = [
                [rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0],
                [rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0],
            ];
            let shift = rng.gen::<f64>() * 10.0 - 5.0;
            let shifted =
                Matrix2::new([[base[0][0] + shift, base[0][1] + shift], [
                    base[1][0] + shift,
                    base[1][1] + shift,
                ]]);
            let s0 = solve_defender(&Matrix2::new(base)).unwrap();
            let s1 = solve_defender(&shifted).unwrap();
            assert!((s1.value - s0.value - shift).abs() < 1e-10);
            assert!((s1.defender_mix[0] - s0.defender_mix[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn value_is_monotone_in_entries() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mut g = [
                [rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0],
                [rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0],
            ];
            let before = solve_defender(&Matrix2::new(g)).unwrap().value;
            let a = rng.gen_range(0..2);
            let b = rng.gen_range(0..2);
            g[a][b] += rng.gen::<f64>() * 3.0;
            let after = solve_defender(&Matrix2::new(g)).unwrap().value;
            assert!(after >= before - 1e-12);
        }
    }
}
