//! Dense helpers for the small symmetric systems that appear in feature
//! regression: cyclic Jacobi eigendecomposition and pseudoinverse solves.
//! Feature dimensions stay below ten, so no external solver is needed.

/// Relative eigenvalue cutoff below which a Gram matrix direction is treated
/// as null when inverting.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Eigendecomposition of a symmetric `n x n` matrix (row-major) by the
/// cyclic Jacobi method. Returns eigenvalues in ascending order and the
/// matching eigenvectors as rows of the second result.
pub fn sym_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off_diag = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += a[i * n + j] * a[i * n + j];
            }
        }
        s
    };

    let scale: f64 = (0..n).map(|i| a[i * n + i].abs()).fold(1e-300, f64::max);
    for _sweep in 0..100 {
        if off_diag(&a) <= (1e-30 * scale * scale).max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[i * n + i].partial_cmp(&a[j * n + j]).expect("eigenvalues are finite")
    });
    let eigvals: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let eigvecs: Vec<Vec<f64>> =
        order.iter().map(|&col| (0..n).map(|row| v[row * n + col]).collect()).collect();
    (eigvals, eigvecs)
}

/// Minimum-norm solution of `G x = rhs` for symmetric positive-semidefinite
/// `G`: eigen-directions below `RANK_CUTOFF` times the largest eigenvalue
/// are dropped.
pub fn pinv_solve(gram: &[f64], n: usize, rhs: &[f64]) -> Vec<f64> {
    let (eigvals, eigvecs) = sym_eigen(gram, n);
    let max_eig = eigvals.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let cutoff = RANK_CUTOFF * max_eig;
    let mut x = vec![0.0; n];
    for (lambda, vec) in eigvals.iter().zip(&eigvecs) {
        if *lambda <= cutoff {
            continue;
        }
        let coeff: f64 = vec.iter().zip(rhs).map(|(v, r)| v * r).sum::<f64>() / lambda;
        for (xi, vi) in x.iter_mut().zip(vec) {
            *xi += coeff * vi;
        }
    }
    x
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn diagonal_matrix_eigen() {
        let m = [3.0, 0.0, 0.0, 1.0];
        let (vals, _) = sym_eigen(&m, 2);
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_of_random_symmetric_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.gen_range(2..6);
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = rng.gen::<f64>() * 2.0 - 1.0;
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            let (vals, vecs) = sym_eigen(&m, n);
            // A v = lambda v for each pair
            for (lambda, vec) in vals.iter().zip(&vecs) {
                for row in 0..n {
                    let av: f64 = (0..n).map(|c| m[row * n + c] * vec[c]).sum();
                    assert!((av - lambda * vec[row]).abs() < 1e-9);
                }
            }
            // orthonormality
            for i in 0..n {
                for j in 0..n {
                    let d = dot(&vecs[i], &vecs[j]);
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn pinv_solves_full_rank_system() {
        let g = [4.0, 1.0, 1.0, 3.0];
        let rhs = [1.0, 2.0];
        let x = pinv_solve(&g, 2, &rhs);
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_drops_null_directions() {
        // rank-1 Gram: G = u u^T with u = (1, 1)
        let g = [1.0, 1.0, 1.0, 1.0];
        let rhs = [2.0, 2.0];
        let x = pinv_solve(&g, 2, &rhs);
        // minimum-norm solution is (1, 1)
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 1.0).abs() < 1e-12);
    }
}
