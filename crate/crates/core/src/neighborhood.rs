//! k-nearest-neighbor sets and simplex-constrained local reconstruction
//! coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::{self, QpProblem};

/// Ridge added to the neighbor Gram matrix so duplicate or collinear
/// neighbors still give a well-posed problem.
pub const GRAM_RIDGE: f64 = 1e-8;

/// Neighbor lists and reconstruction coefficients, aligned row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub coeffs: Vec<Vec<f64>>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// The `n×n` matrix with `coeffs[i]` scattered into row `i`.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut w = DMatrix::zeros(n, n);
        for (i, (nb, co)) in self.neighbors.iter().zip(&self.coeffs).enumerate() {
            for (&j, &c) in nb.iter().zip(co) {
                w[(i, j)] += c;
            }
        }
        w
    }

    /// `I − W`: row `i` applied to a per-point quantity gives that point's
    /// reconstruction residual.
    pub fn residual_operator(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::identity(n, n) - self.weight_matrix()
    }
}

/// For each row of `points`, the `k` other rows closest in Euclidean distance,
/// nearest first, ties broken by lower index.
pub fn build_knn(points: &DMatrix<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(Error::NeighborCount { k, n });
    }
    let rows: Vec<DVector<f64>> = (0..n).map(|i| points.row(i).transpose()).collect();
    Ok((0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((&rows[i] - &rows[j]).norm_squared(), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.truncate(k);
            others.into_iter().map(|(_, j)| j).collect()
        })
        .collect())
}

/// Convex combination weights of `neighbors` (one per row) that best
/// reconstruct `x` in the least-squares sense.
pub fn solve_reconstruction(x: &DVector<f64>, neighbors: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = neighbors.nrows();
    if k == 0 {
        return Err(Error::Empty("reconstruction with no neighbors".into()));
    }
    if neighbors.ncols() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} features, neighbors have {}",
            x.len(),
            neighbors.ncols()
        )));
    }
    if x.iter().chain(neighbors.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reconstruction input".into()));
    }
    if k == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    // ‖x − Nᵀω‖² = ωᵀ(N Nᵀ)ω − 2(N x)ᵀω + ‖x‖²
    let gram = neighbors * neighbors.transpose();
    let hessian = (gram + DMatrix::<f64>::identity(k, k) * GRAM_RIDGE) * 2.0;
    let linear = (neighbors * x) * -2.0;
    let problem = QpProblem {
        hessian,
        linear,
        lower: DVector::zeros(k),
        upper: DVector::from_element(k, 1.0),
        eq_sum: 1.0,
    };
    Ok(qp::solve(&problem)?.x)
}

/// kNN sets plus reconstruction coefficients for every row of `points`.
pub fn build_graph(points: &DMatrix<f64>, k: usize) -> Result<NeighborGraph> {
    let neighbors = build_knn(points, k)?;
    let coeffs = neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let x = points.row(i).transpose();
            let rows = DMatrix::from_fn(nb.len(), points.ncols(), |a, c| points[(nb[a], c)]);
            solve_reconstruction(&x, &rows).map(|w| w.iter().copied().collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(NeighborGraph { neighbors, coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Brute force over all pairs, sorted by (distance, index).
    fn knn_oracle(points: &DMatrix<f64>, k: usize) -> Vec<Vec<usize>> {
        let n = points.nrows();
        (0..n)
            .map(|i| {
                let mut d: Vec<(f64, usize)> = Vec::new();
                for j in 0..n {
                    if j != i {
                        let mut s = 0.0;
                        for c in 0..points.ncols() {
                            s += (points[(i, c)] - points[(j, c)]).powi(2);
                        }
                        d.push((s.sqrt(), j));
                    }
                }
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                d.iter().take(k).map(|p| p.1).collect()
            })
            .collect()
    }

    fn residual(x: &DVector<f64>, nb: &DMatrix<f64>, w: &[f64]) -> f64 {
        let mut r = x.clone();
        for (a, &wa) in w.iter().enumerate() {
            r -= nb.row(a).transpose() * wa;
        }
        r.norm_squared()
    }

    /// Best residual over a simplex grid with spacing `step` (k ≤ 3).
    pub(crate) fn grid_oracle(x: &DVector<f64>, nb: &DMatrix<f64>, step: f64) -> f64 {
        let k = nb.nrows();
        let steps = (1.0 / step).round() as usize;
        let mut best = f64::INFINITY;
        match k {
            1 => best = residual(x, nb, &[1.0]),
            2 => {
                for a in 0..=steps {
                    let w0 = a as f64 * step;
                    best = best.min(residual(x, nb, &[w0, 1.0 - w0]));
                }
            }
            3 => {
                for a in 0..=steps {
                    for b in 0..=(steps - a) {
                        let (w0, w1) = (a as f64 * step, b as f64 * step);
                        best = best.min(residual(x, nb, &[w0, w1, (1.0 - w0 - w1).max(0.0)]));
                    }
                }
            }
            _ => unreachable!(),
        }
        best
    }

    fn assert_simplex(row: &[f64]) {
        assert!(row.iter().all(|&w| w >= -1e-12), "{row:?}");
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-8, "{row:?}");
    }

    #[test]
    fn knn_on_a_line() {
        let p = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 10.0]);
        assert_eq!(build_knn(&p, 1).unwrap(), vec![vec![1], vec![0], vec![1]]);
        let all = build_knn(&p, 2).unwrap();
        for (i, set) in all.iter().enumerate() {
            let mut s = set.clone();
            s.sort();
            let expected: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            assert_eq!(s, expected);
        }
        assert!(matches!(build_knn(&p, 3), Err(Error::NeighborCount { .. })));
    }

    #[test]
    fn knn_ties_by_index() {
        let p = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 1.0]);
        assert_eq!(build_knn(&p, 1).unwrap()[1], vec![0]);
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_points(&mut rng, 20, 3);
        assert_eq!(build_knn(&p, 4).unwrap(), knn_oracle(&p, 4));
    }

    #[test]
    fn knn_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_points(&mut rng, 12, 2);
        let perm: Vec<usize> = vec![3, 7, 0, 11, 5, 1, 9, 2, 10, 4, 8, 6];
        let q = DMatrix::from_fn(12, 2, |i, c| p[(perm[i], c)]);
        let sets_p = build_knn(&p, 3).unwrap();
        let sets_q = build_knn(&q, 3).unwrap();
        for (i, set) in sets_q.iter().enumerate() {
            let mapped: Vec<usize> = set.iter().map(|&j| perm[j]).collect();
            assert_eq!(mapped, sets_p[perm[i]]);
        }
    }

    #[test]
    fn reconstruction_exact_cases() {
        let x = DVector::from_column_slice(&[0.3, -0.2]);
        let nb = DMatrix::from_row_slice(1, 2, &[0.3, -0.2]);
        assert_eq!(solve_reconstruction(&x, &nb).unwrap().as_slice(), &[1.0]);

        let x = DVector::from_column_slice(&[1.0, 1.0]);
        let nb = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 1.0]);
        let w = solve_reconstruction(&x, &nb).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-9 && (w[1] - 0.5).abs() < 1e-9, "{w}");
    }

    #[test]
    fn reconstruction_rejects_non_finite() {
        let x = DVector::from_column_slice(&[f64::NAN, 1.0]);
        let nb = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 1.0]);
        assert!(matches!(solve_reconstruction(&x, &nb), Err(Error::NonFinite(_))));
    }

    #[test]
    fn reconstruction_beats_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let nb = random_points(&mut rng, 3, 2);
            let w = solve_reconstruction(&x, &nb).unwrap();
            assert_simplex(w.as_slice());
            let ours = residual(&x, &nb, w.as_slice());
            assert!(ours <= grid_oracle(&x, &nb, 1e-3) + 1e-6);
        }
    }

    #[test]
    fn graph_on_collinear_points() {
        let p = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let g = build_graph(&p, 2).unwrap();
        let mut mid: Vec<(usize, f64)> = g.neighbors[1].iter().copied().zip(g.coeffs[1].iter().copied()).collect();
        mid.sort_by_key(|e| e.0);
        assert!((mid[0].1 - 0.5).abs() < 1e-8 && (mid[1].1 - 0.5).abs() < 1e-8, "{mid:?}");
    }

    #[test]
    fn graph_with_duplicates_stays_on_simplex() {
        let p = DMatrix::from_row_slice(5, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 0.0, 2.0]);
        let g = build_graph(&p, 3).unwrap();
        for row in &g.coeffs {
            assert_simplex(row);
        }
    }

    #[test]
    fn graph_rows_match_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_points(&mut rng, 15, 2);
        let g = build_graph(&p, 3).unwrap();
        for i in 0..15 {
            assert!(!g.neighbors[i].contains(&i));
            assert_simplex(&g.coeffs[i]);
            let x = p.row(i).transpose();
            let nb = DMatrix::from_fn(3, 2, |a, c| p[(g.neighbors[i][a], c)]);
            let ours = residual(&x, &nb, &g.coeffs[i]);
            assert!(ours <= grid_oracle(&x, &nb, 1e-3) + 1e-6, "row {i}");
        }
        let w = g.weight_matrix();
        for i in 0..15 {
            assert!((w.row(i).sum() - 1.0).abs() < 1e-8);
        }
    }
}
