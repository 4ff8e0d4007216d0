//! The shared-subspace block: projected domain means, the matrix Φ whose
//! trace form the subspace minimizes, and the closed-form `theta`/`w` updates.

use nalgebra::{DMatrix, DVector};

use crate::data::{DatasetPair, EigenSelection, Hyperparams};
use crate::error::{Error, Result};

/// Domain means in the subspace, and the raw weighted mean difference.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEmbeddings {
    pub mu_s: DVector<f64>,
    pub mu_t: DVector<f64>,
    pub mu_s_pi: DVector<f64>,
    /// `(1/n1) Σ π_i x_i^s − (1/n2) Σ x_j^t`, before projection.
    pub d_raw: DVector<f64>,
}

/// Raw weighted mean difference `(1/n1) Xsᵀπ − (1/n2) Xtᵀ𝟏`.
pub fn weighted_mean_difference(pair: &DatasetPair, pi: &DVector<f64>) -> Result<DVector<f64>> {
    if pi.len() != pair.n_source() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} source points",
            pi.len(),
            pair.n_source()
        )));
    }
    let n1 = pair.n_source() as f64;
    let weighted = pair.source_features.tr_mul(pi) / n1;
    Ok(weighted - column_mean(&pair.target_features))
}

pub(crate) fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    x.row_mean().transpose()
}

pub fn projected_means(theta: &DMatrix<f64>, pair: &DatasetPair, pi: &DVector<f64>) -> Result<MeanEmbeddings> {
    if theta.ncols() != pair.dim() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} columns, data has {} features",
            theta.ncols(),
            pair.dim()
        )));
    }
    let d_raw = weighted_mean_difference(pair, pi)?;
    let n1 = pair.n_source() as f64;
    let mu_s = theta * column_mean(&pair.source_features);
    let mu_t = theta * column_mean(&pair.target_features);
    let mu_s_pi = theta * (pair.source_features.tr_mul(pi) / n1);
    Ok(MeanEmbeddings {
        mu_s,
        mu_t,
        mu_s_pi,
        d_raw,
    })
}

/// Φ = −(C1/4)(φ+𝛗)(φ+𝛗)ᵀ + (C3/2) d dᵀ with `d` the raw weighted mean
/// difference. With `w` at its optimum, the subspace block of the objective
/// equals a constant plus `Tr(Θ Φ Θᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceObjectiveMatrix {
    pub matrix: DMatrix<f64>,
}

impl SubspaceObjectiveMatrix {
    pub fn trace_form(&self, theta: &DMatrix<f64>) -> f64 {
        (theta * &self.matrix * theta.transpose()).trace()
    }
}

pub fn build_phi(
    phi: &DVector<f64>,
    varphi: &DVector<f64>,
    pi: &DVector<f64>,
    pair: &DatasetPair,
    hp: &Hyperparams,
) -> Result<SubspaceObjectiveMatrix> {
    let m = pair.dim();
    if phi.len() != m || varphi.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "classifier vectors of length {}/{} for {m} features",
            phi.len(),
            varphi.len()
        )));
    }
    let d = weighted_mean_difference(pair, pi)?;
    let s = phi + varphi;
    let mut matrix = (&d * d.transpose()) * (hp.c3 / 2.0) - (&s * s.transpose()) * (hp.c1 / 4.0);
    // exact symmetry
    let sym = (&matrix + matrix.transpose()) * 0.5;
    matrix.copy_from(&sym);
    Ok(SubspaceObjectiveMatrix { matrix })
}

/// Rows of the new `theta`: `r` orthonormal eigenvectors of Φ.
///
/// With [`EigenSelection::Smallest`] these belong to the `r` smallest
/// eigenvalues in ascending order, which is the global minimizer of
/// `Tr(Θ Φ Θᵀ)` over orthonormal `Θ`. Each eigenvector's first nonzero entry is
/// made positive; equal eigenvalues are ordered by the index of that entry.
///
/// If every eigenvalue is within `1e-12` of zero all choices are optimal and
/// `previous` is returned (or the first `r` coordinate axes without one).
pub fn update_theta(
    phi_mat: &SubspaceObjectiveMatrix,
    r: usize,
    selection: EigenSelection,
    previous: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let a = &phi_mat.matrix;
    let m = a.nrows();
    if a.ncols() != m || r == 0 || r > m {
        return Err(Error::DimensionMismatch(format!(
            "cannot take {r} eigenvectors of a {}×{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite entries in Φ".into()));
    }
    let eig = a.clone().symmetric_eigen();
    if eig.eigenvalues.amax() <= 1e-12 {
        return Ok(match previous {
            Some(p) if p.shape() == (r, m) => p.clone(),
            _ => DMatrix::identity(r, m),
        });
    }

    let pivot = |col: usize| -> usize {
        let v = eig.eigenvectors.column(col);
        (0..m).find(|&i| v[i].abs() > 1e-12).unwrap_or(0)
    };
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| {
        let (lx, ly) = (eig.eigenvalues[x], eig.eigenvalues[y]);
        if (lx - ly).abs() <= 1e-12 * scale {
            pivot(x).cmp(&pivot(y))
        } else {
            match selection {
                EigenSelection::Smallest => lx.total_cmp(&ly),
                EigenSelection::Largest => ly.total_cmp(&lx),
            }
        }
    });

    let mut theta = DMatrix::zeros(r, m);
    for (row, &col) in order.iter().take(r).enumerate() {
        let v = eig.eigenvectors.column(col);
        let sign = if v[pivot(col)] < 0.0 { -1.0 } else { 1.0 };
        let n = v.norm();
        for c in 0..m {
            theta[(row, c)] = sign * v[c] / n;
        }
    }
    Ok(theta)
}

/// `w = ½ Θ (φ + 𝛗)`, the minimizer of `‖φ − Θᵀw‖² + ‖𝛗 − Θᵀw‖²` for
/// orthonormal `Θ`.
pub fn update_w(theta: &DMatrix<f64>, phi: &DVector<f64>, varphi: &DVector<f64>) -> Result<DVector<f64>> {
    if theta.ncols() != phi.len() || phi.len() != varphi.len() {
        return Err(Error::DimensionMismatch(format!(
            "theta is {}×{}, classifier vectors have lengths {}/{}",
            theta.nrows(),
            theta.ncols(),
            phi.len(),
            varphi.len()
        )));
    }
    Ok(theta * (phi + varphi) * 0.5)
}
