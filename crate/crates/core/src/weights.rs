//! The instance-weight block. With everything else fixed, the source weights
//! `π` minimize a convex quadratic over `0 ≤ π ≤ δ`, `Σπ = n1`:
//!
//! ```text
//!     τᵀπ + πᵀ R π + (C3/2) ‖Γπ − ϑ‖²
//! ```
//!
//! where `τ` holds the current source losses, `R = C2 Σ (aᵢ−ωᵢ)(aᵢ−ωᵢ)ᵀ` is the
//! neighborhood reconstruction penalty, and `Γπ − ϑ` is the projected
//! difference between the weighted source mean and the target mean.

use nalgebra::{DMatrix, DVector};

use crate::data::{DatasetPair, Hyperparams, ModelState};
use crate::error::{Error, Result};
use crate::neighborhood::NeighborGraph;
use crate::qp::{self, QpProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightStepProblem {
    pub tau: DVector<f64>,
    pub recon_quad: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub vartheta: DVector<f64>,
    pub c3: f64,
    pub delta: f64,
}

/// `Σᵢ (aᵢ−ωᵢ)(aᵢ−ωᵢ)ᵀ = (I − W)ᵀ(I − W)` for a source graph.
pub fn reconstruction_gram(graph_s: &NeighborGraph) -> DMatrix<f64> {
    let b = graph_s.residual_operator();
    b.tr_mul(&b)
}

pub fn build_weight_problem(
    state: &ModelState,
    pair: &DatasetPair,
    graph_s: &NeighborGraph,
    hp: &Hyperparams,
) -> Result<WeightStepProblem> {
    if graph_s.len() != pair.n_source() {
        return Err(Error::DimensionMismatch(format!(
            "source graph has {} rows for {} source points",
            graph_s.len(),
            pair.n_source()
        )));
    }
    build_with_gram(state, pair, &reconstruction_gram(graph_s), hp)
}

/// Same as [`build_weight_problem`] with a precomputed
/// [`reconstruction_gram`].
pub fn build_with_gram(
    state: &ModelState,
    pair: &DatasetPair,
    gram: &DMatrix<f64>,
    hp: &Hyperparams,
) -> Result<WeightStepProblem> {
    let n1 = pair.n_source();
    if state.phi.len() != pair.dim() || state.theta.ncols() != pair.dim() || gram.shape() != (n1, n1) {
        return Err(Error::DimensionMismatch(
            "model state or reconstruction matrix does not match the data".into(),
        ));
    }
    let scores = &pair.source_features * &state.phi;
    let tau = DVector::from_iterator(
        n1,
        scores
            .iter()
            .zip(&pair.source_labels)
            .map(|(&f, &y)| state.loss.value(y as f64, f)),
    );
    let gamma = &state.theta * pair.source_features.transpose() / n1 as f64;
    let vartheta = &state.theta * crate::subspace::column_mean(&pair.target_features);
    Ok(WeightStepProblem {
        tau,
        recon_quad: gram * hp.c2,
        gamma,
        vartheta,
        c3: hp.c3,
        delta: hp.delta,
    })
}

impl WeightStepProblem {
    pub fn n_source(&self) -> usize {
        self.tau.len()
    }

    /// The weight-step objective including its constant `(C3/2) ϑᵀϑ`.
    pub fn objective(&self, pi: &DVector<f64>) -> f64 {
        self.tau.dot(pi)
            + pi.dot(&(&self.recon_quad * pi))
            + 0.5 * self.c3 * (&self.gamma * pi - &self.vartheta).norm_squared()
    }

    /// The QP handed to the solver. Its objective is
    /// [`objective`](Self::objective) minus `(C3/2) ϑᵀϑ`.
    pub fn to_qp(&self) -> QpProblem {
        let n1 = self.n_source();
        let mut hessian = &self.recon_quad * 2.0 + self.gamma.tr_mul(&self.gamma) * self.c3;
        let sym = (&hessian + hessian.transpose()) * 0.5;
        hessian.copy_from(&sym);
        QpProblem {
            hessian,
            linear: &self.tau - self.gamma.tr_mul(&self.vartheta) * self.c3,
            lower: DVector::zeros(n1),
            upper: DVector::from_element(n1, self.delta),
            eq_sum: n1 as f64,
        }
    }

    pub fn constant(&self) -> f64 {
        0.5 * self.c3 * self.vartheta.norm_squared()
    }
}

pub fn update_pi(p: &WeightStepProblem) -> Result<DVector<f64>> {
    Ok(qp::solve(&p.to_qp())?.x)
}

/// Warm-started from the current weights; never returns a worse objective
/// than `current`.
pub fn update_pi_from(p: &WeightStepProblem, current: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(qp::solve_from(&p.to_qp(), current)?.x)
}
