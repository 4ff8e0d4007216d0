//! Datasets, hyperparameters and the trained model container.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;

/// A fully labeled source set and a partially labeled target set.
///
/// Features are stored one point per row. `target_labels` covers the first
/// `target_labels.len()` rows of `target_features`; the remaining target rows
/// are unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub source_features: DMatrix<f64>,
    pub source_labels: Vec<i8>,
    pub target_features: DMatrix<f64>,
    pub target_labels: Vec<i8>,
}

impl DatasetPair {
    /// Builds a pair from raw integer labels, rejecting anything that is not
    /// exactly +1 or −1.
    pub fn new(
        source_features: DMatrix<f64>,
        source_labels: &[i64],
        target_features: DMatrix<f64>,
        target_labels: &[i64],
    ) -> Result<Self> {
        let pair = DatasetPair {
            source_features,
            source_labels: to_labels(source_labels, "source")?,
            target_features,
            target_labels: to_labels(target_labels, "target")?,
        };
        pair.check()?;
        Ok(pair)
    }

    pub fn dim(&self) -> usize {
        self.source_features.ncols()
    }

    pub fn n_source(&self) -> usize {
        self.source_features.nrows()
    }

    pub fn n_target(&self) -> usize {
        self.target_features.nrows()
    }

    pub fn n_target_labeled(&self) -> usize {
        self.target_labels.len()
    }

    /// Checks the structural invariants of the pair alone.
    pub fn check(&self) -> Result<()> {
        let m = self.dim();
        let (n1, n2, n3) = (self.n_source(), self.n_target(), self.n_target_labeled());
        if m == 0 || n1 == 0 || n2 == 0 {
            return Err(Error::Empty(format!(
                "dataset needs m, n1, n2 > 0 (m = {m}, n1 = {n1}, n2 = {n2})"
            )));
        }
        if self.target_features.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "source has {m} features, target has {}",
                self.target_features.ncols()
            )));
        }
        if self.source_labels.len() != n1 {
            return Err(Error::DimensionMismatch(format!(
                "{n1} source rows but {} source labels",
                self.source_labels.len()
            )));
        }
        if n3 > n2 {
            return Err(Error::DimensionMismatch(format!(
                "{n3} target labels for {n2} target rows"
            )));
        }
        for (set, labels) in [("source", &self.source_labels), ("target", &self.target_labels)] {
            if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y != 1 && y != -1) {
                return Err(Error::InvalidLabel {
                    value: y as i64,
                    location: format!("{set} row {i}"),
                });
            }
        }
        if self.source_features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("source features".into()));
        }
        if self.target_features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target features".into()));
        }
        Ok(())
    }
}

fn to_labels(raw: &[i64], set: &str) -> Result<Vec<i8>> {
    raw.iter()
        .enumerate()
        .map(|(i, &y)| match y {
            1 => Ok(1),
            -1 => Ok(-1),
            _ => Err(Error::InvalidLabel {
                value: y,
                location: format!("{set} row {i}"),
            }),
        })
        .collect()
}

/// Which end of the spectrum of Φ the subspace step keeps.
///
/// `Smallest` minimizes the trace objective. `Largest` follows the literal
/// "largest r eigenvalues" reading and does not minimize the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenSelection {
    #[default]
    Smallest,
    Largest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Weight of the adaptation-vector penalty.
    pub c1: f64,
    /// Weight of the two neighborhood reconstruction terms.
    pub c2: f64,
    /// Weight of the subspace mean-matching term.
    pub c3: f64,
    /// Subspace dimension.
    pub r: usize,
    /// Neighbors per point in the reconstruction graphs.
    pub k: usize,
    /// Upper bound on each instance weight.
    pub delta: f64,
    /// Base step of the classifier descent.
    pub rho: f64,
    pub loss: LossKind,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub tol: f64,
    pub seed: u64,
    #[serde(default)]
    pub eigen_selection: EigenSelection,
}

impl Hyperparams {
    /// Defaults for a feature dimension `m`.
    pub fn for_dim(m: usize) -> Self {
        Hyperparams {
            c1: 10.0,
            c2: 1.0,
            c3: 100.0,
            r: m.saturating_sub(1).clamp(1, 10),
            k: 5,
            delta: 3.0,
            rho: 1e-3,
            loss: LossKind::Logistic,
            max_outer_iters: 100,
            max_inner_iters: 50,
            tol: 1e-5,
            seed: 0,
            eigen_selection: EigenSelection::Smallest,
        }
    }

    /// Checks the hyperparameters against a feature dimension.
    pub fn check(&self, m: usize) -> Result<()> {
        for (name, v) in [("C1", self.c1), ("C2", self.c2), ("C3", self.c3)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidHyperparam(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.delta.is_nan() || self.delta < 1.0 {
            return Err(Error::InfeasibleDelta(self.delta));
        }
        if self.r == 0 || self.r >= m {
            return Err(Error::SubspaceDim { r: self.r, m });
        }
        if self.k == 0 {
            return Err(Error::InvalidHyperparam("k must be at least 1".into()));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidHyperparam(format!(
                "step ρ must be positive, got {}",
                self.rho
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidHyperparam(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::InvalidHyperparam(
                "iteration limits must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Checks that training can run on `pair` with `hp`.
pub fn validate(pair: &DatasetPair, hp: &Hyperparams) -> Result<()> {
    pair.check()?;
    hp.check(pair.dim())?;
    let n = pair.n_source().min(pair.n_target());
    if hp.k + 1 > n {
        return Err(Error::NeighborCount { k: hp.k, n });
    }
    Ok(())
}

/// All learned parameters.
///
/// `phi` and `varphi` are the full source and target classifier vectors;
/// `u` and `v` are their adaptation parts relative to the shared classifier
/// `thetaᵀw`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub theta: DMatrix<f64>,
    pub w: DVector<f64>,
    pub phi: DVector<f64>,
    pub varphi: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub pi: DVector<f64>,
    pub loss: LossKind,
}

/// Deviations of a state from its invariants, all in max-abs form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub orthonormality: f64,
    pub pi_bound_violation: f64,
    pub pi_sum_error: f64,
    pub uv_identity: f64,
}

impl ModelState {
    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    pub fn subspace_dim(&self) -> usize {
        self.theta.nrows()
    }

    /// Sets `u` and `v` from the current `theta`, `w`, `phi`, `varphi`.
    pub fn sync_adaptation(&mut self) {
        let shared = self.theta.tr_mul(&self.w);
        self.u = &self.phi - &shared;
        self.v = &self.varphi - &shared;
    }

    pub fn feasibility(&self, delta: f64) -> Feasibility {
        let r = self.subspace_dim();
        let gram = &self.theta * self.theta.transpose();
        let orthonormality = (gram - DMatrix::<f64>::identity(r, r)).amax();
        let pi_bound_violation = self
            .pi
            .iter()
            .map(|&p| (-p).max(p - delta).max(0.0))
            .fold(0.0, f64::max);
        let pi_sum_error = (self.pi.sum() - self.pi.len() as f64).abs();
        let shared = self.theta.tr_mul(&self.w);
        let du = (&self.phi - &shared - &self.u).amax();
        let dv = (&self.varphi - &shared - &self.v).amax();
        Feasibility {
            orthonormality,
            pi_bound_violation,
            pi_sum_error,
            uv_identity: du.max(dv),
        }
    }

    /// Checks dimensions and invariants, e.g. after loading a model.
    pub fn check(&self, delta: f64) -> Result<()> {
        let m = self.dim();
        let r = self.subspace_dim();
        if self.theta.ncols() != m
            || self.w.len() != r
            || self.varphi.len() != m
            || self.u.len() != m
            || self.v.len() != m
        {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent model dimensions (m = {m}, r = {r})"
            )));
        }
        let mut all = self
            .theta
            .iter()
            .chain(self.w.iter())
            .chain(self.phi.iter())
            .chain(self.varphi.iter())
            .chain(self.u.iter())
            .chain(self.v.iter())
            .chain(self.pi.iter());
        if all.any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let f = self.feasibility(delta);
        let n1 = self.pi.len() as f64;
        if f.orthonormality > 1e-10 {
            return Err(Error::Format(format!(
                "theta rows are not orthonormal (deviation {:e})",
                f.orthonormality
            )));
        }
        if f.pi_bound_violation > 1e-8 || f.pi_sum_error > 1e-8 * n1.max(1.0) {
            return Err(Error::Format("instance weights violate their constraints".into()));
        }
        if f.uv_identity > 1e-10 {
            return Err(Error::Format(format!(
                "adaptation vectors inconsistent with theta, w (deviation {:e})",
                f.uv_identity
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_pair(labels: &[i64]) -> Result<DatasetPair> {
        let xs = DMatrix::from_row_slice(4, 3, &[0., 1., 2., 1., 0., 1., 2., 2., 0., 1., 1., 1.]);
        let xt = xs.map(|v| v + 0.5);
        DatasetPair::new(xs, labels, xt, &[1, -1])
    }

    fn small_hp() -> Hyperparams {
        Hyperparams {
            delta: 2.0,
            r: 2,
            k: 1,
            ..Hyperparams::for_dim(3)
        }
    }

    #[test]
    fn accepts_consistent_input() {
        let pair = small_pair(&[1, -1, 1, -1]).unwrap();
        validate(&pair, &small_hp()).unwrap();
    }

    #[test]
    fn rejects_zero_label() {
        let err = small_pair(&[1, -1, 0, -1]).unwrap_err();
        assert!(err.to_string().contains("label outside {+1,−1}"), "{err}");

        let mut pair = small_pair(&[1, -1, 1, -1]).unwrap();
        pair.target_labels[1] = 0;
        let err = validate(&pair, &small_hp()).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel { value: 0, .. }));
    }

    #[test]
    fn rejects_small_delta() {
        let pair = small_pair(&[1, -1, 1, -1]).unwrap();
        let hp = Hyperparams {
            delta: 0.5,
            ..small_hp()
        };
        let err = validate(&pair, &hp).unwrap_err();
        assert!(err.to_string().contains("δ < 1 makes π constraints infeasible"));
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let pair = small_pair(&[1, -1, 1, -1]).unwrap();
        let hp = Hyperparams { r: 3, ..small_hp() };
        assert!(matches!(validate(&pair, &hp), Err(Error::SubspaceDim { .. })));
        let hp = Hyperparams { k: 4, ..small_hp() };
        assert!(matches!(validate(&pair, &hp), Err(Error::NeighborCount { .. })));

        let mut bad = pair.clone();
        bad.target_features[(2, 1)] = f64::NAN;
        assert!(matches!(validate(&bad, &small_hp()), Err(Error::NonFinite(_))));

        let mut bad = pair.clone();
        bad.target_features = DMatrix::zeros(4, 2);
        assert!(matches!(validate(&bad, &small_hp()), Err(Error::DimensionMismatch(_))));

        let mut bad = pair;
        bad.target_labels = vec![1; 5];
        assert!(matches!(validate(&bad, &small_hp()), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn defaults() {
        let hp = Hyperparams::for_dim(5);
        assert_eq!((hp.c1, hp.c2, hp.c3), (10.0, 1.0, 100.0));
        assert_eq!((hp.r, hp.k, hp.delta, hp.rho), (4, 5, 3.0, 1e-3));
        assert_eq!(Hyperparams::for_dim(50).r, 10);
    }
}
