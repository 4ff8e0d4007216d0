//! The classifier block: the objective `Q(φ, 𝛗)` over the full source and
//! target classifier vectors, its subgradients, the backtracked descent step,
//! recovery of the adaptation vectors, and prediction.

use nalgebra::{DMatrix, DVector};

use crate::data::{DatasetPair, Hyperparams, ModelState};
use crate::error::{Error, Result};
use crate::neighborhood::NeighborGraph;

/// Halvings tried per descent step before giving up.
pub const MAX_HALVINGS: u32 = 20;

/// Rows `x_j − Σ_k ω_jk x_k` for every target point.
pub fn target_residuals(pair: &DatasetPair, graph_t: &NeighborGraph) -> Result<DMatrix<f64>> {
    if graph_t.len() != pair.n_target() {
        return Err(Error::DimensionMismatch(format!(
            "target graph has {} rows for {} target points",
            graph_t.len(),
            pair.n_target()
        )));
    }
    Ok(graph_t.residual_operator() * &pair.target_features)
}

/// Everything `Q` holds fixed: data, graph residuals, the shared classifier
/// `Θᵀw`, and the instance weights.
pub struct QContext<'a> {
    pub pair: &'a DatasetPair,
    pub residuals: &'a DMatrix<f64>,
    pub shared: DVector<f64>,
    pub pi: &'a DVector<f64>,
    pub hp: &'a Hyperparams,
}

impl<'a> QContext<'a> {
    pub fn new(
        pair: &'a DatasetPair,
        residuals: &'a DMatrix<f64>,
        theta: &DMatrix<f64>,
        w: &DVector<f64>,
        pi: &'a DVector<f64>,
        hp: &'a Hyperparams,
    ) -> Result<Self> {
        let m = pair.dim();
        if theta.ncols() != m || theta.nrows() != w.len() {
            return Err(Error::DimensionMismatch(format!(
                "theta {}×{} and w of length {} for {m} features",
                theta.nrows(),
                theta.ncols(),
                w.len()
            )));
        }
        if pi.len() != pair.n_source() || residuals.shape() != (pair.n_target(), m) {
            return Err(Error::DimensionMismatch(
                "instance weights or target residuals do not match the data".into(),
            ));
        }
        Ok(QContext {
            pair,
            residuals,
            shared: theta.tr_mul(w),
            pi,
            hp,
        })
    }

    fn check(&self, phi: &DVector<f64>, varphi: &DVector<f64>) -> Result<()> {
        let m = self.pair.dim();
        if phi.len() != m || varphi.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "classifier vectors of length {}/{} for {m} features",
                phi.len(),
                varphi.len()
            )));
        }
        Ok(())
    }

    pub fn objective(&self, phi: &DVector<f64>, varphi: &DVector<f64>) -> f64 {
        let loss = self.hp.loss;
        let source_scores = &self.pair.source_features * phi;
        let source: f64 = source_scores
            .iter()
            .zip(&self.pair.source_labels)
            .zip(self.pi.iter())
            .map(|((&f, &y), &p)| loss.value(y as f64, f) * p)
            .sum();
        let n3 = self.pair.n_target_labeled();
        let target_scores = self.pair.target_features.rows(0, n3) * varphi;
        let target: f64 = target_scores
            .iter()
            .zip(&self.pair.target_labels)
            .map(|(&f, &y)| loss.value(y as f64, f))
            .sum();
        let adapt = 0.5 * self.hp.c1 * ((phi - &self.shared).norm_squared() + (varphi - &self.shared).norm_squared());
        let recon = self.hp.c2 * (self.residuals * varphi).norm_squared();
        source + target + adapt + recon
    }

    pub fn gradients(&self, phi: &DVector<f64>, varphi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let loss = self.hp.loss;
        let pair = self.pair;
        let source_scores = &pair.source_features * phi;
        let coef = DVector::from_iterator(
            pair.n_source(),
            source_scores
                .iter()
                .zip(&pair.source_labels)
                .zip(self.pi.iter())
                .map(|((&f, &y), &p)| loss.derivative(y as f64, f) * p),
        );
        let grad_phi = pair.source_features.tr_mul(&coef) + (phi - &self.shared) * self.hp.c1;

        let n3 = pair.n_target_labeled();
        let mut grad_varphi = (varphi - &self.shared) * self.hp.c1;
        if n3 > 0 {
            let labeled = pair.target_features.rows(0, n3);
            let scores = labeled * varphi;
            let coef = DVector::from_iterator(
                n3,
                scores
                    .iter()
                    .zip(&pair.target_labels)
                    .map(|(&f, &y)| loss.derivative(y as f64, f)),
            );
            grad_varphi += labeled.tr_mul(&coef);
        }
        if self.hp.c2 != 0.0 {
            grad_varphi += self.residuals.tr_mul(&(self.residuals * varphi)) * (2.0 * self.hp.c2);
        }
        (grad_phi, grad_varphi)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn q_objective(
    phi: &DVector<f64>,
    varphi: &DVector<f64>,
    theta: &DMatrix<f64>,
    w: &DVector<f64>,
    pi: &DVector<f64>,
    pair: &DatasetPair,
    graph_t: &NeighborGraph,
    hp: &Hyperparams,
) -> Result<f64> {
    let residuals = target_residuals(pair, graph_t)?;
    let ctx = QContext::new(pair, &residuals, theta, w, pi, hp)?;
    ctx.check(phi, varphi)?;
    Ok(ctx.objective(phi, varphi))
}

#[allow(clippy::too_many_arguments)]
pub fn q_subgradients(
    phi: &DVector<f64>,
    varphi: &DVector<f64>,
    theta: &DMatrix<f64>,
    w: &DVector<f64>,
    pi: &DVector<f64>,
    pair: &DatasetPair,
    graph_t: &NeighborGraph,
    hp: &Hyperparams,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let residuals = target_residuals(pair, graph_t)?;
    let ctx = QContext::new(pair, &residuals, theta, w, pi, hp)?;
    ctx.check(phi, varphi)?;
    Ok(ctx.gradients(phi, varphi))
}

/// Result of the backtracked subgradient descent on `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub phi: DVector<f64>,
    pub varphi: DVector<f64>,
    pub q_initial: f64,
    pub q_final: f64,
    pub accepted_steps: usize,
    /// `Q` after each accepted step.
    pub q_trace: Vec<f64>,
}

/// Up to `max_inner_iters` joint steps `φ ← φ − ρ∇_φQ`, `𝛗 ← 𝛗 − ρ∇_𝛗Q`.
/// A step is kept only if it lowers `Q`; otherwise `ρ` is halved for that
/// step, and the descent stops after [`MAX_HALVINGS`] failed halvings.
pub fn descend(ctx: &QContext<'_>, phi: &DVector<f64>, varphi: &DVector<f64>) -> Result<Descent> {
    ctx.check(phi, varphi)?;
    let mut phi = phi.clone();
    let mut varphi = varphi.clone();
    let q_initial = ctx.objective(&phi, &varphi);
    let mut q = q_initial;
    let mut q_trace = Vec::new();

    'outer: for _ in 0..ctx.hp.max_inner_iters {
        let (g_phi, g_varphi) = ctx.gradients(&phi, &varphi);
        if g_phi.iter().chain(g_varphi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        if g_phi.amax() == 0.0 && g_varphi.amax() == 0.0 {
            break;
        }
        let mut step = ctx.hp.rho;
        for _ in 0..=MAX_HALVINGS {
            let cand_phi = &phi - &g_phi * step;
            let cand_varphi = &varphi - &g_varphi * step;
            let qc = ctx.objective(&cand_phi, &cand_varphi);
            if qc < q {
                phi = cand_phi;
                varphi = cand_varphi;
                q = qc;
                q_trace.push(q);
                continue 'outer;
            }
            step *= 0.5;
        }
        break;
    }

    Ok(Descent {
        phi,
        varphi,
        q_initial,
        q_final: q,
        accepted_steps: q_trace.len(),
        q_trace,
    })
}

/// The classifier step of the block loop, run from the vectors in `state`.
pub fn update_phi_varphi(
    state: &ModelState,
    pair: &DatasetPair,
    graph_t: &NeighborGraph,
    hp: &Hyperparams,
) -> Result<Descent> {
    let residuals = target_residuals(pair, graph_t)?;
    let ctx = QContext::new(pair, &residuals, &state.theta, &state.w, &state.pi, hp)?;
    descend(&ctx, &state.phi, &state.varphi)
}

/// `u = φ − Θᵀw`, `v = 𝛗 − Θᵀw`.
pub fn recover_u_v(
    theta: &DMatrix<f64>,
    w: &DVector<f64>,
    phi: &DVector<f64>,
    varphi: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if theta.nrows() != w.len() || theta.ncols() != phi.len() || phi.len() != varphi.len() {
        return Err(Error::DimensionMismatch("theta, w, φ, 𝛗 disagree in size".into()));
    }
    let shared = theta.tr_mul(w);
    Ok((phi - &shared, varphi - &shared))
}

/// Score `𝛗ᵀx` and its sign; a zero score predicts +1.
pub fn predict_target(varphi: &DVector<f64>, x: &DVector<f64>) -> Result<(f64, i8)> {
    predict_with(varphi, x)
}

/// Same as [`predict_target`] with the source classifier `φ`.
pub fn predict_source(phi: &DVector<f64>, x: &DVector<f64>) -> Result<(f64, i8)> {
    predict_with(phi, x)
}

fn predict_with(weights: &DVector<f64>, x: &DVector<f64>) -> Result<(f64, i8)> {
    if weights.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} features, input has {}",
            weights.len(),
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction input".into()));
    }
    let score = weights.dot(x);
    Ok((score, label_of(score)))
}

#[inline]
pub fn label_of(score: f64) -> i8 {
    if score >= 0.0 {
        1
    } else {
        -1
    }
}

/// Scores of every row of `x`.
pub fn score_rows(weights: &DVector<f64>, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if weights.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} features, input has {}",
            weights.len(),
            x.ncols()
        )));
    }
    Ok(x * weights)
}
