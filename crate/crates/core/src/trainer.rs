//! The outer block-coordinate loop.
//!
//! Each outer iteration updates, in order, the subspace and shared classifier
//! `(Θ, w)`, the classifier vectors `(φ, 𝛗)`, and the instance weights `π`.
//! The `(Θ, w)` and `π` blocks are solved exactly; the classifier block takes
//! backtracked subgradient steps. The full objective therefore never
//! increases across a block, which the trace records.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifier::{self, QContext};
use crate::data::{validate, DatasetPair, Feasibility, Hyperparams, ModelState};
use crate::error::Result;
use crate::neighborhood::{build_graph, NeighborGraph};
use crate::subspace::{self, weighted_mean_difference};
use crate::weights::{self, reconstruction_gram};

/// The objective split into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub source_loss: f64,
    pub target_loss: f64,
    pub adaptation: f64,
    pub weight_reconstruction: f64,
    pub target_reconstruction: f64,
    pub matching: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.source_loss
            + self.target_loss
            + self.adaptation
            + self.weight_reconstruction
            + self.target_reconstruction
            + self.matching
    }
}

/// Fixed, graph-derived quantities the objective needs on every evaluation.
pub struct Objective<'a> {
    pair: &'a DatasetPair,
    hp: &'a Hyperparams,
    target_residuals: DMatrix<f64>,
    source_gram: DMatrix<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(
        pair: &'a DatasetPair,
        graph_s: &NeighborGraph,
        graph_t: &NeighborGraph,
        hp: &'a Hyperparams,
    ) -> Result<Self> {
        let target_residuals = classifier::target_residuals(pair, graph_t)?;
        if graph_s.len() != pair.n_source() {
            return Err(crate::Error::DimensionMismatch(format!(
                "source graph has {} rows for {} source points",
                graph_s.len(),
                pair.n_source()
            )));
        }
        Ok(Objective {
            pair,
            hp,
            target_residuals,
            source_gram: reconstruction_gram(graph_s),
        })
    }

    pub fn terms(&self, state: &ModelState) -> Result<ObjectiveTerms> {
        let (pair, hp) = (self.pair, self.hp);
        let loss = state.loss;
        let source_scores = &pair.source_features * &state.phi;
        let source_loss = source_scores
            .iter()
            .zip(&pair.source_labels)
            .zip(state.pi.iter())
            .map(|((&f, &y), &p)| loss.value(y as f64, f) * p)
            .sum();
        let n3 = pair.n_target_labeled();
        let target_scores = pair.target_features.rows(0, n3) * &state.varphi;
        let target_loss = target_scores
            .iter()
            .zip(&pair.target_labels)
            .map(|(&f, &y)| loss.value(y as f64, f))
            .sum();
        let (u, v) = classifier::recover_u_v(&state.theta, &state.w, &state.phi, &state.varphi)?;
        let adaptation = 0.5 * hp.c1 * (u.norm_squared() + v.norm_squared());
        let weight_reconstruction = hp.c2 * state.pi.dot(&(&self.source_gram * &state.pi));
        let target_reconstruction = hp.c2 * (&self.target_residuals * &state.varphi).norm_squared();
        let d = weighted_mean_difference(pair, &state.pi)?;
        let matching = 0.5 * hp.c3 * (&state.theta * d).norm_squared();
        Ok(ObjectiveTerms {
            source_loss,
            target_loss,
            adaptation,
            weight_reconstruction,
            target_reconstruction,
            matching,
        })
    }

    pub fn value(&self, state: &ModelState) -> Result<f64> {
        Ok(self.terms(state)?.total())
    }
}

/// Allowed increase of the full objective across the exact blocks (Θ and
/// `w` together, and `π`).
pub const EXACT_BLOCK_SLACK: f64 = 1e-9;
/// Allowed increase across the backtracked `φ`/`𝛗` block.
pub const DESCENT_BLOCK_SLACK: f64 = 1e-6;

/// The full training objective at `state`.
pub fn full_objective(
    state: &ModelState,
    pair: &DatasetPair,
    graph_s: &NeighborGraph,
    graph_t: &NeighborGraph,
    hp: &Hyperparams,
) -> Result<f64> {
    Objective::new(pair, graph_s, graph_t, hp)?.value(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub at_zero: usize,
    pub at_delta: usize,
}

/// One outer iteration. `objective_*` fields are the full objective at the
/// block boundaries, in update order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective_start: f64,
    pub objective_after_subspace: f64,
    pub objective_after_classifier: f64,
    pub objective_after_weights: f64,
    pub terms: ObjectiveTerms,
    pub q_value: f64,
    pub classifier_steps: usize,
    /// Weight-step objective at the new `π` and at `π = 𝟏`, same `Θ`.
    /// Both `None` when the weights are frozen.
    pub weight_step_objective: Option<f64>,
    pub weight_step_uniform_objective: Option<f64>,
    pub weights: WeightSummary,
    pub feasibility: Feasibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub iterations: usize,
    pub stop_reason: StopReason,
}

impl TrainingTrace {
    pub fn final_objective(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_objective, |r| r.objective_after_weights)
    }
}

/// Switches for reduced variants of the model, used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    /// Learn `Θ` and `w`. When false, `w` stays zero so `u = φ`, `v = 𝛗`.
    pub shared_classifier: bool,
    /// Learn `π`. When false, `π` stays at `𝟏`.
    pub learn_weights: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            shared_classifier: true,
            learn_weights: true,
        }
    }
}

pub fn fit(pair: &DatasetPair, hp: &Hyperparams) -> Result<(ModelState, TrainingTrace)> {
    fit_with(pair, hp, FitOptions::default(), |_, _| {})
}

/// [`fit`] with options and a callback run after every outer iteration.
pub fn fit_with<F>(
    pair: &DatasetPair,
    hp: &Hyperparams,
    options: FitOptions,
    mut observer: F,
) -> Result<(ModelState, TrainingTrace)>
where
    F: FnMut(&IterationRecord, &ModelState),
{
    validate(pair, hp)?;
    let graph_s = build_graph(&pair.source_features, hp.k)?;
    let graph_t = build_graph(&pair.target_features, hp.k)?;
    let objective = Objective::new(pair, &graph_s, &graph_t, hp)?;
    let (m, n1) = (pair.dim(), pair.n_source());
    let ones = DVector::from_element(n1, 1.0);

    let mut state = ModelState {
        theta: DMatrix::identity(hp.r, m),
        w: DVector::zeros(hp.r),
        phi: DVector::zeros(m),
        varphi: DVector::zeros(m),
        u: DVector::zeros(m),
        v: DVector::zeros(m),
        pi: ones.clone(),
        loss: hp.loss,
    };
    if options.shared_classifier {
        let phi_mat = subspace::build_phi(&state.phi, &state.varphi, &state.pi, pair, hp)?;
        state.theta = subspace::update_theta(&phi_mat, hp.r, hp.eigen_selection, None)?;
    }

    let initial_objective = objective.value(&state)?;
    let mut previous = initial_objective;
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxIters;

    for iteration in 1..=hp.max_outer_iters {
        let objective_start = previous;

        if options.shared_classifier {
            let phi_mat = subspace::build_phi(&state.phi, &state.varphi, &state.pi, pair, hp)?;
            state.theta = subspace::update_theta(&phi_mat, hp.r, hp.eigen_selection, Some(&state.theta))?;
            state.w = subspace::update_w(&state.theta, &state.phi, &state.varphi)?;
        }
        let objective_after_subspace = objective.value(&state)?;

        let ctx = QContext::new(pair, &objective.target_residuals, &state.theta, &state.w, &state.pi, hp)?;
        let descent = classifier::descend(&ctx, &state.phi, &state.varphi)?;
        state.phi = descent.phi;
        state.varphi = descent.varphi;
        let objective_after_classifier = objective.value(&state)?;

        let (weight_step_objective, weight_step_uniform_objective) = if options.learn_weights {
            let problem = weights::build_with_gram(&state, pair, &objective.source_gram, hp)?;
            state.pi = weights::update_pi_from(&problem, &state.pi)?;
            (Some(problem.objective(&state.pi)), Some(problem.objective(&ones)))
        } else {
            (None, None)
        };
        state.sync_adaptation();
        let terms = objective.terms(&state)?;
        let objective_after_weights = terms.total();

        let record = IterationRecord {
            iteration,
            objective_start,
            objective_after_subspace,
            objective_after_classifier,
            objective_after_weights,
            terms,
            q_value: descent.q_final,
            classifier_steps: descent.accepted_steps,
            weight_step_objective,
            weight_step_uniform_objective,
            weights: summarize(&state.pi, hp.delta),
            feasibility: state.feasibility(hp.delta),
        };
        observer(&record, &state);
        records.push(record);

        let change = (objective_after_weights - previous).abs();
        previous = objective_after_weights;
        if change <= hp.tol * objective_start.abs().max(1.0) {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    state.sync_adaptation();
    let trace = TrainingTrace {
        initial_objective,
        iterations: records.len(),
        records,
        stop_reason,
    };
    Ok((state, trace))
}

fn summarize(pi: &DVector<f64>, delta: f64) -> WeightSummary {
    WeightSummary {
        min: pi.min(),
        max: pi.max(),
        at_zero: pi.iter().filter(|&&p| p <= 1e-12).count(),
        at_delta: pi.iter().filter(|&&p| p >= delta - 1e-12).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(seed: u64, n1: usize, n2: usize, n3: usize, m: usize, gap: f64) -> DatasetPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |n: usize| {
            let labels: Vec<i64> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
            let x = DMatrix::from_fn(n, m, |i, c| {
                let centre = if c == 0 { gap * labels[i] as f64 } else { 0.0 };
                centre + rng.random_range(-0.5..0.5)
            });
            (x, labels)
        };
        let (xs, ys) = gen(n1);
        let (xt, yt) = gen(n2);
        DatasetPair::new(xs, &ys, xt, &yt[..n3]).unwrap()
    }

    #[test]
    fn objective_at_zero_state() {
        let pair = blobs(1, 10, 8, 3, 3, 1.0);
        let hp = Hyperparams { loss: LossKind::Hinge, k: 2, ..Hyperparams::for_dim(3) };
        let gs = build_graph(&pair.source_features, 2).unwrap();
        let gt = build_graph(&pair.target_features, 2).unwrap();
        let theta = DMatrix::identity(2, 3);
        let state = ModelState {
            theta: theta.clone(),
            w: DVector::zeros(2),
            phi: DVector::zeros(3),
            varphi: DVector::zeros(3),
            u: DVector::zeros(3),
            v: DVector::zeros(3),
            pi: DVector::from_element(10, 1.0),
            loss: LossKind::Hinge,
        };
        let d = weighted_mean_difference(&pair, &state.pi).unwrap();
        let expected = 13.0 + hp.c3 / 2.0 * (&theta * d).norm_squared();
        let got = full_objective(&state, &pair, &gs, &gt, &hp).unwrap();
        assert!((got - expected).abs() < 1e-10);

        let bare = Hyperparams { c1: 0.0, c2: 0.0, c3: 0.0, ..hp };
        assert!((full_objective(&state, &pair, &gs, &gt, &bare).unwrap() - 13.0).abs() < 1e-12);
    }

    #[test]
    fn identical_domains_are_fit_perfectly() {
        let pair = blobs(2, 30, 30, 30, 3, 2.0);
        let pair = DatasetPair {
            target_features: pair.source_features.clone(),
            target_labels: pair.source_labels.clone(),
            ..pair
        };
        let hp = Hyperparams { loss: LossKind::Hinge, ..Hyperparams::for_dim(3) };
        let (state, _) = fit(&pair, &hp).unwrap();
        let correct = (0..30)
            .filter(|&j| {
                let x = pair.target_features.row(j).transpose();
                classifier::predict_target(&state.varphi, &x).unwrap().1 == pair.target_labels[j]
            })
            .count();
        assert_eq!(correct, 30);
    }

    #[test]
    fn decoupled_training_lowers_source_loss() {
        let pair = blobs(3, 20, 16, 16, 3, 1.0);
        let hp = Hyperparams { c1: 0.0, c2: 0.0, c3: 0.0, max_outer_iters: 10, ..Hyperparams::for_dim(3) };
        let (_, trace) = fit(&pair, &hp).unwrap();
        let first = trace.records.first().unwrap();
        let last = trace.records.last().unwrap();
        assert!(last.terms.source_loss <= first.terms.source_loss);
        assert!(last.terms.source_loss < 20.0 * std::f64::consts::LN_2);
    }

    #[test]
    fn blocks_never_increase_objective_and_state_stays_feasible() {
        let pair = blobs(4, 24, 20, 6, 4, 0.8);
        let hp = Hyperparams { max_outer_iters: 15, ..Hyperparams::for_dim(4) };
        let (_, trace) = fit_with(&pair, &hp, FitOptions::default(), |rec, state| {
            let f = state.feasibility(hp.delta);
            assert!(f.orthonormality <= 1e-10);
            assert!(f.pi_bound_violation <= 1e-8);
            assert!(f.pi_sum_error <= 1e-8 * 24.0);
            assert!(f.uv_identity <= 1e-10);
            assert!(rec.weight_step_objective.unwrap() <= rec.weight_step_uniform_objective.unwrap() + 1e-8);
        })
        .unwrap();
        for r in &trace.records {
            assert!(r.objective_after_subspace <= r.objective_start + EXACT_BLOCK_SLACK);
            assert!(r.objective_after_classifier <= r.objective_after_subspace + DESCENT_BLOCK_SLACK);
            assert!(r.objective_after_weights <= r.objective_after_classifier + EXACT_BLOCK_SLACK);
        }
    }

    #[test]
    fn deterministic() {
        let pair = blobs(5, 16, 14, 4, 3, 1.0);
        let hp = Hyperparams { max_outer_iters: 8, ..Hyperparams::for_dim(3) };
        let (a, ta) = fit(&pair, &hp).unwrap();
        let (b, tb) = fit(&pair, &hp).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&ta).unwrap(), serde_json::to_string(&tb).unwrap());
    }

    #[test]
    fn ablation_keeps_shared_part_off() {
        let pair = blobs(6, 16, 14, 4, 3, 1.0);
        let hp = Hyperparams { c3: 0.0, max_outer_iters: 5, ..Hyperparams::for_dim(3) };
        let opts = FitOptions { shared_classifier: false, learn_weights: false };
        let (state, _) = fit_with(&pair, &hp, opts, |_, _| {}).unwrap();
        assert_eq!(state.w.amax(), 0.0);
        assert_eq!(state.u, state.phi);
        assert_eq!(state.pi, DVector::from_element(16, 1.0));
    }

    #[test]
    fn rejects_invalid_input_before_work() {
        let pair = blobs(7, 6, 6, 2, 3, 1.0);
        let hp = Hyperparams { delta: 0.5, ..Hyperparams::for_dim(3) };
        assert!(matches!(fit(&pair, &hp), Err(crate::Error::InfeasibleDelta(_))));
    }
}
