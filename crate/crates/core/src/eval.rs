//! Cross-validation on the target domain and the one-vs-all multiclass
//! wrapper.
//!
//! Each fold of the target set is held out in turn. The remaining target
//! points form the training target set, of which a random half is labeled
//! (labeled points first). The full source set is used in every fold.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetPair, Hyperparams, ModelState};
use crate::error::{Error, Result};
use crate::normalize::Normalizer;
use crate::trainer::{fit_with, FitOptions, StopReason};

/// Seeded partition of `0..n` into `folds` sets whose sizes differ by at most
/// one. Indices within a fold are ascending.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || folds > n {
        return Err(Error::Folds(format!("cannot split {n} points into {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut sets = vec![Vec::with_capacity(n / folds + 1); folds];
    for (pos, &i) in order.iter().enumerate() {
        sets[pos % folds].push(i);
    }
    for s in &mut sets {
        s.sort_unstable();
    }
    Ok(sets)
}

/// A seeded random `⌈len/2⌉`-subset of `indices`, in the order drawn.
pub fn half_label_mask(indices: &[usize], seed: u64) -> Result<Vec<usize>> {
    if indices.is_empty() {
        return Err(Error::Empty("no training points to label".into()));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    shuffled.truncate(indices.len().div_ceil(2));
    Ok(shuffled)
}

/// Seed for the label mask of fold `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold as u64 + 1)
}

pub fn accuracy(predicted: &[i64], truth: &[i64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let correct = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    correct as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    /// Caps the labeled training points per fold below `⌈count/2⌉`.
    pub label_budget: Option<usize>,
    /// Record per-fold wall time. Off by default so reports are reproducible.
    pub timings: bool,
    /// Z-score features per fold on the source and training target rows.
    pub normalize: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: 10,
            seed: 0,
            label_budget: None,
            timings: false,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub mask_seed: u64,
    pub test_indices: Vec<usize>,
    /// Training target points given labels, ascending.
    pub labeled_indices: Vec<usize>,
    pub unlabeled_indices: Vec<usize>,
    pub accuracy: f64,
    pub outer_iterations: Vec<usize>,
    pub stop_reasons: Vec<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// `binary` or `one_vs_all_separate`.
    pub variant: String,
    pub seed: u64,
    pub folds: usize,
    pub label_budget: Option<usize>,
    pub normalize: bool,
    pub hyperparams: Hyperparams,
    pub fold_results: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over folds (0 for a single fold).
    pub std_accuracy: f64,
}

/// Target-domain samples with ground truth for every row.
pub struct LabeledSet<'a> {
    pub features: &'a DMatrix<f64>,
    pub labels: &'a [i64],
}

struct FoldPlan {
    fold: usize,
    mask_seed: u64,
    test: Vec<usize>,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

fn plan_folds(n: usize, opts: &CvOptions) -> Result<Vec<FoldPlan>> {
    let sets = kfold_split(n, opts.folds, opts.seed)?;
    let mut plans = Vec::with_capacity(sets.len());
    for (fold, test) in sets.iter().enumerate() {
        let train: Vec<usize> = sets
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        let mask_seed = fold_seed(opts.seed, fold);
        let mut labeled = half_label_mask(&train, mask_seed)?;
        if let Some(budget) = opts.label_budget {
            labeled.truncate(budget);
        }
        labeled.sort_unstable();
        let mut unlabeled: Vec<usize> = train.into_iter().filter(|i| labeled.binary_search(i).is_err()).collect();
        unlabeled.sort_unstable();
        plans.push(FoldPlan {
            fold,
            mask_seed,
            test: test.clone(),
            labeled,
            unlabeled,
        });
    }
    Ok(plans)
}

fn rows(x: &DMatrix<f64>, idx: impl IntoIterator<Item = usize>) -> DMatrix<f64> {
    let idx: Vec<usize> = idx.into_iter().collect();
    DMatrix::from_fn(idx.len(), x.ncols(), |a, c| x[(idx[a], c)])
}

/// Source rows, training target rows (labeled first) and test rows.
fn fold_features(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    plan: &FoldPlan,
    normalize: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let train = rows(target, plan.labeled.iter().chain(&plan.unlabeled).copied());
    let test = rows(target, plan.test.iter().copied());
    if !normalize {
        return Ok((source.clone(), train, test));
    }
    let n = Normalizer::fit(&[source, &train])?;
    Ok((n.apply(source)?, n.apply(&train)?, n.apply(&test)?))
}

fn to_pm(labels: &[i64]) -> Result<Vec<i8>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| match y {
            1 => Ok(1),
            -1 => Ok(-1),
            _ => Err(Error::InvalidLabel {
                value: y,
                location: format!("row {i}"),
            }),
        })
        .collect()
}

fn summarize(
    variant: &str,
    hp: &Hyperparams,
    opts: &CvOptions,
    fold_results: Vec<FoldResult>,
) -> CvReport {
    let accs: Vec<f64> = fold_results.iter().map(|f| f.accuracy).collect();
    let k = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / k;
    let std = if accs.len() > 1 {
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    CvReport {
        variant: variant.to_string(),
        seed: opts.seed,
        folds: opts.folds,
        label_budget: opts.label_budget,
        normalize: opts.normalize,
        hyperparams: hp.clone(),
        fold_results,
        mean_accuracy: mean,
        std_accuracy: std,
    }
}

/// Binary cross-validation; `source` and `target` labels must be ±1.
pub fn run_cv(
    source: LabeledSet<'_>,
    target: LabeledSet<'_>,
    hp: &Hyperparams,
    opts: &CvOptions,
    fit_options: FitOptions,
) -> Result<CvReport> {
    check_sets(&source, &target)?;
    let source_labels = to_pm(source.labels)?;
    let target_labels = to_pm(target.labels)?;
    let plans = plan_folds(target.features.nrows(), opts)?;

    let mut results = Vec::with_capacity(plans.len());
    for plan in plans {
        let start = Instant::now();
        let (source_x, train_x, test_x) = fold_features(source.features, target.features, &plan, opts.normalize)?;
        let pair = DatasetPair {
            source_features: source_x,
            source_labels: source_labels.clone(),
            target_features: train_x,
            target_labels: plan.labeled.iter().map(|&i| target_labels[i]).collect(),
        };
        let (model, trace) = fit_with(&pair, hp, fit_options, |_, _| {})?;
        let scores = &test_x * &model.varphi;
        let predicted: Vec<i64> = scores.iter().map(|&s| crate::classifier::label_of(s) as i64).collect();
        let truth: Vec<i64> = plan.test.iter().map(|&i| target.labels[i]).collect();
        results.push(FoldResult {
            fold: plan.fold,
            mask_seed: plan.mask_seed,
            accuracy: accuracy(&predicted, &truth),
            test_indices: plan.test,
            labeled_indices: plan.labeled,
            unlabeled_indices: plan.unlabeled,
            outer_iterations: vec![trace.iterations],
            stop_reasons: vec![trace.stop_reason],
            wall_seconds: opts.timings.then(|| start.elapsed().as_secs_f64()),
        });
    }
    Ok(summarize("binary", hp, opts, results))
}

/// Multiclass cross-validation through [`one_vs_all`].
pub fn run_cv_multiclass(
    source: LabeledSet<'_>,
    target: LabeledSet<'_>,
    classes: &[i64],
    hp: &Hyperparams,
    opts: &CvOptions,
) -> Result<CvReport> {
    check_sets(&source, &target)?;
    let plans = plan_folds(target.features.nrows(), opts)?;
    let mut results = Vec::with_capacity(plans.len());
    for plan in plans {
        let start = Instant::now();
        let (source_x, train_x, test_x) = fold_features(source.features, target.features, &plan, opts.normalize)?;
        let train_y: Vec<i64> = plan.labeled.iter().map(|&i| target.labels[i]).collect();
        let model = one_vs_all(
            LabeledSet { features: &source_x, labels: source.labels },
            &train_x,
            &train_y,
            classes,
            hp,
        )?;
        let predicted = model.predict_rows(&test_x)?;
        let truth: Vec<i64> = plan.test.iter().map(|&i| target.labels[i]).collect();
        results.push(FoldResult {
            fold: plan.fold,
            mask_seed: plan.mask_seed,
            accuracy: accuracy(&predicted, &truth),
            test_indices: plan.test,
            labeled_indices: plan.labeled,
            unlabeled_indices: plan.unlabeled,
            outer_iterations: model.iterations.clone(),
            stop_reasons: model.stop_reasons.clone(),
            wall_seconds: opts.timings.then(|| start.elapsed().as_secs_f64()),
        });
    }
    Ok(summarize("one_vs_all_separate", hp, opts, results))
}

fn check_sets(source: &LabeledSet<'_>, target: &LabeledSet<'_>) -> Result<()> {
    if source.features.nrows() != source.labels.len() || target.features.nrows() != target.labels.len() {
        return Err(Error::DimensionMismatch(
            "cross-validation needs one label per source and target row".into(),
        ));
    }
    if source.features.ncols() != target.features.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} features, target has {}",
            source.features.ncols(),
            target.features.ncols()
        )));
    }
    Ok(())
}

/// One independently trained binary model per class.
#[derive(Debug, Clone, PartialEq)]
pub struct OneVsAll {
    pub classes: Vec<i64>,
    pub models: Vec<ModelState>,
    pub iterations: Vec<usize>,
    pub stop_reasons: Vec<StopReason>,
}

impl OneVsAll {
    pub fn scores(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.models
            .iter()
            .map(|m| crate::classifier::predict_target(&m.varphi, x).map(|(s, _)| s))
            .collect()
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<i64> {
        Ok(self.classes[argmax_first(&self.scores(x)?)])
    }

    pub fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<i64>> {
        (0..x.nrows()).map(|i| self.predict(&x.row(i).transpose())).collect()
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Trains one model per class: that class against the rest.
///
/// `target_labels` labels a prefix of `target_features`.
pub fn one_vs_all(
    source: LabeledSet<'_>,
    target_features: &DMatrix<f64>,
    target_labels: &[i64],
    classes: &[i64],
    hp: &Hyperparams,
) -> Result<OneVsAll> {
    if classes.len() < 2 {
        return Err(Error::InvalidHyperparam("one-vs-all needs at least two classes".into()));
    }
    if source.features.nrows() != source.labels.len() || target_labels.len() > target_features.nrows() {
        return Err(Error::DimensionMismatch("labels do not match feature rows".into()));
    }
    for &y in source.labels.iter().chain(target_labels) {
        if !classes.contains(&y) {
            return Err(Error::InvalidLabel {
                value: y,
                location: "one-vs-all labels".into(),
            });
        }
    }
    let mut ova = OneVsAll {
        classes: classes.to_vec(),
        models: Vec::with_capacity(classes.len()),
        iterations: Vec::with_capacity(classes.len()),
        stop_reasons: Vec::with_capacity(classes.len()),
    };
    for &class in classes {
        if !source.labels.contains(&class) {
            return Err(Error::DegenerateClass(class));
        }
        let binary = |ys: &[i64]| -> Vec<i8> { ys.iter().map(|&y| if y == class { 1 } else { -1 }).collect() };
        let pair = DatasetPair {
            source_features: source.features.clone(),
            source_labels: binary(source.labels),
            target_features: target_features.clone(),
            target_labels: binary(target_labels),
        };
        let (model, trace) = fit_with(&pair, hp, FitOptions::default(), |_, _| {})?;
        ova.models.push(model);
        ova.iterations.push(trace.iterations);
        ova.stop_reasons.push(trace.stop_reason);
    }
    Ok(ova)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::synth::{generate, SynthConfig};
    use rand::Rng;
    use std::collections::BTreeSet;

    #[test]
    fn folds_partition_and_balance() {
        let sets = kfold_split(20, 10, 3).unwrap();
        assert!(sets.iter().all(|s| s.len() == 2));
        let all: BTreeSet<usize> = sets.iter().flatten().copied().collect();
        assert_eq!(all.len(), 20);

        let sets = kfold_split(10, 10, 3).unwrap();
        assert!(sets.iter().all(|s| s.len() == 1));

        let sets = kfold_split(23, 10, 9).unwrap();
        let sizes: Vec<usize> = sets.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(sets, kfold_split(23, 10, 9).unwrap());
        assert!(kfold_split(5, 10, 0).is_err());
    }

    #[test]
    fn half_masks() {
        let idx: Vec<usize> = (0..18).collect();
        let m = half_label_mask(&idx, 4).unwrap();
        assert_eq!(m.len(), 9);
        assert_eq!(m, half_label_mask(&idx, 4).unwrap());
        assert_eq!(half_label_mask(&[7], 1).unwrap(), vec![7]);
        assert!(half_label_mask(&[], 1).is_err());
    }

    #[test]
    fn accuracy_is_a_ratio() {
        let truth = [1, 1, 1, 1, 1, 1, 1, -1, -1, -1];
        let pred = [1; 10];
        assert!((accuracy(&pred, &truth) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax_first(&[0.3, 0.3, -1.0]), 0);
        assert_eq!(argmax_first(&[-2.0, 0.5, 0.1]), 1);
    }

    #[test]
    fn folds_never_leak_test_points() {
        let p = generate(&SynthConfig { n_source: 40, n_target: 40, ..SynthConfig::default() }).unwrap();
        let ys: Vec<i64> = p.source_labels.iter().map(|&y| y as i64).collect();
        let yt: Vec<i64> = p.target_labels.iter().map(|&y| y as i64).collect();
        let hp = Hyperparams { max_outer_iters: 3, ..Hyperparams::for_dim(5) };
        let opts = CvOptions { folds: 5, seed: 1, ..CvOptions::default() };
        let report = run_cv(
            LabeledSet { features: &p.source_features, labels: &ys },
            LabeledSet { features: &p.target_features, labels: &yt },
            &hp,
            &opts,
            FitOptions::default(),
        )
        .unwrap();
        let mut covered = BTreeSet::new();
        for f in &report.fold_results {
            let test: BTreeSet<usize> = f.test_indices.iter().copied().collect();
            assert!(f.labeled_indices.iter().chain(&f.unlabeled_indices).all(|i| !test.contains(i)));
            assert_eq!(f.labeled_indices.len() + f.unlabeled_indices.len() + test.len(), 40);
            assert_eq!(f.labeled_indices.len(), 16);
            covered.extend(test);
            assert!((0.0..=1.0).contains(&f.accuracy));
            assert!(f.wall_seconds.is_none());
        }
        assert_eq!(covered.len(), 40);
    }

    #[test]
    fn all_positive_target_scores_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Positive class far out on +e1 in both domains; no negatives in the
        // target, so predicting +1 everywhere is always right.
        let xs = DMatrix::from_fn(30, 3, |i, c| {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            (if c == 0 { 3.0 * y } else { 0.0 }) + rng.random_range(-0.3..0.3)
        });
        let ys: Vec<i64> = (0..30).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let xt = DMatrix::from_fn(20, 3, |_, c| (if c == 0 { 3.0 } else { 0.0 }) + rng.random_range(-0.3..0.3));
        let yt = vec![1i64; 20];
        let hp = Hyperparams { max_outer_iters: 10, ..Hyperparams::for_dim(3) };
        let report = run_cv(
            LabeledSet { features: &xs, labels: &ys },
            LabeledSet { features: &xt, labels: &yt },
            &hp,
            &CvOptions { folds: 4, ..CvOptions::default() },
            FitOptions::default(),
        )
        .unwrap();
        assert!(report.fold_results.iter().all(|f| f.accuracy == 1.0));
        assert_eq!(report.mean_accuracy, 1.0);
    }

    #[test]
    fn one_vs_all_on_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centres = [[4.0, 0.0, 0.0], [-2.0, 3.5, 0.0], [-2.0, -3.5, 0.0]];
        let mut gen = |n: usize| {
            let labels: Vec<i64> = (0..n).map(|i| (i % 3) as i64).collect();
            let x = DMatrix::from_fn(n, 3, |i, c| centres[labels[i] as usize][c] + rng.random_range(-0.5..0.5));
            (x, labels)
        };
        let (xs, ys) = gen(30);
        let (xt, yt) = gen(24);
        let hp = Hyperparams { max_outer_iters: 10, k: 3, ..Hyperparams::for_dim(3) };
        let model = one_vs_all(LabeledSet { features: &xs, labels: &ys }, &xt, &yt[..12], &[0, 1, 2], &hp).unwrap();
        let pred = model.predict_rows(&xt).unwrap();
        assert!(accuracy(&pred, &yt) >= 1.0 / 3.0);

        // Scaling all scores by a positive constant keeps every prediction.
        let scaled = OneVsAll {
            models: model
                .models
                .iter()
                .map(|m| ModelState { varphi: &m.varphi * 3.7, ..m.clone() })
                .collect(),
            ..model.clone()
        };
        assert_eq!(scaled.predict_rows(&xt).unwrap(), pred);

        let err = one_vs_all(LabeledSet { features: &xs, labels: &ys }, &xt, &yt[..12], &[0, 1, 2, 3], &hp).unwrap_err();
        assert!(matches!(err, Error::DegenerateClass(3)));
    }

    #[test]
    fn two_class_one_vs_all_matches_binary_sign_when_mirrored() {
        // With models whose scores are exact negatives, argmax equals the
        // sign decision of the first model (ties go to class index 0 = +1).
        let v = DVector::from_column_slice(&[0.5, -1.0]);
        let base = ModelState {
            theta: DMatrix::identity(1, 2),
            w: DVector::zeros(1),
            phi: v.clone(),
            varphi: v.clone(),
            u: v.clone(),
            v: v.clone(),
            pi: DVector::from_element(1, 1.0),
            loss: LossKind::Hinge,
        };
        let ova = OneVsAll {
            classes: vec![1, -1],
            models: vec![base.clone(), ModelState { varphi: -&v, ..base }],
            iterations: vec![0, 0],
            stop_reasons: vec![StopReason::Converged; 2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let binary = crate::classifier::predict_target(&v, &x).unwrap().1 as i64;
            assert_eq!(ova.predict(&x).unwrap(), binary);
        }
    }
}
