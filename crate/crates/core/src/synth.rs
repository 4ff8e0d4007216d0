//! Seeded synthetic source/target pairs with a controlled domain shift.
//!
//! Both domains are a balanced two-class Gaussian mixture with class means
//! `±2·e₁` and identity covariance. Target points are additionally rotated by
//! `rot_deg` degrees in the plane of the first two coordinates and then moved
//! by `shift` along the second coordinate.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::DatasetPair;
use crate::error::{Error, Result};

/// Distance of each class mean from the origin along the first axis.
pub const CLASS_OFFSET: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_target_labeled: usize,
    pub dim: usize,
    pub shift: f64,
    pub rot_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_source: 200,
            n_target: 200,
            n_target_labeled: 20,
            dim: 5,
            shift: 1.5,
            rot_deg: 30.0,
        }
    }
}

/// A generated pair with ground-truth labels for every target row.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub source_features: DMatrix<f64>,
    pub source_labels: Vec<i8>,
    pub target_features: DMatrix<f64>,
    pub target_labels: Vec<i8>,
    pub n_target_labeled: usize,
}

impl SyntheticPair {
    /// The training view: only the first `n_target_labeled` target labels.
    pub fn dataset(&self) -> DatasetPair {
        DatasetPair {
            source_features: self.source_features.clone(),
            source_labels: self.source_labels.clone(),
            target_features: self.target_features.clone(),
            target_labels: self.target_labels[..self.n_target_labeled].to_vec(),
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticPair> {
    if cfg.dim < 2 {
        return Err(Error::InvalidHyperparam(format!(
            "synthetic data needs at least 2 features, got {}",
            cfg.dim
        )));
    }
    if cfg.n_source == 0 || cfg.n_target == 0 {
        return Err(Error::Empty("synthetic sets need at least one point".into()));
    }
    if cfg.n_target_labeled > cfg.n_target {
        return Err(Error::DimensionMismatch(format!(
            "{} labeled target rows requested out of {}",
            cfg.n_target_labeled, cfg.n_target
        )));
    }
    if !cfg.shift.is_finite() || !cfg.rot_deg.is_finite() {
        return Err(Error::NonFinite("shift or rotation".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (source_features, source_labels) = mixture(&mut rng, cfg.n_source, cfg.dim);
    let (mut target_features, target_labels) = mixture(&mut rng, cfg.n_target, cfg.dim);

    let (sin, cos) = cfg.rot_deg.to_radians().sin_cos();
    for mut row in target_features.row_iter_mut() {
        let (a, b) = (row[0], row[1]);
        row[0] = cos * a - sin * b;
        row[1] = sin * a + cos * b + cfg.shift;
    }

    Ok(SyntheticPair {
        source_features,
        source_labels,
        target_features,
        target_labels,
        n_target_labeled: cfg.n_target_labeled,
    })
}

/// `n` points, `⌈n/2⌉` of class +1, in random order.
fn mixture(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DMatrix<f64>, Vec<i8>) {
    let mut labels: Vec<i8> = (0..n).map(|i| if i < n.div_ceil(2) { 1 } else { -1 }).collect();
    labels.shuffle(rng);
    let mut x = DMatrix::zeros(n, m);
    for (i, &y) in labels.iter().enumerate() {
        let noise: DVector<f64> = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        for c in 0..m {
            x[(i, c)] = noise[c];
        }
        x[(i, 0)] += CLASS_OFFSET * y as f64;
    }
    (x, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let cfg = SynthConfig { n_source: 100, n_target: 100, ..SynthConfig::default() };
        let a = generate(&cfg).unwrap();
        assert_eq!(a.source_labels.iter().filter(|&&y| y == 1).count(), 50);
        assert_eq!(a.target_labels.iter().filter(|&&y| y == 1).count(), 50);
        assert_eq!(a, generate(&cfg).unwrap());
        assert_ne!(a, generate(&SynthConfig { seed: 8, ..cfg }).unwrap());
    }

    #[test]
    fn shift_moves_target_mean() {
        let cfg = SynthConfig { n_source: 2000, n_target: 2000, shift: 3.0, rot_deg: 0.0, ..SynthConfig::default() };
        let p = generate(&cfg).unwrap();
        let ms = p.source_features.row_mean();
        let mt = p.target_features.row_mean();
        assert!((mt[1] - ms[1] - 3.0).abs() < 0.15);
        assert!((mt[0] - ms[0]).abs() < 0.15);
    }

    #[test]
    fn unshifted_domains_share_a_distribution() {
        let cfg = SynthConfig { n_source: 4000, n_target: 4000, shift: 0.0, rot_deg: 0.0, ..SynthConfig::default() };
        let p = generate(&cfg).unwrap();
        for set in [&p.source_features, &p.target_features] {
            let mean = set.row_mean();
            assert!(mean.amax() < 0.1, "{mean}");
        }
        let pos: Vec<usize> = (0..4000).filter(|&i| p.target_labels[i] == 1).collect();
        let m0: f64 = pos.iter().map(|&i| p.target_features[(i, 0)]).sum::<f64>() / pos.len() as f64;
        assert!((m0 - CLASS_OFFSET).abs() < 0.1);
    }

    #[test]
    fn rotation_turns_class_means() {
        let cfg = SynthConfig { n_source: 10, n_target: 4000, shift: 0.0, rot_deg: 90.0, ..SynthConfig::default() };
        let p = generate(&cfg).unwrap();
        let pos: Vec<usize> = (0..4000).filter(|&i| p.target_labels[i] == 1).collect();
        let m1: f64 = pos.iter().map(|&i| p.target_features[(i, 1)]).sum::<f64>() / pos.len() as f64;
        assert!((m1 - CLASS_OFFSET).abs() < 0.1);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig { dim: 1, ..SynthConfig::default() }).is_err());
        assert!(generate(&SynthConfig { n_target_labeled: 500, ..SynthConfig::default() }).is_err());
    }

    #[test]
    fn dataset_view_keeps_labeled_prefix() {
        let p = generate(&SynthConfig::default()).unwrap();
        let d = p.dataset();
        assert_eq!(d.n_target_labeled(), 20);
        assert_eq!(d.target_labels[..], p.target_labels[..20]);
        d.check().unwrap();
    }
}
