pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod neighborhood;
pub mod normalize;
pub mod qp;
pub mod subspace;
pub mod synth;
pub mod trainer;
pub mod weights;

pub use data::{validate, DatasetPair, EigenSelection, Hyperparams, ModelState};
pub use error::{Error, Result};
pub use losses::LossKind;
pub use trainer::{fit, fit_with, FitOptions, TrainingTrace};
