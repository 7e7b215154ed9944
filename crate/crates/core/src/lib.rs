//! Budgeted model-soup crafting.
//!
//! A zoo of networks fine-tuned from one shared initialization is scored
//! cheaply by averaging cached validation logits, then only the `B` most
//! promising weight-averaged soups are evaluated in full. Greedy and
//! exhaustive baselines, a first-order equivalence checker and the
//! statistics used to analyse runs live alongside.

pub mod analysis;
pub mod approx;
pub mod cache;
pub mod checksum;
pub mod cli;
pub mod error;
pub mod io;
pub mod matrix;
pub mod net;
pub mod select;
pub mod soup;

pub use approx::{rank_candidates, score_candidate, Candidate, PriorConfig};
pub use cache::{build_cache, ensemble_eval, ensemble_logits, LogitCache};
pub use error::{Result, SoupError};
pub use matrix::Matrix;
pub use net::{
    accuracy, cross_entropy, forward, sgd_train, Activation, ArchDescriptor, Dataset, Hyperparams,
    SplitTag, WeightVector,
};
pub use select::{
    enumerate_all, greedy_soup, oracle, radin, sample_candidates_mc, Budget, Method,
    SelectionReport,
};
pub use soup::{evaluate_soup, mix_weights, uniform_mix, EvalResult, MixVector, SubsetMask};
