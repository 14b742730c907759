//! Bayesian forests, empirical Bayesian forests and weighted CART.
//!
//! A Bayesian forest fits one CART tree per draw of i.i.d. Exp(1)
//! observation weights (the Bayesian bootstrap); its averaged prediction
//! approximates the posterior mean. An empirical Bayesian forest fixes a
//! shallow unweighted trunk and fits an independent Bayesian forest on each
//! trunk leaf, which parallelizes without communication between branches.

pub mod bench;
pub mod cart;
pub mod data;
pub mod ebf;
pub mod error;
pub mod forest;
pub mod model;
pub mod stability;
pub mod weights;

pub use cart::{fit_tree, FitConfig, LeafValue, SplitRule, Tree};
pub use data::{Dataset, Response, Schema, Task};
pub use ebf::{fit_ebf, predict_ebf, EbfModel, TrunkConfig, TrunkSize};
pub use error::{Error, Result};
pub use forest::{fit_forest, fit_ssf, predict_forest, Forest, ForestConfig, Predictions};
pub use model::{Model, ModelKind, ModelSpec};
pub use weights::{draw_weights, WeightMode, WeightVector};
