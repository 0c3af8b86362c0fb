//! Rating-category prediction for speech transcripts.
//!
//! The pipeline: load and filter talks ([`corpus`]), normalize rating
//! counts by each talk's total and binarize at the training median
//! ([`debias`]), encode sentences with an LSTM or a child-sum TreeLSTM on
//! top of a small reverse-mode AD engine ([`autodiff`], [`models`]), train
//! with multi-label binary cross-entropy ([`training`]), compare against
//! lexicon-feature linear baselines ([`baselines`]) and score per category
//! ([`eval`]). [`pipeline`] runs the stages against a workspace directory.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod corpus;
pub mod debias;
pub mod eval;
pub mod models;
pub mod pipeline;
pub mod training;
