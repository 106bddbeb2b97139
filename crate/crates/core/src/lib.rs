//! Multilingual valence–arousal regression: corpus merging, a
//! two-output regression model, loss functions, training, evaluation
//! metrics and the cross-validation experiment protocols.

pub mod corpus;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod fixture;
pub mod experiments;
pub mod reference;
