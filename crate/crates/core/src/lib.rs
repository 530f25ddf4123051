//! Preference optimization with per-position temporal decay.
//!
//! The crate bundles a small reverse-mode differentiation tape, a byte-level
//! autoregressive policy model, the decayed pairwise objective with its
//! reference-free form and the usual baselines (SimPO, IPO, KTO, ORPO, SamPO),
//! diagnostic analyses over trained models, and an exact tabular-MDP
//! laboratory for the discounted suboptimality decomposition and bound.

pub mod analysis;
pub mod array;
pub mod autodiff;
pub mod checkpoint;
pub mod decay;
pub mod error;
pub mod io;
pub mod data;
pub mod losses;
pub mod mdp;
pub mod model;
pub mod seed;
pub mod train;

pub use array::RealArray;
pub use decay::{DecayKind, DecayOrigin, DecaySchedule};
pub use error::{Error, Result};
pub use losses::{LossConfig, LossMethod, PairScore};
pub use model::{LanguageModel, ModelConfig, PolicyModel, TokenSequence, Vocabulary};
