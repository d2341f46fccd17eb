//! Few-shot named entity recognition laboratory.
//!
//! The crate trains small token taggers under several data regimes and
//! measures how well each one transfers to an entity class with only a
//! handful of labeled sentences. Everything runs on a tape-based autodiff
//! core (`ndcore`) sized for desk-scale experiments: a character-aware
//! bi-LSTM encoder, a prototypical classification head, a linear-chain CRF,
//! CoNLL corpus handling with episode samplers, and chunk-level F1 scoring.
//!
//! Start with the runnable programs in `examples/`; each one demonstrates a
//! single capability end to end.

pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod protohead;
pub mod regimes;
pub mod eval;
pub mod error;
pub mod experiment;
pub mod ndcore;

pub use error::{Error, Result};
