//! Detection of impromptu euphemisms in text corpora: corpus preparation,
//! embedding-based candidate mining, a coarse sentence classifier, a
//! fine-grained masked language model with context augmentation, and
//! top-k evaluation.

pub mod coarse;
pub mod corpus;
pub mod datasets;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fine;
pub mod index;
pub mod io;
pub mod llmgen;
pub mod lm;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
