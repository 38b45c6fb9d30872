//! Beta-negative binomial process partitions, the collapsed Gibbs sampler for
//! the BNBP topic model, a fixed-K collapsed LDA baseline and heldout
//! perplexity evaluation.

pub mod bnbp_model;
pub mod checkpoint;
pub mod corpus;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod lda;
pub mod partition;
pub mod rng;
pub mod special;
pub mod trace;

pub use bnbp_model::{Hyperpriors, TopicModelState, TrainConfig};
pub use corpus::{Corpus, CorpusFormat, HeldoutSplit, TestCounts};
pub use error::{Error, Result};
pub use eval::{DrawSink, NoDraws, PerplexityAccumulator, PosteriorDraw};
pub use lda::LdaState;
pub use partition::{BnbpParams, CountMatrix, GroupedPartition};
pub use rng::RngStream;
pub use trace::{ChainTrace, TraceRow};
