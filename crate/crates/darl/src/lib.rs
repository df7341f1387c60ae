//! Few-shot domain adaptation of a recurrent text generator.
//!
//! A small LSTM language model is pretrained on several source domains and
//! then adapted to a new domain from which only k example sentences exist.
//! Adaptation interleaves two update kinds, chosen per step by a mixing
//! ratio R: Monte-Carlo policy-gradient steps whose reward comes from a
//! few-shot prototype discriminator, and maximum-likelihood steps on the k
//! support samples. A synthetic template-grammar world with an exact domain
//! oracle makes the whole pipeline measurable at desk scale.
//!
//! Module map:
//! - [`numerics`]: tensors, softmax/cross-entropy, categorical sampling,
//!   splittable RNG, finite-difference gradient checks
//! - [`corpus`]: vocabulary, template grammars, world construction, the
//!   domain oracle, and on-disk formats
//! - [`generator`]: the LSTM policy with hand-derived backpropagation
//! - [`discriminator`]: prototype-based few-shot real/fake scorer
//! - [`rollout`]: Monte-Carlo action-value estimation
//! - [`trainer`]: pretraining, the adaptation loop, experiment orchestration
//! - [`metrics`]: BLEU, Self-BLEU, nearest-sample similarity, domain accuracy
//! - [`cli`]: the `darl` command-line interface
//!
//! Parallelism: with the default `parallel` feature, independent work items
//! (rollouts, per-text metrics, sweep cells) fan out over rayon. Each item
//! gets its own RNG stream derived ahead of the fan-out and results are
//! reduced in item order, so outputs are bit-identical to the sequential
//! fallback (`--no-default-features`) at any thread count.

pub mod corpus;
pub mod discriminator;
pub mod generator;
pub mod metrics;
pub mod numerics;
pub mod rollout;
pub mod trainer;

pub mod cli;

mod ckpt;
mod error;
mod par;

pub use error::{Error, Result};
