//! Diffusion-based fine-grained text style transfer, implemented from scratch.
//!
//! A sentence is rewritten along one narrow stylistic axis (tense, voice,
//! prepositional-phrase position, emphasis, ...) while everything else is kept
//! intact. The model is a sequence-to-sequence denoising diffusion probabilistic
//! model operating in token-embedding space:
//!
//! * clean target embeddings are progressively corrupted by Gaussian noise
//!   under a linear beta schedule ([`diffusion`]),
//! * a transformer trained with a hand-written backward pass predicts the clean
//!   embeddings from a noisy version, conditioned on the source sentence and on
//!   style tokens that select the transfer(s) ([`denoiser`], [`corpus`]),
//! * inference starts from pure noise at the target positions and alternates
//!   predict-clean / re-noise down to step zero, then rounds each embedding to
//!   the cosine-nearest vocabulary token ([`sampler`]),
//! * outputs are scored with BLEU-1..4, METEOR-lite, ROUGE-L and CIDEr
//!   ([`metrics`]).
//!
//! Everything numeric is built on [`ndarray`] with no autograd framework and no
//! pretrained weights; the only model inputs are paired sentences.
//!
//! # Where to start
//!
//! The crate is a library first. Each major capability has a runnable example:
//!
//! ```text
//! examples/
//!   noise_schedule.rs      beta/alpha-bar tables and schedule invariants
//!   forward_noising.rs     corrupting a sentence embedding step by step
//!   gradient_check.rs      finite-difference audit of the backward pass
//!   overfit_tiny.rs        memorizing a handful of pairs end to end
//!   style_transfer.rs      train a small single-transfer model and use it
//!   compose_transfers.rs   style-token conditions for composed transfers
//!   synthetic_benchmark.rs copy-vs-reverse multitask benchmark
//!   evaluate_corpus.rs     the metric battery on a small corpus
//! ```
//!
//! Run one with `cargo run --release --example noise_schedule`.
//!
//! A thin `diffstyle` binary wraps the same library calls as a pipeline
//! (`preprocess`, `train`, `generate`, `eval`, `synthetic`); see [`cli`].
//!
//! # Determinism
//!
//! Every stochastic choice (splits, batch order, timesteps, noise, dropout,
//! sampling) is drawn from a stream derived with [`rng::derive_rng`] from one
//! run seed, a purpose label, and an index. Same seed, same machine count
//! (always one process), same results — bitwise.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod synthetic;
pub mod tokenizer;
pub mod trainer;

pub use scalar::Scalar;
