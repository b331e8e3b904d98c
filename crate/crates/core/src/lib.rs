//! Switching linear dynamical system over narrative text.
//!
//! A story is a sequence of sentences. Each sentence i carries a
//! discrete sentiment state S_i in {negative, neutral, positive} and a
//! continuous latent Z_i. States follow a fixed Markov scaffold fit by
//! counting; latents follow per-state linear-Gaussian dynamics; words
//! come from a GRU language model conditioned on Z_i and the running
//! story prefix. Training is amortized variational inference; infilling
//! missing sentences is Gibbs sampling over the latent chain.

pub mod config;
pub mod corpus;
pub mod dynamics;
pub mod emission;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod gibbs;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod scaffold;
pub mod seeding;
pub mod tensor;

pub use error::{Result, SldsError};
