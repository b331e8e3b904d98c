//! Amortized inference: recognition networks, the evidence lower bound,
//! the training loop, and the continuous-observation variant used as a
//! numerical oracle.

pub mod elbo;
pub mod recognition;
pub mod train;
pub mod vector;
