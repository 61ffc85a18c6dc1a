//! Nested differentiation: forward-mode jets in the input coordinates,
//! reverse-mode gradients over the trainable parameters.

mod jet;
mod ops;
mod tape;

pub use jet::{Jet2, Seed, Slot};
pub use ops::{Eval, JetOps};
pub use tape::{grad, Tape, Var};
