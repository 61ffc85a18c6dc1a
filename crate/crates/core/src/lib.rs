//! Physics-informed cell representations.
//!
//! A solution field `u(x, t)` is represented by a stack of shifted, coarse
//! feature grids read through a smooth cosine interpolation kernel and a small
//! MLP head. The model is trained with L-BFGS on PDE residual, initial,
//! boundary and (for inverse problems) observation losses.

pub mod autodiff;
pub mod error;
pub mod grid;
pub mod gradcheck;
pub mod io;
pub mod net;
pub mod optim;
pub mod pde;
pub mod refsol;
pub mod train;

pub use error::{PixelError, Result};
