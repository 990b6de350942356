//! Differentiable ops, exposed as methods on [`Var`](super::Var).
//!
//! Every op validates shapes up front and never broadcasts implicitly; the
//! only broadcasting ops say so in their name.

pub mod conv;
pub mod elementwise;
pub mod layout;
pub mod linear;
pub mod loss;
pub mod norm;

pub mod gradcheck;
