//! Kronecker fully-connected (KFC) layers.
//!
//! A KFC layer constrains its weight matrix to a sum of Kronecker products of
//! small factor matrices and evaluates it without ever forming the dense
//! weight. The crate covers the layer algebra ([`kfc`]), nearest-Kronecker
//! compression of trained dense weights ([`nkp`]), a small training engine
//! ([`train`]) and the file formats used by the `kfc` command line tool ([`io`]).

pub mod error;
pub mod linalg;

pub use error::{KfcError, Result};
pub mod activation;
pub mod io;
pub mod kfc;
pub mod nkp;
pub mod selftest;
pub mod train;
