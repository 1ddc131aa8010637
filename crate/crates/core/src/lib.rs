//! Desk-scale laboratory for implicit neural representations.
//!
//! The crate fits coordinate networks to small signals (a 1D color stripe, a
//! procedural RGB image, an analytic signed distance field) and contrasts two
//! families of first layers: continuous function expansions (SIREN, Fourier
//! positional encoding) and learned lookup tables (a full-resolution key table
//! and a multi-resolution spatial hash grid). Table lookups deliberately emit
//! no gradient with respect to the query coordinate; an optional analytical
//! branch `T(x)` concatenated with the table features restores that path and
//! with it the ability to interpolate between trained coordinates.

pub mod acceptance;
pub mod cli;
pub mod diffcore;
pub mod encodings;
pub mod error;
pub mod gradcheck;
pub mod mat;
pub mod models;
pub mod optim;
pub mod tasks;

pub use error::{Error, Result};
