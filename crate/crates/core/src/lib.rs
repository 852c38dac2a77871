//! Prompt-conditioned vector-field control of a simulated 2D cell
//! collective.
//!
//! A prompt is embedded ([`embedding`]), mapped by an evolvable feed-forward
//! controller to an `n x n` force field ([`p2i`]), applied to a population
//! of soft disc cells ([`sim`]), and the resulting behavior is classified
//! and scored against the prompt ([`d2r`]). The controller weights are
//! optimized by the evolutionary algorithms in [`evolve`]; [`stats`] holds
//! the significance tests used to compare runs.

pub mod d2r;
pub mod embedding;
pub mod error;
pub mod evolve;
pub mod io;
pub mod p2i;
pub mod seed;
pub mod sim;
pub mod stats;
mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
