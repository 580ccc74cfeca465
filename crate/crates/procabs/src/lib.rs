//! Procedural abstraction learning and pragmatic communication in a
//! collaborative block-tower building task.
//!
//! An Architect instructs a Builder to assemble scenes made of two towers.
//! Both share a growing library of chunks learned by description-length
//! compression, while the Architect reasons about how the Builder will read
//! newly coined words for those chunks.

pub mod blockworld;
pub mod dsl;
pub mod error;
pub mod library_learning;
pub mod pragmatics;
pub mod simulation;

pub use error::{Error, Result};
