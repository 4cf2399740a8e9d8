//! Corpus curation for domain fine-tuning data.
//!
//! The stages run in a fixed order and each can also be used on its own:
//! [`clean`], [`quality`], [`exact`], [`fuzzy`] (MinHash/LSH over
//! [`sketch`]), [`semantic`], [`pairs`] and [`mix`]. [`pipeline`] runs
//! them from one configuration and reports corpus statistics.

pub mod clean;
pub mod error;
pub mod exact;
pub mod fuzzy;
pub mod hash;
pub mod mix;
pub mod model;
pub mod pairs;
pub mod pipeline;
pub mod quality;
pub mod remote;
pub mod semantic;
pub mod sketch;
pub mod union_find;

pub use error::{Error, Result};
pub use model::{Document, RunManifest, Source};
pub use pairs::TrainingPair;
