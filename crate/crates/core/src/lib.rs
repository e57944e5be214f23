//! Form-structure aware monitoring for web applications.
//!
//! A crawler learns which forms an application declares ([`crawler`]), captured
//! submissions are parsed ([`ingest`]) and judged against that structure at three
//! levels ([`classifier`]), and the verdicts are laid out as drill-down scenes
//! ([`layout`]) served by a long-running monitor ([`service`]). The [`simulator`]
//! produces labelled traffic for testing the whole pipeline.

pub mod classifier;
pub mod crawler;
pub mod error;
pub mod ingest;
pub mod layout;
pub mod model;
pub mod service;
pub mod simulator;
pub mod store;

pub use error::{ActionError, IngestError, LayoutError, ServiceError, SimulationError, StructureError};
