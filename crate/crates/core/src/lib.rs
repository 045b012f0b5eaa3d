//! Bounded explicit-state safety checking for event-driven smart-home
//! automation systems.
//!
//! The pipeline is: parse apps ([`appdsl`]) and a system configuration
//! ([`devmodel`]), decompose the installed handlers into related sets
//! ([`depgraph`]), explore each set's external-event sequences ([`explorer`])
//! against the instantiated safety properties ([`properties`]), and attribute
//! violations to apps or configurations ([`attribution`]).

pub mod appdsl;
pub mod attribution;
pub mod capability;
pub mod depgraph;
pub mod devmodel;
pub mod engine;
pub mod error;
pub mod explorer;
pub mod expr;
mod lexer;
pub mod pipeline;
pub mod properties;

pub use appdsl::{extract_io_events, parse_app, render_app, AppSpec, EventPattern, HandlerIo};
pub use capability::{Capability, CapabilityCatalog, CapabilityKind, Domain};
pub use depgraph::{analyze, DependencyGraph, RelatedSet, RelatedSetAnalysis};
pub use devmodel::{load_config, SystemConfig};
pub use error::{ConfigError, Error, ParseError};
pub use explorer::{
    explore, replay, ExplorationConfig, ExplorationResult, StateStore, StoreKind, Trace, Violation,
};
pub use pipeline::{check_system, CheckOptions, Report};
pub use properties::{instantiate_properties, PropertyCatalog, PropertyKind, SafetyProperty};
