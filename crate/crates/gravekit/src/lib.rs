//! Document store, validation workflow, exports, HTTP service and synthetic
//! page generator built on `gravekit-core`.

pub mod adapters;
pub mod detections;
pub mod ingest;
pub mod pipeline;
pub mod records;
pub mod store;
pub mod export;
pub mod stats;
pub mod synth;
pub mod service;
pub mod server;
