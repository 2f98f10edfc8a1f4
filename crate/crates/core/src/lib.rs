//! Region proposals for moving objects from event-camera streams.
//!
//! The pipeline accumulates decimated event messages into chunks, rasterizes
//! each chunk into a last-event-wins pseudo-frame, removes speckle noise by
//! erosion and clusters the surviving pixels with DBSCAN. Every valid cluster
//! becomes a scored box proposal. A contrast-threshold simulator and a
//! single-class AP/AR evaluator make the whole chain testable offline.

pub mod bench;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod event;
pub mod ingest;
pub mod raster;
pub mod simulator;

pub use error::{Error, Result};
pub use event::{bbox_area, iou, BBox, Event, EventChunk, EventMessage, Polarity, SensorGeometry};
