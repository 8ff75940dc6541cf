//! Spatiotemporal multigraph learning over raw event-camera streams.
//!
//! An event camera reports per-pixel brightness changes as a sparse,
//! asynchronous stream of `(x, y, t, polarity)` tuples. This crate models
//! such a stream as a *multigraph*: every event becomes a node, and two
//! decoupled directed edge sets connect it to its recent past — a
//! *spatial* neighborhood (wide in XY, shallow in time) feeding a
//! B-spline convolution branch, and a *temporal* neighborhood (narrow in
//! XY, deep in time) feeding a motion-vector attention branch. Stacked
//! blocks of the two branches plus a fusion MLP produce per-event
//! features, and an event-level head turns those into object detections
//! without ever rasterizing the stream.
//!
//! Because a node's neighborhood is frozen when it is inserted, a new
//! event can only influence a bounded cone of the graph. The
//! [`engine`] module exploits this: it caches per-layer activations and
//! recomputes only the affected subgraph per event, with a dense
//! recompute oracle to verify equality.
//!
//! ## Layout
//!
//! - [`events`] — stream ingestion (CSV/binary), windowing, density
//!   control, and a deterministic synthetic scene generator.
//! - [`graph`] — multigraph construction: ellipsoidal neighbor
//!   predicates, degree caps, per-edge attributes, spatial hash index.
//! - [`tape`] — minimal reverse-mode autodiff over dense `f64` tensors.
//! - [`nn`] — spline convolution, motion attention, fusion, the full
//!   backbone, parameter management and checkpoints.
//! - [`engine`] — per-event incremental inference with layer caches,
//!   eviction, and the timing/FLOP benchmark harness.
//! - [`detect`] — box encoding, active-region pooling, NMS, mAP.
//! - [`train`] — losses, augmentation, AdamW, one-cycle schedule, and
//!   the training loop.
//! - [`features`] — PCA feature export for visualization.
//! - [`cli`] — subcommand surface used by the `evgraph` binary.
//!
//! ## Quick start
//!
//! Each major capability has a runnable example; start with
//!
//! ```bash
//! cargo run --release --example generate_scene
//! cargo run --release --example build_graph
//! cargo run --release --example stream_inference
//! ```
//!
//! or use the binary: `evgraph generate|train|infer|eval|bench|export-features`.

pub mod cli;
pub mod detect;
pub mod engine;
pub mod error;
pub mod events;
pub mod features;
pub mod graph;
pub mod nn;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use events::{Event, EventStream, GroundTruth, SensorGeometry};
pub use graph::{GraphConfig, MultiGraph};
pub use nn::{ModelConfig, ModelParams};
