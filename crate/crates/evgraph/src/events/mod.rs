//! Raw event streams: ingestion, generation, windowing, density control.
//!
//! An event is a single asynchronous sensor measurement `(x, y, t, p)`
//! emitted on a pixel brightness change; a stream is a time-ordered
//! sequence of them plus the sensor geometry. All operations here are
//! pure: they take streams by reference and return new ones, so distinct
//! streams can be processed concurrently without shared state.

mod codec;
mod synthetic;

pub use codec::{
    parse_events, parse_events_binary, parse_ground_truth, write_events, write_events_binary,
    write_ground_truth, BINARY_MAGIC,
};
pub use synthetic::{generate_synthetic, MovingRect, SceneSpec};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One sensor measurement. `p` is the sign of the brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: i64,
    /// Pixel column, `0 <= x < width`.
    pub x: u16,
    /// Pixel row, `0 <= y < height`.
    pub y: u16,
    /// Polarity, exactly -1 or +1.
    pub p: i8,
}

impl Event {
    pub fn new(t: i64, x: u16, y: u16, p: i8) -> Self {
        debug_assert!(p == -1 || p == 1);
        Event { t, x, y, p }
    }
}

/// Sensor resolution in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
}

impl SensorGeometry {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "sensor geometry must be positive, got {width}x{height}"
            )));
        }
        Ok(SensorGeometry { width, height })
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        (x as u32) < self.width && (y as u32) < self.height
    }

    /// Largest side in pixels; neighborhood radii are fractions of this.
    pub fn max_dim(&self) -> u32 {
        self.width.max(self.height)
    }
}

/// A time-ordered event sequence over a fixed sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub geometry: SensorGeometry,
}

impl EventStream {
    /// Validates bounds and polarity, then sorts stably by timestamp.
    pub fn new(mut events: Vec<Event>, geometry: SensorGeometry) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            validate_event(e, &geometry).map_err(|msg| Error::Validation(format!(
                "event {i}: {msg}"
            )))?;
        }
        events.sort_by_key(|e| e.t);
        Ok(EventStream { events, geometry })
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t <= w[1].t)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events per millisecond over the stream span (0 for empty streams).
    pub fn density_per_ms(&self) -> f64 {
        if self.events.is_empty() {
            return 0.0;
        }
        let span_us = (self.events[self.events.len() - 1].t - self.events[0].t).max(1);
        self.events.len() as f64 * 1000.0 / span_us as f64
    }
}

fn validate_event(e: &Event, geometry: &SensorGeometry) -> std::result::Result<(), String> {
    if !geometry.contains(e.x, e.y) {
        return Err(format!(
            "coordinate ({}, {}) outside {}x{} sensor",
            e.x, e.y, geometry.width, geometry.height
        ));
    }
    if e.p != -1 && e.p != 1 {
        return Err(format!("polarity {} not in {{-1, +1}}", e.p));
    }
    if e.t < 0 {
        return Err(format!("negative timestamp {}", e.t));
    }
    Ok(())
}

/// A labeled box at a point in time, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    /// Label timestamp in microseconds.
    pub t: i64,
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Ground-truth boxes emitted at a fixed labeling frequency.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub boxes: Vec<LabeledBox>,
}

impl GroundTruth {
    /// Distinct label timestamps in ascending order.
    pub fn label_times(&self) -> Vec<i64> {
        let mut ts: Vec<i64> = self.boxes.iter().map(|b| b.t).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// Boxes at one exact label time.
    pub fn boxes_at(&self, t: i64) -> Vec<LabeledBox> {
        self.boxes.iter().filter(|b| b.t == t).copied().collect()
    }
}

/// Returns the events with `t` in `(t_end - window, t_end]`, order preserved.
pub fn window_slice(stream: &EventStream, t_end: i64, window: i64) -> Result<EventStream> {
    if window <= 0 {
        return Err(Error::Validation(format!("window must be > 0, got {window}")));
    }
    let lo = stream.events.partition_point(|e| e.t <= t_end - window);
    let hi = stream.events.partition_point(|e| e.t <= t_end);
    Ok(EventStream {
        events: stream.events[lo..hi].to_vec(),
        geometry: stream.geometry,
    })
}

/// Caps each 1 ms bucket at `max_per_ms` events, chosen uniformly at
/// random without replacement. Deterministic per seed and idempotent for
/// the same cap and seed; relative order is preserved.
pub fn downsample_density(stream: &EventStream, max_per_ms: usize, seed: u64) -> Result<EventStream> {
    if max_per_ms == 0 {
        return Err(Error::Validation("max_per_ms must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(stream.events.len());
    let mut i = 0;
    while i < stream.events.len() {
        let bucket = stream.events[i].t.div_euclid(1000);
        let mut j = i;
        while j < stream.events.len() && stream.events[j].t.div_euclid(1000) == bucket {
            j += 1;
        }
        let n = j - i;
        if n <= max_per_ms {
            kept.extend_from_slice(&stream.events[i..j]);
        } else {
            let mut picks: Vec<usize> = sample(&mut rng, n, max_per_ms).into_iter().collect();
            picks.sort_unstable();
            kept.extend(picks.into_iter().map(|k| stream.events[i + k]));
        }
        i = j;
    }
    Ok(EventStream {
        events: kept,
        geometry: stream.geometry,
    })
}
