//! Deterministic synthetic scenes of moving rectangles.
//!
//! Each shape is rendered with anti-aliased pixel coverage; a pixel emits
//! an event whenever its accumulated brightness change since its last
//! emission crosses a contrast threshold, with per-pixel Bernoulli
//! thinning. The polarity is the sign of the change, so leading edges
//! fire +1 and trailing edges -1. A static shape produces no events.
//! Uniform background noise and ground-truth boxes at a fixed label
//! frequency complete the scene.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, GroundTruth, LabeledBox, SensorGeometry};

/// A rectangle moving at constant velocity, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingRect {
    pub class_id: u32,
    /// Center at t = 0.
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Velocity in px per millisecond.
    pub vx: f64,
    pub vy: f64,
}

impl MovingRect {
    pub fn center_at(&self, t_us: i64) -> (f64, f64) {
        let t_ms = t_us as f64 / 1000.0;
        (self.cx + self.vx * t_ms, self.cy + self.vy * t_ms)
    }

    pub fn is_moving(&self) -> bool {
        self.vx != 0.0 || self.vy != 0.0
    }
}

/// Scene description consumed by [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub geometry: SensorGeometry,
    pub duration_ms: u32,
    /// Uniform background noise, events per millisecond.
    pub noise_per_ms: f64,
    /// Ground-truth labeling frequency in Hz.
    pub label_hz: f64,
    pub shapes: Vec<MovingRect>,
    /// Brightness change required to trigger an event.
    pub contrast_threshold: f64,
    /// Keep probability of each triggered event.
    pub emit_prob: f64,
}

impl SceneSpec {
    pub fn new(geometry: SensorGeometry, duration_ms: u32) -> Self {
        SceneSpec {
            geometry,
            duration_ms,
            noise_per_ms: 0.0,
            label_hz: 30.0,
            shapes: Vec::new(),
            contrast_threshold: 0.3,
            emit_prob: 0.75,
        }
    }

    /// Label timestamps in microseconds: k / label_hz for k = 1.. while
    /// within the scene duration.
    pub fn label_times(&self) -> Vec<i64> {
        let end = self.duration_ms as i64 * 1000;
        let mut out = Vec::new();
        let mut k = 1u32;
        loop {
            let t = (k as f64 * 1e6 / self.label_hz).round() as i64;
            if t > end {
                break;
            }
            out.push(t);
            k += 1;
        }
        out
    }

    /// Parses the scene file format: `key = value` lines plus one
    /// `rect = class cx cy w h vx vy` line per shape. Unknown keys are
    /// rejected.
    pub fn parse(text: &str) -> Result<SceneSpec> {
        let mut width = 304u32;
        let mut height = 240u32;
        let mut spec = SceneSpec::new(SensorGeometry::new(width, height)?, 0);
        let mut saw_duration = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno + 1, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::parse(lineno + 1, format!("invalid {what} `{value}`"));
            match key {
                "width" => width = value.parse().map_err(|_| bad("width"))?,
                "height" => height = value.parse().map_err(|_| bad("height"))?,
                "duration_ms" => {
                    spec.duration_ms = value.parse().map_err(|_| bad("duration_ms"))?;
                    saw_duration = true;
                }
                "noise_per_ms" => spec.noise_per_ms = value.parse().map_err(|_| bad("noise_per_ms"))?,
                "label_hz" => spec.label_hz = value.parse().map_err(|_| bad("label_hz"))?,
                "contrast_threshold" => {
                    spec.contrast_threshold = value.parse().map_err(|_| bad("contrast_threshold"))?
                }
                "emit_prob" => spec.emit_prob = value.parse().map_err(|_| bad("emit_prob"))?,
                "rect" => {
                    let nums: Vec<f64> = value
                        .split_whitespace()
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("rect"))?;
                    if nums.len() != 7 {
                        return Err(Error::parse(
                            lineno + 1,
                            "rect needs 7 numbers: class cx cy w h vx vy",
                        ));
                    }
                    spec.shapes.push(MovingRect {
                        class_id: nums[0] as u32,
                        cx: nums[1],
                        cy: nums[2],
                        w: nums[3],
                        h: nums[4],
                        vx: nums[5],
                        vy: nums[6],
                    });
                }
                other => {
                    return Err(Error::parse(lineno + 1, format!("unknown key `{other}`")));
                }
            }
        }
        if !saw_duration {
            return Err(Error::Validation("scene file missing duration_ms".into()));
        }
        spec.geometry = SensorGeometry::new(width, height)?;
        Ok(spec)
    }
}

/// Renders the scene into an event stream plus ground truth. Deterministic
/// for a fixed seed; two calls produce identical output.
pub fn generate_synthetic(scene: &SceneSpec, seed: u64) -> Result<(EventStream, GroundTruth)> {
    if scene.duration_ms == 0 {
        return Err(Error::Validation("scene duration must be positive".into()));
    }
    if scene.label_hz <= 0.0 {
        return Err(Error::Validation("label frequency must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geom = scene.geometry;
    let label_times = scene.label_times();

    let mut events: Vec<Event> = Vec::new();
    // Emission count per (shape, label interval), to honor the generator
    // contract that every label interval of a moving shape holds an event.
    let mut interval_hits: Vec<Vec<u32>> = vec![vec![0; label_times.len()]; scene.shapes.len()];
    let interval_of = |t: i64| label_times.partition_point(|&lt| lt < t);

    for (si, shape) in scene.shapes.iter().enumerate() {
        if !shape.is_moving() {
            continue;
        }
        // Last brightness level at which each touched pixel emitted.
        let mut last_level: HashMap<(u16, u16), f64> = HashMap::new();
        for step in 1..=scene.duration_ms as i64 {
            let t0 = (step - 1) * 1000;
            let t1 = step * 1000;
            let (cx, cy) = shape.center_at(t1);
            let x_lo = ((cx - shape.w / 2.0).floor() as i64 - 1).max(0) as u16;
            let x_hi = ((cx + shape.w / 2.0).ceil() as i64 + 1).min(geom.width as i64 - 1) as u16;
            let y_lo = ((cy - shape.h / 2.0).floor() as i64 - 1).max(0) as u16;
            let y_hi = ((cy + shape.h / 2.0).ceil() as i64 + 1).min(geom.height as i64 - 1) as u16;
            for py in y_lo..=y_hi {
                for px in x_lo..=x_hi {
                    let cov = pixel_coverage(px, py, cx, cy, shape.w, shape.h);
                    let level = *last_level.entry((px, py)).or_insert_with(|| {
                        // Random initial phase so pixels of one edge do not
                        // all fire on the same step.
                        cov - rng.random_range(0.0..scene.contrast_threshold)
                    });
                    let delta = cov - level;
                    if delta.abs() >= scene.contrast_threshold {
                        last_level.insert((px, py), cov);
                        if rng.random_bool(scene.emit_prob.clamp(0.0, 1.0)) {
                            let t = rng.random_range(t0 + 1..=t1);
                            events.push(Event::new(t, px, py, if delta > 0.0 { 1 } else { -1 }));
                            let iv = interval_of(t);
                            if iv < label_times.len() {
                                interval_hits[si][iv] += 1;
                            }
                        }
                    }
                }
            }
        }
    }

    // Backstop for the contract: a moving shape with a silent label
    // interval emits one event at the box center on the label time.
    for (si, shape) in scene.shapes.iter().enumerate() {
        if !shape.is_moving() {
            continue;
        }
        for (iv, &lt) in label_times.iter().enumerate() {
            if interval_hits[si][iv] > 0 {
                continue;
            }
            let (cx, cy) = shape.center_at(lt);
            let px = (cx.round() as i64).clamp(0, geom.width as i64 - 1) as u16;
            let py = (cy.round() as i64).clamp(0, geom.height as i64 - 1) as u16;
            events.push(Event::new(lt, px, py, 1));
        }
    }

    // Uniform background noise.
    if scene.noise_per_ms > 0.0 {
        for step in 1..=scene.duration_ms as i64 {
            let t0 = (step - 1) * 1000;
            let t1 = step * 1000;
            let whole = scene.noise_per_ms.floor() as usize;
            let frac = scene.noise_per_ms - whole as f64;
            let n = whole + usize::from(frac > 0.0 && rng.random_bool(frac));
            for _ in 0..n {
                let t = rng.random_range(t0 + 1..=t1);
                let x = rng.random_range(0..geom.width as u16);
                let y = rng.random_range(0..geom.height as u16);
                let p = if rng.random_bool(0.5) { 1 } else { -1 };
                events.push(Event::new(t, x, y, p));
            }
        }
    }

    events.sort_by_key(|e| e.t);
    let stream = EventStream {
        events,
        geometry: geom,
    };

    let mut boxes = Vec::new();
    for &lt in &label_times {
        for shape in &scene.shapes {
            let (cx, cy) = shape.center_at(lt);
            if let Some(b) = clamp_box(lt, shape.class_id, cx, cy, shape.w, shape.h, geom) {
                boxes.push(b);
            }
        }
    }
    Ok((stream, GroundTruth { boxes }))
}

/// Overlap area of the unit pixel at (px, py) with the rectangle centered
/// at (cx, cy).
fn pixel_coverage(px: u16, py: u16, cx: f64, cy: f64, w: f64, h: f64) -> f64 {
    let ox = (f64::min(px as f64 + 1.0, cx + w / 2.0) - f64::max(px as f64, cx - w / 2.0)).max(0.0);
    let oy = (f64::min(py as f64 + 1.0, cy + h / 2.0) - f64::max(py as f64, cy - h / 2.0)).max(0.0);
    ox * oy
}

/// Clips a box to the sensor; returns None when nothing remains.
fn clamp_box(
    t: i64,
    class_id: u32,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    geom: SensorGeometry,
) -> Option<LabeledBox> {
    let x0 = (cx - w / 2.0).max(0.0);
    let x1 = (cx + w / 2.0).min(geom.width as f64);
    let y0 = (cy - h / 2.0).max(0.0);
    let y1 = (cy + h / 2.0).min(geom.height as f64);
    if x1 - x0 < 1.0 || y1 - y0 < 1.0 {
        return None;
    }
    Some(LabeledBox {
        t,
        class_id,
        cx: (x0 + x1) / 2.0,
        cy: (y0 + y1) / 2.0,
        w: x1 - x0,
        h: y1 - y0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::write_events;

    fn base_scene() -> SceneSpec {
        let mut s = SceneSpec::new(SensorGeometry::new(304, 240).unwrap(), 100);
        s.shapes.push(MovingRect {
            class_id: 0,
            cx: 60.0,
            cy: 60.0,
            w: 20.0,
            h: 20.0,
            vx: 0.05,
            vy: 0.02,
        });
        s
    }

    #[test]
    fn zero_duration_is_rejected() {
        let s = SceneSpec::new(SensorGeometry::new(64, 64).unwrap(), 0);
        assert!(generate_synthetic(&s, 0).is_err());
    }

    #[test]
    fn static_shape_without_noise_emits_nothing() {
        let mut s = base_scene();
        s.shapes[0].vx = 0.0;
        s.shapes[0].vy = 0.0;
        let (stream, gt) = generate_synthetic(&s, 1).unwrap();
        assert!(stream.is_empty());
        assert!(!gt.boxes.is_empty());
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let s = base_scene();
        let (a, ga) = generate_synthetic(&s, 42).unwrap();
        let (b, gb) = generate_synthetic(&s, 42).unwrap();
        assert_eq!(write_events(&a), write_events(&b));
        assert_eq!(ga, gb);
    }

    #[test]
    fn labels_follow_closed_form_kinematics() {
        // 1 px/ms for 100 ms at 30 Hz: three labels whose centers advance
        // 10 px per 10 ms from the start position.
        let mut s = SceneSpec::new(SensorGeometry::new(640, 480).unwrap(), 100);
        s.shapes.push(MovingRect {
            class_id: 1,
            cx: 100.0,
            cy: 200.0,
            w: 30.0,
            h: 30.0,
            vx: 1.0,
            vy: 0.0,
        });
        let (_, gt) = generate_synthetic(&s, 5).unwrap();
        assert_eq!(gt.boxes.len(), 3);
        let times = gt.label_times();
        assert_eq!(times, vec![33333, 66667, 100000]);
        for b in &gt.boxes {
            let expect = 100.0 + b.t as f64 / 1000.0;
            assert!((b.cx - expect).abs() < 1e-9, "cx {} vs {}", b.cx, expect);
            assert!((b.cy - 200.0).abs() < 1e-9);
        }
    }

    #[test]
    fn moving_shape_covers_every_label_interval() {
        let s = base_scene();
        let (stream, gt) = generate_synthetic(&s, 9).unwrap();
        let times = gt.label_times();
        let mut prev = 0i64;
        for &lt in &times {
            let b = gt.boxes.iter().find(|b| b.t == lt).unwrap();
            let hit = stream.events.iter().any(|e| {
                e.t > prev
                    && e.t <= lt
                    && (e.x as f64 + 0.5 - b.cx).abs() <= b.w / 2.0
                    && (e.y as f64 + 0.5 - b.cy).abs() <= b.h / 2.0
            });
            assert!(hit, "no shape event inside box during interval ending {lt}");
            prev = lt;
        }
    }

    #[test]
    fn events_are_sorted_and_in_bounds() {
        let mut s = base_scene();
        s.noise_per_ms = 3.0;
        let (stream, _) = generate_synthetic(&s, 3).unwrap();
        assert!(stream.is_sorted());
        assert!(stream
            .events
            .iter()
            .all(|e| stream.geometry.contains(e.x, e.y)));
        assert!(stream.len() > 100);
    }

    #[test]
    fn scene_file_roundtrip_of_fields() {
        let text = "width = 128\nheight = 96\nduration_ms = 50\nnoise_per_ms = 1.5\nlabel_hz = 20\nrect = 1 40 40 16 12 0.03 -0.01\n";
        let spec = SceneSpec::parse(text).unwrap();
        assert_eq!(spec.geometry.width, 128);
        assert_eq!(spec.shapes.len(), 1);
        assert_eq!(spec.shapes[0].class_id, 1);
        assert!(SceneSpec::parse("bogus = 1\nduration_ms = 5\n").is_err());
    }
}
