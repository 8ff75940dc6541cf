//! Training-time augmentation: global translation and anchored cropping.
//!
//! Both transforms move events and ground-truth boxes identically.
//! Translation drops events pushed off the sensor and clips boxes;
//! cropping picks a random ground-truth box as the anchor, cuts a window
//! around it sized as a fraction of the sensor (grown to contain the
//! anchor), and re-bases all coordinates to the crop origin.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, LabeledBox, SensorGeometry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub translate_prob: f64,
    pub translate_min: f64,
    pub translate_max: f64,
    pub crop_prob: f64,
    pub crop_min: f64,
    pub crop_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            translate_prob: 0.5,
            translate_min: 0.05,
            translate_max: 0.15,
            crop_prob: 0.4,
            crop_min: 0.05,
            crop_max: 0.25,
        }
    }
}

fn clip_box(b: &LabeledBox, geom: &SensorGeometry) -> Option<LabeledBox> {
    let x0 = (b.cx - b.w / 2.0).max(0.0);
    let x1 = (b.cx + b.w / 2.0).min(geom.width as f64);
    let y0 = (b.cy - b.h / 2.0).max(0.0);
    let y1 = (b.cy + b.h / 2.0).min(geom.height as f64);
    if x1 - x0 < 1.0 || y1 - y0 < 1.0 {
        return None;
    }
    Some(LabeledBox {
        t: b.t,
        class_id: b.class_id,
        cx: (x0 + x1) / 2.0,
        cy: (y0 + y1) / 2.0,
        w: x1 - x0,
        h: y1 - y0,
    })
}

/// Shifts every event and box by (dx, dy) pixels, dropping events that
/// leave the sensor and clipping boxes to it.
pub fn apply_translation(
    stream: &EventStream,
    gts: &[LabeledBox],
    dx: i64,
    dy: i64,
) -> (EventStream, Vec<LabeledBox>) {
    let geom = stream.geometry;
    let events: Vec<Event> = stream
        .events
        .iter()
        .filter_map(|e| {
            let x = e.x as i64 + dx;
            let y = e.y as i64 + dy;
            if x < 0 || y < 0 || x >= geom.width as i64 || y >= geom.height as i64 {
                None
            } else {
                Some(Event::new(e.t, x as u16, y as u16, e.p))
            }
        })
        .collect();
    let boxes = gts
        .iter()
        .filter_map(|b| {
            clip_box(
                &LabeledBox {
                    cx: b.cx + dx as f64,
                    cy: b.cy + dy as f64,
                    ..*b
                },
                &geom,
            )
        })
        .collect();
    (
        EventStream {
            events,
            geometry: geom,
        },
        boxes,
    )
}

/// Cuts the window `[x0, x0+w) x [y0, y0+h)` and re-bases coordinates to
/// its origin. The sensor canvas is kept, so neighborhood radii and
/// feature normalization stay consistent between crops and full frames.
pub fn apply_crop(
    stream: &EventStream,
    gts: &[LabeledBox],
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
) -> Result<(EventStream, Vec<LabeledBox>)> {
    let geom = stream.geometry;
    let crop = SensorGeometry::new(w, h)?;
    let events: Vec<Event> = stream
        .events
        .iter()
        .filter_map(|e| {
            let x = e.x as i64 - x0 as i64;
            let y = e.y as i64 - y0 as i64;
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                None
            } else {
                Some(Event::new(e.t, x as u16, y as u16, e.p))
            }
        })
        .collect();
    let boxes = gts
        .iter()
        .filter_map(|b| {
            // Clip to the crop window first, then re-base.
            let clipped = clip_box(
                &LabeledBox {
                    cx: b.cx - x0 as f64,
                    cy: b.cy - y0 as f64,
                    ..*b
                },
                &crop,
            )?;
            clip_box(&clipped, &geom)
        })
        .collect();
    Ok((
        EventStream {
            events,
            geometry: geom,
        },
        boxes,
    ))
}

/// Randomized augmentation, deterministic per seed. Requires at least one
/// ground-truth box (the crop anchor).
pub fn augment(
    stream: &EventStream,
    gts: &[LabeledBox],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<(EventStream, Vec<LabeledBox>)> {
    if gts.is_empty() {
        return Err(Error::Validation(
            "augmentation requires at least one ground-truth box".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = stream.clone();
    let mut boxes = gts.to_vec();

    if rng.random_bool(cfg.translate_prob.clamp(0.0, 1.0)) {
        let geom = stream.geometry;
        let fx = rng.random_range(cfg.translate_min..=cfg.translate_max);
        let fy = rng.random_range(cfg.translate_min..=cfg.translate_max);
        let sx = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let sy = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let dx = (fx * sx * geom.width as f64).round() as i64;
        let dy = (fy * sy * geom.height as f64).round() as i64;
        let (s, b) = apply_translation(&stream, &boxes, dx, dy);
        if !b.is_empty() {
            stream = s;
            boxes = b;
        }
    }

    if rng.random_bool(cfg.crop_prob.clamp(0.0, 1.0)) && !boxes.is_empty() {
        let geom = stream.geometry;
        let anchor = boxes[rng.random_range(0..boxes.len())];
        let frac = rng.random_range(cfg.crop_min..=cfg.crop_max);
        // Grow the crop to contain the anchor box.
        let cw = (frac * geom.width as f64).max(anchor.w + 2.0).ceil() as u32;
        let ch = (frac * geom.height as f64).max(anchor.h + 2.0).ceil() as u32;
        let cw = cw.min(geom.width);
        let ch = ch.min(geom.height);
        let x0 = (anchor.cx - cw as f64 / 2.0)
            .round()
            .clamp(0.0, (geom.width - cw) as f64) as u32;
        let y0 = (anchor.cy - ch as f64 / 2.0)
            .round()
            .clamp(0.0, (geom.height - ch) as f64) as u32;
        let (s, b) = apply_crop(&stream, &boxes, x0, y0, cw, ch)?;
        if !b.is_empty() {
            stream = s;
            boxes = b;
        }
    }
    Ok((stream, boxes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{generate_synthetic, MovingRect, SceneSpec};

    fn scene() -> (EventStream, Vec<LabeledBox>) {
        let mut s = SceneSpec::new(SensorGeometry::new(304, 240).unwrap(), 100);
        s.noise_per_ms = 1.0;
        s.shapes.push(MovingRect {
            class_id: 0,
            cx: 150.0,
            cy: 120.0,
            w: 24.0,
            h: 20.0,
            vx: 0.03,
            vy: -0.02,
        });
        let (stream, gt) = generate_synthetic(&s, 3).unwrap();
        (stream, gt.boxes)
    }

    #[test]
    fn zero_probability_is_identity() {
        let (stream, boxes) = scene();
        let cfg = AugmentConfig {
            translate_prob: 0.0,
            crop_prob: 0.0,
            ..AugmentConfig::default()
        };
        let (s, b) = augment(&stream, &boxes, &cfg, 7).unwrap();
        assert_eq!(s, stream);
        assert_eq!(b, boxes);
    }

    #[test]
    fn augment_requires_ground_truth() {
        let (stream, _) = scene();
        assert!(augment(&stream, &[], &AugmentConfig::default(), 0).is_err());
    }

    #[test]
    fn exact_translation_shifts_everything() {
        // Noise-free scene, shape far from the right edge: nothing drops.
        let mut spec = SceneSpec::new(SensorGeometry::new(304, 240).unwrap(), 100);
        spec.shapes.push(MovingRect {
            class_id: 0,
            cx: 150.0,
            cy: 120.0,
            w: 24.0,
            h: 20.0,
            vx: 0.03,
            vy: -0.02,
        });
        let (stream, gt) = generate_synthetic(&spec, 3).unwrap();
        let boxes = gt.boxes;
        let dx = (0.10 * stream.geometry.width as f64).round() as i64;
        let (s, b) = apply_translation(&stream, &boxes, dx, 0);
        assert_eq!(s.len(), stream.len());
        for (e0, e1) in stream.events.iter().zip(&s.events) {
            assert_eq!(e1.x as i64, e0.x as i64 + dx);
            assert_eq!(e1.y, e0.y);
            assert_eq!(e1.t, e0.t);
        }
        for (b0, b1) in boxes.iter().zip(&b) {
            assert!((b1.cx - b0.cx - dx as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_drops_out_of_bounds_events() {
        let (stream, boxes) = scene();
        let (s, _) = apply_translation(&stream, &boxes, 300, 0);
        assert!(s.len() < stream.len());
        assert!(s.events.iter().all(|e| stream.geometry.contains(e.x, e.y)));
    }

    #[test]
    fn crop_contains_anchor_and_rebases() {
        let (stream, boxes) = scene();
        let cfg = AugmentConfig {
            translate_prob: 0.0,
            crop_prob: 1.0,
            ..AugmentConfig::default()
        };
        for seed in 0..20 {
            let (s, b) = augment(&stream, &boxes, &cfg, seed).unwrap();
            assert!(!b.is_empty(), "crop must keep the anchor box");
            assert!(s.geometry.width <= stream.geometry.width);
            for e in &s.events {
                assert!(s.geometry.contains(e.x, e.y));
            }
            for bx in &b {
                assert!(bx.cx - bx.w / 2.0 >= -1e-9);
                assert!(bx.cx + bx.w / 2.0 <= s.geometry.width as f64 + 1e-9);
            }
            // At least one surviving box nearly matches the anchor size,
            // i.e. the anchor was not clipped away.
            assert!(b
                .iter()
                .any(|bx| boxes.iter().any(|a| (a.w - bx.w).abs() < 1e-6 && (a.h - bx.h).abs() < 1e-6)));
        }
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let (stream, boxes) = scene();
        let cfg = AugmentConfig::default();
        let a = augment(&stream, &boxes, &cfg, 11).unwrap();
        let b = augment(&stream, &boxes, &cfg, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn augment_preserves_event_order_and_bounds() {
        let (stream, boxes) = scene();
        let cfg = AugmentConfig {
            translate_prob: 1.0,
            crop_prob: 1.0,
            ..AugmentConfig::default()
        };
        for seed in 0..10 {
            let (s, b) = augment(&stream, &boxes, &cfg, seed).unwrap();
            assert!(s.is_sorted());
            assert!(s.events.iter().all(|e| s.geometry.contains(e.x, e.y)));
            for bx in &b {
                assert!(bx.w > 0.0 && bx.h > 0.0);
            }
        }
    }
}
