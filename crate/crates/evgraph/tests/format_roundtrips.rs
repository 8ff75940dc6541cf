//! Byte-exactness of every on-disk format: events (CSV and binary),
//! graph dumps, checkpoints, and detections survive write-read-write.

use evgraph::detect::{parse_detections, write_detections, BBox, Detection};
use evgraph::events::{
    parse_events, parse_events_binary, parse_ground_truth, write_events, write_events_binary,
    write_ground_truth, Event, EventStream, GroundTruth, LabeledBox, SensorGeometry,
};
use evgraph::graph::{build_graph, dump_graph, parse_graph_dump, GraphConfig};
use evgraph::nn::{ModelConfig, ModelParams};
use proptest::prelude::*;

fn geom() -> SensorGeometry {
    SensorGeometry::new(304, 240).unwrap()
}

fn event_strategy() -> impl Strategy<Value = Event> {
    (0i64..1_000_000, 0u16..304, 0u16..240, prop::bool::ANY)
        .prop_map(|(t, x, y, p)| Event::new(t, x, y, if p { 1 } else { -1 }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn events_csv_write_read_write(events in prop::collection::vec(event_strategy(), 0..200)) {
        let stream = EventStream::new(events, geom()).unwrap();
        let text = write_events(&stream);
        let parsed = parse_events(&text, geom()).unwrap();
        prop_assert_eq!(&parsed, &stream);
        prop_assert_eq!(write_events(&parsed), text);
    }

    #[test]
    fn events_binary_write_read_write(events in prop::collection::vec(event_strategy(), 0..200)) {
        let stream = EventStream::new(events, geom()).unwrap();
        let bytes = write_events_binary(&stream);
        let parsed = parse_events_binary(&bytes).unwrap();
        prop_assert_eq!(&parsed, &stream);
        prop_assert_eq!(write_events_binary(&parsed), bytes);
    }

    #[test]
    fn graph_dump_write_read_write(raw in prop::collection::vec(
        (0i64..99_000, 0u16..304, 0u16..240, prop::bool::ANY),
        1..80,
    )) {
        // Times bounded by the window so the whole span builds as one graph.
        let events: Vec<Event> = raw
            .into_iter()
            .map(|(t, x, y, p)| Event::new(t, x, y, if p { 1 } else { -1 }))
            .collect();
        let stream = EventStream::new(events, geom()).unwrap();
        let graph = build_graph(&stream, &GraphConfig::default()).unwrap();
        let text = dump_graph(&graph);
        let parsed = parse_graph_dump(&text).unwrap();
        prop_assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn detections_csv_write_read_write(rows in prop::collection::vec(
        (0i64..1_000_000, 0u32..4, 0.0f64..1.0, 1.0f64..300.0, 1.0f64..200.0, 1.0f64..64.0, 1.0f64..64.0),
        0..50,
    )) {
        let dets: Vec<Detection> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (t, class_id, score, cx, cy, w, h))| Detection {
                t,
                class_id,
                score,
                bbox: BBox::new(cx, cy, w, h),
                node_key: i as u32,
            })
            .collect();
        let text = write_detections(&dets);
        let parsed = parse_detections(&text).unwrap();
        prop_assert_eq!(write_detections(&parsed), text);
    }
}

#[test]
fn ground_truth_csv_write_read_write() {
    let gt = GroundTruth {
        boxes: vec![
            LabeledBox { t: 33_333, class_id: 0, cx: 40.25, cy: 60.5, w: 24.0, h: 18.0 },
            LabeledBox { t: 66_667, class_id: 1, cx: 200.0, cy: 100.0, w: 36.5, h: 16.25 },
        ],
    };
    let text = write_ground_truth(&gt);
    let parsed = parse_ground_truth(&text).unwrap();
    assert_eq!(parsed, gt);
    assert_eq!(write_ground_truth(&parsed), text);
}

#[test]
fn checkpoint_write_read_write_bitwise() {
    let cfg = ModelConfig::desk(3);
    let params = ModelParams::init(&cfg, 99).unwrap();
    let bytes = params.to_bytes();
    let parsed = ModelParams::from_bytes(&bytes).unwrap();
    assert_eq!(parsed, params);
    assert_eq!(parsed.to_bytes(), bytes);
}

#[test]
fn model_config_write_read_write() {
    let mut cfg = ModelConfig::new(4);
    cfg.channels = vec![16, 16, 32];
    cfg.use_mvl = true;
    let text = cfg.to_text();
    let parsed = ModelConfig::parse(&text).unwrap();
    assert_eq!(parsed, cfg);
    assert_eq!(parsed.to_text(), text);
}
