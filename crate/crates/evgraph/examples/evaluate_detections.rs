//! Hand-built detection scenarios scored with the interpolated-AP
//! evaluator, tracing how precision/recall translate into mAP.
//!
//! ```bash
//! cargo run --release --example evaluate_detections
//! ```

use evgraph::detect::{coco_thresholds, evaluate_map, BBox, Detection};
use evgraph::events::LabeledBox;

fn gt(t: i64, class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> LabeledBox {
    LabeledBox {
        t,
        class_id,
        cx,
        cy,
        w,
        h,
    }
}

fn det(t: i64, class_id: u32, score: f64, cx: f64, cy: f64, w: f64, h: f64, key: u32) -> Detection {
    Detection {
        t,
        class_id,
        score,
        bbox: BBox::new(cx, cy, w, h),
        node_key: key,
    }
}

fn main() {
    let gts = vec![
        gt(1000, 0, 50.0, 50.0, 20.0, 20.0),
        gt(1000, 0, 120.0, 80.0, 24.0, 24.0),
        gt(1000, 1, 200.0, 60.0, 32.0, 16.0),
        gt(2000, 0, 55.0, 52.0, 20.0, 20.0),
    ];
    let dets = vec![
        det(1000, 0, 0.95, 50.5, 50.0, 20.0, 20.0, 0), // tight match
        det(1000, 0, 0.80, 140.0, 80.0, 24.0, 24.0, 1), // off target: FP
        det(1000, 1, 0.90, 201.0, 60.0, 32.0, 16.0, 2), // match
        det(2000, 0, 0.70, 56.0, 52.0, 20.0, 20.0, 3),  // match at the later label
    ];

    let report = evaluate_map(&dets, &gts, &coco_thresholds());
    print!("{}", report.to_table());
    println!();
    println!("class 0 has 3 boxes, 2 matched -> recall caps at 2/3 with one FP in between");
    println!("mAP   = {:.4}", report.map);
    println!("mAP@50 = {:.4}", report.map50);

    // Perfect detections score exactly 1.
    let perfect: Vec<Detection> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| det(g.t, g.class_id, 1.0, g.cx, g.cy, g.w, g.h, i as u32))
        .collect();
    let r = evaluate_map(&perfect, &gts, &coco_thresholds());
    assert_eq!(r.map, 1.0);
    println!("perfect detections -> mAP = {:.4}", r.map);
}
