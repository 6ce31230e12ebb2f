// SPDX-License-Identifier: Apache-2.0

//! Detection post-processing.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::graph::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plurality {
    Single,
    Multiple,
}

impl Plurality {
    pub fn nms_threshold(self) -> f64 {
        match self {
            Plurality::Single => 0.05,
            Plurality::Multiple => 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub bbox: BBox,
    pub score: f64,
    pub label: String,
    pub plurality: Plurality,
}

impl DetectionBox {
    pub fn new(bbox: BBox, score: f64, label: impl Into<String>, plurality: Plurality) -> Self {
        DetectionBox {
            bbox,
            score,
            label: label.into(),
            plurality,
        }
    }
}

/// Score descending, then `x1`, then `y1` ascending.
fn rank(a: &DetectionBox, b: &DetectionBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
}

/// Greedy NMS: keep the best remaining box, suppress everything overlapping
/// it with IoU above `iou_threshold`, repeat.
pub fn nms(boxes: &[DetectionBox], iou_threshold: f64) -> Vec<DetectionBox> {
    let mut sorted: Vec<&DetectionBox> = boxes.iter().collect();
    sorted.sort_by(|a, b| rank(a, b));
    let mut keep: Vec<DetectionBox> = Vec::new();
    for b in sorted {
        if keep.iter().all(|k| k.bbox.iou(&b.bbox) <= iou_threshold) {
            keep.push(b.clone());
        }
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRules {
    pub min_score: f64,
    pub min_pixel_area: f64,
    /// Boxes must cover less than this fraction of the query region.
    pub max_region_fraction: f64,
    pub max_boxes: usize,
}

impl Default for SelectionRules {
    fn default() -> Self {
        SelectionRules {
            min_score: 0.05,
            min_pixel_area: 5000.0,
            max_region_fraction: 0.8,
            max_boxes: 6,
        }
    }
}

/// Detection selection for one query text.
///
/// `entity_region` is the box of the entity whose query produced the
/// detections; when given, boxes covering 80% of it or more are discarded.
pub fn select_boxes(
    boxes: &[DetectionBox],
    plurality: Plurality,
    image_size: (u32, u32),
    entity_region: Option<&BBox>,
    rules: &SelectionRules,
) -> Vec<DetectionBox> {
    let candidates: Vec<DetectionBox> = boxes
        .iter()
        .filter(|b| b.score.is_finite() && b.score >= rules.min_score)
        .filter(|b| b.bbox.pixel_area(image_size.0, image_size.1) >= rules.min_pixel_area)
        .filter(|b| {
            entity_region.is_none_or(|r| {
                r.area() > 0.0 && b.bbox.area() / r.area() < rules.max_region_fraction
            })
        })
        .cloned()
        .collect();
    let mut kept = nms(&candidates, plurality.nms_threshold());
    kept.truncate(rules.max_boxes);
    kept
}
