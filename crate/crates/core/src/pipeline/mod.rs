// SPDX-License-Identifier: Apache-2.0

//! Corpus transformations.

mod filter;
mod formats;
mod hints;
mod merge;
mod mst;
mod nms;

pub use filter::{filter_graph, resolve_thresholds, FilterPolicy, ScoreCollector, Thresholds, TypePolicy};
pub use formats::{concat_bfs, flatten_captions, Preset};
pub use hints::{composition_hints, composition_hints_from_root, HintSet};
pub use merge::{exact_label_match, merge_nodes, MergeOutcome, MERGE_OVERLAP};
pub use mst::{euclidean_mst, tree_weight};
pub use nms::{nms, select_boxes, DetectionBox, Plurality, SelectionRules};
