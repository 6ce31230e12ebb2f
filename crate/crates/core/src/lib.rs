// SPDX-License-Identifier: Apache-2.0

//! Toolkit for graph-based captions (GBC): one image annotated as a rooted,
//! labeled DAG whose nodes carry bounding boxes and plain-text captions.
//!
//! The crate is organised by concern:
//!
//! - [`graph`], [`dag`] and [`validate`]: the data model, structural
//!   algorithms and the invariant checker.
//! - [`io`]: JSON-lines corpora and the line-oriented plain-text node encoding.
//! - [`text`]: reference tokenizer, label spans, 77-token splitting and the
//!   caption graph.
//! - [`pipeline`]: filtering, merging, NMS, annotation formats and
//!   composition hints.
//! - [`attention`] and [`loss`]: numerical references for structure-aware
//!   cross-attention and the multi-positive contrastive losses.
//! - [`t2imask`]: patch/prompt masks and attention-score segmentation.
//! - [`stats`]: mergeable corpus statistics.
//! - [`corpus`] and [`par`]: the ordered streaming driver used by the CLI.
//!
//! With the default `parallel` feature the per-record work runs on a rayon
//! pool; without it every entry point falls back to a sequential loop with
//! identical output.

pub mod attention;
pub mod corpus;
pub mod dag;
pub mod error;
pub mod graph;
pub mod io;
pub mod loss;
pub mod normalize;
pub mod par;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod t2imask;
pub mod text;
pub mod validate;

pub use error::{GbcError, Result};
pub use graph::{BBox, Caption, CaptionType, Edge, GbcGraph, Node, NodeType};
pub use validate::{validate, Rule, ValidationReport, Violation};
