// SPDX-License-Identifier: Apache-2.0

//! Support math for generating images from a graph: which image patches
//! attend to which node prompt, negative graphs, parent-context prompts, and
//! segmenting attention scores into per-node regions.

mod mask;
mod segment;

pub use mask::{
    build_negative_gbc, build_patch_prompt_mask, parent_context_prompts, parent_label_token_mask, ContextPrompt,
    NegativeGraph, PatchGrid, PatchPromptMask, DEFAULT_NEGATIVE,
};
pub use segment::{
    assign_segments, combine_segmentations, ema_update, felzenszwalb_segment, otsu_bin, otsu_threshold,
    upsample_nearest, Assignment, ScoreMap, Segmentation, OTSU_BINS,
};
