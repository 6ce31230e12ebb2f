// SPDX-License-Identifier: Apache-2.0

//! Holds the acceptance suite in `tests/acceptance.rs`; it runs after the
//! per-crate suites under `cargo test --workspace`.
