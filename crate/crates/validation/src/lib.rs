//! Acceptance checks for the toolkit. Run them with
//! `cargo test -p patternkit-validation --test acceptance`; pass criterion
//! numbers after `--` to run a subset.
