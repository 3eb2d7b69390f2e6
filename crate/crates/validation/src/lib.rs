//! Acceptance runs for the whole pipeline live in `tests/acceptance.rs`.
//! Each criterion prints one `PASS` or `FAIL` line:
//!
//! ```text
//! cargo test -p optwit-validation --test acceptance [-- NAME_FILTER]
//! ```
