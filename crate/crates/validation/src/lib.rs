//! Holds the acceptance suite in `tests/acceptance.rs`. It lives in its own
//! crate so that a failing criterion cannot stop the unit and CLI tests of
//! the other crates from running under `cargo test --workspace`.
