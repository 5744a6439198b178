//! Holds the `acceptance` test target; run it with
//! `cargo test -p sparse-choice-acceptance --test acceptance`.
