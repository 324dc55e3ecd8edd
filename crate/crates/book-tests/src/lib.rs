// mdbook cannot run chapter snippets as tests by itself, so each chapter
// is included here as a rustdoc page and `cargo test --doc` runs them.
#![doc = include_str!("../../../book/src/introduction.md")]
