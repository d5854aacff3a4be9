//! The mdbook guide chapters, compiled here so every code snippet in the
//! book runs as a doc-test and stays in sync with the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/stage-one.md")]
pub mod stage_one {}

#[doc = include_str!("../../../book/src/embeddings.md")]
pub mod embeddings {}

#[doc = include_str!("../../../book/src/cluster-filtering.md")]
pub mod cluster_filtering {}

#[doc = include_str!("../../../book/src/random-forests.md")]
pub mod random_forests {}

#[doc = include_str!("../../../book/src/classification.md")]
pub mod classification {}

#[doc = include_str!("../../../book/src/synthetic-data.md")]
pub mod synthetic_data {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli_guide {}
