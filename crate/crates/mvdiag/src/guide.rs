//! The user guide, one module per book chapter. Each chapter's code blocks
//! compile and run as doc-tests, so the book cannot drift from the crate.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/telemetry.md")]
pub mod telemetry {}

#[doc = include_str!("../../../book/src/alerts.md")]
pub mod alerts {}

#[doc = include_str!("../../../book/src/embeddings.md")]
pub mod embeddings {}

#[doc = include_str!("../../../book/src/dataset.md")]
pub mod dataset {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/diagnosis.md")]
pub mod diagnosis {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
