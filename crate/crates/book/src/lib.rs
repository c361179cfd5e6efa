//! The guide in `book/`, compiled here so every snippet runs as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/resistance.md")]
pub mod resistance {}

#[doc = include_str!("../../../book/src/reflection.md")]
pub mod reflection {}

#[doc = include_str!("../../../book/src/composition.md")]
pub mod composition {}

#[doc = include_str!("../../../book/src/transducers.md")]
pub mod transducers {}

#[doc = include_str!("../../../book/src/decision-trees.md")]
pub mod decision_trees {}

#[doc = include_str!("../../../book/src/quantum-walks.md")]
pub mod quantum_walks {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
