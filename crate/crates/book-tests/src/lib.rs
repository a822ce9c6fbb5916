//! Runs every code block of the book as a doc-test, so the chapters cannot
//! drift from the `nlchns` API. mdBook itself does not execute examples
//! against crate dependencies; including the chapters as rustdoc here does.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/spectral.md")]
pub mod spectral {}

#[doc = include_str!("../../../book/src/potential.md")]
pub mod potential {}

#[doc = include_str!("../../../book/src/stepping.md")]
pub mod stepping {}

#[doc = include_str!("../../../book/src/envelopes.md")]
pub mod envelopes {}

#[doc = include_str!("../../../book/src/attractors.md")]
pub mod attractors {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
