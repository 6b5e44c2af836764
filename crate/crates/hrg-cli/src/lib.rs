//! Command-line front end for the hyperedge-replacement-grammar toolkit.
//!
//! The `hrg` binary reads grammars in the `.hrg` text format (module
//! [`format`]) and drives the `hrg-core` pipeline: validation,
//! normalization into the weak Greibach normal form, bounded language
//! enumeration, and bounded language comparison.

pub mod format;
