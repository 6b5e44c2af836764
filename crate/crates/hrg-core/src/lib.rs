//! Hyperedge replacement grammars and their weak Greibach normal form.
//!
//! A hypergraph here is a finite set of nodes together with labeled
//! hyperedges; every edge is attached to an ordered sequence of pairwise
//! distinct nodes, and the graph itself exposes an ordered sequence of
//! *external* nodes that acts as its interface. Hyperedge replacement
//! substitutes a hypergraph for an edge of matching type by fusing the
//! graph's external nodes with the edge's attachment nodes, and a
//! hyperedge replacement grammar (HRG) generates a graph language by
//! repeatedly rewriting nonterminal edges this way.
//!
//! The crate provides:
//!
//! - [`hypergraph`]: the graph representation, validation, handles, the
//!   replacement operation, and an isomorphism-invariant canonical code.
//! - [`mapping`]: partial bijections on `[1,t]` and their composition
//!   algebra, the bookkeeping device behind generated nonterminals.
//! - [`grammar`]: productions with a designated (δ) edge, grammars, and
//!   the derivation engine, including δ-derivations.
//! - [`normalize`]: the transformation pipeline that turns any
//!   isolated-node-bounded grammar into an equivalent grammar in the
//!   *weak Greibach normal form* (WGNF) — exactly one terminal edge in
//!   every right-hand side.
//! - [`oracle`]: bounded language enumeration up to isomorphism, used to
//!   compare grammars and to check the normal form's structural
//!   guarantees at desk scale.
//! - [`gen`]: a deterministic random-grammar generator for stress and
//!   regression testing.
//!
//! Everything is a pure value: all operations return new graphs or
//! grammars and never mutate their inputs, so the types are safe to share
//! across threads.

pub mod gen;
pub mod grammar;
pub mod hypergraph;
pub mod mapping;
pub mod normalize;
pub mod oracle;
