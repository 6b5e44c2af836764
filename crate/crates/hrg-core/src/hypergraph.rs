//! Hypergraphs with labeled, ordered-attachment hyperedges.
//!
//! A [`Hypergraph`] owns a set of nodes, a set of edges (each carrying a
//! label and an ordered attachment sequence of pairwise distinct nodes),
//! and an ordered external-node sequence. The arity demanded of each
//! label lives in a [`LabelTable`]; [`Hypergraph::validate`] checks a
//! graph against a table and reports every violation.
//!
//! The module also provides the two constructions everything else is
//! built from: [`handle`] (the one-edge graph whose attachment sequence
//! equals its external sequence) and [`Hypergraph::replace`] (hyperedge
//! replacement). [`Hypergraph::canonical_code`] produces a fingerprint
//! that is equal for two graphs exactly when they are isomorphic, which
//! gives sets of graphs isomorphism-aware semantics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Errors raised by hypergraph construction and operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HypergraphError {
    /// A label was looked up that the table does not contain.
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    /// A label was registered twice.
    #[error("label `{0}` is already registered")]
    DuplicateLabel(String),
    /// A label name failed the identifier rules (see [`LabelTable::insert`]).
    #[error("invalid label name `{0}`")]
    InvalidLabelName(String),
    /// An edge id was looked up that the graph does not contain.
    #[error("graph has no edge `{0}`")]
    MissingEdge(String),
    /// Replacement with a graph whose type differs from the edge's arity.
    #[error("type mismatch replacing `{edge}`: edge attaches {expected} nodes, graph has {actual} external nodes")]
    TypeMismatch {
        edge: String,
        expected: usize,
        actual: usize,
    },
    /// Canonicalization hit the cap on attached internal nodes.
    #[error("canonicalization cap exceeded: {count} attached internal nodes, cap {cap}")]
    CanonCapExceeded { count: usize, cap: usize },
}

/// Whether a label rewrites (nonterminal) or is part of output graphs (terminal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelKind {
    Terminal,
    Nonterminal,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelKind::Terminal => write!(f, "terminal"),
            LabelKind::Nonterminal => write!(f, "nonterminal"),
        }
    }
}

/// The alphabet: every label name carries a kind and a fixed arity.
///
/// Entries keep their insertion order, which downstream code uses as the
/// canonical symbol order (first appearance wins).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTable {
    entries: IndexMap<String, (LabelKind, usize)>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a label. Names must be nonempty, start with a letter or
    /// `_`, and continue with letters, digits, `_`, `'` or `-`; the name
    /// may not already be registered (a symbol is never both terminal and
    /// nonterminal).
    pub fn insert(
        &mut self,
        name: &str,
        kind: LabelKind,
        arity: usize,
    ) -> Result<(), HypergraphError> {
        let mut chars = name.chars();
        let head_ok = chars
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
        let tail_ok = chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '\'' | '-'));
        if !head_ok || !tail_ok {
            return Err(HypergraphError::InvalidLabelName(name.to_string()));
        }
        if self.entries.contains_key(name) {
            return Err(HypergraphError::DuplicateLabel(name.to_string()));
        }
        self.entries.insert(name.to_string(), (kind, arity));
        Ok(())
    }

    /// Removes a label, preserving the order of the remaining entries.
    pub fn remove(&mut self, name: &str) {
        self.entries.shift_remove(name);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn kind(&self, name: &str) -> Option<LabelKind> {
        self.entries.get(name).map(|&(kind, _)| kind)
    }

    pub fn arity(&self, name: &str) -> Option<usize> {
        self.entries.get(name).map(|&(_, arity)| arity)
    }

    pub fn is_terminal(&self, name: &str) -> bool {
        self.kind(name) == Some(LabelKind::Terminal)
    }

    pub fn is_nonterminal(&self, name: &str) -> bool {
        self.kind(name) == Some(LabelKind::Nonterminal)
    }

    /// All entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, LabelKind, usize)> {
        self.entries
            .iter()
            .map(|(name, &(kind, arity))| (name.as_str(), kind, arity))
    }

    /// Nonterminal names in insertion order.
    pub fn nonterminals(&self) -> impl Iterator<Item = &str> {
        self.iter()
            .filter(|&(_, kind, _)| kind == LabelKind::Nonterminal)
            .map(|(name, _, _)| name)
    }

    /// Terminal names in insertion order.
    pub fn terminals(&self) -> impl Iterator<Item = &str> {
        self.iter()
            .filter(|&(_, kind, _)| kind == LabelKind::Terminal)
            .map(|(name, _, _)| name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A labeled hyperedge: its label name and ordered attachment sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub label: String,
    pub att: Vec<String>,
}

/// An immutable hypergraph.
///
/// Construction via [`Hypergraph::new`] performs no checking so that
/// [`Hypergraph::validate`] can report violations on arbitrary input;
/// all operations in this crate assume (and preserve) validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypergraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<String, Edge>,
    ext: Vec<String>,
}

/// One violated invariant found by [`Hypergraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    /// A node referenced by an attachment sequence is not in the node set.
    UnknownAttNode { edge: String, node: String },
    /// A node referenced by the external sequence is not in the node set.
    UnknownExtNode { node: String },
    /// An attachment sequence mentions some node twice.
    DuplicateAttNode { edge: String, node: String },
    /// The external sequence mentions some node twice.
    DuplicateExtNode { node: String },
    /// An edge's label is not registered in the label table.
    UnknownEdgeLabel { edge: String, label: String },
    /// An edge's attachment length differs from its label's arity.
    ArityMismatch {
        edge: String,
        label: String,
        expected: usize,
        actual: usize,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::UnknownAttNode { edge, node } => {
                write!(f, "edge `{edge}` attaches unknown node `{node}`")
            }
            Diagnostic::UnknownExtNode { node } => {
                write!(f, "external sequence references unknown node `{node}`")
            }
            Diagnostic::DuplicateAttNode { edge, node } => {
                write!(f, "edge `{edge}` attaches node `{node}` more than once")
            }
            Diagnostic::DuplicateExtNode { node } => {
                write!(f, "external sequence repeats node `{node}`")
            }
            Diagnostic::UnknownEdgeLabel { edge, label } => {
                write!(f, "edge `{edge}` has unregistered label `{label}`")
            }
            Diagnostic::ArityMismatch {
                edge,
                label,
                expected,
                actual,
            } => write!(
                f,
                "edge `{edge}`: label `{label}` has arity {expected} but {actual} nodes are attached"
            ),
        }
    }
}

/// How replacement renamed the inserted graph's identifiers.
///
/// Maps ids of the inserted graph to ids in the result. External nodes of
/// the inserted graph map to the host attachment nodes they were fused
/// with; everything else maps to a fresh identifier.
#[derive(Debug, Clone, Default)]
pub struct ReplaceMap {
    pub nodes: BTreeMap<String, String>,
    pub edges: BTreeMap<String, String>,
}

/// Isomorphism-invariant fingerprint of a hypergraph.
///
/// Two graphs have equal codes exactly when there are bijections on their
/// nodes and edges that preserve labels and attachment sequences and map
/// the external sequences onto each other position-wise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CanonicalCode(String);

impl CanonicalCode {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CanonicalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Default cap on attached internal nodes during canonicalization.
pub const DEFAULT_CANON_CAP: usize = 8;

impl Hypergraph {
    /// Builds a graph from parts, without validation.
    pub fn new<N, E, X>(nodes: N, edges: E, ext: X) -> Self
    where
        N: IntoIterator<Item = String>,
        E: IntoIterator<Item = (String, Edge)>,
        X: IntoIterator<Item = String>,
    {
        Hypergraph {
            nodes: nodes.into_iter().collect(),
            edges: edges.into_iter().collect(),
            ext: ext.into_iter().collect(),
        }
    }

    /// The graph with no nodes, no edges, and empty external sequence.
    pub fn empty() -> Self {
        Hypergraph {
            nodes: BTreeSet::new(),
            edges: BTreeMap::new(),
            ext: Vec::new(),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.as_str())
    }

    pub fn has_node(&self, node: &str) -> bool {
        self.nodes.contains(node)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Edges in ascending id order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &Edge)> {
        self.edges.iter().map(|(id, e)| (id.as_str(), e))
    }

    pub fn edge(&self, id: &str) -> Option<&Edge> {
        self.edges.get(id)
    }

    pub fn ext(&self) -> &[String] {
        &self.ext
    }

    /// The graph's type: the length of its external sequence.
    pub fn graph_type(&self) -> usize {
        self.ext.len()
    }

    /// Number of edges.
    pub fn esize(&self) -> usize {
        self.edges.len()
    }

    /// Number of isolated nodes: nodes attached to no edge. External
    /// status does not exempt a node from being isolated.
    pub fn isize(&self) -> usize {
        self.nodes.len() - self.attached_nodes().len()
    }

    fn attached_nodes(&self) -> BTreeSet<&str> {
        self.edges
            .values()
            .flat_map(|e| e.att.iter().map(|n| n.as_str()))
            .collect()
    }

    /// Checks every invariant against `lt` and returns all violations.
    /// An empty result means the graph is valid.
    pub fn validate(&self, lt: &LabelTable) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        for (id, edge) in &self.edges {
            let mut seen = BTreeSet::new();
            for node in &edge.att {
                if !self.nodes.contains(node) {
                    out.push(Diagnostic::UnknownAttNode {
                        edge: id.clone(),
                        node: node.clone(),
                    });
                }
                if !seen.insert(node.as_str()) {
                    out.push(Diagnostic::DuplicateAttNode {
                        edge: id.clone(),
                        node: node.clone(),
                    });
                }
            }
            match lt.arity(&edge.label) {
                None => out.push(Diagnostic::UnknownEdgeLabel {
                    edge: id.clone(),
                    label: edge.label.clone(),
                }),
                Some(arity) if arity != edge.att.len() => out.push(Diagnostic::ArityMismatch {
                    edge: id.clone(),
                    label: edge.label.clone(),
                    expected: arity,
                    actual: edge.att.len(),
                }),
                Some(_) => {}
            }
        }
        let mut seen = BTreeSet::new();
        for node in &self.ext {
            if !self.nodes.contains(node) {
                out.push(Diagnostic::UnknownExtNode { node: node.clone() });
            }
            if !seen.insert(node.as_str()) {
                out.push(Diagnostic::DuplicateExtNode { node: node.clone() });
            }
        }
        out
    }

    /// Hyperedge replacement: substitutes `h` for edge `e0`.
    ///
    /// The i-th external node of `h` is fused with the i-th attachment
    /// node of `e0`; the remaining nodes and all edges of `h` are inserted
    /// under fresh identifiers, so the result never aliases identifiers of
    /// `h`. The external sequence of the result is that of `self`.
    pub fn replace(&self, e0: &str, h: &Hypergraph) -> Result<Hypergraph, HypergraphError> {
        self.replace_with_map(e0, h).map(|(g, _)| g)
    }

    /// Like [`Hypergraph::replace`], also returning how `h`'s identifiers
    /// were renamed into the result.
    pub fn replace_with_map(
        &self,
        e0: &str,
        h: &Hypergraph,
    ) -> Result<(Hypergraph, ReplaceMap), HypergraphError> {
        let target = self
            .edges
            .get(e0)
            .ok_or_else(|| HypergraphError::MissingEdge(e0.to_string()))?;
        if target.att.len() != h.ext.len() {
            return Err(HypergraphError::TypeMismatch {
                edge: e0.to_string(),
                expected: target.att.len(),
                actual: h.ext.len(),
            });
        }

        let mut map = ReplaceMap::default();
        for (ext_node, att_node) in h.ext.iter().zip(&target.att) {
            map.nodes.insert(ext_node.clone(), att_node.clone());
        }

        let mut nodes = self.nodes.clone();
        let mut node_counter = 0usize;
        for node in &h.nodes {
            if map.nodes.contains_key(node) {
                continue; // external: fused above
            }
            let fresh = fresh_id("n", &mut node_counter, |id| !nodes.contains(id));
            nodes.insert(fresh.clone());
            map.nodes.insert(node.clone(), fresh);
        }

        let mut edges = self.edges.clone();
        edges.remove(e0);
        let mut edge_counter = 0usize;
        for (id, edge) in &h.edges {
            let fresh = fresh_id("e", &mut edge_counter, |id| !edges.contains_key(id));
            edges.insert(
                fresh.clone(),
                Edge {
                    label: edge.label.clone(),
                    att: edge.att.iter().map(|n| map.nodes[n].clone()).collect(),
                },
            );
            map.edges.insert(id.clone(), fresh);
        }

        let result = Hypergraph {
            nodes,
            edges,
            ext: self.ext.clone(),
        };
        Ok((result, map))
    }

    /// Canonical code with the default internal-node cap.
    pub fn canonical_code(&self) -> Result<CanonicalCode, HypergraphError> {
        self.canonical_code_with_cap(DEFAULT_CANON_CAP)
    }

    /// Canonical code, refusing graphs with more than `cap` attached
    /// internal nodes (the factor driving canonicalization cost).
    ///
    /// External nodes receive the fixed indices `1..=t` from their
    /// position; attached internal nodes receive indices `t+1..` ranging
    /// over permutations (pruned by iterated partition refinement:
    /// permutations only mix nodes within a refinement class, and classes
    /// are ordered by their refinement key, which is itself invariant
    /// under isomorphism). Each assignment serializes the sorted list of
    /// `label(attachment indices)` descriptors plus the external length
    /// and the isolated-internal count; the code is the least
    /// serialization.
    pub fn canonical_code_with_cap(&self, cap: usize) -> Result<CanonicalCode, HypergraphError> {
        let ext_index: BTreeMap<&str, usize> = self
            .ext
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i + 1))
            .collect();
        let attached = self.attached_nodes();
        let internal: Vec<&str> = attached
            .iter()
            .copied()
            .filter(|n| !ext_index.contains_key(n))
            .collect();
        if internal.len() > cap {
            return Err(HypergraphError::CanonCapExceeded {
                count: internal.len(),
                cap,
            });
        }
        let isolated_internal = self
            .nodes
            .iter()
            .filter(|n| !attached.contains(n.as_str()) && !ext_index.contains_key(n.as_str()))
            .count();

        let classes = self.refinement_classes(&ext_index, &internal);

        let t = self.ext.len();
        let mut best: Option<String> = None;
        // Index assignment = one permutation per class, classes in key order.
        let mut assignment: BTreeMap<&str, usize> = BTreeMap::new();
        self.search_assignments(&classes, 0, t + 1, &ext_index, &mut assignment, &mut best);
        let body = best.unwrap_or_default();
        Ok(CanonicalCode(format!(
            "t{t}|i{isolated_internal}|{body}"
        )))
    }

    /// Groups attached internal nodes by an isomorphism-invariant color,
    /// iterating a neighborhood refinement until stable. Classes are
    /// returned ordered by color, each class sorted by node id.
    fn refinement_classes<'a>(
        &'a self,
        ext_index: &BTreeMap<&str, usize>,
        internal: &[&'a str],
    ) -> Vec<Vec<&'a str>> {
        let mut color: BTreeMap<&str, String> = BTreeMap::new();
        for node in self.nodes.iter().map(|n| n.as_str()) {
            let init = match ext_index.get(node) {
                Some(i) => format!("x{i}"),
                None => "v".to_string(),
            };
            color.insert(node, init);
        }
        loop {
            let mut next: BTreeMap<&str, String> = BTreeMap::new();
            for node in self.nodes.iter().map(|n| n.as_str()) {
                let mut sigs: Vec<String> = Vec::new();
                for edge in self.edges.values() {
                    for (pos, att_node) in edge.att.iter().enumerate() {
                        if att_node == node {
                            let mates: Vec<&str> =
                                edge.att.iter().map(|m| color[m.as_str()].as_str()).collect();
                            sigs.push(format!("{}@{}({})", edge.label, pos, mates.join(",")));
                        }
                    }
                }
                sigs.sort();
                next.insert(node, format!("{}#{}", color[node], sigs.join(";")));
            }
            // Compare partitions as sets of blocks: color keys grow every
            // round, so only the grouping itself can stabilize.
            fn classes_of<'b>(c: &BTreeMap<&'b str, String>) -> BTreeSet<BTreeSet<&'b str>> {
                let mut by_color: BTreeMap<&str, BTreeSet<&'b str>> = BTreeMap::new();
                for (&n, col) in c {
                    by_color.entry(col.as_str()).or_default().insert(n);
                }
                by_color.into_values().collect()
            }
            if classes_of(&color) == classes_of(&next) {
                break;
            }
            color = next;
        }

        let mut by_color: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        for &node in internal {
            by_color.entry(color[node].clone()).or_default().push(node);
        }
        by_color.into_values().collect()
    }

    /// Depth-first over per-class permutations; serializes each complete
    /// assignment and keeps the least result in `best`.
    fn search_assignments<'a>(
        &self,
        classes: &[Vec<&'a str>],
        class_idx: usize,
        next_index: usize,
        ext_index: &BTreeMap<&str, usize>,
        assignment: &mut BTreeMap<&'a str, usize>,
        best: &mut Option<String>,
    ) {
        if class_idx == classes.len() {
            let serialized = self.serialize_assignment(ext_index, assignment);
            if best.as_ref().is_none_or(|b| serialized < *b) {
                *best = Some(serialized);
            }
            return;
        }
        let class = &classes[class_idx];
        let k = class.len();
        for perm in permutations(class) {
            for (offset, node) in perm.iter().enumerate() {
                assignment.insert(node, next_index + offset);
            }
            self.search_assignments(
                classes,
                class_idx + 1,
                next_index + k,
                ext_index,
                assignment,
                best,
            );
        }
    }

    fn serialize_assignment(
        &self,
        ext_index: &BTreeMap<&str, usize>,
        assignment: &BTreeMap<&str, usize>,
    ) -> String {
        let index_of = |node: &str| -> usize {
            ext_index
                .get(node)
                .or_else(|| assignment.get(node))
                .copied()
                .expect("attached node must be indexed")
        };
        let mut descs: Vec<String> = self
            .edges
            .values()
            .map(|e| {
                let idx: Vec<String> = e.att.iter().map(|n| index_of(n).to_string()).collect();
                format!("{}({})", e.label, idx.join(","))
            })
            .collect();
        descs.sort();
        descs.join(";")
    }
}

/// Generates an id `{prefix}{counter}` advancing `counter` past ids
/// rejected by `free`.
fn fresh_id(prefix: &str, counter: &mut usize, free: impl Fn(&str) -> bool) -> String {
    loop {
        let candidate = format!("{prefix}{counter}");
        *counter += 1;
        if free(&candidate) {
            return candidate;
        }
    }
}

/// All permutations of `items`, in lexicographic order of positions.
fn permutations<'a>(items: &[&'a str]) -> Vec<Vec<&'a str>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &item) in items.iter().enumerate() {
        let mut rest: Vec<&str> = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, item);
            out.push(tail);
        }
    }
    out
}

/// The handle of `label`: `arity` nodes, one edge attached to all of them
/// in order, and the same sequence external.
pub fn handle(label: &str, lt: &LabelTable) -> Result<Hypergraph, HypergraphError> {
    let arity = lt
        .arity(label)
        .ok_or_else(|| HypergraphError::UnknownLabel(label.to_string()))?;
    let nodes: Vec<String> = (0..arity).map(|i| format!("n{i}")).collect();
    let edge = Edge {
        label: label.to_string(),
        att: nodes.clone(),
    };
    Ok(Hypergraph::new(
        nodes.clone(),
        [("e0".to_string(), edge)],
        nodes,
    ))
}
