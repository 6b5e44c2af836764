//! The weak-Greibach-normal-form pipeline.
//!
//! [`normalize`] rewrites an isolated-node-bounded grammar into an
//! equivalent grammar in which every production's right-hand side has
//! exactly one terminal edge. The pipeline:
//!
//! 1. [`eliminate_useless`] — drop symbols that appear in no terminal
//!    derivation from the start handle.
//! 2. [`eliminate_edgeless`] — fold productions with edgeless right-hand
//!    sides into their use sites.
//! 3. [`eliminate_chain`] — fold productions whose right-hand side is a
//!    single nonterminal edge.
//! 4. [`eliminate_recursion`] — remove recursive productions (those whose
//!    δ-edge carries the left-hand-side label) by introducing *complex
//!    nonterminals* `(A,f,g)` that invert the recursion, via the Type
//!    I/II/III constructions.
//! 5. [`compose_final`] — compose productions along δ-derivations until
//!    every production's δ-edge is terminal.
//! 6. [`split_terminals`] — outsource surplus terminal edges to fresh
//!    nonterminals `T_a` with the single rule `T_a → ⊚(a)`.
//!
//! Between stages the driver performs language-preserving housekeeping:
//! isomorphic duplicate productions are pruned (by canonical code of the
//! right-hand side with the δ-edge marked) and useless symbols are
//! removed.
//!
//! Grammars whose language forces unboundedly many isolated nodes per
//! edge cannot be normalized; the edgeless and chain stages detect this
//! exactly (a structural pump) and report
//! [`NormalizeError::NotIsolatedNodeBounded`].

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::Serialize;

use crate::grammar::{default_delta, Grammar, GrammarError, Production};
use crate::hypergraph::{
    handle, Edge, Hypergraph, HypergraphError, LabelKind, LabelTable,
};
use crate::mapping::{MappingError, PartialBijection};

/// Errors raised by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NormalizeError {
    /// The start symbol derives no terminal graph.
    #[error("the grammar generates the empty language")]
    EmptyLanguage,
    /// The grammar's language is not isolated-node bounded, so no
    /// equivalent grammar without edgeless and chain productions exists.
    #[error("not isolated-node bounded (detected at the {stage} stage): {detail}")]
    NotIsolatedNodeBounded { stage: String, detail: String },
    /// A configured hard cap was exceeded.
    #[error("{what} exceeds the configured cap ({limit})")]
    CapExceeded { what: String, limit: usize },
    /// A generated symbol name collides with a user-defined one.
    #[error("generated nonterminal name `{0}` collides with an existing symbol")]
    NameCollision(String),
    /// A Type III instance whose external sequence would repeat a node;
    /// such instances are skipped (they contribute nothing).
    #[error("production `{production}`: the construction would repeat node `{node}` in the external sequence")]
    ExternalClash { production: String, node: String },
    /// A construction was applied to a production of the wrong shape.
    #[error("production `{0}` is not recursive")]
    NotRecursive(String),
    #[error("production `{0}` is recursive")]
    Recursive(String),
    /// Type II/III need at least two edges in the right-hand side.
    #[error("production `{0}` has a single-edge right-hand side")]
    SingleEdgeRhs(String),
    /// The Type III side condition `g2 ∘ f2 = g` was violated.
    #[error("side condition violated: composing the replacement pair gives {actual}, expected {expected}")]
    SideCondition { expected: String, actual: String },
    /// A postcondition the pipeline guarantees was found violated.
    #[error("internal pipeline error: {0}")]
    Internal(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Graph(#[from] HypergraphError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

/// Hard caps and knobs for the pipeline.
#[derive(Debug, Clone)]
pub struct NormalizeConfig {
    /// Maximum nonterminal arity accepted (drives the partial-bijection
    /// enumeration; the count grows super-exponentially).
    pub max_arity: usize,
    /// Maximum number of productions any stage may produce.
    pub max_productions: usize,
    /// Backstop cap for the isolated-node fixpoints.
    pub max_isolated: usize,
    /// Cap on attached internal nodes during canonicalization
    /// (housekeeping falls back to keeping a production un-deduplicated,
    /// with a warning, when a right-hand side exceeds it).
    pub canon_cap: usize,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        NormalizeConfig {
            max_arity: 4,
            max_productions: 100_000,
            max_isolated: 64,
            canon_cap: 8,
        }
    }
}

/// A generated nonterminal `(A, f, g)`: the base nonterminal plus two
/// partial bijections on `[1, type(A)]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexNonterminal {
    pub base: String,
    pub f: PartialBijection,
    pub g: PartialBijection,
}

impl ComplexNonterminal {
    /// Builds the symbol; both maps must share the base arity as ambient
    /// size.
    pub fn new(
        base: &str,
        f: PartialBijection,
        g: PartialBijection,
    ) -> Result<Self, MappingError> {
        if f.ambient() != g.ambient() {
            return Err(MappingError::AmbientMismatch(f.ambient(), g.ambient()));
        }
        Ok(ComplexNonterminal {
            base: base.to_string(),
            f,
            g,
        })
    }

    /// The symbol's arity: `2·type(A) − |Dom(g∘f)|`.
    pub fn arity(&self) -> usize {
        2 * self.f.ambient() - self.g.compose(&self.f).expect("equal ambients").dom_size()
    }

    /// The symbol's name: `A__f<pairs>__g<pairs>` with the mapping
    /// name-fragment encoding.
    pub fn name(&self) -> String {
        format!(
            "{}__f{}__g{}",
            self.base,
            self.f.name_fragment(),
            self.g.name_fragment()
        )
    }
}

/// Statistics for one pipeline stage (housekeeping included).
#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub before: usize,
    pub after: usize,
    #[serde(rename = "newNonterminals")]
    pub new_nonterminals: usize,
    pub warnings: Vec<String>,
    pub millis: u64,
}

/// The per-stage statistics of one pipeline run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
}

impl PipelineReport {
    /// Clears wall-clock times, making the report reproducible.
    pub fn without_times(mut self) -> Self {
        for s in &mut self.stages {
            s.millis = 0;
        }
        self
    }
}

/// How far to run the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PipelineStage {
    /// Useless-symbol elimination only.
    Useless,
    /// Through edgeless-production elimination.
    Edgeless,
    /// Through chain-production elimination.
    Chain,
    /// Through recursion elimination (incl. the repeated useless pass).
    Norec,
    /// Through δ-derivation composition.
    Compose,
    /// The full pipeline: terminal splitting included.
    Wgnf,
}

impl PipelineStage {
    /// Stage names accepted by user interfaces.
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "useless" => PipelineStage::Useless,
            "edgeless" => PipelineStage::Edgeless,
            "chain" => PipelineStage::Chain,
            "norec" => PipelineStage::Norec,
            "compose" => PipelineStage::Compose,
            "wgnf" => PipelineStage::Wgnf,
            _ => return None,
        })
    }
}

// ---------------------------------------------------------------------------
// Stage 1: useless symbols
// ---------------------------------------------------------------------------

/// Removes every nonterminal that cannot occur in a terminal derivation
/// from the start handle, together with all productions mentioning one.
/// Errors with [`NormalizeError::EmptyLanguage`] when the start symbol
/// itself is unproductive.
pub fn eliminate_useless(g: &Grammar) -> Result<Grammar, NormalizeError> {
    // Productive nonterminals: some production's right-hand side uses
    // only terminals and already-productive nonterminals.
    let mut productive: BTreeSet<&str> = BTreeSet::new();
    loop {
        let mut changed = false;
        for p in &g.productions {
            if productive.contains(p.lhs.as_str()) {
                continue;
            }
            let ok = p.rhs.edges().all(|(_, e)| {
                g.labels.is_terminal(&e.label) || productive.contains(e.label.as_str())
            });
            if ok {
                productive.insert(&p.lhs);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !productive.contains(g.start.as_str()) {
        return Err(NormalizeError::EmptyLanguage);
    }

    // Keep only productions made entirely of productive material, then
    // restrict to the part reachable from the start symbol.
    let kept: Vec<&Production> = g
        .productions
        .iter()
        .filter(|p| {
            productive.contains(p.lhs.as_str())
                && p.rhs.edges().all(|(_, e)| {
                    g.labels.is_terminal(&e.label) || productive.contains(e.label.as_str())
                })
        })
        .collect();

    let mut reachable: BTreeSet<&str> = BTreeSet::new();
    reachable.insert(&g.start);
    loop {
        let mut changed = false;
        for p in &kept {
            if !reachable.contains(p.lhs.as_str()) {
                continue;
            }
            for (_, e) in p.rhs.edges() {
                if g.labels.is_nonterminal(&e.label) && reachable.insert(&e.label) {
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let useful: BTreeSet<&str> = productive.intersection(&reachable).copied().collect();
    let mut labels = g.labels.clone();
    let dropped: Vec<String> = g
        .labels
        .nonterminals()
        .filter(|n| !useful.contains(n))
        .map(String::from)
        .collect();
    for name in &dropped {
        labels.remove(name);
    }
    let productions: Vec<Production> = kept
        .into_iter()
        .filter(|p| reachable.contains(p.lhs.as_str()))
        .cloned()
        .collect();
    Ok(Grammar::new(labels, productions, &g.start)?)
}

// ---------------------------------------------------------------------------
// Stage 2: edgeless productions
// ---------------------------------------------------------------------------

/// The edgeless graphs a nonterminal derives, described up to isomorphism
/// by their isolated-internal-node counts.
struct NullSets {
    /// `A ↦ { m : ⊚(A) ⇒* (type(A) external nodes + m isolated nodes) }`.
    sets: BTreeMap<String, BTreeSet<usize>>,
    nullable: BTreeSet<String>,
}

/// A production usable in an edgeless derivation: all edges nonterminal
/// and all their labels nullable.
fn is_nullable_production(p: &Production, nullable: &BTreeSet<String>) -> bool {
    p.rhs
        .edges()
        .all(|(_, e)| nullable.contains(e.label.as_str()))
}

/// Internal nodes a production contributes to an edgeless derivation.
fn internal_contribution(p: &Production) -> usize {
    p.rhs.node_count() - p.rhs.graph_type()
}

fn null_fixpoint(g: &Grammar, cfg: &NormalizeConfig) -> Result<NullSets, NormalizeError> {
    // Nullable: derives at least one edgeless graph.
    let mut nullable: BTreeSet<String> = BTreeSet::new();
    loop {
        let mut changed = false;
        for p in &g.productions {
            if !nullable.contains(&p.lhs) && is_nullable_production(p, &nullable) {
                nullable.insert(p.lhs.clone());
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // posNull: derives an edgeless graph with at least one isolated node.
    let mut pos_null: BTreeSet<String> = BTreeSet::new();
    loop {
        let mut changed = false;
        for p in &g.productions {
            if pos_null.contains(&p.lhs) || !is_nullable_production(p, &nullable) {
                continue;
            }
            let pos = internal_contribution(p) > 0
                || p.rhs
                    .edges()
                    .any(|(_, e)| pos_null.contains(e.label.as_str()));
            if pos {
                pos_null.insert(p.lhs.clone());
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Structural pump: a cycle in the nullable dependency graph that can
    // add isolated nodes on every lap. Traversing production π from its
    // lhs down into edge e gains `internal(π)` isolated nodes plus
    // whatever π's other edges produce, so the language is unbounded
    // exactly when some arc A→B on a cycle has `internal(π) > 0` or a
    // sibling edge that can itself produce an isolated node.
    let arcs: Vec<(&str, &str, &Production, bool)> = g
        .productions
        .iter()
        .filter(|p| is_nullable_production(p, &nullable))
        .flat_map(|p| {
            let edges: Vec<_> = p.rhs.edges().collect();
            edges
                .iter()
                .map(|(id, e)| {
                    let sibling_pump = internal_contribution(p) > 0
                        || edges
                            .iter()
                            .any(|(id2, e2)| id2 != id && pos_null.contains(e2.label.as_str()));
                    (p.lhs.as_str(), e.label.as_str(), p, sibling_pump)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let reaches = |from: &str, to: &str| -> bool {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                for (a, b, _, _) in &arcs {
                    if *a == n && !seen.contains(b) {
                        stack.push(b);
                    }
                }
            }
        }
        false
    };
    for (a, b, p, pump) in &arcs {
        if *pump && reaches(b, a) {
            return Err(NormalizeError::NotIsolatedNodeBounded {
                stage: "edgeless".to_string(),
                detail: format!(
                    "production `{}` pumps isolated nodes through an edgeless derivation cycle",
                    p.id
                ),
            });
        }
    }

    // The m-sets themselves; bounded because no pump exists, with the
    // configured cap as backstop.
    let mut sets: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    loop {
        let mut changed = false;
        for p in &g.productions {
            if !is_nullable_production(p, &nullable) {
                continue;
            }
            let mut sums: BTreeSet<usize> = BTreeSet::new();
            sums.insert(internal_contribution(p));
            let mut incomplete = false;
            for (_, e) in p.rhs.edges() {
                match sets.get(e.label.as_str()) {
                    None => {
                        incomplete = true;
                        break;
                    }
                    Some(ms) => {
                        sums = sums
                            .iter()
                            .flat_map(|s| ms.iter().map(move |m| s + m))
                            .collect();
                    }
                }
            }
            if incomplete {
                continue;
            }
            for s in sums {
                if s > cfg.max_isolated {
                    return Err(NormalizeError::NotIsolatedNodeBounded {
                        stage: "edgeless".to_string(),
                        detail: format!(
                            "isolated-node count exceeded the cap ({}) without a detected pump",
                            cfg.max_isolated
                        ),
                    });
                }
                if sets.entry(p.lhs.clone()).or_default().insert(s) {
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(NullSets { sets, nullable })
}

/// Removes productions with edgeless right-hand sides by substituting, in
/// every production, each subset of nullable edges with the edgeless
/// graphs they derive (at least one edge always stays). Errors when the
/// start symbol itself derives an edgeless graph: such a graph is in the
/// language, and any language containing an edgeless graph fails the
/// isolated-node bound.
pub fn eliminate_edgeless(
    g: &Grammar,
    cfg: &NormalizeConfig,
) -> Result<Grammar, NormalizeError> {
    let null = null_fixpoint(g, cfg)?;
    if null.nullable.contains(&g.start) {
        return Err(NormalizeError::NotIsolatedNodeBounded {
            stage: "edgeless".to_string(),
            detail: format!(
                "the start symbol `{}` derives an edgeless graph, which no graph with edges can bound",
                g.start
            ),
        });
    }

    let mut out: Vec<Production> = Vec::new();
    let mut ids: BTreeSet<String> = g.productions.iter().map(|p| p.id.clone()).collect();
    let mut counter = 0usize;
    for p in &g.productions {
        if p.rhs.esize() == 0 {
            continue; // folded into the null sets
        }
        // Per-edge choices: keep the edge, or (for nullable nonterminal
        // labels) erase it and add m isolated nodes, for each m.
        let edges: Vec<(String, Edge)> =
            p.rhs.edges().map(|(id, e)| (id.to_string(), e.clone())).collect();
        let choices: Vec<Vec<Option<usize>>> = edges
            .iter()
            .map(|(_, e)| {
                let mut c: Vec<Option<usize>> = vec![None]; // None = keep
                if g.labels.is_nonterminal(&e.label) {
                    if let Some(ms) = null.sets.get(e.label.as_str()) {
                        c.extend(ms.iter().map(|&m| Some(m)));
                    }
                }
                c
            })
            .collect();

        let mut combo = vec![0usize; edges.len()];
        loop {
            let kept_any = combo
                .iter()
                .enumerate()
                .any(|(i, &c)| choices[i][c].is_none());
            let all_kept = combo
                .iter()
                .enumerate()
                .all(|(i, &c)| choices[i][c].is_none());
            if all_kept {
                out.push(p.clone());
            } else if kept_any {
                out.push(null_variant(p, &edges, &choices, &combo, &g.labels, || {
                    fresh_pid("el", &mut counter, &mut ids)
                }));
            }
            if !advance(&mut combo, &choices) {
                break;
            }
            if out.len() > cfg.max_productions {
                return Err(NormalizeError::CapExceeded {
                    what: "production count".to_string(),
                    limit: cfg.max_productions,
                });
            }
        }
    }
    Ok(Grammar::new(g.labels.clone(), out, &g.start)?)
}

/// Builds the production variant for one null-substitution combination.
fn null_variant(
    p: &Production,
    edges: &[(String, Edge)],
    choices: &[Vec<Option<usize>>],
    combo: &[usize],
    labels: &LabelTable,
    mut pid: impl FnMut() -> String,
) -> Production {
    let mut nodes: Vec<String> = p.rhs.nodes().map(String::from).collect();
    let mut kept_edges: Vec<(String, Edge)> = Vec::new();
    let mut node_counter = 0usize;
    for (i, (id, e)) in edges.iter().enumerate() {
        match choices[i][combo[i]] {
            None => kept_edges.push((id.clone(), e.clone())),
            Some(m) => {
                // The edge is erased; its attachment nodes stay, plus m
                // fresh isolated nodes from the substituted graph.
                for _ in 0..m {
                    let fresh = next_free("n", &mut node_counter, |c| {
                        !nodes.iter().any(|n| n == c)
                    });
                    nodes.push(fresh);
                }
            }
        }
    }
    let rhs = Hypergraph::new(
        nodes,
        kept_edges.clone(),
        p.rhs.ext().iter().cloned(),
    );
    let delta = match &p.delta {
        Some(d) if kept_edges.iter().any(|(id, _)| id == d) => Some(d.clone()),
        _ => default_delta(&rhs, labels),
    };
    Production {
        id: pid(),
        lhs: p.lhs.clone(),
        rhs,
        delta,
    }
}

/// Odometer-style advance over per-edge choice indices.
fn advance(combo: &mut [usize], choices: &[Vec<Option<usize>>]) -> bool {
    for i in (0..combo.len()).rev() {
        combo[i] += 1;
        if combo[i] < choices[i].len() {
            return true;
        }
        combo[i] = 0;
    }
    false
}

// ---------------------------------------------------------------------------
// Stage 3: chain productions
// ---------------------------------------------------------------------------

/// A partial injective map `[1,from] ⇀ [1,to]` (the rectangular cousin of
/// [`PartialBijection`], used only by the chain fixpoint).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct PartialInjection {
    from: usize,
    to: usize,
    pairs: BTreeMap<usize, usize>,
}

impl PartialInjection {
    fn identity(t: usize) -> Self {
        PartialInjection {
            from: t,
            to: t,
            pairs: (1..=t).map(|i| (i, i)).collect(),
        }
    }

    /// `self ∘ inner`, defined where `inner`'s image meets `self`'s domain.
    fn compose(&self, inner: &PartialInjection) -> PartialInjection {
        debug_assert_eq!(self.from, inner.to);
        PartialInjection {
            from: inner.from,
            to: self.to,
            pairs: inner
                .pairs
                .iter()
                .filter_map(|(&i, &j)| self.pairs.get(&j).map(|&k| (i, k)))
                .collect(),
        }
    }

    fn ran(&self) -> BTreeSet<usize> {
        self.pairs.values().copied().collect()
    }
}

/// Descriptor of a chain production `B → H` (single edge `e0`, labeled
/// `C`): the injection `q(i) = j ⇔ att(e0)(i) = ext(j)` plus the count of
/// isolated internal nodes. Together with the arities this determines `H`
/// up to isomorphism, because attachment and external sequences are
/// duplicate-free.
struct ChainArc<'a> {
    label: String, // C
    q: PartialInjection,
    m: usize,
    production: &'a Production,
}

fn chain_arc(p: &Production) -> Option<ChainArc<'_>> {
    let mut edges = p.rhs.edges();
    let (_, e0) = edges.next()?;
    if edges.next().is_some() {
        return None;
    }
    let ext = p.rhs.ext();
    let pairs: BTreeMap<usize, usize> = e0
        .att
        .iter()
        .enumerate()
        .filter_map(|(i, node)| {
            ext.iter()
                .position(|x| x == node)
                .map(|j| (i + 1, j + 1))
        })
        .collect();
    let q = PartialInjection {
        from: e0.att.len(),
        to: ext.len(),
        pairs,
    };
    let attached: BTreeSet<&str> = e0.att.iter().map(|n| n.as_str()).collect();
    let m = p
        .rhs
        .nodes()
        .filter(|n| !attached.contains(n) && !ext.iter().any(|x| x == n))
        .count();
    Some(ChainArc {
        label: e0.label.clone(),
        q,
        m,
        production: p,
    })
}

/// Removes chain productions (single nonterminal edge as the whole
/// right-hand side) by precomposing every chain derivation with every
/// non-chain production. Detects an unbounded isolated-node pump in the
/// chain fixpoint and reports it as not-isolated-node-bounded.
pub fn eliminate_chain(g: &Grammar, cfg: &NormalizeConfig) -> Result<Grammar, NormalizeError> {
    let is_chain = |p: &Production| -> bool {
        p.rhs.esize() == 1
            && p.rhs
                .edges()
                .all(|(_, e)| g.labels.is_nonterminal(&e.label))
    };
    let chain_arcs: Vec<ChainArc> = g
        .productions
        .iter()
        .filter(|p| is_chain(p))
        .filter_map(chain_arc)
        .collect();
    let nonchain: Vec<&Production> = g.productions.iter().filter(|p| !is_chain(p)).collect();

    let mut out: Vec<Production> = nonchain.iter().map(|&p| p.clone()).collect();
    let mut ids: BTreeSet<String> = g.productions.iter().map(|p| p.id.clone()).collect();
    let mut counter = 0usize;

    for a in g.labels.nonterminals() {
        let t_a = g.labels.arity(a).expect("registered");
        // Fixpoint over states (B, q, m): A derives the chain graph with
        // a single B-edge whose attachment positions map into A's
        // external sequence by q, plus m isolated internal nodes. The
        // reflexive seed is (A, id, 0) = the handle of A.
        type StateKey = (String, PartialInjection);
        let seed: StateKey = (a.to_string(), PartialInjection::identity(t_a));

        // First pass: reachable (B, q) states and gain-labeled arcs.
        let mut states: BTreeSet<StateKey> = BTreeSet::new();
        let mut arcs: Vec<(StateKey, StateKey, usize, &Production)> = Vec::new();
        let mut queue = vec![seed.clone()];
        while let Some(state) = queue.pop() {
            if !states.insert(state.clone()) {
                continue;
            }
            let (b, q) = &state;
            for arc in chain_arcs.iter().filter(|c| c.production.lhs == *b) {
                let q_new = q.compose(&arc.q);
                // Former attachment nodes left unattached and internal.
                let orphaned = (1..=q.from)
                    .filter(|i| !q.pairs.contains_key(i) && !arc.q.ran().contains(i))
                    .count();
                let gain = arc.m + orphaned;
                let next: StateKey = (arc.label.clone(), q_new);
                arcs.push((state.clone(), next.clone(), gain, arc.production));
                if !states.contains(&next) {
                    queue.push(next);
                }
            }
        }

        // A positive-gain arc on a cycle pumps isolated nodes forever.
        for (u, v, gain, p) in &arcs {
            if *gain == 0 {
                continue;
            }
            let mut seen: BTreeSet<&StateKey> = BTreeSet::new();
            let mut stack = vec![v];
            let mut cycles = false;
            while let Some(s) = stack.pop() {
                if s == u {
                    cycles = true;
                    break;
                }
                if seen.insert(s) {
                    for (x, y, _, _) in &arcs {
                        if x == s {
                            stack.push(y);
                        }
                    }
                }
            }
            if cycles {
                return Err(NormalizeError::NotIsolatedNodeBounded {
                    stage: "chain".to_string(),
                    detail: format!(
                        "chain production `{}` pumps isolated nodes around a derivation cycle",
                        p.id
                    ),
                });
            }
        }

        // Second pass: m-sets per state (no pump, so bounded; capped as
        // a backstop).
        let mut msets: BTreeMap<StateKey, BTreeSet<usize>> = BTreeMap::new();
        msets.entry(seed.clone()).or_default().insert(0);
        loop {
            let mut changed = false;
            for (u, v, gain, _) in &arcs {
                let Some(current) = msets.get(u).cloned() else {
                    continue;
                };
                for m in current {
                    let m_new = m + gain;
                    if m_new > cfg.max_isolated {
                        return Err(NormalizeError::NotIsolatedNodeBounded {
                            stage: "chain".to_string(),
                            detail: format!(
                                "isolated-node count exceeded the cap ({}) without a detected pump",
                                cfg.max_isolated
                            ),
                        });
                    }
                    if msets.entry(v.clone()).or_default().insert(m_new) {
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // Emit A → H[G0/e0] for every state and every non-chain
        // B-production. The reflexive seed state with m = 0 would
        // reproduce the B-productions verbatim, so it is skipped.
        for ((b, q), ms) in &msets {
            for &m in ms {
                if *b == *a && q == &PartialInjection::identity(t_a) && m == 0 {
                    continue;
                }
                let h = chain_graph(a, t_a, b, q, m, &g.labels);
                for p0 in nonchain.iter().filter(|p| p.lhs == *b) {
                    let (rhs, map) = h.replace_with_map("e0", &p0.rhs)?;
                    let delta = p0
                        .delta
                        .as_ref()
                        .map(|d| map.edges[d].clone());
                    out.push(Production {
                        id: fresh_pid("ch", &mut counter, &mut ids),
                        lhs: a.to_string(),
                        rhs,
                        delta,
                    });
                    if out.len() > cfg.max_productions {
                        return Err(NormalizeError::CapExceeded {
                            what: "production count".to_string(),
                            limit: cfg.max_productions,
                        });
                    }
                }
            }
        }
    }
    Ok(Grammar::new(g.labels.clone(), out, &g.start)?)
}

/// Reconstructs the chain graph for state `(B, q, m)` over origin `A`:
/// external nodes `x1..x{tA}`, a single `B`-edge whose attachment node at
/// position `i` is `x{q(i)}` (external) or a fresh internal node, plus
/// `m` isolated internal nodes.
fn chain_graph(
    _a: &str,
    t_a: usize,
    b: &str,
    q: &PartialInjection,
    m: usize,
    labels: &LabelTable,
) -> Hypergraph {
    let t_b = labels.arity(b).expect("registered");
    let ext: Vec<String> = (1..=t_a).map(|j| format!("x{j}")).collect();
    let mut nodes: Vec<String> = ext.clone();
    let att: Vec<String> = (1..=t_b)
        .map(|i| match q.pairs.get(&i) {
            Some(&j) => format!("x{j}"),
            None => {
                let n = format!("y{i}");
                nodes.push(n.clone());
                n
            }
        })
        .collect();
    for z in 1..=m {
        nodes.push(format!("z{z}"));
    }
    Hypergraph::new(
        nodes,
        [(
            "e0".to_string(),
            Edge {
                label: b.to_string(),
                att,
            },
        )],
        ext,
    )
}

// ---------------------------------------------------------------------------
// Stage 4: recursion elimination (Type I / II / III)
// ---------------------------------------------------------------------------

/// Type I: attaches a complex edge `(A,f,g)` to a nonrecursive
/// A-production, rerouting external nodes through `g∘f`.
pub fn build_type1(
    gamma: &Production,
    f: &PartialBijection,
    g: &PartialBijection,
    labels: &LabelTable,
    id: &str,
) -> Result<Production, NormalizeError> {
    if gamma.is_recursive() {
        return Err(NormalizeError::Recursive(gamma.id.clone()));
    }
    let t = gamma.rhs.graph_type();
    if f.ambient() != t || g.ambient() != t {
        return Err(NormalizeError::Mapping(MappingError::AmbientMismatch(
            f.ambient(),
            t,
        )));
    }
    let cn = ComplexNonterminal::new(&gamma.lhs, f.clone(), g.clone())?;
    let gf = g.compose(f)?;
    let k = gf.dom_size();

    let rhs_old = &gamma.rhs;
    let mut nodes: Vec<String> = rhs_old.nodes().map(String::from).collect();
    let mut counter = 0usize;
    let fresh: Vec<String> = (0..t - k)
        .map(|_| {
            let u = next_free("u", &mut counter, |c| !nodes.iter().any(|n| n == c));
            nodes.push(u.clone());
            u
        })
        .collect();

    // e' carries the complex label, attached to the old external sequence
    // followed by the fresh nodes.
    let mut att: Vec<String> = rhs_old.ext().to_vec();
    att.extend(fresh.iter().cloned());
    debug_assert_eq!(att.len(), cn.arity(), "complex edge arity identity");
    assert_eq!(
        att.len(),
        cn.arity(),
        "type I attachment length must equal the complex symbol's arity"
    );

    let mut edge_counter = 0usize;
    let eid = next_free("e", &mut edge_counter, |c| rhs_old.edge(c).is_none());
    let mut edges: Vec<(String, Edge)> = rhs_old
        .edges()
        .map(|(id, e)| (id.to_string(), e.clone()))
        .collect();
    edges.push((
        eid,
        Edge {
            label: cn.name(),
            att,
        },
    ));

    // New external sequence: old external node p lands at position
    // g(f(p)); the remaining positions take the fresh nodes, ascending.
    let mut ext: Vec<Option<String>> = vec![None; t];
    for (p, image) in gf.pairs() {
        ext[image - 1] = Some(rhs_old.ext()[p - 1].clone());
    }
    let ran: BTreeSet<usize> = gf.ran().collect();
    let open: Vec<usize> = (1..=t).filter(|j| !ran.contains(j)).collect();
    for (r, j) in open.iter().enumerate() {
        ext[j - 1] = Some(fresh[r].clone());
    }
    let ext: Vec<String> = ext.into_iter().map(|o| o.expect("filled")).collect();
    assert_eq!(
        ext.len(),
        labels.arity(&gamma.lhs).expect("registered"),
        "type I external length must equal the left-hand side's arity"
    );

    Ok(Production {
        id: id.to_string(),
        lhs: gamma.lhs.clone(),
        rhs: Hypergraph::new(nodes, edges, ext),
        delta: gamma.delta.clone(),
    })
}

/// How a recursive production's δ-edge meets its external sequence:
/// `f0(i) = j` exactly when the δ-edge's i-th attachment node is the
/// production's j-th external node. This is the only first component a
/// complex symbol can carry while this production wraps a derivation,
/// because replacement fuses the wrapped part's external nodes onto that
/// very attachment sequence.
fn delta_ext_pattern(rho: &Production) -> Result<PartialBijection, NormalizeError> {
    let t = rho.rhs.graph_type();
    let e0_id = rho.delta.as_deref().expect("recursive implies δ");
    let e0 = rho.rhs.edge(e0_id).expect("validated");
    let pairs: Vec<(usize, usize)> = e0
        .att
        .iter()
        .enumerate()
        .filter_map(|(i, node)| {
            rho.rhs
                .ext()
                .iter()
                .position(|x| x == node)
                .map(|j| (i + 1, j + 1))
        })
        .collect();
    Ok(PartialBijection::new(t, pairs)?)
}

/// Type II: removes the recursive δ-edge `e0`, turning the production
/// into one for the complex symbol `(A, f0, id)` where `f0` records which
/// attachment positions of `e0` were external.
pub fn build_type2(
    rho: &Production,
    labels: &LabelTable,
    complex: &BTreeSet<String>,
    id: &str,
) -> Result<(Production, ComplexNonterminal), NormalizeError> {
    if !rho.is_recursive() {
        return Err(NormalizeError::NotRecursive(rho.id.clone()));
    }
    if rho.rhs.esize() < 2 {
        return Err(NormalizeError::SingleEdgeRhs(rho.id.clone()));
    }
    let t = rho.rhs.graph_type();
    let e0_id = rho.delta.as_deref().expect("recursive implies δ");
    let e0 = rho.rhs.edge(e0_id).expect("validated").clone();

    let f0 = delta_ext_pattern(rho)?;
    let k = f0.dom_size();
    let cn = ComplexNonterminal::new(&rho.lhs, f0.clone(), PartialBijection::identity(t))?;

    let edges: Vec<(String, Edge)> = rho
        .rhs
        .edges()
        .filter(|(id, _)| *id != e0_id)
        .map(|(id, e)| (id.to_string(), e.clone()))
        .collect();

    let mut ext: Vec<String> = e0.att.clone();
    let ran: BTreeSet<usize> = f0.ran().collect();
    ext.extend(
        (1..=t)
            .filter(|j| !ran.contains(j))
            .map(|j| rho.rhs.ext()[j - 1].clone()),
    );
    assert_eq!(
        ext.len(),
        2 * t - k,
        "type II external length must equal the complex symbol's arity"
    );
    debug_assert_eq!(cn.arity(), 2 * t - k);

    let rhs = Hypergraph::new(rho.rhs.nodes().map(String::from), edges, ext);
    let delta = noncomplex_delta(&rhs, labels, complex);
    Ok((
        Production {
            id: id.to_string(),
            lhs: cn.name(),
            rhs,
            delta,
        },
        cn,
    ))
}

/// Type III: removes the recursive δ-edge `e0` and attaches a complex
/// edge `(A,f2,g2)` instead, producing a rule for `(A,f,g)`. Requires the
/// side condition `g2 ∘ f2 = g`. Instances whose external sequence would
/// repeat a node are rejected with [`NormalizeError::ExternalClash`] and
/// contribute nothing.
#[allow(clippy::too_many_arguments)]
pub fn build_type3(
    rho: &Production,
    f: &PartialBijection,
    g: &PartialBijection,
    f2: &PartialBijection,
    g2: &PartialBijection,
    labels: &LabelTable,
    complex: &BTreeSet<String>,
    id: &str,
) -> Result<(Production, ComplexNonterminal, ComplexNonterminal), NormalizeError> {
    if !rho.is_recursive() {
        return Err(NormalizeError::NotRecursive(rho.id.clone()));
    }
    if rho.rhs.esize() < 2 {
        return Err(NormalizeError::SingleEdgeRhs(rho.id.clone()));
    }
    let side = g2.compose(f2)?;
    if side != *g {
        return Err(NormalizeError::SideCondition {
            expected: g.to_string(),
            actual: side.to_string(),
        });
    }
    let t = rho.rhs.graph_type();
    let lhs_cn = ComplexNonterminal::new(&rho.lhs, f.clone(), g.clone())?;
    let edge_cn = ComplexNonterminal::new(&rho.lhs, f2.clone(), g2.clone())?;

    let e0_id = rho.delta.as_deref().expect("recursive implies δ");
    let e0 = rho.rhs.edge(e0_id).expect("validated").clone();

    let gf = g.compose(f)?;
    let k = gf.dom_size();
    // M1: positions g moves but f does not reach.
    let f_ran: BTreeSet<usize> = f.ran().collect();
    let m1: Vec<usize> = g.dom().filter(|s| !f_ran.contains(s)).collect();
    let p = m1.len();
    // M2: external positions not covered by g∘f.
    let gf_ran: BTreeSet<usize> = gf.ran().collect();
    let m2: Vec<usize> = (1..=t).filter(|j| !gf_ran.contains(j)).collect();
    debug_assert_eq!(m2.len(), t - k);
    // l_i: where in M2 the image g(s_i) sits (1-based).
    let l: Vec<usize> = m1
        .iter()
        .map(|&s| {
            let img = g.apply(s).expect("s ∈ Dom(g)");
            m2.iter().position(|&j| j == img).expect("image in M2") + 1
        })
        .collect();
    // x_i: positions of M2 ∖ g(M1), 1-based into M2's enumeration.
    let g_m1: BTreeSet<usize> = m1.iter().map(|&s| g.apply(s).expect("in dom")).collect();
    let x: Vec<usize> = m2
        .iter()
        .enumerate()
        .filter(|(_, j)| !g_m1.contains(j))
        .map(|(idx, _)| idx + 1)
        .collect();
    let k_prime = k + p;
    debug_assert_eq!(x.len(), t - k_prime);

    let mut nodes: Vec<String> = rho.rhs.nodes().map(String::from).collect();
    let mut counter = 0usize;
    let fresh: Vec<String> = (0..t - k_prime)
        .map(|_| {
            let u = next_free("u", &mut counter, |c| !nodes.iter().any(|n| n == c));
            nodes.push(u.clone());
            u
        })
        .collect();

    let mut edges: Vec<(String, Edge)> = rho
        .rhs
        .edges()
        .filter(|(eid, _)| *eid != e0_id)
        .map(|(eid, e)| (eid.to_string(), e.clone()))
        .collect();
    let mut edge_counter = 0usize;
    let eid = next_free("e", &mut edge_counter, |c| rho.rhs.edge(c).is_none());
    let mut att: Vec<String> = rho.rhs.ext().to_vec();
    att.extend(fresh.iter().cloned());
    assert_eq!(
        att.len(),
        edge_cn.arity(),
        "type III attachment length must equal the inserted complex symbol's arity"
    );
    edges.push((
        eid,
        Edge {
            label: edge_cn.name(),
            att,
        },
    ));

    // External sequence: e0's attachment first, then the moved external
    // nodes (at positions t + l_i) and the fresh nodes (at t + x_i).
    let mut ext: Vec<Option<String>> = vec![None; 2 * t - k];
    for (i, node) in e0.att.iter().enumerate() {
        ext[i] = Some(node.clone());
    }
    for (i, &s) in m1.iter().enumerate() {
        ext[t + l[i] - 1] = Some(rho.rhs.ext()[s - 1].clone());
    }
    for (i, u) in fresh.iter().enumerate() {
        ext[t + x[i] - 1] = Some(u.clone());
    }
    let ext: Vec<String> = ext.into_iter().map(|o| o.expect("filled")).collect();
    assert_eq!(
        ext.len(),
        lhs_cn.arity(),
        "type III external length must equal the left-hand side's arity"
    );

    // The construction can ask an attachment node of e0 to also serve as
    // a moved external node; the resulting sequence would repeat it.
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for node in &ext {
        if !seen.insert(node.as_str()) {
            return Err(NormalizeError::ExternalClash {
                production: rho.id.clone(),
                node: node.clone(),
            });
        }
    }

    let rhs = Hypergraph::new(nodes, edges, ext);
    // δ comes from the surviving original edges, never the new complex
    // edge.
    let old_edges: Vec<(String, Edge)> = rhs
        .edges()
        .filter(|(eid2, _)| rho.rhs.edge(eid2).is_some())
        .map(|(eid2, e)| (eid2.to_string(), e.clone()))
        .collect();
    let old_only = Hypergraph::new(rhs.nodes().map(String::from), old_edges, Vec::new());
    let delta = noncomplex_delta(&old_only, labels, complex);
    Ok((
        Production {
            id: id.to_string(),
            lhs: lhs_cn.name(),
            rhs,
            delta,
        },
        lhs_cn,
        edge_cn,
    ))
}

/// δ choice for generated productions: the least-id terminal edge, else
/// the least-id nonterminal edge that is not a complex symbol, else the
/// least-id edge. Keeping complex symbols out of δ keeps them out of μ,
/// which the final composition relies on.
fn noncomplex_delta(
    rhs: &Hypergraph,
    labels: &LabelTable,
    complex: &BTreeSet<String>,
) -> Option<String> {
    let mut first_terminal = None;
    let mut first_plain = None;
    let mut first_any = None;
    for (id, edge) in rhs.edges() {
        if first_any.is_none() {
            first_any = Some(id);
        }
        if first_terminal.is_none() && labels.kind(&edge.label) == Some(LabelKind::Terminal) {
            first_terminal = Some(id);
        }
        if first_plain.is_none()
            && labels.kind(&edge.label) == Some(LabelKind::Nonterminal)
            && !complex.contains(&edge.label)
        {
            first_plain = Some(id);
        }
    }
    first_terminal
        .or(first_plain)
        .or(first_any)
        .map(String::from)
}

/// Removes all recursive `A`-productions by the Type I/II/III
/// constructions, registering the complex nonterminals `(A,f,g)` they
/// need. Only rewritable pairs `(f,g)` are materialized: each recursive
/// production's δ-edge fixes the `f` it can consume, and the `g`s close
/// under the Type III side condition starting from the Type II identity.
pub fn eliminate_recursive(
    g: &Grammar,
    a: &str,
    cfg: &NormalizeConfig,
) -> Result<Grammar, NormalizeError> {
    let mut complex: BTreeSet<String> = BTreeSet::new();
    eliminate_recursive_impl(g, a, cfg, &mut complex)
}

fn eliminate_recursive_impl(
    g: &Grammar,
    a: &str,
    cfg: &NormalizeConfig,
    complex: &mut BTreeSet<String>,
) -> Result<Grammar, NormalizeError> {
    let recursive: Vec<&Production> = g
        .productions_for(a)
        .filter(|p| p.is_recursive())
        .collect();
    if recursive.is_empty() {
        return Ok(g.clone());
    }
    let nonrecursive: Vec<&Production> = g
        .productions_for(a)
        .filter(|p| !p.is_recursive())
        .collect();
    let t = g.labels.arity(a).expect("registered nonterminal");
    if t > cfg.max_arity {
        return Err(NormalizeError::CapExceeded {
            what: format!("nonterminal arity {t} in the partial-bijection enumeration"),
            limit: cfg.max_arity,
        });
    }

    // Not every pair (f, g) can label an edge that some derivation
    // finishes. A complex edge is only ever rewritten by a Type II or
    // Type III production, and both pin the pair: the first component
    // must restate how the rewriting production's δ-edge meets its
    // external sequence (replacement fuses the edge's attachment onto
    // exactly those nodes), and the second component is anchored at the
    // identity by Type II and composed backwards through the Type III
    // side condition g = g'∘f'. Pairs outside that closure would label
    // edges no production can rewrite, so only the closure is
    // materialized; the pairs inside it make the Type III external
    // sequence automatically repetition-free.
    let patterns: Vec<PartialBijection> = {
        let mut seen = Vec::new();
        for rho in &recursive {
            let f0 = delta_ext_pattern(rho)?;
            if !seen.contains(&f0) {
                seen.push(f0);
            }
        }
        seen
    };
    let identity = PartialBijection::identity(t);
    let mut useful: BTreeSet<(PartialBijection, PartialBijection)> = patterns
        .iter()
        .map(|f0| (f0.clone(), identity.clone()))
        .collect();
    let mut frontier: Vec<(PartialBijection, PartialBijection)> =
        useful.iter().cloned().collect();
    while let Some((f2, g2)) = frontier.pop() {
        let gg = g2.compose(&f2)?;
        for f0 in &patterns {
            let pair = (f0.clone(), gg.clone());
            if useful.insert(pair.clone()) {
                frontier.push(pair);
            }
        }
    }

    // Register the complex symbols (A, f, g) the closure needs.
    let mut labels = g.labels.clone();
    for (f, gg) in &useful {
        let cn = ComplexNonterminal::new(a, f.clone(), gg.clone())?;
        let name = cn.name();
        if labels.contains(&name) {
            if !complex.contains(&name) {
                return Err(NormalizeError::NameCollision(name));
            }
            continue;
        }
        labels.insert(&name, LabelKind::Nonterminal, cn.arity())?;
        complex.insert(name);
    }

    let mut out: Vec<Production> = g
        .productions
        .iter()
        .filter(|p| !(p.lhs == a && p.is_recursive()))
        .cloned()
        .collect();
    let cap = |n: usize| -> Result<(), NormalizeError> {
        if n > cfg.max_productions {
            Err(NormalizeError::CapExceeded {
                what: "production count".to_string(),
                limit: cfg.max_productions,
            })
        } else {
            Ok(())
        }
    };

    for gamma in &nonrecursive {
        for (f, gg) in &useful {
            let id = format!(
                "{}_I__{}__{}",
                gamma.id,
                f.name_fragment(),
                gg.name_fragment()
            );
            out.push(build_type1(gamma, f, gg, &labels, &id)?);
            cap(out.len())?;
        }
    }
    for rho in &recursive {
        let id = format!("{}_II", rho.id);
        let (p, _) = build_type2(rho, &labels, complex, &id)?;
        out.push(p);
        cap(out.len())?;
    }
    for rho in &recursive {
        let f = delta_ext_pattern(rho)?;
        for (f2, g2) in &useful {
            let gg = g2.compose(f2)?;
            let id = format!(
                "{}_III__{}__{}__{}__{}",
                rho.id,
                f.name_fragment(),
                gg.name_fragment(),
                f2.name_fragment(),
                g2.name_fragment()
            );
            let (p, _, _) = build_type3(rho, &f, &gg, f2, g2, &labels, complex, &id)?;
            out.push(p);
            cap(out.len())?;
        }
    }

    Ok(Grammar::new(labels, out, &g.start)?)
}

/// The full recursion-elimination loop: orders the base nonterminals by
/// first appearance, substitutes lower-numbered productions into δ-edges
/// (which preserves the language), and eliminates recursion per
/// nonterminal. Afterwards every production's μ is terminal or strictly
/// later in the constructed order, and no μ is a complex symbol.
pub fn eliminate_recursion(
    g: &Grammar,
    cfg: &NormalizeConfig,
) -> Result<Grammar, NormalizeError> {
    let (out, _) = eliminate_recursion_impl(g, cfg)?;
    Ok(out)
}

fn eliminate_recursion_impl(
    g: &Grammar,
    cfg: &NormalizeConfig,
) -> Result<(Grammar, Vec<String>), NormalizeError> {
    let base_order: Vec<String> = g.labels.nonterminals().map(String::from).collect();
    let mut complex: BTreeSet<String> = BTreeSet::new();
    let mut cur = g.clone();
    let mut warnings = Vec::new();

    for (i, a_i) in base_order.iter().enumerate() {
        if !cur.labels.contains(a_i) {
            continue; // pruned as useless in an earlier round
        }
        for a_j in base_order.iter().take(i) {
            if !cur.labels.contains(a_j) {
                continue;
            }
            // Substitute A_j-productions into every A_i-production whose
            // μ is A_j. New productions get μ from the substituted
            // production, which the per-round invariant keeps terminal or
            // later than A_j, so one extra sweep confirms quiescence.
            loop {
                let targets: Vec<Production> = cur
                    .productions_for(a_i)
                    .filter(|p| p.mu().ok() == Some(a_j.as_str()))
                    .cloned()
                    .collect();
                if targets.is_empty() {
                    break;
                }
                let sources: Vec<Production> =
                    cur.productions_for(a_j).cloned().collect();
                let mut ids: BTreeSet<String> =
                    cur.productions.iter().map(|p| p.id.clone()).collect();
                let mut counter = 0usize;
                let mut productions: Vec<Production> = cur
                    .productions
                    .iter()
                    .filter(|p| !targets.iter().any(|t| t.id == p.id))
                    .cloned()
                    .collect();
                for pi in &targets {
                    for h in &sources {
                        productions.push(substitute(pi, h, || {
                            fresh_pid("sb", &mut counter, &mut ids)
                        })?);
                        if productions.len() > cfg.max_productions {
                            return Err(NormalizeError::CapExceeded {
                                what: "production count".to_string(),
                                limit: cfg.max_productions,
                            });
                        }
                    }
                }
                cur = Grammar::new(cur.labels.clone(), productions, &cur.start)?;
            }
        }
        cur = eliminate_recursive_impl(&cur, a_i, cfg, &mut complex)?;
        let (next, mut w) = housekeep(&cur, cfg)?;
        warnings.append(&mut w);
        cur = next;
    }

    // Postconditions: no recursive production survives, no μ is complex,
    // and the lhs→μ relation is acyclic over nonterminals.
    for p in &cur.productions {
        let mu = p.mu()?;
        if p.lhs == mu {
            return Err(NormalizeError::Internal(format!(
                "recursive production `{}` survived recursion elimination",
                p.id
            )));
        }
        if complex.contains(mu) {
            return Err(NormalizeError::Internal(format!(
                "production `{}` has a complex μ `{}`",
                p.id, mu
            )));
        }
    }
    check_mu_acyclic(&cur)?;
    Ok((cur, warnings))
}

/// Substitutes `h`'s right-hand side for `pi`'s δ-edge; the image of
/// `h`'s δ becomes the δ of the result. This is the language-preserving
/// core step shared by chain elimination, recursion elimination, and the
/// final composition.
fn substitute(
    pi: &Production,
    h: &Production,
    mut pid: impl FnMut() -> String,
) -> Result<Production, NormalizeError> {
    let delta_pi = pi
        .delta
        .as_deref()
        .ok_or_else(|| NormalizeError::Internal(format!("production `{}` has no δ", pi.id)))?;
    let delta_h = h
        .delta
        .as_deref()
        .ok_or_else(|| NormalizeError::Internal(format!("production `{}` has no δ", h.id)))?;
    let (rhs, map) = pi.rhs.replace_with_map(delta_pi, &h.rhs)?;
    Ok(Production {
        id: pid(),
        lhs: pi.lhs.clone(),
        rhs,
        delta: Some(map.edges[delta_h].clone()),
    })
}

/// Verifies that `lhs(π) → μ(π)` (nonterminal μ only) is acyclic.
fn check_mu_acyclic(g: &Grammar) -> Result<(), NormalizeError> {
    let mut arcs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for p in &g.productions {
        let mu = p.mu()?;
        if g.labels.is_nonterminal(mu) {
            arcs.entry(p.lhs.as_str()).or_default().insert(mu);
        }
    }
    // Kahn-style: repeatedly remove sinks.
    let mut remaining: BTreeSet<&str> = g.labels.nonterminals().collect();
    loop {
        let sinks: Vec<&str> = remaining
            .iter()
            .filter(|n| {
                arcs.get(*n)
                    .map(|targets| targets.iter().all(|t| !remaining.contains(t)))
                    .unwrap_or(true)
            })
            .copied()
            .collect();
        if sinks.is_empty() {
            break;
        }
        for s in sinks {
            remaining.remove(s);
        }
    }
    if remaining.is_empty() {
        Ok(())
    } else {
        Err(NormalizeError::Internal(format!(
            "μ-order cycle among {{{}}}",
            remaining.into_iter().collect::<Vec<_>>().join(", ")
        )))
    }
}

// ---------------------------------------------------------------------------
// Stage 5: composition to terminal μ
// ---------------------------------------------------------------------------

/// Composes productions along δ-derivations until μ is terminal: the
/// result contains, for every nonterminal, every composition `π₁⋯πₖ`
/// where each πᵢ₊₁ rewrites the δ-edge of πᵢ and only μ(πₖ) is terminal.
/// Requires recursion elimination (the lhs→μ relation must be acyclic).
pub fn compose_final(g: &Grammar, cfg: &NormalizeConfig) -> Result<Grammar, NormalizeError> {
    check_mu_acyclic(g)?;
    let mut ids: BTreeSet<String> = g.productions.iter().map(|p| p.id.clone()).collect();
    let mut counter = 0usize;
    let mut memo: BTreeMap<String, Vec<Production>> = BTreeMap::new();
    let order: Vec<String> = g.labels.nonterminals().map(String::from).collect();

    fn composed<'a>(
        x: &str,
        g: &Grammar,
        memo: &'a mut BTreeMap<String, Vec<Production>>,
        ids: &mut BTreeSet<String>,
        counter: &mut usize,
        cfg: &NormalizeConfig,
    ) -> Result<&'a Vec<Production>, NormalizeError> {
        if !memo.contains_key(x) {
            let mut out: Vec<Production> = Vec::new();
            let prods: Vec<Production> = g.productions_for(x).cloned().collect();
            for p in prods {
                let mu = p.mu()?.to_string();
                if g.labels.is_terminal(&mu) {
                    out.push(p.clone());
                } else {
                    // Acyclicity was checked up front, so this recursion
                    // descends strictly along the μ-order.
                    let tails = composed(&mu, g, memo, ids, counter, cfg)?.clone();
                    for tail in &tails {
                        out.push(substitute(&p, tail, || fresh_pid("cp", counter, ids))?);
                        if out.len() > cfg.max_productions {
                            return Err(NormalizeError::CapExceeded {
                                what: "production count".to_string(),
                                limit: cfg.max_productions,
                            });
                        }
                    }
                }
            }
            memo.insert(x.to_string(), out);
        }
        Ok(memo.get(x).expect("just inserted"))
    }

    let mut productions: Vec<Production> = Vec::new();
    for x in &order {
        let composed_x = composed(x, g, &mut memo, &mut ids, &mut counter, cfg)?.clone();
        productions.extend(composed_x);
        if productions.len() > cfg.max_productions {
            return Err(NormalizeError::CapExceeded {
                what: "production count".to_string(),
                limit: cfg.max_productions,
            });
        }
    }
    Ok(Grammar::new(g.labels.clone(), productions, &g.start)?)
}

// ---------------------------------------------------------------------------
// Stage 6: terminal splitting
// ---------------------------------------------------------------------------

/// Ensures every right-hand side has exactly one terminal edge: the
/// δ-edge's terminal stays, every other terminal edge `a` is relabeled to
/// a fresh nonterminal `T_a` with the single production `T_a → ⊚(a)`.
/// Requires every right-hand side to contain at least one terminal edge.
pub fn split_terminals(g: &Grammar) -> Result<Grammar, NormalizeError> {
    let mut labels = g.labels.clone();
    let mut outsourced: Vec<String> = Vec::new(); // terminals a with a T_a, in first-use order
    let mut productions: Vec<Production> = Vec::new();

    for p in &g.productions {
        let terminal_edges: Vec<String> = p
            .rhs
            .edges()
            .filter(|(_, e)| g.labels.is_terminal(&e.label))
            .map(|(id, _)| id.to_string())
            .collect();
        if terminal_edges.is_empty() {
            return Err(NormalizeError::Internal(format!(
                "production `{}` has no terminal edge; composition must run first",
                p.id
            )));
        }
        // Keep the δ-edge if it is terminal (the pipeline guarantees it),
        // otherwise the least-id terminal edge.
        let keep = match p.delta.as_deref() {
            Some(d) if terminal_edges.iter().any(|e| e == d) => d.to_string(),
            _ => terminal_edges[0].clone(),
        };
        let mut edges: Vec<(String, Edge)> = Vec::new();
        for (id, e) in p.rhs.edges() {
            let mut e = e.clone();
            if id != keep && g.labels.is_terminal(&e.label) {
                let t_name = format!("T_{}", e.label);
                if !labels.contains(&t_name) {
                    labels.insert(
                        &t_name,
                        LabelKind::Nonterminal,
                        g.labels.arity(&e.label).expect("registered"),
                    )?;
                    outsourced.push(e.label.clone());
                } else if g.labels.contains(&t_name) && !outsourced.contains(&e.label) {
                    // The name was already taken by a user symbol.
                    return Err(NormalizeError::NameCollision(t_name));
                }
                e.label = t_name;
            }
            edges.push((id.to_string(), e));
        }
        productions.push(Production {
            id: p.id.clone(),
            lhs: p.lhs.clone(),
            rhs: Hypergraph::new(p.rhs.nodes().map(String::from), edges, p.rhs.ext().to_vec()),
            delta: Some(keep),
        });
    }

    let mut ids: BTreeSet<String> = productions.iter().map(|p| p.id.clone()).collect();
    let mut counter = 0usize;
    for a in &outsourced {
        let rhs = handle(a, &labels)?;
        let delta = Some("e0".to_string());
        productions.push(Production {
            id: fresh_pid("sp", &mut counter, &mut ids),
            lhs: format!("T_{a}"),
            rhs,
            delta,
        });
    }
    Ok(Grammar::new(labels, productions, &g.start)?)
}

// ---------------------------------------------------------------------------
// Housekeeping & driver
// ---------------------------------------------------------------------------

/// Language-preserving cleanup: drops isomorphic duplicate productions
/// (same lhs, isomorphic rhs with matching δ position) and useless
/// symbols. Right-hand sides too large to canonicalize are kept
/// un-deduplicated with a warning.
pub fn housekeep(
    g: &Grammar,
    cfg: &NormalizeConfig,
) -> Result<(Grammar, Vec<String>), NormalizeError> {
    let mut warnings = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut kept: Vec<Production> = Vec::new();
    for p in &g.productions {
        match delta_marked_code(p, cfg.canon_cap) {
            Ok(code) => {
                if seen.insert((p.lhs.clone(), code)) {
                    kept.push(p.clone());
                }
            }
            Err(HypergraphError::CanonCapExceeded { count, cap }) => {
                warnings.push(format!(
                    "production `{}` kept without deduplication: {count} attached internal nodes exceed the canonicalization cap {cap}",
                    p.id
                ));
                kept.push(p.clone());
            }
            Err(e) => return Err(e.into()),
        }
    }
    let deduped = Grammar::new(g.labels.clone(), kept, &g.start)?;
    let pruned = eliminate_useless(&deduped)?;
    Ok((pruned, warnings))
}

/// Canonical code of a production's rhs with the δ-edge label marked, so
/// isomorphism comparison respects the δ choice.
fn delta_marked_code(p: &Production, cap: usize) -> Result<String, HypergraphError> {
    let edges: Vec<(String, Edge)> = p
        .rhs
        .edges()
        .map(|(id, e)| {
            let mut e = e.clone();
            if Some(id) == p.delta.as_deref() {
                e.label.push('\u{1}');
            }
            (id.to_string(), e)
        })
        .collect();
    let marked = Hypergraph::new(
        p.rhs.nodes().map(String::from),
        edges,
        p.rhs.ext().to_vec(),
    );
    Ok(marked.canonical_code_with_cap(cap)?.as_str().to_string())
}

/// Runs the pipeline up to (and including) `upto`, returning every
/// intermediate grammar (after housekeeping) labeled with its stage name.
pub fn pipeline_trace(
    g: &Grammar,
    upto: PipelineStage,
    cfg: &NormalizeConfig,
) -> Result<(Vec<(String, Grammar)>, PipelineReport), NormalizeError> {
    for nt in g.labels.nonterminals() {
        let arity = g.labels.arity(nt).expect("registered");
        if arity > cfg.max_arity {
            return Err(NormalizeError::CapExceeded {
                what: format!("arity {arity} of nonterminal `{nt}`"),
                limit: cfg.max_arity,
            });
        }
    }

    let mut report = PipelineReport::default();
    let mut trace: Vec<(String, Grammar)> = Vec::new();
    let mut cur = g.clone();

    let stages: Vec<(&str, PipelineStage)> = vec![
        ("useless", PipelineStage::Useless),
        ("edgeless", PipelineStage::Edgeless),
        ("chain", PipelineStage::Chain),
        ("useless", PipelineStage::Norec),
        ("norec", PipelineStage::Norec),
        ("compose", PipelineStage::Compose),
        ("split", PipelineStage::Wgnf),
    ];
    for (idx, (name, gate)) in stages.iter().enumerate() {
        if upto < *gate {
            break;
        }
        let start = Instant::now();
        let before = cur.productions.len();
        let labels_before: BTreeSet<String> =
            cur.labels.iter().map(|(n, _, _)| n.to_string()).collect();
        let (next, mut warnings) = match idx {
            0 | 3 => (eliminate_useless(&cur)?, Vec::new()),
            1 => (eliminate_edgeless(&cur, cfg)?, Vec::new()),
            2 => (eliminate_chain(&cur, cfg)?, Vec::new()),
            4 => eliminate_recursion_impl(&cur, cfg)?,
            5 => (compose_final(&cur, cfg)?, Vec::new()),
            6 => (split_terminals(&cur)?, Vec::new()),
            _ => unreachable!(),
        };
        let (next, mut hk_warnings) = housekeep(&next, cfg)?;
        warnings.append(&mut hk_warnings);
        let new_nonterminals = next
            .labels
            .iter()
            .filter(|(n, _, _)| !labels_before.contains(*n))
            .count();
        report.stages.push(StageReport {
            stage: name.to_string(),
            before,
            after: next.productions.len(),
            new_nonterminals,
            warnings,
            millis: start.elapsed().as_millis() as u64,
        });
        trace.push((name.to_string(), next.clone()));
        cur = next;
    }
    Ok((trace, report))
}

/// Runs the pipeline prefix ending at `upto` and returns the final
/// grammar with the per-stage report.
pub fn normalize_upto(
    g: &Grammar,
    upto: PipelineStage,
    cfg: &NormalizeConfig,
) -> Result<(Grammar, PipelineReport), NormalizeError> {
    let (trace, report) = pipeline_trace(g, upto, cfg)?;
    let last = trace
        .into_iter()
        .next_back()
        .map(|(_, g)| g)
        .unwrap_or_else(|| g.clone());
    Ok((last, report))
}

/// The full pipeline: the result is in the weak Greibach normal form and
/// generates the same language as the input.
pub fn normalize(
    g: &Grammar,
    cfg: &NormalizeConfig,
) -> Result<(Grammar, PipelineReport), NormalizeError> {
    let (out, report) = normalize_upto(g, PipelineStage::Wgnf, cfg)?;
    for p in &out.productions {
        let terminal_edges = p
            .rhs
            .edges()
            .filter(|(_, e)| out.labels.is_terminal(&e.label))
            .count();
        if terminal_edges != 1 {
            return Err(NormalizeError::Internal(format!(
                "production `{}` has {terminal_edges} terminal edges after the full pipeline",
                p.id
            )));
        }
    }
    Ok((out, report))
}

/// Generates an id `{prefix}{n}` not present in `ids`, inserting it.
fn fresh_pid(prefix: &str, counter: &mut usize, ids: &mut BTreeSet<String>) -> String {
    loop {
        let candidate = format!("{prefix}{counter}");
        *counter += 1;
        if ids.insert(candidate.clone()) {
            return candidate;
        }
    }
}

/// Generates an id `{prefix}{n}` accepted by `free`.
fn next_free(prefix: &str, counter: &mut usize, free: impl Fn(&str) -> bool) -> String {
    loop {
        let candidate = format!("{prefix}{counter}");
        *counter += 1;
        if free(&candidate) {
            return candidate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::PartialBijection as PB;

    fn graph(nodes: &[&str], edges: &[(&str, &str, &[&str])], ext: &[&str]) -> Hypergraph {
        Hypergraph::new(
            nodes.iter().map(|s| s.to_string()),
            edges.iter().map(|(id, label, att)| {
                (
                    id.to_string(),
                    Edge {
                        label: label.to_string(),
                        att: att.iter().map(|s| s.to_string()).collect(),
                    },
                )
            }),
            ext.iter().map(|s| s.to_string()),
        )
    }

    fn prod(id: &str, lhs: &str, rhs: Hypergraph, delta: Option<&str>) -> Production {
        Production {
            id: id.into(),
            lhs: lhs.into(),
            rhs,
            delta: delta.map(String::from),
        }
    }

    /// The star grammar: in normal form already, language = stars of
    /// a-edges on one node.
    fn star_grammar() -> Grammar {
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("a", LabelKind::Terminal, 1).unwrap();
        Grammar::new(
            lt,
            vec![
                prod(
                    "p1",
                    "S",
                    graph(
                        &["v0"],
                        &[("e1", "S", &["v0"]), ("e2", "a", &["v0"])],
                        &["v0"],
                    ),
                    Some("e2"),
                ),
                prod(
                    "p2",
                    "S",
                    graph(&["v0"], &[("e2", "a", &["v0"])], &["v0"]),
                    Some("e2"),
                ),
            ],
            "S",
        )
        .unwrap()
    }

    /// The isolated-node pump: an arity-0 nonterminal that adds one
    /// isolated node per step. Not isolated-node bounded.
    fn pump_grammar() -> Grammar {
        let mut lt = LabelTable::new();
        lt.insert("T", LabelKind::Nonterminal, 0).unwrap();
        lt.insert("b", LabelKind::Terminal, 0).unwrap();
        Grammar::new(
            lt,
            vec![
                prod(
                    "p1",
                    "T",
                    graph(&["v0"], &[("e1", "T", &[])], &[]),
                    Some("e1"),
                ),
                prod("p2", "T", graph(&[], &[("e1", "b", &[])], &[]), Some("e1")),
            ],
            "T",
        )
        .unwrap()
    }

    /// The two-production recursion walkthrough: an arity-3 nonterminal
    /// whose recursive rule hangs a terminal B-edge off the recursion and
    /// whose base rule closes a terminal triangle.
    fn triangle_grammar() -> Grammar {
        let mut lt = LabelTable::new();
        lt.insert("A", LabelKind::Nonterminal, 3).unwrap();
        for t in ["B", "C", "D", "E"] {
            lt.insert(t, LabelKind::Terminal, 2).unwrap();
        }
        let rho = prod(
            "rho",
            "A",
            graph(
                &["N1", "N2", "N3", "N4"],
                &[
                    ("b", "B", &["N1", "N2"]),
                    ("r", "A", &["N3", "N4", "N2"]),
                ],
                &["N1", "N3", "N4"],
            ),
            Some("r"),
        );
        let gamma = prod(
            "gamma",
            "A",
            graph(
                &["N21", "N22", "N23"],
                &[
                    ("c", "C", &["N21", "N22"]),
                    ("d", "D", &["N22", "N23"]),
                    ("e", "E", &["N23", "N21"]),
                ],
                &["N21", "N22", "N23"],
            ),
            Some("d"),
        );
        Grammar::new(lt, vec![rho, gamma], "A").unwrap()
    }

    fn cfg() -> NormalizeConfig {
        NormalizeConfig::default()
    }

    #[test]
    fn useless_removes_unproductive_cycle() {
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("B", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("a", LabelKind::Terminal, 1).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod(
                    "p1",
                    "S",
                    graph(&["v"], &[("e1", "a", &["v"])], &["v"]),
                    Some("e1"),
                ),
                prod(
                    "p2",
                    "B",
                    graph(&["v"], &[("e1", "B", &["v"])], &["v"]),
                    Some("e1"),
                ),
            ],
            "S",
        )
        .unwrap();
        let out = eliminate_useless(&g).unwrap();
        assert_eq!(out.productions.len(), 1);
        assert!(!out.labels.contains("B"));
        assert!(out.labels.contains("a"));
    }

    #[test]
    fn useless_keeps_star_grammar() {
        let g = star_grammar();
        let out = eliminate_useless(&g).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn useless_reports_empty_language() {
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 1).unwrap();
        let g = Grammar::new(
            lt,
            vec![prod(
                "p1",
                "S",
                graph(&["v"], &[("e1", "S", &["v"])], &["v"]),
                Some("e1"),
            )],
            "S",
        )
        .unwrap();
        assert_eq!(eliminate_useless(&g), Err(NormalizeError::EmptyLanguage));
    }

    #[test]
    fn useless_removes_unreachable() {
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("C", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("a", LabelKind::Terminal, 1).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod(
                    "p1",
                    "S",
                    graph(&["v"], &[("e1", "a", &["v"])], &["v"]),
                    Some("e1"),
                ),
                prod(
                    "p2",
                    "C",
                    graph(&["v"], &[("e1", "a", &["v"])], &["v"]),
                    Some("e1"),
                ),
            ],
            "S",
        )
        .unwrap();
        let out = eliminate_useless(&g).unwrap();
        assert_eq!(out.productions.len(), 1);
        assert!(!out.labels.contains("C"));
    }

    #[test]
    fn edgeless_folds_nullable_nonterminal() {
        // A derives the edgeless one-external-node graph; S uses an
        // A-edge next to a terminal edge.
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("A", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("a", LabelKind::Terminal, 1).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod("pa", "A", graph(&["v"], &[], &["v"]), None),
                prod(
                    "ps",
                    "S",
                    graph(
                        &["v", "w"],
                        &[("e1", "A", &["w"]), ("e2", "a", &["v"])],
                        &["v"],
                    ),
                    Some("e2"),
                ),
            ],
            "S",
        )
        .unwrap();
        let out = eliminate_edgeless(&g, &cfg()).unwrap();
        assert!(out.productions.iter().all(|p| p.rhs.esize() > 0));
        // The A-rule is gone; S has the original rule plus the variant
        // with the A-edge erased.
        assert_eq!(out.productions.len(), 2);
        let variant = out
            .productions
            .iter()
            .find(|p| p.rhs.esize() == 1)
            .expect("erased variant");
        assert_eq!(variant.rhs.node_count(), 2); // w stays, now isolated
        assert_eq!(variant.rhs.isize(), 1);
    }

    #[test]
    fn edgeless_respects_null_isolated_counts() {
        // A derives edgeless graphs with 0 or 1 extra isolated node.
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 0).unwrap();
        lt.insert("A", LabelKind::Nonterminal, 0).unwrap();
        lt.insert("b", LabelKind::Terminal, 0).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod("pa0", "A", graph(&[], &[], &[]), None),
                prod("pa1", "A", graph(&["v"], &[], &[]), None),
                prod(
                    "ps",
                    "S",
                    graph(&[], &[("e1", "A", &[]), ("e2", "b", &[])], &[]),
                    Some("e2"),
                ),
            ],
            "S",
        )
        .unwrap();
        let out = eliminate_edgeless(&g, &cfg()).unwrap();
        // Variants: keep the A-edge; erase it adding 0 nodes; erase it
        // adding 1 node.
        assert_eq!(out.productions.len(), 3);
        let isolated: BTreeSet<usize> = out
            .productions
            .iter()
            .filter(|p| p.rhs.esize() == 1)
            .map(|p| p.rhs.isize())
            .collect();
        assert_eq!(isolated, BTreeSet::from([0, 1]));
    }

    #[test]
    fn edgeless_detects_nullable_start() {
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 0).unwrap();
        lt.insert("b", LabelKind::Terminal, 0).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod("p1", "S", graph(&[], &[], &[]), None),
                prod("p2", "S", graph(&[], &[("e1", "b", &[])], &[]), Some("e1")),
            ],
            "S",
        )
        .unwrap();
        assert!(matches!(
            eliminate_edgeless(&g, &cfg()),
            Err(NormalizeError::NotIsolatedNodeBounded { stage, .. }) if stage == "edgeless"
        ));
    }

    #[test]
    fn edgeless_detects_pump() {
        // A → A + one isolated node (all edges nonterminal), A → empty:
        // A derives edgeless graphs with any number of isolated nodes.
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 0).unwrap();
        lt.insert("A", LabelKind::Nonterminal, 0).unwrap();
        lt.insert("b", LabelKind::Terminal, 0).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod(
                    "pa",
                    "A",
                    graph(&["v"], &[("e1", "A", &[])], &[]),
                    Some("e1"),
                ),
                prod("pa0", "A", graph(&[], &[], &[]), None),
                prod(
                    "ps",
                    "S",
                    graph(&[], &[("e1", "A", &[]), ("e2", "b", &[])], &[]),
                    Some("e2"),
                ),
            ],
            "S",
        )
        .unwrap();
        assert!(matches!(
            eliminate_edgeless(&g, &cfg()),
            Err(NormalizeError::NotIsolatedNodeBounded { stage, .. }) if stage == "edgeless"
        ));
    }

    #[test]
    fn edgeless_keeps_star_grammar() {
        let g = star_grammar();
        let out = eliminate_edgeless(&g, &cfg()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn chain_detects_pump_grammar() {
        let g = pump_grammar();
        let err = eliminate_chain(&g, &cfg()).unwrap_err();
        assert!(matches!(
            err,
            NormalizeError::NotIsolatedNodeBounded { ref stage, .. } if stage == "chain"
        ));
    }

    #[test]
    fn chain_unchanged_without_chain_rules() {
        let g = star_grammar();
        let out = eliminate_chain(&g, &cfg()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn chain_closure_of_permutations() {
        // Two chain rules permute an arity-3 nonterminal's attachment by
        // a transposition and a 3-cycle; they generate all of S3, so the
        // closed grammar has one production per permutation of the single
        // terminal rule.
        let n = 3usize;
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, n).unwrap();
        lt.insert("a", LabelKind::Terminal, n).unwrap();
        let nodes: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let nodes_ref: Vec<&str> = nodes.iter().map(|s| s.as_str()).collect();
        let swap: Vec<&str> = vec!["v1", "v0", "v2"];
        let rot: Vec<&str> = vec!["v1", "v2", "v0"];
        let g = Grammar::new(
            lt,
            vec![
                prod(
                    "p1",
                    "S",
                    graph(&nodes_ref, &[("e1", "S", &swap)], &nodes_ref),
                    Some("e1"),
                ),
                prod(
                    "p2",
                    "S",
                    graph(&nodes_ref, &[("e1", "S", &rot)], &nodes_ref),
                    Some("e1"),
                ),
                prod(
                    "p3",
                    "S",
                    graph(&nodes_ref, &[("e1", "a", &nodes_ref)], &nodes_ref),
                    Some("e1"),
                ),
            ],
            "S",
        )
        .unwrap();
        let out = eliminate_chain(&g, &cfg()).unwrap();
        let (out, _) = housekeep(&out, &cfg()).unwrap();
        assert_eq!(out.productions.len(), 6);
        assert!(out
            .productions
            .iter()
            .all(|p| p.rhs.esize() == 1 && p.rhs.edges().all(|(_, e)| e.label == "a")));
    }

    #[test]
    fn type2_worked_shape() {
        let g = triangle_grammar();
        let rho = g.production("rho").unwrap();
        let complex = BTreeSet::new();
        let (nu2, cn) = build_type2(rho, &g.labels, &complex, "nu2").unwrap();
        // f0 = {1→2, 2→3}: e0 attaches (N3, N4, N2); N3 and N4 are
        // external positions 2 and 3.
        assert_eq!(cn.f, PB::new(3, [(1, 2), (2, 3)]).unwrap());
        assert!(cn.g.is_identity());
        assert_eq!(cn.arity(), 4);
        assert_eq!(nu2.lhs, cn.name());
        // ext' = att(e0) then the uncovered external node N1.
        assert_eq!(
            nu2.rhs.ext(),
            ["N3", "N4", "N2", "N1"]
                .map(String::from)
                .as_slice()
        );
        assert_eq!(nu2.rhs.esize(), 1); // only the B-edge remains
        assert_eq!(nu2.mu().unwrap(), "B");
    }

    #[test]
    fn type1_worked_shape() {
        let g = triangle_grammar();
        let gamma = g.production("gamma").unwrap();
        let f3 = PB::new(3, [(1, 2), (2, 3)]).unwrap();
        let g3 = PB::new(3, [(1, 3)]).unwrap();
        let nu1 = build_type1(gamma, &f3, &g3, &g.labels, "nu1").unwrap();
        // g3∘f3 is empty, so all three new external nodes are fresh and
        // the complex edge has arity 6.
        assert_eq!(nu1.lhs, "A");
        assert_eq!(nu1.rhs.ext().len(), 3);
        let complex_edge = nu1
            .rhs
            .edges()
            .find(|(_, e)| e.label.starts_with("A__"))
            .expect("complex edge")
            .1;
        assert_eq!(complex_edge.att.len(), 6);
        assert_eq!(
            complex_edge.att[..3],
            ["N21", "N22", "N23"].map(String::from)
        );
        // The external nodes are exactly the fresh ones.
        for x in nu1.rhs.ext() {
            assert!(complex_edge.att[3..].contains(x));
            assert!(!gamma.rhs.has_node(x));
        }
        // δ kept from gamma.
        assert_eq!(nu1.delta.as_deref(), Some("d"));
        assert_eq!(
            ComplexNonterminal::new("A", f3, g3).unwrap().arity(),
            6
        );
    }

    #[test]
    fn type1_rejects_recursive_input() {
        let g = triangle_grammar();
        let rho = g.production("rho").unwrap();
        let f = PB::empty(3);
        assert!(matches!(
            build_type1(rho, &f, &f, &g.labels, "x"),
            Err(NormalizeError::Recursive(_))
        ));
    }

    #[test]
    fn type3_worked_shape() {
        let g = triangle_grammar();
        let rho = g.production("rho").unwrap();
        let f3 = PB::new(3, [(1, 2), (2, 3)]).unwrap();
        let g3 = PB::new(3, [(1, 3)]).unwrap();
        let f2 = f3.clone();
        let g2 = PB::new(3, [(1, 2), (2, 3)]).unwrap();
        let complex = BTreeSet::new();
        let (nu3, lhs_cn, edge_cn) =
            build_type3(rho, &f3, &g3, &f2, &g2, &g.labels, &complex, "nu3").unwrap();
        assert_eq!(nu3.lhs, lhs_cn.name());
        assert_eq!(lhs_cn.arity(), 6);
        assert_eq!(edge_cn.arity(), 5);
        // ext' = (N3, N4, N2, u, u', N1): e0's attachment, two fresh
        // nodes, and the moved external node N1 at the last position.
        let ext = nu3.rhs.ext();
        assert_eq!(ext.len(), 6);
        assert_eq!(&ext[..3], ["N3", "N4", "N2"].map(String::from).as_slice());
        assert_eq!(ext[5], "N1");
        assert!(!rho.rhs.has_node(&ext[3]));
        assert!(!rho.rhs.has_node(&ext[4]));
        // The inserted complex edge attaches ext_R then the fresh nodes.
        let complex_edge = nu3
            .rhs
            .edges()
            .find(|(_, e)| e.label == edge_cn.name())
            .expect("complex edge")
            .1;
        assert_eq!(
            complex_edge.att,
            vec![
                "N1".to_string(),
                "N3".to_string(),
                "N4".to_string(),
                ext[3].clone(),
                ext[4].clone()
            ]
        );
        // δ comes from the surviving original edges.
        assert_eq!(nu3.delta.as_deref(), Some("b"));
        assert_eq!(nu3.mu().unwrap(), "B");
    }

    #[test]
    fn type3_rejects_side_condition_violation() {
        let g = triangle_grammar();
        let rho = g.production("rho").unwrap();
        let f3 = PB::new(3, [(1, 2), (2, 3)]).unwrap();
        let g3 = PB::new(3, [(1, 3)]).unwrap();
        let id3 = PB::identity(3);
        let complex = BTreeSet::new();
        assert!(matches!(
            build_type3(rho, &f3, &g3, &id3, &id3, &g.labels, &complex, "x"),
            Err(NormalizeError::SideCondition { .. })
        ));
    }

    #[test]
    fn type3_total_specialization() {
        // All four maps total bijections: no fresh nodes, ext' = att(e0),
        // complex edge attaches exactly ext_R.
        let mut lt = LabelTable::new();
        lt.insert("A", LabelKind::Nonterminal, 2).unwrap();
        lt.insert("B", LabelKind::Terminal, 2).unwrap();
        let rho = prod(
            "rho",
            "A",
            graph(
                &["n1", "n2", "n3"],
                &[("b", "B", &["n1", "n3"]), ("r", "A", &["n2", "n3"])],
                &["n1", "n2"],
            ),
            Some("r"),
        );
        let g = Grammar::new(lt, vec![rho], "A").unwrap();
        let rho = g.production("rho").unwrap();
        let id2 = PB::identity(2);
        let complex = BTreeSet::new();
        let (nu3, lhs_cn, edge_cn) =
            build_type3(rho, &id2, &id2, &id2, &id2, &g.labels, &complex, "nu3").unwrap();
        assert_eq!(lhs_cn.arity(), 2);
        assert_eq!(edge_cn.arity(), 2);
        assert_eq!(nu3.rhs.ext(), ["n2", "n3"].map(String::from).as_slice());
        let complex_edge = nu3
            .rhs
            .edges()
            .find(|(_, e)| e.label == edge_cn.name())
            .unwrap()
            .1;
        assert_eq!(complex_edge.att, ["n1", "n2"].map(String::from).to_vec());
    }

    #[test]
    fn eliminate_recursive_removes_recursion() {
        let g = triangle_grammar();
        let out = eliminate_recursive(&g, "A", &cfg()).unwrap();
        assert!(out
            .productions_for("A")
            .all(|p| !p.is_recursive()));
        // rho's δ-edge attaches (N3, N4, N2) against ext (N1, N3, N4),
        // so the only consumable f is {1→2, 2→3}; the g-closure under
        // g'∘f' from the identity is id, f, f∘f = {1→3}, and ∅. One ν1
        // per pair, plus gamma itself.
        let nu1_count = out
            .productions_for("A")
            .filter(|p| p.id.starts_with("gamma_I__"))
            .count();
        assert_eq!(nu1_count, 4);
        // No μ is complex.
        for p in &out.productions {
            let mu = p.mu().unwrap();
            assert!(
                !mu.starts_with("A__"),
                "production {} has complex μ {mu}",
                p.id
            );
        }
    }

    #[test]
    fn eliminate_recursive_noop_without_recursion() {
        let g = star_grammar();
        let out = eliminate_recursive(&g, "S", &cfg()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn recursion_loop_substitutes_lower_rounds() {
        // A1's δ points at an A2-edge; A2's production is terminal-δ'd.
        // The loop substitutes A2's rhs into A1's production.
        let mut lt = LabelTable::new();
        lt.insert("A1", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("A2", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("a", LabelKind::Terminal, 1).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod(
                    "q2",
                    "A2",
                    graph(
                        &["v"],
                        &[("e1", "A1", &["v"]), ("e2", "a", &["v"])],
                        &["v"],
                    ),
                    Some("e1"),
                ),
                prod(
                    "q1",
                    "A1",
                    graph(&["v"], &[("e1", "a", &["v"])], &["v"]),
                    Some("e1"),
                ),
            ],
            "A2",
        )
        .unwrap();
        let out = eliminate_recursion(&g, &cfg()).unwrap();
        for p in &out.productions {
            let mu = p.mu().unwrap();
            assert!(
                out.labels.is_terminal(mu),
                "after the loop, μ of `{}` should be terminal here",
                p.id
            );
        }
    }

    #[test]
    fn compose_final_composes_delta_chains() {
        let mut lt = LabelTable::new();
        lt.insert("A1", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("A2", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("a", LabelKind::Terminal, 1).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod(
                    "p1",
                    "A1",
                    graph(
                        &["v"],
                        &[("e1", "A2", &["v"]), ("e2", "a", &["v"])],
                        &["v"],
                    ),
                    Some("e1"),
                ),
                prod(
                    "p2",
                    "A2",
                    graph(&["v"], &[("e1", "a", &["v"])], &["v"]),
                    Some("e1"),
                ),
            ],
            "A1",
        )
        .unwrap();
        let out = compose_final(&g, &cfg()).unwrap();
        // A1 gets the composition; A2 keeps its terminal rule.
        assert_eq!(out.productions.len(), 2);
        for p in &out.productions {
            assert!(out.labels.is_terminal(p.mu().unwrap()));
            assert!(p
                .rhs
                .edges()
                .any(|(_, e)| out.labels.is_terminal(&e.label)));
        }
        let composed = out.productions_for("A1").next().unwrap();
        assert_eq!(composed.rhs.esize(), 2); // a-edge from p1, a-edge from p2
    }

    #[test]
    fn compose_final_rejects_mu_cycle() {
        let mut lt = LabelTable::new();
        lt.insert("A1", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("A2", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("a", LabelKind::Terminal, 1).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod(
                    "p1",
                    "A1",
                    graph(
                        &["v"],
                        &[("e1", "A2", &["v"]), ("e2", "a", &["v"])],
                        &["v"],
                    ),
                    Some("e1"),
                ),
                prod(
                    "p2",
                    "A2",
                    graph(
                        &["v"],
                        &[("e1", "A1", &["v"]), ("e2", "a", &["v"])],
                        &["v"],
                    ),
                    Some("e1"),
                ),
            ],
            "A1",
        )
        .unwrap();
        assert!(matches!(
            compose_final(&g, &cfg()),
            Err(NormalizeError::Internal(_))
        ));
    }

    #[test]
    fn split_relabels_surplus_terminals() {
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("a", LabelKind::Terminal, 1).unwrap();
        lt.insert("b", LabelKind::Terminal, 0).unwrap();
        let g = Grammar::new(
            lt,
            vec![prod(
                "p1",
                "S",
                graph(
                    &["v"],
                    &[
                        ("e1", "a", &["v"]),
                        ("e2", "a", &["v"]),
                        ("e3", "b", &[]),
                    ],
                    &["v"],
                ),
                Some("e1"),
            )],
            "S",
        )
        .unwrap();
        let out = split_terminals(&g).unwrap();
        // T_a and T_b registered with their rules.
        assert!(out.labels.is_nonterminal("T_a"));
        assert!(out.labels.is_nonterminal("T_b"));
        assert_eq!(out.productions.len(), 3);
        let main = out.production("p1").unwrap();
        let labels: BTreeSet<&str> = main
            .rhs
            .edges()
            .map(|(_, e)| e.label.as_str())
            .collect();
        assert_eq!(labels, BTreeSet::from(["a", "T_a", "T_b"]));
        // Every production now has exactly one terminal edge.
        for p in &out.productions {
            let terminal = p
                .rhs
                .edges()
                .filter(|(_, e)| out.labels.is_terminal(&e.label))
                .count();
            assert_eq!(terminal, 1);
        }
    }

    #[test]
    fn split_noop_for_single_terminal_rules() {
        let g = star_grammar();
        let out = split_terminals(&g).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn housekeep_drops_isomorphic_duplicates() {
        let mut g = star_grammar();
        // Duplicate p2 under different identifiers.
        let mut dup = g.productions[1].clone();
        dup.id = "p3".into();
        let rhs = graph(&["w9"], &[("zz", "a", &["w9"])], &["w9"]);
        dup.rhs = rhs;
        dup.delta = Some("zz".into());
        g.productions.push(dup);
        let (out, warnings) = housekeep(&g, &cfg()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(out.productions.len(), 2);
    }

    #[test]
    fn housekeep_distinguishes_delta_position() {
        // Same rhs shape, δ on a different edge: both productions stay.
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 1).unwrap();
        lt.insert("a", LabelKind::Terminal, 1).unwrap();
        let g = Grammar::new(
            lt,
            vec![
                prod(
                    "p1",
                    "S",
                    graph(
                        &["v"],
                        &[("e1", "a", &["v"]), ("e2", "a", &["v"])],
                        &["v"],
                    ),
                    Some("e1"),
                ),
                prod(
                    "p2",
                    "S",
                    graph(
                        &["v"],
                        &[("e1", "a", &["v"]), ("e2", "a", &["v"])],
                        &["v"],
                    ),
                    Some("e2"),
                ),
            ],
            "S",
        )
        .unwrap();
        // δ marks the same canonical position (the two a-edges are
        // interchangeable), so these two ARE isomorphic including δ.
        let (out, _) = housekeep(&g, &cfg()).unwrap();
        assert_eq!(out.productions.len(), 1);
    }

    #[test]
    fn normalize_star_grammar_is_wgnf_noop() {
        let g = star_grammar();
        let (out, report) = normalize(&g, &cfg()).unwrap();
        assert_eq!(out.productions.len(), 2);
        assert_eq!(report.stages.len(), 7);
        for p in &out.productions {
            let terminal = p
                .rhs
                .edges()
                .filter(|(_, e)| out.labels.is_terminal(&e.label))
                .count();
            assert_eq!(terminal, 1);
        }
    }

    #[test]
    fn normalize_pump_grammar_rejected_at_chain() {
        let g = pump_grammar();
        let err = normalize(&g, &cfg()).unwrap_err();
        assert!(matches!(
            err,
            NormalizeError::NotIsolatedNodeBounded { ref stage, .. } if stage == "chain"
        ));
    }

    #[test]
    fn normalize_rejects_oversized_arity() {
        let mut lt = LabelTable::new();
        lt.insert("S", LabelKind::Nonterminal, 5).unwrap();
        lt.insert("a", LabelKind::Terminal, 5).unwrap();
        let nodes: Vec<String> = (0..5).map(|i| format!("v{i}")).collect();
        let nodes_ref: Vec<&str> = nodes.iter().map(|s| s.as_str()).collect();
        let g = Grammar::new(
            lt,
            vec![prod(
                "p1",
                "S",
                graph(&nodes_ref, &[("e1", "a", &nodes_ref)], &nodes_ref),
                Some("e1"),
            )],
            "S",
        )
        .unwrap();
        assert!(matches!(
            normalize(&g, &cfg()),
            Err(NormalizeError::CapExceeded { .. })
        ));
    }

    #[test]
    fn pipeline_trace_stage_names() {
        let g = star_grammar();
        let (trace, report) = pipeline_trace(&g, PipelineStage::Wgnf, &cfg()).unwrap();
        let names: Vec<&str> = trace.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            ["useless", "edgeless", "chain", "useless", "norec", "compose", "split"]
        );
        assert_eq!(report.stages.len(), 7);
        let (trace, _) = pipeline_trace(&g, PipelineStage::Chain, &cfg()).unwrap();
        assert_eq!(trace.len(), 3);
    }
}
