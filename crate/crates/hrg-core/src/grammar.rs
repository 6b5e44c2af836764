//! Hyperedge replacement grammars and derivations.
//!
//! A [`Production`] rewrites an edge labeled with its left-hand-side
//! nonterminal by its right-hand-side hypergraph; one edge of the
//! right-hand side is designated as the production's δ-edge, the analogue
//! of the leftmost symbol in string grammars. A [`Grammar`] bundles a
//! label table, an ordered list of productions, and a start nonterminal.
//!
//! Derivations rewrite sentential forms via [`apply`]; a *δ-derivation*
//! additionally applies each production to the δ-edge image of the
//! previous step, which [`is_delta_derivation`] checks.

use std::collections::BTreeSet;

use crate::hypergraph::{handle, Hypergraph, HypergraphError, LabelKind, LabelTable};

/// Errors raised when building grammars or deriving with them.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarError {
    #[error("start symbol `{0}` is not a registered nonterminal")]
    BadStart(String),
    #[error("production `{0}`: left-hand side `{1}` is not a registered nonterminal")]
    BadLhs(String, String),
    #[error("production `{0}`: left-hand side arity {1} differs from right-hand-side type {2}")]
    LhsTypeMismatch(String, usize, usize),
    #[error("production `{0}`: δ-edge `{1}` is not in the right-hand side")]
    BadDelta(String, String),
    #[error("production `{0}`: right-hand side has edges but no δ-edge is designated")]
    MissingDelta(String),
    #[error("production `{0}`: edgeless right-hand side cannot carry a δ-edge")]
    DeltaOnEdgeless(String),
    #[error("production id `{0}` is not unique")]
    DuplicateProductionId(String),
    #[error("production `{0}`: invalid right-hand side: {1}")]
    InvalidRhs(String, String),
    #[error("unknown production `{0}`")]
    UnknownProduction(String),
    #[error("no production with id `{0}`; step list is malformed")]
    MalformedStep(String),
    #[error("form has no edge `{0}`")]
    UnknownEdge(String),
    #[error("edge `{edge}` is labeled `{actual}`, production `{production}` rewrites `{expected}`")]
    LabelMismatch {
        production: String,
        edge: String,
        expected: String,
        actual: String,
    },
    #[error("production `{0}` has an edgeless right-hand side and no δ-edge")]
    EdgelessMu(String),
    #[error(transparent)]
    Graph(#[from] HypergraphError),
}

/// One rewrite rule: `lhs → rhs`, with `delta` designating an edge of
/// `rhs` whenever `rhs` has edges (and absent otherwise).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Production {
    pub id: String,
    pub lhs: String,
    pub rhs: Hypergraph,
    pub delta: Option<String>,
}

impl Production {
    /// μ of the production: the label of its δ-edge.
    pub fn mu(&self) -> Result<&str, GrammarError> {
        let delta = self
            .delta
            .as_deref()
            .ok_or_else(|| GrammarError::EdgelessMu(self.id.clone()))?;
        Ok(&self
            .rhs
            .edge(delta)
            .expect("δ-edge must be in the right-hand side")
            .label)
    }

    /// Whether the production is recursive: its left-hand side equals μ.
    pub fn is_recursive(&self) -> bool {
        self.mu().is_ok_and(|mu| mu == self.lhs)
    }
}

/// A hyperedge replacement grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    pub labels: LabelTable,
    pub productions: Vec<Production>,
    pub start: String,
}

impl Grammar {
    /// Builds a grammar, checking every invariant: the start symbol is a
    /// nonterminal, production ids are unique, each right-hand side
    /// validates against the label table, each left-hand side is a
    /// nonterminal whose arity equals the right-hand side's type, and
    /// each δ-edge exists (exactly when the right-hand side has edges).
    pub fn new(
        labels: LabelTable,
        productions: Vec<Production>,
        start: &str,
    ) -> Result<Self, GrammarError> {
        if !labels.is_nonterminal(start) {
            return Err(GrammarError::BadStart(start.to_string()));
        }
        let mut ids = BTreeSet::new();
        for p in &productions {
            if !ids.insert(p.id.as_str()) {
                return Err(GrammarError::DuplicateProductionId(p.id.clone()));
            }
            if !labels.is_nonterminal(&p.lhs) {
                return Err(GrammarError::BadLhs(p.id.clone(), p.lhs.clone()));
            }
            let diags = p.rhs.validate(&labels);
            if let Some(d) = diags.first() {
                return Err(GrammarError::InvalidRhs(p.id.clone(), d.to_string()));
            }
            let lhs_arity = labels.arity(&p.lhs).expect("nonterminal checked above");
            if lhs_arity != p.rhs.graph_type() {
                return Err(GrammarError::LhsTypeMismatch(
                    p.id.clone(),
                    lhs_arity,
                    p.rhs.graph_type(),
                ));
            }
            match &p.delta {
                Some(d) if p.rhs.edge(d).is_none() => {
                    return Err(GrammarError::BadDelta(p.id.clone(), d.clone()));
                }
                Some(_) if p.rhs.esize() == 0 => {
                    return Err(GrammarError::DeltaOnEdgeless(p.id.clone()));
                }
                None if p.rhs.esize() > 0 => {
                    return Err(GrammarError::MissingDelta(p.id.clone()));
                }
                _ => {}
            }
        }
        Ok(Grammar {
            labels,
            productions,
            start: start.to_string(),
        })
    }

    pub fn production(&self, id: &str) -> Option<&Production> {
        self.productions.iter().find(|p| p.id == id)
    }

    /// Productions with the given left-hand side, in list order.
    pub fn productions_for<'a>(&'a self, lhs: &'a str) -> impl Iterator<Item = &'a Production> {
        self.productions.iter().filter(move |p| p.lhs == lhs)
    }

    /// The handle of the start symbol: the initial sentential form.
    pub fn start_handle(&self) -> Hypergraph {
        handle(&self.start, &self.labels).expect("start symbol is registered")
    }
}

/// A sentential form: a graph derived from some handle, optionally
/// remembering which production was applied to which edge.
#[derive(Debug, Clone)]
pub struct SententialForm {
    pub graph: Hypergraph,
    pub provenance: Option<Vec<(String, String)>>,
}

impl SententialForm {
    /// A form without provenance tracking (the default; cheapest).
    pub fn new(graph: Hypergraph) -> Self {
        SententialForm {
            graph,
            provenance: None,
        }
    }

    /// A form that records every `(production id, edge id)` applied.
    pub fn tracked(graph: Hypergraph) -> Self {
        SententialForm {
            graph,
            provenance: Some(Vec::new()),
        }
    }
}

/// Applies production `p` to edge `e` of the form: the edge must carry
/// the production's left-hand-side label.
pub fn apply(
    g: &Grammar,
    form: &SententialForm,
    e: &str,
    p: &str,
) -> Result<SententialForm, GrammarError> {
    let production = g
        .production(p)
        .ok_or_else(|| GrammarError::UnknownProduction(p.to_string()))?;
    let edge = form
        .graph
        .edge(e)
        .ok_or_else(|| GrammarError::UnknownEdge(e.to_string()))?;
    if edge.label != production.lhs {
        return Err(GrammarError::LabelMismatch {
            production: p.to_string(),
            edge: e.to_string(),
            expected: production.lhs.clone(),
            actual: edge.label.clone(),
        });
    }
    let graph = form.graph.replace(e, &production.rhs)?;
    let provenance = form.provenance.as_ref().map(|prov| {
        let mut prov = prov.clone();
        prov.push((p.to_string(), e.to_string()));
        prov
    });
    Ok(SententialForm { graph, provenance })
}

/// μ of a production by id.
pub fn mu<'a>(g: &'a Grammar, p: &str) -> Result<&'a str, GrammarError> {
    g.production(p)
        .ok_or_else(|| GrammarError::UnknownProduction(p.to_string()))?
        .mu()
}

/// Checks whether `steps` is a δ-derivation from the handle of `from`:
/// step 1 rewrites the handle's edge, and every later step rewrites the
/// image of the previous production's δ-edge. All rewritten edges except
/// possibly the last production's δ must be nonterminal-labeled (μ of
/// every non-final step is nonterminal).
///
/// Unknown production ids make the step list malformed (an error);
/// a step that targets a missing edge, the wrong edge, or an edge whose
/// label is not the production's left-hand side just means the steps are
/// not a δ-derivation (`false`).
pub fn is_delta_derivation(
    g: &Grammar,
    steps: &[(String, String)],
    from: &str,
) -> Result<bool, GrammarError> {
    if !g.labels.is_nonterminal(from) {
        return Err(GrammarError::BadStart(from.to_string()));
    }
    for (pid, _) in steps {
        if g.production(pid).is_none() {
            return Err(GrammarError::MalformedStep(pid.clone()));
        }
    }
    let mut graph = handle(from, &g.labels)?;
    // The handle's single edge is the first required target.
    let mut required: String = graph.edges().next().expect("handle has one edge").0.into();
    for (idx, (pid, target)) in steps.iter().enumerate() {
        let production = g.production(pid).expect("checked above");
        if *target != required {
            return Ok(false);
        }
        let edge = match graph.edge(target) {
            Some(e) => e,
            None => return Ok(false),
        };
        if edge.label != production.lhs {
            return Ok(false);
        }
        // Intermediate steps must continue from a nonterminal δ-edge.
        let last = idx + 1 == steps.len();
        match &production.delta {
            None => return Ok(false), // edgeless rhs: derivation cannot continue as a δ-chain
            Some(delta) => {
                let mu = &production.rhs.edge(delta).expect("validated").label;
                if !last && !g.labels.is_nonterminal(mu) {
                    return Ok(false);
                }
                let (next, map) = graph.replace_with_map(target, &production.rhs)?;
                required = map.edges[delta].clone();
                graph = next;
            }
        }
    }
    Ok(true)
}

/// The default δ choice for a right-hand side: the terminal edge with the
/// least id if any exists, otherwise the nonterminal edge with the least
/// id; `None` for an edgeless graph.
pub fn default_delta(rhs: &Hypergraph, lt: &LabelTable) -> Option<String> {
    let mut first_terminal = None;
    let mut first_any = None;
    for (id, edge) in rhs.edges() {
        if first_any.is_none() {
            first_any = Some(id);
        }
        if first_terminal.is_none() && lt.kind(&edge.label) == Some(LabelKind::Terminal) {
            first_terminal = Some(id);
        }
    }
    first_terminal.or(first_any).map(|s| s.to_string())
}
