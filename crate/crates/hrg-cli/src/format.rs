//! The `.hrg` grammar file format: a small text syntax for hyperedge
//! replacement grammars, with a parser and a deterministic serializer.
//!
//! ```text
//! # Line comments start with `#`.
//! grammar star
//!
//! labels {
//!   S: nonterminal/1;
//!   a: terminal/1;
//! }
//! start S;
//!
//! prod p1: S -> {
//!   nodes v0;
//!   ext v0;
//!   edge e1: S(v0);
//!   edge e2: a(v0);
//! } delta e2;
//! ```
//!
//! A production's right-hand side lists its nodes, its external sequence
//! (`ext;` when empty; the `nodes` statement may be omitted when the node
//! set is empty), and its edges with ordered attachment lists. An explicit
//! `delta` clause designates the δ-edge; without one the parser applies
//! [`default_delta`], which prefers the first terminal edge. Keywords are
//! contextual, so `nodes`, `ext`, and friends remain usable as ordinary
//! identifiers.
//!
//! [`serialize_grammar`] inverts the parser: `parse` of a serialized
//! grammar reproduces it structurally, including production order and the
//! external sequences. Identifiers may contain `-` and `'` after the first
//! character (the generated complex-nonterminal names use `-`), with one
//! lexical restriction: a `-` must be followed by another identifier
//! character, so `->` always reads as an arrow.

use std::collections::BTreeMap;
use std::fmt;

use hrg_core::grammar::{default_delta, Grammar, Production};
use hrg_core::hypergraph::{Edge, Hypergraph, LabelKind, LabelTable};
use thiserror::Error;

/// A source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Why a `.hrg` text was rejected.
///
/// Syntax errors are lexical or structural; semantic errors violate a
/// grammar invariant (unknown labels, arity mismatches, duplicate ids).
/// Both carry the position of the offending token.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{pos}: syntax error: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("{pos}: {msg}")]
    Semantic { pos: Pos, msg: String },
}

impl ParseError {
    fn syntax(pos: Pos, msg: impl Into<String>) -> Self {
        ParseError::Syntax {
            pos,
            msg: msg.into(),
        }
    }

    fn semantic(pos: Pos, msg: impl Into<String>) -> Self {
        ParseError::Semantic {
            pos,
            msg: msg.into(),
        }
    }
}

/// A parsed grammar file: the grammar, its declared name, and the source
/// position of each production for diagnostics.
#[derive(Debug, Clone)]
pub struct GrammarFile {
    pub name: String,
    pub grammar: Grammar,
    /// Production id → position of its `prod` keyword.
    pub spans: BTreeMap<String, Pos>,
}

/// Parses a `.hrg` text into a grammar, discarding the file metadata.
pub fn parse_grammar(text: &str) -> Result<Grammar, ParseError> {
    parse_file(text).map(|f| f.grammar)
}

/// Parses a `.hrg` text.
pub fn parse_file(text: &str) -> Result<GrammarFile, ParseError> {
    Parser::new(lex(text)?).file()
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(usize),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Colon,
    Semi,
    Comma,
    Slash,
    Arrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Eof => f.write_str("end of file"),
        }
    }
}

fn ident_head(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn ident_tail(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '\'')
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        let advance = |i: &mut usize, line: &mut usize, col: &mut usize| {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col);
            }
            continue;
        }
        if ident_head(c) {
            let mut s = String::new();
            while i < chars.len() {
                let c = chars[i];
                // A `-` continues the identifier only when another
                // identifier character follows; `S->` splits into `S`, `->`.
                let continues = ident_tail(c)
                    || (c == '-' && chars.get(i + 1).copied().is_some_and(ident_tail));
                if s.is_empty() || continues {
                    s.push(c);
                    advance(&mut i, &mut line, &mut col);
                } else {
                    break;
                }
            }
            toks.push((Tok::Ident(s), pos));
            continue;
        }
        if c.is_ascii_digit() {
            let mut n: usize = 0;
            while i < chars.len() && chars[i].is_ascii_digit() {
                n = n
                    .checked_mul(10)
                    .and_then(|n| n.checked_add(chars[i] as usize - '0' as usize))
                    .ok_or_else(|| ParseError::syntax(pos, "number is too large"))?;
                advance(&mut i, &mut line, &mut col);
            }
            toks.push((Tok::Int(n), pos));
            continue;
        }
        if c == '-' {
            if chars.get(i + 1) == Some(&'>') {
                advance(&mut i, &mut line, &mut col);
                advance(&mut i, &mut line, &mut col);
                toks.push((Tok::Arrow, pos));
                continue;
            }
            return Err(ParseError::syntax(pos, "expected `->` after `-`"));
        }
        let tok = match c {
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ':' => Tok::Colon,
            ';' => Tok::Semi,
            ',' => Tok::Comma,
            '/' => Tok::Slash,
            _ => {
                return Err(ParseError::syntax(
                    pos,
                    format!("unexpected character `{c}`"),
                ))
            }
        };
        advance(&mut i, &mut line, &mut col);
        toks.push((tok, pos));
    }
    let end = Pos { line, col };
    toks.push((Tok::Eof, end));
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
}

impl Parser {
    fn new(toks: Vec<(Tok, Pos)>) -> Self {
        Parser { toks, i: 0 }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn expect(&mut self, want: &Tok) -> Result<Pos, ParseError> {
        let (tok, pos) = self.bump();
        if &tok == want {
            Ok(pos)
        } else {
            Err(ParseError::syntax(
                pos,
                format!("expected {want}, found {tok}"),
            ))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Ident(s) => Ok((s, pos)),
            other => Err(ParseError::syntax(
                pos,
                format!("expected {what}, found {other}"),
            )),
        }
    }

    /// Consumes the identifier `kw` or reports what was expected.
    fn keyword(&mut self, kw: &str) -> Result<Pos, ParseError> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Ident(s) if s == kw => Ok(pos),
            other => Err(ParseError::syntax(
                pos,
                format!("expected `{kw}`, found {other}"),
            )),
        }
    }

    /// True (and consumed) when the next token is the identifier `kw`.
    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    /// Comma-separated identifiers, possibly empty, ending before `end`.
    fn ident_list(&mut self, end: &Tok) -> Result<Vec<(String, Pos)>, ParseError> {
        let mut items = Vec::new();
        if self.peek() == end {
            return Ok(items);
        }
        loop {
            items.push(self.ident("an identifier")?);
            if self.peek() == &Tok::Comma {
                self.bump();
            } else {
                return Ok(items);
            }
        }
    }

    fn file(&mut self) -> Result<GrammarFile, ParseError> {
        self.keyword("grammar")?;
        let (name, _) = self.ident("a grammar name")?;

        self.keyword("labels")?;
        self.expect(&Tok::LBrace)?;
        let mut labels = LabelTable::new();
        while self.peek() != &Tok::RBrace {
            let (label, label_pos) = self.ident("a label name")?;
            self.expect(&Tok::Colon)?;
            let (kind_name, kind_pos) = self.ident("`terminal` or `nonterminal`")?;
            let kind = match kind_name.as_str() {
                "terminal" => LabelKind::Terminal,
                "nonterminal" => LabelKind::Nonterminal,
                other => {
                    return Err(ParseError::syntax(
                        kind_pos,
                        format!("expected `terminal` or `nonterminal`, found `{other}`"),
                    ))
                }
            };
            self.expect(&Tok::Slash)?;
            let arity = match self.bump() {
                (Tok::Int(n), _) => n,
                (other, pos) => {
                    return Err(ParseError::syntax(
                        pos,
                        format!("expected an arity, found {other}"),
                    ))
                }
            };
            self.expect(&Tok::Semi)?;
            labels
                .insert(&label, kind, arity)
                .map_err(|e| ParseError::semantic(label_pos, e.to_string()))?;
        }
        self.expect(&Tok::RBrace)?;

        self.keyword("start")?;
        let (start, start_pos) = self.ident("a start symbol")?;
        self.expect(&Tok::Semi)?;
        if !labels.is_nonterminal(&start) {
            return Err(ParseError::semantic(
                start_pos,
                format!("start symbol `{start}` is not a registered nonterminal"),
            ));
        }

        let mut productions = Vec::new();
        let mut spans = BTreeMap::new();
        while self.peek() != &Tok::Eof {
            let (p, pos) = self.production(&labels)?;
            if spans.contains_key(&p.id) {
                return Err(ParseError::semantic(
                    pos,
                    format!("production id `{}` is not unique", p.id),
                ));
            }
            spans.insert(p.id.clone(), pos);
            productions.push(p);
        }

        let grammar = Grammar::new(labels, productions, &start)
            // Unreachable: every grammar invariant is checked above with a
            // position; this is a safety net for any future core check.
            .map_err(|e| ParseError::semantic(Pos { line: 1, col: 1 }, e.to_string()))?;
        Ok(GrammarFile {
            name,
            grammar,
            spans,
        })
    }

    fn production(&mut self, labels: &LabelTable) -> Result<(Production, Pos), ParseError> {
        let prod_pos = self.keyword("prod")?;
        let (id, _) = self.ident("a production id")?;
        self.expect(&Tok::Colon)?;
        let (lhs, lhs_pos) = self.ident("a left-hand-side nonterminal")?;
        if !labels.is_nonterminal(&lhs) {
            return Err(ParseError::semantic(
                lhs_pos,
                format!("left-hand side `{lhs}` is not a registered nonterminal"),
            ));
        }
        self.expect(&Tok::Arrow)?;
        self.expect(&Tok::LBrace)?;

        let mut nodes: Vec<String> = Vec::new();
        let mut seen_nodes = false;
        let mut ext: Vec<(String, Pos)> = Vec::new();
        let mut seen_ext = false;
        let mut edges: Vec<(String, Edge, Pos)> = Vec::new();
        loop {
            match self.peek() {
                Tok::RBrace => break,
                Tok::Ident(s) if s == "nodes" => {
                    let pos = self.bump().1;
                    if seen_nodes {
                        return Err(ParseError::syntax(pos, "duplicate `nodes` statement"));
                    }
                    seen_nodes = true;
                    for (node, node_pos) in self.ident_list(&Tok::Semi)? {
                        if nodes.contains(&node) {
                            return Err(ParseError::semantic(
                                node_pos,
                                format!("node `{node}` is declared twice"),
                            ));
                        }
                        nodes.push(node);
                    }
                    self.expect(&Tok::Semi)?;
                }
                Tok::Ident(s) if s == "ext" => {
                    let pos = self.bump().1;
                    if seen_ext {
                        return Err(ParseError::syntax(pos, "duplicate `ext` statement"));
                    }
                    seen_ext = true;
                    ext = self.ident_list(&Tok::Semi)?;
                    self.expect(&Tok::Semi)?;
                }
                Tok::Ident(s) if s == "edge" => {
                    self.bump();
                    let (edge_id, edge_pos) = self.ident("an edge id")?;
                    if edges.iter().any(|(id, _, _)| id == &edge_id) {
                        return Err(ParseError::semantic(
                            edge_pos,
                            format!("edge id `{edge_id}` is not unique"),
                        ));
                    }
                    self.expect(&Tok::Colon)?;
                    let (label, label_pos) = self.ident("an edge label")?;
                    self.expect(&Tok::LParen)?;
                    let att = self.ident_list(&Tok::RParen)?;
                    self.expect(&Tok::RParen)?;
                    self.expect(&Tok::Semi)?;
                    let Some(arity) = labels.arity(&label) else {
                        return Err(ParseError::semantic(
                            label_pos,
                            format!("edge `{edge_id}` has unregistered label `{label}`"),
                        ));
                    };
                    if att.len() != arity {
                        return Err(ParseError::semantic(
                            label_pos,
                            format!(
                                "edge `{edge_id}`: label `{label}` has arity {arity} \
                                 but {} nodes are attached",
                                att.len()
                            ),
                        ));
                    }
                    for (k, (node, node_pos)) in att.iter().enumerate() {
                        if att[..k].iter().any(|(other, _)| other == node) {
                            return Err(ParseError::semantic(
                                *node_pos,
                                format!("edge `{edge_id}` attaches node `{node}` more than once"),
                            ));
                        }
                    }
                    let edge = Edge {
                        label,
                        att: att.into_iter().map(|(n, _)| n).collect(),
                    };
                    edges.push((edge_id, edge, edge_pos));
                }
                _ => {
                    let (tok, pos) = self.bump();
                    return Err(ParseError::syntax(
                        pos,
                        format!("expected `nodes`, `ext`, `edge`, or `}}`, found {tok}"),
                    ));
                }
            }
        }
        self.expect(&Tok::RBrace)?;

        // Attachment and external sequences must stay inside the node set.
        for (edge_id, edge, edge_pos) in &edges {
            for node in &edge.att {
                if !nodes.contains(node) {
                    return Err(ParseError::semantic(
                        *edge_pos,
                        format!("edge `{edge_id}` attaches unknown node `{node}`"),
                    ));
                }
            }
        }
        for (k, (node, node_pos)) in ext.iter().enumerate() {
            if !nodes.contains(node) {
                return Err(ParseError::semantic(
                    *node_pos,
                    format!("external sequence references unknown node `{node}`"),
                ));
            }
            if ext[..k].iter().any(|(other, _)| other == node) {
                return Err(ParseError::semantic(
                    *node_pos,
                    format!("external sequence repeats node `{node}`"),
                ));
            }
        }
        let lhs_arity = labels.arity(&lhs).expect("checked nonterminal");
        if ext.len() != lhs_arity {
            return Err(ParseError::semantic(
                lhs_pos,
                format!(
                    "left-hand side arity {lhs_arity} differs from right-hand-side type {}",
                    ext.len()
                ),
            ));
        }

        let rhs = Hypergraph::new(
            nodes,
            edges
                .iter()
                .map(|(id, edge, _)| (id.clone(), edge.clone())),
            ext.into_iter().map(|(n, _)| n),
        );

        let delta = if self.eat_keyword("delta") {
            let (delta_id, delta_pos) = self.ident("a δ-edge id")?;
            if rhs.esize() == 0 {
                return Err(ParseError::semantic(
                    delta_pos,
                    "edgeless right-hand side cannot carry a δ-edge".to_string(),
                ));
            }
            if rhs.edge(&delta_id).is_none() {
                return Err(ParseError::semantic(
                    delta_pos,
                    format!("δ-edge `{delta_id}` is not in the right-hand side"),
                ));
            }
            Some(delta_id)
        } else {
            default_delta(&rhs, labels)
        };
        self.expect(&Tok::Semi)?;

        Ok((
            Production {
                id,
                lhs,
                rhs,
                delta,
            },
            prod_pos,
        ))
    }
}

// ---------------------------------------------------------------------------
// Serializer
// ---------------------------------------------------------------------------

/// Renders a hypergraph as a one-line sequence of right-hand-side
/// statements: `nodes …; ext …; edge …;`.
pub fn graph_literal(h: &Hypergraph) -> String {
    let mut parts = Vec::new();
    let nodes: Vec<&str> = h.nodes().collect();
    if !nodes.is_empty() {
        parts.push(format!("nodes {};", nodes.join(", ")));
    }
    if h.ext().is_empty() {
        parts.push("ext;".to_string());
    } else {
        parts.push(format!("ext {};", h.ext().join(", ")));
    }
    for (id, edge) in h.edges() {
        parts.push(format!("edge {id}: {}({});", edge.label, edge.att.join(", ")));
    }
    parts.join(" ")
}

/// Renders a grammar in the `.hrg` syntax.
///
/// The output is deterministic — label order follows the table, node and
/// edge statements are sorted by id, productions keep their order — and
/// parses back to a structurally equal grammar. The δ-edge is always
/// written explicitly.
pub fn serialize_grammar(name: &str, g: &Grammar) -> String {
    let mut out = String::new();
    out.push_str(&format!("grammar {name}\n\n"));
    out.push_str("labels {\n");
    for (label, kind, arity) in g.labels.iter() {
        out.push_str(&format!("  {label}: {kind}/{arity};\n"));
    }
    out.push_str("}\n");
    out.push_str(&format!("start {};\n", g.start));
    for p in &g.productions {
        out.push('\n');
        out.push_str(&format!("prod {}: {} -> {{\n", p.id, p.lhs));
        let nodes: Vec<&str> = p.rhs.nodes().collect();
        if !nodes.is_empty() {
            out.push_str(&format!("  nodes {};\n", nodes.join(", ")));
        }
        if p.rhs.ext().is_empty() {
            out.push_str("  ext;\n");
        } else {
            out.push_str(&format!("  ext {};\n", p.rhs.ext().join(", ")));
        }
        for (id, edge) in p.rhs.edges() {
            out.push_str(&format!(
                "  edge {id}: {}({});\n",
                edge.label,
                edge.att.join(", ")
            ));
        }
        match &p.delta {
            Some(d) => out.push_str(&format!("}} delta {d};\n")),
            None => out.push_str("};\n"),
        }
    }
    out
}
