//! Deterministic random grammars for stress testing.
//!
//! [`random_grammar`] builds a small, always-valid grammar from a seed.
//! The output deliberately includes degenerate shapes — useless symbols,
//! edgeless and chain productions, unbounded isolated-node pumps, empty
//! languages — because the pipeline must either normalize them or reject
//! them with the right error.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grammar::{Grammar, Production};
use crate::hypergraph::{Edge, Hypergraph, LabelKind, LabelTable};

/// Size limits for generated grammars.
#[derive(Debug, Clone)]
pub struct GenParams {
    pub max_nonterminals: usize,
    pub max_terminals: usize,
    pub max_arity: usize,
    pub max_productions: usize,
    pub max_rhs_edges: usize,
    pub max_rhs_nodes: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_nonterminals: 3,
            max_terminals: 2,
            max_arity: 2,
            max_productions: 3,
            max_rhs_edges: 3,
            max_rhs_nodes: 4,
        }
    }
}

/// Generates a valid grammar from `seed`; equal seeds and parameters
/// give equal grammars.
pub fn random_grammar(seed: u64, params: &GenParams) -> Grammar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = LabelTable::new();

    let nt_count = rng.gen_range(1..=params.max_nonterminals.max(1));
    let nonterminals: Vec<String> = (1..=nt_count).map(|i| format!("N{i}")).collect();
    for name in &nonterminals {
        labels
            .insert(name, LabelKind::Nonterminal, rng.gen_range(0..=params.max_arity))
            .expect("generated names are distinct and well-formed");
    }
    let t_count = rng.gen_range(1..=params.max_terminals.max(1));
    let terminals: Vec<String> = (0..t_count)
        .map(|i| ((b'a' + i as u8) as char).to_string())
        .collect();
    for name in &terminals {
        labels
            .insert(name, LabelKind::Terminal, rng.gen_range(0..=params.max_arity))
            .expect("generated names are distinct and well-formed");
    }
    let all_labels: Vec<String> = nonterminals
        .iter()
        .chain(terminals.iter())
        .cloned()
        .collect();

    let prod_count = rng.gen_range(1..=params.max_productions.max(1));
    let mut productions = Vec::with_capacity(prod_count);
    for pi in 0..prod_count {
        let lhs = nonterminals.choose(&mut rng).expect("nonempty").clone();
        let t = labels.arity(&lhs).expect("registered");

        let node_count = rng.gen_range(t..=params.max_rhs_nodes.max(t));
        let nodes: Vec<String> = (0..node_count).map(|i| format!("v{i}")).collect();
        let mut shuffled = nodes.clone();
        shuffled.shuffle(&mut rng);
        let ext: Vec<String> = shuffled[..t].to_vec();

        let edge_count = rng.gen_range(0..=params.max_rhs_edges);
        let mut edges: Vec<(String, Edge)> = Vec::new();
        for ei in 0..edge_count {
            // Only labels whose arity fits the node supply qualify.
            let candidates: Vec<&String> = all_labels
                .iter()
                .filter(|l| labels.arity(l).expect("registered") <= node_count)
                .collect();
            let Some(label) = candidates.choose(&mut rng) else {
                break;
            };
            let arity = labels.arity(label).expect("registered");
            let mut att_pool = nodes.clone();
            att_pool.shuffle(&mut rng);
            edges.push((
                format!("e{ei}"),
                Edge {
                    label: (*label).clone(),
                    att: att_pool[..arity].to_vec(),
                },
            ));
        }
        let delta = if edges.is_empty() {
            None
        } else {
            Some(edges[rng.gen_range(0..edges.len())].0.clone())
        };
        productions.push(Production {
            id: format!("p{pi}"),
            lhs,
            rhs: Hypergraph::new(nodes, edges, ext),
            delta,
        });
    }

    Grammar::new(labels, productions, "N1").expect("generated grammars are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_grammar() {
        let params = GenParams::default();
        assert_eq!(random_grammar(42, &params), random_grammar(42, &params));
    }

    #[test]
    fn different_seeds_vary() {
        let params = GenParams::default();
        let distinct = (0..20)
            .map(|s| random_grammar(s, &params))
            .collect::<Vec<_>>();
        assert!(distinct.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn many_seeds_validate() {
        // Grammar::new re-validates everything; the expect inside
        // random_grammar would panic on an invalid construction.
        let params = GenParams::default();
        for seed in 0..300 {
            let g = random_grammar(seed, &params);
            assert!(!g.productions.is_empty());
            assert!(g.labels.contains("N1"));
        }
    }

    #[test]
    fn exercises_degenerate_shapes() {
        let params = GenParams::default();
        let mut saw_edgeless = false;
        let mut saw_chain_shape = false;
        for seed in 0..200 {
            let g = random_grammar(seed, &params);
            for p in &g.productions {
                if p.rhs.esize() == 0 {
                    saw_edgeless = true;
                }
                if p.rhs.esize() == 1
                    && p.rhs
                        .edges()
                        .all(|(_, e)| g.labels.is_nonterminal(&e.label))
                {
                    saw_chain_shape = true;
                }
            }
        }
        assert!(saw_edgeless, "no edgeless rhs in 200 seeds");
        assert!(saw_chain_shape, "no chain production in 200 seeds");
    }
}
