#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use proptest::prelude::*;

use corefmrc::bias::CorefArray;
use corefmrc::rgcn::{build_graph, Relation, Topology};

/// Edge sets straight from the definitions: mentions are maximal runs of one
/// id; star links every token of a later mention with every token of the
/// cluster's first mention, clique links all same-cluster token pairs, and
/// every token is linked both ways with the global node.
fn expected_edges(ids: &[usize], topology: Topology) -> BTreeSet<(usize, usize, u8)> {
    let k = ids.len();
    let mut out = BTreeSet::new();
    let mut mentions: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..k {
        if ids[i] == 0 {
            continue;
        }
        match mentions.last_mut() {
            Some((id, toks)) if *id == ids[i] && *toks.last().unwrap() + 1 == i => toks.push(i),
            _ => mentions.push((ids[i], vec![i])),
        }
    }
    match topology {
        Topology::Star => {
            let mut first: Vec<Option<Vec<usize>>> = vec![None; k + 1];
            for (id, toks) in &mentions {
                match &first[*id] {
                    None => first[*id] = Some(toks.clone()),
                    Some(head) => {
                        for &a in toks {
                            for &b in head {
                                out.insert((a, b, 1));
                                out.insert((b, a, 1));
                            }
                        }
                    }
                }
            }
        }
        Topology::Clique => {
            for i in 0..k {
                for j in 0..k {
                    if i != j && ids[i] != 0 && ids[i] == ids[j] {
                        out.insert((i, j, 1));
                    }
                }
            }
        }
    }
    for i in 0..k {
        out.insert((i, k, 2));
        out.insert((k, i, 2));
    }
    out
}

fn array_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..4, 0..14).prop_map(|ids| CorefArray { ids }.compacted().ids)
}

proptest! {
    #[test]
    fn graph_matches_definition(ids in array_strategy(), clique in any::<bool>()) {
        let topology = if clique { Topology::Clique } else { Topology::Star };
        let g = build_graph(&CorefArray { ids: ids.clone() }, topology);
        let got: BTreeSet<(usize, usize, u8)> = g.edges.iter().map(|e| (e.src, e.dst, e.relation as u8)).collect();
        prop_assert_eq!(got.len(), g.edges.len());
        prop_assert_eq!(got, expected_edges(&ids, topology));
        prop_assert_eq!(g.node_count, ids.len() + 1);
        for (i, deg) in g.in_degree.iter().enumerate() {
            let c = g.edges.iter().filter(|e| e.dst == i && e.relation == Relation::Coreference).count();
            prop_assert_eq!(deg[0], c);
        }
    }

    #[test]
    fn normalized_adjacency_rows_are_stochastic_or_empty(ids in array_strategy()) {
        let g = build_graph(&CorefArray { ids }, Topology::Star);
        for r in [Relation::Coreference, Relation::Global] {
            let a = g.normalized_adjacency(r);
            for i in 0..g.node_count {
                let s: f64 = a.row(i).iter().sum();
                prop_assert!(s.abs() < 1e-12 || (s - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn no_clusters_leaves_only_global_edges() {
    let g = build_graph(&CorefArray::zeros(5), Topology::Star);
    assert_eq!(g.count(Relation::Coreference), 0);
    assert_eq!(g.count(Relation::Global), 10);
    assert_eq!(g.global_node(), 5);
}

#[test]
fn multi_token_mentions_link_every_token() {
    // Cluster 1: tokens 0-1 then token 4.
    let g = build_graph(
        &CorefArray {
            ids: vec![1, 1, 0, 0, 1],
        },
        Topology::Star,
    );
    let coref: BTreeSet<(usize, usize)> = g
        .edges
        .iter()
        .filter(|e| e.relation == Relation::Coreference)
        .map(|e| (e.src, e.dst))
        .collect();
    assert_eq!(coref, BTreeSet::from([(4, 0), (0, 4), (4, 1), (1, 4)]));
}
