//! Coreference graph construction and a relational GCN with basis-decomposed
//! relation weights.
//!
//! Nodes are the `k` subwords plus one global node at index `k`. Relation 1
//! links coreferent subwords; relation 2 links every subword to the global
//! node in both directions. A node's own state enters only through the
//! self weight `W_0`, so the edge list carries no self-loops.
//!
//! One layer computes, for node `i`,
//!
//! ```text
//! h_i' = relu( W_0 h_i + Σ_r Σ_{j ∈ N_i^r} (1 / c_{i,r}) W_r h_j ),   W_r = Σ_b a_{rb} V_b
//! ```
//!
//! with `c_{i,r} = |N_i^r|` and empty neighbor sets contributing nothing.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bias::CorefArray;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const RELATION_COUNT: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Relation {
    Coreference = 1,
    Global = 2,
}

impl Relation {
    pub fn index(self) -> usize {
        self as usize - 1
    }
}

impl From<Relation> for u8 {
    fn from(r: Relation) -> u8 {
        r as u8
    }
}

impl TryFrom<u8> for Relation {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Relation::Coreference),
            2 => Ok(Relation::Global),
            _ => Err(format!("unknown relation {v}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
}

/// Intra-cluster wiring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Later mentions link to the cluster's first mention only.
    #[default]
    Star,
    /// Every same-cluster pair is linked.
    Clique,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefGraph {
    pub node_count: usize,
    pub edges: Vec<Edge>,
    /// `in_degree[i][r]` = number of relation-`r` edges ending at node `i`.
    pub in_degree: Vec<[usize; RELATION_COUNT]>,
}

impl CorefGraph {
    /// Validates and indexes an explicit edge list.
    pub fn from_edges(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut in_degree = vec![[0; RELATION_COUNT]; node_count];
        for e in &edges {
            if e.src >= node_count || e.dst >= node_count {
                return Err(Error::Validation(format!(
                    "edge {}->{} outside {node_count} nodes",
                    e.src, e.dst
                )));
            }
            if e.src == e.dst {
                return Err(Error::Validation(format!("self-edge on node {}", e.src)));
            }
            if !seen.insert(*e) {
                return Err(Error::Validation(format!(
                    "duplicate edge {}->{}",
                    e.src, e.dst
                )));
            }
            in_degree[e.dst][e.relation.index()] += 1;
        }
        Ok(Self {
            node_count,
            edges,
            in_degree,
        })
    }

    pub fn global_node(&self) -> usize {
        self.node_count - 1
    }

    pub fn count(&self, relation: Relation) -> usize {
        self.edges.iter().filter(|e| e.relation == relation).count()
    }

    /// Row-normalized adjacency for one relation: entry `(i, j)` is
    /// `1 / c_{i,r}` when `j → i` is an edge of that relation.
    pub fn normalized_adjacency(&self, relation: Relation) -> Tensor {
        let n = self.node_count;
        let mut a = Tensor::zeros(&[n, n]);
        let r = relation.index();
        for e in self.edges.iter().filter(|e| e.relation == relation) {
            a.data[e.dst * n + e.src] = 1.0 / self.in_degree[e.dst][r] as f64;
        }
        a
    }
}

/// Maximal runs of equal nonzero ids, grouped by cluster id (index `id - 1`).
fn mention_runs(a: &CorefArray) -> Vec<Vec<Vec<usize>>> {
    let mut runs: Vec<Vec<Vec<usize>>> = vec![Vec::new(); a.cluster_count()];
    let mut i = 0;
    while i < a.len() {
        let id = a.ids[i];
        let start = i;
        while i < a.len() && a.ids[i] == id {
            i += 1;
        }
        if id != 0 {
            runs[id - 1].push((start..i).collect());
        }
    }
    runs
}

pub fn build_graph(a: &CorefArray, topology: Topology) -> CorefGraph {
    let k = a.len();
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |edges: &mut Vec<Edge>, src: usize, dst: usize, relation: Relation| {
        let e = Edge { src, dst, relation };
        if src != dst && seen.insert(e) {
            edges.push(e);
        }
    };
    match topology {
        Topology::Star => {
            for runs in mention_runs(a) {
                let Some((first, rest)) = runs.split_first() else {
                    continue;
                };
                for later in rest {
                    for &s in later {
                        for &t in first {
                            push(&mut edges, s, t, Relation::Coreference);
                            push(&mut edges, t, s, Relation::Coreference);
                        }
                    }
                }
            }
        }
        Topology::Clique => {
            for i in 0..k {
                for j in 0..k {
                    if i != j && a.ids[i] != 0 && a.ids[i] == a.ids[j] {
                        push(&mut edges, i, j, Relation::Coreference);
                    }
                }
            }
        }
    }
    for i in 0..k {
        push(&mut edges, i, k, Relation::Global);
        push(&mut edges, k, i, Relation::Global);
    }
    CorefGraph::from_edges(k + 1, edges).expect("constructed edges are valid")
}

#[derive(Clone, Debug)]
pub struct RgcnLayerParams {
    pub self_weight: ParamId,
    pub bases: Vec<ParamId>,
    /// `[relations × bases]` coefficients `a_rb`.
    pub coeffs: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

#[derive(Clone, Debug)]
pub struct RgcnParams {
    pub layers: Vec<RgcnLayerParams>,
}

impl RgcnParams {
    /// `widths` lists node widths from input to output, so `widths.len() - 1` layers.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        basis_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || basis_count == 0 {
            return Err(Error::Config(format!(
                "rgcn needs at least one layer and one basis (widths {widths:?}, bases {basis_count})"
            )));
        }
        let mut layers = Vec::new();
        for (l, w) in widths.windows(2).enumerate() {
            let (din, dout) = (w[0], w[1]);
            let self_weight =
                store.uniform(format!("{prefix}.layer{l}.w_self"), &[din, dout], rng)?;
            let mut bases = Vec::with_capacity(basis_count);
            for b in 0..basis_count {
                bases.push(store.uniform(
                    format!("{prefix}.layer{l}.basis{b}"),
                    &[din, dout],
                    rng,
                )?);
            }
            let coeffs = store.uniform(
                format!("{prefix}.layer{l}.coeffs"),
                &[RELATION_COUNT, basis_count],
                rng,
            )?;
            layers.push(RgcnLayerParams {
                self_weight,
                bases,
                coeffs,
                in_width: din,
                out_width: dout,
            });
        }
        Ok(Self { layers })
    }
}

/// Normalized adjacency matrices recorded once per graph and reused by every layer.
#[derive(Clone, Debug)]
pub struct GraphVars {
    pub node_count: usize,
    adjacency: Vec<Option<Var>>,
}

impl GraphVars {
    pub fn record(tape: &mut Tape, g: &CorefGraph) -> Self {
        let adjacency = [Relation::Coreference, Relation::Global]
            .into_iter()
            .map(|r| (g.count(r) > 0).then(|| tape.constant(g.normalized_adjacency(r))))
            .collect();
        Self {
            node_count: g.node_count,
            adjacency,
        }
    }
}

pub fn rgcn_layer(
    tape: &mut Tape,
    bound: &Bound,
    graph: &GraphVars,
    h: Var,
    p: &RgcnLayerParams,
) -> Result<Var> {
    let shape = tape.shape(h).to_vec();
    if shape.len() != 2 || shape[0] != graph.node_count || shape[1] != p.in_width {
        return Err(Error::shape(
            "rgcn_layer",
            &shape,
            &[graph.node_count, p.in_width],
        ));
    }
    let bases: Vec<Var> = p.bases.iter().map(|&b| bound.var(b)).collect();
    let mut acc = tape.matmul(h, bound.var(p.self_weight))?;
    for (r, adj) in graph.adjacency.iter().enumerate() {
        let Some(adj) = *adj else { continue };
        let w_r = tape.basis_combine(bound.var(p.coeffs), r, &bases)?;
        let agg = tape.matmul(adj, h)?;
        let msg = tape.matmul(agg, w_r)?;
        acc = tape.add(acc, msg)?;
    }
    Ok(tape.relu(acc))
}

/// Runs every layer over node features `h` (`node_count` rows).
pub fn rgcn_forward(
    tape: &mut Tape,
    bound: &Bound,
    graph: &CorefGraph,
    h: Var,
    p: &RgcnParams,
) -> Result<Var> {
    let gv = GraphVars::record(tape, graph);
    let mut x = h;
    for layer in &p.layers {
        x = rgcn_layer(tape, bound, &gv, x, layer)?;
    }
    Ok(x)
}

#[derive(Clone, Debug)]
pub struct FuseParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub lm_width: usize,
    pub gnn_width: usize,
}

impl FuseParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        lm_width: usize,
        gnn_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.uniform(
                format!("{prefix}.w"),
                &[lm_width + gnn_width, lm_width],
                rng,
            )?,
            bias: store.zeros(format!("{prefix}.b"), &[lm_width])?,
            lm_width,
            gnn_width,
        })
    }
}

/// `[E_lm ‖ E_gnn] · W + b`, mapping back to the language-model width.
pub fn fuse(tape: &mut Tape, bound: &Bound, e_lm: Var, e_gnn: Var, p: &FuseParams) -> Result<Var> {
    let (sl, sg) = (tape.shape(e_lm).to_vec(), tape.shape(e_gnn).to_vec());
    if sl.len() != 2
        || sg.len() != 2
        || sl[0] != sg[0]
        || sl[1] != p.lm_width
        || sg[1] != p.gnn_width
    {
        return Err(Error::shape("fuse", &sl, &sg));
    }
    let cat = tape.concat_cols(&[e_lm, e_gnn])?;
    tape.linear(cat, bound.var(p.weight), bound.var(p.bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge_pairs(g: &CorefGraph, r: Relation) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = g
            .edges
            .iter()
            .filter(|e| e.relation == r)
            .map(|e| (e.src, e.dst))
            .collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn no_clusters_only_global_edges() {
        let g = build_graph(&CorefArray::zeros(3), Topology::Star);
        assert_eq!(g.node_count, 4);
        assert_eq!(g.count(Relation::Global), 6);
        assert_eq!(g.count(Relation::Coreference), 0);
    }

    #[test]
    fn simple_pair() {
        let g = build_graph(&CorefArray { ids: vec![1, 0, 1] }, Topology::Star);
        assert_eq!(edge_pairs(&g, Relation::Coreference), vec![(0, 2), (2, 0)]);
        assert_eq!(g.count(Relation::Global), 6);
        assert_eq!(g.in_degree[3], [0, 3]);
    }

    #[test]
    fn star_links_later_mentions_to_first() {
        // Two-piece first mention, then two single-piece mentions.
        let g = build_graph(
            &CorefArray {
                ids: vec![1, 1, 0, 1, 0, 1],
            },
            Topology::Star,
        );
        assert_eq!(
            edge_pairs(&g, Relation::Coreference),
            vec![
                (0, 3),
                (0, 5),
                (1, 3),
                (1, 5),
                (3, 0),
                (3, 1),
                (5, 0),
                (5, 1)
            ]
        );
        let clique = build_graph(
            &CorefArray {
                ids: vec![1, 1, 0, 1, 0, 1],
            },
            Topology::Clique,
        );
        assert_eq!(clique.count(Relation::Coreference), 12);
    }

    #[test]
    fn relabeling_gives_identical_edges() {
        let a = build_graph(
            &CorefArray {
                ids: vec![1, 2, 0, 2, 1],
            },
            Topology::Star,
        );
        let b = build_graph(
            &CorefArray {
                ids: vec![2, 1, 0, 1, 2],
            },
            Topology::Star,
        );
        assert_eq!(
            edge_pairs(&a, Relation::Coreference),
            edge_pairs(&b, Relation::Coreference)
        );
    }

    #[test]
    fn from_edges_rejects_bad_lists() {
        let e = |src, dst| Edge {
            src,
            dst,
            relation: Relation::Coreference,
        };
        assert!(CorefGraph::from_edges(3, vec![e(0, 0)]).is_err());
        assert!(CorefGraph::from_edges(3, vec![e(0, 3)]).is_err());
        assert!(CorefGraph::from_edges(3, vec![e(0, 1), e(0, 1)]).is_err());
    }

    #[test]
    fn relation_serializes_as_integer() {
        let e = Edge {
            src: 0,
            dst: 1,
            relation: Relation::Global,
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"src":0,"dst":1,"relation":2}"#
        );
        assert!(serde_json::from_str::<Edge>(r#"{"src":0,"dst":1,"relation":3}"#).is_err());
    }

    #[test]
    fn isolated_node_keeps_self_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let p = RgcnParams::init(&mut store, "g", &[3, 2], 2, &mut rng).unwrap();
        let graph = CorefGraph::from_edges(2, vec![]).unwrap();
        let h = Tensor::from_rows(&[vec![0.3, -0.2, 0.9], vec![-1.0, 0.5, 0.1]]);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let hv = tape.constant(h.clone());
        let out = rgcn_forward(&mut tape, &bound, &graph, hv, &p).unwrap();
        let w0 = store.get(p.layers[0].self_weight);
        let mut expected = crate::tensor::matmul(&h, w0).unwrap();
        expected.data.iter_mut().for_each(|v| *v = v.max(0.0));
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn fuse_with_zero_graph_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let p = FuseParams::init(&mut store, "fuse", 3, 2, &mut rng).unwrap();
        let e = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, -0.5, 0.0]]);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let ev = tape.constant(e.clone());
        let gv = tape.constant(Tensor::zeros(&[2, 2]));
        let out = fuse(&mut tape, &bound, ev, gv, &p).unwrap();
        assert_eq!(tape.shape(out), [2, 3]);
        let w = store.get(p.weight);
        let top = Tensor::new(vec![3, 3], w.data[..9].to_vec()).unwrap();
        let expected = crate::tensor::matmul(&e, &top).unwrap();
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-15);

        let bad = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(fuse(&mut tape, &bound, ev, bad, &p).is_err());
    }
}
