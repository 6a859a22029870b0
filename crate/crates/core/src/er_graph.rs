//! The ER graph over retained pairs and its probabilistic variant.
//!
//! A vertex is a candidate pair `(u1, u2)`. There is an edge from `(u1, u2)`
//! to `(u1', u2')` labeled `(r1, r2)` whenever `(u1, r1, u1')` is a triple of
//! KB1 and `(u2, r2, u2')` a triple of KB2. Edges are directed; no reverse edge
//! is implied.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;

use crate::candidates::EntityPair;
use crate::kb::{EntityId, KnowledgeBase, RelId};
use crate::propagation::{neighbor_posteriors, ConsistencyTable, NeighborProblem, PropagationConfig};

pub type VertexId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
    pub r1: RelId,
    pub r2: RelId,
}

/// Outgoing edges of one vertex sharing a label, plus the sizes of the two
/// value sets the label induces in each KB.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGroup {
    pub r1: RelId,
    pub r2: RelId,
    pub n1: usize,
    pub n2: usize,
    pub members: Vec<VertexId>,
}

#[derive(Debug, Clone, Default)]
pub struct ErGraph {
    vertices: Vec<EntityPair>,
    index: HashMap<(EntityId, EntityId), VertexId>,
    /// Sorted by `(src, r1, r2, dst)`.
    edges: Vec<Edge>,
    out_offsets: Vec<usize>,
    in_degree: Vec<u32>,
    groups: Vec<NeighborGroup>,
    group_offsets: Vec<usize>,
}

impl ErGraph {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[EntityPair] {
        &self.vertices
    }

    pub fn vertex(&self, v: VertexId) -> &EntityPair {
        &self.vertices[v as usize]
    }

    pub fn find(&self, u1: EntityId, u2: EntityId) -> Option<VertexId> {
        self.index.get(&(u1, u2)).copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn out_edges(&self, v: VertexId) -> &[Edge] {
        let v = v as usize;
        &self.edges[self.out_offsets[v]..self.out_offsets[v + 1]]
    }

    /// No incoming or outgoing edge.
    pub fn is_isolated(&self, v: VertexId) -> bool {
        self.out_edges(v).is_empty() && self.in_degree[v as usize] == 0
    }

    /// Outgoing edges grouped by label, in label order.
    pub fn groups(&self, v: VertexId) -> &[NeighborGroup] {
        let v = v as usize;
        &self.groups[self.group_offsets[v]..self.group_offsets[v + 1]]
    }

    pub fn neighbor_groups(&self, v: VertexId) -> BTreeMap<(RelId, RelId), Vec<VertexId>> {
        self.groups(v)
            .iter()
            .map(|g| ((g.r1, g.r2), g.members.clone()))
            .collect()
    }

    /// The graph induced by all vertices except `removed`. Vertex ids are
    /// renumbered; pair identities are kept.
    pub fn remove_vertices(&self, removed: &[VertexId]) -> ErGraph {
        let mut drop = vec![false; self.vertices.len()];
        for &v in removed {
            drop[v as usize] = true;
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for (i, p) in self.vertices.iter().enumerate() {
            if !drop[i] {
                remap[i] = vertices.len() as u32;
                vertices.push(*p);
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| !drop[e.src as usize] && !drop[e.dst as usize])
            .map(|e| Edge {
                src: remap[e.src as usize],
                dst: remap[e.dst as usize],
                ..*e
            })
            .collect();
        let groups: Vec<Vec<NeighborGroup>> = (0..self.vertices.len())
            .filter(|&i| !drop[i])
            .map(|i| {
                self.groups(i as u32)
                    .iter()
                    .filter_map(|g| {
                        let members: Vec<VertexId> = g
                            .members
                            .iter()
                            .filter(|&&m| !drop[m as usize])
                            .map(|&m| remap[m as usize])
                            .collect();
                        (!members.is_empty()).then(|| NeighborGroup { members, ..g.clone() })
                    })
                    .collect()
            })
            .collect();
        Self::assemble(vertices, edges, groups)
    }

    fn assemble(vertices: Vec<EntityPair>, mut edges: Vec<Edge>, groups: Vec<Vec<NeighborGroup>>) -> ErGraph {
        edges.sort_unstable_by_key(|e| (e.src, e.r1, e.r2, e.dst));
        edges.dedup();
        let n = vertices.len();
        let mut out_offsets = vec![0usize; n + 1];
        let mut in_degree = vec![0u32; n];
        for e in &edges {
            out_offsets[e.src as usize + 1] += 1;
            in_degree[e.dst as usize] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
        }
        let mut group_offsets = Vec::with_capacity(n + 1);
        group_offsets.push(0);
        let mut flat = Vec::new();
        for g in groups {
            flat.extend(g);
            group_offsets.push(flat.len());
        }
        let index = vertices
            .iter()
            .enumerate()
            .map(|(i, p)| ((p.u1, p.u2), i as VertexId))
            .collect();
        ErGraph {
            vertices,
            index,
            edges,
            out_offsets,
            in_degree,
            groups: flat,
            group_offsets,
        }
    }

    /// `src_u1,src_u2<TAB>dst_u1,dst_u2<TAB>r1<TAB>r2<TAB>prob`, one line per
    /// labeled edge. `prob` is taken from `pg` when given, else left empty.
    pub fn write_tsv<W: Write>(
        &self,
        mut w: W,
        kb1: &KnowledgeBase,
        kb2: &KnowledgeBase,
        pg: Option<&ProbErGraph>,
    ) -> std::io::Result<()> {
        for e in &self.edges {
            let (s, d) = (self.vertex(e.src), self.vertex(e.dst));
            let prob = pg
                .and_then(|pg| pg.label_prob(e.src, e.r1, e.r2, e.dst))
                .map(|p| p.to_string())
                .unwrap_or_default();
            writeln!(
                w,
                "{},{}\t{},{}\t{}\t{}\t{}",
                kb1.entity_name(s.u1),
                kb2.entity_name(s.u2),
                kb1.entity_name(d.u1),
                kb2.entity_name(d.u2),
                kb1.relationship_name(e.r1),
                kb2.relationship_name(e.r2),
                prob
            )?;
        }
        Ok(())
    }
}

/// Joins the relationship triples of both KBs over the vertex set.
pub fn build_er_graph(vertices: &[EntityPair], kb1: &KnowledgeBase, kb2: &KnowledgeBase) -> ErGraph {
    let vertices = vertices.to_vec();
    let index: HashMap<(EntityId, EntityId), VertexId> = vertices
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.u1, p.u2), i as VertexId))
        .collect();

    let per_vertex: Vec<(Vec<Edge>, Vec<NeighborGroup>)> = vertices
        .par_iter()
        .enumerate()
        .map(|(v, p)| {
            let mut edges = Vec::new();
            let mut groups: BTreeMap<(RelId, RelId), Vec<VertexId>> = BTreeMap::new();
            for &(r1, t1) in kb1.out_edges(p.u1) {
                for &(r2, t2) in kb2.out_edges(p.u2) {
                    if let Some(&dst) = index.get(&(t1, t2)) {
                        edges.push(Edge {
                            src: v as VertexId,
                            dst,
                            r1,
                            r2,
                        });
                        groups.entry((r1, r2)).or_default().push(dst);
                    }
                }
            }
            let groups = groups
                .into_iter()
                .map(|((r1, r2), mut members)| {
                    members.sort_unstable();
                    members.dedup();
                    NeighborGroup {
                        r1,
                        r2,
                        n1: kb1.neighbors(p.u1, r1).len(),
                        n2: kb2.neighbors(p.u2, r2).len(),
                        members,
                    }
                })
                .collect();
            (edges, groups)
        })
        .collect();

    let mut edges = Vec::new();
    let mut groups = Vec::with_capacity(per_vertex.len());
    for (e, g) in per_vertex {
        edges.extend(e);
        groups.push(g);
    }
    ErGraph::assemble(vertices, edges, groups)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbEdge {
    pub src: VertexId,
    pub dst: VertexId,
    pub prob: f64,
    pub length: f64,
}

/// One edge per ordered vertex pair, weighted by the best conditional match
/// probability over its labels. Zero-probability edges are absent.
#[derive(Debug, Clone, Default)]
pub struct ProbErGraph {
    num_vertices: usize,
    /// Sorted by `(src, dst)`.
    edges: Vec<ProbEdge>,
    out_offsets: Vec<usize>,
    /// Per-label probabilities before collapsing, keyed by `(src, r1, r2, dst)`.
    label_probs: HashMap<(VertexId, RelId, RelId, VertexId), f64>,
}

impl ProbErGraph {
    /// Builds a graph directly from `(src, dst, prob)` triples. Parallel
    /// entries keep the maximum; zero probabilities are dropped.
    pub fn from_edges(num_vertices: usize, edges: impl IntoIterator<Item = (VertexId, VertexId, f64)>) -> Self {
        let mut best: BTreeMap<(VertexId, VertexId), f64> = BTreeMap::new();
        for (s, d, p) in edges {
            assert!((0.0..=1.0).contains(&p), "edge probability {p} out of range");
            assert!((s as usize) < num_vertices && (d as usize) < num_vertices);
            let e = best.entry((s, d)).or_insert(0.0);
            if p > *e {
                *e = p;
            }
        }
        let edges: Vec<ProbEdge> = best
            .into_iter()
            .filter(|&(_, p)| p > 0.0)
            .map(|((src, dst), prob)| ProbEdge {
                src,
                dst,
                prob,
                length: edge_length(prob),
            })
            .collect();
        let mut out_offsets = vec![0usize; num_vertices + 1];
        for e in &edges {
            out_offsets[e.src as usize + 1] += 1;
        }
        for i in 0..num_vertices {
            out_offsets[i + 1] += out_offsets[i];
        }
        ProbErGraph {
            num_vertices,
            edges,
            out_offsets,
            label_probs: HashMap::new(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn edges(&self) -> &[ProbEdge] {
        &self.edges
    }

    pub fn out_edges(&self, v: VertexId) -> &[ProbEdge] {
        let v = v as usize;
        &self.edges[self.out_offsets[v]..self.out_offsets[v + 1]]
    }

    pub fn edge(&self, src: VertexId, dst: VertexId) -> Option<&ProbEdge> {
        let out = self.out_edges(src);
        out.binary_search_by_key(&dst, |e| e.dst).ok().map(|i| &out[i])
    }

    /// Probability of one labeled edge before collapsing.
    pub fn label_prob(&self, src: VertexId, r1: RelId, r2: RelId, dst: VertexId) -> Option<f64> {
        self.label_probs.get(&(src, r1, r2, dst)).copied()
    }
}

/// `-ln p`, with `-0.0` normalized to `0.0`.
pub fn edge_length(p: f64) -> f64 {
    if p >= 1.0 {
        0.0
    } else {
        -p.ln()
    }
}

/// Source, relationship pair, target and probability.
type RawEdge = (VertexId, RelId, RelId, VertexId, f64);

/// Computes every edge probability as the neighbor posterior of its target
/// within the source's label group. `priors` holds the current match
/// probability of every vertex; a source with prior 0 is a known non-match
/// and keeps no outgoing edges.
pub fn to_probabilistic(
    g: &ErGraph,
    table: &ConsistencyTable,
    priors: &[f64],
    config: &PropagationConfig,
) -> ProbErGraph {
    assert_eq!(priors.len(), g.num_vertices());
    let per_vertex: Vec<Vec<RawEdge>> = (0..g.num_vertices() as VertexId)
        .into_par_iter()
        .map(|v| {
            if priors[v as usize] <= 0.0 {
                return Vec::new();
            }
            let mut out = Vec::new();
            for group in g.groups(v) {
                let (eps1, eps2) = table.get(group.r1, group.r2);
                let problem = NeighborProblem {
                    n1: group.n1,
                    n2: group.n2,
                    cand: group
                        .members
                        .iter()
                        .map(|&m| {
                            let p = g.vertex(m);
                            (p.u1, p.u2, priors[m as usize])
                        })
                        .collect(),
                };
                let post = neighbor_posteriors(&problem, eps1, eps2, config);
                for (&m, &prob) in group.members.iter().zip(&post) {
                    out.push((v, group.r1, group.r2, m, prob));
                }
            }
            out
        })
        .collect();

    let mut label_probs = HashMap::new();
    let mut collapsed = Vec::new();
    for (s, r1, r2, d, p) in per_vertex.into_iter().flatten() {
        label_probs.insert((s, r1, r2, d), p);
        collapsed.push((s, d, p));
    }
    let mut pg = ProbErGraph::from_edges(g.num_vertices(), collapsed);
    pg.label_probs = label_probs;
    pg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::KbBuilder;
    use std::collections::BTreeSet;

    fn fig1() -> (KnowledgeBase, KnowledgeBase) {
        let mut b1 = KbBuilder::new();
        b1.add_relationship("y:Tim", "directed", "y:Cradle");
        b1.add_relationship("y:Tim", "directed", "y:Player");
        let mut b2 = KbBuilder::new();
        b2.add_relationship("d:Tim", "directed", "d:Cradle");
        b2.add_relationship("d:Tim", "directed", "d:Player");
        (b1.build(), b2.build())
    }

    fn pair(kb1: &KnowledgeBase, kb2: &KnowledgeBase, a: &str, b: &str) -> EntityPair {
        EntityPair {
            u1: kb1.entity(a).unwrap(),
            u2: kb2.entity(b).unwrap(),
            prior: 0.5,
        }
    }

    #[test]
    fn edgeless_graph_keeps_isolated_vertices() {
        let mut b = KbBuilder::new();
        b.add_attribute("a", "x", crate::TypedLiteral::string("a"));
        let kb = b.build();
        let p = pair(&kb, &kb, "a", "a");
        let g = build_er_graph(&[p], &kb, &kb);
        assert_eq!(g.num_vertices(), 1);
        assert_eq!(g.num_edges(), 0);
        assert!(g.is_isolated(0));
        assert!(g.neighbor_groups(0).is_empty());
    }

    #[test]
    fn fig1_edges_and_group() {
        let (kb1, kb2) = fig1();
        let vs = vec![
            pair(&kb1, &kb2, "y:Tim", "d:Tim"),
            pair(&kb1, &kb2, "y:Cradle", "d:Cradle"),
            pair(&kb1, &kb2, "y:Player", "d:Player"),
            pair(&kb1, &kb2, "y:Cradle", "d:Player"),
        ];
        let g = build_er_graph(&vs, &kb1, &kb2);
        let d1 = kb1.relationship("directed").unwrap();
        let d2 = kb2.relationship("directed").unwrap();
        assert!(g.out_edges(0).contains(&Edge { src: 0, dst: 1, r1: d1, r2: d2 }));
        let groups = g.neighbor_groups(0);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[&(d1, d2)], vec![1, 2, 3]);
        assert_eq!((g.groups(0)[0].n1, g.groups(0)[0].n2), (2, 2));
        // No reverse edges without reverse triples.
        assert!(g.out_edges(1).is_empty());
        assert!(!g.is_isolated(1));
    }

    #[test]
    fn removing_a_vertex_drops_incident_edges() {
        let (kb1, kb2) = fig1();
        let vs = vec![
            pair(&kb1, &kb2, "y:Tim", "d:Tim"),
            pair(&kb1, &kb2, "y:Cradle", "d:Cradle"),
            pair(&kb1, &kb2, "y:Player", "d:Player"),
        ];
        let g = build_er_graph(&vs, &kb1, &kb2);
        let h = g.remove_vertices(&[1]);
        assert_eq!(h.num_vertices(), 2);
        assert_eq!(h.num_edges(), 1);
        assert_eq!(h.vertex(h.edges()[0].dst).u1, kb1.entity("y:Player").unwrap());
        let direct = build_er_graph(&[vs[0], vs[2]], &kb1, &kb2);
        assert_eq!(h.edges(), direct.edges());
        assert_eq!(h.groups(0), direct.groups(0));
    }

    #[test]
    fn prob_graph_collapses_to_max_and_drops_zero() {
        let pg = ProbErGraph::from_edges(3, [(0, 1, 0.3), (0, 1, 0.7), (1, 2, 0.0), (2, 0, 1.0)]);
        assert_eq!(pg.edges().len(), 2);
        assert_eq!(pg.edge(0, 1).unwrap().prob, 0.7);
        assert!(pg.edge(1, 2).is_none());
        assert_eq!(pg.edge(2, 0).unwrap().length, 0.0);
        assert!((pg.edge(0, 1).unwrap().length + 0.7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn forced_single_successor_has_probability_one() {
        let mut b1 = KbBuilder::new();
        b1.add_relationship("a", "r", "b");
        let mut b2 = KbBuilder::new();
        b2.add_relationship("x", "s", "y");
        let (kb1, kb2) = (b1.build(), b2.build());
        let vs = vec![pair(&kb1, &kb2, "a", "x"), pair(&kb1, &kb2, "b", "y")];
        let g = build_er_graph(&vs, &kb1, &kb2);
        let r = (kb1.relationship("r").unwrap(), kb2.relationship("s").unwrap());
        let mut table = ConsistencyTable::default();
        table.insert(r.0, r.1, 1.0, 1.0);
        let cfg = PropagationConfig::default();
        let pg = to_probabilistic(&g, &table, &[1.0, 1.0], &cfg);
        let e = pg.edge(0, 1).unwrap();
        assert_eq!((e.prob, e.length), (1.0, 0.0));

        // Prior 0 on the only successor removes the edge.
        let pg = to_probabilistic(&g, &table, &[1.0, 0.0], &cfg);
        assert!(pg.edge(0, 1).is_none());
        // A known non-match source keeps no outgoing edges.
        let pg = to_probabilistic(&g, &table, &[0.0, 1.0], &cfg);
        assert!(pg.edges().is_empty());
    }

    #[test]
    fn fig1_probabilistic_edge() {
        let (kb1, kb2) = fig1();
        let vs = vec![
            pair(&kb1, &kb2, "y:Tim", "d:Tim"),
            pair(&kb1, &kb2, "y:Cradle", "d:Cradle"),
            pair(&kb1, &kb2, "y:Player", "d:Player"),
            pair(&kb1, &kb2, "y:Cradle", "d:Player"),
        ];
        let g = build_er_graph(&vs, &kb1, &kb2);
        let mut table = ConsistencyTable::default();
        table.insert(kb1.relationship("directed").unwrap(), kb2.relationship("directed").unwrap(), 0.95, 0.95);
        let pg = to_probabilistic(&g, &table, &[1.0, 0.5, 0.5, 0.5], &PropagationConfig::default());
        let p = pg.edge(0, 1).unwrap().prob;
        assert!((0.97..=1.0).contains(&p), "{p}");
        assert!(pg.edge(0, 3).unwrap().prob < 0.03);
    }

    fn random_kb(seed: u64, prefix: &str) -> KnowledgeBase {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut b = KbBuilder::new();
        for i in 0..8 {
            b.add_attribute(&format!("{prefix}{i}"), "label", crate::TypedLiteral::string("x"));
        }
        for _ in 0..20 {
            let h = rng.gen_range(0..8);
            let t = rng.gen_range(0..8);
            let r = rng.gen_range(0..3);
            b.add_relationship(&format!("{prefix}{h}"), &format!("r{r}"), &format!("{prefix}{t}"));
        }
        b.build()
    }

    #[test]
    fn edges_equal_triple_join() {
        use rand::{Rng, SeedableRng};
        for seed in 0..30 {
            let kb1 = random_kb(seed, "a");
            let kb2 = random_kb(seed + 1000, "b");
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vs: Vec<EntityPair> = kb1
                .entity_ids()
                .flat_map(|u1| kb2.entity_ids().map(move |u2| (u1, u2)))
                .filter(|_| rng.gen_bool(0.4))
                .map(|(u1, u2)| EntityPair { u1, u2, prior: 0.5 })
                .collect();
            let g = build_er_graph(&vs, &kb1, &kb2);
            let mut expected = BTreeSet::new();
            for &(h1, r1, t1) in kb1.rel_triples() {
                for &(h2, r2, t2) in kb2.rel_triples() {
                    if let (Some(s), Some(d)) = (g.find(h1, h2), g.find(t1, t2)) {
                        expected.insert((s, d, r1, r2));
                    }
                }
            }
            let got: BTreeSet<_> = g.edges().iter().map(|e| (e.src, e.dst, e.r1, e.r2)).collect();
            assert_eq!(got, expected, "seed {seed}");
            for v in 0..g.num_vertices() as VertexId {
                let from_scan: usize = g.edges().iter().filter(|e| e.src == v).count();
                let from_groups: usize = g.groups(v).iter().map(|gr| gr.members.len()).sum();
                assert_eq!(from_scan, from_groups);
            }
        }
    }
}
