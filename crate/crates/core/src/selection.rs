//! Inferred-match sets and question selection.
//!
//! A question `q` infers every unresolved pair `p` whose best path probability
//! from `q` reaches the precision threshold `tau`, i.e. whose shortest-path
//! distance under edge lengths `-ln p` is at most `zeta = -ln tau`. Paths run
//! through the question set `C` only.
//!
//! The benefit of a batch `Q` is the expected number of pairs inferred once
//! every question is answered, each question being a match with its prior
//! probability. It is monotone and submodular, so a lazy greedy selection
//! returns the same batch as recomputing every gain each round.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use crate::er_graph::{ProbErGraph, VertexId};

/// `bt(q)` and its transpose `bt⁻¹(p)`; all distances are at most `zeta`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InferredSets {
    pub forward: BTreeMap<VertexId, BTreeMap<VertexId, f64>>,
    pub backward: BTreeMap<VertexId, BTreeMap<VertexId, f64>>,
}

impl InferredSets {
    pub fn inferred(&self, q: VertexId) -> impl Iterator<Item = (VertexId, f64)> + '_ {
        self.forward.get(&q).into_iter().flatten().map(|(&p, &d)| (p, d))
    }

    pub fn distance(&self, q: VertexId, p: VertexId) -> Option<f64> {
        self.forward.get(&q)?.get(&p).copied()
    }

    fn set(&mut self, i: VertexId, j: VertexId, d: f64) {
        self.forward.entry(i).or_default().insert(j, d);
        self.backward.entry(j).or_default().insert(i, d);
    }
}

/// `zeta = -ln tau`.
pub fn zeta_for(tau: f64) -> f64 {
    assert!(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
    if tau == 1.0 {
        0.0
    } else {
        -tau.ln()
    }
}

/// Distance-bounded all-pairs shortest paths over the subgraph induced by
/// `c`, by dynamic programming over intermediate vertices.
pub fn compute_inferred_sets(pg: &ProbErGraph, c: &[VertexId], zeta: f64) -> InferredSets {
    assert!(zeta >= 0.0);
    let mut members: Vec<VertexId> = c.to_vec();
    members.sort_unstable();
    members.dedup();
    let in_c: HashMap<VertexId, ()> = members.iter().map(|&v| (v, ())).collect();

    let mut inf = InferredSets::default();
    for &q in &members {
        inf.set(q, q, 0.0);
        for e in pg.out_edges(q) {
            if e.dst != q && in_c.contains_key(&e.dst) && e.length <= zeta {
                inf.set(q, e.dst, e.length);
            }
        }
    }

    for &k in &members {
        let preds: Vec<(VertexId, f64)> = inf.backward[&k]
            .iter()
            .filter(|(&i, _)| i != k)
            .map(|(&i, &d)| (i, d))
            .collect();
        if preds.is_empty() {
            continue;
        }
        let succs: Vec<(VertexId, f64)> = inf.forward[&k]
            .iter()
            .filter(|(&j, _)| j != k)
            .map(|(&j, &d)| (j, d))
            .collect();
        for &(i, dik) in &preds {
            for &(j, dkj) in &succs {
                if i == j {
                    continue;
                }
                let d = dik + dkj;
                if d > zeta {
                    continue;
                }
                let better = inf.distance(i, j).is_none_or(|cur| d < cur);
                if better {
                    inf.set(i, j, d);
                }
            }
        }
    }
    inf
}

/// Expected number of pairs in `C` inferred by `q_set`.
pub fn benefit(q_set: &[VertexId], inf: &InferredSets, priors: &[f64]) -> f64 {
    let mut miss: BTreeMap<VertexId, f64> = BTreeMap::new();
    for &q in q_set {
        for (p, _) in inf.inferred(q) {
            *miss.entry(p).or_insert(1.0) *= 1.0 - priors[q as usize];
        }
    }
    miss.values().map(|m| 1.0 - m).sum()
}

#[derive(Debug, Clone)]
pub struct SelectionProblem {
    /// Candidate questions.
    pub candidates: Vec<VertexId>,
    /// Match probability of every vertex, indexed by vertex id.
    pub priors: Vec<f64>,
    pub mu: usize,
}

/// Marginal gain of adding `q` given the current miss probabilities.
fn gain(q: VertexId, inf: &InferredSets, priors: &[f64], miss: &HashMap<VertexId, f64>) -> f64 {
    let prior = priors[q as usize];
    inf.inferred(q)
        .map(|(p, _)| prior * miss.get(&p).copied().unwrap_or(1.0))
        .sum()
}

fn accept(q: VertexId, inf: &InferredSets, priors: &[f64], miss: &mut HashMap<VertexId, f64>) {
    let prior = priors[q as usize];
    for (p, _) in inf.inferred(q) {
        *miss.entry(p).or_insert(1.0) *= 1.0 - prior;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    gain: f64,
    q: VertexId,
}

impl Eq for Key {}

impl Ord for Key {
    /// Larger gain first, then smaller vertex id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then(Reverse(self.q).cmp(&Reverse(other.q)))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazy greedy selection of up to `mu` questions, in selection order.
pub fn select_questions(problem: &SelectionProblem, inf: &InferredSets) -> Vec<VertexId> {
    let mut miss = HashMap::new();
    let mut heap: BinaryHeap<(Key, usize)> = problem
        .candidates
        .iter()
        .map(|&q| {
            let key = Key {
                gain: gain(q, inf, &problem.priors, &miss),
                q,
            };
            (key, 0)
        })
        .collect();
    let mut chosen = Vec::new();
    while chosen.len() < problem.mu {
        let Some((key, round)) = heap.pop() else { break };
        if round == chosen.len() {
            if key.gain <= 0.0 {
                break;
            }
            accept(key.q, inf, &problem.priors, &mut miss);
            chosen.push(key.q);
            continue;
        }
        let fresh = Key {
            gain: gain(key.q, inf, &problem.priors, &miss),
            q: key.q,
        };
        heap.push((fresh, chosen.len()));
    }
    chosen
}

/// Greedy selection recomputing every gain each round.
pub fn select_questions_plain(problem: &SelectionProblem, inf: &InferredSets) -> Vec<VertexId> {
    let mut miss = HashMap::new();
    let mut chosen: Vec<VertexId> = Vec::new();
    while chosen.len() < problem.mu {
        let best = problem
            .candidates
            .iter()
            .filter(|q| !chosen.contains(q))
            .map(|&q| Key {
                gain: gain(q, inf, &problem.priors, &miss),
                q,
            })
            .max();
        match best {
            Some(k) if k.gain > 0.0 => {
                accept(k.q, inf, &problem.priors, &mut miss);
                chosen.push(k.q);
            }
            _ => break,
        }
    }
    chosen
}
