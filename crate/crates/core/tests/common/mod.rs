//! Independent reference implementations and random instance builders shared
//! by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};
use std::path::PathBuf;

use rand::Rng;
use remp_core::er_graph::{ProbErGraph, VertexId};
use remp_core::kb::load_kb;
use remp_core::propagation::NeighborProblem;
use remp_core::{EntityId, KnowledgeBase};

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

pub fn load_toy() -> (KnowledgeBase, KnowledgeBase, remp_core::engine::PairSet) {
    let d = toy_dir();
    let (kb1, _) = load_kb(d.join("kb1_attrs.tsv"), d.join("kb1_rels.tsv")).expect("toy KB1");
    let (kb2, _) = load_kb(d.join("kb2_attrs.tsv"), d.join("kb2_rels.tsv")).expect("toy KB2");
    let gold = remp_core::engine::load_pairs(d.join("gold.tsv")).expect("toy gold");
    (kb1, kb2, gold)
}

// ---------------------------------------------------------------------------
// Neighbor posteriors by explicit subset enumeration.

/// Marginal of every candidate, summing plain products over all subsets.
pub fn enumerate_posteriors(p: &NeighborProblem, eps1: f64, eps2: f64, one_to_one: bool) -> Vec<f64> {
    let n = p.cand.len();
    let mut z = 0.0;
    let mut acc = vec![0.0; n];
    for mask in 0u32..1 << n {
        let chosen: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let lefts: HashSet<EntityId> = chosen.iter().map(|&i| p.cand[i].0).collect();
        let rights: HashSet<EntityId> = chosen.iter().map(|&i| p.cand[i].1).collect();
        if one_to_one && (lefts.len() != chosen.len() || rights.len() != chosen.len()) {
            continue;
        }
        let mut w = 1.0;
        for (i, c) in p.cand.iter().enumerate() {
            w *= if chosen.contains(&i) { c.2 } else { 1.0 - c.2 };
        }
        let (k1, k2) = (lefts.len() as i32, rights.len() as i32);
        w *= eps1.powi(k1) * (1.0 - eps1).powi(p.n1 as i32 - k1);
        w *= eps2.powi(k2) * (1.0 - eps2).powi(p.n2 as i32 - k2);
        z += w;
        for &i in &chosen {
            acc[i] += w;
        }
    }
    acc.into_iter().map(|a| a / z).collect()
}

pub fn random_neighbor_problem<R: Rng>(rng: &mut R, max_cand: usize) -> NeighborProblem {
    let n1 = rng.gen_range(1..=4);
    let n2 = rng.gen_range(1..=4);
    let mut keys: Vec<(u32, u32)> = (0..n1 as u32).flat_map(|a| (0..n2 as u32).map(move |b| (a, b))).collect();
    let want = rng.gen_range(1..=max_cand.min(keys.len()));
    let mut cand = Vec::new();
    while cand.len() < want {
        let (a, b) = keys.swap_remove(rng.gen_range(0..keys.len()));
        cand.push((EntityId(a), EntityId(b), rng.gen_range(0.01..0.99)));
    }
    NeighborProblem { n1, n2, cand }
}

// ---------------------------------------------------------------------------
// Truncated shortest paths.

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Distances `<= zeta` from `src` inside the subgraph induced by `c`, with
/// edge lengths `-ln p`. Parallel edges keep the most probable one.
pub fn dijkstra_within(n: usize, edges: &[(usize, usize, f64)], c: &BTreeSet<usize>, src: usize, zeta: f64) -> BTreeMap<usize, f64> {
    let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for &(s, d, p) in edges {
        if p > 0.0 && c.contains(&s) && c.contains(&d) {
            let e = adj[s].entry(d).or_insert(0.0);
            *e = e.max(p);
        }
    }
    let mut dist: BTreeMap<usize, f64> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(src, 0.0);
    heap.push(Item(0.0, src));
    while let Some(Item(d, v)) = heap.pop() {
        if d > dist[&v] {
            continue;
        }
        for (&w, &p) in &adj[v] {
            let nd = d + if p >= 1.0 { 0.0 } else { -p.ln() };
            if nd <= zeta && dist.get(&w).is_none_or(|&cur| nd < cur) {
                dist.insert(w, nd);
                heap.push(Item(nd, w));
            }
        }
    }
    dist
}

/// Random directed graph with edge probabilities concentrated near 1 so that
/// multi-hop paths clear typical thresholds.
pub fn random_prob_edges<R: Rng>(rng: &mut R, n: usize, density: f64) -> Vec<(usize, usize, f64)> {
    const LEVELS: [f64; 8] = [1.0, 0.995, 0.99, 0.97, 0.95, 0.92, 0.85, 0.6];
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.gen_bool(density) {
                let p = if rng.gen_bool(0.8) {
                    LEVELS[rng.gen_range(0..LEVELS.len())]
                } else {
                    rng.gen_range(0.3..1.0)
                };
                edges.push((s, d, p));
            }
        }
    }
    edges
}

pub fn prob_graph(n: usize, edges: &[(usize, usize, f64)]) -> ProbErGraph {
    ProbErGraph::from_edges(n, edges.iter().map(|&(s, d, p)| (s as VertexId, d as VertexId, p)))
}

// ---------------------------------------------------------------------------
// Selection benefit.

/// Expected number of pairs inferred by `q_set`, given each question's
/// inferred set (question included).
pub fn benefit_oracle(q_set: &[usize], inferred: &BTreeMap<usize, BTreeSet<usize>>, priors: &[f64]) -> f64 {
    let all: BTreeSet<usize> = q_set.iter().flat_map(|q| inferred[q].iter().copied()).collect();
    all.iter()
        .map(|p| {
            let none: f64 = q_set
                .iter()
                .filter(|q| inferred[q].contains(p))
                .map(|&q| 1.0 - priors[q])
                .product();
            1.0 - none
        })
        .sum()
}

/// Best benefit over all subsets of `c` with at most `mu` elements.
pub fn brute_force_best(c: &[usize], mu: usize, inferred: &BTreeMap<usize, BTreeSet<usize>>, priors: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for mask in 0u32..1 << c.len() {
        if mask.count_ones() as usize > mu {
            continue;
        }
        let q: Vec<usize> = (0..c.len()).filter(|&i| mask & (1 << i) != 0).map(|i| c[i]).collect();
        best = best.max(benefit_oracle(&q, inferred, priors));
    }
    best
}

// ---------------------------------------------------------------------------
// Assignment, pruning, Bayes.

/// Maximum total weight over injective row-to-column maps that cover
/// `min(rows, cols)` rows.
pub fn best_assignment_weight(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>, skips: usize) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        if skips > 0 {
            best = go(w, row + 1, used, skips - 1);
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row][c] + go(w, row + 1, used, skips));
                used[c] = false;
            }
        }
        best
    }
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    go(w, 0, &mut vec![false; cols], rows.saturating_sub(cols))
}

fn strictly_above(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Two passes of "keep a pair when fewer than `k` pairs sharing its entity
/// strictly dominate it": over KB1 entities, then over KB2 entities on the
/// survivors.
pub fn prune_double_loop(pairs: &[(u32, u32)], vectors: &[Vec<f64>], k: usize) -> Vec<usize> {
    let pass = |alive: &[usize], left: bool| -> Vec<usize> {
        let key = |i: usize| if left { pairs[i].0 } else { pairs[i].1 };
        alive
            .iter()
            .copied()
            .filter(|&p| {
                let mut dominators = 0;
                for &q in alive {
                    if q != p && key(q) == key(p) && strictly_above(&vectors[q], &vectors[p]) {
                        dominators += 1;
                    }
                }
                dominators < k
            })
            .collect()
    };
    let all: Vec<usize> = (0..pairs.len()).collect();
    let first = pass(&all, true);
    pass(&first, false)
}

/// Posterior by spelling out both hypotheses.
pub fn hand_bayes(prior: f64, yes: &[f64], no: &[f64]) -> f64 {
    let mut if_match = prior;
    let mut if_not = 1.0 - prior;
    for &l in yes {
        if_match *= l;
        if_not *= 1.0 - l;
    }
    for &l in no {
        if_match *= 1.0 - l;
        if_not *= l;
    }
    if_match / (if_match + if_not)
}

// ---------------------------------------------------------------------------
// Consistency likelihood.

fn ln_choose(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

fn term(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * p.ln()
    }
}

/// Log-likelihood of one observation `(n1, n2)` with `l` matched neighbors.
pub fn obs_ll(n1: usize, n2: usize, l: usize, e1: f64, e2: f64) -> f64 {
    ln_choose(n1, l)
        + ln_choose(n2, l)
        + term(l as f64, e1)
        + term((n1 - l) as f64, 1.0 - e1)
        + term(l as f64, e2)
        + term((n2 - l) as f64, 1.0 - e2)
}

/// Best log-likelihood over a grid of `(eps1, eps2)` in `[0.01, 0.99]`,
/// each latent optimized exactly within its bounds.
pub fn grid_mle(obs: &[(usize, usize, usize, usize)]) -> f64 {
    let grid: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
    let mut best = f64::NEG_INFINITY;
    for &e1 in &grid {
        for &e2 in &grid {
            let ll: f64 = obs
                .iter()
                .map(|&(n1, n2, lo, hi)| (lo..=hi).map(|l| obs_ll(n1, n2, l, e1, e2)).fold(f64::NEG_INFINITY, f64::max))
                .sum();
            best = best.max(ll);
        }
    }
    best
}
