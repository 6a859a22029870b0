//! Candidate generation and partial-order pruning.
//!
//! The stages run in order:
//!
//! 1. [`generate_candidates`] blocks on normalized label tokens and keeps pairs
//!    whose label Jaccard reaches `t_label`; that similarity is the pair's prior.
//!    Pairs with identical normalized labels form the initial matches.
//! 2. [`match_attributes_1to1`] scores every attribute pair by the average
//!    extended-Jaccard similarity of their values over the initial matches and
//!    picks a maximum-weight 1:1 assignment.
//! 3. [`build_similarity_vectors`] assembles one score per attribute match.
//! 4. [`prune`] drops pairs that cannot be among the top `k` counterparts of
//!    either of their entities under the componentwise partial order.

pub mod assignment;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kb::{AttrId, EntityId, KnowledgeBase};
use crate::text_sim::{extended_jaccard, DEFAULT_LITERAL_THRESHOLD};

pub use assignment::max_weight_assignment;

/// A candidate pair `(u1, u2)` with its prior match probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityPair {
    pub u1: EntityId,
    pub u2: EntityId,
    pub prior: f64,
}

/// `M_c`, `M_in` and `M_rd`. The latter two index into `candidates`.
#[derive(Debug, Clone, Default)]
pub struct MatchSets {
    pub candidates: Vec<EntityPair>,
    pub initial: Vec<usize>,
    pub retained: Vec<usize>,
    index: HashMap<(EntityId, EntityId), usize>,
}

impl MatchSets {
    /// Builds the sets from a candidate list; duplicates keep the first prior.
    pub fn new(mut candidates: Vec<EntityPair>) -> Self {
        candidates.sort_by_key(|p| (p.u1, p.u2));
        candidates.dedup_by_key(|p| (p.u1, p.u2));
        let index = candidates
            .iter()
            .enumerate()
            .map(|(i, p)| ((p.u1, p.u2), i))
            .collect();
        MatchSets {
            candidates,
            initial: Vec::new(),
            retained: Vec::new(),
            index,
        }
    }

    pub fn find(&self, u1: EntityId, u2: EntityId) -> Option<usize> {
        self.index.get(&(u1, u2)).copied()
    }

    pub fn initial_pairs(&self) -> impl Iterator<Item = &EntityPair> + '_ {
        self.initial.iter().map(|&i| &self.candidates[i])
    }

    pub fn retained_pairs(&self) -> impl Iterator<Item = &EntityPair> + '_ {
        self.retained.iter().map(|&i| &self.candidates[i])
    }
}

/// Counters from candidate generation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CandidateStats {
    pub unlabeled_kb1: usize,
    pub unlabeled_kb2: usize,
    pub candidates: usize,
    pub initial: usize,
}

/// One attribute correspondence in `M_at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeMatch {
    pub a1: AttrId,
    pub a2: AttrId,
    pub score: f64,
}

/// Per-pair similarity scores, one slot per attribute match in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector(pub Vec<f64>);

impl SimilarityVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Componentwise `>=`.
    pub fn dominates(&self, other: &SimilarityVector) -> bool {
        assert_eq!(self.len(), other.len(), "similarity vectors of different length");
        self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }

    /// `dominates` with at least one strictly greater component.
    pub fn strictly_dominates(&self, other: &SimilarityVector) -> bool {
        self.dominates(other) && self.0.iter().zip(&other.0).any(|(a, b)| a > b)
    }

    /// Slots with a nonzero score.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn dominates(s: &SimilarityVector, s2: &SimilarityVector) -> bool {
    s.dominates(s2)
}

pub fn strictly_dominates(s: &SimilarityVector, s2: &SimilarityVector) -> bool {
    s.strictly_dominates(s2)
}

fn label_token_sets(kb: &KnowledgeBase, label_attr: Option<AttrId>) -> Vec<Vec<Vec<String>>> {
    kb.entity_ids()
        .map(|u| {
            let Some(a) = label_attr else { return Vec::new() };
            let mut sets: Vec<Vec<String>> = kb
                .attr_values(u, a)
                .into_iter()
                .map(|l| l.tokens().to_vec())
                .filter(|t| !t.is_empty())
                .collect();
            sets.sort();
            sets.dedup();
            sets
        })
        .collect()
}

/// Label-similarity blocking. `label_attr1`/`label_attr2` name the label
/// attribute of each KB; an absent attribute means no entity has a label.
pub fn generate_candidates(
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
    label_attr1: Option<AttrId>,
    label_attr2: Option<AttrId>,
    t_label: f64,
) -> (MatchSets, CandidateStats) {
    let labels1 = label_token_sets(kb1, label_attr1);
    let labels2 = label_token_sets(kb2, label_attr2);

    // token -> (kb2 entity, label index)
    let mut inverted: HashMap<&str, Vec<(u32, u32)>> = HashMap::new();
    for (u2, sets) in labels2.iter().enumerate() {
        for (li, tokens) in sets.iter().enumerate() {
            for t in tokens {
                inverted.entry(t.as_str()).or_default().push((u2 as u32, li as u32));
            }
        }
    }

    let found: Vec<(EntityPair, bool)> = labels1
        .par_iter()
        .enumerate()
        .flat_map_iter(|(u1, sets1)| {
            let mut best: HashMap<u32, f64> = HashMap::new();
            for tokens1 in sets1 {
                let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
                for t in tokens1 {
                    if let Some(posting) = inverted.get(t.as_str()) {
                        for &key in posting {
                            *overlap.entry(key).or_default() += 1;
                        }
                    }
                }
                for ((u2, li), inter) in overlap {
                    let len2 = labels2[u2 as usize][li as usize].len();
                    let sim = inter as f64 / (tokens1.len() + len2 - inter) as f64;
                    let e = best.entry(u2).or_insert(0.0);
                    if sim > *e {
                        *e = sim;
                    }
                }
            }
            best.into_iter()
                .filter(|&(_, sim)| sim >= t_label)
                .map(move |(u2, sim)| {
                    let pair = EntityPair {
                        u1: EntityId(u1 as u32),
                        u2: EntityId(u2),
                        prior: sim,
                    };
                    (pair, sim >= 1.0)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut sets = MatchSets::new(found.iter().map(|(p, _)| *p).collect());
    let mut initial: Vec<usize> = found
        .iter()
        .filter(|(_, exact)| *exact)
        .filter_map(|(p, _)| sets.find(p.u1, p.u2))
        .collect();
    initial.sort_unstable();
    sets.initial = initial;

    let stats = CandidateStats {
        unlabeled_kb1: labels1.iter().filter(|s| s.is_empty()).count(),
        unlabeled_kb2: labels2.iter().filter(|s| s.is_empty()).count(),
        candidates: sets.candidates.len(),
        initial: sets.initial.len(),
    };
    if stats.unlabeled_kb1 + stats.unlabeled_kb2 > 0 {
        tracing::info!(
            kb1 = stats.unlabeled_kb1,
            kb2 = stats.unlabeled_kb2,
            "entities without a usable label produce no candidates"
        );
    }
    (sets, stats)
}

/// `sim_A(a1, a2)`: summed value similarity over the initial matches divided
/// by the number of initial matches where either side has a value.
pub fn attribute_similarity(
    a1: AttrId,
    a2: AttrId,
    initial: &[EntityPair],
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
    threshold: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut denom = 0usize;
    for p in initial {
        let v1 = kb1.attr_values(p.u1, a1);
        let v2 = kb2.attr_values(p.u2, a2);
        if v1.is_empty() && v2.is_empty() {
            continue;
        }
        denom += 1;
        sum += extended_jaccard(&v1, &v2, threshold);
    }
    if denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}

/// The full `|A1| x |A2|` attribute similarity matrix.
///
/// Only attribute pairs that co-occur on some initial match accumulate a
/// numerator; the denominators come from per-attribute occurrence counts.
pub fn attribute_similarity_matrix(
    initial: &[EntityPair],
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
    threshold: f64,
) -> Vec<Vec<f64>> {
    let (n1, n2) = (kb1.num_attributes(), kb2.num_attributes());
    let mut sum = vec![vec![0.0f64; n2]; n1];
    let mut both = vec![vec![0usize; n2]; n1];
    let mut count1 = vec![0usize; n1];
    let mut count2 = vec![0usize; n2];
    for p in initial {
        let attrs1 = kb1.attributes_of(p.u1);
        let attrs2 = kb2.attributes_of(p.u2);
        for &a1 in attrs1 {
            count1[a1.index()] += 1;
        }
        for &a2 in attrs2 {
            count2[a2.index()] += 1;
        }
        for &a1 in attrs1 {
            let v1 = kb1.attr_values(p.u1, a1);
            for &a2 in attrs2 {
                let v2 = kb2.attr_values(p.u2, a2);
                both[a1.index()][a2.index()] += 1;
                sum[a1.index()][a2.index()] += extended_jaccard(&v1, &v2, threshold);
            }
        }
    }
    (0..n1)
        .map(|i| {
            (0..n2)
                .map(|j| {
                    let denom = count1[i] + count2[j] - both[i][j];
                    if denom == 0 {
                        0.0
                    } else {
                        sum[i][j] / denom as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Global 1:1 attribute matching over the initial matches. Assignments scoring
/// below `s_min` are dropped. Output is sorted by `(a1, a2)`, which fixes the
/// slot order of every similarity vector.
pub fn match_attributes_1to1(
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
    initial: &[EntityPair],
    threshold: f64,
    s_min: f64,
) -> Vec<AttributeMatch> {
    let matrix = attribute_similarity_matrix(initial, kb1, kb2, threshold);
    let assignment = max_weight_assignment(&matrix);
    let mut out: Vec<AttributeMatch> = assignment
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| {
            let j = j?;
            let score = matrix[i][j];
            (score >= s_min).then_some(AttributeMatch {
                a1: AttrId(i as u32),
                a2: AttrId(j as u32),
                score,
            })
        })
        .collect();
    out.sort_by_key(|m| (m.a1, m.a2));
    out
}

pub fn build_similarity_vector(
    p: &EntityPair,
    attribute_matches: &[AttributeMatch],
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
) -> SimilarityVector {
    SimilarityVector(
        attribute_matches
            .iter()
            .map(|m| {
                let v1 = kb1.attr_values(p.u1, m.a1);
                let v2 = kb2.attr_values(p.u2, m.a2);
                extended_jaccard(&v1, &v2, DEFAULT_LITERAL_THRESHOLD)
            })
            .collect(),
    )
}

/// Similarity vectors for every pair, index-aligned with `pairs`.
pub fn build_similarity_vectors(
    pairs: &[EntityPair],
    attribute_matches: &[AttributeMatch],
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
) -> Vec<SimilarityVector> {
    pairs
        .par_iter()
        .map(|p| build_similarity_vector(p, attribute_matches, kb1, kb2))
        .collect()
}

/// Which entity of a pair a block is keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn key(self, p: &EntityPair) -> EntityId {
        match self {
            Side::Left => p.u1,
            Side::Right => p.u2,
        }
    }
}

/// `min_rank_i`: how many pairs of `members` that share the side-`i` entity
/// with pair `p` strictly dominate it.
pub fn min_rank_side(
    p: usize,
    side: Side,
    members: &[usize],
    pairs: &[EntityPair],
    vectors: &[SimilarityVector],
) -> usize {
    let key = side.key(&pairs[p]);
    members
        .iter()
        .filter(|&&q| q != p && side.key(&pairs[q]) == key)
        .filter(|&&q| vectors[q].strictly_dominates(&vectors[p]))
        .count()
}

/// The worst rank of `p` among `members`: max over both sides.
pub fn min_rank(p: usize, members: &[usize], pairs: &[EntityPair], vectors: &[SimilarityVector]) -> usize {
    min_rank_side(p, Side::Left, members, pairs, vectors).max(min_rank_side(p, Side::Right, members, pairs, vectors))
}

fn prune_one_way(
    members: &[usize],
    side: Side,
    k: usize,
    pairs: &[EntityPair],
    vectors: &[SimilarityVector],
) -> Vec<usize> {
    let mut blocks: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
    for &m in members {
        blocks.entry(side.key(&pairs[m])).or_default().push(m);
    }
    let mut kept: Vec<usize> = blocks
        .into_par_iter()
        .flat_map_iter(|(_, mut block)| {
            if block.len() <= k {
                return block;
            }
            block.sort_unstable();
            let n = block.len();
            let rank: Vec<usize> = (0..n)
                .map(|j| {
                    (0..n)
                        .filter(|&i| i != j && vectors[block[i]].strictly_dominates(&vectors[block[j]]))
                        .count()
                })
                .collect();
            let mut alive = vec![true; n];
            for j in 0..n {
                if !alive[j] || rank[j] < k {
                    continue;
                }
                // Drop the pair together with everything it dominates.
                for i in 0..n {
                    if alive[i] && vectors[block[j]].dominates(&vectors[block[i]]) {
                        alive[i] = false;
                    }
                }
            }
            block
                .into_iter()
                .zip(alive)
                .filter(|&(_, a)| a)
                .map(|(m, _)| m)
                .collect()
        })
        .collect();
    kept.sort_unstable();
    kept
}

/// Partial-order pruning: one pass over KB1 entities, then one over KB2
/// entities on the output of the first pass.
pub fn prune(members: &[usize], pairs: &[EntityPair], vectors: &[SimilarityVector], k: usize) -> Vec<usize> {
    assert!(k >= 1, "k must be at least 1");
    let first = prune_one_way(members, Side::Left, k, pairs, vectors);
    prune_one_way(&first, Side::Right, k, pairs, vectors)
}
