//! Relationship consistency and match propagation to neighbors.
//!
//! For a relationship pair `(r1, r2)`, `eps1` is the probability that a value
//! of `r1` on a matched entity has a matching counterpart among the values of
//! `r2` on the other entity, and `eps2` the same in the other direction. Both
//! are fitted by maximum likelihood on seed matches, with the number of
//! matched neighbors per seed as an integer latent.
//!
//! Given a match and a label group of its neighbors, every subset `M` of the
//! candidate neighbor pairs is scored by its prior likelihood times how well
//! its projections fit the consistency parameters; the per-pair marginal over
//! those scores is the conditional match probability carried by an edge.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kb::{EntityId, KnowledgeBase, RelId};
use crate::text_sim::max_bipartite_matching;

pub const EPS_MIN: f64 = 0.01;
pub const EPS_MAX: f64 = 0.99;
pub const DEFAULT_K_ENUM: usize = 12;

/// Which subsets of a neighbor group count as possible match results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// Only subsets in which no entity appears twice.
    OneToOne,
    /// Every subset of the candidate pairs.
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub subset_mode: SubsetMode,
    pub k_enum: usize,
    pub eps_min: f64,
    pub eps_max: f64,
    /// Random starting points for the fixed-point iteration.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            subset_mode: SubsetMode::OneToOne,
            k_enum: DEFAULT_K_ENUM,
            eps_min: EPS_MIN,
            eps_max: EPS_MAX,
            restarts: 5,
            seed: 7,
        }
    }
}

/// `(eps1, eps2)` per relationship pair. Pairs never estimated read as
/// `(eps_min, eps_min)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTable {
    entries: BTreeMap<(RelId, RelId), (f64, f64)>,
    fallback: (f64, f64),
}

impl Default for ConsistencyTable {
    fn default() -> Self {
        ConsistencyTable {
            entries: BTreeMap::new(),
            fallback: (EPS_MIN, EPS_MIN),
        }
    }
}

impl ConsistencyTable {
    pub fn with_fallback(eps: f64) -> Self {
        ConsistencyTable {
            entries: BTreeMap::new(),
            fallback: (eps, eps),
        }
    }

    pub fn insert(&mut self, r1: RelId, r2: RelId, eps1: f64, eps2: f64) {
        self.entries.insert((r1, r2), (eps1, eps2));
    }

    pub fn get(&self, r1: RelId, r2: RelId) -> (f64, f64) {
        self.entries.get(&(r1, r2)).copied().unwrap_or(self.fallback)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (RelId, RelId, f64, f64)> + '_ {
        self.entries.iter().map(|(&(r1, r2), &(e1, e2))| (r1, r2, e1, e2))
    }

    /// `r1<TAB>r2<TAB>eps1<TAB>eps2`
    pub fn write_tsv<W: Write>(&self, mut w: W, kb1: &KnowledgeBase, kb2: &KnowledgeBase) -> std::io::Result<()> {
        for (r1, r2, e1, e2) in self.iter() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                kb1.relationship_name(r1),
                kb2.relationship_name(r2),
                e1,
                e2
            )?;
        }
        Ok(())
    }
}

/// One seed match seen through one relationship pair: the two value-set
/// sizes and the feasible range of its matched-neighbor count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub n1: usize,
    pub n2: usize,
    pub lo: usize,
    pub hi: usize,
}

impl Observation {
    /// An observation whose latent may take any value in `[0, min(n1, n2)]`.
    pub fn unconstrained(n1: usize, n2: usize) -> Self {
        Observation {
            n1,
            n2,
            lo: 0,
            hi: n1.min(n2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub eps1: f64,
    pub eps2: f64,
    pub latents: Vec<usize>,
    pub log_likelihood: f64,
}

/// Table of `ln k!`.
struct LnFact(Vec<f64>);

impl LnFact {
    fn new(max: usize) -> Self {
        let mut t = Vec::with_capacity(max + 1);
        t.push(0.0);
        for k in 1..=max {
            t.push(t[k - 1] + (k as f64).ln());
        }
        LnFact(t)
    }

    fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.0[n] - self.0[k] - self.0[n - k]
    }
}

fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Log of the product of per-observation likelihoods at `(eps1, eps2, L)`.
pub fn log_likelihood(obs: &[Observation], eps1: f64, eps2: f64, latents: &[usize]) -> f64 {
    assert_eq!(obs.len(), latents.len());
    let max_n = obs.iter().map(|o| o.n1.max(o.n2)).max().unwrap_or(0);
    let lf = LnFact::new(max_n);
    obs.iter()
        .zip(latents)
        .map(|(o, &l)| {
            let l_f = l as f64;
            lf.ln_choose(o.n1, l)
                + lf.ln_choose(o.n2, l)
                + xlny(l_f, eps1)
                + xlny((o.n1 - l) as f64, 1.0 - eps1)
                + xlny(l_f, eps2)
                + xlny((o.n2 - l) as f64, 1.0 - eps2)
        })
        .sum()
}

fn eps_for(sum_l: usize, sum_n: usize, config: &PropagationConfig) -> f64 {
    (sum_l as f64 / sum_n as f64).clamp(config.eps_min, config.eps_max)
}

fn eps_given_latents(obs: &[Observation], latents: &[usize], config: &PropagationConfig) -> (f64, f64) {
    let s: usize = latents.iter().sum();
    let n1: usize = obs.iter().map(|o| o.n1).sum();
    let n2: usize = obs.iter().map(|o| o.n2).sum();
    (eps_for(s, n1, config), eps_for(s, n2, config))
}

/// Each latent's best value given `zeta`, smallest value on ties.
fn latents_given_eps(obs: &[Observation], eps1: f64, eps2: f64, lf: &LnFact) -> Vec<usize> {
    let ln_zeta = eps1.ln() + eps2.ln() - (1.0 - eps1).ln() - (1.0 - eps2).ln();
    obs.iter()
        .map(|o| {
            let mut best = o.lo;
            let mut best_val = f64::NEG_INFINITY;
            for l in o.lo..=o.hi {
                let val = lf.ln_choose(o.n1, l) + lf.ln_choose(o.n2, l) + l as f64 * ln_zeta;
                if val > best_val + 1e-12 {
                    best_val = val;
                    best = l;
                }
            }
            best
        })
        .collect()
}

/// Alternates the two closed-form updates from `start` until the latents stop
/// changing. Returns the fit and the log-likelihood after every half step.
pub fn fixed_point(obs: &[Observation], start: Vec<usize>, config: &PropagationConfig) -> (MleFit, Vec<f64>) {
    let max_n = obs.iter().map(|o| o.n1.max(o.n2)).max().unwrap_or(0);
    let lf = LnFact::new(max_n);
    let mut latents = start;
    let mut trace = Vec::new();
    let (mut eps1, mut eps2) = eps_given_latents(obs, &latents, config);
    trace.push(log_likelihood(obs, eps1, eps2, &latents));
    for _ in 0..200 {
        let next = latents_given_eps(obs, eps1, eps2, &lf);
        trace.push(log_likelihood(obs, eps1, eps2, &next));
        let changed = next != latents;
        latents = next;
        (eps1, eps2) = eps_given_latents(obs, &latents, config);
        trace.push(log_likelihood(obs, eps1, eps2, &latents));
        if !changed {
            break;
        }
    }
    let log_likelihood = *trace.last().expect("trace is never empty");
    (
        MleFit {
            eps1,
            eps2,
            latents,
            log_likelihood,
        },
        trace,
    )
}

/// Since the best `(eps1, eps2)` for fixed latents depends only on their sum
/// `S`, the joint optimum is the best `S` combined with the latents that
/// maximize `sum ln c_L` at that sum. Solved as a knapsack over `S`.
fn profile_optimum(obs: &[Observation], config: &PropagationConfig) -> Option<Vec<usize>> {
    let s_max: usize = obs.iter().map(|o| o.hi).sum();
    let work: usize = obs.iter().map(|o| (o.hi - o.lo + 1) * (s_max + 1)).sum();
    if work > 20_000_000 {
        return None;
    }
    let max_n = obs.iter().map(|o| o.n1.max(o.n2)).max().unwrap_or(0);
    let lf = LnFact::new(max_n);
    // best[j][s]: max of sum ln c over the first j observations with latent sum s.
    let mut best = vec![vec![f64::NEG_INFINITY; s_max + 1]];
    best[0][0] = 0.0;
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(obs.len());
    for o in obs {
        let prev = best.last().unwrap();
        let mut cur = vec![f64::NEG_INFINITY; s_max + 1];
        let mut pick = vec![0usize; s_max + 1];
        for (s, &v) in prev.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            for l in o.lo..=o.hi {
                let val = v + lf.ln_choose(o.n1, l) + lf.ln_choose(o.n2, l);
                if val > cur[s + l] {
                    cur[s + l] = val;
                    pick[s + l] = l;
                }
            }
        }
        best.push(cur);
        choice.push(pick);
    }
    let n1: usize = obs.iter().map(|o| o.n1).sum();
    let n2: usize = obs.iter().map(|o| o.n2).sum();
    let last = best.last().unwrap();
    let mut best_s = None;
    let mut best_val = f64::NEG_INFINITY;
    for (s, &c) in last.iter().enumerate() {
        if c == f64::NEG_INFINITY {
            continue;
        }
        let (e1, e2) = (eps_for(s, n1, config), eps_for(s, n2, config));
        let sf = s as f64;
        let val = c + xlny(sf, e1) + xlny((n1 - s) as f64, 1.0 - e1) + xlny(sf, e2) + xlny((n2 - s) as f64, 1.0 - e2);
        if val > best_val {
            best_val = val;
            best_s = Some(s);
        }
    }
    let mut s = best_s?;
    let mut latents = vec![0; obs.len()];
    for j in (0..obs.len()).rev() {
        latents[j] = choice[j][s];
        s -= latents[j];
    }
    Some(latents)
}

/// Maximum-likelihood `(eps1, eps2)` and latents. With no observations the
/// result is `(eps_min, eps_min)`.
pub fn fit_consistency(obs: &[Observation], config: &PropagationConfig) -> MleFit {
    let obs: Vec<Observation> = obs.iter().copied().filter(|o| o.n1 > 0 && o.n2 > 0).collect();
    if obs.is_empty() {
        return MleFit {
            eps1: config.eps_min,
            eps2: config.eps_min,
            latents: Vec::new(),
            log_likelihood: 0.0,
        };
    }
    for o in &obs {
        assert!(o.lo <= o.hi && o.hi <= o.n1.min(o.n2), "invalid observation {o:?}");
    }
    let mut starts = vec![
        obs.iter().map(|o| o.lo).collect::<Vec<_>>(),
        obs.iter().map(|o| o.hi).collect(),
    ];
    if let Some(p) = profile_optimum(&obs, config) {
        starts.push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.restarts {
        starts.push(obs.iter().map(|o| rng.gen_range(o.lo..=o.hi)).collect());
    }
    starts
        .into_iter()
        .map(|s| fixed_point(&obs, s, config).0)
        .fold(None::<MleFit>, |best, fit| match best {
            Some(b) if b.log_likelihood >= fit.log_likelihood => Some(b),
            _ => Some(fit),
        })
        .expect("at least one start")
}

/// Known pair states used to bound the latents.
#[derive(Debug, Clone, Default)]
pub struct PairKnowledge {
    /// Pairs known to match.
    pub matches: HashSet<(EntityId, EntityId)>,
    /// Pairs that may match: candidates minus known non-matches, plus known matches.
    pub possible: HashSet<(EntityId, EntityId)>,
}

impl PairKnowledge {
    fn max_matching(set: &HashSet<(EntityId, EntityId)>, n1: &[EntityId], n2: &[EntityId]) -> usize {
        let adj: Vec<Vec<usize>> = n1
            .iter()
            .map(|&a| {
                n2.iter()
                    .enumerate()
                    .filter(|(_, &b)| set.contains(&(a, b)))
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        max_bipartite_matching(&adj, n2.len())
    }

    pub fn observation(&self, n1: &[EntityId], n2: &[EntityId]) -> Observation {
        let lo = Self::max_matching(&self.matches, n1, n2);
        let hi = Self::max_matching(&self.possible, n1, n2).max(lo);
        Observation {
            n1: n1.len(),
            n2: n2.len(),
            lo,
            hi,
        }
    }
}

/// Observations of every relationship pair over the seed matches. Seeds where
/// either value set is empty say nothing about the pair and are skipped.
pub fn collect_observations(
    seeds: &[(EntityId, EntityId)],
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
    knowledge: &PairKnowledge,
) -> BTreeMap<(RelId, RelId), Vec<Observation>> {
    let mut out: BTreeMap<(RelId, RelId), Vec<Observation>> = BTreeMap::new();
    for &(u1, u2) in seeds {
        let mut rels1: Vec<RelId> = kb1.out_edges(u1).iter().map(|&(r, _)| r).collect();
        rels1.dedup();
        let mut rels2: Vec<RelId> = kb2.out_edges(u2).iter().map(|&(r, _)| r).collect();
        rels2.dedup();
        for &r1 in &rels1 {
            for &r2 in &rels2 {
                let obs = knowledge.observation(kb1.neighbors(u1, r1), kb2.neighbors(u2, r2));
                out.entry((r1, r2)).or_default().push(obs);
            }
        }
    }
    out
}

/// Fits `(eps1, eps2)` for one relationship pair.
pub fn estimate_consistency(
    r1: RelId,
    r2: RelId,
    seeds: &[(EntityId, EntityId)],
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
    knowledge: &PairKnowledge,
    config: &PropagationConfig,
) -> (f64, f64) {
    let obs: Vec<Observation> = seeds
        .iter()
        .map(|&(u1, u2)| knowledge.observation(kb1.neighbors(u1, r1), kb2.neighbors(u2, r2)))
        .collect();
    let fit = fit_consistency(&obs, config);
    (fit.eps1, fit.eps2)
}

/// Fits every relationship pair observed on at least one seed.
pub fn estimate_table(
    seeds: &[(EntityId, EntityId)],
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
    knowledge: &PairKnowledge,
    config: &PropagationConfig,
) -> ConsistencyTable {
    let observations = collect_observations(seeds, kb1, kb2, knowledge);
    let fits: Vec<((RelId, RelId), MleFit)> = observations
        .into_par_iter()
        .map(|(key, obs)| (key, fit_consistency(&obs, config)))
        .collect();
    let mut table = ConsistencyTable::with_fallback(config.eps_min);
    for ((r1, r2), fit) in fits {
        table.insert(r1, r2, fit.eps1, fit.eps2);
    }
    table
}

/// The candidate neighbor pairs of one match under one label.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborProblem {
    /// `|N1|` and `|N2|`.
    pub n1: usize,
    pub n2: usize,
    /// `(u1', u2', prior)` for each pair in `(N1 x N2) ∩ V`.
    pub cand: Vec<(EntityId, EntityId, f64)>,
}

/// Indices of the candidates that take part in enumeration.
fn enumerated(problem: &NeighborProblem, k_enum: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..problem.cand.len()).collect();
    if idx.len() > k_enum {
        idx.sort_by(|&a, &b| problem.cand[b].2.total_cmp(&problem.cand[a].2).then(a.cmp(&b)));
        idx.truncate(k_enum);
        idx.sort_unstable();
    }
    idx
}

struct Subsets<'a> {
    problem: &'a NeighborProblem,
    members: Vec<usize>,
    left: Vec<usize>,
    right: Vec<usize>,
    ln_g: [Vec<f64>; 2],
}

impl<'a> Subsets<'a> {
    fn new(problem: &'a NeighborProblem, members: Vec<usize>, eps1: f64, eps2: f64) -> Self {
        let dense = |f: fn(&(EntityId, EntityId, f64)) -> EntityId| {
            let keys: Vec<EntityId> = members.iter().map(|&i| f(&problem.cand[i])).collect();
            let mut uniq = keys.clone();
            uniq.sort_unstable();
            uniq.dedup();
            keys.iter()
                .map(|k| uniq.binary_search(k).unwrap())
                .collect::<Vec<usize>>()
        };
        let left = dense(|c| c.0);
        let right = dense(|c| c.1);
        assert!(
            left.iter().max().map_or(0, |&m| m + 1) <= problem.n1
                && right.iter().max().map_or(0, |&m| m + 1) <= problem.n2,
            "more distinct candidate entities than neighbors"
        );
        let ln_g = |eps: f64, n: usize| -> Vec<f64> {
            (0..=n).map(|k| xlny(k as f64, eps) + xlny((n - k) as f64, 1.0 - eps)).collect()
        };
        Subsets {
            problem,
            left,
            right,
            ln_g: [ln_g(eps1, problem.n1), ln_g(eps2, problem.n2)],
            members,
        }
    }

    /// Log score of a subset given as a bitmask over `members`, or `None` when
    /// the mask is excluded by `one_to_one`.
    fn ln_score(&self, mask: u32, one_to_one: bool) -> Option<f64> {
        let mut used1 = 0u64;
        let mut used2 = 0u64;
        let mut ln_f = 0.0;
        for (bit, &i) in self.members.iter().enumerate() {
            let prior = self.problem.cand[i].2;
            if mask >> bit & 1 == 1 {
                let (b1, b2) = (1u64 << self.left[bit], 1u64 << self.right[bit]);
                if one_to_one && (used1 & b1 != 0 || used2 & b2 != 0) {
                    return None;
                }
                used1 |= b1;
                used2 |= b2;
                ln_f += prior.ln();
            } else {
                ln_f += (1.0 - prior).ln();
            }
        }
        let k1 = used1.count_ones() as usize;
        let k2 = used2.count_ones() as usize;
        Some(ln_f + self.ln_g[0][k1] + self.ln_g[1][k2])
    }

    fn marginals(&self, one_to_one: bool) -> Option<Vec<f64>> {
        let m = self.members.len();
        let scores: Vec<(u32, f64)> = (0..1u32 << m)
            .filter_map(|mask| self.ln_score(mask, one_to_one).map(|s| (mask, s)))
            .filter(|(_, s)| *s > f64::NEG_INFINITY)
            .collect();
        let top = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return None;
        }
        let mut z = 0.0;
        let mut acc = vec![0.0; m];
        for &(mask, s) in &scores {
            let w = (s - top).exp();
            z += w;
            for (bit, a) in acc.iter_mut().enumerate() {
                if mask >> bit & 1 == 1 {
                    *a += w;
                }
            }
        }
        Some(acc.into_iter().map(|a| (a / z).clamp(0.0, 1.0)).collect())
    }
}

/// Unnormalized score `f * g1 * g2` of the subset holding the candidates at
/// `chosen` (indices into `problem.cand`). Candidates outside the enumeration
/// window are ignored.
pub fn subset_score(problem: &NeighborProblem, chosen: &[usize], eps1: f64, eps2: f64) -> f64 {
    let members: Vec<usize> = (0..problem.cand.len()).collect();
    assert!(members.len() <= 32);
    let subsets = Subsets::new(problem, members, eps1, eps2);
    let mask = chosen.iter().fold(0u32, |m, &i| m | 1 << i);
    subsets.ln_score(mask, false).map_or(0.0, f64::exp)
}

/// Posterior match probability of every candidate, index-aligned with
/// `problem.cand`. Candidates beyond the `k_enum` highest priors get 0.
///
/// In one-to-one mode, if every admissible subset has zero score the
/// computation falls back to all subsets.
pub fn neighbor_posteriors(problem: &NeighborProblem, eps1: f64, eps2: f64, config: &PropagationConfig) -> Vec<f64> {
    let mut out = vec![0.0; problem.cand.len()];
    if problem.cand.is_empty() {
        return out;
    }
    let members = enumerated(problem, config.k_enum.min(30));
    let subsets = Subsets::new(problem, members.clone(), eps1, eps2);
    let one_to_one = config.subset_mode == SubsetMode::OneToOne;
    let marg = subsets
        .marginals(one_to_one)
        .or_else(|| if one_to_one { subsets.marginals(false) } else { None });
    if let Some(marg) = marg {
        for (&i, p) in members.iter().zip(marg) {
            out[i] = p;
        }
    }
    out
}

/// Chain-rule lower bound on the match probability at the end of a path.
pub fn path_lower_bound(edge_probs: &[f64]) -> f64 {
    edge_probs.iter().product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(i: u32) -> EntityId {
        EntityId(i)
    }

    fn worked_example() -> NeighborProblem {
        // Cradle = 0, Player = 1 on both sides.
        NeighborProblem {
            n1: 2,
            n2: 2,
            cand: vec![(e(0), e(0), 0.5), (e(1), e(1), 0.5), (e(0), e(1), 0.5)],
        }
    }

    #[test]
    fn worked_example_scores() {
        let p = worked_example();
        let s = subset_score(&p, &[0, 1], 0.95, 0.95);
        assert!((s - 0.5f64.powi(3) * 0.95f64.powi(4)).abs() < 1e-12);
        let s = subset_score(&p, &[2], 0.95, 0.95);
        assert!((s - 0.5f64.powi(3) * 0.95f64.powi(2) * 0.05f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn worked_example_marginals() {
        let p = worked_example();
        let m = neighbor_posteriors(&p, 0.95, 0.95, &PropagationConfig::default());
        assert!((0.97..=1.0).contains(&m[0]), "{m:?}");
        assert!((0.97..=1.0).contains(&m[1]), "{m:?}");
        assert!(m[2] <= 0.03, "{m:?}");
    }

    #[test]
    fn single_candidate_closed_form() {
        for &(q, e1, e2) in &[(0.3, 0.8, 0.6), (0.9, 0.2, 0.5), (0.5, 0.95, 0.95)] {
            let p = NeighborProblem {
                n1: 1,
                n2: 1,
                cand: vec![(e(0), e(0), q)],
            };
            let expected = q * e1 * e2 / (q * e1 * e2 + (1.0 - q) * (1.0 - e1) * (1.0 - e2));
            for mode in [SubsetMode::All, SubsetMode::OneToOne] {
                let cfg = PropagationConfig {
                    subset_mode: mode,
                    ..Default::default()
                };
                let m = neighbor_posteriors(&p, e1, e2, &cfg);
                assert!((m[0] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conflicting_certain_pairs_fall_back() {
        // Two prior-1 pairs sharing u1' admit no 1:1 subset with nonzero score.
        let p = NeighborProblem {
            n1: 1,
            n2: 2,
            cand: vec![(e(0), e(0), 1.0), (e(0), e(1), 1.0)],
        };
        let m = neighbor_posteriors(&p, 0.9, 0.9, &PropagationConfig::default());
        assert_eq!(m, vec![1.0, 1.0]);
    }

    #[test]
    fn candidates_beyond_window_get_zero() {
        let cand: Vec<_> = (0..14).map(|i| (e(i), e(i), 0.1 + 0.05 * i as f64)).collect();
        let p = NeighborProblem { n1: 14, n2: 14, cand };
        let m = neighbor_posteriors(&p, 0.9, 0.9, &PropagationConfig::default());
        assert_eq!(m[0], 0.0);
        assert_eq!(m[1], 0.0);
        assert!(m[2..].iter().all(|&x| x > 0.0));
    }

    #[test]
    fn path_bound_examples() {
        assert!((path_lower_bound(&[0.9, 0.9]) - 0.81).abs() < 1e-12);
        assert_eq!(path_lower_bound(&[]), 1.0);
        assert_eq!(path_lower_bound(&[0.5, 0.0, 0.9]), 0.0);
    }

    #[test]
    fn mle_boundaries() {
        let cfg = PropagationConfig::default();
        let fit = fit_consistency(&[Observation { n1: 1, n2: 1, lo: 1, hi: 1 }], &cfg);
        assert_eq!((fit.eps1, fit.eps2), (EPS_MAX, EPS_MAX));
        let fit = fit_consistency(&[Observation { n1: 1, n2: 1, lo: 0, hi: 0 }], &cfg);
        assert_eq!((fit.eps1, fit.eps2), (EPS_MIN, EPS_MIN));
        let fit = fit_consistency(&[], &cfg);
        assert_eq!((fit.eps1, fit.eps2), (EPS_MIN, EPS_MIN));
        let fit = fit_consistency(&[Observation { n1: 0, n2: 3, lo: 0, hi: 0 }], &cfg);
        assert_eq!((fit.eps1, fit.eps2), (EPS_MIN, EPS_MIN));
    }

    #[test]
    fn mle_asymmetric_sizes() {
        // Two of two values on side 1 match, two of four on side 2.
        let cfg = PropagationConfig::default();
        let fit = fit_consistency(&[Observation { n1: 2, n2: 4, lo: 2, hi: 2 }], &cfg);
        assert_eq!(fit.eps1, EPS_MAX);
        assert!((fit.eps2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pair_knowledge_bounds() {
        let mut k = PairKnowledge::default();
        k.matches.insert((e(0), e(10)));
        k.possible.extend([(e(0), e(10)), (e(1), e(10)), (e(1), e(11))]);
        let obs = k.observation(&[e(0), e(1), e(2)], &[e(10), e(11)]);
        assert_eq!(obs, Observation { n1: 3, n2: 2, lo: 1, hi: 2 });
    }

    /// Direct enumeration with plain products over explicit subsets.
    fn oracle(p: &NeighborProblem, eps1: f64, eps2: f64, one_to_one: bool) -> Vec<f64> {
        let n = p.cand.len();
        let mut z = 0.0;
        let mut acc = vec![0.0; n];
        for mask in 0u32..1 << n {
            let chosen: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            let lefts: HashSet<EntityId> = chosen.iter().map(|&i| p.cand[i].0).collect();
            let rights: HashSet<EntityId> = chosen.iter().map(|&i| p.cand[i].1).collect();
            if one_to_one && (lefts.len() < chosen.len() || rights.len() < chosen.len()) {
                continue;
            }
            let mut w = 1.0;
            for (i, c) in p.cand.iter().enumerate() {
                w *= if chosen.contains(&i) { c.2 } else { 1.0 - c.2 };
            }
            w *= eps1.powi(lefts.len() as i32) * (1.0 - eps1).powi((p.n1 - lefts.len()) as i32);
            w *= eps2.powi(rights.len() as i32) * (1.0 - eps2).powi((p.n2 - rights.len()) as i32);
            z += w;
            for &i in &chosen {
                acc[i] += w;
            }
        }
        acc.into_iter().map(|a| a / z).collect()
    }

    fn problem_strategy(max_cand: usize) -> impl Strategy<Value = NeighborProblem> {
        (1usize..5, 1usize..5).prop_flat_map(move |(n1, n2)| {
            proptest::collection::btree_set((0..n1 as u32, 0..n2 as u32), 1..=max_cand.min(n1 * n2)).prop_flat_map(
                move |keys| {
                    let k = keys.len();
                    let keys: Vec<_> = keys.into_iter().collect();
                    proptest::collection::vec(0.01f64..0.99, k).prop_map(move |priors| NeighborProblem {
                        n1,
                        n2,
                        cand: keys.iter().zip(priors).map(|(&(a, b), q)| (e(a), e(b), q)).collect(),
                    })
                },
            )
        })
    }

    proptest! {
        #[test]
        fn posteriors_match_oracle(p in problem_strategy(10), e1 in 0.02f64..0.98, e2 in 0.02f64..0.98, all in any::<bool>()) {
            let cfg = PropagationConfig {
                subset_mode: if all { SubsetMode::All } else { SubsetMode::OneToOne },
                ..Default::default()
            };
            let got = neighbor_posteriors(&p, e1, e2, &cfg);
            let want = oracle(&p, e1, e2, !all);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-9, "{} vs {}", g, w);
                prop_assert!((0.0..=1.0).contains(g));
            }
        }

        #[test]
        fn raising_a_prior_never_lowers_its_marginal(
            p in problem_strategy(6),
            idx in any::<proptest::sample::Index>(),
            bump in 0.0f64..0.5,
            e1 in 0.05f64..0.95,
            e2 in 0.05f64..0.95,
        ) {
            let cfg = PropagationConfig::default();
            let i = idx.index(p.cand.len());
            let before = neighbor_posteriors(&p, e1, e2, &cfg)[i];
            let mut q = p.clone();
            q.cand[i].2 = (q.cand[i].2 + bump).min(0.99);
            let after = neighbor_posteriors(&q, e1, e2, &cfg)[i];
            prop_assert!(after >= before - 1e-12);
        }

        #[test]
        fn fixed_point_ascends(
            obs in proptest::collection::vec((1usize..6, 1usize..6, 0usize..6, 0usize..6), 1..6),
            seed in any::<u64>(),
        ) {
            let obs: Vec<Observation> = obs.into_iter().map(|(n1, n2, a, b)| {
                let m = n1.min(n2);
                let (lo, hi) = (a.min(b).min(m), a.max(b).min(m));
                Observation { n1, n2, lo, hi }
            }).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = obs.iter().map(|o| rand::Rng::gen_range(&mut rng, o.lo..=o.hi)).collect();
            let (_, trace) = fixed_point(&obs, start, &PropagationConfig::default());
            for w in trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", trace);
            }
        }

        #[test]
        fn path_bound_is_exp_of_summed_lengths(probs in proptest::collection::vec(0.01f64..1.0, 0..8)) {
            let total: f64 = probs.iter().map(|&p| crate::er_graph::edge_length(p)).sum();
            prop_assert!((path_lower_bound(&probs) - (-total).exp()).abs() < 1e-12);
            for k in 1..probs.len() {
                prop_assert!(path_lower_bound(&probs[..k]) >= path_lower_bound(&probs[..k + 1]));
            }
        }
    }
}
