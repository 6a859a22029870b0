//! The human-machine loop.
//!
//! [`prepare`] runs the offline stages once: blocking, attribute matching,
//! pruning and ER-graph construction. [`Engine::run`] then alternates
//! consistency estimation, propagation, question selection, label collection
//! and truth inference until nothing useful is left to ask, and finishes with
//! the isolated-pair classifier.

mod formats;
mod metrics;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{
    build_similarity_vectors, generate_candidates, match_attributes_1to1, prune, AttributeMatch, CandidateStats,
    EntityPair, MatchSets, SimilarityVector,
};
use crate::crowd::{
    simulate_answer, unix_now, AttributeRow, LabelLog, NeighborView, Neighborhood, ProgressSnapshot, QuestionView,
    RoundRobin, SessionStatus, SharedDesk, Votes, Worker, DEFAULT_ASSIGNMENTS,
};
use crate::er_graph::{build_er_graph, to_probabilistic, ErGraph, ProbErGraph, VertexId};
use crate::error::{Error, Result};
use crate::kb::{AttrId, EntityId, KnowledgeBase};
use crate::propagation::{estimate_table, PairKnowledge, PropagationConfig};
use crate::selection::{compute_inferred_sets, select_questions, zeta_for, SelectionProblem};
use crate::text_sim::DEFAULT_LITERAL_THRESHOLD;
use crate::truth::{
    resolve_labels, ForestConfig, IsolatedClassifier, PairBook, PairState, QuestionResult, Resolution, Thresholds,
    TrainingRole, DEFAULT_PSI,
};

pub use formats::{load_pairs, read_matches, read_pairs, write_matches, FinalMatch, PairSet, Provenance};
pub use metrics::{pair_completeness, reduction_ratio, score, Metrics, Scores};

/// Label attributes tried, in order, when none is configured.
pub const LABEL_ATTRIBUTE_GUESSES: [&str; 4] = ["label", "rdfs:label", "name", "title"];
const NEIGHBORS_SHOWN: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Pruning depth.
    pub k: usize,
    /// Inference threshold on path probability.
    pub tau: f64,
    /// Questions per loop.
    pub mu: usize,
    pub t_label: f64,
    pub literal_threshold: f64,
    /// Minimum similarity for an attribute match.
    pub s_min: f64,
    pub psi: f64,
    pub thresholds: Thresholds,
    pub assignments: usize,
    /// Total question budget; `None` is unlimited.
    pub budget: Option<usize>,
    /// How often one pair may be asked before it is given up.
    pub max_asks: usize,
    pub seed: u64,
    pub label_attr1: Option<String>,
    pub label_attr2: Option<String>,
    pub propagation: PropagationConfig,
    #[serde(skip)]
    pub forest: ForestConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k: 4,
            tau: 0.9,
            mu: 10,
            t_label: 0.3,
            literal_threshold: DEFAULT_LITERAL_THRESHOLD,
            s_min: 0.1,
            psi: DEFAULT_PSI,
            thresholds: Thresholds::default(),
            assignments: DEFAULT_ASSIGNMENTS,
            budget: None,
            max_asks: 3,
            seed: 42,
            label_attr1: None,
            label_attr2: None,
            propagation: PropagationConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.mu == 0 {
            return bad("mu must be at least 1");
        }
        if !(self.t_label > 0.0 && self.t_label <= 1.0) {
            return bad("t_label must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.literal_threshold) || !(0.0..=1.0).contains(&self.psi) {
            return bad("similarity thresholds must lie in [0, 1]");
        }
        let Thresholds { t_hi, t_lo } = self.thresholds;
        if !(0.0 <= t_lo && t_lo < t_hi && t_hi <= 1.0) {
            return bad("need 0 <= t_lo < t_hi <= 1");
        }
        if self.assignments == 0 {
            return bad("assignments per question must be at least 1");
        }
        if self.max_asks == 0 {
            return bad("max_asks must be at least 1");
        }
        Ok(())
    }
}

fn pick_label_attr(kb: &KnowledgeBase, configured: Option<&str>, which: &str) -> Result<Option<AttrId>> {
    match configured {
        Some(name) => kb
            .attribute(name)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{which} has no attribute {name:?}"))),
        None => Ok(LABEL_ATTRIBUTE_GUESSES.iter().find_map(|n| kb.attribute(n))),
    }
}

/// Output of the offline stages.
#[derive(Debug, Clone)]
pub struct Preparation {
    pub sets: MatchSets,
    pub stats: CandidateStats,
    pub label_attrs: (Option<AttrId>, Option<AttrId>),
    pub attribute_matches: Vec<AttributeMatch>,
    /// Vertices are the retained pairs plus the initial matches.
    pub graph: ErGraph,
    /// Similarity vector of every vertex.
    pub vectors: Vec<SimilarityVector>,
    pub initial: Vec<VertexId>,
}

impl Preparation {
    pub fn retained_names(&self, kb1: &KnowledgeBase, kb2: &KnowledgeBase) -> PairSet {
        pair_names(self.graph.vertices(), kb1, kb2)
    }

    pub fn candidate_names(&self, kb1: &KnowledgeBase, kb2: &KnowledgeBase) -> PairSet {
        pair_names(&self.sets.candidates, kb1, kb2)
    }
}

fn pair_names(pairs: &[EntityPair], kb1: &KnowledgeBase, kb2: &KnowledgeBase) -> PairSet {
    pairs
        .iter()
        .map(|p| (kb1.entity_name(p.u1), kb2.entity_name(p.u2)))
        .collect()
}

pub fn prepare(kb1: &KnowledgeBase, kb2: &KnowledgeBase, config: &EngineConfig) -> Result<Preparation> {
    config.validate()?;
    let la1 = pick_label_attr(kb1, config.label_attr1.as_deref(), "KB1")?;
    let la2 = pick_label_attr(kb2, config.label_attr2.as_deref(), "KB2")?;
    if la1.is_none() || la2.is_none() {
        return Err(Error::Config(format!(
            "no label attribute found; tried {}",
            LABEL_ATTRIBUTE_GUESSES.join(", ")
        )));
    }
    let (mut sets, stats) = generate_candidates(kb1, kb2, la1, la2, config.t_label);
    let initial_pairs: Vec<EntityPair> = sets.initial_pairs().copied().collect();
    let attribute_matches = match_attributes_1to1(kb1, kb2, &initial_pairs, config.literal_threshold, config.s_min);
    let all_vectors = build_similarity_vectors(&sets.candidates, &attribute_matches, kb1, kb2);

    let members: Vec<usize> = (0..sets.candidates.len()).collect();
    let mut retained = prune(&members, &sets.candidates, &all_vectors, config.k);
    retained.extend(sets.initial.iter().copied());
    retained.sort_unstable();
    retained.dedup();
    sets.retained = retained;

    let vertices: Vec<EntityPair> = sets.retained_pairs().copied().collect();
    let graph = build_er_graph(&vertices, kb1, kb2);
    let vectors = sets.retained.iter().map(|&i| all_vectors[i].clone()).collect();
    let initial = sets
        .initial_pairs()
        .filter_map(|p| graph.find(p.u1, p.u2))
        .collect();
    tracing::info!(
        candidates = sets.candidates.len(),
        initial = sets.initial.len(),
        attribute_matches = attribute_matches.len(),
        retained = sets.retained.len(),
        edges = graph.num_edges(),
        "prepared"
    );
    Ok(Preparation {
        sets,
        stats,
        label_attrs: (la1, la2),
        attribute_matches,
        graph,
        vectors,
        initial,
    })
}

/// Supplies answers for a batch of questions.
pub trait LabelSource {
    /// Votes for each question, in batch order.
    fn collect(&mut self, batch: &[(VertexId, QuestionView)]) -> Result<Vec<Votes>>;

    /// Called after each loop and once when the run ends.
    fn report(&mut self, _status: &SessionStatus, _progress: &ProgressSnapshot) {}
}

/// Simulated workers answering from a gold standard.
pub struct SimulatedCrowd {
    pool: Vec<Worker>,
    n: usize,
    gold: PairSet,
    rng: ChaCha8Rng,
    robin: RoundRobin,
    log: Option<LabelLog>,
}

impl SimulatedCrowd {
    pub fn new(pool: Vec<Worker>, n: usize, gold: PairSet, seed: u64) -> Result<Self> {
        if pool.len() < n || n == 0 {
            return Err(Error::PoolTooSmall {
                available: pool.len(),
                required: n.max(1),
            });
        }
        Ok(SimulatedCrowd {
            pool,
            n,
            gold,
            rng: ChaCha8Rng::seed_from_u64(seed),
            robin: RoundRobin::default(),
            log: None,
        })
    }

    /// `n` workers sharing one error rate.
    pub fn uniform(error_rate: f64, n: usize, gold: PairSet, seed: u64) -> Result<Self> {
        let pool = (1..=n)
            .map(|i| Worker::simulated(format!("sim{i}"), error_rate))
            .collect::<Result<Vec<_>>>()?;
        Self::new(pool, n, gold, seed)
    }

    pub fn with_log(mut self, log: LabelLog) -> Self {
        self.log = Some(log);
        self
    }
}

impl LabelSource for SimulatedCrowd {
    fn collect(&mut self, batch: &[(VertexId, QuestionView)]) -> Result<Vec<Votes>> {
        let ids: Vec<VertexId> = batch.iter().map(|(v, _)| *v).collect();
        let assignments = self.robin.assign(&ids, &self.pool, self.n)?;
        let by_id: HashMap<&str, &Worker> = self.pool.iter().map(|w| (w.id.as_str(), w)).collect();
        let mut out = Vec::with_capacity(batch.len());
        for (k, (_, view)) in batch.iter().enumerate() {
            let truth = self.gold.contains(&view.u1, &view.u2);
            if !truth {
                tracing::trace!(u1 = %view.u1, u2 = %view.u2, "not in gold standard, answering non_match");
            }
            let mut votes = Vec::with_capacity(self.n);
            for a in &assignments[k * self.n..(k + 1) * self.n] {
                let worker = by_id[a.worker.as_str()];
                let answer = simulate_answer(worker, truth, &mut self.rng);
                if let Some(log) = self.log.as_mut() {
                    log.append(&view.u1, &view.u2, &worker.id, answer, unix_now())?;
                }
                votes.push((worker.quality, answer));
            }
            out.push(votes);
        }
        Ok(out)
    }
}

/// Human workers reached through a shared labeling desk.
pub struct DeskSource {
    desk: Arc<SharedDesk>,
}

impl DeskSource {
    pub fn new(desk: Arc<SharedDesk>) -> Self {
        DeskSource { desk }
    }
}

impl LabelSource for DeskSource {
    fn collect(&mut self, batch: &[(VertexId, QuestionView)]) -> Result<Vec<Votes>> {
        self.desk.lock().open_batch(batch.to_vec())?;
        self.desk.notify();
        let mut results: HashMap<VertexId, Votes> = self.desk.wait_for_batch()?.into_iter().collect();
        Ok(batch
            .iter()
            .map(|(v, _)| results.remove(v).unwrap_or_default())
            .collect())
    }

    fn report(&mut self, status: &SessionStatus, progress: &ProgressSnapshot) {
        let mut desk = self.desk.lock();
        desk.set_status(status.clone());
        desk.set_progress(progress.clone());
    }
}

/// What happened in one loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub index: usize,
    /// Size of the question candidate set.
    pub candidates: usize,
    pub asked: Vec<VertexId>,
    pub resolutions: Vec<Resolution>,
    pub confirmed_matches: usize,
    pub confirmed_non_matches: usize,
    pub inferred: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    NothingToAsk,
    NoBenefit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub matches: Vec<FinalMatch>,
    pub loops: Vec<LoopReport>,
    pub questions: usize,
    pub labels: usize,
    pub stop: StopReason,
    pub metrics: Option<Metrics>,
}

impl RunReport {
    pub fn predicted(&self) -> PairSet {
        self.matches.iter().map(|m| (m.u1.as_str(), m.u2.as_str())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dist(f64, VertexId);

impl Eq for Dist {}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest distance from any source, truncated at `zeta`.
fn multi_source_distances(pg: &ProbErGraph, sources: &[VertexId], zeta: f64) -> HashMap<VertexId, f64> {
    let mut dist: HashMap<VertexId, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist.insert(s, 0.0);
        heap.push(Dist(0.0, s));
    }
    while let Some(Dist(d, v)) = heap.pop() {
        if dist.get(&v).is_some_and(|&best| d > best) {
            continue;
        }
        for e in pg.out_edges(v) {
            let nd = d + e.length;
            if nd <= zeta + 1e-12 && dist.get(&e.dst).is_none_or(|&best| nd < best) {
                dist.insert(e.dst, nd);
                heap.push(Dist(nd, e.dst));
            }
        }
    }
    dist
}

pub struct Engine<'a> {
    kb1: &'a KnowledgeBase,
    kb2: &'a KnowledgeBase,
    prep: &'a Preparation,
    config: &'a EngineConfig,
    gold: Option<&'a PairSet>,
}

struct LoopState {
    book: PairBook,
    asks: Vec<usize>,
    posteriors: HashMap<VertexId, f64>,
    initial: HashSet<VertexId>,
}

impl<'a> Engine<'a> {
    pub fn new(
        kb1: &'a KnowledgeBase,
        kb2: &'a KnowledgeBase,
        prep: &'a Preparation,
        config: &'a EngineConfig,
        gold: Option<&'a PairSet>,
    ) -> Self {
        Engine {
            kb1,
            kb2,
            prep,
            config,
            gold,
        }
    }

    fn graph(&self) -> &ErGraph {
        &self.prep.graph
    }

    fn pair_name(&self, v: VertexId) -> (String, String) {
        let p = self.graph().vertex(v);
        (
            self.kb1.entity_name(p.u1).to_string(),
            self.kb2.entity_name(p.u2).to_string(),
        )
    }

    fn probabilistic_graph(&self, book: &PairBook) -> ProbErGraph {
        let g = self.graph();
        let seeds: Vec<(EntityId, EntityId)> = book
            .confirmed_matches()
            .map(|v| {
                let p = g.vertex(v);
                (p.u1, p.u2)
            })
            .collect();
        let mut knowledge = PairKnowledge {
            matches: seeds.iter().copied().collect(),
            possible: HashSet::new(),
        };
        knowledge.possible = g
            .vertices()
            .iter()
            .enumerate()
            .filter(|(v, _)| book.state(*v as VertexId) != PairState::NonMatch)
            .map(|(_, p)| (p.u1, p.u2))
            .collect();
        let table = estimate_table(&seeds, self.kb1, self.kb2, &knowledge, &self.config.propagation);
        to_probabilistic(g, &table, &book.effective_priors(), &self.config.propagation)
    }

    /// Unconfirmed, non-rejected vertices reachable from a confirmed match
    /// with path probability at least tau.
    fn inferred(&self, pg: &ProbErGraph, book: &PairBook) -> HashMap<VertexId, f64> {
        let sources: Vec<VertexId> = book.confirmed_matches().collect();
        multi_source_distances(pg, &sources, zeta_for(self.config.tau))
            .into_iter()
            .filter(|&(v, _)| !book.is_confirmed(v))
            .map(|(v, d)| (v, (-d).exp()))
            .collect()
    }

    pub fn question_view(&self, v: VertexId) -> QuestionView {
        let p = self.graph().vertex(v);
        let (la1, la2) = self.prep.label_attrs;
        let label = |kb: &KnowledgeBase, la: Option<AttrId>, u: EntityId| {
            la.and_then(|a| kb.attr_values(u, a).first().map(|l| l.raw().to_string()))
        };
        let values = |kb: &KnowledgeBase, u: EntityId, a: AttrId| -> Vec<String> {
            kb.attr_values(u, a).iter().map(|l| l.raw().to_string()).collect()
        };
        let attributes = self
            .prep
            .attribute_matches
            .iter()
            .map(|m| AttributeRow {
                left_attribute: self.kb1.attribute_name(m.a1).to_string(),
                right_attribute: self.kb2.attribute_name(m.a2).to_string(),
                left: values(self.kb1, p.u1, m.a1),
                right: values(self.kb2, p.u2, m.a2),
            })
            .collect();
        let neighbors = |kb: &KnowledgeBase, la: Option<AttrId>, u: EntityId| -> Vec<NeighborView> {
            kb.out_edges(u)
                .iter()
                .take(NEIGHBORS_SHOWN)
                .map(|&(r, n)| NeighborView {
                    relationship: kb.relationship_name(r).to_string(),
                    entity: kb.entity_name(n).to_string(),
                    label: label(kb, la, n),
                })
                .collect()
        };
        QuestionView {
            question_id: 0,
            u1: self.kb1.entity_name(p.u1).to_string(),
            u2: self.kb2.entity_name(p.u2).to_string(),
            u1_label: label(self.kb1, la1, p.u1),
            u2_label: label(self.kb2, la2, p.u2),
            attributes,
            neighborhood: Neighborhood {
                left: neighbors(self.kb1, la1, p.u1),
                right: neighbors(self.kb2, la2, p.u2),
            },
        }
    }

    fn snapshot(&self, state: &LoopState, loop_index: usize, asked: usize, inferred: usize, remaining: usize) -> ProgressSnapshot {
        let matches = state.book.confirmed_matches().count();
        let non_matches = state.book.confirmed_non_matches().count();
        let mut snap = ProgressSnapshot {
            loop_index,
            asked,
            labels_received: 0,
            confirmed_matches: matches,
            confirmed_non_matches: non_matches,
            inferred_matches: inferred,
            resolved: matches + non_matches + inferred,
            remaining,
            finished: false,
            precision: None,
            recall: None,
            f1: None,
        };
        if let Some(gold) = self.gold {
            let confirmed: PairSet = state
                .book
                .confirmed_matches()
                .map(|v| self.pair_name(v))
                .collect();
            let s = score(&confirmed, gold);
            snap.precision = Some(s.precision);
            snap.recall = Some(s.recall);
            snap.f1 = Some(s.f1);
        }
        snap
    }

    pub fn run(&self, source: &mut dyn LabelSource) -> Result<RunReport> {
        self.config.validate()?;
        let g = self.graph();
        let n = g.num_vertices();
        let mut state = LoopState {
            book: PairBook::new(g.vertices().iter().map(|p| p.prior).collect()),
            asks: vec![0; n],
            posteriors: HashMap::new(),
            initial: self.prep.initial.iter().copied().collect(),
        };
        let seeds: Vec<Resolution> = self
            .prep
            .initial
            .iter()
            .map(|&v| Resolution {
                pair: v,
                state: PairState::Match,
                posterior: 1.0,
            })
            .collect();
        state.book.apply_resolutions(&seeds);

        let zeta = zeta_for(self.config.tau);
        let mut loops = Vec::new();
        let mut asked_total = 0usize;
        let mut labels = 0usize;
        let stop = loop {
            let pg = self.probabilistic_graph(&state.book);
            let inferred = self.inferred(&pg, &state.book);
            let c: Vec<VertexId> = (0..n as VertexId)
                .filter(|&v| !state.book.is_confirmed(v))
                .filter(|&v| !g.is_isolated(v))
                .filter(|v| !inferred.contains_key(v))
                .filter(|&v| state.asks[v as usize] < self.config.max_asks)
                .collect();

            let status = SessionStatus {
                loop_index: loops.len(),
                asked: asked_total,
                resolved: state.book.confirmed_matches().count()
                    + state.book.confirmed_non_matches().count()
                    + inferred.len(),
                remaining: c.len(),
                budget: self.config.budget,
                finished: false,
            };
            source.report(&status, &self.snapshot(&state, loops.len(), asked_total, inferred.len(), c.len()));

            let left = self.config.budget.map_or(usize::MAX, |b| b.saturating_sub(asked_total));
            if left == 0 {
                break StopReason::Budget;
            }
            if c.is_empty() {
                break StopReason::NothingToAsk;
            }
            let inf = compute_inferred_sets(&pg, &c, zeta);
            let problem = SelectionProblem {
                candidates: c.clone(),
                priors: state.book.effective_priors(),
                mu: self.config.mu.min(left),
            };
            let chosen = select_questions(&problem, &inf);
            if chosen.is_empty() {
                break StopReason::NoBenefit;
            }

            let batch: Vec<(VertexId, QuestionView)> = chosen.iter().map(|&v| (v, self.question_view(v))).collect();
            let votes = source.collect(&batch)?;
            let results: Vec<QuestionResult> = chosen
                .iter()
                .zip(votes)
                .map(|(&v, votes)| {
                    labels += votes.len();
                    QuestionResult {
                        pair: v,
                        prior: state.book.effective_prior(v),
                        votes,
                    }
                })
                .collect();
            let resolutions = resolve_labels(&results, self.config.thresholds);
            for r in &resolutions {
                state.asks[r.pair as usize] += 1;
                state.posteriors.insert(r.pair, r.posterior);
            }
            state.book.apply_resolutions(&resolutions);
            asked_total += chosen.len();
            tracing::debug!(
                loop_index = loops.len(),
                asked = chosen.len(),
                candidates = c.len(),
                "loop finished"
            );
            loops.push(LoopReport {
                index: loops.len(),
                candidates: c.len(),
                asked: chosen,
                resolutions,
                confirmed_matches: state.book.confirmed_matches().count(),
                confirmed_non_matches: state.book.confirmed_non_matches().count(),
                inferred: inferred.len(),
            });
        };

        let matches = self.finalize(&state);
        let mut report = RunReport {
            matches,
            loops,
            questions: asked_total,
            labels,
            stop,
            metrics: None,
        };
        if let Some(gold) = self.gold {
            report.metrics = Some(self.metrics(&report, gold));
        }
        let status = SessionStatus {
            loop_index: report.loops.len(),
            asked: asked_total,
            resolved: report.matches.len(),
            remaining: 0,
            budget: self.config.budget,
            finished: true,
        };
        let mut snap = self.snapshot(&state, report.loops.len(), asked_total, 0, 0);
        snap.finished = true;
        if let Some(m) = &report.metrics {
            snap.precision = Some(m.precision);
            snap.recall = Some(m.recall);
            snap.f1 = Some(m.f1);
        }
        source.report(&status, &snap);
        Ok(report)
    }

    fn finalize(&self, state: &LoopState) -> Vec<FinalMatch> {
        let g = self.graph();
        let book = &state.book;
        let pg = self.probabilistic_graph(book);
        let inferred = self.inferred(&pg, book);
        let mut out = Vec::new();
        for v in book.confirmed_matches() {
            let (u1, u2) = self.pair_name(v);
            let (provenance, probability) = if state.initial.contains(&v) {
                (Provenance::Initial, 1.0)
            } else {
                (Provenance::Labeled, state.posteriors.get(&v).copied().unwrap_or(1.0))
            };
            out.push(FinalMatch {
                u1,
                u2,
                provenance,
                probability,
            });
        }
        let mut inferred_sorted: Vec<(VertexId, f64)> = inferred.iter().map(|(&v, &p)| (v, p)).collect();
        inferred_sorted.sort_by_key(|&(v, _)| v);
        for (v, probability) in inferred_sorted {
            let (u1, u2) = self.pair_name(v);
            out.push(FinalMatch {
                u1,
                u2,
                provenance: Provenance::Inferred,
                probability,
            });
        }

        let isolated: Vec<VertexId> = (0..g.num_vertices() as VertexId)
            .filter(|&v| g.is_isolated(v) && !book.is_confirmed(v))
            .collect();
        if !isolated.is_empty() && book.confirmed_matches().next().is_some() {
            let roles = (0..g.num_vertices() as VertexId)
                .map(|v| match book.state(v) {
                    PairState::Match => TrainingRole::Positive,
                    PairState::NonMatch => TrainingRole::Negative,
                    _ if g.is_isolated(v) || inferred.contains_key(&v) => TrainingRole::Skip,
                    _ => TrainingRole::Negative,
                })
                .collect();
            let mut classifier = IsolatedClassifier::new(
                self.prep.vectors.clone(),
                roles,
                self.config.psi,
                ForestConfig {
                    seed: self.config.seed,
                    ..self.config.forest.clone()
                },
            );
            for v in isolated {
                let vote = classifier.vote(v as usize);
                if vote > 0.5 {
                    let (u1, u2) = self.pair_name(v);
                    out.push(FinalMatch {
                        u1,
                        u2,
                        provenance: Provenance::Classified,
                        probability: vote,
                    });
                }
            }
        }
        out
    }

    fn metrics(&self, report: &RunReport, gold: &PairSet) -> Metrics {
        let s = score(&report.predicted(), gold);
        Metrics {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            reduction_ratio: reduction_ratio(self.prep.sets.retained.len(), self.prep.sets.candidates.len()),
            pair_completeness: pair_completeness(&self.prep.retained_names(self.kb1, self.kb2), gold),
            questions: report.questions,
            loops: report.loops.len(),
            candidates: self.prep.sets.candidates.len(),
            retained: self.prep.sets.retained.len(),
        }
    }
}

/// Where labels come from in [`run_pipeline`].
pub enum LabelMode {
    /// Simulated workers answering from the gold standard. Without an explicit
    /// pool, `assignments` workers share `error_rate`.
    Simulated {
        error_rate: f64,
        workers: Option<Vec<Worker>>,
        log: Option<LabelLog>,
    },
    /// Human workers through a labeling desk.
    Service(Arc<SharedDesk>),
}

/// Prepares and runs the whole pipeline.
pub fn run_pipeline(
    kb1: &KnowledgeBase,
    kb2: &KnowledgeBase,
    gold: Option<&PairSet>,
    config: &EngineConfig,
    mode: LabelMode,
) -> Result<RunReport> {
    config.validate()?;
    let mut source: Box<dyn LabelSource> = match mode {
        LabelMode::Simulated { error_rate, workers, log } => {
            let gold = gold.ok_or_else(|| Error::Config("no label source: simulation needs a gold standard".into()))?;
            let crowd = match workers {
                Some(pool) => SimulatedCrowd::new(pool, config.assignments, gold.clone(), config.seed)?,
                None => SimulatedCrowd::uniform(error_rate, config.assignments, gold.clone(), config.seed)?,
            };
            Box::new(match log {
                Some(log) => crowd.with_log(log),
                None => crowd,
            })
        }
        LabelMode::Service(desk) => Box::new(DeskSource::new(desk)),
    };
    let prep = prepare(kb1, kb2, config)?;
    Engine::new(kb1, kb2, &prep, config, gold).run(source.as_mut())
}
