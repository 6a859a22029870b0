//! Label fusion, resolution bookkeeping and the isolated-pair classifier.

pub mod forest;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::candidates::SimilarityVector;
use crate::er_graph::VertexId;
use crate::text_sim::jaccard;

pub use forest::{ForestConfig, RandomForest};

pub const DEFAULT_T_HI: f64 = 0.8;
pub const DEFAULT_T_LO: f64 = 0.2;
pub const DEFAULT_PSI: f64 = 0.9;
/// Bounds on the match probability of an unresolved pair.
pub const PRIOR_FLOOR: f64 = 0.01;
pub const PRIOR_CEIL: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Match,
    NonMatch,
    Unsure,
}

impl Answer {
    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Match => "match",
            Answer::NonMatch => "non_match",
            Answer::Unsure => "unsure",
        }
    }

    pub fn flipped(self) -> Answer {
        match self {
            Answer::Match => Answer::NonMatch,
            Answer::NonMatch => Answer::Match,
            Answer::Unsure => Answer::Unsure,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Answer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "match" => Ok(Answer::Match),
            "non_match" => Ok(Answer::NonMatch),
            "unsure" => Ok(Answer::Unsure),
            other => Err(format!("unknown answer {other:?}")),
        }
    }
}

/// One worker's answer to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub question: VertexId,
    pub worker: String,
    pub answer: Answer,
    pub timestamp: u64,
}

/// Bayes posterior of a match given the qualities of the workers who said
/// "match" and of those who said "non-match".
pub fn posterior(prior: f64, match_votes: &[f64], non_match_votes: &[f64]) -> f64 {
    let mut ratio = 1.0;
    for &l in match_votes {
        assert!(l > 0.0 && l < 1.0, "worker quality {l} outside (0, 1)");
        ratio *= (1.0 - l) / l;
    }
    for &l in non_match_votes {
        assert!(l > 0.0 && l < 1.0, "worker quality {l} outside (0, 1)");
        ratio *= l / (1.0 - l);
    }
    let denom = prior + (1.0 - prior) * ratio;
    if denom == 0.0 {
        0.0
    } else {
        prior / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairState {
    Unresolved,
    Match,
    NonMatch,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub pair: VertexId,
    pub state: PairState,
    pub posterior: f64,
}

/// Every collected answer to one question, with the prior at asking time.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionResult {
    pub pair: VertexId,
    pub prior: f64,
    /// `(quality, answer)` per assignment.
    pub votes: Vec<(f64, Answer)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t_hi: f64,
    pub t_lo: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            t_hi: DEFAULT_T_HI,
            t_lo: DEFAULT_T_LO,
        }
    }
}

pub fn resolve_question(result: &QuestionResult, thresholds: Thresholds) -> Resolution {
    let yes: Vec<f64> = result
        .votes
        .iter()
        .filter(|(_, a)| *a == Answer::Match)
        .map(|(l, _)| *l)
        .collect();
    let no: Vec<f64> = result
        .votes
        .iter()
        .filter(|(_, a)| *a == Answer::NonMatch)
        .map(|(l, _)| *l)
        .collect();
    let post = posterior(result.prior, &yes, &no);
    let state = if post >= thresholds.t_hi {
        PairState::Match
    } else if post <= thresholds.t_lo {
        PairState::NonMatch
    } else {
        PairState::Hard
    };
    Resolution {
        pair: result.pair,
        state,
        posterior: post,
    }
}

pub fn resolve_labels(results: &[QuestionResult], thresholds: Thresholds) -> Vec<Resolution> {
    results.iter().map(|r| resolve_question(r, thresholds)).collect()
}

/// Per-vertex resolution state and current match probability.
#[derive(Debug, Clone)]
pub struct PairBook {
    state: Vec<PairState>,
    prior: Vec<f64>,
}

impl PairBook {
    pub fn new(priors: Vec<f64>) -> Self {
        PairBook {
            state: vec![PairState::Unresolved; priors.len()],
            prior: priors,
        }
    }

    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    pub fn state(&self, v: VertexId) -> PairState {
        self.state[v as usize]
    }

    pub fn is_confirmed(&self, v: VertexId) -> bool {
        matches!(self.state(v), PairState::Match | PairState::NonMatch)
    }

    /// Stored prior, or the damped posterior of a hard question.
    pub fn raw_prior(&self, v: VertexId) -> f64 {
        self.prior[v as usize]
    }

    /// 1 for confirmed matches, 0 for confirmed non-matches, the clamped
    /// stored prior otherwise.
    pub fn effective_prior(&self, v: VertexId) -> f64 {
        match self.state(v) {
            PairState::Match => 1.0,
            PairState::NonMatch => 0.0,
            _ => self.prior[v as usize].clamp(PRIOR_FLOOR, PRIOR_CEIL),
        }
    }

    pub fn effective_priors(&self) -> Vec<f64> {
        (0..self.len() as VertexId).map(|v| self.effective_prior(v)).collect()
    }

    pub fn confirmed_matches(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.vertices_in(PairState::Match)
    }

    pub fn confirmed_non_matches(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.vertices_in(PairState::NonMatch)
    }

    fn vertices_in(&self, s: PairState) -> impl Iterator<Item = VertexId> + '_ {
        self.state
            .iter()
            .enumerate()
            .filter(move |(_, &st)| st == s)
            .map(|(i, _)| i as VertexId)
    }

    /// Records resolutions. Hard questions keep their posterior as the new
    /// prior and stay askable. Returns the newly confirmed matches.
    pub fn apply_resolutions(&mut self, resolutions: &[Resolution]) -> Vec<VertexId> {
        let mut new_matches = Vec::new();
        for r in resolutions {
            let i = r.pair as usize;
            match r.state {
                PairState::Match => {
                    if self.state[i] != PairState::Match {
                        new_matches.push(r.pair);
                    }
                    self.state[i] = PairState::Match;
                }
                PairState::NonMatch => self.state[i] = PairState::NonMatch,
                PairState::Hard => {
                    self.state[i] = PairState::Hard;
                    self.prior[i] = r.posterior;
                }
                PairState::Unresolved => {}
            }
        }
        new_matches
    }
}

/// How a pair enters the training sets of the isolated-pair classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingRole {
    Positive,
    Negative,
    Skip,
}

/// Classifies isolated pairs with one forest per distinct attribute support
/// `A_p`, trained on the pairs whose support is `psi`-similar.
pub struct IsolatedClassifier {
    vectors: Vec<SimilarityVector>,
    supports: Vec<BTreeSet<usize>>,
    roles: Vec<TrainingRole>,
    psi: f64,
    config: ForestConfig,
    cache: HashMap<BTreeSet<usize>, Option<RandomForest>>,
}

impl IsolatedClassifier {
    pub fn new(vectors: Vec<SimilarityVector>, roles: Vec<TrainingRole>, psi: f64, config: ForestConfig) -> Self {
        assert_eq!(vectors.len(), roles.len());
        let supports = vectors.iter().map(|v| v.support().into_iter().collect()).collect();
        IsolatedClassifier {
            vectors,
            supports,
            roles,
            psi,
            config,
            cache: HashMap::new(),
        }
    }

    /// `N_p` for a pair with support `a_p`.
    pub fn neighborhood(&self, a_p: &BTreeSet<usize>) -> Vec<usize> {
        (0..self.vectors.len())
            .filter(|&i| jaccard(a_p, &self.supports[i]) >= self.psi)
            .collect()
    }

    fn forest_for(&mut self, a_p: &BTreeSet<usize>) -> Option<&RandomForest> {
        if !self.cache.contains_key(a_p) {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for i in self.neighborhood(a_p) {
                match self.roles[i] {
                    TrainingRole::Positive => y.push(true),
                    TrainingRole::Negative => y.push(false),
                    TrainingRole::Skip => continue,
                }
                x.push(self.vectors[i].0.clone());
            }
            let forest = (!x.is_empty() && y.iter().any(|&b| b)).then(|| RandomForest::fit(&x, &y, &self.config));
            self.cache.insert(a_p.clone(), forest);
        }
        self.cache[a_p].as_ref()
    }

    /// Match prediction for the pair at index `p`. An empty neighborhood or
    /// one without any positive example predicts a non-match.
    pub fn predict(&mut self, p: usize) -> bool {
        let a_p = self.supports[p].clone();
        let x = self.vectors[p].0.clone();
        self.forest_for(&a_p).is_some_and(|f| f.predict(&x))
    }

    /// Fraction of trees voting match, 0 without a forest.
    pub fn vote(&mut self, p: usize) -> f64 {
        let a_p = self.supports[p].clone();
        let x = self.vectors[p].0.clone();
        self.forest_for(&a_p).map_or(0.0, |f| f.vote(&x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn posterior_examples() {
        assert!((posterior(0.5, &[0.8], &[]) - 0.8).abs() < 1e-12);
        assert_eq!(posterior(0.37, &[], &[]), 0.37);
        assert!((posterior(0.3, &[0.7, 0.9], &[0.7, 0.9]) - 0.3).abs() < 1e-12);
    }

    fn result(prior: f64, yes: usize, no: usize, l: f64) -> QuestionResult {
        let mut votes = vec![(l, Answer::Match); yes];
        votes.extend(vec![(l, Answer::NonMatch); no]);
        votes.push((l, Answer::Unsure));
        QuestionResult { pair: 0, prior, votes }
    }

    #[test]
    fn resolve_examples() {
        let t = Thresholds::default();
        let r = resolve_question(&result(0.5, 5, 0, 0.8), t);
        assert!(r.posterior > 0.99);
        assert_eq!(r.state, PairState::Match);
        assert_eq!(resolve_question(&result(0.5, 0, 5, 0.8), t).state, PairState::NonMatch);
        let r = resolve_question(&result(0.5, 3, 2, 0.6), t);
        assert!((r.posterior - 0.6).abs() < 1e-12);
        assert_eq!(r.state, PairState::Hard);
    }

    #[test]
    fn hard_questions_damp_the_prior() {
        let mut book = PairBook::new(vec![0.5, 0.5]);
        let rs = resolve_labels(&[result(0.5, 3, 2, 0.6)], Thresholds::default());
        assert!(book.apply_resolutions(&rs).is_empty());
        assert!((book.raw_prior(0) - 0.6).abs() < 1e-12);
        assert_eq!(book.state(0), PairState::Hard);
        assert!(!book.is_confirmed(0));
    }

    #[test]
    fn confirmed_pairs_have_fixed_priors() {
        let mut book = PairBook::new(vec![1.0, 0.2, 0.004]);
        assert_eq!(book.effective_prior(0), PRIOR_CEIL);
        assert_eq!(book.effective_prior(2), PRIOR_FLOOR);
        let new = book.apply_resolutions(&[
            Resolution {
                pair: 0,
                state: PairState::Match,
                posterior: 0.9,
            },
            Resolution {
                pair: 1,
                state: PairState::NonMatch,
                posterior: 0.1,
            },
        ]);
        assert_eq!(new, vec![0]);
        assert_eq!(book.effective_priors(), vec![1.0, 0.0, PRIOR_FLOOR]);
        assert!(book.apply_resolutions(&[]).is_empty());
        assert_eq!(book.confirmed_matches().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn isolated_classifier_cases() {
        let ones = SimilarityVector(vec![1.0, 1.0, 1.0]);
        let low = SimilarityVector(vec![0.1, 0.1, 0.1]);
        let zeros = SimilarityVector(vec![0.0, 0.0, 0.0]);
        let mut vectors = vec![ones.clone(); 4];
        vectors.extend(vec![low; 4]);
        vectors.push(ones);
        vectors.push(zeros);
        let mut roles = vec![TrainingRole::Positive; 4];
        roles.extend(vec![TrainingRole::Negative; 4]);
        roles.extend([TrainingRole::Skip, TrainingRole::Skip]);
        let mut c = IsolatedClassifier::new(vectors, roles, DEFAULT_PSI, ForestConfig::default());
        assert!(c.predict(8));
        // All-zero vector: empty support, empty neighborhood.
        assert!(!c.predict(9));
    }

    proptest! {
        #[test]
        fn posterior_monotone_and_order_free(
            prior in 0.01f64..0.99,
            yes in proptest::collection::vec(0.51f64..0.99, 0..5),
            no in proptest::collection::vec(0.51f64..0.99, 0..5),
            extra in 0.51f64..0.99,
        ) {
            let base = posterior(prior, &yes, &no);
            let mut more_yes = yes.clone();
            more_yes.push(extra);
            prop_assert!(posterior(prior, &more_yes, &no) >= base);
            let mut more_no = no.clone();
            more_no.push(extra);
            prop_assert!(posterior(prior, &yes, &more_no) <= base);
            let mut rev = yes.clone();
            rev.reverse();
            prop_assert!((posterior(prior, &rev, &no) - base).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn resolution_is_idempotent(prior in 0.01f64..0.99, yes in 0usize..6, no in 0usize..6, l in 0.51f64..0.99) {
            let rs = vec![result(prior, yes, no, l)];
            let t = Thresholds::default();
            prop_assert_eq!(resolve_labels(&rs, t), resolve_labels(&rs, t));
        }
    }
}
