//! Label normalization and literal similarity.
//!
//! Tokens are lowercased alphanumeric runs passed through the Snowball English
//! (Porter2) stemmer. That choice is pinned by the golden tests below.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

use crate::kb::{LiteralKind, TypedLiteral};

/// Literal similarity threshold used for attribute matching and similarity vectors.
pub const DEFAULT_LITERAL_THRESHOLD: f64 = 0.9;

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Lowercases, splits on non-alphanumeric runs and stems each token.
pub fn normalize_label(s: &str) -> BTreeSet<String> {
    let lower = s.to_lowercase();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| stemmer().stem(t).into_owned())
        .filter(|t| !t.is_empty())
        .collect()
}

/// `|x ∩ y| / |x ∪ y|`, with `∅/∅ = 0`.
pub fn jaccard<T: Ord>(x: &BTreeSet<T>, y: &BTreeSet<T>) -> f64 {
    let inter = x.intersection(y).count();
    let union = x.len() + y.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Jaccard over two sorted, deduplicated slices.
pub fn jaccard_sorted<T: Ord>(x: &[T], y: &[T]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = x.len() + y.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Token Jaccard for strings, one minus the maximum percentage difference for
/// numbers and dates, zero across kinds.
pub fn literal_sim(l1: &TypedLiteral, l2: &TypedLiteral) -> f64 {
    if l1.kind() != l2.kind() {
        return 0.0;
    }
    match l1.kind() {
        LiteralKind::String => jaccard_sorted(l1.tokens(), l2.tokens()),
        LiteralKind::Number | LiteralKind::Date => {
            let (a, b) = (l1.numeric(), l2.numeric());
            let denom = a.abs().max(b.abs());
            if denom == 0.0 {
                return 1.0;
            }
            (1.0 - (a - b).abs() / denom).clamp(0.0, 1.0)
        }
    }
}

/// Extended Jaccard over two literal sets: literals count as the same when
/// their similarity reaches `threshold`; each literal is used at most once.
///
/// Returns `matched / (|v1| + |v2| - matched)` where `matched` is the size of
/// a maximum 1:1 pairing among literal pairs above the threshold.
pub fn extended_jaccard(v1: &[&TypedLiteral], v2: &[&TypedLiteral], threshold: f64) -> f64 {
    if v1.is_empty() || v2.is_empty() {
        return 0.0;
    }
    let adj: Vec<Vec<usize>> = v1
        .iter()
        .map(|a| {
            v2.iter()
                .enumerate()
                .filter(|(_, b)| literal_sim(a, b) >= threshold)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let matched = max_bipartite_matching(&adj, v2.len());
    matched as f64 / (v1.len() + v2.len() - matched) as f64
}

/// Maximum-cardinality bipartite matching by augmenting paths.
/// `adj[i]` lists the right-side vertices adjacent to left vertex `i`.
pub fn max_bipartite_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    let mut owner = vec![None; n_right];
    let mut seen = vec![false; n_right];
    let mut matched = 0;
    for i in 0..adj.len() {
        if adj[i].is_empty() {
            continue;
        }
        seen.iter_mut().for_each(|s| *s = false);
        if augment(i, adj, &mut seen, &mut owner) {
            matched += 1;
        }
    }
    matched
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn s(raw: &str) -> TypedLiteral {
        TypedLiteral::string(raw)
    }

    fn n(v: f64) -> TypedLiteral {
        TypedLiteral::number(v)
    }

    #[test]
    fn normalize_basic() {
        assert_eq!(normalize_label("Mona Lisa"), set(&["mona", "lisa"]));
        assert_eq!(normalize_label(""), BTreeSet::new());
        assert_eq!(normalize_label("  ,;  "), BTreeSet::new());
    }

    #[test]
    fn normalize_ignores_case_and_punctuation() {
        assert_eq!(normalize_label("The Cradle (film)"), normalize_label("the CRADLE film"));
    }

    // Golden outputs of the pinned stemmer.
    #[test]
    fn stemmer_golden() {
        assert_eq!(normalize_label("Running runs"), set(&["run"]));
        assert_eq!(normalize_label("connected connections"), set(&["connect"]));
        assert_eq!(normalize_label("Cities studies"), set(&["citi", "studi"]));
        assert_eq!(normalize_label("New York City"), set(&["new", "york", "citi"]));
        assert_eq!(normalize_label("Joan Allen"), set(&["joan", "allen"]));
        assert_eq!(normalize_label("généralement 2019"), set(&["généralement", "2019"]));
    }

    #[test]
    fn jaccard_examples() {
        assert!((jaccard(&set(&["a", "b"]), &set(&["b", "c"])) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(jaccard::<String>(&BTreeSet::new(), &BTreeSet::new()), 0.0);
    }

    #[test]
    fn literal_sim_examples() {
        assert_eq!(literal_sim(&n(100.0), &n(100.0)), 1.0);
        assert!((literal_sim(&n(90.0), &n(100.0)) - 0.9).abs() < 1e-12);
        assert!((literal_sim(&s("new york city"), &s("york city")) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(literal_sim(&s("100"), &n(100.0)), 0.0);
        assert_eq!(literal_sim(&n(0.0), &n(0.0)), 1.0);
        assert_eq!(literal_sim(&n(-5.0), &n(5.0)), 0.0);
    }

    #[test]
    fn literal_sim_dates() {
        let d = |raw| TypedLiteral::new(raw, LiteralKind::Date).unwrap();
        assert_eq!(literal_sim(&d("2000-01-01"), &d("2000-01-01")), 1.0);
        let sim = literal_sim(&d("2000-01-01"), &d("2000-01-11"));
        assert!(sim > 0.99 && sim < 1.0);
    }

    #[test]
    fn extended_jaccard_examples() {
        let ml = s("mona lisa");
        assert_eq!(extended_jaccard(&[&ml], &[&ml], 0.9), 1.0);
        assert_eq!(extended_jaccard(&[&s("a")], &[&s("b")], 0.9), 0.0);
        // 90 ~ 100 at 0.9, 200 unmatched: 1 / (2 + 1 - 1)
        let (a, b, c) = (n(90.0), n(200.0), n(100.0));
        assert_eq!(extended_jaccard(&[&a, &b], &[&c], 0.85), 0.5);
        assert_eq!(extended_jaccard(&[], &[], 0.9), 0.0);
        assert_eq!(extended_jaccard(&[&a], &[], 0.9), 0.0);
    }

    #[test]
    fn extended_jaccard_uses_each_literal_once() {
        // Both left literals are close to the single right literal, but only
        // one pairing is allowed.
        let (a, b, c) = (n(99.0), n(101.0), n(100.0));
        assert_eq!(extended_jaccard(&[&a, &b], &[&c], 0.9), 0.5);
    }

    #[test]
    fn extended_jaccard_finds_maximum_pairing() {
        // a1 is close to both b1 and b2, a2 only to b1. A greedy pass that
        // pairs a1-b1 first would find one match; the maximum is two.
        let (a1, a2) = (n(100.0), n(91.0));
        let (b1, b2) = (n(95.0), n(109.0));
        assert_eq!(extended_jaccard(&[&a1, &a2], &[&b1, &b2], 0.9), 1.0);
    }

    fn literal_strategy() -> impl Strategy<Value = TypedLiteral> {
        prop_oneof![
            "[a-c ]{0,8}".prop_map(TypedLiteral::string),
            (-50.0f64..50.0).prop_map(|v| TypedLiteral::number((v * 4.0).round() / 4.0)),
            (0i64..4000).prop_map(|d| {
                let date = chrono::NaiveDate::from_ymd_opt(1990, 1, 1).unwrap() + chrono::Duration::days(d);
                TypedLiteral::new(date.format("%Y-%m-%d").to_string(), LiteralKind::Date).unwrap()
            }),
        ]
    }

    proptest! {
        #[test]
        fn similarities_bounded_and_symmetric(
            a in literal_strategy(),
            b in literal_strategy(),
        ) {
            let ab = literal_sim(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, literal_sim(&b, &a));
        }

        #[test]
        fn jaccard_bounded_and_symmetric(
            x in proptest::collection::btree_set(0u8..10, 0..8),
            y in proptest::collection::btree_set(0u8..10, 0..8),
        ) {
            let j = jaccard(&x, &y);
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert_eq!(j, jaccard(&y, &x));
        }

        #[test]
        fn normalize_is_case_insensitive(raw in "[A-Za-z ,()-]{0,24}") {
            let once = normalize_label(&raw);
            prop_assert_eq!(normalize_label(&raw.to_uppercase()), once.clone());
            prop_assert!(once.iter().all(|t| !t.is_empty()));
        }

        #[test]
        fn extended_jaccard_symmetric_and_monotone(
            v1 in proptest::collection::vec(literal_strategy(), 0..5),
            v2 in proptest::collection::vec(literal_strategy(), 0..5),
            t1 in 0.05f64..1.0,
            t2 in 0.05f64..1.0,
        ) {
            let mut v1 = v1; v1.sort(); v1.dedup();
            let mut v2 = v2; v2.sort(); v2.dedup();
            let r1: Vec<&TypedLiteral> = v1.iter().collect();
            let r2: Vec<&TypedLiteral> = v2.iter().collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let s_lo = extended_jaccard(&r1, &r2, lo);
            let s_hi = extended_jaccard(&r1, &r2, hi);
            prop_assert!((0.0..=1.0).contains(&s_lo));
            prop_assert_eq!(s_lo, extended_jaccard(&r2, &r1, lo));
            prop_assert!(s_hi <= s_lo);
        }
    }
}
