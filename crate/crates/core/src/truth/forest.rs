//! A small bagged decision-tree ensemble for binary labels.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_features: None,
            max_depth: 32,
            min_samples_split: 2,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(bool),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> bool {
        match self {
            Node::Leaf(label) => *label,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    max_features: usize,
    config: &'a ForestConfig,
}

impl TreeBuilder<'_> {
    fn build(&self, rows: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let pos = rows.iter().filter(|&&r| self.y[r]).count();
        let majority = 2 * pos > rows.len();
        if pos == 0 || pos == rows.len() || rows.len() < self.config.min_samples_split || depth >= self.config.max_depth {
            return Node::Leaf(majority);
        }
        let d = self.x[0].len();
        let parent = gini(pos, rows.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for feature in sample(rng, d, self.max_features.min(d)).into_iter() {
            rows.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
            let mut left_pos = 0;
            for i in 1..rows.len() {
                if self.y[rows[i - 1]] {
                    left_pos += 1;
                }
                let (lo, hi) = (self.x[rows[i - 1]][feature], self.x[rows[i]][feature]);
                if lo == hi {
                    continue;
                }
                let n = rows.len();
                let impurity = (i as f64 * gini(left_pos, i) + (n - i) as f64 * gini(pos - left_pos, n - i)) / n as f64;
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, feature, (lo + hi) / 2.0));
                }
            }
        }
        match best {
            Some((impurity, feature, threshold)) if impurity < parent => {
                rows.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
                let split = rows.partition_point(|&r| self.x[r][feature] <= threshold);
                let (l, r) = rows.split_at_mut(split);
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(self.build(l, depth + 1, rng)),
                    right: Box::new(self.build(r, depth + 1, rng)),
                }
            }
            _ => Node::Leaf(majority),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Node>,
}

impl RandomForest {
    /// Fits one tree per bootstrap sample. Every tree draws from its own
    /// seeded generator, so the result does not depend on thread scheduling.
    pub fn fit(x: &[Vec<f64>], y: &[bool], config: &ForestConfig) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(!x.is_empty(), "cannot fit a forest on no samples");
        let d = x[0].len();
        let max_features = config
            .max_features
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .max(1);
        let builder = TreeBuilder {
            x,
            y,
            max_features,
            config,
        };
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(t as u64));
                let mut rows: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
                if d == 0 {
                    let pos = rows.iter().filter(|&&r| y[r]).count();
                    return Node::Leaf(2 * pos > rows.len());
                }
                builder.build(&mut rows, 0, &mut rng)
            })
            .collect();
        RandomForest { trees }
    }

    /// Fraction of trees voting for a match.
    pub fn vote(&self, x: &[f64]) -> f64 {
        let yes = self.trees.iter().filter(|t| t.predict(x)).count();
        yes as f64 / self.trees.len() as f64
    }

    /// Strict majority; a tie counts as non-match.
    pub fn predict(&self, x: &[f64]) -> bool {
        self.vote(x) > 0.5
    }
}
