//! Quantile regression forest: bagged variance-reduction trees whose leaves
//! keep their raw training targets. A prediction pools the leaf samples
//! reached in every tree and reads off an order statistic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WindowedPairs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Resample size as a fraction of the number of pairs.
    pub bootstrap_fraction: f64,
    /// When false every tree sees all pairs exactly once.
    pub bootstrap: bool,
    /// Features tried per split; `None` tries all of them.
    pub max_features: Option<usize>,
    /// Which training pairs fill the leaf sample sets.
    pub leaf_samples: LeafSamples,
    pub seed: u64,
}

/// Source of the raw targets stored in each leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeafSamples {
    /// The resample the tree was grown on.
    InBag,
    /// Every training pair once, routed through the grown tree.
    All,
    /// Pairs left out of the tree's resample; leaves they miss keep their
    /// in-bag targets.
    #[default]
    OutOfBag,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            num_trees: 25,
            max_depth: 8,
            min_leaf: 5,
            bootstrap_fraction: 1.0,
            bootstrap: true,
            max_features: None,
            leaf_samples: LeafSamples::OutOfBag,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        targets: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_index(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return at,
            }
        }
    }

    fn leaf_for(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { targets } => targets,
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    /// Replaces leaf targets with those of `samples`; leaves receiving none
    /// are left as they are.
    fn repopulate(&mut self, pairs: &WindowedPairs, samples: impl Iterator<Item = usize>) {
        let mut fresh: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        for s in samples {
            fresh[self.leaf_index(&pairs.features[s])].push(pairs.targets[s]);
        }
        for (node, mut targets) in self.nodes.iter_mut().zip(fresh) {
            if let Node::Leaf { targets: old } = node {
                if !targets.is_empty() {
                    targets.sort_by(f64::total_cmp);
                    *old = targets;
                }
            }
        }
    }
}

struct Grower<'a> {
    pairs: &'a WindowedPairs,
    cfg: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    /// `orders[f]` holds the node's samples sorted by feature `f`.
    fn grow(&mut self, orders: Vec<Vec<usize>>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            targets: Vec::new(),
        });
        let n = orders[0].len();
        let split = if depth < self.cfg.max_depth && n >= 2 * self.cfg.min_leaf.max(1) {
            self.best_split(&orders)
        } else {
            None
        };
        match split {
            Some(best) => {
                let features = &self.pairs.features;
                let goes_left = |s: usize| features[s][best.feature] <= best.threshold;
                let (left, right): (Vec<Vec<usize>>, Vec<Vec<usize>>) = orders
                    .into_iter()
                    .map(|order| order.into_iter().partition(|&s| goes_left(s)))
                    .unzip();
                let left_id = self.grow(left, depth + 1);
                let right_id = self.grow(right, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: best.feature,
                    threshold: best.threshold,
                    left: left_id,
                    right: right_id,
                };
            }
            None => {
                let mut targets: Vec<f64> = orders[0].iter().map(|&s| self.pairs.targets[s]).collect();
                targets.sort_by(f64::total_cmp);
                self.nodes[id] = Node::Leaf { targets };
            }
        }
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let width = self.pairs.width();
        match self.cfg.max_features {
            Some(k) if k < width => {
                rand::seq::index::sample(&mut self.rng, width, k.max(1)).into_vec()
            }
            _ => (0..width).collect(),
        }
    }

    /// Best variance-reduction split honoring `min_leaf` on both sides.
    fn best_split(&mut self, orders: &[Vec<usize>]) -> Option<BestSplit> {
        let n = orders[0].len();
        let min_leaf = self.cfg.min_leaf.max(1);
        let targets = &self.pairs.targets;
        let total: f64 = orders[0].iter().map(|&s| targets[s]).sum();
        let total_sq: f64 = orders[0].iter().map(|&s| targets[s] * targets[s]).sum();
        let parent_sse = total_sq - total * total / n as f64;
        if parent_sse <= 1e-12 * total_sq.max(1e-300) {
            return None;
        }

        let mut best: Option<BestSplit> = None;
        for feature in self.candidate_features() {
            let features = &self.pairs.features;
            let order = &orders[feature];
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for k in 0..n - 1 {
                let y = targets[order[k]];
                left_sum += y;
                left_sq += y * y;
                let left_n = k + 1;
                let right_n = n - left_n;
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let here = features[order[k]][feature];
                let next = features[order[k + 1]][feature];
                if here == next {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / left_n as f64)
                    + (right_sq - right_sum * right_sum / right_n as f64);
                let gain = parent_sse - sse;
                if gain > best.as_ref().map_or(1e-12 * parent_sse, |b| b.gain) {
                    best = Some(BestSplit {
                        feature,
                        threshold: 0.5 * (here + next),
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// A fitted quantile regression forest.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForest {
    width: usize,
    trees: Vec<Tree>,
}

impl QuantileForest {
    /// Fits the forest; `pairs` must be nonempty.
    pub(super) fn fit(pairs: &WindowedPairs, cfg: &ForestConfig) -> Self {
        let count = pairs.len();
        let resample = ((cfg.bootstrap_fraction * count as f64).round() as usize).max(1);
        let trees = (0..cfg.num_trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(t as u64);
                let samples: Vec<usize> = if cfg.bootstrap {
                    (0..resample).map(|_| rng.random_range(0..count)).collect()
                } else {
                    (0..count).collect()
                };
                let mut grower = Grower {
                    pairs,
                    cfg,
                    rng,
                    nodes: Vec::new(),
                };
                let mut in_bag = vec![false; count];
                for &s in &samples {
                    in_bag[s] = true;
                }
                let orders: Vec<Vec<usize>> = (0..pairs.width())
                    .map(|f| {
                        let mut order = samples.clone();
                        order.sort_by(|&a, &b| pairs.features[a][f].total_cmp(&pairs.features[b][f]));
                        order
                    })
                    .collect();
                grower.grow(orders, 0);
                let mut tree = Tree {
                    nodes: grower.nodes,
                };
                match cfg.leaf_samples {
                    LeafSamples::InBag => {}
                    LeafSamples::All => tree.repopulate(pairs, 0..count),
                    LeafSamples::OutOfBag => tree.repopulate(pairs, (0..count).filter(|&s| !in_bag[s])),
                }
                tree
            })
            .collect();
        Self {
            width: pairs.width(),
            trees,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Sorted concatenation of the leaf targets reached by `x` in every tree.
    pub fn pooled_leaf_samples(&self, x: &[f64]) -> Vec<f64> {
        let mut pooled: Vec<f64> = self
            .trees
            .iter()
            .flat_map(|t| t.leaf_for(x).iter().copied())
            .collect();
        pooled.sort_by(f64::total_cmp);
        pooled
    }
}
