use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDataset;
use crate::error::{Error, Result};

/// Gains within this margin are treated as ties.
const GAIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Fraction of features drawn per split; `None` draws `floor(sqrt(F))`.
    pub features_per_split: Option<f64>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("the forest needs at least one tree".into()));
        }
        if let Some(f) = self.features_per_split {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("features_per_split must be in (0, 1], got {f}")));
            }
        }
        Ok(())
    }

    fn features_per_node(&self, n_features: usize) -> usize {
        let k = match self.features_per_split {
            Some(f) => (f * n_features as f64 + 1e-9).floor() as usize,
            None => (n_features as f64).sqrt().floor() as usize,
        };
        k.clamp(1, n_features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Continuous feature: rows with `x <= threshold` go left.
    LessEqual(f64),
    /// Categorical feature: rows whose token id equals the value go left.
    Equals(u32),
}

impl SplitRule {
    pub fn goes_left(&self, x: f64) -> bool {
        match *self {
            SplitRule::LessEqual(t) => x <= t,
            SplitRule::Equals(tok) => x == f64::from(tok),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        /// Weighted `(normal, attack)` sample counts.
        counts: [u64; 2],
    },
    Internal {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
        /// `N·gini(node) − N_L·gini(left) − N_R·gini(right)` with weighted counts.
        impurity_decrease: f64,
        n_samples: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Internal { .. }))
            .count()
    }

    /// Attack-class probability for one row of raw feature values.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { counts } => {
                    let total = counts[0] + counts[1];
                    return if total == 0 {
                        0.5
                    } else {
                        counts[1] as f64 / total as f64
                    };
                }
                TreeNode::Internal {
                    feature,
                    rule,
                    left,
                    right,
                    ..
                } => at = if rule.goes_left(row[*feature]) { *left } else { *right },
            }
        }
    }

    /// Unnormalised impurity decrease summed per feature.
    pub fn raw_importances(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        for node in &self.nodes {
            if let TreeNode::Internal {
                feature,
                impurity_decrease,
                ..
            } = node
            {
                out[*feature] += impurity_decrease;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn predict_proba(&self, data: &EncodedDataset) -> Vec<f64> {
        let matrix = FeatureMatrix::from_encoded(data);
        (0..data.n_rows())
            .map(|r| {
                let row = matrix.raw_row(r);
                self.trees.iter().map(|t| t.predict(&row)).sum::<f64>() / self.trees.len() as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Categorical,
    Continuous,
}

/// One feature reduced to small integer codes. Continuous codes are ranks
/// into the sorted unique values; categorical codes are token ids.
struct BinnedFeature {
    kind: Kind,
    codes: Vec<u32>,
    /// Continuous: value of each code. Categorical: unused.
    values: Vec<f64>,
    n_bins: usize,
}

pub(crate) struct FeatureMatrix {
    features: Vec<BinnedFeature>,
}

impl FeatureMatrix {
    pub(crate) fn from_encoded(data: &EncodedDataset) -> Self {
        let (n, m, c) = (data.n_rows(), data.n_categorical(), data.n_continuous());
        let mut features = Vec::with_capacity(m + c);
        for j in 0..m {
            features.push(BinnedFeature {
                kind: Kind::Categorical,
                codes: (0..n).map(|r| data.cat()[r * m + j]).collect(),
                values: Vec::new(),
                n_bins: data.vocab_sizes()[j],
            });
        }
        for j in 0..c {
            let column: Vec<f32> = (0..n).map(|r| data.cont()[r * c + j]).collect();
            let mut uniq = column.clone();
            uniq.sort_by(f32::total_cmp);
            uniq.dedup();
            let codes = column
                .iter()
                .map(|v| uniq.binary_search_by(|u| u.total_cmp(v)).expect("value present") as u32)
                .collect();
            features.push(BinnedFeature {
                kind: Kind::Continuous,
                codes,
                n_bins: uniq.len(),
                values: uniq.into_iter().map(f64::from).collect(),
            });
        }
        Self { features }
    }

    fn raw_row(&self, r: usize) -> Vec<f64> {
        self.features
            .iter()
            .map(|f| match f.kind {
                Kind::Categorical => f64::from(f.codes[r]),
                Kind::Continuous => f.values[f.codes[r] as usize],
            })
            .collect()
    }
}

/// Weighted class counts for one code value present in a node.
#[derive(Clone, Copy)]
struct Run {
    code: u32,
    counts: [u64; 2],
}

struct Candidate {
    feature: usize,
    /// Continuous: last code of the left side. Categorical: the token.
    code: u32,
    rule: SplitRule,
    gain: f64,
}

/// `Σ counts² / N`; the Gini decrease is a difference of these terms.
fn purity(counts: [u64; 2]) -> f64 {
    let n = counts[0] + counts[1];
    if n == 0 {
        return 0.0;
    }
    let (a, b) = (counts[0] as f64, counts[1] as f64);
    (a * a + b * b) / n as f64
}

struct Builder<'a> {
    matrix: &'a FeatureMatrix,
    labels: &'a [u8],
    weights: Vec<u32>,
    config: &'a ForestConfig,
    hist: Vec<[u64; 2]>,
    runs: Vec<Run>,
    scratch: Vec<(u32, u8, u32)>,
}

impl Builder<'_> {
    fn runs_for(&mut self, feature: usize, rows: &[u32]) {
        let f = &self.matrix.features[feature];
        self.runs.clear();
        if f.n_bins <= 2 * rows.len() {
            self.hist.clear();
            self.hist.resize(f.n_bins, [0, 0]);
            for &r in rows {
                let r = r as usize;
                self.hist[f.codes[r] as usize][self.labels[r] as usize] += u64::from(self.weights[r]);
            }
            for (code, counts) in self.hist.iter().enumerate() {
                if counts[0] + counts[1] > 0 {
                    self.runs.push(Run {
                        code: code as u32,
                        counts: *counts,
                    });
                }
            }
        } else {
            self.scratch.clear();
            self.scratch.extend(rows.iter().map(|&r| {
                let r = r as usize;
                (f.codes[r], self.labels[r], self.weights[r])
            }));
            self.scratch.sort_unstable_by_key(|s| s.0);
            for &(code, label, w) in &self.scratch {
                match self.runs.last_mut() {
                    Some(run) if run.code == code => run.counts[label as usize] += u64::from(w),
                    _ => {
                        let mut counts = [0, 0];
                        counts[label as usize] = u64::from(w);
                        self.runs.push(Run { code, counts });
                    }
                }
            }
        }
    }

    /// Best split of `feature` over the node, or `None` if the feature is
    /// constant there.
    fn best_for_feature(&mut self, feature: usize, rows: &[u32], total: [u64; 2]) -> Option<Candidate> {
        self.runs_for(feature, rows);
        if self.runs.len() < 2 {
            return None;
        }
        let parent = purity(total);
        let f = &self.matrix.features[feature];
        let mut best: Option<Candidate> = None;
        let mut consider = |code: u32, rule: SplitRule, left: [u64; 2]| {
            let right = [total[0] - left[0], total[1] - left[1]];
            let gain = purity(left) + purity(right) - parent;
            if best.as_ref().is_none_or(|b| gain > b.gain + GAIN_TOLERANCE) {
                best = Some(Candidate {
                    feature,
                    code,
                    rule,
                    gain,
                });
            }
        };
        match f.kind {
            Kind::Continuous => {
                let mut left = [0u64, 0];
                for pair in self.runs.windows(2) {
                    left[0] += pair[0].counts[0];
                    left[1] += pair[0].counts[1];
                    let t = 0.5 * (f.values[pair[0].code as usize] + f.values[pair[1].code as usize]);
                    consider(pair[0].code, SplitRule::LessEqual(t), left);
                }
            }
            Kind::Categorical => {
                for run in &self.runs {
                    consider(run.code, SplitRule::Equals(run.code), run.counts);
                }
            }
        }
        best
    }

    fn build(mut self, rng: &mut ChaCha8Rng) -> Tree {
        let mut rows: Vec<u32> = (0..self.labels.len() as u32)
            .filter(|&r| self.weights[r as usize] > 0)
            .collect();
        let n_features = self.matrix.features.len();
        let per_node = self.config.features_per_node(n_features);
        let mut order: Vec<usize> = (0..n_features).collect();

        let mut nodes = vec![TreeNode::Leaf { counts: [0, 0] }];
        // (node id, start, end, depth)
        let mut stack = vec![(0usize, 0usize, rows.len(), 0usize)];
        while let Some((id, start, end, depth)) = stack.pop() {
            let node_rows = &rows[start..end];
            let mut total = [0u64, 0];
            for &r in node_rows {
                total[self.labels[r as usize] as usize] += u64::from(self.weights[r as usize]);
            }
            nodes[id] = TreeNode::Leaf { counts: total };
            let n = total[0] + total[1];
            let pure = total[0] == 0 || total[1] == 0;
            let deep = self.config.max_depth.is_some_and(|d| depth >= d);
            if pure || deep || n < self.config.min_samples_split as u64 {
                continue;
            }

            // Draw features until `per_node` non-constant ones were examined,
            // continuing past that if none of them could split.
            order.shuffle(rng);
            let mut best: Option<Candidate> = None;
            let mut visited = 0;
            for &feature in &order {
                if visited >= per_node && best.is_some() {
                    break;
                }
                let Some(cand) = self.best_for_feature(feature, node_rows, total) else {
                    continue;
                };
                visited += 1;
                let better = match &best {
                    None => true,
                    Some(b) => {
                        cand.gain > b.gain + GAIN_TOLERANCE
                            || (cand.gain >= b.gain - GAIN_TOLERANCE && cand.feature < b.feature)
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
            let Some(best) = best.filter(|b| b.gain > GAIN_TOLERANCE) else {
                continue;
            };

            let f = &self.matrix.features[best.feature];
            let goes_left = |r: u32| match f.kind {
                Kind::Continuous => f.codes[r as usize] <= best.code,
                Kind::Categorical => f.codes[r as usize] == best.code,
            };
            let slice = &mut rows[start..end];
            let mut mid = 0;
            for i in 0..slice.len() {
                if goes_left(slice[i]) {
                    slice.swap(i, mid);
                    mid += 1;
                }
            }
            let left = nodes.len();
            nodes.push(TreeNode::Leaf { counts: [0, 0] });
            nodes.push(TreeNode::Leaf { counts: [0, 0] });
            nodes[id] = TreeNode::Internal {
                feature: best.feature,
                rule: best.rule,
                left,
                right: left + 1,
                impurity_decrease: best.gain,
                n_samples: n,
            };
            stack.push((left + 1, start + mid, end, depth + 1));
            stack.push((left, start, start + mid, depth + 1));
        }
        Tree { nodes }
    }
}

/// Fits a Gini random forest on every feature of `train`. Features are
/// indexed categorical first, then continuous, as listed in the dataset.
pub fn fit_forest(train: &EncodedDataset, config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    let (normal, attack) = train.class_counts();
    if normal == 0 || attack == 0 {
        return Err(Error::Dataset(
            "feature selection needs both classes in the training data".into(),
        ));
    }
    let n_features = train.n_categorical() + train.n_continuous();
    if n_features == 0 {
        return Err(Error::Dataset("no features to rank".into()));
    }
    let matrix = FeatureMatrix::from_encoded(train);
    let labels = train.labels();
    let n = labels.len();

    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let weights = if config.bootstrap {
                let mut w = vec![0u32; n];
                for _ in 0..n {
                    w[rng.gen_range(0..n)] += 1;
                }
                w
            } else {
                vec![1u32; n]
            };
            Builder {
                matrix: &matrix,
                labels,
                weights,
                config,
                hist: Vec::new(),
                runs: Vec::new(),
                scratch: Vec::new(),
            }
            .build(&mut rng)
        })
        .collect();
    Ok(Forest {
        feature_names: train.features().names(),
        trees,
    })
}
