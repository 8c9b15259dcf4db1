//! Random-forest classifier: bagged CART trees with Gini splits and
//! per-node feature subsampling.
//!
//! Serialized form: 8-byte magic `SLPFRST\0`, then little-endian `u32`
//! version, `u32` feature count, `u32` class count and `u32` tree count.
//! Each tree is a `u32` node count followed by its nodes in index order:
//! a `u8` tag, then for a split (tag 1) the `u32` feature, `f64` threshold
//! and `u32` left and right child indices, or for a leaf (tag 0) one `u32`
//! training count per class.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ConfigFile;
use crate::signal::io::ByteReader;
use crate::{Error, Result};

pub const FOREST_MAGIC: &[u8; 8] = b"SLPFRST\0";
pub const FOREST_VERSION: u32 = 1;

/// Gini impurity `1 − Σ (n_c / n)²`.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::Undefined("Gini impurity of an empty node".into()));
    }
    let n = n as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `⌈√d⌉`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 16,
            min_samples_leaf: 5,
            features_per_split: None,
            seed: 0,
        }
    }
}

const KEYS: [&str; 5] = [
    "n_trees",
    "max_depth",
    "min_samples_leaf",
    "features_per_split",
    "seed",
];

impl ForestConfig {
    pub fn features_for(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config(
                "n_trees, max_depth and min_samples_leaf must be at least 1".into(),
            ));
        }
        if let Some(k) = self.features_per_split {
            if k == 0 || k > n_features {
                return Err(Error::Config(format!(
                    "features_per_split {k} outside [1, {n_features}]"
                )));
            }
        }
        Ok(())
    }

    /// Reads the `[section]` keys; `features_per_split = auto` selects `⌈√d⌉`.
    pub fn from_config(cfg: &ConfigFile, section: &str) -> Result<Self> {
        cfg.check_known(section, &KEYS)?;
        let mut c = Self::default();
        cfg.read_into(section, "n_trees", &mut c.n_trees)?;
        cfg.read_into(section, "max_depth", &mut c.max_depth)?;
        cfg.read_into(section, "min_samples_leaf", &mut c.min_samples_leaf)?;
        cfg.read_into(section, "seed", &mut c.seed)?;
        match cfg.raw(section, "features_per_split") {
            None | Some("auto") => {}
            Some(_) => c.features_per_split = cfg.get(section, "features_per_split")?,
        }
        Ok(c)
    }

    pub fn write_config(&self, cfg: &mut ConfigFile, section: &str) {
        cfg.set(section, "n_trees", self.n_trees);
        cfg.set(section, "max_depth", self.max_depth);
        cfg.set(section, "min_samples_leaf", self.min_samples_leaf);
        cfg.set(section, "seed", self.seed);
        match self.features_per_split {
            Some(k) => cfg.set(section, "features_per_split", k),
            None => cfg.set(section, "features_per_split", "auto"),
        }
    }
}

/// Labelled samples, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, n_classes: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(&c) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::Label(format!("class {c} with {n_classes} classes")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forest features".into()));
        }
        Ok(Self { x, y, n_classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Row-wise concatenation of several datasets.
    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("no datasets to concatenate".into()))?;
        let views: Vec<_> = parts.iter().map(|d| d.x.view()).collect();
        let x = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|_| Error::Shape("datasets have different feature counts".into()))?;
        if parts.iter().any(|d| d.n_classes != first.n_classes) {
            return Err(Error::Shape("datasets have different class counts".into()));
        }
        let y = parts.iter().flat_map(|d| d.y.iter().copied()).collect();
        Ok(Self {
            x,
            y,
            n_classes: first.n_classes,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

/// One tree; node 0 is the root. Samples with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Index of the largest entry; the lowest index wins ties.
fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Tree {
    pub fn leaf_counts(&self, x: ArrayView1<f64>) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Majority class of the leaf `x` falls in.
    pub fn predict(&self, x: ArrayView1<f64>) -> usize {
        argmax(self.leaf_counts(x))
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

/// Per-tree training state shared across nodes.
struct Grower<'a> {
    /// Feature-major copy of the training matrix.
    cols: &'a Array2<f64>,
    y: &'a [usize],
    n_classes: usize,
    cfg: &'a ForestConfig,
    n_try: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    buf: Vec<(f64, usize)>,
    features: Vec<usize>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let counts = self.counts(idx);
        self.nodes.push(Node::Leaf {
            counts: counts.clone(),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_samples_leaf {
            return id;
        }
        let Some(best) = self.best_split(idx, &counts) else {
            return id;
        };
        let cols = self.cols;
        let row = cols.row(best.feature);
        idx.sort_unstable();
        let mut split = 0;
        for k in 0..idx.len() {
            if row[idx[k]] <= best.threshold {
                idx.swap(split, k);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Split maximising `Σ_l c²/n_l + Σ_r c²/n_r`, equivalently minimising
    /// the size-weighted Gini impurity of the children. The first candidate
    /// wins ties, scanning sampled features in draw order and thresholds in
    /// increasing order.
    fn best_split(&mut self, idx: &[usize], parent: &[u32]) -> Option<BestSplit> {
        let n_features = self.cols.nrows();
        self.features.clear();
        self.features.extend(0..n_features);
        let (chosen, _) = self.features.partial_shuffle(&mut self.rng, self.n_try);
        let chosen = chosen.to_vec();
        let min_leaf = self.cfg.min_samples_leaf;
        let n = idx.len();
        let mut best: Option<BestSplit> = None;
        let mut left = vec![0u64; self.n_classes];
        for f in chosen {
            let row = self.cols.row(f);
            self.buf.clear();
            self.buf.extend(idx.iter().map(|&i| (row[i], self.y[i])));
            self.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.buf[0].0 == self.buf[n - 1].0 {
                continue;
            }
            left.iter_mut().for_each(|c| *c = 0);
            let (mut sq_l, mut sq_r) =
                (0u64, parent.iter().map(|&c| (c as u64).pow(2)).sum::<u64>());
            for k in 0..n - 1 {
                let c = self.buf[k].1;
                let l = left[c];
                let r = parent[c] as u64 - l;
                sq_l += 2 * l + 1;
                sq_r -= 2 * r - 1;
                left[c] += 1;
                let n_l = k + 1;
                let (a, b) = (self.buf[k].0, self.buf[k + 1].0);
                if a == b || n_l < min_leaf || n - n_l < min_leaf {
                    continue;
                }
                let score = sq_l as f64 / n_l as f64 + sq_r as f64 / (n - n_l) as f64;
                if best.as_ref().is_none_or(|s| score > s.score) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some(BestSplit {
                        score,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

/// Random stream of tree `tree` and its bootstrap sample of `n` indices.
fn bootstrap(seed: u64, tree: usize, n: usize) -> (ChaCha8Rng, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    let idx = (0..n).map(|_| rng.random_range(0..n)).collect();
    (rng, idx)
}

/// Row indices (with repeats) of the bootstrap sample drawn for tree
/// `tree` of a forest seeded with `seed` on `n` rows.
pub fn bootstrap_rows(seed: u64, tree: usize, n: usize) -> Vec<usize> {
    bootstrap(seed, tree, n).1
}

/// A fitted forest. Immutable, so it can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub n_features: usize,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

/// Class votes of a forest for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub class: usize,
    /// Fraction of trees voting for each class.
    pub fractions: Vec<f64>,
}

impl Forest {
    /// Fits `cfg.n_trees` trees, each on a bootstrap sample of the same
    /// size as the data.
    pub fn fit(data: &Dataset, cfg: &ForestConfig) -> Result<Forest> {
        Ok(Self::fit_with_oob(data, cfg)?.0)
    }

    /// Fits and also returns the out-of-bag error rate (NaN when no sample
    /// is ever out of bag).
    pub fn fit_with_oob(data: &Dataset, cfg: &ForestConfig) -> Result<(Forest, f64)> {
        let d = data.n_features();
        cfg.validate(d)?;
        if d == 0 {
            return Err(Error::Shape("forest needs at least one feature".into()));
        }
        if data.len() < 2 * cfg.min_samples_leaf {
            return Err(Error::Shape(format!(
                "{} samples is fewer than twice min_samples_leaf {}",
                data.len(),
                cfg.min_samples_leaf
            )));
        }
        let present = (0..data.n_classes).filter(|c| data.y.contains(c)).count();
        if present < 2 {
            log::warn!("forest training data has a single class; every tree is one leaf");
        }
        let cols = data.x.t().as_standard_layout().into_owned();
        let n = data.len();
        let n_try = cfg.features_for(d);
        let grown: Vec<(Tree, Vec<bool>)> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let (rng, mut idx) = bootstrap(cfg.seed, t, n);
                let mut in_bag = vec![false; n];
                idx.iter().for_each(|&i| in_bag[i] = true);
                let mut g = Grower {
                    cols: &cols,
                    y: &data.y,
                    n_classes: data.n_classes,
                    cfg,
                    n_try,
                    rng,
                    nodes: Vec::new(),
                    buf: Vec::with_capacity(n),
                    features: Vec::with_capacity(d),
                };
                g.grow(&mut idx, 0);
                (Tree { nodes: g.nodes }, in_bag)
            })
            .collect();

        let mut votes = vec![vec![0u32; data.n_classes]; n];
        for (tree, in_bag) in &grown {
            for i in (0..n).filter(|&i| !in_bag[i]) {
                votes[i][tree.predict(data.x.row(i))] += 1;
            }
        }
        let scored: Vec<bool> = votes
            .iter()
            .zip(&data.y)
            .filter(|(v, _)| v.iter().any(|&c| c > 0))
            .map(|(v, &y)| argmax(v) != y)
            .collect();
        let oob = scored.iter().filter(|&&wrong| wrong).count() as f64 / scored.len() as f64;
        let forest = Forest {
            n_features: d,
            n_classes: data.n_classes,
            trees: grown.into_iter().map(|t| t.0).collect(),
        };
        Ok((forest, oob))
    }

    pub fn vote(&self, x: ArrayView1<f64>) -> Result<Vote> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "{} features, forest expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut counts = vec![0usize; self.n_classes];
        for t in &self.trees {
            counts[t.predict(x)] += 1;
        }
        let total = self.trees.len() as f64;
        Ok(Vote {
            class: argmax(&counts),
            fractions: counts.iter().map(|&c| c as f64 / total).collect(),
        })
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize> {
        Ok(self.vote(x)?.class)
    }

    /// Votes for every row of `x`.
    pub fn vote_rows(&self, x: &Array2<f64>) -> Result<Vec<Vote>> {
        x.rows()
            .into_iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|r| self.vote(r))
            .collect()
    }

    pub fn predict_rows(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(self.vote_rows(x)?.into_iter().map(|v| v.class).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FOREST_MAGIC);
        for v in [
            FOREST_VERSION,
            self.n_features as u32,
            self.n_classes as u32,
            self.trees.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for t in &self.trees {
            out.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
            for node in &t.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        out.push(1);
                        out.extend_from_slice(&(*feature as u32).to_le_bytes());
                        out.extend_from_slice(&threshold.to_le_bytes());
                        out.extend_from_slice(&(*left as u32).to_le_bytes());
                        out.extend_from_slice(&(*right as u32).to_le_bytes());
                    }
                    Node::Leaf { counts } => {
                        out.push(0);
                        for c in counts {
                            out.extend_from_slice(&c.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Forest> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != FOREST_MAGIC {
            return Err(Error::Format("not a forest file".into()));
        }
        let version = r.u32()?;
        if version != FOREST_VERSION {
            return Err(Error::Format(format!(
                "unsupported forest version {version}"
            )));
        }
        let n_features = r.u32()? as usize;
        let n_classes = r.u32()? as usize;
        let n_trees = r.u32()? as usize;
        let mut trees = Vec::with_capacity(n_trees.min(bytes.len()));
        for t in 0..n_trees {
            let n_nodes = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes.min(bytes.len()));
            for i in 0..n_nodes {
                let node = match r.u8()? {
                    1 => {
                        let feature = r.u32()? as usize;
                        let threshold = r.f64()?;
                        let left = r.u32()? as usize;
                        let right = r.u32()? as usize;
                        if feature >= n_features
                            || left <= i
                            || right <= i
                            || left >= n_nodes
                            || right >= n_nodes
                        {
                            return Err(Error::Format(format!("tree {t} node {i}: bad split")));
                        }
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        }
                    }
                    0 => Node::Leaf {
                        counts: (0..n_classes).map(|_| r.u32()).collect::<Result<_>>()?,
                    },
                    tag => {
                        return Err(Error::Format(format!(
                            "tree {t} node {i}: unknown tag {tag}"
                        )))
                    }
                };
                nodes.push(node);
            }
            if nodes.is_empty() {
                return Err(Error::Format(format!("tree {t} has no nodes")));
            }
            trees.push(Tree { nodes });
        }
        r.finish()?;
        Ok(Forest {
            n_features,
            n_classes,
            trees,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Forest> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Contiguous, non-overlapping recording folds whose sizes differ by at
/// most one.
pub fn recording_folds(n_recordings: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n_recordings {
        return Err(Error::Config(format!(
            "{k} folds over {n_recordings} recordings"
        )));
    }
    Ok((0..k)
        .map(|f| (f * n_recordings / k..(f + 1) * n_recordings / k).collect())
        .collect())
}

/// Recording-level k-fold cross-validation: each recording is predicted by
/// a forest trained on the recordings of the other folds.
pub fn cross_validate(
    recordings: &[Dataset],
    k: usize,
    cfg: &ForestConfig,
) -> Result<Vec<Vec<usize>>> {
    let folds = recording_folds(recordings.len(), k)?;
    let mut out = vec![Vec::new(); recordings.len()];
    for fold in &folds {
        let train: Vec<&Dataset> = (0..recordings.len())
            .filter(|i| !fold.contains(i))
            .map(|i| &recordings[i])
            .collect();
        let forest = Forest::fit(&Dataset::concat(&train)?, cfg)?;
        for &i in fold {
            out[i] = forest.predict_rows(&recordings[i].x)?;
        }
    }
    Ok(out)
}
