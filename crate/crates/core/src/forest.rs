//! Honest, subsampled, axis-aligned forests.
//!
//! Every tree is grown on a subsample drawn without replacement. The
//! subsample is halved: the *split* half chooses thresholds, the
//! *estimation* half populates the leaves. Units outside a tree's subsample
//! are out-of-bag (OOB) for that tree.
//!
//! The split rule is pluggable through [`SplitScan`]; the driver owns
//! sorting, candidate thresholds, the minimum-node-size rule and tie
//! breaking, so every forest flavour shares the same tree mechanics.
//!
//! Randomness: tree `t` draws from `ChaCha8Rng::seed_from_u64(seed)` with
//! stream `t`, so results do not depend on how trees are scheduled.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CsfError, Result};
use crate::matrix::Matrix;

/// Identity of the per-tree random generator, recorded in model files.
pub const RNG_ID: &str = "chacha8rng:seed_from_u64(seed):stream(tree_index)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub num_trees: usize,
    pub subsample_fraction: f64,
    pub honesty_fraction: f64,
    /// Candidate features per node; `None` means `min(ceil(sqrt(p) + 20), p)`.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: 2000,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            mtry: None,
            min_node_size: 5,
            seed: 42,
        }
    }
}

impl ForestParams {
    pub fn with_trees(mut self, num_trees: usize) -> Self {
        self.num_trees = num_trees;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        match self.mtry {
            Some(m) => m,
            None => (((p as f64).sqrt() + 20.0).ceil() as usize).min(p).max(1),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.num_trees < 2 {
            return Err(CsfError::param("num_trees must be at least 2"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(CsfError::param("subsample_fraction must lie in (0, 1]"));
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return Err(CsfError::param("honesty_fraction must lie in (0, 1)"));
        }
        if self.min_node_size == 0 {
            return Err(CsfError::param("min_node_size must be positive"));
        }
        if p == 0 {
            return Err(CsfError::param("need at least one covariate"));
        }
        match self.mtry {
            Some(m) if m == 0 || m > p => Err(CsfError::param(format!("mtry must lie in 1..={p}"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Regression,
    Survival,
    Causal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Estimation-half units routed to this leaf, ascending.
        members: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TreeData", into = "TreeData")]
pub struct Tree {
    nodes: Vec<Node>,
    split_sample: Vec<u32>,
    estimation_sample: Vec<u32>,
    in_bag: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct TreeData {
    nodes: Vec<Node>,
    split_sample: Vec<u32>,
}

impl From<TreeData> for Tree {
    fn from(data: TreeData) -> Self {
        Tree::new(data.nodes, data.split_sample)
    }
}

impl From<Tree> for TreeData {
    fn from(tree: Tree) -> Self {
        TreeData {
            nodes: tree.nodes,
            split_sample: tree.split_sample,
        }
    }
}

impl Tree {
    fn new(nodes: Vec<Node>, mut split_sample: Vec<u32>) -> Self {
        split_sample.sort_unstable();
        let mut estimation_sample: Vec<u32> = nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { members } => Some(members.iter().copied()),
                Node::Split { .. } => None,
            })
            .flatten()
            .collect();
        estimation_sample.sort_unstable();
        let mut in_bag = split_sample.clone();
        in_bag.extend_from_slice(&estimation_sample);
        in_bag.sort_unstable();
        Tree {
            nodes,
            split_sample,
            estimation_sample,
            in_bag,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn split_sample(&self) -> &[u32] {
        &self.split_sample
    }

    pub fn estimation_sample(&self) -> &[u32] {
        &self.estimation_sample
    }

    pub fn is_in_bag(&self, id: usize) -> bool {
        self.in_bag.binary_search(&(id as u32)).is_ok()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn leaf_members(&self, x: &[f64]) -> &[u32] {
        let mut k = 0usize;
        loop {
            match &self.nodes[k] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { members } => return members,
            }
        }
    }
}

/// Chosen split of a node: route left iff `x[feature] <= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
}

/// Incremental split statistics for one node.
///
/// The driver sorts the node's split-half units by a feature and moves them
/// one at a time into the left child; `gain` is queried at each boundary
/// between distinct feature values.
pub(crate) trait SplitScan {
    /// Clears the left child. Returns false if the node cannot be split at
    /// all (for example no variation in the labels).
    fn reset(&mut self) -> bool;
    /// Moves the unit at position `pos` of the node's split list to the left.
    fn push_left(&mut self, pos: usize);
    /// Criterion value of the current partition, or `None` when the
    /// partition is not admissible.
    fn gain(&self, n_left: usize, n_right: usize) -> Option<f64>;
    /// Gains at or below this value do not produce a split.
    fn min_gain(&self) -> f64;
}

/// Builds a node-level scan from the node's split-half ids.
pub(crate) trait SplitCriterion: Sync {
    type Scan: SplitScan;
    fn scan(&self, split_ids: &[u32]) -> Option<Self::Scan>;
}

/// Column-major copy of the covariates for split search.
pub(crate) struct Columns {
    cols: Vec<Vec<f64>>,
}

impl Columns {
    pub fn new(x: &Matrix) -> Self {
        Columns {
            cols: (0..x.ncols()).map(|j| x.column(j)).collect(),
        }
    }

    #[inline]
    fn value(&self, feature: usize, id: u32) -> f64 {
        self.cols[feature][id as usize]
    }

    fn p(&self) -> usize {
        self.cols.len()
    }
}

/// Exhaustive threshold search over the candidate features.
///
/// Thresholds sit at midpoints between consecutive distinct split-half
/// values. Ties go to the lowest feature index, then the lowest threshold.
pub(crate) fn best_split<S: SplitScan>(
    cols: &Columns,
    split_ids: &[u32],
    est_ids: &[u32],
    features: &[usize],
    min_node_size: usize,
    scan: &mut S,
) -> Option<SplitChoice> {
    let m = split_ids.len();
    let mut best: Option<(f64, SplitChoice)> = None;
    let mut order: Vec<usize> = (0..m).collect();
    let mut est_vals: Vec<f64> = Vec::with_capacity(est_ids.len());
    for &f in features {
        if !scan.reset() {
            return None;
        }
        order.sort_by(|&a, &b| {
            cols.value(f, split_ids[a])
                .total_cmp(&cols.value(f, split_ids[b]))
                .then(a.cmp(&b))
        });
        est_vals.clear();
        est_vals.extend(est_ids.iter().map(|&id| cols.value(f, id)));
        est_vals.sort_by(f64::total_cmp);
        for k in 0..m - 1 {
            scan.push_left(order[k]);
            let lo = cols.value(f, split_ids[order[k]]);
            let hi = cols.value(f, split_ids[order[k + 1]]);
            if lo == hi {
                continue;
            }
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            let est_left = est_vals.partition_point(|&v| v <= threshold);
            if est_left < min_node_size || est_vals.len() - est_left < min_node_size {
                continue;
            }
            if let Some(gain) = scan.gain(k + 1, m - k - 1) {
                if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    best = Some((gain, SplitChoice { feature: f, threshold }));
                }
            }
        }
    }
    match best {
        Some((gain, choice)) if gain > scan.min_gain() => Some(choice),
        _ => None,
    }
}

/// Weighted sum-of-squares criterion: maximizes
/// `S_L^2 / W_L + S_R^2 / W_R - S^2 / W` for per-unit values and weights.
pub(crate) struct VarianceScan {
    values: Vec<f64>,
    weights: Vec<f64>,
    total_sum: f64,
    total_weight: f64,
    tolerance: f64,
    left_sum: f64,
    left_weight: f64,
}

impl VarianceScan {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Self {
        let total_sum = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
        let total_weight = weights.iter().sum();
        let scale: f64 = values.iter().zip(&weights).map(|(v, w)| w * v * v).sum();
        VarianceScan {
            values,
            weights,
            total_sum,
            total_weight,
            tolerance: 1e-12 * scale.max(f64::MIN_POSITIVE),
            left_sum: 0.0,
            left_weight: 0.0,
        }
    }

    /// Like `new`, but the no-gain tolerance is relative to `scale`
    /// instead of the weighted sum of squared values.
    pub fn with_scale(values: Vec<f64>, weights: Vec<f64>, scale: f64) -> Self {
        let mut scan = VarianceScan::new(values, weights);
        scan.tolerance = 1e-12 * scale.max(f64::MIN_POSITIVE);
        scan
    }
}

impl SplitScan for VarianceScan {
    fn reset(&mut self) -> bool {
        self.left_sum = 0.0;
        self.left_weight = 0.0;
        self.total_weight > 0.0
    }

    fn push_left(&mut self, pos: usize) {
        self.left_sum += self.values[pos] * self.weights[pos];
        self.left_weight += self.weights[pos];
    }

    fn gain(&self, _n_left: usize, _n_right: usize) -> Option<f64> {
        let right_weight = self.total_weight - self.left_weight;
        if self.left_weight <= 0.0 || right_weight <= 1e-15 * self.total_weight {
            return None;
        }
        let right_sum = self.total_sum - self.left_sum;
        Some(
            self.left_sum * self.left_sum / self.left_weight + right_sum * right_sum / right_weight
                - self.total_sum * self.total_sum / self.total_weight,
        )
    }

    fn min_gain(&self) -> f64 {
        self.tolerance
    }
}

/// Plain weighted regression: labels with sample weights.
pub(crate) struct RegressionCriterion<'a> {
    pub labels: &'a [f64],
    pub weights: &'a [f64],
}

impl SplitCriterion for RegressionCriterion<'_> {
    type Scan = VarianceScan;

    fn scan(&self, split_ids: &[u32]) -> Option<VarianceScan> {
        let values = split_ids.iter().map(|&i| self.labels[i as usize]).collect();
        let weights = split_ids.iter().map(|&i| self.weights[i as usize]).collect();
        Some(VarianceScan::new(values, weights))
    }
}

/// A fitted forest: tree structure, subsamples and per-unit sample weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    params: ForestParams,
    label_kind: LabelKind,
    num_features: usize,
    sample_weights: Vec<f64>,
    rng: String,
    trees: Vec<Tree>,
}

impl Forest {
    /// Grows `params.num_trees` honest trees. Units with zero weight never
    /// enter a subsample and are therefore out-of-bag everywhere.
    pub(crate) fn grow<C: SplitCriterion>(
        x: &Matrix,
        sample_weights: &[f64],
        criterion: &C,
        params: &ForestParams,
        label_kind: LabelKind,
    ) -> Result<Forest> {
        params.validate(x.ncols())?;
        if sample_weights.len() != x.nrows() {
            return Err(CsfError::param(format!(
                "{} sample weights for {} rows",
                sample_weights.len(),
                x.nrows()
            )));
        }
        if sample_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CsfError::param("sample weights must be finite and nonnegative"));
        }
        let active: Vec<u32> = (0..x.nrows() as u32)
            .filter(|&i| sample_weights[i as usize] > 0.0)
            .collect();
        if active.is_empty() {
            return Err(CsfError::param("total sample weight is zero"));
        }
        let cols = Columns::new(x);
        let trees = (0..params.num_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64);
                let (split, est) = draw_subsample(&active, params, &mut rng);
                grow_tree(&cols, split, est, criterion, params, &mut rng)
            })
            .collect();
        Ok(Forest {
            params: params.clone(),
            label_kind,
            num_features: x.ncols(),
            sample_weights: sample_weights.to_vec(),
            rng: RNG_ID.to_string(),
            trees,
        })
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn label_kind(&self) -> LabelKind {
        self.label_kind
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    /// Number of training rows (including zero-weight rows).
    pub fn num_rows(&self) -> usize {
        self.sample_weights.len()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn rng_id(&self) -> &str {
        &self.rng
    }

    pub fn sample_weights(&self) -> &[f64] {
        &self.sample_weights
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_features {
            return Err(CsfError::param(format!(
                "point has {} features, forest was trained on {}",
                x.len(),
                self.num_features
            )));
        }
        Ok(())
    }

    /// Visits the leaf reached by `x` in every tree, skipping trees where
    /// `exclude` is in-bag. The callback receives each leaf member and its
    /// within-leaf weight `w_i / sum(leaf weights)`. Returns the number of
    /// trees visited.
    pub(crate) fn visit_leaves<F: FnMut(usize, f64)>(&self, x: &[f64], exclude: Option<usize>, mut f: F) -> usize {
        let mut used = 0;
        for tree in &self.trees {
            if exclude.is_some_and(|i| tree.is_in_bag(i)) {
                continue;
            }
            let members = tree.leaf_members(x);
            let total: f64 = members.iter().map(|&i| self.sample_weights[i as usize]).sum();
            if total <= 0.0 {
                continue;
            }
            used += 1;
            for &i in members {
                f(i as usize, self.sample_weights[i as usize] / total);
            }
        }
        used
    }

    #[cfg(test)]
    pub(crate) fn with_trees(&self, trees: Vec<Tree>) -> Forest {
        Forest {
            trees,
            ..self.clone()
        }
    }

    /// Number of trees for which training unit `i` is out-of-bag.
    pub fn oob_tree_count(&self, i: usize) -> usize {
        self.trees.iter().filter(|t| !t.is_in_bag(i)).count()
    }

    /// Forest kernel at `x`: sparse weights over training ids summing to one.
    pub fn kernel_weights(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_point(x)?;
        Ok(self.collect_kernel(x, None))
    }

    /// Kernel for training unit `i` built from the trees where it is OOB.
    /// Falls back to the full kernel when `i` is in-bag everywhere.
    pub fn oob_kernel_weights(&self, i: usize, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_point(x)?;
        let k = self.collect_kernel(x, Some(i));
        if k.is_empty() {
            Ok(self.collect_kernel(x, None))
        } else {
            Ok(k)
        }
    }

    fn collect_kernel(&self, x: &[f64], exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut acc: Vec<(usize, f64)> = Vec::new();
        let used = self.visit_leaves(x, exclude, |i, a| acc.push((i, a)));
        if used == 0 {
            return Vec::new();
        }
        acc.sort_by_key(|e| e.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
        for (i, a) in acc {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += a,
                _ => out.push((i, a)),
            }
        }
        for e in &mut out {
            e.1 /= used as f64;
        }
        out
    }

    /// Kernel-weighted averages of per-unit channel values at `x`.
    ///
    /// `channels(i, acc, a)` adds unit `i`'s contribution with weight `a`
    /// into `acc`. Returns `None` if no tree was usable.
    pub(crate) fn kernel_average<F>(&self, x: &[f64], exclude: Option<usize>, width: usize, mut channels: F) -> Option<Vec<f64>>
    where
        F: FnMut(usize, &mut [f64], f64),
    {
        let mut acc = vec![0.0; width];
        let used = self.visit_leaves(x, exclude, |i, a| channels(i, &mut acc, a));
        if used == 0 {
            return None;
        }
        for v in &mut acc {
            *v /= used as f64;
        }
        Some(acc)
    }
}

fn draw_subsample(active: &[u32], params: &ForestParams, rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<u32>) {
    let m = active.len();
    let s = ((params.subsample_fraction * m as f64).ceil() as usize).clamp(1, m);
    let picked = index::sample(rng, m, s);
    let mut ids: Vec<u32> = picked.iter().map(|k| active[k]).collect();
    if s < 2 {
        return (Vec::new(), ids);
    }
    let n_split = ((params.honesty_fraction * s as f64).ceil() as usize).clamp(1, s - 1);
    let mut est = ids.split_off(n_split);
    ids.sort_unstable();
    est.sort_unstable();
    (ids, est)
}

/// Grows one tree from a fixed split half and estimation half.
pub(crate) fn grow_tree<C: SplitCriterion>(
    cols: &Columns,
    split: Vec<u32>,
    est: Vec<u32>,
    criterion: &C,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let p = cols.p();
    let mtry = params.mtry_for(p);
    let min_node = params.min_node_size;
    let split_sample = split.clone();
    let mut nodes = vec![Node::Leaf { members: Vec::new() }];
    let mut stack = vec![(0usize, split, est)];
    while let Some((node, split, est)) = stack.pop() {
        let splittable = split.len() >= 2 && est.len() >= 2 * min_node;
        let choice = if splittable {
            let mut features: Vec<usize> = index::sample(rng, p, mtry).into_vec();
            features.sort_unstable();
            criterion
                .scan(&split)
                .and_then(|mut scan| best_split(cols, &split, &est, &features, min_node, &mut scan))
        } else {
            None
        };
        match choice {
            Some(SplitChoice { feature, threshold }) => {
                let goes_left = |id: &u32| cols.value(feature, *id) <= threshold;
                let (split_l, split_r): (Vec<u32>, Vec<u32>) = split.iter().partition(|id| goes_left(id));
                let (est_l, est_r): (Vec<u32>, Vec<u32>) = est.iter().partition(|id| goes_left(id));
                let left = nodes.len();
                nodes.push(Node::Leaf { members: Vec::new() });
                nodes.push(Node::Leaf { members: Vec::new() });
                nodes[node] = Node::Split {
                    feature: feature as u32,
                    threshold,
                    left: left as u32,
                    right: left as u32 + 1,
                };
                stack.push((left + 1, split_r, est_r));
                stack.push((left, split_l, est_l));
            }
            None => nodes[node] = Node::Leaf { members: est },
        }
    }
    Tree::new(nodes, split_sample)
}

/// Regression forest: weighted CART splits on variance reduction,
/// predictions are kernel-weighted label means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    forest: Forest,
    labels: Vec<f64>,
}

/// OOB predictions plus the number of units that had no OOB tree and fell
/// back to the full forest.
#[derive(Debug, Clone, PartialEq)]
pub struct OobPredictions {
    pub values: Vec<f64>,
    pub fallback_count: usize,
}

impl RegressionForest {
    pub fn fit(x: &Matrix, labels: &[f64], sample_weights: &[f64], params: &ForestParams) -> Result<Self> {
        if labels.len() != x.nrows() {
            return Err(CsfError::param(format!("{} labels for {} rows", labels.len(), x.nrows())));
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(CsfError::param("labels must be finite"));
        }
        let criterion = RegressionCriterion {
            labels,
            weights: sample_weights,
        };
        let forest = Forest::grow(x, sample_weights, &criterion, params, LabelKind::Regression)?;
        Ok(RegressionForest {
            forest,
            labels: labels.to_vec(),
        })
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn average(&self, x: &[f64], exclude: Option<usize>) -> Option<f64> {
        self.forest
            .kernel_average(x, exclude, 1, |i, acc, a| acc[0] += a * self.labels[i])
            .map(|v| v[0])
    }

    pub fn predict_point(&self, x: &[f64]) -> Result<f64> {
        self.forest.check_point(x)?;
        self.average(x, None)
            .ok_or_else(|| CsfError::Model("forest has no usable tree".into()))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.forest.num_features {
            return Err(CsfError::param(format!(
                "matrix has {} columns, forest was trained on {}",
                x.ncols(),
                self.forest.num_features
            )));
        }
        (0..x.nrows())
            .into_par_iter()
            .map(|r| self.predict_point(x.row(r)))
            .collect()
    }

    /// OOB predictions for the training rows `x` (same row order as in fit).
    pub fn oob_predict(&self, x: &Matrix) -> Result<OobPredictions> {
        if x.nrows() != self.forest.num_rows() || x.ncols() != self.forest.num_features {
            return Err(CsfError::param("OOB prediction requires the training matrix"));
        }
        let out: Vec<(f64, bool)> = (0..x.nrows())
            .into_par_iter()
            .map(|i| match self.average(x.row(i), Some(i)) {
                Some(v) => (v, false),
                None => (self.average(x.row(i), None).unwrap_or(f64::NAN), true),
            })
            .collect();
        let fallback_count = out.iter().filter(|o| o.1).count();
        if fallback_count > 0 {
            log::warn!("{fallback_count} units were in-bag for every tree; used full-forest predictions");
        }
        Ok(OobPredictions {
            values: out.into_iter().map(|o| o.0).collect(),
            fallback_count,
        })
    }
}
