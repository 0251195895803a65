//! Greedy CART regression trees.
//!
//! Squared-error and Friedman trees grow level by level over columns that are
//! sorted once per training matrix, so forests and boosting rounds reuse the
//! same ordering and only change the per-row weights. Absolute-error trees use
//! a per-node sort with running medians.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    SquaredError,
    /// Friedman's improvement `wl*wr/(wl+wr) * (mean_l - mean_r)^2`. For
    /// mean-valued leaves it ranks splits exactly like squared error.
    FriedmanMse,
    /// L1 improvement with median leaves.
    AbsoluteError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: Criterion,
    /// `None` grows until the other constraints stop it.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            criterion: Criterion::SquaredError,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::Hyperparameter("min_samples_split must be >= 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Hyperparameter("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Criterion improvement of this split, weighted by node size.
        improvement: f64,
    },
    Leaf {
        value: f64,
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub n_features: usize,
    pub criterion: Criterion,
    pub nodes: Vec<Node>,
}

impl TreeModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Unnormalized improvement per feature.
    pub fn raw_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for n in &self.nodes {
            if let Node::Split {
                feature,
                improvement,
                ..
            } = n
            {
                imp[*feature] += improvement;
            }
        }
        imp
    }
}

/// Row indices of every column sorted by value (ties keep row order).
#[derive(Debug, Clone)]
pub struct SortedColumns {
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(x: &Matrix) -> Self {
        let order = (0..x.cols())
            .map(|j| {
                let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
                idx.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)));
                idx
            })
            .collect();
        Self { order }
    }

    pub fn column(&self, j: usize) -> &[u32] {
        &self.order[j]
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

const NO_NODE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Frontier {
    node: usize,
    depth: usize,
    w: f64,
    wy: f64,
    wy2: f64,
}

impl Frontier {
    fn sse(&self) -> f64 {
        (self.wy2 - self.wy * self.wy / self.w).max(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    lw: f64,
    lwy: f64,
    lwy2: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Scan {
    w: f64,
    wy: f64,
    wy2: f64,
    last: f64,
    seen: bool,
}

/// Inputs shared by every tree grown on one training matrix.
#[derive(Debug, Clone, Copy)]
pub struct GrowInput<'a> {
    pub x: &'a Matrix,
    pub sorted: &'a SortedColumns,
    pub y: &'a [f64],
    /// Non-negative row weights; zero removes a row from training.
    pub w: &'a [f64],
    /// Columns the tree may split on, ascending.
    pub features: &'a [usize],
}

/// Grows one tree. Splits with improvement below `min_gain` are not taken.
pub fn grow(input: GrowInput<'_>, params: &TreeParams, min_gain: f64) -> Result<TreeModel> {
    params.validate()?;
    let GrowInput { x, y, w, .. } = input;
    if x.rows() == 0 || y.len() != x.rows() || w.len() != x.rows() {
        return Err(Error::Data(format!(
            "tree needs matching non-empty data: {} rows, {} targets, {} weights",
            x.rows(),
            y.len(),
            w.len()
        )));
    }
    if !w.iter().any(|&v| v > 0.0) {
        return Err(Error::Data("tree training set has no rows with weight".into()));
    }
    if params.criterion == Criterion::AbsoluteError {
        return Ok(grow_absolute(input, params, min_gain));
    }
    Ok(grow_mean(input, params, min_gain))
}

fn grow_mean(input: GrowInput<'_>, params: &TreeParams, min_gain: f64) -> TreeModel {
    let GrowInput {
        x,
        sorted,
        y,
        w,
        features,
    } = input;
    let n = x.rows();
    let min_leaf = params.min_samples_leaf as f64;
    let max_depth = params.max_depth.unwrap_or(usize::MAX);

    let mut node_of = vec![NO_NODE; n];
    let mut root = Frontier {
        node: 0,
        depth: 0,
        w: 0.0,
        wy: 0.0,
        wy2: 0.0,
    };
    for i in 0..n {
        if w[i] > 0.0 {
            node_of[i] = 0;
            root.w += w[i];
            root.wy += w[i] * y[i];
            root.wy2 += w[i] * y[i] * y[i];
        }
    }
    let mut nodes = vec![Node::Leaf {
        value: root.wy / root.w,
        weight: root.w,
    }];
    let mut frontier = vec![root];

    while !frontier.is_empty() {
        // slot of each splittable frontier node, indexed by node id
        let mut slot_of = vec![NO_NODE; nodes.len()];
        let mut open = Vec::new();
        for f in &frontier {
            let splittable = f.depth < max_depth
                && f.w >= params.min_samples_split as f64
                && f.w >= 2.0 * min_leaf
                && f.sse() > 1e-12 * (1.0 + f.wy2.abs());
            if splittable {
                slot_of[f.node] = open.len() as u32;
                open.push(*f);
            }
        }
        if open.is_empty() {
            break;
        }

        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        let mut scans = vec![Scan::default(); open.len()];
        for &feat in features {
            scans.iter_mut().for_each(|s| *s = Scan::default());
            for &r in sorted.column(feat) {
                let r = r as usize;
                let nd = node_of[r];
                if nd == NO_NODE {
                    continue;
                }
                let slot = slot_of[nd as usize];
                if slot == NO_NODE {
                    continue;
                }
                let slot = slot as usize;
                let v = x.get(r, feat);
                let s = &mut scans[slot];
                if s.seen && v > s.last {
                    let total = &open[slot];
                    let rw = total.w - s.w;
                    if s.w >= min_leaf && rw >= min_leaf {
                        let ml = s.wy / s.w;
                        let mr = (total.wy - s.wy) / rw;
                        let gain = s.w * rw / total.w * (ml - mr) * (ml - mr);
                        let better = best[slot].is_none_or(|b| gain > b.gain);
                        if better {
                            best[slot] = Some(Candidate {
                                gain,
                                feature: feat,
                                threshold: midpoint(s.last, v),
                                lw: s.w,
                                lwy: s.wy,
                                lwy2: s.wy2,
                            });
                        }
                    }
                }
                let wr = w[r];
                s.w += wr;
                s.wy += wr * y[r];
                s.wy2 += wr * y[r] * y[r];
                s.last = v;
                s.seen = true;
            }
        }

        let mut next = Vec::new();
        // node id -> (feature, threshold, left id, right id) for row routing
        let mut routes: Vec<Option<(usize, f64, u32, u32)>> = vec![None; nodes.len()];
        for (slot, parent) in open.iter().enumerate() {
            let Some(c) = best[slot] else { continue };
            if !(c.gain > 0.0) || c.gain < min_gain {
                continue;
            }
            let left = Frontier {
                node: nodes.len(),
                depth: parent.depth + 1,
                w: c.lw,
                wy: c.lwy,
                wy2: c.lwy2,
            };
            let right = Frontier {
                node: nodes.len() + 1,
                depth: parent.depth + 1,
                w: parent.w - c.lw,
                wy: parent.wy - c.lwy,
                wy2: parent.wy2 - c.lwy2,
            };
            nodes.push(Node::Leaf {
                value: left.wy / left.w,
                weight: left.w,
            });
            nodes.push(Node::Leaf {
                value: right.wy / right.w,
                weight: right.w,
            });
            nodes[parent.node] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left: left.node,
                right: right.node,
                improvement: c.gain,
            };
            routes[parent.node] = Some((c.feature, c.threshold, left.node as u32, right.node as u32));
            next.push(left);
            next.push(right);
        }
        if next.is_empty() {
            break;
        }
        for r in 0..n {
            let nd = node_of[r];
            if nd == NO_NODE {
                continue;
            }
            if let Some((feat, thr, l, rt)) = routes.get(nd as usize).copied().flatten() {
                node_of[r] = if x.get(r, feat) <= thr { l } else { rt };
            }
        }
        frontier = next;
    }

    TreeModel {
        n_features: x.cols(),
        criterion: params.criterion,
        nodes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ord64(f64);

impl Eq for Ord64 {}

impl PartialOrd for Ord64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Streaming L1 cost `sum |y - median|` of a growing multiset.
#[derive(Default)]
struct RunningL1 {
    lower: BinaryHeap<Ord64>,
    upper: BinaryHeap<std::cmp::Reverse<Ord64>>,
    sum_lower: f64,
    sum_upper: f64,
}

impl RunningL1 {
    fn push(&mut self, v: f64) {
        if self.lower.peek().is_none_or(|m| v <= m.0) {
            self.lower.push(Ord64(v));
            self.sum_lower += v;
        } else {
            self.upper.push(std::cmp::Reverse(Ord64(v)));
            self.sum_upper += v;
        }
        if self.lower.len() > self.upper.len() + 1 {
            let m = self.lower.pop().unwrap().0;
            self.sum_lower -= m;
            self.upper.push(std::cmp::Reverse(Ord64(m)));
            self.sum_upper += m;
        } else if self.upper.len() > self.lower.len() {
            let m = self.upper.pop().unwrap().0 .0;
            self.sum_upper -= m;
            self.lower.push(Ord64(m));
            self.sum_lower += m;
        }
    }

    fn cost(&self) -> f64 {
        let Some(m) = self.lower.peek() else { return 0.0 };
        let extra = self.lower.len() as f64 - self.upper.len() as f64;
        (self.sum_upper - self.sum_lower + m.0 * extra).max(0.0)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn l1_cost(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let m = median(&mut v);
    v.iter().map(|y| (y - m).abs()).sum()
}

/// Absolute-error trees expand integer row weights into repeated samples.
fn grow_absolute(input: GrowInput<'_>, params: &TreeParams, min_gain: f64) -> TreeModel {
    let GrowInput {
        x, y, w, features, ..
    } = input;
    let mut rows = Vec::new();
    for (i, &wi) in w.iter().enumerate() {
        for _ in 0..wi.round().max(0.0) as usize {
            rows.push(i);
        }
    }
    let mut nodes = Vec::new();
    build_absolute(x, y, features, params, min_gain, rows, 0, &mut nodes);
    TreeModel {
        n_features: x.cols(),
        criterion: Criterion::AbsoluteError,
        nodes,
    }
}

#[allow(clippy::too_many_arguments)]
fn build_absolute(
    x: &Matrix,
    y: &[f64],
    features: &[usize],
    params: &TreeParams,
    min_gain: f64,
    rows: Vec<usize>,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let targets: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let mut tmp = targets.clone();
    nodes.push(Node::Leaf {
        value: median(&mut tmp),
        weight: rows.len() as f64,
    });
    let n = rows.len();
    let min_leaf = params.min_samples_leaf;
    if depth >= params.max_depth.unwrap_or(usize::MAX)
        || n < params.min_samples_split
        || n < 2 * min_leaf
    {
        return id;
    }
    let parent_cost = l1_cost(&targets);
    if parent_cost <= 1e-12 {
        return id;
    }

    let mut best: Option<(f64, usize, f64)> = None;
    for &feat in features {
        let mut order = rows.clone();
        order.sort_by(|&a, &b| x.get(a, feat).total_cmp(&x.get(b, feat)));
        let mut prefix = vec![0.0; n + 1];
        let mut acc = RunningL1::default();
        for k in 0..n {
            acc.push(y[order[k]]);
            prefix[k + 1] = acc.cost();
        }
        let mut suffix = vec![0.0; n + 1];
        let mut acc = RunningL1::default();
        for k in (0..n).rev() {
            acc.push(y[order[k]]);
            suffix[k] = acc.cost();
        }
        for k in min_leaf..=(n - min_leaf) {
            let (lo, hi) = (x.get(order[k - 1], feat), x.get(order[k], feat));
            if !(hi > lo) {
                continue;
            }
            let gain = parent_cost - prefix[k] - suffix[k];
            if best.is_none_or(|b| gain > b.0) {
                best = Some((gain, feat, midpoint(lo, hi)));
            }
        }
    }
    let Some((gain, feat, threshold)) = best else {
        return id;
    };
    if !(gain > 1e-12) || gain < min_gain {
        return id;
    }
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.into_iter().partition(|&r| x.get(r, feat) <= threshold);
    let left = build_absolute(x, y, features, params, min_gain, left_rows, depth + 1, nodes);
    let right = build_absolute(x, y, features, params, min_gain, right_rows, depth + 1, nodes);
    nodes[id] = Node::Split {
        feature: feat,
        threshold,
        left,
        right,
        improvement: gain,
    };
    id
}

/// Fits a tree on every column of `x` with unit weights.
pub fn dt_fit(x: &Matrix, y: &[f64], params: &TreeParams) -> Result<TreeModel> {
    let sorted = SortedColumns::new(x);
    let w = vec![1.0; x.rows()];
    let features: Vec<usize> = (0..x.cols()).collect();
    grow(
        GrowInput {
            x,
            sorted: &sorted,
            y,
            w: &w,
            features: &features,
        },
        params,
        0.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_col(xs: &[f64]) -> Matrix {
        Matrix::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn memorizes_distinct_points() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 37) % 40) as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|v| (v * 1.3).sin() * 5.0 + v).collect();
        let t = dt_fit(&one_col(&xs), &ys, &TreeParams::default()).unwrap();
        for (xv, yv) in xs.iter().zip(&ys) {
            assert!((t.predict_row(&[*xv]) - yv).abs() <= 1e-12 * yv.abs().max(1.0));
        }
    }

    #[test]
    fn depth_zero_is_the_mean() {
        let ys = [1.0, 2.0, 6.0];
        let p = TreeParams {
            max_depth: Some(0),
            ..TreeParams::default()
        };
        let t = dt_fit(&one_col(&[0.0, 1.0, 2.0]), &ys, &p).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict_row(&[5.0]), 3.0);
    }

    #[test]
    fn respects_depth_and_leaf_size() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| (v * 0.7).cos()).collect();
        let p = TreeParams {
            max_depth: Some(3),
            min_samples_leaf: 4,
            ..TreeParams::default()
        };
        let t = dt_fit(&one_col(&xs), &ys, &p).unwrap();
        assert!(t.depth() <= 3);
        for n in &t.nodes {
            if let Node::Leaf { weight, .. } = n {
                assert!(*weight >= 4.0);
            }
        }
    }

    #[test]
    fn absolute_error_uses_median_leaves() {
        let p = TreeParams {
            criterion: Criterion::AbsoluteError,
            max_depth: Some(0),
            ..TreeParams::default()
        };
        let t = dt_fit(&one_col(&[0.0, 1.0, 2.0, 3.0]), &[1.0, 2.0, 3.0, 100.0], &p).unwrap();
        assert_eq!(t.predict_row(&[0.0]), 2.5);

        let p = TreeParams {
            criterion: Criterion::AbsoluteError,
            ..TreeParams::default()
        };
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [1.0, 1.0, 1.0, 9.0, 9.0, 9.0];
        let t = dt_fit(&one_col(&xs), &ys, &p).unwrap();
        match &t.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 2.5),
            _ => panic!("expected a split"),
        }
        for (xv, yv) in xs.iter().zip(&ys) {
            assert_eq!(t.predict_row(&[*xv]), *yv);
        }
    }

    #[test]
    fn running_l1_matches_direct_cost() {
        let vals = [5.0, -1.0, 3.0, 3.0, 10.0, 0.5, 7.0];
        let mut acc = RunningL1::default();
        for k in 0..vals.len() {
            acc.push(vals[k]);
            assert!((acc.cost() - l1_cost(&vals[..=k])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let x = one_col(&[0.0, 1.0, 2.0, 3.0]);
        let sorted = SortedColumns::new(&x);
        let y = [0.0, 0.0, 100.0, 10.0];
        let w = [1.0, 1.0, 0.0, 1.0];
        let t = grow(
            GrowInput {
                x: &x,
                sorted: &sorted,
                y: &y,
                w: &w,
                features: &[0],
            },
            &TreeParams::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(t.predict_row(&[3.0]), 10.0);
        assert_eq!(t.predict_row(&[0.5]), 0.0);
    }

    #[test]
    fn empty_data_is_an_error() {
        let x = Matrix::zeros(0, 2);
        assert!(dt_fit(&x, &[], &TreeParams::default()).is_err());
    }
}
