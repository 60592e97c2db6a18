//! Histogram-binned regression trees grown from per-row gradient and
//! hessian sums.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, Growth, LearnerConfig};
use super::Dataset;

/// A tree node. Rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// Gain of the split before the `gamma` penalty.
        gain: f64,
        /// Sum of hessians (weighted row count) reaching the node.
        cover: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
}

/// Array form of a tree; `left[i] == usize::MAX` marks a leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTree {
    pub feature: Vec<usize>,
    pub threshold: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub value: Vec<f64>,
    pub cover: Vec<f64>,
    pub gain: Vec<f64>,
}

impl FlatTree {
    pub fn is_leaf(&self, i: usize) -> bool {
        self.left[i] == usize::MAX
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] < *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    /// Preorder array form (node 0 is the root, a left child follows its
    /// parent directly).
    pub fn flatten(&self) -> FlatTree {
        let mut t = FlatTree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
            cover: Vec::new(),
            gain: Vec::new(),
        };
        // (node, parent slot to patch with this node's index as right child)
        let mut stack: Vec<(&Node, Option<usize>)> = vec![(&self.root, None)];
        while let Some((node, parent)) = stack.pop() {
            let i = t.value.len();
            if let Some(p) = parent {
                t.right[p] = i;
            }
            t.cover.push(node.cover());
            match node {
                Node::Leaf { value, .. } => {
                    t.feature.push(usize::MAX);
                    t.threshold.push(f64::NAN);
                    t.left.push(usize::MAX);
                    t.right.push(usize::MAX);
                    t.value.push(*value);
                    t.gain.push(0.0);
                }
                Node::Split {
                    feature,
                    threshold,
                    gain,
                    left,
                    right,
                    ..
                } => {
                    t.feature.push(*feature);
                    t.threshold.push(*threshold);
                    t.left.push(i + 1);
                    t.right.push(usize::MAX);
                    t.value.push(f64::NAN);
                    t.gain.push(*gain);
                    stack.push((right, Some(i)));
                    stack.push((left, None));
                }
            }
        }
        t
    }

    pub fn n_leaves(&self) -> usize {
        let f = self.flatten();
        (0..f.len()).filter(|&i| f.is_leaf(i)).count()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(&self.root, 0usize)];
        while let Some((n, d)) = stack.pop() {
            best = best.max(d);
            if let Node::Split { left, right, .. } = n {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        best
    }
}

/// Per-feature bin codes with the smallest and largest training value of
/// each bin. Built once per fit.
#[derive(Debug, Clone)]
pub(crate) struct BinnedData {
    codes: Vec<Vec<u32>>,
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
}

impl BinnedData {
    /// One bin per distinct value when `max_bin` is 0 or not smaller than
    /// the distinct count, otherwise quantile bins with upper edges at the
    /// k/max_bin order statistics.
    pub fn new(ds: &Dataset, max_bin: usize) -> Self {
        let cols: Vec<(Vec<u32>, Vec<f64>, Vec<f64>)> = (0..ds.p())
            .into_par_iter()
            .map(|j| {
                let col = ds.column(j);
                let mut sorted = col.clone();
                sorted.sort_by(f64::total_cmp);
                let mut distinct = sorted.clone();
                distinct.dedup();
                let upper = if max_bin == 0 || distinct.len() <= max_bin {
                    distinct
                } else {
                    let n = sorted.len();
                    let mut u: Vec<f64> = (1..=max_bin)
                        .map(|k| sorted[(k * n).div_ceil(max_bin) - 1])
                        .collect();
                    u.dedup();
                    u
                };
                let codes: Vec<u32> = col
                    .iter()
                    .map(|v| upper.partition_point(|b| b < v) as u32)
                    .collect();
                let mut lo = vec![f64::INFINITY; upper.len()];
                let mut hi = vec![f64::NEG_INFINITY; upper.len()];
                for (v, &c) in col.iter().zip(&codes) {
                    lo[c as usize] = lo[c as usize].min(*v);
                    hi[c as usize] = hi[c as usize].max(*v);
                }
                (codes, lo, hi)
            })
            .collect();
        let mut out = BinnedData {
            codes: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
        };
        for (c, l, h) in cols {
            out.codes.push(c);
            out.lo.push(l);
            out.hi.push(h);
        }
        out
    }

    fn n_bins(&self, f: usize) -> usize {
        self.lo[f].len()
    }

    /// Threshold separating bins up to `a` from bins from `c` on.
    fn threshold(&self, f: usize, a: u32, c: u32) -> f64 {
        let (lo, hi) = (self.hi[f][a as usize], self.lo[f][c as usize]);
        let t = lo + (hi - lo) / 2.0;
        if t > lo {
            t
        } else {
            hi
        }
    }
}

/// Tree-growth settings extracted from a learner config.
#[derive(Debug, Clone)]
pub(crate) struct GrowParams {
    pub second_order: bool,
    pub growth: Growth,
    pub max_depth: Option<usize>,
    pub num_leaves: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Features drawn at every node; `None` uses every allowed feature.
    pub per_split: Option<usize>,
}

impl GrowParams {
    pub fn from_config(c: &LearnerConfig, p: usize) -> Self {
        let rf = c.algorithm == Algorithm::RandomForest;
        Self {
            second_order: !rf,
            growth: c.growth,
            max_depth: c.max_depth,
            num_leaves: c.num_leaves,
            min_samples_split: c.min_samples_split,
            min_samples_leaf: c.min_samples_leaf,
            lambda: if rf { 0.0 } else { c.reg_lambda },
            alpha: if rf { 0.0 } else { c.alpha },
            gamma: c.gamma,
            per_split: rf.then(|| c.max_features.count(p)),
        }
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    fn gain(&self, gl: f64, hl: f64, gr: f64, hr: f64, parent: f64) -> f64 {
        let raw = self.score(gl, hl) + self.score(gr, hr) - parent;
        if self.second_order {
            0.5 * raw
        } else {
            raw
        }
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        let soft = g.signum() * (g.abs() - self.alpha).max(0.0);
        let v = -soft / (h + self.lambda);
        if v == 0.0 {
            0.0
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    /// Last bin routed left.
    bin: u32,
    threshold: f64,
    gain: f64,
}

struct Pending {
    slot: usize,
    rows: Vec<usize>,
    depth: usize,
    g: f64,
    h: f64,
    best: Option<Candidate>,
}

enum Slot {
    Open,
    Leaf(f64, f64),
    Split(Candidate, f64, usize, usize),
}

/// Non-empty bins of one feature within a node: (bin, G, H, rows), with
/// sums accumulated in row order.
fn node_histogram(
    codes: &[u32],
    n_bins: usize,
    rows: &[usize],
    g: &[f64],
    h: &[f64],
) -> Vec<(u32, f64, f64, usize)> {
    if rows.len() * 4 >= n_bins {
        let mut hist = vec![(0.0f64, 0.0f64, 0usize); n_bins];
        for &r in rows {
            let e = &mut hist[codes[r] as usize];
            e.0 += g[r];
            e.1 += h[r];
            e.2 += 1;
        }
        hist.into_iter()
            .enumerate()
            .filter(|(_, e)| e.2 > 0)
            .map(|(b, e)| (b as u32, e.0, e.1, e.2))
            .collect()
    } else {
        let mut keyed: Vec<(u32, usize)> = rows.iter().map(|&r| (codes[r], r)).collect();
        keyed.sort_by_key(|k| k.0);
        let mut out: Vec<(u32, f64, f64, usize)> = Vec::new();
        for (b, r) in keyed {
            match out.last_mut() {
                Some(e) if e.0 == b => {
                    e.1 += g[r];
                    e.2 += h[r];
                    e.3 += 1;
                }
                _ => out.push((b, g[r], h[r], 1)),
            }
        }
        out
    }
}

pub(crate) struct Grower<'a> {
    pub data: &'a BinnedData,
    pub g: &'a [f64],
    pub h: &'a [f64],
    pub params: &'a GrowParams,
}

impl Grower<'_> {
    fn best_split(
        &self,
        rows: &[usize],
        gs: f64,
        hs: f64,
        features: &[usize],
    ) -> Option<Candidate> {
        let p = self.params;
        let parent = p.score(gs, hs);
        let per_feature: Vec<Option<Candidate>> = features
            .par_iter()
            .map(|&f| {
                let bins = node_histogram(
                    &self.data.codes[f],
                    self.data.n_bins(f),
                    rows,
                    self.g,
                    self.h,
                );
                let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
                let mut best: Option<(f64, usize)> = None;
                for i in 0..bins.len().saturating_sub(1) {
                    gl += bins[i].1;
                    hl += bins[i].2;
                    cl += bins[i].3;
                    let cr = rows.len() - cl;
                    if cl < p.min_samples_leaf || cr < p.min_samples_leaf {
                        continue;
                    }
                    let gain = p.gain(gl, hl, gs - gl, hs - hl, parent);
                    if best.is_none_or(|(b, _)| gain > b) {
                        best = Some((gain, i));
                    }
                }
                best.map(|(gain, i)| Candidate {
                    feature: f,
                    bin: bins[i].0,
                    threshold: self.data.threshold(f, bins[i].0, bins[i + 1].0),
                    gain,
                })
            })
            .collect();
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        best.filter(|c| c.gain.is_finite() && c.gain - p.gamma > 1e-12 * parent.abs())
    }

    fn pending(
        &self,
        slot: usize,
        rows: Vec<usize>,
        depth: usize,
        allowed: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Pending {
        let p = self.params;
        let (mut gs, mut hs) = (0.0, 0.0);
        for &r in &rows {
            gs += self.g[r];
            hs += self.h[r];
        }
        let splittable = p.max_depth.is_none_or(|d| depth < d)
            && rows.len() >= p.min_samples_split.max(2 * p.min_samples_leaf)
            && !allowed.is_empty();
        let best = if splittable {
            match p.per_split {
                Some(k) if k < allowed.len() => {
                    let mut pick: Vec<usize> = sample(rng, allowed.len(), k)
                        .into_iter()
                        .map(|i| allowed[i])
                        .collect();
                    pick.sort_unstable();
                    self.best_split(&rows, gs, hs, &pick)
                }
                _ => self.best_split(&rows, gs, hs, allowed),
            }
        } else {
            None
        };
        Pending {
            slot,
            rows,
            depth,
            g: gs,
            h: hs,
            best,
        }
    }

    /// Grows one tree over `rows` (distinct, ascending, positive hessian)
    /// restricted to the `allowed` features.
    pub fn grow(&self, rows: Vec<usize>, allowed: &[usize], rng: &mut ChaCha8Rng) -> Tree {
        let p = self.params;
        let mut slots = vec![Slot::Open];
        let root = self.pending(0, rows, 0, allowed, rng);
        let mut leaves = 1usize;
        let cap_ok = |leaves: usize| p.num_leaves.is_none_or(|n| leaves < n);
        let split =
            |node: Pending, slots: &mut Vec<Slot>, rng: &mut ChaCha8Rng| -> (Pending, Pending) {
                let c = node.best.expect("split candidate");
                let codes = &self.data.codes[c.feature];
                let (l, r): (Vec<usize>, Vec<usize>) =
                    node.rows.iter().partition(|&&row| codes[row] <= c.bin);
                let (li, ri) = (slots.len(), slots.len() + 1);
                slots.push(Slot::Open);
                slots.push(Slot::Open);
                slots[node.slot] = Slot::Split(c, node.h, li, ri);
                let left = self.pending(li, l, node.depth + 1, allowed, rng);
                let right = self.pending(ri, r, node.depth + 1, allowed, rng);
                (left, right)
            };
        let mut finished: Vec<Pending> = Vec::new();
        match p.growth {
            Growth::DepthWise => {
                let mut queue = VecDeque::from([root]);
                while let Some(node) = queue.pop_front() {
                    if node.best.is_some() && cap_ok(leaves) {
                        let (l, r) = split(node, &mut slots, rng);
                        leaves += 1;
                        queue.push_back(l);
                        queue.push_back(r);
                    } else {
                        finished.push(node);
                    }
                }
            }
            Growth::LeafWise => {
                let mut frontier = vec![root];
                while cap_ok(leaves) {
                    let mut pick: Option<usize> = None;
                    for (i, n) in frontier.iter().enumerate() {
                        if let Some(c) = n.best {
                            if pick.is_none_or(|j| c.gain > frontier[j].best.unwrap().gain) {
                                pick = Some(i);
                            }
                        }
                    }
                    let Some(i) = pick else { break };
                    let node = frontier.remove(i);
                    let (l, r) = split(node, &mut slots, rng);
                    leaves += 1;
                    frontier.push(l);
                    frontier.push(r);
                }
                finished.extend(frontier);
            }
        }
        for n in finished {
            slots[n.slot] = Slot::Leaf(p.leaf_value(n.g, n.h), n.h);
        }
        Tree {
            root: assemble(&mut slots, 0),
        }
    }
}

fn assemble(slots: &mut [Slot], i: usize) -> Node {
    match std::mem::replace(&mut slots[i], Slot::Open) {
        Slot::Leaf(value, cover) => Node::Leaf { value, cover },
        Slot::Split(c, cover, l, r) => Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            gain: c.gain,
            cover,
            left: Box::new(assemble(slots, l)),
            right: Box::new(assemble(slots, r)),
        },
        Slot::Open => unreachable!("every slot is resolved before assembly"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::Flavor;
    use crate::rng::rng_for;

    fn grow(ds: &Dataset, cfg: &LearnerConfig, g: &[f64], h: &[f64]) -> Tree {
        let data = BinnedData::new(ds, cfg.max_bin);
        let params = GrowParams::from_config(cfg, ds.p());
        let grower = Grower {
            data: &data,
            g,
            h,
            params: &params,
        };
        let all: Vec<usize> = (0..ds.p()).collect();
        grower.grow((0..ds.n()).collect(), &all, &mut rng_for(0, 0))
    }

    fn rf_grad(y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (y.iter().map(|v| -v).collect(), vec![1.0; y.len()])
    }

    #[test]
    fn quantile_bins() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let ds = Dataset::new(vec!["a".into()], x.clone(), x).unwrap();
        let b = BinnedData::new(&ds, 4);
        // upper edges at order statistics ceil(k*10/4) = 3, 5, 8, 10
        assert_eq!(b.hi[0], vec![2.0, 4.0, 7.0, 9.0]);
        assert_eq!(b.lo[0], vec![0.0, 3.0, 5.0, 8.0]);
        assert_eq!(b.threshold(0, 1, 2), 4.5);
        let exact = BinnedData::new(&ds, 0);
        assert_eq!(exact.n_bins(0), 10);
    }

    #[test]
    fn threshold_never_collapses_onto_left_value() {
        let a = 1.0f64;
        let c = f64::from_bits(a.to_bits() + 1);
        let ds = Dataset::new(vec!["a".into()], vec![a, c], vec![0.0, 1.0]).unwrap();
        let b = BinnedData::new(&ds, 0);
        let t = b.threshold(0, 0, 1);
        assert!(a < t && t <= c);
    }

    #[test]
    fn step_data_gives_a_stump() {
        let x: Vec<f64> = (-10..10).map(|i| i as f64 / 2.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 0.0 { 0.0 } else { 1.0 }).collect();
        let ds = Dataset::new(vec!["x".into()], x.clone(), y.clone()).unwrap();
        let cfg = Flavor::RandomForest.defaults();
        let (g, h) = rf_grad(&y);
        let t = grow(&ds, &cfg, &g, &h);
        assert_eq!(t.depth(), 1);
        match &t.root {
            Node::Split { threshold, .. } => assert_eq!(*threshold, -0.25),
            _ => panic!("expected a split"),
        }
        let mse: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (t.predict(&[*a]) - b).powi(2))
            .sum();
        assert_eq!(mse, 0.0);
        // boundary probe: just below and at the threshold
        assert_eq!(t.predict(&[-0.25 - 1e-12]), 0.0);
        assert_eq!(t.predict(&[-0.25]), 1.0);
    }

    #[test]
    fn constant_target_is_one_leaf() {
        let x: Vec<f64> = (0..30).map(|i| (i * 7 % 11) as f64).collect();
        let y = vec![0.37; 30];
        let ds = Dataset::new(vec!["x".into()], x, y.clone()).unwrap();
        let (g, h) = rf_grad(&y);
        let t = grow(&ds, &Flavor::RandomForest.defaults(), &g, &h);
        assert!(matches!(t.root, Node::Leaf { value, .. } if (value - 0.37).abs() < 1e-15));
    }

    #[test]
    fn gamma_gate_blocks_splits() {
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 4.0 { 0.0 } else { 1.0 }).collect();
        let ds = Dataset::new(vec!["x".into()], x, y.clone()).unwrap();
        // residuals from base 0: G_L = 0, G_R = -4, best gain = 0.5 * (16/4 - 16/8) = 1
        let g: Vec<f64> = y.iter().map(|v| -v).collect();
        let h = vec![1.0; 8];
        let mut cfg = Flavor::XgBoost.defaults();
        cfg.reg_lambda = 0.0;
        cfg.gamma = 0.99;
        assert!(
            matches!(grow(&ds, &cfg, &g, &h).root, Node::Split { gain, .. } if (gain - 1.0).abs() < 1e-12)
        );
        cfg.gamma = 1.01;
        assert!(matches!(grow(&ds, &cfg, &g, &h).root, Node::Leaf { value, .. } if value == 0.5));
    }

    #[test]
    fn min_samples_leaf_respected() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 1.0 { 5.0 } else { 0.0 }).collect();
        let ds = Dataset::new(vec!["x".into()], x, y.clone()).unwrap();
        let mut cfg = Flavor::RandomForest.defaults();
        cfg.min_samples_leaf = 3;
        let (g, h) = rf_grad(&y);
        let f = grow(&ds, &cfg, &g, &h).flatten();
        let leaf_cover: Vec<f64> = (0..f.len())
            .filter(|&i| f.is_leaf(i))
            .map(|i| f.cover[i])
            .collect();
        assert!(leaf_cover.iter().all(|&c| c >= 3.0));
    }

    #[test]
    fn leaf_wise_respects_leaf_cap() {
        let x: Vec<f64> = (0..64).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.7).sin()).collect();
        let ds = Dataset::new(vec!["x".into()], x, y.clone()).unwrap();
        let mut cfg = Flavor::LightGbm.defaults();
        cfg.min_samples_leaf = 1;
        cfg.num_leaves = Some(5);
        let g: Vec<f64> = y.iter().map(|v| -v).collect();
        let t = grow(&ds, &cfg, &g, &vec![1.0; 64]);
        assert_eq!(t.n_leaves(), 5);
        cfg.growth = Growth::DepthWise;
        cfg.max_depth = Some(2);
        cfg.num_leaves = None;
        let t = grow(&ds, &cfg, &g, &vec![1.0; 64]);
        assert_eq!((t.n_leaves(), t.depth()), (4, 2));
    }

    #[test]
    fn flatten_preserves_structure() {
        let x: Vec<f64> = (0..40).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.3).cos()).collect();
        let ds = Dataset::new(vec!["x".into()], x.clone(), y.clone()).unwrap();
        let (g, h) = rf_grad(&y);
        let t = grow(&ds, &Flavor::RandomForest.defaults(), &g, &h);
        let f = t.flatten();
        for v in &x {
            let mut i = 0;
            while !f.is_leaf(i) {
                i = if *v < f.threshold[i] {
                    f.left[i]
                } else {
                    f.right[i]
                };
            }
            assert_eq!(f.value[i], t.predict(&[*v]));
        }
        for i in (0..f.len()).filter(|&i| !f.is_leaf(i)) {
            assert_eq!(f.cover[i], f.cover[f.left[i]] + f.cover[f.right[i]]);
        }
    }

    #[test]
    fn histogram_paths_agree() {
        let codes: Vec<u32> = vec![3, 1, 3, 0, 7, 1];
        let g = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let h = [1.0; 6];
        let rows = [0, 1, 2, 4, 5];
        let dense = node_histogram(&codes, 8, &rows, &g, &h);
        let sparse = node_histogram(&codes, 1000, &rows, &g, &h);
        assert_eq!(dense, sparse);
        assert_eq!(dense.len(), 3);
    }
}
