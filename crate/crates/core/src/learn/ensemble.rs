use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, LearnerConfig};
use super::tree::{BinnedData, GrowParams, Grower, Node, Tree};
use super::{Dataset, LearnError};
use crate::rng::rng_for;

/// Version of the ensemble JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Mean of the tree outputs.
    RandomForest,
    /// `base_score + learning_rate * sum` of the tree outputs.
    Gbdt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub schema_version: u32,
    pub kind: EnsembleKind,
    pub base_score: f64,
    pub learning_rate: f64,
    pub feature_names: Vec<String>,
    pub config: LearnerConfig,
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    /// Constant added to the weighted tree sum.
    pub fn offset(&self) -> f64 {
        match self.kind {
            EnsembleKind::RandomForest => 0.0,
            EnsembleKind::Gbdt => self.base_score,
        }
    }

    /// Weight of each tree's output in the prediction.
    pub fn tree_weight(&self) -> f64 {
        match self.kind {
            EnsembleKind::RandomForest => 1.0 / self.trees.len() as f64,
            EnsembleKind::Gbdt => self.learning_rate,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<f64, LearnError> {
        if x.len() != self.feature_names.len() {
            return Err(LearnError::Dimension {
                expected: self.feature_names.len(),
                got: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(match self.kind {
            EnsembleKind::RandomForest => sum / self.trees.len() as f64,
            EnsembleKind::Gbdt => self.base_score + self.learning_rate * sum,
        })
    }

    /// Column positions of the model features within `names`.
    pub fn column_map(&self, names: &[String]) -> Result<Vec<usize>, LearnError> {
        self.feature_names
            .iter()
            .map(|f| {
                names
                    .iter()
                    .position(|n| n == f)
                    .ok_or_else(|| LearnError::MissingFeature(f.clone()))
            })
            .collect()
    }

    /// Predictions for every row, matching columns by feature name.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>, LearnError> {
        let map = self.column_map(&ds.names)?;
        (0..ds.n())
            .into_par_iter()
            .map(|i| {
                let row = ds.row(i);
                let x: Vec<f64> = map.iter().map(|&j| row[j]).collect();
                self.predict_row(&x)
            })
            .collect()
    }

    /// Total split gain per feature over all trees.
    pub fn feature_gains(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_names.len()];
        for t in &self.trees {
            let mut stack = vec![&t.root];
            while let Some(n) = stack.pop() {
                if let Node::Split {
                    feature,
                    gain,
                    left,
                    right,
                    ..
                } = n
                {
                    out[*feature] += gain;
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let m = TreeEnsemble::deserialize(&mut de).map_err(|e| LearnError::Model(e.to_string()))?;
        de.end().map_err(|e| LearnError::Model(e.to_string()))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(LearnError::Model(format!(
                "unsupported schema_version {}",
                m.schema_version
            )));
        }
        if m.trees.is_empty() {
            return Err(LearnError::Model("no trees".into()));
        }
        let p = m.feature_names.len();
        for t in &m.trees {
            let f = t.flatten();
            for i in (0..f.len()).filter(|&i| !f.is_leaf(i)) {
                if f.feature[i] >= p || !f.threshold[i].is_finite() {
                    return Err(LearnError::Model(format!("invalid split at node {i}")));
                }
            }
        }
        Ok(m)
    }
}

fn check(cfg: &LearnerConfig, want: Algorithm) -> Result<(), LearnError> {
    cfg.validate()?;
    if cfg.algorithm != want {
        return Err(LearnError::Config(format!(
            "expected algorithm {want:?}, got {:?}",
            cfg.algorithm
        )));
    }
    Ok(())
}

fn draw_features(rng: &mut impl Rng, p: usize, fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..p).collect();
    }
    let k = ((fraction * p as f64 + 0.5).floor() as usize).clamp(1, p);
    let mut f = sample(rng, p, k).into_vec();
    f.sort_unstable();
    f
}

/// One tree fitted to per-row gradients and hessians under `cfg`'s split
/// rules (variance reduction for random forests, second-order gain for
/// boosting). Rows with zero hessian are left out.
pub fn fit_tree(
    ds: &Dataset,
    cfg: &LearnerConfig,
    grad: &[f64],
    hess: &[f64],
) -> Result<Tree, LearnError> {
    cfg.validate()?;
    if grad.len() != ds.n() || hess.len() != ds.n() {
        return Err(LearnError::Dataset("gradient length mismatch".into()));
    }
    let data = BinnedData::new(ds, cfg.max_bin);
    let params = GrowParams::from_config(cfg, ds.p());
    let grower = Grower {
        data: &data,
        g: grad,
        h: hess,
        params: &params,
    };
    let rows = (0..ds.n()).filter(|&i| hess[i] > 0.0).collect();
    let features: Vec<usize> = (0..ds.p()).collect();
    Ok(grower.grow(rows, &features, &mut rng_for(cfg.seed, 0)))
}

pub fn fit_random_forest(ds: &Dataset, cfg: &LearnerConfig) -> Result<TreeEnsemble, LearnError> {
    check(cfg, Algorithm::RandomForest)?;
    let (n, p) = (ds.n(), ds.p());
    let data = BinnedData::new(ds, cfg.max_bin);
    let params = GrowParams::from_config(cfg, p);
    let trees: Vec<Tree> = (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(cfg.seed, t as u64);
            let mut w = vec![0.0; n];
            if cfg.bootstrap {
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1.0;
                }
            } else {
                w.fill(1.0);
            }
            let features = draw_features(&mut rng, p, cfg.feature_fraction);
            let g: Vec<f64> = w.iter().zip(&ds.y).map(|(w, y)| -w * y).collect();
            let rows = (0..n).filter(|&i| w[i] > 0.0).collect();
            let grower = Grower {
                data: &data,
                g: &g,
                h: &w,
                params: &params,
            };
            grower.grow(rows, &features, &mut rng)
        })
        .collect();
    Ok(TreeEnsemble {
        schema_version: SCHEMA_VERSION,
        kind: EnsembleKind::RandomForest,
        base_score: 0.0,
        learning_rate: 1.0,
        feature_names: ds.names.clone(),
        config: cfg.clone(),
        trees,
    })
}

pub fn fit_gbdt(ds: &Dataset, cfg: &LearnerConfig) -> Result<TreeEnsemble, LearnError> {
    check(cfg, Algorithm::Gbdt)?;
    let (n, p) = (ds.n(), ds.p());
    let data = BinnedData::new(ds, cfg.max_bin);
    let params = GrowParams::from_config(cfg, p);
    let base = cfg
        .base_score
        .unwrap_or_else(|| ds.y.iter().sum::<f64>() / n as f64);
    let mut pred = vec![base; n];
    let hess = vec![1.0; n];
    let mut bag: Vec<usize> = (0..n).collect();
    let bagging = cfg.bagging_freq > 0 && cfg.bagging_fraction < 1.0;
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    for round in 0..cfg.n_estimators {
        let mut rng = rng_for(cfg.seed, round as u64);
        if bagging && round % cfg.bagging_freq == 0 {
            let k = ((cfg.bagging_fraction * n as f64 + 0.5).floor() as usize).clamp(1, n);
            bag = sample(&mut rng, n, k).into_vec();
            bag.sort_unstable();
        }
        let features = draw_features(&mut rng, p, cfg.feature_fraction);
        let grad: Vec<f64> = pred.iter().zip(&ds.y).map(|(f, y)| f - y).collect();
        let grower = Grower {
            data: &data,
            g: &grad,
            h: &hess,
            params: &params,
        };
        let tree = grower.grow(bag.clone(), &features, &mut rng);
        pred.par_iter_mut()
            .enumerate()
            .for_each(|(i, f)| *f += cfg.learning_rate * tree.predict(ds.row(i)));
        trees.push(tree);
    }
    Ok(TreeEnsemble {
        schema_version: SCHEMA_VERSION,
        kind: EnsembleKind::Gbdt,
        base_score: base,
        learning_rate: cfg.learning_rate,
        feature_names: ds.names.clone(),
        config: cfg.clone(),
        trees,
    })
}

pub fn fit(ds: &Dataset, cfg: &LearnerConfig) -> Result<TreeEnsemble, LearnError> {
    match cfg.algorithm {
        Algorithm::RandomForest => fit_random_forest(ds, cfg),
        Algorithm::Gbdt => fit_gbdt(ds, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{metrics, split_dataset, Flavor, Growth};
    use proptest::prelude::*;
    use rand::Rng;

    fn friedman(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_for(seed, 99);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let r: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            y.push(
                10.0 * (std::f64::consts::PI * r[0] * r[1]).sin()
                    + 20.0 * (r[2] - 0.5).powi(2)
                    + 10.0 * r[3]
                    + 5.0 * r[4]
                    + rng.random_range(-0.5..0.5),
            );
            x.extend(r);
        }
        Dataset::new((0..6).map(|i| format!("x{i}")).collect(), x, y).unwrap()
    }

    fn mse(m: &TreeEnsemble, ds: &Dataset) -> f64 {
        let p = m.predict_dataset(ds).unwrap();
        p.iter()
            .zip(&ds.y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / ds.n() as f64
    }

    #[test]
    fn lr_zero_predicts_base_score() {
        let ds = friedman(100, 1);
        let cfg = Flavor::XgBoost
            .defaults()
            .with_params(&[("learning_rate", 0.0.into())])
            .unwrap();
        let m = fit_gbdt(&ds, &cfg).unwrap();
        assert!(m.predict_dataset(&ds).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_leaf_round_predicts_mean() {
        let ds = friedman(50, 2);
        let mut cfg = Flavor::XgBoost.defaults();
        cfg.n_estimators = 1;
        cfg.learning_rate = 1.0;
        cfg.max_depth = Some(0);
        cfg.reg_lambda = 0.0;
        cfg.base_score = Some(0.0);
        let m = fit_gbdt(&ds, &cfg).unwrap();
        let mean = ds.y.iter().sum::<f64>() / 50.0;
        for v in m.predict_dataset(&ds).unwrap() {
            assert!((v - mean).abs() < 1e-12);
        }
        assert_eq!(m.trees[0].n_leaves(), 1);
    }

    #[test]
    fn training_loss_never_increases() {
        let ds = friedman(300, 3);
        for growth in [Growth::DepthWise, Growth::LeafWise] {
            let mut cfg = Flavor::LightGbm.defaults();
            cfg.growth = growth;
            cfg.n_estimators = 60;
            cfg.max_depth = Some(4);
            cfg.num_leaves = Some(12);
            cfg.reg_lambda = 1.0;
            cfg.feature_fraction = 0.5;
            let m = fit_gbdt(&ds, &cfg).unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..=m.trees.len() {
                let mut part = m.clone();
                part.trees.truncate(k);
                let loss = if k == 0 {
                    ds.y.iter().map(|y| (y - m.base_score).powi(2)).sum::<f64>() / ds.n() as f64
                } else {
                    mse(&part, &ds)
                };
                assert!(loss <= prev * (1.0 + 1e-12), "round {k}: {loss} > {prev}");
                prev = loss;
            }
        }
    }

    #[test]
    fn forest_of_one_unbagged_tree_is_that_tree() {
        let ds = friedman(120, 4);
        let mut cfg = Flavor::RandomForest.defaults();
        cfg.n_estimators = 1;
        cfg.bootstrap = false;
        let m = fit_random_forest(&ds, &cfg).unwrap();
        let g: Vec<f64> = ds.y.iter().map(|v| -v).collect();
        let t = fit_tree(&ds, &cfg, &g, &vec![1.0; ds.n()]).unwrap();
        assert_eq!(m.trees[0], t);
        for i in 0..ds.n() {
            assert_eq!(m.predict_row(ds.row(i)).unwrap(), t.predict(ds.row(i)));
        }
    }

    #[test]
    fn forest_prediction_is_tree_mean() {
        let ds = friedman(150, 5);
        let mut cfg = Flavor::RandomForest.defaults();
        cfg.n_estimators = 7;
        cfg.max_features = crate::learn::MaxFeatures::Sqrt;
        let m = fit_random_forest(&ds, &cfg).unwrap();
        for i in 0..ds.n() {
            let outs: Vec<f64> = m.trees.iter().map(|t| t.predict(ds.row(i))).collect();
            let v = m.predict_row(ds.row(i)).unwrap();
            assert_eq!(v, outs.iter().sum::<f64>() / 7.0);
            let lo = outs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = outs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * hi.abs().max(lo.abs());
            assert!(lo - tol <= v && v <= hi + tol);
        }
    }

    #[test]
    fn histogram_matches_exact_when_bins_suffice() {
        let mut ds = friedman(200, 6);
        // coarse values so several features have few distinct levels
        for v in ds.x.iter_mut() {
            *v = (*v * 20.0).floor();
        }
        let mut exact = Flavor::XgBoost.defaults();
        exact.n_estimators = 20;
        exact.max_bin = 0;
        let mut hist = exact.clone();
        hist.max_bin = 21;
        assert_eq!(
            fit_gbdt(&ds, &exact).unwrap().trees,
            fit_gbdt(&ds, &hist).unwrap().trees
        );
        let mut rf = Flavor::RandomForest.defaults();
        rf.n_estimators = 5;
        let mut rf_hist = rf.clone();
        rf_hist.max_bin = 400;
        assert_eq!(
            fit_random_forest(&ds, &rf).unwrap().trees,
            fit_random_forest(&ds, &rf_hist).unwrap().trees
        );
    }

    #[test]
    fn parallel_and_serial_fits_are_identical() {
        let ds = friedman(300, 7);
        let presets = crate::learn::model_presets();
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let wide = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        for idx in [0usize, 2, 3] {
            let mut cfg = presets[idx].config.clone();
            cfg.n_estimators = cfg.n_estimators.min(15);
            let a = serial.install(|| fit(&ds, &cfg).unwrap().to_json());
            let b = wide.install(|| fit(&ds, &cfg).unwrap().to_json());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn routing_is_by_feature_name() {
        let ds = friedman(150, 8);
        let mut cfg = Flavor::XgBoost.defaults();
        cfg.n_estimators = 10;
        let m = fit_gbdt(&ds, &cfg).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let names: Vec<String> = perm.iter().map(|&j| ds.names[j].clone()).collect();
        let mut x = Vec::new();
        for i in 0..ds.n() {
            x.extend(perm.iter().map(|&j| ds.row(i)[j]));
        }
        let shuffled = Dataset::new(names, x, ds.y.clone()).unwrap();
        assert_eq!(
            m.predict_dataset(&ds).unwrap(),
            m.predict_dataset(&shuffled).unwrap()
        );
        assert!(matches!(
            m.predict_row(&[0.0; 5]),
            Err(LearnError::Dimension {
                expected: 6,
                got: 5
            })
        ));
    }

    #[test]
    fn monotone_transform_with_mapped_thresholds() {
        let ds = friedman(150, 9);
        let mut cfg = Flavor::RandomForest.defaults();
        cfg.n_estimators = 5;
        let m = fit_random_forest(&ds, &cfg).unwrap();
        let f = |v: f64| v.exp() * 3.0 + 1.0;
        let mut mapped = m.clone();
        for t in &mut mapped.trees {
            let mut stack = vec![&mut t.root];
            while let Some(n) = stack.pop() {
                if let Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } = n
                {
                    if *feature == 2 {
                        *threshold = f(*threshold);
                    }
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        let mut moved = ds.clone();
        for i in 0..moved.n() {
            moved.x[i * 6 + 2] = f(moved.x[i * 6 + 2]);
        }
        assert_eq!(
            m.predict_dataset(&ds).unwrap(),
            mapped.predict_dataset(&moved).unwrap()
        );
    }

    #[test]
    fn json_roundtrip_and_deep_trees() {
        let ds = friedman(400, 10);
        let mut cfg = Flavor::RandomForest.defaults();
        cfg.n_estimators = 3;
        let m = fit_random_forest(&ds, &cfg).unwrap();
        let back = TreeEnsemble::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), m.to_json());
        // a chain deeper than the default JSON recursion limit
        let mut node = Node::Leaf {
            value: 1.0,
            cover: 1.0,
        };
        for d in 0..400 {
            node = Node::Split {
                feature: 0,
                threshold: d as f64,
                gain: 1.0,
                cover: 2.0,
                left: Box::new(Node::Leaf {
                    value: 0.0,
                    cover: 1.0,
                }),
                right: Box::new(node),
            };
        }
        let mut deep = m.clone();
        deep.trees = vec![Tree { root: node }];
        assert_eq!(
            TreeEnsemble::from_json(&deep.to_json())
                .unwrap()
                .trees
                .len(),
            1
        );
        let bad = m
            .to_json()
            .replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        assert!(TreeEnsemble::from_json(&bad).is_err());
    }

    #[test]
    fn rejects_wrong_algorithm() {
        let ds = friedman(20, 11);
        assert!(fit_random_forest(&ds, &Flavor::XgBoost.defaults()).is_err());
        assert!(fit_gbdt(&ds, &Flavor::RandomForest.defaults()).is_err());
    }

    #[test]
    fn learns_friedman_signal() {
        let ds = friedman(1500, 12);
        let parts = split_dataset(&ds, &[0.8, 0.2], 12).unwrap();
        let mut cfg = Flavor::XgBoost.defaults();
        cfg.learning_rate = 0.1;
        cfg.n_estimators = 200;
        cfg.max_depth = Some(4);
        let m = fit_gbdt(&parts[0], &cfg).unwrap();
        let r2 = metrics(&parts[1].y, &m.predict_dataset(&parts[1]).unwrap())
            .unwrap()
            .r2
            .unwrap();
        assert!(r2 > 0.85, "r2 = {r2}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn forest_bounds_hold(seed in 0u64..1000, n in 10usize..60) {
            let ds = friedman(n, seed);
            let mut cfg = Flavor::RandomForest.defaults();
            cfg.n_estimators = 4;
            cfg.seed = seed;
            let m = fit_random_forest(&ds, &cfg).unwrap();
            let (lo, hi) = ds.y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            for v in m.predict_dataset(&ds).unwrap() {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }
}
