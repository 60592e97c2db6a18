use rayon::prelude::*;

use super::ExplainError;
use crate::learn::{Dataset, FlatTree, TreeEnsemble};

/// Additive attribution of one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapExplanation {
    pub instance_id: String,
    /// Expected model output with no feature known.
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

const NO_FEATURE: usize = usize::MAX;

fn extend(path: &mut [PathElem], depth: usize, zero: f64, one: f64, feature: usize) {
    path[depth] = PathElem {
        feature,
        zero,
        one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / d1;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 / d1;
    }
}

fn unwind(path: &mut [PathElem], depth: usize, index: usize) {
    let (one, zero) = (path[index].one, path[index].zero);
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * d1 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
}

/// Total weight of the path with element `index` removed.
fn unwound_sum(path: &[PathElem], depth: usize, index: usize) -> f64 {
    let (one, zero) = (path[index].one, path[index].zero);
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (depth - i) as f64 / d1;
        } else {
            total += path[i].weight / zero * d1 / (depth - i) as f64;
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    t: &FlatTree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    parent: &[PathElem],
    mut depth: usize,
    zero: f64,
    one: f64,
    feature: usize,
) {
    let mut path = parent[..depth].to_vec();
    path.push(PathElem {
        feature: NO_FEATURE,
        zero: 0.0,
        one: 0.0,
        weight: 0.0,
    });
    extend(&mut path, depth, zero, one, feature);
    if t.is_leaf(node) {
        for i in 1..=depth {
            let w = unwound_sum(&path, depth, i);
            let e = path[i];
            phi[e.feature] += w * (e.one - e.zero) * t.value[node];
        }
        return;
    }
    let f = t.feature[node];
    let (hot, cold) = if x[f] < t.threshold[node] {
        (t.left[node], t.right[node])
    } else {
        (t.right[node], t.left[node])
    };
    let cover = t.cover[node];
    let (hot_zero, cold_zero) = (t.cover[hot] / cover, t.cover[cold] / cover);
    let (mut in_zero, mut in_one) = (1.0, 1.0);
    if let Some(k) = (1..=depth).find(|&k| path[k].feature == f) {
        in_zero = path[k].zero;
        in_one = path[k].one;
        unwind(&mut path, depth, k);
        depth -= 1;
    }
    recurse(
        t,
        x,
        phi,
        hot,
        &path,
        depth + 1,
        hot_zero * in_zero,
        in_one,
        f,
    );
    recurse(
        t,
        x,
        phi,
        cold,
        &path,
        depth + 1,
        cold_zero * in_zero,
        0.0,
        f,
    );
}

fn checked_trees(model: &TreeEnsemble) -> Result<Vec<FlatTree>, ExplainError> {
    model
        .trees
        .iter()
        .enumerate()
        .map(|(ti, tree)| {
            let t = tree.flatten();
            for i in 0..t.len() {
                let ok = t.cover[i].is_finite()
                    && t.cover[i] > 0.0
                    && (t.is_leaf(i)
                        || (t.cover[t.left[i]] + t.cover[t.right[i]] - t.cover[i]).abs()
                            <= 1e-9 * t.cover[i]);
                if !ok {
                    return Err(ExplainError::MissingCover { tree: ti, node: i });
                }
            }
            Ok(t)
        })
        .collect()
}

/// Cover-weighted mean leaf value.
fn expected_value(t: &FlatTree) -> f64 {
    let leaves = (0..t.len()).filter(|&i| t.is_leaf(i));
    leaves.map(|i| t.cover[i] * t.value[i]).sum::<f64>() / t.cover[0]
}

fn explain_flat(
    model: &TreeEnsemble,
    trees: &[FlatTree],
    x: &[f64],
    id: &str,
) -> Result<ShapExplanation, ExplainError> {
    let prediction = model.predict_row(x)?;
    let w = model.tree_weight();
    let mut phi = vec![0.0; x.len()];
    let mut base = 0.0;
    let mut tree_phi = vec![0.0; x.len()];
    for t in trees {
        tree_phi.fill(0.0);
        recurse(t, x, &mut tree_phi, 0, &[], 0, 1.0, 1.0, NO_FEATURE);
        for (a, b) in phi.iter_mut().zip(&tree_phi) {
            *a += w * b;
        }
        base += expected_value(t);
    }
    Ok(ShapExplanation {
        instance_id: id.to_string(),
        base_value: model.offset() + w * base,
        phi,
        prediction,
    })
}

/// Exact path-dependent TreeSHAP values of one instance (columns in model
/// feature order).
pub fn tree_shap(model: &TreeEnsemble, x: &[f64]) -> Result<ShapExplanation, ExplainError> {
    let trees = checked_trees(model)?;
    explain_flat(model, &trees, x, "")
}

/// Explanations for every row of `ds`, columns matched by name.
pub fn explain_dataset(
    model: &TreeEnsemble,
    ds: &Dataset,
) -> Result<Vec<ShapExplanation>, ExplainError> {
    let trees = checked_trees(model)?;
    let map = model.column_map(&ds.names)?;
    (0..ds.n())
        .into_par_iter()
        .map(|i| {
            let row = ds.row(i);
            let x: Vec<f64> = map.iter().map(|&j| row[j]).collect();
            explain_flat(model, &trees, &x, &ds.ids[i])
        })
        .collect()
}

/// Path-dependent conditional expectation of one tree given the features
/// in `known` (bitmask).
fn conditional(t: &FlatTree, x: &[f64], known: u64, node: usize) -> f64 {
    if t.is_leaf(node) {
        return t.value[node];
    }
    let f = t.feature[node];
    let (l, r) = (t.left[node], t.right[node]);
    if known >> f & 1 == 1 {
        conditional(t, x, known, if x[f] < t.threshold[node] { l } else { r })
    } else {
        (t.cover[l] * conditional(t, x, known, l) + t.cover[r] * conditional(t, x, known, r))
            / t.cover[node]
    }
}

/// Reference Shapley values by enumerating every feature subset with the
/// same cover-conditional value function. Exponential in the feature
/// count; limited to 16 features.
pub fn shapley_by_enumeration(model: &TreeEnsemble, x: &[f64]) -> Result<Vec<f64>, ExplainError> {
    let p = model.feature_names.len();
    if p > 16 {
        return Err(ExplainError::Input(format!(
            "subset enumeration limited to 16 features, got {p}"
        )));
    }
    if x.len() != p {
        return Err(crate::learn::LearnError::Dimension {
            expected: p,
            got: x.len(),
        }
        .into());
    }
    let trees = checked_trees(model)?;
    let value: Vec<f64> = (0..1u64 << p)
        .map(|s| {
            model.offset()
                + model.tree_weight() * trees.iter().map(|t| conditional(t, x, s, 0)).sum::<f64>()
        })
        .collect();
    let mut fact = vec![1.0f64; p + 1];
    for i in 1..=p {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut phi = vec![0.0; p];
    for (i, out) in phi.iter_mut().enumerate() {
        for s in 0..1u64 << p {
            if s >> i & 1 == 1 {
                continue;
            }
            let k = s.count_ones() as usize;
            let w = fact[k] * fact[p - k - 1] / fact[p];
            *out += w * (value[(s | 1 << i) as usize] - value[s as usize]);
        }
    }
    Ok(phi)
}

/// One dot of a beeswarm plot.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapPoint {
    pub instance_id: String,
    pub feature: String,
    pub phi: f64,
    pub value: f64,
    /// Feature value min-max scaled over the explained instances (0.5 for a
    /// constant feature).
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapSummary {
    /// (feature, mean |phi|), descending.
    pub ranking: Vec<(String, f64)>,
    pub points: Vec<ShapPoint>,
}

/// Mean-|phi| ranking and per-instance points for the `top` highest ranked
/// features (all when `None`). `rows[i]` holds the feature values of
/// `explanations[i]` in model order.
pub fn shap_summary(
    names: &[String],
    explanations: &[ShapExplanation],
    rows: &[Vec<f64>],
    top: Option<usize>,
) -> Result<ShapSummary, ExplainError> {
    if explanations.is_empty() || explanations.len() != rows.len() {
        return Err(ExplainError::Input(
            "need one feature row per explanation".into(),
        ));
    }
    let p = names.len();
    if explanations.iter().any(|e| e.phi.len() != p) || rows.iter().any(|r| r.len() != p) {
        return Err(ExplainError::Input(
            "explanation width differs from feature names".into(),
        ));
    }
    let n = explanations.len() as f64;
    let mean_abs: Vec<f64> = (0..p)
        .map(|j| explanations.iter().map(|e| e.phi[j].abs()).sum::<f64>() / n)
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]));
    order.truncate(top.unwrap_or(p));
    let mut points = Vec::new();
    for &j in &order {
        let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        for (e, r) in explanations.iter().zip(rows) {
            points.push(ShapPoint {
                instance_id: e.instance_id.clone(),
                feature: names[j].clone(),
                phi: e.phi[j],
                value: r[j],
                normalized: if hi > lo {
                    (r[j] - lo) / (hi - lo)
                } else {
                    0.5
                },
            });
        }
    }
    Ok(ShapSummary {
        ranking: order
            .iter()
            .map(|&j| (names[j].clone(), mean_abs[j]))
            .collect(),
        points,
    })
}

impl ShapSummary {
    /// Rows of (instance, feature, phi, feature value, normalized value).
    pub fn points_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["instance", "feature", "phi", "value", "normalized_value"])
            .expect("in-memory write");
        for p in &self.points {
            w.write_record([
                p.instance_id.clone(),
                p.feature.clone(),
                p.phi.to_string(),
                p.value.to_string(),
                p.normalized.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn ranking_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["feature", "mean_abs_phi"])
            .expect("in-memory write");
        for (f, v) in &self.ranking {
            w.write_record([f.clone(), v.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{fit, EnsembleKind, Flavor, MaxFeatures, Node, Tree, SCHEMA_VERSION};
    use crate::rng::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = rng_for(seed, 3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let r: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            y.push(3.0 * r[0] + r[1] + 2.0 * r[0] * r[2.min(p - 1)] + rng.random::<f64>() * 0.1);
            x.extend(r);
        }
        Dataset::new((0..p).map(|i| format!("x{i}")).collect(), x, y).unwrap()
    }

    fn stump() -> TreeEnsemble {
        TreeEnsemble {
            schema_version: SCHEMA_VERSION,
            kind: EnsembleKind::RandomForest,
            base_score: 0.0,
            learning_rate: 1.0,
            feature_names: vec!["a".into(), "b".into()],
            config: Flavor::RandomForest.defaults(),
            trees: vec![Tree {
                root: Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    gain: 1.0,
                    cover: 2.0,
                    left: Box::new(Node::Leaf {
                        value: 0.0,
                        cover: 1.0,
                    }),
                    right: Box::new(Node::Leaf {
                        value: 1.0,
                        cover: 1.0,
                    }),
                },
            }],
        }
    }

    #[test]
    fn stump_by_hand() {
        let m = stump();
        let e = tree_shap(&m, &[0.9, 7.0]).unwrap();
        assert_eq!(
            (e.base_value, e.phi.clone(), e.prediction),
            (0.5, vec![0.5, 0.0], 1.0)
        );
        let e = tree_shap(&m, &[0.1, 7.0]).unwrap();
        assert_eq!(e.phi, vec![-0.5, 0.0]);
    }

    #[test]
    fn missing_cover_is_an_error() {
        let mut m = stump();
        if let Node::Split { cover, .. } = &mut m.trees[0].root {
            *cover = 0.0;
        }
        assert!(matches!(
            tree_shap(&m, &[0.0, 0.0]),
            Err(ExplainError::MissingCover { .. })
        ));
    }

    #[test]
    fn matches_enumeration_for_every_family() {
        let ds = data(200, 6, 1);
        for flavor in Flavor::ALL {
            let mut cfg = flavor.defaults();
            cfg.n_estimators = 8;
            cfg.max_depth = Some(5);
            cfg.min_samples_leaf = 2;
            if flavor == Flavor::RandomForest {
                cfg.max_features = MaxFeatures::Sqrt;
            }
            let m = fit(&ds, &cfg).unwrap();
            for i in (0..ds.n()).step_by(37) {
                let e = tree_shap(&m, ds.row(i)).unwrap();
                let oracle = shapley_by_enumeration(&m, ds.row(i)).unwrap();
                for (a, b) in e.phi.iter().zip(&oracle) {
                    assert!(
                        (a - b).abs() <= 1e-8 * b.abs().max(1.0),
                        "{flavor:?}: {a} vs {b}"
                    );
                }
                let total = e.base_value + e.phi.iter().sum::<f64>();
                assert!((total - e.prediction).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn unused_feature_gets_zero() {
        let mut ds = data(150, 4, 2);
        for i in 0..ds.n() {
            ds.x[i * 4 + 3] = 1.0;
        }
        let mut cfg = Flavor::XgBoost.defaults();
        cfg.n_estimators = 10;
        let m = fit(&ds, &cfg).unwrap();
        for e in explain_dataset(&m, &ds).unwrap() {
            assert_eq!(e.phi[3], 0.0);
        }
    }

    #[test]
    fn summary_ranks_dominant_feature_first() {
        let ds = data(300, 4, 3);
        let mut cfg = Flavor::XgBoost.defaults();
        cfg.n_estimators = 30;
        let m = fit(&ds, &cfg).unwrap();
        let ex = explain_dataset(&m, &ds).unwrap();
        let rows: Vec<Vec<f64>> = (0..ds.n()).map(|i| ds.row(i).to_vec()).collect();
        let s = shap_summary(&ds.names, &ex, &rows, Some(2)).unwrap();
        assert_eq!(s.ranking[0].0, "x0");
        assert_eq!(s.ranking.len(), 2);
        assert_eq!(s.points.len(), 2 * ds.n());
        let doubled: Vec<ShapExplanation> = ex.iter().chain(&ex).cloned().collect();
        let rows2: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
        let s2 = shap_summary(&ds.names, &doubled, &rows2, Some(2)).unwrap();
        let names = |s: &ShapSummary| s.ranking.iter().map(|r| r.0.clone()).collect::<Vec<_>>();
        assert_eq!(names(&s), names(&s2));
        assert!(s
            .points_csv()
            .starts_with("instance,feature,phi,value,normalized_value\n"));
    }

    #[test]
    fn single_instance_ranking_is_abs_phi_order() {
        let e = ShapExplanation {
            instance_id: "i".into(),
            base_value: 0.0,
            phi: vec![0.1, -0.7, 0.3],
            prediction: -0.3,
        };
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let s = shap_summary(&names, &[e], &[vec![1.0, 2.0, 3.0]], None).unwrap();
        let order: Vec<&str> = s.ranking.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(order, vec!["b", "c", "a"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn local_accuracy(seed in 0u64..500, leafwise in any::<bool>()) {
            let ds = data(120, 5, seed);
            let mut cfg = if leafwise { Flavor::LightGbm.defaults() } else { Flavor::RandomForest.defaults() };
            cfg.n_estimators = 6;
            cfg.min_samples_leaf = 3;
            cfg.seed = seed;
            let m = fit(&ds, &cfg).unwrap();
            for e in explain_dataset(&m, &ds).unwrap().iter().step_by(11) {
                let total = e.base_value + e.phi.iter().sum::<f64>();
                prop_assert!((total - e.prediction).abs() <= 1e-8);
            }
        }
    }
}
