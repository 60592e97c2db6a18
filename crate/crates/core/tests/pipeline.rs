use pvmap_core::explain::{explain_dataset, fis_table, shap_summary, FisModel};
use pvmap_core::ingest::{read_feature_csv, validate_schema, write_feature_csv};
use pvmap_core::learn::{model_presets, run_experiment_grid, Dataset, DatasetTag, TreeEnsemble};
use pvmap_core::synth::generate_feature_table;

fn datasets(n: usize, seed: u64) -> Vec<Dataset> {
    let table = generate_feature_table(n, seed, 0.3).unwrap();
    assert!(validate_schema(&table).is_clean());
    let back = read_feature_csv(&write_feature_csv(&table)).unwrap();
    assert_eq!(write_feature_csv(&back), write_feature_csv(&table));
    DatasetTag::ALL
        .iter()
        .map(|&t| Dataset::assemble(&back, t).unwrap())
        .collect()
}

fn quick_presets() -> Vec<pvmap_core::learn::ModelPreset> {
    model_presets()
        .into_iter()
        .map(|mut p| {
            p.config.n_estimators = p.config.n_estimators.min(12);
            p
        })
        .collect()
}

#[test]
fn grid_covers_all_sixteen_models_and_is_seeded() {
    let ds = datasets(400, 1);
    let presets = quick_presets();
    let a = run_experiment_grid(&ds, &presets, &[0.8, 0.2], 7);
    let b = run_experiment_grid(&ds, &presets, &[0.8, 0.2], 7);
    assert_eq!(a.cells.len(), 16);
    let rows = |o: &pvmap_core::learn::GridOutcome| {
        o.cells
            .iter()
            .map(|c| c.result.as_ref().unwrap().0.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(rows(&a), rows(&b));
    for r in rows(&a) {
        let k = DatasetTag::ALL
            .iter()
            .position(|&t| t == r.dataset)
            .unwrap();
        assert_eq!(r.n_train + r.n_test, ds[k].n());
        assert!(r.test.rmse >= r.test.mae);
    }
}

#[test]
fn saved_models_predict_identically_and_explain_consistently() {
    let ds = datasets(300, 2);
    let presets = quick_presets();
    let out = run_experiment_grid(&ds, &presets, &[0.8, 0.2], 3);
    let mut fis = Vec::new();
    for cell in out
        .cells
        .iter()
        .filter(|c| c.preset.dataset == DatasetTag::PvCount)
    {
        let (row, model) = cell.result.as_ref().unwrap();
        let back = TreeEnsemble::from_json(&model.to_json()).unwrap();
        let data = &ds[0];
        assert_eq!(
            back.predict_dataset(data).unwrap(),
            model.predict_dataset(data).unwrap()
        );
        if let Some(r2) = row.test.r2.filter(|r| *r > 0.0) {
            fis.push(FisModel::from_ensemble(&row.model_id, model, r2));
        }
        let sub = data.subset(&(0..25).collect::<Vec<_>>());
        let ex = explain_dataset(model, &sub).unwrap();
        let rows: Vec<Vec<f64>> = (0..sub.n()).map(|i| sub.row(i).to_vec()).collect();
        let summary = shap_summary(&sub.names, &ex, &rows, Some(5)).unwrap();
        assert_eq!(summary.ranking.len(), 5);
        for w in summary.ranking.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }
    if !fis.is_empty() {
        let t = fis_table(&fis, Some(&ds[0])).unwrap();
        assert_eq!(t.rows.len(), ds[0].p());
    }
}
