//! Pipeline stages driven through the library on a small synthetic corpus.

mod common;

use std::collections::BTreeMap;
use std::path::Path;

use fontparts::dataset::{LabelClause, LabelRule};
use fontparts::pipeline::{
    cmd_analyze, cmd_codebook, cmd_eval, cmd_extract, cmd_report, cmd_synth, cmd_train, prepare_dataset, Config,
    Workspace,
};
use fontparts::sift::{extract_font_descriptors, read_descriptor_cache};
use fontparts::Error;

use common::{first_glyph, read, read_json, read_rows, small_config};

fn run_all(cfg: &Config) -> String {
    cmd_synth(cfg).unwrap();
    cmd_extract(cfg).unwrap();
    cmd_train(cfg, false).unwrap();
    cmd_codebook(cfg).unwrap();
    cmd_analyze(cfg).unwrap();
    cmd_eval(cfg).unwrap();
    cmd_report(cfg).unwrap()
}

#[test]
fn shipped_config_is_the_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(Config::load(&path).unwrap(), Config::default());
}

#[test]
fn warm_cache_is_skipped_and_reloads_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_synth(&cfg).unwrap();
    let first = cmd_extract(&cfg).unwrap();
    assert_eq!((first.computed, first.skipped, first.failed), (30, 0, 0));

    let ws = Workspace::new(&cfg);
    let data = prepare_dataset(&cfg).unwrap();
    let mut record = data.records[0].clone();
    let cache = ws.descriptor_cache(&record.font_id);
    let bytes = read(&cache);
    let mtime = std::fs::metadata(&cache).unwrap().modified().unwrap();

    let second = cmd_extract(&cfg).unwrap();
    assert_eq!((second.computed, second.skipped), (0, 30));
    assert_eq!(std::fs::metadata(&cache).unwrap().modified().unwrap(), mtime);
    assert_eq!(read(&cache), bytes);

    record.load_glyphs().unwrap();
    let fresh = extract_font_descriptors(&record, &cfg.sift).unwrap();
    let cached = read_descriptor_cache(&cache).unwrap();
    assert!(!fresh.is_empty());
    assert_eq!(fresh.descriptors.len(), cached.descriptors.len());
    for (a, b) in fresh.descriptors.iter().zip(&cached.descriptors) {
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        // the cache keeps geometry only
        let (p, q) = (&a.keypoint, &b.keypoint);
        assert_eq!((p.x, p.y, p.sigma, p.orientation), (q.x, q.y, q.sigma, q.orientation));
        assert_eq!(a.glyph, b.glyph);
    }
}

#[test]
fn changed_sift_params_force_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.synth.n_fonts = 4;
    cfg.dataset.min_fonts = Some(1);
    cmd_synth(&cfg).unwrap();
    cmd_extract(&cfg).unwrap();
    cfg.sift.contrast_threshold = 0.05;
    let again = cmd_extract(&cfg).unwrap();
    assert_eq!((again.computed, again.skipped), (4, 0));
}

#[test]
fn corrupt_image_fails_only_its_font() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.synth.n_fonts = 10;
    cmd_synth(&cfg).unwrap();
    std::fs::write(first_glyph(dir.path()), b"P5 not an image").unwrap();
    match cmd_extract(&cfg) {
        Err(Error::PartialFailure { failed: 1, total: 10 }) => {}
        other => panic!("expected a partial failure, got {other:?}"),
    }
    let caches = glob::glob(&format!("{}/descriptors/*.gidx", dir.path().display()))
        .unwrap()
        .count();
    assert_eq!(caches, 9);
}

#[test]
fn missing_stage_names_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    match cmd_report(&cfg) {
        Err(Error::MissingStage { command, .. }) => assert_eq!(command, "train"),
        other => panic!("{other:?}"),
    }
    cmd_synth(&cfg).unwrap();
    let err = cmd_train(&cfg, false).unwrap_err();
    assert!(
        matches!(&err, Error::MissingStage { command, .. } if command == "extract"),
        "{err}"
    );
    assert!(err.to_string().contains("fontparts extract"));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let full_dir = tempfile::tempdir().unwrap();
    let mut full = small_config(full_dir.path());
    full.train.patience = 10;
    cmd_synth(&full).unwrap();
    cmd_extract(&full).unwrap();
    let uninterrupted = cmd_train(&full, false).unwrap();

    let part_dir = tempfile::tempdir().unwrap();
    let mut part = full.clone();
    part.paths.work_dir = part_dir.path().to_path_buf();
    cmd_synth(&part).unwrap();
    cmd_extract(&part).unwrap();
    part.train.epochs = 2;
    assert_eq!(cmd_train(&part, false).unwrap().epochs_done, 2);
    part.train.epochs = full.train.epochs;
    let resumed = cmd_train(&part, true).unwrap();

    assert_eq!(resumed, uninterrupted);
    let (a, b) = (Workspace::new(&full), Workspace::new(&part));
    assert_eq!(read(&a.checkpoint()), read(&b.checkpoint()));
    assert_eq!(read(&a.train_log()), read(&b.train_log()));
}

/// Strict local maxima above `min`, largest first, ties to the lower bin.
fn oracle_peaks(v: &[f64], top: usize, min: f64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = (0..v.len())
        .filter(|&i| {
            let left = i == 0 || v[i] > v[i - 1];
            let right = i + 1 == v.len() || v[i] > v[i + 1];
            left && right && v[i] > min
        })
        .map(|i| (i + 1, v[i]))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(top);
    out
}

#[test]
fn stage_outputs_agree_with_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let report = run_all(&cfg);
    let ws = Workspace::new(&cfg);

    // every bin of the delta histograms sums to zero over impressions
    let deltas = read_rows(&ws.analysis_file("delta_histograms.csv"));
    assert!(deltas.len() >= 2);
    for q in 0..cfg.codebook.q {
        let s: f64 = deltas.iter().map(|(_, v)| v[q]).sum();
        assert!(s.abs() < 1e-9, "bin {} sums to {s}", q + 1);
    }

    let peaks = read_json(&ws.analysis_file("peaks.json"));
    for (word, values) in &deltas {
        let want = oracle_peaks(values, cfg.analysis.peak_top_n, cfg.analysis.peak_min_value);
        let got: Vec<(usize, f64)> = peaks[word]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| (p["bin"].as_u64().unwrap() as usize, p["value"].as_f64().unwrap()))
            .collect();
        assert_eq!(got, want, "peaks of {word}");
    }

    // impression histogram minus the average row gives the delta file
    let hists: BTreeMap<String, Vec<f64>> = read_rows(&ws.analysis_file("impression_histograms.csv"))
        .into_iter()
        .collect();
    let avg = &hists["average"];
    for (word, d) in &deltas {
        for q in 0..d.len() {
            assert!((hists[word][q] - avg[q] - d[q]).abs() < 1e-9);
        }
    }

    let results = read_json(&ws.eval_file("results.json"));
    let map = results["map"].as_f64().unwrap();
    let aps: Vec<f64> = results["results"]
        .as_object()
        .unwrap()
        .values()
        .map(|r| r["ap"].as_f64().unwrap())
        .collect();
    assert!((map - aps.iter().sum::<f64>() / aps.len() as f64).abs() < 1e-12);

    assert!(report.contains(&format!("mAP: {:.2}%", 100.0 * map)), "{report}");
    assert!(report.contains(&format!(
        "constant-likelihood baseline {:.2}%",
        100.0 * results["baseline_map"].as_f64().unwrap()
    )));
    let nearest = read_json(&ws.analysis_file("neighbors.json"));
    for (word, list) in nearest.as_object().unwrap() {
        let first = &list[0];
        let cell = format!(
            "{} ({:.4})",
            first["word"].as_str().unwrap(),
            first["distance"].as_f64().unwrap()
        );
        assert!(report.contains(&format!("| {word} | {cell}")), "{word}: {cell}");
    }
    assert_eq!(read(&ws.report()), report.as_bytes());
}

#[test]
fn rerunning_a_stage_and_its_dependents_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let original = run_all(&cfg);
    let ws = Workspace::new(&cfg);

    std::fs::remove_dir_all(ws.codebook().parent().unwrap()).unwrap();
    std::fs::remove_dir_all(ws.analysis_dir()).unwrap();
    std::fs::remove_file(ws.report()).unwrap();
    assert!(matches!(cmd_analyze(&cfg), Err(Error::MissingStage { .. })));
    cmd_codebook(&cfg).unwrap();
    cmd_analyze(&cfg).unwrap();
    assert_eq!(cmd_report(&cfg).unwrap(), original);

    std::fs::remove_dir_all(ws.model_dir()).unwrap();
    std::fs::remove_dir_all(ws.eval_dir()).unwrap();
    cmd_train(&cfg, false).unwrap();
    cmd_analyze(&cfg).unwrap();
    cmd_eval(&cfg).unwrap();
    assert_eq!(cmd_report(&cfg).unwrap(), original);
}

#[test]
fn single_impression_gives_all_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.synth.n_fonts = 12;
    cfg.synth.labels = LabelRule {
        clauses: vec![LabelClause {
            word: "plain".into(),
            when: vec![],
        }],
    };
    cmd_synth(&cfg).unwrap();
    cmd_extract(&cfg).unwrap();
    cmd_train(&cfg, false).unwrap();
    cmd_codebook(&cfg).unwrap();
    cmd_analyze(&cfg).unwrap();
    let ws = Workspace::new(&cfg);
    let deltas = read_rows(&ws.analysis_file("delta_histograms.csv"));
    assert_eq!(deltas.len(), 1);
    assert!(deltas[0].1.iter().all(|&v| v == 0.0));
    assert!(!ws.analysis_file("bicluster.json").exists());
}
