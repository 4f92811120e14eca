#![allow(dead_code, clippy::field_reassign_with_default)]

use std::path::Path;

use fontparts::pipeline::Config;

/// A pipeline config small enough to run end to end in a few seconds.
pub fn small_config(work: &Path) -> Config {
    let mut cfg = Config::default();
    cfg.seed = 11;
    cfg.paths.work_dir = work.to_path_buf();
    cfg.synth.n_fonts = 30;
    cfg.synth.glyphs_per_font = 3;
    cfg.synth.image_size = 48;
    cfg.synth.flag_probability = 0.4;
    cfg.dataset.min_fonts = Some(3);
    cfg.sift.normalize_height = Some(64);
    cfg.train.epochs = 4;
    cfg.train.patience = 2;
    cfg.train.fonts_per_batch = 8;
    cfg.predict.n_repeats = 2;
    cfg.codebook.q = 8;
    cfg.codebook.max_iter = 25;
    cfg.codebook.sample_size = 5000;
    cfg.analysis.bicluster.row_clusters = 3;
    cfg.analysis.bicluster.col_clusters = 2;
    cfg.analysis.bicluster.n_singular_vectors = 2;
    cfg.analysis.bicluster.top_blocks = 3;
    cfg.analysis.overlay_fonts = 2;
    cfg.eval.table_size = 3;
    cfg
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap()
}

/// Rows of a histogram-style CSV: `owner,bin_1,...`.
pub fn read_rows(path: &Path) -> Vec<(String, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (
                rec[0].to_string(),
                rec.iter().skip(1).map(|v| v.parse().unwrap()).collect(),
            )
        })
        .collect()
}

/// The first glyph image of the synthetic corpus, in path order.
pub fn first_glyph(work: &Path) -> std::path::PathBuf {
    let mut all: Vec<_> = glob::glob(&format!("{}/data/images/*/*.pgm", work.display()))
        .unwrap()
        .map(Result::unwrap)
        .collect();
    all.sort();
    all.into_iter().next().expect("glyph images")
}
