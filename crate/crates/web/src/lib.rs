//! Browser bindings for a few of the toolkit's building blocks: glyph
//! rendering with detected keypoints, average precision of a ranking, and
//! biclustering of a planted block matrix.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use wasm_bindgen::prelude::*;

use fontparts::analysis::{adjusted_rand_index, spectral_bicluster};
use fontparts::dataset::{render_glyph, FeatureFlags};
use fontparts::eval::{average_precision, rank_fonts};
use fontparts::rng::stream;
use fontparts::sift::{extract_glyph, SiftParams};

fn js_err(e: fontparts::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A rendered glyph and its keypoints.
#[wasm_bindgen]
pub struct GlyphView {
    size: u32,
    pixels: Vec<u8>,
    keypoints: Vec<f32>,
}

#[wasm_bindgen]
impl GlyphView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> u32 {
        self.size
    }

    /// Row-major grey levels, `size * size` bytes.
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    /// Flat `x, y, sigma, orientation` quadruples in glyph pixels.
    pub fn keypoints(&self) -> Vec<f32> {
        self.keypoints.clone()
    }

    #[wasm_bindgen(getter, js_name = keypointCount)]
    pub fn keypoint_count(&self) -> usize {
        self.keypoints.len() / 4
    }
}

#[wasm_bindgen(js_name = renderGlyph)]
pub fn render_glyph_view(
    letter: char,
    serif: bool,
    jaggy: bool,
    rounded: bool,
    constant_stroke: bool,
    size: u32,
    seed: u64,
) -> Result<GlyphView, JsError> {
    let flags = FeatureFlags {
        serif,
        jaggy_contour: jaggy,
        rounded_corner: rounded,
        constant_stroke,
        varying_stroke: !constant_stroke,
    };
    let glyph = render_glyph(letter, &flags, size, seed).map_err(js_err)?;
    let params = SiftParams {
        normalize_height: None,
        ..SiftParams::default()
    };
    let descriptors = extract_glyph(&glyph, 0, &params).map_err(js_err)?;
    let keypoints = descriptors
        .iter()
        .flat_map(|d| {
            let k = d.keypoint;
            [k.x, k.y, k.sigma, k.orientation]
        })
        .collect();
    Ok(GlyphView {
        size,
        pixels: glyph.pixels,
        keypoints,
    })
}

/// AP of ranking items by `scores` (descending, ties by position) when the
/// items flagged in `relevant` are the correct ones.
#[wasm_bindgen(js_name = averagePrecision)]
pub fn average_precision_js(scores: &[f64], relevant: &[u8]) -> Result<f64, JsError> {
    if scores.len() != relevant.len() {
        return Err(JsError::new("one relevance flag per score required"));
    }
    let ids: Vec<String> = (0..scores.len()).map(|i| format!("{i:06}")).collect();
    let preds: Vec<(String, Vec<f64>)> = ids.iter().cloned().zip(scores.iter().map(|&s| vec![s])).collect();
    let rel: BTreeSet<String> = ids
        .into_iter()
        .zip(relevant)
        .filter(|(_, &r)| r != 0)
        .map(|(id, _)| id)
        .collect();
    let ranking = rank_fonts(&preds, 0).map_err(js_err)?;
    Ok(average_precision(&ranking, &rel).map_err(js_err)?.ap)
}

/// A noisy planted checkerboard and the recovered biclustering.
#[wasm_bindgen]
pub struct BiclusterView {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    row_labels: Vec<u32>,
    col_labels: Vec<u32>,
    ari: f64,
}

#[wasm_bindgen]
impl BiclusterView {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major matrix values.
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    #[wasm_bindgen(js_name = rowLabels)]
    pub fn row_labels(&self) -> Vec<u32> {
        self.row_labels.clone()
    }

    #[wasm_bindgen(js_name = colLabels)]
    pub fn col_labels(&self) -> Vec<u32> {
        self.col_labels.clone()
    }

    /// The worse of the row and column adjusted Rand indices.
    #[wasm_bindgen(getter)]
    pub fn ari(&self) -> f64 {
        self.ari
    }
}

#[wasm_bindgen(js_name = biclusterDemo)]
pub fn bicluster_demo(
    rows: usize,
    cols: usize,
    row_clusters: usize,
    col_clusters: usize,
    noise: f64,
    seed: u64,
) -> Result<BiclusterView, JsError> {
    if row_clusters < 2 || col_clusters < 2 || rows < row_clusters || cols < col_clusters {
        return Err(JsError::new(
            "need at least two clusters per side and one row/column per cluster",
        ));
    }
    let mut rng = stream(seed, "web/bicluster");
    let levels = DMatrix::from_fn(row_clusters, col_clusters, |_, _| rng.random::<f64>());
    let truth_rows: Vec<usize> = (0..rows).map(|i| (i * 7) % row_clusters).collect();
    let truth_cols: Vec<usize> = (0..cols).map(|j| (j * 5) % col_clusters).collect();
    let matrix = DMatrix::from_fn(rows, cols, |i, j| {
        // Box-Muller
        let u1 = 1.0 - rng.random::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * rng.random::<f64>()).cos();
        levels[(truth_rows[i], truth_cols[j])] + noise * z
    });
    let n_sv = row_clusters.max(col_clusters);
    let model = spectral_bicluster(&matrix, row_clusters, col_clusters, n_sv, seed).map_err(js_err)?;
    let ari = adjusted_rand_index(&model.row_labels, &truth_rows)
        .map_err(js_err)?
        .min(adjusted_rand_index(&model.col_labels, &truth_cols).map_err(js_err)?);
    Ok(BiclusterView {
        rows,
        cols,
        values: matrix.transpose().iter().copied().collect(),
        row_labels: model.row_labels.iter().map(|&l| l as u32).collect(),
        col_labels: model.col_labels.iter().map(|&l| l as u32).collect(),
        ari,
    })
}
