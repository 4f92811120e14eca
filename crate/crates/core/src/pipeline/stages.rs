//! Stage implementations behind the CLI subcommands.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::SystemTime;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{prepare_dataset, Config, PreparedDataset, Workspace};
use crate::analysis::{
    build_delta_matrix, distance_matrix, nearest_impressions, spectral_bicluster, write_distance_csv, BiclusterReport,
};
use crate::codebook::{
    average_histogram, delta_histogram, find_peaks, font_histogram, impression_histogram, kmeans_fit, locate_parts,
    write_histograms_csv, Codebook, CodebookFit, DeltaHistogram, PartLocation, WeightedHistogram,
};
use crate::dataset::{generate_synthetic, to_multi_hot, FontRecord, Split, SyntheticDataset};
use crate::deepsets::{
    descriptor_matrix, predict, read_checkpoint, read_train_state, train, write_checkpoint, write_train_state,
    MlpParams, TrainExample, TrainState, EMBED_DIM,
};
use crate::eval::{constant_baseline, evaluate, stability_report, write_table_csv, EvalReport};
use crate::io::write_file;
use crate::par;
use crate::rng::stream;
use crate::sift::{
    extract_font_descriptors, read_descriptor_cache, write_descriptor_cache, DescriptorSet, DESCRIPTOR_DIM,
};
use crate::{Error, Result};

pub(super) fn json_bytes<T: Serialize>(value: &T, what: &str) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::format(what, e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn csv_bytes(header: &[String], rows: &[Vec<String>], what: &str) -> Result<Vec<u8>> {
    let err = |e: csv::Error| Error::format(what, e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::format(what, e.to_string()))
}

/// Renders the synthetic corpus into `work/data`, replacing any previous one.
pub fn cmd_synth(cfg: &Config) -> Result<SyntheticDataset> {
    cfg.synth.validate()?;
    let dir = Workspace::new(cfg).data_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let data = generate_synthetic(&cfg.synth, cfg.seed, &dir)?;
    log::info!("wrote {} synthetic fonts to {}", data.fonts.len(), dir.display());
    Ok(data)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractSummary {
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
}

enum ExtractOutcome {
    Computed,
    Skipped,
    Failed,
}

fn modified(path: &Path) -> Option<SystemTime> {
    std::fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// True when the cache exists and is at least as new as every glyph file.
fn cache_is_fresh(cache: &Path, record: &FontRecord) -> bool {
    let Some(cached) = modified(cache) else {
        return false;
    };
    record
        .glyph_paths
        .iter()
        .all(|p| modified(p).is_some_and(|t| t <= cached))
}

/// Writes one descriptor cache per font. Fonts whose cache is newer than their
/// images (and extracted with the same parameters) are skipped. A font whose
/// images cannot be read is logged and skipped; the stage then reports a
/// partial failure after finishing the others.
pub fn cmd_extract(cfg: &Config) -> Result<ExtractSummary> {
    cfg.sift.validate()?;
    let ws = Workspace::new(cfg);
    let data = prepare_dataset(cfg)?;
    let params_json = String::from_utf8(json_bytes(&cfg.sift, "sift parameters")?).expect("utf-8 json");
    let same_params = std::fs::read_to_string(ws.sift_params()).is_ok_and(|old| old == params_json);
    if !same_params {
        log::info!("sift parameters changed or unknown; re-extracting every font");
    }

    let outcomes = par::map(&data.records, |record| -> Result<ExtractOutcome> {
        let cache = ws.descriptor_cache(&record.font_id);
        if same_params && cache_is_fresh(&cache, record) {
            return Ok(ExtractOutcome::Skipped);
        }
        let mut rec = record.clone();
        if let Err(e) = rec.load_glyphs() {
            log::error!("font `{}`: {e}", record.font_id);
            return Ok(ExtractOutcome::Failed);
        }
        let set = extract_font_descriptors(&rec, &cfg.sift)?;
        write_descriptor_cache(&cache, &set)?;
        Ok(ExtractOutcome::Computed)
    });
    let mut summary = ExtractSummary::default();
    for o in outcomes {
        match o? {
            ExtractOutcome::Computed => summary.computed += 1,
            ExtractOutcome::Skipped => summary.skipped += 1,
            ExtractOutcome::Failed => summary.failed += 1,
        }
    }
    write_file(&ws.sift_params(), params_json.as_bytes())?;
    log::info!(
        "extract: {} computed, {} up to date, {} failed",
        summary.computed,
        summary.skipped,
        summary.failed
    );
    if summary.failed > 0 {
        return Err(Error::PartialFailure {
            failed: summary.failed,
            total: data.records.len(),
        });
    }
    Ok(summary)
}

fn load_sets<'a>(ws: &Workspace, records: impl Iterator<Item = &'a FontRecord>) -> Result<Vec<DescriptorSet>> {
    let records: Vec<&FontRecord> = records.collect();
    for r in &records {
        ws.require(&ws.descriptor_cache(&r.font_id), "extract")?;
    }
    par::map(&records, |r| {
        let set = read_descriptor_cache(&ws.descriptor_cache(&r.font_id))?;
        if set.font_id != r.font_id {
            return Err(Error::format(
                ws.descriptor_cache(&r.font_id).display().to_string(),
                format!("cache holds font `{}`", set.font_id),
            ));
        }
        Ok(set)
    })
    .into_iter()
    .collect()
}

struct LabeledSets {
    matrices: Vec<DMatrix<f64>>,
    targets: Vec<Vec<f64>>,
}

fn labeled_sets(ws: &Workspace, data: &PreparedDataset, split: Split) -> Result<LabeledSets> {
    let records: Vec<&FontRecord> = data.in_split(split).collect();
    let sets = load_sets(ws, records.iter().copied())?;
    Ok(LabeledSets {
        matrices: sets.iter().map(descriptor_matrix).collect(),
        targets: records
            .iter()
            .map(|r| to_multi_hot(r, data.vocab.len()).map(|l| l.0))
            .collect::<Result<_>>()?,
    })
}

fn examples(sets: &LabeledSets) -> Vec<TrainExample<'_>> {
    sets.matrices
        .iter()
        .zip(&sets.targets)
        .map(|(d, t)| TrainExample {
            descriptors: d,
            target: t,
        })
        .collect()
}

/// Trains the set regressor; with `resume`, continues from the saved state.
pub fn cmd_train(cfg: &Config, resume: bool) -> Result<TrainState> {
    let ws = Workspace::new(cfg);
    let data = prepare_dataset(cfg)?;
    let k = data.vocab.len();
    let train_sets = labeled_sets(&ws, &data, Split::Train)?;
    let val_sets = labeled_sets(&ws, &data, Split::Val)?;
    let start = if resume && ws.train_state().exists() {
        let s = read_train_state(&ws.train_state())?;
        log::info!("resuming after epoch {}", s.epochs_done);
        Some(s)
    } else {
        None
    };
    let state_path = ws.train_state();
    let state = train(
        &examples(&train_sets),
        &examples(&val_sets),
        k,
        &cfg.train_config(),
        start,
        |s| write_train_state(&state_path, s),
    )?;
    write_checkpoint(&ws.checkpoint(), &state.best)?;
    let rows: Vec<Vec<String>> = state
        .history
        .iter()
        .map(|r| vec![r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])
        .collect();
    let header = ["epoch", "train_loss", "val_loss"].map(String::from);
    write_file(&ws.train_log(), &csv_bytes(&header, &rows, "train log")?)?;
    log::info!("best epoch {} (loss {:.5})", state.best_epoch, state.best_loss);
    Ok(state)
}

/// Fits the codebook on a seeded sample of all fonts' descriptors.
pub fn cmd_codebook(cfg: &Config) -> Result<CodebookFit> {
    cfg.codebook.validate()?;
    let ws = Workspace::new(cfg);
    let data = prepare_dataset(cfg)?;
    let sets = load_sets(&ws, data.records.iter())?;
    let all: Vec<&[f32; DESCRIPTOR_DIM]> = sets
        .iter()
        .flat_map(|s| s.descriptors.iter().map(|d| &d.values))
        .collect();
    let chosen: Vec<usize> = if all.len() > cfg.codebook.sample_size {
        let mut rng = stream(cfg.seed, "codebook/sample");
        let mut idx = rand::seq::index::sample(&mut rng, all.len(), cfg.codebook.sample_size).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..all.len()).collect()
    };
    let mut sample = Vec::with_capacity(chosen.len() * DESCRIPTOR_DIM);
    for &i in &chosen {
        sample.extend(all[i].iter().map(|&v| v as f64));
    }
    log::info!(
        "fitting Q={} on {} of {} descriptors",
        cfg.codebook.q,
        chosen.len(),
        all.len()
    );
    let fit = kmeans_fit(
        &sample,
        DESCRIPTOR_DIM,
        cfg.codebook.q,
        cfg.seed,
        cfg.codebook.max_iter,
        cfg.codebook.tol,
    )?;
    fit.codebook.write(&ws.codebook())?;
    let rows: Vec<Vec<String>> = fit
        .objective
        .iter()
        .enumerate()
        .map(|(i, o)| vec![(i + 1).to_string(), o.to_string()])
        .collect();
    let header = ["iteration", "objective"].map(String::from);
    write_file(&ws.codebook_log(), &csv_bytes(&header, &rows, "codebook log")?)?;
    Ok(fit)
}

fn load_model(ws: &Workspace, k: usize) -> Result<MlpParams> {
    ws.require(&ws.checkpoint(), "train")?;
    let params = read_checkpoint(&ws.checkpoint())?;
    if params.k() != k {
        return Err(Error::format(
            ws.checkpoint().display().to_string(),
            format!(
                "checkpoint predicts {} impressions but the vocabulary has {k}; rerun train",
                params.k()
            ),
        ));
    }
    Ok(params)
}

fn load_codebook(ws: &Workspace) -> Result<Codebook> {
    ws.require(&ws.codebook(), "codebook")?;
    let cb = Codebook::read(&ws.codebook())?;
    if cb.dim != DESCRIPTOR_DIM {
        return Err(Error::format(
            ws.codebook().display().to_string(),
            "codebook is not 128-dimensional",
        ));
    }
    Ok(cb)
}

#[derive(Serialize, Deserialize)]
pub(super) struct PeakEntry {
    pub bin: usize,
    pub value: f64,
}

#[derive(Serialize)]
struct FontParts {
    font_id: String,
    parts: Vec<PartLocation>,
}

#[derive(Serialize, Deserialize)]
pub(super) struct Neighbor {
    pub word: String,
    pub distance: f64,
}

/// Histograms, deltas, peaks, part overlays, impression distances and the
/// bicluster report.
pub fn cmd_analyze(cfg: &Config) -> Result<()> {
    let ws = Workspace::new(cfg);
    let data = prepare_dataset(cfg)?;
    let words = data.words();
    let k = words.len();
    let params = load_model(&ws, k)?;
    let codebook = load_codebook(&ws)?;
    let sets = load_sets(&ws, data.records.iter())?;
    let font_hists: Vec<WeightedHistogram> = par::map(&sets, |s| {
        font_histogram(&s.font_id, &descriptor_matrix(s), &params, &codebook)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let impression_hists: Vec<WeightedHistogram> = (0..k)
        .map(|j| {
            let members: Vec<&WeightedHistogram> = data
                .records
                .iter()
                .zip(&font_hists)
                .filter(|(r, _)| r.impressions.contains(&j))
                .map(|(_, h)| h)
                .collect();
            impression_histogram(&words[j], &members)
        })
        .collect::<Result<_>>()?;
    let average = average_histogram(&impression_hists)?;
    let deltas: Vec<DeltaHistogram> = impression_hists
        .iter()
        .enumerate()
        .map(|(j, h)| delta_histogram(j, h, &average))
        .collect::<Result<_>>()?;

    let rows = |hs: &[WeightedHistogram]| -> Vec<(String, Vec<f64>)> {
        hs.iter().map(|h| (h.owner.clone(), h.bins.clone())).collect()
    };
    write_histograms_csv(&ws.analysis_file("font_histograms.csv"), &rows(&font_hists))?;
    let mut imp_rows = rows(&impression_hists);
    imp_rows.push((average.owner.clone(), average.bins.clone()));
    write_histograms_csv(&ws.analysis_file("impression_histograms.csv"), &imp_rows)?;
    let delta_rows: Vec<(String, Vec<f64>)> = deltas
        .iter()
        .map(|d| (words[d.impression].clone(), d.bins.clone()))
        .collect();
    write_histograms_csv(&ws.analysis_file("delta_histograms.csv"), &delta_rows)?;

    let a = &cfg.analysis;
    let peaks: Vec<Vec<(usize, f64)>> = deltas
        .iter()
        .map(|d| find_peaks(&d.bins, a.peak_top_n, a.peak_min_value))
        .collect();
    let peak_json: BTreeMap<&str, Vec<PeakEntry>> = words
        .iter()
        .zip(&peaks)
        .map(|(w, p)| {
            (
                w.as_str(),
                p.iter().map(|&(bin, value)| PeakEntry { bin, value }).collect(),
            )
        })
        .collect();
    write_file(&ws.analysis_file("peaks.json"), &json_bytes(&peak_json, "peaks")?)?;

    let mut overlays: BTreeMap<&str, Vec<FontParts>> = BTreeMap::new();
    for (j, w) in words.iter().enumerate() {
        let bins: Vec<usize> = peaks[j].iter().map(|p| p.0).collect();
        let mut members: Vec<usize> = (0..data.records.len())
            .filter(|&i| data.records[i].impressions.contains(&j))
            .collect();
        members.sort_by(|&x, &y| data.records[x].font_id.cmp(&data.records[y].font_id));
        let entry = overlays.entry(w.as_str()).or_default();
        for &i in members.iter().take(a.overlay_fonts) {
            entry.push(FontParts {
                font_id: sets[i].font_id.clone(),
                parts: locate_parts(&sets[i], &bins, &codebook)?,
            });
        }
    }
    write_file(
        &ws.analysis_file("parts.json"),
        &json_bytes(&overlays, "part overlays")?,
    )?;

    let compared: Vec<Vec<f64>> = if a.delta_distance {
        deltas.iter().map(|d| d.bins.clone()).collect()
    } else {
        impression_hists.iter().map(|h| h.bins.clone()).collect()
    };
    let distances = distance_matrix(&compared)?;
    write_distance_csv(&ws.analysis_file("distances.csv"), &words, &distances)?;
    let mut neighbors: BTreeMap<&str, Vec<Neighbor>> = BTreeMap::new();
    for (j, w) in words.iter().enumerate() {
        let list = nearest_impressions(j, a.neighbors, &distances)?
            .into_iter()
            .map(|(o, distance)| Neighbor {
                word: words[o].clone(),
                distance,
            })
            .collect();
        neighbors.insert(w.as_str(), list);
    }
    write_file(
        &ws.analysis_file("neighbors.json"),
        &json_bytes(&neighbors, "neighbors")?,
    )?;

    let bicluster_path = ws.analysis_file("bicluster.json");
    let matrix = build_delta_matrix(&deltas)?;
    if k < 2 {
        log::info!("only one impression; biclustering skipped");
        if bicluster_path.exists() {
            std::fs::remove_file(&bicluster_path).map_err(|e| Error::io(&bicluster_path, e))?;
        }
        return Ok(());
    }
    // identical rows/columns (e.g. two words carried by the same fonts) cannot
    // be split apart, so the counts are capped by the distinct ones
    let rows: Vec<Vec<f64>> = (0..matrix.q()).map(|i| matrix.row(i)).collect();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| matrix.column(j)).collect();
    let r = a.bicluster.row_clusters.min(count_distinct(&rows));
    let c = a.bicluster.col_clusters.min(count_distinct(&cols));
    if (r, c) != (a.bicluster.row_clusters, a.bicluster.col_clusters) {
        log::info!("bicluster counts capped to {r}x{c} by the {}x{k} matrix", matrix.q());
    }
    if c < 2 || r < 2 {
        return Err(Error::NoBlockStructure);
    }
    let model = spectral_bicluster(&matrix.values, r, c, a.bicluster.n_singular_vectors, cfg.seed)?;
    BiclusterReport::new(&model, &words, a.bicluster.top_blocks)?.write(&bicluster_path)?;
    Ok(())
}

fn count_distinct(vectors: &[Vec<f64>]) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for v in vectors {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    seen.len()
}

/// Likelihoods for one font; a font without parts gets `f` of the empty sum.
fn font_prediction(params: &MlpParams, set: &DescriptorSet, cfg: &Config) -> Result<Vec<f64>> {
    let p = if set.is_empty() {
        log::warn!(
            "test font `{}` has no descriptors; predicting from an empty set",
            set.font_id
        );
        params.f_forward(&DVector::zeros(EMBED_DIM))?
    } else {
        predict(params, &descriptor_matrix(set), &cfg.predict_config())?
    };
    Ok(p.iter().copied().collect())
}

/// Ranks test fonts per impression and writes the AP tables.
pub fn cmd_eval(cfg: &Config) -> Result<EvalReport> {
    let ws = Workspace::new(cfg);
    let data = prepare_dataset(cfg)?;
    let words = data.words();
    let k = words.len();
    let params = load_model(&ws, k)?;
    let test: Vec<&FontRecord> = data.in_split(Split::Test).collect();
    let sets = load_sets(&ws, test.iter().copied())?;
    let likelihoods: Vec<Vec<f64>> = par::map(&sets, |s| font_prediction(&params, s, cfg))
        .into_iter()
        .collect::<Result<_>>()?;
    let predictions: Vec<(String, Vec<f64>)> = test.iter().map(|r| r.font_id.clone()).zip(likelihoods).collect();
    let labels: Vec<BTreeSet<usize>> = test.iter().map(|r| r.impressions.clone()).collect();

    let evaluation = evaluate(&predictions, &labels, k)?;
    let baseline = constant_baseline(&predictions, &labels, k)?;
    let (top, bottom) = stability_report(&evaluation.results, &words, cfg.eval.table_size)?;
    write_table_csv(&ws.eval_file("ap_top.csv"), &top)?;
    write_table_csv(&ws.eval_file("ap_bottom.csv"), &bottom)?;

    let mut header = vec!["font_id".to_owned()];
    header.extend(words.iter().cloned());
    let rows: Vec<Vec<String>> = predictions
        .iter()
        .map(|(id, p)| {
            std::iter::once(id.clone())
                .chain(p.iter().map(|v| v.to_string()))
                .collect()
        })
        .collect();
    write_file(
        &ws.eval_file("predictions.csv"),
        &csv_bytes(&header, &rows, "predictions")?,
    )?;

    let report = EvalReport::new(&evaluation, &baseline, &words, test.len());
    write_file(&ws.eval_file("results.json"), report.to_json()?.as_bytes())?;
    log::info!(
        "test mAP {:.4} (constant baseline {:.4})",
        report.map,
        report.baseline_map
    );
    Ok(report)
}
