//! Per-impression font rankings, average precision and AP tables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::par;
use crate::{Error, Result};

/// Fonts ordered by likelihood for one impression, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingList {
    pub impression: usize,
    pub font_ids: Vec<String>,
    pub likelihoods: Vec<f64>,
}

impl RankingList {
    /// 1-based rank of `font_id`.
    pub fn rank_of(&self, font_id: &str) -> Option<usize> {
        self.font_ids.iter().position(|f| f == font_id).map(|i| i + 1)
    }
}

/// Sorts by likelihood of impression `k` descending, then font id ascending.
pub fn rank_fonts(predictions: &[(String, Vec<f64>)], k: usize) -> Result<RankingList> {
    if predictions.is_empty() {
        return Err(Error::invalid("no fonts to rank"));
    }
    let mut rows: Vec<(&str, f64)> = Vec::with_capacity(predictions.len());
    for (id, p) in predictions {
        let v = *p
            .get(k)
            .ok_or_else(|| Error::invalid(format!("prediction for `{id}` has no entry {k}")))?;
        if v.is_nan() {
            return Err(Error::Numerical(format!("NaN likelihood for `{id}`")));
        }
        rows.push((id, v));
    }
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(RankingList {
        impression: k,
        font_ids: rows.iter().map(|r| r.0.to_owned()).collect(),
        likelihoods: rows.iter().map(|r| r.1).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub impression: usize,
    pub ap: f64,
    pub n_relevant: usize,
}

/// `(Σ_h h / r_h) / |Ω|` with `r_1 < r_2 < …` the ranks of the relevant fonts.
pub fn average_precision(ranking: &RankingList, relevant: &BTreeSet<String>) -> Result<ApResult> {
    if relevant.is_empty() {
        return Err(Error::invalid(format!(
            "impression {} has no relevant fonts",
            ranking.impression
        )));
    }
    let mut ranks: Vec<usize> = Vec::with_capacity(relevant.len());
    for (i, id) in ranking.font_ids.iter().enumerate() {
        if relevant.contains(id) {
            ranks.push(i + 1);
        }
    }
    if ranks.len() != relevant.len() {
        let missing = relevant
            .iter()
            .find(|r| !ranking.font_ids.contains(r))
            .expect("some font missing");
        return Err(Error::invalid(format!("relevant font `{missing}` is not ranked")));
    }
    let sum: f64 = ranks.iter().enumerate().map(|(h, &r)| (h + 1) as f64 / r as f64).sum();
    Ok(ApResult {
        impression: ranking.impression,
        ap: sum / ranks.len() as f64,
        n_relevant: ranks.len(),
    })
}

pub fn mean_ap(results: &[ApResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("mAP of no impressions"));
    }
    Ok(results.iter().map(|r| r.ap).sum::<f64>() / results.len() as f64)
}

/// APs over every impression with at least one relevant font; impressions
/// without any are listed in `excluded` and left out of the mAP.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub results: Vec<ApResult>,
    pub excluded: Vec<usize>,
    pub map: f64,
}

/// `labels[i]` holds the impression indices of `predictions[i]`.
pub fn evaluate(predictions: &[(String, Vec<f64>)], labels: &[BTreeSet<usize>], k: usize) -> Result<Evaluation> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid("one label set per prediction required"));
    }
    let per_k = par::map_range(k, |j| -> Result<Option<ApResult>> {
        let relevant: BTreeSet<String> = predictions
            .iter()
            .zip(labels)
            .filter(|(_, l)| l.contains(&j))
            .map(|(p, _)| p.0.clone())
            .collect();
        if relevant.is_empty() {
            return Ok(None);
        }
        average_precision(&rank_fonts(predictions, j)?, &relevant).map(Some)
    });
    let mut results = Vec::new();
    let mut excluded = Vec::new();
    for (j, r) in per_k.into_iter().enumerate() {
        match r? {
            Some(ap) => results.push(ap),
            None => {
                log::info!("impression {j} has no test fonts; excluded from mAP");
                excluded.push(j);
            }
        }
    }
    let map = mean_ap(&results)?;
    Ok(Evaluation { results, excluded, map })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub rank: usize,
    pub word: String,
    pub ap_percent: f64,
    pub n_relevant: usize,
}

/// Top-n (AP descending) and bottom-n (AP ascending) tables; ties keep
/// vocabulary order.
pub fn stability_report(results: &[ApResult], words: &[String], n: usize) -> Result<(Vec<TableRow>, Vec<TableRow>)> {
    if let Some(r) = results.iter().find(|r| r.impression >= words.len()) {
        return Err(Error::invalid(format!("impression {} has no word", r.impression)));
    }
    let table = |sorted: Vec<&ApResult>| -> Vec<TableRow> {
        sorted
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(i, r)| TableRow {
                rank: i + 1,
                word: words[r.impression].clone(),
                ap_percent: 100.0 * r.ap,
                n_relevant: r.n_relevant,
            })
            .collect()
    };
    let mut desc: Vec<&ApResult> = results.iter().collect();
    desc.sort_by(|a, b| b.ap.total_cmp(&a.ap).then(a.impression.cmp(&b.impression)));
    let mut asc: Vec<&ApResult> = results.iter().collect();
    asc.sort_by(|a, b| a.ap.total_cmp(&b.ap).then(a.impression.cmp(&b.impression)));
    Ok((table(desc), table(asc)))
}

/// `rank,word,ap_percent,n_relevant` with AP% at two decimals.
pub fn table_csv(rows: &[TableRow]) -> Result<Vec<u8>> {
    let err = |e: csv::Error| Error::format("AP table", e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "word", "ap_percent", "n_relevant"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.word.clone(),
            format!("{:.2}", r.ap_percent),
            r.n_relevant.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::format("AP table", e.to_string()))
}

pub fn write_table_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    crate::io::write_file(path, &table_csv(rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordResult {
    pub ap: f64,
    pub n_relevant: usize,
}

/// Machine-readable evaluation output, keyed by impression word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub baseline_map: f64,
    pub n_test_fonts: usize,
    pub results: BTreeMap<String, WordResult>,
    pub excluded: Vec<String>,
}

impl EvalReport {
    pub fn new(eval: &Evaluation, baseline: &Evaluation, words: &[String], n_test_fonts: usize) -> Self {
        EvalReport {
            map: eval.map,
            baseline_map: baseline.map,
            n_test_fonts,
            results: eval
                .results
                .iter()
                .map(|r| {
                    (
                        words[r.impression].clone(),
                        WordResult {
                            ap: r.ap,
                            n_relevant: r.n_relevant,
                        },
                    )
                })
                .collect(),
            excluded: eval.excluded.iter().map(|&k| words[k].clone()).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::format("eval report", e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

/// Same fonts and labels scored with one constant likelihood, so the ranking
/// falls back to font id order.
pub fn constant_baseline(
    predictions: &[(String, Vec<f64>)],
    labels: &[BTreeSet<usize>],
    k: usize,
) -> Result<Evaluation> {
    let constant: Vec<(String, Vec<f64>)> = predictions.iter().map(|(id, _)| (id.clone(), vec![0.5; k])).collect();
    evaluate(&constant, labels, k)
}
