//! Markdown summary assembled from the other stages' outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;

use super::stages::{Neighbor, PeakEntry};
use super::{prepare_dataset, Config, Workspace};
use crate::analysis::BiclusterReport;
use crate::codebook::Codebook;
use crate::dataset::Split;
use crate::eval::EvalReport;
use crate::io::{read_to_string, write_file};
use crate::{Error, Result};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = read_to_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_owned).collect())
                .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
        })
        .collect()
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn join_limited<T: ToString>(items: &[T], limit: usize) -> String {
    let mut s: Vec<String> = items.iter().take(limit).map(ToString::to_string).collect();
    if items.len() > limit {
        s.push(format!("… ({} total)", items.len()));
    }
    s.join(", ")
}

/// Writes `report.md`. Needs every earlier stage's outputs; the error names
/// the command to run when one is missing. Contains no timings.
pub fn cmd_report(cfg: &Config) -> Result<String> {
    let ws = Workspace::new(cfg);
    let needed = [
        (ws.train_log(), "train"),
        (ws.codebook(), "codebook"),
        (ws.analysis_file("peaks.json"), "analyze"),
        (ws.analysis_file("neighbors.json"), "analyze"),
        (ws.eval_file("results.json"), "eval"),
        (ws.eval_file("ap_top.csv"), "eval"),
        (ws.eval_file("ap_bottom.csv"), "eval"),
    ];
    for (path, command) in &needed {
        ws.require(path, command)?;
    }
    let data = prepare_dataset(cfg)?;
    let words = data.words();
    let mut out = String::from("# Font part analysis report\n\n");

    let count = |s: Split| data.in_split(s).count();
    let _ = writeln!(out, "## Dataset\n");
    let _ = writeln!(
        out,
        "- fonts: {} (train {}, val {}, test {})",
        data.records.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    let _ = writeln!(out, "- impressions: {}\n", words.len());
    let vocab_rows: Vec<Vec<String>> = words
        .iter()
        .enumerate()
        .map(|(k, w)| vec![w.clone(), data.vocab.frequency(k).to_string()])
        .collect();
    table(&mut out, &["impression", "fonts"], &vocab_rows);

    let log = read_csv(&ws.train_log())?;
    let _ = writeln!(out, "## Training\n");
    let losses: Vec<(String, f64)> = log
        .iter()
        .map(|r| (r[0].clone(), r[2].parse::<f64>().unwrap_or(f64::INFINITY)))
        .collect();
    match losses
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, (_, l))| match best {
            Some((_, b)) if *l >= b => best,
            _ => Some((i, *l)),
        }) {
        Some((i, loss)) => {
            let _ = writeln!(
                out,
                "- epochs run: {}\n- selected epoch: {} (selection loss {:.6})\n",
                losses.len(),
                losses[i].0,
                loss
            );
        }
        None => out.push_str("- no epochs recorded\n\n"),
    }

    let codebook = Codebook::read(&ws.codebook())?;
    let _ = writeln!(out, "## Codebook\n");
    let _ = writeln!(
        out,
        "- Q = {}, fitted on {} descriptors\n- largest bins: {}\n",
        codebook.q(),
        codebook.occupancy.iter().sum::<u64>(),
        join_limited(&codebook.occupancy, 8)
    );

    let peaks: BTreeMap<String, Vec<PeakEntry>> = read_json(&ws.analysis_file("peaks.json"))?;
    let _ = writeln!(out, "## Delta-histogram peaks\n");
    let peak_rows: Vec<Vec<String>> = peaks
        .iter()
        .map(|(w, p)| {
            let cells: Vec<String> = p.iter().map(|e| format!("{} ({:+.4})", e.bin, e.value)).collect();
            vec![
                w.clone(),
                if cells.is_empty() {
                    "—".into()
                } else {
                    cells.join(", ")
                },
            ]
        })
        .collect();
    table(&mut out, &["impression", "peak bins (ΔH)"], &peak_rows);

    let neighbors: BTreeMap<String, Vec<Neighbor>> = read_json(&ws.analysis_file("neighbors.json"))?;
    let _ = writeln!(out, "## Nearest impressions\n");
    let nn_rows: Vec<Vec<String>> = neighbors
        .iter()
        .map(|(w, list)| {
            let cells: Vec<String> = list.iter().map(|n| format!("{} ({:.4})", n.word, n.distance)).collect();
            vec![w.clone(), cells.join(", ")]
        })
        .collect();
    table(&mut out, &["impression", "nearest (distance)"], &nn_rows);

    let _ = writeln!(out, "## Biclusters\n");
    let bicluster_path = ws.analysis_file("bicluster.json");
    if bicluster_path.exists() {
        let b: BiclusterReport = read_json(&bicluster_path)?;
        let rows: Vec<Vec<String>> = b
            .top_blocks
            .iter()
            .enumerate()
            .map(|(i, blk)| {
                vec![
                    (i + 1).to_string(),
                    format!("{}×{}", blk.row_cluster, blk.col_cluster),
                    format!("{:.6}", blk.mean),
                    join_limited(&blk.bins, 12),
                    blk.words.join(", "),
                ]
            })
            .collect();
        table(&mut out, &["rank", "block", "mean", "bins", "impressions"], &rows);
    } else {
        out.push_str("Skipped: fewer than two impressions.\n\n");
    }

    let eval: EvalReport = read_json(&ws.eval_file("results.json"))?;
    let _ = writeln!(out, "## Average precision\n");
    let _ = writeln!(
        out,
        "- test fonts: {}\n- mAP: {:.2}% (constant-likelihood baseline {:.2}%)",
        eval.n_test_fonts,
        100.0 * eval.map,
        100.0 * eval.baseline_map
    );
    if !eval.excluded.is_empty() {
        let _ = writeln!(out, "- excluded (no test fonts): {}", eval.excluded.join(", "));
    }
    out.push('\n');
    for (title, file) in [("Top", "ap_top.csv"), ("Bottom", "ap_bottom.csv")] {
        let _ = writeln!(out, "### {title} impressions\n");
        table(
            &mut out,
            &["rank", "word", "AP (%)", "relevant"],
            &read_csv(&ws.eval_file(file))?,
        );
    }

    write_file(&ws.report(), out.as_bytes())?;
    Ok(out)
}
