//! Distances between impression histograms.

use std::path::Path;

use crate::par;
use crate::{Error, Result};

/// Divides by the sum of absolute values; an all-zero vector stays zero.
pub fn l1_normalize(h: &[f64]) -> Vec<f64> {
    let s: f64 = h.iter().map(|v| v.abs()).sum();
    if s > 0.0 {
        h.iter().map(|v| v / s).collect()
    } else {
        vec![0.0; h.len()]
    }
}

/// Euclidean distance between the L1-normalized histograms.
pub fn impression_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("Q mismatch: {} vs {}", a.len(), b.len())));
    }
    let (a, b) = (l1_normalize(a), l1_normalize(b));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Symmetric K×K distances with an exact zero diagonal.
pub fn distance_matrix(hists: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = hists.len();
    if let Some(first) = hists.first() {
        if hists.iter().any(|h| h.len() != first.len()) {
            return Err(Error::invalid("histograms differ in Q"));
        }
    }
    let upper = par::map_range(k * k, |idx| {
        let (i, j) = (idx / k, idx % k);
        if i < j {
            impression_distance(&hists[i], &hists[j]).expect("lengths checked")
        } else {
            0.0
        }
    });
    Ok((0..k)
        .map(|i| (0..k).map(|j| upper[i.min(j) * k + i.max(j)]).collect())
        .collect())
}

/// The `n` impressions closest to `k` (excluding `k`), nearest first, ties by
/// index.
pub fn nearest_impressions(k: usize, n: usize, distances: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
    let row = distances
        .get(k)
        .ok_or_else(|| Error::invalid(format!("impression {k} out of range")))?;
    let mut out: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|&(j, _)| j != k).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out.truncate(n);
    Ok(out)
}

pub fn distance_matrix_csv(words: &[String], distances: &[Vec<f64>]) -> Result<Vec<u8>> {
    if words.len() != distances.len() {
        return Err(Error::invalid("one word per distance row required"));
    }
    let err = |e: csv::Error| Error::format("distance matrix", e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["impression".to_owned()];
    header.extend(words.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (word, row) in words.iter().zip(distances) {
        let mut rec = vec![word.clone()];
        rec.extend(row.iter().map(|d| d.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| Error::format("distance matrix", e.to_string()))
}

pub fn write_distance_csv(path: &Path, words: &[String], distances: &[Vec<f64>]) -> Result<()> {
    crate::io::write_file(path, &distance_matrix_csv(words, distances)?)
}
