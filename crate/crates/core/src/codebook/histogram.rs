//! Per-font importance histograms, per-impression medians and deltas.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Codebook;
use crate::deepsets::MlpParams;
use crate::sift::DescriptorSet;
use crate::{Error, Result};

/// Q non-negative bins (index 0 is bin 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedHistogram {
    pub owner: String,
    pub bins: Vec<f64>,
}

impl WeightedHistogram {
    pub fn q(&self) -> usize {
        self.bins.len()
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }
}

/// `H_k - H̄`, signed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaHistogram {
    pub impression: usize,
    pub bins: Vec<f64>,
}

/// Adds `weights[l]` into 1-based bin `bins[l]`, in input order.
pub fn weighted_histogram(owner: &str, bins: &[usize], weights: &[f64], q: usize) -> Result<WeightedHistogram> {
    if bins.len() != weights.len() {
        return Err(Error::invalid("one weight per descriptor required"));
    }
    let mut out = vec![0.0; q];
    for (&b, &w) in bins.iter().zip(weights) {
        if b == 0 || b > q {
            return Err(Error::invalid(format!("bin {b} outside 1..={q}")));
        }
        out[b - 1] += w;
    }
    Ok(WeightedHistogram {
        owner: owner.to_owned(),
        bins: out,
    })
}

/// `H^i`: every descriptor of the font adds its importance `‖g(x)‖` to its
/// nearest bin. An empty set gives an all-zero histogram.
pub fn font_histogram(
    owner: &str,
    descriptors: &DMatrix<f64>,
    params: &MlpParams,
    codebook: &Codebook,
) -> Result<WeightedHistogram> {
    if descriptors.nrows() == 0 {
        log::warn!("font `{owner}` has no descriptors; its histogram is zero");
        return weighted_histogram(owner, &[], &[], codebook.q());
    }
    let weights = params.importances(descriptors)?;
    let bins: Vec<usize> = descriptors
        .row_iter()
        .map(|r| {
            let x: Vec<f64> = r.iter().copied().collect();
            codebook.quantize(&x)
        })
        .collect();
    weighted_histogram(owner, &bins, &weights, codebook.q())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `H_k`: bin-wise median over the fonts carrying impression k.
pub fn impression_histogram(owner: &str, fonts: &[&WeightedHistogram]) -> Result<WeightedHistogram> {
    let first = fonts
        .first()
        .ok_or_else(|| Error::invalid(format!("impression `{owner}` has no fonts")))?;
    let q = first.q();
    if fonts.iter().any(|h| h.q() != q) {
        return Err(Error::invalid("histograms differ in Q"));
    }
    let mut column = vec![0.0; fonts.len()];
    let bins = (0..q)
        .map(|b| {
            for (c, h) in column.iter_mut().zip(fonts) {
                *c = h.bins[b];
            }
            median(&mut column)
        })
        .collect();
    Ok(WeightedHistogram {
        owner: owner.to_owned(),
        bins,
    })
}

/// `H̄`: bin-wise mean of the impression histograms.
pub fn average_histogram(impressions: &[WeightedHistogram]) -> Result<WeightedHistogram> {
    let first = impressions.first().ok_or(Error::EmptyVocabulary)?;
    let q = first.q();
    let mut bins = vec![0.0; q];
    for h in impressions {
        if h.q() != q {
            return Err(Error::invalid("histograms differ in Q"));
        }
        for (b, v) in bins.iter_mut().zip(&h.bins) {
            *b += v;
        }
    }
    let k = impressions.len() as f64;
    bins.iter_mut().for_each(|b| *b /= k);
    Ok(WeightedHistogram {
        owner: "average".into(),
        bins,
    })
}

pub fn delta_histogram(impression: usize, hk: &WeightedHistogram, mean: &WeightedHistogram) -> Result<DeltaHistogram> {
    if hk.q() != mean.q() {
        return Err(Error::invalid(format!("Q mismatch: {} vs {}", hk.q(), mean.q())));
    }
    Ok(DeltaHistogram {
        impression,
        bins: hk.bins.iter().zip(&mean.bins).map(|(a, b)| a - b).collect(),
    })
}

/// Strict local maxima above `min_value` as `(bin, value)` with 1-based bins,
/// largest first (ties by bin), at most `top_n`. End bins compare with their
/// single neighbour.
pub fn find_peaks(values: &[f64], top_n: usize, min_value: f64) -> Vec<(usize, f64)> {
    let n = values.len();
    let mut peaks: Vec<(usize, f64)> = (0..n)
        .filter(|&i| {
            let v = values[i];
            v > min_value && (i == 0 || v > values[i - 1]) && (i + 1 == n || v > values[i + 1])
        })
        .map(|i| (i + 1, values[i]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks.truncate(top_n);
    peaks
}

/// Where a font's peak-bin parts sit, for overlay drawing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartLocation {
    pub glyph: u16,
    pub x: f32,
    pub y: f32,
    pub sigma: f32,
    pub q: usize,
}

/// Keypoints of every descriptor whose bin is in `peaks`, in descriptor order.
pub fn locate_parts(set: &DescriptorSet, peaks: &[usize], codebook: &Codebook) -> Result<Vec<PartLocation>> {
    let mut out = Vec::new();
    for d in &set.descriptors {
        let k = &d.keypoint;
        if !(k.sigma > 0.0 && k.x.is_finite() && k.y.is_finite()) {
            return Err(Error::format(
                format!("descriptors of `{}`", set.font_id),
                "keypoint metadata missing",
            ));
        }
        let q = codebook.quantize(&d.to_f64());
        if peaks.contains(&q) {
            out.push(PartLocation {
                glyph: d.glyph,
                x: k.x,
                y: k.y,
                sigma: k.sigma,
                q,
            });
        }
    }
    Ok(out)
}

/// `owner,bin_1,...,bin_Q`; values use the shortest round-trip formatting.
pub fn write_histograms_csv(path: &Path, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let q = rows.first().map_or(0, |r| r.1.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["owner".to_owned()];
    header.extend((1..=q).map(|i| format!("bin_{i}")));
    let csv_err = |e: csv::Error| Error::format(path.display().to_string(), e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (owner, bins) in rows {
        if bins.len() != q {
            return Err(Error::invalid("histograms differ in Q"));
        }
        let mut rec = vec![owner.clone()];
        rec.extend(bins.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    crate::io::write_file(path, &bytes)
}

pub fn read_histograms_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = crate::io::read_to_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 2,
            message: e.to_string(),
        })?;
        let owner = rec.get(0).unwrap_or_default().to_owned();
        let bins = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.into(),
                line: i + 2,
                message: e.to_string(),
            })?;
        out.push((owner, bins));
    }
    Ok(out)
}
