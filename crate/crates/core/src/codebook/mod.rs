//! Visual-word codebook and importance-weighted part histograms.
//!
//! Bins are numbered 1..=Q externally, ordered by descending occupancy on the
//! fitting sample.

mod histogram;
mod kmeans;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{read_file, write_file, ByteReader, ByteWriter};
use crate::{Error, Result};

pub use histogram::{
    average_histogram, delta_histogram, find_peaks, font_histogram, impression_histogram, locate_parts,
    read_histograms_csv, weighted_histogram, write_histograms_csv, DeltaHistogram, PartLocation, WeightedHistogram,
};
pub use kmeans::{kmeans, KMeansFit};

const MAGIC: &[u8; 4] = b"GCBK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookParams {
    /// Number of visual words Q.
    pub q: usize,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid move.
    pub tol: f64,
    /// Upper bound on the descriptors sampled for fitting.
    pub sample_size: usize,
}

impl Default for CodebookParams {
    fn default() -> Self {
        CodebookParams {
            q: 64,
            max_iter: 100,
            tol: 1e-6,
            sample_size: 200_000,
        }
    }
}

impl CodebookParams {
    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::invalid("codebook needs Q >= 2"));
        }
        if self.sample_size < self.q {
            return Err(Error::invalid("sample_size must be at least Q"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `q * dim`, row-major, bin 1 first.
    pub centroids: Vec<f64>,
    /// Fitting-sample count per bin, non-increasing.
    pub occupancy: Vec<u64>,
    pub dim: usize,
}

/// A fitted codebook together with the Lloyd objective trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookFit {
    pub codebook: Codebook,
    pub objective: Vec<f64>,
    pub iterations: usize,
}

impl Codebook {
    pub fn q(&self) -> usize {
        self.occupancy.len()
    }

    /// Centroid of 1-based bin `q`.
    pub fn centroid(&self, q: usize) -> &[f64] {
        &self.centroids[(q - 1) * self.dim..q * self.dim]
    }

    /// Nearest bin, 1-based; ties go to the smaller bin.
    pub fn quantize(&self, x: &[f64]) -> usize {
        kmeans::nearest(x, &self.centroids, self.dim).0 + 1
    }

    fn from_fit(fit: KMeansFit) -> Codebook {
        let q = fit.centroids.len() / fit.dim;
        let mut counts = vec![0u64; q];
        for &l in &fit.labels {
            counts[l] += 1;
        }
        let mut order: Vec<usize> = (0..q).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut centroids = Vec::with_capacity(fit.centroids.len());
        for &c in &order {
            centroids.extend_from_slice(fit.centroid(c));
        }
        Codebook {
            centroids,
            occupancy: order.iter().map(|&c| counts[c]).collect(),
            dim: fit.dim,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.q() as u32);
        w.u32(self.dim as u32);
        for &c in &self.centroids {
            w.f64(c);
        }
        for &o in &self.occupancy {
            w.u64(o);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], what: &str) -> Result<Codebook> {
        let mut r = ByteReader::new(bytes, what);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(what, format!("unsupported version {version}")));
        }
        let q = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if q == 0 || dim == 0 {
            return Err(Error::format(what, "empty codebook"));
        }
        let expected = q
            .checked_mul(dim * 8 + 8)
            .ok_or_else(|| Error::format(what, "size overflow"))?;
        if bytes.len() - r.position() != expected {
            return Err(Error::format(what, "size does not match header"));
        }
        let centroids = (0..q * dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let occupancy = (0..q).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Codebook {
            centroids,
            occupancy,
            dim,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Codebook> {
        Codebook::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

/// Fits a Q-word codebook on `sample` (row-major, `dim` columns) and relabels
/// bins by descending occupancy (ties by cluster index).
pub fn kmeans_fit(sample: &[f64], dim: usize, q: usize, seed: u64, max_iter: usize, tol: f64) -> Result<CodebookFit> {
    if q < 2 {
        return Err(Error::invalid("codebook needs Q >= 2"));
    }
    let fit = kmeans(sample, dim, q, seed, "codebook/kmeans", max_iter, tol)?;
    let objective = fit.objective.clone();
    let iterations = fit.iterations;
    Ok(CodebookFit {
        codebook: Codebook::from_fit(fit),
        objective,
        iterations,
    })
}
