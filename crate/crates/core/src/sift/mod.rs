//! Scale-space keypoints and 128-D gradient-orientation descriptors.
//!
//! Coordinates follow the pixel-center convention: pixel `i` of the input
//! image sits at coordinate `i`. Octave `o` of the (2x upsampled) pyramid has
//! pixels of size `2^(o-1)` input pixels, and its pixel `i` maps to input
//! coordinate `(i + 0.5) * 2^(o-1) - 0.5`. Every resampling step is
//! center-aligned, so a quarter-turn of a square input rotates the whole
//! pyramid with it.

mod cache;
mod plane;

use std::f32::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dataset::{FontRecord, GlyphImage};
use crate::{Error, Result};

pub use cache::{read_descriptor_cache, write_descriptor_cache, CACHE_VERSION};
pub use plane::{gaussian_blur, gaussian_kernel, Plane};

pub const DESCRIPTOR_DIM: usize = 128;
const DESCRIPTOR_CELLS: usize = 4;
const DESCRIPTOR_BINS: usize = 8;
const DESCRIPTOR_SAMPLES: usize = 16;
const DESCRIPTOR_CLAMP: f64 = 0.2;
/// Cell width in units of keypoint sigma.
const CELL_SCALE: f32 = 3.0;
const ORIENTATION_BINS: usize = 36;
const ORIENTATION_SIGMA: f32 = 1.5;
const ORIENTATION_PEAK_RATIO: f32 = 0.8;
const MAX_INTERPOLATION_STEPS: usize = 5;
/// Blur assumed present in the input image.
const INPUT_BLUR: f32 = 0.5;
/// Blur added by the 2x2 block average, in the coarser octave's pixels.
const DOWNSAMPLE_BLUR: f32 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiftParams {
    /// `None` picks `min(4, floor(log2(min dim)) - 2)`.
    pub n_octaves: Option<usize>,
    pub scales_per_octave: usize,
    pub base_sigma: f32,
    /// On intensities scaled to [0, 1].
    pub contrast_threshold: f32,
    pub edge_ratio: f32,
    /// Glyphs are resized to this height (aspect kept) before extraction.
    pub normalize_height: Option<u32>,
    /// Keypoints closer than this to the border of the resized image are
    /// dropped.
    pub border: f32,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            n_octaves: None,
            scales_per_octave: 3,
            base_sigma: 1.6,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            normalize_height: Some(128),
            border: 8.0,
        }
    }
}

impl SiftParams {
    pub fn validate(&self) -> Result<()> {
        if self.scales_per_octave < 2 {
            return Err(Error::invalid("scales_per_octave must be at least 2"));
        }
        if !(self.base_sigma > 0.0 && self.base_sigma.is_finite()) {
            return Err(Error::invalid("base_sigma must be positive"));
        }
        if self.contrast_threshold.is_nan() || self.contrast_threshold < 0.0 {
            return Err(Error::invalid("contrast_threshold must be non-negative"));
        }
        if !(self.edge_ratio > 1.0) {
            return Err(Error::invalid("edge_ratio must exceed 1"));
        }
        if matches!(self.n_octaves, Some(0)) {
            return Err(Error::invalid("n_octaves must be at least 1"));
        }
        if matches!(self.normalize_height, Some(h) if h < 16) {
            return Err(Error::invalid("normalize_height must be at least 16"));
        }
        if self.border < 0.0 {
            return Err(Error::invalid("border must be non-negative"));
        }
        Ok(())
    }
}

/// Default octave count for an input whose smaller side is `min_dim`.
pub fn default_octaves(min_dim: usize) -> usize {
    let log = (min_dim.max(1) as f64).log2().floor() as i64;
    (log - 2).clamp(1, 4) as usize
}

#[derive(Debug, Clone)]
pub struct Octave {
    /// `s + 3` images.
    pub gaussians: Vec<Plane>,
    /// `s + 2` images, `dogs[j] = gaussians[j + 1] - gaussians[j]`.
    pub dogs: Vec<Plane>,
    /// Octave pixel size in input pixels.
    pub step: f32,
}

impl Octave {
    fn to_octave(&self, v: f32) -> f32 {
        (v + 0.5) / self.step - 0.5
    }
}

#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub octaves: Vec<Octave>,
    pub base_sigma: f32,
    pub scales_per_octave: usize,
    pub input_width: usize,
    pub input_height: usize,
}

impl ScaleSpace {
    /// Blur of level `j` relative to its own octave's pixels.
    pub fn level_sigma(&self, level: f32) -> f32 {
        self.base_sigma * 2f32.powf(level / self.scales_per_octave as f32)
    }
}

/// Builds the Gaussian and difference-of-Gaussian pyramid of `image`, after an
/// initial 2x bilinear upsampling.
pub fn build_scale_space(image: &Plane, n_octaves: usize, s: usize, base_sigma: f32) -> Result<ScaleSpace> {
    if s < 2 {
        return Err(Error::invalid("scales per octave must be at least 2"));
    }
    if n_octaves == 0 {
        return Err(Error::invalid("need at least one octave"));
    }
    let min_dim = image.width.min(image.height);
    if 2 * min_dim < 16 {
        return Err(Error::invalid(format!(
            "image {}x{} too small for the scale space",
            image.width, image.height
        )));
    }
    if (2 * min_dim) >> (n_octaves - 1) < 4 {
        return Err(Error::invalid(format!(
            "{n_octaves} octaves do not fit a {}x{} image",
            image.width, image.height
        )));
    }

    let sigmas: Vec<f32> = (0..s + 3)
        .map(|j| base_sigma * 2f32.powf(j as f32 / s as f32))
        .collect();
    let seed_blur = (base_sigma.powi(2) - (2.0 * INPUT_BLUR).powi(2)).max(0.01).sqrt();
    let mut base = gaussian_blur(&image.upsample2x(), seed_blur);
    let mut octaves = Vec::with_capacity(n_octaves);
    for o in 0..n_octaves {
        let mut gaussians = Vec::with_capacity(s + 3);
        // After a 2x2 block average level 0 carries a little extra blur.
        let mut prev_sigma = if o == 0 {
            base_sigma
        } else {
            (base_sigma.powi(2) + DOWNSAMPLE_BLUR.powi(2)).sqrt()
        };
        gaussians.push(base);
        for &target in &sigmas[1..] {
            let inc = (target.powi(2) - prev_sigma.powi(2)).max(0.0).sqrt();
            let next = gaussian_blur(gaussians.last().expect("non-empty"), inc);
            gaussians.push(next);
            prev_sigma = target;
        }
        let dogs = gaussians
            .windows(2)
            .map(|w| Plane {
                width: w[0].width,
                height: w[0].height,
                data: w[1].data.iter().zip(&w[0].data).map(|(b, a)| b - a).collect(),
            })
            .collect();
        base = gaussians[s].downsample2x();
        octaves.push(Octave {
            gaussians,
            dogs,
            step: 2f32.powi(o as i32 - 1),
        });
    }
    Ok(ScaleSpace {
        octaves,
        base_sigma,
        scales_per_octave: s,
        input_width: image.width,
        input_height: image.height,
    })
}

/// A scale-space extremum in input-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Absolute blur scale in input pixels.
    pub sigma: f32,
    /// Radians in [0, 2pi), angle of the dominant gradient with y pointing down.
    pub orientation: f32,
    pub octave: usize,
    pub level: usize,
    /// |DoG| at the interpolated extremum.
    pub response: f32,
}

struct Extremum {
    x: usize,
    y: usize,
    level: usize,
    offset: [f32; 3],
    value: f32,
}

fn is_extremum(dogs: &[Plane], j: usize, x: usize, y: usize) -> bool {
    let v = dogs[j].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for plane in &dogs[j - 1..=j + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = plane.at(xx, yy);
                is_max &= v >= n;
                is_min &= v <= n;
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    is_max || is_min
}

fn solve3(h: [[f32; 3]; 3], g: [f32; 3]) -> Option<[f32; 3]> {
    let m = nalgebra::Matrix3::from_fn(|r, c| h[r][c] as f64);
    let b = nalgebra::Vector3::new(g[0] as f64, g[1] as f64, g[2] as f64);
    let sol = m.lu().solve(&b)?;
    let out = [-sol[0] as f32, -sol[1] as f32, -sol[2] as f32];
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Quadratic refinement of a discrete extremum. Offsets are (x, y, level).
fn refine(dogs: &[Plane], s: usize, mut x: usize, mut y: usize, mut j: usize) -> Option<Extremum> {
    let (w, h) = (dogs[0].width, dogs[0].height);
    for _ in 0..MAX_INTERPOLATION_STEPS {
        let (p, c, n) = (&dogs[j - 1], &dogs[j], &dogs[j + 1]);
        let v = c.at(x, y);
        let dx = 0.5 * (c.at(x + 1, y) - c.at(x - 1, y));
        let dy = 0.5 * (c.at(x, y + 1) - c.at(x, y - 1));
        let ds = 0.5 * (n.at(x, y) - p.at(x, y));
        let dxx = c.at(x + 1, y) + c.at(x - 1, y) - 2.0 * v;
        let dyy = c.at(x, y + 1) + c.at(x, y - 1) - 2.0 * v;
        let dss = n.at(x, y) + p.at(x, y) - 2.0 * v;
        let dxy = 0.25 * (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1));
        let dxs = 0.25 * (n.at(x + 1, y) - n.at(x - 1, y) - p.at(x + 1, y) + p.at(x - 1, y));
        let dys = 0.25 * (n.at(x, y + 1) - n.at(x, y - 1) - p.at(x, y + 1) + p.at(x, y - 1));
        let grad = [dx, dy, ds];
        let off = solve3([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]], grad)?;
        if off.iter().all(|o| o.abs() < 0.5) {
            let value = v + 0.5 * (grad[0] * off[0] + grad[1] * off[1] + grad[2] * off[2]);
            return Some(Extremum {
                x,
                y,
                level: j,
                offset: off,
                value,
            });
        }
        let nx = x as isize + off[0].round() as isize;
        let ny = y as isize + off[1].round() as isize;
        let nj = j as isize + off[2].round() as isize;
        if nj < 1 || nj > s as isize || nx < 1 || ny < 1 || nx > w as isize - 2 || ny > h as isize - 2 {
            return None;
        }
        (x, y, j) = (nx as usize, ny as usize, nj as usize);
    }
    None
}

fn passes_edge_test(dog: &Plane, x: usize, y: usize, edge_ratio: f32) -> bool {
    let v = dog.at(x, y);
    let dxx = dog.at(x + 1, y) + dog.at(x - 1, y) - 2.0 * v;
    let dyy = dog.at(x, y + 1) + dog.at(x, y - 1) - 2.0 * v;
    let dxy = 0.25 * (dog.at(x + 1, y + 1) - dog.at(x - 1, y + 1) - dog.at(x + 1, y - 1) + dog.at(x - 1, y - 1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det > 0.0 && tr * tr * edge_ratio < (edge_ratio + 1.0).powi(2) * det
}

/// Finds refined 3x3x3 DoG extrema passing the contrast and principal-curvature
/// tests. Orientation is left at 0. Keypoints within 0.5 px and 0.05 octave of
/// a stronger one are merged into it.
pub fn detect_keypoints(ss: &ScaleSpace, contrast_thresh: f32, edge_ratio: f32) -> Vec<Keypoint> {
    detect_keypoints_with_border(ss, contrast_thresh, edge_ratio, 0.0)
}

pub fn detect_keypoints_with_border(
    ss: &ScaleSpace,
    contrast_thresh: f32,
    edge_ratio: f32,
    border: f32,
) -> Vec<Keypoint> {
    if !contrast_thresh.is_finite() {
        return Vec::new();
    }
    let s = ss.scales_per_octave;
    let prefilter = 0.5 * contrast_thresh;
    let (in_w, in_h) = (ss.input_width as f32, ss.input_height as f32);
    let mut found = Vec::new();
    for (o, octave) in ss.octaves.iter().enumerate() {
        let dogs = &octave.dogs;
        let (w, h) = (dogs[0].width, dogs[0].height);
        if w < 3 || h < 3 {
            continue;
        }
        for j in 1..=s {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = dogs[j].at(x, y);
                    if v.abs() < prefilter || !is_extremum(dogs, j, x, y) {
                        continue;
                    }
                    let Some(ext) = refine(dogs, s, x, y, j) else {
                        continue;
                    };
                    if ext.value.abs() < contrast_thresh
                        || !passes_edge_test(&dogs[ext.level], ext.x, ext.y, edge_ratio)
                    {
                        continue;
                    }
                    let kx = (ext.x as f32 + ext.offset[0] + 0.5) * octave.step - 0.5;
                    let ky = (ext.y as f32 + ext.offset[1] + 0.5) * octave.step - 0.5;
                    if kx < border || ky < border || kx > in_w - 1.0 - border || ky > in_h - 1.0 - border {
                        continue;
                    }
                    let level = ext.level as f32 + ext.offset[2];
                    found.push(Keypoint {
                        x: kx,
                        y: ky,
                        sigma: ss.level_sigma(level) * octave.step,
                        orientation: 0.0,
                        octave: o,
                        level: ext.level,
                        response: ext.value.abs(),
                    });
                }
            }
        }
    }
    merge_duplicates(found)
}

fn raster_order(a: &Keypoint, b: &Keypoint) -> std::cmp::Ordering {
    a.y.total_cmp(&b.y)
        .then(a.x.total_cmp(&b.x))
        .then(a.sigma.total_cmp(&b.sigma))
        .then(a.orientation.total_cmp(&b.orientation))
}

fn merge_duplicates(mut kps: Vec<Keypoint>) -> Vec<Keypoint> {
    // strongest first, so each survivor absorbs weaker neighbours
    kps.sort_by(|a, b| b.response.total_cmp(&a.response).then(raster_order(a, b)));
    let mut kept: Vec<Keypoint> = Vec::with_capacity(kps.len());
    for kp in kps {
        let dup = kept.iter().any(|k| {
            let d2 = (k.x - kp.x).powi(2) + (k.y - kp.y).powi(2);
            d2 <= 0.25 && (k.sigma / kp.sigma).log2().abs() <= 0.05
        });
        if !dup {
            kept.push(kp);
        }
    }
    kept.sort_by(raster_order);
    kept
}

fn gradient(img: &Plane, x: usize, y: usize) -> (f32, f32) {
    (img.at(x + 1, y) - img.at(x - 1, y), img.at(x, y + 1) - img.at(x, y - 1))
}

/// 36-bin orientation histogram (10 degrees per bin, bin `k` centered on
/// `k * 10` degrees) around `kp`, smoothed with a [1 4 6 4 1] kernel. `None`
/// when no sample of the window lies inside the image.
pub fn orientation_histogram(ss: &ScaleSpace, kp: &Keypoint) -> Option<[f32; ORIENTATION_BINS]> {
    let octave = ss.octaves.get(kp.octave)?;
    let img = octave.gaussians.get(kp.level)?;
    let (w, h) = (img.width as isize, img.height as isize);
    let cx = octave.to_octave(kp.x).round() as isize;
    let cy = octave.to_octave(kp.y).round() as isize;
    let sigma = ORIENTATION_SIGMA * kp.sigma / octave.step;
    let radius = (3.0 * sigma).round() as isize;
    let denom = 2.0 * sigma * sigma;

    let mut raw = [0f32; ORIENTATION_BINS];
    let mut samples = 0usize;
    for dy in -radius..=radius {
        let y = cy + dy;
        if y < 1 || y > h - 2 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x < 1 || x > w - 2 {
                continue;
            }
            samples += 1;
            let (gx, gy) = gradient(img, x as usize, y as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = (-((dx * dx + dy * dy) as f32) / denom).exp();
            let pos = gy.atan2(gx).rem_euclid(TAU) * ORIENTATION_BINS as f32 / TAU;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % ORIENTATION_BINS;
            raw[lo] += weight * mag * (1.0 - frac);
            raw[(lo + 1) % ORIENTATION_BINS] += weight * mag * frac;
        }
    }
    if samples == 0 {
        return None;
    }
    let n = ORIENTATION_BINS;
    let mut hist = [0f32; ORIENTATION_BINS];
    for k in 0..n {
        hist[k] = (raw[(k + n - 2) % n] + raw[(k + 2) % n]) / 16.0
            + 4.0 * (raw[(k + n - 1) % n] + raw[(k + 1) % n]) / 16.0
            + 6.0 * raw[k] / 16.0;
    }
    Some(hist)
}

/// One copy of `kp` per histogram peak within 80% of the maximum, with the
/// peak angle refined by a parabola through the neighbouring bins.
pub fn assign_orientations(ss: &ScaleSpace, kp: &Keypoint) -> Vec<Keypoint> {
    let Some(hist) = orientation_histogram(ss, kp) else {
        return Vec::new();
    };
    let max = hist.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let n = ORIENTATION_BINS;
    let mut out = Vec::new();
    for k in 0..n {
        let (l, c, r) = (hist[(k + n - 1) % n], hist[k], hist[(k + 1) % n]);
        if c > l && c > r && c >= ORIENTATION_PEAK_RATIO * max {
            let offset = 0.5 * (l - r) / (l - 2.0 * c + r);
            let angle = ((k as f32 + offset) * TAU / n as f32).rem_euclid(TAU);
            out.push(Keypoint {
                orientation: if angle >= TAU { 0.0 } else { angle },
                ..*kp
            });
        }
    }
    out
}

/// A unit-length local descriptor and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: [f32; DESCRIPTOR_DIM],
    pub keypoint: Keypoint,
    pub glyph: u16,
}

impl Descriptor {
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Unit-normalizes, clamps every component at 0.2 and returns the clamped
/// vector (before renormalization). `None` for an all-zero input.
pub fn clamp_stage(raw: &[f64; DESCRIPTOR_DIM]) -> Option<[f64; DESCRIPTOR_DIM]> {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) || !norm.is_finite() {
        return None;
    }
    let mut out = [0.0; DESCRIPTOR_DIM];
    for (o, r) in out.iter_mut().zip(raw) {
        *o = (r / norm).min(DESCRIPTOR_CLAMP);
    }
    Some(out)
}

/// Normalize, clamp at 0.2, renormalize.
pub fn finalize_descriptor(raw: &[f64; DESCRIPTOR_DIM]) -> Option<[f32; DESCRIPTOR_DIM]> {
    let clamped = clamp_stage(raw)?;
    let norm = clamped.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = [0f32; DESCRIPTOR_DIM];
    for (o, c) in out.iter_mut().zip(&clamped) {
        *o = (c / norm) as f32;
    }
    Some(out)
}

/// 4x4 cells x 8 orientation bins from a 16x16 sample grid aligned with the
/// keypoint orientation. Samples are Gaussian weighted (sigma = half the
/// window) and soft-binned trilinearly.
pub fn raw_descriptor(ss: &ScaleSpace, kp: &Keypoint) -> Option<[f64; DESCRIPTOR_DIM]> {
    let octave = ss.octaves.get(kp.octave)?;
    let img = octave.gaussians.get(kp.level)?;
    let (w, h) = (img.width as f32, img.height as f32);
    let cx = octave.to_octave(kp.x);
    let cy = octave.to_octave(kp.y);
    let sigma = kp.sigma / octave.step;
    let cell = CELL_SCALE * sigma;
    let spacing = cell * DESCRIPTOR_CELLS as f32 / DESCRIPTOR_SAMPLES as f32;
    let half_window = 0.5 * cell * DESCRIPTOR_CELLS as f32;
    let denom = 2.0 * half_window * half_window;
    let (sin, cos) = kp.orientation.sin_cos();

    let grad_at = |x: f32, y: f32| -> Option<(f32, f32)> {
        if x < 1.0 || y < 1.0 || x > w - 2.0 || y > h - 2.0 {
            return None;
        }
        let gx = img.sample(x + 1.0, y) - img.sample(x - 1.0, y);
        let gy = img.sample(x, y + 1.0) - img.sample(x, y - 1.0);
        Some((gx, gy))
    };

    let mut hist = [0f64; DESCRIPTOR_DIM];
    let half = (DESCRIPTOR_SAMPLES as f32 - 1.0) / 2.0;
    for row in 0..DESCRIPTOR_SAMPLES {
        for col in 0..DESCRIPTOR_SAMPLES {
            let u = (col as f32 - half) * spacing;
            let v = (row as f32 - half) * spacing;
            let px = cx + u * cos - v * sin;
            let py = cy + u * sin + v * cos;
            let Some((gx, gy)) = grad_at(px, py) else {
                continue;
            };
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = (-(u * u + v * v) / denom).exp() * mag;
            let theta = (gy.atan2(gx) - kp.orientation).rem_euclid(TAU);
            let cb = (col as f32 + 0.5) / (DESCRIPTOR_SAMPLES / DESCRIPTOR_CELLS) as f32 - 0.5;
            let rb = (row as f32 + 0.5) / (DESCRIPTOR_SAMPLES / DESCRIPTOR_CELLS) as f32 - 0.5;
            let ob = theta * DESCRIPTOR_BINS as f32 / TAU;
            let (c0, r0, o0) = (cb.floor(), rb.floor(), ob.floor());
            let (fc, fr, fo) = (cb - c0, rb - r0, ob - o0);
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                let r = r0 as i32 + dr;
                if !(0..DESCRIPTOR_CELLS as i32).contains(&r) {
                    continue;
                }
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    let c = c0 as i32 + dc;
                    if !(0..DESCRIPTOR_CELLS as i32).contains(&c) {
                        continue;
                    }
                    for (dob, wo) in [(0, 1.0 - fo), (1, fo)] {
                        let o = (o0 as usize + dob) % DESCRIPTOR_BINS;
                        let idx = (r as usize * DESCRIPTOR_CELLS + c as usize) * DESCRIPTOR_BINS + o;
                        hist[idx] += (weight * wr * wc * wo) as f64;
                    }
                }
            }
        }
    }
    Some(hist)
}

/// Descriptor for an oriented keypoint; [`Error::DegenerateDescriptor`] when
/// the window has no gradient.
pub fn compute_descriptor(ss: &ScaleSpace, kp: &Keypoint) -> Result<Descriptor> {
    let raw = raw_descriptor(ss, kp).ok_or(Error::DegenerateDescriptor)?;
    let values = finalize_descriptor(&raw).ok_or(Error::DegenerateDescriptor)?;
    Ok(Descriptor {
        values,
        keypoint: *kp,
        glyph: 0,
    })
}

/// Full detect/orient/describe pass over one plane, coordinates in that
/// plane's pixels.
pub fn extract_plane(image: &Plane, params: &SiftParams) -> Result<Vec<Descriptor>> {
    let n_octaves = params
        .n_octaves
        .unwrap_or_else(|| default_octaves(image.width.min(image.height)));
    let ss = build_scale_space(image, n_octaves, params.scales_per_octave, params.base_sigma)?;
    let mut out = Vec::new();
    for kp in detect_keypoints_with_border(&ss, params.contrast_threshold, params.edge_ratio, params.border) {
        for oriented in assign_orientations(&ss, &kp) {
            match compute_descriptor(&ss, &oriented) {
                Ok(d) => out.push(d),
                Err(Error::DegenerateDescriptor) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// The glyph as a [0, 1] plane resized to the working height, with the x and
/// y scale factors applied.
pub fn working_plane(glyph: &GlyphImage, params: &SiftParams) -> (Plane, f32, f32) {
    let plane = Plane::from_glyph(glyph);
    match params.normalize_height {
        Some(target) if target as usize != plane.height => {
            let sy = target as f32 / plane.height as f32;
            let width = ((plane.width as f32 * sy).round() as usize).max(1);
            let sx = width as f32 / plane.width as f32;
            (plane.resize(width, target as usize), sx, sy)
        }
        _ => (plane, 1.0, 1.0),
    }
}

/// Extracts descriptors from one glyph. Keypoint geometry is reported in the
/// glyph's own pixel coordinates.
pub fn extract_glyph(glyph: &GlyphImage, glyph_index: u16, params: &SiftParams) -> Result<Vec<Descriptor>> {
    params.validate()?;
    let (plane, sx, sy) = working_plane(glyph, params);
    let mut descriptors = extract_plane(&plane, params)?;
    for d in &mut descriptors {
        d.glyph = glyph_index;
        let kp = &mut d.keypoint;
        kp.x = (kp.x + 0.5) / sx - 0.5;
        kp.y = (kp.y + 0.5) / sy - 0.5;
        kp.sigma /= sy;
    }
    Ok(descriptors)
}

/// A font's descriptor set, pooled over all of its glyphs.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub font_id: String,
    pub descriptors: Vec<Descriptor>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.descriptors.iter().map(Descriptor::to_f64).collect()
    }
}

/// Concatenates per-glyph descriptors in glyph order. Glyphs too small for the
/// scale space are skipped with a warning; an empty result is logged, not an
/// error.
pub fn extract_font_descriptors(record: &FontRecord, params: &SiftParams) -> Result<DescriptorSet> {
    if record.glyphs.is_empty() {
        return Err(Error::invalid(format!(
            "font `{}` has no loaded glyphs",
            record.font_id
        )));
    }
    params.validate()?;
    let per_glyph = |(i, g): (usize, &GlyphImage)| -> Result<Vec<Descriptor>> {
        let idx = u16::try_from(i).map_err(|_| Error::invalid("more than 65535 glyphs"))?;
        match extract_glyph(g, idx, params) {
            Ok(d) => Ok(d),
            Err(Error::InvalidArgument(msg)) => {
                log::warn!("font `{}` glyph {i} skipped: {msg}", record.font_id);
                Ok(Vec::new())
            }
            Err(e) => Err(e),
        }
    };
    #[cfg(feature = "parallel")]
    let chunks: Vec<Vec<Descriptor>> = {
        use rayon::prelude::*;
        record
            .glyphs
            .par_iter()
            .enumerate()
            .map(per_glyph)
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<Vec<Descriptor>> = record.glyphs.iter().enumerate().map(per_glyph).collect::<Result<_>>()?;
    let descriptors: Vec<Descriptor> = chunks.into_iter().flatten().collect();
    if descriptors.is_empty() {
        log::warn!("font `{}` produced no descriptors", record.font_id);
    }
    Ok(DescriptorSet {
        font_id: record.font_id.clone(),
        descriptors,
    })
}

#[cfg(test)]
mod tests;
