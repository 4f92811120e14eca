//! Single-channel `f32` images and the resampling/blur primitives used by the
//! scale space.

use crate::dataset::GlyphImage;

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    /// Intensities scaled to [0, 1].
    pub fn from_glyph(g: &GlyphImage) -> Self {
        Plane {
            width: g.width as usize,
            height: g.height as usize,
            data: g.pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at continuous pixel-center coordinates, clamped to the
    /// image.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        // difference form keeps constant regions exactly constant
        let top = self.at(x0, y0) + (self.at(x1, y0) - self.at(x0, y0)) * fx;
        let bot = self.at(x0, y1) + (self.at(x1, y1) - self.at(x0, y1)) * fx;
        top + (bot - top) * fy
    }

    /// Bilinear resize with pixel-center alignment. Downscaling pre-blurs to
    /// limit aliasing.
    pub fn resize(&self, width: usize, height: usize) -> Plane {
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let shrink = sx.max(sy);
        let src = if shrink > 1.0 {
            gaussian_blur(self, 0.5 * (shrink * shrink - 1.0).sqrt())
        } else {
            self.clone()
        };
        Plane::from_fn(width, height, |x, y| {
            src.sample((x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5)
        })
    }

    pub fn upsample2x(&self) -> Plane {
        self.resize(self.width * 2, self.height * 2)
    }

    /// 2x2 block average. Odd trailing rows/columns are dropped.
    pub fn downsample2x(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        Plane::from_fn(w, h, |x, y| {
            let a = self.at(2 * x, 2 * y);
            a + 0.25
                * ((self.at(2 * x + 1, 2 * y) - a)
                    + (self.at(2 * x, 2 * y + 1) - a)
                    + (self.at(2 * x + 1, 2 * y + 1) - a))
        })
    }

    /// Lossless quarter turn clockwise as displayed (y down):
    /// `(x, y) -> (h - 1 - y, x)`.
    pub fn rotate90(&self) -> Plane {
        let (w, h) = (self.width, self.height);
        let mut out = Plane::new(h, w);
        for y in 0..h {
            for x in 0..w {
                out.set(h - 1 - y, x, self.at(x, y));
            }
        }
        out
    }
}

/// Half-sample symmetric reflection: `-1 -> 0`, `n -> n - 1`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Normalized Gaussian taps with radius `ceil(3 sigma)`. The width parameter
/// is nudged so the truncated kernel's variance is exactly `sigma^2`; chains
/// of small blurs then compose to the intended total blur.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let target = sigma as f64;
    let mut width = target;
    let mut taps = Vec::new();
    for _ in 0..4 {
        let denom = 2.0 * width * width;
        taps = (-radius..=radius)
            .map(|i| (-((i * i) as f64) / denom).exp())
            .collect::<Vec<f64>>();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        let var: f64 = (-radius..=radius).zip(&taps).map(|(i, t)| (i * i) as f64 * t).sum();
        if var <= 0.0 {
            break;
        }
        width *= target / var.sqrt();
    }
    taps.into_iter().map(|t| t as f32).collect()
}

/// Separable Gaussian blur with reflected borders. Taps are applied to
/// differences from the center pixel, so flat regions stay exactly flat.
pub fn gaussian_blur(src: &Plane, sigma: f32) -> Plane {
    if sigma <= 0.0 {
        return src.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    // same per-pixel operation order as a direct tap loop, but with reflected
    // indices resolved once per row (horizontal) or per source row (vertical)
    let mut tmp = Plane::new(w, h);
    let mut padded = vec![0.0f32; w + 2 * r as usize];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect(i as isize - r, w)];
        }
        let out = &mut tmp.data[y * w..(y + 1) * w];
        for x in 0..w {
            let c = row[x];
            let mut acc = 0.0f32;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * (padded[x + t] - c);
            }
            out[x] = c + acc;
        }
    }
    let mut out = Plane::new(w, h);
    let mut acc = vec![0.0f32; w];
    for y in 0..h {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let center = &tmp.data[y * w..(y + 1) * w];
        for (t, &kv) in k.iter().enumerate() {
            let sy = reflect(y as isize + t as isize - r, h);
            let srow = &tmp.data[sy * w..(sy + 1) * w];
            for ((a, &v), &c) in acc.iter_mut().zip(srow).zip(center) {
                *a += kv * (v - c);
            }
        }
        for ((o, &c), &a) in out.data[y * w..(y + 1) * w].iter_mut().zip(center).zip(&acc) {
            *o = c + a;
        }
    }
    out
}
