//! Desk-scale synthetic fonts with planted shape features.
//!
//! Each font draws a handful of boolean style flags, renders stroke skeletons
//! of simple letterforms with those styles, and receives impression words from
//! a pure function of the flags. The correlation between local shape and label
//! is therefore known exactly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FontRecord, GlyphImage, ManifestRow};
use crate::io::write_file;
use crate::rng::{self, StageRng};
use crate::{Error, Result};

/// Letters rendered, in glyph order; fonts with more glyphs cycle.
pub const GLYPH_LETTERS: [char; 12] = ['H', 'O', 'A', 'L', 'T', 'C', 'E', 'V', 'U', 'Z', 'F', 'N'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Serif,
    JaggyContour,
    RoundedCorner,
    ConstantStroke,
    VaryingStroke,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::Serif,
        Feature::JaggyContour,
        Feature::RoundedCorner,
        Feature::ConstantStroke,
        Feature::VaryingStroke,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Serif => "serif",
            Feature::JaggyContour => "jaggy_contour",
            Feature::RoundedCorner => "rounded_corner",
            Feature::ConstantStroke => "constant_stroke",
            Feature::VaryingStroke => "varying_stroke",
        }
    }
}

impl FromStr for Feature {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature flag `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub serif: bool,
    pub jaggy_contour: bool,
    pub rounded_corner: bool,
    pub constant_stroke: bool,
    pub varying_stroke: bool,
}

impl FeatureFlags {
    pub fn get(&self, f: Feature) -> bool {
        match f {
            Feature::Serif => self.serif,
            Feature::JaggyContour => self.jaggy_contour,
            Feature::RoundedCorner => self.rounded_corner,
            Feature::ConstantStroke => self.constant_stroke,
            Feature::VaryingStroke => self.varying_stroke,
        }
    }
}

/// A feature or its negation, written `serif` / `!serif`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Literal {
    pub feature: Feature,
    pub negated: bool,
}

impl Literal {
    pub fn holds(&self, flags: &FeatureFlags) -> bool {
        flags.get(self.feature) != self.negated
    }
}

impl TryFrom<String> for Literal {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        let (negated, name) = match s.strip_prefix('!') {
            Some(rest) => (true, rest),
            None => (false, s.as_str()),
        };
        Ok(Literal {
            feature: name.trim().parse()?,
            negated,
        })
    }
}

impl From<Literal> for String {
    fn from(l: Literal) -> String {
        l.to_string()
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("!")?;
        }
        f.write_str(self.feature.name())
    }
}

/// Attach `word` when every literal in `when` holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelClause {
    pub word: String,
    pub when: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelRule {
    pub clauses: Vec<LabelClause>,
}

impl LabelRule {
    fn clause(word: &str, feature: Feature) -> LabelClause {
        LabelClause {
            word: word.to_owned(),
            when: vec![Literal {
                feature,
                negated: false,
            }],
        }
    }

    /// Words for a flag set, sorted and deduplicated.
    pub fn apply(&self, flags: &FeatureFlags) -> Vec<String> {
        let mut words: Vec<String> = self
            .clauses
            .iter()
            .filter(|c| c.when.iter().all(|l| l.holds(flags)))
            .map(|c| c.word.clone())
            .collect();
        words.sort();
        words.dedup();
        words
    }
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule {
            clauses: vec![
                Self::clause("serif", Feature::Serif),
                Self::clause("rough", Feature::JaggyContour),
                Self::clause("grunge", Feature::JaggyContour),
                Self::clause("round", Feature::RoundedCorner),
                Self::clause("monoline", Feature::ConstantStroke),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_fonts: usize,
    pub glyphs_per_font: usize,
    pub image_size: u32,
    /// Probability of each of serif, jaggy, rounded and constant-stroke.
    /// Flag draws are repeated until the label rule yields at least one word.
    pub flag_probability: f64,
    pub labels: LabelRule,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_fonts: 200,
            glyphs_per_font: 10,
            image_size: 64,
            flag_probability: 0.15,
            labels: LabelRule::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::invalid(format!(
                "image_size must be at least 32, got {}",
                self.image_size
            )));
        }
        if self.glyphs_per_font == 0 {
            return Err(Error::invalid("glyphs_per_font must be at least 1"));
        }
        if !(self.flag_probability > 0.0 && self.flag_probability <= 1.0) {
            return Err(Error::invalid(format!(
                "flag_probability must be in (0, 1], got {}",
                self.flag_probability
            )));
        }
        for c in &self.labels.clauses {
            if c.word.trim().is_empty() || c.word.contains([',', '\t', '\n']) {
                return Err(Error::invalid(format!("bad label word `{}`", c.word)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFont {
    pub font_id: String,
    pub flags: FeatureFlags,
    pub words: Vec<String>,
    pub glyphs: Vec<GlyphImage>,
}

/// What [`generate_synthetic`] wrote.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: PathBuf,
    pub flags_file: PathBuf,
    pub fonts: Vec<SyntheticFont>,
}

impl SyntheticDataset {
    /// Records with words resolved against a vocabulary built from the fonts.
    pub fn records(&self) -> (Vec<FontRecord>, super::ImpressionVocabulary) {
        let mut counts = std::collections::BTreeMap::new();
        for f in &self.fonts {
            for w in &f.words {
                *counts.entry(w.clone()).or_insert(0) += 1;
            }
        }
        let vocab = super::ImpressionVocabulary::from_counts(counts);
        let records = self
            .fonts
            .iter()
            .map(|f| FontRecord {
                font_id: f.font_id.clone(),
                name: f.font_id.clone(),
                glyph_paths: vec![],
                glyphs: f.glyphs.clone(),
                impressions: f.words.iter().filter_map(|w| vocab.index_of(w)).collect(),
                split: None,
            })
            .collect();
        (records, vocab)
    }
}

/// Draws flags until `rule` gives a non-empty word list.
pub fn sample_flags(rng: &mut StageRng, probability: f64, rule: &LabelRule) -> Result<(FeatureFlags, Vec<String>)> {
    for _ in 0..10_000 {
        let constant = rng.random_bool(probability);
        let flags = FeatureFlags {
            serif: rng.random_bool(probability),
            jaggy_contour: rng.random_bool(probability),
            rounded_corner: rng.random_bool(probability),
            constant_stroke: constant,
            varying_stroke: !constant,
        };
        let words = rule.apply(&flags);
        if !words.is_empty() {
            return Ok((flags, words));
        }
    }
    Err(Error::invalid("label rule produced no words for 10000 flag draws"))
}

type Pt = (f64, f64);

struct Stroke {
    points: Vec<Pt>,
    closed: bool,
}

fn open(points: &[Pt]) -> Stroke {
    Stroke {
        points: points.to_vec(),
        closed: false,
    }
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, n: usize) -> Vec<Pt> {
    (0..=n)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / n as f64).to_radians();
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn skeleton(letter: char) -> Vec<Stroke> {
    match letter {
        'H' => vec![
            open(&[(0.28, 0.15), (0.28, 0.85)]),
            open(&[(0.72, 0.15), (0.72, 0.85)]),
            open(&[(0.28, 0.5), (0.72, 0.5)]),
        ],
        'O' => {
            let mut pts = arc(0.5, 0.5, 0.25, 0.34, 0.0, 360.0, 24);
            pts.pop();
            vec![Stroke {
                points: pts,
                closed: true,
            }]
        }
        'A' => vec![
            open(&[(0.2, 0.85), (0.5, 0.15), (0.8, 0.85)]),
            open(&[(0.33, 0.6), (0.67, 0.6)]),
        ],
        'L' => vec![open(&[(0.3, 0.15), (0.3, 0.85), (0.74, 0.85)])],
        'T' => vec![open(&[(0.2, 0.15), (0.8, 0.15)]), open(&[(0.5, 0.15), (0.5, 0.85)])],
        'C' => vec![open(&arc(0.52, 0.5, 0.26, 0.34, 40.0, 320.0, 20))],
        'E' => vec![
            open(&[(0.72, 0.15), (0.3, 0.15), (0.3, 0.85), (0.72, 0.85)]),
            open(&[(0.3, 0.5), (0.64, 0.5)]),
        ],
        'V' => vec![open(&[(0.2, 0.15), (0.5, 0.85), (0.8, 0.15)])],
        'U' => {
            let mut pts = vec![(0.28, 0.15)];
            pts.extend(
                arc(0.5, 0.6, 0.22, 0.25, 180.0, 0.0, 14)
                    .into_iter()
                    .map(|(x, y)| (x, 1.2 - y)),
            );
            pts.push((0.72, 0.15));
            vec![open(&pts)]
        }
        'Z' => vec![open(&[(0.25, 0.15), (0.75, 0.15), (0.25, 0.85), (0.75, 0.85)])],
        'F' => vec![
            open(&[(0.72, 0.15), (0.3, 0.15), (0.3, 0.85)]),
            open(&[(0.3, 0.5), (0.64, 0.5)]),
        ],
        _ => vec![open(&[(0.28, 0.85), (0.28, 0.15), (0.72, 0.85), (0.72, 0.15)])],
    }
}

/// Per-font geometry drawn once and shared by all of its glyphs.
#[derive(Debug, Clone, Copy)]
struct Style {
    half_width: f64,
    scale: f64,
    offset: Pt,
}

/// A straight stroke piece with its own half-width and end extensions.
struct Body {
    a: Pt,
    b: Pt,
    w: f64,
    ext_a: f64,
    ext_b: f64,
}

impl Body {
    /// Signed margin inside the body (positive inside), in glyph units.
    fn inside(&self, p: Pt, round: bool) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-12);
        let (ux, uy) = (dx / len, dy / len);
        let (px, py) = (p.0 - self.a.0, p.1 - self.a.1);
        let t = px * ux + py * uy;
        let n = (px * uy - py * ux).abs();
        if round {
            let tc = t.clamp(0.0, len);
            let (qx, qy) = (px - ux * tc, py - uy * tc);
            self.w - (qx * qx + qy * qy).sqrt()
        } else {
            (self.w - n).min(t + self.ext_a).min(len + self.ext_b - t)
        }
    }
}

fn stroke_width(style: &Style, flags: &FeatureFlags, a: Pt, b: Pt) -> f64 {
    if flags.constant_stroke || !flags.varying_stroke {
        style.half_width
    } else {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-12);
        // thick verticals, hairline horizontals
        style.half_width * (0.35 + 1.0 * (dy.abs() / len))
    }
}

fn bodies(letter: char, style: &Style, flags: &FeatureFlags) -> Vec<Body> {
    let map = |(u, v): Pt| {
        (
            0.5 + (u - 0.5) * style.scale + style.offset.0,
            0.5 + (v - 0.5) * style.scale + style.offset.1,
        )
    };
    let mut out = Vec::new();
    for stroke in skeleton(letter) {
        let pts: Vec<Pt> = stroke.points.iter().copied().map(map).collect();
        let n = pts.len();
        let n_seg = if stroke.closed { n } else { n - 1 };
        for i in 0..n_seg {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            let w = stroke_width(style, flags, a, b);
            let first = !stroke.closed && i == 0;
            let last = !stroke.closed && i + 1 == n_seg;
            out.push(Body {
                a,
                b,
                w,
                ext_a: if first { 0.0 } else { w },
                ext_b: if last { 0.0 } else { w },
            });
        }
        if flags.serif && !stroke.closed {
            for (end, prev) in [(pts[0], pts[1]), (pts[n - 1], pts[n - 2])] {
                let (dx, dy) = (end.0 - prev.0, end.1 - prev.1);
                let len = (dx * dx + dy * dy).sqrt().max(1e-12);
                let (ux, uy) = (dx / len, dy / len);
                let w = stroke_width(style, flags, prev, end);
                let bar = (0.45 * style.half_width).max(0.016);
                let reach = w + 0.06;
                let c = (end.0 - ux * bar, end.1 - uy * bar);
                out.push(Body {
                    a: (c.0 - uy * reach, c.1 + ux * reach),
                    b: (c.0 + uy * reach, c.1 - ux * reach),
                    w: bar,
                    ext_a: 0.0,
                    ext_b: 0.0,
                });
            }
        }
    }
    out
}

fn draw_style(rng: &mut StageRng) -> Style {
    Style {
        half_width: rng.random_range(0.045..0.07),
        scale: rng.random_range(0.88..1.0),
        offset: (rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)),
    }
}

/// Rasterizes one glyph. Jaggy fonts perturb the contour by independent
/// per-pixel noise of up to 1.6 px.
fn rasterize(
    font_id: &str,
    letter: char,
    size: u32,
    style: &Style,
    flags: &FeatureFlags,
    rng: &mut StageRng,
) -> GlyphImage {
    let body_list = bodies(letter, style, flags);
    let round = flags.rounded_corner;
    let s = size as f64;
    let mut pixels = Vec::with_capacity((size * size) as usize);
    for y in 0..size {
        for x in 0..size {
            let p = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let inside = body_list
                .iter()
                .map(|b| b.inside(p, round))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut margin_px = inside * s;
            if flags.jaggy_contour {
                margin_px += rng.random_range(-1.6..1.6);
            }
            let coverage = (margin_px + 0.5).clamp(0.0, 1.0);
            pixels.push((255.0 * (1.0 - coverage)).round() as u8);
        }
    }
    GlyphImage {
        font_id: font_id.to_owned(),
        letter,
        width: size,
        height: size,
        pixels,
    }
}

/// Renders a single glyph for the given flags; `seed` fixes the stroke style
/// and contour noise.
pub fn render_glyph(letter: char, flags: &FeatureFlags, size: u32, seed: u64) -> Result<GlyphImage> {
    if size < 32 {
        return Err(Error::invalid(format!("image_size must be at least 32, got {size}")));
    }
    let mut rng = rng::stream(seed, "synth/glyph");
    let style = draw_style(&mut rng);
    Ok(rasterize("glyph", letter, size, &style, flags, &mut rng))
}

fn synth_font(spec: &SyntheticSpec, seed: u64, index: usize) -> Result<SyntheticFont> {
    let font_id = format!("synth-{index:04}");
    let mut rng = rng::stream(seed, &format!("synth/font/{index}"));
    let (flags, words) = sample_flags(&mut rng, spec.flag_probability, &spec.labels)?;
    let style = draw_style(&mut rng);
    let glyphs = (0..spec.glyphs_per_font)
        .map(|g| {
            let letter = GLYPH_LETTERS[g % GLYPH_LETTERS.len()];
            rasterize(&font_id, letter, spec.image_size, &style, &flags, &mut rng)
        })
        .collect();
    Ok(SyntheticFont {
        font_id,
        flags,
        words,
        glyphs,
    })
}

/// Generates fonts in memory. Output depends only on `spec` and `seed`.
pub fn synthesize(spec: &SyntheticSpec, seed: u64) -> Result<Vec<SyntheticFont>> {
    spec.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..spec.n_fonts)
            .into_par_iter()
            .map(|i| synth_font(spec, seed, i))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..spec.n_fonts).map(|i| synth_font(spec, seed, i)).collect()
    }
}

fn encode_pgm(g: &GlyphImage) -> Result<Vec<u8>> {
    let img = image::GrayImage::from_raw(g.width, g.height, g.pixels.clone())
        .ok_or_else(|| Error::invalid("glyph buffer size mismatch"))?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Pnm)
        .map_err(|e| Error::invalid(format!("PGM encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// Glyph file name; the letter is the last character of the stem.
pub(crate) fn glyph_file_name(index: usize, letter: char) -> String {
    format!("g{index:02}_{letter}.pgm")
}

/// Writes images, `manifest.tsv` and the ground-truth `flags.tsv` under `dir`.
pub fn write_synthetic(fonts: Vec<SyntheticFont>, dir: &Path) -> Result<SyntheticDataset> {
    let mut rows = Vec::with_capacity(fonts.len());
    let mut flags_tsv = String::from("font_id");
    for f in Feature::ALL {
        flags_tsv.push('\t');
        flags_tsv.push_str(f.name());
    }
    flags_tsv.push('\n');
    for font in &fonts {
        let rel = format!("images/{}", font.font_id);
        for (i, g) in font.glyphs.iter().enumerate() {
            write_file(&dir.join(&rel).join(glyph_file_name(i, g.letter)), &encode_pgm(g)?)?;
        }
        rows.push(ManifestRow {
            font_id: font.font_id.clone(),
            name: font.font_id.clone(),
            words: font.words.clone(),
            images: rel,
        });
        flags_tsv.push_str(&font.font_id);
        for f in Feature::ALL {
            flags_tsv.push_str(if font.flags.get(f) { "\t1" } else { "\t0" });
        }
        flags_tsv.push('\n');
    }
    let manifest = dir.join("manifest.tsv");
    super::write_manifest(&manifest, &rows)?;
    let flags_file = dir.join("flags.tsv");
    write_file(&flags_file, flags_tsv.as_bytes())?;
    Ok(SyntheticDataset {
        manifest,
        flags_file,
        fonts,
    })
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<SyntheticDataset> {
    let fonts = synthesize(spec, seed)?;
    write_synthetic(fonts, dir)
}
