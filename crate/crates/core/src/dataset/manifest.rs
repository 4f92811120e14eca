//! Tab-separated font manifests, split files and glyph image decoding.
//!
//! Manifest line: `font_id<TAB>display_name<TAB>word,word,...<TAB>glob-or-directory`.
//! Relative image locations resolve against the manifest's directory. Blank
//! lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use super::{FontRecord, GlyphImage, ImpressionVocabulary, Split};
use crate::io::{read_to_string, write_file};
use crate::{Error, Result};

/// One parsed manifest line, before vocabulary indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub font_id: String,
    pub name: String,
    pub words: Vec<String>,
    pub images: String,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "pgm" | "pnm")
    )
}

fn resolve_images(base: &Path, spec: &str) -> std::result::Result<Vec<PathBuf>, String> {
    let joined = if Path::new(spec).is_absolute() {
        PathBuf::from(spec)
    } else {
        base.join(spec)
    };
    let mut files: Vec<PathBuf> = if joined.is_dir() {
        std::fs::read_dir(&joined)
            .map_err(|e| format!("cannot list {}: {e}", joined.display()))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect()
    } else if spec.contains(['*', '?', '[']) {
        let pattern = joined.to_string_lossy().into_owned();
        glob::glob(&pattern)
            .map_err(|e| format!("bad glob `{spec}`: {e}"))?
            .filter_map(|p| p.ok())
            .filter(|p| p.is_file())
            .collect()
    } else if joined.is_file() {
        vec![joined.clone()]
    } else {
        return Err(format!("missing image path {}", joined.display()));
    };
    files.sort();
    if files.is_empty() {
        return Err(format!("no glyph images match {}", joined.display()));
    }
    Ok(files)
}

fn parse_rows(path: &Path, text: &str) -> Result<Vec<(usize, ManifestRow)>> {
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let font_id = fields[0].trim();
        if font_id.is_empty() {
            return Err(parse_error(path, line_no, "empty font_id"));
        }
        if !seen.insert(font_id.to_owned()) {
            return Err(parse_error(path, line_no, format!("duplicate font_id `{font_id}`")));
        }
        let words: BTreeSet<String> = fields[2]
            .split(',')
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .map(str::to_owned)
            .collect();
        rows.push((
            line_no,
            ManifestRow {
                font_id: font_id.to_owned(),
                name: fields[1].trim().to_owned(),
                words: words.into_iter().collect(),
                images: fields[3].trim().to_owned(),
            },
        ));
    }
    Ok(rows)
}

/// Parses a manifest and resolves glyph paths without decoding any image.
/// The vocabulary is unfiltered and counts fonts per word.
pub fn parse_manifest(path: &Path) -> Result<(Vec<FontRecord>, ImpressionVocabulary)> {
    let text = read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rows = parse_rows(path, &text)?;

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, row) in &rows {
        for w in &row.words {
            *counts.entry(w.clone()).or_default() += 1;
        }
    }
    let vocab = ImpressionVocabulary::from_counts(counts);

    let mut records = Vec::with_capacity(rows.len());
    for (line_no, row) in rows {
        let glyph_paths = resolve_images(base, &row.images)
            .map_err(|msg| parse_error(path, line_no, format!("font `{}`: {msg}", row.font_id)))?;
        let impressions = row
            .words
            .iter()
            .map(|w| vocab.index_of(w).expect("word counted above"))
            .collect();
        records.push(FontRecord {
            font_id: row.font_id,
            name: row.name,
            glyph_paths,
            glyphs: Vec::new(),
            impressions,
            split: None,
        });
    }
    Ok((records, vocab))
}

/// Parses a manifest and decodes every glyph image.
pub fn load_manifest(path: &Path) -> Result<(Vec<FontRecord>, ImpressionVocabulary)> {
    let (mut records, vocab) = parse_manifest(path)?;
    for rec in &mut records {
        rec.load_glyphs()?;
    }
    Ok((records, vocab))
}

/// Writes manifest rows in the tab-separated format.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        for field in [&row.font_id, &row.name, &row.images] {
            if field.contains(['\t', '\n']) {
                return Err(Error::invalid(format!(
                    "manifest field `{field}` contains a tab or newline"
                )));
            }
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            row.font_id,
            row.name,
            row.words.join(","),
            row.images
        ));
    }
    write_file(path, out.as_bytes())
}

fn letter_from_path(path: &Path) -> char {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.chars().last())
        .unwrap_or('?')
}

/// Decodes a PNG or binary PGM into an 8-bit glyph with ink-dark polarity.
/// The letter is the last character of the file stem (`g03_H.pgm` is `H`).
pub fn decode_glyph(font_id: &str, path: &Path) -> Result<GlyphImage> {
    let letter = letter_from_path(path);
    let img = image::open(path).map_err(|e| Error::Image {
        font_id: font_id.to_owned(),
        letter,
        message: format!("{}: {e}", path.display()),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let mut glyph = GlyphImage::new(font_id, letter, w, h, gray.into_raw())?;
    normalize_polarity(&mut glyph);
    Ok(glyph)
}

fn median(values: &mut [u8]) -> u8 {
    values.sort_unstable();
    values[values.len() / 2]
}

/// Inverts glyphs drawn light-on-dark. The border median is compared with the
/// median of the central half-size window; when the two agree, a border darker
/// than mid-gray decides.
pub fn normalize_polarity(glyph: &mut GlyphImage) -> bool {
    let (w, h) = (glyph.width, glyph.height);
    let mut border = Vec::with_capacity(2 * (w + h) as usize);
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                border.push(glyph.get(x, y));
            }
        }
    }
    let (x0, x1) = (w / 4, (3 * w).div_ceil(4).max(w / 4 + 1));
    let (y0, y1) = (h / 4, (3 * h).div_ceil(4).max(h / 4 + 1));
    let mut center = Vec::new();
    for y in y0..y1.min(h) {
        for x in x0..x1.min(w) {
            center.push(glyph.get(x, y));
        }
    }
    let b = median(&mut border);
    let c = median(&mut center);
    let invert = b < c || (b == c && b < 128);
    if invert {
        glyph.pixels.iter_mut().for_each(|p| *p = 255 - *p);
    }
    invert
}

/// Reads a `font_id<TAB>split` file.
pub fn read_split_file(path: &Path) -> Result<HashMap<String, Split>> {
    let text = read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(id), Some(split), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_error(path, i + 1, "expected `font_id<TAB>split`"));
        };
        let split = split
            .trim()
            .parse()
            .map_err(|e: Error| parse_error(path, i + 1, e.to_string()))?;
        out.insert(id.trim().to_owned(), split);
    }
    Ok(out)
}

/// Assigns splits from a published split file. Every record must be listed.
pub fn apply_split_file(mut records: Vec<FontRecord>, splits: &HashMap<String, Split>) -> Result<Vec<FontRecord>> {
    for rec in &mut records {
        rec.split = Some(
            *splits
                .get(&rec.font_id)
                .ok_or_else(|| Error::invalid(format!("font `{}` missing from split file", rec.font_id)))?,
        );
    }
    Ok(records)
}
