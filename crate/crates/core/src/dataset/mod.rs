//! Glyph images, impression vocabularies, splits and label vectors.

mod manifest;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

pub use manifest::{
    apply_split_file, decode_glyph, load_manifest, normalize_polarity, parse_manifest, read_split_file, write_manifest,
    ManifestRow,
};
pub use synth::{
    generate_synthetic, render_glyph, sample_flags, synthesize, write_synthetic, Feature, FeatureFlags, LabelClause,
    LabelRule, Literal, SyntheticDataset, SyntheticFont, SyntheticSpec, GLYPH_LETTERS,
};

/// Default vocabulary threshold: words attached to fewer fonts are dropped.
pub const DEFAULT_MIN_FONTS: usize = 100;

/// 8-bit grayscale glyph, row-major, 0 = ink and 255 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphImage {
    pub font_id: String,
    pub letter: char,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GlyphImage {
    pub fn new(font_id: impl Into<String>, letter: char, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "glyph size must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "glyph buffer has {} pixels, expected {}",
                pixels.len(),
                width as usize * height as usize
            )));
        }
        Ok(GlyphImage {
            font_id: font_id.into(),
            letter,
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }
}

/// Lexicographically ordered impression words with per-word font counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImpressionVocabulary {
    words: Vec<String>,
    frequency: Vec<usize>,
    index: BTreeMap<String, usize>,
}

impl ImpressionVocabulary {
    /// Builds a vocabulary from `word -> number of fonts` counts.
    pub fn from_counts(counts: BTreeMap<String, usize>) -> Self {
        let mut words = Vec::with_capacity(counts.len());
        let mut frequency = Vec::with_capacity(counts.len());
        let mut index = BTreeMap::new();
        for (k, (word, count)) in counts.into_iter().enumerate() {
            index.insert(word.clone(), k);
            words.push(word);
            frequency.push(count);
        }
        ImpressionVocabulary {
            words,
            frequency,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, k: usize) -> &str {
        &self.words[k]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn frequency(&self, k: usize) -> usize {
        self.frequency[k]
    }

    pub fn frequency_of(&self, word: &str) -> Option<usize> {
        self.index_of(word).map(|k| self.frequency[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// One font: its glyphs, impression word indices into the accompanying
/// vocabulary, and its split once assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct FontRecord {
    pub font_id: String,
    pub name: String,
    /// Image files in glyph order. Empty for in-memory records.
    pub glyph_paths: Vec<PathBuf>,
    /// Decoded glyphs; empty until loaded.
    pub glyphs: Vec<GlyphImage>,
    pub impressions: BTreeSet<usize>,
    pub split: Option<Split>,
}

impl FontRecord {
    pub fn load_glyphs(&mut self) -> Result<()> {
        self.glyphs = self
            .glyph_paths
            .iter()
            .map(|p| decode_glyph(&self.font_id, p))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn impression_words<'a>(&self, vocab: &'a ImpressionVocabulary) -> Vec<&'a str> {
        self.impressions.iter().map(|&k| vocab.word(k)).collect()
    }
}

/// K-dimensional m-hot target.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector(pub Vec<f64>);

impl LabelVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Drops words carried by fewer than `min_fonts` fonts, re-indexes the rest
/// lexicographically, and drops fonts left without any word.
pub fn filter_vocabulary(
    records: Vec<FontRecord>,
    vocab: &ImpressionVocabulary,
    min_fonts: usize,
) -> Result<(Vec<FontRecord>, ImpressionVocabulary)> {
    if min_fonts == 0 {
        return Err(Error::invalid("min_fonts must be at least 1"));
    }
    let mut counts = vec![0usize; vocab.len()];
    for rec in &records {
        for &k in &rec.impressions {
            let slot = counts.get_mut(k).ok_or_else(|| {
                Error::invalid(format!(
                    "font `{}` references word index {k} outside vocabulary of {}",
                    rec.font_id,
                    vocab.len()
                ))
            })?;
            *slot += 1;
        }
    }
    let retained: BTreeMap<String, usize> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= min_fonts)
        .map(|(k, &c)| (vocab.word(k).to_owned(), c))
        .collect();
    if retained.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let new_vocab = ImpressionVocabulary::from_counts(retained);
    let remap: Vec<Option<usize>> = (0..vocab.len()).map(|k| new_vocab.index_of(vocab.word(k))).collect();

    let before = records.len();
    let out: Vec<FontRecord> = records
        .into_iter()
        .filter_map(|mut rec| {
            rec.impressions = rec.impressions.iter().filter_map(|&k| remap[k]).collect();
            (!rec.impressions.is_empty()).then_some(rec)
        })
        .collect();
    if out.len() < before {
        log::info!(
            "vocabulary filter (min_fonts={min_fonts}): kept {} of {} words, dropped {} fonts without remaining words",
            new_vocab.len(),
            vocab.len(),
            before - out.len()
        );
    }
    Ok((out, new_vocab))
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::invalid(format!(
                "split ratios must all be positive, got ({}, {}, {})",
                self.train, self.val, self.test
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Assigns splits by a seeded shuffle. Every split gets at least one font;
/// otherwise counts are the rounded proportions, with train taking the rest.
pub fn split_records(mut records: Vec<FontRecord>, ratios: SplitRatios, seed: u64) -> Result<Vec<FontRecord>> {
    ratios.validate()?;
    let n = records.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 fonts to split, got {n}")));
    }
    let n_val = ((n as f64 * ratios.val).round() as usize).max(1);
    let n_test = ((n as f64 * ratios.test).round() as usize).max(1);
    let n_val = n_val.min(n - 2);
    let n_test = n_test.min(n - 1 - n_val);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    for (pos, &idx) in order.iter().enumerate() {
        records[idx].split = Some(if pos < n_val {
            Split::Val
        } else if pos < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        });
    }
    Ok(records)
}

/// m-hot label vector over a vocabulary of size `k`.
pub fn to_multi_hot(record: &FontRecord, k: usize) -> Result<LabelVector> {
    let mut values = vec![0.0; k];
    for &idx in &record.impressions {
        *values.get_mut(idx).ok_or_else(|| {
            Error::invalid(format!(
                "font `{}` has impression index {idx} but K = {k}",
                record.font_id
            ))
        })? = 1.0;
    }
    Ok(LabelVector(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, words: &[usize]) -> FontRecord {
        FontRecord {
            font_id: id.into(),
            name: id.into(),
            glyph_paths: vec![],
            glyphs: vec![],
            impressions: words.iter().copied().collect(),
            split: None,
        }
    }

    fn vocab(words: &[(&str, usize)]) -> ImpressionVocabulary {
        ImpressionVocabulary::from_counts(words.iter().map(|(w, c)| (w.to_string(), *c)).collect())
    }

    #[test]
    fn filter_drops_rare_word_keeps_fonts() {
        // {a,b},{a},{a} with min 2 -> b dropped, everyone keeps a.
        let v = vocab(&[("a", 3), ("b", 1)]);
        let recs = vec![rec("f1", &[0, 1]), rec("f2", &[0]), rec("f3", &[0])];
        let (out, nv) = filter_vocabulary(recs, &v, 2).unwrap();
        assert_eq!(nv.words(), ["a"]);
        assert_eq!(nv.frequency(0), 3);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| r.impressions == BTreeSet::from([0])));
    }

    #[test]
    fn filter_with_threshold_one_is_noop() {
        let v = vocab(&[("a", 1), ("b", 1), ("c", 1)]);
        let recs = vec![rec("f1", &[0, 2]), rec("f2", &[1])];
        let (out, nv) = filter_vocabulary(recs.clone(), &v, 1).unwrap();
        assert_eq!(out, recs);
        assert_eq!(nv.len(), 3);
    }

    #[test]
    fn filter_drops_fonts_left_empty_and_reindexes() {
        let v = vocab(&[("a", 1), ("b", 2), ("c", 2)]);
        let recs = vec![rec("f1", &[0]), rec("f2", &[1, 2]), rec("f3", &[1, 2])];
        let (out, nv) = filter_vocabulary(recs, &v, 2).unwrap();
        assert_eq!(nv.words(), ["b", "c"]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].impressions, BTreeSet::from([0, 1]));
    }

    #[test]
    fn filter_everything_is_empty_vocabulary() {
        let v = vocab(&[("a", 1)]);
        let err = filter_vocabulary(vec![rec("f", &[0])], &v, 5).unwrap_err();
        assert!(matches!(err, Error::EmptyVocabulary));
        assert_eq!(err.to_string(), "empty vocabulary");
    }

    #[test]
    fn split_ten_records() {
        let recs: Vec<_> = (0..10).map(|i| rec(&format!("f{i}"), &[0])).collect();
        let ratios = SplitRatios::new(0.8, 0.1, 0.1).unwrap();
        let a = split_records(recs.clone(), ratios, 42).unwrap();
        let b = split_records(recs, ratios, 42).unwrap();
        assert_eq!(a, b);
        let count = |s| a.iter().filter(|r| r.split == Some(s)).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (8, 1, 1));
    }

    #[test]
    fn split_rejects_zero_ratio_and_tiny_sets() {
        assert!(SplitRatios::new(1.0, 0.0, 0.0).is_err());
        let ratios = SplitRatios::default();
        assert!(split_records(vec![rec("a", &[0]), rec("b", &[0])], ratios, 1).is_err());
    }

    #[test]
    fn multi_hot_examples() {
        assert_eq!(to_multi_hot(&rec("x", &[0]), 3).unwrap().0, vec![1.0, 0.0, 0.0]);
        assert_eq!(to_multi_hot(&rec("x", &[1, 2]), 4).unwrap().0, vec![0.0, 1.0, 1.0, 0.0]);
        assert!(to_multi_hot(&rec("x", &[4]), 4).is_err());
    }

    proptest! {
        #[test]
        fn multi_hot_sum_is_cardinality(words in proptest::collection::btree_set(0usize..20, 0..20)) {
            let r = FontRecord { impressions: words.clone(), ..rec("p", &[]) };
            let t = to_multi_hot(&r, 20).unwrap();
            prop_assert_eq!(t.0.iter().sum::<f64>() as usize, words.len());
        }

        #[test]
        fn filter_is_idempotent(
            sets in proptest::collection::vec(proptest::collection::btree_set(0usize..6, 0..4), 1..30),
            min_fonts in 1usize..6,
        ) {
            let names = ["a", "b", "c", "d", "e", "f"];
            let v = vocab(&names.iter().map(|n| (*n, 0)).collect::<Vec<_>>());
            let recs: Vec<_> = sets.iter().enumerate()
                .map(|(i, s)| FontRecord { impressions: s.clone(), ..rec(&format!("f{i}"), &[]) })
                .collect();
            if let Ok((once, v1)) = filter_vocabulary(recs, &v, min_fonts) {
                let (twice, v2) = filter_vocabulary(once.clone(), &v1, min_fonts).unwrap();
                prop_assert_eq!(once, twice);
                prop_assert_eq!(v1, v2);
            }
        }

        #[test]
        fn split_is_a_partition(n in 3usize..60, seed in any::<u64>()) {
            let recs: Vec<_> = (0..n).map(|i| rec(&format!("f{i}"), &[0])).collect();
            let ratios = SplitRatios::new(0.6, 0.2, 0.2).unwrap();
            let out = split_records(recs, ratios, seed).unwrap();
            prop_assert_eq!(out.len(), n);
            prop_assert!(out.iter().all(|r| r.split.is_some()));
            let n_train = out.iter().filter(|r| r.split == Some(Split::Train)).count();
            prop_assert!((n_train as f64 - 0.6 * n as f64).abs() <= 2.0);
        }
    }
}
