//! Configuration, work-directory layout and the seven pipeline stages.
//!
//! Every stage reads its inputs from and writes its outputs to the work
//! directory, so any stage can be rerun on its own. All randomness comes from
//! the global seed through named streams.

mod report;
mod stages;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::BiclusterParams;
use crate::codebook::CodebookParams;
use crate::dataset::{
    apply_split_file, filter_vocabulary, parse_manifest, read_split_file, split_records, FontRecord,
    ImpressionVocabulary, Split, SplitRatios, SyntheticSpec, DEFAULT_MIN_FONTS,
};
use crate::deepsets::{PredictConfig, TrainConfig};
use crate::sift::SiftParams;
use crate::{Error, Result};

pub use report::cmd_report;
pub use stages::{cmd_analyze, cmd_codebook, cmd_eval, cmd_extract, cmd_synth, cmd_train, ExtractSummary};

/// Vocabulary threshold used for the generated corpus when none is set.
pub const SYNTHETIC_MIN_FONTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub work_dir: PathBuf,
    /// Defaults to the manifest written by `synth` inside the work directory.
    pub manifest: Option<PathBuf>,
    /// `font_id<TAB>split` file overriding the seeded split.
    pub split_file: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            work_dir: PathBuf::from("work"),
            manifest: None,
            split_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// `None`: 100 for a user manifest, 10 for the synthetic corpus.
    pub min_fonts: Option<usize>,
    pub split: SplitRatios,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bicluster: BiclusterParams,
    pub peak_top_n: usize,
    pub peak_min_value: f64,
    pub neighbors: usize,
    /// Compare impressions by ΔH_k instead of H_k.
    pub delta_distance: bool,
    /// Fonts per impression whose peak-part locations are exported.
    pub overlay_fonts: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bicluster: BiclusterParams::default(),
            peak_top_n: 6,
            peak_min_value: 0.0,
            neighbors: 5,
            delta_distance: false,
            overlay_fonts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rows in each of the top and bottom AP tables.
    pub table_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { table_size: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; `None` uses all cores.
    pub threads: Option<usize>,
    pub paths: PathsConfig,
    pub synth: SyntheticSpec,
    pub dataset: DatasetConfig,
    pub sift: SiftParams,
    pub train: TrainConfig,
    pub predict: PredictConfig,
    pub codebook: CodebookParams,
    pub analysis: AnalysisConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::from_toml(&crate::io::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Range checks for every section.
    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Config(format!("[{section}] {m}")),
                other => other,
            })
        };
        wrap("synth", self.synth.validate())?;
        wrap("sift", self.sift.validate())?;
        wrap("train", self.train.validate())?;
        wrap("predict", self.predict.validate())?;
        wrap("codebook", self.codebook.validate())?;
        wrap("dataset", self.dataset.split.validate())?;
        if self.dataset.min_fonts == Some(0) {
            return Err(Error::Config("[dataset] min_fonts must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        let b = &self.analysis.bicluster;
        if b.row_clusters < 2 || b.col_clusters < 2 || b.n_singular_vectors == 0 {
            return Err(Error::Config(
                "[analysis.bicluster] needs row/col clusters >= 2 and n_singular_vectors >= 1".into(),
            ));
        }
        if self.analysis.peak_top_n == 0 {
            return Err(Error::Config("[analysis] peak_top_n must be at least 1".into()));
        }
        Ok(())
    }

    /// Train/predict configs with the global seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn predict_config(&self) -> PredictConfig {
        PredictConfig {
            seed: self.seed,
            ..self.predict.clone()
        }
    }
}

/// File locations inside the work directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    manifest: Option<PathBuf>,
}

impl Workspace {
    pub fn new(cfg: &Config) -> Workspace {
        Workspace {
            root: cfg.paths.work_dir.clone(),
            manifest: cfg.paths.manifest.clone(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn is_synthetic(&self) -> bool {
        self.manifest.is_none()
    }

    pub fn manifest(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.data_dir().join("manifest.tsv"))
    }

    pub fn flags_file(&self) -> PathBuf {
        self.data_dir().join("flags.tsv")
    }

    pub fn descriptor_dir(&self) -> PathBuf {
        self.root.join("descriptors")
    }

    pub fn descriptor_cache(&self, font_id: &str) -> PathBuf {
        self.descriptor_dir().join(format!("{}.gidx", file_stem_for(font_id)))
    }

    pub fn sift_params(&self) -> PathBuf {
        self.descriptor_dir().join("params.json")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.model_dir().join("checkpoint.gimp")
    }

    pub fn train_state(&self) -> PathBuf {
        self.model_dir().join("train_state.gims")
    }

    pub fn train_log(&self) -> PathBuf {
        self.model_dir().join("train_log.csv")
    }

    pub fn codebook(&self) -> PathBuf {
        self.root.join("codebook").join("codebook.gcbk")
    }

    pub fn codebook_log(&self) -> PathBuf {
        self.root.join("codebook").join("objective.csv")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn analysis_file(&self, name: &str) -> PathBuf {
        self.analysis_dir().join(name)
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn eval_file(&self, name: &str) -> PathBuf {
        self.eval_dir().join(name)
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }

    /// Errors with the command that produces `path` when it is absent.
    pub fn require(&self, path: &Path, command: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::MissingStage {
                path: path.to_owned(),
                command: command.to_owned(),
            })
        }
    }
}

/// Font ids are used verbatim when filesystem-safe, else hex-encoded.
fn file_stem_for(font_id: &str) -> String {
    let safe = !font_id.is_empty()
        && !font_id.starts_with('.')
        && font_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if safe {
        font_id.to_owned()
    } else {
        let hex: String = font_id.bytes().map(|b| format!("{b:02x}")).collect();
        format!("x{hex}")
    }
}

/// Filtered, split records (glyphs not decoded) and the vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub records: Vec<FontRecord>,
    pub vocab: ImpressionVocabulary,
}

impl PreparedDataset {
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &FontRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn words(&self) -> Vec<String> {
        self.vocab.words().to_vec()
    }
}

/// Parses the manifest, filters the vocabulary and assigns splits. Cheap and
/// deterministic, so every stage recomputes it instead of caching it.
pub fn prepare_dataset(cfg: &Config) -> Result<PreparedDataset> {
    let ws = Workspace::new(cfg);
    let manifest = ws.manifest();
    if ws.is_synthetic() {
        ws.require(&manifest, "synth")?;
    }
    let (records, vocab) = parse_manifest(&manifest)?;
    let min_fonts = cfg.dataset.min_fonts.unwrap_or(if ws.is_synthetic() {
        SYNTHETIC_MIN_FONTS
    } else {
        DEFAULT_MIN_FONTS
    });
    let (records, vocab) = filter_vocabulary(records, &vocab, min_fonts)?;
    let records = match &cfg.paths.split_file {
        Some(path) => apply_split_file(records, &read_split_file(path)?)?,
        None => split_records(records, cfg.dataset.split, cfg.seed)?,
    };
    Ok(PreparedDataset { records, vocab })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::from_toml("sede = 3"), Err(Error::Config(_))));
        assert!(Config::from_toml("[train]\nlearning_rat = 0.1").is_err());
        assert!(Config::from_toml("[dataset.split]\ntrain = 0.5\nval = 0.25\ntest = 0.25\nextra = 1").is_err());
        let cfg = Config::from_toml("seed = 7\n[codebook]\nq = 32").unwrap();
        assert_eq!((cfg.seed, cfg.codebook.q), (7, 32));
    }

    #[test]
    fn out_of_range_values_are_config_errors() {
        let mut cfg = Config::default();
        cfg.synth.image_size = 8;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = Config::default();
        cfg.codebook.q = 1;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn unsafe_font_ids_are_encoded() {
        assert_eq!(file_stem_for("font-001"), "font-001");
        assert_eq!(file_stem_for("a/b"), "x612f62");
        assert_eq!(file_stem_for(".."), "x2e2e");
    }
}
