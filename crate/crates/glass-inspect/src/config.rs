//! Pipeline configuration: one TOML file with CLI-flag overrides. All the
//! production constants are defaults here, never hardcoded at use sites;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use crate::classify::DcScope;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::pipeline::StageOneParams;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemisupConfig {
    pub k: usize,
    pub keep_count: usize,
    /// Absolute per-round drop threshold; omitted means 1% of the initial
    /// point count (at least 1).
    pub drop_threshold: Option<usize>,
    pub strict_drop: bool,
    pub kmeans_max_iter: usize,
}

impl Default for SemisupConfig {
    fn default() -> Self {
        SemisupConfig {
            k: 10,
            keep_count: 6,
            drop_threshold: None,
            strict_drop: false,
            kmeans_max_iter: 100,
        }
    }
}

impl SemisupConfig {
    pub fn resolve_drop_threshold(&self, point_count: usize) -> usize {
        self.drop_threshold.unwrap_or((point_count / 100).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub tree_count: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        let p = ForestParams::default();
        ForestConfig {
            tree_count: p.tree_count,
            max_depth: p.max_depth,
            min_leaf: p.min_leaf,
            features_per_split: p.features_per_split,
            bootstrap: p.bootstrap,
        }
    }
}

impl ForestConfig {
    pub fn params(&self, seed: u64) -> ForestParams {
        ForestParams {
            tree_count: self.tree_count,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            features_per_split: self.features_per_split,
            seed,
            bootstrap: self.bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Feature dimension; the baseline descriptor requires 512.
    pub dim: Option<usize>,
    /// Path to an external ONNX model; omitted selects the baseline
    /// descriptor.
    pub model: Option<PathBuf>,
    /// Embedding cache directory.
    pub cache: Option<PathBuf>,
}

impl EmbeddingConfig {
    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(crate::embedding::DEFAULT_DIM)
    }
}

impl serde::Serialize for DcScope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            DcScope::All => "all",
            DcScope::DefectsOnly => "defects-only",
        })
    }
}

impl<'de> serde::Deserialize<'de> for DcScope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        DcScope::parse(&name).map_err(serde::de::Error::custom)
    }
}

/// Root configuration document.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for per-image parallel commands; 0 means one per
    /// core.
    pub jobs: usize,
    pub dc_scope: DcScope,
    pub stage_one: StageOneParams,
    pub semisup: SemisupConfig,
    pub forest: ForestConfig,
    pub embedding: EmbeddingConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.stage_one.validate()?;
        if self.semisup.keep_count == 0 || self.semisup.keep_count >= self.semisup.k {
            return Err(Error::Config(format!(
                "semisup keep_count {} must be positive and below k {}",
                self.semisup.keep_count, self.semisup.k
            )));
        }
        if self.semisup.drop_threshold == Some(0) {
            return Err(Error::Config("semisup drop_threshold must be >= 1".into()));
        }
        if self.semisup.kmeans_max_iter == 0 {
            return Err(Error::Config("semisup kmeans_max_iter must be >= 1".into()));
        }
        if self.forest.tree_count == 0 || self.forest.max_depth == 0 || self.forest.min_leaf == 0 {
            return Err(Error::Config(
                "forest tree_count, max_depth and min_leaf must be >= 1".into(),
            ));
        }
        if self.forest.features_per_split == Some(0) {
            return Err(Error::Config("forest features_per_split must be >= 1".into()));
        }
        if self.embedding.dim() == 0 {
            return Err(Error::Config("embedding dim must be >= 1".into()));
        }
        if self.embedding.model.is_none() && self.embedding.dim() != crate::embedding::DEFAULT_DIM
        {
            return Err(Error::Config(format!(
                "the baseline descriptor is {}-dimensional; set embedding.model to use dim {}",
                crate::embedding::DEFAULT_DIM,
                self.embedding.dim()
            )));
        }
        Ok(())
    }

    /// Builds the configured embedding provider.
    pub fn provider(&self) -> Result<Box<dyn crate::embedding::EmbeddingProvider>> {
        match &self.embedding.model {
            Some(path) => Ok(Box::new(crate::embedding::OnnxEmbedder::load(
                path,
                self.embedding.dim(),
            )?)),
            None => Ok(Box::new(crate::embedding::BaselineEmbedder)),
        }
    }
}
