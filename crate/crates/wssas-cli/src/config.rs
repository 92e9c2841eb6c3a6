//! Pipeline configuration: JSON file, generic `--set` overrides, and
//! dedicated flags, with precedence flag > file > default.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use wssas_core::backends::http::{HttpBackend, HttpBackendConfig};
use wssas_core::backends::stub::{StubEmbedder, StubGenerator};
use wssas_core::backends::{EmbeddingBackend, GenerativeBackend};
use wssas_core::corpus::{FieldMap, SourceFormat};
use wssas_core::hierarchy::HierarchyConfig;
use wssas_core::snr::FilterConfig;
use wssas_core::sos::SosConfig;
use wssas_core::text::StopwordList;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub format: SourceFormat,
    pub field_map: FieldMap,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: SourceFormat::Jsonl,
            field_map: FieldMap::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub gen_model: Option<String>,
    pub embed_model: Option<String>,
    pub dimension: usize,
    pub max_inflight: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Stub,
            base_url: None,
            gen_model: None,
            embed_model: None,
            dimension: 256,
            max_inflight: 4,
            max_retries: 3,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SnrSettings {
    pub keyword_count: usize,
    pub stopwords_path: Option<PathBuf>,
}

impl Default for SnrSettings {
    fn default() -> Self {
        Self {
            keyword_count: 10,
            stopwords_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub theta_sem: f64,
    pub questions: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            theta_sem: 0.7,
            questions: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CategorizeSettings {
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for CategorizeSettings {
    fn default() -> Self {
        Self { k_min: 2, k_max: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub backend: BackendConfig,
    pub hierarchy: HierarchyConfig,
    pub snr: SnrSettings,
    pub filter: FilterConfig,
    pub sos: SosConfig,
    pub eval: EvalSettings,
    pub categorize: CategorizeSettings,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    /// Load from an optional JSON file and apply dotted-path overrides
    /// (`--set section.key=value`).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                serde_json::from_str(&raw)
                    .with_context(|| format!("config {} is not valid JSON", p.display()))?
            }
            None => serde_json::json!({}),
        };
        for entry in overrides {
            let (key, raw) = entry
                .split_once('=')
                .with_context(|| format!("--set expects key=value, got '{entry}'"))?;
            let parsed: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_owned()));
            set_path(&mut value, key, parsed)?;
        }
        let config: PipelineConfig =
            serde_json::from_value(value).context("config fails schema validation")?;
        Ok(config)
    }

    /// Config-level invariants, checked before any subcommand runs.
    pub fn validate(&self) -> Result<()> {
        if let Err(e) = self.hierarchy.validate() {
            bail!("{e}");
        }
        if !(self.eval.theta_sem > 0.0 && self.eval.theta_sem <= 1.0) {
            bail!("eval.theta_sem must lie in (0, 1]");
        }
        if self.categorize.k_min < 2 || self.categorize.k_max < self.categorize.k_min {
            bail!(
                "categorize k range [{}, {}] invalid: need 2 <= k_min <= k_max",
                self.categorize.k_min,
                self.categorize.k_max
            );
        }
        if self.snr.keyword_count == 0 {
            bail!("snr.keyword_count must be at least 1");
        }
        if self.backend.dimension == 0 {
            bail!("backend.dimension must be positive");
        }
        if self.backend.kind == BackendKind::Http {
            for (key, value) in [
                ("backend.base_url", &self.backend.base_url),
                ("backend.gen_model", &self.backend.gen_model),
                ("backend.embed_model", &self.backend.embed_model),
            ] {
                if value.is_none() {
                    bail!("{key} is required when backend.kind = http");
                }
            }
        }
        Ok(())
    }

    pub fn stopwords(&self) -> Result<Arc<StopwordList>> {
        let list = match &self.snr.stopwords_path {
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read stopwords {}", path.display()))?;
                StopwordList::parse(&raw)
            }
            None => StopwordList::english(),
        };
        Ok(Arc::new(list))
    }
}

fn set_path(root: &mut serde_json::Value, path: &str, new: serde_json::Value) -> Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cursor.is_object() {
            bail!("--set path '{path}' crosses a non-object value");
        }
        let map = cursor.as_object_mut().expect("checked object");
        if i + 1 == parts.len() {
            map.insert((*part).to_owned(), new);
            return Ok(());
        }
        cursor = map
            .entry((*part).to_owned())
            .or_insert_with(|| serde_json::json!({}));
    }
    Ok(())
}

/// Generative and embedding backend pair built from config.
pub struct Backends {
    pub generator: Box<dyn GenerativeBackend>,
    pub embedder: Box<dyn EmbeddingBackend>,
}

impl Backends {
    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        let stopwords = config.stopwords()?;
        match config.backend.kind {
            BackendKind::Stub => Ok(Self {
                generator: Box::new(StubGenerator::with_stopwords(Arc::clone(&stopwords))),
                embedder: Box::new(StubEmbedder::with_config(
                    config.backend.dimension,
                    stopwords,
                )),
            }),
            BackendKind::Http => {
                let http_config = HttpBackendConfig {
                    base_url: config.backend.base_url.clone().expect("validated"),
                    gen_model: config.backend.gen_model.clone().expect("validated"),
                    embed_model: config.backend.embed_model.clone().expect("validated"),
                    dimension: config.backend.dimension,
                    max_inflight: config.backend.max_inflight,
                    max_retries: config.backend.max_retries,
                    timeout_secs: config.backend.timeout_secs,
                };
                let gen = HttpBackend::new(http_config.clone()).map_err(|e| anyhow::anyhow!("{e}"))?;
                let embed = HttpBackend::new(http_config).map_err(|e| anyhow::anyhow!("{e}"))?;
                Ok(Self {
                    generator: Box::new(gen),
                    embedder: Box::new(embed),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn set_overrides_nested_keys() {
        let config = PipelineConfig::load(
            None,
            &[
                "seed=99".to_owned(),
                "hierarchy.tau_cluster=0.8".to_owned(),
                "input.path=\"data.jsonl\"".to_owned(),
            ],
        )
        .unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.hierarchy.tau_cluster, 0.8);
        assert_eq!(config.input.path, Some(PathBuf::from("data.jsonl")));
    }

    #[test]
    fn threshold_order_violation_fails_validation() {
        let config = PipelineConfig::load(None, &["hierarchy.tau_cluster=0.2".to_owned()]).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn http_backend_requires_endpoints() {
        let config = PipelineConfig::load(None, &["backend.kind=\"http\"".to_owned()]).unwrap();
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("base_url"));
    }
}
