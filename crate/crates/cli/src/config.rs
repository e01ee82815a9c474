//! TOML configuration. Relative paths resolve against the config file's
//! directory; command-line flags are applied on top afterwards.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sunar_core::nar::NarConfig;
use sunar_core::pipeline::PipelineConfig;
use sunar_core::prompts::ExemplarSet;
use sunar_core::uncertainty::{DEFAULT_SAMPLES, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    /// Directory of recorded client fixtures for scripted mode.
    pub fixtures: Option<PathBuf>,
    /// Directory overriding the bundled prompt templates.
    pub prompts: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub l: usize,
    pub max_hops: usize,
    pub retrieval_depth: usize,
    pub asu_enabled: bool,
    pub mer_enabled: bool,
    pub m: usize,
    pub temperature: f64,
    pub exemplars: ExemplarSet,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            l: 10,
            max_hops: 6,
            retrieval_depth: 100,
            asu_enabled: true,
            mer_enabled: true,
            m: DEFAULT_SAMPLES,
            temperature: DEFAULT_TEMPERATURE,
            exemplars: ExemplarSet::Wqa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub k: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self { k: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub dim: usize,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    /// Replay recorded fixtures; never touches the network.
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliKind {
    /// Yes/no judgment through the chat endpoint.
    #[default]
    Chat,
    /// Dedicated endpoint returning an entailment probability.
    Endpoint,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Requests per second; unlimited when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_limit: Option<f64>,
    /// Only read for the entailment endpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<NliKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientsSection {
    pub mode: ClientMode,
    #[serde(skip_serializing_if = "Endpoint::is_unset")]
    pub llm: Endpoint,
    #[serde(skip_serializing_if = "Endpoint::is_unset")]
    pub nli: Endpoint,
    #[serde(skip_serializing_if = "Endpoint::is_unset")]
    pub scorer: Endpoint,
    #[serde(skip_serializing_if = "Endpoint::is_unset")]
    pub embedder: Endpoint,
}

impl Endpoint {
    fn is_unset(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub workers: usize,
    pub paths: Paths,
    pub nar: NarConfig,
    pub pipeline: PipelineSection,
    pub graph: GraphSection,
    pub embed: EmbedSection,
    pub clients: ClientsSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            workers: 1,
            paths: Paths::default(),
            nar: NarConfig::default(),
            pipeline: PipelineSection::default(),
            graph: GraphSection::default(),
            embed: EmbedSection::default(),
            clients: ClientsSection::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for field in [
            &mut p.corpus,
            &mut p.index,
            &mut p.embeddings,
            &mut p.graph,
            &mut p.fixtures,
            &mut p.prompts,
            &mut p.questions,
            &mut p.qrels,
            &mut p.output,
        ] {
            rebase(base, field);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let p = &self.pipeline;
        PipelineConfig {
            l: p.l,
            max_hops: p.max_hops,
            retrieval_depth: p.retrieval_depth,
            nar: self.nar,
            asu_enabled: p.asu_enabled,
            mer_enabled: p.mer_enabled,
            m: p.m,
            temperature: p.temperature,
            exemplars: p.exemplars,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            bail!("workers must be >= 1");
        }
        if self.graph.k == 0 {
            bail!("graph.k must be >= 1");
        }
        if self.embed.dim == 0 {
            bail!("embed.dim must be >= 1");
        }
        self.pipeline_config().validate()?;
        Ok(())
    }
}

/// Path for a required input, or an error naming the config key and flag.
pub fn required<'a>(p: &'a Option<PathBuf>, key: &str, flag: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => bail!("no {key} path configured; set paths.{key} or pass {flag}"),
    }
}
