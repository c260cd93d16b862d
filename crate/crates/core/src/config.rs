//! Run configuration: a single TOML file with every field overridable from
//! the command line. Relative paths resolve against the config file's
//! directory so fixture runs reproduce from any working directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

#[cfg(feature = "http")]
use crate::llm::HttpBackend;
use crate::llm::{
    CompletionCache, CompletionClient, CostModel, GenerationParams, MockBackend, ReplayBackend,
};
use crate::pipeline::PipelineError;
use crate::prompt::{PromptError, TemplateSet, DEFAULT_MAX_PROMPT_TOKENS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which completion path a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Http,
    Mock,
    Replay,
    Baseline,
}

impl std::str::FromStr for BackendChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendChoice::Http),
            "mock" => Ok(BackendChoice::Mock),
            "replay" => Ok(BackendChoice::Replay),
            "baseline" => Ok(BackendChoice::Baseline),
            other => Err(format!(
                "unknown backend `{other}` (expected http|mock|replay|baseline)"
            )),
        }
    }
}

fn default_model() -> String {
    "gpt-3.5-turbo".to_string()
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1".to_string()
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_true() -> bool {
    true
}

fn default_concurrency() -> usize {
    4
}

fn default_max_prompt_tokens() -> usize {
    DEFAULT_MAX_PROMPT_TOKENS
}

fn default_group_size() -> usize {
    200
}

fn default_input_price() -> f64 {
    0.0005
}

fn default_output_price() -> f64 {
    0.0015
}

/// On-disk form of the run configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub entity_lexicon: PathBuf,
    pub predicate_lexicon: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub report: Option<PathBuf>,
    pub backend: BackendChoice,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub mock_fixture: Option<PathBuf>,
    #[serde(default)]
    pub kb: Option<PathBuf>,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub use_paraphrase: bool,
    #[serde(default)]
    pub combined: bool,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_max_prompt_tokens")]
    pub max_prompt_tokens: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_input_price")]
    pub input_price_per_1k: f64,
    #[serde(default = "default_output_price")]
    pub output_price_per_1k: f64,
}

/// Command-line overrides applied on top of the file. Path overrides are
/// resolved against the working directory, not the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend: Option<BackendChoice>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub mock_fixture: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub model: Option<String>,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub no_paraphrase: bool,
    pub combined: bool,
    pub resume: bool,
    pub concurrency: Option<usize>,
    pub max_prompt_tokens: Option<usize>,
    pub group_size: Option<usize>,
    pub temperature: Option<f64>,
    pub prices: Option<(f64, f64)>,
}

/// A validated configuration with every path made absolute.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub corpus: PathBuf,
    pub entity_lexicon: PathBuf,
    pub predicate_lexicon: PathBuf,
    pub out: PathBuf,
    pub report: PathBuf,
    pub backend: BackendChoice,
    /// The backend a replay run replays; equals `backend` otherwise.
    pub primary_backend: BackendChoice,
    pub model: String,
    pub endpoint: String,
    pub api_key_env: String,
    pub mock_fixture: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub use_paraphrase: bool,
    pub combined: bool,
    pub resume: bool,
    pub concurrency: usize,
    pub max_prompt_tokens: usize,
    pub group_size: usize,
    pub temperature: f64,
    pub input_price_per_1k: f64,
    pub output_price_per_1k: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Applies overrides and resolves every relative path against the
    /// config file's directory.
    pub fn resolve(
        self,
        config_path: &Path,
        overrides: &Overrides,
    ) -> Result<ResolvedConfig, ConfigError> {
        let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let join = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        let effective_backend = overrides.backend.unwrap_or(self.backend);
        let primary_backend = if effective_backend == BackendChoice::Replay {
            if self.backend == BackendChoice::Replay || self.backend == BackendChoice::Baseline {
                return Err(ConfigError::Invalid {
                    path: config_path.display().to_string(),
                    reason: "replay requires the config backend to be http or mock".into(),
                });
            }
            self.backend
        } else {
            effective_backend
        };
        let override_path = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                std::env::current_dir().unwrap_or_default().join(p)
            }
        };
        let out = overrides
            .out
            .as_ref()
            .map(override_path)
            .unwrap_or_else(|| join(&self.out));
        let report = overrides
            .report
            .as_ref()
            .map(override_path)
            .or_else(|| self.report.as_ref().map(join))
            .unwrap_or_else(|| out.with_extension("report.json"));
        let cache = overrides
            .cache
            .as_ref()
            .map(override_path)
            .or_else(|| self.cache.as_ref().map(join));
        let mock_fixture = overrides
            .mock_fixture
            .as_ref()
            .map(override_path)
            .or_else(|| self.mock_fixture.as_ref().map(join));

        let concurrency = overrides.concurrency.unwrap_or(self.concurrency);
        let group_size = overrides.group_size.unwrap_or(self.group_size);
        let (input_price, output_price) = overrides
            .prices
            .unwrap_or((self.input_price_per_1k, self.output_price_per_1k));
        if concurrency == 0 {
            return Err(ConfigError::Invalid {
                path: config_path.display().to_string(),
                reason: "concurrency must be at least 1".into(),
            });
        }
        if group_size == 0 {
            return Err(ConfigError::Invalid {
                path: config_path.display().to_string(),
                reason: "group_size must be at least 1".into(),
            });
        }
        if input_price < 0.0 || output_price < 0.0 {
            return Err(ConfigError::Invalid {
                path: config_path.display().to_string(),
                reason: "prices must be non-negative".into(),
            });
        }

        Ok(ResolvedConfig {
            corpus: join(&self.corpus),
            entity_lexicon: join(&self.entity_lexicon),
            predicate_lexicon: join(&self.predicate_lexicon),
            out,
            report,
            backend: effective_backend,
            primary_backend,
            model: overrides.model.clone().unwrap_or(self.model),
            endpoint: overrides.endpoint.clone().unwrap_or(self.endpoint),
            api_key_env: overrides.api_key_env.clone().unwrap_or(self.api_key_env),
            mock_fixture,
            kb: overrides
                .kb
                .as_ref()
                .map(override_path)
                .or_else(|| self.kb.as_ref().map(join)),
            cache,
            checkpoint_dir: overrides
                .checkpoint_dir
                .as_ref()
                .map(override_path)
                .or_else(|| self.checkpoint_dir.as_ref().map(join)),
            templates_dir: overrides
                .templates_dir
                .as_ref()
                .map(override_path)
                .or_else(|| self.templates_dir.as_ref().map(join)),
            use_paraphrase: self.use_paraphrase && !overrides.no_paraphrase,
            combined: self.combined || overrides.combined,
            resume: overrides.resume,
            concurrency,
            max_prompt_tokens: overrides
                .max_prompt_tokens
                .unwrap_or(self.max_prompt_tokens),
            group_size,
            temperature: overrides.temperature.unwrap_or(self.temperature),
            input_price_per_1k: input_price,
            output_price_per_1k: output_price,
        })
    }
}

impl ResolvedConfig {
    /// The cache-key namespace and metadata backend label: replay runs
    /// report the backend they replay.
    pub fn namespace(&self) -> String {
        match self.primary_backend {
            BackendChoice::Http => "http".into(),
            BackendChoice::Mock => "mock".into(),
            BackendChoice::Replay => "replay".into(),
            BackendChoice::Baseline => "baseline".into(),
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel::new(self.input_price_per_1k, self.output_price_per_1k)
    }

    pub fn load_templates(&self) -> Result<TemplateSet, PromptError> {
        let set = match &self.templates_dir {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::bundled(),
        };
        Ok(set.with_max_tokens(self.max_prompt_tokens))
    }

    /// Builds the completion client for this run. Baseline runs never call
    /// this.
    pub fn build_client(&self) -> Result<CompletionClient, PipelineError> {
        let cache = match &self.cache {
            Some(path) => CompletionCache::open(path)?,
            None => CompletionCache::in_memory(),
        };
        let backend: Arc<dyn crate::llm::CompletionBackend> = match self.backend {
            #[cfg(feature = "http")]
            BackendChoice::Http => Arc::new(HttpBackend::new(
                &self.endpoint,
                &self.model,
                &self.api_key_env,
            )?),
            #[cfg(not(feature = "http"))]
            BackendChoice::Http => {
                return Err(PipelineError::Config(
                    "this build has no http backend (enable the `http` feature)".into(),
                ))
            }
            BackendChoice::Mock => {
                let fixture = self.mock_fixture.as_ref().ok_or_else(|| {
                    PipelineError::Config("mock backend requires mock_fixture".into())
                })?;
                Arc::new(MockBackend::from_fixture(fixture)?)
            }
            BackendChoice::Replay => Arc::new(ReplayBackend),
            BackendChoice::Baseline => {
                return Err(PipelineError::Config(
                    "baseline runs do not use a completion client".into(),
                ))
            }
        };
        let params = GenerationParams {
            temperature: self.temperature,
            max_completion_tokens: None,
        };
        Ok(
            CompletionClient::with_namespace(backend, cache, &self.model, &self.namespace())
                .with_params(params)
                .with_concurrency(self.concurrency),
        )
    }
}
