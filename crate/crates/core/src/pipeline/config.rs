use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::HypothesisTemplates;
use crate::cluster::{Reducer, DEFAULT_MEMBERS_PER_CLUSTER, DEFAULT_REDUCED_DIM};
use crate::corpus::{DEFAULT_CHUNK_SIZE, SUBSET_INCREMENT};
use crate::error::{Error, Result};
use crate::eval::Thresholds;
use crate::gateway::{
    Backend, Gateway, GatewayOptions, GatewayStats, HttpBackend, HttpConfig, MockBackend,
    MockConfig, ResponseCache,
};
use crate::labelspace::DedupConfig;
use crate::refine::RefineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoverConfig {
    /// Documents added per subset growth step.
    pub subset_increment: usize,
    /// Upper bound on the discovery subset; the whole corpus when unset.
    pub max_subset: Option<usize>,
    pub k_hint: Option<usize>,
    pub reducer: ReducerSpec,
    pub reduced_dim: usize,
    pub members_per_cluster: usize,
    pub gmm_restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DiscoverConfig {
    fn default() -> Self {
        DiscoverConfig {
            subset_increment: SUBSET_INCREMENT,
            max_subset: None,
            k_hint: None,
            reducer: ReducerSpec::Pca,
            reduced_dim: DEFAULT_REDUCED_DIM,
            members_per_cluster: DEFAULT_MEMBERS_PER_CLUSTER,
            gmm_restarts: 1,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReducerSpec {
    Pca,
    Identity,
    External(PathBuf),
}

impl ReducerSpec {
    pub fn to_reducer(&self) -> Reducer {
        match self {
            ReducerSpec::Pca => Reducer::Pca,
            ReducerSpec::Identity => Reducer::Identity,
            ReducerSpec::External(p) => Reducer::External(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub max_ranks: usize,
    pub use_keyphrases: bool,
    pub chunk_hypothesis: String,
    pub keyphrase_hypothesis: String,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        let t = HypothesisTemplates::default();
        ClassifyConfig {
            max_ranks: crate::classifier::DEFAULT_MAX_RANKS,
            use_keyphrases: true,
            chunk_hypothesis: t.chunk,
            keyphrase_hypothesis: t.keyphrase,
        }
    }
}

impl ClassifyConfig {
    pub fn templates(&self) -> HypothesisTemplates {
        HypothesisTemplates {
            chunk: self.chunk_hypothesis.clone(),
            keyphrase: self.keyphrase_hypothesis.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Newline-separated gold label space; the union of document labels
    /// when unset.
    pub gold_labels: Option<PathBuf>,
    pub k: Vec<usize>,
    pub judge: bool,
    pub high_threshold: f64,
    pub low_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        EvalConfig {
            gold_labels: None,
            k: vec![1, 3],
            judge: true,
            high_threshold: t.high,
            low_threshold: t.low,
        }
    }
}

impl EvalConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            high: self.high_threshold,
            low: self.low_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub sample: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { sample: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    pub max_in_flight: usize,
    pub batch_size: usize,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        let o = GatewayOptions::default();
        GatewaySettings {
            max_in_flight: o.max_in_flight,
            batch_size: o.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    Mock {
        /// JSON mock configuration; defaults apply when unset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Http(HttpConfig),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock {
            config: None,
            seed: None,
        }
    }
}

/// Backends per model role. Generation roles fall back to `generation`;
/// `similarity` falls back to `embedding`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub generation: BackendSpec,
    pub extraction: Option<BackendSpec>,
    pub synthesis: Option<BackendSpec>,
    pub judge: Option<BackendSpec>,
    pub probe: Option<BackendSpec>,
    pub embedding: BackendSpec,
    pub similarity: Option<BackendSpec>,
    pub entailment: Option<BackendSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Extraction,
    Synthesis,
    Judge,
    Probe,
    Embedding,
    Similarity,
    Entailment,
}

impl Backends {
    pub fn spec(&self, role: Role) -> &BackendSpec {
        let gen = &self.generation;
        match role {
            Role::Extraction => self.extraction.as_ref().unwrap_or(gen),
            Role::Synthesis => self.synthesis.as_ref().unwrap_or(gen),
            Role::Judge => self.judge.as_ref().unwrap_or(gen),
            Role::Probe => self.probe.as_ref().unwrap_or(gen),
            Role::Embedding => &self.embedding,
            Role::Similarity => self.similarity.as_ref().unwrap_or(&self.embedding),
            Role::Entailment => self.entailment.as_ref().unwrap_or(&self.embedding),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub chunk_size: usize,
    pub objective: String,
    pub demonstrations: Vec<String>,
    /// Keyphrase extraction prompt file (system and user parts separated by
    /// a `---` line).
    pub extraction_template: Option<PathBuf>,
    pub seed: u64,
    pub deterministic: bool,
    pub discover: DiscoverConfig,
    pub dedup: DedupConfig,
    pub classify: ClassifyConfig,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
    pub probe: ProbeConfig,
    pub gateway: GatewaySettings,
    pub backends: Backends,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::new(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            objective: String::new(),
            demonstrations: vec![],
            extraction_template: None,
            seed: 0,
            deterministic: true,
            discover: DiscoverConfig::default(),
            dedup: DedupConfig::default(),
            classify: ClassifyConfig::default(),
            refine: RefineConfig::default(),
            eval: EvalConfig::default(),
            probe: ProbeConfig::default(),
            gateway: GatewaySettings::default(),
            backends: Backends::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(body: &str) -> Result<Self> {
        toml::from_str(body).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    /// Reads a TOML config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&body)?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus);
        if let Some(p) = &mut self.extraction_template {
            resolve(base, p);
        }
        if let ReducerSpec::External(p) = &mut self.discover.reducer {
            resolve(base, p);
        }
        if let Some(p) = &mut self.eval.gold_labels {
            resolve(base, p);
        }
        let b = &mut self.backends;
        for spec in [Some(&mut b.generation), Some(&mut b.embedding)]
            .into_iter()
            .chain([
                b.extraction.as_mut(),
                b.synthesis.as_mut(),
                b.judge.as_mut(),
                b.probe.as_mut(),
                b.similarity.as_mut(),
                b.entailment.as_mut(),
            ])
            .flatten()
        {
            if let BackendSpec::Mock {
                config: Some(p), ..
            } = spec
            {
                resolve(base, p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.as_os_str().is_empty() {
            return Err(Error::Config("config has no corpus path".into()));
        }
        if self.objective.trim().is_empty() {
            return Err(Error::Config("config has no objective description".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be at least 1".into()));
        }
        let d = &self.discover;
        if d.subset_increment == 0 {
            return Err(Error::Config(
                "discover.subset_increment must be at least 1".into(),
            ));
        }
        if d.reduced_dim < 2 {
            return Err(Error::Config(
                "discover.reduced_dim must be at least 2".into(),
            ));
        }
        if d.members_per_cluster == 0 || d.members_per_cluster > 3 {
            return Err(Error::Config(
                "discover.members_per_cluster must be 1 to 3".into(),
            ));
        }
        if d.k_hint == Some(0) {
            return Err(Error::Config("discover.k_hint must be at least 1".into()));
        }
        for (name, t) in [
            (
                "dedup",
                (self.dedup.low_threshold, self.dedup.high_threshold),
            ),
            ("eval", (self.eval.low_threshold, self.eval.high_threshold)),
        ] {
            if !(0.0 <= t.0 && t.0 <= t.1 && t.1 <= 1.0) {
                return Err(Error::Config(format!(
                    "{name} thresholds must satisfy 0 <= low <= high <= 1"
                )));
            }
        }
        if self.classify.max_ranks == 0 {
            return Err(Error::Config(
                "classify.max_ranks must be at least 1".into(),
            ));
        }
        self.classify.templates().validate()?;
        self.refine.validate()?;
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            return Err(Error::Config("eval.k must list positive integers".into()));
        }
        if self.gateway.max_in_flight == 0 || self.gateway.batch_size == 0 {
            return Err(Error::Config("gateway limits must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Short digest of the canonical config; used as the default run id.
    pub fn run_id(&self) -> Result<String> {
        let canonical = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(canonical))[..12].to_string())
    }
}

/// One gateway per model role, sharing a response cache and call counters.
pub struct ModelHub {
    pub extraction: Gateway,
    pub synthesis: Gateway,
    pub judge: Gateway,
    pub probe: Gateway,
    pub embedding: Gateway,
    pub similarity: Gateway,
    pub entailment: Gateway,
    pub stats: Arc<GatewayStats>,
    pub cache: Arc<ResponseCache>,
}

fn build_backend(spec: &BackendSpec, default_seed: u64) -> Result<Arc<dyn Backend>> {
    Ok(match spec {
        BackendSpec::Mock { config, seed } => {
            let mut c = match config {
                Some(p) => MockConfig::load(p)?,
                None => MockConfig {
                    seed: default_seed,
                    ..MockConfig::default()
                },
            };
            if let Some(s) = seed {
                c.seed = *s;
            }
            Arc::new(MockBackend::new(c))
        }
        BackendSpec::Http(h) => Arc::new(HttpBackend::new(h.clone())?),
    })
}

impl ModelHub {
    pub fn new(config: &RunConfig, cache: Arc<ResponseCache>) -> Result<Self> {
        let stats = Arc::new(GatewayStats::default());
        let options = GatewayOptions {
            max_in_flight: config.gateway.max_in_flight,
            batch_size: config.gateway.batch_size,
            deterministic: config.deterministic,
        };
        let make = |role: Role| -> Result<Gateway> {
            Ok(Gateway::new(
                build_backend(config.backends.spec(role), config.seed)?,
                cache.clone(),
                stats.clone(),
                options.clone(),
            ))
        };
        Ok(ModelHub {
            extraction: make(Role::Extraction)?,
            synthesis: make(Role::Synthesis)?,
            judge: make(Role::Judge)?,
            probe: make(Role::Probe)?,
            embedding: make(Role::Embedding)?,
            similarity: make(Role::Similarity)?,
            entailment: make(Role::Entailment)?,
            stats,
            cache,
        })
    }
}
