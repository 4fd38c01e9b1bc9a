//! Stage driver over a run directory.
//!
//! A run directory holds a snapshot of the run configuration, the shared
//! response cache, the manifest and every stage artifact. Stages read their
//! inputs from the directory, so each one can be re-run alone.

mod config;
mod manifest;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use config::{
    BackendSpec, Backends, ClassifyConfig, DiscoverConfig, EvalConfig, GatewaySettings, ModelHub,
    ProbeConfig, ReducerSpec, Role, RunConfig,
};
pub use manifest::{EventStatus, Manifest, StageEvent};

use crate::classifier::{classify, parse_predictions, Classification, Prediction};
use crate::cluster::{
    assign, choose_k, fit_gmm, nearest_members, reduce, EmbeddingMatrix, GmmConfig,
};
use crate::corpus::{
    chunk_documents, ingest, sample_subset, Chunk, Corpus, CorpusFormat, Document, Split,
};
use crate::error::{Error, Result};
use crate::eval::{build_coverage_graph, evaluate_run, max_matching, EvalReport};
use crate::gateway::{ResponseCache, StatsSnapshot};
use crate::keyphrase::{
    build_keyphrase_set, probe_dominance, DominanceReport, ExtractionReport, KeyphraseSet,
    ObjectiveDescription, PromptTemplate,
};
use crate::labelspace::{deduplicate, synthesize_into, DedupReport, LabelSpace, SynthesisOutcome};
use crate::refine::{run_refinement, CoverageFn, IterationRecord, RefineInputs};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const KEYPHRASES: &str = "keyphrases.json";
pub const DISCOVER_REPORT: &str = "discover.json";
pub const SPACE: &str = "space.json";
pub const SPACE_DISCOVER: &str = "space.discover.json";
pub const SPACE_REFINE: &str = "space.refine.json";
pub const SPACE_REFINE_PARTIAL: &str = "space.refine.partial.json";
pub const ITERATIONS: &str = "iterations.jsonl";
pub const REFINE_REPORT: &str = "refine.json";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const EVAL_REPORT: &str = "report.json";
pub const PROBE_REPORT: &str = "probe.json";
pub const INGEST_REPORT: &str = "ingest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub chunks: usize,
    pub tokens: usize,
    pub labeled_documents: usize,
    pub test_documents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverRound {
    pub subset_size: usize,
    pub chunks: usize,
    pub keyphrases: usize,
    pub unique_keyphrases: usize,
    pub clusters: usize,
    pub synthesized: usize,
    pub duplicates: usize,
    pub failed_clusters: usize,
    pub dedup: DedupReport,
    /// Live labels gained in this round, after deduplication.
    pub net_added: isize,
    pub live_labels: usize,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverReport {
    pub rounds: Vec<DiscoverRound>,
    pub extraction: ExtractionReport,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub initial_coverage: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    pub labels: Vec<String>,
    pub resumed_from: usize,
}

/// Documents with gold labels, restricted to the test split when the corpus
/// has one.
pub fn gold_documents(corpus: &Corpus) -> Vec<&Document> {
    let labeled: Vec<&Document> = corpus
        .documents()
        .iter()
        .filter(|d| d.gold_labels.as_ref().is_some_and(|l| !l.is_empty()))
        .collect();
    if labeled.iter().any(|d| d.split == Split::Test) {
        labeled
            .into_iter()
            .filter(|d| d.split == Split::Test)
            .collect()
    } else {
        labeled
    }
}

#[derive(Default)]
struct StageOutput {
    artifacts: Vec<&'static str>,
    version: Option<u64>,
    iterations: Vec<IterationRecord>,
}

impl StageOutput {
    fn new(artifacts: Vec<&'static str>, version: Option<u64>) -> Self {
        StageOutput {
            artifacts,
            version,
            iterations: vec![],
        }
    }
}

pub struct Run {
    config: RunConfig,
    dir: PathBuf,
    hub: ModelHub,
    manifest: Manifest,
    corpus: Option<Corpus>,
}

impl Run {
    /// Opens (or initializes) a run directory. An existing directory must
    /// have been created from the same configuration.
    pub fn open(config: RunConfig, dir: &Path) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let snapshot = config.to_toml()?;
        let snap_path = dir.join(CONFIG_SNAPSHOT);
        if snap_path.exists() {
            let existing =
                std::fs::read_to_string(&snap_path).map_err(|e| Error::io(&snap_path, e))?;
            if existing != snapshot {
                return Err(Error::Config(format!(
                    "{} was created with a different configuration",
                    dir.display()
                )));
            }
        } else {
            crate::write_atomic(&snap_path, snapshot.as_bytes())?;
        }
        let run_id = config.run_id()?;
        let manifest = Manifest::open_or_create(dir, &run_id, &snapshot)?;
        let cache = Arc::new(ResponseCache::open(&dir.join("cache"))?);
        let hub = ModelHub::new(&config, cache)?;
        Ok(Run {
            config,
            dir: dir.to_path_buf(),
            hub,
            manifest,
            corpus: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hub(&self) -> &ModelHub {
        &self.hub
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.dir.join(artifact)
    }

    fn require(&self, artifact: &str) -> Result<PathBuf> {
        let p = self.path(artifact);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    }

    fn read(&self, artifact: &str) -> Result<String> {
        let p = self.require(artifact)?;
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    }

    fn write_json<T: Serialize>(&self, artifact: &str, value: &T) -> Result<()> {
        crate::write_atomic(
            &self.path(artifact),
            (serde_json::to_string_pretty(value)? + "\n").as_bytes(),
        )
    }

    fn stage<T>(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut Self) -> Result<(T, StageOutput)>,
    ) -> Result<T> {
        let started_at = Utc::now();
        let before = self.hub.stats.snapshot();
        info!("stage {name} started");
        let outcome = body(self);
        let after = self.hub.stats.snapshot();
        let calls = StatsSnapshot {
            backend_calls: after.backend_calls - before.backend_calls,
            cache_hits: after.cache_hits - before.cache_hits,
            cache_misses: after.cache_misses - before.cache_misses,
        };
        let (event, result) = match outcome {
            Ok((value, out)) => (
                StageEvent {
                    stage: name.into(),
                    started_at,
                    finished_at: Utc::now(),
                    status: EventStatus::Ok,
                    error: None,
                    artifacts: out.artifacts.into_iter().map(String::from).collect(),
                    label_space_version: out.version,
                    calls,
                    iterations: out.iterations,
                },
                Ok(value),
            ),
            Err(e) => (
                StageEvent {
                    stage: name.into(),
                    started_at,
                    finished_at: Utc::now(),
                    status: EventStatus::Failed,
                    error: Some(e.to_string()),
                    artifacts: vec![],
                    label_space_version: None,
                    calls,
                    iterations: vec![],
                },
                Err(e),
            ),
        };
        info!(
            "stage {name} {:?}: {} backend calls, {} cache hits",
            event.status, calls.backend_calls, calls.cache_hits
        );
        let dir = self.dir.clone();
        self.manifest.append(&dir, event)?;
        result
    }

    pub fn corpus(&mut self) -> Result<&Corpus> {
        if self.corpus.is_none() {
            self.corpus = Some(ingest(&self.config.corpus, CorpusFormat::JsonLines)?);
        }
        Ok(self.corpus.as_ref().expect("loaded"))
    }

    fn all_chunks(&mut self) -> Result<Vec<Chunk>> {
        let size = self.config.chunk_size;
        chunk_documents(self.corpus()?.documents(), size)
    }

    fn objective(&self) -> Result<ObjectiveDescription> {
        Ok(ObjectiveDescription::new(self.config.objective.clone())?
            .with_demonstrations(self.config.demonstrations.clone()))
    }

    fn extraction_template(&self) -> Result<PromptTemplate> {
        match &self.config.extraction_template {
            Some(p) => PromptTemplate::load(p),
            None => Ok(PromptTemplate::extraction()),
        }
    }

    pub fn load_space(&self) -> Result<LabelSpace> {
        LabelSpace::load(&self.path(SPACE))
    }

    pub fn ingest(&mut self) -> Result<IngestReport> {
        self.stage("ingest", |run| {
            let chunks = run.all_chunks()?;
            let corpus = run.corpus()?;
            let report = IngestReport {
                documents: corpus.len(),
                chunks: chunks.len(),
                tokens: chunks.iter().map(|c| c.token_count).sum(),
                labeled_documents: corpus
                    .documents()
                    .iter()
                    .filter(|d| d.gold_labels.is_some())
                    .count(),
                test_documents: corpus
                    .documents()
                    .iter()
                    .filter(|d| d.split == Split::Test)
                    .count(),
            };
            run.write_json(INGEST_REPORT, &report)?;
            Ok((report, StageOutput::new(vec![INGEST_REPORT], None)))
        })
    }

    pub fn discover(&mut self) -> Result<DiscoverReport> {
        self.stage("discover", |run| {
            let report = run.discover_inner()?;
            let version = run.load_space()?.version();
            Ok((
                report,
                StageOutput::new(vec![DISCOVER_REPORT, SPACE_DISCOVER, SPACE], Some(version)),
            ))
        })
    }

    fn discover_inner(&mut self) -> Result<DiscoverReport> {
        let objective = self.objective()?;
        let template = self.extraction_template()?;
        let chunk_size = self.config.chunk_size;
        let seed = self.config.seed;
        let dc = self.config.discover.clone();
        let corpus = self.corpus()?.clone();
        let limit = dc.max_subset.unwrap_or(corpus.len()).min(corpus.len());
        if limit == 0 {
            return Err(Error::Precondition("corpus is empty".into()));
        }
        let mut space = LabelSpace::new();
        let mut rounds = Vec::new();
        let mut extraction;
        let mut size = dc.subset_increment.min(limit);
        loop {
            let subset = sample_subset(&corpus, seed, size)?;
            let chunks = chunk_documents(corpus.select(&subset), chunk_size)?;
            let (kp, ext) =
                build_keyphrase_set(&chunks, &objective, &template, &self.hub.extraction)?;
            extraction = ext;
            let live_before = space.live_count() as isize;
            let mut round = DiscoverRound {
                subset_size: size,
                chunks: chunks.len(),
                keyphrases: kp.len(),
                unique_keyphrases: kp.unique_count(),
                clusters: 0,
                synthesized: 0,
                duplicates: 0,
                failed_clusters: 0,
                dedup: DedupReport::default(),
                net_added: 0,
                live_labels: 0,
                version: 0,
            };
            if !kp.is_empty() {
                self.synthesize_round(&chunks, &kp, &mut space, &mut round)?;
                round.dedup = deduplicate(
                    &mut space,
                    &self.hub.similarity,
                    Some(&self.hub.judge),
                    &self.config.dedup,
                )?;
            } else {
                warn!("subset of {size} documents produced no keyphrases");
            }
            round.live_labels = space.live_count();
            round.net_added = round.live_labels as isize - live_before;
            round.version = space.version();
            info!(
                "discover: {size} documents, {} clusters, {} live labels",
                round.clusters, round.live_labels
            );
            let stop = round.net_added <= 0 || size == limit;
            rounds.push(round);
            if stop {
                break;
            }
            size = (size + dc.subset_increment).min(limit);
        }
        if space.live_count() == 0 {
            return Err(Error::Precondition("discovery produced no labels".into()));
        }
        space.save(&self.path(SPACE_DISCOVER))?;
        space.save(&self.path(SPACE))?;
        let report = DiscoverReport {
            rounds,
            extraction,
            labels: space.live().map(|l| l.name.clone()).collect(),
        };
        self.write_json(DISCOVER_REPORT, &report)?;
        Ok(report)
    }

    fn synthesize_round(
        &self,
        chunks: &[Chunk],
        kp: &KeyphraseSet,
        space: &mut LabelSpace,
        round: &mut DiscoverRound,
    ) -> Result<()> {
        let dc = &self.config.discover;
        let texts: Vec<String> = kp.entries().iter().map(|e| e.text.clone()).collect();
        let unique: Vec<String> = kp.frequencies().keys().cloned().collect();
        let vectors = self.hub.embedding.embed(&unique)?;
        let by_text: HashMap<&str, &[f64]> = unique
            .iter()
            .zip(&vectors)
            .map(|(t, v)| (t.as_str(), v.values.as_slice()))
            .collect();
        let rows: Vec<Vec<f64>> = texts.iter().map(|t| by_text[t.as_str()].to_vec()).collect();
        let matrix = EmbeddingMatrix::from_rows(&rows)?;
        let dim = dc.reduced_dim.min(matrix.ncols()).min(rows.len());
        let reduced = match reduce(&matrix, dim, &dc.reducer.to_reducer()) {
            Ok(r) => r.rows,
            Err(Error::Degenerate(m)) | Err(Error::Config(m)) => {
                warn!("reduction skipped: {m}");
                rows.clone()
            }
            Err(e) => return Err(e),
        };
        let k = choose_k(dc.k_hint, unique.len())?.min(unique.len()).max(1);
        let gmm = |k: usize| {
            let mut g = GmmConfig::new(k, self.config.seed);
            g.restarts = dc.gmm_restarts;
            g.max_iter = dc.max_iter;
            g.tol = dc.tol;
            fit_gmm(&reduced, &g)
        };
        let model = match gmm(k) {
            Err(Error::Degenerate(m)) => {
                warn!("clustering degenerate ({m}); using one cluster");
                gmm(1).or_else(|e| match e {
                    Error::Degenerate(_) => Ok(single_cluster(&reduced)),
                    e => Err(e),
                })?
            }
            other => other?,
        };
        let assignment = assign(&model, &reduced)?;
        let chunk_of: HashMap<(&str, usize), &Chunk> = chunks
            .iter()
            .map(|c| ((c.doc_id.as_str(), c.index), c))
            .collect();
        for cluster in 0..model.k() {
            if assignment.members[cluster].is_empty() {
                continue;
            }
            round.clusters += 1;
            let members = nearest_members(
                &assignment,
                &reduced,
                &model,
                cluster,
                dc.members_per_cluster,
            )?;
            let mut exemplars: Vec<Chunk> = Vec::new();
            for i in members {
                let e = &kp.entries()[i];
                let c = chunk_of[&(e.doc_id.as_str(), e.chunk_index)];
                if !exemplars
                    .iter()
                    .any(|x| x.doc_id == c.doc_id && x.index == c.index)
                {
                    exemplars.push(c.clone());
                }
            }
            match synthesize_into(space, &exemplars, &self.hub.synthesis) {
                Ok(SynthesisOutcome::Added(_)) => round.synthesized += 1,
                Ok(SynthesisOutcome::Duplicate(_)) => round.duplicates += 1,
                Err(Error::Unparseable(m)) => {
                    warn!("cluster {cluster}: no label synthesized ({m})");
                    round.failed_clusters += 1;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Keyphrases over the full corpus, extracted once and stored.
    pub fn full_keyphrases(&mut self) -> Result<KeyphraseSet> {
        let p = self.path(KEYPHRASES);
        if p.exists() {
            let body = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            return Ok(serde_json::from_str(&body)?);
        }
        let chunks = self.all_chunks()?;
        let (kp, report) = build_keyphrase_set(
            &chunks,
            &self.objective()?,
            &self.extraction_template()?,
            &self.hub.extraction,
        )?;
        if !report.failures.is_empty() {
            warn!(
                "{} chunks produced no usable keyphrases",
                report.failures.len()
            );
        }
        self.write_json(KEYPHRASES, &kp)?;
        Ok(kp)
    }

    /// Gold label space: the configured file, or the union of document labels.
    pub fn gold_space(&mut self) -> Result<Vec<String>> {
        if let Some(p) = self.config.eval.gold_labels.clone() {
            let body = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            return Ok(body
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect());
        }
        let names: BTreeSet<String> = self
            .corpus()?
            .documents()
            .iter()
            .flat_map(|d| d.gold_labels.iter().flatten().cloned())
            .collect();
        Ok(names.into_iter().collect())
    }

    /// Coverage of the gold space by the live labels of `space`.
    pub fn coverage_of(&mut self, space: &LabelSpace) -> Result<f64> {
        let gold = self.gold_space()?;
        let pred: Vec<String> = space.live().map(|l| l.name.clone()).collect();
        let judge = self.config.eval.judge.then_some(&self.hub.judge);
        let g = build_coverage_graph(
            &gold,
            &pred,
            &self.hub.similarity,
            judge,
            self.config.eval.thresholds(),
        )?;
        Ok(max_matching(&g).coverage)
    }

    pub fn refine(&mut self) -> Result<RefineReport> {
        self.refine_with(None)
    }

    /// Refinement with an iteration count overriding the configured one.
    pub fn refine_with(&mut self, iterations: Option<usize>) -> Result<RefineReport> {
        self.stage("refine", |run| {
            let report = run.refine_inner(iterations)?;
            let version = run.load_space()?.version();
            let mut out = StageOutput::new(
                vec![KEYPHRASES, ITERATIONS, REFINE_REPORT, SPACE_REFINE, SPACE],
                Some(version),
            );
            out.iterations = report.iterations.clone();
            Ok((report, out))
        })
    }

    fn refine_inner(&mut self, iterations: Option<usize>) -> Result<RefineReport> {
        let mut refine_config = self.config.refine.clone();
        if let Some(n) = iterations {
            refine_config.iterations = n;
        }
        let partial = self.path(SPACE_REFINE_PARTIAL);
        let iterations_path = self.path(ITERATIONS);
        let mut records: Vec<IterationRecord> = Vec::new();
        let mut space = if partial.exists() && iterations_path.exists() {
            let body = std::fs::read_to_string(&iterations_path)
                .map_err(|e| Error::io(&iterations_path, e))?;
            for (i, line) in body
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                records.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?);
            }
            info!("resuming refinement after {} iterations", records.len());
            LabelSpace::load(&partial)?
        } else {
            crate::write_atomic(&iterations_path, b"")?;
            LabelSpace::load(&self.path(SPACE_DISCOVER)).or_else(|_| self.load_space())?
        };
        let resumed_from = records.len();
        let chunks = self.all_chunks()?;
        let kp = self.full_keyphrases()?;
        let has_gold =
            self.config.eval.gold_labels.is_some() || !gold_documents(self.corpus()?).is_empty();
        let initial_coverage = if has_gold {
            Some(self.coverage_of(&space)?)
        } else {
            None
        };

        let gold = if has_gold { self.gold_space()? } else { vec![] };
        let thresholds = self.config.eval.thresholds();
        let judge = self.config.eval.judge.then_some(&self.hub.judge);
        let similarity = &self.hub.similarity;
        let coverage = move |s: &LabelSpace| -> Result<f64> {
            let pred: Vec<String> = s.live().map(|l| l.name.clone()).collect();
            let g = build_coverage_graph(&gold, &pred, similarity, judge, thresholds)?;
            Ok(max_matching(&g).coverage)
        };
        let coverage_ref: Option<&CoverageFn> = if has_gold { Some(&coverage) } else { None };
        let templates = self.config.classify.templates();
        let inputs = RefineInputs {
            chunks: &chunks,
            keyphrases: &kp,
            templates: &templates,
            entailment: &self.hub.entailment,
            similarity: &self.hub.similarity,
        };
        let dir = self.dir.clone();
        let mut checkpoint = |record: &IterationRecord, s: &LabelSpace| -> Result<()> {
            use std::io::Write;
            let p = dir.join(ITERATIONS);
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .create(true)
                .open(&p)
                .map_err(|e| Error::io(&p, e))?;
            writeln!(f, "{}", serde_json::to_string(record)?).map_err(|e| Error::io(&p, e))?;
            s.save(&dir.join(SPACE_REFINE_PARTIAL))
        };
        run_refinement(
            &inputs,
            &mut space,
            &refine_config,
            resumed_from,
            &mut records,
            coverage_ref,
            &mut checkpoint,
        )?;
        space.save(&self.path(SPACE_REFINE))?;
        space.save(&self.path(SPACE))?;
        if partial.exists() {
            std::fs::remove_file(&partial).map_err(|e| Error::io(&partial, e))?;
        }
        let report = RefineReport {
            initial_coverage,
            iterations: records,
            labels: space.live().map(|l| l.name.clone()).collect(),
            resumed_from,
        };
        self.write_json(REFINE_REPORT, &report)?;
        Ok(report)
    }

    pub fn classify(&mut self) -> Result<Classification> {
        self.stage("classify", |run| {
            let space = run.load_space()?;
            let chunks = run.all_chunks()?;
            let kp = if run.config.classify.use_keyphrases && run.path(KEYPHRASES).exists() {
                Some(run.full_keyphrases()?)
            } else {
                None
            };
            let result = classify(
                &chunks,
                kp.as_ref(),
                &space,
                &run.config.classify.templates(),
                &run.hub.entailment,
                run.config.classify.max_ranks,
            )?;
            crate::write_atomic(
                &run.path(PREDICTIONS),
                result.predictions_jsonl()?.as_bytes(),
            )?;
            Ok((
                result,
                StageOutput::new(vec![PREDICTIONS], Some(space.version())),
            ))
        })
    }

    pub fn predictions(&self) -> Result<Vec<Prediction>> {
        parse_predictions(&self.read(PREDICTIONS)?)
    }

    pub fn evaluate(&mut self) -> Result<EvalReport> {
        self.stage("evaluate", |run| {
            let predictions = run.predictions()?;
            let space = run.load_space()?;
            let gold_space = run.gold_space()?;
            let gold: BTreeMap<String, Vec<String>> = gold_documents(run.corpus()?)
                .into_iter()
                .map(|d| (d.id.clone(), d.gold_labels.clone().unwrap_or_default()))
                .collect();
            if gold_space.is_empty() {
                return Err(Error::Precondition(
                    "no gold labels to evaluate against".into(),
                ));
            }
            let report = evaluate_run(
                &space,
                &predictions,
                &gold_space,
                &gold,
                &run.config.eval.k,
                &run.hub.similarity,
                run.config.eval.judge.then_some(&run.hub.judge),
                run.config.eval.thresholds(),
            )?;
            run.write_json(EVAL_REPORT, &report)?;
            Ok((
                report,
                StageOutput::new(vec![EVAL_REPORT], Some(space.version())),
            ))
        })
    }

    pub fn probe(&mut self) -> Result<DominanceReport> {
        self.stage("probe-dominance", |run| {
            let docs: Vec<Document> = gold_documents(run.corpus()?).into_iter().cloned().collect();
            let report = probe_dominance(
                &docs,
                run.config.probe.sample,
                run.config.seed,
                &PromptTemplate::probe(),
                &run.hub.probe,
            )?;
            run.write_json(PROBE_REPORT, &report)?;
            Ok((report, StageOutput::new(vec![PROBE_REPORT], None)))
        })
    }

    /// ingest, discover, refine, classify and (with gold labels) evaluate.
    pub fn run_all(&mut self) -> Result<Option<EvalReport>> {
        self.ingest()?;
        self.discover()?;
        self.refine()?;
        self.classify()?;
        let has_gold =
            self.config.eval.gold_labels.is_some() || !gold_documents(self.corpus()?).is_empty();
        if has_gold {
            Ok(Some(self.evaluate()?))
        } else {
            Ok(None)
        }
    }
}

fn single_cluster(rows: &[Vec<f64>]) -> crate::cluster::MixtureModel {
    let d = rows[0].len();
    crate::cluster::MixtureModel {
        weights: vec![1.0],
        means: vec![rows[0].clone()],
        variances: vec![vec![1.0; d]],
        log_likelihood: 0.0,
        log_likelihood_trace: vec![],
        seed: 0,
        converged: true,
    }
}
