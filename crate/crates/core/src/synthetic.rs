//! Planted-label corpus for offline end-to-end runs.
//!
//! Each document carries exactly one planted label. Head documents repeat
//! their label phrase inside 50-token chunks, sometimes alongside a rare
//! "noise" phrase that shares one word with the label. Long-tail documents are
//! long, repeat their label in every chunk and sit at the very end of the
//! seeded subset order, so subset-based discovery never sees them and they
//! have to be recovered by refinement.
//!
//! The generator also produces the mock backend configurations for every
//! model role, so that a run over the corpus is fully offline.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_subset, Corpus, Document};
use crate::error::{Error, Result};
use crate::gateway::MockConfig;

pub const HEAD_LABELS: [&str; 9] = [
    "quantum optics",
    "monetary policy",
    "protein folding",
    "soccer league",
    "volcanic eruption",
    "film festival",
    "cloud computing",
    "organic farming",
    "maritime trade",
];

pub const TAIL_LABELS: [&str; 3] = ["glacier retreat", "chess openings", "coral bleaching"];

const FILLER: &[&str] = &[
    "report",
    "notes",
    "recent",
    "work",
    "shows",
    "several",
    "results",
    "across",
    "regions",
    "groups",
    "people",
    "team",
    "review",
    "early",
    "later",
    "during",
    "week",
    "month",
    "year",
    "local",
    "national",
    "observers",
    "analysts",
    "data",
    "record",
    "series",
    "summary",
    "update",
    "brief",
    "account",
    "details",
    "figures",
    "sources",
    "officials",
    "members",
    "growing",
    "interest",
    "attention",
    "public",
    "debate",
    "statement",
    "plans",
    "effort",
    "issue",
    "progress",
    "change",
    "trend",
    "measure",
    "level",
    "share",
    "period",
    "stage",
    "point",
    "view",
    "case",
    "part",
    "side",
    "area",
    "field",
    "process",
];

const MODIFIERS: &[&str] = &[
    "lab", "panel", "budget", "outlook", "trial", "network", "forum", "draft", "index", "survey",
    "sector", "agency", "market", "season", "project", "center", "board", "circle", "studio",
    "supply",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub documents: usize,
    pub seed: u64,
    pub chunk_size: usize,
    /// Label phrase repetitions per head chunk.
    pub head_repeats: usize,
    pub head_chunks: (usize, usize),
    /// Chance that a head chunk also carries one noise phrase.
    pub noise_rate: f64,
    pub tail_chunks: usize,
    pub tail_repeats: usize,
    pub mock_dim: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            documents: 200,
            seed: 7,
            chunk_size: 50,
            head_repeats: 8,
            head_chunks: (1, 2),
            noise_rate: 0.5,
            tail_chunks: 18,
            tail_repeats: 4,
            mock_dim: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub corpus: Corpus,
    pub heads: Vec<String>,
    pub tails: Vec<String>,
    pub noise: Vec<String>,
    pub extraction: MockConfig,
    pub synthesis: MockConfig,
    pub judge: MockConfig,
    pub probe: MockConfig,
    pub embedding: MockConfig,
}

impl SyntheticCorpus {
    pub fn planted(&self) -> Vec<String> {
        self.heads.iter().chain(&self.tails).cloned().collect()
    }

    /// Writes the corpus, mock configs and a run configuration into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| crate::write_atomic(&dir.join(name), body.as_bytes());
        put("corpus.jsonl", self.corpus.to_jsonl()?)?;
        for (name, config) in [
            ("mock-extraction.json", &self.extraction),
            ("mock-synthesis.json", &self.synthesis),
            ("mock-judge.json", &self.judge),
            ("mock-probe.json", &self.probe),
            ("mock-embedding.json", &self.embedding),
        ] {
            put(name, serde_json::to_string_pretty(config)? + "\n")?;
        }
        put("gold-labels.txt", self.planted().join("\n") + "\n")?;
        put("run.toml", self.run_config())
    }

    /// Run configuration (TOML) with paths relative to the output directory.
    pub fn run_config(&self) -> String {
        format!(
            r#"corpus = "corpus.jsonl"
chunk_size = {chunk}
objective = "Assign each news-style document the topic it is mainly about."
seed = {seed}
deterministic = true

[discover]
subset_increment = {inc}
k_hint = 12

[classify]
max_ranks = 3

[refine]
iterations = 3
subset_size = 60

[eval]
gold_labels = "gold-labels.txt"
k = [1, 3]

[backends.generation]
kind = "mock"
config = "mock-extraction.json"

[backends.synthesis]
kind = "mock"
config = "mock-synthesis.json"

[backends.judge]
kind = "mock"
config = "mock-judge.json"

[backends.probe]
kind = "mock"
config = "mock-probe.json"

[backends.embedding]
kind = "mock"
config = "mock-embedding.json"
"#,
            chunk = self.spec.chunk_size,
            seed = self.spec.seed,
            inc = self.discover_increment(),
        )
    }

    /// Documents per discovery growth step; every head appears in the first
    /// step and no tail appears before the last three positions.
    pub fn discover_increment(&self) -> usize {
        (self.spec.documents / 4).max(HEAD_LABELS.len())
    }
}

fn chunk_text(
    rng: &mut ChaCha8Rng,
    size: usize,
    phrase: &str,
    repeats: usize,
    noise: Option<&str>,
) -> String {
    let mut units: Vec<String> = vec![phrase.to_string(); repeats];
    let mut used = repeats * phrase.split_whitespace().count();
    if let Some(n) = noise {
        units.push(n.to_string());
        used += n.split_whitespace().count();
    }
    while used < size {
        units.push(FILLER.choose(rng).expect("filler").to_string());
        used += 1;
    }
    units.shuffle(rng);
    units.join(" ")
}

/// Generates the corpus. Document ids are `doc-NNN`; the planted label is
/// stored as the document's gold label.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let n = spec.documents;
    let tails = TAIL_LABELS.len();
    if n < 4 * HEAD_LABELS.len() + tails {
        return Err(Error::Config(format!(
            "synthetic corpus needs at least {} documents",
            4 * HEAD_LABELS.len() + tails
        )));
    }
    if spec.head_repeats * 2 + 2 > spec.chunk_size || spec.tail_repeats * 2 > spec.chunk_size {
        return Err(Error::Config(
            "label repetitions do not fit in a chunk".into(),
        ));
    }
    let ids: Vec<String> = (0..n).map(|i| format!("doc-{i:03}")).collect();
    let placeholder = Corpus::from_documents(
        ids.iter()
            .map(|id| Document::new(id.clone(), "x"))
            .collect(),
    )?;
    let order = sample_subset(&placeholder, spec.seed, n)?.ids;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c0de);
    let mut role = vec![String::new(); n];
    for (pos, id) in order.iter().enumerate() {
        let idx: usize = id[4..].parse().expect("generated id");
        role[idx] = if pos >= n - tails {
            TAIL_LABELS[pos - (n - tails)].to_string()
        } else {
            HEAD_LABELS[pos % HEAD_LABELS.len()].to_string()
        };
    }

    let mut noise = BTreeSet::new();
    let mut docs = Vec::with_capacity(n);
    for (idx, label) in role.iter().enumerate() {
        let is_tail = TAIL_LABELS.contains(&label.as_str());
        let chunks: Vec<String> = if is_tail {
            (0..spec.tail_chunks)
                .map(|_| chunk_text(&mut rng, spec.chunk_size, label, spec.tail_repeats, None))
                .collect()
        } else {
            let count = rng.random_range(spec.head_chunks.0..=spec.head_chunks.1);
            (0..count)
                .map(|_| {
                    let variant = rng.random_bool(spec.noise_rate).then(|| {
                        let parts: Vec<&str> = label.split_whitespace().collect();
                        let m = MODIFIERS.choose(&mut rng).expect("modifier");
                        if rng.random_bool(0.5) {
                            format!("{} {m}", parts[0])
                        } else {
                            format!("{m} {}", parts[parts.len() - 1])
                        }
                    });
                    if let Some(v) = &variant {
                        noise.insert(v.clone());
                    }
                    chunk_text(
                        &mut rng,
                        spec.chunk_size,
                        label,
                        spec.head_repeats,
                        variant.as_deref(),
                    )
                })
                .collect()
        };
        docs.push(
            Document::new(ids[idx].clone(), chunks.join(" ")).with_labels(vec![label.clone()]),
        );
    }

    let heads: Vec<String> = HEAD_LABELS.iter().map(|s| s.to_string()).collect();
    let tails: Vec<String> = TAIL_LABELS.iter().map(|s| s.to_string()).collect();
    let labels: Vec<String> = heads.iter().chain(&tails).cloned().collect();
    let noise: Vec<String> = noise.into_iter().collect();
    let base = MockConfig {
        seed: spec.seed,
        dim: spec.mock_dim,
        ..MockConfig::default()
    };
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        corpus: Corpus::from_documents(docs)?,
        extraction: MockConfig {
            vocabulary: labels.iter().chain(&noise).cloned().collect(),
            max_phrases: 4,
            ..base.clone()
        },
        synthesis: MockConfig {
            vocabulary: labels.clone(),
            max_phrases: 1,
            ..base.clone()
        },
        judge: MockConfig {
            default_response: Some("No".into()),
            ..base.clone()
        },
        probe: MockConfig {
            vocabulary: labels,
            max_phrases: 1,
            ..base.clone()
        },
        embedding: base,
        heads,
        tails,
        noise,
    })
}
