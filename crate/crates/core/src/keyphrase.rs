//! Keyphrase prompting, response parsing and the keyphrase multiset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Chunk, Document};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GenerationRequest};

pub const MAX_PHRASES_PER_CHUNK: usize = 4;
pub const MAX_PHRASE_TOKENS: usize = 10;

pub const DEFAULT_SYSTEM_PROMPT: &str =
    "You are a helpful, respectful and honest assistant for labeling topics.";

const EXTRACTION_USER_TEMPLATE: &str = "\
The following is an example taken from the corpus.
{chunk}
Based on the topic information mentioned above, the keyphrases are formatted as {objective}.
Based on the information about the topic above, please find two coarse-grained and two fine-grained keyphrases for the example.
Please only return the keyphrases in one line using the format below:
[keyphrase] and [/keyphrase].";

const PROBE_SYSTEM_PROMPT: &str = "You are a poetic assistant, skilled in explaining complex programming concepts with creative flair.";

const PROBE_USER_TEMPLATE: &str = "\
Which label in the label space {labels} is the dominant label that covers more than 50% of the content of the following document?
{document}

Please output the dominant label only if exist or output 'NO' if there are no dominant labels.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Coarse,
    Fine,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyphrase {
    pub text: String,
    pub doc_id: String,
    pub chunk_index: usize,
    #[serde(default)]
    pub granularity: Granularity,
}

impl Keyphrase {
    pub fn instance_id(&self, ordinal: usize) -> String {
        format!("phrase:{}:{}:{}", self.doc_id, self.chunk_index, ordinal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveDescription {
    pub text: String,
    #[serde(default)]
    pub demonstrations: Vec<String>,
}

impl ObjectiveDescription {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Validation("objective description is empty".into()));
        }
        Ok(ObjectiveDescription {
            text,
            demonstrations: Vec::new(),
        })
    }

    pub fn with_demonstrations(mut self, demos: Vec<String>) -> Self {
        self.demonstrations = demos;
        self
    }

    pub fn render(&self) -> String {
        if self.demonstrations.is_empty() {
            self.text.trim().to_string()
        } else {
            format!(
                "{} (for example: {})",
                self.text.trim(),
                self.demonstrations.join(", ")
            )
        }
    }
}

/// A system prompt plus a user prompt with `{objective}`, `{chunk}` and
/// `{document}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn extraction() -> Self {
        PromptTemplate {
            system: DEFAULT_SYSTEM_PROMPT.into(),
            user: EXTRACTION_USER_TEMPLATE.into(),
        }
    }

    pub fn probe() -> Self {
        PromptTemplate {
            system: PROBE_SYSTEM_PROMPT.into(),
            user: PROBE_USER_TEMPLATE.into(),
        }
    }

    /// Template file: system prompt, a line containing only `---`, user prompt.
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&body).ok_or_else(|| {
            Error::Config(format!(
                "template {} must contain a '---' separator line",
                path.display()
            ))
        })
    }

    pub fn parse(body: &str) -> Option<Self> {
        let mut system = Vec::new();
        let mut lines = body.lines();
        for line in lines.by_ref() {
            if line.trim() == "---" {
                let user: Vec<&str> = lines.collect();
                return Some(PromptTemplate {
                    system: system.join("\n").trim().to_string(),
                    user: user.join("\n").trim().to_string(),
                });
            }
            system.push(line);
        }
        None
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> GenerationRequest {
        let mut user = self.user.clone();
        for (name, value) in vars {
            user = user.replace(&format!("{{{name}}}"), value);
        }
        GenerationRequest::new(self.system.clone(), user)
    }
}

/// Lowercases, strips non-alphanumeric characters from both ends and
/// collapses inner whitespace. Idempotent.
pub fn normalize_phrase(text: &str) -> String {
    let lower = text.to_lowercase();
    lower
        .trim_matches(|c: char| !c.is_alphanumeric())
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn split_items(s: &str, split_and: bool) -> Vec<String> {
    let mut out = Vec::new();
    for part in s.split([',', ';', '\n']) {
        if split_and {
            let words: Vec<&str> = part.split_whitespace().collect();
            for piece in words.split(|w| w.eq_ignore_ascii_case("and")) {
                out.push(piece.join(" "));
            }
        } else {
            out.push(part.to_string());
        }
    }
    out
}

fn strip_enumeration(line: &str) -> &str {
    let t = line.trim_start();
    for bullet in ["-", "*", "•"] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    t
}

fn granularity_of(header: &str) -> Granularity {
    let h = header.to_lowercase();
    if h.contains("coarse") {
        Granularity::Coarse
    } else if h.contains("fine") {
        Granularity::Fine
    } else {
        Granularity::Unspecified
    }
}

/// Parses a keyphrase response. Accepts `[keyphrase] ... [/keyphrase]`
/// segments (items split on commas, semicolons and the word "and"),
/// comma/newline separated lists and `1.` style enumerations, optionally
/// headed by `Coarse...:` / `Fine...:`. Returns at most
/// [`MAX_PHRASES_PER_CHUNK`] distinct normalized phrases of at most
/// [`MAX_PHRASE_TOKENS`] tokens, in response order.
pub fn parse_keyphrase_response(response: &str) -> Vec<(String, Granularity)> {
    let mut raw: Vec<(String, Granularity)> = Vec::new();
    let lower = response.to_lowercase();
    const OPEN: &str = "[keyphrase]";
    const CLOSE: &str = "[/keyphrase]";
    if lower.contains(OPEN) {
        let mut pos = 0;
        while let Some(start) = lower[pos..].find(OPEN) {
            let begin = pos + start + OPEN.len();
            let end = lower[begin..]
                .find(CLOSE)
                .map(|e| begin + e)
                .unwrap_or(response.len());
            let line_start = lower[..pos + start].rfind('\n').map(|i| i + 1).unwrap_or(0);
            let gran = granularity_of(&lower[line_start..pos + start]);
            for item in split_items(&response[begin..end], true) {
                raw.push((item, gran));
            }
            pos = (end + CLOSE.len()).min(response.len());
        }
    } else {
        for line in response.lines() {
            let line = strip_enumeration(line);
            let (gran, body) = match line.split_once(':') {
                Some((head, rest)) if head.split_whitespace().count() <= 3 => {
                    (granularity_of(head), rest)
                }
                _ => (Granularity::Unspecified, line),
            };
            for item in split_items(body, false) {
                raw.push((strip_enumeration(&item).to_string(), gran));
            }
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (item, gran) in raw {
        let norm = normalize_phrase(&item);
        if norm.is_empty() || tokenize(&norm).len() > MAX_PHRASE_TOKENS {
            continue;
        }
        if seen.insert(norm.clone()) {
            out.push((norm, gran));
        }
        if out.len() == MAX_PHRASES_PER_CHUNK {
            break;
        }
    }
    out
}

pub fn extraction_request(
    chunk: &Chunk,
    objective: &ObjectiveDescription,
    template: &PromptTemplate,
) -> GenerationRequest {
    template.render(&[
        ("objective", &objective.render()),
        ("chunk", &chunk.text),
        ("document", &chunk.text),
    ])
}

fn phrases_from_response(chunk: &Chunk, response: &str) -> Result<Vec<Keyphrase>> {
    let parsed = parse_keyphrase_response(response);
    if parsed.is_empty() {
        return Err(Error::Unparseable(format!(
            "no keyphrases in response for {}#{}",
            chunk.doc_id, chunk.index
        )));
    }
    Ok(parsed
        .into_iter()
        .map(|(text, granularity)| Keyphrase {
            text,
            doc_id: chunk.doc_id.clone(),
            chunk_index: chunk.index,
            granularity,
        })
        .collect())
}

pub fn extract_keyphrases(
    chunk: &Chunk,
    objective: &ObjectiveDescription,
    template: &PromptTemplate,
    gateway: &Gateway,
) -> Result<Vec<Keyphrase>> {
    let response = gateway.generate(&extraction_request(chunk, objective, template))?;
    phrases_from_response(chunk, &response)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyphraseSet {
    entries: Vec<Keyphrase>,
    frequency: BTreeMap<String, usize>,
}

impl KeyphraseSet {
    pub fn from_entries(entries: Vec<Keyphrase>) -> Self {
        let mut frequency = BTreeMap::new();
        for e in &entries {
            *frequency.entry(e.text.clone()).or_insert(0) += 1;
        }
        KeyphraseSet { entries, frequency }
    }

    pub fn entries(&self) -> &[Keyphrase] {
        &self.entries
    }

    pub fn frequency(&self, text: &str) -> usize {
        self.frequency.get(text).copied().unwrap_or(0)
    }

    pub fn frequencies(&self) -> &BTreeMap<String, usize> {
        &self.frequency
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn unique_count(&self) -> usize {
        self.frequency.len()
    }

    /// Entries grouped by their source chunk, keyed by (doc id, chunk index).
    pub fn by_chunk(&self) -> HashMap<(String, usize), Vec<&Keyphrase>> {
        let mut map: HashMap<(String, usize), Vec<&Keyphrase>> = HashMap::new();
        for e in &self.entries {
            map.entry((e.doc_id.clone(), e.chunk_index))
                .or_default()
                .push(e);
        }
        map
    }

    pub fn for_document<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a Keyphrase> {
        self.entries.iter().filter(move |e| e.doc_id == doc_id)
    }

    /// True when the frequency index agrees with the entries.
    pub fn is_consistent(&self) -> bool {
        self.frequency.values().sum::<usize>() == self.entries.len()
            && *self == KeyphraseSet::from_entries(self.entries.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkFailure {
    pub doc_id: String,
    pub chunk_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub chunks: usize,
    pub keyphrases: usize,
    pub failures: Vec<ChunkFailure>,
}

/// Extracts keyphrases for every chunk. Unparseable responses are recorded
/// per chunk; gateway errors abort, as does a failure rate above one half.
pub fn build_keyphrase_set(
    chunks: &[Chunk],
    objective: &ObjectiveDescription,
    template: &PromptTemplate,
    gateway: &Gateway,
) -> Result<(KeyphraseSet, ExtractionReport)> {
    let requests: Vec<GenerationRequest> = chunks
        .iter()
        .map(|c| extraction_request(c, objective, template))
        .collect();
    let responses = gateway.generate_many(&requests);
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (chunk, response) in chunks.iter().zip(responses) {
        match phrases_from_response(chunk, &response?) {
            Ok(phrases) => entries.extend(phrases),
            Err(Error::Unparseable(reason)) => failures.push(ChunkFailure {
                doc_id: chunk.doc_id.clone(),
                chunk_index: chunk.index,
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    if failures.len() * 2 > chunks.len() {
        return Err(Error::ExtractionAborted {
            failed: failures.len(),
            total: chunks.len(),
        });
    }
    let report = ExtractionReport {
        chunks: chunks.len(),
        keyphrases: entries.len(),
        failures,
    };
    Ok((KeyphraseSet::from_entries(entries), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub sampled: usize,
    pub dominant: usize,
    /// Fraction in [0, 1] of sampled documents with a dominant gold label.
    pub percent_dominant: f64,
    pub per_label_dominant_counts: BTreeMap<String, usize>,
}

fn python_list(labels: &[String]) -> String {
    let quoted: Vec<String> = labels.iter().map(|l| format!("'{l}'")).collect();
    format!("[{}]", quoted.join(", "))
}

pub fn probe_request(doc: &Document, template: &PromptTemplate) -> Result<GenerationRequest> {
    let labels = doc
        .gold_labels
        .as_ref()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| Error::Precondition(format!("document {:?} has no gold labels", doc.id)))?;
    Ok(template.render(&[("labels", &python_list(labels)), ("document", &doc.text)]))
}

/// Maps a probe answer to one of the gold labels, or `None` for "NO" and
/// answers naming no gold label. The longest matching label wins.
pub fn match_dominant<'a>(response: &str, gold: &'a [String]) -> Option<&'a String> {
    let answer = normalize_phrase(response);
    if answer == "no" || answer.starts_with("no ") || answer.is_empty() {
        return None;
    }
    let padded = format!(
        " {} ",
        answer.replace(|c: char| !c.is_alphanumeric() && c != '_', " ")
    );
    gold.iter()
        .filter(|g| {
            let norm = normalize_phrase(g);
            !norm.is_empty()
                && (norm == answer
                    || padded.contains(&format!(
                        " {} ",
                        norm.replace(|c: char| !c.is_alphanumeric() && c != '_', " ")
                    )))
        })
        .max_by_key(|g| g.len())
}

/// Asks, for a seeded sample of documents, whether one gold label covers
/// more than half of the document.
pub fn probe_dominance(
    docs: &[Document],
    sample: usize,
    seed: u64,
    template: &PromptTemplate,
    gateway: &Gateway,
) -> Result<DominanceReport> {
    if docs.is_empty() {
        return Err(Error::Precondition("no documents to probe".into()));
    }
    let mut order: Vec<&Document> = docs.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(sample.min(docs.len()));
    let requests = order
        .iter()
        .map(|d| probe_request(d, template))
        .collect::<Result<Vec<_>>>()?;
    let responses = gateway.generate_many(&requests);
    let mut counts = BTreeMap::new();
    let mut dominant = 0;
    for (doc, response) in order.iter().zip(responses) {
        let response = response?;
        let gold = doc.gold_labels.as_deref().unwrap_or_default();
        if let Some(label) = match_dominant(&response, gold) {
            dominant += 1;
            *counts.entry(label.clone()).or_insert(0) += 1;
        }
    }
    let sampled = order.len();
    Ok(DominanceReport {
        sampled,
        dominant,
        percent_dominant: if sampled == 0 {
            0.0
        } else {
            dominant as f64 / sampled as f64
        },
        per_label_dominant_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockConfig;
    use proptest::prelude::*;

    fn chunk(doc: &str, index: usize, text: &str) -> Chunk {
        Chunk {
            doc_id: doc.into(),
            index,
            text: text.into(),
            token_count: tokenize(text).len(),
        }
    }

    fn objective() -> ObjectiveDescription {
        ObjectiveDescription::new("research topics of papers").unwrap()
    }

    #[test]
    fn marker_format_strips_markers() {
        let parsed = parse_keyphrase_response("[keyphrase] sports and [/keyphrase]");
        assert_eq!(
            parsed,
            vec![("sports".to_string(), Granularity::Unspecified)]
        );
        let parsed = parse_keyphrase_response(
            "[/INST] [keyphrase] Games and Trading_Card_Games [/keyphrase].",
        );
        let texts: Vec<_> = parsed.iter().map(|p| p.0.as_str()).collect();
        assert_eq!(texts, vec!["games", "trading_card_games"]);
    }

    #[test]
    fn granularity_headers_are_tagged() {
        let parsed = parse_keyphrase_response(
            "Coarse-grained: Machine Learning\nFine-grained: optimization",
        );
        assert_eq!(
            parsed,
            vec![
                ("machine learning".to_string(), Granularity::Coarse),
                ("optimization".to_string(), Granularity::Fine),
            ]
        );
    }

    #[test]
    fn seven_phrases_are_capped_after_dedup() {
        // by hand: normalize -> [nlp, parsing, nlp(dup), syntax, grammar, ...]
        let resp = "1. NLP\n2. Parsing\n3. nlp.\n4. Syntax\n5. Grammar\n6. Semantics\n7. Lexicon";
        let texts: Vec<String> = parse_keyphrase_response(resp)
            .into_iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(texts, vec!["nlp", "parsing", "syntax", "grammar"]);
    }

    #[test]
    fn overlong_phrases_are_dropped() {
        let long = "one two three four five six seven eight nine ten eleven";
        assert!(parse_keyphrase_response(long).is_empty());
        assert_eq!(parse_keyphrase_response(&format!("{long}, ok")).len(), 1);
    }

    #[test]
    fn fixture_echo_through_gateway() {
        let c = chunk("d1", 0, "we minimise the loss with gradient descent");
        let template = PromptTemplate::extraction();
        let req = extraction_request(&c, &objective(), &template);
        let mut config = MockConfig::default();
        config.fixtures.insert(
            req.digest(),
            "Coarse: machine learning\nFine: optimization".into(),
        );
        let gw = Gateway::mock(config);
        let phrases = extract_keyphrases(&c, &objective(), &template, &gw).unwrap();
        assert_eq!(phrases.len(), 2);
        assert_eq!(phrases[0].text, "machine learning");
        assert_eq!(phrases[0].granularity, Granularity::Coarse);
        assert_eq!(phrases[1].text, "optimization");
        assert_eq!(phrases[1].granularity, Granularity::Fine);
    }

    #[test]
    fn frequency_counts_and_failures() {
        let config = MockConfig {
            vocabulary: vec!["economics".into()],
            ..MockConfig::default()
        };
        let gw = Gateway::mock(config);
        let chunks: Vec<Chunk> = (0..3)
            .map(|i| chunk(&format!("d{i}"), 0, "notes on economics today"))
            .collect();
        let (set, report) =
            build_keyphrase_set(&chunks, &objective(), &PromptTemplate::extraction(), &gw).unwrap();
        assert_eq!(set.frequency("economics"), 3);
        assert!(set.is_consistent());
        assert_eq!(report.keyphrases, 3);

        let (empty, _) =
            build_keyphrase_set(&[], &objective(), &PromptTemplate::extraction(), &gw).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn majority_failure_aborts() {
        let gw = Gateway::mock(MockConfig {
            default_response: Some("---".into()),
            ..MockConfig::default()
        });
        let chunks: Vec<Chunk> = (0..4).map(|i| chunk("d", i, "x y z")).collect();
        let err = build_keyphrase_set(&chunks, &objective(), &PromptTemplate::extraction(), &gw)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::ExtractionAborted {
                failed: 4,
                total: 4
            }
        ));
    }

    #[test]
    fn probe_with_always_no() {
        let gw = Gateway::mock(MockConfig {
            default_response: Some("NO".into()),
            ..MockConfig::default()
        });
        let docs: Vec<Document> = (0..5)
            .map(|i| Document::new(format!("d{i}"), "text").with_labels(vec!["a".into()]))
            .collect();
        let report = probe_dominance(&docs, 5, 1, &PromptTemplate::probe(), &gw).unwrap();
        assert_eq!(report.percent_dominant, 0.0);
        let unlabeled = vec![Document::new("x", "text")];
        assert!(matches!(
            probe_dominance(&unlabeled, 1, 1, &PromptTemplate::probe(), &gw),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn probe_counts_fixture_answers() {
        let template = PromptTemplate::probe();
        let docs: Vec<Document> = (0..10)
            .map(|i| {
                Document::new(format!("d{i}"), format!("document number {i}"))
                    .with_labels(vec![format!("topic {i}"), "misc".into()])
            })
            .collect();
        let mut config = MockConfig {
            default_response: Some("NO".into()),
            ..MockConfig::default()
        };
        // 9 of 10 documents: the model names the first gold label
        for doc in &docs[..9] {
            let req = probe_request(doc, &template).unwrap();
            config.fixtures.insert(
                req.digest(),
                format!(
                    "The dominant label is '{}'.",
                    doc.gold_labels.as_ref().unwrap()[0]
                ),
            );
        }
        let gw = Gateway::mock(config);
        let report = probe_dominance(&docs, 10, 3, &template, &gw).unwrap();
        assert_eq!(report.sampled, 10);
        assert_eq!(report.dominant, 9);
        assert!((report.percent_dominant - 0.9).abs() < 1e-12);
        assert_eq!(report.per_label_dominant_counts.get("topic 0"), Some(&1));
        assert_eq!(report.per_label_dominant_counts.get("misc"), None);
    }

    #[test]
    fn template_file_format() {
        let t = PromptTemplate::parse("sys line\n---\nuser {chunk}\n").unwrap();
        assert_eq!(t.system, "sys line");
        assert_eq!(t.render(&[("chunk", "abc")]).user_prompt, "user abc");
        assert!(PromptTemplate::parse("no separator").is_none());
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_phrase(&s);
            prop_assert_eq!(normalize_phrase(&once), once.clone());
        }

        #[test]
        fn frequency_index_is_conserved(texts in proptest::collection::vec("[a-d]{1,2}", 0..60)) {
            let entries: Vec<Keyphrase> = texts.iter().enumerate().map(|(i, t)| Keyphrase {
                text: t.clone(),
                doc_id: format!("d{}", i % 7),
                chunk_index: i % 3,
                granularity: Granularity::Unspecified,
            }).collect();
            let set = KeyphraseSet::from_entries(entries);
            prop_assert_eq!(set.frequencies().values().sum::<usize>(), set.len());
            prop_assert!(set.is_consistent());
        }
    }
}
