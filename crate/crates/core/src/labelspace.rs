//! Versioned label space.
//!
//! Every change goes through [`LabelSpace::apply`], which validates the
//! mutation, bumps the version by one and appends it to the log. Replaying
//! the log on an empty space reproduces the state exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GenerationRequest};
use crate::keyphrase::{normalize_phrase, DEFAULT_SYSTEM_PROMPT};

pub const HIGH_SIMILARITY: f64 = 0.75;
pub const LOW_SIMILARITY: f64 = 0.5;
pub const MAX_LABEL_WORDS: usize = 6;
pub const SYNTHESIS_RETRIES: usize = 2;

pub type LabelId = u64;
pub type PairId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelStatus {
    Active,
    Frozen,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClusterSynthesis,
    RefinePromotion,
    HumanEdit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: LabelId,
    pub name: String,
    pub status: LabelStatus,
    pub provenance: Provenance,
    pub created_at_version: u64,
}

impl Label {
    pub fn is_live(&self) -> bool {
        self.status != LabelStatus::Removed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Resolution {
    KeepBoth,
    RemoveA,
    RemoveB,
    Rename { target: Side, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairStatus {
    Pending,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorderlinePair {
    pub id: PairId,
    pub label_a: LabelId,
    pub label_b: LabelId,
    pub similarity: f64,
    pub status: PairStatus,
    pub resolution: Option<Resolution>,
    /// Raw judge answer, when a judge was consulted.
    pub judge_opinion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Mutation {
    AddLabel {
        name: String,
        provenance: Provenance,
    },
    SetStatus {
        id: LabelId,
        status: LabelStatus,
    },
    Rename {
        id: LabelId,
        name: String,
    },
    AddPair {
        label_a: LabelId,
        label_b: LabelId,
        similarity: f64,
        judge_opinion: Option<String>,
    },
    ResolvePair {
        pair: PairId,
        resolution: Resolution,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub version: u64,
    #[serde(flatten)]
    pub mutation: Mutation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    labels: Vec<Label>,
    pairs: Vec<BorderlinePair>,
    version: u64,
    log: Vec<LogEntry>,
}

impl LabelSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn pairs(&self) -> &[BorderlinePair] {
        &self.pairs
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn get(&self, id: LabelId) -> Option<&Label> {
        self.labels.get(id as usize)
    }

    pub fn pair(&self, id: PairId) -> Option<&BorderlinePair> {
        self.pairs.get(id as usize)
    }

    /// Active and frozen labels in id order.
    pub fn live(&self) -> impl Iterator<Item = &Label> {
        self.labels.iter().filter(|l| l.is_live())
    }

    pub fn live_count(&self) -> usize {
        self.live().count()
    }

    pub fn with_status(&self, status: LabelStatus) -> impl Iterator<Item = &Label> {
        self.labels.iter().filter(move |l| l.status == status)
    }

    pub fn find_live(&self, name: &str) -> Option<&Label> {
        let norm = normalize_phrase(name);
        self.live().find(|l| l.name == norm)
    }

    pub fn pending_pairs(&self) -> impl Iterator<Item = &BorderlinePair> {
        self.pairs
            .iter()
            .filter(|p| p.status == PairStatus::Pending)
    }

    fn label_checked(&self, id: LabelId) -> Result<&Label> {
        self.get(id)
            .ok_or_else(|| Error::State(format!("no label with id {id}")))
    }

    fn check_name(&self, name: &str, except: Option<LabelId>) -> Result<String> {
        let norm = normalize_phrase(name);
        if norm.is_empty() {
            return Err(Error::Validation(format!("label name {name:?} is empty")));
        }
        if self.live().any(|l| l.name == norm && Some(l.id) != except) {
            return Err(Error::Collision(norm));
        }
        Ok(norm)
    }

    fn check_removable(&self, id: LabelId) -> Result<()> {
        match self.label_checked(id)?.status {
            LabelStatus::Active => Ok(()),
            LabelStatus::Frozen => Err(Error::State(format!("label {id} is frozen"))),
            LabelStatus::Removed => Err(Error::State(format!("label {id} is already removed"))),
        }
    }

    fn validate(&self, m: &Mutation) -> Result<Mutation> {
        Ok(match m {
            Mutation::AddLabel { name, provenance } => Mutation::AddLabel {
                name: self.check_name(name, None)?,
                provenance: *provenance,
            },
            Mutation::SetStatus { id, status } => {
                let label = self.label_checked(*id)?;
                match (label.status, status) {
                    (_, LabelStatus::Removed) => self.check_removable(*id)?,
                    (LabelStatus::Removed, _) => {
                        return Err(Error::State(format!("label {id} is removed")))
                    }
                    _ => {}
                }
                m.clone()
            }
            Mutation::Rename { id, name } => {
                if !self.label_checked(*id)?.is_live() {
                    return Err(Error::State(format!("label {id} is removed")));
                }
                Mutation::Rename {
                    id: *id,
                    name: self.check_name(name, Some(*id))?,
                }
            }
            Mutation::AddPair {
                label_a, label_b, ..
            } => {
                self.label_checked(*label_a)?;
                self.label_checked(*label_b)?;
                if label_a == label_b {
                    return Err(Error::Validation("a pair needs two distinct labels".into()));
                }
                m.clone()
            }
            Mutation::ResolvePair { pair, resolution } => {
                let p = self
                    .pair(*pair)
                    .ok_or_else(|| Error::State(format!("no pair with id {pair}")))?;
                if p.status != PairStatus::Pending {
                    return Err(Error::State(format!("pair {pair} is already resolved")));
                }
                let resolution = match resolution {
                    Resolution::KeepBoth => Resolution::KeepBoth,
                    Resolution::RemoveA => {
                        self.check_removable(p.label_a)?;
                        Resolution::RemoveA
                    }
                    Resolution::RemoveB => {
                        self.check_removable(p.label_b)?;
                        Resolution::RemoveB
                    }
                    Resolution::Rename { target, name } => {
                        let id = match target {
                            Side::A => p.label_a,
                            Side::B => p.label_b,
                        };
                        if !self.label_checked(id)?.is_live() {
                            return Err(Error::State(format!("label {id} is removed")));
                        }
                        Resolution::Rename {
                            target: *target,
                            name: self.check_name(name, Some(id))?,
                        }
                    }
                };
                Mutation::ResolvePair {
                    pair: *pair,
                    resolution,
                }
            }
        })
    }

    /// Validates and applies one mutation. On error nothing changes.
    pub fn apply(&mut self, mutation: Mutation) -> Result<u64> {
        let m = self.validate(&mutation)?;
        self.version += 1;
        let version = self.version;
        match &m {
            Mutation::AddLabel { name, provenance } => self.labels.push(Label {
                id: self.labels.len() as LabelId,
                name: name.clone(),
                status: LabelStatus::Active,
                provenance: *provenance,
                created_at_version: version,
            }),
            Mutation::SetStatus { id, status } => self.labels[*id as usize].status = *status,
            Mutation::Rename { id, name } => self.labels[*id as usize].name = name.clone(),
            Mutation::AddPair {
                label_a,
                label_b,
                similarity,
                judge_opinion,
            } => self.pairs.push(BorderlinePair {
                id: self.pairs.len() as PairId,
                label_a: *label_a,
                label_b: *label_b,
                similarity: *similarity,
                status: PairStatus::Pending,
                resolution: None,
                judge_opinion: judge_opinion.clone(),
            }),
            Mutation::ResolvePair { pair, resolution } => {
                let (a, b) = {
                    let p = &self.pairs[*pair as usize];
                    (p.label_a, p.label_b)
                };
                match resolution {
                    Resolution::KeepBoth => {}
                    Resolution::RemoveA => self.labels[a as usize].status = LabelStatus::Removed,
                    Resolution::RemoveB => self.labels[b as usize].status = LabelStatus::Removed,
                    Resolution::Rename { target, name } => {
                        let id = if *target == Side::A { a } else { b };
                        self.labels[id as usize].name = name.clone();
                    }
                }
                let p = &mut self.pairs[*pair as usize];
                p.status = PairStatus::Resolved;
                p.resolution = Some(resolution.clone());
            }
        }
        self.log.push(LogEntry {
            version,
            mutation: m,
        });
        Ok(version)
    }

    pub fn add_label(&mut self, name: &str, provenance: Provenance) -> Result<LabelId> {
        self.apply(Mutation::AddLabel {
            name: name.to_string(),
            provenance,
        })?;
        Ok(self.labels.len() as LabelId - 1)
    }

    pub fn remove(&mut self, id: LabelId) -> Result<()> {
        self.apply(Mutation::SetStatus {
            id,
            status: LabelStatus::Removed,
        })
        .map(drop)
    }

    pub fn rename(&mut self, id: LabelId, name: &str) -> Result<()> {
        self.apply(Mutation::Rename {
            id,
            name: name.to_string(),
        })
        .map(drop)
    }

    pub fn add_pair(
        &mut self,
        label_a: LabelId,
        label_b: LabelId,
        similarity: f64,
        judge_opinion: Option<String>,
    ) -> Result<PairId> {
        self.apply(Mutation::AddPair {
            label_a,
            label_b,
            similarity,
            judge_opinion,
        })?;
        Ok(self.pairs.len() as PairId - 1)
    }

    pub fn apply_resolution(&mut self, pair: PairId, resolution: Resolution) -> Result<u64> {
        self.apply(Mutation::ResolvePair { pair, resolution })
    }

    /// Freezes the given labels. Already-frozen labels are left alone; a
    /// removed label fails the whole call before anything changes.
    pub fn freeze(&mut self, ids: &[LabelId]) -> Result<()> {
        for &id in ids {
            if self.label_checked(id)?.status == LabelStatus::Removed {
                return Err(Error::State(format!("cannot freeze removed label {id}")));
            }
        }
        for &id in ids {
            if self.labels[id as usize].status == LabelStatus::Active {
                self.apply(Mutation::SetStatus {
                    id,
                    status: LabelStatus::Frozen,
                })?;
            }
        }
        Ok(())
    }

    pub fn unfreeze_all(&mut self) -> Result<usize> {
        let frozen: Vec<LabelId> = self
            .with_status(LabelStatus::Frozen)
            .map(|l| l.id)
            .collect();
        for &id in &frozen {
            self.apply(Mutation::SetStatus {
                id,
                status: LabelStatus::Active,
            })?;
        }
        Ok(frozen.len())
    }

    pub fn replay(log: &[LogEntry]) -> Result<Self> {
        let mut space = LabelSpace::new();
        for entry in log {
            let v = space.apply(entry.mutation.clone())?;
            if v != entry.version {
                return Err(Error::State(format!(
                    "log entry claims version {}, replay produced {v}",
                    entry.version
                )));
            }
        }
        Ok(space)
    }

    /// State as of `version`, rebuilt from the log prefix.
    pub fn at_version(&self, version: u64) -> Result<Self> {
        let prefix: Vec<LogEntry> = self
            .log
            .iter()
            .take_while(|e| e.version <= version)
            .cloned()
            .collect();
        Self::replay(&prefix)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(body: &str) -> Result<Self> {
        let space: LabelSpace = serde_json::from_str(body)?;
        let replayed = Self::replay(&space.log)?;
        if replayed != space {
            return Err(Error::Validation(
                "label space state does not match its mutation log".into(),
            ));
        }
        Ok(space)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&body)
    }

    /// Newline-separated names of active and frozen labels.
    pub fn export_active(&self) -> String {
        self.live().map(|l| format!("{}\n", l.name)).collect()
    }

    /// Space containing only the given names, all active.
    pub fn from_names<S: AsRef<str>>(names: &[S], provenance: Provenance) -> Result<Self> {
        let mut space = LabelSpace::new();
        for n in names {
            space.add_label(n.as_ref(), provenance)?;
        }
        Ok(space)
    }
}

/// Reduces a free-form label answer to a label name: first non-empty line,
/// text after the last colon, normalized, at most [`MAX_LABEL_WORDS`] words.
pub fn normalize_label_response(response: &str) -> Option<String> {
    let line = response.lines().find(|l| !l.trim().is_empty())?;
    let tail = line.rsplit(':').next().unwrap_or(line);
    let norm = normalize_phrase(tail);
    let words = norm.split_whitespace().count();
    (1..=MAX_LABEL_WORDS).contains(&words).then_some(norm)
}

const SYNTHESIS_USER_TEMPLATE: &str = "\
{document}

Please find one label for this document. Only return the label.";

const SYNTHESIS_RETRY_SUFFIX: &str =
    "\nThe label must be a short phrase of at most six words. (attempt {attempt})";

pub fn synthesis_request(exemplars: &[Chunk], attempt: usize) -> GenerationRequest {
    let document = exemplars
        .iter()
        .map(|c| c.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let mut user = SYNTHESIS_USER_TEMPLATE.replace("{document}", &document);
    if attempt > 0 {
        user.push_str(&SYNTHESIS_RETRY_SUFFIX.replace("{attempt}", &attempt.to_string()));
    }
    GenerationRequest::new(DEFAULT_SYSTEM_PROMPT, user)
}

/// Prompts for one label describing the concatenated exemplar chunks, which
/// are used in the order given. Retries up to [`SYNTHESIS_RETRIES`] times on
/// empty or over-long answers.
pub fn synthesize_label(exemplars: &[Chunk], gateway: &Gateway) -> Result<String> {
    if exemplars.is_empty() || exemplars.len() > 3 {
        return Err(Error::Precondition(format!(
            "label synthesis takes 1 to 3 exemplar chunks, got {}",
            exemplars.len()
        )));
    }
    let mut last = String::new();
    for attempt in 0..=SYNTHESIS_RETRIES {
        let response = gateway.generate(&synthesis_request(exemplars, attempt))?;
        if let Some(name) = normalize_label_response(&response) {
            return Ok(name);
        }
        last = response;
    }
    Err(Error::Unparseable(format!(
        "no usable label after {} attempts; last answer {:?}",
        SYNTHESIS_RETRIES + 1,
        last
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisOutcome {
    Added(LabelId),
    Duplicate(LabelId),
}

pub fn synthesize_into(
    space: &mut LabelSpace,
    exemplars: &[Chunk],
    gateway: &Gateway,
) -> Result<SynthesisOutcome> {
    let name = synthesize_label(exemplars, gateway)?;
    if let Some(existing) = space.find_live(&name) {
        return Ok(SynthesisOutcome::Duplicate(existing.id));
    }
    Ok(SynthesisOutcome::Added(
        space.add_label(&name, Provenance::ClusterSynthesis)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalPolicy {
    /// Keep the older label of a redundant pair.
    #[default]
    LaterCreated,
    EarlierCreated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub high_threshold: f64,
    pub low_threshold: f64,
    pub policy: RemovalPolicy,
    pub auto_judge: bool,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            high_threshold: HIGH_SIMILARITY,
            low_threshold: LOW_SIMILARITY,
            policy: RemovalPolicy::LaterCreated,
            auto_judge: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub auto_removed: Vec<LabelId>,
    pub judged_removed: Vec<LabelId>,
    pub pairs: Vec<PairId>,
    pub judge_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JudgeVerdict {
    Keep,
    Remove(Side),
    Unclear,
}

const JUDGE_SYSTEM_PROMPT: &str =
    "You are an expert in text classification, with specialized skills in discerning matching pairs for labels.";

const DEDUP_JUDGE_TEMPLATE: &str = "\
Label pair: '{a}' and '{b}'.
Do label pairs have similar meanings in the text classification problem? If Yes, please output the label that we should delete. If No, please output No.";

pub fn dedup_judge_request(a: &str, b: &str) -> GenerationRequest {
    GenerationRequest::new(
        JUDGE_SYSTEM_PROMPT,
        DEDUP_JUDGE_TEMPLATE.replace("{a}", a).replace("{b}", b),
    )
}

/// Reads a dedup judge answer. "Yes" with exactly one of the names picks that
/// label; a bare "Yes" falls back to `policy`; a bare name counts as yes.
pub fn parse_dedup_verdict(
    response: &str,
    a: &str,
    b: &str,
    policy: RemovalPolicy,
) -> JudgeVerdict {
    let norm = normalize_phrase(response);
    let mentions = |name: &str| {
        let padded = format!(
            " {} ",
            norm.replace(|c: char| !c.is_alphanumeric() && c != '_', " ")
        );
        padded.contains(&format!(" {name} "))
    };
    let (has_a, has_b) = (mentions(a), mentions(b));
    let named = match (has_a, has_b) {
        (true, false) => Some(Side::A),
        (false, true) => Some(Side::B),
        _ => None,
    };
    let first = norm
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("");
    match first {
        "yes" => JudgeVerdict::Remove(named.unwrap_or(match policy {
            RemovalPolicy::LaterCreated => Side::B,
            RemovalPolicy::EarlierCreated => Side::A,
        })),
        "no" => JudgeVerdict::Keep,
        _ => match named {
            Some(side) if norm == a || norm == b => JudgeVerdict::Remove(side),
            _ => JudgeVerdict::Unclear,
        },
    }
}

/// Removes redundant labels. Active labels are scanned in ascending
/// (id_a, id_b) order and removals take effect immediately. Pairs at or above
/// the high threshold lose one label per `policy`; pairs in the
/// [low, high) band go to the judge when one is given and auto-judging is on,
/// otherwise they are queued as pending pairs.
pub fn deduplicate(
    space: &mut LabelSpace,
    similarity: &Gateway,
    judge: Option<&Gateway>,
    config: &DedupConfig,
) -> Result<DedupReport> {
    let active: Vec<Label> = space.with_status(LabelStatus::Active).cloned().collect();
    let mut report = DedupReport::default();
    if active.len() < 2 {
        return Ok(report);
    }
    let names: Vec<String> = active.iter().map(|l| l.name.clone()).collect();
    let sims = similarity.similarity_matrix(&names, &names)?;
    let judge = judge.filter(|_| config.auto_judge);

    for i in 0..active.len() {
        for j in i + 1..active.len() {
            let (a, b) = (&active[i], &active[j]);
            if !space
                .get(a.id)
                .is_some_and(|l| l.status == LabelStatus::Active)
                || !space
                    .get(b.id)
                    .is_some_and(|l| l.status == LabelStatus::Active)
            {
                continue;
            }
            if space
                .pairs()
                .iter()
                .any(|p| p.label_a == a.id && p.label_b == b.id)
            {
                continue;
            }
            let sim = sims[i][j];
            if sim >= config.high_threshold {
                let victim = match config.policy {
                    RemovalPolicy::LaterCreated => b.id,
                    RemovalPolicy::EarlierCreated => a.id,
                };
                space.remove(victim)?;
                report.auto_removed.push(victim);
            } else if sim >= config.low_threshold {
                match judge {
                    Some(gw) => {
                        report.judge_calls += 1;
                        let answer = gw.generate(&dedup_judge_request(&a.name, &b.name))?;
                        let verdict = parse_dedup_verdict(&answer, &a.name, &b.name, config.policy);
                        let pair = space.add_pair(a.id, b.id, sim, Some(answer))?;
                        report.pairs.push(pair);
                        match verdict {
                            JudgeVerdict::Keep => {
                                space.apply_resolution(pair, Resolution::KeepBoth)?;
                            }
                            JudgeVerdict::Remove(side) => {
                                space.apply_resolution(
                                    pair,
                                    match side {
                                        Side::A => Resolution::RemoveA,
                                        Side::B => Resolution::RemoveB,
                                    },
                                )?;
                                report.judged_removed.push(if side == Side::A {
                                    a.id
                                } else {
                                    b.id
                                });
                            }
                            JudgeVerdict::Unclear => {}
                        }
                    }
                    None => report.pairs.push(space.add_pair(a.id, b.id, sim, None)?),
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockConfig;
    use proptest::prelude::*;

    fn space(names: &[&str]) -> LabelSpace {
        LabelSpace::from_names(names, Provenance::ClusterSynthesis).unwrap()
    }

    fn fixed_vectors(pairs: &[(&str, Vec<f64>)]) -> Gateway {
        let mut config = MockConfig::default();
        for (text, v) in pairs {
            config.vectors.insert(text.to_string(), v.clone());
        }
        Gateway::mock(config)
    }

    /// Unit vectors in the plane with the requested cosine to (1, 0).
    fn at_cos(c: f64) -> Vec<f64> {
        vec![c, (1.0 - c * c).sqrt()]
    }

    #[test]
    fn label_response_normalization() {
        assert_eq!(
            normalize_label_response("The label is: Sports.").as_deref(),
            Some("sports")
        );
        assert_eq!(
            normalize_label_response("\n  \"Monetary Policy\"\nextra").as_deref(),
            Some("monetary policy")
        );
        assert_eq!(normalize_label_response("   "), None);
        assert_eq!(
            normalize_label_response("one two three four five six seven"),
            None
        );
    }

    #[test]
    fn synthesis_uses_fixture_and_keeps_chunk_order() {
        let chunks: Vec<Chunk> = ["first text", "second text", "third text"]
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk {
                doc_id: format!("d{i}"),
                index: 0,
                text: t.to_string(),
                token_count: 2,
            })
            .collect();
        let req = synthesis_request(&chunks, 0);
        let p = &req.user_prompt;
        let (i1, i2, i3) = (
            p.find("first text").unwrap(),
            p.find("second text").unwrap(),
            p.find("third text").unwrap(),
        );
        assert!(i1 < i2 && i2 < i3);

        let mut config = MockConfig::default();
        config
            .fixtures
            .insert(req.digest(), "monetary policy".into());
        let gw = Gateway::mock(config);
        let mut s = LabelSpace::new();
        assert_eq!(
            synthesize_into(&mut s, &chunks, &gw).unwrap(),
            SynthesisOutcome::Added(0)
        );
        assert_eq!(s.get(0).unwrap().name, "monetary policy");
        assert_eq!(s.get(0).unwrap().status, LabelStatus::Active);
        assert_eq!(
            synthesize_into(&mut s, &chunks, &gw).unwrap(),
            SynthesisOutcome::Duplicate(0)
        );
    }

    #[test]
    fn synthesis_gives_up_after_retries() {
        let gw = Gateway::mock(MockConfig {
            default_response: Some("a b c d e f g h".into()),
            ..MockConfig::default()
        });
        let chunk = Chunk {
            doc_id: "d".into(),
            index: 0,
            text: "x".into(),
            token_count: 1,
        };
        assert!(matches!(
            synthesize_label(&[chunk], &gw),
            Err(Error::Unparseable(_))
        ));
        assert_eq!(gw.stats().backend_calls, 3);
    }

    #[test]
    fn high_similarity_pair_loses_later_label() {
        // token-bag mock: cos("machine learning", "deep machine learning") = 2/sqrt(6) ~ 0.816
        let gw = Gateway::mock(MockConfig::default());
        let sim = gw
            .similarity("machine learning", "deep machine learning")
            .unwrap();
        assert!(sim > HIGH_SIMILARITY, "sim was {sim}");
        let mut s = space(&["machine learning", "deep machine learning"]);
        let report = deduplicate(&mut s, &gw, None, &DedupConfig::default()).unwrap();
        assert_eq!(report.auto_removed, vec![1]);
        assert_eq!(s.get(0).unwrap().status, LabelStatus::Active);
        assert_eq!(s.get(1).unwrap().status, LabelStatus::Removed);
    }

    #[test]
    fn band_pair_is_queued_without_judge() {
        let gw = fixed_vectors(&[
            ("health_care", at_cos(1.0)),
            ("health_personal_care", at_cos(0.6)),
            ("zoology", vec![-1.0, 0.0]),
        ]);
        let mut s = space(&["health_care", "health_personal_care", "zoology"]);
        let config = DedupConfig {
            auto_judge: false,
            ..DedupConfig::default()
        };
        let report = deduplicate(&mut s, &gw, Some(&gw), &config).unwrap();
        assert_eq!(report.pairs, vec![0]);
        assert_eq!(report.judge_calls, 0);
        let pair = s.pair(0).unwrap();
        assert_eq!((pair.label_a, pair.label_b), (0, 1));
        assert!((pair.similarity - 0.6).abs() < 1e-12);
        assert_eq!(pair.status, PairStatus::Pending);
        assert_eq!(s.live_count(), 3);
    }

    #[test]
    fn judge_verdicts() {
        let vectors = fixed_vectors(&[("alpha", at_cos(1.0)), ("beta", at_cos(0.6))]);
        for (answer, expect_removed, pending) in [
            ("No", None, false),
            ("Yes. Delete 'alpha'.", Some(0), false),
            ("Yes", Some(1), false),
            ("hmm, hard to say", None, true),
        ] {
            let judge = Gateway::mock(MockConfig {
                default_response: Some(answer.into()),
                ..MockConfig::default()
            });
            let mut s = space(&["alpha", "beta"]);
            let report =
                deduplicate(&mut s, &vectors, Some(&judge), &DedupConfig::default()).unwrap();
            assert_eq!(report.judge_calls, 1, "{answer}");
            assert_eq!(
                report.judged_removed.first().copied(),
                expect_removed,
                "{answer}"
            );
            assert_eq!(
                s.pair(0).unwrap().status == PairStatus::Pending,
                pending,
                "{answer}"
            );
        }
    }

    #[test]
    fn low_similarity_is_untouched() {
        let gw = fixed_vectors(&[("a", at_cos(1.0)), ("b", at_cos(0.49))]);
        let mut s = space(&["a", "b"]);
        let report = deduplicate(&mut s, &gw, None, &DedupConfig::default()).unwrap();
        assert_eq!(report, DedupReport::default());
        assert!(s.pairs().is_empty());
    }

    #[test]
    fn resolutions() {
        let mut s = space(&["x", "y", "z"]);
        let p = s.add_pair(0, 1, 0.6, None).unwrap();
        let v = s.version();
        s.apply_resolution(p, Resolution::RemoveB).unwrap();
        assert_eq!(s.version(), v + 1);
        assert_eq!(s.get(1).unwrap().status, LabelStatus::Removed);
        assert_eq!(s.get(0).unwrap().status, LabelStatus::Active);
        assert!(matches!(
            s.apply_resolution(p, Resolution::KeepBoth),
            Err(Error::State(_))
        ));

        let q = s.add_pair(0, 2, 0.55, None).unwrap();
        let before = s.clone();
        let err = s
            .apply_resolution(
                q,
                Resolution::Rename {
                    target: Side::B,
                    name: "X".into(),
                },
            )
            .unwrap_err();
        assert!(matches!(err, Error::Collision(n) if n == "x"));
        assert_eq!(s, before);
        s.apply_resolution(q, Resolution::KeepBoth).unwrap();
        assert_eq!(s.live_count(), 2);
        assert_eq!(s.pair(q).unwrap().resolution, Some(Resolution::KeepBoth));
    }

    #[test]
    fn freeze_contract() {
        let mut s = space(&["a", "b", "c", "d", "e"]);
        s.freeze(&[0, 1, 2, 3]).unwrap();
        let v = s.version();
        s.freeze(&[0, 1]).unwrap();
        assert_eq!(s.version(), v, "freeze is idempotent");
        assert!(matches!(s.remove(0), Err(Error::State(_))));
        s.remove(4).unwrap();
        assert!(matches!(s.freeze(&[4]), Err(Error::State(_))));
        assert_eq!(s.unfreeze_all().unwrap(), 4);
        assert_eq!(s.with_status(LabelStatus::Frozen).count(), 0);
    }

    #[test]
    fn names_stay_unique_and_removed_names_are_reusable() {
        let mut s = space(&["Sports"]);
        assert!(matches!(
            s.add_label(" sports ", Provenance::HumanEdit),
            Err(Error::Collision(_))
        ));
        s.remove(0).unwrap();
        assert_eq!(
            s.add_label("sports", Provenance::RefinePromotion).unwrap(),
            1
        );
        assert_eq!(s.export_active(), "sports\n");
    }

    #[test]
    fn json_roundtrip_checks_log() {
        let mut s = space(&["a", "b"]);
        s.freeze(&[1]).unwrap();
        let back = LabelSpace::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        let mut value: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        value["labels"][1]["status"] = "removed".into();
        assert!(LabelSpace::from_json(&value.to_string()).is_err());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Add(u8),
        Remove(u8),
        Rename(u8, u8),
        Freeze(u8),
        Unfreeze,
        Pair(u8, u8),
        Resolve(u8, u8),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u8..12).prop_map(Op::Add),
            (0u8..12).prop_map(Op::Remove),
            (0u8..12, 0u8..12).prop_map(|(a, b)| Op::Rename(a, b)),
            (0u8..12).prop_map(Op::Freeze),
            Just(Op::Unfreeze),
            (0u8..12, 0u8..12).prop_map(|(a, b)| Op::Pair(a, b)),
            (0u8..6, 0u8..4).prop_map(|(a, b)| Op::Resolve(a, b)),
        ]
    }

    proptest! {
        #[test]
        fn replay_reproduces_state(ops in proptest::collection::vec(op(), 0..60)) {
            let mut s = LabelSpace::new();
            let mut versions = vec![];
            for o in ops {
                let _ = match o {
                    Op::Add(n) => s.add_label(&format!("label {n}"), Provenance::ClusterSynthesis).map(drop),
                    Op::Remove(i) => s.remove(i as u64),
                    Op::Rename(i, n) => s.rename(i as u64, &format!("label {n}")),
                    Op::Freeze(i) => s.freeze(&[i as u64]),
                    Op::Unfreeze => s.unfreeze_all().map(drop),
                    Op::Pair(a, b) => s.add_pair(a as u64, b as u64, 0.6, None).map(drop),
                    Op::Resolve(p, r) => s.apply_resolution(p as u64, match r {
                        0 => Resolution::KeepBoth,
                        1 => Resolution::RemoveA,
                        2 => Resolution::RemoveB,
                        _ => Resolution::Rename { target: Side::A, name: format!("renamed {p}") },
                    }).map(drop),
                };
                versions.push(s.version());
                let live: Vec<&str> = s.live().map(|l| l.name.as_str()).collect();
                let mut dedup = live.clone();
                dedup.sort();
                dedup.dedup();
                prop_assert_eq!(dedup.len(), live.len());
            }
            prop_assert!(versions.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(LabelSpace::replay(s.log()).unwrap(), s.clone());
            let mid = s.version() / 2;
            prop_assert_eq!(s.at_version(mid).unwrap().version(), mid);
        }

        #[test]
        fn dedup_never_grows_and_band_needs_judge(
            coords in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 2..8)
        ) {
            let names: Vec<String> = (0..coords.len()).map(|i| format!("l{i}")).collect();
            let mut config = MockConfig::default();
            for (n, (x, y, z)) in names.iter().zip(&coords) {
                config.vectors.insert(n.clone(), vec![*x, *y, *z, 0.05]);
            }
            let gw = Gateway::mock(config);
            let mut s = LabelSpace::from_names(&names, Provenance::ClusterSynthesis).unwrap();
            let before = s.live_count();
            let report = deduplicate(&mut s, &gw, None, &DedupConfig::default()).unwrap();
            prop_assert!(s.live_count() <= before);
            for id in &report.auto_removed {
                // every auto-removal is backed by a pair at or above the high threshold
                let victim = &names[*id as usize];
                let backed = names.iter().any(|other| other != victim
                    && gw.similarity(victim, other).unwrap() >= HIGH_SIMILARITY);
                prop_assert!(backed);
            }
            prop_assert!(report.judged_removed.is_empty());
            for p in s.pairs() {
                prop_assert_eq!(p.status, PairStatus::Pending);
                prop_assert!(p.similarity >= LOW_SIMILARITY && p.similarity < HIGH_SIMILARITY);
            }
        }
    }
}
