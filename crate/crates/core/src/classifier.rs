//! Zero-shot multi-label classification by entailment.
//!
//! Every instance (chunk or keyphrase) is scored against every live label,
//! each instance ranks the labels, and a document's prediction is built by
//! tallying which label sits at each rank position across its instances.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::gateway::{EntailmentQuery, Gateway};
use crate::keyphrase::KeyphraseSet;
use crate::labelspace::{LabelId, LabelSpace};

pub const DEFAULT_HYPOTHESIS: &str = "This example is constructed for {label}";
pub const DEFAULT_MAX_RANKS: usize = 3;
const ROWS_PER_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Chunk,
    Keyphrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub doc_id: String,
    pub kind: InstanceKind,
    pub text: String,
}

/// Chunk instances first, then keyphrase instances, each in input order.
pub fn build_instances(chunks: &[Chunk], keyphrases: Option<&KeyphraseSet>) -> Vec<Instance> {
    let mut out: Vec<Instance> = chunks
        .iter()
        .map(|c| Instance {
            id: c.instance_id(),
            doc_id: c.doc_id.clone(),
            kind: InstanceKind::Chunk,
            text: c.text.clone(),
        })
        .collect();
    if let Some(set) = keyphrases {
        let mut ordinals: HashMap<(&str, usize), usize> = HashMap::new();
        for k in set.entries() {
            let n = ordinals.entry((&k.doc_id, k.chunk_index)).or_insert(0);
            out.push(Instance {
                id: k.instance_id(*n),
                doc_id: k.doc_id.clone(),
                kind: InstanceKind::Keyphrase,
                text: k.text.clone(),
            });
            *n += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTemplates {
    pub chunk: String,
    pub keyphrase: String,
}

impl Default for HypothesisTemplates {
    fn default() -> Self {
        HypothesisTemplates {
            chunk: DEFAULT_HYPOTHESIS.into(),
            keyphrase: DEFAULT_HYPOTHESIS.into(),
        }
    }
}

impl HypothesisTemplates {
    pub fn validate(&self) -> Result<()> {
        for t in [&self.chunk, &self.keyphrase] {
            if !t.contains("{label}") {
                return Err(Error::Config(format!(
                    "hypothesis template {t:?} has no {{label}} placeholder"
                )));
            }
        }
        Ok(())
    }

    pub fn hypothesis(&self, kind: InstanceKind, label: &str) -> String {
        match kind {
            InstanceKind::Chunk => &self.chunk,
            InstanceKind::Keyphrase => &self.keyphrase,
        }
        .replace("{label}", label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentMatrix {
    pub instance_ids: Vec<String>,
    pub label_ids: Vec<LabelId>,
    /// Row per instance, column per label.
    pub scores: Vec<Vec<f64>>,
}

impl EntailmentMatrix {
    pub fn new(
        instance_ids: Vec<String>,
        label_ids: Vec<LabelId>,
        scores: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if scores.len() != instance_ids.len() || scores.iter().any(|r| r.len() != label_ids.len()) {
            return Err(Error::Shape(format!(
                "score matrix does not match {} instances x {} labels",
                instance_ids.len(),
                label_ids.len()
            )));
        }
        if scores.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::Validation("non-finite entailment score".into()));
        }
        Ok(EntailmentMatrix {
            instance_ids,
            label_ids,
            scores,
        })
    }
}

/// Scores every instance against every `(id, name)` label. Rows are
/// submitted in batches; if a batch fails, the error reports how many leading
/// rows completed (those are cached, so a rerun resumes cheaply).
pub fn score_all(
    instances: &[Instance],
    labels: &[(LabelId, String)],
    templates: &HypothesisTemplates,
    gateway: &Gateway,
) -> Result<EntailmentMatrix> {
    if instances.is_empty() || labels.is_empty() {
        return Err(Error::Precondition(format!(
            "scoring needs instances and labels, got {} and {}",
            instances.len(),
            labels.len()
        )));
    }
    templates.validate()?;
    let mut scores = Vec::with_capacity(instances.len());
    for batch in instances.chunks(ROWS_PER_BATCH) {
        let queries: Vec<EntailmentQuery> = batch
            .iter()
            .flat_map(|inst| {
                labels.iter().map(move |(_, name)| {
                    EntailmentQuery::new(inst.text.clone(), templates.hypothesis(inst.kind, name))
                })
            })
            .collect();
        let flat = gateway
            .entail_many(&queries)
            .map_err(|e| Error::PartialMatrix {
                completed_rows: scores.len(),
                source: Box::new(e),
            })?;
        scores.extend(flat.chunks(labels.len()).map(<[f64]>::to_vec));
    }
    EntailmentMatrix::new(
        instances.iter().map(|i| i.id.clone()).collect(),
        labels.iter().map(|(id, _)| *id).collect(),
        scores,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTop {
    pub instance_id: String,
    /// Label ids by descending score, ties by ascending id.
    pub ranking: Vec<LabelId>,
    /// Scores aligned with `ranking`.
    pub scores: Vec<f64>,
}

impl InstanceTop {
    pub fn top(&self) -> LabelId {
        self.ranking[0]
    }

    pub fn top_score(&self) -> f64 {
        self.scores[0]
    }
}

pub fn rank_row(label_ids: &[LabelId], row: &[f64]) -> (Vec<LabelId>, Vec<f64>) {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .total_cmp(&row[a])
            .then(label_ids[a].cmp(&label_ids[b]))
    });
    (
        order.iter().map(|&i| label_ids[i]).collect(),
        order.iter().map(|&i| row[i]).collect(),
    )
}

pub fn top_rank(matrix: &EntailmentMatrix) -> Vec<InstanceTop> {
    matrix
        .instance_ids
        .iter()
        .zip(&matrix.scores)
        .map(|(id, row)| {
            let (ranking, scores) = rank_row(&matrix.label_ids, row);
            InstanceTop {
                instance_id: id.clone(),
                ranking,
                scores,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub labels: Vec<String>,
    pub label_ids: Vec<LabelId>,
    /// Mean score of the selected label at its rank position.
    pub scores: Vec<f64>,
    pub supports: Vec<usize>,
}

/// Rank-position tally. At position r, every not-yet-selected label is
/// counted once per instance that ranks it r-th; the most frequent wins, ties
/// going to the higher mean score at that position and then the lower id.
/// Stops after `max_ranks` positions or at the first position with no
/// eligible label.
pub fn aggregate(doc_id: &str, tops: &[&InstanceTop], max_ranks: usize) -> Result<Prediction> {
    if tops.is_empty() {
        return Err(Error::Precondition(format!(
            "document {doc_id} has no instances to aggregate"
        )));
    }
    let mut pred = Prediction {
        doc_id: doc_id.to_string(),
        labels: vec![],
        label_ids: vec![],
        scores: vec![],
        supports: vec![],
    };
    for r in 0..max_ranks {
        let mut tally: BTreeMap<LabelId, Vec<f64>> = BTreeMap::new();
        for t in tops {
            if let Some(&label) = t.ranking.get(r) {
                if !pred.label_ids.contains(&label) {
                    tally.entry(label).or_default().push(t.scores[r]);
                }
            }
        }
        let mut best: Option<(LabelId, usize, f64)> = None;
        for (label, mut s) in tally {
            // sorted so the mean does not depend on instance order
            s.sort_by(f64::total_cmp);
            let count = s.len();
            let mean = s.iter().sum::<f64>() / count as f64;
            let better = match best {
                None => true,
                Some((_, bc, bm)) => count > bc || (count == bc && mean > bm),
            };
            if better {
                best = Some((label, count, mean));
            }
        }
        let Some((label, count, mean)) = best else {
            break;
        };
        pred.label_ids.push(label);
        pred.supports.push(count);
        pred.scores.push(mean);
    }
    Ok(pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub instances: Vec<Instance>,
    pub matrix: EntailmentMatrix,
    pub tops: Vec<InstanceTop>,
    /// Ordered by doc id.
    pub predictions: Vec<Prediction>,
}

impl Classification {
    /// Top rankings of chunk instances only.
    pub fn chunk_tops(&self) -> Vec<&InstanceTop> {
        self.instances
            .iter()
            .zip(&self.tops)
            .filter(|(i, _)| i.kind == InstanceKind::Chunk)
            .map(|(_, t)| t)
            .collect()
    }

    pub fn predictions_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for p in &self.predictions {
            out.push_str(&serde_json::to_string(p)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn parse_predictions(body: &str) -> Result<Vec<Prediction>> {
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Scores chunks (and keyphrase entries, when given) against the live labels
/// of `space` and aggregates a prediction per document.
pub fn classify(
    chunks: &[Chunk],
    keyphrases: Option<&KeyphraseSet>,
    space: &LabelSpace,
    templates: &HypothesisTemplates,
    gateway: &Gateway,
    max_ranks: usize,
) -> Result<Classification> {
    let labels: Vec<(LabelId, String)> = space.live().map(|l| (l.id, l.name.clone())).collect();
    if labels.is_empty() {
        return Err(Error::Precondition("label space has no live labels".into()));
    }
    if max_ranks == 0 {
        return Err(Error::Config("max_ranks must be at least 1".into()));
    }
    let instances = build_instances(chunks, keyphrases);
    let matrix = score_all(&instances, &labels, templates, gateway)?;
    let tops = top_rank(&matrix);

    let mut groups: BTreeMap<&str, Vec<&InstanceTop>> = BTreeMap::new();
    for (inst, top) in instances.iter().zip(&tops) {
        groups.entry(&inst.doc_id).or_default().push(top);
    }
    let names: HashMap<LabelId, &str> = labels.iter().map(|(i, n)| (*i, n.as_str())).collect();
    let mut predictions = Vec::with_capacity(groups.len());
    for (doc, members) in &groups {
        let mut p = aggregate(doc, members, max_ranks)?;
        p.labels = p.label_ids.iter().map(|id| names[id].to_string()).collect();
        predictions.push(p);
    }
    Ok(Classification {
        instances,
        matrix,
        tops,
        predictions,
    })
}
