//! Review queue for borderline label pairs: each pending pair with a few
//! evidence chunks per side.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::classifier::Prediction;
use crate::corpus::Chunk;
use crate::labelspace::{BorderlinePair, LabelId, LabelSpace};

pub const EVIDENCE_PER_LABEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub instance_id: String,
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub pair: BorderlinePair,
    pub name_a: String,
    pub name_b: String,
    pub evidence_a: Vec<Evidence>,
    pub evidence_b: Vec<Evidence>,
}

fn evidence(chunk: &Chunk) -> Evidence {
    Evidence {
        instance_id: chunk.instance_id(),
        doc_id: chunk.doc_id.clone(),
        text: chunk.text.clone(),
    }
}

/// Chunks supporting a label: chunks of documents predicted with it first,
/// then chunks mentioning the label name. Corpus order, at most `limit`.
pub fn evidence_for(
    space: &LabelSpace,
    id: LabelId,
    chunks: &[Chunk],
    predictions: &[Prediction],
    limit: usize,
) -> Vec<Evidence> {
    let Some(label) = space.get(id) else {
        return vec![];
    };
    let docs: BTreeSet<&str> = predictions
        .iter()
        .filter(|p| p.label_ids.contains(&id))
        .map(|p| p.doc_id.as_str())
        .collect();
    let name = label.name.to_lowercase();
    let mut seen_docs = BTreeSet::new();
    let mut out: Vec<Evidence> = chunks
        .iter()
        .filter(|c| docs.contains(c.doc_id.as_str()) && seen_docs.insert(c.doc_id.as_str()))
        .take(limit)
        .map(evidence)
        .collect();
    for c in chunks {
        if out.len() >= limit {
            break;
        }
        if c.text.to_lowercase().contains(&name)
            && !out.iter().any(|e| e.instance_id == c.instance_id())
        {
            out.push(evidence(c));
        }
    }
    out
}

pub fn review_queue(
    space: &LabelSpace,
    chunks: &[Chunk],
    predictions: &[Prediction],
    per_label: usize,
) -> Vec<ReviewItem> {
    space
        .pending_pairs()
        .map(|p| ReviewItem {
            pair: p.clone(),
            name_a: space
                .get(p.label_a)
                .map(|l| l.name.clone())
                .unwrap_or_default(),
            name_b: space
                .get(p.label_b)
                .map(|l| l.name.clone())
                .unwrap_or_default(),
            evidence_a: evidence_for(space, p.label_a, chunks, predictions, per_label),
            evidence_b: evidence_for(space, p.label_b, chunks, predictions, per_label),
        })
        .collect()
}
