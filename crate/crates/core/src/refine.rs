//! Iterative growth of the label space with long-tail labels.
//!
//! Each iteration classifies the corpus, picks the chunks whose best label
//! scores lowest, promotes frequent keyphrases from those chunks that are far
//! from every existing label, prunes labels nobody picks and freezes the most
//! picked ones. Frozen labels are reactivated when the loop ends.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{classify, Classification, HypothesisTemplates, InstanceTop};
use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::keyphrase::KeyphraseSet;
use crate::labelspace::{LabelId, LabelSpace, LabelStatus, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub subset_size: usize,
    pub keyphrase_min_count: usize,
    pub longtail_fraction: f64,
    pub iterations: usize,
    pub freeze_fraction: f64,
    pub min_support: usize,
    pub max_ranks: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            subset_size: 1000,
            keyphrase_min_count: 15,
            longtail_fraction: 0.01,
            iterations: 3,
            freeze_fraction: 0.25,
            min_support: 1,
            max_ranks: crate::classifier::DEFAULT_MAX_RANKS,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subset_size == 0 {
            warn!("refine subset_size is 0; no chunks will be examined");
        }
        if self.keyphrase_min_count == 0 {
            return Err(Error::Config(
                "keyphrase_min_count must be at least 1".into(),
            ));
        }
        if !(self.longtail_fraction > 0.0 && self.longtail_fraction < 1.0) {
            return Err(Error::Config(format!(
                "longtail_fraction {} must be in (0, 1)",
                self.longtail_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.freeze_fraction) {
            return Err(Error::Config(format!(
                "freeze_fraction {} must be in [0, 1]",
                self.freeze_fraction
            )));
        }
        if self.max_ranks == 0 {
            return Err(Error::Config("max_ranks must be at least 1".into()));
        }
        Ok(())
    }
}

/// Instance ids of the `subset_size` chunks with the lowest top score, ties
/// by instance id. Clamped to the number of chunks available.
pub fn select_low_confidence(tops: &[&InstanceTop], subset_size: usize) -> Vec<String> {
    if subset_size > tops.len() {
        warn!(
            "subset size {subset_size} exceeds the {} chunks available; using all",
            tops.len()
        );
    }
    let mut order: Vec<&&InstanceTop> = tops.iter().collect();
    order.sort_by(|a, b| {
        a.top_score()
            .total_cmp(&b.top_score())
            .then_with(|| a.instance_id.cmp(&b.instance_id))
    });
    order
        .into_iter()
        .take(subset_size)
        .map(|t| t.instance_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaThreshold {
    pub value: f64,
    pub candidate_count: usize,
    /// (candidate keyphrase, max similarity to any live label), by keyphrase.
    pub max_similarities: Vec<(String, f64)>,
    pub digest: String,
}

/// Lower median: the element at index (n - 1) / 2 of the sorted list.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Unique keyphrases occurring in fewer than `fraction * |P|` entries.
pub fn gamma_candidates(set: &KeyphraseSet, fraction: f64) -> Vec<String> {
    let limit = fraction * set.len() as f64;
    set.frequencies()
        .iter()
        .filter(|(_, &n)| (n as f64) < limit)
        .map(|(t, _)| t.clone())
        .collect()
}

pub fn gamma_from_similarities(mut max_similarities: Vec<(String, f64)>) -> Result<GammaThreshold> {
    max_similarities.sort_by(|a, b| a.0.cmp(&b.0));
    let values: Vec<f64> = max_similarities.iter().map(|(_, s)| *s).collect();
    let value = lower_median(&values)
        .ok_or_else(|| Error::GammaUndefined("no candidate keyphrases".into()))?;
    let mut h = Sha256::new();
    for (t, s) in &max_similarities {
        h.update(t.as_bytes());
        h.update([0]);
        h.update(s.to_le_bytes());
    }
    Ok(GammaThreshold {
        value,
        candidate_count: max_similarities.len(),
        max_similarities,
        digest: hex::encode(h.finalize()),
    })
}

pub fn compute_gamma(
    set: &KeyphraseSet,
    space: &LabelSpace,
    fraction: f64,
    similarity: &Gateway,
) -> Result<GammaThreshold> {
    let candidates = gamma_candidates(set, fraction);
    if candidates.is_empty() {
        return Err(Error::GammaUndefined(format!(
            "no keyphrase occurs in fewer than {fraction} of {} entries",
            set.len()
        )));
    }
    let names: Vec<String> = space.live().map(|l| l.name.clone()).collect();
    if names.is_empty() {
        return Err(Error::Precondition(
            "gamma needs at least one live label".into(),
        ));
    }
    let sims = similarity.similarity_matrix(&candidates, &names)?;
    gamma_from_similarities(
        candidates
            .into_iter()
            .zip(sims)
            .map(|(c, row)| (c, row.into_iter().fold(f64::NEG_INFINITY, f64::max)))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub label_id: LabelId,
    pub text: String,
    pub frequency: usize,
    /// Max similarity to the live labels at promotion time.
    pub max_similarity: f64,
    pub gamma: f64,
}

/// Promotes keyphrases found in the `low_confidence` chunks. A keyphrase
/// qualifies when its frequency exceeds `min_count`, it is not already a live
/// label, and its similarity to every live label is below `gamma`.
/// Candidates are tried by descending frequency then text, and each promoted
/// label counts as existing for later candidates.
pub fn promote_keyphrases(
    low_confidence: &[String],
    set: &KeyphraseSet,
    space: &mut LabelSpace,
    gamma: f64,
    min_count: usize,
    similarity: &mut dyn FnMut(&str, &str) -> Result<f64>,
) -> Result<Vec<Promotion>> {
    let wanted: HashSet<&str> = low_confidence.iter().map(String::as_str).collect();
    let mut texts: Vec<&str> = set
        .entries()
        .iter()
        .filter(|k| wanted.contains(format!("chunk:{}:{}", k.doc_id, k.chunk_index).as_str()))
        .map(|k| k.text.as_str())
        .collect();
    texts.sort_unstable();
    texts.dedup();
    texts.sort_by(|a, b| set.frequency(b).cmp(&set.frequency(a)).then(a.cmp(b)));

    let mut out = Vec::new();
    for text in texts {
        let frequency = set.frequency(text);
        if frequency <= min_count || space.find_live(text).is_some() {
            continue;
        }
        let names: Vec<String> = space.live().map(|l| l.name.clone()).collect();
        let mut max_similarity = f64::NEG_INFINITY;
        for n in &names {
            max_similarity = max_similarity.max(similarity(text, n)?);
        }
        if max_similarity < gamma {
            let label_id = space.add_label(text, Provenance::RefinePromotion)?;
            out.push(Promotion {
                label_id,
                text: text.to_string(),
                frequency,
                max_similarity,
                gamma,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub removed: Vec<LabelId>,
    pub frozen: Vec<LabelId>,
    pub support: BTreeMap<LabelId, usize>,
    /// Set when removal was skipped because it would empty the space.
    pub removal_aborted: bool,
}

/// Support of a label is the number of instances whose top label it is.
/// Active labels below `min_support` are removed unless that would leave no
/// live label; then the top `floor(freeze_fraction * live)` labels by
/// (support desc, id asc) are frozen.
pub fn prune_and_freeze(
    space: &mut LabelSpace,
    tops: &[&InstanceTop],
    freeze_fraction: f64,
    min_support: usize,
) -> Result<PruneReport> {
    let mut report = PruneReport::default();
    for l in space.live() {
        report.support.insert(l.id, 0);
    }
    for t in tops {
        if let Some(n) = report.support.get_mut(&t.top()) {
            *n += 1;
        }
    }
    let doomed: Vec<LabelId> = space
        .with_status(LabelStatus::Active)
        .filter(|l| report.support[&l.id] < min_support)
        .map(|l| l.id)
        .collect();
    if !doomed.is_empty() && doomed.len() == space.live_count() {
        warn!("pruning would remove every label; skipping removal");
        report.removal_aborted = true;
    } else {
        for &id in &doomed {
            space.remove(id)?;
        }
        report.removed = doomed;
    }

    let mut ranked: Vec<(LabelId, usize)> = space
        .live()
        .map(|l| (l.id, report.support[&l.id]))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let n = (freeze_fraction * ranked.len() as f64).floor() as usize;
    let chosen: Vec<LabelId> = ranked[..n].iter().map(|(id, _)| *id).collect();
    report.frozen = chosen
        .iter()
        .copied()
        .filter(|&id| {
            space
                .get(id)
                .is_some_and(|l| l.status == LabelStatus::Active)
        })
        .collect();
    space.freeze(&chosen)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub added: Vec<LabelId>,
    pub removed: Vec<LabelId>,
    pub frozen: Vec<LabelId>,
    pub low_confidence: usize,
    pub gamma: Option<GammaThreshold>,
    pub promotions: Vec<Promotion>,
    pub coverage: Option<f64>,
    pub version: u64,
}

pub struct RefineInputs<'a> {
    pub chunks: &'a [Chunk],
    pub keyphrases: &'a KeyphraseSet,
    pub templates: &'a HypothesisTemplates,
    pub entailment: &'a Gateway,
    pub similarity: &'a Gateway,
}

pub type CoverageFn<'a> = dyn Fn(&LabelSpace) -> Result<f64> + 'a;

fn run_iteration(
    iteration: usize,
    inputs: &RefineInputs,
    space: &mut LabelSpace,
    config: &RefineConfig,
    coverage: Option<&CoverageFn>,
) -> Result<IterationRecord> {
    let classify_now = |space: &LabelSpace| -> Result<Classification> {
        classify(
            inputs.chunks,
            Some(inputs.keyphrases),
            space,
            inputs.templates,
            inputs.entailment,
            config.max_ranks,
        )
    };
    let mut result = classify_now(space)?;
    let low = select_low_confidence(&result.chunk_tops(), config.subset_size);

    let gamma = match compute_gamma(
        inputs.keyphrases,
        space,
        config.longtail_fraction,
        inputs.similarity,
    ) {
        Ok(g) => Some(g),
        Err(Error::GammaUndefined(_)) => {
            warn!("iteration {iteration}: no long-tail keyphrases; skipping promotion");
            None
        }
        Err(e) => return Err(e),
    };
    let promotions = match &gamma {
        Some(g) => promote_keyphrases(
            &low,
            inputs.keyphrases,
            space,
            g.value,
            config.keyphrase_min_count,
            &mut |a, b| inputs.similarity.similarity(a, b),
        )?,
        None => vec![],
    };
    if !promotions.is_empty() {
        // supports must reflect the labels just added
        result = classify_now(space)?;
    }
    let tops: Vec<&InstanceTop> = result.tops.iter().collect();
    let pruned = prune_and_freeze(space, &tops, config.freeze_fraction, config.min_support)?;
    let coverage = coverage.map(|f| f(space)).transpose()?;
    Ok(IterationRecord {
        iteration,
        added: promotions.iter().map(|p| p.label_id).collect(),
        removed: pruned.removed,
        frozen: pruned.frozen,
        low_confidence: low.len(),
        gamma,
        promotions,
        coverage,
        version: space.version(),
    })
}

/// Runs iterations `start..config.iterations`, appending one record per
/// completed iteration, then reactivates frozen labels. A failing iteration
/// restores the space to its state before that iteration and returns the
/// error; `records` keeps the completed ones so the run can resume.
pub fn run_refinement(
    inputs: &RefineInputs,
    space: &mut LabelSpace,
    config: &RefineConfig,
    start: usize,
    records: &mut Vec<IterationRecord>,
    coverage: Option<&CoverageFn>,
    on_iteration: &mut dyn FnMut(&IterationRecord, &LabelSpace) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    if space.live_count() == 0 {
        return Err(Error::Precondition(
            "refinement needs a non-empty label space".into(),
        ));
    }
    for iteration in start..config.iterations {
        let before = space.clone();
        match run_iteration(iteration, inputs, space, config, coverage) {
            Ok(record) => {
                on_iteration(&record, space)?;
                records.push(record);
            }
            Err(e) => {
                *space = before;
                return Err(e);
            }
        }
    }
    space.unfreeze_all()?;
    Ok(())
}
