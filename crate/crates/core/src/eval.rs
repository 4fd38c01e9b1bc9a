//! Coverage of a ground-truth label set by maximum bipartite matching, and
//! precision at k with exact or coverage-based matching.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::classifier::Prediction;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GenerationRequest};
use crate::keyphrase::normalize_phrase;
use crate::labelspace::{LabelSpace, HIGH_SIMILARITY, LOW_SIMILARITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSource {
    Threshold,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub gt: usize,
    pub pred: usize,
    pub similarity: f64,
    pub source: EdgeSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageGraph {
    pub left: Vec<String>,
    pub right: Vec<String>,
    pub edges: Vec<Edge>,
    pub judge_calls: usize,
}

impl CoverageGraph {
    /// Graph with threshold edges at the given index pairs.
    pub fn from_pairs(left: Vec<String>, right: Vec<String>, pairs: &[(usize, usize)]) -> Self {
        CoverageGraph {
            left,
            right,
            edges: pairs
                .iter()
                .map(|&(gt, pred)| Edge {
                    gt,
                    pred,
                    similarity: 1.0,
                    source: EdgeSource::Threshold,
                })
                .collect(),
            judge_calls: 0,
        }
    }

    /// Sorted, de-duplicated right neighbours of every left node.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![BTreeSet::new(); self.left.len()];
        for e in &self.edges {
            adj[e.gt].insert(e.pred);
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    pub fn has_edge(&self, gt: usize, pred: usize) -> bool {
        self.edges.iter().any(|e| e.gt == gt && e.pred == pred)
    }
}

const JUDGE_SYSTEM_PROMPT: &str =
    "You are an expert in text classification, with specialized skills in discerning matching pairs for labels.";

const MATCH_JUDGE_TEMPLATE: &str = "\
Given that we have established matching pairs such as \"'Machine learning' and 'artificial intelligence'\", \"'Computational Geometry' and 'Algebraic Geometry'\", when using util.dot_score to measure semantic similarity between tokens, would you consider {ground_truth} and {prediction} as a matching pair in a text classification problem?

Please respond with Yes or No.";

pub fn match_judge_request(ground_truth: &str, prediction: &str) -> GenerationRequest {
    GenerationRequest::new(
        JUDGE_SYSTEM_PROMPT,
        MATCH_JUDGE_TEMPLATE
            .replace("{ground_truth}", ground_truth)
            .replace("{prediction}", prediction),
    )
}

fn judged_yes(answer: &str) -> bool {
    normalize_phrase(answer)
        .split(|c: char| !c.is_alphanumeric())
        .next()
        == Some("yes")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub high: f64,
    pub low: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            high: HIGH_SIMILARITY,
            low: LOW_SIMILARITY,
        }
    }
}

/// Scores all gt x pred pairs. Pairs at or above `high` are edges; pairs in
/// `[low, high)` become edges when the judge says yes; with no judge, or when
/// the judge call fails, they are not edges.
pub fn build_coverage_graph(
    gt: &[String],
    pred: &[String],
    similarity: &Gateway,
    judge: Option<&Gateway>,
    thresholds: Thresholds,
) -> Result<CoverageGraph> {
    if gt.is_empty() || pred.is_empty() {
        return Err(Error::Precondition(
            "coverage needs non-empty ground-truth and predicted label lists".into(),
        ));
    }
    let sims = similarity.similarity_matrix(gt, pred)?;
    let mut edges = Vec::new();
    let mut band = Vec::new();
    for (i, row) in sims.iter().enumerate() {
        for (j, &s) in row.iter().enumerate() {
            if s >= thresholds.high {
                edges.push(Edge {
                    gt: i,
                    pred: j,
                    similarity: s,
                    source: EdgeSource::Threshold,
                });
            } else if s >= thresholds.low {
                band.push((i, j, s));
            }
        }
    }
    let mut judge_calls = 0;
    if let Some(judge) = judge {
        let requests: Vec<GenerationRequest> = band
            .iter()
            .map(|&(i, j, _)| match_judge_request(&gt[i], &pred[j]))
            .collect();
        judge_calls = requests.len();
        for (&(i, j, s), answer) in band.iter().zip(judge.generate_many(&requests)) {
            match answer {
                Ok(a) if judged_yes(&a) => edges.push(Edge {
                    gt: i,
                    pred: j,
                    similarity: s,
                    source: EdgeSource::Judge,
                }),
                Ok(_) => {}
                Err(e) => warn!(
                    "judge failed on ({}, {}): {e}; treating as no match",
                    gt[i], pred[j]
                ),
            }
        }
    }
    edges.sort_by_key(|e| (e.gt, e.pred));
    Ok(CoverageGraph {
        left: gt.to_vec(),
        right: pred.to_vec(),
        edges,
        judge_calls,
    })
}

/// Hopcroft-Karp maximum matching size. `adj[u]` lists right neighbours of
/// left node `u`; `blocked` right nodes are ignored.
pub fn max_matching_size(
    adj: &[Vec<usize>],
    n_right: usize,
    skip_left: usize,
    blocked: &[bool],
) -> usize {
    const NIL: usize = usize::MAX;
    let n_left = adj.len();
    let mut match_l = vec![NIL; n_left];
    let mut match_r = vec![NIL; n_right];
    let mut dist = vec![0usize; n_left];
    let usable = |u: usize, v: usize| u >= skip_left && !blocked[v];

    let bfs = |match_l: &[usize], match_r: &[usize], dist: &mut [usize]| -> bool {
        let mut q = VecDeque::new();
        for u in skip_left..n_left {
            if match_l[u] == NIL {
                dist[u] = 0;
                q.push_back(u);
            } else {
                dist[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !usable(u, v) {
                    continue;
                }
                let w = match_r[v];
                if w == NIL {
                    found = true;
                } else if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    q.push_back(w);
                }
            }
        }
        found
    };

    fn dfs(
        u: usize,
        adj: &[Vec<usize>],
        usable: &dyn Fn(usize, usize) -> bool,
        match_l: &mut [usize],
        match_r: &mut [usize],
        dist: &mut [usize],
    ) -> bool {
        for &v in &adj[u] {
            if !usable(u, v) {
                continue;
            }
            let w = match_r[v];
            if w == usize::MAX
                || (dist[w] == dist[u] + 1 && dfs(w, adj, usable, match_l, match_r, dist))
            {
                match_l[u] = v;
                match_r[v] = u;
                return true;
            }
        }
        dist[u] = usize::MAX;
        false
    }

    let mut size = 0;
    while bfs(&match_l, &match_r, &mut dist) {
        for u in skip_left..n_left {
            if match_l[u] == NIL && dfs(u, adj, &usable, &mut match_l, &mut match_r, &mut dist) {
                size += 1;
            }
        }
    }
    size
}

/// A maximum matching that is lexicographically smallest as a sorted list of
/// (left, right) pairs.
pub fn lexicographic_max_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<(usize, usize)> {
    let mut blocked = vec![false; n_right];
    let target = max_matching_size(adj, n_right, 0, &blocked);
    let mut pairs = Vec::with_capacity(target);
    for u in 0..adj.len() {
        if pairs.len() == target {
            break;
        }
        for &v in &adj[u] {
            if blocked[v] {
                continue;
            }
            blocked[v] = true;
            let rest = max_matching_size(adj, n_right, u + 1, &blocked);
            if pairs.len() + 1 + rest == target {
                pairs.push((u, v));
                break;
            }
            blocked[v] = false;
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: f64,
    pub matching: Vec<(String, String)>,
    pub unmatched: Vec<String>,
    pub judge_calls: usize,
}

pub fn max_matching(graph: &CoverageGraph) -> CoverageReport {
    let pairs = lexicographic_max_matching(&graph.adjacency(), graph.right.len());
    let matched: HashSet<usize> = pairs.iter().map(|p| p.0).collect();
    CoverageReport {
        coverage: if graph.left.is_empty() {
            0.0
        } else {
            pairs.len() as f64 / graph.left.len() as f64
        },
        matching: pairs
            .iter()
            .map(|&(i, j)| (graph.left[i].clone(), graph.right[j].clone()))
            .collect(),
        unmatched: (0..graph.left.len())
            .filter(|i| !matched.contains(i))
            .map(|i| graph.left[i].clone())
            .collect(),
        judge_calls: graph.judge_calls,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    Covered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocPrecision {
    pub doc_id: String,
    pub hits: usize,
    pub denominator: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub k: usize,
    pub mode: MatchMode,
    pub p_at_k: f64,
    pub per_document: Vec<DocPrecision>,
    /// Documents skipped for lacking gold labels.
    pub excluded: Vec<String>,
}

/// Which (gold, predicted) label names count as the same label in covered
/// mode. Names are compared after normalization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverRelation {
    pairs: HashSet<(String, String)>,
}

impl CoverRelation {
    pub fn new<I: IntoIterator<Item = (String, String)>>(pairs: I) -> Self {
        CoverRelation {
            pairs: pairs
                .into_iter()
                .map(|(g, p)| (normalize_phrase(&g), normalize_phrase(&p)))
                .collect(),
        }
    }

    pub fn from_graph(graph: &CoverageGraph) -> Self {
        Self::new(
            graph
                .edges
                .iter()
                .map(|e| (graph.left[e.gt].clone(), graph.right[e.pred].clone())),
        )
    }

    pub fn covers(&self, gold: &str, pred: &str) -> bool {
        let (g, p) = (normalize_phrase(gold), normalize_phrase(pred));
        g == p || self.pairs.contains(&(g, p))
    }
}

fn distinct_normalized(labels: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    labels
        .iter()
        .map(|l| normalize_phrase(l))
        .filter(|l| seen.insert(l.clone()))
        .collect()
}

/// Mean over documents of hits / min(k, |gold|). Hits are the exact-string
/// intersection of the top-k predictions with the gold labels, or in covered
/// mode the size of a maximum matching between them under `cover`.
pub fn precision_at_k(
    predictions: &[Prediction],
    gold: &BTreeMap<String, Vec<String>>,
    k: usize,
    mode: MatchMode,
    cover: &CoverRelation,
) -> Result<PrecisionReport> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut per_document = Vec::new();
    let mut excluded = Vec::new();
    for p in predictions {
        let g = match gold.get(&p.doc_id) {
            Some(g) if !g.is_empty() => distinct_normalized(g),
            _ => {
                warn!(
                    "document {} has no gold labels; excluded from P@{k}",
                    p.doc_id
                );
                excluded.push(p.doc_id.clone());
                continue;
            }
        };
        let top: Vec<String> = distinct_normalized(&p.labels).into_iter().take(k).collect();
        let hits = match mode {
            MatchMode::Exact => top.iter().filter(|t| g.contains(t)).count(),
            MatchMode::Covered => {
                let adj: Vec<Vec<usize>> = g
                    .iter()
                    .map(|gl| {
                        (0..top.len())
                            .filter(|&j| cover.covers(gl, &top[j]))
                            .collect()
                    })
                    .collect();
                max_matching_size(&adj, top.len(), 0, &vec![false; top.len()])
            }
        };
        let denominator = k.min(g.len());
        per_document.push(DocPrecision {
            doc_id: p.doc_id.clone(),
            hits,
            denominator,
            value: hits as f64 / denominator as f64,
        });
    }
    let p_at_k = if per_document.is_empty() {
        0.0
    } else {
        per_document.iter().map(|d| d.value).sum::<f64>() / per_document.len() as f64
    };
    Ok(PrecisionReport {
        k,
        mode,
        p_at_k,
        per_document,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub coverage: CoverageReport,
    pub precision: Vec<PrecisionReport>,
    pub judge_calls: usize,
    pub cache_hits: u64,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let c = &self.coverage;
        let _ = writeln!(
            out,
            "coverage  {:.4}  ({} of {} gold labels matched)",
            c.coverage,
            c.matching.len(),
            c.matching.len() + c.unmatched.len()
        );
        for p in &self.precision {
            let mode = match p.mode {
                MatchMode::Exact => "exact",
                MatchMode::Covered => "covered",
            };
            let _ = writeln!(
                out,
                "P@{:<2} {:<8} {:.4}  ({} docs, {} excluded)",
                p.k,
                mode,
                p.p_at_k,
                p.per_document.len(),
                p.excluded.len()
            );
        }
        let _ = writeln!(
            out,
            "judge calls {}  cache hits {}",
            self.judge_calls, self.cache_hits
        );
        out
    }
}

/// Coverage of `gold_space` by the live labels of `space`, plus P@k in both
/// modes for every k. Covered-mode P@k reuses the coverage relation computed
/// over all gold and predicted names.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_run(
    space: &LabelSpace,
    predictions: &[Prediction],
    gold_space: &[String],
    gold: &BTreeMap<String, Vec<String>>,
    ks: &[usize],
    similarity: &Gateway,
    judge: Option<&Gateway>,
    thresholds: Thresholds,
) -> Result<EvalReport> {
    let hits_before = similarity.stats().cache_hits + judge.map_or(0, |j| j.stats().cache_hits);
    let pred: Vec<String> = space.live().map(|l| l.name.clone()).collect();
    let graph = build_coverage_graph(gold_space, &pred, similarity, judge, thresholds)?;
    let coverage = max_matching(&graph);

    let mut gold_names: BTreeSet<String> = gold_space.iter().cloned().collect();
    gold_names.extend(gold.values().flatten().cloned());
    let mut pred_names: BTreeSet<String> = pred.iter().cloned().collect();
    pred_names.extend(predictions.iter().flat_map(|p| p.labels.iter().cloned()));
    let gold_names: Vec<String> = gold_names.into_iter().collect();
    let pred_names: Vec<String> = pred_names.into_iter().collect();
    let mut judge_calls = graph.judge_calls;
    let cover = if gold_names.is_empty() || pred_names.is_empty() {
        CoverRelation::default()
    } else {
        let g = build_coverage_graph(&gold_names, &pred_names, similarity, judge, thresholds)?;
        judge_calls += g.judge_calls;
        CoverRelation::from_graph(&g)
    };
    let mut precision = Vec::new();
    for &k in ks {
        for mode in [MatchMode::Exact, MatchMode::Covered] {
            precision.push(precision_at_k(predictions, gold, k, mode, &cover)?);
        }
    }
    let hits_after = similarity.stats().cache_hits + judge.map_or(0, |j| j.stats().cache_hits);
    Ok(EvalReport {
        coverage,
        precision,
        judge_calls,
        cache_hits: hits_after - hits_before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockConfig;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn plane(c: f64) -> Vec<f64> {
        vec![c, (1.0 - c * c).sqrt()]
    }

    #[test]
    fn band_rules() {
        let mut config = MockConfig::default();
        config.vectors.insert("g".into(), plane(1.0));
        config.vectors.insert("hi".into(), plane(0.80));
        config.vectors.insert("mid".into(), plane(0.60));
        config.vectors.insert("lo".into(), plane(0.49));
        let sim = Gateway::mock(config);
        let yes = Gateway::mock(MockConfig {
            default_response: Some("Yes".into()),
            ..MockConfig::default()
        });
        let graph = build_coverage_graph(
            &names(&["g"]),
            &names(&["hi", "mid", "lo"]),
            &sim,
            Some(&yes),
            Thresholds::default(),
        )
        .unwrap();
        let got: Vec<(usize, EdgeSource)> =
            graph.edges.iter().map(|e| (e.pred, e.source)).collect();
        assert_eq!(
            got,
            vec![(0, EdgeSource::Threshold), (1, EdgeSource::Judge)]
        );
        assert_eq!(graph.judge_calls, 1);

        let off = build_coverage_graph(
            &names(&["g"]),
            &names(&["hi", "mid", "lo"]),
            &sim,
            None,
            Thresholds::default(),
        )
        .unwrap();
        assert_eq!(off.edges.len(), 1);
    }

    #[test]
    fn matching_examples() {
        let g = CoverageGraph::from_pairs(names(&["a", "b", "c"]), names(&["a'"]), &[(0, 0)]);
        assert!((max_matching(&g).coverage - 1.0 / 3.0).abs() < 1e-15);

        // p0, p1 only cover g1; p2 only covers g2
        let g = CoverageGraph::from_pairs(
            names(&["g1", "g2"]),
            names(&["p0", "p1", "p2"]),
            &[(0, 0), (0, 1), (1, 2)],
        );
        let r = max_matching(&g);
        assert_eq!(r.coverage, 1.0);
        assert_eq!(
            r.matching,
            vec![("g1".into(), "p0".into()), ("g2".into(), "p2".into())]
        );
    }

    #[test]
    fn lexicographic_choice_keeps_maximum() {
        // greedy (0,0) would block node 1, whose only neighbour is 0
        let adj = vec![vec![0, 1], vec![0]];
        assert_eq!(lexicographic_max_matching(&adj, 2), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn precision_examples() {
        let pred = |doc: &str, labels: &[&str]| Prediction {
            doc_id: doc.into(),
            labels: names(labels),
            label_ids: vec![],
            scores: vec![],
            supports: vec![],
        };
        let mut gold = BTreeMap::new();
        gold.insert("d1".to_string(), names(&["l1", "l2"]));
        gold.insert("d2".to_string(), names(&["earn"]));
        let preds = vec![
            pred("d1", &["l1", "x", "y"]),
            pred("d2", &["earnings"]),
            pred("d3", &["z"]),
        ];
        let none = CoverRelation::default();
        let r = precision_at_k(&preds, &gold, 3, MatchMode::Exact, &none).unwrap();
        assert_eq!(r.per_document[0].value, 0.5);
        assert_eq!(r.per_document[1].value, 0.0);
        assert_eq!(r.excluded, vec!["d3".to_string()]);
        let cover = CoverRelation::new([("earn".to_string(), "earnings".to_string())]);
        let r = precision_at_k(&preds, &gold, 3, MatchMode::Covered, &cover).unwrap();
        assert_eq!(r.per_document[1].value, 1.0);
        assert_eq!(r.p_at_k, 0.75);
    }
}
