//! Keyphrase embedding, dimensionality reduction and mixture clustering.

mod gmm;
mod pca;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use gmm::{fit_gmm, GmmConfig, MixtureModel, VARIANCE_FLOOR};
pub use pca::PcaModel;

use crate::error::{Error, Result};

pub const DEFAULT_REDUCED_DIM: usize = 10;
pub const DEFAULT_MEMBERS_PER_CLUSTER: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Shape("embedding matrix has no rows".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("embedding rows differ in length".into()));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Validation(
                "embedding contains NaN or infinity".into(),
            ));
        }
        Ok(EmbeddingMatrix {
            data: DMatrix::from_fn(n, d, |i, j| rows[i][j]),
        })
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "path")]
pub enum Reducer {
    Pca,
    Identity,
    /// Dense text matrix: one row per line, whitespace-separated reals.
    External(std::path::PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReducerId {
    Pca,
    Identity,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrix {
    pub rows: Vec<Vec<f64>>,
    pub reducer: ReducerId,
    pub pca: Option<PcaModel>,
}

impl ReducedMatrix {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn load_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })?;
        rows.push(row);
    }
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(Error::Shape(format!("{}: ragged rows", path.display())));
        }
    }
    Ok(rows)
}

pub fn reduce(x: &EmbeddingMatrix, target_dim: usize, reducer: &Reducer) -> Result<ReducedMatrix> {
    match reducer {
        Reducer::Identity => Ok(ReducedMatrix {
            rows: to_rows(&x.data),
            reducer: ReducerId::Identity,
            pca: None,
        }),
        Reducer::Pca => {
            let model = PcaModel::fit(&x.data, target_dim)?;
            let projected = model.transform(&x.data)?;
            Ok(ReducedMatrix {
                rows: to_rows(&projected),
                reducer: ReducerId::Pca,
                pca: Some(model),
            })
        }
        Reducer::External(path) => {
            let rows = load_matrix(path)?;
            if rows.len() != x.nrows() {
                return Err(Error::Shape(format!(
                    "external reduction has {} rows, expected {}",
                    rows.len(),
                    x.nrows()
                )));
            }
            Ok(ReducedMatrix {
                rows,
                reducer: ReducerId::External,
                pca: None,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub responsibilities: Vec<Vec<f64>>,
    /// Argmax component per row; ties go to the lowest index.
    pub labels: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

pub fn assign(model: &MixtureModel, rows: &[Vec<f64>]) -> Result<ClusterAssignment> {
    if rows.iter().any(|r| r.len() != model.dim()) {
        return Err(Error::Shape(format!(
            "model has dimension {}, rows do not",
            model.dim()
        )));
    }
    let mut responsibilities = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut members = vec![Vec::new(); model.k()];
    for (i, row) in rows.iter().enumerate() {
        let (post, _) = model.posterior(row);
        let best = post
            .iter()
            .enumerate()
            .fold(0, |best, (k, p)| if *p > post[best] { k } else { best });
        members[best].push(i);
        labels.push(best);
        responsibilities.push(post);
    }
    Ok(ClusterAssignment {
        responsibilities,
        labels,
        members,
    })
}

/// Members of `cluster` ordered by Euclidean distance to its mean (ties by
/// row index), truncated to `m`.
pub fn nearest_members(
    assignment: &ClusterAssignment,
    rows: &[Vec<f64>],
    model: &MixtureModel,
    cluster: usize,
    m: usize,
) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Config("member count must be at least 1".into()));
    }
    let members = assignment
        .members
        .get(cluster)
        .ok_or_else(|| Error::Range(format!("no cluster {cluster}")))?;
    if members.is_empty() {
        return Err(Error::EmptyCluster(cluster));
    }
    let center = &model.means[cluster];
    let mut scored: Vec<(f64, usize)> = members
        .iter()
        .map(|&i| {
            let d: f64 = rows[i]
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (d, i)
        })
        .collect();
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite distance")
            .then(a.1.cmp(&b.1))
    });
    Ok(scored.into_iter().take(m).map(|(_, i)| i).collect())
}

/// Cluster count: the hint when given, otherwise round(sqrt(unique)) clamped
/// to [5, 300].
pub fn choose_k(hint: Option<usize>, unique_keyphrases: usize) -> Result<usize> {
    match hint {
        Some(0) => Err(Error::Config(
            "cluster count hint must be at least 1".into(),
        )),
        Some(k) => Ok(k),
        None => Ok(((unique_keyphrases as f64).sqrt().round() as usize).clamp(5, 300)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_reducer_is_passthrough() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.5]];
        let x = EmbeddingMatrix::from_rows(&rows).unwrap();
        let r = reduce(&x, 2, &Reducer::Identity).unwrap();
        assert_eq!(r.rows, rows);
        assert_eq!(r.reducer, ReducerId::Identity);
    }

    #[test]
    fn external_reducer_checks_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.txt");
        std::fs::write(&path, "0.5 1\n2 3\n").unwrap();
        let x2 = EmbeddingMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let r = reduce(&x2, 2, &Reducer::External(path.clone())).unwrap();
        assert_eq!(r.rows, vec![vec![0.5, 1.0], vec![2.0, 3.0]]);
        let x3 = EmbeddingMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            reduce(&x3, 2, &Reducer::External(path)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pca_rejects_constant_input() {
        let x = EmbeddingMatrix::from_rows(&vec![vec![1.0, 1.0]; 4]).unwrap();
        assert!(matches!(
            reduce(&x, 1, &Reducer::Pca),
            Err(Error::Degenerate(_))
        ));
        let y = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            reduce(&y, 3, &Reducer::Pca),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rank_one_data_keeps_distances() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let t = i as f64 * 0.7 - 1.0;
                vec![3.0 * t + 1.0, -4.0 * t + 2.0]
            })
            .collect();
        let x = EmbeddingMatrix::from_rows(&rows).unwrap();
        let r = reduce(&x, 1, &Reducer::Pca).unwrap();
        let pca = r.pca.as_ref().unwrap();
        assert!(pca.eigenvalues[1].abs() < 1e-9);
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                let orig =
                    ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)).sqrt();
                let proj = (r.rows[i][0] - r.rows[j][0]).abs();
                assert!((orig - proj).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gmm_errors() {
        let rows = vec![vec![1.0, 2.0]; 3];
        assert!(matches!(
            fit_gmm(&rows, &GmmConfig::new(2, 0)),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            fit_gmm(&rows[..1], &GmmConfig::new(2, 0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            fit_gmm(&rows, &GmmConfig::new(0, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_component_is_sample_mean() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64).sin() * 3.0, (i as f64 * 0.37).cos()])
            .collect();
        let model = fit_gmm(&rows, &GmmConfig::new(1, 5)).unwrap();
        assert_eq!(model.weights, vec![1.0]);
        for j in 0..2 {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            assert!((model.means[0][j] - mean).abs() < 1e-9);
        }
        let a = assign(&model, &rows).unwrap();
        assert!(a.responsibilities.iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn assign_checks_dimension_and_is_rowwise() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                vec![
                    if i % 2 == 0 { 0.0 } else { 8.0 } + i as f64 * 0.01,
                    1.0 - i as f64 * 0.02,
                ]
            })
            .collect();
        let model = fit_gmm(&rows, &GmmConfig::new(2, 1)).unwrap();
        assert!(matches!(assign(&model, &[vec![1.0]]), Err(Error::Shape(_))));
        let a = assign(&model, &rows).unwrap();
        let mut reversed = rows.clone();
        reversed.reverse();
        let b = assign(&model, &reversed).unwrap();
        for i in 0..rows.len() {
            assert_eq!(
                a.responsibilities[i],
                b.responsibilities[rows.len() - 1 - i]
            );
        }
    }

    #[test]
    fn nearest_members_order_and_truncation() {
        // one component centred at the origin
        let model = MixtureModel {
            weights: vec![1.0],
            means: vec![vec![0.0, 0.0]],
            variances: vec![vec![1.0, 1.0]],
            log_likelihood: 0.0,
            log_likelihood_trace: vec![],
            seed: 0,
            converged: true,
        };
        // distances by hand: 2.0, 1.0, 5.0 (3-4-5), 1.0, sqrt(2)=1.414
        let rows = vec![
            vec![2.0, 0.0],
            vec![0.0, -1.0],
            vec![3.0, 4.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let a = assign(&model, &rows).unwrap();
        assert_eq!(
            nearest_members(&a, &rows, &model, 0, 5).unwrap(),
            vec![1, 3, 4, 0, 2]
        );
        assert_eq!(
            nearest_members(&a, &rows, &model, 0, 3).unwrap(),
            vec![1, 3, 4]
        );

        let pair = assign(&model, &rows[..2]).unwrap();
        assert_eq!(
            nearest_members(&pair, &rows[..2], &model, 0, 3)
                .unwrap()
                .len(),
            2
        );

        let empty = ClusterAssignment {
            responsibilities: vec![],
            labels: vec![],
            members: vec![vec![]],
        };
        assert!(matches!(
            nearest_members(&empty, &rows, &model, 0, 3),
            Err(Error::EmptyCluster(0))
        ));
    }

    #[test]
    fn choose_k_rules() {
        assert_eq!(choose_k(Some(54), 10).unwrap(), 54);
        assert_eq!(choose_k(None, 400).unwrap(), 20);
        assert_eq!(choose_k(None, 4).unwrap(), 5);
        assert_eq!(choose_k(None, 1_000_000).unwrap(), 300);
        assert!(matches!(choose_k(Some(0), 10), Err(Error::Config(_))));
    }
}
