//! Per-view RBF similarity, KNN adjacency, cross-view relation transfer for
//! missing instances, and the symmetric-normalized propagation operator
//! `D̃^{-1/2} (A + I) D̃^{-1/2}`.

use serde::{Deserialize, Serialize};

use crate::dataio::ObservationMask;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Pairwise RBF similarities `exp(-‖x_i - x_j‖² / t)` of one view.
///
/// Only the observed block is meaningful; rows and columns of unobserved
/// instances hold zeros and are flagged invalid.
#[derive(Clone, Debug)]
pub struct SimilarityMatrix {
    values: Matrix,
    bandwidth: f64,
    valid: Vec<bool>,
}

impl SimilarityMatrix {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Builds a similarity matrix from precomputed values. Used by tests and
    /// callers that bring their own kernel.
    pub fn from_values(values: Matrix, valid: Vec<bool>) -> Result<Self> {
        if values.rows() != values.cols() || values.rows() != valid.len() {
            return Err(Error::Dimension {
                op: "similarity",
                lhs: values.shape(),
                rhs: (valid.len(), valid.len()),
            });
        }
        Ok(SimilarityMatrix {
            values,
            bandwidth: f64::NAN,
            valid,
        })
    }
}

/// How a missing instance's adjacency row is assembled from the rows it
/// has in its observed views.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferRule {
    /// Row of the lowest-indexed observed view.
    #[default]
    Copy,
    Union,
    Intersection,
}

impl std::str::FromStr for TransferRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TransferRule::Copy),
            "union" => Ok(TransferRule::Union),
            "intersection" => Ok(TransferRule::Intersection),
            other => Err(Error::Config(format!("unknown transfer rule `{other}`"))),
        }
    }
}

impl std::fmt::Display for TransferRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransferRule::Copy => "copy",
            TransferRule::Union => "union",
            TransferRule::Intersection => "intersection",
        })
    }
}

/// Binary per-view adjacency matrices with row bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencySet {
    matrices: Vec<Matrix>,
    /// `valid[v][i]`: row `i` of view `v` holds a constructed or transferred row.
    valid: Vec<Vec<bool>>,
    /// `transferred[v][i]`: row `i` of view `v` was filled by transfer.
    transferred: Vec<Vec<bool>>,
}

impl AdjacencySet {
    pub fn from_views(views: Vec<(Matrix, Vec<bool>)>) -> Result<Self> {
        let n = views.first().map_or(0, |(m, _)| m.rows());
        for (m, valid) in &views {
            if m.shape() != (n, n) || valid.len() != n {
                return Err(Error::Dimension {
                    op: "adjacency set",
                    lhs: (n, n),
                    rhs: m.shape(),
                });
            }
        }
        let transferred = views.iter().map(|_| vec![false; n]).collect();
        let (matrices, valid) = views.into_iter().unzip();
        Ok(AdjacencySet {
            matrices,
            valid,
            transferred,
        })
    }

    pub fn n_views(&self) -> usize {
        self.matrices.len()
    }

    pub fn n(&self) -> usize {
        self.matrices.first().map_or(0, Matrix::rows)
    }

    pub fn view(&self, v: usize) -> &Matrix {
        &self.matrices[v]
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn valid(&self, v: usize) -> &[bool] {
        &self.valid[v]
    }

    pub fn transferred(&self, v: usize) -> &[bool] {
        &self.transferred[v]
    }
}

/// Symmetric-normalized adjacency with self loops.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationOperator(Matrix);

impl PropagationOperator {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn identity(n: usize) -> Self {
        PropagationOperator(Matrix::identity(n))
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of squared distances over observed pairs `i < j`.
pub fn median_bandwidth(x: &Matrix, observed: &[bool]) -> Result<f64> {
    let idx: Vec<usize> = (0..x.rows()).filter(|&i| observed[i]).collect();
    if idx.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 observed instances, got {}",
            idx.len()
        )));
    }
    let mut d = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d.push(squared_distance(x.row(i), x.row(j)));
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    // all observed points coincide: any positive bandwidth gives S = 1
    Ok(if med > 0.0 { med } else { 1.0 })
}

pub fn rbf_similarity(x: &Matrix, observed: &[bool], t: f64) -> Result<SimilarityMatrix> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Config(format!("RBF bandwidth must be positive, got {t}")));
    }
    if observed.len() != x.rows() {
        return Err(Error::Dimension {
            op: "rbf_similarity",
            lhs: x.shape(),
            rhs: (observed.len(), 1),
        });
    }
    let n = x.rows();
    let n_obs = observed.iter().filter(|&&o| o).count();
    if n_obs < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 observed instances, got {n_obs}"
        )));
    }
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        if !observed[i] {
            continue;
        }
        s[(i, i)] = 1.0;
        for j in i + 1..n {
            if observed[j] {
                let v = (-squared_distance(x.row(i), x.row(j)) / t).exp();
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
    }
    Ok(SimilarityMatrix {
        values: s,
        bandwidth: t,
        valid: observed.to_vec(),
    })
}

/// For each valid row, links the `k` most similar valid instances. Ties go
/// to the lower index. Invalid rows stay empty.
pub fn knn_adjacency(s: &SimilarityMatrix, k: usize) -> Result<(Matrix, Vec<bool>)> {
    let n_valid = s.n_valid();
    if k == 0 || k + 1 > n_valid {
        return Err(Error::Config(format!(
            "K = {k} out of range [1, {}]",
            n_valid.saturating_sub(1)
        )));
    }
    let n = s.values.rows();
    let mut a = Matrix::zeros(n, n);
    let mut candidates = Vec::with_capacity(n);
    for i in (0..n).filter(|&i| s.valid[i]) {
        candidates.clear();
        candidates.extend((0..n).filter(|&j| j != i && s.valid[j]));
        let row = s.values.row(i);
        candidates.sort_by(|&p, &q| row[q].total_cmp(&row[p]).then(p.cmp(&q)));
        for &j in &candidates[..k] {
            a[(i, j)] = 1.0;
        }
    }
    Ok((a, s.valid.clone()))
}

/// Fills the rows of instances missing in a view from the rows they have
/// in their observed views.
pub fn transfer_relations(
    adjacency: &AdjacencySet,
    mask: &ObservationMask,
    rule: TransferRule,
) -> Result<AdjacencySet> {
    let (n, n_views) = (adjacency.n(), adjacency.n_views());
    if mask.n() != n || mask.n_views() != n_views {
        return Err(Error::Dimension {
            op: "transfer_relations",
            lhs: (n, n_views),
            rhs: (mask.n(), mask.n_views()),
        });
    }
    let mut out = adjacency.clone();
    for i in 0..n {
        let sources: Vec<usize> = (0..n_views).filter(|&v| mask.is_observed(i, v)).collect();
        if sources.is_empty() {
            return Err(Error::Data(format!("instance {i} is missing in every view")));
        }
        if sources.len() == n_views {
            continue;
        }
        for &src in &sources {
            if !adjacency.valid[src][i] {
                return Err(Error::Contract(format!(
                    "row {i} of view {src} was never built"
                )));
            }
        }
        let row: Vec<f64> = (0..n)
            .map(|j| {
                let mut linked = sources.iter().map(|&v| adjacency.matrices[v][(i, j)] != 0.0);
                let hit = match rule {
                    TransferRule::Copy => adjacency.matrices[sources[0]][(i, j)] != 0.0,
                    TransferRule::Union => linked.any(|b| b),
                    TransferRule::Intersection => linked.all(|b| b),
                };
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        for v in (0..n_views).filter(|&v| !mask.is_observed(i, v)) {
            out.matrices[v].row_mut(i).copy_from_slice(&row);
            out.valid[v][i] = true;
            out.transferred[v][i] = true;
        }
    }
    Ok(out)
}

/// OR-symmetrizes each view and clears the diagonal.
pub fn finalize_adjacency(adjacency: &AdjacencySet) -> Result<AdjacencySet> {
    let mut out = adjacency.clone();
    for (v, (a, valid)) in out.matrices.iter_mut().zip(&adjacency.valid).enumerate() {
        if let Some(row) = valid.iter().position(|&ok| !ok) {
            return Err(Error::Contract(format!(
                "view {v} row {row} is neither built nor transferred"
            )));
        }
        let n = a.rows();
        for i in 0..n {
            a[(i, i)] = 0.0;
            for j in i + 1..n {
                let linked = a[(i, j)] != 0.0 || a[(j, i)] != 0.0;
                let e = if linked { 1.0 } else { 0.0 };
                a[(i, j)] = e;
                a[(j, i)] = e;
            }
        }
        for i in 0..n {
            if a.row(i).iter().all(|&x| x == 0.0) {
                return Err(Error::DegenerateGraph { view: v, row: i });
            }
        }
    }
    Ok(out)
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃_ii = Σ_j (A + I)_ij`.
pub fn normalize(adjacency: &Matrix) -> PropagationOperator {
    let n = adjacency.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let degree = adjacency.row(i).iter().sum::<f64>() - adjacency[(i, i)] + 1.0;
            1.0 / degree.sqrt()
        })
        .collect();
    PropagationOperator(Matrix::from_fn(n, n, |i, j| {
        let a = if i == j { 1.0 } else { adjacency[(i, j)] };
        a * (inv_sqrt[i] * inv_sqrt[j])
    }))
}

/// Similarity → KNN → transfer → symmetrize → normalize for every view.
pub fn build_operators(
    views: &[Matrix],
    mask: &ObservationMask,
    k: usize,
    bandwidth: Option<f64>,
    rule: TransferRule,
) -> Result<(AdjacencySet, Vec<PropagationOperator>)> {
    let mut raw = Vec::with_capacity(views.len());
    for (v, x) in views.iter().enumerate() {
        let observed = mask.view_column(v);
        let t = match bandwidth {
            Some(t) => t,
            None => median_bandwidth(x, &observed)?,
        };
        let s = rbf_similarity(x, &observed, t)?;
        raw.push(knn_adjacency(&s, k)?);
    }
    let raw = AdjacencySet::from_views(raw)?;
    let transferred = transfer_relations(&raw, mask, rule)?;
    let finalized = finalize_adjacency(&transferred)?;
    let operators = finalized.matrices.iter().map(normalize).collect();
    Ok((finalized, operators))
}
