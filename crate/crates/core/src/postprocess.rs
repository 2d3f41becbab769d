//! Rank pruning, signature matching, recovery metrics and per-mutation
//! classification.

use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{PpfError, Result};
use crate::hungarian::max_score_assignment;
use crate::model::{self, covariate_effects, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneEntry {
    pub k: usize,
    pub mu: f64,
    pub cos_uniform: f64,
    pub discarded: bool,
    /// Kept although its relevance weight is at the shrinkage floor.
    pub suspicious: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrunedFit {
    pub kept: Vec<usize>,
    pub k_hat: usize,
    pub report: Vec<PruneEntry>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PruneRule {
    pub mu_factor: f64,
    pub cos_threshold: f64,
}

impl Default for PruneRule {
    fn default() -> Self {
        PruneRule {
            mu_factor: 5.0,
            cos_threshold: 0.975,
        }
    }
}

pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(PpfError::Dimension(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Err(PpfError::Data("cosine similarity of a zero vector".into()));
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Drop factors whose relevance weight collapsed to the floor and whose
/// signature is indistinguishable from uniform.
pub fn prune(r: &Array2<f64>, mu: &Array1<f64>, epsilon: f64, rule: PruneRule) -> Result<PrunedFit> {
    let uniform = Array1::from_elem(r.nrows(), 1.0);
    let mut report = Vec::with_capacity(mu.len());
    let mut kept = Vec::new();
    for k in 0..mu.len() {
        let cos_uniform = cosine(r.column(k), uniform.view())?;
        let small = mu[k] <= rule.mu_factor * epsilon;
        let discarded = small && cos_uniform > rule.cos_threshold;
        if !discarded {
            kept.push(k);
        }
        report.push(PruneEntry {
            k,
            mu: mu[k],
            cos_uniform,
            discarded,
            suspicious: small && !discarded,
        });
    }
    Ok(PrunedFit {
        k_hat: kept.len(),
        kept,
        report,
    })
}

/// Cosine similarity of every column pair; zero columns score 0.
pub fn cosine_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != b.nrows() {
        return Err(PpfError::Dimension(format!("{} vs {} channels", a.nrows(), b.nrows())));
    }
    Ok(Array2::from_shape_fn((a.ncols(), b.ncols()), |(x, y)| {
        cosine(a.column(x), b.column(y)).unwrap_or(0.0)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// `to_ref[e]` is the reference column matched to estimated column `e`.
    pub to_ref: Vec<Option<usize>>,
    /// Matched (estimated, reference, cosine) triples in estimated order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_est: Vec<usize>,
    pub unmatched_ref: Vec<usize>,
    pub total_cosine: f64,
}

/// Maximum-total-cosine matching of estimated to reference columns, with
/// the smaller side padded by zero columns.
pub fn match_signatures(r_hat: &Array2<f64>, r_ref: &Array2<f64>) -> Result<MatchResult> {
    let cos = cosine_matrix(r_hat, r_ref)?;
    let (ke, kr) = cos.dim();
    let n = ke.max(kr);
    let mut padded = Array2::zeros((n, n));
    padded.slice_mut(ndarray::s![..ke, ..kr]).assign(&cos);
    let assign = max_score_assignment(&padded);
    let mut to_ref = vec![None; ke];
    let mut pairs = Vec::new();
    let mut unmatched_ref: Vec<usize> = Vec::new();
    let mut ref_used = vec![false; kr];
    for (e, &r) in assign.iter().enumerate().take(ke) {
        if r < kr {
            to_ref[e] = Some(r);
            ref_used[r] = true;
            pairs.push((e, r, cos[[e, r]]));
        }
    }
    for (r, used) in ref_used.iter().enumerate() {
        if !used {
            unmatched_ref.push(r);
        }
    }
    let unmatched_est = (0..ke).filter(|&e| to_ref[e].is_none()).collect();
    let total_cosine = pairs.iter().map(|p| p.2).sum();
    Ok(MatchResult {
        to_ref,
        pairs,
        unmatched_est,
        unmatched_ref,
        total_cosine,
    })
}

pub fn rmse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(PpfError::Dimension(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Factor-indexed rows of an estimate and its reference, both padded with
/// zero rows to a common count and the estimate reordered by `m`.
pub fn align_rows(est: &Array2<f64>, reference: &Array2<f64>, m: &MatchResult) -> Result<(Array2<f64>, Array2<f64>)> {
    if est.ncols() != reference.ncols() {
        return Err(PpfError::Dimension(format!("{} vs {} columns", est.ncols(), reference.ncols())));
    }
    let (ke, kr, c) = (est.nrows(), reference.nrows(), est.ncols());
    let n = ke.max(kr);
    let mut a = Array2::zeros((n, c));
    let mut b = Array2::zeros((n, c));
    b.slice_mut(ndarray::s![..kr, ..]).assign(reference);
    let mut spare = kr;
    for e in 0..ke {
        let row = match m.to_ref.get(e).copied().flatten() {
            Some(r) => r,
            None => {
                spare += 1;
                spare - 1
            }
        };
        if row >= n {
            return Err(PpfError::Dimension("matching does not fit the padded size".into()));
        }
        a.row_mut(row).assign(&est.row(e));
    }
    Ok((a, b))
}

/// As [`align_rows`] for factor-indexed columns.
pub fn align_columns(est: &Array2<f64>, reference: &Array2<f64>, m: &MatchResult) -> Result<(Array2<f64>, Array2<f64>)> {
    let (a, b) = align_rows(&est.t().to_owned(), &reference.t().to_owned(), m)?;
    Ok((a.t().to_owned(), b.t().to_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Score {
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
}

/// Precision, sensitivity and F1 of signature recovery at a cosine cut.
/// F1 is 0 when precision and sensitivity are both 0.
pub fn f1(r_hat: &Array2<f64>, r_ref: &Array2<f64>, cos_cut: f64) -> Result<F1Score> {
    if r_hat.ncols() == 0 || r_ref.ncols() == 0 {
        return Err(PpfError::Data("F1 needs non-empty signature sets".into()));
    }
    let cos = cosine_matrix(r_hat, r_ref)?;
    let hit_est = cos.rows().into_iter().filter(|r| r.iter().any(|&c| c >= cos_cut)).count();
    let hit_ref = cos.columns().into_iter().filter(|c| c.iter().any(|&v| v >= cos_cut)).count();
    let precision = hit_est as f64 / r_hat.ncols() as f64;
    let sensitivity = hit_ref as f64 / r_ref.ncols() as f64;
    let f1 = if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    Ok(F1Score {
        precision,
        sensitivity,
        f1,
    })
}

/// Most probable factor for every sparse cell.
#[derive(Debug, Clone)]
pub struct Classification {
    /// Parallel to `data.counts.cells`.
    pub assigned: Vec<usize>,
    /// Cell-major attribution probabilities, `probs[c * K + k]`.
    pub probs: Vec<f64>,
    /// Mutations assigned to each factor.
    pub counts: Vec<f64>,
    pub k: usize,
}

/// Argmax attribution per cell; ties go to the lowest factor index.
pub fn classify_mutations(state: &ModelState, data: &Dataset) -> Result<Classification> {
    state.check_dims(data)?;
    let eff = covariate_effects(&state.beta, data.covariates())?;
    let k = state.k();
    let mut assigned = Vec::with_capacity(data.counts.cells.len());
    let mut probs = Vec::with_capacity(data.counts.cells.len() * k);
    let mut counts = vec![0.0; k];
    for c in &data.counts.cells {
        let p = model::attribution_probs(state, &eff, c.q as usize, c.i as usize, c.j as usize)?;
        let mut best = 0;
        for kk in 1..k {
            if p[kk] > p[best] {
                best = kk;
            }
        }
        assigned.push(best);
        counts[best] += c.count as f64;
        probs.extend(p);
    }
    Ok(Classification {
        assigned,
        probs,
        counts,
        k,
    })
}

/// Mutation counts cross-tabulated by the assignments of two models on the
/// same data.
pub fn confusion(a: &Classification, b: &Classification, data: &Dataset) -> Result<Array2<f64>> {
    let n = data.counts.cells.len();
    if a.assigned.len() != n || b.assigned.len() != n {
        return Err(PpfError::Dimension("classifications do not cover the same cells".into()));
    }
    let mut table = Array2::zeros((a.k, b.k));
    for (c, cell) in data.counts.cells.iter().enumerate() {
        table[[a.assigned[c], b.assigned[c]]] += cell.count as f64;
    }
    Ok(table)
}
