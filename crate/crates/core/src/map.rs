//! Maximum a posteriori estimation by majorization-minimization, with
//! capped Fisher-scoring steps for the regression coefficients, plus the
//! compressive NMF baseline on the aggregated count matrix.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::copies::CopyNumberProfile;
use crate::counts::{CountTensor, SparseCell};
use crate::data::Dataset;
use crate::error::{PpfError, Result};
use crate::genome::BinnedGenome;
use crate::model::{self, covariate_effects, integrals, CellStats, EffectMatrix, Hyperparams, ModelState, StatsRequest};
use crate::{par, rng};

/// Floor applied to initial baselines of patients without mutations.
pub const THETA_FLOOR: f64 = 1e-10;
/// Ridge added to a Fisher information that fails to factorise.
pub const RIDGE_JITTER: f64 = 1e-8;
const MAX_HALVINGS: usize = 40;

/// Which closed forms the baseline and relevance-weight updates use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum UpdateForm {
    /// Exact maximisers of the minorizing surrogate and of the
    /// inverse-gamma full conditional.
    #[default]
    Exact,
    /// The shorthand forms of the published algorithm listing.
    Printed,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub newton_repeats: usize,
    pub rho: f64,
    pub update_form: UpdateForm,
    /// Keep B at its initial value (zero-covariate runs, diagnostics).
    pub fix_coefficients: bool,
    /// Emit one JSON line per iteration on stderr.
    pub verbose: bool,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            max_iter: 5000,
            tol: 1e-7,
            n_starts: 3,
            seed: 0,
            newton_repeats: 2,
            rho: 0.5,
            update_form: UpdateForm::Exact,
            fix_coefficients: false,
            verbose: false,
        }
    }
}

impl MapOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.n_starts == 0 || !(self.tol > 0.0) || !(self.rho > 0.0) {
            return Err(PpfError::Config("need max_iter >= 1, n_starts >= 1, tol > 0 and rho > 0".into()));
        }
        Ok(())
    }
}

/// Per-run counters of safeguards that fired.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverDiagnostics {
    pub ridge_jitters: usize,
    pub step_halvings: usize,
    pub rejected_steps: usize,
    pub saturated_effects: bool,
}

#[derive(Debug, Clone)]
pub struct MapFit {
    pub state: ModelState,
    /// Log posterior after initialisation and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub start_index: usize,
    pub all_traces: Vec<Vec<f64>>,
    pub diagnostics: SolverDiagnostics,
}

impl MapFit {
    pub fn log_posterior(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial value")
    }
}

pub fn init_random(data: &Dataset, hyper: &Hyperparams, seed: u64) -> Result<ModelState> {
    hyper.validate()?;
    if data.n_patients() == 0 || data.n_bins() == 0 {
        return Err(PpfError::Data("cannot initialise on an empty data set".into()));
    }
    let (k, n_i, n_j, p) = (hyper.k, data.n_channels(), data.n_patients(), data.n_covariates());
    let mut g = rng::stream(seed, &[]);
    let mut r = Array2::zeros((n_i, k));
    for kk in 0..k {
        let col = rng::dirichlet(&mut g, &vec![1.01; n_i]);
        r.column_mut(kk).assign(&Array1::from(col));
    }
    let totals = data.patient_totals();
    let theta = Array2::from_shape_fn((k, n_j), |(_, j)| {
        let c = data.copy_integral[j];
        let v = if c > 0.0 { totals[j] / c } else { 0.0 };
        v.max(THETA_FLOOR)
    });
    let normal = Normal::new(0.0, 1e-7f64.sqrt()).expect("valid normal");
    let beta = Array2::from_shape_fn((k, p), |_| normal.sample(&mut g));
    Ok(ModelState {
        r,
        theta,
        beta,
        mu: Array1::from_elem(k, hyper.epsilon),
        sigma2: Array1::from_elem(k, hyper.d0 / (hyper.c0 + 1.0)),
        fixed_signatures: false,
    })
}

fn stats(state: &ModelState, eff: &EffectMatrix, data: &Dataset, req: StatsRequest) -> Result<CellStats> {
    let s = model::cell_stats(state, eff, data, req);
    if s.degenerate > 0 {
        return Err(PpfError::Numerical(format!(
            "{} observed cells have zero or non-finite intensity",
            s.degenerate
        )));
    }
    Ok(s)
}

fn normalize_columns(r: &mut Array2<f64>) -> Result<()> {
    for (k, mut col) in r.columns_mut().into_iter().enumerate() {
        let s = col.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(PpfError::Numerical(format!("signature column {k} sums to {s}")));
        }
        col.mapv_inplace(|v| v / s);
    }
    Ok(())
}

fn signatures_from(stats: &CellStats, hyper: &Hyperparams) -> Result<Array2<f64>> {
    let mut r = &hyper.alpha - 1.0 + &stats.by_channel;
    normalize_columns(&mut r)?;
    Ok(r)
}

/// Step 1: multiplicative update of the signatures.
pub fn update_signatures_map(state: &ModelState, data: &Dataset, hyper: &Hyperparams) -> Result<Array2<f64>> {
    state.check_dims(data)?;
    if hyper.alpha.iter().any(|&a| a < 1.0) {
        return Err(PpfError::Config("MAP signature update needs alpha >= 1".into()));
    }
    let eff = covariate_effects(&state.beta, data.covariates())?;
    let req = StatsRequest {
        by_channel: true,
        ..Default::default()
    };
    signatures_from(&stats(state, &eff, data, req)?, hyper)
}

fn baselines_from(
    state: &ModelState,
    by_patient: &Array2<f64>,
    g: &Array2<f64>,
    data: &Dataset,
    hyper: &Hyperparams,
    form: UpdateForm,
) -> Array2<f64> {
    Array2::from_shape_fn(state.theta.dim(), |(k, j)| {
        let prior_rate = hyper.a / state.mu[k] * data.copy_integral[j];
        match form {
            UpdateForm::Exact => (hyper.a - 1.0 + by_patient[[k, j]]) / (g[[k, j]] + prior_rate),
            UpdateForm::Printed => hyper.a - 1.0 + by_patient[[k, j]] / (g[[k, j]] + prior_rate),
        }
    })
}

/// Step 2: multiplicative update of the baseline activities.
pub fn update_baselines_map(state: &ModelState, data: &Dataset, hyper: &Hyperparams, form: UpdateForm) -> Result<Array2<f64>> {
    state.check_dims(data)?;
    let eff = covariate_effects(&state.beta, data.covariates())?;
    let g = integrals(&eff, data).g;
    let req = StatsRequest {
        by_patient: true,
        ..Default::default()
    };
    let s = stats(state, &eff, data, req)?;
    Ok(baselines_from(state, &s.by_patient, &g, data, hyper, form))
}

/// Copy-weighted baseline per bin, `D_qk = sum_j w_q (c_jq / 2) theta_kj`.
fn bin_weights(state: &ModelState, data: &Dataset) -> Array2<f64> {
    data.exposure.dot(&state.theta.t())
}

/// Gradient and Hessian of the log posterior in `beta_k` given the bin
/// weights `d` (column k of `D`), current effects and the expected
/// covariate sums of factor k.
fn grad_hess_k(
    beta_k: &Array1<f64>,
    sigma2: f64,
    x: &Array2<f64>,
    d_k: ndarray::ArrayView1<f64>,
    e_k: ndarray::ArrayView1<f64>,
    zbar_k: ndarray::ArrayView1<f64>,
) -> (Array1<f64>, Array2<f64>) {
    let p = x.ncols();
    let parts = par::map_chunks(x.nrows(), par::CHUNK, |range| {
        let mut g = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        for q in range {
            let w = d_k[q] * e_k[q];
            if w == 0.0 {
                continue;
            }
            let xq = x.row(q);
            for a in 0..p {
                let wa = w * xq[a];
                g[a] += wa;
                for b in a..p {
                    h[a * p + b] += wa * xq[b];
                }
            }
        }
        (g, h)
    });
    let mut g = vec![0.0; p];
    let mut h = vec![0.0; p * p];
    for (gp, hp) in parts {
        g = par::add_into(g, gp);
        h = par::add_into(h, hp);
    }
    let mut grad = Array1::zeros(p);
    let mut hess = Array2::zeros((p, p));
    for a in 0..p {
        grad[a] = -g[a] + zbar_k[a] - beta_k[a] / sigma2;
        for b in a..p {
            let v = -h[a * p + b];
            hess[[a, b]] = v;
            hess[[b, a]] = v;
        }
        hess[[a, a]] -= 1.0 / sigma2;
    }
    (grad, hess)
}

/// Gradient and Hessian of the log posterior with respect to `beta_k`, with
/// the attribution weights held at the current state.
pub fn beta_gradient_hessian(state: &ModelState, data: &Dataset, k: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    state.check_dims(data)?;
    if k >= state.k() {
        return Err(PpfError::Config(format!("factor {k} out of range")));
    }
    let eff = covariate_effects(&state.beta, data.covariates())?;
    let req = StatsRequest {
        covariate_sums: true,
        ..Default::default()
    };
    let s = stats(state, &eff, data, req)?;
    let d = bin_weights(state, data);
    let (g, h) = grad_hess_k(
        &state.beta.row(k).to_owned(),
        state.sigma2[k],
        data.covariates(),
        d.column(k),
        eff.e.column(k),
        s.covariate_sums.row(k),
    );
    if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
        return Err(PpfError::Numerical(format!("non-finite gradient or Hessian for factor {k}")));
    }
    Ok((g, h))
}

/// Per-factor surrogate `-sum_q D_qk exp(beta . x_q) + beta . zbar_k - |beta|^2 / (2 sigma2)`.
fn surrogate(beta: &Array1<f64>, sigma2: f64, x: &Array2<f64>, d_k: ndarray::ArrayView1<f64>, zbar_k: ndarray::ArrayView1<f64>) -> f64 {
    let mass = par::reduce_chunks(
        x.nrows(),
        par::CHUNK,
        0.0,
        |range| {
            range
                .map(|q| {
                    let lin = x.row(q).dot(beta).clamp(-model::EXP_CLAMP, model::EXP_CLAMP);
                    d_k[q] * lin.exp()
                })
                .sum::<f64>()
        },
        |a, b| a + b,
    );
    -mass + beta.dot(&zbar_k) - beta.dot(beta) / (2.0 * sigma2)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepInfo {
    /// Factor applied to the Newton direction by the RMS cap.
    pub cap_scale: f64,
    pub halvings: usize,
    pub jittered: bool,
    /// No tried step improved the surrogate; beta was left unchanged.
    pub rejected: bool,
}

/// Newton direction `xi = -H^{-1} g` by Cholesky of `-H`.
fn newton_direction(g: &Array1<f64>, h: &Array2<f64>) -> Result<(Array1<f64>, bool)> {
    let p = g.len();
    let neg_h = DMatrix::from_fn(p, p, |a, b| -h[[a, b]]);
    let rhs = DVector::from_iterator(p, g.iter().cloned());
    let (chol, jittered) = match neg_h.clone().cholesky() {
        Some(c) => (c, false),
        None => {
            let ridged = neg_h + DMatrix::identity(p, p) * RIDGE_JITTER;
            match ridged.cholesky() {
                Some(c) => (c, true),
                None => return Err(PpfError::Numerical("Fisher information is not positive definite".into())),
            }
        }
    };
    let xi = chol.solve(&rhs);
    Ok((Array1::from_iter(xi.iter().cloned()), jittered))
}

/// Capped step size for a Newton direction.
pub fn step_cap(xi_norm: f64, rho: f64, p: usize) -> f64 {
    let limit = rho * (p as f64).sqrt();
    if xi_norm <= limit { 1.0 } else { limit / xi_norm }
}

fn newton_update_k(
    state: &ModelState,
    data: &Dataset,
    eff: &EffectMatrix,
    d: &Array2<f64>,
    zbar: &Array2<f64>,
    k: usize,
    rho: f64,
) -> Result<(Array1<f64>, StepInfo)> {
    let x = data.covariates();
    let beta = state.beta.row(k).to_owned();
    let s2 = state.sigma2[k];
    let (g, h) = grad_hess_k(&beta, s2, x, d.column(k), eff.e.column(k), zbar.row(k));
    if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
        return Err(PpfError::Numerical(format!("non-finite gradient or Hessian for factor {k}")));
    }
    let (xi, jittered) = newton_direction(&g, &h)?;
    let norm = xi.dot(&xi).sqrt();
    let cap_scale = step_cap(norm, rho, xi.len());
    let mut info = StepInfo {
        cap_scale,
        jittered,
        ..Default::default()
    };
    if norm == 0.0 {
        return Ok((beta, info));
    }
    let f_old = surrogate(&beta, s2, x, d.column(k), zbar.row(k));
    let mut t = cap_scale;
    for _ in 0..=MAX_HALVINGS {
        let cand = &beta + &(&xi * t);
        let f_new = surrogate(&cand, s2, x, d.column(k), zbar.row(k));
        if f_new >= f_old {
            return Ok((cand, info));
        }
        info.halvings += 1;
        t *= 0.5;
    }
    info.rejected = true;
    Ok((beta, info))
}

/// One capped Fisher-scoring step on `beta_k`, with the attribution
/// weights held at the current state.
pub fn update_coefficients_map(state: &ModelState, data: &Dataset, k: usize, rho: f64) -> Result<(Array1<f64>, StepInfo)> {
    state.check_dims(data)?;
    let eff = covariate_effects(&state.beta, data.covariates())?;
    let req = StatsRequest {
        covariate_sums: true,
        ..Default::default()
    };
    let s = stats(state, &eff, data, req)?;
    let d = bin_weights(state, data);
    newton_update_k(state, data, &eff, &d, &s.covariate_sums, k, rho)
}

/// Step 4: closed-form relevance weights and prior variances.
pub fn update_hyper_map(state: &ModelState, data: &Dataset, hyper: &Hyperparams, form: UpdateForm) -> (Array1<f64>, Array1<f64>) {
    let n_j = data.n_patients();
    let (aj, a0, b0) = (hyper.a * n_j as f64, hyper.a0(n_j), hyper.b0(n_j));
    let denom = match form {
        UpdateForm::Exact => aj + a0 + 1.0,
        UpdateForm::Printed => 2.0 * aj + 1.0,
    };
    let weighted = state.theta.dot(&data.copy_integral);
    let mu = weighted.mapv(|s| (hyper.a * s + b0) / denom);
    let p = data.n_covariates() as f64;
    let sigma2 = Array1::from_iter(state.beta.rows().into_iter().map(|b| {
        (b.dot(&b) / 2.0 + hyper.d0) / (p / 2.0 + hyper.c0 + 1.0)
    }));
    (mu, sigma2)
}

#[derive(Serialize)]
struct IterLog {
    start: usize,
    iteration: usize,
    logpost: f64,
    max_change: f64,
}

fn max_change(a: &ModelState, b: &ModelState) -> f64 {
    let pairs = [(&a.r, &b.r), (&a.theta, &b.theta), (&a.beta, &b.beta)];
    let mut m: f64 = 0.0;
    for (x, y) in pairs {
        for (u, v) in x.iter().zip(y.iter()) {
            m = m.max((u - v).abs());
        }
    }
    for (u, v) in a.mu.iter().zip(b.mu.iter()).chain(a.sigma2.iter().zip(b.sigma2.iter())) {
        m = m.max((u - v).abs());
    }
    m
}

/// One full cycle of Steps 1-4.
pub fn map_iteration(state: &mut ModelState, data: &Dataset, hyper: &Hyperparams, opts: &MapOptions, diag: &mut SolverDiagnostics) -> Result<()> {
    let mut eff = covariate_effects(&state.beta, data.covariates())?;
    diag.saturated_effects |= eff.saturated;
    if !state.fixed_signatures {
        let req = StatsRequest {
            by_channel: true,
            ..Default::default()
        };
        state.r = signatures_from(&stats(state, &eff, data, req)?, hyper)?;
    }

    let g = integrals(&eff, data).g;
    let req = StatsRequest {
        by_patient: true,
        ..Default::default()
    };
    let s = stats(state, &eff, data, req)?;
    state.theta = baselines_from(state, &s.by_patient, &g, data, hyper, opts.update_form);

    if !opts.fix_coefficients && data.n_covariates() > 0 {
        let d = bin_weights(state, data);
        for _ in 0..opts.newton_repeats {
            let req = StatsRequest {
                covariate_sums: true,
                ..Default::default()
            };
            let s = stats(state, &eff, data, req)?;
            let current: &ModelState = state;
            let steps = par::map_indices(current.k(), |k| newton_update_k(current, data, &eff, &d, &s.covariate_sums, k, opts.rho));
            for (k, step) in steps.into_iter().enumerate() {
                let (b, info) = step?;
                diag.ridge_jitters += info.jittered as usize;
                diag.step_halvings += info.halvings;
                diag.rejected_steps += info.rejected as usize;
                state.beta.row_mut(k).assign(&b);
            }
            eff = covariate_effects(&state.beta, data.covariates())?;
            diag.saturated_effects |= eff.saturated;
        }
    }

    let (mu, sigma2) = update_hyper_map(state, data, hyper, opts.update_form);
    state.mu = mu;
    state.sigma2 = sigma2;
    Ok(())
}

fn converged(prev: f64, cur: f64, tol: f64) -> bool {
    ((cur - prev) / cur.abs()).abs() < tol
}

/// Run Steps 1-4 from a given state until the relative log-posterior change
/// drops below `tol` or `max_iter` is reached.
pub fn fit_map_from(init: ModelState, data: &Dataset, hyper: &Hyperparams, opts: &MapOptions, start: usize) -> Result<MapFit> {
    opts.validate()?;
    hyper.validate()?;
    init.check_dims(data)?;
    let mut state = init;
    let mut diag = SolverDiagnostics::default();
    let mut trace = vec![model::log_posterior(&state, data, hyper)?];
    let mut done = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let before = opts.verbose.then(|| state.clone());
        map_iteration(&mut state, data, hyper, opts, &mut diag)?;
        iterations += 1;
        let lp = model::log_posterior(&state, data, hyper)
            .map_err(|e| PpfError::Numerical(format!("iteration {iterations}: {e}")))?;
        let prev = *trace.last().expect("non-empty trace");
        trace.push(lp);
        if let Some(b) = before {
            let line = IterLog {
                start,
                iteration: iterations,
                logpost: lp,
                max_change: max_change(&b, &state),
            };
            eprintln!("{}", serde_json::to_string(&line)?);
        }
        if converged(prev, lp, opts.tol) {
            done = true;
            break;
        }
    }
    Ok(MapFit {
        state,
        all_traces: vec![trace.clone()],
        trace,
        iterations,
        converged: done,
        start_index: start,
        diagnostics: diag,
    })
}

/// Multi-start MAP fit. Returns the start with the highest final log
/// posterior; every trace is retained.
pub fn fit_map(data: &Dataset, hyper: &Hyperparams, opts: &MapOptions) -> Result<MapFit> {
    opts.validate()?;
    let mut best: Option<MapFit> = None;
    let mut traces = Vec::with_capacity(opts.n_starts);
    for start in 0..opts.n_starts {
        let init = init_random(data, hyper, rng::derive(opts.seed, &[start as u64]))?;
        let fit = fit_map_from(init, data, hyper, opts, start)?;
        traces.push(fit.trace.clone());
        if best.as_ref().is_none_or(|b| fit.log_posterior() > b.log_posterior()) {
            best = Some(fit);
        }
    }
    let mut best = best.expect("at least one start");
    best.all_traces = traces;
    Ok(best)
}

/// Data set with a single unit-length bin, diploid copies and no
/// covariates, under which the point-process model collapses to Poisson
/// NMF of the aggregated counts.
pub fn aggregate_dataset(totals: &Array2<f64>) -> Result<Dataset> {
    let (n_i, n_j) = totals.dim();
    if totals.iter().any(|&v| v < 0.0 || v.fract() != 0.0 || !v.is_finite()) {
        return Err(PpfError::Data("count matrix must hold non-negative integers".into()));
    }
    let genome = BinnedGenome::tiled("all", 1, 1, Array2::zeros((1, 0)), vec![])?;
    let mut cells = Vec::new();
    for j in 0..n_j {
        for i in 0..n_i {
            let n = totals[[i, j]];
            if n > 0.0 {
                cells.push(SparseCell {
                    q: 0,
                    j: j as u32,
                    i: i as u16,
                    count: n as u32,
                });
            }
        }
    }
    let counts = CountTensor {
        cells,
        totals: totals.clone(),
        patients: (0..n_j).map(|j| format!("P{}", j + 1)).collect(),
        n_channels: n_i,
        dropped: 0,
    };
    Dataset::new(genome, CopyNumberProfile::diploid(1, n_j), counts)
}

/// Compressive NMF by multiplicative updates on the I x J count matrix.
/// Initialisation follows [`init_random`] on the aggregated data set.
pub fn compnmf_fit(totals: &Array2<f64>, hyper: &Hyperparams, opts: &MapOptions) -> Result<MapFit> {
    opts.validate()?;
    hyper.validate()?;
    let data = aggregate_dataset(totals)?;
    let n_j = totals.ncols() as f64;
    let (a, a0, b0) = (hyper.a, hyper.a0(totals.ncols()), hyper.b0(totals.ncols()));
    let mut best: Option<MapFit> = None;
    let mut traces = Vec::new();
    for start in 0..opts.n_starts {
        let mut st = init_random(&data, hyper, rng::derive(opts.seed, &[start as u64]))?;
        let mut trace = vec![model::log_posterior(&st, &data, hyper)?];
        let mut done = false;
        let mut iterations = 0;
        let ratio = |r: &Array2<f64>, th: &Array2<f64>| {
            let rt = r.dot(th);
            Array2::from_shape_fn(totals.dim(), |(i, j)| if totals[[i, j]] > 0.0 { totals[[i, j]] / rt[[i, j]] } else { 0.0 })
        };
        while iterations < opts.max_iter {
            let x_over = ratio(&st.r, &st.theta);
            let mut r = &hyper.alpha - 1.0 + &(&st.r * &x_over.dot(&st.theta.t()));
            normalize_columns(&mut r)?;
            st.r = r;
            let x_over = ratio(&st.r, &st.theta);
            let inner = &st.theta * &st.r.t().dot(&x_over) + (a - 1.0);
            let shrink = st.mu.mapv(|m| m / (a + m));
            st.theta = Array2::from_shape_fn(inner.dim(), |(k, j)| shrink[k] * inner[[k, j]]);
            st.mu = st.theta.sum_axis(Axis(1)).mapv(|s| (a * s + b0) / (a * n_j + a0 + 1.0));
            iterations += 1;
            let lp = model::log_posterior(&st, &data, hyper)?;
            let prev = *trace.last().expect("non-empty trace");
            trace.push(lp);
            if converged(prev, lp, opts.tol) {
                done = true;
                break;
            }
        }
        traces.push(trace.clone());
        let fit = MapFit {
            state: st,
            all_traces: vec![],
            trace,
            iterations,
            converged: done,
            start_index: start,
            diagnostics: SolverDiagnostics::default(),
        };
        if best.as_ref().is_none_or(|b| fit.log_posterior() > b.log_posterior()) {
            best = Some(fit);
        }
    }
    let mut best = best.expect("at least one start");
    best.all_traces = traces;
    Ok(best)
}
