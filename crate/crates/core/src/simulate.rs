//! Synthetic data generator: autocorrelated covariates, segmented copy
//! numbers, random model parameters and a mutation catalog drawn from the
//! binned Poisson process.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson, StandardNormal};
use serde::Serialize;

use crate::channels::{channel_labels, format_channel, N_CHANNELS};
use crate::copies::{CopyNumberProfile, Segment};
use crate::counts::{CountTensor, MutationRecord};
use crate::data::Dataset;
use crate::error::{PpfError, Result};
use crate::genome::BinnedGenome;
use crate::io::write_matrix;
use crate::model::{covariate_effects, ModelState};
use crate::{par, rng};

pub const CHROM: &str = "sim";

const STREAM_COV: u64 = 1;
const STREAM_SIGMA: u64 = 2;
const STREAM_COPIES: u64 = 3;
const STREAM_TRUTH: u64 = 4;
const STREAM_CATALOG: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CovarianceMode {
    Identity,
    RandomCorrelation,
    User(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    /// Number of bins Q.
    pub n_bins: usize,
    pub bin_width: u64,
    pub n_patients: usize,
    pub p: usize,
    pub p_true: usize,
    pub k0: usize,
    /// Optional leading signature columns, I x K_fixed.
    #[serde(skip)]
    pub fixed_signatures: Option<Array2<f64>>,
    pub sigma0: CovarianceMode,
    pub ar_coeff: f64,
    pub seg_rate: f64,
    pub copy_mean: f64,
    pub copy_v: f64,
    pub mu0_shape: f64,
    pub mu0_rate: f64,
    pub xi_shape: f64,
    pub xi_rate: f64,
    pub sigma0_sq: f64,
    /// Concentration of the random signature columns.
    pub dirichlet_conc: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Scenario A at the published scale: 20,000 bins of width 100,
    /// 40 patients, 10 covariates of which 5 matter, 8 signatures.
    pub fn full(scenario_b: bool, seed: u64) -> Self {
        SimConfig {
            n_bins: 20_000,
            bin_width: 100,
            n_patients: 40,
            p: 10,
            p_true: 5,
            k0: 8,
            fixed_signatures: None,
            sigma0: if scenario_b {
                CovarianceMode::RandomCorrelation
            } else {
                CovarianceMode::Identity
            },
            ar_coeff: 0.99,
            seg_rate: 20.0,
            copy_mean: 1.0,
            copy_v: 10.0,
            mu0_shape: 100.0,
            mu0_rate: 1.0,
            xi_shape: 0.5,
            xi_rate: 0.5,
            sigma0_sq: 0.5,
            dirichlet_conc: 0.1,
            seed,
        }
    }

    /// Reduced instance: 2,000 bins, 10 patients, 4 signatures.
    pub fn scaled(scenario_b: bool, seed: u64) -> Self {
        SimConfig {
            n_bins: 2_000,
            n_patients: 10,
            k0: 4,
            ..Self::full(scenario_b, seed)
        }
    }

    pub fn total_length(&self) -> u64 {
        self.n_bins as u64 * self.bin_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 || self.bin_width == 0 || self.n_patients == 0 || self.k0 == 0 {
            return Err(PpfError::Config("need at least 2 bins, a positive bin width, 1 patient and 1 signature".into()));
        }
        if self.p_true > self.p {
            return Err(PpfError::Config(format!("p_true ({}) exceeds p ({})", self.p_true, self.p)));
        }
        if let Some(f) = &self.fixed_signatures {
            if f.nrows() != N_CHANNELS || f.ncols() > self.k0 {
                return Err(PpfError::Config(format!(
                    "fixed signatures must be {N_CHANNELS} x (<= K0), got {:?}",
                    f.dim()
                )));
            }
            for (k, col) in f.columns().into_iter().enumerate() {
                if col.iter().any(|&v| v < 0.0) || (col.sum() - 1.0).abs() > 1e-6 {
                    return Err(PpfError::Config(format!("fixed signature {k} is not a probability vector")));
                }
            }
        }
        if let CovarianceMode::User(m) = &self.sigma0 {
            if m.len() != self.p || m.iter().any(|r| r.len() != self.p) {
                return Err(PpfError::Config(format!("covariance must be {0} x {0}", self.p)));
            }
        }
        Ok(())
    }
}

/// Random correlation matrix by the onion method, uniform over the space
/// of correlation matrices.
pub fn gen_random_correlation<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<Array2<f64>> {
    if p < 2 {
        return Err(PpfError::Config("random correlation needs p >= 2".into()));
    }
    let mut b = 1.0 + (p as f64 - 2.0) / 2.0;
    let u = Beta::new(b, b).expect("valid beta").sample(rng);
    let r12 = 2.0 * u - 1.0;
    let mut corr = DMatrix::from_row_slice(2, 2, &[1.0, r12, r12, 1.0]);
    for k in 2..p {
        b -= 0.5;
        let y = Beta::new(k as f64 / 2.0, b).expect("valid beta").sample(rng);
        let mut dir: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v *= y.sqrt() / norm);
        let chol = corr
            .clone()
            .cholesky()
            .ok_or_else(|| PpfError::Numerical("onion step produced a non-PD matrix".into()))?;
        let z = chol.l() * nalgebra::DVector::from_vec(dir);
        let mut next = DMatrix::identity(k + 1, k + 1);
        next.view_mut((0, 0), (k, k)).copy_from(&corr);
        for i in 0..k {
            next[(i, k)] = z[i];
            next[(k, i)] = z[i];
        }
        corr = next;
    }
    Ok(Array2::from_shape_fn((p, p), |(i, j)| if i == j { 1.0 } else { corr[(i, j)] }))
}

/// Square root factor `L` with `L L^T = sigma`. Positive semidefinite
/// matrices without a Cholesky factor fall back to the symmetric
/// eigen-decomposition.
fn sqrt_factor(sigma: &Array2<f64>) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    let m = DMatrix::from_fn(p, p, |i, j| sigma[[i, j]]);
    if (0..p).any(|i| (0..p).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12)) {
        return Err(PpfError::Config("covariance matrix is not symmetric".into()));
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
        return Err(PpfError::Config("covariance matrix is not positive semidefinite".into()));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Covariance of the AR innovations for a configuration.
pub fn innovation_covariance(config: &SimConfig) -> Result<Array2<f64>> {
    let p = config.p;
    match &config.sigma0 {
        CovarianceMode::Identity => Ok(Array2::eye(p)),
        CovarianceMode::RandomCorrelation => {
            let mut g = rng::stream(config.seed, &[STREAM_SIGMA]);
            gen_random_correlation(p, &mut g)
        }
        CovarianceMode::User(rows) => Ok(Array2::from_shape_fn((p, p), |(i, j)| rows[i][j])),
    }
}

/// AR(1) covariates `z_q = a z_{q-1} + N(0, Sigma0)` from `z_0 = 0`,
/// standardised to mean 0 and sd 1 over bins.
pub fn gen_covariates<R: Rng + ?Sized>(config: &SimConfig, sigma0: &Array2<f64>, rng: &mut R) -> Result<BinnedGenome> {
    let (q_len, p) = (config.n_bins, config.p);
    let l = sqrt_factor(sigma0)?;
    let mut z = Array2::<f64>::zeros((q_len, p));
    let mut prev = vec![0.0; p];
    let mut eps = vec![0.0; p];
    for q in 0..q_len {
        eps.iter_mut().for_each(|e| *e = StandardNormal.sample(rng));
        for a in 0..p {
            let shock: f64 = (0..p).map(|b| l[(a, b)] * eps[b]).sum();
            prev[a] = config.ar_coeff * prev[a] + shock;
            z[[q, a]] = prev[a];
        }
    }
    let names: Vec<String> = (1..=p).map(|l| format!("x{l}")).collect();
    for (c, mut col) in z.columns_mut().into_iter().enumerate() {
        let n = q_len as f64;
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(PpfError::Data(format!("simulated covariate {} is constant", names[c])));
        }
        col.mapv_inplace(|v| (v - mean) / sd);
    }
    BinnedGenome::tiled(CHROM, q_len, config.bin_width, z, names)
}

/// `2 + NegBin(mean m, v)` through its Gamma-Poisson mixture.
fn extra_copies<R: Rng + ?Sized>(m: f64, v: f64, rng: &mut R) -> f64 {
    let lambda = rng::gamma(rng, v, v / m);
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng)
}

/// Piecewise-constant copy numbers: per patient a Poisson number of
/// segments (at least one) with boundaries at random bin edges.
pub fn gen_copy_numbers<R: Rng + ?Sized>(config: &SimConfig, genome: &BinnedGenome, rng: &mut R) -> Result<(CopyNumberProfile, Vec<Segment>)> {
    let q_len = genome.n_bins();
    let seg_law = Poisson::new(config.seg_rate).map_err(|e| PpfError::Config(format!("segment rate: {e}")))?;
    let mut segments = Vec::new();
    for j in 0..config.n_patients {
        let n_seg = (seg_law.sample(rng) as usize).max(1);
        let mut cuts: Vec<usize> = (0..n_seg - 1).map(|_| rng.random_range(1..q_len)).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(q_len);
        for w in bounds.windows(2) {
            let copies = 2.0 + extra_copies(config.copy_mean, config.copy_v, rng);
            segments.push(Segment {
                patient: j,
                chrom: CHROM.to_string(),
                start: genome.bins[w[0]].start,
                end: genome.bins[w[1] - 1].end,
                copies,
            });
        }
    }
    let profile = CopyNumberProfile::from_segments(genome, config.n_patients, &segments)?;
    Ok((profile, segments))
}

#[derive(Debug, Clone)]
pub struct TruthParams {
    pub r0: Array2<f64>,
    pub theta0: Array2<f64>,
    pub beta0: Array2<f64>,
    pub mu0: Array1<f64>,
    pub xi0: Array2<f64>,
}

pub fn gen_truth<R: Rng + ?Sized>(config: &SimConfig, copy_integral: &Array1<f64>, rng: &mut R) -> TruthParams {
    let (k0, n_j, p) = (config.k0, config.n_patients, config.p);
    let mut r0 = Array2::zeros((N_CHANNELS, k0));
    let n_fixed = config.fixed_signatures.as_ref().map_or(0, |f| f.ncols());
    if let Some(f) = &config.fixed_signatures {
        r0.slice_mut(ndarray::s![.., ..n_fixed]).assign(f);
    }
    for k in n_fixed..k0 {
        let col = rng::dirichlet(rng, &vec![config.dirichlet_conc; N_CHANNELS]);
        r0.column_mut(k).assign(&Array1::from(col));
    }
    let mu0 = Array1::from_shape_fn(k0, |_| rng::gamma(rng, config.mu0_shape, config.mu0_rate));
    let xi0 = Array2::from_shape_fn((k0, n_j), |_| rng::gamma(rng, config.xi_shape, config.xi_rate));
    let theta0 = Array2::from_shape_fn((k0, n_j), |(k, j)| mu0[k] * xi0[[k, j]] / copy_integral[j]);
    let normal = Normal::new(0.0, config.sigma0_sq.sqrt()).expect("valid normal");
    let beta0 = Array2::from_shape_fn((k0, p), |(_, l)| {
        let b = normal.sample(rng);
        if l < config.p_true { b } else { 0.0 }
    });
    TruthParams {
        r0,
        theta0,
        beta0,
        mu0,
        xi0,
    }
}

#[derive(Debug, Clone)]
pub struct SimTruth {
    pub config: SimConfig,
    pub sigma0: Array2<f64>,
    pub genome: BinnedGenome,
    pub copies: CopyNumberProfile,
    pub segments: Vec<Segment>,
    pub params: TruthParams,
    pub patients: Vec<String>,
    pub records: Vec<MutationRecord>,
}

impl SimTruth {
    pub fn state(&self) -> ModelState {
        let k = self.config.k0;
        ModelState {
            r: self.params.r0.clone(),
            theta: self.params.theta0.clone(),
            beta: self.params.beta0.clone(),
            mu: self.params.mu0.clone(),
            sigma2: Array1::from_elem(k, self.config.sigma0_sq),
            fixed_signatures: false,
        }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let counts = CountTensor::from_records(&self.records, &self.genome, Some(&self.patients))?;
        Dataset::new(self.genome.clone(), self.copies.clone(), counts)
    }

    /// Q x K expected events per bin and factor, summed over patients.
    pub fn factor_bin_intensity(&self) -> Result<Array2<f64>> {
        let eff = covariate_effects(&self.params.beta0, &self.genome.covariates)?;
        let weights = self.genome.weights();
        let copies = &self.copies.copies;
        Ok(Array2::from_shape_fn(eff.e.dim(), |(q, k)| {
            let scaled: f64 = (0..self.patients.len())
                .map(|j| self.params.theta0[[k, j]] * copies[[q, j]] / 2.0)
                .sum();
            weights[q] * scaled * eff.e[[q, k]]
        }))
    }
}

pub fn patient_names(n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n).map(|j| format!("P{j:0width$}")).collect()
}

/// Per-patient Q x K bin masses `w_q (c_jq / 2) theta_kj E_qk`.
fn patient_masses(state: &ModelState, genome: &BinnedGenome, copies: &CopyNumberProfile, j: usize) -> Result<Array2<f64>> {
    let eff = covariate_effects(&state.beta, &genome.covariates)?;
    let w = genome.weights();
    Ok(Array2::from_shape_fn(eff.e.dim(), |(q, k)| {
        w[q] * copies.copies[[q, j]] / 2.0 * state.theta[[k, j]] * eff.e[[q, k]]
    }))
}

/// Draw the events of one (channel, patient) process by inverse CDF over
/// bins followed by a uniform position inside the bin.
fn draw_events<R: Rng + ?Sized>(bin_mass: &[f64], genome: &BinnedGenome, rng: &mut R) -> Vec<(usize, u64)> {
    let mut cdf = Vec::with_capacity(bin_mass.len());
    let mut acc = 0.0;
    for &m in bin_mass {
        acc += m;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return vec![];
    }
    let n = Poisson::new(acc).expect("positive rate").sample(rng) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * acc;
        let mut q = cdf.partition_point(|&c| c <= u).min(bin_mass.len() - 1);
        while bin_mass[q] == 0.0 {
            // u landed exactly on a flat stretch; step to the next bin with mass.
            q = (q + 1) % bin_mass.len();
        }
        let b = &genome.bins[q];
        let pos = rng.random_range(b.start..b.end);
        out.push((q, pos));
    }
    out
}

/// Catalog drawn from the summed intensity of `state`, one random stream
/// per (channel, patient).
pub fn sample_catalog(state: &ModelState, genome: &BinnedGenome, copies: &CopyNumberProfile, patients: &[String], seed: u64) -> Result<Vec<MutationRecord>> {
    let n_i = state.r.nrows();
    let per_patient = par::map_indices(patients.len(), |j| -> Result<Vec<MutationRecord>> {
        let mass = patient_masses(state, genome, copies, j)?;
        let mut out = Vec::new();
        for i in 0..n_i {
            let bin_mass: Vec<f64> = mass.rows().into_iter().map(|row| row.dot(&state.r.row(i))).collect();
            let mut g = rng::stream(seed, &[STREAM_CATALOG, i as u64, j as u64]);
            for (q, pos) in draw_events(&bin_mass, genome, &mut g) {
                out.push(MutationRecord {
                    patient: patients[j].clone(),
                    chrom: genome.bins[q].chrom.clone(),
                    pos,
                    channel: i,
                });
            }
        }
        Ok(out)
    });
    let mut records = Vec::new();
    for part in per_patient {
        records.extend(part?);
    }
    Ok(records)
}

/// Catalog built by simulating every factor's process separately and
/// merging the events.
pub fn sample_catalog_by_factor(state: &ModelState, genome: &BinnedGenome, copies: &CopyNumberProfile, patients: &[String], seed: u64) -> Result<Vec<MutationRecord>> {
    let (n_i, k) = state.r.dim();
    let mut records = Vec::new();
    for j in 0..patients.len() {
        let mass = patient_masses(state, genome, copies, j)?;
        for kk in 0..k {
            for i in 0..n_i {
                let bin_mass: Vec<f64> = mass.column(kk).iter().map(|m| m * state.r[[i, kk]]).collect();
                let mut g = rng::stream(seed, &[STREAM_CATALOG, i as u64, j as u64, kk as u64]);
                for (q, pos) in draw_events(&bin_mass, genome, &mut g) {
                    records.push(MutationRecord {
                        patient: patients[j].clone(),
                        chrom: genome.bins[q].chrom.clone(),
                        pos,
                        channel: i,
                    });
                }
            }
        }
    }
    Ok(records)
}

/// Run the whole generator from `config.seed`.
pub fn simulate(config: &SimConfig) -> Result<SimTruth> {
    config.validate()?;
    let sigma0 = innovation_covariance(config)?;
    let genome = gen_covariates(config, &sigma0, &mut rng::stream(config.seed, &[STREAM_COV]))?;
    let (copies, segments) = gen_copy_numbers(config, &genome, &mut rng::stream(config.seed, &[STREAM_COPIES]))?;
    let w = Array1::from(genome.weights());
    let copy_integral = copies.copies.t().dot(&w) / 2.0;
    let params = gen_truth(config, &copy_integral, &mut rng::stream(config.seed, &[STREAM_TRUTH]));
    let patients = patient_names(config.n_patients);
    let mut truth = SimTruth {
        config: config.clone(),
        sigma0,
        genome,
        copies,
        segments,
        params,
        patients,
        records: vec![],
    };
    truth.records = sample_catalog(&truth.state(), &truth.genome, &truth.copies, &truth.patients, config.seed)?;
    Ok(truth)
}

/// Write the data set in the ingestible text formats plus a `truth/`
/// directory with the generating parameters.
pub fn write_dataset(truth: &SimTruth, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("truth"))?;
    let g = &truth.genome;

    let mut f = BufWriter::new(fs::File::create(dir.join("bins.tsv"))?);
    write!(f, "chrom\tstart\tend\tweight")?;
    for n in &g.covariate_names {
        write!(f, "\t{n}")?;
    }
    writeln!(f)?;
    for (q, b) in g.bins.iter().enumerate() {
        write!(f, "{}\t{}\t{}\t{}", b.chrom, b.start, b.end, b.weight)?;
        for v in g.covariates.row(q) {
            write!(f, "\t{v}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;

    let mut f = BufWriter::new(fs::File::create(dir.join("copies.tsv"))?);
    writeln!(f, "patient\tchrom\tstart\tend\tcopies")?;
    for s in &truth.segments {
        writeln!(f, "{}\t{}\t{}\t{}\t{}", truth.patients[s.patient], s.chrom, s.start, s.end, s.copies)?;
    }
    f.flush()?;

    let mut f = BufWriter::new(fs::File::create(dir.join("mutations.tsv"))?);
    writeln!(f, "patient\tchrom\tpos\tchannel")?;
    for r in &truth.records {
        writeln!(f, "{}\t{}\t{}\t{}", r.patient, r.chrom, r.pos, format_channel(r.channel))?;
    }
    f.flush()?;

    fs::write(dir.join("patients.txt"), truth.patients.join("\n") + "\n")?;

    let t = dir.join("truth");
    let p = &truth.params;
    let k_labels: Vec<String> = (1..=truth.config.k0).map(|k| format!("k{k}")).collect();
    write_matrix(&t.join("R0.csv"), "channel", &channel_labels(), &k_labels, &p.r0)?;
    write_matrix(&t.join("Theta0.csv"), "factor", &k_labels, &truth.patients, &p.theta0)?;
    write_matrix(&t.join("B0.csv"), "factor", &k_labels, &g.covariate_names, &p.beta0)?;
    write_matrix(&t.join("mu0.csv"), "factor", &k_labels, &["mu".to_string()], &p.mu0.clone().insert_axis(ndarray::Axis(1)))?;
    write_matrix(&t.join("Sigma0.csv"), "covariate", &g.covariate_names, &g.covariate_names, &truth.sigma0)?;
    let bin_labels: Vec<String> = (0..g.n_bins()).map(|q| q.to_string()).collect();
    write_matrix(&t.join("intensity.csv"), "bin", &bin_labels, &k_labels, &truth.factor_bin_intensity()?)?;
    Ok(())
}
