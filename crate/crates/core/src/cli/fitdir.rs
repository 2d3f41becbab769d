//! Loading data sets from text files and reading/writing fitted states.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::{Array1, Array2, Axis};
use ppf::channels::{channel_labels, N_CHANNELS};
use ppf::copies::{ingest_copy_numbers, CopyNumberProfile};
use ppf::counts::ingest_mutations;
use ppf::data::Dataset;
use ppf::genome::{ingest_covariates, standardize_covariates, CovariateSpec};
use ppf::io::{read_matrix, write_matrix};
use ppf::model::{Hyperparams, ModelState};
use ppf::PpfError;

use super::args::{DataArgs, HyperArgs};

pub struct Loaded {
    pub data: Dataset,
    pub inputs: Vec<(String, PathBuf)>,
}

fn pick(explicit: &Option<PathBuf>, dir: &Option<PathBuf>, file: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| dir.as_ref().map(|d| d.join(file)).filter(|p| p.exists()))
}

pub fn read_patients(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ids: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if ids.is_empty() {
        return Err(PpfError::Data(format!("{} lists no patients", path.display())).into());
    }
    Ok(ids)
}

pub fn load_data(a: &DataArgs) -> Result<Loaded> {
    let bins = pick(&a.bins, &a.data, "bins.tsv")
        .ok_or_else(|| PpfError::Config("no bins table: pass --bins or --data".into()))?;
    let mutations = pick(&a.mutations, &a.data, "mutations.tsv")
        .ok_or_else(|| PpfError::Config("no mutation catalog: pass --mutations or --data".into()))?;
    let copies = pick(&a.copies, &a.data, "copies.tsv");
    let patient_list = pick(&a.patient_list, &a.data, "patients.txt");

    let spec = CovariateSpec {
        columns: if a.no_covariates { Some(vec![]) } else { a.covariates.clone() },
    };
    let mut genome = ingest_covariates(&bins, &spec)?;
    if !a.no_standardize && genome.n_covariates() > 0 {
        genome = standardize_covariates(&genome, a.cap_quantile)?;
    }
    let mut inputs = vec![("bins".to_string(), bins), ("mutations".to_string(), mutations.clone())];
    let patients = match &patient_list {
        Some(p) => {
            inputs.push(("patients".into(), p.clone()));
            Some(read_patients(p)?)
        }
        None => None,
    };
    let counts = ingest_mutations(&mutations, &genome, patients.as_deref())?;
    if counts.dropped > 0 {
        eprintln!("note: {} mutations fell outside weighted bins and were dropped", counts.dropped);
    }
    let profile = match &copies {
        Some(c) => {
            inputs.push(("copies".into(), c.clone()));
            let p = ingest_copy_numbers(c, &genome, &counts.patients)?;
            if p.ignored_segments > 0 {
                eprintln!("note: {} copy-number segments were ignored", p.ignored_segments);
            }
            p
        }
        None => CopyNumberProfile::diploid(genome.n_bins(), counts.patients.len()),
    };
    Ok(Loaded {
        data: Dataset::new(genome, profile, counts)?,
        inputs,
    })
}

pub fn hyperparams(h: &HyperArgs, k: usize) -> Result<Hyperparams> {
    let mut hp = Hyperparams::new(N_CHANNELS, k);
    hp.a = h.a;
    hp.epsilon = h.epsilon;
    hp.alpha.fill(h.alpha);
    hp.c0 = h.c0;
    hp.d0 = h.d0;
    hp.validate()?;
    Ok(hp)
}

pub fn factor_labels(k: usize) -> Vec<String> {
    (1..=k).map(|k| format!("k{k}")).collect()
}

fn column(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(1))
}

/// Write `signatures.csv`, `exposures.csv`, `betas.csv`, `mu.csv` and
/// `sigma2.csv`.
pub fn write_state(dir: &Path, labels: &[String], patients: &[String], covariates: &[String], state: &ModelState) -> Result<()> {
    write_matrix(&dir.join("signatures.csv"), "channel", &channel_labels(), labels, &state.r)?;
    write_matrix(&dir.join("exposures.csv"), "factor", labels, patients, &state.theta)?;
    write_matrix(&dir.join("betas.csv"), "factor", labels, covariates, &state.beta)?;
    write_matrix(&dir.join("mu.csv"), "factor", labels, &["mu".to_string()], &column(&state.mu))?;
    write_matrix(&dir.join("sigma2.csv"), "factor", labels, &["sigma2".to_string()], &column(&state.sigma2))?;
    Ok(())
}

pub const STATE_FILES: [&str; 5] = ["signatures.csv", "exposures.csv", "betas.csv", "mu.csv", "sigma2.csv"];

pub fn state_inputs(role: &str, dir: &Path) -> Vec<(String, PathBuf)> {
    STATE_FILES.iter().map(|f| (format!("{role}/{f}"), dir.join(f))).collect()
}

pub struct StoredFit {
    pub labels: Vec<String>,
    pub patients: Vec<String>,
    pub covariates: Vec<String>,
    pub state: ModelState,
}

impl StoredFit {
    /// Fail unless the fit was made on data with the same patients and
    /// covariates.
    pub fn check(&self, data: &Dataset, dir: &Path) -> Result<()> {
        if self.patients != data.counts.patients {
            return Err(PpfError::Dimension(format!("{}: patients differ from the data set", dir.display())).into());
        }
        if self.covariates != data.genome.covariate_names {
            return Err(PpfError::Dimension(format!("{}: covariates differ from the data set", dir.display())).into());
        }
        self.state.check_dims(data)?;
        Ok(())
    }
}

pub fn read_state(dir: &Path) -> Result<StoredFit> {
    if !dir.is_dir() {
        return Err(PpfError::Config(format!("fit directory {} does not exist", dir.display())).into());
    }
    let (_, labels, r) = read_matrix(&dir.join("signatures.csv"))?;
    let (rows, patients, theta) = read_matrix(&dir.join("exposures.csv"))?;
    let (brows, covariates, beta) = read_matrix(&dir.join("betas.csv"))?;
    let (mrows, _, mu) = read_matrix(&dir.join("mu.csv"))?;
    let (srows, _, sigma2) = read_matrix(&dir.join("sigma2.csv"))?;
    if [&rows, &brows, &mrows, &srows].iter().any(|r| **r != labels) {
        return Err(PpfError::Data(format!("{}: factor labels disagree between files", dir.display())).into());
    }
    Ok(StoredFit {
        labels,
        patients,
        covariates,
        state: ModelState {
            r,
            theta,
            beta,
            mu: mu.column(0).to_owned(),
            sigma2: sigma2.column(0).to_owned(),
            fixed_signatures: false,
        },
    })
}
