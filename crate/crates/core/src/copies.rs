//! Per-patient copy-number profiles on the bin grid.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{PpfError, Result};
use crate::genome::BinnedGenome;
use crate::io::{parse_f64, parse_u64, read_table};

/// Copy number assumed where no segment reports one.
pub const DIPLOID: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CopyNumberProfile {
    /// Q x J matrix of copies per cell, `copies[[q, j]]`.
    pub copies: Array2<f64>,
    /// Segments skipped because their patient or chromosome is unknown.
    pub ignored_segments: usize,
}

/// A copy-number segment for one patient, half-open coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub patient: usize,
    pub chrom: String,
    pub start: u64,
    pub end: u64,
    pub copies: f64,
}

impl CopyNumberProfile {
    pub fn diploid(n_bins: usize, n_patients: usize) -> Self {
        CopyNumberProfile {
            copies: Array2::from_elem((n_bins, n_patients), DIPLOID),
            ignored_segments: 0,
        }
    }

    /// Resolve segments onto bins by length-weighted averaging; uncovered
    /// parts of a bin count as diploid.
    pub fn from_segments(genome: &BinnedGenome, n_patients: usize, segments: &[Segment]) -> Result<Self> {
        let q_len = genome.n_bins();
        let mut weighted = Array2::<f64>::zeros((q_len, n_patients));
        let mut covered = Array2::<f64>::zeros((q_len, n_patients));
        let mut ignored = 0;
        for s in segments {
            if s.copies < 0.0 || !s.copies.is_finite() {
                return Err(PpfError::Data(format!("segment with invalid copy number {}", s.copies)));
            }
            let Some(range) = genome.chrom_range(&s.chrom) else {
                ignored += 1;
                continue;
            };
            if s.patient >= n_patients {
                ignored += 1;
                continue;
            }
            let bins = &genome.bins[range.clone()];
            let first = bins.partition_point(|b| b.end <= s.start);
            for b in &bins[first..] {
                if b.start >= s.end {
                    break;
                }
                let overlap = (b.end.min(s.end) - b.start.max(s.start)) as f64;
                weighted[[b.index, s.patient]] += overlap * s.copies;
                covered[[b.index, s.patient]] += overlap;
            }
        }
        let mut copies = Array2::from_elem((q_len, n_patients), DIPLOID);
        for (q, b) in genome.bins.iter().enumerate() {
            let len = (b.end - b.start) as f64;
            for j in 0..n_patients {
                let cov = covered[[q, j]];
                if cov > 0.0 {
                    let missing = (len - cov).max(0.0);
                    copies[[q, j]] = (weighted[[q, j]] + missing * DIPLOID) / cov.max(len);
                }
            }
        }
        Ok(CopyNumberProfile {
            copies,
            ignored_segments: ignored,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.copies.ncols()
    }
}

/// Read segments `patient, chrom, start, end, copies` for the given patients.
pub fn ingest_copy_numbers(path: &Path, genome: &BinnedGenome, patients: &[String]) -> Result<CopyNumberProfile> {
    let table = read_table(path)?;
    let need = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| PpfError::ingest(path, 1, format!("missing column {name:?}")))
    };
    let (cp, cc, cs, ce, cn) = (need("patient")?, need("chrom")?, need("start")?, need("end")?, need("copies")?);
    let index: HashMap<&str, usize> = patients.iter().enumerate().map(|(j, p)| (p.as_str(), j)).collect();
    let mut segments = Vec::with_capacity(table.rows.len());
    let mut unknown_patients = 0;
    for (line, f) in &table.rows {
        let start = parse_u64(path, *line, &f[cs], "start")?;
        let end = parse_u64(path, *line, &f[ce], "end")?;
        if end <= start {
            return Err(PpfError::ingest(path, *line, format!("end {end} <= start {start}")));
        }
        let copies = parse_f64(path, *line, &f[cn], "copies")?;
        if copies < 0.0 {
            return Err(PpfError::ingest(path, *line, format!("negative copy number {copies}")));
        }
        let Some(&patient) = index.get(f[cp].as_str()) else {
            unknown_patients += 1;
            continue;
        };
        segments.push(Segment {
            patient,
            chrom: f[cc].clone(),
            start,
            end,
            copies,
        });
    }
    let mut profile = CopyNumberProfile::from_segments(genome, patients.len(), &segments)?;
    profile.ignored_segments += unknown_patients;
    Ok(profile)
}

/// Copy-adjusted length of patient `j`: sum over bins of weight * copies / 2.
pub fn patient_copy_integral(cp: &CopyNumberProfile, genome: &BinnedGenome, j: usize) -> f64 {
    genome
        .bins
        .iter()
        .map(|b| b.weight * cp.copies[[b.index, j]] / 2.0)
        .sum()
}
