//! Binned coordinate system and covariate tracks.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PpfError, Result};
use crate::io::{parse_f64, parse_u64, read_table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub index: usize,
    pub chrom: String,
    pub start: u64,
    pub end: u64,
    /// Effective number of bases, after exclusions.
    pub weight: f64,
}

/// Per-covariate affine transform: `x -> (min(x, cap) - mean) / sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub cap: f64,
    pub mean: f64,
    pub sd: f64,
}

impl ColumnTransform {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x.min(self.cap) - self.mean) / self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub cap_quantile: f64,
    pub columns: Vec<ColumnTransform>,
}

#[derive(Debug, Clone)]
pub struct BinnedGenome {
    pub bins: Vec<Bin>,
    /// Q x p covariate matrix, row q is the covariate vector of bin q.
    pub covariates: Array2<f64>,
    pub covariate_names: Vec<String>,
    pub standardization: Option<Standardization>,
    chrom_ranges: Vec<(String, Range<usize>)>,
}

/// Optional selection of covariate columns by name.
#[derive(Debug, Clone, Default)]
pub struct CovariateSpec {
    pub columns: Option<Vec<String>>,
}

impl BinnedGenome {
    /// Build from already-validated parts. Bins must be grouped by chromosome
    /// and sorted by start within each chromosome.
    pub fn new(bins: Vec<Bin>, covariates: Array2<f64>, covariate_names: Vec<String>) -> Result<Self> {
        if covariates.nrows() != bins.len() || covariates.ncols() != covariate_names.len() {
            return Err(PpfError::Dimension(format!(
                "covariates are {}x{}, expected {}x{}",
                covariates.nrows(),
                covariates.ncols(),
                bins.len(),
                covariate_names.len()
            )));
        }
        let mut chrom_ranges: Vec<(String, Range<usize>)> = Vec::new();
        for (q, b) in bins.iter().enumerate() {
            if b.end <= b.start {
                return Err(PpfError::Data(format!("bin {q}: end <= start")));
            }
            if !(b.weight >= 0.0) || b.weight > (b.end - b.start) as f64 {
                return Err(PpfError::Data(format!("bin {q}: weight {} outside [0, end-start]", b.weight)));
            }
            match chrom_ranges.last_mut() {
                Some((c, r)) if *c == b.chrom => {
                    if bins[r.end - 1].end > b.start {
                        return Err(PpfError::Data(format!("bin {q}: overlaps or precedes previous bin")));
                    }
                    r.end = q + 1;
                }
                _ => {
                    if chrom_ranges.iter().any(|(c, _)| *c == b.chrom) {
                        return Err(PpfError::Data(format!("chromosome {} is not contiguous", b.chrom)));
                    }
                    chrom_ranges.push((b.chrom.clone(), q..q + 1));
                }
            }
        }
        let mut bins = bins;
        for (q, b) in bins.iter_mut().enumerate() {
            b.index = q;
        }
        Ok(BinnedGenome {
            bins,
            covariates,
            covariate_names,
            standardization: None,
            chrom_ranges,
        })
    }

    /// Equal-width tiling of a single contig.
    pub fn tiled(chrom: &str, n_bins: usize, width: u64, covariates: Array2<f64>, names: Vec<String>) -> Result<Self> {
        let bins = (0..n_bins)
            .map(|q| Bin {
                index: q,
                chrom: chrom.to_string(),
                start: q as u64 * width,
                end: (q as u64 + 1) * width,
                weight: width as f64,
            })
            .collect();
        Self::new(bins, covariates, names)
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.weight).collect()
    }

    /// Total effective length T.
    pub fn total_length(&self) -> f64 {
        self.bins.iter().map(|b| b.weight).sum()
    }

    pub fn chromosomes(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.chrom_ranges.iter().map(|(c, r)| (c.as_str(), r.clone()))
    }

    pub fn chrom_range(&self, chrom: &str) -> Option<Range<usize>> {
        self.chrom_ranges.iter().find(|(c, _)| c == chrom).map(|(_, r)| r.clone())
    }

    /// Index of the bin containing `pos` on `chrom`, if any.
    pub fn locate(&self, chrom: &str, pos: u64) -> Option<usize> {
        let range = self.chrom_range(chrom)?;
        let bins = &self.bins[range.clone()];
        let idx = bins.partition_point(|b| b.start <= pos);
        if idx == 0 {
            return None;
        }
        let b = &bins[idx - 1];
        (pos < b.end).then_some(range.start + idx - 1)
    }

    /// Apply a stored standardization to a raw covariate matrix.
    pub fn apply_standardization(raw: &Array2<f64>, record: &Standardization) -> Array2<f64> {
        let mut out = raw.clone();
        for (c, t) in record.columns.iter().enumerate() {
            out.column_mut(c).mapv_inplace(|x| t.apply(x));
        }
        out
    }
}

/// Read a bins/covariates table: `chrom, start, end, weight, <covariates...>`.
pub fn ingest_covariates(path: &Path, spec: &CovariateSpec) -> Result<BinnedGenome> {
    let table = read_table(path)?;
    let need = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| PpfError::ingest(path, 1, format!("missing column {name:?}")))
    };
    let (c_chrom, c_start, c_end, c_weight) = (need("chrom")?, need("start")?, need("end")?, need("weight")?);
    let fixed = [c_chrom, c_start, c_end, c_weight];
    let cov_cols: Vec<usize> = match &spec.columns {
        Some(names) => names.iter().map(|n| need(n)).collect::<Result<_>>()?,
        None => (0..table.header.len()).filter(|c| !fixed.contains(c)).collect(),
    };
    let names: Vec<String> = cov_cols.iter().map(|&c| table.header[c].clone()).collect();

    let mut bins = Vec::with_capacity(table.rows.len());
    let mut values = Vec::with_capacity(table.rows.len() * cov_cols.len());
    let mut last: HashMap<String, u64> = HashMap::new();
    let mut prev_chrom: Option<String> = None;
    for (line, f) in &table.rows {
        let line = *line;
        let chrom = f[c_chrom].clone();
        let start = parse_u64(path, line, &f[c_start], "start")?;
        let end = parse_u64(path, line, &f[c_end], "end")?;
        let weight = parse_f64(path, line, &f[c_weight], "weight")?;
        if end <= start {
            return Err(PpfError::ingest(path, line, format!("end {end} <= start {start}")));
        }
        if weight < 0.0 {
            return Err(PpfError::ingest(path, line, format!("negative weight {weight}")));
        }
        if weight > (end - start) as f64 {
            return Err(PpfError::ingest(path, line, format!("weight {weight} exceeds bin length {}", end - start)));
        }
        if prev_chrom.as_deref() != Some(chrom.as_str()) && last.contains_key(&chrom) {
            return Err(PpfError::ingest(path, line, format!("rows for chromosome {chrom} are not contiguous")));
        }
        if let Some(&prev_end) = last.get(&chrom) {
            if start < prev_end {
                return Err(PpfError::ingest(path, line, "bin overlaps or precedes the previous bin"));
            }
        }
        last.insert(chrom.clone(), end);
        prev_chrom = Some(chrom.clone());
        for &c in &cov_cols {
            if f[c].is_empty() || f[c].eq_ignore_ascii_case("na") {
                return Err(PpfError::ingest(path, line, format!("missing value for covariate {}", table.header[c])));
            }
            values.push(parse_f64(path, line, &f[c], &table.header[c])?);
        }
        bins.push(Bin {
            index: bins.len(),
            chrom,
            start,
            end,
            weight,
        });
    }
    let x = Array2::from_shape_vec((bins.len(), cov_cols.len()), values)
        .map_err(|e| PpfError::Data(e.to_string()))?;
    BinnedGenome::new(bins, x, names)
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Cap each covariate at its empirical `cap_quantile`, then centre and scale
/// to mean 0 and sd 1. Statistics use bins with positive weight, unweighted.
pub fn standardize_covariates(genome: &BinnedGenome, cap_quantile: f64) -> Result<BinnedGenome> {
    if !(cap_quantile > 0.5 && cap_quantile <= 1.0) {
        return Err(PpfError::Config(format!("cap quantile {cap_quantile} not in (0.5, 1]")));
    }
    let eligible: Vec<usize> = genome.bins.iter().filter(|b| b.weight > 0.0).map(|b| b.index).collect();
    if eligible.len() < 2 {
        return Err(PpfError::Data("fewer than two bins with positive weight".into()));
    }
    let mut columns = Vec::with_capacity(genome.n_covariates());
    for (c, name) in genome.covariate_names.iter().enumerate() {
        let col = genome.covariates.column(c);
        let mut vals: Vec<f64> = eligible.iter().map(|&q| col[q]).collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        let cap = quantile_sorted(&vals, cap_quantile);
        let capped: Vec<f64> = eligible.iter().map(|&q| col[q].min(cap)).collect();
        let n = capped.len() as f64;
        let mean = capped.iter().sum::<f64>() / n;
        let var = capped.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        if !(sd > 0.0) || sd < 1e-12 * mean.abs().max(1.0) {
            return Err(PpfError::Data(format!("covariate {name} is constant over weighted bins")));
        }
        columns.push(ColumnTransform { cap, mean, sd });
    }
    let record = Standardization { cap_quantile, columns };
    let mut out = genome.clone();
    out.covariates = BinnedGenome::apply_standardization(&genome.covariates, &record);
    out.standardization = Some(record);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn column_stats(g: &BinnedGenome, c: usize) -> (f64, f64) {
        let vals: Vec<f64> = g.bins.iter().filter(|b| b.weight > 0.0).map(|b| g.covariates[[b.index, c]]).collect();
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    #[test]
    fn total_length_sums_weights() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "b.tsv",
            "chrom\tstart\tend\tweight\tx\nchr1\t0\t2000\t2000\t1\nchr1\t2000\t4000\t2000\t2\nchr1\t4000\t6000\t0\t3\n",
        );
        let g = ingest_covariates(&p, &CovariateSpec::default()).unwrap();
        assert_eq!(g.n_bins(), 3);
        assert_eq!(g.total_length(), 4000.0);
        assert_eq!(g.covariate_names, vec!["x"]);
    }

    #[test]
    fn bad_interval_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("chrom,start,end,weight,x\n");
        for q in 0..5 {
            body.push_str(&format!("c,{},{},10,1\n", q * 10, q * 10 + 10));
        }
        body.push_str("c,60,60,0,1\n"); // line 7
        let p = write(&dir, "b.csv", &body);
        let err = ingest_covariates(&p, &CovariateSpec::default()).unwrap_err();
        assert!(matches!(err, PpfError::Ingest { line: 7, .. }), "{err}");
    }

    #[test]
    fn overlap_negative_weight_and_non_numeric_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "o.tsv", "chrom\tstart\tend\tweight\tx\nc\t0\t10\t10\t1\nc\t5\t15\t10\t1\n");
        assert!(matches!(ingest_covariates(&p, &CovariateSpec::default()), Err(PpfError::Ingest { line: 3, .. })));
        let p = write(&dir, "w.tsv", "chrom\tstart\tend\tweight\tx\nc\t0\t10\t-1\t1\n");
        assert!(matches!(ingest_covariates(&p, &CovariateSpec::default()), Err(PpfError::Ingest { line: 2, .. })));
        let p = write(&dir, "n.tsv", "chrom\tstart\tend\tweight\tx\nc\t0\t10\t10\tabc\n");
        assert!(matches!(ingest_covariates(&p, &CovariateSpec::default()), Err(PpfError::Ingest { line: 2, .. })));
        let p = write(&dir, "m.tsv", "chrom\tstart\tend\tweight\tx\nc\t0\t10\t10\tNA\n");
        assert!(ingest_covariates(&p, &CovariateSpec::default()).is_err());
    }

    #[test]
    fn tiling_of_toy_contig() {
        let g = BinnedGenome::tiled("toy", 10_000 / 2_000, 2_000, Array2::zeros((5, 0)), vec![]).unwrap();
        assert_eq!(g.n_bins(), 5);
        assert_eq!(g.locate("toy", 0), Some(0));
        assert_eq!(g.locate("toy", 3999), Some(1));
        assert_eq!(g.locate("toy", 10_000), None);
        assert_eq!(g.locate("other", 5), None);
    }

    #[test]
    fn standardize_simple_column() {
        let x = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = BinnedGenome::tiled("c", 4, 10, x, vec!["x".into()]).unwrap();
        let s = standardize_covariates(&g, 0.999).unwrap();
        let (m, sd) = column_stats(&s, 0);
        assert!(m.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outlier_is_capped_at_sorted_quantile() {
        let n = 2000;
        let mut vals: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 100.0).collect();
        vals[17] = 1e6;
        let x = Array2::from_shape_vec((n, 1), vals.clone()).unwrap();
        let g = BinnedGenome::tiled("c", n, 10, x, vec!["x".into()]).unwrap();
        let s = standardize_covariates(&g, 0.999).unwrap();
        // Oracle: direct sort, type-7 interpolation.
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = (n as f64 - 1.0) * 0.999;
        let lo = h.floor() as usize;
        let expected_cap = sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo]);
        let t = &s.standardization.as_ref().unwrap().columns[0];
        assert_eq!(t.cap, expected_cap);
        let restored = s.covariates[[17, 0]] * t.sd + t.mean;
        assert!((restored - expected_cap).abs() < 1e-9);
    }

    #[test]
    fn standardized_column_is_fixed_point() {
        // Top values tied so nothing exceeds the cap.
        let n = 1000;
        let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        for v in vals.iter_mut().take(10) {
            *v = 3.0;
        }
        let x = Array2::from_shape_vec((n, 1), vals).unwrap();
        let g = BinnedGenome::tiled("c", n, 10, x, vec!["x".into()]).unwrap();
        let once = standardize_covariates(&g, 0.999).unwrap();
        let twice = standardize_covariates(&once, 0.999).unwrap();
        for (a, b) in once.covariates.iter().zip(twice.covariates.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stored_record_reproduces_bitwise_and_ignores_zero_weight_bins() {
        let x = Array2::from_shape_vec((5, 1), vec![1.0, 5.0, 2.0, 100.0, 3.0]).unwrap();
        let mut g = BinnedGenome::tiled("c", 5, 10, x.clone(), vec!["x".into()]).unwrap();
        g.bins[3].weight = 0.0;
        let s = standardize_covariates(&g, 1.0).unwrap();
        let again = BinnedGenome::apply_standardization(&x, s.standardization.as_ref().unwrap());
        assert_eq!(again, s.covariates);
        let (m, sd) = column_stats(&s, 0);
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_named() {
        let x = Array2::from_elem((4, 1), 2.0);
        let g = BinnedGenome::tiled("c", 4, 10, x, vec!["flat".into()]).unwrap();
        let err = standardize_covariates(&g, 0.999).unwrap_err().to_string();
        assert!(err.contains("flat"));
    }
}
