//! Mutation catalogs reduced to sparse binned counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use ndarray::Array2;

use crate::channels::{parse_channel, N_CHANNELS};
use crate::error::{PpfError, Result};
use crate::genome::BinnedGenome;
use crate::io::{parse_u64, read_table};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationRecord {
    pub patient: String,
    pub chrom: String,
    pub pos: u64,
    pub channel: usize,
}

/// Nonzero entry of the (bin, patient, channel) count tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparseCell {
    pub q: u32,
    pub j: u32,
    pub i: u16,
    pub count: u32,
}

#[derive(Debug, Clone)]
pub struct CountTensor {
    /// Cells sorted by (q, j, i), counts >= 1.
    pub cells: Vec<SparseCell>,
    /// I x J totals N_ij.
    pub totals: Array2<f64>,
    pub patients: Vec<String>,
    pub n_channels: usize,
    /// Records discarded because they fell outside all bins or in a
    /// zero-weight bin.
    pub dropped: usize,
}

impl CountTensor {
    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn total(&self) -> f64 {
        self.totals.sum()
    }

    /// Build from (q, j, i) triples, one per event.
    pub fn from_events(
        events: impl IntoIterator<Item = (usize, usize, usize)>,
        patients: Vec<String>,
        n_channels: usize,
        dropped: usize,
    ) -> Self {
        let mut map: BTreeMap<(u32, u32, u16), u32> = BTreeMap::new();
        for (q, j, i) in events {
            *map.entry((q as u32, j as u32, i as u16)).or_insert(0) += 1;
        }
        Self::from_map(map, patients, n_channels, dropped)
    }

    fn from_map(map: BTreeMap<(u32, u32, u16), u32>, patients: Vec<String>, n_channels: usize, dropped: usize) -> Self {
        let mut totals = Array2::zeros((n_channels, patients.len()));
        let cells: Vec<SparseCell> = map
            .into_iter()
            .map(|((q, j, i), count)| {
                totals[[i as usize, j as usize]] += count as f64;
                SparseCell { q, j, i, count }
            })
            .collect();
        CountTensor {
            cells,
            totals,
            patients,
            n_channels,
            dropped,
        }
    }

    /// Assign records to bins. Patients are indexed by `patients` when given,
    /// otherwise by the sorted set of ids present in the records.
    pub fn from_records(
        records: &[MutationRecord],
        genome: &BinnedGenome,
        patients: Option<&[String]>,
    ) -> Result<Self> {
        let patients: Vec<String> = match patients {
            Some(p) => p.to_vec(),
            None => records
                .iter()
                .map(|r| r.patient.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let index: HashMap<&str, usize> = patients.iter().enumerate().map(|(j, p)| (p.as_str(), j)).collect();
        let mut events = Vec::with_capacity(records.len());
        let mut dropped = 0;
        for r in records {
            let j = *index
                .get(r.patient.as_str())
                .ok_or_else(|| PpfError::Data(format!("unknown patient {}", r.patient)))?;
            if genome.chrom_range(&r.chrom).is_none() {
                return Err(PpfError::Data(format!("unknown chromosome {}", r.chrom)));
            }
            match genome.locate(&r.chrom, r.pos) {
                Some(q) if genome.bins[q].weight > 0.0 => events.push((q, j, r.channel)),
                _ => dropped += 1,
            }
        }
        Ok(Self::from_events(events, patients, N_CHANNELS, dropped))
    }
}

/// Read a catalog `patient, chrom, pos, channel` and bin it.
pub fn ingest_mutations(path: &Path, genome: &BinnedGenome, patients: Option<&[String]>) -> Result<CountTensor> {
    let table = read_table(path)?;
    let need = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| PpfError::ingest(path, 1, format!("missing column {name:?}")))
    };
    let (cp, cc, cpos, cch) = (need("patient")?, need("chrom")?, need("pos")?, need("channel")?);
    let mut records = Vec::with_capacity(table.rows.len());
    let known: Option<BTreeSet<&str>> = patients.map(|p| p.iter().map(|s| s.as_str()).collect());
    for (line, f) in &table.rows {
        let channel = parse_channel(&f[cch]).map_err(|e| PpfError::ingest(path, *line, e.to_string()))?;
        let pos = parse_u64(path, *line, &f[cpos], "pos")?;
        if genome.chrom_range(&f[cc]).is_none() {
            return Err(PpfError::ingest(path, *line, format!("unknown chromosome {:?}", f[cc])));
        }
        if let Some(k) = &known {
            if !k.contains(f[cp].as_str()) {
                return Err(PpfError::ingest(path, *line, format!("unknown patient {:?}", f[cp])));
            }
        }
        records.push(MutationRecord {
            patient: f[cp].clone(),
            chrom: f[cc].clone(),
            pos,
            channel,
        });
    }
    CountTensor::from_records(&records, genome, patients)
}
