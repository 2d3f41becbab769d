use ndarray::{Array1, Array2};

use crate::copies::CopyNumberProfile;
use crate::counts::CountTensor;
use crate::error::{PpfError, Result};
use crate::genome::BinnedGenome;

/// Everything the model needs from the observed data, with the
/// copy-adjusted bin exposures precomputed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub genome: BinnedGenome,
    pub copies: CopyNumberProfile,
    pub counts: CountTensor,
    /// Q x J matrix of `weight_q * c_jq / 2`.
    pub exposure: Array2<f64>,
    /// Per-patient copy-adjusted length.
    pub copy_integral: Array1<f64>,
}

impl Dataset {
    pub fn new(genome: BinnedGenome, copies: CopyNumberProfile, counts: CountTensor) -> Result<Self> {
        let (q, j) = (genome.n_bins(), counts.n_patients());
        if copies.copies.dim() != (q, j) {
            return Err(PpfError::Dimension(format!(
                "copy numbers are {:?}, expected ({q}, {j})",
                copies.copies.dim()
            )));
        }
        if let Some(c) = counts.cells.iter().find(|c| c.q as usize >= q || c.j as usize >= j) {
            return Err(PpfError::Dimension(format!("count cell {c:?} outside the bin/patient grid")));
        }
        let weights = Array1::from(genome.weights());
        let mut exposure = copies.copies.clone();
        for (mut row, w) in exposure.rows_mut().into_iter().zip(weights.iter()) {
            row.mapv_inplace(|c| w * c / 2.0);
        }
        let copy_integral = exposure.sum_axis(ndarray::Axis(0));
        Ok(Dataset {
            genome,
            copies,
            counts,
            exposure,
            copy_integral,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.genome.n_bins()
    }

    pub fn n_patients(&self) -> usize {
        self.counts.n_patients()
    }

    pub fn n_channels(&self) -> usize {
        self.counts.n_channels
    }

    pub fn n_covariates(&self) -> usize {
        self.genome.n_covariates()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.genome.covariates
    }

    /// Patient totals summed over channels.
    pub fn patient_totals(&self) -> Array1<f64> {
        self.counts.totals.sum_axis(ndarray::Axis(0))
    }
}
