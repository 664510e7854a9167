use serde::{Deserialize, Serialize};

use super::Layout;
use crate::dataio::ArdDataset;
use crate::error::{Error, Result};

/// Which subpopulations anchor the degree scale, and their combined
/// prevalence in the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaleSpec {
    pub idx: Vec<usize>,
    pub known_prev: f64,
}

impl RescaleSpec {
    pub fn new(idx: Vec<usize>, known_prev: f64) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Invalid("rescale index set is empty".into()));
        }
        if !(known_prev > 0.0 && known_prev < 1.0) {
            return Err(Error::Domain(format!(
                "known prevalence {known_prev} outside (0, 1)"
            )));
        }
        Ok(Self { idx, known_prev })
    }

    /// Anchor on every known subpopulation of `data`.
    pub fn from_dataset(data: &ArdDataset) -> Result<Self> {
        Self::from_dataset_subset(data, &data.known_indices())
    }

    /// Anchor on the given subpopulations, all of which must have known sizes.
    pub fn from_dataset_subset(data: &ArdDataset, idx: &[usize]) -> Result<Self> {
        let mut total = 0u64;
        for &j in idx {
            let size = data
                .subpops()
                .get(j)
                .ok_or_else(|| Error::Dimension(format!("subpopulation index {j} out of range")))?
                .known_size
                .ok_or_else(|| Error::Invalid(format!("subpopulation {} has no known size", j + 1)))?;
            total += size;
        }
        Self::new(idx.to_vec(), total as f64 / data.population_n() as f64)
    }

    /// The shift `C = log(sum_{k in idx} exp(beta_k) / known_prev)`.
    pub fn constant(&self, beta: &[f64]) -> f64 {
        let max = self.idx.iter().map(|&j| beta[j]).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return max;
        }
        let s: f64 = self.idx.iter().map(|&j| (beta[j] - max).exp()).sum();
        max + s.ln() - self.known_prev.ln()
    }
}

/// Shift the degree scale so that the anchoring prevalences sum to
/// `known_prev`, in place. Identity for the barrier model.
pub fn rescale_in_place(layout: &Layout, params: &mut [f64], spec: &RescaleSpec) {
    let Some(beta) = layout.beta() else {
        return;
    };
    let c = spec.constant(&params[beta.clone()]);
    for v in &mut params[layout.degree()] {
        *v += c;
    }
    for v in &mut params[beta] {
        *v -= c;
    }
}

/// Rescaled copy of `params`.
pub fn rescale(layout: &Layout, params: &[f64], spec: &RescaleSpec) -> Result<Vec<f64>> {
    layout.check(params)?;
    if spec.idx.is_empty() {
        return Err(Error::Invalid("rescale index set is empty".into()));
    }
    if spec.idx.iter().any(|&j| j >= layout.k) {
        return Err(Error::Dimension("rescale index beyond subpopulation count".into()));
    }
    let mut out = params.to_vec();
    rescale_in_place(layout, &mut out, spec);
    Ok(out)
}
