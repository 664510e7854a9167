//! Synthetic ARD generators with ground-truth ledgers.
//!
//! [`simulate_latent_space`] builds a population on the unit sphere with
//! log-linear tie probabilities `min(1, exp(g_i + g_j + zeta z_i.z_j))`
//! and vMF-shaped subpopulation membership. [`simulate_barrier_effects`]
//! draws degrees, ego-specific beta-distributed exposure to each
//! subpopulation and binomial counts.
//!
//! Every ego row is drawn from its own generator stream, so rows can be
//! produced in parallel without changing the output.

use rand::seq::index::sample as sample_index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{ArdDataset, GeneratorParams, GroundTruth, SubpopMeta};
use crate::dists::{dot, sample_beta, sample_binomial, sample_lognormal, sample_uniform_sphere};
use crate::error::{Error, Result};
use crate::rng::stream;

const DEFAULT_BARRIER_CONFIG: &str = include_str!("../../../configs/barrier_mccarty.json");

/// Settings of the latent-space generator.
///
/// Empty `subpop_target_sizes` or `subpop_concentrations` are filled in
/// with log-spaced sizes between 3000 and 400 and concentrations cycling
/// through 2..=6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentSimConfig {
    pub population_n: u64,
    pub sample_n: usize,
    pub k_subpops: usize,
    pub zeta: f64,
    pub gravity_mean: f64,
    pub gravity_sd: f64,
    pub subpop_target_sizes: Vec<f64>,
    pub subpop_concentrations: Vec<f64>,
    /// Fixed subpopulation centers; drawn uniformly when absent.
    pub centers: Option<Vec<[f64; 3]>>,
    /// Subpopulation reported without a known size (default: the last).
    pub unknown_index: Option<usize>,
    pub seed: u64,
}

impl Default for LatentSimConfig {
    fn default() -> Self {
        Self {
            population_n: 100_000,
            sample_n: 1000,
            k_subpops: 15,
            zeta: 3.0,
            gravity_mean: -3.6,
            gravity_sd: 0.5,
            subpop_target_sizes: Vec::new(),
            subpop_concentrations: Vec::new(),
            centers: None,
            unknown_index: None,
            seed: 1,
        }
    }
}

impl LatentSimConfig {
    pub fn target_sizes(&self) -> Vec<f64> {
        if !self.subpop_target_sizes.is_empty() {
            return self.subpop_target_sizes.clone();
        }
        let k = self.k_subpops;
        let (hi, lo) = (3000f64.ln(), 400f64.ln());
        (0..k)
            .map(|j| {
                let t = if k > 1 { j as f64 / (k - 1) as f64 } else { 0.0 };
                (hi + t * (lo - hi)).exp().round()
            })
            .collect()
    }

    pub fn concentrations(&self) -> Vec<f64> {
        if !self.subpop_concentrations.is_empty() {
            return self.subpop_concentrations.clone();
        }
        (0..self.k_subpops).map(|j| 2.0 + (j % 5) as f64).collect()
    }

    fn unknown(&self) -> usize {
        self.unknown_index.unwrap_or(self.k_subpops.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k_subpops;
        if k == 0 || self.sample_n == 0 {
            return Err(Error::Invalid("sample_n and k_subpops must be positive".into()));
        }
        if self.sample_n as u64 > self.population_n {
            return Err(Error::Invalid(format!(
                "sample_n {} exceeds population_n {}",
                self.sample_n, self.population_n
            )));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::Domain(format!("zeta must be positive, got {}", self.zeta)));
        }
        if !(self.gravity_sd >= 0.0 && self.gravity_sd.is_finite() && self.gravity_mean.is_finite()) {
            return Err(Error::Domain("gravity parameters must be finite with sd >= 0".into()));
        }
        let sizes = self.target_sizes();
        let etas = self.concentrations();
        if sizes.len() != k || etas.len() != k {
            return Err(Error::Dimension(format!(
                "{k} subpopulations but {} target sizes and {} concentrations",
                sizes.len(),
                etas.len()
            )));
        }
        for &s in &sizes {
            if !(s > 0.0 && s < self.population_n as f64) {
                return Err(Error::Domain(format!("target size {s} outside (0, N)")));
            }
        }
        for &e in &etas {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Domain(format!("concentration {e} must be positive")));
            }
        }
        if let Some(c) = &self.centers {
            if c.len() != k {
                return Err(Error::Dimension(format!("{} centers for {k} subpopulations", c.len())));
            }
        }
        if self.unknown() >= k {
            return Err(Error::Dimension("unknown_index beyond subpopulation count".into()));
        }
        if k < 2 {
            return Err(Error::Invalid("at least two subpopulations are needed (one is unknown)".into()));
        }
        Ok(())
    }
}

/// Settings of the barrier-effects generator.
///
/// The defaults live in `configs/barrier_mccarty.json`; partial settings
/// are merged over them with [`BarrierSimConfig::from_partial`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSimConfig {
    pub sample_n: usize,
    pub k_subpops: usize,
    pub population_n: u64,
    pub degree_logmean: f64,
    pub degree_logsd: f64,
    pub subpop_names: Vec<String>,
    pub subpop_prevalences: Vec<f64>,
    pub dispersions: Vec<f64>,
    /// Subpopulation reported without a known size (default: the last).
    pub unknown_index: Option<usize>,
    pub seed: u64,
}

impl Default for BarrierSimConfig {
    /// The checked-in McCarty-style parameter set.
    fn default() -> Self {
        serde_json::from_str(DEFAULT_BARRIER_CONFIG).expect("bundled barrier config parses")
    }
}

impl BarrierSimConfig {
    /// Defaults overridden by the keys present in `partial` (a JSON object).
    pub fn from_partial(partial: &serde_json::Value) -> Result<Self> {
        let mut base: serde_json::Value = serde_json::from_str(DEFAULT_BARRIER_CONFIG)?;
        let Some(over) = partial.as_object() else {
            return Err(Error::Invalid("barrier simulation config must be a JSON object".into()));
        };
        let obj = base.as_object_mut().expect("bundled config is an object");
        for (key, v) in over {
            obj.insert(key.clone(), v.clone());
        }
        Ok(serde_json::from_value(base)?)
    }

    fn unknown(&self) -> usize {
        self.unknown_index.unwrap_or(self.k_subpops.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k_subpops;
        if k < 2 || self.sample_n == 0 {
            return Err(Error::Invalid("need sample_n > 0 and at least two subpopulations".into()));
        }
        if self.subpop_prevalences.len() != k || self.dispersions.len() != k {
            return Err(Error::Dimension(format!(
                "{k} subpopulations but {} prevalences and {} dispersions",
                self.subpop_prevalences.len(),
                self.dispersions.len()
            )));
        }
        if !self.subpop_names.is_empty() && self.subpop_names.len() != k {
            return Err(Error::Dimension(format!("{} names for {k} subpopulations", self.subpop_names.len())));
        }
        for (&m, &r) in self.subpop_prevalences.iter().zip(&self.dispersions) {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::Domain(format!("prevalence {m} outside (0, 1)")));
            }
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Domain(format!("dispersion {r} outside (0, 1)")));
            }
        }
        if !(self.degree_logsd >= 0.0 && self.degree_logsd.is_finite() && self.degree_logmean.is_finite()) {
            return Err(Error::Domain("degree parameters must be finite with logsd >= 0".into()));
        }
        if self.unknown() >= k {
            return Err(Error::Dimension("unknown_index beyond subpopulation count".into()));
        }
        Ok(())
    }
}

fn subpop_metadata(sizes: &[u64], names: &[String], unknown: usize) -> Vec<SubpopMeta> {
    sizes
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("subpop_{}", j + 1));
            if j == unknown {
                SubpopMeta::unknown(name)
            } else {
                SubpopMeta::known(name, s)
            }
        })
        .collect()
}

/// Scale `c` so that `sum_j min(1, c w_j)` equals `target`.
fn membership_scale(weights: &[f64], target: f64) -> f64 {
    let expected = |c: f64| weights.iter().map(|w| (c * w).min(1.0)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, target / weights.iter().sum::<f64>());
    while expected(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Latent-space synthetic ARD.
pub fn simulate_latent_space(config: &LatentSimConfig) -> Result<(ArdDataset, GroundTruth)> {
    config.validate()?;
    let big_n = config.population_n as usize;
    let k = config.k_subpops;
    let targets = config.target_sizes();
    let etas = config.concentrations();

    let mut rng = stream(config.seed, &[1]);
    let mut positions = Vec::with_capacity(big_n);
    let mut gravity = Vec::with_capacity(big_n);
    for _ in 0..big_n {
        positions.push(sample_uniform_sphere(&mut rng));
        let z: f64 = StandardNormal.sample(&mut rng);
        gravity.push(config.gravity_mean + config.gravity_sd * z);
    }
    let centers = match &config.centers {
        Some(c) => c.iter().map(|&v| crate::dists::normalize(v)).collect(),
        None => {
            let mut rng = stream(config.seed, &[2]);
            (0..k).map(|_| sample_uniform_sphere(&mut rng)).collect::<Vec<_>>()
        }
    };

    let mut members: Vec<Vec<usize>> = Vec::with_capacity(k);
    for j in 0..k {
        let weights: Vec<f64> = positions.iter().map(|z| (etas[j] * dot(z, &centers[j])).exp()).collect();
        let c = membership_scale(&weights, targets[j]);
        let clamped = weights.iter().filter(|&&w| c * w > 1.0).count();
        if clamped as f64 > 0.01 * targets[j] {
            return Err(Error::Domain(format!(
                "subpopulation {} (target size {}, concentration {}) needs membership probabilities above 1 for {clamped} members",
                j + 1,
                targets[j],
                etas[j]
            )));
        }
        let mut rng = stream(config.seed, &[3, j as u64]);
        members.push(
            weights
                .iter()
                .enumerate()
                .filter(|&(_, &w)| rng.random::<f64>() < (c * w).min(1.0))
                .map(|(id, _)| id)
                .collect(),
        );
    }

    // member id -> subpopulations it belongs to, in CSR form
    let mut starts = vec![0usize; big_n + 1];
    for m in &members {
        for &id in m {
            starts[id + 1] += 1;
        }
    }
    for i in 0..big_n {
        starts[i + 1] += starts[i];
    }
    let mut fill = starts.clone();
    let mut groups = vec![0u32; starts[big_n]];
    for (j, m) in members.iter().enumerate() {
        for &id in m {
            groups[fill[id]] = j as u32;
            fill[id] += 1;
        }
    }

    let mut rng = stream(config.seed, &[4]);
    let ego_ids: Vec<usize> = sample_index(&mut rng, big_n, config.sample_n).into_vec();

    let zeta = config.zeta;
    let rows: Vec<(Vec<u32>, u64)> = ego_ids
        .par_iter()
        .enumerate()
        .map(|(row, &ego)| {
            let mut rng = stream(config.seed, &[5, row as u64]);
            let (zi, gi) = (positions[ego], gravity[ego]);
            let mut y = vec![0u32; k];
            let mut degree = 0u64;
            for j in 0..big_n {
                if j == ego {
                    continue;
                }
                let p = (gi + gravity[j] + zeta * dot(&zi, &positions[j])).exp();
                if rng.random::<f64>() < p {
                    degree += 1;
                    for &g in &groups[starts[j]..starts[j + 1]] {
                        y[g as usize] += 1;
                    }
                }
            }
            (y, degree)
        })
        .collect();

    let sizes: Vec<u64> = members.iter().map(|m| m.len() as u64).collect();
    if let Some(j) = sizes.iter().enumerate().find(|(j, &s)| *j != config.unknown() && s == 0).map(|x| x.0) {
        return Err(Error::Domain(format!("subpopulation {} ended up empty", j + 1)));
    }
    let subpops = subpop_metadata(&sizes, &[], config.unknown());
    let counts: Vec<u32> = rows.iter().flat_map(|r| r.0.iter().copied()).collect();
    let data = ArdDataset::new(counts, config.sample_n, k, subpops, config.population_n)?;
    let truth = GroundTruth {
        degrees: rows.iter().map(|r| r.1).collect(),
        subpop_sizes: sizes,
        generator_params: GeneratorParams::LatentSpace {
            zeta,
            eta: etas,
            centers,
            ego_ids,
            positions,
            gravity,
            members,
        },
        provenance: None,
    };
    Ok((data, truth))
}

/// Barrier-effects synthetic ARD.
pub fn simulate_barrier_effects(config: &BarrierSimConfig) -> Result<(ArdDataset, GroundTruth)> {
    config.validate()?;
    let k = config.k_subpops;
    let big_n = config.population_n as f64;
    let shapes: Vec<(f64, f64)> = config
        .subpop_prevalences
        .iter()
        .zip(&config.dispersions)
        .map(|(&m, &r)| (m * (1.0 - r) / r, (1.0 - m) * (1.0 - r) / r))
        .collect();
    let rows: Vec<Result<(Vec<u32>, u64)>> = (0..config.sample_n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(config.seed, &[6, i as u64]);
            let d = sample_lognormal(config.degree_logmean, config.degree_logsd, &mut rng)?.round() as u64;
            let mut y = Vec::with_capacity(k);
            for &(a, b) in &shapes {
                let q = sample_beta(a, b, &mut rng)?;
                y.push(sample_binomial(d, q, &mut rng)? as u32);
            }
            Ok((y, d))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let sizes: Vec<u64> = config.subpop_prevalences.iter().map(|m| (m * big_n).round() as u64).collect();
    let subpops = subpop_metadata(&sizes, &config.subpop_names, config.unknown());
    let counts: Vec<u32> = rows.iter().flat_map(|r| r.0.iter().copied()).collect();
    let data = ArdDataset::new(counts, config.sample_n, k, subpops, config.population_n)?;
    let truth = GroundTruth {
        degrees: rows.iter().map(|r| r.1).collect(),
        subpop_sizes: sizes,
        generator_params: GeneratorParams::BarrierEffects {
            degree_logmean: config.degree_logmean,
            degree_logsd: config.degree_logsd,
            prevalences: config.subpop_prevalences.clone(),
            dispersions: config.dispersions.clone(),
        },
        provenance: None,
    };
    Ok((data, truth))
}
