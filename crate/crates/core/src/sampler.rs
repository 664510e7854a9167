//! Multi-chain adaptive Metropolis-within-Gibbs.
//!
//! A [`Target`] describes its parameter vector as a list of [`Block`]s. Each
//! sweep visits every element of every block in order and makes one
//! random-walk Metropolis move on it, evaluating only the terms of the log
//! posterior that involve that element ([`Target::site_log_density`]).
//!
//! During warmup each block's step size follows a Robbins-Monro recursion
//! toward the target acceptance rate; it is frozen afterwards. Draws are
//! passed through [`Target::stored_draw`] before storage so models can
//! report transformed (rescaled) values while the chain itself evolves on
//! the raw parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Geometric, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

/// Space in which a real-valued element takes its random-walk step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    /// Unconstrained.
    Identity,
    /// Positive; steps on `ln x`.
    Log,
    /// In (0, 1); steps on `logit x`.
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Proposal {
    Real(Transform),
    /// Unit 3-vector stored in three consecutive slots; tangent-plane
    /// Gaussian step followed by renormalization.
    Sphere,
    /// Non-negative integer stored as `f64`; symmetric jump of
    /// `±(1 + Geometric)` with adapted mean length.
    Integer,
}

/// A group of parameter elements sharing one proposal kind and step size.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub proposal: Proposal,
    /// Offset of each element in the flat parameter vector.
    pub elems: Vec<usize>,
}

impl Block {
    pub fn new(name: impl Into<String>, proposal: Proposal, elems: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            proposal,
            elems,
        }
    }
}

/// A posterior the sampler can explore.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Names of the stored (post-[`Target::stored_draw`]) coordinates.
    fn param_names(&self) -> Vec<String>;

    fn blocks(&self) -> Vec<Block>;

    /// Log posterior up to terms that do not involve element `elem` of
    /// block `block`. Returns `-inf` outside the support.
    fn site_log_density(&self, x: &[f64], block: usize, elem: usize) -> f64;

    /// Full unnormalized log posterior.
    fn log_density(&self, x: &[f64]) -> f64;

    fn initial_point(&self, rng: &mut Rng) -> Vec<f64>;

    /// Value recorded for the current state.
    fn stored_draw(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Stored iterations per chain after warmup (before thinning).
    pub iterations: usize,
    pub warmup: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Scale of the adaptation gain `(w / (w + t))^0.6` at warmup sweep `t`.
    pub adapt_window: usize,
    /// Update every vector block element-wise (the only mode for sphere and
    /// integer blocks). When false, real-valued vector blocks take one joint
    /// Gaussian step per sweep.
    pub elementwise: bool,
    pub parallel: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 2000,
            warmup: 2000,
            thin: 1,
            seed: 1,
            target_accept: 0.44,
            adapt_window: 50,
            elementwise: true,
            parallel: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::Invalid("at least 2 chains are required for R-hat".into()));
        }
        if self.iterations < 100 {
            return Err(Error::Invalid("at least 100 post-warmup iterations are required".into()));
        }
        if self.thin == 0 {
            return Err(Error::Invalid("thin must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Invalid("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn kept(&self) -> usize {
        self.iterations / self.thin
    }
}

/// Acceptance bookkeeping for one block of one chain.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct BlockStats {
    pub name: String,
    pub proposed: u64,
    pub accepted: u64,
    /// Step size (or mean jump length for integer blocks) after warmup.
    pub step: f64,
    /// Step size at the end of each post-warmup sweep; constant by construction.
    #[serde(skip)]
    pub step_trace: Vec<f64>,
}

impl BlockStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Output of one chain.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub chain_id: usize,
    /// Row-major `kept × dim` stored draws.
    pub draws: Vec<f64>,
    pub log_density: Vec<f64>,
    pub blocks: Vec<BlockStats>,
}

#[inline]
fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn initial_step(p: Proposal) -> f64 {
    match p {
        Proposal::Real(_) => 0.1,
        Proposal::Sphere => 0.3,
        Proposal::Integer => 3.0,
    }
}

/// One Metropolis update of a single element; returns the accepted change
/// in site log density (0 when rejected).
fn update_site<T: Target + ?Sized>(
    target: &T,
    x: &mut [f64],
    b: usize,
    e: usize,
    off: usize,
    proposal: Proposal,
    step: f64,
    rng: &mut Rng,
) -> Option<f64> {
    let before = target.site_log_density(x, b, e);
    match proposal {
        Proposal::Real(t) => {
            let old = x[off];
            let xi: f64 = rng.sample(StandardNormal);
            let (new, log_jac) = match t {
                Transform::Identity => (old + step * xi, 0.0),
                Transform::Log => {
                    let u = old.ln() + step * xi;
                    (u.exp(), u - old.ln())
                }
                Transform::Logit => {
                    let u = logit(old) + step * xi;
                    let new = sigmoid(u);
                    (new, (new * (1.0 - new)).ln() - (old * (1.0 - old)).ln())
                }
            };
            if !new.is_finite() || (t == Transform::Logit && (new <= 0.0 || new >= 1.0)) || (t == Transform::Log && new <= 0.0) {
                return None;
            }
            x[off] = new;
            let after = target.site_log_density(x, b, e);
            let log_ratio = after - before + log_jac;
            if log_ratio.is_finite() && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio) {
                Some(after - before)
            } else {
                x[off] = old;
                None
            }
        }
        Proposal::Sphere => {
            let old = [x[off], x[off + 1], x[off + 2]];
            let xi: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let proj = xi[0] * old[0] + xi[1] * old[1] + xi[2] * old[2];
            let mut v = [0.0; 3];
            for j in 0..3 {
                v[j] = old[j] + step * (xi[j] - proj * old[j]);
            }
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            for j in 0..3 {
                x[off + j] = v[j] / norm;
            }
            let after = target.site_log_density(x, b, e);
            let log_ratio = after - before;
            if log_ratio.is_finite() && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio) {
                Some(after - before)
            } else {
                x[off..off + 3].copy_from_slice(&old);
                None
            }
        }
        Proposal::Integer => {
            let old = x[off];
            let p = (1.0 / step).clamp(1e-6, 1.0);
            let jump = 1 + Geometric::new(p).expect("valid probability").sample(rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let new = old + sign * jump as f64;
            if new < 0.0 {
                return None;
            }
            x[off] = new;
            let after = target.site_log_density(x, b, e);
            let log_ratio = after - before;
            if log_ratio.is_finite() && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio) {
                Some(after - before)
            } else {
                x[off] = old;
                None
            }
        }
    }
}

/// One joint Gaussian move of every element of a real-valued block,
/// scored with the full log density.
fn update_joint<T: Target + ?Sized>(
    target: &T,
    x: &mut [f64],
    elems: &[usize],
    t: Transform,
    step: f64,
    rng: &mut Rng,
) -> Option<f64> {
    let before = target.log_density(x);
    let old: Vec<f64> = elems.iter().map(|&o| x[o]).collect();
    let mut log_jac = 0.0;
    for (&off, &v) in elems.iter().zip(&old) {
        let xi: f64 = rng.sample(StandardNormal);
        let new = match t {
            Transform::Identity => v + step * xi,
            Transform::Log => {
                let u = v.ln() + step * xi;
                log_jac += u - v.ln();
                u.exp()
            }
            Transform::Logit => {
                let new = sigmoid(logit(v) + step * xi);
                log_jac += (new * (1.0 - new)).ln() - (v * (1.0 - v)).ln();
                new
            }
        };
        x[off] = new;
    }
    let after = target.log_density(x);
    let log_ratio = after - before + log_jac;
    if log_ratio.is_finite() && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio) {
        Some(after - before)
    } else {
        for (&off, &v) in elems.iter().zip(&old) {
            x[off] = v;
        }
        None
    }
}

/// Run a single chain.
pub fn run_chain<T: Target + ?Sized>(target: &T, config: &SamplerConfig, chain_id: usize) -> Result<ChainDraws> {
    config.validate()?;
    let mut init_rng = stream(config.seed, &[0x1111, chain_id as u64]);
    let mut rng = stream(config.seed, &[0x2222, chain_id as u64]);
    let mut x = target.initial_point(&mut init_rng);
    if x.len() != target.dim() {
        return Err(Error::Sampler {
            chain: chain_id,
            message: format!("initial point has {} coordinates, expected {}", x.len(), target.dim()),
        });
    }
    let mut lp = target.log_density(&x);
    if !lp.is_finite() {
        return Err(Error::Sampler {
            chain: chain_id,
            message: format!("log posterior at the initial point is {lp}"),
        });
    }

    let blocks = target.blocks();
    let mut log_steps: Vec<f64> = blocks.iter().map(|b| initial_step(b.proposal).ln()).collect();
    let mut stats: Vec<BlockStats> = blocks
        .iter()
        .map(|b| BlockStats {
            name: b.name.clone(),
            ..BlockStats::default()
        })
        .collect();

    let total = config.warmup + config.iterations;
    let kept = config.kept();
    let names_len = target.param_names().len();
    let mut draws = Vec::with_capacity(kept * names_len);
    let mut trace = Vec::with_capacity(kept);

    for it in 0..total {
        let warm = it < config.warmup;
        for (b, block) in blocks.iter().enumerate() {
            let step = log_steps[b].exp();
            let mut acc = 0u64;
            match block.proposal {
                Proposal::Real(t) if !config.elementwise && block.elems.len() > 1 => {
                    if let Some(delta) = update_joint(target, &mut x, &block.elems, t, step, &mut rng) {
                        lp += delta;
                        acc = block.elems.len() as u64;
                    }
                }
                _ => {
                    for (e, &off) in block.elems.iter().enumerate() {
                        if let Some(delta) = update_site(target, &mut x, b, e, off, block.proposal, step, &mut rng) {
                            lp += delta;
                            acc += 1;
                        }
                    }
                }
            }
            let n = block.elems.len() as u64;
            if warm {
                if n > 0 {
                    let rate = acc as f64 / n as f64;
                    let gain = (config.adapt_window as f64 / (config.adapt_window as f64 + it as f64)).powf(0.6);
                    log_steps[b] += gain * (rate - config.target_accept);
                    if block.proposal == Proposal::Integer {
                        log_steps[b] = log_steps[b].max(0.0);
                    }
                    if block.proposal == Proposal::Sphere {
                        log_steps[b] = log_steps[b].min(3.0f64.ln());
                    }
                }
            } else {
                stats[b].proposed += n;
                stats[b].accepted += acc;
                stats[b].step_trace.push(step);
            }
        }
        if !warm {
            let post = it - config.warmup;
            if post.is_multiple_of(config.thin) && trace.len() < kept {
                let stored = target.stored_draw(&x);
                debug_assert_eq!(stored.len(), names_len);
                draws.extend_from_slice(&stored);
                trace.push(lp);
            }
        }
    }
    for (s, ls) in stats.iter_mut().zip(&log_steps) {
        s.step = ls.exp();
    }
    Ok(ChainDraws {
        chain_id,
        draws,
        log_density: trace,
        blocks: stats,
    })
}

/// Posterior summary for one stored coordinate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

/// Multi-chain posterior draws and sampler records.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub model: String,
    pub names: Vec<String>,
    pub chains: usize,
    /// Stored draws per chain.
    pub iterations: usize,
    /// `[chain][iteration][param]`, flattened.
    pub draws: Vec<f64>,
    pub log_density: Vec<Vec<f64>>,
    pub blocks: Vec<Vec<BlockStats>>,
    pub dataset_fingerprint: String,
    pub config: SamplerConfig,
    /// Free-form record of how the posterior was produced (model options,
    /// rescaling anchors, run configuration).
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tool_version: String,
    model: String,
    names: Vec<String>,
    chains: usize,
    iterations: usize,
    dataset_fingerprint: String,
    config: SamplerConfig,
    blocks: Vec<Vec<BlockStats>>,
    extra: serde_json::Value,
    /// Binary layout of `draws.bin`.
    storage: String,
}

const STORAGE: &str = "f64-le column-major: for each parameter then lp__, for each chain, for each iteration";

impl Posterior {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    #[inline]
    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let d = self.dim();
        let start = (chain * self.iterations + iter) * d;
        &self.draws[start..start + d]
    }

    /// All draws, chain by chain.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.draws.chunks_exact(self.dim().max(1))
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.iterations
    }

    /// Per-chain series for one parameter.
    pub fn chain_series(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.iterations).map(|t| self.draw(c, t)[param]).collect())
            .collect()
    }

    /// Pooled draws for one parameter.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.iter_draws().map(|d| d[param]).collect()
    }

    pub fn summary(&self) -> Vec<ParamSummary> {
        (0..self.dim())
            .map(|p| {
                let mut v = self.pooled(p);
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
                v.sort_by(|a, b| a.total_cmp(b));
                ParamSummary {
                    name: self.names[p].clone(),
                    mean,
                    sd,
                    q05: quantile_sorted(&v, 0.05),
                    q25: quantile_sorted(&v, 0.25),
                    q50: quantile_sorted(&v, 0.50),
                    q75: quantile_sorted(&v, 0.75),
                    q95: quantile_sorted(&v, 0.95),
                }
            })
            .collect()
    }

    /// Post-warmup acceptance rate of each block, averaged over chains.
    pub fn acceptance_rates(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for chain in &self.blocks {
            for b in chain {
                let e = acc.entry(b.name.clone()).or_default();
                e.0 += b.accepted;
                e.1 += b.proposed;
            }
        }
        acc.into_iter()
            .map(|(k, (a, p))| (k, if p == 0 { f64::NAN } else { a as f64 / p as f64 }))
            .collect()
    }

    /// Write `manifest.json` and `draws.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            tool_version: crate::VERSION.to_string(),
            model: self.model.clone(),
            names: self.names.clone(),
            chains: self.chains,
            iterations: self.iterations,
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            config: self.config.clone(),
            blocks: self.blocks.clone(),
            extra: self.extra.clone(),
            storage: STORAGE.to_string(),
        };
        let mpath = dir.join("manifest.json");
        fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
        let d = self.dim();
        let mut bytes = Vec::with_capacity((d + 1) * self.total_draws() * 8);
        for p in 0..d {
            for c in 0..self.chains {
                for t in 0..self.iterations {
                    bytes.extend_from_slice(&self.draw(c, t)[p].to_le_bytes());
                }
            }
        }
        for c in 0..self.chains {
            for &v in &self.log_density[c] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bpath = dir.join("draws.bin");
        fs::write(&bpath, bytes).map_err(|e| Error::io(&bpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        let bpath = dir.join("draws.bin");
        let bytes = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let d = m.names.len();
        let per = m.chains * m.iterations;
        if bytes.len() != (d + 1) * per * 8 {
            return Err(Error::Invalid(format!(
                "{} holds {} bytes, manifest implies {}",
                bpath.display(),
                bytes.len(),
                (d + 1) * per * 8
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut draws = vec![0.0; d * per];
        for p in 0..d {
            for j in 0..per {
                draws[j * d + p] = vals[p * per + j];
            }
        }
        let log_density = (0..m.chains)
            .map(|c| vals[d * per + c * m.iterations..d * per + (c + 1) * m.iterations].to_vec())
            .collect();
        Ok(Self {
            model: m.model,
            names: m.names,
            chains: m.chains,
            iterations: m.iterations,
            draws,
            log_density,
            blocks: m.blocks,
            dataset_fingerprint: m.dataset_fingerprint,
            config: m.config,
            extra: m.extra,
        })
    }
}

/// Run `config.chains` chains and assemble a [`Posterior`].
///
/// Chains use generators derived from `(config.seed, chain_id)` and share
/// no state, so serial and parallel execution give identical results.
pub fn run_chains<T: Target + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    model: &str,
    dataset_fingerprint: &str,
    extra: serde_json::Value,
) -> Result<Posterior> {
    config.validate()?;
    let results: Vec<Result<ChainDraws>> = if config.parallel {
        (0..config.chains)
            .into_par_iter()
            .map(|c| run_chain(target, config, c))
            .collect()
    } else {
        (0..config.chains).map(|c| run_chain(target, config, c)).collect()
    };
    let mut draws = Vec::new();
    let mut log_density = Vec::new();
    let mut blocks = Vec::new();
    for r in results {
        let c = r?;
        draws.extend_from_slice(&c.draws);
        log_density.push(c.log_density);
        blocks.push(c.blocks);
    }
    Ok(Posterior {
        model: model.to_string(),
        names: target.param_names(),
        chains: config.chains,
        iterations: config.kept(),
        draws,
        log_density,
        blocks,
        dataset_fingerprint: dataset_fingerprint.to_string(),
        config: config.clone(),
        extra,
    })
}
