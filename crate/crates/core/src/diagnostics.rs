//! Convergence and mixing diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::Posterior;

/// Threshold for using posterior draws.
pub const RHAT_STRICT: f64 = 1.05;
/// Threshold for acceptable convergence.
pub const RHAT_LOOSE: f64 = 1.1;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn check_chains(chains: &[Vec<f64>], min_chains: usize, min_len: usize) -> Result<usize> {
    if chains.len() < min_chains {
        return Err(Error::Invalid(format!("need at least {min_chains} chains, got {}", chains.len())));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("chains have different lengths".into()));
    }
    if n < min_len {
        return Err(Error::Invalid(format!("need at least {min_len} draws per chain, got {n}")));
    }
    Ok(n)
}

/// Split R-hat. Returns NaN when every half-chain is constant.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains, 2, 4)?;
    let half = n / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect();
    let w = halves.iter().map(|h| sample_var(h)).sum::<f64>() / halves.len() as f64;
    if !(w > 0.0) {
        return Ok(f64::NAN);
    }
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let b = half as f64 * sample_var(&means);
    let nf = half as f64;
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

/// Biased autocovariance of `x` at lags `0..x.len()`.
fn autocov(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(size).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Effective sample size across chains, using the initial positive and
/// monotone sequence truncation of the autocorrelation sum. Capped at 1.5
/// times the number of draws; NaN for constant input.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains, 1, 4)?;
    let m = chains.len();
    let total = (m * n) as f64;
    let mut planner = FftPlanner::new();
    let acovs: Vec<Vec<f64>> = chains.iter().map(|c| autocov(c, &mut planner)).collect();
    let nf = n as f64;
    let chain_vars: Vec<f64> = acovs.iter().map(|a| a[0] * nf / (nf - 1.0)).collect();
    let w = mean(&chain_vars);
    if !(w > 0.0) {
        return Ok(f64::NAN);
    }
    let b_over_n = if m > 1 {
        let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
        sample_var(&means)
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    let rho = |t: usize| 1.0 - (w - acovs.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;

    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let p = rho(2 * k) + rho(2 * k + 1);
        if p < 0.0 {
            break;
        }
        let p = p.min(prev);
        sum += p;
        prev = p;
        k += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    let cap = 1.5 * total;
    Ok(if tau > 0.0 { (total / tau).min(cap) } else { cap })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamDiagnostics {
    pub name: String,
    /// Split R-hat; absent when the chains are constant.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    /// R-hat at or above 1.05, or undefined.
    pub above_strict: bool,
    /// R-hat at or above 1.1, or undefined.
    pub above_loose: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiagnosticsReport {
    pub model: String,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub params: Vec<ParamDiagnostics>,
    /// Up to ten parameters with the largest R-hat (undefined first).
    pub worst: Vec<String>,
    pub flagged_strict: Vec<String>,
    pub flagged_loose: Vec<String>,
    /// Parameters holding one value in every draw of every chain (anchored
    /// centers, known prevalences); they carry no R-hat flags.
    pub fixed: Vec<String>,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    /// Mean post-warmup acceptance rate per block across chains.
    pub acceptance: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn param(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// R-hat and ESS for every stored parameter of `posterior`.
pub fn diagnose(posterior: &Posterior) -> Result<DiagnosticsReport> {
    let mut params = Vec::with_capacity(posterior.dim());
    let mut fixed = Vec::new();
    for (p, name) in posterior.names.iter().enumerate() {
        let series = posterior.chain_series(p);
        let first = series[0][0];
        let is_fixed = series.iter().all(|c| c.iter().all(|&v| v == first));
        if is_fixed {
            fixed.push(name.clone());
        }
        let rhat = finite(split_rhat(&series)?);
        let e = finite(ess(&series)?);
        let flag = |t: f64| !is_fixed && rhat.is_none_or(|r| r >= t);
        params.push(ParamDiagnostics {
            name: name.clone(),
            rhat,
            ess: e,
            above_strict: flag(RHAT_STRICT),
            above_loose: flag(RHAT_LOOSE),
        });
    }
    let mut order: Vec<&ParamDiagnostics> = params.iter().collect();
    order.sort_by(|a, b| {
        let ka = a.rhat.unwrap_or(f64::INFINITY);
        let kb = b.rhat.unwrap_or(f64::INFINITY);
        kb.total_cmp(&ka)
    });
    order.retain(|p| !fixed.contains(&p.name));
    let worst = order.iter().take(10).map(|p| p.name.clone()).collect();
    let flagged_strict = params.iter().filter(|p| p.above_strict).map(|p| p.name.clone()).collect();
    let flagged_loose = params.iter().filter(|p| p.above_loose).map(|p| p.name.clone()).collect();
    let max_rhat = params.iter().filter_map(|p| p.rhat).fold(None, |a: Option<f64>, r| Some(a.map_or(r, |a| a.max(r))));
    let min_ess = params.iter().filter_map(|p| p.ess).fold(None, |a: Option<f64>, r| Some(a.map_or(r, |a| a.min(r))));
    let acceptance = posterior.acceptance_rates();
    let mut warnings = Vec::new();
    for (block, rate) in &acceptance {
        if *rate == 0.0 {
            warnings.push(format!("block '{block}' rejected every post-warmup proposal"));
        }
    }
    for p in &params {
        if p.rhat.is_none() && !fixed.contains(&p.name) {
            warnings.push(format!("'{}' is constant within chains", p.name));
        }
    }
    Ok(DiagnosticsReport {
        model: posterior.model.clone(),
        chains: posterior.chains,
        draws_per_chain: posterior.iterations,
        params,
        worst,
        flagged_strict,
        flagged_loose,
        fixed,
        max_rhat,
        min_ess,
        acceptance,
        warnings,
    })
}

/// Long-format trace table with header `chain,iteration,parameter,value`.
/// Chains and iterations are numbered from 1.
pub fn trace_csv(posterior: &Posterior, names: &[String]) -> Result<String> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            posterior
                .param_index(n)
                .ok_or_else(|| Error::Invalid(format!("unknown parameter '{n}'")))
        })
        .collect::<Result<_>>()?;
    let mut out = String::from("chain,iteration,parameter,value\n");
    for (name, &p) in names.iter().zip(&idx) {
        for c in 0..posterior.chains {
            for it in 0..posterior.iterations {
                writeln!(out, "{},{},{},{}", c + 1, it + 1, name, posterior.draw(c, it)[p]).expect("string write");
            }
        }
    }
    Ok(out)
}

pub fn trace_export(posterior: &Posterior, names: &[String], path: &Path) -> Result<()> {
    let text = trace_csv(posterior, names)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
