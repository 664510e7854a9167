use super::likelihood::log_rate;
use super::{Layout, ModelKind};
use crate::dists::{sample_betabinom, sample_negbin, sample_poisson, NegBinMuOmega};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One posterior-predictive dataset (row-major `n x K` counts) drawn from
/// the model's likelihood at `params`.
pub fn replicate_draw(layout: &Layout, params: &[f64], rng: &mut Rng) -> Result<Vec<u32>> {
    layout.check(params)?;
    let (n, k) = (layout.n, layout.k);
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        for j in 0..k {
            let y = match layout.kind {
                ModelKind::Barrier => {
                    let d = params[layout.degree_of(i)];
                    let m = params[layout.m + j];
                    let rho = params[layout.rho + j];
                    if !(d >= 0.0 && d.is_finite()) {
                        return Err(Error::NonFiniteRate { i, k: j });
                    }
                    let conc = (1.0 - rho) / rho;
                    sample_betabinom(d as u64, m * conc, (1.0 - m) * conc, rng)?
                }
                _ => {
                    let lr = log_rate(layout, params, i, j);
                    let rate = lr.exp();
                    if !rate.is_finite() {
                        return Err(Error::NonFiniteRate { i, k: j });
                    }
                    if layout.kind == ModelKind::Overdispersed && rate > 0.0 {
                        let omega = 1.0 / params[layout.inv_omega + j];
                        sample_negbin(&NegBinMuOmega::new(rate, omega)?, rng)?
                    } else {
                        sample_poisson(rate, rng)?
                    }
                }
            };
            out.push(u32::try_from(y).unwrap_or(u32::MAX));
        }
    }
    Ok(out)
}
