use super::kappa::ln_kappa_raw;
use super::{Layout, ModelKind};
use crate::dataio::ArdDataset;
use crate::dists::{betabinom_logpmf_raw, ln_choose, ln_factorial, ln_vmf_c3, nb_logpmf_raw, poisson_logpmf_log_rate};

/// Log expected count of entry `(i, k)` for the rate-based models.
#[inline]
pub(crate) fn log_rate(l: &Layout, x: &[f64], i: usize, k: usize) -> f64 {
    let base = x[l.degree_of(i)] + x[l.beta + k];
    match l.kind {
        ModelKind::LatentSpace => {
            let zo = l.z_of(i);
            let no = l.nu_of(k);
            let cos = x[zo] * x[no] + x[zo + 1] * x[no + 1] + x[zo + 2] * x[no + 2];
            let zeta = x[l.zeta];
            let eta = x[l.eta + k];
            base + ln_kappa_raw(zeta, eta, cos, ln_vmf_c3(zeta), ln_vmf_c3(eta))
        }
        ModelKind::Barrier => {
            let d = x[l.degree_of(i)];
            (d * x[l.m + k]).ln()
        }
        _ => base,
    }
}

#[inline]
pub(crate) fn entry_log_lik_with(l: &Layout, x: &[f64], y: u64, ln_y_fact: f64, i: usize, k: usize) -> f64 {
    match l.kind {
        ModelKind::ErdosRenyi | ModelKind::VaryingDegree | ModelKind::LatentSpace => {
            poisson_logpmf_log_rate(y, log_rate(l, x, i, k), ln_y_fact)
        }
        ModelKind::Overdispersed => {
            let mu = (x[i] + x[l.beta + k]).exp();
            let inv_omega = x[l.inv_omega + k];
            nb_logpmf_raw(y, mu, 1.0 / inv_omega, ln_y_fact)
        }
        ModelKind::Barrier => {
            let d = x[l.degree_of(i)];
            if d < 0.0 {
                return f64::NEG_INFINITY;
            }
            let d = d as u64;
            if y > d {
                return f64::NEG_INFINITY;
            }
            let m = x[l.m + k];
            let rho = x[l.rho + k];
            let conc = (1.0 - rho) / rho;
            betabinom_logpmf_raw(y, d, m * conc, (1.0 - m) * conc, ln_choose(d, y))
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn latent_entry(
    l: &Layout,
    x: &[f64],
    y: u64,
    ln_y_fact: f64,
    alpha_i: f64,
    z_i: &[f64; 3],
    zeta: f64,
    lc_zeta: f64,
    k: usize,
) -> f64 {
    let no = l.nu_of(k);
    let cos = z_i[0] * x[no] + z_i[1] * x[no + 1] + z_i[2] * x[no + 2];
    let eta = x[l.eta + k];
    let lr = alpha_i + x[l.beta + k] + ln_kappa_raw(zeta, eta, cos, lc_zeta, ln_vmf_c3(eta));
    poisson_logpmf_log_rate(y, lr, ln_y_fact)
}

/// Log likelihood of entry `(i, k)` of `data` under the model with layout
/// `layout` at parameters `x` (raw or rescaled; the value is the same).
pub fn entry_log_lik(layout: &Layout, x: &[f64], data: &ArdDataset, i: usize, k: usize) -> f64 {
    let y = data.get(i, k) as u64;
    entry_log_lik_with(layout, x, y, ln_factorial(y), i, k)
}
