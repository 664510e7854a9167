use crate::dists::ln_vmf_c3;
use crate::error::{Error, Result};

/// Log of the latent-space rate multiplier for an ego with concentration
/// `zeta` and a subpopulation with concentration `eta` whose positions
/// have cosine similarity `cos_theta`. No argument checking.
#[inline]
pub(crate) fn ln_kappa_raw(zeta: f64, eta: f64, cos_theta: f64, lc_zeta: f64, lc_eta: f64) -> f64 {
    let r2 = zeta * zeta + eta * eta + 2.0 * zeta * eta * cos_theta;
    lc_zeta + lc_eta - ln_vmf_c3(0.0) - ln_vmf_c3(r2.max(0.0).sqrt())
}

/// Log of [`kappa_factor`].
pub fn ln_kappa_factor(zeta: f64, eta: f64, cos_theta: f64) -> Result<f64> {
    if !(zeta >= 0.0 && zeta.is_finite()) || !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Domain(format!(
            "concentrations must be finite and non-negative (zeta={zeta}, eta={eta})"
        )));
    }
    if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&cos_theta) {
        return Err(Error::Domain(format!("cos_theta={cos_theta} outside [-1, 1]")));
    }
    let c = cos_theta.clamp(-1.0, 1.0);
    Ok(ln_kappa_raw(zeta, eta, c, ln_vmf_c3(zeta), ln_vmf_c3(eta)))
}

/// Multiplier of the expected count in the latent-space model:
/// `C(zeta) C(eta) / (C(0) C(|zeta z + eta nu|))` with `C` the von
/// Mises-Fisher normalizing constant on the 2-sphere.
pub fn kappa_factor(zeta: f64, eta: f64, cos_theta: f64) -> Result<f64> {
    ln_kappa_factor(zeta, eta, cos_theta).map(f64::exp)
}
