//! Densities, mass functions and samplers.
//!
//! Everything is evaluated in log space. The negative binomial is
//! parameterized by mean `mu` and overdispersion `omega` (variance
//! `omega * mu`) throughout; `omega == 1` dispatches to the Poisson.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, LogNormal, Poisson, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_4PI: f64 = 2.531_024_246_969_290_7;

/// `ln(n!)`.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// Table of `ln(n!)` for `n` in `0..=max`.
#[derive(Debug, Clone)]
pub struct LnFactorialTable(Vec<f64>);

impl LnFactorialTable {
    pub fn new(max: u64) -> Self {
        let mut t = Vec::with_capacity(max as usize + 1);
        let mut acc = 0.0;
        t.push(0.0);
        for n in 1..=max {
            if n < 64 {
                acc += (n as f64).ln();
                t.push(acc);
            } else {
                t.push(ln_factorial(n));
            }
        }
        Self(t)
    }

    #[inline]
    pub fn get(&self, n: u64) -> f64 {
        self.0
            .get(n as usize)
            .copied()
            .unwrap_or_else(|| ln_factorial(n))
    }
}

/// Log density of `Normal(mean, sd)` at `x`.
#[inline]
pub fn normal_lpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.918_938_533_204_672_8
}

/// Log density of `Gamma(shape, rate)` at `x > 0`.
#[inline]
pub fn gamma_lpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Poisson log mass at `y` given the log of the rate.
#[inline]
pub fn poisson_logpmf_log_rate(y: u64, log_rate: f64, ln_y_fact: f64) -> f64 {
    if log_rate == f64::NEG_INFINITY {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y as f64 * log_rate - log_rate.exp() - ln_y_fact
}

/// Poisson log mass at `y` with rate `mu`.
pub fn poisson_logpmf(y: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    poisson_logpmf_log_rate(y, mu.ln(), ln_factorial(y))
}

/// `ln C_3(kappa)`, the log normalizing constant of the von Mises-Fisher
/// distribution on the unit sphere in three dimensions.
///
/// `C_3(kappa) = kappa / (4 pi sinh kappa)`, with limit `1 / (4 pi)` at zero.
/// Assumes `kappa >= 0`.
#[inline]
pub fn ln_vmf_c3(kappa: f64) -> f64 {
    if kappa < 1e-8 {
        // kappa / sinh(kappa) = 1 - kappa^2 / 6 + O(kappa^4)
        return -LN_4PI - kappa * kappa / 6.0;
    }
    // ln sinh k = k + ln(1 - e^{-2k}) - ln 2
    let ln_sinh = kappa + (-(-2.0 * kappa).exp_m1()).ln() - std::f64::consts::LN_2;
    kappa.ln() - LN_4PI - ln_sinh
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::Domain(format!(
            "vMF concentration must be finite and non-negative, got {kappa}"
        )));
    }
    Ok(())
}

/// `C_3(kappa)`.
pub fn vmf_norm_const(kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(ln_vmf_c3(kappa).exp())
}

/// `ln C_3(kappa)`, validated.
pub fn log_vmf_norm_const(kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(ln_vmf_c3(kappa))
}

/// Negative binomial with mean `mu` and overdispersion `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegBinMuOmega {
    mu: f64,
    omega: f64,
}

impl NegBinMuOmega {
    pub fn new(mu: f64, omega: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Domain(format!("negative binomial mean must be positive, got {mu}")));
        }
        if !(omega.is_finite() && omega >= 1.0) {
            return Err(Error::Domain(format!(
                "negative binomial overdispersion must be >= 1, got {omega}"
            )));
        }
        Ok(Self { mu, omega })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Shape `r = mu / (omega - 1)`; infinite in the Poisson limit.
    pub fn shape(&self) -> f64 {
        self.mu / (self.omega - 1.0)
    }

    /// Success probability `p = 1 / omega`.
    pub fn prob(&self) -> f64 {
        1.0 / self.omega
    }

    pub fn variance(&self) -> f64 {
        self.omega * self.mu
    }
}

/// `ln Gamma(y + r) - ln Gamma(r)`.
#[inline]
fn ln_rising(y: u64, r: f64) -> f64 {
    if y <= 16 || r > 1e6 {
        let mut acc = 0.0;
        let mut prod = 1.0;
        for j in 0..y {
            prod *= r + j as f64;
            if j % 4 == 3 {
                acc += prod.ln();
                prod = 1.0;
            }
        }
        acc + prod.ln()
    } else {
        ln_gamma(y as f64 + r) - ln_gamma(r)
    }
}

/// Negative binomial log mass without validation.
///
/// Needs `mu > 0`, `omega >= 1`, and `ln(y!)` supplied by the caller.
#[inline]
pub fn nb_logpmf_raw(y: u64, mu: f64, omega: f64, ln_y_fact: f64) -> f64 {
    let om1 = omega - 1.0;
    let r = mu / om1;
    if om1 <= 0.0 || r > 1e15 {
        return poisson_logpmf_log_rate(y, mu.ln(), ln_y_fact);
    }
    // r ln p + y ln(1 - p) with p = 1/omega
    let ln_omega = om1.ln_1p();
    ln_rising(y, r) - ln_y_fact - r * ln_omega + y as f64 * (om1.ln() - ln_omega)
}

/// Negative binomial log mass at `y`.
pub fn negbin_logpmf(y: u64, params: &NegBinMuOmega) -> Result<f64> {
    Ok(nb_logpmf_raw(y, params.mu, params.omega, ln_factorial(y)))
}

/// Log beta function.
#[inline]
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Beta-binomial log mass without validation; `ln_choose` is `ln C(d, y)`.
#[inline]
pub fn betabinom_logpmf_raw(y: u64, d: u64, a: f64, b: f64, ln_choose: f64) -> f64 {
    let yf = y as f64;
    let df = d as f64;
    ln_choose + ln_beta(yf + a, df - yf + b) - ln_beta(a, b)
}

/// `ln C(d, y)`.
pub fn ln_choose(d: u64, y: u64) -> f64 {
    ln_factorial(d) - ln_factorial(y) - ln_factorial(d - y)
}

/// Log mass of `y` successes in `d` trials under a Beta(a, b) mixed binomial.
pub fn betabinom_logpmf(y: u64, d: u64, a: f64, b: f64) -> Result<f64> {
    if y > d {
        return Err(Error::Domain(format!("beta-binomial count {y} exceeds trials {d}")));
    }
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!(
            "beta-binomial shapes must be positive and finite, got ({a}, {b})"
        )));
    }
    Ok(betabinom_logpmf_raw(y, d, a, b, ln_choose(d, y)))
}

/// von Mises-Fisher parameters on the unit sphere in three dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmfParams {
    mean_dir: [f64; 3],
    kappa: f64,
}

impl VmfParams {
    pub fn new(mean_dir: [f64; 3], kappa: f64) -> Result<Self> {
        let norm = dot(&mean_dir, &mean_dir).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("vMF mean direction must be a unit vector, norm {norm}")));
        }
        check_kappa(kappa)?;
        Ok(Self { mean_dir, kappa })
    }

    pub fn mean_dir(&self) -> [f64; 3] {
        self.mean_dir
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

#[inline]
pub fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(&v, &v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Orthonormal pair spanning the plane orthogonal to unit vector `m`.
fn tangent_basis(m: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if m[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = normalize(cross(m, &helper));
    let e2 = cross(m, &e1);
    (e1, e2)
}

/// Uniform draw on the unit sphere.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n2 = dot(&v, &v);
        if n2 > 1e-20 {
            return normalize(v);
        }
    }
}

/// Draw from a vMF distribution in three dimensions.
///
/// The cosine toward the mean direction is sampled by inverting its CDF,
/// `w = 1 + ln(u + (1 - u) e^{-2 kappa}) / kappa`; the remaining angle is uniform.
pub fn sample_vmf<R: Rng + ?Sized>(params: &VmfParams, rng: &mut R) -> [f64; 3] {
    let kappa = params.kappa;
    let u: f64 = rng.random();
    let w = if kappa < 1e-12 {
        2.0 * u - 1.0
    } else {
        let t = -(-2.0 * kappa).exp_m1();
        (1.0 + (-(1.0 - u) * t).ln_1p() / kappa).clamp(-1.0, 1.0)
    };
    let phi = 2.0 * PI * rng.random::<f64>();
    let (e1, e2) = tangent_basis(&params.mean_dir);
    let s = (1.0 - w * w).max(0.0).sqrt();
    let (sp, cp) = phi.sin_cos();
    let m = params.mean_dir;
    normalize([
        w * m[0] + s * (cp * e1[0] + sp * e2[0]),
        w * m[1] + s * (cp * e1[1] + sp * e2[1]),
        w * m[2] + s * (cp * e1[2] + sp * e2[2]),
    ])
}

/// Poisson draw. A zero rate always yields zero.
pub fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u64> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(Error::Domain(format!("Poisson rate must be finite and >= 0, got {rate}")));
    }
    if rate == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(rate).map_err(|e| Error::Domain(format!("Poisson({rate}): {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Gamma draw with the given shape and rate.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(Error::Domain(format!("Gamma({shape}, {rate}) needs positive parameters")));
    }
    let d = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(d.sample(rng))
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("Beta({a}, {b}) needs positive parameters")));
    }
    let d = Beta::new(a, b).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(d.sample(rng))
}

pub fn sample_lognormal<R: Rng + ?Sized>(logmean: f64, logsd: f64, rng: &mut R) -> Result<f64> {
    if !(logmean.is_finite() && logsd.is_finite() && logsd >= 0.0) {
        return Err(Error::Domain(format!("LogNormal({logmean}, {logsd}) is invalid")));
    }
    let d = LogNormal::new(logmean, logsd).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(d.sample(rng))
}

pub fn sample_binomial<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> Result<u64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("binomial probability must be in [0, 1], got {p}")));
    }
    let d = Binomial::new(trials, p).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(d.sample(rng))
}

/// Negative binomial draw as a gamma-mixed Poisson.
pub fn sample_negbin<R: Rng + ?Sized>(params: &NegBinMuOmega, rng: &mut R) -> Result<u64> {
    if params.omega == 1.0 {
        return sample_poisson(params.mu, rng);
    }
    let r = params.shape();
    let g = sample_gamma(r, r / params.mu, rng)?;
    sample_poisson(g, rng)
}

/// Beta-binomial draw.
pub fn sample_betabinom<R: Rng + ?Sized>(trials: u64, a: f64, b: f64, rng: &mut R) -> Result<u64> {
    let q = sample_beta(a, b, rng)?;
    sample_binomial(trials, q, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    #[test]
    fn vmf_constant_values() {
        assert_relative_eq!(vmf_norm_const(0.0).unwrap(), 0.079_577_471_545_947_67, epsilon = 1e-14);
        // high-precision reference for 2 / (4 pi sinh 2)
        assert_relative_eq!(vmf_norm_const(2.0).unwrap(), 0.043_882_290_795_518_4, max_relative = 1e-13);
        assert_relative_eq!(log_vmf_norm_const(50.0).unwrap(), -47.925_854_060_981_2, max_relative = 1e-13);
        // sinh(800) overflows a double; log space must not
        assert_relative_eq!(log_vmf_norm_const(800.0).unwrap(), -795.153_265_338_741_4, max_relative = 1e-13);
        assert!(vmf_norm_const(-1.0).is_err());
        assert!(vmf_norm_const(f64::NAN).is_err());
        // continuity across the small-kappa branch
        assert_relative_eq!(ln_vmf_c3(1e-8), ln_vmf_c3(1.0000001e-8), epsilon = 1e-14);
    }

    #[test]
    fn vmf_constant_is_decreasing() {
        let grid: Vec<f64> = (0..400).map(|i| i as f64 * 0.25).collect();
        for w in grid.windows(2) {
            assert!(ln_vmf_c3(w[1]) < ln_vmf_c3(w[0]), "{w:?}");
        }
    }

    #[test]
    fn negbin_examples() {
        let p = NegBinMuOmega::new(2.0, 2.0).unwrap();
        assert_relative_eq!(negbin_logpmf(0, &p).unwrap(), 0.25f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(negbin_logpmf(1, &p).unwrap(), 0.25f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(negbin_logpmf(3, &p).unwrap(), -2.079_441_541_679_836, epsilon = 1e-13);
        let q = NegBinMuOmega::new(10.0, 5.0).unwrap();
        assert_relative_eq!(negbin_logpmf(7, &q).unwrap(), -2.706_110_451_025_784, epsilon = 1e-12);
        let pois = NegBinMuOmega::new(2.0, 1.0).unwrap();
        assert_relative_eq!(negbin_logpmf(0, &pois).unwrap(), -2.0, epsilon = 1e-15);
        assert!(NegBinMuOmega::new(2.0, 0.5).is_err());
        assert!(NegBinMuOmega::new(f64::NAN, 2.0).is_err());
    }

    #[test]
    fn negbin_near_poisson_limit() {
        for y in [0u64, 1, 4, 20, 40] {
            let nb = nb_logpmf_raw(y, 3.0, 1.0 + 1e-12, ln_factorial(y));
            assert_relative_eq!(nb, poisson_logpmf(y, 3.0), epsilon = 1e-8);
        }
    }

    #[test]
    fn negbin_large_counts_finite() {
        let p = NegBinMuOmega::new(5000.0, 3.0).unwrap();
        let v = negbin_logpmf(10_000, &p).unwrap();
        assert!(v.is_finite() && v < 0.0);
    }

    #[test]
    fn betabinom_examples() {
        assert_eq!(betabinom_logpmf(0, 0, 2.0, 3.0).unwrap(), 0.0);
        for y in 0..=1 {
            assert_relative_eq!(betabinom_logpmf(y, 1, 1.0, 1.0).unwrap(), 0.5f64.ln(), epsilon = 1e-14);
        }
        let total: f64 = (0..=5).map(|y| betabinom_logpmf(y, 5, 2.0, 3.0).unwrap().exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        assert_relative_eq!(betabinom_logpmf(2, 5, 2.0, 3.0).unwrap(), -1.435_084_525_289_322_6, epsilon = 1e-13);
        assert!(betabinom_logpmf(6, 5, 2.0, 3.0).is_err());
        assert!(betabinom_logpmf(1, 5, 0.0, 3.0).is_err());
    }

    #[test]
    fn vmf_uniform_when_kappa_zero() {
        let mut rng = stream(11, &[]);
        let p = VmfParams::new([0.0, 1.0, 0.0], 0.0).unwrap();
        let mut s = [0.0; 3];
        let draws = 100_000;
        for _ in 0..draws {
            let v = sample_vmf(&p, &mut rng);
            assert!((dot(&v, &v).sqrt() - 1.0).abs() < 1e-12);
            for j in 0..3 {
                s[j] += v[j];
            }
        }
        let m = [s[0] / draws as f64, s[1] / draws as f64, s[2] / draws as f64];
        assert!(dot(&m, &m).sqrt() < 0.02, "{m:?}");
    }

    #[test]
    fn vmf_concentrated_mean_cosine() {
        let mut rng = stream(12, &[]);
        let p = VmfParams::new([0.0, 0.0, 1.0], 50.0).unwrap();
        let draws = 100_000;
        let mean_z: f64 = (0..draws).map(|_| sample_vmf(&p, &mut rng)[2]).sum::<f64>() / draws as f64;
        // E[cos] = coth(50) - 1/50 = 0.98; MC sd ~ 0.02/sqrt(1e5)
        assert!(mean_z > 0.97);
        assert!((mean_z - 0.98).abs() < 5e-4, "{mean_z}");
    }

    #[test]
    fn vmf_rejects_non_unit_mean() {
        assert!(VmfParams::new([1.0, 1.0, 0.0], 1.0).is_err());
        assert!(VmfParams::new([1.0, 0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn simple_samplers() {
        let mut rng = stream(3, &[]);
        assert!((0..100).all(|_| sample_poisson(0.0, &mut rng).unwrap() == 0));
        let draws = 1_000_000;
        let mean = (0..draws).map(|_| sample_gamma(2.0, 1.0, &mut rng).unwrap()).sum::<f64>() / draws as f64;
        assert!((mean - 2.0).abs() < 0.01, "{mean}");
        let n = 20_000;
        let bm = (0..n).map(|_| sample_beta(3.0, 3.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        // sd of Beta(3,3) is 0.189; 5 MC standard errors
        assert!((bm - 0.5).abs() < 5.0 * 0.189 / (n as f64).sqrt(), "{bm}");
        assert!(sample_poisson(-1.0, &mut rng).is_err());
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_binomial(3, 1.5, &mut rng).is_err());
        assert!(sample_lognormal(0.0, -1.0, &mut rng).is_err());
        assert_eq!(sample_binomial(5, 1.0, &mut rng).unwrap(), 5);
    }

    #[test]
    fn samplers_are_seed_deterministic() {
        let run = || {
            let mut rng = stream(99, &[4]);
            let nb = NegBinMuOmega::new(4.0, 2.5).unwrap();
            (0..50)
                .map(|_| {
                    (
                        sample_negbin(&nb, &mut rng).unwrap(),
                        sample_lognormal(1.0, 0.5, &mut rng).unwrap().to_bits(),
                        sample_betabinom(10, 2.0, 3.0, &mut rng).unwrap(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ln_factorial_table_matches_direct() {
        let t = LnFactorialTable::new(200);
        for n in [0u64, 1, 2, 10, 63, 64, 150, 200, 300] {
            assert_relative_eq!(t.get(n), ln_factorial(n), max_relative = 1e-13);
        }
    }
}
