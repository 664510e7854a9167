use rand_distr::{Distribution, StandardNormal};

use super::{ArdModel, ModelKind};
use crate::dists::sample_uniform_sphere;
use crate::modelcheck::scale_up_degree;
use crate::rng::Rng;

const OMEGA_RANGE: (f64, f64) = (1.05, 50.0);
const SIGMA_FLOOR: f64 = 0.1;

fn normal(rng: &mut Rng, sd: f64) -> f64 {
    if sd > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    } else {
        0.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Data-informed starting point for `model`.
///
/// Degrees come from the scale-up estimate (floored at 1) and each
/// `beta_k` from the subpopulation's mean count relative to the mean
/// degree, floored at `log(1/N)`. The start is then shifted by a random
/// amount along the degree/prevalence ridge and jittered per coordinate,
/// both controlled by the model options.
pub fn initial_params(model: &ArdModel<'_>, rng: &mut Rng) -> Vec<f64> {
    let data = model.data();
    let l = *model.layout();
    let opts = &model.spec().options;
    let (n, k) = (l.n, l.k);
    let big_n = data.population_n() as f64;

    let dhat: Vec<f64> = scale_up_degree(data).into_iter().map(|d| d.max(1.0)).collect();
    let dbar = mean(&dhat);
    let col_mean: Vec<f64> = (0..k)
        .map(|j| data.column(j).map(|y| y as f64).sum::<f64>() / n as f64)
        .collect();
    let floor = (1.0 / big_n).ln();
    let beta0: Vec<f64> = col_mean
        .iter()
        .map(|&c| if c > 0.0 { (c / dbar).ln().max(floor) } else { floor })
        .collect();
    let log_dhat: Vec<f64> = dhat.iter().map(|d| d.ln()).collect();

    let mut x = vec![0.0; l.dim()];
    let delta = normal(rng, opts.init_ridge_sd);
    let jit = opts.init_jitter_sd;

    match l.kind {
        ModelKind::ErdosRenyi | ModelKind::VaryingDegree => {
            if l.kind == ModelKind::ErdosRenyi {
                x[0] = dbar.ln() + delta + normal(rng, jit);
            } else {
                for i in 0..n {
                    x[i] = log_dhat[i] + delta + normal(rng, jit);
                }
            }
            for j in 0..k {
                x[l.beta + j] = beta0[j] - delta + normal(rng, jit);
            }
        }
        ModelKind::Overdispersed | ModelKind::LatentSpace => {
            let abar = mean(&log_dhat);
            for i in 0..n {
                x[i] = log_dhat[i] - abar + delta + normal(rng, jit);
            }
            for j in 0..k {
                x[l.beta + j] = beta0[j] + abar - delta + normal(rng, jit);
            }
            let alpha = x[0..n].to_vec();
            let beta = x[l.beta..l.beta + k].to_vec();
            x[l.mu_beta] = mean(&beta);
            x[l.sigma_alpha] = sd(&alpha).max(SIGMA_FLOOR);
            x[l.sigma_beta] = sd(&beta).max(SIGMA_FLOOR);
            if l.kind == ModelKind::Overdispersed {
                for j in 0..k {
                    let mut ratio = 0.0;
                    for i in 0..n {
                        let mu = (alpha[i] + beta[j]).exp();
                        let r = data.get(i, j) as f64 - mu;
                        ratio += r * r / mu;
                    }
                    let omega = (ratio / n as f64).clamp(OMEGA_RANGE.0, OMEGA_RANGE.1);
                    x[l.inv_omega + j] = 1.0 / omega;
                }
            } else {
                x[l.mu_alpha] = mean(&alpha);
                x[l.zeta] = normal(rng, jit).exp();
                for j in 0..k {
                    x[l.eta + j] = normal(rng, jit).exp();
                }
                for i in 0..n {
                    let z = sample_uniform_sphere(rng);
                    x[l.z_of(i)..l.z_of(i) + 3].copy_from_slice(&z);
                }
                for j in 0..k {
                    let v = match model.anchors().iter().find(|a| a.0 == j) {
                        Some(a) => a.1,
                        None => sample_uniform_sphere(rng),
                    };
                    x[l.nu_of(j)..l.nu_of(j) + 3].copy_from_slice(&v);
                }
            }
        }
        ModelKind::Barrier => {
            let cap = opts.max_degree_cap as f64;
            for i in 0..n {
                let d = (dhat[i] * normal(rng, jit).exp()).round();
                x[i] = d.max(data.row_max(i) as f64).max(1.0).min(cap);
            }
            let m = l.prevalence().expect("barrier layout has prevalences");
            for (j, fixed) in model.fixed_prevalences().iter().enumerate() {
                x[m.start + j] = match fixed {
                    Some(v) => *v,
                    None => (col_mean[j] / dbar * normal(rng, jit).exp()).clamp(1e-6, 0.5),
                };
            }
            let rho = l.rho().expect("barrier layout has overdispersions");
            for j in 0..k {
                x[rho.start + j] = (0.05 * normal(rng, jit).exp()).clamp(1e-4, 0.5);
            }
        }
    }
    x
}
