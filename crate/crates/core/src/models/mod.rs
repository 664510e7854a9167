//! The five fittable ARD models.
//!
//! | code      | model                   | expected count                      | distribution     |
//! |-----------|-------------------------|-------------------------------------|------------------|
//! | `er`      | common degree           | `exp(log_d + beta_k)`               | Poisson          |
//! | `vd`      | varying degree          | `exp(log_d_i + beta_k)`             | Poisson          |
//! | `od`      | overdispersed           | `exp(alpha_i + beta_k)`             | NB, overdisp. `omega_k` |
//! | `latent`  | latent space            | `exp(alpha_i + beta_k) * kappa_ik`  | Poisson          |
//! | `barrier` | barrier effects         | `d_i * m_k`                         | beta-binomial    |
//!
//! Every model's parameters live in one flat `f64` vector described by a
//! [`Layout`]. [`ArdModel`] binds a model to a dataset (and optionally an
//! entry mask) and implements [`crate::sampler::Target`].

mod init;
mod kappa;
mod likelihood;
mod rescale;
mod replicate;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{validate_fit_inputs, ArdDataset};
use crate::dists::{gamma_lpdf, ln_vmf_c3, nb_logpmf_raw, normal_lpdf, LnFactorialTable};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sampler::{Block, Proposal, Target, Transform};

pub use init::initial_params;
pub use kappa::{kappa_factor, ln_kappa_factor};
pub use likelihood::entry_log_lik;
pub use replicate::replicate_draw;
pub use rescale::{rescale, rescale_in_place, RescaleSpec};

/// Flat parameter vector; its meaning is given by a [`Layout`].
pub type ParamVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ErdosRenyi,
    VaryingDegree,
    Overdispersed,
    LatentSpace,
    Barrier,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::ErdosRenyi,
        ModelKind::VaryingDegree,
        ModelKind::Overdispersed,
        ModelKind::LatentSpace,
        ModelKind::Barrier,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ModelKind::ErdosRenyi => "er",
            ModelKind::VaryingDegree => "vd",
            ModelKind::Overdispersed => "od",
            ModelKind::LatentSpace => "latent",
            ModelKind::Barrier => "barrier",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::ErdosRenyi => "Erdos-Renyi",
            ModelKind::VaryingDegree => "Varying Degree",
            ModelKind::Overdispersed => "Overdispersed",
            ModelKind::LatentSpace => "Latent Space",
            ModelKind::Barrier => "Barrier Effects",
        }
    }

    /// Models with a (log-)degree times prevalence ridge that rescaling removes.
    pub fn is_rescalable(self) -> bool {
        self != ModelKind::Barrier
    }

    /// Models without per-entry latent variables, for which entry-wise
    /// cross-validation is defined.
    pub fn supports_cv(self) -> bool {
        self != ModelKind::Barrier
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "er" | "erdos_renyi" | "erdos-renyi" => Ok(ModelKind::ErdosRenyi),
            "vd" | "varying_degree" => Ok(ModelKind::VaryingDegree),
            "od" | "overdispersed" => Ok(ModelKind::Overdispersed),
            "latent" | "latent_space" | "ls" => Ok(ModelKind::LatentSpace),
            "barrier" | "barrier_effects" => Ok(ModelKind::Barrier),
            other => Err(Error::Invalid(format!(
                "unknown model '{other}' (expected er, vd, od, latent or barrier)"
            ))),
        }
    }
}

/// Model settings that are not data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    /// Latent space: number of subpopulation centers held fixed. The first
    /// `n_fixed` known subpopulations are anchored.
    pub n_fixed: usize,
    /// Latent space: anchor directions; defaults to a regular tetrahedron
    /// for four anchors, a Fibonacci lattice otherwise.
    pub anchor_directions: Option<Vec<[f64; 3]>>,
    /// Barrier: largest admissible count (and hence degree lower bound).
    pub max_degree_cap: u64,
    /// Barrier: mean of the negative binomial prior on each degree.
    pub degree_prior_mean: f64,
    /// Barrier: overdispersion of the negative binomial prior on each degree.
    pub degree_prior_overdispersion: f64,
    /// Spread of starting points along the degree/prevalence ridge.
    pub init_ridge_sd: f64,
    /// Spread of independent jitter added to each starting coordinate.
    pub init_jitter_sd: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            n_fixed: 4,
            anchor_directions: None,
            max_degree_cap: 100_000,
            degree_prior_mean: 300.0,
            degree_prior_overdispersion: 100.0,
            init_ridge_sd: 1.0,
            init_jitter_sd: 0.1,
        }
    }
}

impl ModelOptions {
    pub fn anchor_directions(&self) -> Vec<[f64; 3]> {
        if let Some(d) = &self.anchor_directions {
            return d.clone();
        }
        let n = self.n_fixed;
        if n == 4 {
            let s = 1.0 / 3f64.sqrt();
            return vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
        }
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let t = golden * i as f64;
                [r * t.cos(), y, r * t.sin()]
            })
            .collect()
    }
}

/// A model definition: which model, and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub options: ModelOptions,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            options: ModelOptions::default(),
        }
    }

    pub fn with_options(kind: ModelKind, options: ModelOptions) -> Self {
        Self { kind, options }
    }
}

const NONE: usize = usize::MAX;

/// Offsets of each parameter group in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub kind: ModelKind,
    pub n: usize,
    pub k: usize,
    deg: usize,
    deg_len: usize,
    beta: usize,
    inv_omega: usize,
    mu_beta: usize,
    sigma_alpha: usize,
    sigma_beta: usize,
    zeta: usize,
    eta: usize,
    z: usize,
    nu: usize,
    mu_alpha: usize,
    m: usize,
    rho: usize,
    dim: usize,
}

impl Layout {
    pub fn new(kind: ModelKind, n: usize, k: usize) -> Self {
        let mut l = Layout {
            kind,
            n,
            k,
            deg: 0,
            deg_len: n,
            beta: NONE,
            inv_omega: NONE,
            mu_beta: NONE,
            sigma_alpha: NONE,
            sigma_beta: NONE,
            zeta: NONE,
            eta: NONE,
            z: NONE,
            nu: NONE,
            mu_alpha: NONE,
            m: NONE,
            rho: NONE,
            dim: 0,
        };
        match kind {
            ModelKind::ErdosRenyi => {
                l.deg_len = 1;
                l.beta = 1;
                l.dim = 1 + k;
            }
            ModelKind::VaryingDegree => {
                l.beta = n;
                l.dim = n + k;
            }
            ModelKind::Overdispersed => {
                l.beta = n;
                l.inv_omega = n + k;
                l.mu_beta = n + 2 * k;
                l.sigma_alpha = l.mu_beta + 1;
                l.sigma_beta = l.mu_beta + 2;
                l.dim = l.mu_beta + 3;
            }
            ModelKind::LatentSpace => {
                l.beta = n;
                l.zeta = n + k;
                l.eta = l.zeta + 1;
                l.z = l.eta + k;
                l.nu = l.z + 3 * n;
                l.mu_alpha = l.nu + 3 * k;
                l.sigma_alpha = l.mu_alpha + 1;
                l.mu_beta = l.mu_alpha + 2;
                l.sigma_beta = l.mu_alpha + 3;
                l.dim = l.mu_alpha + 4;
            }
            ModelKind::Barrier => {
                l.m = n;
                l.rho = n + k;
                l.dim = n + 2 * k;
            }
        }
        l
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Log-degree components (`log_d`, `log_d_i` or `alpha_i`); for the
    /// barrier model, the integer degrees themselves.
    pub fn degree(&self) -> Range<usize> {
        self.deg..self.deg + self.deg_len
    }

    /// Offset of ego `i`'s degree component (the shared one for ER).
    #[inline]
    pub fn degree_of(&self, i: usize) -> usize {
        if self.kind == ModelKind::ErdosRenyi {
            self.deg
        } else {
            self.deg + i
        }
    }

    pub fn beta(&self) -> Option<Range<usize>> {
        (self.beta != NONE).then(|| self.beta..self.beta + self.k)
    }

    pub fn inv_omega(&self) -> Option<Range<usize>> {
        (self.inv_omega != NONE).then(|| self.inv_omega..self.inv_omega + self.k)
    }

    pub fn eta(&self) -> Option<Range<usize>> {
        (self.eta != NONE).then(|| self.eta..self.eta + self.k)
    }

    pub fn zeta(&self) -> Option<usize> {
        (self.zeta != NONE).then_some(self.zeta)
    }

    /// Offset of ego `i`'s latent position.
    pub fn z_of(&self, i: usize) -> usize {
        self.z + 3 * i
    }

    /// Offset of subpopulation `k`'s latent center.
    pub fn nu_of(&self, k: usize) -> usize {
        self.nu + 3 * k
    }

    pub fn prevalence(&self) -> Option<Range<usize>> {
        (self.m != NONE).then(|| self.m..self.m + self.k)
    }

    pub fn rho(&self) -> Option<Range<usize>> {
        (self.rho != NONE).then(|| self.rho..self.rho + self.k)
    }

    pub fn mu_alpha(&self) -> Option<usize> {
        (self.mu_alpha != NONE).then_some(self.mu_alpha)
    }

    pub fn mu_beta(&self) -> Option<usize> {
        (self.mu_beta != NONE).then_some(self.mu_beta)
    }

    pub fn sigma_alpha(&self) -> Option<usize> {
        (self.sigma_alpha != NONE).then_some(self.sigma_alpha)
    }

    pub fn sigma_beta(&self) -> Option<usize> {
        (self.sigma_beta != NONE).then_some(self.sigma_beta)
    }

    /// Name of the degree component for ego `i`, e.g. `log_d[3]`.
    pub fn degree_name(&self) -> &'static str {
        match self.kind {
            ModelKind::ErdosRenyi | ModelKind::VaryingDegree => "log_d",
            ModelKind::Overdispersed | ModelKind::LatentSpace => "alpha",
            ModelKind::Barrier => "degree",
        }
    }

    /// Names of every coordinate (1-based indices).
    pub fn names(&self) -> Vec<String> {
        let mut v = vec![String::new(); self.dim];
        let (n, k) = (self.n, self.k);
        let dn = self.degree_name();
        if self.kind == ModelKind::ErdosRenyi {
            v[0] = "log_d".into();
        } else {
            for i in 0..n {
                v[self.deg + i] = format!("{dn}[{}]", i + 1);
            }
        }
        let mut vec_names = |off: usize, name: &str| {
            if off != NONE {
                for j in 0..k {
                    v[off + j] = format!("{name}[{}]", j + 1);
                }
            }
        };
        vec_names(self.beta, "beta");
        vec_names(self.inv_omega, "inv_omega");
        vec_names(self.eta, "eta");
        vec_names(self.m, "m");
        vec_names(self.rho, "rho");
        for (off, name) in [
            (self.mu_beta, "mu_beta"),
            (self.sigma_alpha, "sigma_alpha"),
            (self.sigma_beta, "sigma_beta"),
            (self.zeta, "zeta"),
            (self.mu_alpha, "mu_alpha"),
        ] {
            if off != NONE {
                v[off] = name.into();
            }
        }
        if self.z != NONE {
            for i in 0..n {
                for c in 0..3 {
                    v[self.z + 3 * i + c] = format!("z[{},{}]", i + 1, c + 1);
                }
            }
            for j in 0..k {
                for c in 0..3 {
                    v[self.nu + 3 * j + c] = format!("nu[{},{}]", j + 1, c + 1);
                }
            }
        }
        v
    }

    pub fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.dim {
            return Err(Error::Dimension(format!(
                "{} model with n={}, K={} has {} parameters, got {}",
                self.kind,
                self.n,
                self.k,
                self.dim,
                params.len()
            )));
        }
        Ok(())
    }
}

/// Role of a sampler block within a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Degree,
    Beta,
    InvOmega,
    MuBeta,
    SigmaAlpha,
    SigmaBeta,
    Zeta,
    Eta,
    Z,
    Nu,
    MuAlpha,
    Prevalence,
    Rho,
}

const HYPER_SD: f64 = 5.0;
const LOG_D_SD: f64 = 25.0;
const BETA_SD: f64 = 5.0;
const UNIT_TOL: f64 = 1e-8;

/// A model bound to a dataset, ready to evaluate or sample.
#[derive(Debug, Clone)]
pub struct ArdModel<'a> {
    spec: ModelSpec,
    data: &'a ArdDataset,
    layout: Layout,
    /// `true` where an entry takes part in the likelihood.
    mask: Option<Vec<bool>>,
    rescale: Option<RescaleSpec>,
    ln_fact: Vec<f64>,
    /// Latent space: anchored subpopulations and their fixed centers.
    anchors: Vec<(usize, [f64; 3])>,
    free_nu: Vec<usize>,
    /// Barrier: prevalences held at their known values.
    fixed_m: Vec<Option<f64>>,
    free_m: Vec<usize>,
    roles: Vec<Role>,
    lnfact_table: LnFactorialTable,
}

impl<'a> ArdModel<'a> {
    /// Bind `spec` to `data`.
    ///
    /// `mask`, when given, marks with `true` the entries (row-major) that
    /// enter the likelihood. `rescale` controls whether stored draws are
    /// rescaled; it does not change the posterior.
    pub fn new(
        spec: ModelSpec,
        data: &'a ArdDataset,
        mask: Option<Vec<bool>>,
        rescale: Option<RescaleSpec>,
    ) -> Result<Self> {
        validate_fit_inputs(data, spec.kind, &spec.options)?;
        let (n, k) = (data.n(), data.k());
        if let Some(m) = &mask {
            if m.len() != n * k {
                return Err(Error::Dimension(format!(
                    "mask has {} entries, dataset has {}",
                    m.len(),
                    n * k
                )));
            }
        }
        if let Some(r) = &rescale {
            if r.idx.iter().any(|&j| j >= k) {
                return Err(Error::Dimension("rescale index beyond subpopulation count".into()));
            }
        }
        let layout = Layout::new(spec.kind, n, k);
        let table = LnFactorialTable::new(data.max_count() as u64);
        let ln_fact = data.counts().iter().map(|&y| table.get(y as u64)).collect();

        let mut anchors = Vec::new();
        let mut free_nu: Vec<usize> = (0..k).collect();
        if spec.kind == ModelKind::LatentSpace {
            let dirs = spec.options.anchor_directions();
            if dirs.len() < spec.options.n_fixed {
                return Err(Error::Invalid(format!(
                    "{} anchor directions supplied for {} anchors",
                    dirs.len(),
                    spec.options.n_fixed
                )));
            }
            for (slot, &j) in data.known_indices().iter().take(spec.options.n_fixed).enumerate() {
                anchors.push((j, crate::dists::normalize(dirs[slot])));
            }
            free_nu.retain(|j| !anchors.iter().any(|a| a.0 == *j));
        }

        let mut fixed_m = vec![None; k];
        let mut free_m = Vec::new();
        if spec.kind == ModelKind::Barrier {
            let big_n = data.population_n() as f64;
            for (j, s) in data.subpops().iter().enumerate() {
                match s.known_size {
                    Some(sz) => fixed_m[j] = Some(sz as f64 / big_n),
                    None => free_m.push(j),
                }
            }
        }

        let mut model = Self {
            spec,
            data,
            layout,
            mask,
            rescale,
            ln_fact,
            anchors,
            free_nu,
            fixed_m,
            free_m,
            roles: Vec::new(),
            lnfact_table: LnFactorialTable::new(0),
        };
        model.roles = model.block_roles().into_iter().map(|(r, _)| r).collect();
        if model.spec.kind == ModelKind::Barrier {
            let cap = data.max_count() as u64 + 4096;
            model.lnfact_table = LnFactorialTable::new(cap.min(model.spec.options.max_degree_cap.max(1)));
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn data(&self) -> &ArdDataset {
        self.data
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn rescale_spec(&self) -> Option<&RescaleSpec> {
        self.rescale.as_ref()
    }

    /// Anchored subpopulations and their fixed centers (latent space only).
    pub fn anchors(&self) -> &[(usize, [f64; 3])] {
        &self.anchors
    }

    /// Known prevalences held fixed in the barrier model.
    pub fn fixed_prevalences(&self) -> &[Option<f64>] {
        &self.fixed_m
    }

    #[inline]
    fn included(&self, idx: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[idx])
    }

    #[inline]
    fn ln_fact_at(&self, idx: usize) -> f64 {
        self.ln_fact[idx]
    }

    #[inline]
    fn ln_fact_deg(&self, d: u64) -> f64 {
        self.lnfact_table.get(d)
    }

    fn block_roles(&self) -> Vec<(Role, Block)> {
        let l = &self.layout;
        let (n, k) = (l.n, l.k);
        let seq = |start: usize, len: usize| (start..start + len).collect::<Vec<_>>();
        let id = Proposal::Real(Transform::Identity);
        let log = Proposal::Real(Transform::Log);
        let logit = Proposal::Real(Transform::Logit);
        match l.kind {
            ModelKind::ErdosRenyi => vec![
                (Role::Degree, Block::new("log_d", id, vec![0])),
                (Role::Beta, Block::new("beta", id, seq(l.beta, k))),
            ],
            ModelKind::VaryingDegree => vec![
                (Role::Degree, Block::new("log_d", id, seq(0, n))),
                (Role::Beta, Block::new("beta", id, seq(l.beta, k))),
            ],
            ModelKind::Overdispersed => vec![
                (Role::Degree, Block::new("alpha", id, seq(0, n))),
                (Role::Beta, Block::new("beta", id, seq(l.beta, k))),
                (Role::InvOmega, Block::new("inv_omega", logit, seq(l.inv_omega, k))),
                (Role::MuBeta, Block::new("mu_beta", id, vec![l.mu_beta])),
                (Role::SigmaAlpha, Block::new("sigma_alpha", log, vec![l.sigma_alpha])),
                (Role::SigmaBeta, Block::new("sigma_beta", log, vec![l.sigma_beta])),
            ],
            ModelKind::LatentSpace => vec![
                (Role::Degree, Block::new("alpha", id, seq(0, n))),
                (Role::Beta, Block::new("beta", id, seq(l.beta, k))),
                (Role::Zeta, Block::new("zeta", log, vec![l.zeta])),
                (Role::Eta, Block::new("eta", log, seq(l.eta, k))),
                (Role::Z, Block::new("z", Proposal::Sphere, (0..n).map(|i| l.z_of(i)).collect())),
                (
                    Role::Nu,
                    Block::new("nu", Proposal::Sphere, self.free_nu.iter().map(|&j| l.nu_of(j)).collect()),
                ),
                (Role::MuAlpha, Block::new("mu_alpha", id, vec![l.mu_alpha])),
                (Role::SigmaAlpha, Block::new("sigma_alpha", log, vec![l.sigma_alpha])),
                (Role::MuBeta, Block::new("mu_beta", id, vec![l.mu_beta])),
                (Role::SigmaBeta, Block::new("sigma_beta", log, vec![l.sigma_beta])),
            ],
            ModelKind::Barrier => vec![
                (Role::Degree, Block::new("degree", Proposal::Integer, seq(0, n))),
                (
                    Role::Prevalence,
                    Block::new("m", logit, self.free_m.iter().map(|&j| l.m + j).collect()),
                ),
                (Role::Rho, Block::new("rho", logit, seq(l.rho, k))),
            ],
        }
    }

    /// Log likelihood of entry `(i, k)` at `x`, ignoring the mask.
    #[inline]
    pub fn entry_log_lik(&self, x: &[f64], i: usize, k: usize) -> f64 {
        let idx = i * self.layout.k + k;
        let y = self.data.counts()[idx] as u64;
        match self.layout.kind {
            ModelKind::Barrier => {
                let d = x[self.layout.degree_of(i)] as u64;
                self.barrier_entry(x, y, d, self.ln_fact_deg(d), idx, k)
            }
            _ => likelihood::entry_log_lik_with(&self.layout, x, y, self.ln_fact_at(idx), i, k),
        }
    }

    #[inline]
    fn barrier_entry(&self, x: &[f64], y: u64, d: u64, ln_fact_d: f64, idx: usize, k: usize) -> f64 {
        if y > d {
            return f64::NEG_INFINITY;
        }
        let m = x[self.layout.m + k];
        let rho = x[self.layout.rho + k];
        let conc = (1.0 - rho) / rho;
        let (a, b) = (m * conc, (1.0 - m) * conc);
        let ln_choose = ln_fact_d - self.ln_fact_at(idx) - self.ln_fact_deg(d - y);
        crate::dists::betabinom_logpmf_raw(y, d, a, b, ln_choose)
    }

    fn row_log_lik(&self, x: &[f64], i: usize) -> f64 {
        let k = self.layout.k;
        let mut s = 0.0;
        match self.layout.kind {
            ModelKind::LatentSpace => {
                let l = &self.layout;
                let zeta = x[l.zeta];
                let lc_zeta = ln_vmf_c3(zeta);
                let zo = l.z_of(i);
                let zi = [x[zo], x[zo + 1], x[zo + 2]];
                let ai = x[i];
                for j in 0..k {
                    let idx = i * k + j;
                    if !self.included(idx) {
                        continue;
                    }
                    s += likelihood::latent_entry(l, x, self.data.counts()[idx] as u64, self.ln_fact[idx], ai, &zi, zeta, lc_zeta, j);
                }
            }
            ModelKind::Barrier => {
                let d = x[self.layout.degree_of(i)];
                if d < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let d = d as u64;
                let lfd = self.ln_fact_deg(d);
                for j in 0..k {
                    let idx = i * k + j;
                    if self.included(idx) {
                        s += self.barrier_entry(x, self.data.counts()[idx] as u64, d, lfd, idx, j);
                    }
                }
            }
            _ => {
                for j in 0..k {
                    let idx = i * k + j;
                    if self.included(idx) {
                        s += self.entry_log_lik(x, i, j);
                    }
                }
            }
        }
        s
    }

    fn col_log_lik(&self, x: &[f64], j: usize) -> f64 {
        let (n, k) = (self.layout.n, self.layout.k);
        let mut s = 0.0;
        if self.layout.kind == ModelKind::LatentSpace {
            let l = &self.layout;
            let zeta = x[l.zeta];
            let lc_zeta = ln_vmf_c3(zeta);
            for i in 0..n {
                let idx = i * k + j;
                if !self.included(idx) {
                    continue;
                }
                let zo = l.z_of(i);
                let zi = [x[zo], x[zo + 1], x[zo + 2]];
                s += likelihood::latent_entry(l, x, self.data.counts()[idx] as u64, self.ln_fact[idx], x[i], &zi, zeta, lc_zeta, j);
            }
            return s;
        }
        for i in 0..n {
            let idx = i * k + j;
            if self.included(idx) {
                s += self.entry_log_lik(x, i, j);
            }
        }
        s
    }

    fn all_log_lik(&self, x: &[f64]) -> f64 {
        (0..self.layout.n).map(|i| self.row_log_lik(x, i)).sum()
    }

    /// Sum of the per-entry log likelihoods over unmasked entries.
    ///
    /// Fails if any expected count is NaN or infinite, naming the entry.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.layout.check(x)?;
        let (n, k) = (self.layout.n, self.layout.k);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..k {
                let idx = i * k + j;
                if !self.included(idx) {
                    continue;
                }
                if self.layout.kind != ModelKind::Barrier {
                    let lr = likelihood::log_rate(&self.layout, x, i, j);
                    if lr.is_nan() || lr == f64::INFINITY {
                        return Err(Error::NonFiniteRate { i, k: j });
                    }
                }
                s += self.entry_log_lik(x, i, j);
            }
        }
        Ok(s)
    }

    /// Sum of log prior densities; `-inf` outside the support.
    pub fn log_prior(&self, x: &[f64]) -> Result<f64> {
        self.layout.check(x)?;
        Ok(self.prior_all(x))
    }

    fn prior_all(&self, x: &[f64]) -> f64 {
        let l = &self.layout;
        let (n, k) = (l.n, l.k);
        match l.kind {
            ModelKind::ErdosRenyi | ModelKind::VaryingDegree => {
                let deg: f64 = x[l.degree()].iter().map(|&v| normal_lpdf(v, 0.0, LOG_D_SD)).sum();
                deg + x[l.beta..l.beta + k].iter().map(|&b| normal_lpdf(b, 0.0, BETA_SD)).sum::<f64>()
            }
            ModelKind::Overdispersed => {
                let mut s = self.prior_sigma_alpha(x) + self.prior_sigma_beta(x) + self.prior_mu_beta(x);
                for j in 0..k {
                    s += self.prior_inv_omega(x, j);
                }
                if !s.is_finite() {
                    return f64::NEG_INFINITY;
                }
                for i in 0..n {
                    s += self.prior_degree(x, i);
                }
                for j in 0..k {
                    s += self.prior_beta(x, j);
                }
                s
            }
            ModelKind::LatentSpace => {
                let mut s = self.prior_sigma_alpha(x) + self.prior_sigma_beta(x) + self.prior_zeta(x);
                for j in 0..k {
                    s += self.prior_eta(x, j) + self.prior_nu(x, j);
                }
                for i in 0..n {
                    s += self.prior_z(x, i);
                }
                if !s.is_finite() {
                    return f64::NEG_INFINITY;
                }
                for i in 0..n {
                    s += self.prior_degree(x, i);
                }
                for j in 0..k {
                    s += self.prior_beta(x, j);
                }
                s
            }
            ModelKind::Barrier => {
                let mut s = 0.0;
                for i in 0..n {
                    s += self.prior_degree(x, i);
                }
                for j in 0..k {
                    s += self.prior_prevalence(x, j) + self.prior_rho(x, j);
                }
                s
            }
        }
    }

    fn prior_degree(&self, x: &[f64], i: usize) -> f64 {
        let l = &self.layout;
        let v = x[l.degree_of(i)];
        match l.kind {
            ModelKind::ErdosRenyi | ModelKind::VaryingDegree => normal_lpdf(v, 0.0, LOG_D_SD),
            ModelKind::Overdispersed => normal_lpdf(v, 0.0, x[l.sigma_alpha]),
            ModelKind::LatentSpace => normal_lpdf(v, x[l.mu_alpha], x[l.sigma_alpha]),
            ModelKind::Barrier => {
                let row_max = self.data.row_max(i) as f64;
                if v < row_max || v.fract() != 0.0 || v > self.spec.options.max_degree_cap as f64 {
                    return f64::NEG_INFINITY;
                }
                let d = v as u64;
                nb_logpmf_raw(
                    d,
                    self.spec.options.degree_prior_mean,
                    self.spec.options.degree_prior_overdispersion,
                    self.ln_fact_deg(d),
                )
            }
        }
    }

    fn prior_beta(&self, x: &[f64], j: usize) -> f64 {
        let l = &self.layout;
        let b = x[l.beta + j];
        match l.kind {
            ModelKind::ErdosRenyi | ModelKind::VaryingDegree => normal_lpdf(b, 0.0, BETA_SD),
            _ => normal_lpdf(b, x[l.mu_beta], x[l.sigma_beta]),
        }
    }

    fn prior_inv_omega(&self, x: &[f64], j: usize) -> f64 {
        let v = x[self.layout.inv_omega + j];
        if v > 0.0 && v < 1.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn prior_mu_beta(&self, x: &[f64]) -> f64 {
        if x[self.layout.mu_beta].is_finite() {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn prior_sigma_alpha(&self, x: &[f64]) -> f64 {
        let s = x[self.layout.sigma_alpha];
        if s > 0.0 && s.is_finite() {
            normal_lpdf(s, 0.0, HYPER_SD) + std::f64::consts::LN_2
        } else {
            f64::NEG_INFINITY
        }
    }

    fn prior_sigma_beta(&self, x: &[f64]) -> f64 {
        let s = x[self.layout.sigma_beta];
        if !(s > 0.0 && s.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match self.layout.kind {
            ModelKind::LatentSpace => normal_lpdf(s, 0.0, HYPER_SD) + std::f64::consts::LN_2,
            _ => 0.0,
        }
    }

    fn prior_zeta(&self, x: &[f64]) -> f64 {
        gamma_lpdf(x[self.layout.zeta], 2.0, 1.0)
    }

    fn prior_eta(&self, x: &[f64], j: usize) -> f64 {
        gamma_lpdf(x[self.layout.eta + j], 2.0, 1.0)
    }

    fn unit_prior(&self, x: &[f64], off: usize) -> f64 {
        let n2 = x[off] * x[off] + x[off + 1] * x[off + 1] + x[off + 2] * x[off + 2];
        if (n2.sqrt() - 1.0).abs() <= UNIT_TOL {
            ln_vmf_c3(0.0)
        } else {
            f64::NEG_INFINITY
        }
    }

    fn prior_z(&self, x: &[f64], i: usize) -> f64 {
        self.unit_prior(x, self.layout.z_of(i))
    }

    fn prior_nu(&self, x: &[f64], j: usize) -> f64 {
        self.unit_prior(x, self.layout.nu_of(j))
    }

    fn prior_prevalence(&self, x: &[f64], j: usize) -> f64 {
        let v = x[self.layout.m + j];
        match self.fixed_m[j] {
            Some(fixed) if v == fixed => 0.0,
            Some(_) => f64::NEG_INFINITY,
            None if v > 0.0 && v < 1.0 => 0.0,
            None => f64::NEG_INFINITY,
        }
    }

    fn prior_rho(&self, x: &[f64], j: usize) -> f64 {
        let v = x[self.layout.rho + j];
        if v > 0.0 && v < 1.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn alpha_prior_sum(&self, x: &[f64]) -> f64 {
        (0..self.layout.n).map(|i| self.prior_degree(x, i)).sum()
    }

    fn beta_prior_sum(&self, x: &[f64]) -> f64 {
        (0..self.layout.k).map(|j| self.prior_beta(x, j)).sum()
    }
}

impl Target for ArdModel<'_> {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn param_names(&self) -> Vec<String> {
        self.layout.names()
    }

    fn blocks(&self) -> Vec<Block> {
        self.block_roles().into_iter().map(|(_, b)| b).collect()
    }

    fn site_log_density(&self, x: &[f64], block: usize, e: usize) -> f64 {
        let l = &self.layout;
        match self.roles[block] {
            Role::Degree => {
                if l.kind == ModelKind::ErdosRenyi {
                    self.prior_degree(x, 0) + self.all_log_lik(x)
                } else {
                    let p = self.prior_degree(x, e);
                    if p == f64::NEG_INFINITY {
                        return p;
                    }
                    p + self.row_log_lik(x, e)
                }
            }
            Role::Beta => self.prior_beta(x, e) + self.col_log_lik(x, e),
            Role::InvOmega => {
                let p = self.prior_inv_omega(x, e);
                if p == f64::NEG_INFINITY {
                    return p;
                }
                p + self.col_log_lik(x, e)
            }
            Role::MuBeta => self.prior_mu_beta(x) + self.beta_prior_sum(x),
            Role::SigmaAlpha => {
                let p = self.prior_sigma_alpha(x);
                if p == f64::NEG_INFINITY {
                    return p;
                }
                p + self.alpha_prior_sum(x)
            }
            Role::SigmaBeta => {
                let p = self.prior_sigma_beta(x);
                if p == f64::NEG_INFINITY {
                    return p;
                }
                p + self.beta_prior_sum(x)
            }
            Role::MuAlpha => self.alpha_prior_sum(x),
            Role::Zeta => {
                let p = self.prior_zeta(x);
                if p == f64::NEG_INFINITY {
                    return p;
                }
                p + self.all_log_lik(x)
            }
            Role::Eta => {
                let p = self.prior_eta(x, e);
                if p == f64::NEG_INFINITY {
                    return p;
                }
                p + self.col_log_lik(x, e)
            }
            Role::Z => self.prior_z(x, e) + self.row_log_lik(x, e),
            Role::Nu => {
                let j = self.free_nu[e];
                self.prior_nu(x, j) + self.col_log_lik(x, j)
            }
            Role::Prevalence => {
                let j = self.free_m[e];
                let p = self.prior_prevalence(x, j);
                if p == f64::NEG_INFINITY {
                    return p;
                }
                p + self.col_log_lik(x, j)
            }
            Role::Rho => {
                let p = self.prior_rho(x, e);
                if p == f64::NEG_INFINITY {
                    return p;
                }
                p + self.col_log_lik(x, e)
            }
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let p = self.prior_all(x);
        if p == f64::NEG_INFINITY || p.is_nan() {
            return f64::NEG_INFINITY;
        }
        p + self.all_log_lik(x)
    }

    fn initial_point(&self, rng: &mut Rng) -> Vec<f64> {
        initial_params(self, rng)
    }

    fn stored_draw(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        if let Some(r) = &self.rescale {
            rescale_in_place(&self.layout, &mut out, r);
        }
        out
    }
}
