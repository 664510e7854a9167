//! Posterior predictive checks, recovery of subpopulation sizes and
//! degrees, and the scale-up baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{ArdDataset, GroundTruth};
use crate::error::{Error, Result};
use crate::models::{replicate_draw, Layout, ModelKind};
use crate::rng::{derive_seed, stream};
use crate::sampler::{quantile_sorted, Posterior};

/// Counts examined by default in posterior predictive checks.
pub const DEFAULT_M_SET: [u32; 5] = [0, 1, 3, 5, 10];

/// Scale-up degree estimate per ego: `N * sum_k y_ik / sum_k N_k` over
/// the known subpopulations.
pub fn scale_up_degree(data: &ArdDataset) -> Vec<f64> {
    let known = data.known_indices();
    let total: f64 = known
        .iter()
        .map(|&j| data.subpops()[j].known_size.unwrap_or(0) as f64)
        .sum();
    let big_n = data.population_n() as f64;
    (0..data.n())
        .map(|i| {
            let s: f64 = known.iter().map(|&j| data.get(i, j) as f64).sum();
            big_n * s / total
        })
        .collect()
}

/// Layout of `posterior`'s model on `data`, after checking that the two
/// belong together.
pub fn layout_for(posterior: &Posterior, data: &ArdDataset) -> Result<Layout> {
    if posterior.dataset_fingerprint != data.fingerprint() {
        return Err(Error::Invalid(format!(
            "posterior was fit to dataset {} but this dataset is {}",
            posterior.dataset_fingerprint,
            data.fingerprint()
        )));
    }
    let kind: ModelKind = posterior.model.parse()?;
    let layout = Layout::new(kind, data.n(), data.k());
    if layout.names() != posterior.names {
        return Err(Error::Dimension(format!(
            "posterior parameters do not match the {kind} layout for a {}x{} dataset",
            data.n(),
            data.k()
        )));
    }
    Ok(layout)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PpcCell {
    pub subpop: usize,
    pub name: String,
    pub m: u32,
    /// Share of egos whose observed count equals `m`.
    pub observed: f64,
    /// 2.5% and 97.5% points of the replicated share.
    pub lower: f64,
    pub upper: f64,
    pub contained: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PpcReport {
    pub model: String,
    pub m_set: Vec<u32>,
    pub draws_used: usize,
    pub seed: u64,
    pub cells: Vec<PpcCell>,
    pub contained: usize,
    pub total: usize,
}

fn draw_seed(seed: u64, draw: &[f64]) -> u64 {
    let bits: Vec<u64> = draw.iter().map(|v| v.to_bits()).collect();
    derive_seed(seed, &bits)
}

/// Posterior predictive check of the share of egos reporting each count
/// in `m_set`, for every subpopulation.
///
/// One replicate dataset is drawn per retained draw; `max_draws` keeps an
/// evenly spaced subset of the pooled draws. Each replicate's generator
/// depends only on `seed` and the draw itself, so the result does not
/// depend on the order of draws.
pub fn ppc(
    posterior: &Posterior,
    data: &ArdDataset,
    m_set: &[u32],
    seed: u64,
    max_draws: Option<usize>,
) -> Result<PpcReport> {
    let layout = layout_for(posterior, data)?;
    if m_set.is_empty() {
        return Err(Error::Invalid("the set of checked counts is empty".into()));
    }
    let draws: Vec<&[f64]> = posterior.iter_draws().collect();
    let keep = max_draws.unwrap_or(draws.len()).clamp(1, draws.len());
    let step = draws.len() as f64 / keep as f64;
    let chosen: Vec<&[f64]> = (0..keep).map(|s| draws[(s as f64 * step) as usize]).collect();
    let (n, k) = (data.n(), data.k());
    let nm = m_set.len();

    // shares[s][j * nm + c]
    let shares: Vec<Vec<f64>> = chosen
        .par_iter()
        .map(|d| -> Result<Vec<f64>> {
            let mut rng = stream(draw_seed(seed, d), &[]);
            let y = replicate_draw(&layout, d, &mut rng)?;
            let mut out = vec![0.0; k * nm];
            for i in 0..n {
                for j in 0..k {
                    let v = y[i * k + j];
                    if let Some(c) = m_set.iter().position(|&m| m == v) {
                        out[j * nm + c] += 1.0;
                    }
                }
            }
            out.iter_mut().for_each(|v| *v /= n as f64);
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(k * nm);
    for j in 0..k {
        for (c, &m) in m_set.iter().enumerate() {
            let mut rep: Vec<f64> = shares.iter().map(|s| s[j * nm + c]).collect();
            rep.sort_by(f64::total_cmp);
            let observed = data.column(j).filter(|&y| y == m).count() as f64 / n as f64;
            let (lower, upper) = (quantile_sorted(&rep, 0.025), quantile_sorted(&rep, 0.975));
            cells.push(PpcCell {
                subpop: j,
                name: data.subpops()[j].name.clone(),
                m,
                observed,
                lower,
                upper,
                contained: lower <= observed && observed <= upper,
            });
        }
    }
    let contained = cells.iter().filter(|c| c.contained).count();
    Ok(PpcReport {
        model: posterior.model.clone(),
        m_set: m_set.to_vec(),
        draws_used: keep,
        seed,
        total: cells.len(),
        contained,
        cells,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubpopRecovery {
    pub subpop: usize,
    pub name: String,
    pub known: bool,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub truth: Option<u64>,
    pub in50: Option<bool>,
    pub in90: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DegreeReport {
    /// Posterior mean degree of each ego.
    pub per_ego_mean: Vec<f64>,
    pub mean: f64,
    /// 10%, 20%, ..., 90% points of the estimated degree distribution.
    pub deciles: Vec<f64>,
    pub truth_mean: Option<f64>,
    pub truth_deciles: Option<Vec<f64>>,
    /// Mean over egos with positive true degree of |estimate - truth| / truth.
    pub mean_relative_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecoveryReport {
    pub model: String,
    pub population_n: u64,
    /// Subpopulations in order of posterior median size.
    pub subpops: Vec<SubpopRecovery>,
    /// Share of subpopulations whose 90% interval contains the truth.
    pub coverage90: Option<f64>,
    pub coverage50: Option<f64>,
    /// Entries for the subpopulations without a known size.
    pub unknown: Vec<SubpopRecovery>,
    pub degrees: DegreeReport,
}

/// Interval containment with a relative slack of 1e-9 for round-off in
/// `N exp(log(N_k / N))`.
fn covers(lo: f64, hi: f64, t: f64) -> bool {
    let eps = 1e-9 * t.abs();
    lo - eps <= t && t <= hi + eps
}

fn deciles(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (1..10).map(|d| quantile_sorted(&v, d as f64 / 10.0)).collect()
}

/// Posterior summaries of every subpopulation size `N exp(beta_k)` (or
/// `N m_k` for the barrier model), checked against `truth` when given.
pub fn subpop_recovery(posterior: &Posterior, data: &ArdDataset, truth: Option<&GroundTruth>) -> Result<RecoveryReport> {
    let layout = layout_for(posterior, data)?;
    if let Some(t) = truth {
        t.check_against(data)?;
    }
    let big_n = data.population_n() as f64;
    let (start, natural) = match (layout.beta(), layout.prevalence()) {
        (Some(b), _) => (b.start, false),
        (None, Some(m)) => (m.start, true),
        _ => unreachable!("every layout has prevalences"),
    };
    let mut subpops = Vec::with_capacity(layout.k);
    for j in 0..layout.k {
        let mut v: Vec<f64> = posterior
            .pooled(start + j)
            .into_iter()
            .map(|b| if natural { big_n * b } else { big_n * b.exp() })
            .collect();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| quantile_sorted(&v, p);
        let tr = truth.map(|t| t.subpop_sizes[j]);
        let (q05, q25, median, q75, q95) = (q(0.05), q(0.25), q(0.5), q(0.75), q(0.95));
        subpops.push(SubpopRecovery {
            subpop: j,
            name: data.subpops()[j].name.clone(),
            known: data.subpops()[j].known_size.is_some(),
            q05,
            q25,
            median,
            q75,
            q95,
            truth: tr,
            in50: tr.map(|t| covers(q25, q75, t as f64)),
            in90: tr.map(|t| covers(q05, q95, t as f64)),
        });
    }
    let coverage = |f: fn(&SubpopRecovery) -> Option<bool>| {
        truth.map(|_| subpops.iter().filter(|s| f(s) == Some(true)).count() as f64 / subpops.len() as f64)
    };
    let coverage90 = coverage(|s| s.in90);
    let coverage50 = coverage(|s| s.in50);
    let unknown = subpops.iter().filter(|s| !s.known).cloned().collect();
    subpops.sort_by(|a, b| a.median.total_cmp(&b.median).then(a.subpop.cmp(&b.subpop)));
    Ok(RecoveryReport {
        model: posterior.model.clone(),
        population_n: data.population_n(),
        subpops,
        coverage90,
        coverage50,
        unknown,
        degrees: degree_report(posterior, data, truth)?,
    })
}

/// Posterior mean degree per ego on the natural scale, with the
/// distribution's deciles and, given `truth`, the recovery error.
pub fn degree_report(posterior: &Posterior, data: &ArdDataset, truth: Option<&GroundTruth>) -> Result<DegreeReport> {
    let layout = layout_for(posterior, data)?;
    let natural = layout.kind == ModelKind::Barrier;
    let total = posterior.total_draws() as f64;
    let mut per_ego = vec![0.0; layout.n];
    for d in posterior.iter_draws() {
        for (i, e) in per_ego.iter_mut().enumerate() {
            let v = d[layout.degree_of(i)];
            *e += if natural { v } else { v.exp() };
        }
    }
    per_ego.iter_mut().for_each(|e| *e /= total);
    let mean = per_ego.iter().sum::<f64>() / per_ego.len() as f64;
    let (truth_mean, truth_deciles, mre) = match truth {
        Some(t) => {
            t.check_against(data)?;
            let td: Vec<f64> = t.degrees.iter().map(|&d| d as f64).collect();
            let pairs: Vec<(f64, f64)> = per_ego.iter().zip(&td).filter(|(_, &t)| t > 0.0).map(|(&e, &t)| (e, t)).collect();
            let mre = (!pairs.is_empty())
                .then(|| pairs.iter().map(|(e, t)| (e - t).abs() / t).sum::<f64>() / pairs.len() as f64);
            (Some(t.mean_degree()), Some(deciles(&td)), mre)
        }
        None => (None, None, None),
    };
    Ok(DegreeReport {
        deciles: deciles(&per_ego),
        per_ego_mean: per_ego,
        mean,
        truth_mean,
        truth_deciles,
        mean_relative_error: mre,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{GeneratorParams, SubpopMeta};
    use crate::sampler::SamplerConfig;

    fn data() -> ArdDataset {
        ArdDataset::from_rows(
            &[vec![2, 3, 0], vec![0, 0, 0], vec![1, 4, 0]],
            vec![SubpopMeta::known("a", 1000), SubpopMeta::known("b", 4000), SubpopMeta::unknown("c")],
            1_000_000,
        )
        .unwrap()
    }

    fn fixed_posterior(kind: ModelKind, data: &ArdDataset, draw: Vec<f64>, copies: usize) -> Posterior {
        let layout = Layout::new(kind, data.n(), data.k());
        Posterior {
            model: kind.code().into(),
            names: layout.names(),
            chains: 2,
            iterations: copies,
            draws: (0..2 * copies).flat_map(|_| draw.clone()).collect(),
            log_density: vec![vec![0.0; copies]; 2],
            blocks: vec![vec![]; 2],
            dataset_fingerprint: data.fingerprint(),
            config: SamplerConfig::default(),
            extra: serde_json::Value::Null,
        }
    }

    #[test]
    fn scale_up_examples() {
        let d = data();
        let est = scale_up_degree(&d);
        assert!((est[0] - 1000.0).abs() < 1e-9);
        assert_eq!(est[1], 0.0);
        let doubled = ArdDataset::from_rows(
            &[vec![2, 3, 0]],
            vec![SubpopMeta::known("a", 1000), SubpopMeta::known("b", 4000), SubpopMeta::unknown("c")],
            2_000_000,
        )
        .unwrap();
        assert!((scale_up_degree(&doubled)[0] - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_recovery_at_truth() {
        let d = data();
        let sizes = [1000.0f64, 4000.0, 2500.0];
        let mut draw = vec![300f64.ln()];
        draw.extend(sizes.iter().map(|s| (s / 1e6).ln()));
        let post = fixed_posterior(ModelKind::ErdosRenyi, &d, draw, 5);
        let truth = GroundTruth {
            degrees: vec![300; 3],
            subpop_sizes: vec![1000, 4000, 2500],
            generator_params: GeneratorParams::BarrierEffects {
                degree_logmean: 0.0,
                degree_logsd: 0.0,
                prevalences: vec![],
                dispersions: vec![],
            },
            provenance: None,
        };
        let rep = subpop_recovery(&post, &d, Some(&truth)).unwrap();
        for s in &rep.subpops {
            assert!((s.median - sizes[s.subpop]).abs() < 1e-6);
            assert!((s.q95 - s.q05).abs() < 1e-6);
            assert_eq!(s.in90, Some(true));
        }
        let medians: Vec<f64> = rep.subpops.iter().map(|s| s.median).collect();
        assert!(medians.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(rep.unknown.len(), 1);
        assert_eq!(rep.coverage90, Some(1.0));
        let deg = &rep.degrees;
        assert!(deg.per_ego_mean.iter().all(|&v| (v - 300.0).abs() < 1e-9));
        assert!(deg.mean_relative_error.unwrap() < 1e-12);
    }

    #[test]
    fn ppc_zero_column_and_order_invariance() {
        let d = data();
        let draws: Vec<Vec<f64>> = (0..40)
            .map(|s| vec![1.0 + 0.01 * s as f64, -0.5, 0.3, -40.0])
            .collect();
        let mut post = fixed_posterior(ModelKind::ErdosRenyi, &d, draws[0].clone(), 20);
        post.draws = draws.concat();
        let rep = ppc(&post, &d, &[0], 7, None).unwrap();
        let zero = rep.cells.iter().find(|c| c.subpop == 2).unwrap();
        assert_eq!((zero.observed, zero.lower, zero.upper), (1.0, 1.0, 1.0));
        assert!(zero.contained);
        let mut shuffled = draws.clone();
        shuffled.reverse();
        post.draws = shuffled.concat();
        let again = ppc(&post, &d, &[0], 7, None).unwrap();
        assert_eq!(rep.cells, again.cells);
    }

    #[test]
    fn ppc_rejects_foreign_posterior() {
        let d = data();
        let mut post = fixed_posterior(ModelKind::ErdosRenyi, &d, vec![0.0; 4], 3);
        post.dataset_fingerprint = "deadbeef".into();
        assert!(ppc(&post, &d, &[0], 1, None).is_err());
    }

    #[test]
    fn er_degree_is_point_mass() {
        let d = data();
        let post = fixed_posterior(ModelKind::ErdosRenyi, &d, vec![5.0, -1.0, -2.0, -3.0], 3);
        let rep = degree_report(&post, &d, None).unwrap();
        assert!(rep.per_ego_mean.windows(2).all(|w| w[0] == w[1]));
    }
}
