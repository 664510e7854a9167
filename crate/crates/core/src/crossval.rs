//! Entry-wise F-fold cross-validation and ELPD comparison.
//!
//! Folds partition the cells of the count matrix rather than its rows, so
//! every ego keeps some observed entries (and hence an informed degree)
//! in every training set.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::ArdDataset;
use crate::diagnostics::{diagnose, RHAT_LOOSE};
use crate::error::{Error, Result};
use crate::models::{entry_log_lik, ArdModel, Layout, ModelSpec, RescaleSpec};
use crate::rng::{derive_seed, stream};
use crate::sampler::{run_chains, SamplerConfig};

/// Assignment of every matrix entry to one of `folds` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub folds: usize,
    pub seed: u64,
    /// Fold of each entry, row-major.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    /// Row-major indices of the entries held out in `fold`.
    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&e| self.assignment[e] == fold).collect()
    }

    /// `true` for entries used to fit when `fold` is held out.
    pub fn train_mask(&self, fold: usize) -> Vec<bool> {
        self.assignment.iter().map(|&a| a != fold).collect()
    }

    fn ego_spans_two_folds(&self, i: usize) -> bool {
        let row = &self.assignment[i * self.k..(i + 1) * self.k];
        row.iter().any(|&f| f != row[0])
    }
}

/// Random balanced partition of the `n x k` entries into `folds` folds in
/// which no ego has all of its entries in a single fold.
pub fn make_folds(n: usize, k: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::Invalid("cross-validation needs at least 2 folds".into()));
    }
    if n * k < folds {
        return Err(Error::Invalid(format!("{} entries cannot fill {folds} folds", n * k)));
    }
    if k < 2 {
        return Err(Error::Invalid(
            "with a single subpopulation every ego would lose its only entry in some fold".into(),
        ));
    }
    let mut rng = stream(seed, &[0xF01D]);
    let mut order: Vec<usize> = (0..n * k).collect();
    order.shuffle(&mut rng);
    let mut assignment = vec![0; n * k];
    for (pos, &e) in order.iter().enumerate() {
        assignment[e] = pos % folds;
    }
    let mut plan = FoldPlan { n, k, folds, seed, assignment };

    // Repair egos whose whole row landed in one fold by swapping one of
    // their entries with an entry of another ego in a different fold.
    let mut cursor = 0usize;
    for i in 0..n {
        if plan.ego_spans_two_folds(i) {
            continue;
        }
        let f = plan.assignment[i * k];
        let mut fixed = false;
        for step in 0..n * k {
            let e = (cursor + step) % (n * k);
            let other = e / k;
            if other == i || plan.assignment[e] == f {
                continue;
            }
            let g = plan.assignment[e];
            plan.assignment[e] = f;
            plan.assignment[i * k] = g;
            if plan.ego_spans_two_folds(other) {
                cursor = e + 1;
                fixed = true;
                break;
            }
            plan.assignment[e] = g;
            plan.assignment[i * k] = f;
        }
        if !fixed {
            return Err(Error::Invalid(format!(
                "cannot spread ego {} over two folds with n={n}, K={k}, F={folds}",
                i + 1
            )));
        }
    }
    Ok(plan)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(mean_s p(y_ik | draw_s))` over the given draws.
pub fn pointwise_lpd(layout: &Layout, data: &ArdDataset, draws: &[&[f64]], i: usize, k: usize) -> f64 {
    let ll: Vec<f64> = draws.iter().map(|d| entry_log_lik(layout, d, data, i, k)).collect();
    log_sum_exp(&ll) - (draws.len() as f64).ln()
}

/// Largest R-hat over the degree and prevalence components, which the
/// rescaled draws identify. Hyper-means on the flat ridge are excluded.
fn identified_max_rhat(layout: &Layout, diag: &crate::diagnostics::DiagnosticsReport) -> Option<f64> {
    let mut idx: Vec<usize> = layout.degree().collect();
    if let Some(b) = layout.beta() {
        idx.extend(b);
    }
    let mut out: Option<f64> = None;
    for i in idx {
        let r = diag.params[i].rhat?;
        out = Some(out.map_or(r, |o| o.max(r)));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub held_out: usize,
    /// Largest R-hat over degree and prevalence components.
    pub max_rhat: Option<f64>,
    /// Sum of the held-out pointwise values.
    pub elpd: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CvResult {
    pub model: String,
    pub folds: Vec<FoldResult>,
    /// Pointwise log predictive density of every entry, row-major.
    pub pointwise: Vec<f64>,
    pub elpd: f64,
}

/// Fit `spec` once per fold with that fold's entries masked out and score
/// each held-out entry by its log posterior predictive density.
pub fn cv_elpd(
    spec: &ModelSpec,
    data: &ArdDataset,
    plan: &FoldPlan,
    rescale: Option<&RescaleSpec>,
    config: &SamplerConfig,
) -> Result<CvResult> {
    if !spec.kind.supports_cv() {
        return Err(Error::Unsupported(format!(
            "entry-wise cross-validation is not defined for the {} model, whose likelihood is not a product over independent entries given per-ego and per-subpopulation parameters",
            spec.kind.display_name()
        )));
    }
    if plan.n != data.n() || plan.k != data.k() {
        return Err(Error::Dimension(format!(
            "fold plan is {}x{}, dataset is {}x{}",
            plan.n,
            plan.k,
            data.n(),
            data.k()
        )));
    }
    config.validate()?;
    let layout = Layout::new(spec.kind, data.n(), data.k());
    let fingerprint = data.fingerprint();
    let per_fold: Vec<(FoldResult, Vec<(usize, f64)>)> = (0..plan.folds)
        .into_par_iter()
        .map(|f| -> Result<_> {
            let model = ArdModel::new(spec.clone(), data, Some(plan.train_mask(f)), rescale.cloned())?;
            let cfg = SamplerConfig { seed: derive_seed(config.seed, &[0xC5, f as u64]), ..config.clone() };
            let post = run_chains(&model, &cfg, spec.kind.code(), &fingerprint, serde_json::json!({ "fold": f }))?;
            let diag = diagnose(&post)?;
            let max_rhat = identified_max_rhat(&layout, &diag);
            let warning = match max_rhat {
                Some(r) if r >= RHAT_LOOSE => Some(format!("fold {} did not converge: max R-hat {r:.3}", f + 1)),
                None => Some(format!("fold {}: R-hat undefined", f + 1)),
                _ => None,
            };
            let draws: Vec<&[f64]> = post.iter_draws().collect();
            let values: Vec<(usize, f64)> = plan
                .held_out(f)
                .into_iter()
                .map(|e| (e, pointwise_lpd(&layout, data, &draws, e / plan.k, e % plan.k)))
                .collect();
            let elpd = values.iter().map(|v| v.1).sum();
            Ok((
                FoldResult { fold: f, held_out: values.len(), max_rhat, elpd, warning },
                values,
            ))
        })
        .collect::<Result<_>>()?;
    let mut pointwise = vec![f64::NAN; data.n() * data.k()];
    let mut folds = Vec::with_capacity(plan.folds);
    for (fr, values) in per_fold {
        for (e, v) in values {
            pointwise[e] = v;
        }
        folds.push(fr);
    }
    Ok(CvResult {
        model: spec.kind.code().into(),
        elpd: pointwise.iter().sum(),
        folds,
        pointwise,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ElpdRow {
    pub model: String,
    pub elpd: f64,
    /// ELPD minus the best model's ELPD (0 for the best).
    pub diff: f64,
    /// Standard error of `diff`.
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ElpdReport {
    /// Models from best to worst.
    pub rows: Vec<ElpdRow>,
    pub entries: usize,
}

/// Rank models by total ELPD. The standard error of each difference to
/// the best model is `sqrt(M * var(d))` over the `M` pointwise differences.
pub fn compare_elpd(models: &[(String, Vec<f64>)]) -> Result<ElpdReport> {
    let Some(first) = models.first() else {
        return Err(Error::Invalid("no models to compare".into()));
    };
    let m = first.1.len();
    if models.iter().any(|(_, p)| p.len() != m) {
        return Err(Error::Dimension("pointwise vectors have different lengths".into()));
    }
    if m < 2 {
        return Err(Error::Invalid("need at least two pointwise values".into()));
    }
    let totals: Vec<f64> = models.iter().map(|(_, p)| p.iter().sum()).collect();
    let best = (0..models.len()).max_by(|&a, &b| totals[a].total_cmp(&totals[b])).expect("non-empty");
    let mut rows: Vec<ElpdRow> = models
        .iter()
        .zip(&totals)
        .map(|((name, p), &total)| {
            let d: Vec<f64> = p.iter().zip(&models[best].1).map(|(a, b)| a - b).collect();
            let mean = d.iter().sum::<f64>() / m as f64;
            let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            ElpdRow { model: name.clone(), elpd: total, diff: total - totals[best], se: (m as f64 * var).sqrt() }
        })
        .collect();
    rows.sort_by(|a, b| b.elpd.total_cmp(&a.elpd));
    Ok(ElpdReport { rows, entries: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::SubpopMeta;
    use crate::dists::poisson_logpmf;
    use crate::models::ModelKind;

    #[test]
    fn folds_partition_and_balance() {
        let plan = make_folds(2, 5, 10, 1).unwrap();
        for f in 0..10 {
            assert_eq!(plan.held_out(f).len(), 1);
        }
        for (n, k, folds) in [(30, 4, 10), (7, 3, 2), (50, 15, 10), (3, 2, 4)] {
            let plan = make_folds(n, k, folds, 9).unwrap();
            let mut seen = vec![0; n * k];
            let mut sizes = vec![0; folds];
            for f in 0..folds {
                for e in plan.held_out(f) {
                    seen[e] += 1;
                    sizes[f] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in 0..folds {
                let mask = plan.train_mask(f);
                for i in 0..n {
                    assert!(mask[i * k..(i + 1) * k].iter().any(|&t| t), "ego {i} fold {f}");
                }
            }
            assert_eq!(plan, make_folds(n, k, folds, 9).unwrap());
        }
        assert!(make_folds(5, 1, 3, 1).is_err());
        assert!(make_folds(5, 3, 1, 1).is_err());
        assert!(make_folds(1, 2, 3, 1).is_err());
    }

    #[test]
    fn oracle_pointwise_equals_direct_likelihood() {
        let data = ArdDataset::from_rows(
            &[vec![3, 0], vec![1, 7]],
            vec![SubpopMeta::known("a", 10), SubpopMeta::unknown("b")],
            1000,
        )
        .unwrap();
        let layout = Layout::new(ModelKind::ErdosRenyi, 2, 2);
        let x = vec![1.2, 0.3, -0.4];
        let draws: Vec<&[f64]> = vec![&x; 5];
        for i in 0..2 {
            for k in 0..2 {
                let direct = poisson_logpmf(data.get(i, k) as u64, (x[0] + x[1 + k]).exp());
                assert!((pointwise_lpd(&layout, &data, &draws, i, k) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoke_two_by_two() {
        let data = ArdDataset::from_rows(
            &[vec![3, 0], vec![1, 7]],
            vec![SubpopMeta::known("a", 10), SubpopMeta::unknown("b")],
            1000,
        )
        .unwrap();
        let plan = make_folds(2, 2, 2, 3).unwrap();
        let cfg = SamplerConfig { iterations: 200, warmup: 200, chains: 2, ..Default::default() };
        let res = cv_elpd(&ModelSpec::new(ModelKind::ErdosRenyi), &data, &plan, None, &cfg).unwrap();
        assert_eq!(res.pointwise.len(), 4);
        assert!(res.pointwise.iter().all(|&v| v.is_finite() && v <= 0.0));
        let fold_sum: f64 = res.folds.iter().map(|f| f.elpd).sum();
        assert!((fold_sum - res.elpd).abs() < 1e-9);
        let err = cv_elpd(&ModelSpec::new(ModelKind::Barrier), &data, &plan, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn compare_properties() {
        let a: Vec<f64> = (0..50).map(|i| -1.0 - (i as f64 * 0.37).sin().abs()).collect();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v - 0.1 * (i % 3) as f64).collect();
        let same = compare_elpd(&[("a".into(), a.clone()), ("a2".into(), a.clone())]).unwrap();
        assert!(same.rows.iter().all(|r| r.diff == 0.0 && r.se == 0.0));
        let rep = compare_elpd(&[("b".into(), b.clone()), ("a".into(), a.clone())]).unwrap();
        assert_eq!(rep.rows[0].model, "a");
        assert_eq!(rep.rows[0].diff, 0.0);
        // brute-force SE
        let d: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let mut mean = 0.0;
        for v in &d {
            mean += v;
        }
        mean /= 50.0;
        let mut ss = 0.0;
        for v in &d {
            ss += (v - mean) * (v - mean);
        }
        let se = (50.0 * ss / 49.0).sqrt();
        assert!((rep.rows[1].se - se).abs() < 1e-12);
        let shift = |v: &Vec<f64>| v.iter().map(|x| x + 3.5).collect::<Vec<_>>();
        let moved = compare_elpd(&[("b".into(), shift(&b)), ("a".into(), shift(&a))]).unwrap();
        assert!((moved.rows[1].diff - rep.rows[1].diff).abs() < 1e-9);
        assert!(compare_elpd(&[("a".into(), a), ("b".into(), vec![0.0; 3])]).is_err());
    }
}
