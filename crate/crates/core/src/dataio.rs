//! ARD dataset bundle, ground-truth ledger and their on-disk formats.
//!
//! A dataset lives next to its siblings under a common prefix:
//!
//! * `<prefix>.ard.csv`: headerless n × K matrix of counts
//! * `<prefix>.meta.json`: total population size and per-column subpopulation metadata
//! * `<prefix>.truth.json`: simulator ground truth (only written by simulators)

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelOptions};

/// Metadata for one subpopulation (one column of the ARD matrix).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubpopMeta {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_size: Option<u64>,
}

impl SubpopMeta {
    pub fn known(name: impl Into<String>, size: u64) -> Self {
        Self {
            name: name.into(),
            known_size: Some(size),
        }
    }

    pub fn unknown(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            known_size: None,
        }
    }
}

/// Record of where an output file came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_fingerprint: Option<String>,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(seed: u64, config: serde_json::Value, fingerprint: Option<String>) -> Self {
        Self {
            tool_version: crate::VERSION.to_string(),
            seed,
            dataset_fingerprint: fingerprint,
            config,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    population_n: u64,
    subpops: Vec<SubpopMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// An n × K matrix of non-negative counts plus subpopulation metadata.
///
/// Row `i` holds ego `i`'s reports; column `k` pairs with `subpops[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArdDataset {
    y: Vec<u32>,
    n: usize,
    k: usize,
    subpops: Vec<SubpopMeta>,
    population_n: u64,
}

impl ArdDataset {
    /// Build a dataset from row-major counts, checking every invariant.
    pub fn new(
        y: Vec<u32>,
        n: usize,
        k: usize,
        subpops: Vec<SubpopMeta>,
        population_n: u64,
    ) -> Result<Self> {
        if y.len() != n * k {
            return Err(Error::Dimension(format!(
                "{} counts supplied for a {n} x {k} matrix",
                y.len()
            )));
        }
        if subpops.len() != k {
            return Err(Error::Dimension(format!(
                "matrix has {k} columns but metadata lists {} subpopulations",
                subpops.len()
            )));
        }
        if population_n == 0 {
            return Err(Error::Invalid("population_n must be positive".into()));
        }
        if n == 0 || k == 0 {
            return Err(Error::Invalid("dataset must have at least one row and column".into()));
        }
        let mut known_total: u64 = 0;
        for s in &subpops {
            if let Some(size) = s.known_size {
                if size == 0 || size >= population_n {
                    return Err(Error::Invalid(format!(
                        "known size {size} of subpopulation '{}' must lie in (0, {population_n})",
                        s.name
                    )));
                }
                known_total += size;
            }
        }
        if known_total == 0 {
            return Err(Error::Invalid(
                "no subpopulation has a known size; at least one is required for rescaling".into(),
            ));
        }
        if known_total >= population_n {
            return Err(Error::Invalid(format!(
                "sum of known subpopulation sizes {known_total} must be below population_n {population_n}"
            )));
        }
        Ok(Self {
            y,
            n,
            k,
            subpops,
            population_n,
        })
    }

    pub fn from_rows(rows: &[Vec<u32>], subpops: Vec<SubpopMeta>, population_n: u64) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} entries, expected {k}",
                rows[bad].len()
            )));
        }
        Self::new(rows.concat(), n, k, subpops, population_n)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> u32 {
        self.y[i * self.k + k]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.y[i * self.k..(i + 1) * self.k]
    }

    pub fn counts(&self) -> &[u32] {
        &self.y
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = u32> + '_ {
        (0..self.n).map(move |i| self.get(i, k))
    }

    pub fn subpops(&self) -> &[SubpopMeta] {
        &self.subpops
    }

    pub fn population_n(&self) -> u64 {
        self.population_n
    }

    /// Column indices whose size is known.
    pub fn known_indices(&self) -> Vec<usize> {
        self.subpops
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.known_size.map(|_| k))
            .collect()
    }

    pub fn max_count(&self) -> u32 {
        self.y.iter().copied().max().unwrap_or(0)
    }

    /// Largest count in row `i`.
    pub fn row_max(&self, i: usize) -> u32 {
        self.row(i).iter().copied().max().unwrap_or(0)
    }

    /// Canonical CSV text: comma separated, `\n` line ends, one trailing newline.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.y.len() * 3);
        for i in 0..self.n {
            for (k, v) in self.row(i).iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    fn meta_json(&self, provenance: Option<Provenance>) -> MetaFile {
        MetaFile {
            population_n: self.population_n,
            subpops: self.subpops.clone(),
            provenance,
        }
    }

    /// Stable short hash of the counts and metadata.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_csv_string().as_bytes());
        h.update(b"\n--\n");
        let meta = serde_json::to_vec(&self.meta_json(None)).expect("metadata serializes");
        h.update(&meta);
        hex::encode(&h.finalize()[..8])
    }
}

/// Paths of the files that make up a dataset with the given prefix.
pub fn dataset_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let s = prefix.as_os_str().to_string_lossy();
    (
        PathBuf::from(format!("{s}.ard.csv")),
        PathBuf::from(format!("{s}.meta.json")),
        PathBuf::from(format!("{s}.truth.json")),
    )
}

fn parse_count(field: &str, row: usize, col: usize) -> Result<u32> {
    let f = field.trim();
    f.parse::<u32>().map_err(|_| {
        let why = if f.starts_with('-') {
            "negative"
        } else if f.parse::<f64>().is_ok() {
            "non-integer"
        } else {
            "unparseable"
        };
        Error::Invalid(format!("{why} count '{f}' at row {row}, column {col}"))
    })
}

/// Parse headerless CSV counts into rows.
pub fn parse_counts_csv(text: &str) -> Result<Vec<Vec<u32>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, f)| parse_count(f, r, c))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Load and validate a dataset from its CSV and metadata files.
pub fn load_dataset(ard_path: &Path, meta_path: &Path) -> Result<ArdDataset> {
    let text = fs::read_to_string(ard_path).map_err(|e| Error::io(ard_path, e))?;
    let meta_text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: MetaFile = serde_json::from_str(&meta_text)?;
    let rows = parse_counts_csv(&text)?;
    if let Some(r) = rows.first() {
        if r.len() != meta.subpops.len() {
            return Err(Error::Dimension(format!(
                "CSV has {} columns but metadata lists {} subpopulations",
                r.len(),
                meta.subpops.len()
            )));
        }
    }
    ArdDataset::from_rows(&rows, meta.subpops, meta.population_n)
}

/// Load `<prefix>.ard.csv` and `<prefix>.meta.json`.
pub fn load_dataset_prefix(prefix: &Path) -> Result<ArdDataset> {
    let (csv, meta, _) = dataset_paths(prefix);
    load_dataset(&csv, &meta)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write the CSV and metadata files of a dataset.
pub fn save_dataset(
    data: &ArdDataset,
    ard_path: &Path,
    meta_path: &Path,
    provenance: Option<Provenance>,
) -> Result<()> {
    write_file(ard_path, data.to_csv_string().as_bytes())?;
    let meta = serde_json::to_vec_pretty(&data.meta_json(provenance))?;
    write_file(meta_path, &meta)
}

/// Latent values used by a generator, kept apart from the data so a fit never sees them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum GeneratorParams {
    LatentSpace {
        zeta: f64,
        eta: Vec<f64>,
        centers: Vec<[f64; 3]>,
        /// Population ids of the sampled egos, in row order.
        ego_ids: Vec<usize>,
        /// Positions of every population member.
        positions: Vec<[f64; 3]>,
        /// Gravity term of every population member.
        gravity: Vec<f64>,
        /// Population ids of the members of each subpopulation.
        members: Vec<Vec<usize>>,
    },
    BarrierEffects {
        degree_logmean: f64,
        degree_logsd: f64,
        prevalences: Vec<f64>,
        dispersions: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub degrees: Vec<u64>,
    pub subpop_sizes: Vec<u64>,
    pub generator_params: GeneratorParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl GroundTruth {
    pub fn check_against(&self, data: &ArdDataset) -> Result<()> {
        if self.degrees.len() != data.n() || self.subpop_sizes.len() != data.k() {
            return Err(Error::Dimension(format!(
                "truth has {} egos / {} subpopulations, dataset has {} / {}",
                self.degrees.len(),
                self.subpop_sizes.len(),
                data.n(),
                data.k()
            )));
        }
        Ok(())
    }

    pub fn mean_degree(&self) -> f64 {
        self.degrees.iter().map(|&d| d as f64).sum::<f64>() / self.degrees.len().max(1) as f64
    }
}

pub fn save_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    write_file(path, &serde_json::to_vec(truth)?)
}

pub fn load_truth(path: &Path) -> Result<GroundTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Check the model-specific requirements a dataset must meet before fitting.
pub fn validate_fit_inputs(data: &ArdDataset, kind: ModelKind, opts: &ModelOptions) -> Result<()> {
    match kind {
        ModelKind::LatentSpace => {
            let known = data.known_indices().len();
            if known < opts.n_fixed {
                return Err(Error::Invalid(format!(
                    "latent-space model anchors {} subpopulation centers but only {known} subpopulations have known sizes",
                    opts.n_fixed
                )));
            }
            if opts.n_fixed == 0 {
                return Err(Error::Invalid(
                    "latent-space model needs at least one anchored subpopulation center".into(),
                ));
            }
        }
        ModelKind::Barrier => {
            let max = data.max_count() as u64;
            if max > opts.max_degree_cap {
                return Err(Error::Invalid(format!(
                    "count {max} exceeds the barrier model's degree support cap {}",
                    opts.max_degree_cap
                )));
            }
        }
        ModelKind::ErdosRenyi | ModelKind::VaryingDegree | ModelKind::Overdispersed => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta2() -> &'static str {
        r#"{"population_n": 1000, "subpops": [{"name": "a", "known_size": 10}, {"name": "b"}]}"#
    }

    fn write_pair(dir: &Path, csv: &str, meta: &str) -> (PathBuf, PathBuf) {
        let c = dir.join("d.ard.csv");
        let m = dir.join("d.meta.json");
        fs::write(&c, csv).unwrap();
        fs::write(&m, meta).unwrap();
        (c, m)
    }

    #[test]
    fn loads_small_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let (c, m) = write_pair(dir.path(), "0,1\n2,3\n", meta2());
        let d = load_dataset(&c, &m).unwrap();
        assert_eq!((d.n(), d.k()), (2, 2));
        assert_eq!(d.row(0), &[0, 1]);
        assert_eq!(d.row(1), &[2, 3]);
        assert_eq!(d.known_indices(), vec![0]);
    }

    #[test]
    fn rejects_column_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (c, m) = write_pair(dir.path(), "0,1,2\n2,3,4\n", meta2());
        assert!(matches!(load_dataset(&c, &m), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_missing_known_subpop() {
        let dir = tempfile::tempdir().unwrap();
        let meta = r#"{"population_n": 1000, "subpops": [{"name": "a"}, {"name": "b"}]}"#;
        let (c, m) = write_pair(dir.path(), "0,1\n2,3\n", meta);
        let err = load_dataset(&c, &m).unwrap_err();
        assert!(err.to_string().contains("known size"), "{err}");
    }

    #[test]
    fn rejects_bad_counts() {
        let dir = tempfile::tempdir().unwrap();
        for bad in ["0,-1\n2,3\n", "0,1.5\n2,3\n", "0,x\n2,3\n"] {
            let (c, m) = write_pair(dir.path(), bad, meta2());
            assert!(matches!(load_dataset(&c, &m), Err(Error::Invalid(_))), "{bad}");
        }
    }

    #[test]
    fn rejects_known_sizes_summing_past_population() {
        let subs = vec![SubpopMeta::known("a", 600), SubpopMeta::known("b", 500)];
        assert!(ArdDataset::new(vec![0, 0], 1, 2, subs, 1000).is_err());
    }

    #[test]
    fn canonical_csv_round_trips_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let text = "0,1,7\n2,3,10000\n";
        let meta = r#"{"population_n": 100000, "subpops": [{"name": "a", "known_size": 10}, {"name": "b"}, {"name": "c", "known_size": 20}]}"#;
        let (c, m) = write_pair(dir.path(), text, meta);
        let d = load_dataset(&c, &m).unwrap();
        let (c2, m2, _) = dataset_paths(&dir.path().join("out"));
        save_dataset(&d, &c2, &m2, None).unwrap();
        assert_eq!(fs::read_to_string(&c2).unwrap(), text);
        assert_eq!(load_dataset(&c2, &m2).unwrap(), d);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let subs = || vec![SubpopMeta::known("a", 10), SubpopMeta::unknown("b")];
        let a = ArdDataset::new(vec![0, 1, 2, 3], 2, 2, subs(), 1000).unwrap();
        let b = ArdDataset::new(vec![0, 1, 2, 4], 2, 2, subs(), 1000).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn fit_requirements() {
        let subs = vec![
            SubpopMeta::known("a", 10),
            SubpopMeta::known("b", 20),
            SubpopMeta::unknown("c"),
        ];
        let d = ArdDataset::new(vec![0, 1, 2, 3, 50, 5], 2, 3, subs, 1000).unwrap();
        let opts = ModelOptions {
            n_fixed: 4,
            ..ModelOptions::default()
        };
        let err = validate_fit_inputs(&d, ModelKind::LatentSpace, &opts).unwrap_err();
        assert!(err.to_string().contains("anchors 4"), "{err}");
        validate_fit_inputs(&d, ModelKind::Overdispersed, &opts).unwrap();
        let capped = ModelOptions {
            max_degree_cap: 40,
            ..ModelOptions::default()
        };
        assert!(validate_fit_inputs(&d, ModelKind::Barrier, &capped).is_err());
        validate_fit_inputs(&d, ModelKind::Barrier, &ModelOptions::default()).unwrap();
    }
}
