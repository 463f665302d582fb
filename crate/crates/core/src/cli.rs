//! Command implementations behind the `hardening` binary.
//!
//! Configuration is TOML restricted to dotted keys, e.g.
//!
//! ```text
//! dataset.n_train = 1000
//! train.epochs = 500
//! benchmark.kinds = "bad,good,ugly"
//! ```
//!
//! Every key has a default, so an empty file (or no file) runs the full
//! desk-scale benchmark.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::{run_benchmark, BenchmarkReport, InputDigests, TrainConfig};
use crate::curve_metric::{curve_distance, QuadratureSpec};
use crate::dataset::{generate_split, load_dataset, Dataset, ParameterBox, SplitConfig};
use crate::error::{Error, Result};
use crate::material_model::{MaterialParams, StrainGrid, StressCurve};
use crate::models::{InverseMap, InverseModel, InverseModelKind};
use crate::nn_core::AdamConfig;

pub const TRAIN_FILE: &str = "train.json";
pub const TEST_FILE: &str = "test.json";
pub const DATA_MANIFEST_FILE: &str = "data_manifest.json";
pub const BENCHMARK_MANIFEST_FILE: &str = "benchmark_manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_train: usize,
    pub pool_train: usize,
    pub n_test: usize,
    pub pool_test: usize,
    pub seed: u64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub count: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let s = SplitConfig::default();
        Self {
            n_train: s.n_train,
            pool_train: s.pool_train,
            n_test: s.n_test,
            pool_test: s.pool_test,
            seed: s.seed,
            gamma_min: s.bx.lower.gamma1,
            gamma_max: s.bx.upper.gamma1,
            beta_min: s.bx.lower.beta1,
            beta_max: s.bx.upper.beta1,
            eps_start: s.grid.eps_start(),
            eps_end: s.grid.eps_end(),
            count: s.grid.count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    pub resolution: usize,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        Self {
            resolution: QuadratureSpec::default().resolution(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Number of seeds; seeds are `seed_base, seed_base + 1, ...`.
    pub seeds: usize,
    pub seed_base: u64,
    /// Comma-separated subset of `bad,good,ugly`.
    pub kinds: String,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            seeds: 20,
            seed_base: 0,
            kinds: "bad,good,ugly".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetSection,
    pub quadrature: QuadratureSection,
    pub train: TrainSection,
    pub benchmark: BenchmarkSection,
}

pub fn parse_kinds(s: &str) -> Result<Vec<InverseModelKind>> {
    let kinds = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<InverseModelKind>>>()?;
    if kinds.is_empty() {
        return Err(Error::Config("no model kinds given".into()));
    }
    let mut dedup = kinds.clone();
    dedup.sort_unstable();
    dedup.dedup();
    if dedup.len() != kinds.len() {
        return Err(Error::Config(format!("duplicate model kind in `{s}`")));
    }
    Ok(kinds)
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.split()?;
        cfg.train_config()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn grid(&self) -> Result<StrainGrid> {
        let d = &self.dataset;
        StrainGrid::new(d.eps_start, d.eps_end, d.count).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn quad(&self) -> Result<QuadratureSpec> {
        QuadratureSpec::new(self.quadrature.resolution).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn split(&self) -> Result<SplitConfig> {
        let d = &self.dataset;
        let bx = ParameterBox::new(
            MaterialParams::new(d.gamma_min, d.gamma_min, d.beta_min, d.beta_min),
            MaterialParams::new(d.gamma_max, d.gamma_max, d.beta_max, d.beta_max),
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        let cfg = SplitConfig {
            bx,
            grid: self.grid()?,
            quad: self.quad()?,
            n_train: d.n_train,
            pool_train: d.pool_train,
            n_test: d.n_test,
            pool_test: d.pool_test,
            seed: d.seed,
        };
        for (what, n, pool) in [("train", d.n_train, d.pool_train), ("test", d.n_test, d.pool_test)] {
            if n < 2 || pool < n {
                return Err(Error::Config(format!("{what} set needs 2 <= n <= pool, got n={n}, pool={pool}")));
            }
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let b = &self.benchmark;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            seeds: (0..b.seeds as u64).map(|i| b.seed_base + i).collect(),
            kinds: parse_kinds(&b.kinds)?,
            quad: self.quad()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sha256(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn refuse_overwrite(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    if let Some(p) = paths.iter().find(|p| p.exists()) {
        return Err(Error::InvalidArgument(format!(
            "{} already exists (use --force to overwrite)",
            p.display()
        )));
    }
    Ok(())
}

/// Provenance record written next to every set of artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: Config,
    pub config_sha256: String,
    /// Input files and their digests.
    pub inputs: Vec<FileDigest>,
    /// Output files and their digests.
    pub outputs: Vec<FileDigest>,
    pub seeds: Vec<u64>,
    pub started_at: u64,
    pub finished_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        })
    }
}

impl RunManifest {
    /// Re-hashes every listed file and compares with the recorded digest.
    pub fn verify_files(&self) -> Result<()> {
        for f in self.inputs.iter().chain(&self.outputs) {
            let now = file_sha256(Path::new(&f.path))?;
            if now != f.sha256 {
                return Err(Error::Validation(format!("{} changed since the manifest was written", f.path)));
            }
        }
        Ok(())
    }
}

fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::Validation(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone)]
pub struct GenDataOutput {
    pub train: PathBuf,
    pub test: PathBuf,
    pub manifest: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
}

/// Generates the train and test datasets into `out_dir`.
pub fn cmd_gen_data(config: Option<&Path>, out_dir: &Path, force: bool) -> Result<GenDataOutput> {
    let started_at = unix_now();
    let cfg = Config::load(config)?;
    let split = cfg.split()?;
    let train_path = out_dir.join(TRAIN_FILE);
    let test_path = out_dir.join(TEST_FILE);
    let manifest_path = out_dir.join(DATA_MANIFEST_FILE);
    refuse_overwrite(&[&train_path, &test_path, &manifest_path], force)?;
    ensure_dir(out_dir)?;

    let (train, test) = generate_split(&split)?;
    write_atomic(&train_path, train.to_json()?.as_bytes())?;
    write_atomic(&test_path, test.to_json()?.as_bytes())?;

    let mut inputs = Vec::new();
    if let Some(p) = config {
        inputs.push(FileDigest::of(p)?);
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "gen-data".into(),
        config_sha256: cfg.sha256(),
        config: cfg.clone(),
        inputs,
        outputs: vec![FileDigest::of(&train_path)?, FileDigest::of(&test_path)?],
        seeds: vec![split.seed],
        started_at,
        finished_at: unix_now(),
    };
    write_manifest(&manifest_path, &manifest)?;
    Ok(GenDataOutput {
        train: train_path,
        test: test_path,
        manifest: manifest_path,
        n_train: train.len(),
        n_test: test.len(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkOptions {
    pub config: Option<PathBuf>,
    pub train: PathBuf,
    pub test: PathBuf,
    pub out_dir: PathBuf,
    pub kinds: Option<Vec<InverseModelKind>>,
    pub seeds: Option<usize>,
    pub jobs: Option<usize>,
    pub force: bool,
    pub render_only: bool,
    pub models_dir: Option<PathBuf>,
}

fn check_dataset_grid(d: &Dataset, grid: &StrainGrid, path: &Path) -> Result<()> {
    if d.grid != *grid {
        return Err(Error::GridMismatch {
            expected: format!("{grid} (from config)"),
            actual: format!("{} (in {})", d.grid, path.display()),
        });
    }
    Ok(())
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Trains and evaluates all requested (kind, seed) pairs and writes
/// `report.json`, `table.csv` and `benchmark_manifest.json` into the output directory.
/// With `render_only`, re-reads an existing report and only re-renders the table.
pub fn cmd_benchmark(opts: &BenchmarkOptions) -> Result<BenchmarkReport> {
    let report_path = opts.out_dir.join(REPORT_FILE);
    let table_path = opts.out_dir.join(TABLE_FILE);
    let manifest_path = opts.out_dir.join(BENCHMARK_MANIFEST_FILE);

    if opts.render_only {
        let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        let report = BenchmarkReport::from_json(&text, &report_path)?;
        write_atomic(&table_path, report.to_csv()?.as_bytes())?;
        return Ok(report);
    }

    let started_at = unix_now();
    let mut cfg = Config::load(opts.config.as_deref())?;
    if let Some(n) = opts.seeds {
        cfg.benchmark.seeds = n;
    }
    if let Some(kinds) = &opts.kinds {
        cfg.benchmark.kinds = kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",");
    }
    let train_cfg = cfg.train_config()?;
    let grid = cfg.grid()?;
    refuse_overwrite(&[&report_path, &table_path, &manifest_path], opts.force)?;

    let train = load_dataset(&opts.train)?;
    let test = load_dataset(&opts.test)?;
    check_dataset_grid(&train, &grid, &opts.train)?;
    check_dataset_grid(&test, &grid, &opts.test)?;

    let jobs = opts.jobs.unwrap_or_else(default_jobs);
    let run = run_benchmark(&train_cfg, &train, &test, jobs)?;
    let mut report = run.report;
    report.inputs = Some(InputDigests {
        config_sha256: cfg.sha256(),
        train_sha256: file_sha256(&opts.train)?,
        test_sha256: file_sha256(&opts.test)?,
    });
    report.generated_at = Some(unix_now());

    ensure_dir(&opts.out_dir)?;
    write_atomic(&report_path, report.to_json()?.as_bytes())?;
    write_atomic(&table_path, report.to_csv()?.as_bytes())?;

    let mut outputs = vec![FileDigest::of(&report_path)?, FileDigest::of(&table_path)?];
    if let Some(dir) = &opts.models_dir {
        ensure_dir(dir)?;
        for m in &run.models {
            let path = dir.join(format!("{}-seed{}.json", m.kind, m.seed));
            write_atomic(&path, m.model.to_json()?.as_bytes())?;
            outputs.push(FileDigest::of(&path)?);
        }
    }
    let mut inputs = vec![FileDigest::of(&opts.train)?, FileDigest::of(&opts.test)?];
    if let Some(p) = &opts.config {
        inputs.push(FileDigest::of(p)?);
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "benchmark".into(),
        config_sha256: cfg.sha256(),
        config: cfg,
        inputs,
        outputs,
        seeds: train_cfg.seeds.clone(),
        started_at,
        finished_at: unix_now(),
    };
    write_manifest(&manifest_path, &manifest)?;
    Ok(report)
}

/// Parses stresses given as a JSON array or as comma/whitespace separated numbers.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| Error::InvalidArgument(format!("bad JSON array: {e}")));
    }
    trimmed
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("`{t}` is not a number")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutput {
    pub kind: InverseModelKind,
    pub params: MaterialParams,
    /// Curve distance to the reference parameters, when given.
    pub distance: Option<f64>,
}

impl std::fmt::Display for PredictOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = self.params;
        writeln!(f, "kind = {}", self.kind)?;
        writeln!(f, "gamma1 = {:e}", p.gamma1)?;
        writeln!(f, "gamma2 = {:e}", p.gamma2)?;
        writeln!(f, "beta1 = {:e}", p.beta1)?;
        writeln!(f, "beta2 = {:e}", p.beta2)?;
        if let Some(d) = self.distance {
            writeln!(f, "curve_distance = {d:e}")?;
        }
        Ok(())
    }
}

pub fn load_model(path: &Path) -> Result<InverseModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    InverseModel::from_json(&text, path)
}

/// Predicts parameters for one curve. `expected_kind`, when set, must match
/// the model file; `reference` adds the curve distance to known parameters.
pub fn cmd_predict(
    model_path: &Path,
    values: &[f64],
    expected_kind: Option<InverseModelKind>,
    reference: Option<MaterialParams>,
    quad: &QuadratureSpec,
) -> Result<PredictOutput> {
    let model = load_model(model_path)?;
    if let Some(k) = expected_kind {
        if k != model.kind() {
            return Err(Error::InvalidArgument(format!(
                "{} holds a {} model, not {k}",
                model_path.display(),
                model.kind()
            )));
        }
    }
    let grid = *model.grid();
    if values.len() != grid.count() {
        return Err(Error::InvalidArgument(format!(
            "expected {} stress values, got {}",
            grid.count(),
            values.len()
        )));
    }
    let curve = StressCurve::new(values.to_vec(), grid)?;
    let params = model.predict(&curve)?;
    let distance = reference.map(|r| curve_distance(&r, &params, &grid, quad));
    Ok(PredictOutput {
        kind: model.kind(),
        params,
        distance,
    })
}

/// Exit status for an error: 1 for usage, configuration and input problems,
/// 2 for runtime and numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::Shape(_)
        | Error::GridMismatch { .. }
        | Error::Parse { .. }
        | Error::Validation(_) => 1,
        Error::Io { .. } | Error::Numerical(_) => 2,
    }
}
