//! Space-filling train/test parameter sets and their JSON persistence.
//!
//! Candidates are drawn log-uniformly from a [`ParameterBox`] and thinned by
//! greedy farthest-point (maximin) selection under the curve distance, so the
//! selected curves sit at roughly even spacing in curve space rather than in
//! parameter space.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve_metric::{DenseCurve, QuadratureSpec};
use crate::error::{Error, Result};
use crate::material_model::{evaluate_curve, MaterialParams, StrainGrid, StressCurve};

const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;
const UNIFORM_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lower: MaterialParams,
    pub upper: MaterialParams,
}

impl Default for ParameterBox {
    fn default() -> Self {
        Self {
            lower: MaterialParams::new(10.0, 10.0, 5.0, 5.0),
            upper: MaterialParams::new(1000.0, 1000.0, 500.0, 500.0),
        }
    }
}

impl ParameterBox {
    pub fn new(lower: MaterialParams, upper: MaterialParams) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        for j in 0..4 {
            if !(lo[j] > 0.0 && lo[j] < hi[j] && hi[j].is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "parameter box component {j}: need 0 < lower < upper, got [{}, {}]",
                    lo[j], hi[j]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &MaterialParams) -> bool {
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        p.to_array()
            .iter()
            .enumerate()
            .all(|(j, &v)| v >= lo[j] && v <= hi[j])
    }

    fn sample_log_uniform(&self, rng: &mut impl Rng) -> MaterialParams {
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        let mut out = [0.0; 4];
        for j in 0..4 {
            let u: f64 = rng.gen_range(lo[j].ln()..hi[j].ln());
            out[j] = u.exp().clamp(lo[j], hi[j]);
        }
        out.into()
    }

    fn sample_uniform(&self, rng: &mut impl Rng) -> MaterialParams {
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        let mut out = [0.0; 4];
        for j in 0..4 {
            out[j] = rng.gen_range(lo[j]..hi[j]);
        }
        out.into()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Greedy maximin selection of `n` indices out of `pool`.
///
/// With `existing` empty the first pick is the candidate farthest from the
/// zero curve; otherwise every pick maximizes the minimum distance to
/// `existing` plus everything picked so far. Ties go to the lowest index.
pub fn maximin_select(pool: &[DenseCurve], n: usize, existing: &[DenseCurve]) -> Vec<usize> {
    assert!(n <= pool.len(), "cannot select {n} of {}", pool.len());
    let mut min_dist: Vec<f64> = if existing.is_empty() {
        pool.par_iter().map(DenseCurve::norm).collect()
    } else {
        pool.par_iter()
            .map(|c| {
                existing
                    .iter()
                    .map(|e| c.distance(e))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let mut taken = vec![false; pool.len()];
    let mut order = Vec::with_capacity(n);

    for step in 0..n {
        let mut best: Option<usize> = None;
        for (i, &d) in min_dist.iter().enumerate() {
            if taken[i] {
                continue;
            }
            match best {
                Some(b) if min_dist[b] >= d => {}
                _ => best = Some(i),
            }
        }
        let pick = best.expect("pool exhausted");
        taken[pick] = true;
        order.push(pick);
        if step + 1 == n {
            break;
        }
        let chosen = &pool[pick];
        // after the first pick without `existing`, norms are no longer min distances
        let reset = existing.is_empty() && step == 0;
        min_dist
            .par_iter_mut()
            .zip(pool.par_iter())
            .zip(taken.par_iter())
            .for_each(|((slot, cand), &is_taken)| {
                if is_taken {
                    return;
                }
                let d = cand.distance(chosen);
                *slot = if reset { d } else { slot.min(d) };
            });
    }
    order
}

fn dense_all(params: &[MaterialParams], grid: &StrainGrid, quad: &QuadratureSpec) -> Vec<DenseCurve> {
    params.par_iter().map(|p| quad.dense_curve(grid, p)).collect()
}

fn draw_pool(bx: &ParameterBox, pool_size: usize, rng: &mut ChaCha8Rng) -> Vec<MaterialParams> {
    (0..pool_size).map(|_| bx.sample_log_uniform(rng)).collect()
}

fn check_sizes(n: usize, pool_size: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if pool_size < n {
        return Err(Error::InvalidArgument(format!(
            "pool_size ({pool_size}) must be >= n ({n})"
        )));
    }
    Ok(())
}

/// Draws `pool_size` log-uniform candidates and keeps `n` of them by
/// maximin selection, in selection order.
pub fn sample_space_filling(
    bx: &ParameterBox,
    n: usize,
    pool_size: usize,
    grid: &StrainGrid,
    quad: &QuadratureSpec,
    seed: u64,
) -> Result<Vec<MaterialParams>> {
    sample_space_filling_from_stream(bx, n, pool_size, grid, quad, seed, TRAIN_STREAM, &[])
}

#[allow(clippy::too_many_arguments)]
fn sample_space_filling_from_stream(
    bx: &ParameterBox,
    n: usize,
    pool_size: usize,
    grid: &StrainGrid,
    quad: &QuadratureSpec,
    seed: u64,
    stream: u64,
    existing: &[MaterialParams],
) -> Result<Vec<MaterialParams>> {
    bx.validate()?;
    check_sizes(n, pool_size)?;
    let mut rng = stream_rng(seed, stream);
    let pool = draw_pool(bx, pool_size, &mut rng);
    let dense = dense_all(&pool, grid, quad);
    let existing_dense = dense_all(existing, grid, quad);
    let order = maximin_select(&dense, n, &existing_dense);
    Ok(order.into_iter().map(|i| pool[i]).collect())
}

/// `n` points uniform in the (linear) box. Baseline for the evenness check.
pub fn sample_uniform(bx: &ParameterBox, n: usize, seed: u64) -> Vec<MaterialParams> {
    let mut rng = stream_rng(seed, UNIFORM_STREAM);
    (0..n).map(|_| bx.sample_uniform(&mut rng)).collect()
}

/// Nearest-neighbor curve distance for every point of the set.
pub fn nearest_neighbor_distances(
    params: &[MaterialParams],
    grid: &StrainGrid,
    quad: &QuadratureSpec,
) -> Vec<f64> {
    let dense = dense_all(params, grid, quad);
    (0..dense.len())
        .into_par_iter()
        .map(|i| {
            dense
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, c)| dense[i].distance(c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Coefficient of variation (population std / mean) of the nearest-neighbor
/// curve distances. Lower means more even spacing.
pub fn nearest_neighbor_cv(params: &[MaterialParams], grid: &StrainGrid, quad: &QuadratureSpec) -> f64 {
    let d = nearest_neighbor_distances(params, grid, quad);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub params: Vec<MaterialParams>,
    pub curves: Vec<StressCurve>,
    pub grid: StrainGrid,
    pub role: Role,
}

pub fn build_dataset(params: Vec<MaterialParams>, grid: &StrainGrid, role: Role) -> Result<Dataset> {
    if params.is_empty() {
        return Err(Error::InvalidArgument("dataset needs at least one parameter vector".into()));
    }
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("parameter vector {i} is not finite")));
    }
    let curves = params.iter().map(|p| evaluate_curve(grid, p)).collect();
    Ok(Dataset {
        params,
        curves,
        grid: *grid,
        role,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    grid: StrainGrid,
    role: Role,
    records: Vec<Record>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    p: [f64; 4],
    curve: Vec<f64>,
}

/// Lines before the first record in the file layout written by [`Dataset::to_json`].
const HEADER_LINES: usize = 4;

impl Dataset {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Structural checks plus regeneration of every curve from its parameters.
    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.curves.len() {
            return Err(Error::Validation(format!(
                "{} parameter vectors but {} curves",
                self.params.len(),
                self.curves.len()
            )));
        }
        for (i, (p, c)) in self.params.iter().zip(&self.curves).enumerate() {
            if !p.is_finite() {
                return Err(Error::Validation(format!("record {i}: parameters not finite")));
            }
            if c.values.len() != self.grid.count() {
                return Err(Error::Validation(format!(
                    "record {i}: curve has {} values, grid has {} points",
                    c.values.len(),
                    self.grid.count()
                )));
            }
            let expect = evaluate_curve(&self.grid, p);
            for (k, (a, b)) in c.values.iter().zip(&expect.values).enumerate() {
                if !((a - b).abs() <= 1e-12 * b.abs().max(1.0)) {
                    return Err(Error::Validation(format!(
                        "record {i}: curve value {k} = {a} does not match the law ({b})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// One record per line so parse errors can be traced to a record.
    pub fn to_json(&self) -> Result<String> {
        let mut s = String::new();
        let grid = serde_json::to_string(&self.grid).map_err(|e| Error::Validation(e.to_string()))?;
        let _ = writeln!(s, "{{");
        let _ = writeln!(s, "  \"grid\": {grid},");
        let _ = writeln!(s, "  \"role\": \"{}\",", self.role);
        let _ = writeln!(s, "  \"records\": [");
        for (i, (p, c)) in self.params.iter().zip(&self.curves).enumerate() {
            let rec = Record {
                p: p.to_array(),
                curve: c.values.clone(),
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::Validation(e.to_string()))?;
            let sep = if i + 1 == self.params.len() { "" } else { "," };
            let _ = writeln!(s, "    {line}{sep}");
        }
        let _ = writeln!(s, "  ]");
        let _ = writeln!(s, "}}");
        Ok(s)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| {
            let line = e.line();
            let location = if line > HEADER_LINES {
                format!("record {} (line {line})", line - HEADER_LINES - 1)
            } else {
                format!("header (line {line})")
            };
            Error::Parse {
                path: path.to_path_buf(),
                message: format!("{location}: {e}"),
            }
        })?;
        if file.records.is_empty() {
            return Err(Error::Validation("dataset has no records".into()));
        }
        let grid = file.grid;
        let mut params = Vec::with_capacity(file.records.len());
        let mut curves = Vec::with_capacity(file.records.len());
        for (i, rec) in file.records.into_iter().enumerate() {
            if rec.curve.len() != grid.count() {
                return Err(Error::Validation(format!(
                    "record {i}: curve has {} values, grid has {} points",
                    rec.curve.len(),
                    grid.count()
                )));
            }
            params.push(MaterialParams::from_array(rec.p));
            curves.push(StressCurve {
                values: rec.curve,
                grid,
            });
        }
        let d = Dataset {
            params,
            curves,
            grid,
            role: file.role,
        };
        d.validate()?;
        Ok(d)
    }
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, d.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_json(&text, path)
}

/// Sizes and sampling settings for a train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub bx: ParameterBox,
    pub grid: StrainGrid,
    pub quad: QuadratureSpec,
    pub n_train: usize,
    pub pool_train: usize,
    pub n_test: usize,
    pub pool_test: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            bx: ParameterBox::default(),
            grid: StrainGrid::default(),
            quad: QuadratureSpec::default(),
            n_train: 1000,
            pool_train: 20000,
            n_test: 200,
            pool_test: 4000,
            seed: 0,
        }
    }
}

/// Train set first, then the test set selected with the train points
/// counted as already chosen. The two sets are disjoint.
pub fn generate_split(cfg: &SplitConfig) -> Result<(Dataset, Dataset)> {
    let train = sample_space_filling_from_stream(
        &cfg.bx,
        cfg.n_train,
        cfg.pool_train,
        &cfg.grid,
        &cfg.quad,
        cfg.seed,
        TRAIN_STREAM,
        &[],
    )?;
    let test = sample_space_filling_from_stream(
        &cfg.bx,
        cfg.n_test,
        cfg.pool_test,
        &cfg.grid,
        &cfg.quad,
        cfg.seed,
        TEST_STREAM,
        &train,
    )?;
    if let Some(p) = test.iter().find(|p| train.contains(p)) {
        return Err(Error::Validation(format!("test point {p:?} also in the train set")));
    }
    Ok((
        build_dataset(train, &cfg.grid, Role::Train)?,
        build_dataset(test, &cfg.grid, Role::Test)?,
    ))
}
