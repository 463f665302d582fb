//! Multi-seed training and curve-space evaluation of the inverse models.
//!
//! Every (kind, seed) pair is an independent, single-threaded training run.
//! Runs are spread over a worker pool and reduced serially in a fixed order,
//! so reports do not depend on the number of workers.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve_metric::{curve_distance, QuadratureSpec};
use crate::dataset::{build_dataset, Dataset};
use crate::error::{Error, Result};
use crate::material_model::{permute, MaterialParams};
use crate::models::{InverseMap, InverseModel, InverseModelKind, MlpModel, MoeModel, Standardizer};
use crate::nn_core::{adam_step, AdamConfig, AdamState};

const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seeds: Vec<u64>,
    pub kinds: Vec<InverseModelKind>,
    pub quad: QuadratureSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 32,
            adam: AdamConfig::default(),
            seeds: (0..20).collect(),
            kinds: InverseModelKind::ALL.to_vec(),
            quad: QuadratureSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("at least one model kind is required".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedInstance {
    pub model: InverseModel,
    /// Mean per-sample training loss of each epoch.
    pub loss_history: Vec<f64>,
    pub updates: u64,
}

/// Training for one kind and seed.
///
/// Each epoch shuffles the training set with a seeded generator, walks it in
/// mini-batches and applies one Adam step per batch to the batch-mean
/// gradient. A non-finite loss or parameter aborts the run.
pub fn train_instance(kind: InverseModelKind, train: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TrainedInstance> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let grid = train.grid;
    if let Some(c) = train.curves.iter().find(|c| c.grid != grid) {
        return Err(Error::GridMismatch {
            expected: grid.to_string(),
            actual: c.grid.to_string(),
        });
    }
    let input_scaler = Standardizer::fit(train.curves.iter().map(|c| c.values.as_slice()))?;
    let targets: Vec<[f64; 4]> = train.params.iter().map(|p| p.to_array()).collect();
    let target_scaler = Standardizer::fit(targets.iter().map(|t| t.as_slice()))?;
    let inputs: Vec<Vec<f64>> = train.curves.iter().map(|c| input_scaler.apply(&c.values)).collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut updates = 0u64;

    let model = match kind {
        InverseModelKind::Bad | InverseModelKind::Good => {
            let mut m = MlpModel::init(grid, input_scaler, target_scaler, seed)?;
            let mut state = AdamState::new(&m.net, cfg.adam);
            let mut grads = m.net.zero_grads();
            for epoch in 0..cfg.epochs {
                order.shuffle(&mut rng);
                let mut total = 0.0;
                for batch in order.chunks(cfg.batch_size) {
                    grads.fill_zero();
                    for &i in batch {
                        total += match kind {
                            InverseModelKind::Bad => m.accumulate_mse(&inputs[i], &train.params[i], &mut grads)?,
                            _ => m.accumulate_forward(&inputs[i], &train.curves[i].values, &mut grads)?,
                        };
                    }
                    grads.scale(1.0 / batch.len() as f64);
                    adam_step(&mut m.net, &grads, &mut state)?;
                    updates += 1;
                }
                let mean = total / train.len() as f64;
                check_epoch(epoch, mean, m.net.all_finite())?;
                history.push(mean);
            }
            if kind == InverseModelKind::Bad {
                InverseModel::Bad(m)
            } else {
                InverseModel::Good(m)
            }
        }
        InverseModelKind::Ugly => {
            let mut m = MoeModel::init(grid, input_scaler, target_scaler, seed)?;
            let std_targets: Vec<[f64; 4]> = targets
                .iter()
                .map(|t| {
                    let z = m.target_scaler.apply(t);
                    [z[0], z[1], z[2], z[3]]
                })
                .collect();
            let mut states = [
                AdamState::new(&m.net.expert1, cfg.adam),
                AdamState::new(&m.net.expert2, cfg.adam),
                AdamState::new(&m.net.gate, cfg.adam),
            ];
            let mut grads = m.net.zero_grads();
            for epoch in 0..cfg.epochs {
                order.shuffle(&mut rng);
                let mut total = 0.0;
                for batch in order.chunks(cfg.batch_size) {
                    grads.expert1.fill_zero();
                    grads.expert2.fill_zero();
                    grads.gate.fill_zero();
                    for &i in batch {
                        total += m.net.accumulate_nll(&inputs[i], &std_targets[i], &mut grads)?;
                    }
                    let s = 1.0 / batch.len() as f64;
                    grads.expert1.scale(s);
                    grads.expert2.scale(s);
                    grads.gate.scale(s);
                    let [s1, s2, sg] = &mut states;
                    adam_step(&mut m.net.expert1, &grads.expert1, s1)?;
                    adam_step(&mut m.net.expert2, &grads.expert2, s2)?;
                    adam_step(&mut m.net.gate, &grads.gate, sg)?;
                    updates += 1;
                }
                let mean = total / train.len() as f64;
                let finite = m.net.expert1.all_finite() && m.net.expert2.all_finite() && m.net.gate.all_finite();
                check_epoch(epoch, mean, finite)?;
                history.push(mean);
            }
            InverseModel::Ugly(m)
        }
    };

    Ok(TrainedInstance {
        model,
        loss_history: history,
        updates,
    })
}

fn check_epoch(epoch: usize, mean_loss: f64, params_finite: bool) -> Result<()> {
    if !mean_loss.is_finite() {
        return Err(Error::Numerical(format!("epoch {epoch}: mean loss is {mean_loss}")));
    }
    if !params_finite {
        return Err(Error::Numerical(format!("epoch {epoch}: non-finite network parameters")));
    }
    Ok(())
}

/// Per-point curve distances between each test curve's true parameters and
/// the model's prediction for that curve.
pub fn prediction_distances(model: &impl InverseMap, test: &Dataset, quad: &QuadratureSpec) -> Result<Vec<f64>> {
    test.params
        .iter()
        .zip(&test.curves)
        .map(|(p, c)| {
            let q = model.predict(c)?;
            Ok(curve_distance(p, &q, &test.grid, quad))
        })
        .collect()
}

/// Mean curve distance over the test set.
pub fn mean_pred_error(model: &impl InverseMap, test: &Dataset, quad: &QuadratureSpec) -> Result<f64> {
    let d = prediction_distances(model, test, quad)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Largest curve distance over the test set.
pub fn max_pred_error(model: &impl InverseMap, test: &Dataset, quad: &QuadratureSpec) -> Result<f64> {
    let d = prediction_distances(model, test, quad)?;
    Ok(d.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub seed: u64,
    pub first_epoch_loss: f64,
    pub final_loss: f64,
    /// Mean prediction error over the test set.
    pub delta: f64,
    /// Maximum prediction error over the test set.
    pub delta_max: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub seed: u64,
    pub reason: String,
}

/// The six summary statistics per model kind. Standard deviations are
/// population standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_delta: f64,
    pub mean_delta_max: f64,
    pub std_delta: f64,
    pub std_delta_max: f64,
    pub min_delta: f64,
    pub min_delta_max: f64,
}

fn mean_std_min(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    (mean, var.sqrt(), min)
}

impl Aggregates {
    pub fn compute(instances: &[InstanceResult], n_failed: usize) -> Option<Self> {
        if instances.is_empty() {
            return None;
        }
        let deltas: Vec<f64> = instances.iter().map(|r| r.delta).collect();
        let maxes: Vec<f64> = instances.iter().map(|r| r.delta_max).collect();
        let (mean_delta, std_delta, min_delta) = mean_std_min(&deltas);
        let (mean_delta_max, std_delta_max, min_delta_max) = mean_std_min(&maxes);
        Some(Self {
            n_ok: instances.len(),
            n_failed,
            mean_delta,
            mean_delta_max,
            std_delta,
            std_delta_max,
            min_delta,
            min_delta_max,
        })
    }

    fn columns(&self) -> [f64; 6] {
        [
            self.mean_delta,
            self.mean_delta_max,
            self.std_delta,
            self.std_delta_max,
            self.min_delta,
            self.min_delta_max,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: InverseModelKind,
    pub instances: Vec<InstanceResult>,
    pub failures: Vec<InstanceFailure>,
    /// `None` when every instance failed.
    pub aggregates: Option<Aggregates>,
}

/// SHA-256 digests of the files a report was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigests {
    pub config_sha256: String,
    pub train_sha256: String,
    pub test_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub tool_version: String,
    pub config: TrainConfig,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<InputDigests>,
    pub models: Vec<KindReport>,
    /// Unix seconds; the only field besides per-instance wall times that
    /// varies between identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

pub const CSV_HEADER: [&str; 7] = [
    "model",
    "mean_delta",
    "mean_Delta",
    "std_delta",
    "std_Delta",
    "min_delta",
    "min_Delta",
];

impl BenchmarkReport {
    pub fn kind(&self, kind: InverseModelKind) -> Option<&KindReport> {
        self.models.iter().find(|m| m.kind == kind)
    }

    /// Recomputes every aggregate from the instance lists and requires
    /// bit-for-bit agreement with the stored values.
    pub fn verify(&self) -> Result<()> {
        for m in &self.models {
            for r in &m.instances {
                if !(r.delta >= 0.0 && r.delta <= r.delta_max) {
                    return Err(Error::Validation(format!(
                        "{} seed {}: need 0 <= delta <= Delta, got {} / {}",
                        m.kind, r.seed, r.delta, r.delta_max
                    )));
                }
            }
            let recomputed = Aggregates::compute(&m.instances, m.failures.len());
            let same = match (&recomputed, &m.aggregates) {
                (Some(a), Some(b)) => {
                    a.n_ok == b.n_ok
                        && a.n_failed == b.n_failed
                        && a.columns().iter().zip(b.columns()).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                (None, None) => true,
                _ => false,
            };
            if !same {
                return Err(Error::Validation(format!(
                    "stored aggregates for {} do not match the instance records",
                    m.kind
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))
    }

    /// JSON with wall times and the timestamp cleared, for reproducibility checks.
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.generated_at = None;
        for m in &mut r.models {
            for i in &mut m.instances {
                i.wall_time_s = 0.0;
            }
        }
        r.to_json()
    }

    pub fn from_json(text: &str, path: &std::path::Path) -> Result<Self> {
        let r: BenchmarkReport = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        r.verify()?;
        Ok(r)
    }

    /// One row per model kind, one column per statistic.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Validation(e.to_string());
        w.write_record(CSV_HEADER).map_err(err)?;
        for m in &self.models {
            let mut row = vec![m.kind.to_string()];
            match &m.aggregates {
                Some(a) => row.extend(a.columns().iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
            w.write_record(&row).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
    }

    /// Fixed-width text rendering of the table.
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>6}\n",
            "model", "<delta>", "<Delta>", "sd[delta]", "sd[Delta]", "min delta", "min Delta", "ok/n"
        );
        for m in &self.models {
            let total = m.instances.len() + m.failures.len();
            match &m.aggregates {
                Some(a) => {
                    s.push_str(&format!("{:<6}", m.kind.as_str()));
                    for v in a.columns() {
                        s.push_str(&format!(" {v:>12.4}"));
                    }
                    s.push_str(&format!(" {:>6}\n", format!("{}/{}", a.n_ok, total)));
                }
                None => s.push_str(&format!("{:<6} (all {total} instances failed)\n", m.kind.as_str())),
            }
        }
        s
    }
}

/// A trained model kept alongside the report.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: InverseModelKind,
    pub seed: u64,
    pub model: InverseModel,
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    pub models: Vec<TrainedModel>,
}

enum Outcome {
    Ok(InstanceResult, Box<InverseModel>),
    Failed(InstanceFailure),
}

fn run_one(kind: InverseModelKind, seed: u64, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Outcome {
    let start = Instant::now();
    let fail = |reason: String| Outcome::Failed(InstanceFailure { seed, reason });
    let trained = match train_instance(kind, train, cfg, seed) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string()),
    };
    let distances = match prediction_distances(&trained.model, test, &cfg.quad) {
        Ok(d) => d,
        Err(e) => return fail(e.to_string()),
    };
    if let Some(i) = distances.iter().position(|d| !d.is_finite()) {
        return fail(format!("prediction error for test point {i} is not finite"));
    }
    let delta = distances.iter().sum::<f64>() / distances.len() as f64;
    let delta_max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Outcome::Ok(
        InstanceResult {
            seed,
            first_epoch_loss: trained.loss_history[0],
            final_loss: *trained.loss_history.last().expect("epochs >= 1"),
            delta,
            delta_max,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        Box::new(trained.model),
    )
}

/// Distinct seeds of one kind must not end in identical parameters.
fn check_seed_disjoint(models: &[TrainedModel]) -> Result<()> {
    for (i, a) in models.iter().enumerate() {
        for b in &models[i + 1..] {
            if a.kind == b.kind && a.seed != b.seed && a.model.to_flat() == b.model.to_flat() {
                return Err(Error::Numerical(format!(
                    "{} seeds {} and {} produced identical parameters",
                    a.kind, a.seed, b.seed
                )));
            }
        }
    }
    Ok(())
}

/// Trains and evaluates every (kind, seed) pair on `jobs` workers.
pub fn run_benchmark(cfg: &TrainConfig, train: &Dataset, test: &Dataset, jobs: usize) -> Result<BenchmarkRun> {
    cfg.validate()?;
    if train.grid != test.grid {
        return Err(Error::GridMismatch {
            expected: train.grid.to_string(),
            actual: test.grid.to_string(),
        });
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let tasks: Vec<(InverseModelKind, u64)> = cfg
        .kinds
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(kind, seed)| run_one(kind, seed, train, test, cfg))
            .collect()
    });

    let mut models = Vec::new();
    let mut reports: Vec<KindReport> = cfg
        .kinds
        .iter()
        .map(|&kind| KindReport {
            kind,
            instances: Vec::new(),
            failures: Vec::new(),
            aggregates: None,
        })
        .collect();
    for ((kind, _), outcome) in tasks.iter().zip(outcomes) {
        let slot = reports.iter_mut().find(|r| r.kind == *kind).expect("kind present");
        match outcome {
            Outcome::Ok(res, model) => {
                models.push(TrainedModel {
                    kind: *kind,
                    seed: res.seed,
                    model: *model,
                });
                slot.instances.push(res);
            }
            Outcome::Failed(f) => slot.failures.push(f),
        }
    }
    for r in &mut reports {
        r.aggregates = Aggregates::compute(&r.instances, r.failures.len());
    }
    check_seed_disjoint(&models)?;
    Ok(BenchmarkRun {
        report: BenchmarkReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            n_train: train.len(),
            n_test: test.len(),
            inputs: None,
            models: reports,
            generated_at: None,
        },
        models,
    })
}

/// Every record twice: once labelled `p`, once labelled `permute(p)`.
pub fn duplicate_ambiguities(d: &Dataset) -> Result<Dataset> {
    let params: Vec<MaterialParams> = d.params.iter().flat_map(|&p| [p, permute(p)]).collect();
    build_dataset(params, &d.grid, d.role)
}

/// Fraction of curves whose predicted gamma components both lie within
/// `rel_tol` of the midpoint `(gamma1 + gamma2) / 2` of the two labels.
pub fn mean_collapse_fraction(model: &impl InverseMap, d: &Dataset, rel_tol: f64) -> Result<f64> {
    let mut hits = 0usize;
    for (p, c) in d.params.iter().zip(&d.curves) {
        let q = model.predict(c)?;
        let mid = 0.5 * (p.gamma1 + p.gamma2);
        if (q.gamma1 - mid).abs() <= rel_tol * mid.abs() && (q.gamma2 - mid).abs() <= rel_tol * mid.abs() {
            hits += 1;
        }
    }
    Ok(hits as f64 / d.len() as f64)
}
