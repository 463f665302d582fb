//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints one PASS/FAIL line; the process exits non-zero if any fails.
//!
//! Criteria 6 and 7 train on the full default dataset and take a few
//! minutes on a single core.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{log_uniform, max_rel_err, richardson_diff, rng, uniform, FLOOR, REL_TOL};
use hardening_core::benchmark::{
    duplicate_ambiguities, mean_collapse_fraction, run_benchmark, train_instance, BenchmarkReport, TrainConfig,
};
use hardening_core::cli::{self, BenchmarkOptions, REPORT_FILE, TEST_FILE, TRAIN_FILE};
use hardening_core::curve_metric::{curve_distance, QuadratureSpec};
use hardening_core::dataset::{
    generate_split, nearest_neighbor_cv, sample_space_filling, sample_uniform, Dataset, ParameterBox, SplitConfig,
};
use hardening_core::models::{
    loss_forward, loss_mdn_nll, loss_mse, MixtureOutput, MlpModel, MoeModel, Standardizer, MOE_PARAM_COUNT,
    MLP_PARAM_COUNT,
};
use hardening_core::nn_core::count_params;
use hardening_core::{grad_params, hardening_stress, permute, InverseModel, InverseModelKind, MaterialParams, StrainGrid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn positive_params(r: &mut rand_chacha::ChaCha8Rng) -> MaterialParams {
    MaterialParams::new(
        log_uniform(r, 1e-2, 1e3),
        log_uniform(r, 1e-2, 1e3),
        log_uniform(r, 1e-3, 5e2),
        log_uniform(r, 1e-3, 5e2),
    )
}

fn box_params(r: &mut rand_chacha::ChaCha8Rng) -> MaterialParams {
    MaterialParams::new(
        log_uniform(r, 10.0, 1000.0),
        log_uniform(r, 10.0, 1000.0),
        log_uniform(r, 5.0, 500.0),
        log_uniform(r, 5.0, 500.0),
    )
}

fn criterion_1() -> Outcome {
    let grid = StrainGrid::default();
    let mlp = MlpModel::init(grid, Standardizer::identity(20), Standardizer::identity(4), 0).unwrap();
    let moe = MoeModel::init(grid, Standardizer::identity(20), Standardizer::identity(4), 0).unwrap();
    let bad = InverseModel::Bad(mlp.clone()).num_params();
    let good = InverseModel::Good(mlp.clone()).num_params();
    let ugly = InverseModel::Ugly(moe).num_params();
    let pass = bad == 754
        && good == 754
        && ugly == 1988
        && count_params(&mlp.net) == MLP_PARAM_COUNT
        && MOE_PARAM_COUNT == 1988;
    outcome(pass, format!("bad={bad} good={good} ugly={ugly}"))
}

fn criterion_2() -> Outcome {
    let grid = StrainGrid::default();
    let mut r = rng(2);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let p = positive_params(&mut r);
        let eps = uniform(&mut r, grid.eps_start(), grid.eps_end());
        let a = hardening_stress(eps, &p);
        let b = hardening_stress(eps, &permute(p));
        worst = worst.max((a - b).abs() / a.abs().max(1.0));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("worst scaled difference {worst:e}, {elapsed:?}"),
    )
}

fn criterion_3() -> Outcome {
    const CASES: usize = 1000;
    const STEP: f64 = 1e-4;
    let grid = StrainGrid::default();
    let start = Instant::now();
    let mut r = rng(3);

    let mut worst_params = 0.0f64;
    for _ in 0..CASES {
        let p = positive_params(&mut r);
        let eps = uniform(&mut r, 1e-3, 0.1);
        let fd = richardson_diff(|x| hardening_stress(eps, &MaterialParams::new(x[0], x[1], x[2], x[3])), &p.to_array(), STEP);
        worst_params = worst_params.max(max_rel_err(&fd, &grad_params(eps, &p), FLOOR));
    }

    let mut worst_mse = 0.0f64;
    for _ in 0..CASES {
        let pred: Vec<f64> = (0..4).map(|_| uniform(&mut r, -3.0, 3.0)).collect();
        let target: [f64; 4] = std::array::from_fn(|_| uniform(&mut r, -3.0, 3.0));
        let f = |x: &[f64]| loss_mse(&[x[0], x[1], x[2], x[3]], &target).0;
        let fd = richardson_diff(f, &pred, STEP);
        let an = loss_mse(&[pred[0], pred[1], pred[2], pred[3]], &target).1;
        worst_mse = worst_mse.max(max_rel_err(&fd, &an, FLOOR));
    }

    let mut worst_forward = 0.0f64;
    for _ in 0..CASES {
        let pred = box_params(&mut r).to_array();
        let target = box_params(&mut r);
        let f = |x: &[f64]| loss_forward(&[x[0], x[1], x[2], x[3]], &target, &grid).0;
        let fd = richardson_diff(f, &pred, STEP);
        let an = loss_forward(&pred, &target, &grid).1;
        worst_forward = worst_forward.max(max_rel_err(&fd, &an, FLOOR));
    }

    let mut worst_nll = 0.0f64;
    let unpack = |x: &[f64]| {
        MixtureOutput::from_raw(
            [x[0], x[1]],
            [std::array::from_fn(|j| x[2 + j]), std::array::from_fn(|j| x[6 + j])],
            [std::array::from_fn(|j| x[10 + j]), std::array::from_fn(|j| x[14 + j])],
        )
    };
    for _ in 0..CASES {
        let mut x = Vec::with_capacity(18);
        x.extend((0..2).map(|_| uniform(&mut r, -3.0, 3.0)));
        x.extend((0..8).map(|_| uniform(&mut r, -2.0, 2.0)));
        x.extend((0..8).map(|_| uniform(&mut r, -2.0, 2.0)));
        let target: [f64; 4] = std::array::from_fn(|_| uniform(&mut r, -2.0, 2.0));
        let fd = richardson_diff(|v| loss_mdn_nll(&unpack(v), &target).0, &x, STEP);
        let g = loss_mdn_nll(&unpack(&x), &target).1;
        let mut an = g.d_logits.to_vec();
        an.extend(g.d_means.iter().flatten());
        an.extend(g.d_log_sigmas.iter().flatten());
        worst_nll = worst_nll.max(max_rel_err(&fd, &an, FLOOR));
    }

    let elapsed = start.elapsed();
    let worst = worst_params.max(worst_mse).max(worst_forward).max(worst_nll);
    outcome(
        worst < REL_TOL && elapsed < Duration::from_secs(10),
        format!(
            "max rel err: grad_params {worst_params:.1e}, mse {worst_mse:.1e}, forward {worst_forward:.1e}, \
             nll {worst_nll:.1e}; {elapsed:?}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let grid = StrainGrid::default();
    let mut r = rng(4);
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p = positive_params(&mut r);
        let (loss, _) = loss_forward(&permute(p).to_array(), &p, &grid);
        let scale: f64 = grid.points().map(|e| hardening_stress(e, &p).powi(2)).sum();
        worst = worst.max(loss / scale.max(f64::MIN_POSITIVE));
        if loss > 1e-18 * scale {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("violations {violations}/10000, worst ratio {worst:e}"))
}

fn criterion_5() -> Outcome {
    let grid = StrainGrid::new(0.0, 1.0, 20).unwrap();
    let d = curve_distance(
        &MaterialParams::new(1.0, 0.0, 1.0, 1.0),
        &MaterialParams::new(0.0, 0.0, 1.0, 1.0),
        &grid,
        &QuadratureSpec::default(),
    );
    let exact = (-1.0f64).exp();
    outcome((d - exact).abs() < 1e-6, format!("d = {d:.10}, e^-1 = {exact:.10}"))
}

struct DefaultData {
    train: Dataset,
    test: Dataset,
    gen_time: Duration,
}

fn default_data() -> DefaultData {
    let start = Instant::now();
    let (train, test) = generate_split(&SplitConfig::default()).expect("default split");
    DefaultData {
        train,
        test,
        gen_time: start.elapsed(),
    }
}

fn criterion_6(data: &DefaultData) -> (Outcome, Outcome) {
    let cfg = TrainConfig::default();
    let jobs = cli::default_jobs();
    let start = Instant::now();
    let report = run_benchmark(&cfg, &data.train, &data.test, jobs).expect("benchmark").report;
    let elapsed = start.elapsed() + data.gen_time;

    let agg = |k| report.kind(k).and_then(|r| r.aggregates).expect("aggregates");
    let (bad, good, ugly) = (
        agg(InverseModelKind::Bad),
        agg(InverseModelKind::Good),
        agg(InverseModelKind::Ugly),
    );
    let pass = good.mean_delta < bad.mean_delta / 5.0
        && good.min_delta < bad.min_delta
        && ugly.mean_delta < bad.mean_delta
        && elapsed < Duration::from_secs(30 * 60);
    let table = outcome(
        pass,
        format!(
            "<delta> bad {:.4} good {:.4} ugly {:.4}; min delta bad {:.4} good {:.4}; \
             ok {}/{}/{}; {jobs} job(s), {elapsed:.0?}",
            bad.mean_delta, good.mean_delta, ugly.mean_delta, bad.min_delta, good.min_delta, bad.n_ok, good.n_ok, ugly.n_ok
        ),
    );

    let mut counts = Vec::new();
    let mut progress_ok = true;
    for k in InverseModelKind::ALL {
        let r = report.kind(k).expect("kind");
        let improved = r.instances.iter().filter(|i| i.final_loss < i.first_epoch_loss).count();
        progress_ok &= improved >= 18 && r.instances.len() + r.failures.len() == 20;
        counts.push(format!("{k} {improved}/20"));
    }
    (table, outcome(progress_ok, format!("final < first epoch loss: {}", counts.join(", "))))
}

fn criterion_7(data: &DefaultData) -> Outcome {
    let dup = duplicate_ambiguities(&data.train).unwrap();
    let trained = train_instance(InverseModelKind::Bad, &dup, &TrainConfig::default(), 0).unwrap();
    let mut ambiguous = Dataset {
        params: Vec::new(),
        curves: Vec::new(),
        ..data.test.clone()
    };
    for (p, c) in data.test.params.iter().zip(&data.test.curves) {
        if *p != permute(*p) {
            ambiguous.params.push(*p);
            ambiguous.curves.push(c.clone());
        }
    }
    let frac = mean_collapse_fraction(&trained.model, &ambiguous, 0.10).unwrap();
    outcome(
        frac >= 0.8,
        format!("{:.1}% of {} ambiguous test curves within 10% of the gamma midpoint", 100.0 * frac, ambiguous.len()),
    )
}

fn criterion_8() -> Outcome {
    let bx = ParameterBox::default();
    let grid = StrainGrid::default();
    let quad = QuadratureSpec::default();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10 {
        let sel = sample_space_filling(&bx, 200, 4000, &grid, &quad, seed).unwrap();
        let uni = sample_uniform(&bx, 200, seed);
        let (a, b) = (nearest_neighbor_cv(&sel, &grid, &quad), nearest_neighbor_cv(&uni, &grid, &quad));
        if a < b {
            wins += 1;
        }
        pairs.push(format!("{a:.2}/{b:.2}"));
    }
    outcome(wins >= 9, format!("maximin more even in {wins}/10 (cv maximin/uniform: {})", pairs.join(" ")))
}

const SMALL_CONFIG: &str = "\
dataset.n_train = 40
dataset.pool_train = 200
dataset.n_test = 10
dataset.pool_test = 60
dataset.seed = 9
quadrature.resolution = 400
train.epochs = 15
train.batch_size = 8
benchmark.seeds = 3
";

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let data = dir.path().join("data");
    cli::cmd_gen_data(Some(&config), &data, false).unwrap();

    let run = |name: &str| -> String {
        let out = dir.path().join(name);
        cli::cmd_benchmark(&BenchmarkOptions {
            config: Some(config.clone()),
            train: data.join(TRAIN_FILE),
            test: data.join(TEST_FILE),
            out_dir: out.clone(),
            kinds: None,
            seeds: None,
            jobs: Some(3),
            force: false,
            render_only: false,
            models_dir: None,
        })
        .unwrap();
        let path = out.join(REPORT_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        BenchmarkReport::from_json(&text, Path::new(&path))
            .unwrap()
            .to_canonical_json()
            .unwrap()
    };
    let (a, b) = (run("run-a"), run("run-b"));
    outcome(a == b, format!("canonical report {} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    // Optional criterion numbers on the command line restrict the run.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: &str| only.is_empty() || only.iter().any(|a| a == n);
    let mut failed = 0;
    let mut report = |label: &str, o: Outcome| {
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {label}: {status} ({})", o.detail);
    };

    if wanted("1") {
        report("1 architecture counts", criterion_1());
    }
    if wanted("2") {
        report("2 forward symmetry", criterion_2());
    }
    if wanted("3") {
        report("3 gradient suites", criterion_3());
    }
    if wanted("4") {
        report("4 ambiguity blindness", criterion_4());
    }
    if wanted("5") {
        report("5 quadrature", criterion_5());
    }
    if wanted("6") || wanted("7") {
        let data = default_data();
        if wanted("6") {
            let (table, progress) = criterion_6(&data);
            report("6 benchmark ordering", table);
            report("6 training progress", progress);
        }
        if wanted("7") {
            report("7 mean collapse", criterion_7(&data));
        }
    }
    if wanted("8") {
        report("8 sampling evenness", criterion_8());
    }
    if wanted("9") {
        report("9 determinism", criterion_9());
    }

    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
