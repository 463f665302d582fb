#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-5;
/// Gradient components smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

/// Central differences of `f` at `x` with absolute step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|j| {
            work[j] = x[j] + h;
            let up = f(&work);
            work[j] = x[j] - h;
            let down = f(&work);
            work[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Richardson-extrapolated central differences, `(4 D(h/2) - D(h)) / 3`,
/// with the step scaled to each coordinate's magnitude. Fourth-order
/// accurate, so a larger step keeps round-off out of large losses.
pub fn richardson_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut quotient = |j: usize, h: f64| {
        work[j] = x[j] + h;
        let up = f(&work);
        work[j] = x[j] - h;
        let down = f(&work);
        work[j] = x[j];
        (up - down) / (2.0 * h)
    };
    (0..x.len())
        .map(|j| {
            let h = rel_step * x[j].abs().max(1.0);
            (4.0 * quotient(j, 0.5 * h) - quotient(j, h)) / 3.0
        })
        .collect()
}

/// Largest componentwise `|fd - an| / max(|an|, floor)`.
pub fn max_rel_err(fd: &[f64], an: &[f64], floor: f64) -> f64 {
    assert_eq!(fd.len(), an.len());
    fd.iter()
        .zip(an)
        .map(|(f, a)| (f - a).abs() / a.abs().max(floor))
        .fold(0.0, f64::max)
}
