//! Oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Composite Simpson rule with `n` (rounded up to even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Normal density written out independently of the library.
pub fn npdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// `(Z, mean, variance)` of `f` over `[a, b]` by Simpson quadrature.
pub fn moments(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> (f64, f64, f64) {
    let z = simpson(&f, a, b, n);
    let m = simpson(|t| t * f(t), a, b, n) / z;
    let v = simpson(|t| (t - m) * (t - m) * f(t), a, b, n) / z;
    (z, m, v)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Seeded generator for randomized test inputs.
pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}
