//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use distmap::special::{digamma, norm_cdf, norm_ppf};

/// Trigamma by recurrence to `x ≥ 20`, then the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// Beta maximum-likelihood estimate by Newton iteration on the score
/// equations `ψ(a) − ψ(a+b) = mean ln q`, `ψ(b) − ψ(a+b) = mean ln(1−q)`.
pub fn beta_mle(q: &[f64]) -> (f64, f64) {
    let n = q.len() as f64;
    let l1 = q.iter().map(|v| v.ln()).sum::<f64>() / n;
    let l2 = q.iter().map(|v| (-v).ln_1p()).sum::<f64>() / n;
    let m = q.iter().sum::<f64>() / n;
    let v = q.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let k = (m * (1.0 - m) / v - 1.0).max(0.1);
    let (mut a, mut b) = (m * k, (1.0 - m) * k);
    for _ in 0..200 {
        let s = digamma(a + b);
        let g1 = digamma(a) - s - l1;
        let g2 = digamma(b) - s - l2;
        let t = trigamma(a + b);
        let (h11, h22, h12) = (trigamma(a) - t, trigamma(b) - t, -t);
        let det = h11 * h22 - h12 * h12;
        let da = (h22 * g1 - h12 * g2) / det;
        let db = (h11 * g2 - h12 * g1) / det;
        let (na, nb) = ((a - da).max(a / 4.0), (b - db).max(b / 4.0));
        let done = (na - a).abs() < 1e-13 * a && (nb - b).abs() < 1e-13 * b;
        a = na;
        b = nb;
        if done {
            break;
        }
    }
    (a, b)
}

/// Exact distortion map of a Gaussian approximation with mean offset
/// `shift_sd` (in exact-posterior sds) and sd ratio `scale`:
/// `D(q) = Φ(shift_sd + scale·Φ⁻¹(q))`.
pub fn gaussian_map(shift_sd: f64, scale: f64) -> impl Fn(f64) -> f64 {
    move |q| {
        if q <= 0.0 {
            0.0
        } else if q >= 1.0 {
            1.0
        } else {
            norm_cdf(shift_sd + scale * norm_ppf(q))
        }
    }
}

/// Density of [`gaussian_map`].
pub fn gaussian_map_density(shift_sd: f64, scale: f64) -> impl Fn(f64) -> f64 {
    move |q| {
        let z = norm_ppf(q);
        let u = shift_sd + scale * z;
        scale * (-0.5 * u * u + 0.5 * z * z).exp()
    }
}

/// PIT value `G(X)` for `X` exact when `(X − μ_F)/σ_F = z`.
pub fn gaussian_pit(z: f64, shift_sd: f64, scale: f64) -> f64 {
    norm_cdf((z - shift_sd) / scale)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
