//! Reference computations for the acceptance target. Nothing here calls the
//! crate's own numerics: these are the yardsticks the crate is measured by.

#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};

/// erf from its Maclaurin series for |x| < 3 and from the Laplace
/// continued fraction of erfc beyond. Both branches reach ~1e-15.
pub fn erf(x: f64) -> f64 {
    if x.abs() < 3.0 {
        let mut term = x;
        let mut sum = x;
        for n in 1..400 {
            let n = n as f64;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-19 {
                break;
            }
        }
        sum * 2.0 / PI.sqrt()
    } else {
        let s = x.signum();
        let z = x.abs();
        // erfc(z) = exp(-z²)/√π · 1/(z + 1/2/(z + 1/(z + 3/2/(z + ...))))
        let mut f = z;
        for k in (1..200).rev() {
            f = z + (k as f64 / 2.0) / f;
        }
        s * (1.0 - (-z * z).exp() / PI.sqrt() / f)
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Φ⁻¹ by bisection on [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fourth-order central difference along every coordinate.
pub fn gradient_fd(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = p[i];
            let mut at = |d: f64| {
                p[i] = x0 + d;
                f(&p)
            };
            let v = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            p[i] = x0;
            v
        })
        .collect()
}

/// `|a - b|` relative to the larger magnitude, never dividing by less than
/// `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// `f(λa₁ + (1-λ)a₂) - λf(a₁) - (1-λ)f(a₂)`; positive means a convexity
/// violation.
pub fn convexity_gap(f: impl Fn(&[f64]) -> f64, a1: &[f64], a2: &[f64], lambda: f64) -> f64 {
    let mid: Vec<f64> = a1
        .iter()
        .zip(a2)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect();
    f(&mid) - lambda * f(a1) - (1.0 - lambda) * f(a2)
}

/// Exhaustive search on a `points`-per-axis grid over a 1-d or 2-d box.
pub fn grid_min(
    f: impl Fn(&[f64]) -> f64,
    low: &[f64],
    high: &[f64],
    points: usize,
) -> (Vec<f64>, f64) {
    let axis = |j: usize, i: usize| low[j] + (high[j] - low[j]) * i as f64 / (points - 1) as f64;
    let mut best = (Vec::new(), f64::INFINITY);
    match low.len() {
        1 => {
            for i in 0..points {
                let a = [axis(0, i)];
                let v = f(&a);
                if v < best.1 {
                    best = (a.to_vec(), v);
                }
            }
        }
        2 => {
            for i in 0..points {
                for k in 0..points {
                    let a = [axis(0, i), axis(1, k)];
                    let v = f(&a);
                    if v < best.1 {
                        best = (a.to_vec(), v);
                    }
                }
            }
        }
        d => panic!("grid search supports 1 or 2 dimensions, got {d}"),
    }
    best
}

/// Mean of the largest `alpha` fraction of the samples (reorders them).
pub fn upper_tail_mean(samples: &mut [f64], alpha: f64) -> f64 {
    let n = samples.len();
    let k = ((n as f64) * alpha).round() as usize;
    let cut = n - k;
    samples.select_nth_unstable_by(cut, |a, b| a.total_cmp(b));
    samples[cut..].iter().sum::<f64>() / k as f64
}

/// Squared 2-Wasserstein distance between two empirical measures of equal
/// size via the monotone (quantile) coupling. Sorts both inputs.
pub fn w2_sq_empirical(x: &mut [f64], y: &mut [f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.sort_unstable_by(|a, b| a.total_cmp(b));
    y.sort_unstable_by(|a, b| a.total_cmp(b));
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64
}

/// Population mean and std.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Mean of the last `frac` of `xs`, rounding the window size up.
pub fn tail_window_mean(xs: &[f64], frac: f64) -> f64 {
    let k = ((xs.len() as f64 * frac).ceil() as usize).max(1);
    let tail = &xs[xs.len() - k..];
    tail.iter().sum::<f64>() / tail.len() as f64
}
