//! Independent reference computations used by tests: quadrature, a generic
//! numeric likelihood maximizer, brute-force KS, the raw Kolmogorov series,
//! the product form of the normalized NLLH, finite differences and a
//! straight-line network evaluator.
//!
//! Nothing here calls the closed-form or optimized code paths it is used to
//! check. Compiled only for tests or with the `oracles` feature.

#![allow(clippy::needless_range_loop)]

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::distnet::{Activation, Mode, Network};
use crate::distributions::{RtdFamily, RtdParams};

/// Composite Simpson rule with `n` (rounded up to even) panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    sum * h / 3.0
}

/// Densities written out directly from their textbook formulas.
pub fn reference_log_pdf(family: RtdFamily, theta: &[f64], x: f64) -> f64 {
    match family {
        RtdFamily::Normal => {
            let (mu, s) = (theta[0], theta[1]);
            (1.0 / (2.0 * PI * s * s).sqrt()).ln() - (x - mu).powi(2) / (2.0 * s * s)
        }
        RtdFamily::LogNormal => {
            let (m, s) = (theta[0], theta[1]);
            (1.0 / (s * x * (2.0 * PI).sqrt())).ln() - 0.5 * ((x.ln() - m.ln()) / s).powi(2)
        }
        RtdFamily::Exponential => (1.0 / theta[0]).ln() - x / theta[0],
        RtdFamily::InverseNormal => {
            let (mu, l) = (theta[0], theta[1]);
            0.5 * (l / (2.0 * PI * x.powi(3))).ln() - l * (x - mu).powi(2) / (2.0 * x * mu * mu)
        }
    }
}

fn reference_nllh(family: RtdFamily, theta: &[f64], times: &[f64]) -> f64 {
    -times.iter().map(|&t| reference_log_pdf(family, theta, t)).sum::<f64>()
}

// Optimization coordinates: log of every positive parameter, the normal
// mean as is.
fn to_theta(family: RtdFamily, u: &[f64]) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == 0 && family == RtdFamily::Normal {
                v
            } else {
                v.exp()
            }
        })
        .collect()
}

fn objective(family: RtdFamily, times: &[f64], u: &[f64]) -> f64 {
    let v = reference_nllh(family, &to_theta(family, u), times);
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64) -> Vec<f64> {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    for _ in 0..20_000 {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();
        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= 1e-14 * (1.0 + values[0].abs()) && size < 1e-11 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| b + 0.5 * (a - b))
                        .collect();
                    values[i] = f(&p);
                    simplex[i] = p;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    simplex[best].clone()
}

fn solve(h: &[Vec<f64>], g: &[f64]) -> Option<Vec<f64>> {
    match g.len() {
        1 => (h[0][0] > 0.0).then(|| vec![g[0] / h[0][0]]),
        2 => {
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            (det > 0.0 && h[0][0] > 0.0).then(|| {
                vec![
                    (h[1][1] * g[0] - h[0][1] * g[1]) / det,
                    (h[0][0] * g[1] - h[1][0] * g[0]) / det,
                ]
            })
        }
        _ => None,
    }
}

/// Maximum-likelihood parameters found numerically: Nelder-Mead from a
/// quantile-based start, then Newton steps on finite-difference derivatives.
pub fn numeric_mle(family: RtdFamily, times: &[f64]) -> Vec<f64> {
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let med = sorted[sorted.len() / 2];
    let spread = (sorted[sorted.len() - 1] - sorted[0]).max(1e-3 * med);
    let start = match family {
        RtdFamily::Normal => vec![med, spread.ln()],
        RtdFamily::LogNormal => vec![med.ln(), 0.0],
        RtdFamily::Exponential => vec![med.ln()],
        RtdFamily::InverseNormal => vec![med.ln(), med.ln()],
    };
    let f = |u: &[f64]| objective(family, times, u);
    let mut u = nelder_mead(&f, &start, 0.5);
    let n = u.len();
    for _ in 0..50 {
        let g = central_gradient(&f, &u, 1e-6);
        let mut hess = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += 1e-4;
            dn[i] -= 1e-4;
            let gu = central_gradient(&f, &up, 1e-6);
            let gd = central_gradient(&f, &dn, 1e-6);
            for j in 0..n {
                hess[i][j] = (gu[j] - gd[j]) / 2e-4;
            }
        }
        let Some(step) = solve(&hess, &g) else { break };
        let candidate: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a - s).collect();
        if f(&candidate) > f(&u) + 1e-12 * (1.0 + f(&u).abs()) {
            break;
        }
        let size = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        u = candidate;
        if size < 1e-13 {
            break;
        }
    }
    to_theta(family, &u)
}

/// Central finite-difference gradient.
pub fn central_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// KS distance by enumerating both one-sided gaps at every sample point.
pub fn ks_brute_force(params: &RtdParams, times: &[f64]) -> f64 {
    let k = times.len() as f64;
    let mut d = 0.0f64;
    for &x in times {
        let below = times.iter().filter(|&&t| t < x).count();
        let at_or_below = times.iter().filter(|&&t| t <= x).count();
        let f = params.cdf(x);
        d = d.max((f - below as f64 / k).abs());
        d = d.max((at_or_below as f64 / k - f).abs());
    }
    d
}

/// `2 sum_{j=1}^{terms} (-1)^(j-1) exp(-2 j^2 lambda^2)`, no truncation.
pub fn kolmogorov_series(lambda: f64, terms: usize) -> f64 {
    2.0 * (1..=terms)
        .map(|j| {
            let jf = j as f64;
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * jf * jf * lambda * lambda).exp()
        })
        .sum::<f64>()
}

/// Normalized NLLH via the product form: per instance,
/// `-(1/k) ln prod_i (p(t_i) * max t)`, averaged over instances.
pub fn normalized_nllh_product(fits: &[(RtdParams, &[f64])]) -> f64 {
    let total: f64 = fits
        .iter()
        .map(|(p, times)| {
            let max_t = times.iter().copied().fold(0.0, f64::max);
            let product: f64 = times.iter().map(|&t| p.pdf(t) * max_t).product();
            -product.ln() / times.len() as f64
        })
        .sum();
    total / fits.len() as f64
}

/// Straight-line evaluation of `net` on a row-major batch, one neuron at a
/// time.
pub fn reference_forward(net: &Network, inputs: &[f64], batch: usize, mode: Mode) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = inputs.chunks(inputs.len() / batch).map(|r| r.to_vec()).collect();
    for layer in &net.hidden {
        let d = &layer.dense;
        let mut pre: Vec<Vec<f64>> = rows
            .iter()
            .map(|x| {
                (0..d.n_out)
                    .map(|j| {
                        let mut s = d.bias.as_ref().map_or(0.0, |b| b[j]);
                        for i in 0..d.n_in {
                            s += x[i] * d.weights[i * d.n_out + j];
                        }
                        s
                    })
                    .collect()
            })
            .collect();
        if let Some(bn) = &layer.norm {
            for j in 0..d.n_out {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let m = pre.iter().map(|r| r[j]).sum::<f64>() / batch as f64;
                        let v = pre.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / batch as f64;
                        (m, v)
                    }
                    Mode::Infer => (bn.running_mean[j], bn.running_var[j]),
                };
                for r in &mut pre {
                    r[j] = bn.gamma[j] * (r[j] - mean) / (var + 1e-5).sqrt() + bn.beta[j];
                }
            }
        }
        rows = pre
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|v| match net.activation {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                    })
                    .collect()
            })
            .collect();
    }
    let d = &net.output;
    let mut out = Vec::new();
    for x in &rows {
        for j in 0..d.n_out {
            let mut s = d.bias.as_ref().map_or(0.0, |b| b[j]);
            for i in 0..d.n_in {
                s += x[i] * d.weights[i * d.n_out + j];
            }
            out.push(s.exp());
        }
    }
    out
}
