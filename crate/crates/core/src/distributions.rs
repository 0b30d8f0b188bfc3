//! The four parametric runtime-distribution families.
//!
//! | family | parameters | density |
//! |--------|------------|---------|
//! | `N`    | mean `mu`, std `sigma` | `exp(-(x-mu)^2 / 2 sigma^2) / sqrt(2 pi sigma^2)` |
//! | `LOG`  | scale `s`, shape `sigma` | `exp(-((ln x - ln s) / sigma)^2 / 2) / (sigma x sqrt(2 pi))` |
//! | `EXP`  | scale `beta` | `exp(-x / beta) / beta` |
//! | `INV`  | mean `mu`, shape `lambda` | `sqrt(lambda / 2 pi x^3) exp(-lambda (x-mu)^2 / 2 x mu^2)` |
//!
//! `LOG` is parameterized by its median `s` (not by the mean of the
//! log-times), so its maximum-likelihood fit has `s = exp(mean ln t)`.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, InverseGaussian, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::special::{log_norm_cdf, norm_cdf, norm_quantile, LN_SQRT_2PI};

/// Log-density reported where the density is zero (or underflows).
pub const LOG_DENSITY_FLOOR: f64 = -1e15;

/// Lower bound on the fitted spread of a degenerate (zero-variance) sample.
pub const MIN_SPREAD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RtdFamily {
    #[serde(rename = "N")]
    Normal,
    #[serde(rename = "LOG")]
    LogNormal,
    #[serde(rename = "EXP")]
    Exponential,
    #[serde(rename = "INV")]
    InverseNormal,
}

impl RtdFamily {
    pub const ALL: [RtdFamily; 4] = [
        RtdFamily::Normal,
        RtdFamily::LogNormal,
        RtdFamily::Exponential,
        RtdFamily::InverseNormal,
    ];

    pub fn n_params(self) -> usize {
        match self {
            RtdFamily::Exponential => 1,
            _ => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            RtdFamily::Normal => "N",
            RtdFamily::LogNormal => "LOG",
            RtdFamily::Exponential => "EXP",
            RtdFamily::InverseNormal => "INV",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            RtdFamily::Normal => &["mu", "sigma"],
            RtdFamily::LogNormal => &["s", "sigma"],
            RtdFamily::Exponential => &["beta"],
            RtdFamily::InverseNormal => &["mu", "lambda"],
        }
    }

    /// Log-density without parameter validation. `theta` must be valid.
    #[inline]
    pub(crate) fn log_pdf_unchecked(self, theta: &[f64], x: f64) -> f64 {
        let v = self.raw_log_pdf(theta, x);
        if v >= LOG_DENSITY_FLOOR {
            v
        } else {
            LOG_DENSITY_FLOOR
        }
    }

    #[inline]
    fn raw_log_pdf(self, theta: &[f64], x: f64) -> f64 {
        match self {
            RtdFamily::Normal => {
                let (mu, sigma) = (theta[0], theta[1]);
                let z = (x - mu) / sigma;
                -LN_SQRT_2PI - sigma.ln() - 0.5 * z * z
            }
            RtdFamily::LogNormal => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let (s, sigma) = (theta[0], theta[1]);
                let lx = x.ln();
                let z = (lx - s.ln()) / sigma;
                -LN_SQRT_2PI - sigma.ln() - lx - 0.5 * z * z
            }
            RtdFamily::Exponential => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let beta = theta[0];
                -beta.ln() - x / beta
            }
            RtdFamily::InverseNormal => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let (mu, lambda) = (theta[0], theta[1]);
                let d = x - mu;
                0.5 * lambda.ln() - LN_SQRT_2PI - 1.5 * x.ln() - lambda * d * d / (2.0 * x * mu * mu)
            }
        }
    }

    /// Gradient of the log-density with respect to `theta`; zero wherever the
    /// density is floored.
    #[inline]
    pub(crate) fn grad_log_pdf_unchecked(self, theta: &[f64], x: f64) -> [f64; 2] {
        let log_pdf = self.raw_log_pdf(theta, x);
        if log_pdf.is_nan() || log_pdf < LOG_DENSITY_FLOOR {
            return [0.0; 2];
        }
        match self {
            RtdFamily::Normal => {
                let (mu, sigma) = (theta[0], theta[1]);
                let d = x - mu;
                let s2 = sigma * sigma;
                [d / s2, -1.0 / sigma + d * d / (s2 * sigma)]
            }
            RtdFamily::LogNormal => {
                let (s, sigma) = (theta[0], theta[1]);
                let d = x.ln() - s.ln();
                let s2 = sigma * sigma;
                [d / (s2 * s), -1.0 / sigma + d * d / (s2 * sigma)]
            }
            RtdFamily::Exponential => {
                let beta = theta[0];
                [-1.0 / beta + x / (beta * beta), 0.0]
            }
            RtdFamily::InverseNormal => {
                let (mu, lambda) = (theta[0], theta[1]);
                let d = x - mu;
                [lambda * d / (mu * mu * mu), 0.5 / lambda - d * d / (2.0 * x * mu * mu)]
            }
        }
    }
}

impl fmt::Display for RtdFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownFamily;

impl fmt::Display for UnknownFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown distribution family (expected one of N, LOG, EXP, INV)")
    }
}

impl core::error::Error for UnknownFamily {}

impl FromStr for RtdFamily {
    type Err = UnknownFamily;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "N" | "NORMAL" => Ok(RtdFamily::Normal),
            "LOG" | "LOGNORMAL" => Ok(RtdFamily::LogNormal),
            "EXP" | "EXPONENTIAL" => Ok(RtdFamily::Exponential),
            "INV" | "INVGAUSS" | "INVERSENORMAL" => Ok(RtdFamily::InverseNormal),
            _ => Err(UnknownFamily),
        }
    }
}

/// A validated parameter vector of one family.
///
/// Serializes as `{"family":"LOG","theta":[s,sigma]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct RtdParams {
    family: RtdFamily,
    theta: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    family: RtdFamily,
    theta: Vec<f64>,
}

impl TryFrom<RawParams> for RtdParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        RtdParams::new(raw.family, &raw.theta)
    }
}

impl From<RtdParams> for RawParams {
    fn from(p: RtdParams) -> Self {
        RawParams {
            family: p.family,
            theta: p.theta().to_vec(),
        }
    }
}

fn invalid(family: RtdFamily, reason: &str) -> Error {
    Error::InvalidParams {
        family,
        reason: reason.to_string(),
    }
}

impl RtdParams {
    pub fn new(family: RtdFamily, theta: &[f64]) -> Result<Self> {
        if theta.len() != family.n_params() {
            return Err(invalid(family, "wrong number of parameters"));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(invalid(family, "parameters must be finite"));
        }
        // The normal mean is the only unconstrained parameter.
        let first_free = family == RtdFamily::Normal;
        for (i, &v) in theta.iter().enumerate() {
            if !(i == 0 && first_free) && v <= 0.0 {
                return Err(invalid(family, "scale and shape parameters must be positive"));
            }
        }
        let mut t = [0.0; 2];
        t[..theta.len()].copy_from_slice(theta);
        Ok(Self { family, theta: t })
    }

    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(RtdFamily::Normal, &[mu, sigma])
    }

    pub fn lognormal(s: f64, sigma: f64) -> Result<Self> {
        Self::new(RtdFamily::LogNormal, &[s, sigma])
    }

    pub fn exponential(beta: f64) -> Result<Self> {
        Self::new(RtdFamily::Exponential, &[beta])
    }

    pub fn inverse_normal(mu: f64, lambda: f64) -> Result<Self> {
        Self::new(RtdFamily::InverseNormal, &[mu, lambda])
    }

    pub fn family(&self) -> RtdFamily {
        self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta[..self.family.n_params()]
    }

    /// Natural log of the density at `x`, floored at [`LOG_DENSITY_FLOOR`].
    pub fn log_pdf(&self, x: f64) -> f64 {
        self.family.log_pdf_unchecked(&self.theta, x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.family.raw_log_pdf(&self.theta, x).exp()
    }

    /// Gradient of [`Self::log_pdf`] with respect to the parameters.
    pub fn grad_log_pdf(&self, x: f64) -> [f64; 2] {
        self.family.grad_log_pdf_unchecked(&self.theta, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let [a, b] = self.theta;
        let p = match self.family {
            RtdFamily::Normal => norm_cdf((x - a) / b),
            RtdFamily::LogNormal if x <= 0.0 => 0.0,
            RtdFamily::LogNormal => norm_cdf((x.ln() - a.ln()) / b),
            RtdFamily::Exponential if x <= 0.0 => 0.0,
            RtdFamily::Exponential => -(-x / a).exp_m1(),
            RtdFamily::InverseNormal if x <= 0.0 => 0.0,
            RtdFamily::InverseNormal => {
                let (mu, lambda) = (a, b);
                let r = (lambda / x).sqrt();
                let lower = norm_cdf(r * (x / mu - 1.0));
                let upper = (2.0 * lambda / mu + log_norm_cdf(-r * (x / mu + 1.0))).exp();
                lower + upper
            }
        };
        p.clamp(0.0, 1.0)
    }

    /// Inverse CDF for `q` in (0, 1).
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidProbability(q));
        }
        let [a, b] = self.theta;
        Ok(match self.family {
            RtdFamily::Normal => a + b * norm_quantile(q),
            RtdFamily::LogNormal => a * (b * norm_quantile(q)).exp(),
            RtdFamily::Exponential => -a * (-q).ln_1p(),
            RtdFamily::InverseNormal => self.bisect_quantile(q),
        })
    }

    fn bisect_quantile(&self, q: f64) -> f64 {
        let (mut lo, mut hi) = (self.theta[0], self.theta[0]);
        while self.cdf(hi) < q {
            hi *= 2.0;
        }
        while self.cdf(lo) >= q && lo > f64::MIN_POSITIVE {
            lo *= 0.5;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Parameters of `c * X` for `X ~ self`.
    pub fn rescale(&self, c: f64) -> Result<RtdParams> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(self.family, "rescale factor must be positive and finite"));
        }
        let [a, b] = self.theta;
        let theta = match self.family {
            RtdFamily::Normal => [c * a, c * b],
            RtdFamily::LogNormal => [c * a, b],
            RtdFamily::Exponential => [c * a, 0.0],
            RtdFamily::InverseNormal => [c * a, c * b],
        };
        RtdParams::new(self.family, &theta[..self.family.n_params()])
    }
}

/// Closed-form maximum-likelihood fit.
///
/// `N` and `LOG` use the biased (1/k) variance, which is the likelihood
/// maximizer. A zero-variance sample gets its spread floored at
/// [`MIN_SPREAD`] instead of failing.
pub fn mle_fit(family: RtdFamily, times: &[f64]) -> Result<RtdParams> {
    let needed = family.n_params();
    if times.len() < needed {
        return Err(Error::TooFewObservations {
            family,
            needed,
            got: times.len(),
        });
    }
    if let Some(&value) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::InvalidRuntime { value });
    }
    let k = times.len() as f64;
    let mean_std = |it: &mut dyn Iterator<Item = f64>, vals: &[f64]| {
        let mean = it.sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
        (mean, var.sqrt().max(MIN_SPREAD))
    };
    match family {
        RtdFamily::Normal => {
            let (mu, sigma) = mean_std(&mut times.iter().copied(), times);
            RtdParams::normal(mu, sigma)
        }
        RtdFamily::LogNormal => {
            let logs: Vec<f64> = times.iter().map(|t| t.ln()).collect();
            let (m, sigma) = mean_std(&mut logs.iter().copied(), &logs);
            RtdParams::lognormal(m.exp(), sigma)
        }
        RtdFamily::Exponential => RtdParams::exponential(times.iter().sum::<f64>() / k),
        RtdFamily::InverseNormal => {
            let mu = times.iter().sum::<f64>() / k;
            let inv_sum: f64 = times.iter().map(|t| 1.0 / t - 1.0 / mu).sum();
            let lambda_cap = mu * mu * mu / (MIN_SPREAD * MIN_SPREAD);
            let lambda = if inv_sum > 0.0 {
                (k / inv_sum).min(lambda_cap)
            } else {
                lambda_cap
            };
            RtdParams::inverse_normal(mu, lambda)
        }
    }
}

const MAX_REJECTIONS: usize = 10_000;

/// `n` i.i.d. positive draws, deterministic in `seed`.
///
/// Normal draws that are not positive are redrawn.
pub fn sample(params: &RtdParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    sample_with(params, n, &mut StreamRng::seed_from_u64(seed))
}

pub fn sample_with<R: Rng + ?Sized>(params: &RtdParams, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let err = |e: &dyn fmt::Display| Error::Sampling(alloc::format!("{e}"));
    let [a, b] = params.theta;
    match params.family {
        RtdFamily::Normal => {
            let d = Normal::new(a, b).map_err(|e| err(&e))?;
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let mut rejected = 0;
                loop {
                    let x = d.sample(rng);
                    if x > 0.0 {
                        out.push(x);
                        break;
                    }
                    rejected += 1;
                    if rejected >= MAX_REJECTIONS {
                        return Err(Error::Sampling(
                            "normal distribution has almost no positive mass".to_string(),
                        ));
                    }
                }
            }
            Ok(out)
        }
        RtdFamily::LogNormal => {
            let d = LogNormal::new(a.ln(), b).map_err(|e| err(&e))?;
            Ok(draw_positive(&d, n, rng))
        }
        RtdFamily::Exponential => {
            let d = Exp::new(1.0 / a).map_err(|e| err(&e))?;
            Ok(draw_positive(&d, n, rng))
        }
        RtdFamily::InverseNormal => {
            let d = InverseGaussian::new(a, b).map_err(|e| err(&e))?;
            Ok(draw_positive(&d, n, rng))
        }
    }
}

// Continuous positive families can still round to exactly 0.0.
fn draw_positive<D: Distribution<f64>, R: Rng + ?Sized>(d: &D, n: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = d.sample(rng);
        if x > 0.0 && x.is_finite() {
            out.push(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use core::f64::consts::{E, LN_2};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn log_pdf_reference_values() {
        let half_ln_2pi = -0.918_938_533_204_672_8;
        assert!(close(
            RtdParams::normal(0.0, 1.0).unwrap().log_pdf(0.0),
            half_ln_2pi,
            1e-12
        ));
        assert!(close(
            RtdParams::exponential(2.0).unwrap().log_pdf(2.0),
            -LN_2 - 1.0,
            1e-12
        ));
        assert!(close(
            RtdParams::lognormal(1.0, 1.0).unwrap().log_pdf(1.0),
            half_ln_2pi,
            1e-12
        ));
        assert!(close(
            RtdParams::inverse_normal(1.0, 1.0).unwrap().log_pdf(1.0),
            half_ln_2pi,
            1e-12
        ));
    }

    #[test]
    fn zero_density_uses_floor() {
        assert_eq!(RtdParams::lognormal(1.0, 1.0).unwrap().log_pdf(0.0), LOG_DENSITY_FLOOR);
        assert_eq!(RtdParams::exponential(1.0).unwrap().log_pdf(-1.0), LOG_DENSITY_FLOOR);
        assert_eq!(
            RtdParams::inverse_normal(1.0, 1.0).unwrap().log_pdf(-3.0),
            LOG_DENSITY_FLOOR
        );
        assert_eq!(RtdParams::normal(0.0, 1e-9).unwrap().log_pdf(1e6), LOG_DENSITY_FLOOR);
        assert_eq!(
            RtdParams::inverse_normal(1.0, 1.0).unwrap().grad_log_pdf(-3.0),
            [0.0, 0.0]
        );
    }

    #[test]
    fn cdf_reference_values() {
        assert!(close(RtdParams::exponential(1.0).unwrap().cdf(LN_2), 0.5, 1e-15));
        assert!(close(RtdParams::lognormal(1.0, 1.0).unwrap().cdf(1.0), 0.5, 1e-15));
        // Quadrature of the density on (0, 1]; see oracles::integrate.
        let inv = RtdParams::inverse_normal(1.0, 1.0).unwrap();
        let numeric = oracles::integrate(|x| inv.pdf(x), 0.0, 1.0, 20_000);
        assert!(close(numeric, 0.668_102_3, 1e-6), "{numeric}");
        assert!(close(inv.cdf(1.0), numeric, 1e-9));
    }

    #[test]
    fn inverse_normal_cdf_survives_large_shape() {
        // exp(2 lambda / mu) overflows on its own here.
        let p = RtdParams::inverse_normal(1.0, 1e4).unwrap();
        let c = p.cdf(1.01);
        assert!(c.is_finite() && c > 0.5 && c < 1.0, "{c}");
        assert!(close(p.cdf(1.0), 0.5, 0.01));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(RtdParams::normal(-1.0, 1.0).is_ok());
        assert!(RtdParams::normal(0.0, 0.0).is_err());
        assert!(RtdParams::lognormal(0.0, 1.0).is_err());
        assert!(RtdParams::exponential(-2.0).is_err());
        assert!(RtdParams::inverse_normal(1.0, f64::NAN).is_err());
        assert!(RtdParams::new(RtdFamily::Exponential, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mle_reference_fits() {
        let exp = mle_fit(RtdFamily::Exponential, &[1.0, 2.0, 3.0]).unwrap();
        assert!(close(exp.theta()[0], 2.0, 1e-15));

        let log = mle_fit(RtdFamily::LogNormal, &[1.0, E, E * E]).unwrap();
        assert!(close(log.theta()[0], E, 1e-12));
        assert!(close(log.theta()[1], (2.0f64 / 3.0).sqrt(), 1e-12));

        let inv = mle_fit(RtdFamily::InverseNormal, &[1.0, 2.0, 4.0]).unwrap();
        assert!(close(inv.theta()[0], 7.0 / 3.0, 1e-12));
        // Value frozen from oracles::numeric_mle on the same sample.
        assert!(close(inv.theta()[1], 6.461_538_461_538, 1e-9));
        let numeric = oracles::numeric_mle(RtdFamily::InverseNormal, &[1.0, 2.0, 4.0]);
        assert!(close(numeric[1], 6.461_538_461_538, 1e-6));
    }

    #[test]
    fn mle_preconditions() {
        assert!(matches!(
            mle_fit(RtdFamily::LogNormal, &[1.0]),
            Err(Error::TooFewObservations { needed: 2, got: 1, .. })
        ));
        assert!(mle_fit(RtdFamily::Exponential, &[1.0]).is_ok());
        assert!(matches!(
            mle_fit(RtdFamily::Normal, &[1.0, -1.0]),
            Err(Error::InvalidRuntime { .. })
        ));
    }

    #[test]
    fn degenerate_sample_is_floored() {
        for family in RtdFamily::ALL {
            let p = mle_fit(family, &[3.0, 3.0, 3.0]).unwrap();
            assert!(p.log_pdf(3.0).is_finite());
        }
        assert_eq!(mle_fit(RtdFamily::Normal, &[3.0, 3.0]).unwrap().theta()[1], MIN_SPREAD);
        assert_eq!(
            mle_fit(RtdFamily::LogNormal, &[3.0, 3.0]).unwrap().theta()[1],
            MIN_SPREAD
        );
    }

    #[test]
    fn sampling_moments() {
        let xs = sample(&RtdParams::exponential(1.0).unwrap(), 100_000, 5).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(close(mean, 1.0, 0.03), "{mean}");

        let mut ys = sample(&RtdParams::lognormal(2.0, 0.5).unwrap(), 100_000, 6).unwrap();
        ys.sort_by(|a, b| a.total_cmp(b));
        let median = ys[50_000];
        // 3 sigma band of the sample median: 3 * s * sigma * sqrt(pi / 2n).
        assert!(close(
            median,
            2.0,
            3.0 * 2.0 * 0.5 * (core::f64::consts::PI / 200_000.0).sqrt()
        ));

        assert_eq!(
            sample(&RtdParams::inverse_normal(1.0, 2.0).unwrap(), 50, 1).unwrap(),
            sample(&RtdParams::inverse_normal(1.0, 2.0).unwrap(), 50, 1).unwrap()
        );
        let normal = sample(&RtdParams::normal(0.0, 1.0).unwrap(), 1000, 2).unwrap();
        assert!(normal.iter().all(|&x| x > 0.0));
        assert!(sample(&RtdParams::normal(-100.0, 1.0).unwrap(), 1, 2).is_err());
    }

    #[test]
    fn rescale_examples() {
        let e = RtdParams::exponential(2.0).unwrap().rescale(3.0).unwrap();
        assert_eq!(e.theta(), &[6.0]);
        let l = RtdParams::lognormal(1.0, 1.0).unwrap().rescale(10.0).unwrap();
        assert_eq!(l.theta(), &[10.0, 1.0]);
        let p = RtdParams::inverse_normal(1.3, 0.7).unwrap();
        assert_eq!(p.rescale(1.0).unwrap(), p);
        assert!(p.rescale(0.0).is_err());
    }

    #[test]
    fn rescaled_lognormal_matches_scaled_samples() {
        let base = RtdParams::lognormal(1.0, 1.0).unwrap();
        let scaled: Vec<f64> = sample(&base, 100_000, 9)
            .unwrap()
            .into_iter()
            .map(|x| 10.0 * x)
            .collect();
        let target = base.rescale(10.0).unwrap();
        let d = oracles::ks_brute_force(&target, &scaled);
        assert!(d < 0.02, "{d}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        let cases = [
            RtdParams::normal(3.0, 2.0).unwrap(),
            RtdParams::lognormal(2.0, 0.7).unwrap(),
            RtdParams::exponential(1.5).unwrap(),
            RtdParams::inverse_normal(2.0, 0.5).unwrap(),
        ];
        for p in cases {
            for q in [0.01, 0.25, 0.5, 0.9, 0.999] {
                let x = p.quantile(q).unwrap();
                assert!(close(p.cdf(x), q, 1e-9), "{p:?} q={q}");
            }
        }
        assert!(close(
            RtdParams::exponential(4.0).unwrap().quantile(0.5).unwrap(),
            4.0 * LN_2,
            1e-12
        ));
        assert!(RtdParams::exponential(1.0).unwrap().quantile(1.0).is_err());
    }

    #[test]
    fn json_shape() {
        let p = RtdParams::lognormal(2.5, 0.5).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"family":"LOG","theta":[2.5,0.5]}"#);
        let back: RtdParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<RtdParams>(r#"{"family":"EXP","theta":[-1.0]}"#).is_err());
        assert!(serde_json::from_str::<RtdParams>(r#"{"family":"EXP","theta":[1.0,2.0]}"#).is_err());
    }

    #[test]
    fn family_parsing() {
        assert_eq!("log".parse::<RtdFamily>(), Ok(RtdFamily::LogNormal));
        assert_eq!("INV".parse::<RtdFamily>(), Ok(RtdFamily::InverseNormal));
        assert!("weibull".parse::<RtdFamily>().is_err());
    }

    fn any_params() -> impl Strategy<Value = RtdParams> {
        prop_oneof![
            (0.5f64..5.0, 0.1f64..2.0).prop_map(|(a, b)| RtdParams::normal(a, b).unwrap()),
            (0.1f64..5.0, 0.1f64..1.5).prop_map(|(a, b)| RtdParams::lognormal(a, b).unwrap()),
            (0.1f64..5.0).prop_map(|a| RtdParams::exponential(a).unwrap()),
            (0.2f64..5.0, 0.2f64..10.0).prop_map(|(a, b)| RtdParams::inverse_normal(a, b).unwrap()),
        ]
    }

    /// Integration range between the 1e-7 and 1 - 1e-7 quantiles.
    fn support(p: &RtdParams) -> (f64, f64) {
        let lo = p.quantile(1e-7).unwrap();
        let hi = p.quantile(1.0 - 1e-7).unwrap();
        let lo = if p.family() == RtdFamily::Normal {
            lo
        } else {
            lo.max(0.0)
        };
        (lo, hi)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn density_integrates_to_one(p in any_params()) {
            let (lo, hi) = support(&p);
            let mass = if p.family() == RtdFamily::Normal {
                oracles::integrate(|x| p.pdf(x), lo, hi, 40_000)
            } else {
                // Substitute x = e^u so sharp peaks near zero are resolved.
                oracles::integrate(|u| p.pdf(libm::exp(u)) * libm::exp(u), libm::log(lo.max(1e-300)), libm::log(hi), 40_000)
            };
            prop_assert!((mass - 1.0).abs() < 1e-4, "{:?}: {}", p, mass);
        }

        #[test]
        fn cdf_is_integral_of_density(p in any_params(), u in 0.02f64..0.98) {
            let (lo, _) = support(&p);
            let x = p.quantile(u).unwrap();
            let numeric = p.cdf(lo) + oracles::integrate(|t| p.pdf(t), lo, x, 40_000);
            prop_assert!((numeric - p.cdf(x)).abs() < 1e-5, "{:?} x={}", p, x);
        }

        #[test]
        fn rescale_is_change_of_variables(p in any_params(), c in 0.01f64..100.0, u in 0.01f64..0.99) {
            let x = p.quantile(u).unwrap();
            let q = p.rescale(c).unwrap();
            let lhs = p.log_pdf(x);
            let rhs = q.log_pdf(c * x) + c.ln();
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
        }

        #[test]
        fn cdf_is_monotone(p in any_params(), a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.cdf(lo) <= p.cdf(hi));
        }

        #[test]
        fn sampling_is_deterministic(p in any_params(), seed in any::<u64>()) {
            prop_assert_eq!(sample(&p, 16, seed).unwrap(), sample(&p, 16, seed).unwrap());
        }
    }

    #[test]
    fn mle_is_local_maximum() {
        use crate::metrics::nllh;
        use rand::Rng;
        let truths = [
            RtdParams::normal(5.0, 1.0).unwrap(),
            RtdParams::lognormal(1.0, 0.8).unwrap(),
            RtdParams::exponential(2.0).unwrap(),
            RtdParams::inverse_normal(1.5, 3.0).unwrap(),
        ];
        let mut rng = crate::rng::substream(1, "perturb", 0);
        for truth in truths {
            for rep in 0..50u64 {
                let t = sample(&truth, 30, rep).unwrap();
                let fit = mle_fit(truth.family(), &t).unwrap();
                let best = nllh(&fit, &t);
                for _ in 0..100 {
                    let theta: Vec<f64> = fit
                        .theta()
                        .iter()
                        .map(|v| v * (1.0 + rng.random_range(-0.01..0.01)))
                        .collect();
                    let other = RtdParams::new(truth.family(), &theta).unwrap();
                    assert!(best <= nllh(&other, &t) + 1e-9);
                }
            }
        }
    }
}
