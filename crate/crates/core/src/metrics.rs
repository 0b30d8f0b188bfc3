//! Likelihood-based fit quality and Kolmogorov-Smirnov testing.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance, InstanceId};
use crate::distributions::{mle_fit, RtdFamily, RtdParams};
use crate::error::{Error, Result};

/// Negative log-likelihood `-sum_i ln p(t_i | theta)`.
pub fn nllh(params: &RtdParams, times: &[f64]) -> f64 {
    -times.iter().map(|&t| params.log_pdf(t)).sum::<f64>()
}

/// Hardness-normalized NLLH of one instance.
///
/// Each observation's likelihood is multiplied by the instance's maximal
/// observed runtime before taking logs, and the result is averaged over the
/// observations: `-(1/k) sum_i ln(p(t_i) * max_j t_j) = nllh / k - ln max t`.
/// The value is invariant under rescaling time (and the parameters) by any
/// constant, so easy and hard instances weigh the same.
pub fn instance_normalized_nllh(params: &RtdParams, times: &[f64]) -> f64 {
    let k = times.len() as f64;
    let max_t = times.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    nllh(params, times) / k - max_t.ln()
}

/// Mean of [`instance_normalized_nllh`] over instances.
pub fn normalized_nllh(fits: &[(RtdParams, &[f64])]) -> Result<f64> {
    if fits.is_empty() {
        return Err(Error::Empty("no instances"));
    }
    let total: f64 = fits.iter().map(|(p, t)| instance_normalized_nllh(p, t)).sum();
    Ok(total / fits.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceNllh {
    pub instance: InstanceId,
    pub nllh: f64,
    pub normalized_nllh: f64,
}

impl InstanceNllh {
    pub fn evaluate(instance: &InstanceId, params: &RtdParams, times: &[f64]) -> Self {
        Self {
            instance: instance.clone(),
            nllh: nllh(params, times),
            normalized_nllh: instance_normalized_nllh(params, times),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS distance between the empirical CDF of `times` and `params`.
pub fn ks_statistic(params: &RtdParams, times: &[f64]) -> f64 {
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = params.cdf(t);
            let below = i as f64 / k;
            let above = (i + 1) as f64 / k;
            (f - below).abs().max((above - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov p-value `Q(sqrt(k) * D)`.
///
/// For `lambda >= 1.18` the alternating series
/// `2 sum_j (-1)^(j-1) exp(-2 j^2 lambda^2)` is summed until a term drops
/// below 1e-10. Below that it converges too slowly, so the complementary
/// theta-function form `1 - sqrt(2 pi)/lambda sum_j exp(-(2j-1)^2 pi^2 / 8 lambda^2)`
/// is used instead.
pub fn ks_pvalue(statistic: f64, k: usize) -> f64 {
    let lambda = (k as f64).sqrt() * statistic;
    let p = kolmogorov_survival(lambda).clamp(0.0, 1.0);
    if p < 1e-12 {
        0.0
    } else {
        p
    }
}

pub(crate) fn kolmogorov_survival(lambda: f64) -> f64 {
    use core::f64::consts::PI;
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let w = PI * PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for j in 1..=50 {
            let m = (2 * j - 1) as f64;
            let term = (-m * m * w).exp();
            cdf += term;
            if term < 1e-17 {
                break;
            }
        }
        return 1.0 - (2.0 * PI).sqrt() / lambda * cdf;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=1000 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-10 {
            break;
        }
        sign = -sign;
    }
    2.0 * sum
}

pub fn ks_test(params: &RtdParams, times: &[f64]) -> KsResult {
    let statistic = ks_statistic(params, times);
    KsResult {
        statistic,
        p_value: ks_pvalue(statistic, times.len()),
    }
}

/// Percentage of p-values at or below `alpha`.
pub fn rejection_rate(p_values: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidProbability(alpha));
    }
    if p_values.is_empty() {
        return Err(Error::Empty("no p-values"));
    }
    let rejected = p_values.iter().filter(|&&p| p <= alpha).count();
    Ok(100.0 * rejected as f64 / p_values.len() as f64)
}

/// Per-instance outcome of fitting one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFit {
    pub instance: InstanceId,
    pub params: RtdParams,
    pub nllh: f64,
    pub normalized_nllh: f64,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub instance: InstanceId,
    pub reason: String,
}

pub fn fit_instance(family: RtdFamily, instance: &Instance) -> core::result::Result<InstanceFit, FitFailure> {
    let times = instance.runtimes.times();
    match mle_fit(family, times) {
        Ok(params) => Ok(InstanceFit {
            instance: instance.id.clone(),
            params,
            nllh: nllh(&params, times),
            normalized_nllh: instance_normalized_nllh(&params, times),
            ks: ks_test(&params, times),
        }),
        Err(e) => Err(FitFailure {
            instance: instance.id.clone(),
            reason: e.to_string(),
        }),
    }
}

/// One row of a family ranking, with the per-instance records it was
/// aggregated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRanking {
    pub family: RtdFamily,
    pub normalized_nllh: f64,
    pub rejection_rate: f64,
    pub fits: Vec<InstanceFit>,
    pub failures: Vec<FitFailure>,
}

impl FamilyRanking {
    /// Aggregate per-instance outcomes, in instance order.
    pub fn aggregate(
        family: RtdFamily,
        outcomes: Vec<core::result::Result<InstanceFit, FitFailure>>,
        alpha: f64,
    ) -> Result<Self> {
        let (mut fits, mut failures) = (Vec::new(), Vec::new());
        for o in outcomes {
            match o {
                Ok(f) => fits.push(f),
                Err(f) => failures.push(f),
            }
        }
        let (normalized_nllh, rejection_rate) = if fits.is_empty() {
            (f64::INFINITY, 100.0)
        } else {
            let mean = fits.iter().map(|f| f.normalized_nllh).sum::<f64>() / fits.len() as f64;
            let ps: Vec<f64> = fits.iter().map(|f| f.ks.p_value).collect();
            (mean, rejection_rate(&ps, alpha)?)
        };
        Ok(Self {
            family,
            normalized_nllh,
            rejection_rate,
            fits,
            failures,
        })
    }
}

/// Order by normalized NLLH, then KS rejection rate, then family tag.
pub fn sort_ranking(rows: &mut [FamilyRanking]) {
    rows.sort_by(|a, b| {
        a.normalized_nllh
            .total_cmp(&b.normalized_nllh)
            .then(a.rejection_rate.total_cmp(&b.rejection_rate))
            .then_with(|| a.family.tag().cmp(b.family.tag()))
    });
}

/// Fit every family to every instance and rank families by mean normalized
/// NLLH (ascending). Instances a family cannot fit are recorded as failures
/// and left out of that family's aggregate.
pub fn rank_families(dataset: &Dataset, families: &[RtdFamily], alpha: f64) -> Result<Vec<FamilyRanking>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = families
        .iter()
        .map(|&family| {
            let outcomes = dataset
                .instances()
                .iter()
                .map(|inst| fit_instance(family, inst))
                .collect();
            FamilyRanking::aggregate(family, outcomes, alpha)
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranking(&mut rows);
    Ok(rows)
}
