//! Synthetic datasets whose runtime distributions are known exactly.
//!
//! Features are i.i.d. standard normal. Parameter `j` of instance `x` is
//! `offset + scale * g(slope * <u_j, x>)` where `u_j` is a seeded unit
//! vector and `g` is the link shape.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, Instance, InstanceId, RuntimeObservations};
use crate::distributions::{sample_with, RtdFamily, RtdParams};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkShape {
    /// `g(z) = 1`, so every instance gets `offset + scale`.
    Constant,
    Exp,
    Softplus,
}

impl LinkShape {
    fn apply(self, z: f64) -> f64 {
        match self {
            LinkShape::Constant => 1.0,
            LinkShape::Exp => libm::exp(z),
            LinkShape::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    libm::log1p(libm::exp(z))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamLink {
    pub shape: LinkShape,
    pub offset: f64,
    pub scale: f64,
    pub slope: f64,
}

impl ParamLink {
    pub fn constant(value: f64) -> Self {
        Self {
            shape: LinkShape::Constant,
            offset: value,
            scale: 0.0,
            slope: 0.0,
        }
    }

    pub fn value(&self, projection: f64) -> f64 {
        self.offset + self.scale * self.shape.apply(self.slope * projection)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub family: RtdFamily,
    pub n_instances: usize,
    pub n_features: usize,
    pub k_observations: usize,
    /// One link per distribution parameter, in the family's parameter order.
    pub links: Vec<ParamLink>,
    pub seed: u64,
}

impl SynthSpec {
    /// LOG family, 2000 instances, 10 features, 100 runs each, with
    /// `s = exp(0.5 <w, x>)` and `sigma = 0.2 + 0.3 softplus(<v, x>)`.
    pub fn default_log(seed: u64) -> Self {
        Self {
            family: RtdFamily::LogNormal,
            n_instances: 2000,
            n_features: 10,
            k_observations: 100,
            links: alloc::vec![
                ParamLink {
                    shape: LinkShape::Exp,
                    offset: 0.0,
                    scale: 1.0,
                    slope: 0.5,
                },
                ParamLink {
                    shape: LinkShape::Softplus,
                    offset: 0.2,
                    scale: 0.3,
                    slope: 1.0,
                },
            ],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_instances == 0 || self.n_features == 0 || self.k_observations == 0 {
            return bad(format!(
                "n_instances, n_features and k_observations must be positive (got {}, {}, {})",
                self.n_instances, self.n_features, self.k_observations
            ));
        }
        if self.links.len() != self.family.n_params() {
            return bad(format!(
                "{} needs {} parameter links, got {}",
                self.family.tag(),
                self.family.n_params(),
                self.links.len()
            ));
        }
        for l in &self.links {
            if !(l.offset.is_finite() && l.scale.is_finite() && l.slope.is_finite()) {
                return bad(format!("non-finite link coefficients {l:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub instance: InstanceId,
    pub params: RtdParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub spec: SynthSpec,
    /// Unit projection direction per parameter.
    pub directions: Vec<Vec<f64>>,
    pub dataset: Dataset,
    /// Same order as `dataset.instances()`.
    pub truth: Vec<GroundTruth>,
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let m = spec.n_features;
    let directions: Vec<Vec<f64>> = (0..spec.links.len())
        .map(|j| {
            let mut r = rng::substream(spec.seed, "synth-direction", j as u64);
            loop {
                let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut r)).collect();
                let norm = libm::sqrt(v.iter().map(|a| a * a).sum::<f64>());
                if norm > 1e-12 {
                    break v.into_iter().map(|a| a / norm).collect();
                }
            }
        })
        .collect();

    let width = format!("{}", spec.n_instances - 1).len().max(4);
    let mut instances = Vec::with_capacity(spec.n_instances);
    let mut truth = Vec::with_capacity(spec.n_instances);
    for i in 0..spec.n_instances {
        let mut fr = rng::substream(spec.seed, "synth-features", i as u64);
        let x: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut fr)).collect();
        let theta: Vec<f64> = spec
            .links
            .iter()
            .zip(&directions)
            .map(|(link, u)| link.value(u.iter().zip(&x).map(|(a, b)| a * b).sum()))
            .collect();
        let params = RtdParams::new(spec.family, &theta)?;
        let mut tr = rng::substream(spec.seed, "synth-runtimes", i as u64);
        let times = sample_with(&params, spec.k_observations, &mut tr)?;
        let id = InstanceId::new(format!("inst{i:0width$}"))?;
        instances.push(Instance {
            id: id.clone(),
            features: FeatureVector::from(x),
            runtimes: RuntimeObservations::new(times)?,
        });
        truth.push(GroundTruth { instance: id, params });
    }
    let names = (0..m).map(|j| format!("f{j}")).collect();
    Ok(SyntheticData {
        spec: spec.clone(),
        directions,
        dataset: Dataset::new(names, instances)?,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::mle_fit;
    use crate::metrics::nllh;
    use alloc::vec;

    fn small(family: RtdFamily, links: Vec<ParamLink>, n: usize, k: usize) -> SynthSpec {
        SynthSpec {
            family,
            n_instances: n,
            n_features: 4,
            k_observations: k,
            links,
            seed: 11,
        }
    }

    #[test]
    fn default_spec_shape() {
        let mut spec = SynthSpec::default_log(1);
        spec.n_instances = 50;
        let d = generate_synthetic(&spec).unwrap();
        assert_eq!(d.dataset.len(), 50);
        assert_eq!(d.dataset.n_features(), 10);
        for (inst, gt) in d.dataset.instances().iter().zip(&d.truth) {
            assert_eq!(inst.id, gt.instance);
            assert_eq!(inst.runtimes.len(), 100);
            assert!(gt.params.theta()[1] > 0.2);
        }
        for u in &d.directions {
            let n: f64 = u.iter().map(|a| a * a).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = small(RtdFamily::LogNormal, SynthSpec::default_log(0).links, 20, 10);
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(
            generate_synthetic(&spec).unwrap().dataset,
            generate_synthetic(&other).unwrap().dataset
        );
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = small(RtdFamily::Exponential, vec![ParamLink::constant(1.0)], 5, 5);
        spec.links.push(ParamLink::constant(1.0));
        assert!(generate_synthetic(&spec).is_err());
        let spec = small(RtdFamily::Exponential, vec![ParamLink::constant(-1.0)], 5, 5);
        assert!(generate_synthetic(&spec).is_err());
        let spec = small(RtdFamily::Exponential, vec![ParamLink::constant(1.0)], 0, 5);
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn constant_links_share_one_rtd() {
        let spec = small(
            RtdFamily::Normal,
            vec![ParamLink::constant(10.0), ParamLink::constant(1.0)],
            30,
            400,
        );
        let d = generate_synthetic(&spec).unwrap();
        for inst in d.dataset.instances() {
            let fit = mle_fit(RtdFamily::Normal, inst.runtimes.times()).unwrap();
            // Sampling error of the mean is 1/20; of the std about 1/28.
            assert!((fit.theta()[0] - 10.0).abs() < 0.25);
            assert!((fit.theta()[1] - 1.0).abs() < 0.2);
        }
    }

    #[test]
    fn exponential_self_fit_approaches_entropy() {
        let links = alloc::vec![ParamLink {
            shape: LinkShape::Exp,
            offset: 0.0,
            scale: 2.0,
            slope: 0.5,
        }];
        let d = generate_synthetic(&small(RtdFamily::Exponential, links, 10, 10_000)).unwrap();
        let mut ours = 0.0;
        let mut analytic = 0.0;
        for (inst, gt) in d.dataset.instances().iter().zip(&d.truth) {
            let t = inst.runtimes.times();
            let fit = mle_fit(RtdFamily::Exponential, t).unwrap();
            ours += nllh(&fit, t) / t.len() as f64;
            analytic += 1.0 + libm::log(gt.params.theta()[0]);
        }
        assert!((ours - analytic).abs() / 10.0 < 0.01, "{ours} vs {analytic}");
    }
}
