//! Poisson-logitNormal model fitting by adaptive Metropolis-within-Gibbs.
//!
//! `O_i ~ Poisson(n_i r_i)`, `logit r_i = α + κ_i`, with κ drawn from one of
//! the spatial priors and uniform hyperpriors on the variance and any extra
//! parameter.

mod diagnostics;
mod sampler;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{
    effective_sample_size, effective_sample_size_chains, gelman_rubin, Ess, GelmanRubin,
};

use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::numerics::quantiles;
use crate::priors::{pcar_eta_bounds, PriorCache, PriorKind, PriorSpec};

/// Counts and populations on an adjacency graph.
#[derive(Debug, Clone)]
pub struct AreaDataset {
    graph: AdjacencyGraph,
    counts: Vec<u64>,
    populations: Vec<f64>,
}

impl AreaDataset {
    pub fn new(graph: AdjacencyGraph, counts: Vec<u64>, populations: Vec<f64>) -> Result<Self> {
        let n = graph.order();
        if counts.len() != n || populations.len() != n {
            return Err(Error::data(format!(
                "graph has {n} areas but got {} counts and {} populations",
                counts.len(),
                populations.len()
            )));
        }
        if let Some(i) = populations.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::data(format!(
                "population of area '{}' must be positive, got {}",
                graph.area_ids()[i],
                populations[i]
            )));
        }
        Ok(AreaDataset {
            graph,
            counts,
            populations,
        })
    }

    pub fn graph(&self) -> &AdjacencyGraph {
        &self.graph
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn crude_rates(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.populations)
            .map(|(&o, &n)| o as f64 / n)
            .collect()
    }

    /// `ΣO / Σn`.
    pub fn pooled_rate(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.populations.iter().sum::<f64>()
    }
}

/// Prior on the variance of a spatial effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VariancePrior {
    /// Standard deviation uniform on `(low, high)`.
    SdUniform { low: f64, high: f64 },
    /// Variance uniform on `(low, high)`.
    VarianceUniform { low: f64, high: f64 },
    Fixed { value: f64 },
}

impl VariancePrior {
    fn validate(&self, what: &str) -> Result<()> {
        match *self {
            VariancePrior::SdUniform { low, high } | VariancePrior::VarianceUniform { low, high } => {
                if !(low >= 0.0 && low < high && high.is_finite()) {
                    return Err(Error::input(format!(
                        "{what} prior needs 0 <= low < high < inf, got ({low}, {high})"
                    )));
                }
            }
            VariancePrior::Fixed { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::input(format!("fixed {what} must be positive, got {value}")));
                }
            }
        }
        Ok(())
    }

    /// Whether a variance value lies inside the support.
    pub fn contains(&self, variance: f64) -> bool {
        match *self {
            VariancePrior::SdUniform { low, high } => {
                let sd = variance.sqrt();
                sd > low && sd < high
            }
            VariancePrior::VarianceUniform { low, high } => variance > low && variance < high,
            VariancePrior::Fixed { value } => variance == value,
        }
    }
}

/// Prior on a bounded scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamPrior {
    Uniform { low: f64, high: f64 },
    Fixed { value: f64 },
}

impl ParamPrior {
    fn validate(&self, what: &str, lo: f64, hi: f64) -> Result<()> {
        let ok = match *self {
            ParamPrior::Uniform { low, high } => low < high && low >= lo && high <= hi,
            ParamPrior::Fixed { value } => value >= lo && value <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!(
                "{what} prior {self:?} must lie within [{lo}, {hi}]"
            )))
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match *self {
            ParamPrior::Uniform { low, high } => v > low && v < high,
            ParamPrior::Fixed { value } => v == value,
        }
    }
}

/// Hyperpriors. `alpha` is flat on `(−20, 20)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub sigma: VariancePrior,
    /// BYM unstructured variance; `None` reuses `sigma`.
    pub tau: Option<VariancePrior>,
    pub eta: ParamPrior,
    pub lambda: ParamPrior,
    /// `None` means uniform on `(0, max centroid distance)`.
    pub psi: Option<ParamPrior>,
}

impl Default for HyperPriors {
    fn default() -> Self {
        HyperPriors {
            sigma: VariancePrior::SdUniform {
                low: 0.0,
                high: 10.0,
            },
            tau: None,
            eta: ParamPrior::Uniform {
                low: -1.0,
                high: 1.0,
            },
            lambda: ParamPrior::Uniform {
                low: 0.0,
                high: 1.0,
            },
            psi: None,
        }
    }
}

impl HyperPriors {
    /// Variance uniform on `(low, high)`, other parameters at their defaults.
    pub fn with_variance_uniform(low: f64, high: f64) -> Self {
        HyperPriors {
            sigma: VariancePrior::VarianceUniform { low, high },
            ..Default::default()
        }
    }

    pub fn tau_prior(&self) -> VariancePrior {
        self.tau.unwrap_or(self.sigma)
    }

    fn psi_prior(&self, cache: &PriorCache<'_>) -> Result<ParamPrior> {
        match self.psi {
            Some(p) => Ok(p),
            None => Ok(ParamPrior::Uniform {
                low: 0.0,
                high: cache.max_distance()?,
            }),
        }
    }

    fn validate(&self, kind: PriorKind, cache: &PriorCache<'_>) -> Result<()> {
        self.sigma.validate("sigma")?;
        match kind {
            PriorKind::Bym => self.tau_prior().validate("tau")?,
            PriorKind::Pcar => {
                let (lo, _) = pcar_eta_bounds(cache.graph())?;
                // bipartite graphs put the lower bound at -1 up to rounding
                self.eta.validate("eta", lo.max(-1.0) - 1e-9, 1.0)?;
            }
            PriorKind::Lcar | PriorKind::Bym2 => self.lambda.validate("lambda", 0.0, 1.0)?,
            PriorKind::Gp => {
                let max = cache.max_distance()?;
                let p = self.psi_prior(cache)?;
                p.validate("psi", 0.0, f64::INFINITY)?;
                if let ParamPrior::Fixed { value } = p {
                    if value <= 0.0 {
                        return Err(Error::input("fixed psi must be positive"));
                    }
                }
                if max <= 0.0 {
                    return Err(Error::data("GP prior needs at least two distinct centroids"));
                }
            }
            PriorKind::Iid | PriorKind::Icar => {}
        }
        Ok(())
    }
}

/// Chain protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub adapt_during_burnin_only: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 3,
            iterations: 30_000,
            burn_in: 5_000,
            thin: 75,
            seed: 1,
            target_accept: 0.44,
            adapt_during_burnin_only: true,
        }
    }
}

impl McmcConfig {
    /// Draws kept per chain.
    pub fn saved_per_chain(&self) -> usize {
        if self.thin == 0 || self.burn_in >= self.iterations {
            0
        } else {
            (self.iterations - self.burn_in) / self.thin
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::input("need at least one chain"));
        }
        if self.thin == 0 {
            return Err(Error::input("thin must be at least 1"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::input(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.saved_per_chain() < 100 {
            return Err(Error::input(format!(
                "(iterations - burn_in) / thin = {} but at least 100 saved draws are required",
                self.saved_per_chain()
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::input("target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Proposal scales of every updated scalar, in sweep order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub after_burn_in: Vec<f64>,
    pub final_scales: Vec<f64>,
}

/// Saved draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    /// Iteration index (1-based) of each saved draw.
    pub iterations: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Total spatial effect per area, one vector per saved draw.
    pub kappa: Vec<Vec<f64>>,
    pub params: Vec<PriorSpec>,
    /// Post-burn-in acceptance rate per parameter group.
    pub acceptance: BTreeMap<String, f64>,
    pub proposal_scales: ProposalScales,
    pub elapsed_secs: f64,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub kind: PriorKind,
    pub area_ids: Vec<String>,
    pub config: McmcConfig,
    pub hyper: HyperPriors,
    pub chains: Vec<ChainDraws>,
}

/// Diagnostic summary of one scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostic {
    pub name: String,
    pub mean: f64,
    pub rhat: Option<GelmanRubin>,
    pub ess: Ess,
}

/// Mean and central 90% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcvSummary {
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fits the model under `kind`, running chains in parallel.
///
/// Chain `c` uses a ChaCha8 stream `c` seeded with `cfg.seed`, so results do
/// not depend on thread scheduling.
pub fn fit(
    data: &AreaDataset,
    kind: PriorKind,
    hyper: &HyperPriors,
    cfg: &McmcConfig,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let cache = PriorCache::new(data.graph());
    if kind.is_car() {
        data.graph().require_no_islands()?;
    }
    if kind == PriorKind::Gp {
        cache.distances()?;
    }
    hyper.validate(kind, &cache)?;
    let psi = if kind == PriorKind::Gp {
        Some(hyper.psi_prior(&cache)?)
    } else {
        None
    };
    let ctx = sampler::Context::new(data, kind, hyper, psi, &cache)?;
    let chains = (0..cfg.chains)
        .into_par_iter()
        .map(|c| sampler::run_chain(&ctx, cfg, c as u64))
        .collect::<Result<Vec<_>>>()?;
    for (c, ch) in chains.iter().enumerate() {
        let near_edge = ch.alpha.iter().filter(|a| a.abs() > 19.5).count();
        if near_edge > 0 {
            log::warn!("chain {c}: {near_edge} alpha draws within 0.5 of the flat-prior bounds");
        }
    }
    Ok(PosteriorSamples {
        kind,
        area_ids: data.graph().area_ids().to_vec(),
        config: *cfg,
        hyper: *hyper,
        chains,
    })
}

impl PosteriorSamples {
    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    /// Names of the scalar parameters with per-draw values: `alpha`,
    /// `sigma2`, the kind's extra parameter and `tau2` for BYM.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut v = vec!["alpha".to_string(), "sigma2".to_string()];
        if self.kind == PriorKind::Bym {
            v.push("tau2".into());
        }
        v.extend(self.kind.extra_params().iter().map(|s| s.to_string()));
        v
    }

    fn scalar(spec: &PriorSpec, name: &str) -> Option<f64> {
        match name {
            "sigma2" => Some(spec.sigma2()),
            "tau2" => match *spec {
                PriorSpec::Bym { sigma2, nu } => Some(sigma2 * nu),
                _ => None,
            },
            _ => spec.extra_param().filter(|(n, _)| *n == name).map(|(_, v)| v),
        }
    }

    /// Per-chain draws of a named scalar: a parameter name or `r[<area id>]`.
    pub fn scalar_draws(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        if name == "alpha" {
            return Ok(self.chains.iter().map(|c| c.alpha.clone()).collect());
        }
        if let Some(id) = name.strip_prefix("r[").and_then(|s| s.strip_suffix(']')) {
            let i = self
                .area_ids
                .iter()
                .position(|a| a == id)
                .ok_or_else(|| Error::input(format!("unknown area '{id}'")))?;
            return Ok(self
                .chains
                .iter()
                .map(|c| {
                    c.alpha
                        .iter()
                        .zip(&c.kappa)
                        .map(|(a, k)| logistic(a + k[i]))
                        .collect()
                })
                .collect());
        }
        let mut out = Vec::with_capacity(self.chains.len());
        for c in &self.chains {
            let v: Option<Vec<f64>> = c.params.iter().map(|p| Self::scalar(p, name)).collect();
            out.push(v.ok_or_else(|| {
                Error::input(format!("parameter '{name}' does not apply to {}", self.kind))
            })?);
        }
        Ok(out)
    }

    /// Names of the scalars that vary across draws and get diagnostics.
    fn diagnostic_names(&self) -> Vec<String> {
        let mut names = vec!["alpha".to_string()];
        for n in self.parameter_names().into_iter().skip(1) {
            let draws = match self.scalar_draws(&n) {
                Ok(d) => d,
                Err(_) => continue,
            };
            let first = draws.first().and_then(|d| d.first()).copied();
            if draws.iter().flatten().any(|&v| Some(v) != first) {
                names.push(n);
            }
        }
        names.extend(self.area_ids.iter().map(|id| format!("r[{id}]")));
        names
    }

    /// R̂ (when at least two chains) and summed ESS for α, the non-fixed
    /// hyperparameters and every area rate.
    pub fn diagnostics(&self) -> Result<Vec<ParamDiagnostic>> {
        self.diagnostic_names()
            .into_iter()
            .map(|name| {
                let draws = self.scalar_draws(&name)?;
                let all: Vec<f64> = draws.iter().flatten().copied().collect();
                let mean = all.iter().sum::<f64>() / all.len() as f64;
                let rhat = if draws.len() >= 2 {
                    Some(gelman_rubin(&draws)?)
                } else {
                    None
                };
                let ess = effective_sample_size_chains(&draws)?;
                Ok(ParamDiagnostic {
                    name,
                    mean,
                    rhat,
                    ess,
                })
            })
            .collect()
    }

    /// Writes draws in long format: `chain,iter,name,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["chain", "iter", "name", "value"]).map_err(to_io)?;
        let names = self.parameter_names();
        for (c, ch) in self.chains.iter().enumerate() {
            for (d, &it) in ch.iterations.iter().enumerate() {
                let (c, it) = (c.to_string(), it.to_string());
                for name in &names {
                    let v = if name == "alpha" {
                        ch.alpha[d]
                    } else {
                        Self::scalar(&ch.params[d], name).unwrap_or(f64::NAN)
                    };
                    w.write_record([c.as_str(), it.as_str(), name, &v.to_string()])
                        .map_err(to_io)?;
                }
                for (id, k) in self.area_ids.iter().zip(&ch.kappa[d]) {
                    w.write_record([c.as_str(), it.as_str(), &format!("kappa[{id}]"), &k.to_string()])
                        .map_err(to_io)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Posterior mean of each area rate, averaging `logit⁻¹(α + κ_i)` over all
/// saved draws of all chains.
pub fn posterior_rate_means(samples: &PosteriorSamples) -> Result<Vec<f64>> {
    let total = samples.total_draws();
    if total == 0 {
        return Err(Error::input("no posterior draws"));
    }
    let n = samples.area_ids.len();
    let mut sums = vec![0.0; n];
    for ch in &samples.chains {
        for (a, k) in ch.alpha.iter().zip(&ch.kappa) {
            for (s, ki) in sums.iter_mut().zip(k) {
                *s += logistic(a + ki);
            }
        }
    }
    Ok(sums.into_iter().map(|s| s / total as f64).collect())
}

/// Posterior distribution of the total conditional variance: the TCV at each
/// draw's hyperparameters, summarised by mean and 5%/95% quantiles.
pub fn posterior_tcv(samples: &PosteriorSamples, graph: &AdjacencyGraph) -> Result<TcvSummary> {
    if graph.area_ids() != samples.area_ids.as_slice() {
        return Err(Error::input("graph areas do not match the fitted areas"));
    }
    let cache = PriorCache::new(graph);
    let values = samples
        .chains
        .iter()
        .flat_map(|c| c.params.iter())
        .map(|p| cache.tcv(p))
        .collect::<Result<Vec<f64>>>()?;
    if values.is_empty() {
        return Err(Error::input("no posterior draws"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let q = quantiles(&values, &[0.05, 0.95]);
    Ok(TcvSummary {
        mean,
        q05: q[0],
        q95: q[1],
    })
}

#[cfg(test)]
mod tests;
