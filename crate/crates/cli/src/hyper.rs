//! `--hyper` syntax: `name=U(low,high)` or `name=value`.
//!
//! Names: `sigma2`/`tau2` put the prior on the variance, `sigma`/`tau` on the
//! standard deviation; `lambda`, `eta` and `psi` take a uniform or a fixed value.

use smoothgauge::mcmc::{HyperPriors, ParamPrior, VariancePrior};

use crate::failure::{CmdResult, Failure};

enum Rhs {
    Uniform(f64, f64),
    Fixed(f64),
}

fn parse_rhs(rhs: &str, whole: &str) -> CmdResult<Rhs> {
    let bad = || Failure::usage(format!("cannot parse hyperprior '{whole}'; use name=U(low,high) or name=value"));
    let rhs = rhs.trim();
    let inner = rhs
        .strip_prefix("U(")
        .or_else(|| rhs.strip_prefix("u("))
        .or_else(|| rhs.strip_prefix("Unif("));
    match inner {
        Some(rest) => {
            let body = rest.strip_suffix(')').ok_or_else(bad)?;
            let (a, b) = body.split_once(',').ok_or_else(bad)?;
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            Ok(Rhs::Uniform(a, b))
        }
        None => Ok(Rhs::Fixed(rhs.parse().map_err(|_| bad())?)),
    }
}

fn variance(rhs: Rhs, on_sd: bool) -> VariancePrior {
    match (rhs, on_sd) {
        (Rhs::Uniform(low, high), false) => VariancePrior::VarianceUniform { low, high },
        (Rhs::Uniform(low, high), true) => VariancePrior::SdUniform { low, high },
        (Rhs::Fixed(v), false) => VariancePrior::Fixed { value: v },
        (Rhs::Fixed(v), true) => VariancePrior::Fixed { value: v * v },
    }
}

fn param(rhs: Rhs) -> ParamPrior {
    match rhs {
        Rhs::Uniform(low, high) => ParamPrior::Uniform { low, high },
        Rhs::Fixed(value) => ParamPrior::Fixed { value },
    }
}

/// Applies each `name=...` item on top of the defaults.
pub fn parse_hyper(items: &[String]) -> CmdResult<HyperPriors> {
    let mut h = HyperPriors::default();
    for item in items {
        let (name, rhs) = item
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("hyperprior '{item}' lacks '='")))?;
        let rhs = parse_rhs(rhs, item)?;
        match name.trim() {
            "sigma2" => h.sigma = variance(rhs, false),
            "sigma" => h.sigma = variance(rhs, true),
            "tau2" => h.tau = Some(variance(rhs, false)),
            "tau" => h.tau = Some(variance(rhs, true)),
            "lambda" => h.lambda = param(rhs),
            "eta" => h.eta = param(rhs),
            "psi" => h.psi = Some(param(rhs)),
            other => {
                return Err(Failure::usage(format!(
                    "unknown hyperparameter '{other}'; expected sigma2, sigma, tau2, tau, lambda, eta or psi"
                )))
            }
        }
    }
    Ok(h)
}
