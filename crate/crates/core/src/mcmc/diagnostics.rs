//! Convergence diagnostics: potential scale reduction and effective sample size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Potential scale reduction factor for one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GelmanRubin {
    /// `max(1, raw)`.
    pub rhat: f64,
    /// Unclamped value; may dip below 1 when between-chain variance is tiny.
    pub raw: f64,
    /// Within-chain variance was zero, so the ratio is undefined.
    pub degenerate: bool,
}

/// Effective sample size for one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// The draws were constant.
    pub degenerate: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// `R̂ = sqrt(((n−1)/n·W + B/n) / W)` over `m` chains of `n` draws.
///
/// Chains of unequal length are truncated to the shortest.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<GelmanRubin> {
    if chains.len() < 2 {
        return Err(Error::input("R-hat needs at least 2 chains"));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 10 {
        return Err(Error::input(format!("R-hat needs at least 10 draws per chain, got {n}")));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, &m)| sample_var(c, m))
        .sum::<f64>()
        / chains.len() as f64;
    let grand = mean(&means);
    let nf = n as f64;
    let b = nf * sample_var(&means, grand);
    if !(w > 0.0) {
        let identical = b == 0.0;
        return Ok(GelmanRubin {
            rhat: if identical { 1.0 } else { f64::INFINITY },
            raw: if identical { 1.0 } else { f64::INFINITY },
            degenerate: true,
        });
    }
    let v = (nf - 1.0) / nf * w + b / nf;
    let raw = (v / w).sqrt();
    Ok(GelmanRubin {
        rhat: raw.max(1.0),
        raw,
        degenerate: false,
    })
}

/// Autocovariance at `lag`, normalised by `n`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Geyer initial positive sequence estimate of `N/τ` for a single chain.
pub fn effective_sample_size(draws: &[f64]) -> Result<Ess> {
    let n = draws.len();
    if n < 100 {
        return Err(Error::input(format!("ESS needs at least 100 draws, got {n}")));
    }
    let m = mean(draws);
    let g0 = autocov(draws, m, 0);
    if !(g0 > 0.0) {
        return Ok(Ess {
            value: 0.0,
            degenerate: true,
        });
    }
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (autocov(draws, m, 2 * k) + autocov(draws, m, 2 * k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        // initial monotone sequence
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = tau.max(1.0 / n as f64);
    Ok(Ess {
        value: (n as f64 / tau).min(n as f64 * (n as f64).log10()),
        degenerate: false,
    })
}

/// Sum of per-chain effective sample sizes.
pub fn effective_sample_size_chains(chains: &[Vec<f64>]) -> Result<Ess> {
    if chains.is_empty() {
        return Err(Error::input("ESS needs at least one chain"));
    }
    let mut total = 0.0;
    let mut degenerate = true;
    for c in chains {
        let e = effective_sample_size(c)?;
        total += e.value;
        degenerate &= e.degenerate;
    }
    Ok(Ess {
        value: total,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let z = normals(n + 500, seed);
        let mut x = 0.0;
        let mut out = Vec::with_capacity(n);
        for (t, e) in z.into_iter().enumerate() {
            x = phi * x + e;
            if t >= 500 {
                out.push(x);
            }
        }
        out
    }

    #[test]
    fn identical_chains_give_one() {
        let c = normals(200, 1);
        let r = gelman_rubin(&[c.clone(), c.clone(), c]).unwrap();
        assert!(!r.degenerate);
        assert_eq!(r.rhat, 1.0);
    }

    #[test]
    fn separated_chains_blow_up() {
        let a = normals(500, 2);
        let b: Vec<f64> = normals(500, 3).iter().map(|v| v + 50.0).collect();
        let r = gelman_rubin(&[a, b]).unwrap();
        assert!(r.rhat > 10.0, "{}", r.rhat);
    }

    #[test]
    fn iid_chains_converge() {
        let chains: Vec<Vec<f64>> = (0..4).map(|s| normals(10_000, 10 + s)).collect();
        let r = gelman_rubin(&chains).unwrap();
        assert!(r.rhat < 1.01, "{}", r.rhat);
        assert!(r.rhat >= 1.0 - 1e-9);
    }

    #[test]
    fn constant_chains_are_degenerate() {
        let r = gelman_rubin(&[vec![1.0; 20], vec![1.0; 20]]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.rhat, 1.0);
        let r = gelman_rubin(&[vec![1.0; 20], vec![2.0; 20]]).unwrap();
        assert!(r.degenerate);
        assert!(r.rhat.is_infinite());
    }

    #[test]
    fn rhat_preconditions() {
        assert!(gelman_rubin(&[normals(50, 1)]).is_err());
        assert!(gelman_rubin(&[normals(5, 1), normals(5, 2)]).is_err());
    }

    #[test]
    fn white_noise_ess_near_n() {
        let x = normals(10_000, 7);
        let e = effective_sample_size(&x).unwrap();
        assert!((e.value / 10_000.0 - 1.0).abs() < 0.15, "{}", e.value);
    }

    #[test]
    fn ar1_ess_matches_factor() {
        let phi = 0.9;
        let n = 50_000;
        let x = ar1(n, phi, 11);
        let e = effective_sample_size(&x).unwrap();
        let expect = n as f64 * (1.0 - phi) / (1.0 + phi);
        assert!((e.value / expect - 1.0).abs() < 0.25, "{} vs {expect}", e.value);
    }

    #[test]
    fn constant_ess_is_zero() {
        let e = effective_sample_size(&[3.0; 200]).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.value, 0.0);
        assert!(effective_sample_size(&[1.0; 50]).is_err());
    }

    #[test]
    fn chain_sum() {
        let a = normals(5_000, 20);
        let b = normals(5_000, 21);
        let ea = effective_sample_size(&a).unwrap().value;
        let eb = effective_sample_size(&b).unwrap().value;
        let s = effective_sample_size_chains(&[a, b]).unwrap();
        assert!((s.value - ea - eb).abs() < 1e-9);
    }
}
