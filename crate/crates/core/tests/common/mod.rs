//! Oracles shared by the integration tests.
#![allow(dead_code)]

use smoothgauge::graph::AdjacencyGraph;
use smoothgauge::mcmc::{
    effective_sample_size_chains, fit, posterior_rate_means, AreaDataset, HyperPriors, McmcConfig,
    VariancePrior,
};
use smoothgauge::priors::PriorKind;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn softplus(y: f64) -> f64 {
    if y > 0.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Exact posterior of `x = α + κ` for one area with α flat on (−20, 20) and
/// κ ~ N(0, σ²), tabulated on a fine grid: (grid, cdf, mean of r).
pub fn quadrature_oracle(o: f64, n: f64, sigma2: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let sd = sigma2.sqrt();
    let std = Normal::new(0.0, 1.0).unwrap();
    let mode = (o / n).ln();
    let width = 15.0 / o.sqrt();
    let m = 40_001;
    let h = 2.0 * width / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|k| mode - width + k as f64 * h).collect();
    let logd: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let prior = std.cdf((x + 20.0) / sd) - std.cdf((x - 20.0) / sd);
            -o * softplus(-x) - n * logistic(x) + prior.ln()
        })
        .collect();
    let top = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logd.iter().map(|l| (l - top).exp()).collect();
    let mut cdf = vec![0.0; m];
    let mut mean_num = 0.0;
    for k in 1..m {
        let seg = 0.5 * (dens[k] + dens[k - 1]) * h;
        cdf[k] = cdf[k - 1] + seg;
        mean_num += 0.5 * (dens[k] * logistic(grid[k]) + dens[k - 1] * logistic(grid[k - 1])) * h;
    }
    let total = cdf[m - 1];
    let mean = mean_num / total;
    for c in cdf.iter_mut() {
        *c /= total;
    }
    (grid, cdf, mean)
}

pub fn interp(grid: &[f64], cdf: &[f64], x: f64) -> f64 {
    if x <= grid[0] {
        return 0.0;
    }
    if x >= grid[grid.len() - 1] {
        return 1.0;
    }
    let h = grid[1] - grid[0];
    let k = ((x - grid[0]) / h).floor() as usize;
    let t = (x - grid[k]) / h;
    cdf[k] + t * (cdf[k + 1] - cdf[k])
}

pub struct Calibration {
    pub ks: f64,
    pub ess: f64,
    pub mean: f64,
    pub oracle_mean: f64,
    pub mcse: f64,
}

/// One area, O=50, n=1e5, fixed σ²=0.1: sampler output against the quadrature oracle.
pub fn single_area_calibration(seed: u64) -> Calibration {
    let (o, n, sigma2) = (50u64, 1e5, 0.1);
    let g = AdjacencyGraph::from_edges(vec!["only".into()], &[]).unwrap();
    let data = AreaDataset::new(g, vec![o], vec![n]).unwrap();
    let hyper = HyperPriors {
        sigma: VariancePrior::Fixed { value: sigma2 },
        ..Default::default()
    };
    let cfg = McmcConfig {
        chains: 4,
        iterations: 200_000,
        burn_in: 5_000,
        thin: 10,
        seed,
        ..Default::default()
    };
    let s = fit(&data, PriorKind::Iid, &hyper, &cfg).unwrap();
    let (grid, cdf, oracle_mean) = quadrature_oracle(o as f64, n, sigma2);

    let rates = s.scalar_draws("r[only]").unwrap();
    let ess = effective_sample_size_chains(&rates).unwrap().value;
    let mut xs: Vec<f64> = rates.iter().flatten().map(|r| (r / (1.0 - r)).ln()).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total = xs.len() as f64;
    let mut ks: f64 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let f = interp(&grid, &cdf, x);
        ks = ks.max((f - k as f64 / total).abs()).max((f - (k + 1) as f64 / total).abs());
    }
    let all: Vec<f64> = rates.iter().flatten().copied().collect();
    let mean = posterior_rate_means(&s).unwrap()[0];
    let var = all.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (all.len() as f64 - 1.0);
    Calibration {
        ks,
        ess,
        mean,
        oracle_mean,
        mcse: (var / ess).sqrt(),
    }
}
