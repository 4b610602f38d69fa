//! Empirical smoothing metrics comparing posterior mean rates with crude rates.
//!
//! Rates are multiplied by `rate_scale` (default 10⁵, i.e. per 100,000)
//! before squared differences are taken, except for SP which is scale-free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RATE_SCALE: f64 = 1e5;

fn check_lengths(post: &[f64], crude: &[f64]) -> Result<()> {
    if post.len() != crude.len() {
        return Err(Error::input(format!(
            "posterior means have {} areas but crude rates have {}",
            post.len(),
            crude.len()
        )));
    }
    if post.is_empty() {
        return Err(Error::input("no areas"));
    }
    Ok(())
}

fn check_positive(post: &[f64]) -> Result<()> {
    match post.iter().position(|&p| !(p > 0.0)) {
        Some(i) => Err(Error::input(format!(
            "posterior mean rate for area {i} is {}, must be > 0",
            post[i]
        ))),
        None => Ok(()),
    }
}

fn sq_terms<'a>(post: &'a [f64], crude: &'a [f64], scale: f64) -> impl Iterator<Item = f64> + 'a {
    post.iter()
        .zip(crude)
        .map(move |(p, c)| (scale * (p - c)).powi(2))
}

fn rel_terms<'a>(post: &'a [f64], crude: &'a [f64], scale: f64) -> impl Iterator<Item = f64> + 'a {
    post.iter()
        .zip(crude)
        .map(move |(p, c)| (scale * (p - c)).powi(2) / (scale * p))
}

/// `Σ (post − crude)²` on the scaled rate.
pub fn mss(post: &[f64], crude: &[f64], scale: f64) -> Result<f64> {
    check_lengths(post, crude)?;
    Ok(sq_terms(post, crude, scale).sum())
}

/// `Σ (post − crude)² / post` on the scaled rate.
pub fn rmss(post: &[f64], crude: &[f64], scale: f64) -> Result<f64> {
    check_lengths(post, crude)?;
    check_positive(post)?;
    Ok(rel_terms(post, crude, scale).sum())
}

pub fn max_mss(post: &[f64], crude: &[f64], scale: f64) -> Result<f64> {
    check_lengths(post, crude)?;
    Ok(sq_terms(post, crude, scale).fold(0.0, f64::max))
}

pub fn max_rmss(post: &[f64], crude: &[f64], scale: f64) -> Result<f64> {
    check_lengths(post, crude)?;
    check_positive(post)?;
    Ok(rel_terms(post, crude, scale).fold(0.0, f64::max))
}

/// Where SP centres the crude rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpCenter {
    /// Unweighted mean of the crude rates.
    #[default]
    Unweighted,
    /// Population-weighted mean, i.e. pooled rate `ΣO/Σn`.
    PopulationWeighted,
}

/// `Σ(post − crude)² / Σ(r̄ − crude)²` with `r̄` the unweighted crude mean.
pub fn smoothing_proportion(post: &[f64], crude: &[f64]) -> Result<f64> {
    check_lengths(post, crude)?;
    let center = crude.iter().sum::<f64>() / crude.len() as f64;
    smoothing_proportion_about(post, crude, center)
}

/// SP with an explicit centre.
pub fn smoothing_proportion_about(post: &[f64], crude: &[f64], center: f64) -> Result<f64> {
    check_lengths(post, crude)?;
    let den: f64 = crude.iter().map(|c| (center - c).powi(2)).sum();
    if !(den > 0.0) {
        return Err(Error::data(
            "all crude rates are equal; smoothing proportion is undefined",
        ));
    }
    Ok(sq_terms(post, crude, 1.0).sum::<f64>() / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub mss: f64,
    pub rmss: f64,
    pub max_mss: f64,
    pub max_rmss: f64,
    pub sp: f64,
    pub rate_scale: f64,
    /// Unscaled `post − crude` per area.
    pub per_area_discrepancies: Vec<f64>,
}

impl SmoothingReport {
    /// All metrics at once. `populations` is only used for the
    /// population-weighted SP centre.
    pub fn compute(
        post: &[f64],
        crude: &[f64],
        rate_scale: f64,
        center: SpCenter,
        populations: Option<&[f64]>,
    ) -> Result<Self> {
        check_lengths(post, crude)?;
        check_positive(post)?;
        if !(rate_scale > 0.0) {
            return Err(Error::input(format!("rate scale must be > 0, got {rate_scale}")));
        }
        let c = match center {
            SpCenter::Unweighted => crude.iter().sum::<f64>() / crude.len() as f64,
            SpCenter::PopulationWeighted => {
                let n = populations.ok_or_else(|| {
                    Error::input("population-weighted SP needs populations")
                })?;
                check_lengths(n, crude)?;
                let tot: f64 = n.iter().sum();
                crude.iter().zip(n).map(|(r, w)| r * w).sum::<f64>() / tot
            }
        };
        Ok(SmoothingReport {
            mss: mss(post, crude, rate_scale)?,
            rmss: rmss(post, crude, rate_scale)?,
            max_mss: max_mss(post, crude, rate_scale)?,
            max_rmss: max_rmss(post, crude, rate_scale)?,
            sp: smoothing_proportion_about(post, crude, c)?,
            rate_scale,
            per_area_discrepancies: post.iter().zip(crude).map(|(p, r)| p - r).collect(),
        })
    }
}

/// Replicate averages of the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedMetrics {
    pub mss: f64,
    pub rmss: f64,
    pub max_mss: f64,
    pub max_rmss: f64,
    pub sp: f64,
    pub replicates: usize,
}

pub fn expected_metrics(reports: &[SmoothingReport]) -> Result<ExpectedMetrics> {
    if reports.is_empty() {
        return Err(Error::input("need at least one report to average"));
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&SmoothingReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(ExpectedMetrics {
        mss: avg(|r| r.mss),
        rmss: avg(|r| r.rmss),
        max_mss: avg(|r| r.max_mss),
        max_rmss: avg(|r| r.max_rmss),
        sp: avg(|r| r.sp),
        replicates: reports.len(),
    })
}
