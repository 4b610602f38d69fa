//! Synthetic rate surfaces and replicate count datasets.
//!
//! A logit-scale surface `φ(s) ~ N(μ(s), σ_C² R)` is drawn on a fine grid,
//! with `μ` declining exponentially away from a set of exposure sites and `R`
//! a Matérn correlation. Area rates average `logistic(φ)` over each area's
//! grid points; counts are Poisson given those rates.

use std::collections::HashMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{collection_bbox, square_lattice, BBox, Point, Region};
use crate::numerics::{cholesky_psd, matern, sample_mvn, SymMatrix};

/// Average number of grid points per area targeted by [`auto_grid`].
pub const DEFAULT_POINTS_PER_AREA: usize = 25;

/// Regular grid of points clipped to a set of regions.
#[derive(Debug, Clone)]
pub struct Grid {
    pub points: Vec<Point>,
    /// Index of the containing area for each point.
    pub membership: Vec<usize>,
    pub area_ids: Vec<String>,
    pub resolution: usize,
    pub spacing: f64,
    /// Diagonal of the regions' bounding box.
    pub diameter: f64,
}

impl Grid {
    pub fn area_count(&self) -> usize {
        self.area_ids.len()
    }

    pub fn points_per_area(&self) -> Vec<usize> {
        let mut c = vec![0; self.area_ids.len()];
        for &m in &self.membership {
            c[m] += 1;
        }
        c
    }
}

fn lattice_points(b: &BBox, resolution: usize) -> (Vec<Point>, f64) {
    let w = b.width();
    let h = b.height();
    let step = w.max(h) / resolution as f64;
    let nx = ((w / step).round() as usize).max(1);
    let ny = ((h / step).round() as usize).max(1);
    let mut pts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            pts.push([b.min[0] + (i as f64 + 0.5) * step, b.min[1] + (j as f64 + 0.5) * step]);
        }
    }
    (pts, step)
}

/// Cell-centre lattice with `resolution` points along the longer side of the
/// bounding box, keeping points that fall inside some region.
pub fn make_grid(regions: &[Region], resolution: usize) -> Result<Grid> {
    if regions.is_empty() {
        return Err(Error::input("no regions to grid"));
    }
    if resolution == 0 {
        return Err(Error::input("grid resolution must be positive"));
    }
    let b = collection_bbox(regions);
    let (candidates, spacing) = lattice_points(&b, resolution);
    let mut points = Vec::new();
    let mut membership = Vec::new();
    for p in candidates {
        if let Some(a) = regions.iter().position(|r| r.contains(p)) {
            points.push(p);
            membership.push(a);
        }
    }
    let grid = Grid {
        points,
        membership,
        area_ids: regions.iter().map(|r| r.id.clone()).collect(),
        resolution,
        spacing,
        diameter: b.diameter(),
    };
    let counts = grid.points_per_area();
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::data(format!(
            "area '{}' contains no grid points at resolution {resolution}; use a finer resolution",
            grid.area_ids[i]
        )));
    }
    Ok(grid)
}

/// Grid with about `per_area` points per area on average, refined until every
/// area holds at least one point.
pub fn auto_grid(regions: &[Region], per_area: usize) -> Result<Grid> {
    if regions.is_empty() {
        return Err(Error::input("no regions to grid"));
    }
    let b = collection_bbox(regions);
    let covered: f64 = regions.iter().map(Region::area).sum();
    let box_area = b.width().max(f64::MIN_POSITIVE) * b.height().max(f64::MIN_POSITIVE);
    let side = b.width().max(b.height());
    let aspect = side * side / box_area;
    let target = (per_area.max(1) * regions.len()) as f64 * aspect * box_area / covered.max(f64::MIN_POSITIVE);
    let mut res = (target.sqrt().ceil() as usize).max(1);
    for _ in 0..12 {
        match make_grid(regions, res) {
            Ok(g) => return Ok(g),
            Err(Error::Data(_)) => res = (res as f64 * 1.5).ceil() as usize,
            Err(e) => return Err(e),
        }
    }
    make_grid(regions, res)
}

/// Synthetic scenario definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    /// Points along the longer side; `None` picks [`DEFAULT_POINTS_PER_AREA`]
    /// points per area.
    #[serde(default)]
    pub grid_resolution: Option<usize>,
    pub exposure_sites: Vec<Point>,
    /// `μ₀` on the logit scale.
    pub mean_base: f64,
    pub mean_amplitude: f64,
    /// Decay length `h`; `None` means 0.2 × region diameter.
    #[serde(default)]
    pub mean_decay: Option<f64>,
    pub sigma_c: f64,
    pub matern_v: f64,
    pub matern_phi: f64,
    pub populations: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self, areas: usize) -> Result<()> {
        if self.exposure_sites.is_empty() {
            return Err(Error::input("scenario needs at least one exposure site"));
        }
        if !(self.sigma_c > 0.0) {
            return Err(Error::input(format!("sigma_c must be positive, got {}", self.sigma_c)));
        }
        if !(self.matern_v > 0.0 && self.matern_phi > 0.0) {
            return Err(Error::input("Matérn smoothness and decay must be positive"));
        }
        if let Some(h) = self.mean_decay {
            if !(h > 0.0) {
                return Err(Error::input(format!("mean_decay must be positive, got {h}")));
            }
        }
        if self.populations.len() != areas {
            return Err(Error::data(format!(
                "scenario has {} populations for {areas} areas",
                self.populations.len()
            )));
        }
        if self.populations.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::data("populations must be positive"));
        }
        if self.replicates == 0 {
            return Err(Error::input("need at least one replicate"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Same surface with roughly half the rate variability: amplitude and
    /// `σ_C` are halved.
    pub fn low_variance(&self) -> Self {
        ScenarioSpec {
            name: format!("{}-lowvar", self.name),
            mean_amplitude: 0.5 * self.mean_amplitude,
            sigma_c: 0.5 * self.sigma_c,
            ..self.clone()
        }
    }
}

/// `logit(0.0002)`.
pub fn default_mean_base() -> f64 {
    (0.0002f64 / (1.0 - 0.0002)).ln()
}

fn site(b: &BBox, fx: f64, fy: f64) -> Point {
    [b.min[0] + fx * b.width(), b.min[1] + fy * b.height()]
}

/// Named presets placing exposure sites at fixed fractions of the regions'
/// bounding box (`x` west→east, `y` south→north). Site positions are
/// approximate stand-ins.
///
/// * `scenario1`: two nearby sites in the south-east, `v = 2`.
/// * `scenario2`: five spread-out sites, `v = 2`.
/// * `scenario3`: as `scenario2` with `v = 1.25`.
/// * `scenario4`..`scenario6`: low-variance versions of 1..3.
pub fn preset(name: &str, regions: &[Region], populations: Vec<f64>, replicates: usize, seed: u64) -> Result<ScenarioSpec> {
    let b = collection_bbox(regions);
    let spread = vec![
        site(&b, 0.15, 0.85),
        site(&b, 0.85, 0.15),
        site(&b, 0.5, 0.5),
        site(&b, 0.2, 0.25),
        site(&b, 0.8, 0.75),
    ];
    let base = |n: &str, sites: Vec<Point>, v: f64| ScenarioSpec {
        name: n.to_string(),
        grid_resolution: None,
        exposure_sites: sites,
        mean_base: default_mean_base(),
        mean_amplitude: 1.0,
        mean_decay: None,
        sigma_c: 0.1,
        matern_v: v,
        matern_phi: 2.0,
        populations: populations.clone(),
        replicates,
        seed,
    };
    let s1 = base("scenario1", vec![site(&b, 0.9, 0.1), site(&b, 0.75, 0.2)], 2.0);
    let s2 = base("scenario2", spread.clone(), 2.0);
    let s3 = base("scenario3", spread, 1.25);
    let spec = match name {
        "scenario1" => s1,
        "scenario2" => s2,
        "scenario3" => s3,
        "scenario4" => ScenarioSpec { name: "scenario4".into(), ..s1.low_variance() },
        "scenario5" => ScenarioSpec { name: "scenario5".into(), ..s2.low_variance() },
        "scenario6" => ScenarioSpec { name: "scenario6".into(), ..s3.low_variance() },
        _ => {
            return Err(Error::input(format!(
                "unknown preset '{name}'; expected scenario1..scenario6"
            )))
        }
    };
    spec.validate(regions.len())?;
    Ok(spec)
}

/// Mean surface `μ₀ + a·Σ_k exp(−‖s − c_k‖ / h)`.
pub fn mean_surface(grid: &Grid, spec: &ScenarioSpec) -> Result<Vec<f64>> {
    if spec.exposure_sites.is_empty() {
        return Err(Error::input("scenario needs at least one exposure site"));
    }
    let h = spec.mean_decay.unwrap_or(0.2 * grid.diameter);
    Ok(grid
        .points
        .iter()
        .map(|p| {
            let bump: f64 = spec
                .exposure_sites
                .iter()
                .map(|c| (-((p[0] - c[0]).hypot(p[1] - c[1])) / h).exp())
                .sum();
            spec.mean_base + spec.mean_amplitude * bump
        })
        .collect())
}

/// Lower Cholesky factor of `σ_C² R` on the grid, with Matérn values shared
/// between equal distances.
pub fn surface_factor(grid: &Grid, spec: &ScenarioSpec) -> Result<nalgebra::DMatrix<f64>> {
    let n = grid.points.len();
    let s2 = spec.sigma_c * spec.sigma_c;
    let mut memo: HashMap<u64, f64> = HashMap::new();
    let mut cov = SymMatrix::identity(n).into_matrix() * s2;
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (grid.points[i], grid.points[j]);
            let d = (a[0] - b[0]).hypot(a[1] - b[1]);
            // regular grids repeat distances; key on a rounded value
            let key = (d / grid.spacing * 1e9).round() as u64;
            let rho = *memo
                .entry(key)
                .or_insert_with(|| matern(d, spec.matern_v, spec.matern_phi));
            cov[(i, j)] = s2 * rho;
            cov[(j, i)] = s2 * rho;
        }
    }
    let f = cholesky_psd(&SymMatrix::new(cov)?, 0.0)?;
    if f.jitter > 0.0 {
        log::info!("surface covariance needed jitter {:e}", f.jitter);
    }
    Ok(f.lower)
}

/// One draw of `φ ~ N(μ, σ_C² R)`.
pub fn sample_surface<R: rand::Rng + ?Sized>(
    grid: &Grid,
    spec: &ScenarioSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mu = mean_surface(grid, spec)?;
    let l = surface_factor(grid, spec)?;
    sample_mvn(&mu, &l, rng)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Area rates: mean of `logistic(φ)` over each area's points.
pub fn aggregate_rates(phi: &[f64], membership: &[usize], areas: usize) -> Result<Vec<f64>> {
    if phi.len() != membership.len() {
        return Err(Error::input("surface and membership lengths differ"));
    }
    let mut sum = vec![0.0; areas];
    let mut cnt = vec![0usize; areas];
    for (&v, &m) in phi.iter().zip(membership) {
        if m >= areas {
            return Err(Error::input(format!("membership index {m} out of range")));
        }
        sum[m] += logistic(v);
        cnt[m] += 1;
    }
    if let Some(i) = cnt.iter().position(|&c| c == 0) {
        return Err(Error::data(format!("area {i} has no grid points")));
    }
    Ok(sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect())
}

/// True rates with `B` independent Poisson count vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSet {
    pub area_ids: Vec<String>,
    pub populations: Vec<f64>,
    pub true_rates: Vec<f64>,
    /// `counts[b][i]`
    pub counts: Vec<Vec<u64>>,
    pub seed: u64,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
}

impl ReplicateSet {
    pub fn replicates(&self) -> usize {
        self.counts.len()
    }

    /// `area_id,replicate,count`
    pub fn write_counts_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["area_id", "replicate", "count"]).map_err(io)?;
        for (b, row) in self.counts.iter().enumerate() {
            for (id, c) in self.area_ids.iter().zip(row) {
                w.write_record([id.as_str(), &b.to_string(), &c.to_string()]).map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `area_id,population,rate`
    pub fn write_rates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["area_id", "population", "rate"]).map_err(io)?;
        for ((id, p), r) in self.area_ids.iter().zip(&self.populations).zip(&self.true_rates) {
            w.write_record([id.as_str(), &p.to_string(), &r.to_string()]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn poisson(lambda: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    if lambda == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(lambda)
        .map_err(|e| Error::numerical(format!("Poisson mean {lambda}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// `O_i^b ~ Poisson(n_i r_i)`; replicate `b` uses ChaCha8 stream `b + 1` of
/// `seed`, so the result does not depend on thread count.
pub fn replicate_counts(
    area_ids: &[String],
    rates: &[f64],
    populations: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<ReplicateSet> {
    if rates.len() != populations.len() || rates.len() != area_ids.len() {
        return Err(Error::data("rates, populations and ids must have equal length"));
    }
    if rates.iter().any(|&r| !(0.0..1.0).contains(&r)) {
        return Err(Error::data("rates must lie in [0, 1)"));
    }
    if populations.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::data("populations must be positive"));
    }
    let counts = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            rates
                .iter()
                .zip(populations)
                .map(|(r, n)| poisson(n * r, &mut rng))
                .collect::<Result<Vec<u64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateSet {
        area_ids: area_ids.to_vec(),
        populations: populations.to_vec(),
        true_rates: rates.to_vec(),
        counts,
        seed,
        scenario: None,
    })
}

/// Full pipeline: grid, one surface draw (stream 0), area rates, replicates.
pub fn simulate(regions: &[Region], spec: &ScenarioSpec) -> Result<ReplicateSet> {
    spec.validate(regions.len())?;
    let grid = match spec.grid_resolution {
        Some(r) => make_grid(regions, r)?,
        None => auto_grid(regions, DEFAULT_POINTS_PER_AREA)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phi = sample_surface(&grid, spec, &mut rng)?;
    let rates = aggregate_rates(&phi, &grid.membership, grid.area_count())?;
    let mut set = replicate_counts(&grid.area_ids, &rates, &spec.populations, spec.replicates, spec.seed)?;
    set.scenario = Some(spec.clone());
    Ok(set)
}

/// Unit-cell lattice regions, for desk-scale runs.
pub fn lattice_regions(rows: usize, cols: usize) -> Vec<Region> {
    square_lattice(rows, cols, 1.0)
}
