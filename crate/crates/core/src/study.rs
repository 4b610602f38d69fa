//! Replicate studies: fit priors over replicate count sets and average the
//! empirical smoothing metrics per prior setting.
//!
//! `within` mode fixes every hyperparameter and pairs the metrics with the
//! prior's TCV. `across` mode samples hyperparameters under a hyperprior.
//! Each (cell, replicate) fit is an independent job; failures are recorded in
//! the row rather than aborting the study.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::mcmc::{
    fit, posterior_rate_means, posterior_tcv, AreaDataset, HyperPriors, McmcConfig, ParamPrior,
    VariancePrior,
};
use crate::metrics::{expected_metrics, ExpectedMetrics, SmoothingReport, SpCenter, DEFAULT_RATE_SCALE};
use crate::numerics::quantiles;
use crate::priors::{PriorCache, PriorKind, PriorSpec};
use crate::simgen::ReplicateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMode {
    Within,
    Across,
}

/// A prior with sampled hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcrossCell {
    pub kind: PriorKind,
    #[serde(default)]
    pub hyper: HyperPriors,
    /// Label for the hyperprior set, e.g. `small`.
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub mode: StudyMode,
    /// Fixed-parameter cells for `within`.
    #[serde(default)]
    pub within: Vec<PriorSpec>,
    /// Hyperprior cells for `across`.
    #[serde(default)]
    pub across: Vec<AcrossCell>,
    pub mcmc: McmcConfig,
    /// Use only the first `replicates` count vectors.
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Worker cap; `None` uses the global rayon pool.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_scale")]
    pub rate_scale: f64,
    #[serde(default)]
    pub sp_center: SpCenter,
}

fn default_scale() -> f64 {
    DEFAULT_RATE_SCALE
}

/// Desk-scale chain protocol: 3 chains × 6000 iterations, burn-in 1000, thin 25.
pub fn desk_mcmc(seed: u64) -> McmcConfig {
    McmcConfig {
        chains: 3,
        iterations: 6_000,
        burn_in: 1_000,
        thin: 25,
        seed,
        ..Default::default()
    }
}

/// σ² values of the iCAR/LCAR grids.
pub const DESK_SIGMA2: [f64; 5] = [1e-4, 2.5e-3, 8.1e-3, 0.04, 0.25];

impl StudyPlan {
    pub fn within(cells: Vec<PriorSpec>, mcmc: McmcConfig) -> Self {
        StudyPlan {
            mode: StudyMode::Within,
            within: cells,
            across: Vec::new(),
            mcmc,
            replicates: None,
            threads: None,
            rate_scale: DEFAULT_RATE_SCALE,
            sp_center: SpCenter::default(),
        }
    }

    pub fn across(cells: Vec<AcrossCell>, mcmc: McmcConfig) -> Self {
        StudyPlan {
            mode: StudyMode::Across,
            within: Vec::new(),
            across: cells,
            ..Self::within(Vec::new(), mcmc)
        }
    }

    /// iCAR over [`DESK_SIGMA2`].
    pub fn desk_within_icar(seed: u64) -> Self {
        Self::within(
            DESK_SIGMA2.iter().map(|&s| PriorSpec::Icar { sigma2: s }).collect(),
            desk_mcmc(seed),
        )
    }

    /// LCAR over [`DESK_SIGMA2`] × λ ∈ {0.1, 0.5, 0.9}.
    pub fn desk_within_lcar(seed: u64) -> Self {
        let mut cells = Vec::new();
        for &lambda in &[0.1, 0.5, 0.9] {
            for &s in &DESK_SIGMA2 {
                cells.push(PriorSpec::Lcar { sigma2: s, lambda });
            }
        }
        Self::within(cells, desk_mcmc(seed))
    }

    /// All seven priors under one hyperprior set.
    pub fn desk_across(hyper: HyperPriors, label: &str, seed: u64) -> Self {
        Self::across(
            PriorKind::ALL
                .iter()
                .map(|&kind| AcrossCell {
                    kind,
                    hyper,
                    label: label.to_string(),
                })
                .collect(),
            desk_mcmc(seed),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        match self.mode {
            StudyMode::Within => {
                if self.within.is_empty() || !self.across.is_empty() {
                    return Err(Error::input("within plans list fixed-parameter cells under `within` only"));
                }
                for s in &self.within {
                    s.validate()?;
                }
            }
            StudyMode::Across => {
                if self.across.is_empty() || !self.within.is_empty() {
                    return Err(Error::input("across plans list hyperprior cells under `across` only"));
                }
            }
        }
        if self.threads == Some(0) {
            return Err(Error::input("threads must be at least 1"));
        }
        Ok(())
    }

    fn cell_count(&self) -> usize {
        match self.mode {
            StudyMode::Within => self.within.len(),
            StudyMode::Across => self.across.len(),
        }
    }

    fn cell(&self, c: usize) -> (PriorKind, HyperPriors, String) {
        match self.mode {
            StudyMode::Within => {
                let s = self.within[c];
                (s.kind(), fixed_hyper(&s), s.label())
            }
            StudyMode::Across => {
                let a = &self.across[c];
                let label = if a.label.is_empty() { a.kind.to_string() } else { a.label.clone() };
                (a.kind, a.hyper, label)
            }
        }
    }
}

/// Degenerate hyperpriors that hold a spec's parameters fixed.
pub fn fixed_hyper(spec: &PriorSpec) -> HyperPriors {
    let s2 = spec.sigma2();
    let mut h = HyperPriors {
        sigma: VariancePrior::Fixed { value: s2 },
        ..Default::default()
    };
    match *spec {
        PriorSpec::Bym { nu, .. } => h.tau = Some(VariancePrior::Fixed { value: nu * s2 }),
        PriorSpec::Pcar { eta, .. } => h.eta = ParamPrior::Fixed { value: eta },
        PriorSpec::Lcar { lambda, .. } | PriorSpec::Bym2 { lambda, .. } => {
            h.lambda = ParamPrior::Fixed { value: lambda }
        }
        PriorSpec::Gp { psi, .. } => h.psi = Some(ParamPrior::Fixed { value: psi }),
        PriorSpec::Iid { .. } | PriorSpec::Icar { .. } => {}
    }
    h
}

/// One table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub prior: PriorKind,
    /// Parameter values (within) or hyperprior label (across).
    pub label: String,
    pub scenario: Option<String>,
    /// Fixed parameters, within mode only.
    pub spec: Option<PriorSpec>,
    /// Prior TCV (within) or replicate-averaged posterior mean TCV (across).
    pub tcv: Option<f64>,
    pub tcv_closed_form: bool,
    pub metrics: Option<ExpectedMetrics>,
    /// Standard error of the replicate mean MSS.
    pub mss_se: Option<f64>,
    pub sp_q05: Option<f64>,
    pub sp_q95: Option<f64>,
    pub max_rhat: Option<f64>,
    pub replicates_ok: usize,
    pub replicates_failed: usize,
    pub error: Option<String>,
    /// Digest of the replicate set, graph, plan settings and chain protocol.
    pub manifest: String,
}

/// Result of one (cell, replicate) fit, as cached on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub manifest: String,
    pub cell: usize,
    pub replicate: usize,
    pub outcome: std::result::Result<JobMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMetrics {
    pub report: SmoothingReport,
    pub max_rhat: Option<f64>,
    pub posterior_tcv: Option<f64>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content digest identifying a study's inputs.
pub fn manifest_hash(set: &ReplicateSet, graph: &AdjacencyGraph, plan: &StudyPlan) -> Result<String> {
    let body = serde_json::json!({
        "replicates": set,
        "graph": graph.to_edge_list(),
        "plan": plan,
    });
    Ok(sha256_hex(serde_json::to_string(&body)?.as_bytes()))
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of job (cell, replicate), independent of scheduling.
pub fn job_seed(seed: u64, cell: usize, replicate: usize) -> u64 {
    mix(seed ^ mix(((cell as u64) << 32) | replicate as u64))
}

fn run_job(
    plan: &StudyPlan,
    set: &ReplicateSet,
    graph: &AdjacencyGraph,
    cell: usize,
    b: usize,
) -> std::result::Result<JobMetrics, String> {
    let (kind, hyper, _) = plan.cell(cell);
    let data = AreaDataset::new(graph.clone(), set.counts[b].clone(), set.populations.clone())
        .map_err(|e| e.to_string())?;
    let cfg = McmcConfig {
        seed: job_seed(plan.mcmc.seed, cell, b),
        ..plan.mcmc
    };
    let samples = fit(&data, kind, &hyper, &cfg).map_err(|e| e.to_string())?;
    let post = posterior_rate_means(&samples).map_err(|e| e.to_string())?;
    let report = SmoothingReport::compute(
        &post,
        &data.crude_rates(),
        plan.rate_scale,
        plan.sp_center,
        Some(data.populations()),
    )
    .map_err(|e| e.to_string())?;
    let max_rhat = if cfg.chains >= 2 {
        let mut m: f64 = 1.0;
        for name in std::iter::once("alpha".to_string())
            .chain(samples.area_ids.iter().map(|id| format!("r[{id}]")))
        {
            let draws = samples.scalar_draws(&name).map_err(|e| e.to_string())?;
            let g = crate::mcmc::gelman_rubin(&draws).map_err(|e| e.to_string())?;
            if !g.degenerate {
                m = m.max(g.rhat);
            }
        }
        Some(m)
    } else {
        None
    };
    let posterior_tcv = match plan.mode {
        StudyMode::Across => Some(posterior_tcv(&samples, graph).map_err(|e| e.to_string())?.mean),
        StudyMode::Within => None,
    };
    Ok(JobMetrics {
        report,
        max_rhat,
        posterior_tcv,
    })
}

fn cache_path(dir: &Path, cell: usize, b: usize) -> PathBuf {
    dir.join(format!("cell{cell:03}_rep{b:04}.json"))
}

fn load_cached(dir: &Path, manifest: &str, cell: usize, b: usize) -> Option<JobResult> {
    let text = fs::read_to_string(cache_path(dir, cell, b)).ok()?;
    let r: JobResult = serde_json::from_str(&text).ok()?;
    (r.manifest == manifest && r.cell == cell && r.replicate == b && r.outcome.is_ok()).then_some(r)
}

/// Options for [`run_study`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory of per-job results; completed jobs with a matching manifest
    /// are reused instead of refitted.
    pub cache_dir: Option<PathBuf>,
}

/// Outcome of a study run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub rows: Vec<StudyRow>,
    pub manifest: String,
    pub jobs_run: usize,
    pub jobs_cached: usize,
}

/// Runs every (cell, replicate) job and aggregates one row per cell.
pub fn run_study(
    plan: &StudyPlan,
    set: &ReplicateSet,
    graph: &AdjacencyGraph,
    opts: &RunOptions,
) -> Result<StudyOutput> {
    plan.validate()?;
    if graph.area_ids() != set.area_ids.as_slice() {
        return Err(Error::data("replicate set areas do not match the graph (same ids, same order)"));
    }
    let reps = plan.replicates.unwrap_or(set.replicates()).min(set.replicates());
    if reps == 0 {
        return Err(Error::input("replicate set is empty"));
    }
    let manifest = manifest_hash(set, graph, plan)?;
    if let Some(d) = &opts.cache_dir {
        fs::create_dir_all(d)?;
    }
    let jobs: Vec<(usize, usize)> = (0..plan.cell_count())
        .flat_map(|c| (0..reps).map(move |b| (c, b)))
        .collect();
    let work = || {
        jobs.par_iter()
            .map(|&(c, b)| {
                if let Some(d) = &opts.cache_dir {
                    if let Some(r) = load_cached(d, &manifest, c, b) {
                        return Ok((r, true));
                    }
                }
                let r = JobResult {
                    manifest: manifest.clone(),
                    cell: c,
                    replicate: b,
                    outcome: run_job(plan, set, graph, c, b),
                };
                if let Err(e) = &r.outcome {
                    log::warn!("cell {c} replicate {b} failed: {e}");
                }
                if let Some(d) = &opts.cache_dir {
                    fs::write(cache_path(d, c, b), serde_json::to_string(&r)?)?;
                }
                Ok((r, false))
            })
            .collect::<Result<Vec<_>>>()
    };
    let results = match plan.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::input(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let jobs_cached = results.iter().filter(|(_, cached)| *cached).count();
    let cache = PriorCache::new(graph);
    let scenario = set.scenario.as_ref().map(|s| s.name.clone());
    let mut rows = Vec::with_capacity(plan.cell_count());
    for c in 0..plan.cell_count() {
        let (kind, _, label) = plan.cell(c);
        let mine: Vec<&JobResult> = results
            .iter()
            .map(|(r, _)| r)
            .filter(|r| r.cell == c)
            .collect();
        let ok: Vec<&JobMetrics> = mine.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let first_err = mine.iter().find_map(|r| r.outcome.as_ref().err().cloned());
        let reports: Vec<SmoothingReport> = ok.iter().map(|m| m.report.clone()).collect();
        let metrics = expected_metrics(&reports).ok();
        let mss_se = (reports.len() >= 2).then(|| {
            let n = reports.len() as f64;
            let m = reports.iter().map(|r| r.mss).sum::<f64>() / n;
            (reports.iter().map(|r| (r.mss - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        });
        let sps: Vec<f64> = reports.iter().map(|r| r.sp).collect();
        let spq = (!sps.is_empty()).then(|| quantiles(&sps, &[0.05, 0.95]));
        let max_rhat = ok.iter().filter_map(|m| m.max_rhat).fold(None, |a: Option<f64>, v| {
            Some(a.map_or(v, |a| a.max(v)))
        });
        let (spec, tcv, closed) = match plan.mode {
            StudyMode::Within => {
                let s = plan.within[c];
                (Some(s), cache.tcv(&s).ok(), kind.has_closed_form_tcv())
            }
            StudyMode::Across => {
                let t: Vec<f64> = ok.iter().filter_map(|m| m.posterior_tcv).collect();
                let mean = (!t.is_empty()).then(|| t.iter().sum::<f64>() / t.len() as f64);
                (None, mean, false)
            }
        };
        rows.push(StudyRow {
            prior: kind,
            label,
            scenario: scenario.clone(),
            spec,
            tcv,
            tcv_closed_form: closed,
            metrics,
            mss_se,
            sp_q05: spq.as_ref().map(|q| q[0]),
            sp_q95: spq.as_ref().map(|q| q[1]),
            max_rhat,
            replicates_ok: ok.len(),
            replicates_failed: mine.len() - ok.len(),
            error: first_err,
            manifest: manifest.clone(),
        });
    }
    if plan.mode == StudyMode::Within {
        rows.sort_by(|a, b| {
            let key = |r: &StudyRow| {
                let s = r.spec.expect("within rows carry a spec");
                (s.kind(), s.sigma2(), s.extra_param().map_or(0.0, |p| p.1))
            };
            let (ka, sa, ea) = key(a);
            let (kb, sb, eb) = key(b);
            ka.cmp(&kb).then(sa.total_cmp(&sb)).then(ea.total_cmp(&eb))
        });
    }
    Ok(StudyOutput {
        rows,
        manifest,
        jobs_run: jobs.len() - jobs_cached,
        jobs_cached,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// Table as CSV: prior, parameters, TCV, SP, MSS, RMSS, maxMSS, maxRMSS, then
/// bookkeeping columns.
pub fn write_rows_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record([
        "prior", "parameters", "scenario", "tcv", "tcv_closed_form", "sp", "mss", "rmss",
        "max_mss", "max_rmss", "mss_se", "sp_q05", "sp_q95", "max_rhat", "replicates_ok",
        "replicates_failed", "error", "manifest",
    ])
    .map_err(io)?;
    for r in rows {
        let m = r.metrics.as_ref();
        w.write_record([
            r.prior.to_string(),
            r.label.clone(),
            r.scenario.clone().unwrap_or_default(),
            opt(r.tcv),
            r.tcv_closed_form.to_string(),
            opt(m.map(|m| m.sp)),
            opt(m.map(|m| m.mss)),
            opt(m.map(|m| m.rmss)),
            opt(m.map(|m| m.max_mss)),
            opt(m.map(|m| m.max_rmss)),
            opt(r.mss_se),
            opt(r.sp_q05),
            opt(r.sp_q95),
            opt(r.max_rhat),
            r.replicates_ok.to_string(),
            r.replicates_failed.to_string(),
            r.error.clone().unwrap_or_default(),
            r.manifest.clone(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Markdown rendering of the main columns.
pub fn rows_markdown(rows: &[StudyRow]) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut s = String::from(
        "| prior | parameters | TCV | SP | MSS | RMSS | maxMSS | maxRMSS | failed |\n|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let m = r.metrics.as_ref();
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.prior,
            r.label,
            f(r.tcv),
            f(m.map(|m| m.sp)),
            f(m.map(|m| m.mss)),
            f(m.map(|m| m.rmss)),
            f(m.map(|m| m.max_mss)),
            f(m.map(|m| m.max_rmss)),
            r.replicates_failed
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{lattice_regions, preset, simulate};

    fn small_set(rows: usize, cols: usize, b: usize, seed: u64) -> (ReplicateSet, AdjacencyGraph) {
        let regs = lattice_regions(rows, cols);
        let spec = preset("scenario1", &regs, vec![1e5; rows * cols], b, seed).unwrap();
        let set = simulate(&regs, &spec).unwrap();
        let g = AdjacencyGraph::lattice(rows, cols).unwrap();
        (set, g)
    }

    fn tiny_mcmc(seed: u64) -> McmcConfig {
        McmcConfig {
            chains: 2,
            iterations: 1_100,
            burn_in: 100,
            thin: 10,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn fixed_hyper_pins_every_parameter() {
        let h = fixed_hyper(&PriorSpec::Bym { sigma2: 0.2, nu: 3.0 });
        assert_eq!(h.sigma, VariancePrior::Fixed { value: 0.2 });
        assert_eq!(h.tau, Some(VariancePrior::Fixed { value: 0.2 * 3.0 }));
        let h = fixed_hyper(&PriorSpec::Gp { sigma2: 0.1, psi: 2.0 });
        assert_eq!(h.psi, Some(ParamPrior::Fixed { value: 2.0 }));
    }

    #[test]
    fn job_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for c in 0..20 {
            for b in 0..50 {
                assert!(seen.insert(job_seed(7, c, b)));
            }
        }
    }

    #[test]
    fn within_rows_sorted_with_tcv_and_manifest() {
        let (set, g) = small_set(3, 3, 3, 1);
        let plan = StudyPlan::within(
            vec![
                PriorSpec::Lcar { sigma2: 0.04, lambda: 0.9 },
                PriorSpec::Icar { sigma2: 0.25 },
                PriorSpec::Lcar { sigma2: 0.04, lambda: 0.1 },
                PriorSpec::Icar { sigma2: 0.01 },
            ],
            tiny_mcmc(3),
        );
        let out = run_study(&plan, &set, &g, &RunOptions::default()).unwrap();
        let specs: Vec<PriorSpec> = out.rows.iter().map(|r| r.spec.unwrap()).collect();
        assert_eq!(
            specs,
            vec![
                PriorSpec::Icar { sigma2: 0.01 },
                PriorSpec::Icar { sigma2: 0.25 },
                PriorSpec::Lcar { sigma2: 0.04, lambda: 0.1 },
                PriorSpec::Lcar { sigma2: 0.04, lambda: 0.9 },
            ]
        );
        for r in &out.rows {
            // recomputed independently from the degree sequence
            let want = crate::priors::tcv(&r.spec.unwrap(), &g).unwrap();
            assert_eq!(r.tcv, Some(want));
            assert_eq!(r.replicates_ok, 3);
            assert_eq!(r.manifest, out.manifest);
            assert!(r.metrics.is_some());
        }
        let again = run_study(&plan, &set, &g, &RunOptions::default()).unwrap();
        assert_eq!(out.rows, again.rows);
    }

    #[test]
    fn failed_cells_do_not_abort() {
        let (set, _) = small_set(2, 2, 2, 2);
        // a graph with an island: CAR cells fail, iid still runs
        let g = AdjacencyGraph::from_edges(set.area_ids.clone(), &[(0, 1), (1, 2)]).unwrap();
        let plan = StudyPlan::within(
            vec![PriorSpec::Icar { sigma2: 0.1 }, PriorSpec::Iid { sigma2: 0.1 }],
            tiny_mcmc(1),
        );
        let out = run_study(&plan, &set, &g, &RunOptions::default()).unwrap();
        let icar = out.rows.iter().find(|r| r.prior == PriorKind::Icar).unwrap();
        assert_eq!(icar.replicates_failed, 2);
        assert!(icar.metrics.is_none());
        assert!(icar.error.as_ref().unwrap().contains("no neighbours"));
        let iid = out.rows.iter().find(|r| r.prior == PriorKind::Iid).unwrap();
        assert_eq!(iid.replicates_ok, 2);
    }

    #[test]
    fn cache_resumes_completed_jobs() {
        let (set, g) = small_set(2, 3, 2, 5);
        let plan = StudyPlan::within(vec![PriorSpec::Iid { sigma2: 0.05 }], tiny_mcmc(4));
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            cache_dir: Some(dir.path().to_path_buf()),
        };
        let first = run_study(&plan, &set, &g, &opts).unwrap();
        assert_eq!((first.jobs_run, first.jobs_cached), (2, 0));
        let second = run_study(&plan, &set, &g, &opts).unwrap();
        assert_eq!((second.jobs_run, second.jobs_cached), (0, 2));
        assert_eq!(first.rows, second.rows);
        // a different protocol does not reuse the cache
        let other = StudyPlan {
            mcmc: tiny_mcmc(5),
            ..plan
        };
        let third = run_study(&other, &set, &g, &opts).unwrap();
        assert_eq!(third.jobs_cached, 0);
    }

    #[test]
    fn plan_validation_and_json() {
        let p = StudyPlan::desk_within_icar(1);
        p.validate().unwrap();
        assert_eq!(p.within.len(), 5);
        let text = serde_json::to_string(&p).unwrap();
        let back: StudyPlan = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        let mut bad = p.clone();
        bad.mode = StudyMode::Across;
        assert!(bad.validate().is_err());
        let a = StudyPlan::desk_across(HyperPriors::default(), "vague", 1);
        a.validate().unwrap();
        assert_eq!(a.across.len(), 7);
        assert_eq!(StudyPlan::desk_within_lcar(1).within.len(), 15);
    }

    #[test]
    fn csv_and_markdown_shapes() {
        let (set, g) = small_set(2, 2, 2, 3);
        let plan = StudyPlan::within(vec![PriorSpec::Icar { sigma2: 0.1 }], tiny_mcmc(2));
        let out = run_study(&plan, &set, &g, &RunOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_rows_csv(&out.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("prior,parameters,scenario,tcv"));
        let md = rows_markdown(&out.rows);
        assert_eq!(md.lines().count(), 3);
    }
}
