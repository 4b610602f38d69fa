use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde_json::json;
use smoothgauge::geometry::{to_geojson, Region};
use smoothgauge::graph::AdjacencyGraph;
use smoothgauge::mcmc::{
    fit as fit_model, posterior_rate_means, posterior_tcv, AreaDataset, HyperPriors, McmcConfig,
};
use smoothgauge::metrics::{SmoothingReport, SpCenter};
use smoothgauge::numerics::quantiles;
use smoothgauge::pgamma::{pg_curve_study, CurveConfig, CurveInput};
use smoothgauge::priors::{PriorCache, PriorKind, PriorSpec};
use smoothgauge::simgen::{lattice_regions, preset, simulate as simulate_set, ReplicateSet, ScenarioSpec};
use smoothgauge::study::{rows_markdown, run_study, write_rows_csv, RunOptions, StudyPlan};

use crate::failure::{CmdResult, Failure};
use crate::io::{
    align, counts_from, create_dir, load_regions, parse_lattice, parse_list, read_keyed_column,
    read_text, write_file, GraphSource,
};
use crate::manifest::{DiagnosticsSummary, RunManifest};
use crate::{map as choropleth, FitArgs, GraphArgs, MapArgs, PgCurveArgs, SimulateArgs, SpCenterArg, StudyArgs, TcvArgs};

const RHAT_LIMIT: f64 = 1.1;

fn create(path: &Path) -> CmdResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", path.display())))
}

/// `<file>.manifest.json` next to a single-file output.
fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn prior_kind(s: &str) -> CmdResult<PriorKind> {
    PriorKind::from_str(s).map_err(|e| Failure::usage(e))
}

fn load_graph(args: &GraphArgs, m: &mut RunManifest) -> CmdResult<AdjacencyGraph> {
    let src = GraphSource::from_args(args.graph.as_ref(), args.lattice.as_deref())?
        .ok_or_else(|| Failure::usage("an adjacency source is required: --graph or --lattice"))?;
    if let Some(p) = src.file() {
        m.input("graph", p)?;
    }
    src.load()
}

fn sweep_values(spec: &str) -> CmdResult<(String, Vec<f64>)> {
    let bad = || Failure::usage(format!("sweep must look like lambda=0:1:11, got '{spec}'"));
    let (name, range) = spec.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    let values = if n == 1 {
        vec![lo]
    } else {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    };
    Ok((name.trim().to_string(), values))
}

pub fn tcv(a: &TcvArgs, m: &mut RunManifest) -> CmdResult<()> {
    if let Some(out) = &a.out {
        m.set_path(sibling_manifest(out));
    }
    let kind = prior_kind(&a.prior)?;
    let graph = match (a.areas, a.graph.graph.is_some() || a.graph.lattice.is_some()) {
        (Some(_), true) => return Err(Failure::usage("--A cannot be combined with --graph or --lattice")),
        (Some(n), false) => {
            if kind != PriorKind::Iid {
                return Err(Failure::usage(format!(
                    "--A only describes the iid prior; {kind} needs --graph or --lattice"
                )));
            }
            if n == 0 {
                return Err(Failure::usage("--A must be at least 1"));
            }
            AdjacencyGraph::from_edges((0..n).map(|i| format!("a{i}")).collect(), &[])?
        }
        (None, _) => load_graph(&a.graph, m)?,
    };
    let mut extras: Vec<(&str, f64)> = [("lambda", a.lambda), ("nu", a.nu), ("eta", a.eta), ("psi", a.psi)]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect();
    let (sweep_name, sweep) = match &a.sweep {
        Some(s) => {
            let (n, v) = sweep_values(s)?;
            (Some(n), v)
        }
        None => (None, vec![f64::NAN]),
    };
    let sweep_key: Option<&'static str> = match sweep_name.as_deref() {
        None => None,
        Some("sigma2") => Some("sigma2"),
        Some(n) => Some(
            kind.extra_params()
                .iter()
                .copied()
                .find(|p| *p == n)
                .ok_or_else(|| {
                    Failure::usage(format!(
                        "cannot sweep '{n}' for {kind}; allowed: sigma2{}",
                        kind.extra_params().iter().map(|p| format!(", {p}")).collect::<String>()
                    ))
                })?,
        ),
    };
    m.config = json!({"prior": kind, "areas": graph.order(), "sigma2": a.sigma2, "extras": extras, "sweep": a.sweep});
    let cache = PriorCache::new(&graph);
    let mut rows = Vec::with_capacity(sweep.len());
    for &v in &sweep {
        let mut sigma2 = a.sigma2;
        match sweep_key {
            Some("sigma2") => sigma2 = Some(v),
            Some(p) => {
                extras.retain(|(n, _)| *n != p);
                extras.push((p, v));
            }
            None => {}
        }
        let sigma2 = sigma2.ok_or_else(|| Failure::usage("--sigma2 is required unless it is swept"))?;
        let spec = PriorSpec::from_params(kind, sigma2, &extras).map_err(|e| Failure::usage(e))?;
        let value = cache.tcv(&spec)?;
        rows.push((spec, value));
    }
    let mut sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(&mut sink);
    w.write_record(["prior", "sigma2", "param", "value", "tcv", "closed_form"])?;
    for (spec, value) in &rows {
        let (pn, pv) = spec
            .extra_param()
            .map_or((String::new(), String::new()), |(n, v)| (n.to_string(), v.to_string()));
        w.write_record([
            kind.to_string(),
            spec.sigma2().to_string(),
            pn,
            pv,
            value.to_string(),
            kind.has_closed_form_tcv().to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    sink.flush()?;
    if let Some(p) = &a.out {
        m.output(p);
    }
    Ok(())
}

fn mcmc_config(a: &FitArgs, m: &mut RunManifest) -> CmdResult<McmcConfig> {
    let mut cfg = match &a.mcmc {
        Some(p) => {
            m.input("mcmc", p)?;
            serde_json::from_str::<McmcConfig>(&read_text(p)?)
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => McmcConfig::default(),
    };
    if let Some(v) = a.chains {
        cfg.chains = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.burn_in {
        cfg.burn_in = v;
    }
    if let Some(v) = a.thin {
        cfg.thin = v;
    }
    if let Some(v) = a.target_accept {
        cfg.target_accept = v;
    }
    let given = a.seed.or(a.mcmc.as_ref().map(|_| cfg.seed));
    cfg.seed = m.resolve_seed(given);
    cfg.validate().map_err(|e| Failure::usage(e))?;
    Ok(cfg)
}

fn sp_center(c: SpCenterArg) -> SpCenter {
    match c {
        SpCenterArg::Unweighted => SpCenter::Unweighted,
        SpCenterArg::Population => SpCenter::PopulationWeighted,
    }
}

pub fn fit(a: &FitArgs, m: &mut RunManifest) -> CmdResult<()> {
    create_dir(&a.out)?;
    m.set_path(a.out.join("manifest.json"));
    m.input("counts", &a.counts)?;
    m.input("populations", &a.pop)?;
    let graph = load_graph(&a.graph, m)?;
    let kind = prior_kind(&a.prior)?;
    let hyper: HyperPriors = crate::hyper::parse_hyper(&a.hyper)?;
    let cfg = mcmc_config(a, m)?;
    if !(a.rate_scale > 0.0) {
        return Err(Failure::usage("--rate-scale must be positive"));
    }
    m.config = json!({"prior": kind, "hyper": hyper, "mcmc": cfg, "rate_scale": a.rate_scale});

    let ids = graph.area_ids().to_vec();
    let counts = counts_from(&align(&ids, read_keyed_column(&a.counts, Some("count"))?, "counts")?)?;
    let pops = align(&ids, read_keyed_column(&a.pop, Some("population"))?, "population")?;
    let data = AreaDataset::new(graph.clone(), counts, pops).map_err(Failure::from_input)?;

    let t = Instant::now();
    let samples = fit_model(&data, kind, &hyper, &cfg)?;
    m.timing("sampling", t);

    let t = Instant::now();
    let scale = a.rate_scale;
    let post = posterior_rate_means(&samples)?;
    let crude = data.crude_rates();
    let report = SmoothingReport::compute(&post, &crude, scale, sp_center(a.sp_center), Some(data.populations()))?;
    let tcv = posterior_tcv(&samples, &graph)?;
    let diags = samples.diagnostics()?;

    let draws_path = a.out.join("draws.csv");
    samples.write_csv(create(&draws_path)?)?;
    m.output(&draws_path);

    let areas_path = a.out.join("areas.csv");
    let mut w = csv::Writer::from_writer(create(&areas_path)?);
    w.write_record(["area_id", "count", "population", "crude", "posterior_mean", "q05", "q95"])?;
    for (i, id) in ids.iter().enumerate() {
        let draws: Vec<f64> = samples.scalar_draws(&format!("r[{id}]"))?.concat();
        let q = quantiles(&draws, &[0.05, 0.95]);
        w.write_record([
            id.clone(),
            data.counts()[i].to_string(),
            data.populations()[i].to_string(),
            (crude[i] * scale).to_string(),
            (post[i] * scale).to_string(),
            (q[0] * scale).to_string(),
            (q[1] * scale).to_string(),
        ])?;
    }
    w.flush()?;
    m.output(&areas_path);

    let diag_path = a.out.join("diagnostics.csv");
    let mut w = csv::Writer::from_writer(create(&diag_path)?);
    w.write_record(["name", "mean", "rhat", "rhat_raw", "ess"])?;
    for d in &diags {
        w.write_record([
            d.name.clone(),
            d.mean.to_string(),
            d.rhat.map_or(String::new(), |r| r.rhat.to_string()),
            d.rhat.map_or(String::new(), |r| r.raw.to_string()),
            d.ess.value.to_string(),
        ])?;
    }
    w.flush()?;
    m.output(&diag_path);

    let hyper_means: BTreeMap<&str, f64> = diags
        .iter()
        .filter(|d| !d.name.starts_with("r["))
        .map(|d| (d.name.as_str(), d.mean))
        .collect();
    let acceptance: Vec<_> = samples.chains.iter().map(|c| &c.acceptance).collect();
    let report_path = a.out.join("report.json");
    let body = json!({
        "prior": kind,
        "areas": ids.len(),
        "rate_scale": scale,
        "smoothing": report,
        "posterior_tcv": tcv,
        "posterior_means": hyper_means,
        "acceptance": acceptance,
    });
    write_file(&report_path, serde_json::to_string_pretty(&body)?)?;
    m.output(&report_path);
    m.timing("summaries", t);

    let max_rhat = diags.iter().filter_map(|d| d.rhat.map(|r| r.rhat)).fold(None, |acc: Option<f64>, v| {
        Some(acc.map_or(v, |x| x.max(v)))
    });
    let min_ess = diags.iter().map(|d| d.ess.value).fold(None, |acc: Option<f64>, v| {
        Some(acc.map_or(v, |x| x.min(v)))
    });
    m.diagnostics = Some(DiagnosticsSummary { max_rhat, min_ess });
    println!(
        "SP {:.4}  MSS {:.4}  RMSS {:.4}  TCV {:.4}  max R-hat {}",
        report.sp,
        report.mss,
        report.rmss,
        tcv.mean,
        max_rhat.map_or("n/a".into(), |r| format!("{r:.3}"))
    );
    match max_rhat {
        Some(r) if r > RHAT_LIMIT && !a.allow_nonconverged => Err(Failure::convergence(format!(
            "max R-hat {r:.3} exceeds {RHAT_LIMIT}; outputs written, rerun longer or pass --allow-nonconverged"
        ))),
        _ => Ok(()),
    }
}

fn simulation_regions(a: &SimulateArgs, m: &mut RunManifest) -> CmdResult<(Vec<Region>, AdjacencyGraph)> {
    match (&a.polygons, &a.lattice) {
        (Some(p), None) => {
            m.input("polygons", p)?;
            let regions = load_regions(p)?;
            let g = AdjacencyGraph::from_polygons(&regions, Default::default()).map_err(Failure::from_input)?;
            Ok((regions, g))
        }
        (None, Some(l)) => {
            let (r, c) = parse_lattice(l)?;
            Ok((lattice_regions(r, c), AdjacencyGraph::lattice(r, c)?))
        }
        _ => Err(Failure::usage("give the study region with --polygons or --lattice")),
    }
}

pub fn simulate(a: &SimulateArgs, m: &mut RunManifest) -> CmdResult<()> {
    create_dir(&a.out)?;
    m.set_path(a.out.join("manifest.json"));
    let (regions, graph) = simulation_regions(a, m)?;
    let ids: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
    let pops = match &a.pop {
        Some(p) => {
            m.input("populations", p)?;
            Some(align(&ids, read_keyed_column(p, Some("population"))?, "population")?)
        }
        None => None,
    };
    let spec = match (&a.scenario, &a.preset) {
        (Some(p), None) => {
            m.input("scenario", p)?;
            let mut s = ScenarioSpec::from_json(&read_text(p)?).map_err(|e| Failure::usage(e))?;
            s.seed = m.resolve_seed(Some(a.seed.unwrap_or(s.seed)));
            if let Some(b) = a.replicates {
                s.replicates = b;
            }
            if let Some(p) = pops {
                s.populations = p;
            }
            s
        }
        (None, Some(name)) => {
            let seed = m.resolve_seed(a.seed);
            let pops = pops.unwrap_or_else(|| vec![a.population; ids.len()]);
            preset(name, &regions, pops, a.replicates.unwrap_or(50), seed).map_err(|e| Failure::usage(e))?
        }
        _ => return Err(Failure::usage("give either --scenario or --preset")),
    };
    spec.validate(regions.len()).map_err(|e| Failure::usage(e))?;
    m.config = serde_json::to_value(&spec)?;

    let t = Instant::now();
    let set = simulate_set(&regions, &spec)?;
    m.timing("simulation", t);

    let files: [(&str, Vec<u8>); 4] = [
        ("scenario.json", spec.to_json()?.into_bytes()),
        ("replicates.json", serde_json::to_vec(&set)?),
        ("regions.geojson", to_geojson(&regions).into_bytes()),
        ("graph.txt", graph.to_edge_list().into_bytes()),
    ];
    for (name, body) in files {
        let p = a.out.join(name);
        write_file(&p, body)?;
        m.output(&p);
    }
    let counts = a.out.join("counts.csv");
    set.write_counts_csv(create(&counts)?)?;
    m.output(&counts);
    let rates = a.out.join("rates.csv");
    set.write_rates_csv(create(&rates)?)?;
    m.output(&rates);
    println!("{} areas, {} replicates -> {}", set.area_ids.len(), set.replicates(), a.out.display());
    Ok(())
}

fn study_preset(name: &str, seed: u64) -> CmdResult<StudyPlan> {
    let across = |lo: f64, hi: f64, label: &str| {
        StudyPlan::desk_across(HyperPriors::with_variance_uniform(lo, hi), label, seed)
    };
    Ok(match name {
        "desk-within-icar" => StudyPlan::desk_within_icar(seed),
        "desk-within-lcar" => StudyPlan::desk_within_lcar(seed),
        "desk-across-small" => across(0.0, 0.01, "sigma2~U(0,0.01)"),
        "desk-across-medium" => across(0.01, 0.16, "sigma2~U(0.01,0.16)"),
        "desk-across-large" => across(0.16, 100.0, "sigma2~U(0.16,100)"),
        "desk-across-uniform" => across(0.0, 1000.0, "sigma2~U(0,1000)"),
        other => {
            return Err(Failure::usage(format!(
                "unknown study preset '{other}'; expected desk-within-icar, desk-within-lcar, \
                 desk-across-small, desk-across-medium, desk-across-large or desk-across-uniform"
            )))
        }
    })
}

pub fn study(a: &StudyArgs, m: &mut RunManifest) -> CmdResult<()> {
    create_dir(&a.out)?;
    m.set_path(a.out.join("manifest.json"));
    let mut plan = match (&a.plan, &a.preset) {
        (Some(p), None) => {
            m.input("plan", p)?;
            let mut plan: StudyPlan =
                serde_json::from_str(&read_text(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            plan.mcmc.seed = m.resolve_seed(Some(a.seed.unwrap_or(plan.mcmc.seed)));
            plan
        }
        (None, Some(name)) => {
            let seed = m.resolve_seed(a.seed);
            study_preset(name, seed)?
        }
        _ => return Err(Failure::usage("give either --plan or --preset")),
    };
    if a.b.is_some() {
        plan.replicates = a.b;
    }
    plan.validate().map_err(|e| Failure::usage(e))?;
    m.input("replicates", &a.replicates)?;
    let set: ReplicateSet = serde_json::from_str(&read_text(&a.replicates)?)
        .map_err(|e| Failure::data(format!("{}: {e}", a.replicates.display())))?;
    let graph = load_graph(&a.graph, m)?;
    m.config = serde_json::to_value(&plan)?;
    let plan_path = a.out.join("plan.json");
    write_file(&plan_path, serde_json::to_string_pretty(&plan)?)?;
    m.output(&plan_path);

    let opts = RunOptions {
        cache_dir: (!a.no_cache).then(|| a.out.join("cache")),
    };
    let t = Instant::now();
    let out = run_study(&plan, &set, &graph, &opts)?;
    m.timing("study", t);
    log::info!("{} jobs run, {} reused", out.jobs_run, out.jobs_cached);

    let csv_path = a.out.join("study.csv");
    write_rows_csv(&out.rows, create(&csv_path)?)?;
    m.output(&csv_path);
    let md_path = a.out.join("study.md");
    let md = rows_markdown(&out.rows);
    write_file(&md_path, &md)?;
    m.output(&md_path);
    print!("{md}");

    let max_rhat = out.rows.iter().filter_map(|r| r.max_rhat).fold(None, |acc: Option<f64>, v| {
        Some(acc.map_or(v, |x| x.max(v)))
    });
    m.diagnostics = Some(DiagnosticsSummary { max_rhat, min_ess: None });
    let failed: usize = out.rows.iter().map(|r| r.replicates_failed).sum();
    if out.rows.iter().all(|r| r.replicates_ok == 0) {
        let why = out.rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Failure::data(format!("every study job failed: {why}")));
    }
    if failed > 0 {
        eprintln!("warning: {failed} job(s) failed; see the error column of {}", csv_path.display());
    }
    Ok(())
}

pub fn pg_curve(a: &PgCurveArgs, m: &mut RunManifest) -> CmdResult<()> {
    create_dir(&a.out)?;
    m.set_path(a.out.join("manifest.json"));
    let input = match (&a.expected, &a.pop) {
        (Some(p), None) => {
            m.input("expected", p)?;
            let rbar = a.rbar.ok_or_else(|| Failure::usage("--expected needs --rbar"))?;
            let e: Vec<f64> = read_keyed_column(p, Some("expected"))?.into_iter().map(|(_, v)| v).collect();
            CurveInput::from_expected(&e, rbar).map_err(Failure::from_input)?
        }
        (None, Some(p)) => {
            m.input("populations", p)?;
            let total = a.total_cases.ok_or_else(|| Failure::usage("--pop needs --total-cases"))?;
            let n: Vec<f64> = read_keyed_column(p, Some("population"))?.into_iter().map(|(_, v)| v).collect();
            CurveInput::from_populations(n, total).map_err(Failure::from_input)?
        }
        _ => return Err(Failure::usage("give either --expected or --pop")),
    };
    let cfg = CurveConfig {
        mu_eta: parse_list(&a.mu, "--mu")?,
        sigma2_eta: parse_list(&a.sigma2, "--sigma2")?,
        replicates: a.b,
        seed: m.resolve_seed(a.seed),
        rate_scale: a.rate_scale,
    };
    cfg.validate().map_err(|e| Failure::usage(e))?;
    m.config = serde_json::to_value(&cfg)?;
    let t = Instant::now();
    let rows = pg_curve_study(&input, &cfg)?;
    m.timing("curves", t);
    let path = a.out.join("curve.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "mu_eta", "sigma2_eta", "metric", "q05", "q25", "q50", "q75", "q95", "reference_at_zero",
        "analytic_reference",
    ])?;
    for r in &rows {
        w.write_record([
            r.mu_eta.to_string(),
            r.sigma2_eta.to_string(),
            r.metric.name().to_string(),
            r.q05.to_string(),
            r.q25.to_string(),
            r.q50.to_string(),
            r.q75.to_string(),
            r.q95.to_string(),
            r.reference_at_zero.to_string(),
            r.analytic_reference.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    m.output(&path);
    Ok(())
}

pub fn map(a: &MapArgs, m: &mut RunManifest) -> CmdResult<()> {
    m.set_path(sibling_manifest(&a.out));
    if a.bins == 0 {
        return Err(Failure::usage("--bins must be at least 1"));
    }
    m.input("rates", &a.rates)?;
    m.input("polygons", &a.polygons)?;
    m.config = json!({"column": a.column, "scale": a.scale, "bins": a.bins, "title": a.title});
    let regions = load_regions(&a.polygons)?;
    let ids: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
    let values = read_keyed_column(&a.rates, a.column.as_deref())?;
    let map: std::collections::HashMap<String, f64> = values.into_iter().collect();
    let missing: Vec<&str> = ids.iter().filter(|i| !map.contains_key(*i)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Failure::data(format!(
            "no rate for polygon id(s): {}",
            missing.join(", ")
        )));
    }
    let shown: Vec<f64> = ids.iter().map(|i| map[i] * a.scale).collect();
    if shown.iter().any(|v| !v.is_finite()) {
        return Err(Failure::data("rates must be finite"));
    }
    let svg = choropleth::render_svg(&regions, &shown, a.bins, &a.title);
    write_file(&a.out, svg)?;
    m.output(&a.out);
    Ok(())
}
