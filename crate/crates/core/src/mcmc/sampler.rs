//! Single-chain adaptive random-walk Metropolis-within-Gibbs.
//!
//! Every scalar (α, each effect value, each free hyperparameter) gets its own
//! Gaussian random-walk proposal whose log scale follows a Robbins-Monro
//! recursion toward the target acceptance rate.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{AreaDataset, ChainDraws, HyperPriors, McmcConfig, ParamPrior, ProposalScales, VariancePrior};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::numerics::{sym_eigen, SymMatrix, DEFAULT_REL_TOL};
use crate::priors::{PriorCache, PriorKind, PriorSpec};

/// α is flat on `(−ALPHA_BOUND, ALPHA_BOUND)`.
pub(crate) const ALPHA_BOUND: f64 = 20.0;
const GP_CACHE_CAP: usize = 64;
/// ψ grid spacing relative to the largest centroid distance.
const GP_QUANTUM: f64 = 1e-4;
const LOG_STEP_MIN: f64 = -12.0;
const LOG_STEP_MAX: f64 = 6.0;

fn softplus(y: f64) -> f64 {
    if y > 0.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    super::logistic(x)
}

/// Poisson log-likelihood of one area, up to a constant.
fn area_ll(o: f64, n: f64, x: f64) -> f64 {
    -o * softplus(-x) - n * logistic(x)
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    /// `θ = lo + (hi − lo)·logistic(z)`, squared when `square`.
    Free { lo: f64, hi: f64, square: bool },
    Fixed(f64),
}

impl Transform {
    fn from_variance(p: VariancePrior) -> Self {
        match p {
            VariancePrior::SdUniform { low, high } => Transform::Free {
                lo: low,
                hi: high,
                square: true,
            },
            VariancePrior::VarianceUniform { low, high } => Transform::Free {
                lo: low,
                hi: high,
                square: false,
            },
            VariancePrior::Fixed { value } => Transform::Fixed(value),
        }
    }

    fn from_param(p: ParamPrior) -> Self {
        match p {
            ParamPrior::Uniform { low, high } => Transform::Free {
                lo: low,
                hi: high,
                square: false,
            },
            ParamPrior::Fixed { value } => Transform::Fixed(value),
        }
    }

    fn is_free(&self) -> bool {
        matches!(self, Transform::Free { .. })
    }

    /// Value at `z`, or `None` when rounding puts it on the boundary.
    fn value(&self, z: f64) -> Option<f64> {
        match *self {
            Transform::Free { lo, hi, square } => {
                let t = lo + (hi - lo) * logistic(z);
                if !(t > lo && t < hi) {
                    return None;
                }
                Some(if square { t * t } else { t })
            }
            Transform::Fixed(v) => Some(v),
        }
    }

    /// Log Jacobian of the logistic map.
    fn log_jac(&self, z: f64) -> f64 {
        match *self {
            Transform::Free { lo, hi, .. } => (hi - lo).ln() - softplus(-z) - softplus(z),
            Transform::Fixed(_) => 0.0,
        }
    }
}

struct GpEntry {
    q: DMatrix<f64>,
    half_logdet: f64,
}

/// FIFO cache of `R(ψ)⁻¹` keyed by ψ on a fixed grid.
struct GpCache {
    quantum: f64,
    map: HashMap<i64, Arc<GpEntry>>,
    order: VecDeque<i64>,
}

impl GpCache {
    fn new(max_distance: f64) -> Self {
        GpCache {
            quantum: GP_QUANTUM * max_distance,
            map: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    fn get(&mut self, cache: &PriorCache<'_>, psi: f64) -> Option<Arc<GpEntry>> {
        let key = ((psi / self.quantum).round() as i64).max(1);
        if let Some(e) = self.map.get(&key) {
            return Some(e.clone());
        }
        let r = cache.gp_correlation(key as f64 * self.quantum).ok()?;
        let chol = nalgebra::Cholesky::new(r.into_matrix())?;
        let l = chol.l_dirty();
        let half_logdet = -(0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        let entry = Arc::new(GpEntry {
            q: chol.inverse(),
            half_logdet,
        });
        self.map.insert(key, entry.clone());
        self.order.push_back(key);
        if self.order.len() > GP_CACHE_CAP {
            if let Some(old) = self.order.pop_front() {
                self.map.remove(&old);
            }
        }
        Some(entry)
    }
}

#[derive(Clone)]
enum Prec {
    /// `Q = diag(p·w + q) − c·W`
    Sparse { p: f64, q: f64, c: f64 },
    Dense(Arc<GpEntry>),
}

/// Hyperparameter-dependent description of one latent field: it contributes
/// `coef·values` to the linear predictor and has density
/// `N(0, var·Q⁻)` with `rank` and `½ log|Q|` given.
#[derive(Clone)]
struct FieldParams {
    var: f64,
    coef: f64,
    prec: Prec,
    half_logdet: f64,
    rank: f64,
    intrinsic: bool,
}

/// Data and graph quantities shared by all chains.
pub(crate) struct Context<'a> {
    kind: PriorKind,
    counts: Vec<f64>,
    pops: Vec<f64>,
    graph: &'a AdjacencyGraph,
    degrees: Vec<f64>,
    cache: &'a PriorCache<'a>,
    /// Laplacian eigenvalues with numerical zeros snapped to 0.
    lap_values: Vec<f64>,
    /// Eigenvalues of `D^{-1/2} W D^{-1/2}`.
    pcar_eps: Vec<f64>,
    log_deg_sum: f64,
    icar_scale: f64,
    intrinsic_rank: f64,
    max_distance: f64,
    hypers: Vec<(&'static str, Transform)>,
}

impl<'a> Context<'a> {
    pub(crate) fn new(
        data: &'a AreaDataset,
        kind: PriorKind,
        hyper: &HyperPriors,
        psi: Option<ParamPrior>,
        cache: &'a PriorCache<'a>,
    ) -> Result<Self> {
        let graph = data.graph();
        let n = graph.order();
        let degrees: Vec<f64> = graph.degrees().iter().map(|&d| d as f64).collect();
        let mut ctx = Context {
            kind,
            counts: data.counts().iter().map(|&c| c as f64).collect(),
            pops: data.populations().to_vec(),
            graph,
            degrees,
            cache,
            lap_values: Vec::new(),
            pcar_eps: Vec::new(),
            log_deg_sum: 0.0,
            icar_scale: 1.0,
            intrinsic_rank: (n - graph.component_count()) as f64,
            max_distance: 0.0,
            hypers: vec![("sigma2", Transform::from_variance(hyper.sigma))],
        };
        match kind {
            PriorKind::Iid | PriorKind::Icar => {}
            PriorKind::Bym => ctx
                .hypers
                .push(("tau2", Transform::from_variance(hyper.tau_prior()))),
            PriorKind::Pcar => {
                ctx.hypers.push(("eta", Transform::from_param(hyper.eta)));
                let inv_sqrt: Vec<f64> = ctx.degrees.iter().map(|w| 1.0 / w.sqrt()).collect();
                let m = SymMatrix::from_fn(n, |i, j| {
                    if graph.neighbours(i).binary_search(&j).is_ok() {
                        inv_sqrt[i] * inv_sqrt[j]
                    } else {
                        0.0
                    }
                });
                ctx.pcar_eps = sym_eigen(&m)?.values;
                ctx.log_deg_sum = ctx.degrees.iter().map(|w| w.ln()).sum();
            }
            PriorKind::Lcar => {
                ctx.hypers.push(("lambda", Transform::from_param(hyper.lambda)));
                let eig = cache.laplacian_eigen()?;
                let cut = DEFAULT_REL_TOL * eig.max_abs_value().max(1.0);
                ctx.lap_values = eig
                    .values
                    .iter()
                    .map(|&g| if g > cut { g } else { 0.0 })
                    .collect();
            }
            PriorKind::Bym2 => {
                ctx.hypers.push(("lambda", Transform::from_param(hyper.lambda)));
                ctx.icar_scale = cache.icar_scale()?;
            }
            PriorKind::Gp => {
                let p = psi.ok_or_else(|| Error::input("GP prior needs a psi prior"))?;
                ctx.hypers.push(("psi", Transform::from_param(p)));
                ctx.max_distance = cache.max_distance()?;
            }
        }
        Ok(ctx)
    }

    fn order(&self) -> usize {
        self.counts.len()
    }

    fn field_names(&self) -> &'static [&'static str] {
        match self.kind {
            PriorKind::Bym | PriorKind::Bym2 => &["u", "v"],
            _ => &["kappa"],
        }
    }

    fn icar_like(&self, var: f64, coef: f64, scale: f64) -> FieldParams {
        FieldParams {
            var,
            coef,
            prec: Prec::Sparse {
                p: scale,
                q: 0.0,
                c: scale,
            },
            half_logdet: 0.0,
            rank: self.intrinsic_rank,
            intrinsic: true,
        }
    }

    fn iid_like(&self, var: f64, coef: f64) -> FieldParams {
        FieldParams {
            var,
            coef,
            prec: Prec::Sparse {
                p: 0.0,
                q: 1.0,
                c: 0.0,
            },
            half_logdet: 0.0,
            rank: self.order() as f64,
            intrinsic: false,
        }
    }

    /// Field descriptions at hyperparameter values `h`; `None` when the
    /// prior is improper or numerically unusable there.
    fn field_params(&self, h: &[f64], gp: &mut GpCache) -> Option<Vec<FieldParams>> {
        let n = self.order() as f64;
        let s2 = h[0];
        Some(match self.kind {
            PriorKind::Iid => vec![self.iid_like(s2, 1.0)],
            PriorKind::Icar => vec![self.icar_like(s2, 1.0, 1.0)],
            PriorKind::Pcar => {
                let eta = h[1];
                if eta == 1.0 {
                    vec![self.icar_like(s2, 1.0, 1.0)]
                } else {
                    let mut ld = self.log_deg_sum;
                    for e in &self.pcar_eps {
                        let t = 1.0 - eta * e;
                        if !(t > 0.0) {
                            return None;
                        }
                        ld += t.ln();
                    }
                    vec![FieldParams {
                        var: s2,
                        coef: 1.0,
                        prec: Prec::Sparse {
                            p: 1.0,
                            q: 0.0,
                            c: eta,
                        },
                        half_logdet: 0.5 * ld,
                        rank: n,
                        intrinsic: false,
                    }]
                }
            }
            PriorKind::Lcar => {
                let lam = h[1];
                if lam == 1.0 {
                    vec![self.icar_like(s2, 1.0, 1.0)]
                } else {
                    let ld: f64 = self.lap_values.iter().map(|g| (lam * g + 1.0 - lam).ln()).sum();
                    vec![FieldParams {
                        var: s2,
                        coef: 1.0,
                        prec: Prec::Sparse {
                            p: lam,
                            q: 1.0 - lam,
                            c: lam,
                        },
                        half_logdet: 0.5 * ld,
                        rank: n,
                        intrinsic: false,
                    }]
                }
            }
            PriorKind::Gp => {
                let e = gp.get(self.cache, h[1])?;
                vec![FieldParams {
                    var: s2,
                    coef: 1.0,
                    half_logdet: e.half_logdet,
                    prec: Prec::Dense(e),
                    rank: n,
                    intrinsic: false,
                }]
            }
            PriorKind::Bym => vec![self.icar_like(s2, 1.0, 1.0), self.iid_like(h[1], 1.0)],
            PriorKind::Bym2 => {
                let lam = h[1];
                vec![
                    self.icar_like(1.0, (s2 * lam).sqrt(), self.icar_scale),
                    self.iid_like(1.0, (s2 * (1.0 - lam)).sqrt()),
                ]
            }
        })
    }

    fn spec(&self, h: &[f64]) -> PriorSpec {
        let s2 = h[0];
        match self.kind {
            PriorKind::Iid => PriorSpec::Iid { sigma2: s2 },
            PriorKind::Icar => PriorSpec::Icar { sigma2: s2 },
            PriorKind::Pcar => PriorSpec::Pcar { sigma2: s2, eta: h[1] },
            PriorKind::Lcar => PriorSpec::Lcar { sigma2: s2, lambda: h[1] },
            PriorKind::Gp => PriorSpec::Gp { sigma2: s2, psi: h[1] },
            PriorKind::Bym => PriorSpec::Bym {
                sigma2: s2,
                nu: h[1] / s2,
            },
            PriorKind::Bym2 => PriorSpec::Bym2 {
                sigma2: s2,
                lambda: h[1],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    accepted: u64,
    tried: u64,
}

impl Tally {
    fn record(&mut self, accepted: bool) {
        self.tried += 1;
        self.accepted += accepted as u64;
    }

    fn rate(&self) -> f64 {
        if self.tried == 0 {
            0.0
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }
}

struct Chain<'c, 'a> {
    ctx: &'c Context<'a>,
    rng: ChaCha8Rng,
    alpha: f64,
    z: Vec<f64>,
    h: Vec<f64>,
    fp: Vec<FieldParams>,
    fields: Vec<Vec<f64>>,
    /// `Q·κ` for the dense GP field.
    qk: Vec<f64>,
    x: Vec<f64>,
    gp: GpCache,
    step_alpha: f64,
    step_fields: Vec<Vec<f64>>,
    step_hyper: Vec<f64>,
    tally_alpha: Tally,
    tally_fields: Vec<Tally>,
    tally_hyper: Vec<Tally>,
    // iteration state
    gain: f64,
    adapt: bool,
    count: bool,
    target: f64,
}

impl<'c, 'a> Chain<'c, 'a> {
    fn new(ctx: &'c Context<'a>, cfg: &McmcConfig, stream: u64) -> Result<Self> {
        let n = ctx.order();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let pooled = ctx.counts.iter().sum::<f64>() / ctx.pops.iter().sum::<f64>();
        let pooled = if pooled > 0.0 {
            pooled.min(1.0 - 1e-9)
        } else {
            0.5 / ctx.pops.iter().sum::<f64>()
        };
        let alpha = (pooled / (1.0 - pooled)).ln().clamp(-ALPHA_BOUND + 1.0, ALPHA_BOUND - 1.0);
        let z = vec![0.0; ctx.hypers.len()];
        let h = ctx
            .hypers
            .iter()
            .map(|(_, t)| t.value(0.0))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::numerical("hyperparameter initial value on its boundary"))?;
        let mut gp = GpCache::new(ctx.max_distance.max(f64::MIN_POSITIVE));
        let fp = ctx
            .field_params(&h, &mut gp)
            .ok_or_else(|| Error::numerical("non-finite log-posterior at initialization"))?;
        let n_fields = fp.len();
        let step_fields = fp
            .iter()
            .map(|f| {
                ctx.counts
                    .iter()
                    .map(|o| (1.0 / (o + 1.0).sqrt() / f.coef.max(1e-3)).clamp(0.01, 2.0).ln())
                    .collect()
            })
            .collect();
        let total: f64 = ctx.counts.iter().sum();
        let chain = Chain {
            ctx,
            rng,
            alpha,
            z,
            h,
            fp,
            fields: vec![vec![0.0; n]; n_fields],
            qk: vec![0.0; if ctx.kind == PriorKind::Gp { n } else { 0 }],
            x: vec![alpha; n],
            gp,
            step_alpha: (1.0 / (total + 1.0).sqrt()).max(0.01).ln(),
            step_fields,
            step_hyper: vec![0.5f64.ln(); ctx.hypers.len()],
            tally_alpha: Tally::default(),
            tally_fields: vec![Tally::default(); n_fields],
            tally_hyper: vec![Tally::default(); ctx.hypers.len()],
            gain: 0.0,
            adapt: false,
            count: false,
            target: cfg.target_accept,
        };
        let lp = chain.log_posterior();
        if !lp.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite log-posterior at initialization ({lp})"
            )));
        }
        Ok(chain)
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        let u: f64 = self.rng.random();
        // NaN ratios reject
        u.ln() < log_ratio
    }

    fn tune(&self, log_step: &mut f64, accepted: bool) {
        if self.adapt {
            let a = if accepted { 1.0 } else { 0.0 };
            *log_step = (*log_step + self.gain * (a - self.target)).clamp(LOG_STEP_MIN, LOG_STEP_MAX);
        }
    }

    fn loglik(&self, x: &[f64]) -> f64 {
        let c = &self.ctx;
        (0..x.len()).map(|i| area_ll(c.counts[i], c.pops[i], x[i])).sum()
    }

    fn predictor(&self, alpha: f64, fp: &[FieldParams]) -> Vec<f64> {
        let mut x = vec![alpha; self.ctx.order()];
        for (f, vals) in fp.iter().zip(&self.fields) {
            for (xi, v) in x.iter_mut().zip(vals) {
                *xi += f.coef * v;
            }
        }
        x
    }

    /// `κᵀQκ` for field `f` under `fp`, plus `Qκ` when freshly computed.
    fn quad(&self, f: usize, fp: &FieldParams) -> (f64, Option<Vec<f64>>) {
        let vals = &self.fields[f];
        match &fp.prec {
            Prec::Sparse { p, q, c } => {
                let mut sd = 0.0;
                let mut si = 0.0;
                let mut sw = 0.0;
                for (i, v) in vals.iter().enumerate() {
                    sd += self.ctx.degrees[i] * v * v;
                    si += v * v;
                    let nb: f64 = self.ctx.graph.neighbours(i).iter().map(|&j| vals[j]).sum();
                    sw += v * nb;
                }
                (p * sd + q * si - c * sw, None)
            }
            Prec::Dense(e) => {
                let same = matches!(&self.fp[f].prec, Prec::Dense(cur) if Arc::ptr_eq(cur, e));
                if same {
                    (dot(vals, &self.qk), None)
                } else {
                    let qk = mat_vec(&e.q, vals);
                    (dot(vals, &qk), Some(qk))
                }
            }
        }
    }

    fn field_log_prior(fp: &FieldParams, quad: f64) -> f64 {
        -0.5 * fp.rank * fp.var.ln() + fp.half_logdet - quad / (2.0 * fp.var)
    }

    fn log_posterior(&self) -> f64 {
        let mut lp = self.loglik(&self.x);
        for (f, fp) in self.fp.iter().enumerate() {
            let (q, _) = self.quad(f, fp);
            lp += Self::field_log_prior(fp, q);
        }
        for (k, (_, t)) in self.ctx.hypers.iter().enumerate() {
            lp += t.log_jac(self.z[k]);
        }
        lp
    }

    fn update_alpha(&mut self) {
        let d = self.step_alpha.exp() * self.normal();
        let a = self.alpha + d;
        let ok = if a.abs() < ALPHA_BOUND {
            let c = self.ctx;
            let dll: f64 = (0..self.x.len())
                .map(|i| area_ll(c.counts[i], c.pops[i], self.x[i] + d) - area_ll(c.counts[i], c.pops[i], self.x[i]))
                .sum();
            self.accept(dll)
        } else {
            false
        };
        if ok {
            self.alpha = a;
            self.x.iter_mut().for_each(|xi| *xi += d);
        }
        let mut s = self.step_alpha;
        self.tune(&mut s, ok);
        self.step_alpha = s;
        if self.count {
            self.tally_alpha.record(ok);
        }
    }

    fn update_field(&mut self, f: usize, i: usize) {
        let d = self.step_fields[f][i].exp() * self.normal();
        let v = self.fields[f][i];
        let fp = &self.fp[f];
        let dquad = match &fp.prec {
            Prec::Sparse { p, q, c } => {
                let diag = p * self.ctx.degrees[i] + q;
                let nb: f64 = self.ctx.graph.neighbours(i).iter().map(|&j| self.fields[f][j]).sum();
                diag * (2.0 * v * d + d * d) - 2.0 * c * d * nb
            }
            Prec::Dense(e) => 2.0 * d * self.qk[i] + d * d * e.q[(i, i)],
        };
        let dprior = -dquad / (2.0 * fp.var);
        let xi = self.x[i];
        let xn = xi + fp.coef * d;
        let (o, n) = (self.ctx.counts[i], self.ctx.pops[i]);
        let dll = area_ll(o, n, xn) - area_ll(o, n, xi);
        let ok = self.accept(dll + dprior);
        if ok {
            self.fields[f][i] = v + d;
            self.x[i] = xn;
            if let Prec::Dense(e) = &self.fp[f].prec {
                let col = e.q.column(i);
                for (qk, qc) in self.qk.iter_mut().zip(col.iter()) {
                    *qk += d * qc;
                }
            }
        }
        let mut s = self.step_fields[f][i];
        self.tune(&mut s, ok);
        self.step_fields[f][i] = s;
        if self.count {
            self.tally_fields[f].record(ok);
        }
    }

    fn update_hyper(&mut self, k: usize) {
        let t = self.ctx.hypers[k].1;
        let zn = self.z[k] + self.step_hyper[k].exp() * self.normal();
        let mut ok = false;
        if let Some(v) = t.value(zn) {
            let mut hn = self.h.clone();
            hn[k] = v;
            if let Some(fpn) = self.ctx.field_params(&hn, &mut self.gp) {
                let mut cur = t.log_jac(self.z[k]);
                let mut prop = t.log_jac(zn);
                let mut new_qk = None;
                for f in 0..self.fp.len() {
                    let (qc, _) = self.quad(f, &self.fp[f]);
                    cur += Self::field_log_prior(&self.fp[f], qc);
                    let (qn, fresh) = self.quad(f, &fpn[f]);
                    prop += Self::field_log_prior(&fpn[f], qn);
                    if fresh.is_some() {
                        new_qk = fresh;
                    }
                }
                let mut xn = None;
                if self.ctx.kind == PriorKind::Bym2 {
                    let x = self.predictor(self.alpha, &fpn);
                    cur += self.loglik(&self.x);
                    prop += self.loglik(&x);
                    xn = Some(x);
                }
                ok = self.accept(prop - cur);
                if ok {
                    self.z[k] = zn;
                    self.h = hn;
                    self.fp = fpn;
                    if let Some(x) = xn {
                        self.x = x;
                    }
                    if let Some(qk) = new_qk {
                        self.qk = qk;
                    }
                }
            }
        }
        let mut s = self.step_hyper[k];
        self.tune(&mut s, ok);
        self.step_hyper[k] = s;
        if self.count {
            self.tally_hyper[k].record(ok);
        }
    }

    /// Moves the mean of each intrinsic field into α, leaving `x` unchanged.
    fn recenter(&mut self) {
        for f in 0..self.fields.len() {
            if !self.fp[f].intrinsic {
                continue;
            }
            let m = self.fields[f].iter().sum::<f64>() / self.fields[f].len() as f64;
            let a = self.alpha + self.fp[f].coef * m;
            if a.abs() < ALPHA_BOUND {
                self.fields[f].iter_mut().for_each(|v| *v -= m);
                self.alpha = a;
            }
        }
        // also clears accumulated rounding in the incremental updates
        self.x = self.predictor(self.alpha, &self.fp);
    }

    fn sweep(&mut self) {
        self.update_alpha();
        for f in 0..self.fields.len() {
            for i in 0..self.ctx.order() {
                self.update_field(f, i);
            }
        }
        for k in 0..self.ctx.hypers.len() {
            if self.ctx.hypers[k].1.is_free() {
                self.update_hyper(k);
            }
        }
        self.recenter();
    }

    fn scales(&self) -> Vec<f64> {
        let mut v = vec![self.step_alpha.exp()];
        for s in &self.step_fields {
            v.extend(s.iter().map(|x| x.exp()));
        }
        for (k, (_, t)) in self.ctx.hypers.iter().enumerate() {
            if t.is_free() {
                v.push(self.step_hyper[k].exp());
            }
        }
        v
    }

    fn effect(&self) -> Vec<f64> {
        self.x.iter().map(|x| x - self.alpha).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for (j, &vj) in v.iter().enumerate() {
        if vj != 0.0 {
            for (o, mij) in out.iter_mut().zip(m.column(j).iter()) {
                *o += mij * vj;
            }
        }
    }
    out
}

pub(crate) fn run_chain(ctx: &Context<'_>, cfg: &McmcConfig, stream: u64) -> Result<ChainDraws> {
    let start = Instant::now();
    let mut chain = Chain::new(ctx, cfg, stream)?;
    let keep = cfg.saved_per_chain();
    let mut out = ChainDraws {
        iterations: Vec::with_capacity(keep),
        alpha: Vec::with_capacity(keep),
        kappa: Vec::with_capacity(keep),
        params: Vec::with_capacity(keep),
        acceptance: BTreeMap::new(),
        proposal_scales: ProposalScales {
            after_burn_in: Vec::new(),
            final_scales: Vec::new(),
        },
        elapsed_secs: 0.0,
    };
    if cfg.burn_in == 0 {
        out.proposal_scales.after_burn_in = chain.scales();
    }
    for t in 1..=cfg.iterations {
        chain.adapt = t <= cfg.burn_in || !cfg.adapt_during_burnin_only;
        chain.count = t > cfg.burn_in;
        chain.gain = (t as f64).powf(-0.6);
        chain.sweep();
        if t == cfg.burn_in {
            out.proposal_scales.after_burn_in = chain.scales();
        }
        if t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 {
            out.iterations.push(t);
            out.alpha.push(chain.alpha);
            out.kappa.push(chain.effect());
            out.params.push(ctx.spec(&chain.h));
        }
    }
    if !chain.log_posterior().is_finite() {
        return Err(Error::numerical(format!("chain {stream} ended at a non-finite log-posterior")));
    }
    out.proposal_scales.final_scales = chain.scales();
    out.acceptance.insert("alpha".into(), chain.tally_alpha.rate());
    for (name, t) in ctx.field_names().iter().zip(&chain.tally_fields) {
        out.acceptance.insert((*name).into(), t.rate());
    }
    for (k, (name, t)) in ctx.hypers.iter().enumerate() {
        if t.is_free() {
            out.acceptance.insert((*name).into(), chain.tally_hyper[k].rate());
        }
    }
    out.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(out)
}
