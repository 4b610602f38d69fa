//! The seven spatial priors: structure matrices, conditional variances,
//! total conditional variance (TCV) and prior draws of the spatial effect.
//!
//! Structures are σ²-free; σ² always multiplies the covariance from outside.
//! The GP prior uses the range form `ρ = exp(-d/ψ)`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::numerics::{
    cholesky_psd, pairwise_distances, pseudo_inverse, sym_eigen, EigenSystem, SymMatrix,
    DEFAULT_REL_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Iid,
    Gp,
    Icar,
    Bym,
    Pcar,
    Lcar,
    Bym2,
}

impl PriorKind {
    pub const ALL: [PriorKind; 7] = [
        PriorKind::Iid,
        PriorKind::Gp,
        PriorKind::Icar,
        PriorKind::Bym,
        PriorKind::Pcar,
        PriorKind::Lcar,
        PriorKind::Bym2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Iid => "iid",
            PriorKind::Gp => "gp",
            PriorKind::Icar => "icar",
            PriorKind::Bym => "bym",
            PriorKind::Pcar => "pcar",
            PriorKind::Lcar => "lcar",
            PriorKind::Bym2 => "bym2",
        }
    }

    /// Parameter names other than `sigma2` accepted by this prior.
    pub fn extra_params(self) -> &'static [&'static str] {
        match self {
            PriorKind::Iid | PriorKind::Icar => &[],
            PriorKind::Gp => &["psi"],
            PriorKind::Bym => &["nu"],
            PriorKind::Pcar => &["eta"],
            PriorKind::Lcar | PriorKind::Bym2 => &["lambda"],
        }
    }

    /// Neighbour-based priors, which need every area to have a neighbour.
    pub fn is_car(self) -> bool {
        !matches!(self, PriorKind::Iid | PriorKind::Gp)
    }

    /// True when [`PriorCache::tcv`] has a degree-only closed form.
    pub fn has_closed_form_tcv(self) -> bool {
        matches!(
            self,
            PriorKind::Iid | PriorKind::Icar | PriorKind::Pcar | PriorKind::Lcar
        )
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        PriorKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| {
                Error::input(format!(
                    "unknown prior '{s}'; expected one of iid, gp, icar, bym, pcar, lcar, bym2"
                ))
            })
    }
}

/// A fully parameterised prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorSpec {
    Iid { sigma2: f64 },
    Gp { sigma2: f64, psi: f64 },
    Icar { sigma2: f64 },
    /// `nu = τ²/σ²`
    Bym { sigma2: f64, nu: f64 },
    Pcar { sigma2: f64, eta: f64 },
    Lcar { sigma2: f64, lambda: f64 },
    Bym2 { sigma2: f64, lambda: f64 },
}

impl PriorSpec {
    /// Builds a spec from a kind and named parameters, rejecting any that do
    /// not belong to the kind.
    pub fn from_params(kind: PriorKind, sigma2: f64, extra: &[(&str, f64)]) -> Result<Self> {
        let allowed = kind.extra_params();
        for (name, _) in extra {
            if !allowed.contains(name) {
                return Err(Error::input(format!(
                    "parameter '{name}' does not apply to {kind}; allowed: sigma2{}",
                    allowed.iter().map(|p| format!(", {p}")).collect::<String>()
                )));
            }
        }
        let get = |name: &str| -> Result<f64> {
            extra
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::input(format!("{kind} needs parameter '{name}'")))
        };
        let spec = match kind {
            PriorKind::Iid => PriorSpec::Iid { sigma2 },
            PriorKind::Icar => PriorSpec::Icar { sigma2 },
            PriorKind::Gp => PriorSpec::Gp {
                sigma2,
                psi: get("psi")?,
            },
            PriorKind::Bym => PriorSpec::Bym {
                sigma2,
                nu: get("nu")?,
            },
            PriorKind::Pcar => PriorSpec::Pcar {
                sigma2,
                eta: get("eta")?,
            },
            PriorKind::Lcar => PriorSpec::Lcar {
                sigma2,
                lambda: get("lambda")?,
            },
            PriorKind::Bym2 => PriorSpec::Bym2 {
                sigma2,
                lambda: get("lambda")?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> PriorKind {
        match self {
            PriorSpec::Iid { .. } => PriorKind::Iid,
            PriorSpec::Gp { .. } => PriorKind::Gp,
            PriorSpec::Icar { .. } => PriorKind::Icar,
            PriorSpec::Bym { .. } => PriorKind::Bym,
            PriorSpec::Pcar { .. } => PriorKind::Pcar,
            PriorSpec::Lcar { .. } => PriorKind::Lcar,
            PriorSpec::Bym2 { .. } => PriorKind::Bym2,
        }
    }

    pub fn sigma2(&self) -> f64 {
        match *self {
            PriorSpec::Iid { sigma2 }
            | PriorSpec::Gp { sigma2, .. }
            | PriorSpec::Icar { sigma2 }
            | PriorSpec::Bym { sigma2, .. }
            | PriorSpec::Pcar { sigma2, .. }
            | PriorSpec::Lcar { sigma2, .. }
            | PriorSpec::Bym2 { sigma2, .. } => sigma2,
        }
    }

    pub fn with_sigma2(mut self, value: f64) -> Self {
        match &mut self {
            PriorSpec::Iid { sigma2 }
            | PriorSpec::Gp { sigma2, .. }
            | PriorSpec::Icar { sigma2 }
            | PriorSpec::Bym { sigma2, .. }
            | PriorSpec::Pcar { sigma2, .. }
            | PriorSpec::Lcar { sigma2, .. }
            | PriorSpec::Bym2 { sigma2, .. } => *sigma2 = value,
        }
        self
    }

    /// The non-σ² parameter, if any, as `(name, value)`.
    pub fn extra_param(&self) -> Option<(&'static str, f64)> {
        match *self {
            PriorSpec::Iid { .. } | PriorSpec::Icar { .. } => None,
            PriorSpec::Gp { psi, .. } => Some(("psi", psi)),
            PriorSpec::Bym { nu, .. } => Some(("nu", nu)),
            PriorSpec::Pcar { eta, .. } => Some(("eta", eta)),
            PriorSpec::Lcar { lambda, .. } | PriorSpec::Bym2 { lambda, .. } => {
                Some(("lambda", lambda))
            }
        }
    }

    /// Replaces the non-σ² parameter. No-op for kinds without one.
    pub fn with_extra(mut self, value: f64) -> Self {
        match &mut self {
            PriorSpec::Iid { .. } | PriorSpec::Icar { .. } => {}
            PriorSpec::Gp { psi: x, .. }
            | PriorSpec::Bym { nu: x, .. }
            | PriorSpec::Pcar { eta: x, .. }
            | PriorSpec::Lcar { lambda: x, .. }
            | PriorSpec::Bym2 { lambda: x, .. } => *x = value,
        }
        self
    }

    /// Checks parameter ranges that do not depend on the graph.
    pub fn validate(&self) -> Result<()> {
        let s2 = self.sigma2();
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(Error::input(format!("sigma2 must be > 0, got {s2}")));
        }
        match *self {
            PriorSpec::Gp { psi, .. } if !(psi > 0.0 && psi.is_finite()) => {
                Err(Error::input(format!("psi must be > 0, got {psi}")))
            }
            PriorSpec::Bym { nu, .. } if !(nu >= 0.0 && nu.is_finite()) => {
                Err(Error::input(format!("nu must be >= 0, got {nu}")))
            }
            PriorSpec::Pcar { eta, .. } if !eta.is_finite() => {
                Err(Error::input(format!("eta must be finite, got {eta}")))
            }
            PriorSpec::Lcar { lambda, .. } | PriorSpec::Bym2 { lambda, .. }
                if !(0.0..=1.0).contains(&lambda) =>
            {
                Err(Error::input(format!("lambda must lie in [0,1], got {lambda}")))
            }
            _ => Ok(()),
        }
    }

    /// Short label such as `lcar(sigma2=0.25, lambda=0.9)`.
    pub fn label(&self) -> String {
        match self.extra_param() {
            Some((n, v)) => format!("{}(sigma2={}, {n}={v})", self.kind(), self.sigma2()),
            None => format!("{}(sigma2={})", self.kind(), self.sigma2()),
        }
    }
}

/// σ²-free prior structure.
#[derive(Debug, Clone)]
pub struct StructureResult {
    /// Precision structure `Q`; `None` for BYM/BYM2, which are defined through
    /// the inverse of `mixture`.
    pub q: Option<SymMatrix>,
    /// Covariance structure whose (generalised) inverse is `Q` (BYM/BYM2 only).
    pub mixture: Option<SymMatrix>,
    pub singular: bool,
    pub rank: usize,
}

/// Per-graph cache of the decompositions the priors reuse.
///
/// Evaluating TCV or drawing effects for many parameter values on one graph
/// costs one eigen-decomposition of `D − W` in total.
#[derive(Debug)]
pub struct PriorCache<'g> {
    graph: &'g AdjacencyGraph,
    laplacian_eigen: OnceLock<EigenSystem>,
    icar_scale: OnceLock<f64>,
    distances: OnceLock<SymMatrix>,
}

impl<'g> PriorCache<'g> {
    pub fn new(graph: &'g AdjacencyGraph) -> Self {
        PriorCache {
            graph,
            laplacian_eigen: OnceLock::new(),
            icar_scale: OnceLock::new(),
            distances: OnceLock::new(),
        }
    }

    pub fn graph(&self) -> &'g AdjacencyGraph {
        self.graph
    }

    /// Ascending eigen-decomposition of `D − W`.
    pub fn laplacian_eigen(&self) -> Result<&EigenSystem> {
        if let Some(e) = self.laplacian_eigen.get() {
            return Ok(e);
        }
        let e = sym_eigen(&self.graph.laplacian())?;
        Ok(self.laplacian_eigen.get_or_init(|| e))
    }

    /// Cutoff below which a Laplacian eigenvalue counts as zero.
    fn laplacian_cut(&self) -> Result<f64> {
        let e = self.laplacian_eigen()?;
        Ok(DEFAULT_REL_TOL * e.max_abs_value().max(1.0))
    }

    /// Scaling constant `s` with `R* = s·(D − W)`: the geometric mean of the
    /// diagonal of the pseudo-inverse of `D − W`.
    pub fn icar_scale(&self) -> Result<f64> {
        if let Some(&s) = self.icar_scale.get() {
            return Ok(s);
        }
        self.graph.require_no_islands()?;
        let eig = self.laplacian_eigen()?;
        let cut = self.laplacian_cut()?;
        let n = self.graph.order();
        let mut log_sum = 0.0;
        for i in 0..n {
            let d: f64 = (0..n)
                .filter(|&k| eig.values[k] > cut)
                .map(|k| eig.vectors[(i, k)].powi(2) / eig.values[k])
                .sum();
            log_sum += d.ln();
        }
        let s = (log_sum / n as f64).exp();
        Ok(*self.icar_scale.get_or_init(|| s))
    }

    /// Centroid distance matrix.
    pub fn distances(&self) -> Result<&SymMatrix> {
        if let Some(d) = self.distances.get() {
            return Ok(d);
        }
        let cents = self
            .graph
            .centroids()
            .ok_or_else(|| Error::input("GP prior needs area centroids"))?;
        let d = pairwise_distances(cents)?;
        Ok(self.distances.get_or_init(|| d))
    }

    /// Largest centroid separation.
    pub fn max_distance(&self) -> Result<f64> {
        Ok(self.distances()?.max_abs())
    }

    fn check_graph(&self, spec: &PriorSpec) -> Result<()> {
        spec.validate()?;
        if spec.kind().is_car() {
            self.graph.require_no_islands()?;
        }
        if let PriorSpec::Pcar { eta, .. } = *spec {
            let (lo, hi) = pcar_eta_bounds(self.graph)?;
            if !(eta > lo && eta < hi) {
                log::warn!("pCAR eta={eta} lies outside the proper range ({lo:.4}, {hi:.4})");
            }
        }
        Ok(())
    }

    /// Exponential correlation matrix `R(ψ)`.
    pub fn gp_correlation(&self, psi: f64) -> Result<SymMatrix> {
        let d = self.distances()?;
        let n = d.order();
        for i in 0..n {
            for j in (i + 1)..n {
                if d.get(i, j) == 0.0 {
                    return Err(Error::data(format!(
                        "areas '{}' and '{}' share a centroid; GP correlation is singular",
                        self.graph.area_ids()[i],
                        self.graph.area_ids()[j]
                    )));
                }
            }
        }
        Ok(SymMatrix::from_fn(n, |i, j| (-d.get(i, j) / psi).exp()))
    }

    fn gp_precision(&self, psi: f64) -> Result<SymMatrix> {
        let r = self.gp_correlation(psi)?;
        let chol = nalgebra::Cholesky::new(r.as_matrix().clone())
            .ok_or_else(|| Error::numerical(format!("GP correlation not positive definite at psi={psi}")))?;
        SymMatrix::new(chol.inverse())
    }

    /// Diagonal of the inverse of `a·pinv(D−W) + c·I` (BYM: `a=1, c=ν`), or of
    /// `a·pinv(R*) + c·I` when `scaled` (BYM2: `a=λ, c=1−λ`). Zero eigenvalues
    /// of the mixture are dropped, giving the pseudo-inverse.
    fn mixture_inverse_diagonal(&self, a: f64, c: f64, scaled: bool) -> Result<Vec<f64>> {
        let eig = self.laplacian_eigen()?;
        let cut = self.laplacian_cut()?;
        let s = if scaled { self.icar_scale()? } else { 1.0 };
        let n = self.graph.order();
        let m: Vec<f64> = eig
            .values
            .iter()
            .map(|&g| if g > cut { a / (s * g) + c } else { c })
            .collect();
        let m_max = m.iter().cloned().fold(0.0, f64::max);
        let h: Vec<f64> = m
            .iter()
            .map(|&v| if v > DEFAULT_REL_TOL * m_max { 1.0 / v } else { 0.0 })
            .collect();
        Ok((0..n)
            .map(|i| (0..n).map(|k| eig.vectors[(i, k)].powi(2) * h[k]).sum())
            .collect())
    }

    /// σ²-free structure of the prior on this graph.
    pub fn structure(&self, spec: &PriorSpec) -> Result<StructureResult> {
        self.check_graph(spec)?;
        let n = self.graph.order();
        let components = self.graph.component_count();
        let car = |p: f64, q: f64, c: f64| -> SymMatrix {
            let g = self.graph;
            SymMatrix::from_fn(n, |i, j| {
                if i == j {
                    p * g.degree(i) as f64 + q
                } else if g.neighbours(i).binary_search(&j).is_ok() {
                    -c
                } else {
                    0.0
                }
            })
        };
        let proper = |q: SymMatrix| -> Result<StructureResult> {
            let rank = sym_eigen(&q)?.rank(DEFAULT_REL_TOL);
            Ok(StructureResult {
                q: Some(q),
                mixture: None,
                singular: rank < n,
                rank,
            })
        };
        match *spec {
            PriorSpec::Iid { .. } => Ok(StructureResult {
                q: Some(SymMatrix::identity(n)),
                mixture: None,
                singular: false,
                rank: n,
            }),
            PriorSpec::Icar { .. } => Ok(StructureResult {
                q: Some(self.graph.laplacian()),
                mixture: None,
                singular: true,
                rank: n - components,
            }),
            PriorSpec::Pcar { eta, .. } => proper(car(1.0, 0.0, eta)),
            PriorSpec::Lcar { lambda, .. } => {
                if lambda == 1.0 {
                    Ok(StructureResult {
                        q: Some(self.graph.laplacian()),
                        mixture: None,
                        singular: true,
                        rank: n - components,
                    })
                } else {
                    proper(car(lambda, 1.0 - lambda, lambda))
                }
            }
            PriorSpec::Gp { psi, .. } => Ok(StructureResult {
                q: Some(self.gp_precision(psi)?),
                mixture: None,
                singular: false,
                rank: n,
            }),
            PriorSpec::Bym { nu, .. } => {
                let pinv = pseudo_inverse(&self.graph.laplacian(), DEFAULT_REL_TOL)?;
                let mixture = pinv.add_diagonal(nu);
                let rank = if nu > 0.0 { n } else { n - components };
                Ok(StructureResult {
                    q: None,
                    mixture: Some(mixture),
                    singular: rank < n,
                    rank,
                })
            }
            PriorSpec::Bym2 { lambda, .. } => {
                let rstar = scale_icar_with(self)?;
                let pinv = pseudo_inverse(&rstar, DEFAULT_REL_TOL)?;
                let mixture = pinv.combine(lambda, &SymMatrix::identity(n), 1.0 - lambda);
                let rank = if lambda < 1.0 { n } else { n - components };
                Ok(StructureResult {
                    q: None,
                    mixture: Some(mixture),
                    singular: rank < n,
                    rank,
                })
            }
        }
    }

    /// `var(r_i | r_{-i}) = σ² / Q_ii` for every area.
    pub fn conditional_variances(&self, spec: &PriorSpec) -> Result<Vec<f64>> {
        self.check_graph(spec)?;
        let s2 = spec.sigma2();
        let g = self.graph;
        let n = g.order();
        let from_qii = |qii: Vec<f64>| qii.into_iter().map(|q| s2 / q).collect();
        Ok(match *spec {
            PriorSpec::Iid { .. } => vec![s2; n],
            PriorSpec::Icar { .. } | PriorSpec::Pcar { .. } => {
                g.degrees().into_iter().map(|w| s2 / w as f64).collect()
            }
            PriorSpec::Lcar { lambda, .. } => g
                .degrees()
                .into_iter()
                .map(|w| s2 / (lambda * (w as f64 - 1.0) + 1.0))
                .collect(),
            PriorSpec::Gp { psi, .. } => from_qii(self.gp_precision(psi)?.diagonal()),
            PriorSpec::Bym { nu, .. } => from_qii(self.mixture_inverse_diagonal(1.0, nu, false)?),
            PriorSpec::Bym2 { lambda, .. } => {
                from_qii(self.mixture_inverse_diagonal(lambda, 1.0 - lambda, true)?)
            }
        })
    }

    /// Total conditional variance `Σ σ²/Q_ii`.
    pub fn tcv(&self, spec: &PriorSpec) -> Result<f64> {
        Ok(self.conditional_variances(spec)?.iter().sum())
    }

    /// TCV computed from the assembled matrices rather than closed forms.
    /// BYM/BYM2 invert the mixture explicitly.
    pub fn tcv_matrix_path(&self, spec: &PriorSpec) -> Result<f64> {
        let st = self.structure(spec)?;
        let qii = match (&st.q, &st.mixture) {
            (Some(q), _) => q.diagonal(),
            (None, Some(m)) => pseudo_inverse(m, DEFAULT_REL_TOL)?.diagonal(),
            (None, None) => unreachable!("structure always returns q or mixture"),
        };
        Ok(qii.iter().map(|q| spec.sigma2() / q).sum())
    }

    /// One draw `κ ~ N(0, σ² Q⁻)`.
    ///
    /// Intrinsic parts are drawn on the non-null eigenspace of `D − W`, so
    /// they sum to zero within every connected component.
    pub fn sample_effects<R: Rng + ?Sized>(&self, spec: &PriorSpec, rng: &mut R) -> Result<Vec<f64>> {
        self.check_graph(spec)?;
        let n = self.graph.order();
        let sigma = spec.sigma2().sqrt();
        let normals = |rng: &mut R, k: usize| -> Vec<f64> {
            (0..k).map(|_| rng.sample(StandardNormal)).collect()
        };
        Ok(match *spec {
            PriorSpec::Iid { .. } => normals(rng, n).into_iter().map(|z| sigma * z).collect(),
            PriorSpec::Icar { .. } => self.intrinsic_draw(rng, 1.0)?.into_iter().map(|x| sigma * x).collect(),
            PriorSpec::Lcar { lambda, .. } if lambda == 1.0 => {
                self.intrinsic_draw(rng, 1.0)?.into_iter().map(|x| sigma * x).collect()
            }
            PriorSpec::Pcar { .. } | PriorSpec::Lcar { .. } => {
                let q = self.structure(spec)?.q.expect("proper CAR has Q");
                let f = cholesky_psd(&q, 0.0)?;
                let z = nalgebra::DVector::from_vec(normals(rng, n));
                let x = f
                    .lower
                    .transpose()
                    .solve_upper_triangular(&z)
                    .ok_or_else(|| Error::numerical("triangular solve failed"))?;
                x.iter().map(|v| sigma * v).collect()
            }
            PriorSpec::Gp { psi, .. } => {
                let r = self.gp_correlation(psi)?;
                let f = cholesky_psd(&r, 0.0)?;
                let z = nalgebra::DVector::from_vec(normals(rng, n));
                (&f.lower * z).iter().map(|v| sigma * v).collect()
            }
            PriorSpec::Bym { nu, .. } => {
                let u = self.intrinsic_draw(rng, 1.0)?;
                let v = normals(rng, n);
                let tau = (nu * spec.sigma2()).sqrt();
                u.iter().zip(v).map(|(a, b)| sigma * a + tau * b).collect()
            }
            PriorSpec::Bym2 { lambda, .. } => {
                let s = self.icar_scale()?;
                let u = self.intrinsic_draw(rng, s)?;
                let v = normals(rng, n);
                let (a, b) = (lambda.sqrt(), (1.0 - lambda).sqrt());
                u.iter().zip(v).map(|(x, y)| sigma * (a * x + b * y)).collect()
            }
        })
    }

    /// Draw from `N(0, pinv(scale·(D−W)))`.
    fn intrinsic_draw<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> Result<Vec<f64>> {
        self.graph.require_no_islands()?;
        let eig = self.laplacian_eigen()?;
        let cut = self.laplacian_cut()?;
        let n = self.graph.order();
        let mut out = vec![0.0; n];
        for (k, &g) in eig.values.iter().enumerate() {
            if g <= cut {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            let c = z / (scale * g).sqrt();
            for (i, o) in out.iter_mut().enumerate() {
                *o += c * eig.vectors[(i, k)];
            }
        }
        Ok(out)
    }
}

fn scale_icar_with(cache: &PriorCache<'_>) -> Result<SymMatrix> {
    let s = cache.icar_scale()?;
    Ok(cache.graph.laplacian().scaled(s))
}

/// `R* = s·(D − W)`, scaled so the geometric mean of `diag(pinv(R*))` is 1.
pub fn scale_icar(g: &AdjacencyGraph) -> Result<SymMatrix> {
    scale_icar_with(&PriorCache::new(g))
}

pub fn structure(spec: &PriorSpec, g: &AdjacencyGraph) -> Result<StructureResult> {
    PriorCache::new(g).structure(spec)
}

pub fn conditional_variances(spec: &PriorSpec, g: &AdjacencyGraph) -> Result<Vec<f64>> {
    PriorCache::new(g).conditional_variances(spec)
}

pub fn tcv(spec: &PriorSpec, g: &AdjacencyGraph) -> Result<f64> {
    PriorCache::new(g).tcv(spec)
}

pub fn sample_effects<R: Rng + ?Sized>(
    spec: &PriorSpec,
    g: &AdjacencyGraph,
    rng: &mut R,
) -> Result<Vec<f64>> {
    PriorCache::new(g).sample_effects(spec, rng)
}

/// Proper range `(1/ε_min, 1/ε_max)` for the pCAR η, where ε are the
/// eigenvalues of `D^{-1/2} W D^{-1/2}`.
pub fn pcar_eta_bounds(g: &AdjacencyGraph) -> Result<(f64, f64)> {
    g.require_no_islands()?;
    let n = g.order();
    let inv_sqrt: Vec<f64> = g.degrees().iter().map(|&w| 1.0 / (w as f64).sqrt()).collect();
    let m = SymMatrix::from_fn(n, |i, j| {
        if g.neighbours(i).binary_search(&j).is_ok() {
            inv_sqrt[i] * inv_sqrt[j]
        } else {
            0.0
        }
    });
    let e = sym_eigen(&m)?;
    let lo = e.values[0];
    let hi = e.values[n - 1];
    debug_assert!((hi - 1.0).abs() < 1e-9, "Perron eigenvalue {hi} != 1");
    Ok((1.0 / lo, 1.0 / hi))
}

/// Dense `σ²`-free covariance of the prior (pseudo-inverse for intrinsic kinds).
pub fn covariance_structure(cache: &PriorCache<'_>, spec: &PriorSpec) -> Result<DMatrix<f64>> {
    let st = cache.structure(spec)?;
    Ok(match (st.q, st.mixture) {
        (_, Some(m)) => m.into_matrix(),
        (Some(q), None) => pseudo_inverse(&q, DEFAULT_REL_TOL)?.into_matrix(),
        (None, None) => unreachable!("structure always returns q or mixture"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_connected(n: usize, extra: f64, seed: u64) -> AdjacencyGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        // random spanning tree keeps the graph connected
        for i in 1..n {
            edges.push((rng.random_range(0..i), i));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < extra {
                    edges.push((i, j));
                }
            }
        }
        let cents = (0..n)
            .map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0])
            .collect();
        AdjacencyGraph::from_edges((0..n).map(|i| format!("a{i}")).collect(), &edges)
            .unwrap()
            .with_centroids(cents)
            .unwrap()
    }

    fn max_diff(a: &SymMatrix, b: &SymMatrix) -> f64 {
        (a.as_matrix() - b.as_matrix()).amax()
    }

    #[test]
    fn kind_parsing_and_params() {
        assert_eq!("BYM2".parse::<PriorKind>().unwrap(), PriorKind::Bym2);
        assert!("car".parse::<PriorKind>().is_err());
        let s = PriorSpec::from_params(PriorKind::Lcar, 0.25, &[("lambda", 0.9)]).unwrap();
        assert_eq!(s, PriorSpec::Lcar { sigma2: 0.25, lambda: 0.9 });
        let err = PriorSpec::from_params(PriorKind::Iid, 0.1, &[("lambda", 0.5)]).unwrap_err();
        assert!(err.to_string().contains("does not apply"));
        assert!(PriorSpec::from_params(PriorKind::Bym, 0.1, &[]).is_err());
        assert!(PriorSpec::from_params(PriorKind::Lcar, 0.1, &[("lambda", 1.5)]).is_err());
        assert!(PriorSpec::from_params(PriorKind::Iid, 0.0, &[]).is_err());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"lcar","sigma2":0.25,"lambda":0.9}"#);
        assert_eq!(serde_json::from_str::<PriorSpec>(&json).unwrap(), s);
    }

    #[test]
    fn iid_structure_and_tcv() {
        let g = AdjacencyGraph::lattice(3, 4).unwrap();
        let st = structure(&PriorSpec::Iid { sigma2: 1.0 }, &g).unwrap();
        assert_eq!(max_diff(st.q.as_ref().unwrap(), &SymMatrix::identity(12)), 0.0);
        let chain: String = (0..46).map(|i| format!("a{i},a{}\n", i + 1)).collect();
        let g47 = AdjacencyGraph::from_edge_list(&chain).unwrap();
        let t = tcv(&PriorSpec::Iid { sigma2: 0.01 }, &g47).unwrap();
        assert!((t - 0.47).abs() < 1e-12);
    }

    #[test]
    fn icar_structure_properties() {
        let g = AdjacencyGraph::lattice(4, 5).unwrap();
        let st = structure(&PriorSpec::Icar { sigma2: 1.0 }, &g).unwrap();
        let q = st.q.unwrap();
        for i in 0..g.order() {
            let row: f64 = (0..g.order()).map(|j| q.get(i, j)).sum();
            assert_eq!(row, 0.0);
        }
        assert!(st.singular);
        assert_eq!(st.rank, g.order() - 1);
    }

    #[test]
    fn lcar_reductions_are_exact() {
        let g = random_connected(15, 0.1, 3);
        let icar = structure(&PriorSpec::Icar { sigma2: 1.0 }, &g).unwrap().q.unwrap();
        let l1 = structure(&PriorSpec::Lcar { sigma2: 1.0, lambda: 1.0 }, &g).unwrap().q.unwrap();
        assert_eq!(max_diff(&icar, &l1), 0.0);
        let l0 = structure(&PriorSpec::Lcar { sigma2: 1.0, lambda: 0.0 }, &g).unwrap().q.unwrap();
        assert_eq!(max_diff(&l0, &SymMatrix::identity(15)), 0.0);
    }

    #[test]
    fn closed_form_conditional_variances() {
        let g = random_connected(12, 0.2, 8);
        let cv = conditional_variances(&PriorSpec::Icar { sigma2: 0.3 }, &g).unwrap();
        for (i, v) in cv.iter().enumerate() {
            assert!((v - 0.3 / g.degree(i) as f64).abs() < 1e-15);
        }
        let spec = PriorSpec::Lcar { sigma2: 0.3, lambda: 0.4 };
        let cv = conditional_variances(&spec, &g).unwrap();
        let q = structure(&spec, &g).unwrap().q.unwrap();
        for i in 0..g.order() {
            let w = g.degree(i) as f64;
            assert!((cv[i] - 0.3 / (0.4 * (w - 1.0) + 1.0)).abs() < 1e-12);
            assert!((cv[i] - 0.3 / q.get(i, i)).abs() < 1e-12);
        }
        let icar = conditional_variances(&PriorSpec::Icar { sigma2: 0.3 }, &g).unwrap();
        for eta in [-0.9, 0.0, 0.5, 0.99] {
            let p = conditional_variances(&PriorSpec::Pcar { sigma2: 0.3, eta }, &g).unwrap();
            assert_eq!(p, icar);
        }
    }

    #[test]
    fn gp_two_sites() {
        let g = AdjacencyGraph::from_edge_list("a,b")
            .unwrap()
            .with_centroids(vec![[0.0, 0.0], [1.5, 2.0]])
            .unwrap();
        let (d, psi, s2) = (2.5, 1.7, 0.3);
        let spec = PriorSpec::Gp { sigma2: s2, psi };
        let cv = conditional_variances(&spec, &g).unwrap();
        let want = s2 * (1.0 - (-2.0 * d / psi).exp());
        for v in cv {
            assert!((v - want).abs() < 1e-12);
        }
        let rho = (-d / psi).exp();
        let q = structure(&spec, &g).unwrap().q.unwrap();
        let det = 1.0 - rho * rho;
        assert!((q.get(0, 0) - 1.0 / det).abs() < 1e-12);
        assert!((q.get(0, 1) + rho / det).abs() < 1e-12);
    }

    #[test]
    fn gp_duplicate_centroids_fail() {
        let g = AdjacencyGraph::from_edge_list("a,b")
            .unwrap()
            .with_centroids(vec![[1.0, 1.0], [1.0, 1.0]])
            .unwrap();
        assert!(tcv(&PriorSpec::Gp { sigma2: 1.0, psi: 1.0 }, &g).is_err());
        let nocent = AdjacencyGraph::from_edge_list("a,b").unwrap();
        assert!(tcv(&PriorSpec::Gp { sigma2: 1.0, psi: 1.0 }, &nocent).is_err());
    }

    #[test]
    fn islands_rejected_for_car() {
        let g = AdjacencyGraph::from_edge_list("@ a,b,c\na,b").unwrap();
        for spec in [
            PriorSpec::Icar { sigma2: 1.0 },
            PriorSpec::Lcar { sigma2: 1.0, lambda: 0.5 },
            PriorSpec::Bym2 { sigma2: 1.0, lambda: 0.5 },
        ] {
            assert!(matches!(tcv(&spec, &g), Err(Error::Island { .. })));
        }
        assert!((tcv(&PriorSpec::Iid { sigma2: 1.0 }, &g).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn scale_icar_four_cycle() {
        let g = AdjacencyGraph::lattice(2, 2).unwrap();
        let p = pseudo_inverse(&g.laplacian(), DEFAULT_REL_TOL).unwrap();
        // pinv of the 4-cycle Laplacian: diagonal 5/16 by symmetry
        for i in 0..4 {
            assert!((p.get(i, i) - 5.0 / 16.0).abs() < 1e-12);
        }
        let s = PriorCache::new(&g).icar_scale().unwrap();
        assert!((s - 5.0 / 16.0).abs() < 1e-12);
        let r = scale_icar(&g).unwrap();
        assert!(max_diff(&r, &g.laplacian().scaled(s)) < 1e-15);
    }

    #[test]
    fn scale_icar_geometric_mean_is_one() {
        let g = AdjacencyGraph::lattice(6, 6).unwrap();
        let r = scale_icar(&g).unwrap();
        let d = pseudo_inverse(&r, DEFAULT_REL_TOL).unwrap().diagonal();
        let gm = (d.iter().map(|v| v.ln()).sum::<f64>() / d.len() as f64).exp();
        assert!((gm - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bym2_limits() {
        let g = random_connected(14, 0.15, 21);
        let cv0 = conditional_variances(&PriorSpec::Bym2 { sigma2: 0.7, lambda: 0.0 }, &g).unwrap();
        for v in cv0 {
            assert!((v - 0.7).abs() < 1e-12);
        }
        let st = structure(&PriorSpec::Bym2 { sigma2: 1.0, lambda: 1.0 }, &g).unwrap();
        let pinv_r = pseudo_inverse(&scale_icar(&g).unwrap(), DEFAULT_REL_TOL).unwrap();
        assert!(max_diff(st.mixture.as_ref().unwrap(), &pinv_r) < 1e-12);
        // λ=1 conditional variances are those of the scaled iCAR
        let s = PriorCache::new(&g).icar_scale().unwrap();
        let cv1 = conditional_variances(&PriorSpec::Bym2 { sigma2: 1.0, lambda: 1.0 }, &g).unwrap();
        for i in 0..g.order() {
            assert!((cv1[i] - 1.0 / (s * g.degree(i) as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn bym_nu_zero_is_icar() {
        let g = random_connected(10, 0.2, 5);
        let a = tcv(&PriorSpec::Bym { sigma2: 0.2, nu: 0.0 }, &g).unwrap();
        let b = tcv(&PriorSpec::Icar { sigma2: 0.2 }, &g).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn pcar_bounds() {
        let g = AdjacencyGraph::lattice(1, 2).unwrap();
        let (lo, hi) = pcar_eta_bounds(&g).unwrap();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let (lo, hi) = pcar_eta_bounds(&AdjacencyGraph::lattice(2, 2).unwrap()).unwrap();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        for seed in 0..10 {
            let (lo, hi) = pcar_eta_bounds(&random_connected(12, 0.3, seed)).unwrap();
            assert!((hi - 1.0).abs() < 1e-12);
            assert!(lo <= -1.0 + 1e-12);
        }
    }

    #[test]
    fn sampling_small_variance_is_near_zero() {
        let g = AdjacencyGraph::lattice(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for spec in [
            PriorSpec::Iid { sigma2: 1e-18 },
            PriorSpec::Icar { sigma2: 1e-18 },
            PriorSpec::Bym2 { sigma2: 1e-18, lambda: 0.5 },
        ] {
            let k = sample_effects(&spec, &g, &mut rng).unwrap();
            assert!(k.iter().all(|v| v.abs() < 1e-7));
        }
    }

    #[test]
    fn icar_samples_sum_to_zero_per_component() {
        let g = AdjacencyGraph::lattice(3, 3).unwrap();
        let cache = PriorCache::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k = cache.sample_effects(&PriorSpec::Icar { sigma2: 2.0 }, &mut rng).unwrap();
            assert!(k.iter().sum::<f64>().abs() < 1e-10);
        }
        let two = AdjacencyGraph::from_edge_list("a,b\nb,c\nd,e").unwrap();
        let cache = PriorCache::new(&two);
        let k = cache.sample_effects(&PriorSpec::Icar { sigma2: 1.0 }, &mut rng).unwrap();
        assert!((k[0] + k[1] + k[2]).abs() < 1e-10);
        assert!((k[3] + k[4]).abs() < 1e-10);
    }

    #[test]
    fn iid_sample_variance() {
        let g = AdjacencyGraph::lattice(1, 3).unwrap();
        let cache = PriorCache::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let s2 = 0.4;
        let mut ss = [0.0; 3];
        for _ in 0..n {
            let k = cache.sample_effects(&PriorSpec::Iid { sigma2: s2 }, &mut rng).unwrap();
            for i in 0..3 {
                ss[i] += k[i] * k[i];
            }
        }
        let se = s2 * (2.0 / n as f64).sqrt();
        for v in ss {
            assert!((v / n as f64 - s2).abs() < 3.0 * se);
        }
    }

    #[test]
    fn sample_covariance_matches_structure() {
        // empirical covariance of draws against σ² × covariance structure
        let g = AdjacencyGraph::lattice(2, 3).unwrap();
        let cache = PriorCache::new(&g);
        let specs = [
            PriorSpec::Icar { sigma2: 0.5 },
            PriorSpec::Pcar { sigma2: 0.5, eta: 0.7 },
            PriorSpec::Lcar { sigma2: 0.5, lambda: 0.6 },
            PriorSpec::Gp { sigma2: 0.5, psi: 1.3 },
            PriorSpec::Bym { sigma2: 0.5, nu: 0.8 },
            PriorSpec::Bym2 { sigma2: 0.5, lambda: 0.3 },
        ];
        let n = 40_000;
        for spec in specs {
            let target = covariance_structure(&cache, &spec).unwrap() * spec.sigma2();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut acc = DMatrix::<f64>::zeros(6, 6);
            for _ in 0..n {
                let k = nalgebra::DVector::from_vec(cache.sample_effects(&spec, &mut rng).unwrap());
                acc += &k * k.transpose();
            }
            acc /= n as f64;
            for i in 0..6 {
                for j in 0..6 {
                    let se = ((target[(i, i)] * target[(j, j)] + target[(i, j)].powi(2)) / n as f64).sqrt();
                    assert!(
                        (acc[(i, j)] - target[(i, j)]).abs() < 4.5 * se + 1e-12,
                        "{spec:?} ({i},{j}) {} vs {}",
                        acc[(i, j)],
                        target[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = AdjacencyGraph::lattice(3, 3).unwrap();
        let spec = PriorSpec::Bym { sigma2: 0.1, nu: 1.0 };
        let a = sample_effects(&spec, &g, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_effects(&spec, &g, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    fn spec_for(kind: PriorKind, s2: f64, p: f64) -> PriorSpec {
        match kind {
            PriorKind::Iid => PriorSpec::Iid { sigma2: s2 },
            PriorKind::Icar => PriorSpec::Icar { sigma2: s2 },
            PriorKind::Gp => PriorSpec::Gp { sigma2: s2, psi: 0.2 + 5.0 * p },
            PriorKind::Bym => PriorSpec::Bym { sigma2: s2, nu: 4.0 * p },
            PriorKind::Pcar => PriorSpec::Pcar { sigma2: s2, eta: 2.0 * p - 1.0 },
            PriorKind::Lcar => PriorSpec::Lcar { sigma2: s2, lambda: p },
            PriorKind::Bym2 => PriorSpec::Bym2 { sigma2: s2, lambda: p },
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn tcv_linear_in_sigma2(n in 2usize..20, seed in any::<u64>(), c in 0.01f64..50.0, p in 0.05f64..0.95) {
            let g = random_connected(n, 0.15, seed);
            let cache = PriorCache::new(&g);
            for kind in PriorKind::ALL {
                let base = cache.tcv(&spec_for(kind, 0.3, p)).unwrap();
                let scaled = cache.tcv(&spec_for(kind, 0.3 * c, p)).unwrap();
                prop_assert!((scaled - c * base).abs() <= 1e-12 * scaled.abs().max(1.0), "{:?}", kind);
            }
        }

        #[test]
        fn lcar_tcv_non_increasing_in_lambda(n in 2usize..25, seed in any::<u64>(), l1 in 0.0f64..1.0, l2 in 0.0f64..1.0) {
            let g = random_connected(n, 0.2, seed);
            let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
            let a = tcv(&PriorSpec::Lcar { sigma2: 1.0, lambda: lo }, &g).unwrap();
            let b = tcv(&PriorSpec::Lcar { sigma2: 1.0, lambda: hi }, &g).unwrap();
            prop_assert!(b <= a + 1e-12);
        }

        #[test]
        fn matrix_path_matches_closed_form(n in 2usize..30, seed in any::<u64>(), p in 0.0f64..1.0, s2 in 0.001f64..2.0) {
            let g = random_connected(n, 0.1, seed);
            let cache = PriorCache::new(&g);
            for kind in [PriorKind::Iid, PriorKind::Icar, PriorKind::Pcar, PriorKind::Lcar] {
                let spec = spec_for(kind, s2, p.min(0.999));
                let a = cache.tcv(&spec).unwrap();
                let b = cache.tcv_matrix_path(&spec).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
            }
        }

        #[test]
        fn bym_mixture_eigen_path_matches_explicit_inverse(n in 2usize..16, seed in any::<u64>(), p in 0.01f64..0.99) {
            let g = random_connected(n, 0.2, seed);
            let cache = PriorCache::new(&g);
            for kind in [PriorKind::Bym, PriorKind::Bym2] {
                let spec = spec_for(kind, 0.5, p);
                let a = cache.tcv(&spec).unwrap();
                let b = cache.tcv_matrix_path(&spec).unwrap();
                prop_assert!((a - b).abs() <= 1e-7 * a.max(1.0), "{:?}: {} vs {}", kind, a, b);
            }
        }
    }

    #[test]
    fn bym_tcv_non_decreasing_in_nu() {
        for seed in 0..20 {
            let g = random_connected(8 + (seed as usize % 10), 0.15, 1000 + seed);
            let cache = PriorCache::new(&g);
            let t: Vec<f64> = [0.25, 1.0, 4.0]
                .iter()
                .map(|&nu| cache.tcv(&PriorSpec::Bym { sigma2: 0.1, nu }).unwrap())
                .collect();
            assert!(t[0] <= t[1] && t[1] <= t[2], "seed {seed}: {t:?}");
        }
    }
}
