//! Dense symmetric linear algebra and special functions.
//!
//! Everything here is deterministic and allocation-light; the largest
//! matrices the rest of the crate builds are a few thousand rows (Matérn
//! covariance over a simulation grid), so dense routines are used throughout.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default relative cutoff below which eigenvalues are treated as zero.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_SWEEPS: usize = 10_000;

/// A dense real matrix stored with exact symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a matrix, averaging `m` and `mᵀ` so that storage is exactly symmetric.
    /// Fails if the asymmetry exceeds `1e-9` relative to the largest entry.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::input(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("matrix has non-finite entries"));
        }
        let scale = m.amax().max(1.0);
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::input(format!(
                        "matrix not symmetric at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    /// Builds from the upper triangle of `f(i, j)` (`i <= j`).
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    fn symmetrize(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        SymMatrix(out)
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    /// `self + c·I`
    pub fn add_diagonal(&self, c: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        SymMatrix(m)
    }

    /// Elementwise linear combination `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &SymMatrix, b: f64) -> Self {
        Self::symmetrize(&self.0 * a + &other.0 * b)
    }
}

/// Eigen-decomposition of a symmetric matrix with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, ordered like `values`.
    pub vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Number of eigenvalues above `rel_tol · max|λ|`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let cut = rel_tol * self.max_abs_value();
        self.values.iter().filter(|v| v.abs() > cut).count()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        &self.vectors * lambda * self.vectors.transpose()
    }
}

/// Euclidean distances between planar points.
pub fn pairwise_distances(points: &[[f64; 2]]) -> Result<SymMatrix> {
    if points.is_empty() {
        return Err(Error::input("need at least one point"));
    }
    if let Some(i) = points
        .iter()
        .position(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(Error::input(format!("point {i} has a non-finite coordinate")));
    }
    Ok(SymMatrix::from_fn(points.len(), |i, j| {
        if i == j {
            0.0
        } else {
            (points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1])
        }
    }))
}

/// Symmetric eigen-decomposition, eigenvalues sorted ascending.
pub fn sym_eigen(s: &SymMatrix) -> Result<EigenSystem> {
    let n = s.order();
    if n == 0 {
        return Ok(EigenSystem {
            values: vec![],
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = s
        .as_matrix()
        .clone()
        .try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_SWEEPS)
        .ok_or_else(|| Error::numerical("symmetric eigen-decomposition did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenSystem { values, vectors })
}

/// Moore-Penrose inverse of a symmetric positive semi-definite matrix.
///
/// Eigenvalues with magnitude below `rel_tol · max λ` are treated as zero.
pub fn pseudo_inverse(s: &SymMatrix, rel_tol: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(s)?;
    pseudo_inverse_from_eigen(&eig, rel_tol)
}

/// Same as [`pseudo_inverse`] but reuses an existing decomposition.
pub fn pseudo_inverse_from_eigen(eig: &EigenSystem, rel_tol: f64) -> Result<SymMatrix> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::input(format!("rel_tol must lie in (0,1), got {rel_tol}")));
    }
    let n = eig.values.len();
    let max_eig = eig.values.last().copied().unwrap_or(0.0).max(0.0);
    let cut = rel_tol * max_eig;
    if let Some(&min) = eig.values.first() {
        if min < -cut && min < -f64::EPSILON * max_eig.max(1.0) {
            return Err(Error::NotPsd {
                eigenvalue: min,
                threshold: cut,
            });
        }
    }
    let inv: Vec<f64> = eig
        .values
        .iter()
        .map(|&v| if v > cut { 1.0 / v } else { 0.0 })
        .collect();
    Ok(SymMatrix::from_fn(n, |i, j| {
        (0..n)
            .map(|k| eig.vectors[(i, k)] * inv[k] * eig.vectors[(j, k)])
            .sum()
    }))
}

/// Lower-triangular factor `L` with `L Lᵀ = S + jitter·I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub lower: DMatrix<f64>,
    /// Diagonal jitter that had to be added; zero when `S` factored directly.
    pub jitter: f64,
}

/// Cholesky factorisation with escalating diagonal jitter.
///
/// The plain matrix is tried first. On failure `jitter`, `10·jitter` and
/// `100·jitter` are added in turn. A zero `jitter` is replaced by
/// `1e-10 · mean diagonal`.
pub fn cholesky_psd(s: &SymMatrix, jitter: f64) -> Result<CholeskyFactor> {
    if !(jitter >= 0.0) {
        return Err(Error::input(format!("jitter must be >= 0, got {jitter}")));
    }
    if let Some(chol) = nalgebra::Cholesky::new(s.as_matrix().clone()) {
        return Ok(CholeskyFactor {
            lower: chol.l(),
            jitter: 0.0,
        });
    }
    let n = s.order().max(1) as f64;
    let mean_diag = s.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n;
    let mut eps = if jitter > 0.0 {
        jitter
    } else {
        1e-10 * mean_diag.max(f64::MIN_POSITIVE)
    };
    let mut last = eps;
    for _ in 0..3 {
        last = eps;
        if let Some(chol) = nalgebra::Cholesky::new(s.add_diagonal(eps).into_matrix()) {
            return Ok(CholeskyFactor {
                lower: chol.l(),
                jitter: eps,
            });
        }
        eps *= 10.0;
    }
    Err(Error::Cholesky { jitter: last })
}

/// Matérn correlation `(dφ)^v K_v(dφ) / (2^{v-1} Γ(v))`, equal to 1 at `d = 0`.
pub fn matern(d: f64, v: f64, phi: f64) -> f64 {
    debug_assert!(d >= 0.0 && v > 0.0 && phi > 0.0);
    let x = d * phi;
    if x == 0.0 {
        return 1.0;
    }
    let log_norm = (v - 1.0) * std::f64::consts::LN_2 + statrs::function::gamma::ln_gamma(v);
    match bessel_k(v, x) {
        Ok(k) if k > 0.0 => (v * x.ln() + k.ln() - log_norm).exp().min(1.0),
        Ok(_) => 0.0,
        // K_v overflows only for tiny x, where the correlation is 1 to working precision.
        Err(_) => 1.0,
    }
}

// Taylor coefficients of 1/Γ(1+z) about z = 0.
const INV_GAMMA_1P: [f64; 31] = [
    1.0,
    0.577_215_664_901_532_860_6,
    -0.655_878_071_520_253_881_1,
    -0.042_002_635_034_095_235_53,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_75,
    -0.009_621_971_527_876_973_562,
    0.007_218_943_246_663_099_542,
    -0.001_165_167_591_859_065_112,
    -0.000_215_241_674_114_950_972_8,
    0.000_128_050_282_388_116_186_2,
    -2.013_485_478_078_823_866e-5,
    -1.250_493_482_142_670_657e-6,
    1.133_027_231_981_695_882e-6,
    -2.056_338_416_977_607_104e-7,
    6.116_095_104_481_415_818e-9,
    5.002_007_644_469_222_930e-9,
    -1.181_274_570_487_020_145e-9,
    1.043_426_711_691_100_511e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783e-14,
    -5.348_122_539_423_017_982e-15,
    1.226_778_628_238_260_790e-15,
    -1.181_259_301_697_458_770e-16,
    1.186_692_254_751_600_333e-18,
    1.412_380_655_318_031_782e-18,
    -2.298_745_684_435_370_207e-19,
    1.714_406_321_927_337_433e-20,
    1.337_351_730_493_693_115e-22,
];

/// Returns `(gam1, gam2)` where
/// `gam1 = (1/Γ(1-μ) - 1/Γ(1+μ)) / (2μ)` and `gam2 = (1/Γ(1-μ) + 1/Γ(1+μ)) / 2`.
fn temme_gammas(mu: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    let mut gam1 = 0.0;
    let mut gam2 = 0.0;
    let mut p_odd = 1.0; // μ^{k-1} for odd k
    let mut p_even = 1.0; // μ^k for even k
    for (k, &c) in INV_GAMMA_1P.iter().enumerate() {
        if k % 2 == 1 {
            gam1 -= c * p_odd;
            p_odd *= mu2;
        } else {
            gam2 += c * p_even;
            p_even *= mu2;
        }
    }
    (gam1, gam2)
}

/// Modified Bessel function of the second kind `K_v(x)` for real order.
///
/// Temme's series is used for `x <= 2` and Steed's continued fraction for
/// larger arguments; both give `K_μ`, `K_{μ+1}` with `|μ| <= 1/2`, and
/// forward recurrence reaches the requested order.
pub fn bessel_k(v: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::input(format!("bessel_k needs x > 0, got {x}")));
    }
    if !v.is_finite() {
        return Err(Error::input(format!("bessel_k needs finite order, got {v}")));
    }
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 100_000;
    let v = v.abs();
    let nl = (v + 0.5).floor() as usize;
    let mu = v - nl as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;
    let (mut k_mu, mut k_mu1);
    if x <= 2.0 {
        let x2 = 0.5 * x;
        let pimu = std::f64::consts::PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2) = temme_gammas(mu);
        let gampl = gam2 - mu * gam1; // 1/Γ(1+μ)
        let gammi = gam2 + mu * gam1; // 1/Γ(1-μ)
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numerical("bessel_k series failed to converge"));
        }
        k_mu = sum;
        k_mu1 = sum1 * xi2;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * fi;
            c = -a * c / (fi + 1.0);
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numerical("bessel_k continued fraction failed to converge"));
        }
        h *= a1;
        k_mu = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        k_mu1 = k_mu * (mu + x + 0.5 - h) * xi;
    }
    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    if !k_mu.is_finite() {
        return Err(Error::Range(format!("K_{v}({x}) overflows")));
    }
    Ok(k_mu)
}

/// Linear-interpolation quantile of already sorted data (the common "type 7"
/// definition). `p` is clamped to `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sorts a copy of `values` and returns the requested quantiles.
pub fn quantiles(values: &[f64], ps: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    ps.iter().map(|&p| quantile_sorted(&v, p)).collect()
}

/// Draws `mean + L z` with `z` standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &[f64],
    cov_factor: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = mean.len();
    if cov_factor.nrows() != n || cov_factor.ncols() != n {
        return Err(Error::input(format!(
            "mean has length {n} but factor is {}x{}",
            cov_factor.nrows(),
            cov_factor.ncols()
        )));
    }
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = mean.to_vec();
    for i in 0..n {
        let mut acc = 0.0;
        for (j, zj) in z.iter().enumerate().take(i + 1) {
            acc += cov_factor[(i, j)] * zj;
        }
        out[i] += acc;
    }
    Ok(out)
}
