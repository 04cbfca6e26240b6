//! Seedable random streams and the samplers the synthesizers draw from.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{DipsError, Result};

/// A ChaCha20 keystream addressed by `(seed, stream)`.
///
/// Identical addresses give bitwise-identical sequences. Child streams are
/// derived from the address alone, never from how much of the parent has
/// been consumed, so workers can fork streams without coordinating.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Independent stream keyed by this stream's address and `tag`.
    pub fn child(&self, tag: u64) -> RngStream {
        let s = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        RngStream::new(
            splitmix64(s ^ tag.rotate_left(17)),
            splitmix64(tag ^ self.stream),
        )
    }

    /// Convenience for nested derivations such as `(rep, eps_index, method)`.
    pub fn path(&self, tags: &[u64]) -> RngStream {
        tags.iter().fold(self.clone(), |s, t| s.child(*t))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn domain(msg: impl Into<String>) -> DipsError {
    DipsError::ParameterDomain(msg.into())
}

/// Uniform on the open interval (0, 1).
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

// ---------------------------------------------------------------- Laplace

pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, location: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(domain(format!(
            "Laplace scale must be positive, got {scale}"
        )));
    }
    Ok(location + laplace_noise(rng, scale))
}

/// Inverse-CDF draw of Laplace(0, scale); caller guarantees scale > 0.
pub(crate) fn laplace_noise<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -scale * u.signum() * tail.ln();
        }
    }
}

pub fn laplace_cdf(x: f64, location: f64, scale: f64) -> f64 {
    let z = (x - location) / scale;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

pub fn laplace_log_pdf(x: f64, location: f64, scale: f64) -> f64 {
    -(x - location).abs() / scale - (2.0 * scale).ln()
}

// ----------------------------------------------------------------- Normal

pub fn sample_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> Result<f64> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(domain(format!("normal sd must be non-negative, got {sd}")));
    }
    Ok(mean + sd * standard_normal(rng))
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

// ------------------------------------------------------------------ Gamma

/// log of a Gamma(shape, 1) draw.
///
/// Marsaglia-Tsang squeeze for shape >= 1; for shape < 1 the boost
/// `G(a) = G(a+1) U^(1/a)` is applied in log space so tiny shapes do not
/// underflow.
pub fn sample_log_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(domain(format!("gamma shape must be positive, got {shape}")));
    }
    if shape < 1.0 {
        let g = marsaglia_tsang(rng, shape + 1.0);
        return Ok(g.ln() + uniform_open(rng).ln() / shape);
    }
    Ok(marsaglia_tsang(rng, shape).ln())
}

fn marsaglia_tsang<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = uniform_open(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Gamma with shape and scale (mean = shape * scale).
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(domain(format!("gamma scale must be positive, got {scale}")));
    }
    Ok(sample_log_gamma(rng, shape)?.exp() * scale)
}

/// Inverse gamma with shape `a` and scale `b` (mean b / (a - 1)).
pub fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(domain(format!(
            "inverse-gamma scale must be positive, got {b}"
        )));
    }
    Ok(b * (-sample_log_gamma(rng, a)?).exp())
}

pub fn sample_chi_squared<R: Rng + ?Sized>(rng: &mut R, dof: f64) -> Result<f64> {
    sample_gamma(rng, dof / 2.0, 2.0)
}

pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(domain(format!(
            "beta shapes must be positive, got ({a}, {b})"
        )));
    }
    let lx = sample_log_gamma(rng, a)?;
    let ly = sample_log_gamma(rng, b)?;
    // x / (x + y) computed from logs
    Ok(1.0 / (1.0 + (ly - lx).exp()))
}

pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(domain("Dirichlet needs at least one component"));
    }
    if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(domain("Dirichlet concentrations must be positive"));
    }
    let logs = alpha
        .iter()
        .map(|a| sample_log_gamma(rng, *a))
        .collect::<Result<Vec<_>>>()?;
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

// --------------------------------------------------------------- discrete

pub fn sample_bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!(
            "Bernoulli probability must be in [0,1], got {p}"
        )));
    }
    Ok(rng.random::<f64>() < p)
}

pub fn sample_binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> Result<u64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!(
            "binomial probability must be in [0,1], got {p}"
        )));
    }
    let dist = Binomial::new(n, p).map_err(|e| domain(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Multinomial via sequential conditional binomials. `probs` need only be
/// non-negative with a positive sum.
pub fn sample_multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Result<Vec<u64>> {
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(domain(
            "multinomial probabilities must be finite and non-negative",
        ));
    }
    let mut rest: f64 = probs.iter().sum();
    if !(rest > 0.0) {
        return Err(domain("multinomial probabilities sum to zero"));
    }
    let mut left = n;
    let mut out = vec![0u64; probs.len()];
    for (i, p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() {
            out[i] = left;
            break;
        }
        let q = (p / rest).clamp(0.0, 1.0);
        let k = sample_binomial(rng, left, q)?;
        out[i] = k;
        left -= k;
        rest -= p;
        if rest <= 0.0 {
            // remaining probabilities are (numerically) zero
            out[i] += left;
            left = 0;
        }
    }
    Ok(out)
}

/// Index drawn with probability proportional to `weights`.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(domain(
            "categorical weights must be non-negative with positive sum",
        ));
    }
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(weights
        .iter()
        .rposition(|w| *w > 0.0)
        .unwrap_or(weights.len() - 1))
}

// ------------------------------------------------------------ matrices

/// Square symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(domain("matrix must be square and non-empty"));
        }
        let scale = m.amax().max(1.0);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                    return Err(domain("matrix is not symmetric"));
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn from_row_slice(p: usize, data: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(p, p, data))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Lower Cholesky factor; fails unless positive definite.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        self.0
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| domain("matrix is not positive definite"))
    }

    /// Square-root factor that tolerates positive semi-definite input.
    pub fn psd_factor(&self) -> Result<DMatrix<f64>> {
        if let Ok(l) = self.cholesky() {
            return Ok(l);
        }
        let eig = self.0.clone().symmetric_eigen();
        let tol = 1e-12 * eig.eigenvalues.amax().max(1.0);
        if eig.eigenvalues.iter().any(|v| *v < -tol) {
            return Err(domain("matrix is not positive semi-definite"));
        }
        let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
    }

    /// Nearest matrix (in the eigenvalue sense) with every eigenvalue at
    /// least `floor`.
    pub fn with_eigen_floor(&self, floor: f64) -> SymmetricMatrix {
        let eig = self.0.clone().symmetric_eigen();
        let vals = eig.eigenvalues.map(|v| v.max(floor));
        let m = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        SymmetricMatrix((&m + m.transpose()) * 0.5)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.clone().cholesky().is_some()
    }
}

/// Multivariate normal with a precomputed factor for repeated draws.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvNormal {
    pub fn new(mean: &[f64], cov: &SymmetricMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(domain("mean and covariance dimensions differ"));
        }
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            factor: cov.psd_factor()?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| standard_normal(rng));
        (&self.mean + &self.factor * z).iter().copied().collect()
    }
}

pub fn sample_mvnormal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &[f64],
    cov: &SymmetricMatrix,
) -> Result<Vec<f64>> {
    Ok(MvNormal::new(mean, cov)?.sample(rng))
}

/// Bartlett factor: lower triangular with sqrt(chi2(dof - i)) on the
/// diagonal and standard normals below it.
fn bartlett_factor<R: Rng + ?Sized>(rng: &mut R, p: usize, dof: f64) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = sample_chi_squared(rng, dof - i as f64)?.sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    Ok(a)
}

pub fn sample_wishart<R: Rng + ?Sized>(
    rng: &mut R,
    dof: f64,
    scale: &SymmetricMatrix,
) -> Result<SymmetricMatrix> {
    let p = scale.dim();
    if !(dof > p as f64 - 1.0) {
        return Err(domain(format!(
            "Wishart dof must exceed {} , got {dof}",
            p as f64 - 1.0
        )));
    }
    let l = scale.cholesky()?;
    let la = l * bartlett_factor(rng, p, dof)?;
    SymmetricMatrix::new(&la * la.transpose())
}

/// Inverse Wishart with `dof` degrees of freedom and scale matrix `scale`
/// (mean scale / (dof - p - 1)).
///
/// If W ~ Wishart(dof, scale^-1) = (C A)(C A)' with C C' = scale^-1, then
/// W^-1 = (L A^-T)(L A^-T)' where L L' = scale, so only the triangular
/// Bartlett factor is ever inverted.
pub fn sample_inv_wishart<R: Rng + ?Sized>(
    rng: &mut R,
    dof: f64,
    scale: &SymmetricMatrix,
) -> Result<SymmetricMatrix> {
    let p = scale.dim();
    if !(dof > p as f64 - 1.0) {
        return Err(domain(format!(
            "inverse-Wishart dof must exceed {}, got {dof}",
            p as f64 - 1.0
        )));
    }
    let l = scale.cholesky()?;
    let a = bartlett_factor(rng, p, dof)?;
    let a_inv_t = a
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| domain("singular Bartlett factor"))?;
    let m = l * a_inv_t;
    SymmetricMatrix::new(&m * m.transpose())
}

// -------------------------------------------------------------- quantiles

pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("probability must be in (0,1), got {p}")));
    }
    Ok(-std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p))
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn t_cdf(t: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return normal_cdf(t);
    }
    let x = df / (df + t * t);
    let tail = 0.5 * statrs::function::beta::beta_reg(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Above this the incomplete beta loses precision and the expansion in
/// 1/df is accurate to well below 1e-15.
const T_ASYMPTOTIC_DF: f64 = 1e5;

/// Expansion of the t quantile around the normal quantile `z` in powers of
/// 1/df, four terms.
fn t_quantile_asymptotic(z: f64, df: f64) -> f64 {
    let z2 = z * z;
    let g1 = z * (z2 + 1.0) / 4.0;
    let g2 = z * ((5.0 * z2 + 16.0) * z2 + 3.0) / 96.0;
    let g3 = z * (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) / 384.0;
    let g4 = z * ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) / 92160.0;
    z + (g1 + (g2 + (g3 + g4 / df) / df) / df) / df
}

/// Student-t inverse CDF by bracketed bisection on the regularized
/// incomplete beta; `df = inf` gives the normal quantile.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("probability must be in (0,1), got {p}")));
    }
    if !(df > 0.0) {
        return Err(domain(format!(
            "degrees of freedom must be positive, got {df}"
        )));
    }
    if df.is_infinite() {
        return normal_quantile(p);
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return t_quantile(1.0 - p, df).map(|q| -q);
    }
    if df >= T_ASYMPTOTIC_DF {
        return Ok(t_quantile_asymptotic(normal_quantile(p)?, df));
    }
    let mut lo = 0.0;
    let mut hi = normal_quantile(p)?.max(1.0);
    while t_cdf(hi, df) < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(DipsError::NonConvergence("t quantile bracket".into()));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
