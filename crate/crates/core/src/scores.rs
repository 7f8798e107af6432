//! Analytic score models for diffused Gaussian and Gaussian-mixture targets,
//! plus the changes of variables between VP, VE and RF coordinates.
//!
//! All models are evaluated at a VP state `z` and a signal level ᾱ; the
//! diffused law of a target `p_0` is `p_t(z) = ∫ N(z; √ᾱ z₀, (1−ᾱ) I) p_0(z₀) dz₀`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{check_dim, Error, Result};
use crate::schedule::{alpha_bar_continuous, sigma_from_alpha_bar};
use crate::state::{cholesky, LowerTriangular, RandomSource, State, SymMatrix};

/// Score vector `∇_z log p_t(z)`.
pub type ScoreEval = Vec<f64>;

/// Exponents this far below the running maximum are dropped from mixture
/// sums; their relative contribution is below `e^{-40}`.
const LSE_CUTOFF: f64 = 40.0;

/// A diffused density with a closed-form score.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;

    /// Writes `∇_z log p_t(z)` at signal level `alpha_bar` into `out`.
    fn score_into(&self, z: &[f64], alpha_bar: f64, out: &mut [f64]) -> Result<()>;

    fn log_density(&self, z: &[f64], alpha_bar: f64) -> Result<f64>;

    fn score(&self, z: &[f64], alpha_bar: f64) -> Result<ScoreEval> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(z, alpha_bar, &mut out)?;
        Ok(out)
    }

    /// Score at forward time `t` (ᾱ = e^{−t}).
    fn score_at_time(&self, z: &[f64], t: f64) -> Result<ScoreEval> {
        check_time(t)?;
        self.score(z, alpha_bar_continuous(t))
    }

    fn log_density_at_time(&self, z: &[f64], t: f64) -> Result<f64> {
        check_time(t)?;
        self.log_density(z, alpha_bar_continuous(t))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRange(format!("diffusion time must be finite and >= 0, got {t}")))
    }
}

/// Solves `M x = r` for `M = ᾱΣ + (1−ᾱ)I`, writing `x` into `out`.
/// Returns `(rᵀ M⁻¹ r, log det M)`.
fn solve_diffused(cov: &SymMatrix, ab: f64, r: &[f64], out: &mut [f64]) -> Result<(f64, f64)> {
    let noise = 1.0 - ab;
    let singular = || Error::SingularCovariance(format!("diffused covariance at alpha_bar={ab}"));
    match cov.dim() {
        1 => {
            let m = ab * cov.get(0, 0) + noise;
            if !(m > 0.0) {
                return Err(singular());
            }
            out[0] = r[0] / m;
            Ok((r[0] * out[0], m.ln()))
        }
        2 => {
            let a = ab * cov.get(0, 0) + noise;
            let b = ab * cov.get(0, 1);
            let c = ab * cov.get(1, 1) + noise;
            let det = a * c - b * b;
            if !(det > 0.0 && a > 0.0) {
                return Err(singular());
            }
            out[0] = (c * r[0] - b * r[1]) / det;
            out[1] = (a * r[1] - b * r[0]) / det;
            Ok((r[0] * out[0] + r[1] * out[1], det.ln()))
        }
        _ => {
            let m = cov.scale_shift(ab, noise);
            let l = cholesky(&m).map_err(|_| singular())?;
            let x = l.solve(r).map_err(|_| singular())?;
            out.copy_from_slice(&x);
            let quad = r.iter().zip(&x).map(|(u, v)| u * v).sum();
            Ok((quad, l.log_det()))
        }
    }
}

/// Multivariate normal target `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    mean: Vec<f64>,
    cov: SymMatrix,
    chol: LowerTriangular,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Result<Self> {
        check_dim(mean.len(), cov.dim())?;
        let chol = cholesky(&cov)?;
        Ok(GaussianTarget { mean, cov, chol })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(vec![0.0; d], SymMatrix::identity(d)).expect("identity is PSD")
    }

    /// Zero-mean, unit-variance pair with correlation `rho`.
    pub fn correlated_pair(rho: f64) -> Result<Self> {
        let cov = SymMatrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]])?;
        Self::new(vec![0.0, 0.0], cov)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn sample(&self, rng: &mut RandomSource) -> State {
        let mut e = vec![0.0; self.mean.len()];
        rng.fill_normal(&mut e);
        let v = self.chol.mul_vec(&e);
        State::new(self.mean.iter().zip(v).map(|(m, x)| m + x).collect())
    }

    fn residual(&self, z: &[f64], ab: f64) -> Vec<f64> {
        let s = ab.sqrt();
        z.iter().zip(&self.mean).map(|(zi, mi)| zi - s * mi).collect()
    }
}

impl ScoreModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score_into(&self, z: &[f64], alpha_bar: f64, out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), z.len())?;
        let r = self.residual(z, alpha_bar);
        solve_diffused(&self.cov, alpha_bar, &r, out)?;
        for v in out.iter_mut() {
            *v = -*v;
        }
        Ok(())
    }

    fn log_density(&self, z: &[f64], alpha_bar: f64) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        let r = self.residual(z, alpha_bar);
        let mut tmp = vec![0.0; r.len()];
        let (quad, log_det) = solve_diffused(&self.cov, alpha_bar, &r, &mut tmp)?;
        Ok(-0.5 * (quad + log_det + self.dim() as f64 * (2.0 * PI).ln()))
    }
}

/// `∇ log N(√ᾱ μ, ᾱΣ + (1−ᾱ)I)` at `z`.
pub fn gaussian_diffused_score(target: &GaussianTarget, z: &[f64], t: f64) -> Result<ScoreEval> {
    target.score_at_time(z, t)
}

/// Finite mixture of Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmTarget {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<SymMatrix>,
    chols: Vec<LowerTriangular>,
    /// Per-component variance when every covariance is a multiple of I.
    iso_vars: Option<Vec<f64>>,
}

impl GmmTarget {
    /// Weights must be positive and sum to 1 within 1e-9; they are then
    /// renormalized exactly.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<SymMatrix>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        check_dim(k, means.len())?;
        check_dim(k, covs.len())?;
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidConfig("mixture dimension must be >= 1".into()));
        }
        for (m, c) in means.iter().zip(&covs) {
            check_dim(d, m.len())?;
            check_dim(d, c.dim())?;
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("mixture weights sum to {total}, not 1")));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let chols = covs.iter().map(cholesky).collect::<Result<Vec<_>>>()?;
        let iso_vars = covs
            .iter()
            .map(|c| {
                let v = c.get(0, 0);
                let iso = (0..d).all(|i| {
                    (0..d).all(|j| c.get(i, j) == if i == j { v } else { 0.0 })
                });
                iso.then_some(v)
            })
            .collect::<Option<Vec<f64>>>();
        Ok(GmmTarget { weights, log_weights, means, covs, chols, iso_vars })
    }

    /// Mixture whose components share one isotropic variance.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, var: f64) -> Result<Self> {
        let d = means.first().map_or(0, |m| m.len());
        let covs = vec![SymMatrix::diagonal(&vec![var; d]); means.len()];
        Self::new(weights, means, covs)
    }

    pub fn from_gaussian(g: &GaussianTarget) -> Self {
        Self::new(vec![1.0], vec![g.mean.clone()], vec![g.cov.clone()])
            .expect("a valid Gaussian is a valid one-component mixture")
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covs(&self) -> &[SymMatrix] {
        &self.covs
    }

    pub fn sample(&self, rng: &mut RandomSource) -> State {
        let k = rng.categorical(&self.weights);
        let mut e = vec![0.0; self.dim()];
        rng.fill_normal(&mut e);
        let v = self.chols[k].mul_vec(&e);
        State::new(self.means[k].iter().zip(v).map(|(m, x)| m + x).collect())
    }

    /// Axis-aligned box containing every component's mean ± `k` standard
    /// deviations, as `(lo, hi)` per coordinate.
    pub fn bounding_box(&self, k: f64) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|j| {
                self.means.iter().zip(&self.covs).fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), (m, c)| {
                        let s = k * c.get(j, j).sqrt();
                        (lo.min(m[j] - s), hi.max(m[j] + s))
                    },
                )
            })
            .collect()
    }

    /// Parses the text format: one component per line,
    /// `weight mean_1 … mean_d cov_11 cov_12 … cov_dd` (row-major upper
    /// triangle). Blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        let mut dim = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: lineno + 1, msg };
            let vals = line
                .split_whitespace()
                .map(|tok| tok.parse::<f64>().map_err(|_| err(format!("not a number: {tok:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            let d = dim_from_field_count(vals.len())
                .ok_or_else(|| err(format!("{} fields do not match any dimension", vals.len())))?;
            if *dim.get_or_insert(d) != d {
                return Err(err(format!("dimension {d} differs from earlier lines")));
            }
            weights.push(vals[0]);
            means.push(vals[1..=d].to_vec());
            covs.push(SymMatrix::from_upper(d, &vals[d + 1..]).map_err(|e| err(e.to_string()))?);
        }
        Self::new(weights, means, covs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in 0..self.n_components() {
            let fields: Vec<String> = std::iter::once(self.weights[k])
                .chain(self.means[k].iter().copied())
                .chain(self.covs[k].upper())
                .map(|v| format!("{v:e}"))
                .collect();
            s.push_str(&fields.join(" "));
            s.push('\n');
        }
        s
    }

    /// Isotropic fast path: one pass with a running log-sum-exp maximum, so
    /// no scratch storage is needed.
    fn score_iso(&self, vars: &[f64], z: &[f64], ab: f64, out: &mut [f64]) {
        let d = z.len();
        let sab = ab.sqrt();
        let noise = 1.0 - ab;
        let equal = vars.iter().all(|v| *v == vars[0]);
        let mut m = f64::NEG_INFINITY;
        let mut total = 0.0;
        out.fill(0.0);
        for k in 0..self.weights.len() {
            let var = ab * vars[k] + noise;
            let mean = &self.means[k];
            let mut r2 = 0.0;
            for j in 0..d {
                let r = z[j] - sab * mean[j];
                r2 += r * r;
            }
            let mut e = self.log_weights[k] - 0.5 * r2 / var;
            if !equal {
                e -= 0.5 * d as f64 * var.ln();
            }
            if e < m - LSE_CUTOFF {
                continue;
            }
            if e > m {
                let scale = (m - e).exp();
                total *= scale;
                for o in out.iter_mut() {
                    *o *= scale;
                }
                m = e;
            }
            let w = (e - m).exp();
            total += w;
            let f = w / var;
            for j in 0..d {
                out[j] -= f * (z[j] - sab * mean[j]);
            }
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    fn log_density_iso(&self, vars: &[f64], z: &[f64], ab: f64) -> f64 {
        let d = z.len() as f64;
        let sab = ab.sqrt();
        let noise = 1.0 - ab;
        let mut m = f64::NEG_INFINITY;
        let mut total = 0.0;
        for k in 0..self.weights.len() {
            let var = ab * vars[k] + noise;
            let r2: f64 = z
                .iter()
                .zip(&self.means[k])
                .map(|(zi, mi)| (zi - sab * mi).powi(2))
                .sum();
            let e = self.log_weights[k] - 0.5 * r2 / var - 0.5 * d * (2.0 * PI * var).ln();
            if e < m - LSE_CUTOFF {
                continue;
            }
            if e > m {
                total *= (m - e).exp();
                m = e;
            }
            total += (e - m).exp();
        }
        m + total.ln()
    }

    /// General path: per-component exponents and solves.
    fn components(&self, z: &[f64], ab: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let sab = ab.sqrt();
        let d = z.len();
        let mut exps = Vec::with_capacity(self.n_components());
        let mut solves = Vec::with_capacity(self.n_components());
        for k in 0..self.n_components() {
            let r: Vec<f64> = z.iter().zip(&self.means[k]).map(|(zi, mi)| zi - sab * mi).collect();
            let mut x = vec![0.0; d];
            let (quad, log_det) = solve_diffused(&self.covs[k], ab, &r, &mut x)?;
            exps.push(
                self.log_weights[k] - 0.5 * (quad + log_det + d as f64 * (2.0 * PI).ln()),
            );
            solves.push(x);
        }
        Ok((exps, solves))
    }
}

fn dim_from_field_count(n: usize) -> Option<usize> {
    // n = 1 + d + d(d+1)/2
    (1..=64).find(|d| 1 + d + d * (d + 1) / 2 == n)
}

impl ScoreModel for GmmTarget {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn score_into(&self, z: &[f64], alpha_bar: f64, out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), z.len())?;
        check_dim(self.dim(), out.len())?;
        if let Some(vars) = &self.iso_vars {
            if alpha_bar < 1.0 || vars.iter().all(|v| *v > 0.0) {
                self.score_iso(vars, z, alpha_bar, out);
                return Ok(());
            }
        }
        let (exps, solves) = self.components(z, alpha_bar)?;
        let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        out.fill(0.0);
        for (e, x) in exps.iter().zip(&solves) {
            let w = (e - m).exp();
            total += w;
            for (o, xi) in out.iter_mut().zip(x) {
                *o -= w * xi;
            }
        }
        for o in out.iter_mut() {
            *o /= total;
        }
        Ok(())
    }

    fn log_density(&self, z: &[f64], alpha_bar: f64) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        if let Some(vars) = &self.iso_vars {
            if alpha_bar < 1.0 || vars.iter().all(|v| *v > 0.0) {
                return Ok(self.log_density_iso(vars, z, alpha_bar));
            }
        }
        let (exps, _) = self.components(z, alpha_bar)?;
        let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln())
    }
}

/// Responsibility-weighted mixture score at forward time `t`.
pub fn gmm_diffused_score(target: &GmmTarget, z: &[f64], t: f64) -> Result<ScoreEval> {
    target.score_at_time(z, t)
}

/// Wraps a model and counts score evaluations. Log-density calls are not
/// counted.
#[derive(Debug)]
pub struct CountingModel<M> {
    inner: M,
    calls: AtomicUsize,
}

impl<M: ScoreModel> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        CountingModel { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn into_inner(self) -> M {
        self.inner
    }
}

impl<M: ScoreModel> ScoreModel for CountingModel<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score_into(&self, z: &[f64], alpha_bar: f64, out: &mut [f64]) -> Result<()> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score_into(z, alpha_bar, out)
    }

    fn log_density(&self, z: &[f64], alpha_bar: f64) -> Result<f64> {
        self.inner.log_density(z, alpha_bar)
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn score_into(&self, z: &[f64], alpha_bar: f64, out: &mut [f64]) -> Result<()> {
        (**self).score_into(z, alpha_bar, out)
    }

    fn log_density(&self, z: &[f64], alpha_bar: f64) -> Result<f64> {
        (**self).log_density(z, alpha_bar)
    }
}

/// Noise prediction `ε = −√(1−ᾱ) s` at signal level ᾱ.
pub fn score_to_eps_ab(score: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    if !(alpha_bar < 1.0) {
        return Err(Error::DegenerateTime("noise prediction is undefined at alpha_bar = 1".into()));
    }
    let k = -(1.0 - alpha_bar).sqrt();
    Ok(score.iter().map(|s| k * s).collect())
}

/// Noise prediction at forward time `t`.
pub fn score_to_eps(score: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    score_to_eps_ab(score, alpha_bar_continuous(t))
}

/// Inverse of [`score_to_eps`].
pub fn eps_to_score(eps: &[f64], t: f64) -> Result<ScoreEval> {
    check_time(t)?;
    let ab = alpha_bar_continuous(t);
    if !(ab < 1.0) {
        return Err(Error::DegenerateTime("score from noise is undefined at t = 0".into()));
    }
    let k = -1.0 / (1.0 - ab).sqrt();
    Ok(eps.iter().map(|e| k * e).collect())
}

/// `z_ve = z_vp / √ᾱ`, `σ = √((1−ᾱ)/ᾱ)` at forward time `t`.
pub fn vp_to_ve(z_vp: &[f64], t: f64) -> Result<(State, f64)> {
    check_time(t)?;
    let ab = alpha_bar_continuous(t);
    let k = 1.0 / ab.sqrt();
    Ok((State::new(z_vp.iter().map(|v| v * k).collect()), sigma_from_alpha_bar(ab)))
}

/// Inverse of [`vp_to_ve`]: `z_vp = z_ve / √(1+σ²)`.
pub fn ve_to_vp(z_ve: &[f64], sigma: f64) -> State {
    let k = 1.0 / (1.0 + sigma * sigma).sqrt();
    State::new(z_ve.iter().map(|v| v * k).collect())
}

/// `s = σ/(1+σ)`, `r = z_ve/(1+σ)`.
pub fn ve_to_rf(z_ve: &[f64], sigma: f64) -> Result<(State, f64)> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidRange(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma.is_infinite() {
        return Err(Error::DegenerateTime("rectified-flow time s = 1 at infinite sigma".into()));
    }
    let k = 1.0 / (1.0 + sigma);
    Ok((State::new(z_ve.iter().map(|v| v * k).collect()), sigma * k))
}

/// Inverse of [`ve_to_rf`]: `σ = s/(1−s)`, `z_ve = r/(1−s)`.
pub fn rf_to_ve(r: &[f64], s: f64) -> Result<(State, f64)> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::DegenerateTime(format!("rectified-flow time must lie in [0, 1), got {s}")));
    }
    let k = 1.0 / (1.0 - s);
    Ok((State::new(r.iter().map(|v| v * k).collect()), s * k))
}

/// Rectified-flow velocity `v = (ε − r)/(1 − s)`.
pub fn rf_velocity(eps: &[f64], r: &[f64], s: f64) -> Result<Vec<f64>> {
    if !(s < 1.0) {
        return Err(Error::DegenerateTime("velocity undefined at s = 1".into()));
    }
    let k = 1.0 / (1.0 - s);
    Ok(eps.iter().zip(r).map(|(e, ri)| (e - ri) * k).collect())
}
