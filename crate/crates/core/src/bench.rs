//! Synthetic benchmarks: a 2-D conditional Gaussian with a closed-form
//! answer, a 500-component mixture that exposes mode trapping, and the
//! guided-score deviation diagnostic.

use std::time::Instant;

use crate::error::{check_dim, Error, Result};
use crate::fld::{big_score_in_place, LanPaintConfig};
use crate::parallel::{map_chains, ExecMode};
use crate::samplers::{Method, Sampler, SamplerRun};
use crate::schedule::SamplerGrid;
use crate::scores::{GaussianTarget, GmmTarget, ScoreModel};
use crate::state::{cholesky, Mask, RandomSource, State, SymMatrix};

/// Step size shared by both Langevin-based methods in the benchmarks.
pub const BENCH_ETA: f64 = 0.3;
pub const DEFAULT_RHO: f64 = 0.8;
pub const DEFAULT_Y: f64 = 1.0;
pub const GMM_COMPONENTS: usize = 500;
pub const GMM_STD: f64 = 0.05;
pub const GMM_HALF_WIDTH: f64 = 2.0;
pub const GMM_SEED: u64 = 2024;
/// Conditioning value of the fixed-y slice mode.
pub const SLICE_Y: f64 = 1.55;
/// Log-density percentile of true samples below which a sample counts as
/// trapped.
pub const TRAP_PERCENTILE: f64 = 0.01;

/// Offsets the master seed of reference draws so they never share streams
/// with sampler chains.
const REFERENCE_STREAM: u64 = 0x005E_ED0F_7E57;

/// Gaussian conditioning `x | y` for a joint `N(μ, Σ)`, stored so that the
/// conditional mean can be re-evaluated for many `y` cheaply.
#[derive(Debug, Clone)]
struct Conditioner {
    x_idx: Vec<usize>,
    y_idx: Vec<usize>,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    /// `Σ_xy Σ_yy⁻¹`, row-major `nx × ny`.
    gain: Vec<f64>,
    cov: SymMatrix,
}

impl Conditioner {
    fn new(joint: &GaussianTarget, mask: &Mask) -> Result<Self> {
        let d = joint.dim();
        mask.validate_conditional(d)?;
        let x_idx = mask.inpainted_indices();
        let y_idx = mask.observed_indices();
        let (nx, ny) = (x_idx.len(), y_idx.len());
        let cov = joint.cov();
        let scale = (0..d).map(|i| cov.get(i, i)).fold(0.0, f64::max);
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        let syy = SymMatrix::from_rows(&rows(&cov.block(&y_idx, &y_idx), ny))?;
        let l = cholesky(&syy).map_err(|_| singular("observed block"))?;
        if (0..ny).any(|i| l.get(i, i).powi(2) <= tol) {
            return Err(singular("observed block"));
        }
        let sxy = cov.block(&x_idx, &y_idx);
        let mut gain = vec![0.0; nx * ny];
        for r in 0..nx {
            // Σ_yy g = Σ_yx[:, r]
            let g = l.solve(&sxy[r * ny..(r + 1) * ny])?;
            gain[r * ny..(r + 1) * ny].copy_from_slice(&g);
        }
        let sxx = cov.block(&x_idx, &x_idx);
        let mut c = vec![0.0; nx * nx];
        for i in 0..nx {
            for j in 0..nx {
                let corr: f64 = (0..ny).map(|k| gain[i * ny + k] * sxy[j * ny + k]).sum();
                c[i * nx + j] = sxx[i * nx + j] - corr;
            }
        }
        for i in 0..nx {
            for j in 0..i {
                let m = 0.5 * (c[i * nx + j] + c[j * nx + i]);
                c[i * nx + j] = m;
                c[j * nx + i] = m;
            }
        }
        let cond = SymMatrix::from_rows(&rows(&c, nx))?;
        let lc = cholesky(&cond).map_err(|_| singular("conditional covariance"))?;
        if (0..nx).any(|i| lc.get(i, i).powi(2) <= tol) {
            return Err(singular("conditional covariance"));
        }
        let mean = joint.mean();
        Ok(Conditioner {
            mu_x: x_idx.iter().map(|&i| mean[i]).collect(),
            mu_y: y_idx.iter().map(|&i| mean[i]).collect(),
            x_idx,
            y_idx,
            gain,
            cov: cond,
        })
    }

    /// Conditional mean given the observed values (in observed-index order).
    fn mean(&self, y: &[f64]) -> Vec<f64> {
        let ny = self.y_idx.len();
        self.mu_x
            .iter()
            .enumerate()
            .map(|(r, m)| m + (0..ny).map(|k| self.gain[r * ny + k] * (y[k] - self.mu_y[k])).sum::<f64>())
            .collect()
    }
}

fn rows(flat: &[f64], n: usize) -> Vec<Vec<f64>> {
    flat.chunks(n.max(1)).map(|c| c.to_vec()).collect()
}

fn singular(what: &str) -> Error {
    Error::SingularCovariance(format!("{what} is degenerate"))
}

/// `p(x | y = y_obs)` for a Gaussian joint; `y_obs` is full length and only
/// its observed entries are read. The result lives on the inpainted
/// coordinates in increasing index order.
pub fn gaussian_conditional(joint: &GaussianTarget, mask: &Mask, y_obs: &[f64]) -> Result<GaussianTarget> {
    check_dim(joint.dim(), y_obs.len())?;
    let c = Conditioner::new(joint, mask)?;
    let y: Vec<f64> = c.y_idx.iter().map(|&i| y_obs[i]).collect();
    GaussianTarget::new(c.mean(&y), c.cov.clone())
}

/// Sample mean and unbiased sample covariance.
pub fn sample_moments(samples: &[State]) -> Result<(Vec<f64>, SymMatrix)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::DegenerateSamples(format!("need at least 2 samples, got {n}")));
    }
    let d = samples[0].dim();
    let mut mean = vec![0.0; d];
    for s in samples {
        check_dim(d, s.dim())?;
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in 0..=i {
                cov[i][j] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    Ok((mean, SymMatrix::from_rows(&cov)?))
}

/// Closed-form `KL(N(m, S) ‖ N(μ, Σ))`.
pub fn kl_gaussians(m: &[f64], s: &SymMatrix, truth: &GaussianTarget) -> Result<f64> {
    let d = m.len();
    check_dim(truth.dim(), d)?;
    check_dim(d, s.dim())?;
    let ls = cholesky(s).map_err(|_| Error::DegenerateSamples("sample covariance is not PSD".into()))?;
    if (0..d).any(|i| !(ls.get(i, i) > 0.0)) {
        return Err(Error::DegenerateSamples("sample covariance is singular".into()));
    }
    let lt = cholesky(truth.cov())?;
    let mut trace = 0.0;
    for j in 0..d {
        let col: Vec<f64> = (0..d).map(|i| s.get(i, j)).collect();
        trace += lt.solve(&col)?[j];
    }
    let diff: Vec<f64> = truth.mean().iter().zip(m).map(|(a, b)| a - b).collect();
    let w = lt.solve(&diff)?;
    let quad: f64 = diff.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok(0.5 * (trace + quad - d as f64 + lt.log_det() - ls.log_det()))
}

/// Fits a Gaussian to `samples` and returns its KL divergence from `truth`.
pub fn kl_gaussian_moments(samples: &[State], truth: &GaussianTarget) -> Result<f64> {
    let (m, s) = sample_moments(samples)?;
    kl_gaussians(&m, &s, truth)
}

/// Regular 2-D histogram over a box. Samples outside the box are counted
/// in the nearest edge bin.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSpec {
    pub bins: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Added to every bin count of the empirical histogram.
    pub pseudo_count: f64,
    /// Midpoint-rule sub-cells per bin and axis when integrating the target.
    pub subdivisions: usize,
}

impl HistogramSpec {
    /// 64 × 64 bins over the target's 3σ bounding box, 0.5 pseudo-counts.
    pub fn for_target(target: &GmmTarget) -> Result<Self> {
        check_dim(2, target.dim())?;
        let b = target.bounding_box(3.0);
        Ok(HistogramSpec {
            bins: 64,
            lo: [b[0].0, b[1].0],
            hi: [b[0].1, b[1].1],
            pseudo_count: 0.5,
            subdivisions: 4,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.subdivisions == 0 {
            return Err(Error::InvalidConfig("histogram needs bins and subdivisions >= 1".into()));
        }
        if !(0..2).all(|a| self.hi[a] > self.lo[a]) || !(self.pseudo_count > 0.0) {
            return Err(Error::InvalidConfig("histogram box must be non-empty and pseudo_count > 0".into()));
        }
        Ok(())
    }

    fn bin_of(&self, axis: usize, v: f64) -> usize {
        let u = (v - self.lo[axis]) / (self.hi[axis] - self.lo[axis]);
        ((u * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1)
    }

    fn width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.bins as f64
    }
}

/// Target probability of every bin (row-major, x-bin major), integrated
/// with the midpoint rule and normalized over the box.
pub fn binned_target(target: &GmmTarget, spec: &HistogramSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    check_dim(2, target.dim())?;
    let (b, m) = (spec.bins, spec.subdivisions);
    let (hx, hy) = (spec.width(0) / m as f64, spec.width(1) / m as f64);
    let mut q = vec![0.0; b * b];
    for (cell, qv) in q.iter_mut().enumerate() {
        let (i, j) = (cell / b, cell % b);
        for u in 0..m {
            for v in 0..m {
                let x = spec.lo[0] + (i * m + u) as f64 * hx + 0.5 * hx;
                let y = spec.lo[1] + (j * m + v) as f64 * hy + 0.5 * hy;
                *qv += target.log_density(&[x, y], 1.0)?.exp();
            }
        }
    }
    normalize(q)
}

fn normalize(mut q: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = q.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateSamples("target has no mass inside the histogram box".into()));
    }
    for v in &mut q {
        *v /= total;
    }
    Ok(q)
}

/// `KL(Q ‖ P̂)` between target bin probabilities `q` and the smoothed
/// empirical histogram `P̂ = (count + c)/(n + c·bins)`.
pub fn kl_binned(counts: &[usize], q: &[f64], pseudo_count: f64) -> Result<f64> {
    check_dim(q.len(), counts.len())?;
    let n: usize = counts.iter().sum();
    let denom = n as f64 + pseudo_count * counts.len() as f64;
    let mut kl = 0.0;
    for (&c, &qv) in counts.iter().zip(q) {
        if qv > 0.0 {
            let p = (c as f64 + pseudo_count) / denom;
            kl += qv * (qv / p).ln();
        }
    }
    Ok(kl)
}

/// Histogram KL between 2-D samples and a 2-D mixture, with the target
/// integrated per bin.
pub fn kl_histogram_2d(samples: &[State], target: &GmmTarget, spec: &HistogramSpec) -> Result<f64> {
    let q = binned_target(target, spec)?;
    kl_histogram_2d_with(samples, &q, spec)
}

/// As [`kl_histogram_2d`] with precomputed bin probabilities.
pub fn kl_histogram_2d_with(samples: &[State], q: &[f64], spec: &HistogramSpec) -> Result<f64> {
    spec.validate()?;
    let b = spec.bins;
    let mut counts = vec![0usize; b * b];
    for s in samples {
        check_dim(2, s.dim())?;
        counts[spec.bin_of(0, s[0]) * b + spec.bin_of(1, s[1])] += 1;
    }
    kl_binned(&counts, q, spec.pseudo_count)
}

/// 1-D histogram KL of `xs` against the slice `x ↦ p(x, y)` of a 2-D
/// mixture, over `spec`'s first axis.
pub fn kl_histogram_slice(xs: &[f64], target: &GmmTarget, y: f64, spec: &HistogramSpec) -> Result<f64> {
    spec.validate()?;
    check_dim(2, target.dim())?;
    let (b, m) = (spec.bins, spec.subdivisions);
    let h = spec.width(0) / m as f64;
    let mut q = vec![0.0; b];
    for (i, qv) in q.iter_mut().enumerate() {
        for u in 0..m {
            let x = spec.lo[0] + (i * m + u) as f64 * h + 0.5 * h;
            *qv += target.log_density(&[x, y], 1.0)?.exp();
        }
    }
    let q = normalize(q)?;
    let mut counts = vec![0usize; b];
    for &x in xs {
        counts[spec.bin_of(0, x)] += 1;
    }
    kl_binned(&counts, &q, spec.pseudo_count)
}

/// Equal-weight isotropic mixture with means uniform in a square.
pub fn generate_gmm(n_components: usize, std: f64, half_width: f64, seed: u64) -> Result<GmmTarget> {
    if n_components == 0 || !(std > 0.0) || !(half_width > 0.0) {
        return Err(Error::InvalidConfig("mixture generator needs components, std > 0 and width > 0".into()));
    }
    let mut rng = RandomSource::new(seed);
    let means = (0..n_components)
        .map(|_| (0..2).map(|_| half_width * (2.0 * rng.uniform() - 1.0)).collect())
        .collect();
    let w = vec![1.0 / n_components as f64; n_components];
    GmmTarget::isotropic(w, means, std * std)
}

/// Average per-coordinate component variance, the natural expected-noise
/// level `α` for a mixture of blobs.
pub fn mean_component_variance(target: &GmmTarget) -> f64 {
    let d = target.dim() as f64;
    let total: f64 = target
        .weights()
        .iter()
        .zip(target.covs())
        .map(|(w, c)| w * (0..target.dim()).map(|i| c.get(i, i)).sum::<f64>() / d)
        .sum();
    total
}

/// The default 500-component benchmark mixture.
pub fn default_gmm() -> GmmTarget {
    generate_gmm(GMM_COMPONENTS, GMM_STD, GMM_HALF_WIDTH, GMM_SEED).expect("default generator settings are valid")
}

/// Draws from `p(x | y)` for a 2-D mixture (x = coordinate 0).
fn sample_slice(target: &GmmTarget, y: f64, rng: &mut RandomSource, weights: &[f64]) -> f64 {
    let k = rng.categorical(weights);
    let (m, c) = (&target.means()[k], &target.covs()[k]);
    let g = c.get(0, 1) / c.get(1, 1);
    let var = c.get(0, 0) - g * c.get(0, 1);
    m[0] + g * (y - m[1]) + var.max(0.0).sqrt() * rng.normal()
}

fn slice_weights(target: &GmmTarget, y: f64) -> Result<Vec<f64>> {
    let lw: Vec<f64> = target
        .weights()
        .iter()
        .zip(target.means().iter().zip(target.covs()))
        .map(|(w, (m, c))| {
            let v = c.get(1, 1);
            w.ln() - 0.5 * ((y - m[1]).powi(2) / v + v.ln())
        })
        .collect();
    let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    normalize(lw.iter().map(|l| (l - top).exp()).collect())
}

/// Value below which a fraction `p` of the (sorted) values lie.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidRange("percentile of an empty set or p outside [0, 1]".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[((v.len() - 1) as f64 * p).floor() as usize])
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidRange("median of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// One benchmark configuration: method, grid length, hyperparameters and
/// master seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchCell {
    pub method: Method,
    pub outer_steps: usize,
    pub cfg: LanPaintConfig,
    pub seed: u64,
}

impl BenchCell {
    fn run(&self, mask: Mask, y_obs: State) -> Result<SamplerRun> {
        Ok(SamplerRun {
            method: self.method,
            grid: SamplerGrid::euler(self.outer_steps)?,
            cfg: self.cfg,
            mask,
            y_obs,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub cell: BenchCell,
    pub n_samples: usize,
    /// Clamped at 0.
    pub kl: f64,
    /// Mixture benchmark only.
    pub trap_frac: Option<f64>,
    pub sample_mean: Vec<f64>,
    pub sample_cov: SymMatrix,
    pub wall_time_s: f64,
}

pub const CSV_HEADER: &str =
    "method,outer_steps,inner_steps,eta,gamma,lambda,alpha,seed,n_samples,kl,trap_frac,wall_time_s";

impl BenchmarkReport {
    /// One CSV row matching [`CSV_HEADER`]. Wall time is left empty unless
    /// `with_time`, so rows are reproducible byte for byte.
    pub fn csv_row(&self, with_time: bool) -> String {
        let c = &self.cell;
        let trap = self.trap_frac.map(|v| v.to_string()).unwrap_or_default();
        let time = if with_time { format!("{:.3}", self.wall_time_s) } else { String::new() };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.method,
            c.outer_steps,
            if c.method.uses_inner_steps() { c.cfg.inner_steps } else { 0 },
            c.cfg.eta,
            c.cfg.gamma0,
            c.cfg.lambda,
            c.cfg.alpha_noise,
            c.seed,
            self.n_samples,
            self.kl,
            trap,
            time
        )
    }
}

/// Report plus the raw samples (for plotting).
#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub report: BenchmarkReport,
    pub samples: Vec<State>,
}

/// 2-D joint with `x` = coordinate 0 and `y` = coordinate 1 observed.
#[derive(Debug, Clone, PartialEq)]
pub struct CondGaussianBench {
    pub joint: GaussianTarget,
    pub y_value: f64,
    pub n_samples: usize,
}

impl Default for CondGaussianBench {
    fn default() -> Self {
        CondGaussianBench {
            joint: GaussianTarget::correlated_pair(DEFAULT_RHO).expect("|rho| < 1"),
            y_value: DEFAULT_Y,
            n_samples: 50_000,
        }
    }
}

impl CondGaussianBench {
    pub fn mask() -> Mask {
        Mask::new(vec![false, true])
    }

    pub fn truth(&self) -> Result<GaussianTarget> {
        gaussian_conditional(&self.joint, &Self::mask(), &[0.0, self.y_value])
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("samples must be at least 2, got {n}")));
    }
    Ok(())
}

/// Draws `n_samples` conditional samples of `x` and scores them with the
/// moment-fitted Gaussian KL.
pub fn run_gaussian_bench(bench: &CondGaussianBench, cell: &BenchCell, exec: ExecMode) -> Result<BenchOutput> {
    check_dim(2, bench.joint.dim())?;
    check_samples(bench.n_samples)?;
    let truth = bench.truth()?;
    let start = Instant::now();
    let sampler = Sampler::new(cell.run(CondGaussianBench::mask(), State::new(vec![0.0, bench.y_value]))?, 2)?;
    let samples = map_chains(bench.n_samples, exec, |i| {
        let mut rng = RandomSource::for_chain(cell.seed, i as u64);
        let z = sampler.sample(&bench.joint, &mut rng)?;
        Ok(State::new(vec![z[0]]))
    })?;
    let wall = start.elapsed().as_secs_f64();
    let (m, s) = sample_moments(&samples)?;
    let kl = kl_gaussians(&m, &s, &truth)?;
    if !kl.is_finite() {
        return Err(Error::DegenerateSamples("KL is not finite".into()));
    }
    Ok(BenchOutput {
        report: BenchmarkReport {
            cell: *cell,
            n_samples: bench.n_samples,
            kl: kl.max(0.0),
            trap_frac: None,
            sample_mean: m,
            sample_cov: s,
            wall_time_s: wall,
        },
        samples,
    })
}

/// Mixture benchmark: `x` (coordinate 0) is inpainted given `y`
/// (coordinate 1). By default `y` is drawn from the target's marginal per
/// sample; `slice_y` fixes it instead.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmBench {
    pub target: GmmTarget,
    pub n_samples: usize,
    pub hist: HistogramSpec,
    pub slice_y: Option<f64>,
}

impl GmmBench {
    pub fn new(target: GmmTarget, n_samples: usize) -> Result<Self> {
        let hist = HistogramSpec::for_target(&target)?;
        Ok(GmmBench { target, n_samples, hist, slice_y: None })
    }

    /// Samples from the target's own conditional law (or joint law in
    /// marginal mode), drawn on a stream disjoint from the sampler chains.
    pub fn reference_samples(&self, n: usize, seed: u64, exec: ExecMode) -> Result<Vec<State>> {
        let master = seed ^ REFERENCE_STREAM;
        match self.slice_y {
            None => map_chains(n, exec, |i| Ok(self.target.sample(&mut RandomSource::for_chain(master, i as u64)))),
            Some(y) => {
                let w = slice_weights(&self.target, y)?;
                map_chains(n, exec, |i| {
                    let mut rng = RandomSource::for_chain(master, i as u64);
                    Ok(State::new(vec![sample_slice(&self.target, y, &mut rng, &w), y]))
                })
            }
        }
    }

    /// Histogram KL of `samples` against the target (the slice in fixed-y
    /// mode).
    pub fn kl(&self, samples: &[State]) -> Result<f64> {
        match self.slice_y {
            None => kl_histogram_2d(samples, &self.target, &self.hist),
            Some(y) => {
                let xs: Vec<f64> = samples.iter().map(|s| s[0]).collect();
                kl_histogram_slice(&xs, &self.target, y, &self.hist)
            }
        }
    }

    /// Share of `samples` whose clean log-density falls below the
    /// [`TRAP_PERCENTILE`] of the reference samples' log-density.
    pub fn trap_fraction(&self, samples: &[State], reference: &[State]) -> Result<f64> {
        let lp = |s: &State| self.target.log_density(s, 1.0);
        let ref_lp = reference.iter().map(lp).collect::<Result<Vec<f64>>>()?;
        let cut = percentile(&ref_lp, TRAP_PERCENTILE)?;
        let mut below = 0usize;
        for s in samples {
            if lp(s)? < cut {
                below += 1;
            }
        }
        Ok(below as f64 / samples.len().max(1) as f64)
    }
}

pub fn run_gmm_bench(bench: &GmmBench, cell: &BenchCell, exec: ExecMode) -> Result<BenchOutput> {
    check_dim(2, bench.target.dim())?;
    check_samples(bench.n_samples)?;
    let start = Instant::now();
    let y0 = bench.slice_y.unwrap_or(0.0);
    let sampler = Sampler::new(cell.run(Mask::new(vec![false, true]), State::new(vec![0.0, y0]))?, 2)?;
    let samples = map_chains(bench.n_samples, exec, |i| {
        let mut rng = RandomSource::for_chain(cell.seed, i as u64);
        let y = match bench.slice_y {
            Some(y) => y,
            None => bench.target.sample(&mut rng)[1],
        };
        sampler.sample_observed(&bench.target, &[0.0, y], &mut rng)
    })?;
    let wall = start.elapsed().as_secs_f64();
    let kl = bench.kl(&samples)?;
    let reference = bench.reference_samples(bench.n_samples, cell.seed, exec)?;
    let trap = bench.trap_fraction(&samples, &reference)?;
    let (m, s) = sample_moments(&samples)?;
    Ok(BenchOutput {
        report: BenchmarkReport {
            cell: *cell,
            n_samples: bench.n_samples,
            kl: kl.max(0.0),
            trap_frac: Some(trap),
            sample_mean: m,
            sample_cov: s,
            wall_time_s: wall,
        },
        samples,
    })
}

/// Cross product of methods, grid lengths, inner-step counts and seeds.
/// Methods without inner steps get a single inner-step entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub methods: Vec<Method>,
    pub steps: Vec<usize>,
    pub inner: Vec<usize>,
    pub seeds: Vec<u64>,
    pub base: LanPaintConfig,
}

impl Sweep {
    pub fn cells(&self) -> Vec<BenchCell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &outer_steps in &self.steps {
                let inner: &[usize] = if method.uses_inner_steps() { &self.inner } else { &self.inner[..1.min(self.inner.len())] };
                for &n in inner {
                    for &seed in &self.seeds {
                        let cfg = LanPaintConfig { inner_steps: n, ..self.base };
                        out.push(BenchCell { method, outer_steps, cfg, seed });
                    }
                }
            }
        }
        out
    }
}

/// One point of the guided-score deviation curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRatioPoint {
    pub alpha_bar: f64,
    pub ratio: f64,
}

/// Observed-coordinate parts of the ideal score and the guided score at a
/// single state.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedScores {
    /// `(1+λ)∇_y log p_t(x|y) − (1+λ)(y − √ᾱ y_o)/(1−ᾱ) − λ∇_y log p_t(x, y)`.
    pub ideal: Vec<f64>,
    /// `g_λ`.
    pub guided: Vec<f64>,
    /// `∇_y log p_t(x|y)`.
    pub conditional: Vec<f64>,
}

/// Evaluates [`ObservedScores`] for a Gaussian joint at `z`.
pub fn observed_scores(
    joint: &GaussianTarget,
    mask: &Mask,
    y_obs: &[f64],
    z: &[f64],
    alpha_bar: f64,
    lambda: f64,
) -> Result<ObservedScores> {
    let marginal = observed_marginal(joint, mask)?;
    let y_idx = mask.observed_indices();
    observed_scores_with(joint, &marginal, &y_idx, mask, y_obs, z, alpha_bar, lambda)
}

/// Clean marginal `p(y)`; its score at `ᾱ` is that of `p_t(y)`.
fn observed_marginal(joint: &GaussianTarget, mask: &Mask) -> Result<GaussianTarget> {
    let y_idx = mask.observed_indices();
    let cov = SymMatrix::from_rows(&rows(&joint.cov().block(&y_idx, &y_idx), y_idx.len()))?;
    GaussianTarget::new(y_idx.iter().map(|&i| joint.mean()[i]).collect(), cov)
}

#[allow(clippy::too_many_arguments)]
fn observed_scores_with(
    joint: &GaussianTarget,
    marginal: &GaussianTarget,
    y_idx: &[usize],
    mask: &Mask,
    y_obs: &[f64],
    z: &[f64],
    ab: f64,
    lambda: f64,
) -> Result<ObservedScores> {
    let s_joint = joint.score(z, ab)?;
    let y: Vec<f64> = y_idx.iter().map(|&i| z[i]).collect();
    let s_marg = marginal.score(&y, ab)?;
    let mut guided_full = s_joint.clone();
    big_score_in_place(z, y_obs, mask, ab, lambda, &mut guided_full)?;
    let k = 1.0 + lambda;
    let sab = ab.sqrt();
    let mut ideal = Vec::with_capacity(y_idx.len());
    let mut guided = Vec::with_capacity(y_idx.len());
    let mut conditional = Vec::with_capacity(y_idx.len());
    for (r, &i) in y_idx.iter().enumerate() {
        let cond = s_joint[i] - s_marg[r];
        ideal.push(k * cond - k * (z[i] - sab * y_obs[i]) / (1.0 - ab) - lambda * s_joint[i]);
        guided.push(guided_full[i]);
        conditional.push(cond);
    }
    Ok(ObservedScores { ideal, guided, conditional })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `E‖s*_y − g_λ‖ / E‖s*_y‖` at each `alpha_bar`, with states drawn from
/// `p_t(y | y_o) p_t(x | y)`.
pub fn score_ratio_curve(
    joint: &GaussianTarget,
    mask: &Mask,
    y_obs: &[f64],
    lambda: f64,
    alpha_bars: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<ScoreRatioPoint>> {
    let d = joint.dim();
    check_dim(d, y_obs.len())?;
    mask.validate_conditional(d)?;
    if n_draws == 0 {
        return Err(Error::InvalidConfig("score ratio needs at least one draw".into()));
    }
    let y_idx = mask.observed_indices();
    let marginal = observed_marginal(joint, mask)?;
    let mut out = Vec::with_capacity(alpha_bars.len());
    for (g, &ab) in alpha_bars.iter().enumerate() {
        if !(ab > 0.0 && ab < 1.0) {
            return Err(Error::InvalidRange(format!("alpha_bar must lie in (0, 1), got {ab}")));
        }
        let diffused = GaussianTarget::new(
            joint.mean().iter().map(|m| ab.sqrt() * m).collect(),
            joint.cov().scale_shift(ab, 1.0 - ab),
        )?;
        let cond = Conditioner::new(&diffused, mask)?;
        let lc = cholesky(&cond.cov)?;
        let mut rng = RandomSource::for_chain(seed, g as u64);
        let (mut num, mut den) = (0.0, 0.0);
        let mut z = vec![0.0; d];
        for _ in 0..n_draws {
            let y: Vec<f64> = y_idx.iter().map(|&i| ab.sqrt() * y_obs[i] + (1.0 - ab).sqrt() * rng.normal()).collect();
            let mx = cond.mean(&y);
            let e: Vec<f64> = (0..mx.len()).map(|_| rng.normal()).collect();
            let dx = lc.mul_vec(&e);
            for (r, &i) in cond.x_idx.iter().enumerate() {
                z[i] = mx[r] + dx[r];
            }
            for (r, &i) in cond.y_idx.iter().enumerate() {
                z[i] = y[r];
            }
            let s = observed_scores_with(joint, &marginal, &y_idx, mask, y_obs, &z, ab, lambda)?;
            let diff: Vec<f64> = s.ideal.iter().zip(&s.guided).map(|(a, b)| a - b).collect();
            num += norm(&diff);
            den += norm(&s.ideal);
        }
        if !(den > 0.0) {
            return Err(Error::DegenerateSamples("ideal score vanished on every draw".into()));
        }
        out.push(ScoreRatioPoint { alpha_bar: ab, ratio: num / den });
    }
    Ok(out)
}

/// `ᾱ = 1 − 10^{-k}` for `count` values of `k` evenly spaced in `[1, 4]`.
pub fn default_ratio_grid(count: usize) -> Vec<f64> {
    log_grid(1e-1, 1e-4, count)
}

/// `ᾱ = 1 − u` with `u` log-spaced from `hi` down to `lo`.
pub fn log_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![1.0 - hi];
    }
    (0..count)
        .map(|i| {
            let f = i as f64 / (count - 1) as f64;
            1.0 - (hi.ln() + f * (lo.ln() - hi.ln())).exp()
        })
        .collect()
}

/// Least-squares slope of `ln ratio` against `ln(1 − ᾱ)`.
pub fn log_log_slope(points: &[ScoreRatioPoint]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| ((1.0 - p.alpha_bar).ln(), p.ratio.ln()))
        .collect();
    if pts.len() < 2 || pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidRange("slope needs at least two finite points".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidRange("slope needs distinct alpha_bar values".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}
