//! Backward diffusion drivers and the conditional samplers built on them.
//!
//! Sampler states are kept in VP coordinates. The outer driver is Euler on
//! the probability-flow ODE in VE coordinates, `dz_ve = ε dσ`; VP (DDIM form)
//! and RF drivers exist to check that the three notations coincide.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::fld::{
    big_score_in_place, build_c_into, coef_x_ab, coef_y_ab, fld_step, schedules, FldRegion, FldState,
    LanPaintConfig, D_COEF,
};
use crate::schedule::{alpha_bar_continuous, alpha_bar_from_sigma, DiffusionSchedule, SamplerGrid};
use crate::scores::ScoreModel;
use crate::state::{gaussian_vector, Mask, RandomSource, State};

/// Step size used by plain Langevin refinement unless overridden.
pub const LANGEVIN_ETA: f64 = 0.04;

/// Conditional sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Replace,
    Repaint,
    Langevin,
    LanPaint,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Replace, Method::Repaint, Method::Langevin, Method::LanPaint];

    pub fn name(self) -> &'static str {
        match self {
            Method::Replace => "replace",
            Method::Repaint => "repaint",
            Method::Langevin => "langevin",
            Method::LanPaint => "lanpaint",
        }
    }

    /// Whether the method runs inner refinement iterations.
    pub fn uses_inner_steps(self) -> bool {
        !matches!(self, Method::Replace)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "replace" => Ok(Method::Replace),
            "repaint" | "repaint-euler" => Ok(Method::Repaint),
            "langevin" | "tfg" => Ok(Method::Langevin),
            "lanpaint" => Ok(Method::LanPaint),
            other => Err(Error::InvalidConfig(format!(
                "unknown method {other:?} (expected replace, repaint, langevin or lanpaint)"
            ))),
        }
    }
}

/// Everything that defines one conditional sampling run except the model
/// and the random stream. `y_obs` is full length; only observed entries are
/// read.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerRun {
    pub method: Method,
    pub grid: SamplerGrid,
    pub cfg: LanPaintConfig,
    pub mask: Mask,
    pub y_obs: State,
}

impl SamplerRun {
    pub fn validate(&self, d: usize) -> Result<()> {
        self.mask.check_len(d)?;
        check_dim(d, self.y_obs.dim())?;
        self.cfg.validate()?;
        if !self.y_obs.is_finite() {
            return Err(Error::InvalidConfig("observed values must be finite".into()));
        }
        Ok(())
    }
}

/// Sampler output; `states` holds the state after each outer step when
/// recording is on (the last entry then equals `final_state`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub final_state: State,
}

/// One draw from `p_t(·|z0)`: `√ᾱ z0 + √(1−ᾱ) ε`.
pub fn forward_diffuse(z0: &[f64], t: f64, rng: &mut RandomSource) -> State {
    forward_diffuse_ab(z0, alpha_bar_continuous(t), rng)
}

pub fn forward_diffuse_ab(z0: &[f64], alpha_bar: f64, rng: &mut RandomSource) -> State {
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    State::new(z0.iter().map(|v| a * v + b * rng.normal()).collect())
}

/// Euler step `σ_i → σ_{i+1}` of the probability-flow ODE in VE
/// coordinates, with the state passed in and returned in VP coordinates.
pub fn euler_ode_step<M: ScoreModel + ?Sized>(
    z: &[f64],
    i: usize,
    model: &M,
    grid: &SamplerGrid,
) -> Result<State> {
    check_step(i, grid)?;
    let mut out = z.to_vec();
    let mut s = vec![0.0; z.len()];
    euler_in_place(&mut out, i, model, grid, &mut s)?;
    Ok(State::new(out))
}

fn check_step(i: usize, grid: &SamplerGrid) -> Result<()> {
    if i < grid.steps() {
        Ok(())
    } else {
        Err(Error::InvalidRange(format!("step {i} outside 0..{}", grid.steps())))
    }
}

fn euler_in_place<M: ScoreModel + ?Sized>(
    z: &mut [f64],
    i: usize,
    model: &M,
    grid: &SamplerGrid,
    s: &mut [f64],
) -> Result<()> {
    let sig = grid.sigma(i);
    let sig_next = grid.sigma(i + 1);
    let ab = alpha_bar_from_sigma(sig);
    model.score_into(z, ab, s)?;
    let to_ve = (1.0 + sig * sig).sqrt();
    let to_vp = 1.0 / (1.0 + sig_next * sig_next).sqrt();
    // ε = −√(1−ᾱ) s = −σ s / √(1+σ²)
    let eps_scale = -sig / to_ve;
    let dsig = sig_next - sig;
    for (zi, si) in z.iter_mut().zip(s.iter()) {
        let ve = *zi * to_ve + eps_scale * si * dsig;
        *zi = ve * to_vp;
    }
    Ok(())
}

/// Coordinates in which an ODE trajectory is integrated natively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Notation {
    /// Variance preserving, stepped in the DDIM form
    /// `z' = √ᾱ'(z − √(1−ᾱ)ε)/√ᾱ + √(1−ᾱ')ε`.
    Vp,
    /// Variance exploding, `z' = z + ε(σ' − σ)`.
    Ve,
    /// Rectified flow `r = z_ve/(1+σ)`, `s = σ/(1+σ)`, `r' = r + v(s' − s)`.
    Rf,
}

/// Maps a native state at noise level `sigma` to VP coordinates.
pub fn native_to_vp(z: &[f64], sigma: f64, notation: Notation) -> State {
    let k = match notation {
        Notation::Vp => 1.0,
        Notation::Ve => 1.0 / (1.0 + sigma * sigma).sqrt(),
        Notation::Rf => (1.0 + sigma) / (1.0 + sigma * sigma).sqrt(),
    };
    State::new(z.iter().map(|v| v * k).collect())
}

/// Maps a VP state at noise level `sigma` to native coordinates.
pub fn vp_to_native(z: &[f64], sigma: f64, notation: Notation) -> State {
    let k = match notation {
        Notation::Vp => 1.0,
        Notation::Ve => (1.0 + sigma * sigma).sqrt(),
        Notation::Rf => (1.0 + sigma * sigma).sqrt() / (1.0 + sigma),
    };
    State::new(z.iter().map(|v| v * k).collect())
}

/// Unconditional Euler trajectory integrated natively in `notation`,
/// starting from the VP state `z_init` at `σ_0`. Returns the native state at
/// every grid point (length `steps + 1`).
pub fn ode_trajectory<M: ScoreModel + ?Sized>(
    model: &M,
    grid: &SamplerGrid,
    z_init: &[f64],
    notation: Notation,
) -> Result<Vec<State>> {
    let mut z = vp_to_native(z_init, grid.sigma(0), notation);
    let mut out = vec![z.clone()];
    let mut s = vec![0.0; z.dim()];
    for i in 0..grid.steps() {
        let sig = grid.sigma(i);
        let sig_next = grid.sigma(i + 1);
        let ab = alpha_bar_from_sigma(sig);
        let ab_next = alpha_bar_from_sigma(sig_next);
        let vp = native_to_vp(&z, sig, notation);
        model.score_into(&vp, ab, &mut s)?;
        let k = -(1.0 - ab).sqrt();
        let eps: Vec<f64> = s.iter().map(|v| k * v).collect();
        match notation {
            Notation::Vp => {
                let (a, a1) = (ab.sqrt(), ab_next.sqrt());
                let (b, b1) = ((1.0 - ab).sqrt(), (1.0 - ab_next).sqrt());
                for (zi, e) in z.iter_mut().zip(&eps) {
                    *zi = a1 * (*zi - b * e) / a + b1 * e;
                }
            }
            Notation::Ve => {
                for (zi, e) in z.iter_mut().zip(&eps) {
                    *zi += e * (sig_next - sig);
                }
            }
            Notation::Rf => {
                let (t, t1) = (sig / (1.0 + sig), sig_next / (1.0 + sig_next));
                for (ri, e) in z.iter_mut().zip(&eps) {
                    let v = (e - *ri) / (1.0 - t);
                    *ri += v * (t1 - t);
                }
            }
        }
        out.push(z.clone());
    }
    Ok(out)
}

/// `(z + β s)/√(1−β) + √β ξ`.
pub fn ddpm_update(z: &[f64], score: &[f64], beta: f64, noise: &[f64]) -> State {
    let k = 1.0 / (1.0 - beta).sqrt();
    let b = beta.sqrt();
    State::new(
        z.iter()
            .zip(score)
            .zip(noise)
            .map(|((zi, si), ni)| (zi + beta * si) * k + b * ni)
            .collect(),
    )
}

/// Backward step `i` of the discrete stochastic sampler on the full table:
/// moves from level `n − i` to `n − i − 1` using `β_{n−i−1}` and the score
/// at `ᾱ_{n−i}`.
pub fn ddpm_sde_step<M: ScoreModel + ?Sized>(
    z: &[f64],
    i: usize,
    model: &M,
    schedule: &DiffusionSchedule,
    rng: &mut RandomSource,
) -> Result<State> {
    let n = schedule.len();
    if i >= n {
        return Err(Error::InvalidRange(format!("step {i} outside 0..{n}")));
    }
    let level = n - i;
    let s = model.score(z, schedule.alpha_bars[level])?;
    let noise = gaussian_vector(rng, z.len());
    Ok(ddpm_update(z, &s, schedule.betas[level - 1], &noise))
}

/// Per-outer-step constants shared by all chains of a run.
#[derive(Debug, Clone)]
struct StepPlan {
    alpha_bar: f64,
    alpha_bar_next: f64,
    /// Inpainted-region and observed-region FLD kernels.
    regions: Vec<FldRegion>,
    a_x: f64,
    a_y: f64,
    langevin_dtau: f64,
}

/// A validated run with everything that does not depend on the chain
/// precomputed. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Sampler {
    run: SamplerRun,
    dim: usize,
    y_coords: Vec<usize>,
    plan: Vec<StepPlan>,
}

impl Sampler {
    pub fn new(run: SamplerRun, dim: usize) -> Result<Self> {
        run.validate(dim)?;
        let x_coords = run.mask.inpainted_indices();
        let y_coords = run.mask.observed_indices();
        let cfg = run.cfg;
        let grid = &run.grid;
        let ab_t = grid.alpha_bar_max_noise();
        let a_xt = coef_x_ab(ab_t, cfg.alpha_noise)?;
        let a_yt = coef_y_ab(ab_t, cfg.lambda)?;
        let mut plan = Vec::with_capacity(grid.steps());
        for i in 0..grid.steps() {
            let ab = grid.alpha_bar(i);
            let a_x = coef_x_ab(ab, cfg.alpha_noise)?;
            let a_y = coef_y_ab(ab, cfg.lambda)?;
            let mut regions = Vec::new();
            if run.method == Method::LanPaint && cfg.inner_steps > 0 {
                let (gx, dx) = schedules(&cfg, a_x, a_xt)?;
                let (gy, dy) = schedules(&cfg, a_y, a_yt)?;
                if !x_coords.is_empty() {
                    regions.push(FldRegion::new(x_coords.clone(), gx, a_x, D_COEF, dx)?);
                }
                if !y_coords.is_empty() {
                    regions.push(FldRegion::new(y_coords.clone(), gy, a_y, D_COEF, dy)?);
                }
            }
            plan.push(StepPlan {
                alpha_bar: ab,
                alpha_bar_next: grid.alpha_bar(i + 1),
                regions,
                a_x,
                a_y,
                langevin_dtau: cfg.eta * (1.0 - ab).sqrt(),
            });
        }
        Ok(Sampler { run, dim, y_coords, plan })
    }

    pub fn run(&self) -> &SamplerRun {
        &self.run
    }

    /// Score evaluations one chain makes.
    pub fn evaluations_per_chain(&self) -> usize {
        let per_step = match self.run.method {
            Method::Replace => 1,
            _ => self.run.cfg.inner_steps + 1,
        };
        per_step * self.run.grid.steps()
    }

    /// Draws one conditional sample starting from `z_T ~ N(0, I)`.
    pub fn sample<M: ScoreModel + ?Sized>(&self, model: &M, rng: &mut RandomSource) -> Result<State> {
        Ok(self.sample_trajectory(model, rng, false)?.final_state)
    }

    /// Like [`Sampler::sample`] but conditioned on `y_obs` instead of the
    /// run's observation (full length; only observed entries are read).
    pub fn sample_observed<M: ScoreModel + ?Sized>(
        &self,
        model: &M,
        y_obs: &[f64],
        rng: &mut RandomSource,
    ) -> Result<State> {
        check_dim(self.dim, y_obs.len())?;
        Ok(self.trajectory(model, y_obs, rng, false)?.final_state)
    }

    pub fn sample_trajectory<M: ScoreModel + ?Sized>(
        &self,
        model: &M,
        rng: &mut RandomSource,
        record: bool,
    ) -> Result<Trajectory> {
        self.trajectory(model, &self.run.y_obs, rng, record)
    }

    fn trajectory<M: ScoreModel + ?Sized>(
        &self,
        model: &M,
        y_obs: &[f64],
        rng: &mut RandomSource,
        record: bool,
    ) -> Result<Trajectory> {
        check_dim(self.dim, model.dim())?;
        let mut z = gaussian_vector(rng, self.dim);
        let mut s = vec![0.0; self.dim];
        let mut states = Vec::new();
        for (i, step) in self.plan.iter().enumerate() {
            self.replace_observed(&mut z, y_obs, step.alpha_bar, rng);
            match self.run.method {
                Method::Replace => {}
                Method::Repaint => {
                    for _ in 0..self.run.cfg.inner_steps {
                        euler_in_place(&mut z, i, model, &self.run.grid, &mut s)?;
                        let r = step.alpha_bar / step.alpha_bar_next;
                        let (a, b) = (r.sqrt(), (1.0 - r).sqrt());
                        for zi in z.iter_mut() {
                            *zi = a * *zi + b * rng.normal();
                        }
                        self.replace_observed(&mut z, y_obs, step.alpha_bar, rng);
                    }
                }
                Method::Langevin => self.langevin_inner(&mut z, y_obs, step, model, rng, &mut s)?,
                Method::LanPaint => z = self.lanpaint_inner(z, y_obs, step, model, rng)?,
            }
            euler_in_place(&mut z, i, model, &self.run.grid, &mut s)?;
            if record {
                states.push(z.clone());
            }
        }
        for &j in &self.y_coords {
            z[j] = y_obs[j];
        }
        if !z.is_finite() {
            return Err(Error::DegenerateSamples("sampler produced a non-finite state".into()));
        }
        if record {
            if let Some(last) = states.last_mut() {
                *last = z.clone();
            }
        }
        Ok(Trajectory { states, final_state: z })
    }

    /// Observed coordinates ← fresh draw from `p_t(y | y_o)`.
    fn replace_observed(&self, z: &mut [f64], y_obs: &[f64], ab: f64, rng: &mut RandomSource) {
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for &j in &self.y_coords {
            z[j] = a * y_obs[j] + b * rng.normal();
        }
    }

    /// Euler–Maruyama on the inpainted region with step `η√(1−ᾱ)`. With
    /// λ = 0 the observed region is an Ornstein–Uhlenbeck process around
    /// `√ᾱ y_o` that does not see `x`; it is advanced with its exact
    /// transition over the same step.
    fn langevin_inner<M: ScoreModel + ?Sized>(
        &self,
        z: &mut State,
        y_obs: &[f64],
        step: &StepPlan,
        model: &M,
        rng: &mut RandomSource,
        s: &mut [f64],
    ) -> Result<()> {
        let ab = step.alpha_bar;
        let dt = step.langevin_dtau;
        let noise = (2.0 * dt).sqrt();
        let rho = (-dt / (1.0 - ab)).exp();
        let ou_sd = ((1.0 - rho * rho) * (1.0 - ab)).sqrt();
        let sab = ab.sqrt();
        for _ in 0..self.run.cfg.inner_steps {
            model.score_into(z, ab, s)?;
            for j in 0..self.dim {
                let xi = rng.normal();
                if self.run.mask.is_observed(j) {
                    let m = sab * y_obs[j];
                    z[j] = m + rho * (z[j] - m) + ou_sd * xi;
                } else {
                    z[j] += s[j] * dt + noise * xi;
                }
            }
        }
        Ok(())
    }

    fn lanpaint_inner<M: ScoreModel + ?Sized>(
        &self,
        z: State,
        y_obs: &[f64],
        step: &StepPlan,
        model: &M,
        rng: &mut RandomSource,
    ) -> Result<State> {
        let ab = step.alpha_bar;
        let lambda = self.run.cfg.lambda;
        let mask = &self.run.mask;
        let mut st = FldState::new(z);
        let mut s = vec![0.0; self.dim];
        let mut c_fn = |zz: &[f64], c: &mut [f64]| -> Result<()> {
            model.score_into(zz, ab, &mut s)?;
            big_score_in_place(zz, y_obs, mask, ab, lambda, &mut s)?;
            build_c_into(zz, &s, step.a_x, step.a_y, mask, c);
            Ok(())
        };
        for _ in 0..self.run.cfg.inner_steps {
            fld_step(&mut st, &step.regions, &mut c_fn, rng)?;
        }
        Ok(st.z)
    }
}

fn run_method<M: ScoreModel + ?Sized>(
    method: Method,
    run: &SamplerRun,
    model: &M,
    rng: &mut RandomSource,
) -> Result<State> {
    let mut r = run.clone();
    r.method = method;
    Sampler::new(r, model.dim())?.sample(model, rng)
}

/// Replace baseline: observed coordinates are overwritten by a fresh
/// forward-diffused copy of `y_o` before every Euler step.
pub fn run_replace<M: ScoreModel + ?Sized>(run: &SamplerRun, model: &M, rng: &mut RandomSource) -> Result<State> {
    run_method(Method::Replace, run, model, rng)
}

/// Replace plus `inner_steps` cycles of (Euler step down, forward re-noise
/// back up) per outer step.
pub fn run_repaint<M: ScoreModel + ?Sized>(run: &SamplerRun, model: &M, rng: &mut RandomSource) -> Result<State> {
    run_method(Method::Repaint, run, model, rng)
}

/// Replace plus `inner_steps` overdamped Langevin updates per outer step.
pub fn run_langevin<M: ScoreModel + ?Sized>(run: &SamplerRun, model: &M, rng: &mut RandomSource) -> Result<State> {
    run_method(Method::Langevin, run, model, rng)
}

/// Guided score with `inner_steps` fast Langevin steps per outer step.
pub fn run_lanpaint<M: ScoreModel + ?Sized>(run: &SamplerRun, model: &M, rng: &mut RandomSource) -> Result<State> {
    run_method(Method::LanPaint, run, model, rng)
}
