//! Fast Langevin dynamics: the oscillator kernel applied with a score-derived
//! drive `C` that is frozen over each step, the guided score used on the
//! observed region, and the per-region coefficient schedules.
//!
//! The score is split as `s(z) = C(z) − A z`; the linear part is integrated
//! exactly by the kernel and `C` is refreshed once per step.

use crate::error::{check_dim, Error, Result};
use crate::schedule::alpha_bar_continuous;
use crate::scores::ScoreEval;
use crate::sho::ShoKernel;
use crate::state::{Mask, RandomSource, State};

/// Noise scale of the oscillator; `√2` makes the stationary law `∝ e^{log p}`.
pub const D_COEF: f64 = std::f64::consts::SQRT_2;

/// Hyperparameters of the guided Langevin refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanPaintConfig {
    /// Base step size η.
    pub eta: f64,
    /// Refinement steps N per diffusion step.
    pub inner_steps: usize,
    /// Friction scale γ, with Γ = γ²A.
    pub gamma0: f64,
    /// Expected noise level α of the target.
    pub alpha_noise: f64,
    /// Guidance scale λ > −1.
    pub lambda: f64,
}

impl Default for LanPaintConfig {
    fn default() -> Self {
        LanPaintConfig { eta: 0.15, inner_steps: 5, gamma0: 15.0, alpha_noise: 0.0, lambda: 8.0 }
    }
}

impl LanPaintConfig {
    /// `inner_steps = 0` is accepted and turns refinement off.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be > 0, got {}", self.gamma0)));
        }
        if !(self.alpha_noise >= 0.0 && self.alpha_noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha_noise)));
        }
        if !(self.lambda > -1.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be > -1, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Linear coefficient for the inpainted region, `1/(1 − ᾱ + ᾱα)`.
pub fn coef_x_ab(alpha_bar: f64, alpha_noise: f64) -> Result<f64> {
    let den = 1.0 - alpha_bar + alpha_bar * alpha_noise;
    if !(den > 0.0) {
        return Err(Error::DegenerateTime("inpainted-region coefficient at alpha_bar = 1 with alpha = 0".into()));
    }
    Ok(1.0 / den)
}

pub fn coef_x(t: f64, alpha_noise: f64) -> Result<f64> {
    coef_x_ab(alpha_bar_continuous(t), alpha_noise)
}

/// Linear coefficient for the observed region, `(1 + λ)/(1 − ᾱ)`.
pub fn coef_y_ab(alpha_bar: f64, lambda: f64) -> Result<f64> {
    if !(alpha_bar < 1.0) {
        return Err(Error::DegenerateTime("observed-region coefficient at alpha_bar = 1".into()));
    }
    Ok((1.0 + lambda) / (1.0 - alpha_bar))
}

pub fn coef_y(t: f64, lambda: f64) -> Result<f64> {
    coef_y_ab(alpha_bar_continuous(t), lambda)
}

/// Replaces the observed entries of the score `s` in place by
/// `(1+λ)(√ᾱ y_o − y)/(1−ᾱ) − λ s_y`. Inpainted entries are untouched.
pub fn big_score_in_place(
    z: &[f64],
    y_obs: &[f64],
    mask: &Mask,
    alpha_bar: f64,
    lambda: f64,
    s: &mut [f64],
) -> Result<()> {
    check_dim(z.len(), mask.len())?;
    check_dim(z.len(), s.len())?;
    check_dim(z.len(), y_obs.len())?;
    if !(alpha_bar < 1.0) {
        return Err(Error::DegenerateTime("guided score at alpha_bar = 1".into()));
    }
    let k = (1.0 + lambda) / (1.0 - alpha_bar);
    let sab = alpha_bar.sqrt();
    for i in 0..z.len() {
        if mask.is_observed(i) {
            s[i] = k * (sab * y_obs[i] - z[i]) - lambda * s[i];
        }
    }
    Ok(())
}

/// Guided score at forward time `t`: `s_x` on inpainted coordinates and
/// `g_λ` on observed ones.
pub fn big_score(
    z: &[f64],
    y_obs: &[f64],
    mask: &Mask,
    t: f64,
    lambda: f64,
    s: &[f64],
) -> Result<ScoreEval> {
    let mut out = s.to_vec();
    big_score_in_place(z, y_obs, mask, alpha_bar_continuous(t), lambda, &mut out)?;
    Ok(out)
}

/// `C = s_λ + A z` with `A = a_x` on inpainted and `a_y` on observed
/// coordinates.
pub fn build_c(z: &[f64], s_lambda: &[f64], a_x: f64, a_y: f64, mask: &Mask) -> Vec<f64> {
    let mut c = vec![0.0; z.len()];
    build_c_into(z, s_lambda, a_x, a_y, mask, &mut c);
    c
}

pub fn build_c_into(z: &[f64], s_lambda: &[f64], a_x: f64, a_y: f64, mask: &Mask, out: &mut [f64]) {
    for i in 0..z.len() {
        let a = if mask.is_observed(i) { a_y } else { a_x };
        out[i] = s_lambda[i] + a * z[i];
    }
}

/// Friction `Γ = γ²A` and step `Δτ = η A_T / A`, so that `ΓΔτ = γ²ηA_T`
/// does not depend on the diffusion time.
pub fn schedules(cfg: &LanPaintConfig, a: f64, a_t: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && a_t > 0.0) {
        return Err(Error::InvalidRange(format!("coefficients must be positive, got A={a}, A_T={a_t}")));
    }
    Ok((cfg.gamma0 * cfg.gamma0 * a, cfg.eta * a_t / a))
}

/// A set of coordinates advanced with one `(Γ, A, Δτ)`.
#[derive(Debug, Clone)]
pub struct FldRegion {
    coords: Vec<usize>,
    gamma: f64,
    dtau: f64,
    full: ShoKernel,
    half: ShoKernel,
}

impl FldRegion {
    pub fn new(coords: Vec<usize>, gamma: f64, a: f64, d_coef: f64, dtau: f64) -> Result<Self> {
        Ok(FldRegion {
            coords,
            gamma,
            dtau,
            full: ShoKernel::new(gamma, a, d_coef, dtau)?,
            half: ShoKernel::new(gamma, a, d_coef, 0.5 * dtau)?,
        })
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dtau(&self) -> f64 {
        self.dtau
    }

    pub fn kernel(&self) -> &ShoKernel {
        &self.full
    }
}

/// Chain state between refinement steps. `q` and `c_prev` are cleared at
/// every diffusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct FldState {
    pub z: State,
    pub q: Option<State>,
    pub c_prev: Option<Vec<f64>>,
}

impl FldState {
    pub fn new(z: State) -> Self {
        FldState { z, q: None, c_prev: None }
    }

    pub fn reset(&mut self) {
        self.q = None;
        self.c_prev = None;
    }
}

fn init_momentum(state: &mut FldState, regions: &[FldRegion], rng: &mut RandomSource) -> State {
    match state.q.take() {
        Some(q) => q,
        None => {
            let mut q = State::zeros(state.z.dim());
            for r in regions {
                r.full.init_momentum(&mut q, &r.coords, rng);
            }
            q
        }
    }
}

/// One step with `C` evaluated at the current position (one `c_fn` call).
/// A missing momentum is drawn from its stationary law first.
pub fn fld_step_first<F>(
    state: &mut FldState,
    regions: &[FldRegion],
    mut c_fn: F,
    rng: &mut RandomSource,
) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let mut c = vec![0.0; state.z.dim()];
    c_fn(&state.z, &mut c)?;
    let mut q = init_momentum(state, regions, rng);
    for r in regions {
        r.full.advance(&mut state.z, &mut q, &c, &r.coords, rng);
    }
    state.q = Some(q);
    state.c_prev = Some(c);
    Ok(())
}

/// Strang-split step: half step with the cached `C₀`, refresh `C` at the
/// midpoint (one `c_fn` call), kick `q += Γ(C − C₀)Δτ`, second half step
/// with `C₀`. The midpoint `C` is cached for the next step.
pub fn fld_step_second<F>(
    state: &mut FldState,
    regions: &[FldRegion],
    mut c_fn: F,
    rng: &mut RandomSource,
) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let d = state.z.dim();
    let c0 = match state.c_prev.take() {
        Some(c) => c,
        None => {
            let mut c = vec![0.0; d];
            c_fn(&state.z, &mut c)?;
            c
        }
    };
    check_dim(d, c0.len())?;
    let mut q = init_momentum(state, regions, rng);
    for r in regions {
        r.half.advance(&mut state.z, &mut q, &c0, &r.coords, rng);
    }
    let mut c_new = vec![0.0; d];
    c_fn(&state.z, &mut c_new)?;
    for r in regions {
        let k = r.gamma * r.dtau;
        for &i in &r.coords {
            q[i] += k * (c_new[i] - c0[i]);
        }
    }
    for r in regions {
        r.half.advance(&mut state.z, &mut q, &c0, &r.coords, rng);
    }
    state.q = Some(q);
    state.c_prev = Some(c_new);
    Ok(())
}

/// First-order step when no momentum is carried yet, second-order otherwise.
pub fn fld_step<F>(state: &mut FldState, regions: &[FldRegion], c_fn: F, rng: &mut RandomSource) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if state.q.is_none() {
        fld_step_first(state, regions, c_fn, rng)
    } else {
        fld_step_second(state, regions, c_fn, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sho::aux_functions;
    use proptest::prelude::*;

    fn t_of(ab: f64) -> f64 {
        -ab.ln()
    }

    #[test]
    fn coefficient_values() {
        assert!((coef_x(t_of(0.75), 0.0).unwrap() - 4.0).abs() < 1e-12);
        for t in [0.0, 0.3, 5.0] {
            assert!((coef_x(t, 1.0).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((coef_x(60.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(coef_x(0.0, 0.0), Err(Error::DegenerateTime(_))));
        assert!((coef_y(t_of(0.5), 0.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((coef_y(t_of(0.5), 8.0).unwrap() - 18.0).abs() < 1e-12);
        assert!(coef_y(t_of(0.5), -1.0 + 1e-12).unwrap() < 1e-10);
        assert!(matches!(coef_y(0.0, 8.0), Err(Error::DegenerateTime(_))));
    }

    #[test]
    fn guided_score_cases() {
        let mask = Mask::observing(2, &[1]).unwrap();
        let z = [0.3, -0.4];
        let y = [0.0, 1.2];
        let s = [0.7, 0.9];
        let ab: f64 = 0.6;
        let t = t_of(ab);
        let g0 = big_score(&z, &y, &mask, t, 0.0, &s).unwrap();
        assert_eq!(g0[0], 0.7);
        assert!((g0[1] - (ab.sqrt() * 1.2 + 0.4) / (1.0 - ab)).abs() < 1e-14);
        let gm = big_score(&z, &y, &mask, t, -1.0, &s).unwrap();
        assert!((gm[1] - 0.9).abs() < 1e-14);
        let on = [0.3, ab.sqrt() * 1.2];
        let g = big_score(&on, &y, &mask, t, 8.0, &s).unwrap();
        assert!((g[1] + 8.0 * 0.9).abs() < 1e-13);
        assert!(matches!(big_score(&z, &y, &mask, 0.0, 8.0, &s), Err(Error::DegenerateTime(_))));
    }

    #[test]
    fn c_builder_cases() {
        let mask = Mask::observing(2, &[1]).unwrap();
        let z = [0.5, -2.0];
        let s = [-3.0 * 0.5, -7.0 * -2.0];
        assert_eq!(build_c(&z, &s, 3.0, 7.0, &mask), vec![0.0, 0.0]);
        assert_eq!(build_c(&[0.0, 0.0], &[1.5, -2.5], 3.0, 7.0, &mask), vec![1.5, -2.5]);
    }

    #[test]
    fn schedule_invariants() {
        let cfg = LanPaintConfig::default();
        let (g, _) = schedules(&cfg, 4.0, 1.0).unwrap();
        assert_eq!(g, 900.0);
        let a_t = 1.3;
        let prod = cfg.gamma0 * cfg.gamma0 * cfg.eta * a_t;
        for a in [1.3, 2.0, 50.0, 1e4] {
            let (g, dt) = schedules(&cfg, a, a_t).unwrap();
            assert!((g * dt - prod).abs() <= 1e-12 * prod);
            assert!((1.0 - 4.0 * a / g - (1.0 - 4.0 / 225.0)).abs() < 1e-15);
        }
        assert!(schedules(&cfg, 0.0, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LanPaintConfig::default().validate().is_ok());
        for bad in [
            LanPaintConfig { lambda: -1.0, ..Default::default() },
            LanPaintConfig { eta: 0.0, ..Default::default() },
            LanPaintConfig { gamma0: -1.0, ..Default::default() },
            LanPaintConfig { alpha_noise: -0.1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn noiseless_free_drift() {
        let region = FldRegion::new(vec![0, 1], 2.0, 0.0, 0.0, 0.5).unwrap();
        let mut st = FldState::new(State::new(vec![1.0, -1.0]));
        st.q = Some(State::new(vec![0.4, 2.0]));
        let mut rng = RandomSource::new(0);
        fld_step_first(&mut st, &[region], |_, c| {
            c.fill(0.0);
            Ok(())
        }, &mut rng)
        .unwrap();
        let z2 = aux_functions(1.0, 1.0).zeta2;
        assert!((st.z[0] - (1.0 + 0.4 * z2 * 0.5)).abs() < 1e-15);
        assert!((st.z[1] - (-1.0 + 2.0 * z2 * 0.5)).abs() < 1e-15);
    }

    fn std_normal_c(a: f64) -> impl Fn(&[f64], &mut [f64]) -> Result<()> {
        move |z, c| {
            for (ci, zi) in c.iter_mut().zip(z) {
                *ci = -zi + a * zi;
            }
            Ok(())
        }
    }

    /// Runs `chains` single-coordinate chains and returns (var z, var q, corr).
    fn run_chains(gamma: f64, a: f64, dtau: f64, chains: u64, steps: usize, second: bool) -> (f64, f64, f64) {
        let region = [FldRegion::new(vec![0], gamma, a, D_COEF, dtau).unwrap()];
        let c_fn = std_normal_c(a);
        let (mut sz, mut sq, mut szz, mut sqq, mut szq) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ch in 0..chains {
            let mut rng = RandomSource::for_chain(99, ch);
            let mut st = FldState::new(State::new(vec![rng.normal()]));
            for _ in 0..steps {
                if second {
                    fld_step(&mut st, &region, &c_fn, &mut rng).unwrap();
                } else {
                    fld_step_first(&mut st, &region, &c_fn, &mut rng).unwrap();
                }
            }
            let z = st.z[0];
            let q = st.q.as_ref().unwrap()[0];
            sz += z;
            sq += q;
            szz += z * z;
            sqq += q * q;
            szq += z * q;
        }
        let n = chains as f64;
        let vz = szz / n - (sz / n).powi(2);
        let vq = sqq / n - (sq / n).powi(2);
        let cov = szq / n - sz * sq / (n * n);
        (vz, vq, cov / (vz * vq).sqrt())
    }

    #[test]
    fn first_order_stationary_on_standard_normal() {
        let (vz, vq, _) = run_chains(4.0, 1.0, 0.5, 10_000, 200, false);
        assert!((0.97..=1.03).contains(&vz), "{vz}");
        assert!((vq / 4.0 - 1.0).abs() < 0.05, "{vq}");
    }

    #[test]
    fn orders_agree_for_constant_drive() {
        // A = 1 makes C ≡ 0, so both solvers integrate exactly.
        let (v1, q1, _) = run_chains(2.0, 1.0, 0.7, 20_000, 50, false);
        let (v2, q2, _) = run_chains(2.0, 1.0, 0.7, 20_000, 50, true);
        // SE of a variance estimate from 2e4 draws is ≈ 1%
        assert!((v1 - v2).abs() < 0.045, "{v1} {v2}");
        assert!((q1 / q2 - 1.0).abs() < 0.045, "{q1} {q2}");
    }

    #[test]
    fn one_evaluation_per_step() {
        let region = [FldRegion::new(vec![0], 3.0, 0.5, D_COEF, 0.1).unwrap()];
        let mut calls = 0;
        let mut st = FldState::new(State::new(vec![0.3]));
        let mut rng = RandomSource::new(1);
        for _ in 0..7 {
            fld_step(&mut st, &region, |z, c| {
                calls += 1;
                c[0] = -0.5 * z[0];
                Ok(())
            }, &mut rng)
            .unwrap();
        }
        assert_eq!(calls, 7);
        st.reset();
        assert!(st.q.is_none() && st.c_prev.is_none());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = run_chains(1.0, 0.5, 0.2, 50, 20, true);
        let b = run_chains(1.0, 0.5, 0.2, 50, 20, true);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn c_reconstructs_score(z in proptest::collection::vec(-3.0f64..3.0, 4), s in proptest::collection::vec(-5.0f64..5.0, 4), ax in 0.1f64..100.0, ay in 0.1f64..100.0) {
            let mask = Mask::new(vec![false, true, false, true]);
            let c = build_c(&z, &s, ax, ay, &mask);
            for i in 0..4 {
                let a = if mask.is_observed(i) { ay } else { ax };
                prop_assert!((c[i] - a * z[i] - s[i]).abs() <= 1e-14 * (1.0 + c[i].abs()));
            }
        }
    }
}
