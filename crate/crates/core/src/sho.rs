//! Exact one-step law of the linear stochastic harmonic oscillator
//!
//! ```text
//! dx = q dτ
//! dq = Γ(−q − A x + C) dτ + Γ D dW
//! ```
//!
//! Over a step of length τ, `(x, q)` is Gaussian with mean and covariance
//! built from five scalar functions of `Γτ` and the discriminant
//! `Δ = 1 − 4A/Γ`. Coordinates are independent and share the covariance, so
//! each step needs one 2×2 Cholesky factor regardless of dimension.

use crate::error::{check_dim, Error, Result};
use crate::state::{cholesky2, RandomSource, State};

/// Below this value of `Γτ·√max(1, |Δ|)` the double power series is used.
const SERIES_RADIUS: f64 = 0.05;
/// At or above this discriminant the eigenvalue form is stable.
const EIGEN_DELTA: f64 = 0.25;
/// Terms kept in the Δ-expansions of `sinh(y√Δ)/√Δ` and friends.
const DELTA_TERMS: usize = 12;

/// Auxiliary functions of the transition law. `one_minus_zeta1` is carried
/// separately because ζ₁ → 1 for short steps and the mean only needs 1 − ζ₁.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxValues {
    pub zeta1: f64,
    pub one_minus_zeta1: f64,
    pub zeta2: f64,
    pub e_fn: f64,
    pub sigma11: f64,
    pub sigma22: f64,
}

// Taylor coefficients in x = Γτ (rows, powers 0..11) of polynomials in Δ
// (columns, powers 0..5).
const ZETA1_SERIES: [[f64; 6]; 12] = [
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.16666666666666666, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.03125, -0.010416666666666666, 0.0, 0.0, 0.0, 0.0],
    [0.004166666666666667, 0.004166666666666667, 0.0, 0.0, 0.0, 0.0],
    [-0.00043402777777777775, -0.0008680555555555555, -8.680555555555556e-05, 0.0, 0.0, 0.0],
    [3.7202380952380956e-05, 0.0001240079365079365, 3.7202380952380956e-05, 0.0, 0.0, 0.0],
    [-2.7126736111111112e-06, -1.3563368055555555e-05, -8.138020833333333e-06, -3.875248015873016e-07, 0.0, 0.0],
    [1.7223324514991183e-07, 1.2056327160493827e-06, 1.2056327160493827e-06, 1.7223324514991183e-07, 0.0, 0.0],
    [-9.68812003968254e-09, -9.04224537037037e-08, -1.3563368055555556e-07, -3.875248015873016e-08, -1.0764577821869488e-09, 0.0],
    [4.892989919031585e-10, 5.8715879028379026e-09, 1.2330334595959596e-08, 5.8715879028379026e-09, 4.892989919031585e-10, 0.0],
    [-2.2426203795561436e-11, -3.3639305693342154e-10, -9.419005594135803e-10, -6.727861138668431e-10, -1.1213101897780718e-10, -2.038745799596494e-12],
];
const ZETA2_SERIES: [[f64; 6]; 12] = [
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.125, 0.041666666666666664, 0.0, 0.0, 0.0, 0.0],
    [-0.020833333333333332, -0.020833333333333332, 0.0, 0.0, 0.0, 0.0],
    [0.0026041666666666665, 0.005208333333333333, 0.0005208333333333333, 0.0, 0.0, 0.0],
    [-0.00026041666666666666, -0.0008680555555555555, -0.00026041666666666666, 0.0, 0.0, 0.0],
    [2.170138888888889e-05, 0.00010850694444444444, 6.510416666666667e-05, 3.1001984126984127e-06, 0.0, 0.0],
    [-1.5500992063492063e-06, -1.0850694444444445e-05, -1.0850694444444445e-05, -1.5500992063492063e-06, 0.0, 0.0],
    [9.68812003968254e-08, 9.042245370370371e-07, 1.3563368055555556e-06, 3.875248015873016e-07, 1.076457782186949e-08, 0.0],
    [-5.382288910934745e-09, -6.458746693121694e-08, -1.3563368055555556e-07, -6.458746693121694e-08, -5.382288910934745e-09, 0.0],
    [2.691144455467372e-10, 4.0367166832010585e-09, 1.1302806712962962e-08, 8.073433366402117e-09, 1.3455722277336862e-09, 2.446494959515793e-11],
    [-1.2232474797578965e-11, -2.2426203795561435e-10, -8.073433366402117e-10, -8.073433366402117e-10, -2.2426203795561435e-10, -1.2232474797578965e-11],
];
const SIGMA11_SERIES: [[f64; 6]; 12] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.1666666666666667, 0.16666666666666666, 0.0, 0.0, 0.0, 0.0],
    [-0.4583333333333333, -0.20833333333333334, 0.0, 0.0, 0.0, 0.0],
    [0.13333333333333333, 0.125, 0.008333333333333333, 0.0, 0.0, 0.0],
    [-0.030555555555555555, -0.04861111111111111, -0.009722222222222222, 0.0, 0.0, 0.0],
    [0.005753968253968254, 0.013888888888888888, 0.005555555555555556, 0.0001984126984126984, 0.0, 0.0],
    [-0.0009176587301587302, -0.003125, -0.0020833333333333333, -0.0002232142857142857, 0.0, 0.0],
    [0.0001267636684303351, 0.0005787037037037037, 0.0005787037037037037, 0.0001240079365079365, 2.7557319223985893e-06, 0.0],
    [-1.54320987654321e-05, -9.093915343915344e-05, -0.0001273148148148148, -4.546957671957672e-05, -3.031305114638448e-06, 0.0],
    [1.6784912618245951e-06, 1.240079365079365e-05, 2.3148148148148147e-05, 1.240079365079365e-05, 1.6534391534391535e-06, 2.505210838544172e-08],
];
const SIGMA22_SERIES: [[f64; 6]; 12] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.3333333333333333, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.25, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.1, 0.016666666666666666, 0.0, 0.0, 0.0, 0.0],
    [-0.027777777777777776, -0.013888888888888888, 0.0, 0.0, 0.0, 0.0],
    [0.005952380952380952, 0.005952380952380952, 0.0003968253968253968, 0.0, 0.0, 0.0],
    [-0.0010416666666666667, -0.001736111111111111, -0.00034722222222222224, 0.0, 0.0, 0.0],
    [0.00015432098765432098, 0.00038580246913580245, 0.00015432098765432098, 5.5114638447971785e-06, 0.0, 0.0],
    [-1.984126984126984e-05, -6.944444444444444e-05, -4.6296296296296294e-05, -4.96031746031746e-06, 0.0, 0.0],
    [2.2546897546897547e-06, 1.0521885521885522e-05, 1.0521885521885522e-05, 2.2546897546897547e-06, 5.010421677088344e-08, 0.0],
    [-2.296443268665491e-07, -1.3778659611992946e-06, -1.9290123456790124e-06, -6.889329805996473e-07, -4.592886537330982e-08, 0.0],
];

/// Evaluates `Σ_{k≥from} (Σ_j c[k][j] Δ^j) x^k`.
fn double_series(c: &[[f64; 6]; 12], from: usize, x: f64, delta: f64) -> f64 {
    let mut acc = 0.0;
    for k in (from..12).rev() {
        let row = &c[k];
        let mut p = 0.0;
        for j in (0..6).rev() {
            p = p * delta + row[j];
        }
        acc = acc * x + p;
    }
    acc * x.powi(from as i32)
}

/// `(1 − e^{−h})/h`, equal to 1 at `h = 0`.
#[inline]
fn phi1(h: f64) -> f64 {
    if h.abs() < 1e-8 {
        1.0 - 0.5 * h
    } else {
        -(-h).exp_m1() / h
    }
}

/// `sinh(y√Δ)/√Δ`, `cosh(y√Δ)` and `(cosh(y√Δ) − 1)/Δ`, valid for any sign
/// of Δ.
#[derive(Debug, Clone, Copy)]
struct Hyper {
    sh: f64,
    ch: f64,
    km: f64,
}

fn hyper(y: f64, delta: f64) -> Hyper {
    let u = y * y * delta;
    if u.abs() < 1.0 {
        // term = u^k/(2k)!; sh, ch, km are y·Σu^k/(2k+1)!, Σu^k/(2k)!, y²·Σu^k/(2k+2)!
        let mut sh = 0.0;
        let mut ch = 0.0;
        let mut km = 0.0;
        let mut term = 1.0;
        for k in 0..DELTA_TERMS {
            let k1 = 2.0 * k as f64 + 1.0;
            ch += term;
            sh += term / k1;
            km += term / (k1 * (k1 + 1.0));
            term *= u / (k1 * (k1 + 1.0));
        }
        Hyper { sh: y * sh, ch, km: y * y * km }
    } else if delta > 0.0 {
        let r = delta.sqrt();
        let ch = (y * r).cosh();
        Hyper { sh: (y * r).sinh() / r, ch, km: (ch - 1.0) / delta }
    } else {
        let r = (-delta).sqrt();
        let ch = (y * r).cos();
        Hyper { sh: (y * r).sin() / r, ch, km: (ch - 1.0) / delta }
    }
}

/// Auxiliary functions at `gt = Γτ` and discriminant `delta`.
///
/// Evaluation switches between a double power series (short steps), a
/// factored form in the two real decay rates (Δ ≥ 1/4, or any Δ > 0 with
/// long steps), and the closed forms with `sinh`/`cosh` expanded in Δ or
/// replaced by `sin`/`cos` for Δ < 0. Every branch is finite for `gt > 0`.
pub fn aux_functions(gt: f64, delta: f64) -> AuxValues {
    let x = gt;
    if x * delta.abs().max(1.0).sqrt() < SERIES_RADIUS {
        let zeta2 = double_series(&ZETA2_SERIES, 0, x, delta);
        let one_minus_zeta1 = -double_series(&ZETA1_SERIES, 1, x, delta);
        return AuxValues {
            zeta1: 1.0 - one_minus_zeta1,
            one_minus_zeta1,
            zeta2,
            e_fn: 1.0 - x * zeta2,
            sigma11: double_series(&SIGMA11_SERIES, 1, x, delta),
            sigma22: double_series(&SIGMA22_SERIES, 2, x, delta),
        };
    }
    if delta >= EIGEN_DELTA || (delta > 0.0 && x * x * delta >= 1.0) {
        return aux_eigen(x, delta);
    }
    let half = hyper(0.5 * x, delta);
    let full = hyper(x, delta);
    let eh = (-0.5 * x).exp();
    let ex = (-x).exp();
    let one_minus_zeta1 = (1.0 - eh * (half.sh + half.ch)) / (0.25 * x * (1.0 - delta));
    let zeta2 = 2.0 * eh * half.sh / x;
    AuxValues {
        zeta1: 1.0 - one_minus_zeta1,
        one_minus_zeta1,
        zeta2,
        e_fn: 1.0 - x * zeta2,
        sigma11: -(-x).exp_m1() + ex * (full.sh - full.km),
        sigma22: 2.0 / (x * (1.0 - delta)) * (1.0 - ex * (1.0 + full.sh + full.km)),
    }
}

/// Δ > 0: the momentum decays at rates `a = x(1−√Δ)/2` and `b = x(1+√Δ)/2`.
fn aux_eigen(x: f64, delta: f64) -> AuxValues {
    let s = delta.sqrt();
    let a = 0.5 * x * (1.0 - delta) / (1.0 + s);
    let b = 0.5 * x * (1.0 + s);
    let ea = (-a).exp();
    let zeta2 = ea * phi1(x * s);
    let one_minus_zeta1 = (phi1(a) - phi1(b)) / s;
    AuxValues {
        zeta1: 1.0 - one_minus_zeta1,
        one_minus_zeta1,
        zeta2,
        e_fn: 1.0 - x * zeta2,
        sigma11: -(-x).exp_m1() - 0.5 * (x * zeta2).powi(2) + x * ea * ea * phi1(2.0 * x * s),
        sigma22: (phi1(2.0 * a) - 2.0 * phi1(x) + phi1(2.0 * b)) / delta,
    }
}

/// Oscillator coefficients for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ShoParams {
    pub gamma: f64,
    pub a: f64,
    pub c: Vec<f64>,
    pub d_coef: f64,
    pub dtau: f64,
}

impl ShoParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.dtau > 0.0
            && self.a >= 0.0
            && self.d_coef >= 0.0
            && [self.gamma, self.a, self.d_coef, self.dtau].iter().all(|v| v.is_finite())
            && self.c.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRange(format!(
                "oscillator needs gamma > 0, dtau > 0, a >= 0, d >= 0 (got gamma={}, a={}, d={}, dtau={})",
                self.gamma, self.a, self.d_coef, self.dtau
            )))
        }
    }

    pub fn discriminant(&self) -> f64 {
        1.0 - 4.0 * self.a / self.gamma
    }
}

/// Transition mean per coordinate and the shared 2×2 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ShoMoments {
    pub mu_x: Vec<f64>,
    pub mu_q: Vec<f64>,
    pub s_xx: f64,
    pub s_xq: f64,
    pub s_qq: f64,
}

/// Precomputed transition for fixed `(Γ, A, D, τ)`, reusable across
/// coordinates, inner steps and chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShoKernel {
    gamma: f64,
    a: f64,
    d_coef: f64,
    aux: AuxValues,
    // mean: μx = x0 + kxq·q0 + kxf·f,  μq = kqq·q0 + kqf·f,  f = C − A·x0
    kxq: f64,
    kxf: f64,
    kqq: f64,
    kqf: f64,
    cov: (f64, f64, f64),
    chol: (f64, f64, f64),
}

impl ShoKernel {
    pub fn new(gamma: f64, a: f64, d_coef: f64, dtau: f64) -> Result<Self> {
        ShoParams { gamma, a, c: Vec::new(), d_coef, dtau }.validate()?;
        let x = gamma * dtau;
        let aux = aux_functions(x, 1.0 - 4.0 * a / gamma);
        let d2 = d_coef * d_coef;
        let s_xx = d2 * dtau * aux.sigma22;
        let s_xq = d2 * 0.5 * (x * aux.zeta2).powi(2);
        let s_qq = d2 * 0.5 * gamma * aux.sigma11;
        let chol = cholesky2(s_xx, s_xq, s_qq)?;
        Ok(ShoKernel {
            gamma,
            a,
            d_coef,
            aux,
            kxq: dtau * aux.zeta2,
            kxf: dtau * aux.one_minus_zeta1,
            kqq: aux.e_fn - a * dtau * aux.one_minus_zeta1,
            kqf: 1.0 - aux.e_fn,
            cov: (s_xx, s_xq, s_qq),
            chol,
        })
    }

    pub fn from_params(p: &ShoParams) -> Result<Self> {
        Self::new(p.gamma, p.a, p.d_coef, p.dtau)
    }

    pub fn aux(&self) -> AuxValues {
        self.aux
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `(Σ_xx, Σ_xq, Σ_qq)`.
    pub fn covariance(&self) -> (f64, f64, f64) {
        self.cov
    }

    /// Standard deviation of a fresh momentum draw, `√(Γ/2)·D`.
    pub fn momentum_scale(&self) -> f64 {
        (0.5 * self.gamma).sqrt() * self.d_coef
    }

    #[inline]
    pub fn mean(&self, x0: f64, q0: f64, c: f64) -> (f64, f64) {
        let f = c - self.a * x0;
        (x0 + self.kxq * q0 + self.kxf * f, self.kqq * q0 + self.kqf * f)
    }

    /// One transition driven by two standard normals.
    #[inline]
    pub fn step_with(&self, x0: f64, q0: f64, c: f64, xi1: f64, xi2: f64) -> (f64, f64) {
        let (mx, mq) = self.mean(x0, q0, c);
        let (l11, l21, l22) = self.chol;
        (mx + l11 * xi1, mq + l21 * xi1 + l22 * xi2)
    }

    /// Advances the listed coordinates in place. Draws two normals per
    /// coordinate, in coordinate order.
    pub fn advance(&self, x: &mut [f64], q: &mut [f64], c: &[f64], coords: &[usize], rng: &mut RandomSource) {
        for &i in coords {
            let xi1 = rng.normal();
            let xi2 = rng.normal();
            let (nx, nq) = self.step_with(x[i], q[i], c[i], xi1, xi2);
            x[i] = nx;
            q[i] = nq;
        }
    }

    /// Fills the listed momentum coordinates from the stationary
    /// `N(0, (Γ/2)D²)`.
    pub fn init_momentum(&self, q: &mut [f64], coords: &[usize], rng: &mut RandomSource) {
        let s = self.momentum_scale();
        for &i in coords {
            q[i] = s * rng.normal();
        }
    }
}

/// Mean and covariance of one oscillator step from `(x0, q0)`.
pub fn sho_moments(x0: &[f64], q0: &[f64], p: &ShoParams) -> Result<ShoMoments> {
    check_dim(x0.len(), q0.len())?;
    check_dim(x0.len(), p.c.len())?;
    let k = ShoKernel::from_params(p)?;
    let (mu_x, mu_q) = x0
        .iter()
        .zip(q0)
        .zip(&p.c)
        .map(|((x, q), c)| k.mean(*x, *q, *c))
        .unzip();
    let (s_xx, s_xq, s_qq) = k.cov;
    Ok(ShoMoments { mu_x, mu_q, s_xx, s_xq, s_qq })
}

/// Draws one oscillator step. A missing momentum is first drawn from its
/// stationary law.
pub fn sho_step(
    x0: &[f64],
    q0: Option<&[f64]>,
    p: &ShoParams,
    rng: &mut RandomSource,
) -> Result<(State, State)> {
    check_dim(x0.len(), p.c.len())?;
    let k = ShoKernel::from_params(p)?;
    let d = x0.len();
    let coords: Vec<usize> = (0..d).collect();
    let mut q = match q0 {
        Some(q) => {
            check_dim(d, q.len())?;
            q.to_vec()
        }
        None => {
            let mut q = vec![0.0; d];
            k.init_momentum(&mut q, &coords, rng);
            q
        }
    };
    let mut x = x0.to_vec();
    k.advance(&mut x, &mut q, &p.c, &coords, rng);
    Ok((State::new(x), State::new(q)))
}
