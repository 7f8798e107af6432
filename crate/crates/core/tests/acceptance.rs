//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=3,5` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use lanpaint::bench::{
    default_gmm, default_ratio_grid, log_log_slope, mean_component_variance, median, run_gaussian_bench,
    run_gmm_bench, score_ratio_curve, BenchCell, CondGaussianBench, GmmBench, BENCH_ETA,
};
use lanpaint::fld::{fld_step, FldRegion, FldState, LanPaintConfig, D_COEF};
use lanpaint::parallel::{map_chains, ExecMode};
use lanpaint::samplers::{native_to_vp, ode_trajectory, run_lanpaint, Method, Notation, SamplerRun};
use lanpaint::schedule::{alpha_bar_continuous, SamplerGrid};
use lanpaint::scores::{CountingModel, GaussianTarget, GmmTarget, ScoreModel};
use lanpaint::sho::{sho_moments, ShoKernel, ShoParams};
use lanpaint::state::{Mask, RandomSource, State, SymMatrix};
use lanpaint::Result;

type Outcome = Result<(bool, String)>;

const SEEDS: [u64; 3] = [0, 1, 2];
const EXEC: ExecMode = ExecMode::Parallel;

fn cfg(inner: usize, alpha: f64) -> LanPaintConfig {
    LanPaintConfig { eta: BENCH_ETA, inner_steps: inner, alpha_noise: alpha, ..LanPaintConfig::default() }
}

fn gaussian_kl(method: Method, inner: usize) -> Result<f64> {
    let bench = CondGaussianBench::default();
    let kls = SEEDS
        .iter()
        .map(|&seed| {
            let cell = BenchCell { method, outer_steps: 20, cfg: cfg(inner, 0.0), seed };
            Ok(run_gaussian_bench(&bench, &cell, EXEC)?.report.kl)
        })
        .collect::<Result<Vec<f64>>>()?;
    median(&kls)
}

/// Gaussian medians shared by criteria 1 and 2.
struct GaussianTable(BTreeMap<(Method, usize), f64>);

impl GaussianTable {
    fn get(&mut self, method: Method, inner: usize) -> Result<f64> {
        if let Some(v) = self.0.get(&(method, inner)) {
            return Ok(*v);
        }
        let v = gaussian_kl(method, inner)?;
        self.0.insert((method, inner), v);
        Ok(v)
    }
}

fn exactness_threshold(t: &mut GaussianTable) -> Outcome {
    let l5 = t.get(Method::LanPaint, 5)?;
    let l10 = t.get(Method::LanPaint, 10)?;
    let rep = t.get(Method::Replace, 0)?;
    Ok((
        l5 < 0.01 && l10 < 0.01 && rep > 0.01,
        format!("median KL: lanpaint-5 {l5:.5}, lanpaint-10 {l10:.5} (< 0.01); replace {rep:.4} (> 0.01)"),
    ))
}

fn convergence_ordering(t: &mut GaussianTable) -> Outcome {
    let lang = t.get(Method::Langevin, 5)?;
    let ls = [1, 2, 5, 10].map(|n| t.get(Method::LanPaint, n));
    let ls: Vec<f64> = ls.into_iter().collect::<Result<_>>()?;
    let monotone = ls.windows(2).all(|w| w[1] < w[0]);
    Ok((
        ls[2] < lang && monotone,
        format!("lanpaint-5 {:.5} vs langevin-5 {lang:.5}; lanpaint N=1,2,5,10: {ls:.5?}", ls[2]),
    ))
}

fn gmm_trapping() -> Outcome {
    let target = default_gmm();
    let alpha = mean_component_variance(&target);
    let bench = GmmBench::new(target, 10_000)?;
    let row = |method: Method| -> Result<(f64, f64)> {
        let mut kl = Vec::new();
        let mut trap = Vec::new();
        for &seed in &SEEDS {
            let cell = BenchCell { method, outer_steps: 20, cfg: cfg(10, alpha), seed };
            let r = run_gmm_bench(&bench, &cell, EXEC)?.report;
            kl.push(r.kl);
            trap.push(r.trap_frac.unwrap_or(f64::NAN));
        }
        Ok((median(&kl)?, median(&trap)?))
    };
    let lan = row(Method::LanPaint)?;
    let lang = row(Method::Langevin)?;
    let rep = row(Method::Replace)?;
    let pass = lan.0 < lang.0 && lan.0 < rep.0 && lan.1 < lang.1 && lan.1 < rep.1;
    Ok((
        pass,
        format!(
            "median (KL, trap): lanpaint-10 ({:.4}, {:.4}), langevin-10 ({:.4}, {:.4}), replace ({:.4}, {:.4})",
            lan.0, lan.1, lang.0, lang.1, rep.0, rep.1
        ),
    ))
}

/// Independent FLD chains on N(0, 1) with `A ≠ 1`, so the frozen drive
/// `C = (A − 1)z` is exercised. Returns (var z, var q, corr).
fn fld_stationary(gamma: f64, a: f64, dtau: f64, chains: usize, steps: usize) -> Result<(f64, f64, f64)> {
    let region = [FldRegion::new(vec![0], gamma, a, D_COEF, dtau)?];
    let c_fn = |z: &[f64], c: &mut [f64]| -> Result<()> {
        c[0] = (a - 1.0) * z[0];
        Ok(())
    };
    let finals = map_chains(chains, EXEC, |i| {
        let mut rng = RandomSource::for_chain(404, i as u64);
        let mut st = FldState::new(State::new(vec![rng.normal()]));
        for _ in 0..steps {
            fld_step(&mut st, &region, c_fn, &mut rng)?;
        }
        Ok((st.z[0], st.q.as_ref().map_or(0.0, |q| q[0])))
    })?;
    let n = finals.len() as f64;
    let mz = finals.iter().map(|p| p.0).sum::<f64>() / n;
    let mq = finals.iter().map(|p| p.1).sum::<f64>() / n;
    let vz = finals.iter().map(|p| (p.0 - mz).powi(2)).sum::<f64>() / n;
    let vq = finals.iter().map(|p| (p.1 - mq).powi(2)).sum::<f64>() / n;
    let czq = finals.iter().map(|p| (p.0 - mz) * (p.1 - mq)).sum::<f64>() / n;
    Ok((vz, vq, czq / (vz * vq).sqrt()))
}

fn fld_stationarity() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    // Δ = 1 − 4A/Γ: −1 (underdamped) and 0.75 (overdamped).
    for (gamma, a, dtau) in [(2.0, 0.5, 0.1), (8.0, 0.5, 0.1)] {
        let (vz, vq, corr) = fld_stationary(gamma, a, dtau, 1_000_000, 100)?;
        let ok = (0.97..=1.03).contains(&vz) && (0.95..=1.05).contains(&(vq / gamma)) && corr.abs() < 0.02;
        pass &= ok;
        notes.push(format!("Γ={gamma}: var z {vz:.4}, var q/Γ {:.4}, corr {corr:+.4}", vq / gamma));
    }
    Ok((pass, format!("1e6 independent chains each; {}", notes.join("; "))))
}

/// Euler–Maruyama with Rademacher increments for one oscillator step.
/// Returns the sample moments and their standard errors, each ordered
/// (μx, μq, Σxx, Σxq, Σqq).
fn em_moments(p: &ShoParams, x0: f64, q0: f64, n_traj: usize, h: f64) -> Result<([f64; 5], [f64; 5])> {
    let steps = (p.dtau / h).round() as usize;
    let h = p.dtau / steps as f64;
    let (g, a, c, d) = (p.gamma, p.a, p.c[0], p.d_coef);
    let kick = g * d * h.sqrt();
    const BLOCK: usize = 4096;
    let blocks = n_traj.div_ceil(BLOCK);
    let parts = map_chains(blocks, EXEC, |b| {
        let mut rng = RandomSource::for_chain(505, b as u64);
        let len = BLOCK.min(n_traj - b * BLOCK);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let (mut x, mut q) = (x0, q0);
            let mut bits = 0u64;
            for k in 0..steps {
                if k % 64 == 0 {
                    bits = rng.next_u64();
                }
                let sign = if (bits >> (k % 64)) & 1 == 1 { kick } else { -kick };
                let dq = g * (c - q - a * x) * h + sign;
                x += q * h;
                q += dq;
            }
            out.push((x, q));
        }
        Ok(out)
    })?;
    let pts: Vec<(f64, f64)> = parts.into_iter().flatten().collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mq = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let prods = |f: &dyn Fn(f64, f64) -> f64| -> (f64, f64) {
        let m = pts.iter().map(|&(x, q)| f(x - mx, q - mq)).sum::<f64>() / n;
        let v = pts.iter().map(|&(x, q)| (f(x - mx, q - mq) - m).powi(2)).sum::<f64>() / n;
        (m, (v / n).sqrt())
    };
    let xx = prods(&|x, _| x * x);
    let xq = prods(&|x, q| x * q);
    let qq = prods(&|_, q| q * q);
    Ok((
        [mx, mq, xx.0, xq.0, qq.0],
        [(xx.0 / n).sqrt(), (qq.0 / n).sqrt(), xx.1, xq.1, qq.1],
    ))
}

fn sho_oracle() -> Outcome {
    let mut rng = RandomSource::new(2025);
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for k in 0..20 {
        let p = ShoParams {
            gamma: u(0.5, 10.0),
            a: u(0.0, 3.0),
            c: vec![u(-1.0, 1.0)],
            d_coef: D_COEF,
            dtau: u(0.1, 0.2),
        };
        let (x0, q0) = (u(-1.0, 1.0), u(-1.0, 1.0));
        let m = sho_moments(&[x0], &[q0], &p)?;
        let exact = [m.mu_x[0], m.mu_q[0], m.s_xx, m.s_xq, m.s_qq];
        let (est, se) = em_moments(&p, x0, q0, 1_000_000, 1e-4)?;
        for j in 0..5 {
            let z = (est[j] - exact[j]).abs() / se[j];
            if z > worst {
                worst = z;
                worst_at = format!("set {k} (Γ={:.2}, A={:.2}, τ={:.3}) moment {j}", p.gamma, p.a, p.dtau);
            }
        }
    }
    Ok((worst < 3.0, format!("20 sets x 5 moments, max |kernel − EM| = {worst:.2} SE at {worst_at}")))
}

fn large_step_limit() -> Outcome {
    let z0 = 1.0;
    let n = 100_000;
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for ab in [0.99f64, 0.9, 0.5] {
        let a = 1.0 / (1.0 - ab);
        for ratio in [2.0, 4.0, 8.0] {
            let g = ratio * a;
            let k = ShoKernel::new(g, a, D_COEF, 1e3 / g)?;
            let c = a * ab.sqrt() * z0;
            let mut rng = RandomSource::new(606);
            let xs: Vec<f64> = (0..n)
                .map(|_| {
                    let (x0, q0) = (3.0 * rng.normal(), k.momentum_scale() * rng.normal());
                    k.step_with(x0, q0, c, rng.normal(), rng.normal()).0
                })
                .collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let em = (m / (ab.sqrt() * z0) - 1.0).abs();
            let ev = (v / (1.0 - ab) - 1.0).abs();
            worst = worst.max(em).max(ev);
            pass &= em < 0.01 && ev < 0.01;
        }
    }
    Ok((pass, format!("ᾱ ∈ {{0.99, 0.9, 0.5}}, Γ ∈ {{2A, 4A, 8A}}: worst relative error {:.3}%", 100.0 * worst)))
}

fn notation_equivalence() -> Outcome {
    let model = GaussianTarget::new(vec![0.3, -0.5], SymMatrix::from_rows(&[vec![1.0, 0.8], vec![0.8, 1.0]])?)?;
    let grid = SamplerGrid::euler(20)?;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = RandomSource::new(seed);
        let z = [rng.normal(), rng.normal()];
        let trajs = [Notation::Vp, Notation::Ve, Notation::Rf].map(|n| ode_trajectory(&model, &grid, &z, n));
        let [vp, ve, rf] = trajs;
        let (vp, ve, rf) = (vp?, ve?, rf?);
        for i in 0..vp.len() {
            let s = grid.sigma(i);
            let a = native_to_vp(&ve[i], s, Notation::Ve);
            let b = native_to_vp(&rf[i], s, Notation::Rf);
            for j in 0..2 {
                let scale = vp[i][j].abs().max(1e-12);
                worst = worst.max((a[j] - vp[i][j]).abs() / scale).max((b[j] - vp[i][j]).abs() / scale);
            }
        }
    }
    Ok((worst < 1e-8, format!("10 seeds x 21 grid points: max relative gap {worst:.2e} (< 1e-8)")))
}

fn score_ratio_slope() -> Outcome {
    let joint = GaussianTarget::correlated_pair(0.8)?;
    let mask = Mask::new(vec![false, true]);
    let pts = score_ratio_curve(&joint, &mask, &[0.0, 1.0], 8.0, &default_ratio_grid(13), 20_000, 0)?;
    let slope = log_log_slope(&pts)?;
    Ok(((slope - 0.5).abs() <= 0.1, format!("slope {slope:.4} (0.5 ± 0.1) over 1−ᾱ ∈ [1e-4, 1e-1]")))
}

/// Counts score calls per `alpha_bar`, i.e. per outer step.
struct PerLevel<M> {
    inner: M,
    calls: Mutex<BTreeMap<u64, usize>>,
}

impl<M: ScoreModel> ScoreModel for PerLevel<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score_into(&self, z: &[f64], alpha_bar: f64, out: &mut [f64]) -> Result<()> {
        *self.calls.lock().unwrap().entry(alpha_bar.to_bits()).or_default() += 1;
        self.inner.score_into(z, alpha_bar, out)
    }

    fn log_density(&self, z: &[f64], alpha_bar: f64) -> Result<f64> {
        self.inner.log_density(z, alpha_bar)
    }
}

fn budget_contract() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for (steps, inner) in [(5, 1), (20, 5), (20, 10), (7, 0)] {
        let run = SamplerRun {
            method: Method::LanPaint,
            grid: SamplerGrid::euler(steps)?,
            cfg: LanPaintConfig { inner_steps: inner, ..LanPaintConfig::default() },
            mask: Mask::new(vec![false, true]),
            y_obs: State::new(vec![0.0, 1.0]),
        };
        let counting = CountingModel::new(GaussianTarget::correlated_pair(0.8)?);
        let per = PerLevel { inner: &counting, calls: Mutex::new(BTreeMap::new()) };
        run_lanpaint(&run, &per, &mut RandomSource::new(9))?;
        let levels = per.calls.into_inner().unwrap();
        let ok = counting.calls() == steps * (inner + 1)
            && levels.len() == steps
            && levels.values().all(|&c| c == inner + 1);
        pass &= ok;
        notes.push(format!("{steps}x(N={inner}): {} calls", counting.calls()));
    }
    Ok((pass, format!("N+1 calls at every outer step; {}", notes.join(", "))))
}

fn fd_error<M: ScoreModel>(m: &M, z: &[f64], t: f64, h: f64) -> Result<f64> {
    let s = m.score_at_time(z, t)?;
    let mut worst: f64 = 0.0;
    let mut zp = z.to_vec();
    for i in 0..z.len() {
        zp[i] = z[i] + h;
        let up = m.log_density_at_time(&zp, t)?;
        zp[i] = z[i] - h;
        let dn = m.log_density_at_time(&zp, t)?;
        zp[i] = z[i];
        worst = worst.max(((up - dn) / (2.0 * h) - s[i]).abs());
    }
    Ok(worst)
}

fn random_gmm(rng: &mut RandomSource) -> Result<GmmTarget> {
    let k = 6;
    let mut weights: Vec<f64> = (0..k).map(|_| 0.2 + rng.uniform()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let means = (0..k).map(|_| (0..3).map(|_| 2.0 * rng.normal()).collect()).collect();
    let covs = (0..k)
        .map(|_| {
            let l: Vec<f64> = (0..9).map(|_| 0.5 * rng.normal()).collect();
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| (0..3).map(|r| l[3 * i + r] * l[3 * j + r]).sum::<f64>() + if i == j { 0.05 } else { 0.0 })
                        .collect()
                })
                .collect();
            SymMatrix::from_rows(&rows)
        })
        .collect::<Result<Vec<_>>>()?;
    GmmTarget::new(weights, means, covs)
}

fn score_correctness() -> Outcome {
    let mut rng = RandomSource::new(1010);
    let gauss = GaussianTarget::new(
        vec![0.5, -1.0, 0.2],
        SymMatrix::from_rows(&[vec![1.0, 0.6, 0.1], vec![0.6, 2.0, -0.3], vec![0.1, -0.3, 0.5]])?,
    )?;
    let mixture = random_gmm(&mut rng)?;
    let bench = default_gmm();
    let h = 1e-5;
    let (mut eg, mut em, mut eb): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let t = (rng.uniform() * (3.0f64.ln() - 1e-3f64.ln()) + 1e-3f64.ln()).exp();
        let z3: Vec<f64> = (0..3).map(|_| 2.0 * rng.normal()).collect();
        let sab = alpha_bar_continuous(t).sqrt();
        let z2: Vec<f64> = (0..2).map(|_| sab * (4.0 * rng.uniform() - 2.0) + 0.3 * rng.normal()).collect();
        eg = eg.max(fd_error(&gauss, &z3, t, h)?);
        em = em.max(fd_error(&mixture, &z3, t, h)?);
        eb = eb.max(fd_error(&bench, &z2, t, h)?);
    }
    let worst = eg.max(em).max(eb);
    Ok((
        worst < 1e-5,
        format!("100 (z, t) each, t ∈ [1e-3, 3]: max |fd − score| gaussian {eg:.1e}, 6-component {em:.1e}, 500-component {eb:.1e}"),
    ))
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut table = GaussianTable(BTreeMap::new());
    let mut failed = 0;
    for id in 1..=10 {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (name, outcome) = match id {
            1 => ("exactness threshold", exactness_threshold(&mut table)),
            2 => ("convergence ordering", convergence_ordering(&mut table)),
            3 => ("mixture trapping", gmm_trapping()),
            4 => ("FLD stationarity", fld_stationarity()),
            5 => ("oscillator kernel vs Euler-Maruyama", sho_oracle()),
            6 => ("large-step limit", large_step_limit()),
            7 => ("VP/VE/RF equivalence", notation_equivalence()),
            8 => ("score-ratio slope", score_ratio_slope()),
            9 => ("evaluation budget", budget_contract()),
            _ => ("analytic scores", score_correctness()),
        };
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
