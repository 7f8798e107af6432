//! Diffusion-time grids: the linear β table, cumulative ᾱ, the continuous
//! ᾱ(t) = e^{−t}, and the descending σ grid the samplers step along.

use crate::error::{Error, Result};

/// Fine table length used to build sampler grids.
pub const TABLE_LEN: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

/// Discrete forward process. `alpha_bars` and `times` have one more entry
/// than `betas`; index 0 is clean data.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    pub times: Vec<f64>,
    pub total_time: f64,
}

impl DiffusionSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

/// `β_i = i(b2 − b1)/(n − 1) + b1`, with ᾱ and t accumulated from β.
pub fn linear_beta_schedule(n: usize, b1: f64, b2: f64) -> Result<DiffusionSchedule> {
    if n < 2 {
        return Err(Error::InvalidRange(format!("need at least 2 steps, got {n}")));
    }
    if !(b1 > 0.0 && b1 <= b2 && b2 < 1.0) {
        return Err(Error::InvalidRange(format!(
            "beta bounds must satisfy 0 < b1 <= b2 < 1, got b1={b1}, b2={b2}"
        )));
    }
    let betas: Vec<f64> = (0..n)
        .map(|i| i as f64 * (b2 - b1) / (n - 1) as f64 + b1)
        .collect();
    let mut alpha_bars = Vec::with_capacity(n + 1);
    let mut times = Vec::with_capacity(n + 1);
    alpha_bars.push(1.0);
    times.push(0.0);
    for (i, b) in betas.iter().enumerate() {
        alpha_bars.push(alpha_bars[i] * (1.0 - b));
        times.push(times[i] + b);
    }
    let total_time = times[n];
    Ok(DiffusionSchedule { betas, alpha_bars, times, total_time })
}

/// The 1000-entry table with β from 1e-4 to 0.02.
pub fn default_table() -> DiffusionSchedule {
    linear_beta_schedule(TABLE_LEN, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)
        .expect("default bounds are valid")
}

/// `ᾱ(t) = e^{−t}`.
#[inline]
pub fn alpha_bar_continuous(t: f64) -> f64 {
    (-t).exp()
}

/// Inverse of [`alpha_bar_continuous`].
#[inline]
pub fn time_from_alpha_bar(alpha_bar: f64) -> f64 {
    -alpha_bar.ln()
}

/// `σ = √((1 − ᾱ)/ᾱ)`.
#[inline]
pub fn sigma_from_alpha_bar(alpha_bar: f64) -> f64 {
    ((1.0 - alpha_bar) / alpha_bar).sqrt()
}

/// `ᾱ = 1/(1 + σ²)`.
#[inline]
pub fn alpha_bar_from_sigma(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma)
}

/// VE noise level at grid point `i` of the table.
pub fn step_to_sigma(schedule: &DiffusionSchedule, i: usize) -> Result<f64> {
    let ab = schedule.alpha_bars.get(i).ok_or_else(|| {
        Error::InvalidRange(format!("index {i} outside 0..={}", schedule.len()))
    })?;
    Ok(sigma_from_alpha_bar(*ab))
}

/// Descending noise levels `σ_0 > σ_1 > … > σ_{n−1} > σ_n = 0` visited by a
/// backward sampler with `n` outer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerGrid {
    sigmas: Vec<f64>,
}

impl SamplerGrid {
    /// Picks `steps` equispaced entries (rounded `linspace(0, len−1, steps)`)
    /// of the table, ordered from noisiest to cleanest, then appends σ = 0.
    /// Table position `k` is the noise after `k + 1` forward steps.
    pub fn from_table(table: &DiffusionSchedule, steps: usize) -> Result<Self> {
        let len = table.len();
        if steps == 0 || steps > len {
            return Err(Error::InvalidRange(format!(
                "steps must lie in 1..={len}, got {steps}"
            )));
        }
        let mut idx: Vec<usize> = if steps == 1 {
            vec![len - 1]
        } else {
            (0..steps)
                .map(|j| ((j as f64) * (len - 1) as f64 / (steps - 1) as f64).round() as usize)
                .collect()
        };
        idx.reverse();
        let mut sigmas: Vec<f64> = idx
            .iter()
            .map(|&k| sigma_from_alpha_bar(table.alpha_bars[k + 1]))
            .collect();
        sigmas.push(0.0);
        Ok(SamplerGrid { sigmas })
    }

    /// Grid over the default 1000-entry table.
    pub fn euler(steps: usize) -> Result<Self> {
        Self::from_table(&default_table(), steps)
    }

    /// Grid from explicit descending noise levels ending at 0.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 || *sigmas.last().unwrap() != 0.0 {
            return Err(Error::InvalidRange("sigma grid must end at 0 and have >= 2 points".into()));
        }
        if sigmas.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidRange("sigma grid must be strictly decreasing".into()));
        }
        Ok(SamplerGrid { sigmas })
    }

    /// Number of outer steps.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    #[inline]
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[i]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    #[inline]
    pub fn alpha_bar(&self, i: usize) -> f64 {
        alpha_bar_from_sigma(self.sigmas[i])
    }

    /// Largest noise level of the run (the grid's first point).
    pub fn alpha_bar_max_noise(&self) -> f64 {
        self.alpha_bar(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_endpoints() {
        let s = default_table();
        assert_eq!(s.betas[0], 1e-4);
        assert!((s.betas[999] - 0.02).abs() < 1e-17);
        assert_eq!(s.alpha_bars.len(), 1001);
        assert_eq!(s.times[0], 0.0);
        assert_eq!(s.times[1000], s.total_time);
    }

    #[test]
    fn two_step_product() {
        let s = linear_beta_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn discrete_alpha_bar_tracks_exponential() {
        // ln ᾱ_i + t_i = Σ (ln(1−β) + β), which lies in [−Σβ²/(2(1−β)), −Σβ²/2].
        let s = default_table();
        let mut sq = 0.0;
        for i in 0..=s.len() {
            let gap = s.alpha_bars[i].ln() + s.times[i];
            assert!(gap <= -0.5 * sq + 1e-12, "i={i}");
            assert!(gap >= -0.5 * sq / (1.0 - DEFAULT_BETA_MAX) - 1e-12, "i={i}");
            if i < s.len() {
                sq += s.betas[i] * s.betas[i];
            }
        }
        // within 1% over the first half of the table, ~6.5% at the end
        for i in 0..=500 {
            let c = alpha_bar_continuous(s.times[i]);
            assert!((s.alpha_bars[i] - c).abs() / c < 1e-2);
        }
        let c = alpha_bar_continuous(s.total_time);
        let end = (s.alpha_bars[1000] - c).abs() / c;
        assert!(end > 0.06 && end < 0.07);
    }

    #[test]
    fn invariants_hold() {
        let s = default_table();
        assert!(s.betas.iter().all(|b| *b > 0.0 && *b < 1.0));
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.times.windows(2).all(|w| w[1] >= w[0]));
        for i in 0..s.alpha_bars.len() {
            let p: f64 = s.betas[..i].iter().map(|b| 1.0 - b).product();
            assert!((p - s.alpha_bars[i]).abs() <= 1e-15 * p.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(linear_beta_schedule(1, 0.1, 0.2).is_err());
        assert!(linear_beta_schedule(10, 0.0, 0.2).is_err());
        assert!(linear_beta_schedule(10, 0.3, 0.2).is_err());
        assert!(linear_beta_schedule(10, 0.3, 1.0).is_err());
    }

    #[test]
    fn continuous_alpha_bar() {
        assert_eq!(alpha_bar_continuous(0.0), 1.0);
        assert!(alpha_bar_continuous(50.0) < 2e-22);
        assert!((alpha_bar_continuous(2f64.ln()) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn sigma_values() {
        let s = default_table();
        assert_eq!(step_to_sigma(&s, 0).unwrap(), 0.0);
        assert_eq!(sigma_from_alpha_bar(0.5), 1.0);
        assert!((sigma_from_alpha_bar(0.2) - 2.0).abs() < 1e-15);
        assert!(step_to_sigma(&s, 1001).is_err());
        let sig: Vec<f64> = (0..=1000).map(|i| step_to_sigma(&s, i).unwrap()).collect();
        assert!(sig.windows(2).all(|w| w[1] > w[0]));
        for (i, sg) in sig.iter().enumerate() {
            let ab = alpha_bar_from_sigma(*sg);
            assert!((ab - s.alpha_bars[i]).abs() / s.alpha_bars[i] < 1e-12);
        }
    }

    #[test]
    fn sampler_grid_shape() {
        let g = SamplerGrid::euler(20).unwrap();
        assert_eq!(g.steps(), 20);
        assert_eq!(g.sigma(20), 0.0);
        assert!(g.sigmas().windows(2).all(|w| w[0] > w[1]));
        let t = default_table();
        assert_eq!(g.sigma(0), step_to_sigma(&t, 1000).unwrap());
        assert_eq!(g.sigma(19), step_to_sigma(&t, 1).unwrap());
        assert!((g.sigma(19) - 0.01).abs() < 1e-4);
        assert!(SamplerGrid::euler(0).is_err());
        assert!(SamplerGrid::euler(1001).is_err());
        assert_eq!(SamplerGrid::euler(1).unwrap().steps(), 1);
    }

    #[test]
    fn explicit_grid_validation() {
        assert!(SamplerGrid::from_sigmas(vec![2.0, 1.0, 0.0]).is_ok());
        assert!(SamplerGrid::from_sigmas(vec![1.0, 2.0, 0.0]).is_err());
        assert!(SamplerGrid::from_sigmas(vec![1.0, 0.5]).is_err());
    }
}
