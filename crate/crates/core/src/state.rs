//! Value types shared by every module: sample states, observation masks, the
//! reproducible random source, and the small dense linear algebra the
//! analytic targets need.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Pivots in `[-PIVOT_TOL, 0]` are treated as exact zeros by [`cholesky`].
pub const PIVOT_TOL: f64 = 1e-10;
/// Symmetry tolerance accepted by [`SymMatrix::from_rows`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A point in sample space, `z = (x, y)` flattened into one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct State(Vec<f64>);

impl State {
    pub fn new(values: Vec<f64>) -> Self {
        State(values)
    }

    pub fn zeros(d: usize) -> Self {
        State(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for State {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for State {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(v)
    }
}

/// Partition of coordinates into inpainted (`false`) and observed (`true`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    observed: Vec<bool>,
}

impl Mask {
    pub fn new(observed: Vec<bool>) -> Self {
        Mask { observed }
    }

    /// Mask of length `d` observing exactly the listed coordinates.
    pub fn observing(d: usize, coords: &[usize]) -> Result<Self> {
        let mut observed = vec![false; d];
        for &c in coords {
            if c >= d {
                return Err(Error::InvalidRange(format!("coordinate {c} outside dimension {d}")));
            }
            observed[c] = true;
        }
        Ok(Mask { observed })
    }

    pub fn none(d: usize) -> Self {
        Mask { observed: vec![false; d] }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    #[inline]
    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.observed[i]).collect()
    }

    pub fn inpainted_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.observed[i]).collect()
    }

    pub fn check_len(&self, d: usize) -> Result<()> {
        check_dim(d, self.len())
    }

    /// A conditional-sampling task needs both regions to be non-empty.
    pub fn validate_conditional(&self, d: usize) -> Result<()> {
        self.check_len(d)?;
        let n_obs = self.observed.iter().filter(|&&o| o).count();
        if n_obs == 0 || n_obs == d {
            return Err(Error::InvalidConfig(
                "mask must observe at least one and not all coordinates".into(),
            ));
        }
        Ok(())
    }
}

/// Seeded random stream. Independent chains are addressed as
/// `(master_seed, chain_index)`; each index selects a disjoint ChaCha stream.
#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn for_chain(master_seed: u64, chain_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(chain_index);
        RandomSource { rng }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    /// Index drawn with probability proportional to `weights` (assumed
    /// normalized).
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (k, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        weights.len() - 1
    }
}

/// `d` independent standard normal draws.
pub fn gaussian_vector(rng: &mut RandomSource, d: usize) -> State {
    let mut v = vec![0.0; d];
    rng.fill_normal(&mut v);
    State(v)
}

/// Dense symmetric matrix, full row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        SymMatrix { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            check_dim(n, r.len())?;
            data.extend_from_slice(r);
        }
        let m = SymMatrix { n, data };
        for i in 0..n {
            for j in 0..i {
                if (m.get(i, j) - m.get(j, i)).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidRange(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(m)
    }

    /// Builds from the row-major upper triangle `a11 a12 … a1n a22 … ann`.
    pub fn from_upper(n: usize, upper: &[f64]) -> Result<Self> {
        check_dim(n * (n + 1) / 2, upper.len())?;
        let mut data = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                data[i * n + j] = upper[k];
                data[j * n + i] = upper[k];
                k += 1;
            }
        }
        Ok(SymMatrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n + 1) / 2);
        for i in 0..self.n {
            for j in i..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// `scale * self + shift * I`.
    pub fn scale_shift(&self, scale: f64, shift: f64) -> Self {
        let mut data: Vec<f64> = self.data.iter().map(|v| v * scale).collect();
        for i in 0..self.n {
            data[i * self.n + i] += shift;
        }
        SymMatrix { n: self.n, data }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Principal submatrix on `idx × idx`.
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        let n = idx.len();
        let mut data = Vec::with_capacity(n * n);
        for &i in idx {
            for &j in idx {
                data.push(self.get(i, j));
            }
        }
        SymMatrix { n, data }
    }

    /// Rectangular block `rows × cols`, row-major.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Lower-triangular factor, full row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            check_dim(n, r.len())?;
            if r[i + 1..].iter().any(|v| *v != 0.0) {
                return Err(Error::InvalidRange(format!("row {i} has entries above the diagonal")));
            }
            data.extend_from_slice(r);
        }
        Ok(LowerTriangular { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// `L · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..=i).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// `L · Lᵀ`.
    pub fn gram(&self) -> SymMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                data[i * n + j] = s;
                data[j * n + i] = s;
            }
        }
        SymMatrix { n, data }
    }

    /// Solves `L · x = b`. Fails on a zero pivot.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        for i in 0..self.n {
            let d = self.get(i, i);
            if d == 0.0 {
                return Err(Error::SingularCovariance(format!("zero pivot at row {i}")));
            }
            let s: f64 = (0..i).map(|k| self.get(i, k) * x[k]).sum();
            x[i] = (x[i] - s) / d;
        }
        Ok(x)
    }

    /// Solves `Lᵀ · x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        for i in (0..self.n).rev() {
            let d = self.get(i, i);
            if d == 0.0 {
                return Err(Error::SingularCovariance(format!("zero pivot at row {i}")));
            }
            let s: f64 = (i + 1..self.n).map(|k| self.get(k, i) * x[k]).sum();
            x[i] = (x[i] - s) / d;
        }
        Ok(x)
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let y = self.solve_lower(b)?;
        self.solve_upper(&y)
    }

    /// `log det(L Lᵀ)`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.get(i, i).ln()).sum::<f64>()
    }
}

/// Cholesky factor of a symmetric positive-semidefinite matrix.
///
/// Pivots in `[-1e-10, 0]` are clamped to zero (the column below is then
/// zeroed); anything more negative is reported as [`Error::NotPsd`].
pub fn cholesky(m: &SymMatrix) -> Result<LowerTriangular> {
    let n = m.dim();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut pivot = m.get(j, j);
        for k in 0..j {
            pivot -= l[j * n + k] * l[j * n + k];
        }
        if pivot < -PIVOT_TOL {
            return Err(Error::NotPsd { row: j, pivot });
        }
        let ljj = pivot.max(0.0).sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            if ljj == 0.0 {
                l[i * n + j] = 0.0;
                continue;
            }
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(LowerTriangular { n, data: l })
}

/// Cholesky of a 2×2 block `[[a, b], [b, c]]` as `(l11, l21, l22)`.
pub(crate) fn cholesky2(a: f64, b: f64, c: f64) -> Result<(f64, f64, f64)> {
    if a < -PIVOT_TOL {
        return Err(Error::NotPsd { row: 0, pivot: a });
    }
    let l11 = a.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let p = c - l21 * l21;
    if p < -PIVOT_TOL {
        return Err(Error::NotPsd { row: 1, pivot: p });
    }
    Ok((l11, l21, p.max(0.0).sqrt()))
}
