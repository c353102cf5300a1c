//! Periodic spectral grid backend.
//!
//! Concrete realizations of the symbolic kernel algebra on a d-dimensional
//! periodic grid: free Schroedinger propagation, split-step NLS flow,
//! low-rank kernels with Gram-based trace and Hilbert-Schmidt norms,
//! iterated Gauss-Legendre quadrature over ordered time simplices, and the
//! verification routines that certify the exact identities (move
//! invariance, resummation, factorization, de Finetti admissibility, mild
//! solutions) numerically.
//!
//! Conventions, fixed globally: a field is `f(x) = sum_m hat_m e^{i xi_m x}`
//! with `xi_m = 2 pi m / L` per axis, so `e^{i t Laplacian}` is the Fourier
//! multiplier `e^{-i t |xi|^2}`; `|f|_{L^2}^2 = L^d sum |hat_m|^2`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boardgame::{apply_move, CollapseMap, EchelonClass};
use crate::kernels::{assemble_jk, FactorBase, FactorExpr, JkFactors, OneParticleKernelExpr};

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("grid dimension {0} unsupported (must be 1, 2 or 3)")]
    BadDimension(usize),
    #[error("grid size {0} must be a power of two, at least 8")]
    BadGridSize(usize),
    #[error("box length must be positive and finite")]
    BadBoxLength,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("simplex depth {depth} exceeds the configured cap {max}")]
    DepthExceeded { depth: usize, max: usize },
    #[error("time index {index} outside the supplied times of length {len}")]
    MissingTime { index: usize, len: usize },
    #[error("split-step would take {0} steps; refusing")]
    StepOverflow(usize),
    #[error("mixture weights must be nonnegative and sum to one")]
    BadMeasure,
    #[error("mixture atom exceeds the unit ball in L2")]
    AtomTooLarge,
    #[error("partial trace needs at least two particle slots")]
    NothingToTrace,
    #[error(transparent)]
    Boardgame(#[from] crate::boardgame::BoardgameError),
}

/// Default Gauss-Legendre order per simplex level.
pub const DEFAULT_QUADRATURE_ORDER: usize = 8;
/// Default cap on the iterated-quadrature depth.
pub const MAX_SIMPLEX_DEPTH: usize = 4;

// ---------------------------------------------------------------------------
// Grid and fields
// ---------------------------------------------------------------------------

/// A periodic grid `[0, L)^d` with `n` points per axis and its frequency
/// lattice, symmetric about zero.
#[derive(Debug)]
pub struct Grid {
    d: usize,
    n: usize,
    l: f64,
    /// `|xi|^2` at every flattened grid index.
    freq_sq: Vec<f64>,
}

impl Grid {
    pub fn new(d: usize, n: usize, l: f64) -> Result<Arc<Self>, NumericsError> {
        if !(1..=3).contains(&d) {
            return Err(NumericsError::BadDimension(d));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(NumericsError::BadGridSize(n));
        }
        if l <= 0.0 || !l.is_finite() {
            return Err(NumericsError::BadBoxLength);
        }
        let points = n.pow(d as u32);
        let axis: Vec<f64> = (0..n)
            .map(|m| {
                let s = if m < n / 2 { m as i64 } else { m as i64 - n as i64 };
                2.0 * PI * s as f64 / l
            })
            .collect();
        let mut freq_sq = vec![0.0; points];
        for (flat, fs) in freq_sq.iter_mut().enumerate() {
            let mut rest = flat;
            let mut sum = 0.0;
            for _ in 0..d {
                let xi = axis[rest % n];
                sum += xi * xi;
                rest /= n;
            }
            *fs = sum;
        }
        Ok(Arc::new(Grid { d, n, l, freq_sq }))
    }

    /// `d=1, n=64, L=2 pi`, the default certification grid.
    pub fn default_1d() -> Arc<Self> {
        Grid::new(1, 64, 2.0 * PI).expect("default grid parameters are valid")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn box_length(&self) -> f64 {
        self.l
    }

    /// Total number of grid points `n^d`.
    pub fn points(&self) -> usize {
        self.freq_sq.len()
    }

    /// Lebesgue measure of one grid cell, the weight of the sampled
    /// quadrature defining all discrete norms.
    pub fn cell_volume(&self) -> f64 {
        (self.l / self.n as f64).powi(self.d as i32)
    }

    pub fn volume(&self) -> f64 {
        self.l.powi(self.d as i32)
    }

    pub fn freq_sq(&self) -> &[f64] {
        &self.freq_sq
    }

    /// Coordinates of the flattened index, axis-major like the storage.
    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut rest = flat;
        (0..self.d)
            .map(|_| {
                let i = rest % self.n;
                rest /= self.n;
                self.l * i as f64 / self.n as f64
            })
            .collect()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction))
}

/// In-place d-dimensional FFT on flattened axis-major data; unnormalized in
/// both directions (forward/inverse compose to multiplication by `n^d`).
fn fft_nd(data: &mut [Complex64], grid: &Grid, direction: FftDirection) {
    let n = grid.n;
    let fft = plan(n, direction);
    let mut line = vec![Complex64::default(); n];
    for axis in 0..grid.d {
        let stride = n.pow(axis as u32);
        let block = stride * n;
        let outer = data.len() / block;
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * block + inner;
                for i in 0..n {
                    line[i] = data[base + i * stride];
                }
                fft.process(&mut line);
                for i in 0..n {
                    data[base + i * stride] = line[i];
                }
            }
        }
    }
}

fn hat_from_values(values: &[Complex64], grid: &Grid) -> Vec<Complex64> {
    let mut hat = values.to_vec();
    fft_nd(&mut hat, grid, FftDirection::Forward);
    let scale = 1.0 / grid.points() as f64;
    for h in &mut hat {
        *h *= scale;
    }
    hat
}

fn values_from_hat(hat: &[Complex64], grid: &Grid) -> Vec<Complex64> {
    let mut values = hat.to_vec();
    fft_nd(&mut values, grid, FftDirection::Inverse);
    values
}

/// An immutable complex field sampled on a periodic grid, stored in both
/// physical and Fourier representation.
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
    hat: Vec<Complex64>,
}

impl GridField {
    pub fn from_values(grid: &Arc<Grid>, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), grid.points());
        let hat = hat_from_values(&values, grid);
        GridField { grid: Arc::clone(grid), values, hat }
    }

    pub fn from_hat(grid: &Arc<Grid>, hat: Vec<Complex64>) -> Self {
        assert_eq!(hat.len(), grid.points());
        let values = values_from_hat(&hat, grid);
        GridField { grid: Arc::clone(grid), values, hat }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.points()).map(|i| f(&grid.coords(i))).collect();
        GridField::from_values(grid, values)
    }

    pub fn zero(grid: &Arc<Grid>) -> Self {
        let points = grid.points();
        GridField {
            grid: Arc::clone(grid),
            values: vec![Complex64::default(); points],
            hat: vec![Complex64::default(); points],
        }
    }

    /// The plane wave `amp * e^{i xi . x}` with per-axis integer modes.
    pub fn plane_wave(grid: &Arc<Grid>, modes: &[i64], amp: Complex64) -> Self {
        assert_eq!(modes.len(), grid.d());
        let n = grid.n() as i64;
        let mut flat = 0usize;
        for &m in modes.iter().rev() {
            flat = flat * grid.n() + (m.rem_euclid(n)) as usize;
        }
        let mut hat = vec![Complex64::default(); grid.points()];
        hat[flat] = amp;
        GridField::from_hat(grid, hat)
    }

    /// A reproducible band-limited random field, unit-normalized in `L^2`:
    /// the top third of frequencies per axis is zeroed and the spectrum
    /// decays like `(1+|xi|^2)^{-1}`.
    pub fn random_band_limited(grid: &Arc<Grid>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.n();
        let keep = n as i64 / 3;
        let mut hat = vec![Complex64::default(); grid.points()];
        for (flat, h) in hat.iter_mut().enumerate() {
            let mut rest = flat;
            let mut in_band = true;
            for _ in 0..grid.d() {
                let m = rest % n;
                let s = if m < n / 2 { m as i64 } else { m as i64 - n as i64 };
                in_band &= s.abs() <= keep;
                rest /= n;
            }
            // draw both components unconditionally so the stream is stable
            // under band changes
            let re = rng.gen_range(-1.0..1.0);
            let im = rng.gen_range(-1.0..1.0);
            if in_band {
                *h = Complex64::new(re, im) / (1.0 + grid.freq_sq()[flat]);
            }
        }
        let f = GridField::from_hat(grid, hat);
        let norm = f.l2_norm();
        assert!(norm > 0.0, "seeded band-limited field must be nonzero");
        f.scale(Complex64::new(1.0 / norm, 0.0))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn hat(&self) -> &[Complex64] {
        &self.hat
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.grid.volume() * self.hat.iter().map(|h| h.norm_sqr()).sum::<f64>()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn h1_norm_sq(&self) -> f64 {
        self.grid.volume()
            * self
                .hat
                .iter()
                .zip(self.grid.freq_sq())
                .map(|(h, fs)| (1.0 + fs) * h.norm_sqr())
                .sum::<f64>()
    }

    pub fn h1_norm(&self) -> f64 {
        self.h1_norm_sq().sqrt()
    }

    /// `L^2` inner product `<f, g> = integral f conj(g)`.
    pub fn inner(&self, other: &GridField) -> Complex64 {
        debug_assert!(Arc::ptr_eq(&self.grid, &other.grid));
        self.grid.volume()
            * self
                .hat
                .iter()
                .zip(&other.hat)
                .map(|(a, b)| a * b.conj())
                .sum::<Complex64>()
    }

    pub fn scale(&self, c: Complex64) -> GridField {
        GridField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v * c).collect(),
            hat: self.hat.iter().map(|h| h * c).collect(),
        }
    }

    pub fn add(&self, other: &GridField) -> GridField {
        debug_assert!(Arc::ptr_eq(&self.grid, &other.grid));
        GridField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            hat: self.hat.iter().zip(&other.hat).map(|(a, b)| a + b).collect(),
        }
    }

    /// Pointwise cubic product `a(x) conj(b)(x) c(x)`, the concrete form of
    /// every contraction factor.
    pub fn cubic(a: &GridField, b: &GridField, c: &GridField) -> GridField {
        debug_assert!(Arc::ptr_eq(&a.grid, &b.grid) && Arc::ptr_eq(&a.grid, &c.grid));
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .zip(&c.values)
            .map(|((a, b), c)| a * b.conj() * c)
            .collect();
        GridField::from_values(&a.grid, values)
    }
}

/// Applies the free propagator `e^{i dt Laplacian}`, i.e. the Fourier
/// multiplier `e^{-i dt |xi|^2}`; unitary in `L^2` and `H^1`.
pub fn free_propagate(f: &GridField, dt: f64) -> GridField {
    if dt == 0.0 {
        return f.clone();
    }
    let hat = f
        .hat()
        .iter()
        .zip(f.grid().freq_sq())
        .map(|(h, fs)| h * Complex64::from_polar(1.0, -dt * fs))
        .collect();
    GridField::from_hat(f.grid(), hat)
}

fn kinetic_half(hat: &mut [Complex64], grid: &Grid, dt: f64) {
    for (h, fs) in hat.iter_mut().zip(grid.freq_sq()) {
        *h *= Complex64::from_polar(1.0, -dt * fs);
    }
}

/// Strang split-step integrator for the cubic NLS
/// `i d/dt phi = -Laplacian phi + lambda |phi|^2 phi`,
/// second order in the step size; conserves mass to round-off.
pub fn nls_flow(f: &GridField, lambda: f64, t: f64, dt: f64) -> Result<GridField, NumericsError> {
    assert!(t >= 0.0 && dt > 0.0);
    if t == 0.0 {
        return Ok(f.clone());
    }
    let steps = (t / dt).round().max(1.0);
    if steps > 5e7 {
        return Err(NumericsError::StepOverflow(steps as usize));
    }
    let steps = steps as usize;
    let h = t / steps as f64;
    let grid = f.grid();
    let mut hat = f.hat().to_vec();
    kinetic_half(&mut hat, grid, h / 2.0);
    for step in 0..steps {
        let mut values = values_from_hat(&hat, grid);
        for v in &mut values {
            *v *= Complex64::from_polar(1.0, -lambda * v.norm_sqr() * h);
        }
        hat = hat_from_values(&values, grid);
        let tail = if step + 1 == steps { h / 2.0 } else { h };
        kinetic_half(&mut hat, grid, tail);
    }
    Ok(GridField::from_hat(grid, hat))
}

/// Conserved NLS energy `1/2 |grad phi|^2 + lambda/4 |phi|_{L^4}^4`.
pub fn nls_energy(f: &GridField, lambda: f64) -> f64 {
    let grad_sq = f.grid().volume()
        * f.hat()
            .iter()
            .zip(f.grid().freq_sq())
            .map(|(h, fs)| fs * h.norm_sqr())
            .sum::<f64>();
    let l4 = f.grid().cell_volume()
        * f.values().iter().map(|v| v.norm_sqr() * v.norm_sqr()).sum::<f64>();
    0.5 * grad_sq + 0.25 * lambda * l4
}

// ---------------------------------------------------------------------------
// Low-rank kernels and norms
// ---------------------------------------------------------------------------

/// A concrete one-particle kernel `sum_i c_i chi_i(x) conj(psi_i)(x')` of
/// finite rank.
#[derive(Debug, Clone, Default)]
pub struct LowRankKernel {
    terms: Vec<(Complex64, GridField, GridField)>,
}

impl LowRankKernel {
    pub fn new() -> Self {
        LowRankKernel { terms: Vec::new() }
    }

    pub fn from_terms(terms: Vec<(Complex64, GridField, GridField)>) -> Self {
        LowRankKernel { terms }
    }

    pub fn push(&mut self, c: Complex64, left: GridField, right: GridField) {
        self.terms.push((c, left, right));
    }

    pub fn terms(&self) -> &[(Complex64, GridField, GridField)] {
        &self.terms
    }

    pub fn rank_bound(&self) -> usize {
        self.terms.len()
    }

    pub fn scale(&self, c: Complex64) -> LowRankKernel {
        LowRankKernel {
            terms: self.terms.iter().map(|(w, l, r)| (w * c, l.clone(), r.clone())).collect(),
        }
    }

    /// The adjoint kernel `(c, chi, psi) -> (conj c, psi, chi)`.
    pub fn adjoint(&self) -> LowRankKernel {
        LowRankKernel {
            terms: self.terms.iter().map(|(c, l, r)| (c.conj(), r.clone(), l.clone())).collect(),
        }
    }

    /// Dense sample matrix `K[x, x'] = sum c chi(x) conj(psi)(x')`.
    pub fn dense(&self) -> Option<Array2<Complex64>> {
        let grid = self.terms.first().map(|(_, l, _)| l.grid())?;
        let n = grid.points();
        let mut out = Array2::<Complex64>::zeros((n, n));
        for (c, l, r) in &self.terms {
            accumulate_outer(&mut out, *c, l, r);
        }
        Some(out)
    }

    /// Hilbert-Schmidt inner product `<A, B> = Tr(A B^*)`, computed exactly
    /// from the Gram matrices of the factors.
    pub fn hs_inner(&self, other: &LowRankKernel) -> Complex64 {
        let mut total = Complex64::default();
        for (c, l, r) in &self.terms {
            for (c2, l2, r2) in &other.terms {
                total += c * c2.conj() * l.inner(l2) * r2.inner(r);
            }
        }
        total
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_inner(self).re.max(0.0).sqrt()
    }

    pub fn hs_distance(&self, other: &LowRankKernel) -> f64 {
        let mut diff = self.clone();
        for (c, l, r) in &other.terms {
            diff.push(-c, l.clone(), r.clone());
        }
        diff.hs_norm()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hs_distance(&self.adjoint()) <= tol * self.hs_norm().max(1.0)
    }
}

/// True Gram matrix `(L^dagger L)_{ij} = integral conj(f_i) f_j`; the
/// orientation matters once the coefficient diagonal carries nonuniform
/// phases.
fn gram(fields: &[&GridField]) -> nalgebra::DMatrix<Complex64> {
    let m = fields.len();
    nalgebra::DMatrix::from_fn(m, m, |i, j| fields[j].inner(fields[i]))
}

/// Hermitian square root with eigenvalues clamped at zero.
fn hermitian_sqrt(g: nalgebra::DMatrix<Complex64>) -> nalgebra::DMatrix<Complex64> {
    let g = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(g);
    let roots = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    &eig.eigenvectors
        * nalgebra::DMatrix::from_diagonal(&roots)
        * eig.eigenvectors.adjoint()
}

/// Exact trace norm of the finite-rank operator: with factor Gram matrices
/// `Gx`, `Gy` and coefficient diagonal `D`, the singular values of the
/// operator are those of the small matrix `Gx^{1/2} D Gy^{1/2}`.
pub fn trace_norm(kern: &LowRankKernel) -> f64 {
    if kern.terms.is_empty() {
        return 0.0;
    }
    let lefts: Vec<&GridField> = kern.terms.iter().map(|(_, l, _)| l).collect();
    let rights: Vec<&GridField> = kern.terms.iter().map(|(_, _, r)| r).collect();
    let gx_half = hermitian_sqrt(gram(&lefts));
    let gy_half = hermitian_sqrt(gram(&rights));
    let d = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        kern.terms.len(),
        kern.terms.iter().map(|(c, _, _)| *c),
    ));
    let small = gx_half * d * gy_half;
    nalgebra::SVD::new(small, false, false).singular_values.iter().sum()
}

// ---------------------------------------------------------------------------
// Dense slot algebra (direct route)
// ---------------------------------------------------------------------------

fn accumulate_outer(out: &mut Array2<Complex64>, c: Complex64, l: &GridField, r: &GridField) {
    let lv = l.values();
    let rv = r.values();
    for (i, row) in out.rows_mut().into_iter().enumerate() {
        let f = c * lv[i];
        for (j, e) in row.into_iter().enumerate() {
            *e += f * rv[j].conj();
        }
    }
}

/// Dense rank-1 sample matrix `f(x) conj(g)(x')`.
pub fn outer(f: &GridField, g: &GridField) -> Array2<Complex64> {
    let n = f.grid().points();
    let mut out = Array2::zeros((n, n));
    accumulate_outer(&mut out, Complex64::new(1.0, 0.0), f, g);
    out
}

fn propagate_samples(buf: &mut [Complex64], grid: &Grid, dt: f64) {
    fft_nd(buf, grid, FftDirection::Forward);
    let scale = 1.0 / grid.points() as f64;
    for (v, fs) in buf.iter_mut().zip(grid.freq_sq()) {
        *v *= Complex64::from_polar(scale, -dt * fs);
    }
    fft_nd(buf, grid, FftDirection::Inverse);
}

/// Applies the two-sided free propagator `U K U^*` to a dense one-particle
/// kernel: `e^{i dt Laplacian}` in `x`, its conjugate in `x'`.
pub fn dense_propagate(kern: &Array2<Complex64>, grid: &Grid, dt: f64) -> Array2<Complex64> {
    if dt == 0.0 {
        return kern.clone();
    }
    let n = grid.points();
    let mut out = kern.clone();
    let mut buf = vec![Complex64::default(); n];
    // x side: each column is a field in x
    for j in 0..n {
        for i in 0..n {
            buf[i] = out[(i, j)];
        }
        propagate_samples(&mut buf, grid, dt);
        for i in 0..n {
            out[(i, j)] = buf[i];
        }
    }
    // x' side: rows hold conj(psi), so conjugate, propagate, conjugate back
    for i in 0..n {
        for j in 0..n {
            buf[j] = out[(i, j)].conj();
        }
        propagate_samples(&mut buf, grid, dt);
        for j in 0..n {
            out[(i, j)] = buf[j].conj();
        }
    }
    out
}

/// Applies `B_{j;n} = B+ - B-` to a tensor product of dense slot kernels:
/// the last slot is evaluated on its diagonal and multiplied into slot `j`
/// at `x_j` (plus) and `x'_j` (minus).
pub fn contract_dense(slots: &mut Vec<Array2<Complex64>>, j: usize) {
    assert!(slots.len() >= 2 && j >= 1 && j < slots.len());
    let fresh = slots.pop().expect("at least two slots");
    let n = fresh.nrows();
    let diag: Vec<Complex64> = (0..n).map(|i| fresh[(i, i)]).collect();
    let target = &mut slots[j - 1];
    for (x, mut row) in target.rows_mut().into_iter().enumerate() {
        for (y, e) in row.iter_mut().enumerate() {
            *e *= diag[x] - diag[y];
        }
    }
}

/// Direct left-to-right evaluation of the Duhamel integrand for a collapse
/// map: starting from the freely evolved product state
/// `(|U(t_r) phi><U(t_r) phi|)^{(x)(k+r)}`, alternately contract the last
/// slot into row `rho(l)` and free-propagate every remaining slot across
/// the adjacent time gap. Returns the `k` dense slot kernels of the
/// (tensor-product) integrand.
///
/// The deepest marginal must be evaluated along a consistent time flow for
/// the move-invariance and resummation identities to survive the time
/// relabeling of an acceptable move; a product state frozen in time breaks
/// them. The free flow is the minimal such choice, and `phi` is its data at
/// time zero.
///
/// This route applies the defining word operator by operator and never
/// consults the contraction-tree machinery.
pub fn direct_integrand(
    map: &CollapseMap,
    phi: &GridField,
    times: &[f64],
) -> Result<Vec<Array2<Complex64>>, NumericsError> {
    let (k, r) = (map.k(), map.r());
    if times.len() != r + 1 {
        return Err(NumericsError::MissingTime { index: r, len: times.len() });
    }
    let grid = phi.grid();
    let phi_r = free_propagate(phi, times[r]);
    let base = outer(&phi_r, &phi_r);
    let mut slots: Vec<Array2<Complex64>> = (0..k + r).map(|_| base.clone()).collect();
    for l in (1..=r).rev() {
        contract_dense(&mut slots, map.row(l));
        let dt = times[l - 1] - times[l];
        if dt != 0.0 {
            for slot in &mut slots {
                *slot = dense_propagate(slot, grid, dt);
            }
        }
    }
    Ok(slots)
}

// ---------------------------------------------------------------------------
// Sums of tensor products of dense slot kernels
// ---------------------------------------------------------------------------

/// A k-particle kernel represented as a weighted sum of tensor products of
/// dense one-particle kernels, one dense matrix per particle slot and term.
///
/// Hilbert-Schmidt inner products factor over slots, so comparisons cost
/// one cross-Gram of flattened slot matrices per slot instead of a dense
/// `n^{2k}` assembly.
#[derive(Debug, Clone)]
pub struct ProductKernelSum {
    grid: Arc<Grid>,
    k: usize,
    terms: Vec<(Complex64, Vec<Array2<Complex64>>)>,
}

impl ProductKernelSum {
    pub fn new(grid: &Arc<Grid>, k: usize) -> Self {
        assert!(k >= 1);
        ProductKernelSum { grid: Arc::clone(grid), k, terms: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn terms(&self) -> &[(Complex64, Vec<Array2<Complex64>>)] {
        &self.terms
    }

    pub fn push(&mut self, weight: Complex64, slots: Vec<Array2<Complex64>>) {
        assert_eq!(slots.len(), self.k);
        let n = self.grid.points();
        for s in &slots {
            assert_eq!(s.dim(), (n, n));
        }
        if self.k == 1 {
            // collapse single-slot sums eagerly; the sum of one-particle
            // kernels is again one dense matrix
            match self.terms.first_mut() {
                Some((w, existing)) => {
                    debug_assert_eq!(w.re, 1.0);
                    existing[0].scaled_add(weight, &slots[0]);
                }
                None => {
                    let mut s = slots;
                    s[0].mapv_inplace(|z| z * weight);
                    self.terms.push((Complex64::new(1.0, 0.0), s));
                }
            }
        } else {
            self.terms.push((weight, slots));
        }
    }

    pub fn add_assign(&mut self, other: &ProductKernelSum) {
        assert_eq!(self.k, other.k);
        for (w, slots) in &other.terms {
            self.push(*w, slots.clone());
        }
    }

    pub fn hs_inner(&self, other: &ProductKernelSum) -> Complex64 {
        assert_eq!(self.k, other.k);
        let cell = self.grid.cell_volume();
        let scale = cell.powi(2 * self.k as i32);
        let grams: Vec<Array2<Complex64>> =
            (0..self.k).map(|s| cross_gram_slot(&self.terms, &other.terms, s)).collect();
        let mut total = Complex64::default();
        for (p, (wp, _)) in self.terms.iter().enumerate() {
            for (q, (wq, _)) in other.terms.iter().enumerate() {
                let mut prod = wp * wq.conj();
                for g in &grams {
                    prod *= g[(p, q)];
                }
                total += prod;
            }
        }
        total * scale
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_inner(self).re.max(0.0).sqrt()
    }

    /// `|self - other|_{HS}`. For `k = 1` the collapsed dense matrices are
    /// subtracted entrywise, which keeps the full floating-point resolution;
    /// for larger `k` the distance comes from the Gram identity
    /// `|a-b|^2 = |a|^2 - 2 Re<a,b> + |b|^2`.
    pub fn hs_distance(&self, other: &ProductKernelSum) -> f64 {
        assert_eq!(self.k, other.k);
        if self.k == 1 {
            let cell = self.grid.cell_volume();
            return match (self.terms.first(), other.terms.first()) {
                (Some((_, a)), Some((_, b))) => {
                    let mut sum = 0.0;
                    for (x, y) in a[0].iter().zip(b[0].iter()) {
                        sum += (x - y).norm_sqr();
                    }
                    (sum * cell * cell).sqrt()
                }
                (Some(_), None) => self.hs_norm(),
                (None, Some(_)) => other.hs_norm(),
                (None, None) => 0.0,
            };
        }
        let aa = self.hs_inner(self).re;
        let bb = other.hs_inner(other).re;
        let ab = self.hs_inner(other).re;
        (aa - 2.0 * ab + bb).max(0.0).sqrt()
    }
}

/// Cross-Gram of one slot across two term lists: `G[p, q] =` Frobenius
/// inner product of the slot matrices of terms `p` and `q`.
fn cross_gram_slot(
    a: &[(Complex64, Vec<Array2<Complex64>>)],
    b: &[(Complex64, Vec<Array2<Complex64>>)],
    slot: usize,
) -> Array2<Complex64> {
    use rayon::prelude::*;
    let same = std::ptr::eq(a, b);
    let mut g = Array2::zeros((a.len(), b.len()));
    let rows: Vec<Vec<Complex64>> = a
        .par_iter()
        .enumerate()
        .map(|(p, (_, pa))| {
            let ap = &pa[slot];
            (0..b.len())
                .map(|q| {
                    if same && q < p {
                        Complex64::default() // filled from symmetry below
                    } else {
                        let bq = &b[q].1[slot];
                        ap.iter().zip(bq.iter()).map(|(x, y)| x * y.conj()).sum()
                    }
                })
                .collect()
        })
        .collect();
    for (p, row) in rows.into_iter().enumerate() {
        for (q, v) in row.into_iter().enumerate() {
            g[(p, q)] = v;
        }
    }
    if same {
        for p in 0..a.len() {
            for q in 0..p {
                g[(p, q)] = g[(q, p)].conj();
            }
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Ordered-simplex quadrature
// ---------------------------------------------------------------------------

/// Quadrature order and depth cap for iterated simplex integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QuadratureSpec {
    pub order: usize,
    pub max_depth: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { order: DEFAULT_QUADRATURE_ORDER, max_depth: MAX_SIMPLEX_DEPTH }
    }
}

impl QuadratureSpec {
    pub fn with_order(order: usize) -> Self {
        QuadratureSpec { order, ..Default::default() }
    }
}

fn legendre_with_derivative(q: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=q {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`, by Newton iteration on the
/// Legendre polynomial.
pub fn gauss_legendre_unit(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        let mut x = (PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(q, x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Tensorized Gauss-Legendre nodes for the ordered region
/// `t >= t_{perm(1)} >= ... >= t_{perm(r)} >= 0`, as `(t_1..t_r, weight)`
/// pairs. Iterated substitution `s_i = s_{i-1} u_i` maps the region to the
/// unit cube with Jacobian `prod s_{i-1}`.
pub fn simplex_nodes(
    r: usize,
    t: f64,
    perm: &[usize],
    quad: QuadratureSpec,
) -> Result<Vec<(Vec<f64>, f64)>, NumericsError> {
    assert!(r >= 1 && perm.len() == r);
    {
        let mut seen = vec![false; r];
        for &p in perm {
            assert!(p >= 1 && p <= r && !seen[p - 1], "perm must be a permutation of 1..=r");
            seen[p - 1] = true;
        }
    }
    if r > quad.max_depth {
        return Err(NumericsError::DepthExceeded { depth: r, max: quad.max_depth });
    }
    let (u, w) = gauss_legendre_unit(quad.order);
    let mut acc: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..r {
        let mut next = Vec::with_capacity(acc.len() * quad.order);
        for (chain, weight) in &acc {
            let upper = chain.last().copied().unwrap_or(t);
            for (ui, wi) in u.iter().zip(&w) {
                let mut longer = chain.clone();
                longer.push(upper * ui);
                next.push((longer, weight * wi * upper));
            }
        }
        acc = next;
    }
    Ok(acc
        .into_iter()
        .map(|(chain, weight)| {
            let mut times = vec![0.0; r];
            for (i, &s) in chain.iter().enumerate() {
                times[perm[i] - 1] = s;
            }
            (times, weight)
        })
        .collect())
}

/// Scalar iterated integral over the standard ordered simplex
/// `t >= t_1 >= ... >= t_r >= 0`.
pub fn simplex_integrate_scalar(
    r: usize,
    t: f64,
    quad: QuadratureSpec,
    f: impl Fn(&[f64]) -> f64,
) -> Result<f64, NumericsError> {
    let identity: Vec<usize> = (1..=r).collect();
    let nodes = simplex_nodes(r, t, &identity, quad)?;
    Ok(nodes.iter().map(|(times, w)| w * f(times)).sum())
}

// ---------------------------------------------------------------------------
// Evaluation of symbolic kernels
// ---------------------------------------------------------------------------

/// Concrete bindings for the base symbols of factor expressions.
#[derive(Debug, Clone)]
pub struct Binding {
    phi: GridField,
    psi: GridField,
}

impl Binding {
    /// Binds `psi~` to its defining value `|phi|^2 phi`.
    pub fn auto(phi: &GridField) -> Self {
        Binding { phi: phi.clone(), psi: GridField::cubic(phi, phi, phi) }
    }

    /// Binds `psi~` to an unrelated field; useful for probing the symbolic
    /// algebra away from the cubic relation.
    pub fn explicit(phi: &GridField, psi: &GridField) -> Self {
        Binding { phi: phi.clone(), psi: psi.clone() }
    }

    pub fn phi(&self) -> &GridField {
        &self.phi
    }

    pub fn psi_tilde(&self) -> &GridField {
        &self.psi
    }
}

fn eval_factor(
    e: &Arc<FactorExpr>,
    b: &Binding,
    times: &[f64],
    cache: &mut HashMap<usize, GridField>,
) -> Result<GridField, NumericsError> {
    let key = Arc::as_ptr(e) as usize;
    if let Some(f) = cache.get(&key) {
        return Ok(f.clone());
    }
    let mut field = match &e.base {
        FactorBase::Phi => b.phi.clone(),
        FactorBase::PsiTilde => b.psi.clone(),
        FactorBase::Product(x, y, z) => GridField::cubic(
            &eval_factor(x, b, times, cache)?,
            &eval_factor(y, b, times, cache)?,
            &eval_factor(z, b, times, cache)?,
        ),
    };
    for &(from, to) in e.chain.iter().rev() {
        let hi = from.max(to);
        if hi >= times.len() {
            return Err(NumericsError::MissingTime { index: hi, len: times.len() });
        }
        field = free_propagate(&field, times[from] - times[to]);
    }
    cache.insert(key, field.clone());
    Ok(field)
}

/// Evaluates a symbolic one-particle kernel to a concrete low-rank kernel.
/// `times[0]` is the outer time `t`, `times[l]` the Duhamel time `t_l`.
pub fn evaluate(
    expr: &OneParticleKernelExpr,
    b: &Binding,
    times: &[f64],
) -> Result<LowRankKernel, NumericsError> {
    let mut cache = HashMap::new();
    let mut kern = LowRankKernel::new();
    for term in &expr.terms {
        kern.push(
            Complex64::new(term.sign as f64, 0.0),
            eval_factor(&term.left, b, times, &mut cache)?,
            eval_factor(&term.right, b, times, &mut cache)?,
        );
    }
    Ok(kern)
}

/// Evaluates every per-tree factor of an assembled integrand.
pub fn evaluate_jk(
    jk: &JkFactors,
    b: &Binding,
    times: &[f64],
) -> Result<Vec<LowRankKernel>, NumericsError> {
    jk.factors.iter().map(|f| evaluate(f, b, times)).collect()
}

// ---------------------------------------------------------------------------
// Identity verification
// ---------------------------------------------------------------------------

/// Relative PASS tolerance for quadrature-limited identities.
pub const TOL_QUADRATURE: f64 = 1e-6;
/// Relative PASS tolerance for exact-algebra identities.
pub const TOL_EXACT: f64 = 1e-10;

/// Outcome of one numerical identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub label: String,
    pub absolute: f64,
    pub scale: f64,
    pub relative: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ResidualReport {
    pub fn new(label: impl Into<String>, absolute: f64, scale: f64, tolerance: f64) -> Self {
        let relative = if scale > 0.0 { absolute / scale } else { absolute };
        ResidualReport { label: label.into(), absolute, scale, relative, tolerance, pass: relative <= tolerance }
    }
}

/// Integrates the direct-route integrand of a collapse map over the ordered
/// region described by `perm`, returning the k-particle kernel
/// `I(rho, perm)` as a sum of per-node tensor products.
pub fn integrate_collapse(
    map: &CollapseMap,
    perm: &[usize],
    phi: &GridField,
    t: f64,
    quad: QuadratureSpec,
) -> Result<ProductKernelSum, NumericsError> {
    use rayon::prelude::*;
    let nodes = simplex_nodes(map.r(), t, perm, quad)?;
    type WeightedSlots = Vec<(f64, Vec<Array2<Complex64>>)>;
    let evaluated: Result<WeightedSlots, NumericsError> = nodes
        .par_iter()
        .map(|(node_times, w)| {
            let mut times = Vec::with_capacity(map.r() + 1);
            times.push(t);
            times.extend_from_slice(node_times);
            Ok((*w, direct_integrand(map, phi, &times)?))
        })
        .collect();
    let mut sum = ProductKernelSum::new(phi.grid(), map.k());
    for (w, slots) in evaluated? {
        sum.push(Complex64::new(w, 0.0), slots);
    }
    Ok(sum)
}

/// Certifies that one acceptable move leaves the Duhamel integral
/// unchanged: `I(rho, id)` against `I(rho', pi')` after the move at the
/// given column.
pub fn verify_move_invariance(
    map: &CollapseMap,
    column: usize,
    phi: &GridField,
    t: f64,
    quad: QuadratureSpec,
    tolerance: f64,
) -> Result<ResidualReport, NumericsError> {
    let identity: Vec<usize> = (1..=map.r()).collect();
    let (moved, moved_pi) = apply_move(map, &identity, column)?;
    let before = integrate_collapse(map, &identity, phi, t, quad)?;
    let after = integrate_collapse(&moved, &moved_pi, phi, t, quad)?;
    let absolute = before.hs_distance(&after);
    let scale = before.hs_norm().max(after.hs_norm());
    Ok(ResidualReport::new(
        format!("move-invariance k={} rho={:?} l={}", map.k(), map.rho(), column),
        absolute,
        scale,
        tolerance,
    ))
}

/// Certifies the per-class resummation identity: the sum of the members'
/// integrals over the standard simplex equals the echelon integrand summed
/// over the class's permuted simplices.
pub fn verify_resummation(
    class: &EchelonClass,
    phi: &GridField,
    t: f64,
    quad: QuadratureSpec,
    tolerance: f64,
) -> Result<ResidualReport, NumericsError> {
    let echelon = class.echelon.as_map();
    let identity: Vec<usize> = (1..=echelon.r()).collect();
    let mut lhs = ProductKernelSum::new(phi.grid(), echelon.k());
    let mut rhs = ProductKernelSum::new(phi.grid(), echelon.k());
    for (member, pi) in &class.members {
        lhs.add_assign(&integrate_collapse(member, &identity, phi, t, quad)?);
        rhs.add_assign(&integrate_collapse(echelon, pi, phi, t, quad)?);
    }
    let absolute = lhs.hs_distance(&rhs);
    let scale = lhs.hs_norm().max(rhs.hs_norm());
    Ok(ResidualReport::new(
        format!(
            "resummation k={} echelon={:?} members={}",
            echelon.k(),
            echelon.rho(),
            class.members.len()
        ),
        absolute,
        scale,
        tolerance,
    ))
}

/// Certifies the full-sum reconstruction: the union of all resummed classes
/// equals the direct sum of every collapse map's standard-simplex integral.
pub fn verify_full_sum(
    classes: &[EchelonClass],
    phi: &GridField,
    t: f64,
    quad: QuadratureSpec,
    tolerance: f64,
) -> Result<ResidualReport, NumericsError> {
    let first = classes.first().expect("at least one class");
    let (k, r) = (first.echelon.as_map().k(), first.echelon.as_map().r());
    let identity: Vec<usize> = (1..=r).collect();
    let mut lhs = ProductKernelSum::new(phi.grid(), k);
    let mut rhs = ProductKernelSum::new(phi.grid(), k);
    for class in classes {
        let echelon = class.echelon.as_map();
        for (member, pi) in &class.members {
            lhs.add_assign(&integrate_collapse(member, &identity, phi, t, quad)?);
            rhs.add_assign(&integrate_collapse(echelon, pi, phi, t, quad)?);
        }
    }
    let absolute = lhs.hs_distance(&rhs);
    let scale = lhs.hs_norm().max(rhs.hs_norm());
    Ok(ResidualReport::new(format!("full-sum k={k} r={r}"), absolute, scale, tolerance))
}

/// Certifies the product factorization at fixed times: the tree-assembled
/// evaluation of the integrand equals the direct left-to-right word,
/// slot by slot.
pub fn verify_factorization(
    map: &CollapseMap,
    phi: &GridField,
    times: &[f64],
    tolerance: f64,
) -> Result<ResidualReport, NumericsError> {
    let direct = direct_integrand(map, phi, times)?;
    // leaves carry the integrand's own data at time t_r, the free flow of phi
    let phi_r = free_propagate(phi, times[map.r()]);
    let assembled = evaluate_jk(&assemble_jk(map), &Binding::auto(&phi_r), times)?;
    let mut absolute = 0.0f64;
    let mut scale = 0.0f64;
    for (slot, kern) in direct.iter().zip(&assembled) {
        let tree_dense = kern.dense().expect("assembled factors are nonempty");
        let mut dist = 0.0;
        let mut norm = 0.0;
        for (a, b) in slot.iter().zip(tree_dense.iter()) {
            dist += (a - b).norm_sqr();
            norm += a.norm_sqr();
        }
        absolute = absolute.max(dist.sqrt());
        scale = scale.max(norm.sqrt());
    }
    Ok(ResidualReport::new(
        format!("factorization k={} rho={:?}", map.k(), map.rho()),
        absolute,
        scale,
        tolerance,
    ))
}

// ---------------------------------------------------------------------------
// Discrete de Finetti mixtures
// ---------------------------------------------------------------------------

/// A finitely supported Borel probability measure on the unit ball of
/// `L^2`, the discrete surrogate of a de Finetti mixing measure.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    atoms: Vec<(f64, GridField)>,
}

impl DiscreteMeasure {
    /// Zero-weight atoms are dropped; weights must be nonnegative and sum
    /// to one, and every atom must lie in the closed `L^2` unit ball.
    pub fn new(atoms: Vec<(f64, GridField)>) -> Result<Self, NumericsError> {
        let total: f64 = atoms.iter().map(|(w, _)| w).sum();
        if atoms.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(NumericsError::BadMeasure);
        }
        let atoms: Vec<(f64, GridField)> = atoms.into_iter().filter(|(w, _)| *w > 0.0).collect();
        if atoms.iter().any(|(_, f)| f.l2_norm() > 1.0 + 1e-9) {
            return Err(NumericsError::AtomTooLarge);
        }
        Ok(DiscreteMeasure { atoms })
    }

    pub fn atoms(&self) -> &[(f64, GridField)] {
        &self.atoms
    }
}

/// A k-particle kernel of mixture form `sum_i w_i (|phi_i><phi_i|)^{(x) k}`.
/// Weights may be negative for intermediate differences.
#[derive(Debug, Clone)]
pub struct MixtureKernel {
    k: usize,
    terms: Vec<(f64, GridField)>,
}

/// The k-particle marginal of a discrete mixture,
/// `gamma^{(k)} = integral dmu(phi) (|phi><phi|)^{(x) k}`.
pub fn mixture_hierarchy(mu: &DiscreteMeasure, k: usize) -> MixtureKernel {
    assert!(k >= 1);
    MixtureKernel { k, terms: mu.atoms.to_vec() }
}

impl MixtureKernel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn terms(&self) -> &[(f64, GridField)] {
        &self.terms
    }

    pub fn trace(&self) -> f64 {
        self.terms.iter().map(|(w, f)| w * f.l2_norm_sq().powi(self.k as i32)).sum()
    }

    /// Partial trace over the last particle pair: each product term loses
    /// one factor and its weight picks up the traced factor `|phi|^2`.
    pub fn partial_trace(&self) -> Result<MixtureKernel, NumericsError> {
        if self.k < 2 {
            return Err(NumericsError::NothingToTrace);
        }
        Ok(MixtureKernel {
            k: self.k - 1,
            terms: self.terms.iter().map(|(w, f)| (w * f.l2_norm_sq(), f.clone())).collect(),
        })
    }

    /// Hilbert-Schmidt inner product, exact through the atom Gram matrix:
    /// `<(|a><a|)^k, (|b><b|)^k> = |<a, b>|^{2k}`.
    pub fn hs_inner(&self, other: &MixtureKernel) -> f64 {
        assert_eq!(self.k, other.k);
        let mut total = 0.0;
        for (w, f) in &self.terms {
            for (v, g) in &other.terms {
                total += w * v * f.inner(g).norm_sqr().powi(self.k as i32);
            }
        }
        total
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_inner(self).max(0.0).sqrt()
    }

    /// `|self - other|_{HS}`. When both kernels are carried by the same
    /// atom list the weight differences are formed first, which keeps the
    /// comparison exact to round-off; otherwise the signed Gram identity is
    /// used.
    pub fn hs_distance(&self, other: &MixtureKernel) -> f64 {
        assert_eq!(self.k, other.k);
        let aligned = self.terms.len() == other.terms.len()
            && self
                .terms
                .iter()
                .zip(&other.terms)
                .all(|((_, f), (_, g))| f.values() == g.values());
        let diff = if aligned {
            MixtureKernel {
                k: self.k,
                terms: self
                    .terms
                    .iter()
                    .zip(&other.terms)
                    .map(|((w, f), (v, _))| (w - v, f.clone()))
                    .collect(),
            }
        } else {
            let mut terms = self.terms.clone();
            terms.extend(other.terms.iter().map(|(v, g)| (-v, g.clone())));
            MixtureKernel { k: self.k, terms }
        };
        diff.hs_norm()
    }

    /// Smallest eigenvalue of the weighted atom Gram matrix
    /// `[sqrt(w_i w_j) <phi_i, phi_j>^k]`; nonnegative (to round-off) iff
    /// the mixture kernel is positive semidefinite.
    pub fn gram_min_eigenvalue(&self) -> f64 {
        let m = self.terms.len();
        if m == 0 {
            return 0.0;
        }
        let g = nalgebra::DMatrix::from_fn(m, m, |i, j| {
            let (wi, fi) = &self.terms[i];
            let (wj, fj) = &self.terms[j];
            Complex64::new((wi.max(0.0) * wj.max(0.0)).sqrt(), 0.0)
                * fi.inner(fj).powu(self.k as u32)
        });
        let g = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
        nalgebra::SymmetricEigen::new(g).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Expands the mixture into dense per-slot matrices; intended for small
    /// grids and structural (symmetry, hermiticity) checks.
    pub fn to_product_kernel(&self, grid: &Arc<Grid>) -> ProductKernelSum {
        let mut sum = ProductKernelSum::new(grid, self.k);
        for (w, f) in &self.terms {
            sum.push(Complex64::new(*w, 0.0), (0..self.k).map(|_| outer(f, f)).collect());
        }
        sum
    }
}

/// Certifies admissibility `Tr_{k+1} gamma^{(k+1)} = gamma^{(k)}` of a
/// discrete mixture.
pub fn verify_admissibility(
    mu: &DiscreteMeasure,
    k: usize,
    tolerance: f64,
) -> Result<ResidualReport, NumericsError> {
    let direct = mixture_hierarchy(mu, k);
    let traced = mixture_hierarchy(mu, k + 1).partial_trace()?;
    let absolute = direct.hs_distance(&traced);
    Ok(ResidualReport::new(format!("admissibility k={k}"), absolute, direct.hs_norm(), tolerance))
}

/// Even `H^1` moment sequence of a mixture and the certified support bound:
/// `moment_q = integral dmu |phi|_{H^1}^{2q}`, with
/// `moment_q^{1/(2q)}` increasing to the largest atom norm.
pub fn chebyshev_support(mu: &DiscreteMeasure, max_order: usize) -> (Vec<f64>, f64) {
    assert!(max_order >= 1);
    let norms: Vec<(f64, f64)> = mu.atoms.iter().map(|(w, f)| (*w, f.h1_norm())).collect();
    let moments = (1..=max_order)
        .map(|q| norms.iter().map(|(w, h)| w * h.powi(2 * q as i32)).sum())
        .collect();
    let bound = norms.iter().map(|(_, h)| *h).fold(0.0, f64::max);
    (moments, bound)
}

// ---------------------------------------------------------------------------
// Mild-solution consistency
// ---------------------------------------------------------------------------

/// Step size, time-quadrature order and tolerance for the mild-solution
/// check.
#[derive(Debug, Clone, Copy)]
pub struct MildOptions {
    pub dt: f64,
    pub quadrature_order: usize,
    pub tolerance: f64,
}

impl Default for MildOptions {
    fn default() -> Self {
        MildOptions { dt: 1e-3, quadrature_order: DEFAULT_QUADRATURE_ORDER, tolerance: 1e-6 }
    }
}

/// Certifies that the mixture of NLS flows solves the hierarchy in mild
/// form:
/// `gamma^{(k)}(t) = U^{(k)}(t) gamma^{(k)}(0)
///  - i lambda integral_0^t U^{(k)}(t-s) B_{k+1} gamma^{(k+1)}(s) ds`,
/// with `B_{k+1} = sum_j (B+_{j} - B-_{j})` contracting the `(k+1)`-st pair.
pub fn verify_mild_solution(
    mu: &DiscreteMeasure,
    k: usize,
    lambda: f64,
    t: f64,
    opts: MildOptions,
) -> Result<ResidualReport, NumericsError> {
    assert!(k >= 1 && t >= 0.0);
    let grid = Arc::clone(mu.atoms.first().expect("measure has at least one atom").1.grid());
    let mut lhs = ProductKernelSum::new(&grid, k);
    let mut rhs = ProductKernelSum::new(&grid, k);
    for (w, phi0) in &mu.atoms {
        let phi_t = nls_flow(phi0, lambda, t, opts.dt)?;
        lhs.push(Complex64::new(*w, 0.0), (0..k).map(|_| outer(&phi_t, &phi_t)).collect());
        let free = free_propagate(phi0, t);
        rhs.push(Complex64::new(*w, 0.0), (0..k).map(|_| outer(&free, &free)).collect());
    }
    if t > 0.0 {
        let (u, uw) = gauss_legendre_unit(opts.quadrature_order);
        for (ui, wi) in u.iter().zip(&uw) {
            let s = t * ui;
            let node_weight = t * wi;
            for (w, phi0) in &mu.atoms {
                let phi_s = nls_flow(phi0, lambda, s, opts.dt)?;
                let base = outer(&phi_s, &phi_s);
                for j in 1..=k {
                    let mut slots: Vec<Array2<Complex64>> =
                        (0..k + 1).map(|_| base.clone()).collect();
                    contract_dense(&mut slots, j);
                    for slot in &mut slots {
                        *slot = dense_propagate(slot, &grid, t - s);
                    }
                    rhs.push(Complex64::new(0.0, -lambda) * (node_weight * w), slots);
                }
            }
        }
    }
    let absolute = lhs.hs_distance(&rhs);
    Ok(ResidualReport::new(
        format!("mild-solution k={k} lambda={lambda} t={t}"),
        absolute,
        lhs.hs_norm(),
        opts.tolerance,
    ))
}

// ---------------------------------------------------------------------------
// Strichartz ratio probe
// ---------------------------------------------------------------------------

/// One sample of the trilinear space-time ratio behind the recursive
/// bounds.
#[derive(Debug, Clone, Serialize)]
pub struct StrichartzProbe {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

/// Measures
/// `|(e^{itD}f1) conj(e^{itD}f2) (e^{itD}f3)|_{L^2_t L^2_x([0,T])}`
/// against `|f1|_{H^1} |f2|_{H^1} |f3|_{L^2}`. The ratio is the probed
/// stand-in for the constant `C`; it is reported, never certified.
pub fn strichartz_ratio_probe(
    f1: &GridField,
    f2: &GridField,
    f3: &GridField,
    t_window: f64,
    quadrature_order: usize,
) -> StrichartzProbe {
    let denominator = f1.h1_norm() * f2.h1_norm() * f3.l2_norm();
    let (u, w) = gauss_legendre_unit(quadrature_order);
    let mut num_sq = 0.0;
    for (ui, wi) in u.iter().zip(&w) {
        let s = t_window * ui;
        let g = GridField::cubic(&free_propagate(f1, s), &free_propagate(f2, s), &free_propagate(f3, s));
        num_sq += t_window * wi * g.l2_norm_sq();
    }
    let numerator = num_sq.max(0.0).sqrt();
    let ratio = if denominator > 0.0 { numerator / denominator } else { 0.0 };
    StrichartzProbe { numerator, denominator, ratio }
}
