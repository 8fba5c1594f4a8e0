//! Chebyshev expansion of the resolvent at complex energy.
//!
//! With `H~ = (H - b)/s` and `z~ = (E + i eta - b)/s`,
//!
//! ```text
//! (z~ - H~)^-1 = sum_n g_n(z~) T_n(H~),   g_n = -i (2 - delta_n0) w^n / sqrt(1 - z~^2)
//! ```
//!
//! where `w = z~ - i sqrt(1 - z~^2)` is taken on the branch with `|w| < 1`.
//! Since `T_n(H~)` is Hermitian, `Im G = sum_n Im(g_n) T_n(H~) / s`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::sparse::SparseOperator;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative size of the last retained coefficient, `|g_M| / |g_0|`.
pub const TAIL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Moments {
    /// Smallest `M` with `|g_M / g_0| < 1e-8` at every requested energy.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMode {
    /// `R` random-phase vectors.
    Stochastic,
    /// Every basis vector once; deterministic, only sensible for small systems.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpgfParams {
    pub eta: f64,
    pub moments: Moments,
    pub random_vectors: usize,
    /// Spectral interval; estimated by Lanczos when absent.
    pub bounds: Option<(f64, f64)>,
    pub margin: f64,
    pub seed: u64,
    pub trace: TraceMode,
}

impl Default for CpgfParams {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            moments: Moments::Auto,
            random_vectors: 10,
            bounds: None,
            margin: 0.01,
            seed: 0,
            trace: TraceMode::Stochastic,
        }
    }
}

impl CpgfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Domain(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.margin > 0.0 && self.margin <= 0.1) {
            return Err(Error::Domain(format!(
                "margin must lie in (0, 0.1], got {}",
                self.margin
            )));
        }
        if self.trace == TraceMode::Stochastic && self.random_vectors == 0 {
            return Err(Error::Domain("random_vectors must be positive".into()));
        }
        if self.moments == Moments::Fixed(0) {
            return Err(Error::Domain("moment count must be positive".into()));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo < hi) {
                return Err(Error::Domain(format!(
                    "empty spectral interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Extremal eigenvalues by Lanczos iteration, padded slightly outward and
/// clipped to the Gershgorin bound.
pub fn spectral_bounds(ham: &SparseOperator) -> Result<(f64, f64)> {
    let dim = ham.dim();
    let gersh = ham.norm_bound();
    if dim == 0 || gersh == 0.0 {
        return Ok((-1e-3, 1e-3));
    }
    let max_iter = 2000.min(dim + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b0d5);
    let mut q: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>()))
        .collect();
    let norm = (dim as f64).sqrt();
    q.iter_mut().for_each(|z| *z /= norm);
    let mut q_prev = vec![ZERO; dim];
    let mut w = vec![ZERO; dim];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last = (f64::INFINITY, f64::NEG_INFINITY);
    let mut change = f64::INFINITY;
    let tolerance = 1e-7 * gersh;

    for j in 0..max_iter {
        ham.mul_vec_into(&q, &mut w);
        let beta_prev = betas.last().copied().unwrap_or(0.0);
        let mut alpha = 0.0;
        for i in 0..dim {
            w[i] -= q_prev[i] * beta_prev;
            alpha += (q[i].conj() * w[i]).re;
        }
        for i in 0..dim {
            w[i] -= q[i] * alpha;
        }
        let beta = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        alphas.push(alpha);

        let exhausted = beta <= 1e-12 * gersh;
        if exhausted || (j + 1) % 10 == 0 || j + 1 == max_iter {
            let (lo, hi, r_lo, r_hi) = ritz_extremes(&alphas, &betas, beta);
            change = (lo - last.0).abs().max((hi - last.1).abs());
            last = (lo, hi);
            if exhausted || (j >= 30 && change < tolerance) {
                let pad = 1e-3 * (hi - lo).max(1e-3);
                let lo = (lo - r_lo.min(pad) - pad).max(-gersh);
                let hi = (hi + r_hi.min(pad) + pad).min(gersh);
                return Ok((lo, hi));
            }
        }
        betas.push(beta);
        std::mem::swap(&mut q_prev, &mut q);
        for i in 0..dim {
            q[i] = w[i] / beta;
        }
    }
    Err(Error::BoundsNotConverged {
        iterations: max_iter,
        last_change: change,
        tolerance,
    })
}

/// Extremal Ritz values of the Lanczos tridiagonal and their residual bounds.
fn ritz_extremes(alphas: &[f64], betas: &[f64], beta_next: f64) -> (f64, f64, f64, f64) {
    let k = alphas.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = t.symmetric_eigen();
    let (mut imin, mut imax) = (0, 0);
    for i in 0..k {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let r = |i: usize| beta_next * eig.eigenvectors[(k - 1, i)].abs();
    (
        eig.eigenvalues[imin],
        eig.eigenvalues[imax],
        r(imin),
        r(imax),
    )
}

/// `w(z) = z - i sqrt(1 - z^2)` on the branch inside the unit disc, and the
/// matching square root.
fn joukowski(z: Complex64) -> (Complex64, Complex64) {
    let mut root = (Complex64::new(1.0, 0.0) - z * z).sqrt();
    let mut w = z - Complex64::i() * root;
    if w.norm() > 1.0 {
        root = -root;
        w = z - Complex64::i() * root;
    }
    (w, root)
}

/// Number of coefficients needed so that `|g_M / g_0| < tol`.
pub fn moments_for(z_tilde: Complex64, tol: f64) -> Result<usize> {
    if z_tilde.im <= 0.0 {
        return Err(Error::Domain(format!(
            "resolvent needs Im z > 0, got {z_tilde}"
        )));
    }
    let (w, _) = joukowski(z_tilde);
    // |g_M / g_0| = 2 |w|^M
    let m = ((tol / 2.0).ln() / w.norm().ln()).ceil();
    Ok((m as usize).max(2) + 1)
}

/// `g_0 .. g_{M-1}` for the resolvent `(z~ - x)^-1` of a variable in `[-1, 1]`.
pub fn resolvent_coeffs(z_tilde: Complex64, m: usize) -> Result<Vec<Complex64>> {
    if z_tilde.im <= 0.0 {
        return Err(Error::Domain(format!(
            "resolvent needs Im z > 0, got {z_tilde}"
        )));
    }
    let (w, root) = joukowski(z_tilde);
    let mut out = Vec::with_capacity(m);
    let mut wn = Complex64::new(1.0, 0.0);
    for n in 0..m {
        let weight = if n == 0 { 1.0 } else { 2.0 };
        out.push(-Complex64::i() * weight * wn / root);
        wn *= w;
    }
    Ok(out)
}

/// Entry type of a rescaled Hamiltonian: `f64` when it is real, so that
/// complex probe vectors are propagated at half the arithmetic cost.
pub trait Entry: Copy + Send + Sync + std::fmt::Debug {
    fn times(self, x: Complex64) -> Complex64;
}

impl Entry for f64 {
    #[inline(always)]
    fn times(self, x: Complex64) -> Complex64 {
        Complex64::new(self * x.re, self * x.im)
    }
}

impl Entry for Complex64 {
    #[inline(always)]
    fn times(self, x: Complex64) -> Complex64 {
        self * x
    }
}

/// Compact CSR copy used inside the recurrences.
#[derive(Debug, Clone)]
struct Csr<M> {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<M>,
}

#[inline(always)]
fn v_times<M: Entry>(v: M, x: Complex64) -> Complex64 {
    v.times(x)
}

impl<M: Entry> Csr<M> {
    fn from_op(op: &SparseOperator, f: impl Fn(Complex64) -> M) -> Self {
        assert!(op.col_indices().iter().all(|&c| c < op.dim()));
        assert!(op.dim() < u32::MAX as usize);
        Self {
            offsets: op.row_offsets().to_vec(),
            cols: op.col_indices().iter().map(|&c| c as u32).collect(),
            vals: op.values().iter().map(|&v| f(v)).collect(),
        }
    }

    fn dim(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline(always)]
    fn row_dot(&self, i: usize, x: &[Complex64]) -> Complex64 {
        debug_assert!(x.len() == self.dim() && i < self.dim());
        let (mut re, mut im) = (0.0, 0.0);
        // SAFETY: offsets are monotone with last == cols.len() == vals.len(),
        // every column index is < dim (checked in `from_op`), and callers
        // pass vectors of length dim.
        unsafe {
            let lo = *self.offsets.get_unchecked(i);
            let hi = *self.offsets.get_unchecked(i + 1);
            for e in lo..hi {
                let c = *self.cols.get_unchecked(e) as usize;
                let p = v_times(*self.vals.get_unchecked(e), *x.get_unchecked(c));
                re += p.re;
                im += p.im;
            }
        }
        Complex64::new(re, im)
    }

    fn mul_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row_dot(i, x);
        }
    }

    /// `next <- 2 A cur - next`
    fn step(&self, cur: &[Complex64], next: &mut [Complex64]) {
        for (i, nx) in next.iter_mut().enumerate() {
            *nx = 2.0 * self.row_dot(i, cur) - *nx;
        }
    }

    /// `next <- 2 A cur - next` fused with `out[i, :] += row * next_i`.
    fn step_accumulate(
        &self,
        cur: &[Complex64],
        next: &mut [Complex64],
        out: &mut [Complex64],
        row: &[f64],
    ) {
        let k = row.len();
        if k == 1 {
            let c = row[0];
            for (i, (nx, o)) in next.iter_mut().zip(out.iter_mut()).enumerate() {
                let t = 2.0 * self.row_dot(i, cur) - *nx;
                *nx = t;
                *o += c * t;
            }
            return;
        }
        for (i, (nx, o)) in next.iter_mut().zip(out.chunks_exact_mut(k)).enumerate() {
            let t = 2.0 * self.row_dot(i, cur) - *nx;
            *nx = t;
            for (oo, &c) in o.iter_mut().zip(row) {
                *oo += c * t;
            }
        }
    }
}

fn accumulate_all(v: &[Complex64], out: &mut [Complex64], row: &[f64]) {
    let k = row.len();
    for (&t, o) in v.iter().zip(out.chunks_exact_mut(k)) {
        for (oo, &c) in o.iter_mut().zip(row) {
            *oo += c * t;
        }
    }
}

/// `H~ = (H - b)/s` with the diagonal shift stored explicitly.
#[derive(Debug, Clone)]
pub struct RescaledOperator {
    op: SparseOperator,
    kernel: Kernel,
    pub center: f64,
    pub scale: f64,
    pub bounds: (f64, f64),
}

#[derive(Debug, Clone)]
enum Kernel {
    Real(Csr<f64>),
    Complex(Csr<Complex64>),
}

impl RescaledOperator {
    pub fn new(ham: &SparseOperator, bounds: (f64, f64), margin: f64) -> Self {
        let (lo, hi) = bounds;
        let center = 0.5 * (hi + lo);
        let scale = (hi - lo) / (2.0 * (1.0 - margin));
        let shifted = ham
            .iter()
            .map(|(i, j, v)| (i, j, v / scale))
            .chain((0..ham.dim()).map(|i| (i, i, Complex64::new(-center / scale, 0.0))))
            .collect::<Vec<_>>();
        let op = SparseOperator::from_triplets(ham.dim(), shifted);
        let kernel = if op.values().iter().all(|v| v.im == 0.0) {
            Kernel::Real(Csr::from_op(&op, |v| v.re))
        } else {
            Kernel::Complex(Csr::from_op(&op, |v| v))
        };
        Self {
            op,
            kernel,
            center,
            scale,
            bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.op
    }

    /// True when the rescaled Hamiltonian has no imaginary entries.
    pub fn is_real(&self) -> bool {
        matches!(self.kernel, Kernel::Real(_))
    }

    pub fn rescale(&self, energy: f64, eta: f64) -> Complex64 {
        Complex64::new((energy - self.center) / self.scale, eta / self.scale)
    }

    /// True when `energy` lies inside the rescaled window `(-1, 1)`.
    pub fn contains(&self, energy: f64) -> bool {
        ((energy - self.center) / self.scale).abs() < 1.0
    }

    fn apply_into(
        &self,
        plan: &ImGreenPlan,
        v: &[Complex64],
        out: &mut [Complex64],
        ws: &mut Workspace,
    ) {
        match &self.kernel {
            Kernel::Real(h) => apply_into(h, plan, v, out, ws),
            Kernel::Complex(h) => apply_into(h, plan, v, out, ws),
        }
    }

    fn moments(&self, v: &[Complex64], m: usize) -> Vec<f64> {
        match &self.kernel {
            Kernel::Real(h) => chebyshev_moments(h, v, m),
            Kernel::Complex(h) => chebyshev_moments(h, v, m),
        }
    }
}

/// Real expansion coefficients of `Im G` for several `(E, eta)` targets,
/// stored row-major as `moments x targets` and zero-padded past each
/// target's own cutoff.
#[derive(Debug, Clone)]
pub struct ImGreenPlan {
    pub targets: Vec<(f64, f64)>,
    pub cutoffs: Vec<usize>,
    table: Vec<f64>,
}

impl ImGreenPlan {
    pub fn new(op: &RescaledOperator, targets: &[(f64, f64)], moments: Moments) -> Result<Self> {
        Self::build(op, targets, moments, true)
    }

    /// As [`ImGreenPlan::new`] but accepts real energies outside the window,
    /// where the expansion still converges (faster). Used for the DOS only.
    pub fn new_unbounded(op: &RescaledOperator, targets: &[(f64, f64)], moments: Moments) -> Result<Self> {
        Self::build(op, targets, moments, false)
    }

    fn build(op: &RescaledOperator, targets: &[(f64, f64)], moments: Moments, bounded: bool) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Domain("no target energies".into()));
        }
        let mut cutoffs = Vec::with_capacity(targets.len());
        for &(e, eta) in targets {
            if !(eta > 0.0) {
                return Err(Error::Domain(format!("eta must be positive, got {eta}")));
            }
            if !e.is_finite() || (bounded && !op.contains(e)) {
                return Err(Error::Domain(format!(
                    "energy {e} outside the spectral window [{:.6}, {:.6}]",
                    op.center - op.scale,
                    op.center + op.scale
                )));
            }
            let m = match moments {
                Moments::Auto => moments_for(op.rescale(e, eta), TAIL_TOLERANCE)?,
                Moments::Fixed(m) => m,
            };
            cutoffs.push(m);
        }
        let k = targets.len();
        let m_max = *cutoffs.iter().max().unwrap();
        let mut table = vec![0.0; m_max * k];
        for (t, (&(e, eta), &m)) in targets.iter().zip(&cutoffs).enumerate() {
            let g = resolvent_coeffs(op.rescale(e, eta), m)?;
            for (n, gn) in g.iter().enumerate() {
                table[n * k + t] = gn.im / op.scale;
            }
        }
        Ok(Self {
            targets: targets.to_vec(),
            cutoffs,
            table,
        })
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn n_moments(&self) -> usize {
        self.table.len() / self.targets.len()
    }

    fn row(&self, n: usize) -> &[f64] {
        let k = self.targets.len();
        &self.table[n * k..(n + 1) * k]
    }
}

/// Scratch space for one Chebyshev run.
struct Workspace {
    prev: Vec<Complex64>,
    cur: Vec<Complex64>,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        Self {
            prev: vec![ZERO; dim],
            cur: vec![ZERO; dim],
        }
    }
}

fn apply_into<M: Entry>(
    h: &Csr<M>,
    plan: &ImGreenPlan,
    v: &[Complex64],
    out: &mut [Complex64],
    ws: &mut Workspace,
) {
    let dim = h.dim();
    assert_eq!(v.len(), dim);
    assert_eq!(out.len(), dim * plan.n_targets());
    out.fill(ZERO);
    let m = plan.n_moments();
    accumulate_all(v, out, plan.row(0));
    if m == 1 {
        return;
    }
    let Workspace { prev, cur } = ws;
    prev.copy_from_slice(v);
    h.mul_into(v, cur);
    accumulate_all(cur, out, plan.row(1));
    for n in 2..m {
        h.step_accumulate(cur, prev, out, plan.row(n));
        std::mem::swap(prev, cur);
    }
}

/// `<v|T_n(H~)|v>` for `n < m`, using `mu_2n = 2 <T_n|T_n> - mu_0` and
/// `mu_2n+1 = 2 <T_n|T_n+1> - mu_1` so that `m` moments cost `m/2` products.
fn chebyshev_moments<M: Entry>(h: &Csr<M>, v: &[Complex64], m: usize) -> Vec<f64> {
    let dot = |a: &[Complex64], b: &[Complex64]| {
        a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum::<f64>()
    };
    let mut mu = vec![0.0; m];
    let mut prev = v.to_vec();
    let mut cur = vec![ZERO; v.len()];
    h.mul_into(v, &mut cur);
    mu[0] = dot(v, v);
    if m > 1 {
        mu[1] = dot(v, &cur);
    }
    // prev = T_n v, cur = T_{n+1} v
    let mut n = 0;
    loop {
        if n >= 1 {
            if 2 * n < m {
                mu[2 * n] = 2.0 * dot(&prev, &prev) - mu[0];
            }
            if 2 * n + 1 < m {
                mu[2 * n + 1] = 2.0 * dot(&prev, &cur) - mu[1];
            }
        }
        if 2 * n + 2 >= m {
            break;
        }
        h.step(&cur, &mut prev);
        std::mem::swap(&mut prev, &mut cur);
        n += 1;
    }
    mu
}

/// `Im G(E_k + i eta_k) v` for every target, row-major `dim x targets`.
pub fn apply_im_green_multi(
    op: &RescaledOperator,
    plan: &ImGreenPlan,
    v: &[Complex64],
) -> Vec<Complex64> {
    let mut out = vec![ZERO; op.dim() * plan.n_targets()];
    let mut ws = Workspace::new(op.dim());
    op.apply_into(plan, v, &mut out, &mut ws);
    out
}

/// `Im G(E + i eta) v` for a single target.
pub fn apply_im_green(
    op: &RescaledOperator,
    energy: f64,
    eta: f64,
    moments: Moments,
    v: &[Complex64],
) -> Result<Vec<Complex64>> {
    let plan = ImGreenPlan::new(op, &[(energy, eta)], moments)?;
    Ok(apply_im_green_multi(op, &plan, v))
}

/// Probe vector `index`: random phases in stochastic mode, the basis
/// vector `e_index` in exact mode.
fn probe(dim: usize, index: usize, params: &CpgfParams) -> Vec<Complex64> {
    match params.trace {
        TraceMode::Exact => {
            let mut v = vec![ZERO; dim];
            v[index] = Complex64::new(1.0, 0.0);
            v
        }
        TraceMode::Stochastic => {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(index as u64);
            (0..dim)
                .map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>()))
                .collect()
        }
    }
}

fn probe_count(dim: usize, params: &CpgfParams) -> usize {
    match params.trace {
        TraceMode::Exact => dim,
        TraceMode::Stochastic => params.random_vectors,
    }
}

/// Mean and standard error over per-probe estimates; in exact mode the
/// probes are summed and no error is reported.
fn reduce(samples: &[Vec<f64>], trace: TraceMode) -> Vec<(f64, Option<f64>)> {
    let k = samples.first().map_or(0, Vec::len);
    let r = samples.len() as f64;
    (0..k)
        .map(|t| match trace {
            TraceMode::Exact => (samples.iter().map(|s| s[t]).sum(), None),
            TraceMode::Stochastic => {
                let mean = samples.iter().map(|s| s[t]).sum::<f64>() / r;
                if samples.len() < 2 {
                    return (mean, None);
                }
                let var = samples.iter().map(|s| (s[t] - mean).powi(2)).sum::<f64>() / (r - 1.0);
                (mean, Some((var / r).sqrt()))
            }
        })
        .collect()
}

/// Energies with values and standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSample {
    pub energies: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KuboEstimate {
    pub energy: f64,
    pub eta: f64,
    /// `sigma / sigma0`
    pub value: f64,
    /// `None` in exact-trace mode or with a single random vector.
    pub stderr: Option<f64>,
    pub moments: usize,
}

/// A prepared CPGF calculation: rescaled Hamiltonian plus parameters.
#[derive(Debug, Clone)]
pub struct Cpgf {
    pub op: RescaledOperator,
    pub params: CpgfParams,
}

impl Cpgf {
    pub fn new(ham: &SparseOperator, params: CpgfParams) -> Result<Self> {
        params.validate()?;
        let bounds = match params.bounds {
            Some(b) => b,
            None => spectral_bounds(ham)?,
        };
        Ok(Self {
            op: RescaledOperator::new(ham, bounds, params.margin),
            params,
        })
    }

    /// Density of states per unit cell, `-(1/(pi N_c)) Tr Im G(E)`.
    pub fn dos(&self, energies: &[f64], n_cells: usize) -> Result<SpectrumSample> {
        check_grid(energies)?;
        let targets: Vec<(f64, f64)> = energies.iter().map(|&e| (e, self.params.eta)).collect();
        let plan = ImGreenPlan::new_unbounded(&self.op, &targets, self.params.moments)?;
        let m = plan.n_moments();
        let k = plan.n_targets();
        let dim = self.op.dim();
        let samples: Vec<Vec<f64>> = (0..probe_count(dim, &self.params))
            .into_par_iter()
            .map(|r| {
                let mu = self.op.moments(&probe(dim, r, &self.params), m);
                let mut rho = vec![0.0; k];
                for (n, mu_n) in mu.iter().enumerate() {
                    for (acc, c) in rho.iter_mut().zip(plan.row(n)) {
                        *acc += c * mu_n;
                    }
                }
                rho.iter().map(|x| -x / (PI * n_cells as f64)).collect()
            })
            .collect();
        let stats = reduce(&samples, self.params.trace);
        Ok(SpectrumSample {
            energies: energies.to_vec(),
            values: stats.iter().map(|s| s.0).collect(),
            stderr: stats.iter().map(|s| s.1.unwrap_or(0.0)).collect(),
        })
    }

    /// Kubo-Greenwood `sigma / sigma0 = Tr[Im G v Im G v] / N_c` at every
    /// target, from two recurrences per probe (`r` and `v r`).
    pub fn kubo(
        &self,
        velocity: &SparseOperator,
        targets: &[(f64, f64)],
        n_cells: usize,
    ) -> Result<Vec<KuboEstimate>> {
        let plan = ImGreenPlan::new(&self.op, targets, self.params.moments)?;
        let dim = self.op.dim();
        if velocity.dim() != dim {
            return Err(Error::SizeMismatch {
                lattice: dim,
                realization: velocity.dim(),
            });
        }
        let k = plan.n_targets();
        let samples: Vec<Vec<f64>> = (0..probe_count(dim, &self.params))
            .into_par_iter()
            .map_init(
                || {
                    (
                        Workspace::new(dim),
                        vec![ZERO; dim * k],
                        vec![ZERO; dim * k],
                        vec![ZERO; dim],
                    )
                },
                |(ws, left, right, vr), r| {
                    let v = probe(dim, r, &self.params);
                    self.op.apply_into(&plan, &v, left, ws);
                    velocity.mul_vec_into(&v, vr);
                    self.op.apply_into(&plan, vr, right, ws);
                    kubo_contraction(velocity, left, right, k)
                        .into_iter()
                        .map(|x| x / n_cells as f64)
                        .collect()
                },
            )
            .collect();
        let stats = reduce(&samples, self.params.trace);
        Ok(plan
            .targets
            .iter()
            .zip(&plan.cutoffs)
            .zip(stats)
            .map(
                |((&(energy, eta), &moments), (value, stderr))| KuboEstimate {
                    energy,
                    eta,
                    value,
                    stderr,
                    moments,
                },
            )
            .collect())
    }
}

/// `Re <left_k | v | right_k>` for each target column.
fn kubo_contraction(
    velocity: &SparseOperator,
    left: &[Complex64],
    right: &[Complex64],
    k: usize,
) -> Vec<f64> {
    let mut acc = vec![ZERO; k];
    let mut tmp = vec![ZERO; k];
    for i in 0..velocity.dim() {
        tmp.fill(ZERO);
        for (j, vij) in velocity.row(i) {
            for (t, r) in tmp.iter_mut().zip(&right[j * k..(j + 1) * k]) {
                *t += vij * r;
            }
        }
        for ((a, l), t) in acc.iter_mut().zip(&left[i * k..(i + 1) * k]).zip(&tmp) {
            *a += l.conj() * t;
        }
    }
    acc.into_iter().map(|z| z.re).collect()
}

fn check_grid(energies: &[f64]) -> Result<()> {
    if energies.is_empty() {
        return Err(Error::Domain("empty energy grid".into()));
    }
    if !energies.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Domain(
            "energy grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

pub fn dos_cpgf(
    lattice: &Lattice,
    energies: &[f64],
    params: &CpgfParams,
) -> Result<SpectrumSample> {
    Cpgf::new(&lattice.hamiltonian, *params)?.dos(energies, lattice.spec.n_cells)
}

pub fn kubo_cpgf(lattice: &Lattice, energy: f64, params: &CpgfParams) -> Result<KuboEstimate> {
    let engine = Cpgf::new(&lattice.hamiltonian, *params)?;
    let out = engine.kubo(
        &lattice.velocity,
        &[(energy, params.eta)],
        lattice.spec.n_cells,
    )?;
    Ok(out[0])
}

/// Conductivity at `E` for `eta in {4 eta0, 2 eta0, eta0}` from one set of
/// recurrences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaLadder {
    pub estimates: Vec<KuboEstimate>,
}

impl EtaLadder {
    /// The value at the smallest broadening.
    pub fn value(&self) -> f64 {
        self.estimates.last().map_or(f64::NAN, |e| e.value)
    }

    pub fn stderr(&self) -> Option<f64> {
        self.estimates.last().and_then(|e| e.stderr)
    }

    /// Spread of the ladder, used as a systematic uncertainty.
    pub fn systematic(&self) -> f64 {
        let lo = self
            .estimates
            .iter()
            .map(|e| e.value)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .estimates
            .iter()
            .map(|e| e.value)
            .fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

pub fn kubo_eta_ladder(lattice: &Lattice, energy: f64, params: &CpgfParams) -> Result<EtaLadder> {
    let engine = Cpgf::new(&lattice.hamiltonian, *params)?;
    let eta = params.eta;
    let targets = [(energy, 4.0 * eta), (energy, 2.0 * eta), (energy, eta)];
    let estimates = engine.kubo(&lattice.velocity, &targets, lattice.spec.n_cells)?;
    Ok(EtaLadder { estimates })
}

/// Trapezoidal integral of a sample over `[lo, hi]`, endpoints linearly
/// interpolated. The error is propagated assuming fully correlated points,
/// which is conservative for stochastic-trace samples.
pub fn integrate_dos_window(sample: &SpectrumSample, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let e = &sample.energies;
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty window [{lo}, {hi}]")));
    }
    if e.is_empty() || lo < e[0] || hi > e[e.len() - 1] {
        return Err(Error::Domain(format!(
            "window [{lo}, {hi}] not inside the energy grid"
        )));
    }
    let interp = |x: f64, ys: &[f64]| -> f64 {
        let j = e.partition_point(|&v| v <= x).clamp(1, e.len() - 1);
        let (x0, x1) = (e[j - 1], e[j]);
        let f = (x - x0) / (x1 - x0);
        ys[j - 1] * (1.0 - f) + ys[j] * f
    };
    let mut xs = vec![lo];
    let mut vs = vec![interp(lo, &sample.values)];
    let mut ss = vec![interp(lo, &sample.stderr)];
    for (i, &x) in e.iter().enumerate() {
        if x > lo && x < hi {
            xs.push(x);
            vs.push(sample.values[i]);
            ss.push(sample.stderr[i]);
        }
    }
    xs.push(hi);
    vs.push(interp(hi, &sample.values));
    ss.push(interp(hi, &sample.stderr));
    let mut weight = 0.0;
    let mut err = 0.0;
    for i in 1..xs.len() {
        let h = xs[i] - xs[i - 1];
        weight += 0.5 * h * (vs[i] + vs[i - 1]);
        err += 0.5 * h * (ss[i] + ss[i - 1]);
    }
    Ok((weight, err))
}

/// Weight of a Lorentzian-broadened delta peak at `center`, integrated over
/// `center +- half_width` and corrected for the tails outside the window.
pub fn fb_weight(
    sample: &SpectrumSample,
    center: f64,
    half_width: f64,
    eta: f64,
) -> Result<(f64, f64)> {
    let (w, err) = integrate_dos_window(sample, center - half_width, center + half_width)?;
    let inside = 2.0 / PI * (half_width / eta).atan();
    Ok((w / inside, err / inside))
}

/// Uniform grid of `n` points that resolves a Lorentzian of width `eta`
/// around `center`.
pub fn peak_grid(center: f64, half_width: f64, eta: f64) -> Vec<f64> {
    let n = ((2.0 * half_width / (eta / 8.0)).ceil() as usize).max(2);
    let h = 2.0 * half_width / n as f64;
    (0..=n)
        .map(|i| center - half_width + h * i as f64)
        .collect()
}
