//! Compact localized flat-band states of diluted chains and their geometry.
//!
//! Between two consecutive surviving B atoms at cells `p < q` (`m = q - p`)
//! the flat band hosts one exact eigenstate. Relative to the left B atom:
//!
//! ```text
//! sawtooth  B_p: -1,  A_{p+j}: -sqrt(2) (-1)^j  (j = 1..m),  B_q: (-1)^m      norm sqrt(2(m+1))
//! stub      B_p: +1,  C_{p+j}: -alpha (-1)^j    (j = 0..m-1), B_q: (-1)^(m-1)  norm sqrt(m alpha^2 + 2)
//! ```
//!
//! Each amplitude carries the phase `exp(i phi x)` with `x` the site position
//! unwrapped from the left B atom, which makes the state an eigenstate of the
//! flux-threaded Hamiltonian for every `phi`.

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DisorderRealization, LatticeKind, LatticeSpec, SiteTable};
use crate::sparse::SparseOperator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbAmplitude {
    pub site: usize,
    /// Position unwrapped from the segment's left B atom, units of `a`.
    pub x: f64,
    pub amp: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbState {
    pub kind: LatticeKind,
    pub alpha: f64,
    pub phi: f64,
    pub n_cells: usize,
    /// Cells of the bounding B atoms; `right < left` when the segment wraps.
    pub left: usize,
    pub right: usize,
    /// Segment length `m` in cells.
    pub length: usize,
    /// Nonzero amplitudes sorted by site index.
    pub support: Vec<FbAmplitude>,
}

impl FbState {
    pub fn norm(&self) -> f64 {
        self.support.iter().map(|s| s.amp.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        for s in &self.support {
            v[s.site] = s.amp;
        }
        v
    }

    /// `||(H - E_FB) psi||`
    pub fn residual(&self, ham: &SparseOperator, e_fb: f64) -> f64 {
        let v = self.to_dense(ham.dim());
        let hv = ham.mul_vec(&v);
        hv.iter()
            .zip(&v)
            .map(|(h, x)| (h - x * e_fb).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// `<a|b>` for sparse states, merged on site index.
pub fn overlap(a: &FbState, b: &FbState) -> Complex64 {
    let (mut i, mut j) = (0, 0);
    let mut acc = Complex64::new(0.0, 0.0);
    while i < a.support.len() && j < b.support.len() {
        let (sa, sb) = (a.support[i].site, b.support[j].site);
        if sa == sb {
            acc += a.support[i].amp.conj() * b.support[j].amp;
            i += 1;
            j += 1;
        } else if sa < sb {
            i += 1;
        } else {
            j += 1;
        }
    }
    acc
}

fn segment_bounds(dis: &DisorderRealization, segment: usize) -> Result<(usize, usize, usize)> {
    let nb = dis.surviving_b.len();
    if nb < 2 {
        return Err(Error::DegenerateConfiguration(format!(
            "flat-band states need at least 2 surviving B atoms, found {nb}"
        )));
    }
    if segment >= nb {
        return Err(Error::Domain(format!("segment {segment} out of range 0..{nb}")));
    }
    let p = dis.surviving_b[segment];
    let q = dis.surviving_b[(segment + 1) % nb];
    let m = if q > p { q - p } else { q + dis.n_cells - p };
    Ok((p, q, m))
}

fn build_state(spec: &LatticeSpec, sites: &SiteTable, p: usize, q: usize, m: usize, phi: f64) -> Result<FbState> {
    let missing = || Error::Geometry("segment boundary has no B site".to_string());
    let mut raw: Vec<(usize, f64, f64)> = Vec::with_capacity(m + 2);
    let norm;
    match spec.kind {
        LatticeKind::Sawtooth => {
            norm = (2.0 * (m as f64 + 1.0)).sqrt();
            raw.push((sites.b(p).ok_or_else(missing)?, 0.0, -1.0));
            for j in 1..=m {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                raw.push((sites.a(p + j), j as f64, -SQRT_2 * sign));
            }
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            raw.push((sites.b(q).ok_or_else(missing)?, m as f64, sign));
        }
        LatticeKind::Stub => {
            let alpha = spec.alpha;
            norm = (m as f64 * alpha * alpha + 2.0).sqrt();
            raw.push((sites.b(p).ok_or_else(missing)?, 0.0, 1.0));
            for j in 0..m {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                let c = sites.c(p + j).ok_or_else(|| Error::Geometry("stub cell without C site".into()))?;
                raw.push((c, j as f64 + 0.5, -alpha * sign));
            }
            let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
            raw.push((sites.b(q).ok_or_else(missing)?, m as f64, sign));
        }
    }
    let mut support: Vec<FbAmplitude> = raw
        .into_iter()
        .map(|(site, x, a)| FbAmplitude {
            site,
            x,
            amp: Complex64::from_polar(a / norm, phi * x),
        })
        .collect();
    support.sort_by_key(|s| s.site);
    Ok(FbState {
        kind: spec.kind,
        alpha: spec.alpha,
        phi,
        n_cells: spec.n_cells,
        left: p,
        right: q,
        length: m,
        support,
    })
}

/// The flat-band state between surviving B atoms `segment` and `segment + 1`
/// (cyclically).
pub fn cls_disordered(spec: &LatticeSpec, dis: &DisorderRealization, segment: usize, phi: f64) -> Result<FbState> {
    let sites = SiteTable::new(spec, dis)?;
    let (p, q, m) = segment_bounds(dis, segment)?;
    build_state(spec, &sites, p, q, m, phi)
}

/// All flat-band states of a realization and their nearest-neighbour overlaps.
#[derive(Debug, Clone)]
pub struct FbBasis {
    pub states: Vec<FbState>,
    /// `<psi_j | psi_{j+1}>`, cyclic; every other overlap vanishes.
    pub next_overlaps: Vec<Complex64>,
}

impl FbBasis {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_overlap(&self) -> f64 {
        self.next_overlaps.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Full Gram matrix from pairwise overlaps (small bases only).
    pub fn gram_dense(&self) -> DMatrix<Complex64> {
        let n = self.states.len();
        DMatrix::from_fn(n, n, |i, j| overlap(&self.states[i], &self.states[j]))
    }
}

pub fn fb_basis(spec: &LatticeSpec, dis: &DisorderRealization, phi: f64) -> Result<FbBasis> {
    let sites = SiteTable::new(spec, dis)?;
    let nb = dis.surviving_b.len();
    let states = (0..nb)
        .map(|k| {
            let (p, q, m) = segment_bounds(dis, k)?;
            build_state(spec, &sites, p, q, m, phi)
        })
        .collect::<Result<Vec<_>>>()?;
    let next_overlaps = (0..nb).map(|j| overlap(&states[j], &states[(j + 1) % nb])).collect();
    Ok(FbBasis { states, next_overlaps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricMethod {
    FiniteDifference,
    AnalyticSC,
    AnalyticSL,
}

/// Default finite-difference step for a segment of length `m`.
pub fn fd_step(m: usize) -> f64 {
    1e-4 / m.max(1) as f64
}

/// `1 - |<a|b>|^2` evaluated as `||b - <a|b> a||^2` to avoid cancellation.
/// Both states must share the same support ordering.
fn distance_sq(a: &FbState, b: &FbState) -> f64 {
    let ab = overlap(a, b);
    let mut merged = std::collections::BTreeMap::new();
    for s in &b.support {
        *merged.entry(s.site).or_insert(Complex64::new(0.0, 0.0)) += s.amp;
    }
    for s in &a.support {
        *merged.entry(s.site).or_insert(Complex64::new(0.0, 0.0)) -= ab * s.amp;
    }
    merged.values().map(|z| z.norm_sqr()).sum()
}

/// Centered finite-difference metric `(d(phi-h, phi) + d(phi, phi+h)) / (2 h^2)`.
fn fd_metric_step<F>(family: &F, phi: f64, h: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<FbState>,
{
    let mid = family(phi)?;
    let up = family(phi + h)?;
    let down = family(phi - h)?;
    Ok((distance_sq(&mid, &up) + distance_sq(&mid, &down)) / (2.0 * h * h))
}

/// Quantum metric `g_{phi phi}` of a state family.
///
/// The finite-difference route halves the step once and fails with
/// [`Error::Precision`] when the two estimates differ by more than `1e-4`
/// relative. The analytic routes read the segment length off `family(phi)`.
pub fn quantum_metric<F>(family: F, phi: f64, method: MetricMethod) -> Result<f64>
where
    F: Fn(f64) -> Result<FbState>,
{
    match method {
        MetricMethod::FiniteDifference => {
            let h = fd_step(family(phi)?.length);
            let coarse = fd_metric_step(&family, phi, h)?;
            let fine = fd_metric_step(&family, phi, 0.5 * h)?;
            let scale = coarse.abs().max(fine.abs()).max(1e-300);
            if (coarse - fine).abs() / scale > 1e-4 {
                return Err(Error::Precision { coarse, fine });
            }
            Ok(fine)
        }
        MetricMethod::AnalyticSC => {
            let s = family(phi)?;
            if s.kind != LatticeKind::Sawtooth {
                return Err(Error::Domain("AnalyticSC applies to sawtooth states".into()));
            }
            Ok(metric_sc(s.length))
        }
        MetricMethod::AnalyticSL => {
            let s = family(phi)?;
            if s.kind != LatticeKind::Stub {
                return Err(Error::Domain("AnalyticSL applies to stub states".into()));
            }
            Ok(metric_sl(s.length as f64, s.alpha))
        }
    }
}

/// Metric of a sawtooth state spanning `m` cells: the position variance of
/// weights `1/(2(m+1))` on the two B atoms and `1/(m+1)` on each A atom.
/// Tends to `m^2/12` at large `m`.
pub fn metric_sc(m: usize) -> f64 {
    let d = m as f64;
    let n = d + 1.0;
    let mean = 0.5 * d * (n + 1.0) / n;
    let second = d * d / (2.0 * n) + d * (2.0 * d + 1.0) / 6.0;
    second - mean * mean
}

/// Metric of a stub state spanning `m` cells,
/// `(m^2/2 + alpha^2 m (m^2 - 1)/12) / (m alpha^2 + 2)`.
///
/// Accepts non-integer `m` for averages over continuous spacing densities.
pub fn metric_sl(m: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    (0.5 * m * m + a2 * m * (m * m - 1.0) / 12.0) / (m * a2 + 2.0)
}

/// Position variance `L^2` of a state, from its unwrapped coordinates.
pub fn spread(state: &FbState) -> Result<f64> {
    let extent = state.support.iter().map(|s| s.x).fold(0.0, f64::max)
        - state.support.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
    if extent > 0.5 * state.n_cells as f64 {
        return Err(Error::Geometry(format!(
            "state spans {extent} of a ring of {} cells; its spread is not defined",
            state.n_cells
        )));
    }
    let w: f64 = state.support.iter().map(|s| s.amp.norm_sqr()).sum();
    let mean = state.support.iter().map(|s| s.amp.norm_sqr() * s.x).sum::<f64>() / w;
    Ok(state
        .support
        .iter()
        .map(|s| s.amp.norm_sqr() * (s.x - mean).powi(2))
        .sum::<f64>()
        / w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbSigma {
    /// `2 y <g>` over the realization's states.
    pub metric_route: f64,
    /// `2 y <L^2 / a^2>`.
    pub spread_route: f64,
    /// Mean metric `<g>`.
    pub mean_metric: f64,
    pub n_states: usize,
    pub max_overlap: f64,
}

/// Overlap above which the non-orthogonal basis is no longer a good
/// approximation of an orthonormal one.
pub const OVERLAP_WARNING: f64 = 0.25;

/// Flat-band conductivity from the realization's compact states, neglecting
/// overlaps between neighbouring states.
pub fn sigma_fb_from_states(spec: &LatticeSpec, dis: &DisorderRealization) -> Result<FbSigma> {
    let basis = fb_basis(spec, dis, spec.phi)?;
    let n = basis.len() as f64;
    let y = dis.y();
    let mut g_sum = 0.0;
    let mut l_sum = 0.0;
    for s in &basis.states {
        g_sum += match s.kind {
            LatticeKind::Sawtooth => metric_sc(s.length),
            LatticeKind::Stub => metric_sl(s.length as f64, s.alpha),
        };
        l_sum += spread(s)?;
    }
    let max_overlap = basis.max_overlap();
    if max_overlap > OVERLAP_WARNING {
        log::warn!(
            "largest flat-band overlap {max_overlap:.3} exceeds {OVERLAP_WARNING}; \
             the compact-state estimate is unreliable here"
        );
    }
    Ok(FbSigma {
        metric_route: 2.0 * y * g_sum / n,
        spread_route: 2.0 * y * l_sum / n,
        mean_metric: g_sum / n,
        n_states: basis.len(),
        max_overlap,
    })
}

/// Bloch flat-band vector of the clean lattice at momentum `k`, in the
/// orbital basis `(A, B)` or `(A, C, B)` with intracell positions included
/// in the Bloch phases.
pub fn bloch_fb_vector(kind: LatticeKind, k: f64, alpha: f64) -> Vec<Complex64> {
    let v = match kind {
        LatticeKind::Sawtooth => {
            // (H - 2) u = 0 with H_AA = -2 cos k, H_AB = -sqrt(2)(1 + e^{-ik}).
            let h_ab = -SQRT_2 * (Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, -k));
            vec![h_ab, Complex64::new(2.0 + 2.0 * k.cos(), 0.0)]
        }
        LatticeKind::Stub => vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(-2.0 * (0.5 * k).cos(), 0.0),
            Complex64::new(alpha, 0.0),
        ],
    };
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / n).collect()
}

/// Finite-difference metric of the clean Bloch flat-band state in `k`.
pub fn metric_clean_fd(kind: LatticeKind, k: f64, alpha: f64) -> f64 {
    let h = 1e-4;
    let d = |a: &[Complex64], b: &[Complex64]| {
        let ab: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        a.iter().zip(b).map(|(x, y)| (y - ab * x).norm_sqr()).sum::<f64>()
    };
    let mid = bloch_fb_vector(kind, k, alpha);
    let up = bloch_fb_vector(kind, k + h, alpha);
    let down = bloch_fb_vector(kind, k - h, alpha);
    (d(&mid, &up) + d(&mid, &down)) / (2.0 * h * h)
}
