//! Sawtooth-chain and stub-lattice rings with B-site vacancies.
//!
//! Geometry (positions in units of `a`):
//!
//! ```text
//! sawtooth   A_i at i,  B_i at i       bonds A_i-A_{i+1} (t), B_i-A_i and B_i-A_{i+1} (sqrt(2) t)
//! stub       A_i at i,  C_i at i+1/2,  B_i at i
//!                                      bonds A_i-C_i and C_i-A_{i+1} (t), B_i-A_i (alpha t)
//! ```
//!
//! The ring is threaded by a flux phase `phi`; every bond picks up the
//! Peierls factor `exp(-i phi d_ij / a)` where `d_ij = x_j - x_i` is the
//! minimum-image displacement. With this sign `-i[x, H]` and `-a dH/dphi`
//! are the same operator.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Sawtooth,
    Stub,
}

impl LatticeKind {
    pub fn name(self) -> &'static str {
        match self {
            LatticeKind::Sawtooth => "sawtooth",
            LatticeKind::Stub => "stub",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    pub n_cells: usize,
    /// Hopping along the chain; energies are measured in units of `t`.
    pub t: f64,
    /// `t'/t`. Pinned to `sqrt(2)` for the sawtooth chain.
    pub alpha: f64,
    /// Unit-cell length.
    pub a: f64,
    /// Flux phase `2 pi Phi / (N_c phi_0)`.
    pub phi: f64,
}

impl LatticeSpec {
    pub fn sawtooth(n_cells: usize) -> Self {
        Self {
            kind: LatticeKind::Sawtooth,
            n_cells,
            t: 1.0,
            alpha: SQRT_2,
            a: 1.0,
            phi: 0.0,
        }
    }

    pub fn stub(n_cells: usize, alpha: f64) -> Self {
        Self {
            kind: LatticeKind::Stub,
            n_cells,
            t: 1.0,
            alpha,
            a: 1.0,
            phi: 0.0,
        }
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    /// Sets `phi` from a flux in units of the flux quantum.
    pub fn with_flux_quanta(self, flux: f64) -> Self {
        let phi = 2.0 * PI * flux / self.n_cells as f64;
        self.with_phi(phi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells < 3 {
            return Err(Error::InvalidLattice(format!(
                "n_cells must be at least 3, got {}",
                self.n_cells
            )));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidLattice(format!(
                "t must be positive, got {}",
                self.t
            )));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidLattice(format!(
                "a must be positive, got {}",
                self.a
            )));
        }
        if !self.alpha.is_finite() || !self.phi.is_finite() {
            return Err(Error::InvalidLattice("alpha and phi must be finite".into()));
        }
        if self.kind == LatticeKind::Sawtooth && (self.alpha - SQRT_2).abs() > 1e-12 {
            return Err(Error::InvalidLattice(format!(
                "the sawtooth flat band requires alpha = sqrt(2), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Ring length `N_c a`.
    pub fn length(&self) -> f64 {
        self.n_cells as f64 * self.a
    }

    /// Energy of the flat band: `2t` (sawtooth) or `0` (stub).
    pub fn flat_band_energy(&self) -> f64 {
        match self.kind {
            LatticeKind::Sawtooth => 2.0 * self.t,
            LatticeKind::Stub => 0.0,
        }
    }

    /// Interval holding the spectrum of every diluted realization.
    ///
    /// A diluted lattice is a site subset of the clean one, so by Cauchy
    /// interlacing its eigenvalues lie between the clean band extrema, for
    /// any flux.
    pub fn spectral_interval(&self) -> (f64, f64) {
        let t = self.t.abs();
        match self.kind {
            LatticeKind::Sawtooth => (-4.0 * t, 2.0 * t),
            LatticeKind::Stub => {
                let r = t * (4.0 + self.alpha * self.alpha).sqrt();
                (-r, r)
            }
        }
    }

    /// Hopping on the B bonds, `t' = alpha t`.
    pub fn b_hopping(&self) -> f64 {
        self.alpha * self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisorderMode {
    Random,
    Superlattice,
}

/// Which B sites survive vacancy dilution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub x: f64,
    pub mode: DisorderMode,
    pub seed: u64,
    pub n_cells: usize,
    /// Sorted unit-cell indices of the remaining B atoms.
    pub surviving_b: Vec<usize>,
}

impl DisorderRealization {
    pub fn clean(n_cells: usize) -> Self {
        Self {
            x: 0.0,
            mode: DisorderMode::Random,
            seed: 0,
            n_cells,
            surviving_b: (0..n_cells).collect(),
        }
    }

    /// Builds a realization from an explicit list of B cells.
    pub fn from_cells(n_cells: usize, mut cells: Vec<usize>) -> Result<Self> {
        cells.sort_unstable();
        cells.dedup();
        if cells.last().is_some_and(|&c| c >= n_cells) {
            return Err(Error::Domain(format!("B cell index outside 0..{n_cells}")));
        }
        let x = 1.0 - cells.len() as f64 / n_cells as f64;
        Ok(Self {
            x,
            mode: DisorderMode::Random,
            seed: 0,
            n_cells,
            surviving_b: cells,
        })
    }

    /// Survivor density `y = |surviving_b| / N_c`.
    pub fn y(&self) -> f64 {
        self.surviving_b.len() as f64 / self.n_cells as f64
    }

    /// Distances (in cells) between consecutive survivors, wrap-around last.
    pub fn spacings(&self) -> Vec<usize> {
        let n = self.surviving_b.len();
        (0..n)
            .map(|k| {
                let p = self.surviving_b[k];
                let q = self.surviving_b[(k + 1) % n];
                if k + 1 < n {
                    q - p
                } else {
                    q + self.n_cells - p
                }
            })
            .collect()
    }
}

/// Number of vacancies for density `x`, `round(x N_c)`.
pub fn vacancy_count(n_cells: usize, x: f64) -> usize {
    ((x * n_cells as f64).round() as usize).min(n_cells)
}

pub fn make_disorder(
    spec: &LatticeSpec,
    x: f64,
    mode: DisorderMode,
    seed: u64,
) -> Result<DisorderRealization> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "vacancy density must lie in [0, 1], got {x}"
        )));
    }
    let n = spec.n_cells;
    let survivors = n - vacancy_count(n, x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = match mode {
        DisorderMode::Random => {
            let mut removed = vec![false; n];
            for i in sample(&mut rng, n, n - survivors) {
                removed[i] = true;
            }
            (0..n).filter(|&i| !removed[i]).collect()
        }
        DisorderMode::Superlattice => {
            if survivors == 0 {
                Vec::new()
            } else {
                let offset = rng.random_range(0..n);
                (0..survivors)
                    .map(|k| (k * n / survivors + offset) % n)
                    .collect()
            }
        }
    };
    cells.sort_unstable();
    Ok(DisorderRealization {
        x,
        mode,
        seed,
        n_cells: n,
        surviving_b: cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sublattice {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub cell: usize,
    pub sublattice: Sublattice,
    /// Position along the ring in units of `a`, in `[0, N_c)`.
    pub x: f64,
}

/// Dense site indexing. Sites are stored cell by cell as `A_i, C_i, B_i`,
/// skipping sublattices that are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTable {
    pub kind: LatticeKind,
    pub n_cells: usize,
    pub a: f64,
    sites: Vec<Site>,
    a_index: Vec<usize>,
    c_index: Vec<Option<usize>>,
    b_index: Vec<Option<usize>>,
}

impl SiteTable {
    pub fn new(spec: &LatticeSpec, dis: &DisorderRealization) -> Result<Self> {
        spec.validate()?;
        if dis.n_cells != spec.n_cells {
            return Err(Error::SizeMismatch {
                lattice: spec.n_cells,
                realization: dis.n_cells,
            });
        }
        let n = spec.n_cells;
        let mut has_b = vec![false; n];
        for &c in &dis.surviving_b {
            if c >= n {
                return Err(Error::SizeMismatch {
                    lattice: n,
                    realization: c + 1,
                });
            }
            has_b[c] = true;
        }
        let mut sites = Vec::with_capacity(3 * n);
        let mut a_index = Vec::with_capacity(n);
        let mut c_index = vec![None; n];
        let mut b_index = vec![None; n];
        for i in 0..n {
            a_index.push(sites.len());
            sites.push(Site {
                cell: i,
                sublattice: Sublattice::A,
                x: i as f64,
            });
            if spec.kind == LatticeKind::Stub {
                c_index[i] = Some(sites.len());
                sites.push(Site {
                    cell: i,
                    sublattice: Sublattice::C,
                    x: i as f64 + 0.5,
                });
            }
            if has_b[i] {
                b_index[i] = Some(sites.len());
                sites.push(Site {
                    cell: i,
                    sublattice: Sublattice::B,
                    x: i as f64,
                });
            }
        }
        Ok(Self {
            kind: spec.kind,
            n_cells: n,
            a: spec.a,
            sites,
            a_index,
            c_index,
            b_index,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, index: usize) -> Site {
        self.sites[index]
    }

    /// Cell indices wrap modulo `N_c`.
    pub fn a(&self, cell: usize) -> usize {
        self.a_index[cell % self.n_cells]
    }

    pub fn b(&self, cell: usize) -> Option<usize> {
        self.b_index[cell % self.n_cells]
    }

    pub fn c(&self, cell: usize) -> Option<usize> {
        self.c_index[cell % self.n_cells]
    }

    /// `x_j - x_i` folded onto `[-N_c/2, N_c/2)`, in units of `a`.
    pub fn displacement(&self, i: usize, j: usize) -> f64 {
        let n = self.n_cells as f64;
        let d = self.sites[j].x - self.sites[i].x;
        d - n * ((d + 0.5 * n) / n).floor()
    }
}

/// A directed hopping term `-hopping * exp(-i phi d / a)` from `to` into `from`'s row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bond {
    pub from: usize,
    pub to: usize,
    pub hopping: f64,
    /// Geometric displacement `x_to - x_from` in units of `a`.
    pub displacement: f64,
}

/// Lists each bond once, with its displacement read off the lattice
/// geometry rather than from site coordinates.
pub fn bonds(spec: &LatticeSpec, sites: &SiteTable) -> Vec<Bond> {
    let n = spec.n_cells;
    let t = spec.t;
    let tb = spec.b_hopping();
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        match spec.kind {
            LatticeKind::Sawtooth => {
                out.push(Bond {
                    from: sites.a(i),
                    to: sites.a(i + 1),
                    hopping: t,
                    displacement: 1.0,
                });
                if let Some(b) = sites.b(i) {
                    out.push(Bond {
                        from: b,
                        to: sites.a(i),
                        hopping: tb,
                        displacement: 0.0,
                    });
                    out.push(Bond {
                        from: b,
                        to: sites.a(i + 1),
                        hopping: tb,
                        displacement: 1.0,
                    });
                }
            }
            LatticeKind::Stub => {
                let c = sites.c(i).expect("stub lattice has a C site in every cell");
                out.push(Bond {
                    from: sites.a(i),
                    to: c,
                    hopping: t,
                    displacement: 0.5,
                });
                out.push(Bond {
                    from: c,
                    to: sites.a(i + 1),
                    hopping: t,
                    displacement: 0.5,
                });
                if let Some(b) = sites.b(i) {
                    out.push(Bond {
                        from: b,
                        to: sites.a(i),
                        hopping: tb,
                        displacement: 0.0,
                    });
                }
            }
        }
    }
    out
}

fn peierls(phi: f64, displacement: f64) -> Complex64 {
    Complex64::from_polar(1.0, -phi * displacement)
}

pub fn build_hamiltonian(
    spec: &LatticeSpec,
    dis: &DisorderRealization,
) -> Result<(SparseOperator, SiteTable)> {
    let sites = SiteTable::new(spec, dis)?;
    let mut triplets = Vec::new();
    for bond in bonds(spec, &sites) {
        let h = -bond.hopping * peierls(spec.phi, bond.displacement);
        triplets.push((bond.from, bond.to, h));
        triplets.push((bond.to, bond.from, h.conj()));
    }
    let ham = SparseOperator::from_triplets(sites.len(), triplets);
    Ok((ham, sites))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VelocityMethod {
    /// `v = -(i/hbar)[x, H]` using minimum-image bond displacements.
    Commutator,
    /// `v = -(a/hbar) dH/dphi` differentiated bond by bond.
    FluxDerivative,
}

/// Velocity operator in units of `a t / hbar`.
pub fn build_velocity(
    spec: &LatticeSpec,
    ham: &SparseOperator,
    sites: &SiteTable,
    method: VelocityMethod,
) -> SparseOperator {
    match method {
        VelocityMethod::Commutator => ham.map_entries(|i, j, h| {
            let d = sites.displacement(i, j) * spec.a;
            Complex64::new(0.0, d) * h
        }),
        VelocityMethod::FluxDerivative => {
            let mut triplets = Vec::new();
            for bond in bonds(spec, sites) {
                // d/dphi [-t exp(-i phi d)] = i t d exp(-i phi d)
                let dh = Complex64::new(0.0, bond.hopping * bond.displacement)
                    * peierls(spec.phi, bond.displacement);
                let v = -spec.a * dh;
                triplets.push((bond.from, bond.to, v));
                triplets.push((bond.to, bond.from, v.conj()));
            }
            SparseOperator::from_triplets(sites.len(), triplets)
        }
    }
}

/// A lattice instance with its operators, built once and shared read-only.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub spec: LatticeSpec,
    pub disorder: DisorderRealization,
    pub sites: SiteTable,
    pub hamiltonian: SparseOperator,
    pub velocity: SparseOperator,
}

impl Lattice {
    pub fn build(spec: LatticeSpec, disorder: DisorderRealization) -> Result<Self> {
        let (hamiltonian, sites) = build_hamiltonian(&spec, &disorder)?;
        let velocity = build_velocity(&spec, &hamiltonian, &sites, VelocityMethod::Commutator);
        Ok(Self {
            spec,
            disorder,
            sites,
            hamiltonian,
            velocity,
        })
    }

    pub fn clean(spec: LatticeSpec) -> Result<Self> {
        let dis = DisorderRealization::clean(spec.n_cells);
        Self::build(spec, dis)
    }
}
