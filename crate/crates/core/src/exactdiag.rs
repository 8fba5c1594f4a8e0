//! Dense reference calculations for small systems.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sparse::SparseOperator;

/// Default dimension cap for dense diagonalization.
pub const DENSE_CAP: usize = 6000;

/// Full eigendecomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Column `l` is the eigenvector of `eigenvalues[l]`.
    pub eigenvectors: DMatrix<Complex64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `E_l - e_fb` for every level.
    pub fn offsets(&self, e_fb: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e - e_fb).collect()
    }

    /// Number of eigenvalues within `tol` of `energy`.
    pub fn count_near(&self, energy: f64, tol: f64) -> usize {
        self.eigenvalues
            .iter()
            .filter(|e| (*e - energy).abs() <= tol)
            .count()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    /// Flat-band degeneracy with the clustering tolerance `1e-8 ||H||`.
    pub fn flat_band_count(&self, e_fb: f64) -> usize {
        let tol = 1e-8 * self.spectral_radius().max(1.0);
        self.count_near(e_fb, tol)
    }
}

pub fn eigh_dense(ham: &SparseOperator) -> Result<Spectrum> {
    eigh_dense_capped(ham, DENSE_CAP)
}

pub fn eigh_dense_capped(ham: &SparseOperator, cap: usize) -> Result<Spectrum> {
    let dim = ham.dim();
    if dim > cap {
        return Err(Error::TooLarge { dim, cap });
    }
    if dim == 0 {
        return Ok(Spectrum {
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = ham.to_dense().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// `eta / (x^2 + eta^2)`
#[inline]
pub fn lorentzian(x: f64, eta: f64) -> f64 {
    eta / (x * x + eta * eta)
}

/// Squared velocity matrix elements `|<n|v|m>|^2` in the eigenbasis.
///
/// Building these is the O(dim^3) part; evaluating the Kubo sum at an
/// energy is O(dim^2) afterwards.
#[derive(Debug, Clone)]
pub struct KuboOracle {
    energies: Vec<f64>,
    weights: DMatrix<f64>,
    n_cells: usize,
}

impl KuboOracle {
    pub fn new(spectrum: &Spectrum, velocity: &SparseOperator, n_cells: usize) -> Self {
        let u = &spectrum.eigenvectors;
        let vu = velocity.to_dense() * u;
        let elements = u.adjoint() * vu;
        Self {
            energies: spectrum.eigenvalues.clone(),
            weights: elements.map(|z| z.norm_sqr()),
            n_cells,
        }
    }

    /// `sigma / sigma0 = (1/N_c) sum_{n,m} L(E-E_n) L(E-E_m) |v_nm|^2`
    pub fn sigma(&self, energy: f64, eta: f64) -> f64 {
        let l: DVector<f64> = DVector::from_iterator(
            self.energies.len(),
            self.energies.iter().map(|e| lorentzian(energy - e, eta)),
        );
        let wl = &self.weights * &l;
        l.dot(&wl) / self.n_cells as f64
    }

    pub fn sigma_grid(&self, energies: &[f64], eta: f64) -> Vec<f64> {
        energies.iter().map(|&e| self.sigma(e, eta)).collect()
    }
}

pub fn kubo_exact(
    spectrum: &Spectrum,
    velocity: &SparseOperator,
    energy: f64,
    eta: f64,
    n_cells: usize,
) -> f64 {
    KuboOracle::new(spectrum, velocity, n_cells).sigma(energy, eta)
}

/// Dense `Im G(E + i eta) = -sum_l L(E - E_l) u_l u_l^dagger`.
pub fn resolvent_exact(spectrum: &Spectrum, energy: f64, eta: f64) -> DMatrix<Complex64> {
    let u = &spectrum.eigenvectors;
    let mut scaled = u.clone();
    for (l, &e) in spectrum.eigenvalues.iter().enumerate() {
        let w = -lorentzian(energy - e, eta);
        scaled.column_mut(l).scale_mut(w);
    }
    scaled * u.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{
        build_hamiltonian, build_velocity, make_disorder, DisorderMode, DisorderRealization,
        Lattice, LatticeSpec, VelocityMethod,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn ring_spectrum() {
        let spec = LatticeSpec::sawtooth(8);
        let dis = DisorderRealization::from_cells(8, vec![]).unwrap();
        let (h, _) = build_hamiltonian(&spec, &dis).unwrap();
        let s = eigh_dense(&h).unwrap();
        let mut want: Vec<f64> = (0..8)
            .map(|n| -2.0 * (2.0 * PI * n as f64 / 8.0).cos())
            .collect();
        want.sort_by(f64::total_cmp);
        for (a, b) in s.eigenvalues.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn eigenpairs_and_orthonormality() {
        let spec = LatticeSpec::stub(20, 0.8).with_phi(0.2);
        let dis = make_disorder(&spec, 0.4, DisorderMode::Random, 5).unwrap();
        let (h, _) = build_hamiltonian(&spec, &dis).unwrap();
        let s = eigh_dense(&h).unwrap();
        let hd = h.to_dense();
        let norm = s.spectral_radius();
        for l in 0..s.dim() {
            let u = s.eigenvectors.column(l);
            let r = &hd * u - u * Complex64::from(s.eigenvalues[l]);
            assert!(r.norm() <= 1e-10 * norm);
        }
        let gram = s.eigenvectors.adjoint() * &s.eigenvectors;
        let id = DMatrix::<Complex64>::identity(s.dim(), s.dim());
        assert!((gram - id).camax() < 1e-10);
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn clean_flat_band_counts() {
        let saw = eigh_dense(
            &Lattice::clean(LatticeSpec::sawtooth(50))
                .unwrap()
                .hamiltonian,
        )
        .unwrap();
        assert_eq!(saw.count_near(2.0, 1e-10), 50);
        let stub = eigh_dense(
            &Lattice::clean(LatticeSpec::stub(50, 0.7))
                .unwrap()
                .hamiltonian,
        )
        .unwrap();
        assert_eq!(stub.count_near(0.0, 1e-10), 50);
        let edge = stub
            .eigenvalues
            .iter()
            .filter(|e| e.abs() > 1e-6)
            .fold(f64::INFINITY, |m, e| m.min(e.abs()));
        assert!((edge - 0.7).abs() < 1e-8);
    }

    #[test]
    fn cap_is_enforced() {
        let h = SparseOperator::zeros(11);
        assert!(matches!(
            eigh_dense_capped(&h, 10),
            Err(Error::TooLarge { dim: 11, cap: 10 })
        ));
    }

    #[test]
    fn single_site_resolvent() {
        let h = SparseOperator::zeros(1);
        let s = eigh_dense(&h).unwrap();
        let g = resolvent_exact(&s, 0.3, 0.1);
        assert!((g[(0, 0)].re + 0.1 / (0.09 + 0.01)).abs() < 1e-14);
    }

    #[test]
    fn resolvent_matches_dense_inverse() {
        let lat = Lattice::clean(LatticeSpec::stub(10, 1.3).with_phi(0.4)).unwrap();
        let s = eigh_dense(&lat.hamiltonian).unwrap();
        let (e, eta) = (0.37, 0.05);
        let im_g = resolvent_exact(&s, e, eta);
        let dim = s.dim();
        let z = DMatrix::<Complex64>::identity(dim, dim) * Complex64::new(e, eta)
            - lat.hamiltonian.to_dense();
        let g = z.try_inverse().unwrap();
        let direct = (&g - g.adjoint()) * Complex64::new(0.0, -0.5);
        assert!((direct - im_g).camax() < 1e-10);
    }

    #[test]
    fn dos_sum_rule() {
        let lat = Lattice::clean(LatticeSpec::sawtooth(12)).unwrap();
        let s = eigh_dense(&lat.hamiltonian).unwrap();
        let eta = 0.05;
        let (lo, hi, n) = (-12.0, 12.0, 24001);
        let de = (hi - lo) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let e = lo + de * i as f64;
            let tr: f64 = s.eigenvalues.iter().map(|el| lorentzian(e - el, eta)).sum();
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * tr / PI * de;
        }
        assert!((total / s.dim() as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn zero_velocity_gives_zero() {
        let lat = Lattice::clean(LatticeSpec::sawtooth(10)).unwrap();
        let s = eigh_dense(&lat.hamiltonian).unwrap();
        let v = SparseOperator::zeros(s.dim());
        assert_eq!(kubo_exact(&s, &v, 2.0, 1e-3, 10), 0.0);
    }

    #[test]
    fn pure_chain_drude() {
        let n = 400;
        let spec = LatticeSpec::sawtooth(n);
        let dis = DisorderRealization::from_cells(n, vec![]).unwrap();
        let lat = Lattice::build(spec, dis).unwrap();
        let s = eigh_dense(&lat.hamiltonian).unwrap();
        let sigma = kubo_exact(&s, &lat.velocity, 0.0, 0.05, n);
        assert!((sigma / 20.0 - 1.0).abs() < 0.02, "{sigma}");
    }

    #[test]
    fn clean_sawtooth_flat_band_value() {
        let n = 400;
        let lat = Lattice::clean(LatticeSpec::sawtooth(n)).unwrap();
        let s = eigh_dense(&lat.hamiltonian).unwrap();
        let oracle = KuboOracle::new(&s, &lat.velocity, n);
        let want = 2.0 / (3.0 * 3f64.sqrt());
        let a = oracle.sigma(2.0, 1e-3);
        assert!((a / want - 1.0).abs() < 0.01, "{a}");
        let b = oracle.sigma(2.0, 5e-4);
        assert!((a / b - 1.0).abs() < 0.01);
    }

    #[test]
    fn flat_band_rotation_invariance() {
        let n = 30;
        let spec = LatticeSpec::sawtooth(n);
        let dis = make_disorder(&spec, 0.3, DisorderMode::Random, 2).unwrap();
        let (h, sites) = build_hamiltonian(&spec, &dis).unwrap();
        let v = build_velocity(&spec, &h, &sites, VelocityMethod::Commutator);
        let s = eigh_dense(&h).unwrap();
        let base = kubo_exact(&s, &v, 2.0, 1e-2, n);

        // Rotate the flat-band block by a random unitary (QR of a random matrix).
        let fb: Vec<usize> = (0..s.dim())
            .filter(|&l| (s.eigenvalues[l] - 2.0).abs() < 1e-8)
            .collect();
        assert_eq!(fb.len(), n - 9);
        let k = fb.len();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(k, k, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let q = m.qr().q();
        let mut rotated = s.clone();
        for (c, &l) in fb.iter().enumerate() {
            let mut col = DVector::zeros(s.dim());
            for (r, &l2) in fb.iter().enumerate() {
                col += s.eigenvectors.column(l2) * q[(r, c)];
            }
            rotated.eigenvectors.set_column(l, &col);
        }
        let turned = kubo_exact(&rotated, &v, 2.0, 1e-2, n);
        assert!((turned / base - 1.0).abs() < 1e-10);
    }
}
