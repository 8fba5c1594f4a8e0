//! Disorder ensembles: many realizations per grid point, reduced to a mean and
//! standard error.
//!
//! Realization `i` at grid point `g` draws its seeds from a ChaCha8 stream
//! keyed on `(master_seed, g)` at word offset `4 i`, so every realization is
//! reproducible on its own and the output does not depend on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exactdiag::{eigh_dense, lorentzian, KuboOracle};
use crate::flatband::sigma_fb_from_states;
use crate::lattice::{make_disorder, DisorderMode, DisorderRealization, Lattice, LatticeKind, LatticeSpec};
use crate::spectral::{fb_weight, peak_grid, Cpgf, CpgfParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cpgf,
    ExactDiag,
    FbStates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Kubo conductivity, at the flat-band energy unless energies are given.
    SigmaFb,
    Dos,
    /// Mean quantum metric `<g>` of the realization's compact states.
    FbMetric,
    /// Spectral weight of the flat band per unit cell.
    FbWeight,
}

impl Observable {
    pub fn name(self) -> &'static str {
        match self {
            Observable::SigmaFb => "sigma_fb",
            Observable::Dos => "dos",
            Observable::FbMetric => "fb_metric",
            Observable::FbWeight => "fb_weight",
        }
    }

    pub fn supports(self, method: Method) -> bool {
        !matches!(
            (self, method),
            (Observable::Dos, Method::FbStates) | (Observable::FbMetric, Method::Cpgf | Method::ExactDiag)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    /// Base lattice; `alpha` is replaced by each `alpha_grid` entry for stubs.
    pub lattice: LatticeSpec,
    pub mode: DisorderMode,
    pub x_grid: Vec<f64>,
    /// Empty means the base lattice's `alpha`.
    pub alpha_grid: Vec<f64>,
    pub n_configs: usize,
    pub master_seed: u64,
    pub method: Method,
    pub cpgf: CpgfParams,
    /// Energies for `Dos` and `SigmaFb`; empty means the flat-band energy.
    pub energies: Vec<f64>,
    /// Half-width of the `FbWeight` integration window in units of `eta`.
    pub fb_window: f64,
}

impl EnsembleSpec {
    pub fn new(lattice: LatticeSpec, x_grid: Vec<f64>, n_configs: usize, method: Method) -> Self {
        Self {
            lattice,
            mode: DisorderMode::Random,
            x_grid,
            alpha_grid: Vec::new(),
            n_configs,
            master_seed: 0,
            method,
            cpgf: CpgfParams::default(),
            energies: Vec::new(),
            fb_window: 10.0,
        }
    }

    pub fn validate(&self, observable: Observable) -> Result<()> {
        self.lattice.validate()?;
        if self.x_grid.is_empty() {
            return Err(Error::Domain("x grid is empty".into()));
        }
        if let Some(x) = self.x_grid.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Domain(format!("vacancy density {x} outside [0, 1]")));
        }
        if self.n_configs == 0 {
            return Err(Error::Domain("n_configs must be at least 1".into()));
        }
        if self.lattice.kind == LatticeKind::Sawtooth && !self.alpha_grid.is_empty() {
            return Err(Error::Domain("alpha grid applies to the stub lattice only".into()));
        }
        for &alpha in &self.alpha_grid {
            self.lattice_at(alpha).validate()?;
        }
        if !observable.supports(self.method) {
            return Err(Error::Domain(format!(
                "observable {} is not available with method {:?}",
                observable.name(),
                self.method
            )));
        }
        if observable == Observable::Dos && self.energies.is_empty() {
            return Err(Error::Domain("DOS needs an energy grid".into()));
        }
        if !(self.fb_window > 0.0) {
            return Err(Error::Domain("fb_window must be positive".into()));
        }
        self.cpgf.validate()
    }

    fn lattice_at(&self, alpha: f64) -> LatticeSpec {
        let mut l = self.lattice.clone();
        l.alpha = alpha;
        l
    }

    /// Grid points in row-major `(x, alpha)` order.
    pub fn grid(&self) -> Vec<GridPoint> {
        let alphas = if self.alpha_grid.is_empty() {
            vec![self.lattice.alpha]
        } else {
            self.alpha_grid.clone()
        };
        let mut out = Vec::with_capacity(self.x_grid.len() * alphas.len());
        for &x in &self.x_grid {
            for &alpha in &alphas {
                out.push(GridPoint {
                    index: out.len(),
                    x,
                    alpha,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub x: f64,
    pub alpha: f64,
}

/// Seeds of one realization: vacancy placement and random probe vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizationSeeds {
    pub disorder: u64,
    pub probes: u64,
}

pub fn realization_seeds(master: u64, grid_index: usize, realization: usize) -> RealizationSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(grid_index as u64);
    rng.set_word_pos(4 * realization as u128);
    RealizationSeeds {
        disorder: rng.next_u64(),
        probes: rng.next_u64(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub mean: f64,
    /// Standard error of the mean; zero for a single sample.
    pub stderr: f64,
    pub n: usize,
    pub min: f64,
    pub max: f64,
}

impl Statistic {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let stderr = if samples.len() > 1 {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            stderr,
            n: samples.len(),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub grid_index: usize,
    pub x: f64,
    /// Surviving fraction of B atoms, `1 - round(x N_c)/N_c`.
    pub y: f64,
    pub alpha: f64,
    pub energy: f64,
    /// `None` when every realization failed.
    pub stat: Option<Statistic>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridProvenance {
    pub point: GridPoint,
    pub seeds: Vec<RealizationSeeds>,
    /// Values of successful realizations, by realization index.
    pub samples: Vec<(usize, Vec<f64>)>,
    /// Messages of failed realizations, by realization index.
    pub errors: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTable {
    pub observable: Observable,
    pub rows: Vec<EnsembleRow>,
    pub provenance: Vec<GridProvenance>,
}

/// Everything an evaluator sees for one realization.
pub struct RealizationContext<'a> {
    pub spec: &'a EnsembleSpec,
    pub lattice: LatticeSpec,
    pub point: GridPoint,
    pub seeds: RealizationSeeds,
    pub disorder: DisorderRealization,
}

/// Energies reported for an observable.
pub fn observable_energies(spec: &EnsembleSpec, observable: Observable) -> Vec<f64> {
    match observable {
        Observable::Dos | Observable::SigmaFb if !spec.energies.is_empty() => spec.energies.clone(),
        _ => vec![spec.lattice.flat_band_energy()],
    }
}

pub fn run_ensemble(spec: &EnsembleSpec, observable: Observable) -> Result<EnsembleTable> {
    spec.validate(observable)?;
    let energies = observable_energies(spec, observable);
    let mut table = run_ensemble_with(spec, &energies, |ctx| evaluate(ctx, observable, &energies))?;
    table.observable = observable;
    Ok(table)
}

/// Runs `evaluate` on every realization; it must return one value per
/// energy. Failed realizations are excluded from the statistics and counted.
pub fn run_ensemble_with<F>(spec: &EnsembleSpec, energies: &[f64], evaluate: F) -> Result<EnsembleTable>
where
    F: Fn(&RealizationContext) -> Result<Vec<f64>> + Sync,
{
    if spec.n_configs == 0 || spec.x_grid.is_empty() {
        return Err(Error::Domain("empty ensemble".into()));
    }
    let mut rows = Vec::new();
    let mut provenance = Vec::new();
    for point in spec.grid() {
        let lattice = spec.lattice_at(point.alpha);
        let seeds: Vec<RealizationSeeds> = (0..spec.n_configs)
            .map(|i| realization_seeds(spec.master_seed, point.index, i))
            .collect();
        let results: Vec<Result<Vec<f64>>> = seeds
            .par_iter()
            .map(|&s| {
                let disorder = make_disorder(&lattice, point.x, spec.mode, s.disorder)?;
                let ctx = RealizationContext {
                    spec,
                    lattice: lattice.clone(),
                    point,
                    seeds: s,
                    disorder,
                };
                let values = evaluate(&ctx)?;
                if values.len() != energies.len() {
                    return Err(Error::Domain(format!(
                        "evaluator returned {} values for {} energies",
                        values.len(),
                        energies.len()
                    )));
                }
                Ok(values)
            })
            .collect();
        let mut ok = Vec::new();
        let mut errors = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => ok.push((i, v)),
                Err(e) => {
                    log::warn!("grid point {} realization {i} failed: {e}", point.index);
                    errors.push((i, e.to_string()));
                }
            }
        }
        let n = lattice.n_cells;
        let y = 1.0 - crate::lattice::vacancy_count(n, point.x) as f64 / n as f64;
        for (k, &energy) in energies.iter().enumerate() {
            let column: Vec<f64> = ok.iter().map(|(_, v)| v[k]).collect();
            rows.push(EnsembleRow {
                grid_index: point.index,
                x: point.x,
                y,
                alpha: point.alpha,
                energy,
                stat: Statistic::from_samples(&column),
                failures: errors.len(),
            });
        }
        provenance.push(GridProvenance {
            point,
            seeds,
            samples: ok,
            errors,
        });
    }
    Ok(EnsembleTable {
        observable: Observable::SigmaFb,
        rows,
        provenance,
    })
}

fn evaluate(ctx: &RealizationContext, observable: Observable, energies: &[f64]) -> Result<Vec<f64>> {
    let spec = ctx.spec;
    let n_cells = ctx.lattice.n_cells;
    let e_fb = ctx.lattice.flat_band_energy();
    let mut params = spec.cpgf;
    params.seed = ctx.seeds.probes;
    params.bounds = params.bounds.or(Some(ctx.lattice.spectral_interval()));
    let eta = params.eta;

    if spec.method == Method::FbStates {
        return match observable {
            Observable::SigmaFb => Ok(vec![sigma_fb_from_states(&ctx.lattice, &ctx.disorder)?.metric_route]),
            Observable::FbMetric => Ok(vec![sigma_fb_from_states(&ctx.lattice, &ctx.disorder)?.mean_metric]),
            Observable::FbWeight => Ok(vec![ctx.disorder.y()]),
            Observable::Dos => Err(Error::Domain("DOS needs CPGF or exact diagonalization".into())),
        };
    }

    let lattice = Lattice::build(ctx.lattice.clone(), ctx.disorder.clone())?;
    match spec.method {
        Method::Cpgf => {
            let engine = Cpgf::new(&lattice.hamiltonian, params)?;
            match observable {
                Observable::SigmaFb => {
                    let targets: Vec<(f64, f64)> = energies.iter().map(|&e| (e, eta)).collect();
                    Ok(engine
                        .kubo(&lattice.velocity, &targets, n_cells)?
                        .into_iter()
                        .map(|k| k.value)
                        .collect())
                }
                Observable::Dos => Ok(engine.dos(energies, n_cells)?.values),
                Observable::FbWeight => {
                    let half = spec.fb_window * eta;
                    let sample = engine.dos(&peak_grid(e_fb, half, eta), n_cells)?;
                    Ok(vec![fb_weight(&sample, e_fb, half, eta)?.0])
                }
                Observable::FbMetric => unreachable!("rejected by validate"),
            }
        }
        Method::ExactDiag => {
            let spectrum = eigh_dense(&lattice.hamiltonian)?;
            match observable {
                Observable::SigmaFb => {
                    let oracle = KuboOracle::new(&spectrum, &lattice.velocity, n_cells);
                    Ok(oracle.sigma_grid(energies, eta))
                }
                Observable::Dos => Ok(energies
                    .iter()
                    .map(|&e| {
                        spectrum.eigenvalues.iter().map(|l| lorentzian(e - l, eta)).sum::<f64>()
                            / (std::f64::consts::PI * n_cells as f64)
                    })
                    .collect()),
                Observable::FbWeight => Ok(vec![spectrum.flat_band_count(e_fb) as f64 / n_cells as f64]),
                Observable::FbMetric => unreachable!("rejected by validate"),
            }
        }
        Method::FbStates => unreachable!(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub amplitude: f64,
    /// `beta` in `sigma = A / y^beta`.
    pub exponent: f64,
    /// RMS residual of `log sigma`.
    pub residual: f64,
}

/// Least-squares fit of `log sigma = log A - beta log y`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::Domain(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(y, s)| !(y > 0.0 && s > 0.0)) {
        return Err(Error::Domain("power-law fit needs positive data".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all y values coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(PowerLawFit {
        amplitude: intercept.exp(),
        exponent: -slope,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub alphas: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `d log sigma / d log alpha` between consecutive grid points.
    pub slopes: Vec<f64>,
    /// Geometric midpoint of the steepest interval; `None` when the curve is
    /// flat (`|slope| < 0.05` everywhere).
    pub alpha_star: Option<f64>,
    pub max_slope: f64,
}

impl Crossover {
    /// `max / min - 1` of `sigma` over `alpha >= alpha_min`.
    pub fn variation_above(&self, alpha_min: f64) -> f64 {
        let tail: Vec<f64> = self
            .alphas
            .iter()
            .zip(&self.sigmas)
            .filter(|(a, _)| **a >= alpha_min)
            .map(|(_, s)| *s)
            .collect();
        let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi / lo - 1.0
    }
}

/// Minimum slope magnitude that counts as a crossover.
pub const CROSSOVER_SLOPE: f64 = 0.05;

/// Locates the knee of `sigma(alpha)` at fixed `y`. The grid must reach a
/// decade below and above `sqrt(y)`.
pub fn crossover_scan<F>(alpha_grid: &[f64], y: f64, sigma: F) -> Result<Crossover>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let root = y.sqrt();
    if alpha_grid.len() < 3 || !alpha_grid.windows(2).all(|w| 0.0 < w[0] && w[0] < w[1]) {
        return Err(Error::Domain("alpha grid must be positive, increasing, with >= 3 points".into()));
    }
    if alpha_grid[0] > root / 10.0 || alpha_grid[alpha_grid.len() - 1] < 10.0 * root {
        return Err(Error::Domain(format!(
            "alpha grid [{}, {}] must span a decade either side of sqrt(y) = {root}",
            alpha_grid[0],
            alpha_grid[alpha_grid.len() - 1]
        )));
    }
    let sigmas = alpha_grid.par_iter().map(|&a| sigma(a)).collect::<Result<Vec<f64>>>()?;
    Ok(crossover_from_table(alpha_grid.to_vec(), sigmas))
}

pub fn crossover_from_table(alphas: Vec<f64>, sigmas: Vec<f64>) -> Crossover {
    let slopes: Vec<f64> = (1..alphas.len())
        .map(|i| (sigmas[i] / sigmas[i - 1]).ln() / (alphas[i] / alphas[i - 1]).ln())
        .collect();
    let (best, max_slope) = slopes
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, s)| if s.abs() > bv { (i, s.abs()) } else { (bi, bv) });
    let alpha_star = (max_slope >= CROSSOVER_SLOPE).then(|| (alphas[best] * alphas[best + 1]).sqrt());
    Crossover {
        alphas,
        sigmas,
        slopes,
        alpha_star,
        max_slope,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{qm_avg_sc, sigma_sc};
    use crate::flatband::metric_sc;
    use crate::spectral::{Moments, TraceMode};

    fn small_spec(method: Method) -> EnsembleSpec {
        let mut s = EnsembleSpec::new(LatticeSpec::sawtooth(60), vec![0.5], 6, method);
        s.cpgf = CpgfParams {
            eta: 0.05,
            moments: Moments::Auto,
            random_vectors: 4,
            ..CpgfParams::default()
        };
        s
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let mut all = std::collections::HashSet::new();
        for g in 0..5 {
            for i in 0..200 {
                let s = realization_seeds(42, g, i);
                assert!(all.insert(s.disorder));
                assert_eq!(s, realization_seeds(42, g, i));
            }
        }
        assert_ne!(realization_seeds(1, 0, 0), realization_seeds(2, 0, 0));
    }

    #[test]
    fn statistic_basics() {
        let s = Statistic::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!((s.n, s.min, s.max), (4, 1.0, 4.0));
        assert!(Statistic::from_samples(&[]).is_none());
        assert_eq!(Statistic::from_samples(&[7.0]).unwrap().stderr, 0.0);
    }

    #[test]
    fn constant_observable() {
        let spec = small_spec(Method::Cpgf);
        let t = run_ensemble_with(&spec, &[0.0], |_| Ok(vec![3.25])).unwrap();
        let st = t.rows[0].stat.unwrap();
        assert_eq!((st.mean, st.stderr, st.n), (3.25, 0.0, 6));
    }

    #[test]
    fn failures_are_counted() {
        let spec = small_spec(Method::Cpgf);
        let t = run_ensemble_with(&spec, &[0.0], |ctx| {
            if ctx.seeds.disorder % 2 == 0 {
                Err(Error::Domain("boom".into()))
            } else {
                Ok(vec![1.0])
            }
        })
        .unwrap();
        let row = &t.rows[0];
        assert_eq!(row.failures + row.stat.map_or(0, |s| s.n), 6);
        assert_eq!(t.provenance[0].errors.len(), row.failures);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let spec = small_spec(Method::Cpgf);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_ensemble(&spec, Observable::SigmaFb).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn validation() {
        let mut spec = small_spec(Method::Cpgf);
        assert!(run_ensemble(&spec, Observable::FbMetric).is_err());
        assert!(run_ensemble(&spec, Observable::Dos).is_err());
        spec.x_grid.clear();
        assert!(run_ensemble(&spec, Observable::SigmaFb).is_err());
        let mut spec = small_spec(Method::FbStates);
        spec.n_configs = 0;
        assert!(spec.validate(Observable::SigmaFb).is_err());
        let mut spec = small_spec(Method::FbStates);
        spec.alpha_grid = vec![1.0];
        assert!(spec.validate(Observable::SigmaFb).is_err());
    }

    #[test]
    fn cpgf_matches_exact_diag() {
        let mut a = small_spec(Method::Cpgf);
        a.cpgf.trace = TraceMode::Exact;
        a.energies = vec![-1.0, 0.5, 2.0];
        let b = EnsembleSpec { method: Method::ExactDiag, ..a.clone() };
        for obs in [Observable::SigmaFb, Observable::Dos] {
            let ta = run_ensemble(&a, obs).unwrap();
            let tb = run_ensemble(&b, obs).unwrap();
            for (ra, rb) in ta.rows.iter().zip(&tb.rows) {
                let (va, vb) = (ra.stat.unwrap().mean, rb.stat.unwrap().mean);
                assert!((va - vb).abs() < 1e-6 * vb.abs().max(1.0), "{obs:?} E={}: {va} vs {vb}", ra.energy);
            }
        }
    }

    #[test]
    fn fb_weight_methods_agree() {
        let mut spec = small_spec(Method::ExactDiag);
        spec.lattice = LatticeSpec::stub(60, 1.0);
        spec.x_grid = vec![0.3];
        let exact = run_ensemble(&spec, Observable::FbWeight).unwrap().rows[0].stat.unwrap();
        spec.method = Method::FbStates;
        let states = run_ensemble(&spec, Observable::FbWeight).unwrap().rows[0].stat.unwrap();
        assert_eq!(exact.mean, states.mean);
        assert!((exact.mean - 0.7).abs() < 1e-12);
    }

    #[test]
    fn fb_states_sawtooth_means() {
        let mut spec = EnsembleSpec::new(LatticeSpec::sawtooth(20_000), vec![0.9], 20, Method::FbStates);
        spec.master_seed = 3;
        let g = run_ensemble(&spec, Observable::FbMetric).unwrap().rows[0].stat.unwrap();
        // Integer spacings shift the continuum value by O(1/y).
        assert!((g.mean / qm_avg_sc(0.1, DisorderMode::Random).unwrap() - 1.0).abs() < 0.05, "{}", g.mean);
        let s = run_ensemble(&spec, Observable::SigmaFb).unwrap().rows[0].stat.unwrap();
        assert!((s.mean / sigma_sc(0.1, DisorderMode::Random).unwrap() - 1.0).abs() < 0.05);
        spec.mode = DisorderMode::Superlattice;
        // Every spacing is 10; the per-state metric carries an O(m) term over m^2/12.
        let g = run_ensemble(&spec, Observable::FbMetric).unwrap().rows[0].stat.unwrap();
        assert!((g.mean - metric_sc(10)).abs() < 1e-9);
        assert!(g.mean / qm_avg_sc(0.1, DisorderMode::Superlattice).unwrap() > 1.1);
    }

    #[test]
    fn alpha_grid_rows() {
        let mut spec = EnsembleSpec::new(LatticeSpec::stub(200, 1.0), vec![0.5, 0.9], 3, Method::FbStates);
        spec.alpha_grid = vec![0.5, 1.0, 2.0];
        let t = run_ensemble(&spec, Observable::SigmaFb).unwrap();
        assert_eq!(t.rows.len(), 6);
        assert_eq!(t.rows[4].alpha, 1.0);
        assert_eq!(t.rows[4].x, 0.9);
        assert!((t.rows[4].y - 0.1).abs() < 1e-12);
    }

    #[test]
    fn power_law_fits() {
        let pts: Vec<(f64, f64)> = [0.05, 0.1, 0.2, 0.4].iter().map(|&y| (y, 2.0 / f64::powf(y, 0.9))).collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.exponent - 0.9).abs() < 1e-10);
        assert!((f.amplitude - 2.0).abs() < 1e-10);
        assert!(f.residual < 1e-12);
        let flat = fit_power_law(&[(0.1, 3.0), (0.2, 3.0), (0.3, 3.0)]).unwrap();
        assert!(flat.exponent.abs() < 1e-12);
        assert!(fit_power_law(&[(0.1, 1.0), (0.2, -1.0), (0.3, 1.0)]).is_err());
        assert!(fit_power_law(&[(0.1, 1.0), (0.2, 1.0)]).is_err());
    }

    #[test]
    fn crossover_detection() {
        let grid: Vec<f64> = (0..=20).map(|i| 0.01 * 10f64.powf(i as f64 * 3.0 / 20.0)).collect();
        let knee = crossover_scan(&grid, 0.1, |a| Ok((-(a / 0.3).ln().tanh()).exp())).unwrap();
        let a = knee.alpha_star.unwrap();
        assert!(a > 0.25 && a < 0.36, "{a}");
        let flat = crossover_scan(&grid, 0.1, |_| Ok(2.0)).unwrap();
        assert!(flat.alpha_star.is_none());
        assert_eq!(flat.variation_above(0.0), 0.0);
        assert!(crossover_scan(&grid[5..], 0.1, |_| Ok(1.0)).is_err());
    }
}
