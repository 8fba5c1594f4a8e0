use fbkubo::analytic::{drude_chain, overlay, qm_avg_sc};
use fbkubo::ensemble::{
    observable_energies, run_ensemble, run_ensemble_with, EnsembleRow, EnsembleSpec, EnsembleTable, Method,
    Observable,
};
use fbkubo::flatband::sigma_fb_from_states;
use fbkubo::lattice::{DisorderMode, LatticeKind};
use fbkubo::spectral::TraceMode;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SweepVariable};
use crate::error::CliError;
use crate::output::{Metadata, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Dos,
    Sigma,
    Metric,
    Analytic,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Dos => "dos",
            Command::Sigma => "sigma",
            Command::Metric => "metric",
            Command::Analytic => "analytic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Command::Dos, Command::Sigma, Command::Metric, Command::Analytic]
            .into_iter()
            .find(|c| c.name() == name)
    }
}

pub struct RunOutput {
    pub meta: Metadata,
    pub rows: Vec<Row>,
}

fn config_error(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Validates the whole configuration for `command` without computing.
pub fn prepare(command: Command, cfg: &RunConfig) -> Result<EnsembleSpec, CliError> {
    let mut spec = cfg.ensemble_spec()?;
    let sweep = cfg.sweep.as_ref().map(|s| s.variable);
    match command {
        Command::Dos => {
            if sweep != Some(SweepVariable::Energy) {
                return Err(config_error("sweep.variable", "dos needs an energy sweep (variable = \"E\")"));
            }
            if spec.method == Method::FbStates {
                return Err(config_error("ensemble.method", "dos needs cpgf or exactdiag"));
            }
        }
        Command::Sigma => {}
        Command::Metric => {
            if sweep == Some(SweepVariable::Energy) {
                return Err(config_error("sweep.variable", "metric sweeps x, y or alpha"));
            }
            spec.method = Method::FbStates;
        }
        Command::Analytic => {
            return Ok(spec);
        }
    }
    let observable = match command {
        Command::Dos => Observable::Dos,
        Command::Metric => Observable::FbMetric,
        _ => Observable::SigmaFb,
    };
    spec.validate(observable).map_err(|e| config_error("<config>", e.to_string()))?;
    if spec.method == Method::ExactDiag {
        let dim = spec.lattice.n_cells * if spec.lattice.kind == LatticeKind::Sawtooth { 2 } else { 3 };
        if dim > fbkubo::exactdiag::DENSE_CAP {
            return Err(config_error(
                "lattice.n_cells",
                format!("exactdiag is capped at {} sites", fbkubo::exactdiag::DENSE_CAP),
            ));
        }
    }
    Ok(spec)
}

struct RowFactory<'a> {
    cfg: &'a RunConfig,
    run_id: String,
}

impl RowFactory<'_> {
    fn row(&self, x: f64, alpha: f64, seed: u64, energy: Option<f64>, observable: &str, value: Option<f64>, stderr: Option<f64>) -> Row {
        let c = self.cfg;
        Row {
            run_id: self.run_id.clone(),
            lattice: c.lattice.kind.name().to_string(),
            n_cells: c.lattice.n_cells,
            x,
            alpha,
            eta: c.cpgf.eta,
            moments: c.cpgf.moments.to_string(),
            rvecs: if c.cpgf.trace == TraceMode::Exact { 0 } else { c.cpgf.random_vectors },
            seed,
            energy,
            observable: observable.to_string(),
            value,
            stderr,
        }
    }

    fn ensemble_rows(
        &self,
        table: &EnsembleTable,
        observable: &str,
        out: &mut Vec<Row>,
        notes: &mut Vec<String>,
    ) -> Result<(), CliError> {
        for r in &table.rows {
            check_not_all_failed(table, r, observable)?;
            out.push(self.stat_row(r, observable));
            if r.failures > 0 {
                notes.push(format!(
                    "{observable} at x={} alpha={}: {} of {} realizations failed",
                    r.x,
                    r.alpha,
                    r.failures,
                    self.cfg.ensemble.n_configs
                ));
            }
        }
        Ok(())
    }

    fn stat_row(&self, r: &EnsembleRow, observable: &str) -> Row {
        self.row(
            r.x,
            r.alpha,
            self.cfg.ensemble.master_seed,
            Some(r.energy),
            observable,
            r.stat.map(|s| s.mean),
            r.stat.map(|s| s.stderr),
        )
    }

    /// Closed-form values at one grid point, next to the numeric rows.
    fn overlay_rows(&self, x: f64, alpha: f64, energy: f64, out: &mut Vec<Row>) {
        let y = 1.0 - x;
        if y <= 0.0 {
            return;
        }
        let seed = self.cfg.ensemble.master_seed;
        for p in overlay(self.cfg.lattice.kind, y, alpha) {
            out.push(self.row(x, alpha, seed, Some(energy), &format!("analytic_{}", p.label), Some(p.value), None));
        }
    }
}

/// A grid point with no surviving realization is a compute failure; the
/// first recorded error is reported.
fn check_not_all_failed(table: &EnsembleTable, r: &EnsembleRow, observable: &str) -> Result<(), CliError> {
    if r.stat.is_some() || r.failures == 0 {
        return Ok(());
    }
    let first = table
        .provenance
        .iter()
        .find(|p| p.point.index == r.grid_index)
        .and_then(|p| p.errors.first())
        .map(|(_, e)| e.as_str())
        .unwrap_or("no detail");
    Err(CliError::AllFailed(format!(
        "{observable} at x={} alpha={} E={}: {first}",
        r.x, r.alpha, r.energy
    )))
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let spec = prepare(command, cfg)?;
    let config = cfg.to_toml();
    let run_id = Metadata::new(command.name(), config.clone(), Vec::new()).run_id;
    let f = RowFactory { cfg, run_id };
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    match command {
        Command::Dos => {
            log::info!("dos: {} energies, {} configurations", spec.energies.len(), spec.n_configs);
            let table = run_ensemble(&spec, Observable::Dos)?;
            f.ensemble_rows(&table, "dos", &mut rows, &mut notes)?;
            let weight = run_ensemble(&spec, Observable::FbWeight)?;
            f.ensemble_rows(&weight, "fb_weight", &mut rows, &mut notes)?;
            for r in &weight.rows {
                let seed = cfg.ensemble.master_seed;
                rows.push(f.row(r.x, r.alpha, seed, Some(r.energy), "analytic_fb_weight", Some(r.y), None));
            }
        }
        Command::Sigma => {
            log::info!("sigma: {} grid points, {} configurations", spec.grid().len(), spec.n_configs);
            let table = run_ensemble(&spec, Observable::SigmaFb)?;
            f.ensemble_rows(&table, "sigma_fb", &mut rows, &mut notes)?;
            let energies = observable_energies(&spec, Observable::SigmaFb);
            let e_fb = spec.lattice.flat_band_energy();
            for p in spec.grid() {
                if energies == [e_fb] {
                    f.overlay_rows(p.x, p.alpha, e_fb, &mut rows);
                }
                if spec.lattice.kind == LatticeKind::Sawtooth && p.x == 1.0 {
                    for &e in &energies {
                        let v = drude_chain(e, spec.cpgf.eta).ok();
                        rows.push(f.row(p.x, p.alpha, cfg.ensemble.master_seed, Some(e), "analytic_drude", v, None));
                    }
                }
            }
        }
        Command::Metric => {
            let names = ["g_mean", "spread_sq_mean", "sigma_metric", "sigma_spread"];
            let e_fb = spec.lattice.flat_band_energy();
            let table = run_ensemble_with(&spec, &[e_fb; 4], |ctx| {
                let s = sigma_fb_from_states(&ctx.lattice, &ctx.disorder)?;
                let y = ctx.disorder.y();
                Ok(vec![s.mean_metric, s.spread_route / (2.0 * y), s.metric_route, s.spread_route])
            })?;
            for prov in &table.provenance {
                for (i, values) in &prov.samples {
                    for (name, v) in names.iter().zip(values) {
                        let seed = prov.seeds[*i].disorder;
                        rows.push(f.row(prov.point.x, prov.point.alpha, seed, Some(e_fb), name, Some(*v), None));
                    }
                }
            }
            for (k, r) in table.rows.iter().enumerate() {
                let name = format!("{}_ensemble", names[k % 4]);
                check_not_all_failed(&table, r, &name)?;
                rows.push(f.stat_row(r, &name));
                if r.failures > 0 {
                    notes.push(format!("{name} at x={}: {} realizations failed", r.x, r.failures));
                }
            }
            if spec.lattice.kind == LatticeKind::Sawtooth {
                for p in spec.grid() {
                    for (label, mode) in [("analytic_qm_random", DisorderMode::Random), ("analytic_qm_ordered", DisorderMode::Superlattice)] {
                        if let Ok(v) = qm_avg_sc(1.0 - p.x, mode) {
                            rows.push(f.row(p.x, p.alpha, cfg.ensemble.master_seed, Some(e_fb), label, Some(v), None));
                        }
                    }
                }
            }
        }
        Command::Analytic => analytic_rows(cfg, &spec, &f, &mut rows, &mut notes),
    }
    Ok(RunOutput {
        meta: Metadata::new(command.name(), config, notes),
        rows,
    })
}

fn analytic_rows(cfg: &RunConfig, spec: &EnsembleSpec, f: &RowFactory, rows: &mut Vec<Row>, notes: &mut Vec<String>) {
    let seed = cfg.ensemble.master_seed;
    let e_fb = spec.lattice.flat_band_energy();
    if !spec.energies.is_empty() {
        for &e in &spec.energies {
            let v = drude_chain(e, spec.cpgf.eta);
            if let Err(err) = &v {
                notes.push(format!("drude at E={e}: {err}"));
            }
            rows.push(f.row(1.0, spec.lattice.alpha, seed, Some(e), "analytic_drude", v.ok(), None));
        }
        return;
    }
    for p in spec.grid() {
        if spec.lattice.kind == LatticeKind::Stub {
            if let Err(err) = fbkubo::analytic::sigma_sl_clean(p.alpha) {
                notes.push(format!("alpha={}: {err}", p.alpha));
                rows.push(f.row(p.x, p.alpha, seed, Some(e_fb), "analytic_sl_clean", None, None));
                continue;
            }
        }
        let before = rows.len();
        f.overlay_rows(p.x, p.alpha, e_fb, rows);
        if rows.len() == before {
            notes.push(format!("x={}: no closed form applies at y = 0", p.x));
        }
        if spec.lattice.kind == LatticeKind::Sawtooth && p.x < 1.0 {
            for (label, mode) in [("analytic_qm_random", DisorderMode::Random), ("analytic_qm_ordered", DisorderMode::Superlattice)] {
                let v = qm_avg_sc(1.0 - p.x, mode).ok();
                rows.push(f.row(p.x, p.alpha, seed, Some(e_fb), label, v, None));
            }
        }
    }
}

/// Re-runs the configuration embedded in a result file and compares rows.
pub fn replay(path: &std::path::Path) -> Result<usize, CliError> {
    let (meta, rows) = crate::output::read(path)?;
    let command = Command::from_name(&meta.command)
        .ok_or_else(|| CliError::Output(format!("unknown command {:?} in metadata", meta.command)))?;
    let cfg = RunConfig::parse(&meta.config)?;
    let fresh = run(command, &cfg)?;
    if fresh.rows.len() != rows.len() {
        return Err(CliError::Mismatch(format!("{} rows on file, {} on replay", rows.len(), fresh.rows.len())));
    }
    for (i, (a, b)) in rows.iter().zip(&fresh.rows).enumerate() {
        if a != b {
            return Err(CliError::Mismatch(format!("row {i} differs: {a:?} vs {b:?}")));
        }
    }
    Ok(rows.len())
}
