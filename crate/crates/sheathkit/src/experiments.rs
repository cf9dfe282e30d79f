//! End-to-end runs: stationary sheath, plain evolution, stability and
//! instability reproductions, Bohm scans and elliptic checks, each writing a
//! run directory (`manifest.json`, `series.csv`, `snapshots/`, `verdict.json`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PlasmaConfig;
use crate::diagnostics::{
    check_asp1, fit_rate, perturbation_f, snapshot_diagnostics, weighted_h1, weighted_to_raw, RateFit, RateKind,
    StabilityBudget,
};
use crate::distributions::EndState;
use crate::error::{NotSolvableReason, Result, SheathError};
use crate::numerics::UniformGrid;
use crate::poisson::{
    elliptic_estimates_check, potential_bounds_check, solve_perturbation_potential, BoundsReport, EllipticProblem,
    EllipticReport, NewtonOptions,
};
use crate::stationary::{
    solve_stationary_potential, sup_b, SagdeevPotential, StationaryGridSpec, StationarySolution, SupB,
};
use crate::vlasov::{default_velocity_range, track_support, PhaseSpaceField, VlasovSolver};

/// What the perturbation is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// An unperturbed run advanced in lockstep; cancels the scheme's own drift.
    #[default]
    Companion,
    /// The sampled stationary distribution.
    Stationary,
}

/// Grid, time stepping and output cadence of one evolution.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSpec {
    pub nx: usize,
    pub nv: usize,
    pub x_max: f64,
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub dt: Option<f64>,
    pub t_end: f64,
    pub cfl: f64,
    /// Time between diagnostic samples; defaults to `t_end / 200`.
    pub diag_interval: Option<f64>,
    /// Time between snapshots; none when absent.
    pub snapshot_interval: Option<f64>,
    pub reference: ReferenceMode,
    /// Weight exponent of the norms.
    pub beta: f64,
    pub energy_coefficient: f64,
    /// Cells count as occupied above this fraction of `max |g - g_ref|`.
    pub support_threshold: f64,
}

impl Default for EvolveSpec {
    fn default() -> Self {
        Self {
            nx: 128,
            nv: 128,
            x_max: 30.0,
            v_min: None,
            v_max: None,
            dt: None,
            t_end: 10.0,
            cfl: 0.9,
            diag_interval: None,
            snapshot_interval: None,
            reference: ReferenceMode::Companion,
            beta: 0.5,
            energy_coefficient: 1.0,
            support_threshold: 1e-9,
        }
    }
}

impl EvolveSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SheathError::InvalidConfig(m));
        if self.nx < 8 || self.nv < 8 {
            return bad(format!("grid too small: {} x {}", self.nx, self.nv));
        }
        if !(self.x_max > 0.0 && self.t_end >= 0.0 && self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("need x_max > 0, t_end >= 0 and 0 < cfl <= 1".into());
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        if !(self.beta >= 0.0 && self.support_threshold > 0.0 && self.energy_coefficient >= 0.0) {
            return bad("need beta >= 0, support_threshold > 0, energy_coefficient >= 0".into());
        }
        Ok(())
    }
}

/// Initial perturbation `delta * M_1^{1/2} g_0` with `g_0` a product of
/// `(1 - y^2)^3` bumps over the box, normalized to unit weighted `H^1` norm.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub delta: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub xi_min: f64,
    pub xi_max: f64,
}

impl PerturbationSpec {
    fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.x_min < self.x_max && self.xi_min < self.xi_max && self.x_min >= 0.0) {
            return Err(SheathError::InvalidConfig(
                "perturbation needs delta >= 0 and a nonempty box in x >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn bump(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - y * y;
        s * s * s
    }
}

/// `g_0` on the grid, scaled to `||e^{beta x/2} g_0||_{H^1} = 1`.
pub fn unit_perturbation(p: &PerturbationSpec, x: &UniformGrid, v: &UniformGrid, theta: f64, beta: f64) -> Result<Vec<f64>> {
    let (xc, hx) = (0.5 * (p.x_min + p.x_max), 0.5 * (p.x_max - p.x_min));
    let (vc, hv) = (0.5 * (p.xi_min + p.xi_max), 0.5 * (p.xi_max - p.xi_min));
    let nv = v.n;
    let mut g0 = vec![0.0; x.n * nv];
    for ix in 0..x.n {
        let bx = bump((x.node(ix) - xc) / hx);
        if bx == 0.0 {
            continue;
        }
        for iv in 0..nv {
            g0[ix * nv + iv] = bx * bump((v.node(iv) - vc) / hv);
        }
    }
    let norm = weighted_h1(&g0, x, v, theta, beta)?.h1;
    if !(norm > 0.0) {
        return Err(SheathError::InvalidConfig(
            "perturbation box contains no grid cells".into(),
        ));
    }
    g0.iter_mut().for_each(|a| *a /= norm);
    Ok(g0)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityParams {
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstabilityParams {
    pub r1: f64,
    pub r2: f64,
    /// Absolute escape level; defaults to `escape_factor` times the initial
    /// norm of the primary run.
    #[serde(default)]
    pub escape_threshold: Option<f64>,
    #[serde(default = "default_escape_factor")]
    pub escape_factor: f64,
    /// Also run with `delta / 10` against the same threshold.
    #[serde(default = "default_true")]
    pub compare_smaller_delta: bool,
}

fn default_escape_factor() -> f64 {
    100.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BohmScanSpec {
    /// Explicit values; otherwise `count` points from `u_min` to `u_max`.
    #[serde(default)]
    pub u_values: Option<Vec<f64>>,
    #[serde(default)]
    pub u_min: Option<f64>,
    #[serde(default)]
    pub u_max: Option<f64>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_tol")]
    pub transition_tol: f64,
    #[serde(default = "default_scan_max")]
    pub sup_b_scan_max: f64,
}

fn default_count() -> usize {
    9
}

fn default_tol() -> f64 {
    1e-4
}

fn default_scan_max() -> f64 {
    50.0
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticCheckSpec {
    #[serde(default = "default_elliptic_nodes")]
    pub nodes: usize,
    #[serde(default = "default_elliptic_amp")]
    pub amplitude: f64,
}

fn default_elliptic_nodes() -> usize {
    801
}

fn default_elliptic_amp() -> f64 {
    1e-3
}

impl Default for EllipticCheckSpec {
    fn default() -> Self {
        Self {
            nodes: default_elliptic_nodes(),
            amplitude: default_elliptic_amp(),
        }
    }
}

/// Everything a run needs, read from one TOML or JSON file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub plasma: PlasmaConfig,
    #[serde(default)]
    pub stationary: StationaryGridSpec,
    #[serde(default)]
    pub evolve: EvolveSpec,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub stability: Option<StabilityParams>,
    #[serde(default)]
    pub instability: Option<InstabilityParams>,
    #[serde(default)]
    pub bohm_scan: Option<BohmScanSpec>,
    #[serde(default)]
    pub elliptic: Option<EllipticCheckSpec>,
}

impl ExperimentSpec {
    pub fn from_path(path: &Path) -> Result<Self> {
        let spec: ExperimentSpec = crate::config::read_structured(path)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.plasma.validate()?;
        self.evolve.validate()?;
        if let Some(p) = &self.perturbation {
            p.validate()?;
        }
        Ok(())
    }

    pub fn end_state(&self) -> Result<EndState> {
        EndState::normalize_quasi_neutral(&self.plasma)
    }

    fn stationary_solution(&self, es: &EndState, phi_b: f64) -> Result<StationarySolution> {
        solve_stationary_potential(es, self.plasma.electron_model, phi_b, &self.stationary)
    }
}

/// One row of `series.csv`.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub l2_weighted: f64,
    pub h1_weighted: f64,
    pub n_l2_weighted: f64,
    pub energy: f64,
    pub supp_min_xi: f64,
    pub supp_max_xi: f64,
    pub boundary_outflux: f64,
    pub mass_total: f64,
    #[serde(skip)]
    pub band_occupied: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    Escaped,
    /// Newton failed on the perturbed run: the data left the small regime.
    Saturated,
    /// The perturbation reached cells where the Gaussian weight overflows.
    WeightOverflow,
}

/// Mass bookkeeping of a run.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MassBalance {
    pub initial_mass: f64,
    /// `max_t |M(t) - M(0) + int wall outflux - int far influx| / M(0)` with
    /// trapezoid rules in x, xi and t.
    pub max_relative_drift: f64,
    /// Same with the scheme's exact cell sums and boundary ledger.
    pub max_ledger_drift: f64,
    pub integrated_wall_outflux: f64,
    pub integrated_far_influx: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutput {
    pub series: Vec<SeriesRow>,
    pub stop: StopReason,
    pub final_time: f64,
    pub dt: f64,
    pub steps: usize,
    pub x_grid: UniformGrid,
    pub v_grid: UniformGrid,
    pub mass: MassBalance,
    pub escape_time: Option<f64>,
    /// Largest and smallest occupied velocity over all samples.
    pub support_max_xi: f64,
    pub support_min_xi: f64,
    pub band_ever_occupied: bool,
    /// `max_t ||g(t) - g_0||` in `L^2(dx dxi)` against the initial field.
    pub max_drift_from_initial: f64,
    pub min_over_max: f64,
}

/// Inputs of [`run_evolution`] besides the evolution settings.
pub struct RunSetup<'a> {
    pub solution: &'a StationarySolution,
    pub evolve: &'a EvolveSpec,
    pub perturbation: Option<&'a PerturbationSpec>,
    /// Velocity band that should stay empty.
    pub band: Option<(f64, f64)>,
    pub escape_threshold: Option<f64>,
    /// Treat Newton failure as saturation rather than an error.
    pub saturation_is_result: bool,
    /// Upper end of the instability box, for the velocity window.
    pub r2: f64,
}

/// Grids for a run.
pub fn run_grids(solution: &StationarySolution, evolve: &EvolveSpec, r2: f64) -> (UniformGrid, UniformGrid) {
    let (lo, hi) = default_velocity_range(&solution.end_state, r2);
    let x = UniformGrid::new(0.0, evolve.x_max, evolve.nx);
    let v = UniformGrid::new(evolve.v_min.unwrap_or(lo), evolve.v_max.unwrap_or(hi), evolve.nv);
    (x, v)
}

fn sampled_potential(sol: &StationarySolution, x: &UniformGrid) -> Vec<f64> {
    x.nodes().iter().map(|&a| sol.phi_at(a)).collect()
}

fn l2_xv(a: &[f64], b: &[f64], x: &UniformGrid, v: &UniformGrid) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    crate::diagnostics::weighted_sq_xv(&d, x, v, 0.0).sqrt()
}

fn write_snapshot(dir: &Path, index: usize, field: &PhaseSpaceField) -> Result<()> {
    let path = dir.join(format!("snapshot_{index:05}.txt"));
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# t {:.17e}", field.t)?;
    writeln!(w, "# x {:.17e} {:.17e} {}", field.x.start, field.x.end, field.x.n)?;
    writeln!(w, "# xi {:.17e} {:.17e} {}", field.v.start, field.v.end, field.v.n)?;
    for ix in 0..field.x.n {
        let line: Vec<String> = field.column(ix).iter().map(|a| format!("{a:.17e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SheathError::Serialization(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn write_series(path: &Path, series: &[SeriesRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SheathError::Serialization(e.to_string()))?;
    for row in series {
        w.serialize(row).map_err(|e| SheathError::Serialization(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    experiment: &'a str,
    spec: &'a T,
    x_grid: Option<UniformGrid>,
    v_grid: Option<UniformGrid>,
    dt: Option<f64>,
}

fn write_manifest<T: Serialize>(
    dir: &Path,
    experiment: &str,
    spec: &T,
    grids: Option<(UniformGrid, UniformGrid, f64)>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment,
        spec,
        x_grid: grids.map(|g| g.0),
        v_grid: grids.map(|g| g.1),
        dt: grids.map(|g| g.2),
    };
    write_json(&dir.join("manifest.json"), &m)
}

/// Evolves `F^s` plus the optional perturbation and records the diagnostics.
pub fn run_evolution(setup: &RunSetup, out_dir: Option<&Path>) -> Result<RunOutput> {
    let sol = setup.solution;
    let es = &sol.end_state;
    let spec = setup.evolve;
    spec.validate()?;
    let (xg, vg) = run_grids(sol, spec, setup.r2);
    let base = PhaseSpaceField::from_stationary(sol, xg, vg);
    let stationary_values = base.values.clone();
    let phi0 = sampled_potential(sol, &xg);

    let mut field = base.clone();
    if let Some(p) = setup.perturbation {
        p.validate()?;
        if p.delta > 0.0 {
            let g0 = unit_perturbation(p, &xg, &vg, es.theta(), spec.beta)?;
            let scaled: Vec<f64> = g0.iter().map(|a| a * p.delta).collect();
            let raw = weighted_to_raw(&scaled, &vg, es);
            field.values.iter_mut().zip(&raw).for_each(|(a, b)| *a += b);
        }
    }
    let initial_values = field.values.clone();
    let electron = sol.electron;
    let mut main = VlasovSolver::new(field, es, electron, sol.phi_b).with_initial_potential(phi0.clone());
    let mut companion = match spec.reference {
        ReferenceMode::Companion => {
            Some(VlasovSolver::new(base, es, electron, sol.phi_b).with_initial_potential(phi0.clone()))
        }
        ReferenceMode::Stationary => None,
    };

    // Time step from both CFL limits, using the stationary field for the force.
    let emax = xg.nodes().iter().map(|&a| sol.dphi_at(a).abs()).fold(0.0, f64::max);
    let vmax = vg.start.abs().max(vg.end.abs());
    let mut dt = spec.cfl * xg.spacing() / vmax;
    if emax > 0.0 {
        dt = dt.min(spec.cfl * vg.spacing() / (1.5 * emax));
    }
    if let Some(d) = spec.dt {
        main.validate_dt(d, spec.cfl)?;
        dt = d;
    }
    let steps = if spec.t_end > 0.0 { (spec.t_end / dt).ceil() as usize } else { 0 };
    if steps > 0 {
        dt = spec.t_end / steps as f64;
    }
    let diag_every = {
        let interval = spec.diag_interval.unwrap_or(spec.t_end / 200.0);
        ((interval / dt).round() as usize).max(1)
    };
    let snap_every = spec.snapshot_interval.map(|s| ((s / dt).round() as usize).max(1));

    let snap_dir = out_dir.map(|d| d.join("snapshots"));
    if let Some(d) = &snap_dir {
        fs::create_dir_all(d)?;
    }
    if let Some(d) = out_dir {
        write_manifest(d, "evolve", spec, Some((xg, vg, dt)))?;
    }

    let mut series = Vec::new();
    let mut support_max = f64::NEG_INFINITY;
    let mut support_min = f64::INFINITY;
    let mut band_seen = false;
    let mut stop = StopReason::Completed;
    let mut escape_time = None;
    let mut snap_index = 0usize;
    let mut min_over_max = 0.0f64;

    let m0 = main.field.mass();
    let cell0 = main.field.cell_mass();
    let mut mass = MassBalance {
        initial_mass: m0,
        ..Default::default()
    };
    let mut prev_out = main.field.wall_outflux();
    let mut prev_in = main.field.far_influx();
    let mut max_drift_initial = 0.0f64;

    let sample = |main: &VlasovSolver, companion: &Option<VlasovSolver>| -> Result<Option<SeriesRow>> {
        let reference: &[f64] = match companion {
            Some(c) => &c.field.values,
            None => &stationary_values,
        };
        let f = match perturbation_f(&main.field, reference, es) {
            Ok(f) => f,
            Err(SheathError::WeightOverflow { .. }) if setup.saturation_is_result => return Ok(None),
            Err(e) => return Err(e),
        };
        let d = snapshot_diagnostics(&f, &xg, &vg, es, spec.beta, spec.energy_coefficient)?;
        let sup = track_support(&main.field, reference, spec.support_threshold, setup.band);
        Ok(Some(SeriesRow {
            t: main.field.t,
            l2_weighted: d.norms.l2,
            h1_weighted: d.norms.h1,
            n_l2_weighted: d.n_l2,
            energy: d.energy,
            supp_min_xi: sup.min_xi,
            supp_max_xi: sup.max_xi,
            boundary_outflux: main.field.wall_outflux(),
            mass_total: main.field.mass(),
            band_occupied: sup.band_occupied,
        }))
    };

    let mut record = |row: SeriesRow, series: &mut Vec<SeriesRow>| {
        if row.supp_max_xi.is_finite() {
            support_max = support_max.max(row.supp_max_xi);
            support_min = support_min.min(row.supp_min_xi);
        }
        band_seen |= row.band_occupied;
        series.push(row);
    };

    match sample(&main, &companion)? {
        Some(row) => record(row, &mut series),
        None => stop = StopReason::WeightOverflow,
    }
    if let (Some(d), Some(_)) = (&snap_dir, snap_every) {
        write_snapshot(d, snap_index, &main.field)?;
        snap_index += 1;
    }

    let mut done = 0usize;
    if stop == StopReason::Completed {
        for k in 1..=steps {
            match main.step(dt) {
                Ok(()) => {}
                Err(SheathError::NewtonDiverged { .. }) if setup.saturation_is_result => {
                    stop = StopReason::Saturated;
                    break;
                }
                Err(e) => return Err(e),
            }
            if let Some(c) = companion.as_mut() {
                c.step(dt)?;
            }
            done = k;

            let out_now = main.field.wall_outflux();
            let in_now = main.field.far_influx();
            mass.integrated_wall_outflux += 0.5 * dt * (prev_out + out_now);
            mass.integrated_far_influx += 0.5 * dt * (prev_in + in_now);
            prev_out = out_now;
            prev_in = in_now;
            let m = main.field.mass();
            let drift = (m - m0 + mass.integrated_wall_outflux - mass.integrated_far_influx).abs() / m0;
            mass.max_relative_drift = mass.max_relative_drift.max(drift);
            let ledger = (main.field.cell_mass() - cell0 - main.ledger.net()).abs() / cell0;
            mass.max_ledger_drift = mass.max_ledger_drift.max(ledger);
            let (lo, hi) = main.field.min_max();
            if hi > 0.0 {
                min_over_max = min_over_max.min(lo / hi);
            }

            if k % diag_every == 0 || k == steps {
                max_drift_initial = max_drift_initial.max(l2_xv(&main.field.values, &initial_values, &xg, &vg));
                match sample(&main, &companion)? {
                    Some(row) => {
                        let h1 = row.h1_weighted;
                        record(row, &mut series);
                        if let Some(eps) = setup.escape_threshold {
                            if h1 >= eps {
                                escape_time = Some(main.field.t);
                                stop = StopReason::Escaped;
                            }
                        }
                    }
                    None => stop = StopReason::WeightOverflow,
                }
            }
            if let (Some(d), Some(every)) = (&snap_dir, snap_every) {
                if k % every == 0 {
                    write_snapshot(d, snap_index, &main.field)?;
                    snap_index += 1;
                }
            }
            if stop != StopReason::Completed {
                break;
            }
        }
    }
    if let Some(d) = out_dir {
        write_series(&d.join("series.csv"), &series)?;
    }
    Ok(RunOutput {
        series,
        stop,
        final_time: main.field.t,
        dt,
        steps: done,
        x_grid: xg,
        v_grid: vg,
        mass,
        escape_time,
        support_max_xi: support_max,
        support_min_xi: support_min,
        band_ever_occupied: band_seen,
        max_drift_from_initial: max_drift_initial,
        min_over_max,
    })
}

/// Outcome of a stationary solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationaryReport {
    pub phi_b: f64,
    pub rho_infty: f64,
    pub bohm_integral: f64,
    pub sup_b: SupB,
    pub decay_rate: f64,
    pub decay_rate_est: f64,
    pub first_integral_residual: f64,
    pub x_tail: f64,
}

#[derive(Serialize)]
struct ProfileRow {
    x: f64,
    phi: f64,
    dphi: f64,
    ion_density: f64,
    electron_density: f64,
}

pub fn run_stationary(spec: &ExperimentSpec, out: Option<&Path>) -> Result<StationaryReport> {
    let es = spec.end_state()?;
    let sol = spec.stationary_solution(&es, spec.plasma.phi_b)?;
    let report = StationaryReport {
        phi_b: sol.phi_b,
        rho_infty: es.rho_infty,
        bohm_integral: sol.bohm_integral,
        sup_b: sol.sup_b,
        decay_rate: sol.decay_rate,
        decay_rate_est: sol.decay_rate_est,
        first_integral_residual: sol.first_integral_residual()?,
        x_tail: sol.x_tail(),
    };
    if let Some(d) = out {
        write_manifest(d, "stationary", spec, None)?;
        let ni = sol.ion_density_profile()?;
        let ne = sol.electron_density_profile();
        let mut w = csv::Writer::from_path(d.join("stationary.csv")).map_err(|e| SheathError::Serialization(e.to_string()))?;
        for i in 0..sol.x.len() {
            w.serialize(ProfileRow {
                x: sol.x[i],
                phi: sol.phi_s[i],
                dphi: sol.dphi_s[i],
                ion_density: ni[i],
                electron_density: ne[i],
            })
            .map_err(|e| SheathError::Serialization(e.to_string()))?;
        }
        w.flush()?;
        write_json(&d.join("verdict.json"), &report)?;
    }
    Ok(report)
}

/// Plain evolution of the configured initial data.
pub fn run_evolve(spec: &ExperimentSpec, out: Option<&Path>) -> Result<RunOutput> {
    let es = spec.end_state()?;
    let sol = spec.stationary_solution(&es, spec.plasma.phi_b)?;
    let r2 = spec.instability.map_or(0.0, |p| p.r2);
    let setup = RunSetup {
        solution: &sol,
        evolve: &spec.evolve,
        perturbation: spec.perturbation.as_ref(),
        band: None,
        escape_threshold: None,
        saturation_is_result: false,
        r2,
    };
    let run = run_evolution(&setup, out)?;
    if let Some(d) = out {
        write_manifest(d, "evolve", spec, Some((run.x_grid, run.v_grid, run.dt)))?;
        write_json(&d.join("verdict.json"), &summary(&run))?;
    }
    Ok(run)
}

#[derive(Serialize)]
struct RunSummary {
    stop: StopReason,
    final_time: f64,
    steps: usize,
    dt: f64,
    mass: MassBalance,
    support_max_xi: f64,
    support_min_xi: f64,
    max_drift_from_initial: f64,
    min_over_max: f64,
}

fn summary(run: &RunOutput) -> RunSummary {
    RunSummary {
        stop: run.stop,
        final_time: run.final_time,
        steps: run.steps,
        dt: run.dt,
        mass: run.mass,
        support_max_xi: run.support_max_xi,
        support_min_xi: run.support_min_xi,
        max_drift_from_initial: run.max_drift_from_initial,
        min_over_max: run.min_over_max,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub budget: StabilityBudget,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
    pub support_bound: f64,
    pub support_max_observed: f64,
    pub support_ok: bool,
    /// Largest relative increase of `e^{gamma t / 2} E(t)` between samples.
    pub energy_growth_max: f64,
    pub mass: MassBalance,
    pub stop: StopReason,
    pub pass: bool,
}

/// Fit window `[0.2, 0.8]` of the final time.
pub fn default_window(t_end: f64) -> (f64, f64) {
    (0.2 * t_end, 0.8 * t_end)
}

pub fn run_stability(spec: &ExperimentSpec, out: Option<&Path>) -> Result<(StabilityReport, RunOutput)> {
    let params = spec
        .stability
        .ok_or_else(|| SheathError::InvalidConfig("missing [stability] section".into()))?;
    let pert = spec
        .perturbation
        .ok_or_else(|| SheathError::InvalidConfig("missing [perturbation] section".into()))?;
    let r = spec.plasma.r;
    if pert.xi_max > -r + params.epsilon {
        return Err(SheathError::InvalidConfig(format!(
            "perturbation must sit in xi <= -r + epsilon = {}",
            -r + params.epsilon
        )));
    }
    let es = spec.end_state()?;
    let budget = check_asp1(&es, spec.evolve.beta, params.epsilon)?;
    if !(budget.asp1_lhs > 0.0) {
        return Err(SheathError::InvalidConfig(format!(
            "stability condition fails for these constants (margin {:e})",
            budget.asp1_lhs
        )));
    }
    let sol = spec.stationary_solution(&es, spec.plasma.phi_b)?;
    let setup = RunSetup {
        solution: &sol,
        evolve: &spec.evolve,
        perturbation: Some(&pert),
        band: None,
        escape_threshold: None,
        saturation_is_result: false,
        r2: 0.0,
    };
    let run = run_evolution(&setup, out)?;
    let t: Vec<f64> = run.series.iter().map(|s| s.t).collect();
    let h: Vec<f64> = run.series.iter().map(|s| s.h1_weighted).collect();
    let (fit, fit_error) = match fit_rate(&t, &h, default_window(run.final_time), RateKind::Decay) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let dv = run.v_grid.spacing();
    let support_bound = -r + 2.0 * params.epsilon + 2.0 * dv;
    let support_ok = !(run.support_max_xi > support_bound);
    let energy_growth_max = fit.map_or(f64::NAN, |f| {
        run.series
            .windows(2)
            .map(|w| {
                let a = (0.5 * f.gamma * w[0].t).exp() * w[0].energy;
                let b = (0.5 * f.gamma * w[1].t).exp() * w[1].energy;
                if a > 0.0 {
                    (b - a) / a
                } else {
                    0.0
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let pass = fit.is_some_and(|f| f.gamma > 0.0 && f.r_squared > 0.95) && support_ok;
    let report = StabilityReport {
        budget,
        fit,
        fit_error,
        support_bound,
        support_max_observed: run.support_max_xi,
        support_ok,
        energy_growth_max,
        mass: run.mass,
        stop: run.stop,
        pass,
    };
    if let Some(d) = out {
        write_manifest(d, "stability", spec, Some((run.x_grid, run.v_grid, run.dt)))?;
        write_json(&d.join("verdict.json"), &report)?;
    }
    Ok((report, run))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstabilityRun {
    pub delta: f64,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
    pub escape_time: Option<f64>,
    pub stop: StopReason,
    pub initial_norm: f64,
    pub band_ever_occupied: bool,
    pub support_max_observed: f64,
    pub mass: MassBalance,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub r1: f64,
    pub r2: f64,
    pub band: (f64, f64),
    pub upper_support_bound: f64,
    pub threshold: f64,
    pub primary: InstabilityRun,
    pub smaller: Option<InstabilityRun>,
    pub band_ok: bool,
    pub upper_ok: bool,
    pub escape_time_increases: Option<bool>,
    pub pass: bool,
}

fn instability_run(
    spec: &ExperimentSpec,
    params: &InstabilityParams,
    pert: &PerturbationSpec,
    threshold: Option<f64>,
    out: Option<&Path>,
) -> Result<(InstabilityRun, RunOutput)> {
    // The wall potential is the perturbation size.
    let mut plasma = spec.plasma;
    plasma.phi_b = pert.delta;
    let es = EndState::normalize_quasi_neutral(&plasma)?;
    let sol = spec.stationary_solution(&es, pert.delta)?;
    let band = (-0.5 * spec.plasma.r, 0.5 * params.r1);
    let setup = RunSetup {
        solution: &sol,
        evolve: &spec.evolve,
        perturbation: Some(pert),
        band: Some(band),
        escape_threshold: threshold,
        saturation_is_result: true,
        r2: params.r2,
    };
    let run = run_evolution(&setup, out)?;
    let initial_norm = run.series.first().map_or(0.0, |s| s.h1_weighted);
    let end = run.escape_time.unwrap_or(run.final_time);
    let t: Vec<f64> = run.series.iter().map(|s| s.t).collect();
    let h: Vec<f64> = run.series.iter().map(|s| s.h1_weighted).collect();
    let (fit, fit_error) = match fit_rate(&t, &h, default_window(end), RateKind::Growth) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok((
        InstabilityRun {
            delta: pert.delta,
            fit,
            fit_error,
            escape_time: run.escape_time,
            stop: run.stop,
            initial_norm,
            band_ever_occupied: run.band_ever_occupied,
            support_max_observed: run.support_max_xi,
            mass: run.mass,
        },
        run,
    ))
}

pub fn run_instability(spec: &ExperimentSpec, out: Option<&Path>) -> Result<InstabilityReport> {
    let params = spec
        .instability
        .ok_or_else(|| SheathError::InvalidConfig("missing [instability] section".into()))?;
    let pert = spec
        .perturbation
        .ok_or_else(|| SheathError::InvalidConfig("missing [perturbation] section".into()))?;
    if !(params.r1 > 0.0 && params.r2 > 2.0 * params.r1) {
        return Err(SheathError::InvalidConfig(format!(
            "need 0 < R1 and R2 > 2 R1, got R1 = {}, R2 = {}",
            params.r1, params.r2
        )));
    }
    if pert.xi_min < params.r1 || pert.xi_max > params.r2 {
        return Err(SheathError::InvalidConfig(format!(
            "perturbation must sit in [R1, R2] = [{}, {}]",
            params.r1, params.r2
        )));
    }
    if !(params.escape_factor > 1.0) {
        return Err(SheathError::InvalidConfig("escape_factor must exceed one".into()));
    }
    if let Some(d) = out {
        fs::create_dir_all(d)?;
        write_manifest(d, "instability", spec, None)?;
    }
    // The primary run first measures its initial norm to fix the threshold.
    let threshold = match params.escape_threshold {
        Some(t) => t,
        None => {
            let mut probe = spec.evolve.clone();
            probe.t_end = 0.0;
            let probe_spec = ExperimentSpec {
                evolve: probe,
                ..spec.clone()
            };
            let (run, _) = instability_run(&probe_spec, &params, &pert, None, None)?;
            params.escape_factor * run.initial_norm
        }
    };
    let primary_dir = out.map(|d| d.to_path_buf());
    let (primary, prun) = instability_run(spec, &params, &pert, Some(threshold), primary_dir.as_deref())?;
    let smaller = if params.compare_smaller_delta {
        let small = PerturbationSpec {
            delta: pert.delta / 10.0,
            ..pert
        };
        let dir: Option<PathBuf> = out.map(|d| d.join("smaller_delta"));
        Some(instability_run(spec, &params, &small, Some(threshold), dir.as_deref())?.0)
    } else {
        None
    };
    let dv = prun.v_grid.spacing();
    let upper = 2.0 * params.r2 + 2.0 * dv;
    let band_ok = !primary.band_ever_occupied && smaller.as_ref().is_none_or(|s| !s.band_ever_occupied);
    let upper_ok = !(primary.support_max_observed > upper)
        && smaller.as_ref().is_none_or(|s| !(s.support_max_observed > upper));
    let escape_time_increases = smaller.as_ref().map(|s| match (primary.escape_time, s.escape_time) {
        (Some(a), Some(b)) => b > a,
        (Some(_), None) => true,
        _ => false,
    });
    let grows = primary.fit.is_some_and(|f| f.gamma > 0.0 && f.r_squared > 0.95);
    let pass = grows && band_ok && upper_ok && primary.escape_time.is_some() && escape_time_increases.unwrap_or(true);
    let report = InstabilityReport {
        r1: params.r1,
        r2: params.r2,
        band: (-0.5 * spec.plasma.r, 0.5 * params.r1),
        upper_support_bound: upper,
        threshold,
        primary,
        smaller,
        band_ok,
        upper_ok,
        escape_time_increases,
        pass,
    };
    if let Some(d) = out {
        write_json(&d.join("verdict.json"), &report)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BohmRow {
    pub u_infty: f64,
    pub bohm_integral: Option<f64>,
    /// `None` when `V > 0` over the whole scan.
    pub sup_b: Option<f64>,
    pub solvable: bool,
    pub verdict: String,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BohmTransition {
    pub u_low: f64,
    pub u_high: f64,
    pub u_star: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BohmScanReport {
    pub phi_b: f64,
    pub rows: Vec<BohmRow>,
    pub transitions: Vec<BohmTransition>,
}

fn with_u(plasma: &PlasmaConfig, u: f64) -> PlasmaConfig {
    PlasmaConfig { u_infty: u, ..*plasma }
}

fn sup_b_for(plasma: &PlasmaConfig, scan_max: f64) -> Result<(f64, SupB)> {
    let es = EndState::normalize_quasi_neutral(plasma)?;
    let k = es.bohm_integral()?;
    if k >= 1.0 {
        return Err(SheathError::NotSolvable(NotSolvableReason::BohmViolated { bohm_integral: k }));
    }
    let pot = SagdeevPotential::new(&es, plasma.electron_model, scan_max.max(plasma.phi_b), 1001)?;
    Ok((k, sup_b(&pot)?))
}

fn bohm_row(plasma: &PlasmaConfig, scan_max: f64) -> BohmRow {
    let u = plasma.u_infty;
    let k = EndState::normalize_quasi_neutral(plasma).and_then(|es| es.bohm_integral());
    match (k, sup_b_for(plasma, scan_max)) {
        (_, Ok((k, s))) => {
            let solvable = s.admits(plasma.phi_b);
            BohmRow {
                u_infty: u,
                bohm_integral: Some(k),
                sup_b: s.finite(),
                solvable,
                verdict: if solvable { "solvable" } else { "phi_b_too_large" }.into(),
                error: None,
            }
        }
        (Ok(k), Err(SheathError::NotSolvable(NotSolvableReason::BohmViolated { .. }))) => BohmRow {
            u_infty: u,
            bohm_integral: Some(k),
            sup_b: None,
            solvable: false,
            verdict: "bohm_violated".into(),
            error: None,
        },
        (_, Err(e)) => BohmRow {
            u_infty: u,
            bohm_integral: None,
            sup_b: None,
            solvable: false,
            verdict: "error".into(),
            error: Some(e.to_string()),
        },
    }
}

/// Scans `u_infty` and brackets where the wall potential meets `sup B`.
pub fn run_bohm_scan(spec: &ExperimentSpec, out: Option<&Path>) -> Result<BohmScanReport> {
    let scan = spec
        .bohm_scan
        .clone()
        .ok_or_else(|| SheathError::InvalidConfig("missing [bohm_scan] section".into()))?;
    let us: Vec<f64> = match (&scan.u_values, scan.u_min, scan.u_max) {
        (Some(v), _, _) => v.clone(),
        (None, Some(a), Some(b)) if scan.count >= 2 => {
            (0..scan.count)
                .map(|i| {
                    let u = a + (b - a) * i as f64 / (scan.count - 1) as f64;
                    (u * 1e12).round() / 1e12
                })
                .collect()
        }
        _ => {
            return Err(SheathError::InvalidConfig(
                "bohm_scan needs u_values or u_min, u_max and count >= 2".into(),
            ))
        }
    };
    let plasma = spec.plasma;
    let rows: Vec<BohmRow> = us
        .par_iter()
        .map(|&u| bohm_row(&with_u(&plasma, u), scan.sup_b_scan_max))
        .collect();
    let mut transitions = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let both_bohm = a.verdict != "bohm_violated" && b.verdict != "bohm_violated";
        if a.error.is_some() || b.error.is_some() || !both_bohm || a.solvable == b.solvable {
            continue;
        }
        // Bisect on the solvability verdict.
        let (mut lo, mut hi) = (a.u_infty, b.u_infty);
        let lo_solvable = a.solvable;
        while (hi - lo).abs() > scan.transition_tol {
            let mid = 0.5 * (lo + hi);
            let s = sup_b_for(&with_u(&plasma, mid), scan.sup_b_scan_max)?.1;
            if s.admits(plasma.phi_b) == lo_solvable {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        transitions.push(BohmTransition {
            u_low: lo.min(hi),
            u_high: lo.max(hi),
            u_star: 0.5 * (lo + hi),
        });
    }
    let report = BohmScanReport {
        phi_b: plasma.phi_b,
        rows,
        transitions,
    };
    if let Some(d) = out {
        write_manifest(d, "bohm_scan", spec, None)?;
        let mut w = csv::Writer::from_path(d.join("bohm_scan.csv")).map_err(|e| SheathError::Serialization(e.to_string()))?;
        w.write_record(["u_infty", "bohm_integral", "sup_b", "solvable", "verdict", "error"])
            .map_err(|e| SheathError::Serialization(e.to_string()))?;
        for r in &report.rows {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
            w.write_record([
                format!("{}", r.u_infty),
                opt(r.bohm_integral),
                r.sup_b.map_or("inf".to_string(), |x| format!("{x:.12e}")),
                r.solvable.to_string(),
                r.verdict.clone(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| SheathError::Serialization(e.to_string()))?;
        }
        w.flush()?;
        write_json(&d.join("verdict.json"), &report)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticCheckReport {
    pub bounds: BoundsReport,
    pub estimates: EllipticReport,
    pub newton_iterations: usize,
}

/// Solves the perturbation Poisson problem for a smooth sample source on a
/// uniform grid and evaluates the barrier bounds and weighted inequalities.
pub fn run_check_elliptic(spec: &ExperimentSpec, out: Option<&Path>) -> Result<EllipticCheckReport> {
    let cfg = spec.elliptic.unwrap_or_default();
    let es = spec.end_state()?;
    let sol = spec.stationary_solution(&es, spec.plasma.phi_b)?;
    let grid = UniformGrid::new(0.0, spec.evolve.x_max, cfg.nodes.max(8));
    let xs = grid.nodes();
    let background = sampled_potential(&sol, &grid);
    let l = spec.evolve.x_max;
    let source: Vec<f64> = xs
        .iter()
        .map(|&x| cfg.amplitude * (-(x - 0.3 * l).powi(2) / 4.0).exp() * (1.0 + 0.5 * (x).sin()))
        .collect();
    let problem = EllipticProblem {
        grid: xs.clone(),
        background,
        electron: spec.plasma.electron_model,
        source: source.clone(),
    };
    let s = solve_perturbation_potential(&problem, &NewtonOptions::default())?;
    let bounds = potential_bounds_check(&problem, &s.phi, spec.plasma.phi_b);
    let estimates = elliptic_estimates_check(&xs, &s.phi, &source, spec.evolve.beta)?;
    let report = EllipticCheckReport {
        bounds,
        estimates,
        newton_iterations: s.report.iterations,
    };
    if let Some(d) = out {
        write_manifest(d, "check_elliptic", spec, None)?;
        write_json(&d.join("verdict.json"), &report)?;
    }
    Ok(report)
}
