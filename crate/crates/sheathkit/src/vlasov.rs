//! Time evolution of the wall-normal ion distribution `g(t, x, xi)`.
//!
//! Strang splitting of free transport and acceleration, each done by a
//! conservative semi-Lagrangian shift: the primitive of the cell values is
//! reconstructed with monotone cubic Hermite interpolation (slopes limited
//! Fritsch-Carlson style) and differenced at the departure points. That keeps
//! `g >= 0`, conserves mass exactly, and gives an exact ledger of what crossed
//! each boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ElectronModel;
use crate::distributions::EndState;
use crate::error::{Result, SheathError};
use crate::numerics::{derivative, UniformGrid};
use crate::poisson::{solve_full_potential, NewtonOptions};
use crate::stationary::StationarySolution;

/// What lies beyond the end of a row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ghost {
    Constant(f64),
    /// Linear extrapolation clipped at zero (outflow ends).
    Extrapolate,
    Periodic,
}

/// Reusable buffers for [`ConservativeShift::apply`].
#[derive(Default, Clone)]
pub struct ConservativeShift {
    ext: Vec<f64>,
    slope: Vec<f64>,
}

#[inline]
fn hermite_partial(t: f64, d0: f64, e: f64, d1: f64) -> f64 {
    // Primitive over one unit cell: P(0) = 0, P(1) = e, P'(0) = d0, P'(1) = d1.
    let t2 = t * t;
    let t3 = t2 * t;
    (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * e + (t3 - t2) * d1
}

impl ConservativeShift {
    fn prepare(&mut self, q: &[f64], guard: usize, low: Ghost, high: Ghost) {
        let n = q.len();
        let len = n + 2 * guard;
        self.ext.clear();
        self.ext.resize(len, 0.0);
        for i in 0..len {
            let c = i as isize - guard as isize;
            self.ext[i] = if c < 0 {
                match low {
                    Ghost::Constant(v) => v,
                    Ghost::Periodic => q[c.rem_euclid(n as isize) as usize],
                    Ghost::Extrapolate => {
                        let k = (-c) as f64;
                        let s = if n > 1 { q[0] - q[1] } else { 0.0 };
                        (q[0] + k * s).clamp(0.0, 2.0 * q[0].max(0.0))
                    }
                }
            } else if (c as usize) < n {
                q[c as usize]
            } else {
                let k = (c as usize - n + 1) as f64;
                match high {
                    Ghost::Constant(v) => v,
                    Ghost::Periodic => q[(c as usize) % n],
                    Ghost::Extrapolate => {
                        let s = if n > 1 { q[n - 1] - q[n - 2] } else { 0.0 };
                        (q[n - 1] + k * s).clamp(0.0, 2.0 * q[n - 1].max(0.0))
                    }
                }
            };
        }
        // Interface slopes of the primitive (= interface values of q), fourth
        // order where the stencil fits.
        let e = &self.ext;
        self.slope.clear();
        self.slope.resize(len + 1, 0.0);
        let s = &mut self.slope;
        s[0] = e[0];
        s[len] = e[len - 1];
        for k in 1..len {
            let (a, b) = (e[k - 1], e[k]);
            if a * b <= 0.0 {
                s[k] = 0.0;
                continue;
            }
            let mut d = if k >= 2 && k + 1 < len {
                (7.0 * (a + b) - (e[k - 2] + e[k + 1])) / 12.0
            } else {
                0.5 * (a + b)
            };
            if d * b < 0.0 {
                d = 0.0;
            }
            s[k] = d;
        }
        for k in 0..len {
            let ek = e[k];
            if ek == 0.0 {
                s[k] = 0.0;
                s[k + 1] = 0.0;
                continue;
            }
            let al = s[k] / ek;
            let be = s[k + 1] / ek;
            let r2 = al * al + be * be;
            if r2 > 9.0 {
                let tau = 3.0 / r2.sqrt();
                s[k] = tau * al * ek;
                s[k + 1] = tau * be * ek;
            }
        }
    }

    /// Integral of the reconstruction over `[a, b]` in extended coordinates.
    fn integral(&self, a: f64, b: f64) -> f64 {
        if a > b {
            return -self.integral(b, a);
        }
        let e = &self.ext;
        let s = &self.slope;
        let last = e.len() - 1;
        let ma = (a.floor().max(0.0) as usize).min(last);
        let mb = (b.floor().max(0.0) as usize).min(last);
        let ta = a - ma as f64;
        let tb = b - mb as f64;
        if ma == mb {
            return hermite_partial(tb, s[mb], e[mb], s[mb + 1])
                - hermite_partial(ta, s[ma], e[ma], s[ma + 1]);
        }
        let mut sum = e[ma] - hermite_partial(ta, s[ma], e[ma], s[ma + 1]);
        for m in ma + 1..mb {
            sum += e[m];
        }
        sum + hermite_partial(tb, s[mb], e[mb], s[mb + 1])
    }

    /// Moves the profile `q` (cell averages on unit cells) by `disp` cells
    /// and writes the result to `out`. Returns the signed amounts (in
    /// value x cells) that entered through the low and high ends.
    pub fn apply(&mut self, q: &[f64], disp: f64, low: Ghost, high: Ghost, out: &mut [f64]) -> (f64, f64) {
        let n = q.len();
        if disp == 0.0 {
            out.copy_from_slice(q);
            return (0.0, 0.0);
        }
        let guard = disp.abs().ceil() as usize + 3;
        self.prepare(q, guard, low, high);
        let g = guard as f64;
        for (j, o) in out.iter_mut().enumerate() {
            let a = j as f64 - disp + g;
            *o = self.integral(a, a + 1.0);
        }
        let low_in = self.integral(g - disp, g);
        let high_in = self.integral(g + n as f64, g + n as f64 - disp);
        (low_in, high_in)
    }
}

/// `g` on a uniform tensor grid, stored x-major (`values[ix * nv + iv]`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseSpaceField {
    pub x: UniformGrid,
    pub v: UniformGrid,
    pub values: Vec<f64>,
    pub t: f64,
}

impl PhaseSpaceField {
    pub fn zeros(x: UniformGrid, v: UniformGrid) -> Self {
        Self {
            x,
            v,
            values: vec![0.0; x.n * v.n],
            t: 0.0,
        }
    }

    /// Samples the stationary distribution at the nodes.
    pub fn from_stationary(sol: &StationarySolution, x: UniformGrid, v: UniformGrid) -> Self {
        let vs = v.nodes();
        let mut values = vec![0.0; x.n * v.n];
        values.par_chunks_mut(v.n).enumerate().for_each(|(ix, col)| {
            let p = sol.phi_at(x.node(ix));
            for (iv, c) in col.iter_mut().enumerate() {
                *c = sol.fs_from_phi(p, vs[iv]);
            }
        });
        Self { x, v, values, t: 0.0 }
    }

    #[inline]
    pub fn at(&self, ix: usize, iv: usize) -> f64 {
        self.values[ix * self.v.n + iv]
    }

    pub fn column(&self, ix: usize) -> &[f64] {
        &self.values[ix * self.v.n..(ix + 1) * self.v.n]
    }

    /// `int g dxi` at every x node.
    pub fn density(&self) -> Vec<f64> {
        let dv = self.v.spacing();
        self.values
            .chunks(self.v.n)
            .map(|c| c.iter().sum::<f64>() * dv)
            .collect()
    }

    /// Cell-sum mass, the quantity the scheme conserves exactly.
    pub fn cell_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.x.spacing() * self.v.spacing()
    }

    /// Trapezoid mass over `[0, x_max]`.
    pub fn mass(&self) -> f64 {
        let wx = self.x.weights();
        self.density().iter().zip(&wx).map(|(a, b)| a * b).sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Ion flux into the wall, `int_{xi<0} |xi| g(0, xi)`.
    pub fn wall_outflux(&self) -> f64 {
        let dv = self.v.spacing();
        self.column(0)
            .iter()
            .enumerate()
            .map(|(iv, g)| {
                let v = self.v.node(iv);
                if v < 0.0 {
                    -v * g
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            * dv
    }

    /// Net ion flux entering through `x_max`.
    pub fn far_influx(&self) -> f64 {
        let dv = self.v.spacing();
        self.column(self.x.n - 1)
            .iter()
            .enumerate()
            .map(|(iv, g)| -self.v.node(iv) * g)
            .sum::<f64>()
            * dv
    }
}

/// Default velocity window: wide enough that the acceleration and support
/// bounds never push meaningful mass off the grid.
pub fn default_velocity_range(es: &EndState, r2: f64) -> (f64, f64) {
    let lo = es.u() - 10.0 * es.theta().sqrt() - 1.0;
    let hi = (2.0 * r2 + 1.0).max(3.0);
    (lo, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum XBoundary {
    /// Completely absorbing wall at `x = 0`, far-field inflow at `x_max`.
    #[default]
    Absorbing,
    /// Periodic box; only for testing reversibility.
    Periodic,
}

/// Cumulative mass bookkeeping of everything that crossed a boundary or was
/// imposed, in the same units as [`PhaseSpaceField::cell_mass`].
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MassLedger {
    pub wall_inflow: f64,
    pub far_inflow: f64,
    pub velocity_inflow: f64,
    pub pinned: f64,
    pub zeroed: f64,
}

impl MassLedger {
    pub fn net(&self) -> f64 {
        self.wall_inflow + self.far_inflow + self.velocity_inflow + self.pinned + self.zeroed
    }
}

/// Evolves a field coupled to the Poisson equation.
pub struct VlasovSolver {
    pub field: PhaseSpaceField,
    pub electron: ElectronModel,
    pub phi_b: f64,
    pub boundary: XBoundary,
    /// `F_inf` on the velocity nodes.
    pub far_field: Vec<f64>,
    /// Most recent potential and field `E = dPhi/dx`.
    pub potential: Vec<f64>,
    pub electric: Vec<f64>,
    pub ledger: MassLedger,
    pub newton: NewtonOptions,
    /// When set, the Poisson solve is skipped and this field is used.
    pub frozen_field: Option<Vec<f64>>,
    clip_warned: bool,
}

impl VlasovSolver {
    pub fn new(field: PhaseSpaceField, es: &EndState, electron: ElectronModel, phi_b: f64) -> Self {
        let far_field = es.sample(&field.v.nodes());
        let nx = field.x.n;
        let xs = field.x.nodes();
        let x_max = field.x.end;
        let potential: Vec<f64> = xs.iter().map(|x| phi_b * (1.0 - x / x_max)).collect();
        Self {
            field,
            electron,
            phi_b,
            boundary: XBoundary::Absorbing,
            far_field,
            potential,
            electric: vec![0.0; nx],
            ledger: MassLedger::default(),
            newton: NewtonOptions::default(),
            frozen_field: None,
            clip_warned: false,
        }
    }

    /// Uses the stationary profile as the first Newton guess.
    pub fn with_initial_potential(mut self, phi: Vec<f64>) -> Self {
        if phi.len() == self.field.x.n {
            self.potential = phi;
        }
        self
    }

    /// Largest stable time step for the given CFL number.
    pub fn cfl_dt(&self, cfl: f64) -> f64 {
        let vmax = self.field.v.start.abs().max(self.field.v.end.abs());
        let mut dt = cfl * self.field.x.spacing() / vmax;
        let emax = self.electric.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        if emax > 0.0 {
            dt = dt.min(cfl * self.field.v.spacing() / emax);
        }
        dt
    }

    /// Free transport over `dt`: `g(x, xi) <- g(x - xi dt, xi)`.
    pub fn advect_x(&mut self, dt: f64) {
        let f = &mut self.field;
        let (nx, nv) = (f.x.n, f.v.n);
        let dx = f.x.spacing();
        let dv = f.v.spacing();
        let boundary = self.boundary;
        let far = &self.far_field;
        let vs = f.v.nodes();
        let values = &f.values;
        let rows: Vec<(Vec<f64>, f64, f64)> = (0..nv)
            .into_par_iter()
            .map_init(ConservativeShift::default, |shift, iv| {
                let v = vs[iv];
                let row: Vec<f64> = (0..nx).map(|ix| values[ix * nv + iv]).collect();
                let mut out = vec![0.0; nx];
                let (low, high) = match boundary {
                    XBoundary::Periodic => (Ghost::Periodic, Ghost::Periodic),
                    XBoundary::Absorbing => {
                        if v > 0.0 {
                            (Ghost::Constant(0.0), Ghost::Extrapolate)
                        } else {
                            (Ghost::Extrapolate, Ghost::Constant(far[iv]))
                        }
                    }
                };
                let (a, b) = shift.apply(&row, v * dt / dx, low, high, &mut out);
                (out, a, b)
            })
            .collect();
        let mut wall = 0.0;
        let mut farin = 0.0;
        for (iv, (row, a, b)) in rows.into_iter().enumerate() {
            for (ix, val) in row.into_iter().enumerate() {
                f.values[ix * nv + iv] = val;
            }
            wall += a;
            farin += b;
        }
        if boundary == XBoundary::Absorbing {
            self.ledger.wall_inflow += wall * dx * dv;
            self.ledger.far_inflow += farin * dx * dv;
            self.apply_x_boundary_values();
        }
    }

    fn apply_x_boundary_values(&mut self) {
        let f = &mut self.field;
        let (nx, nv) = (f.x.n, f.v.n);
        let cell = f.x.spacing() * f.v.spacing();
        for iv in 0..nv {
            let v = f.v.node(iv);
            if v > 0.0 {
                let old = f.values[iv];
                if old != 0.0 {
                    self.ledger.zeroed -= old * cell;
                    f.values[iv] = 0.0;
                }
            } else if v < 0.0 {
                let k = (nx - 1) * nv + iv;
                self.ledger.pinned += (self.far_field[iv] - f.values[k]) * cell;
                f.values[k] = self.far_field[iv];
            }
        }
    }

    /// Acceleration over `dt`: `g(x, xi) <- g(x, xi - E(x) dt)`.
    pub fn advect_v(&mut self, electric: &[f64], dt: f64) {
        let f = &mut self.field;
        let nv = f.v.n;
        let dv = f.v.spacing();
        let dx = f.x.spacing();
        let clipped: f64 = f
            .values
            .par_chunks_mut(nv)
            .zip(electric.par_iter())
            .map_init(
                || (ConservativeShift::default(), vec![0.0; nv]),
                |(shift, buf), (col, &e)| {
                    let (a, b) = shift.apply(col, e * dt / dv, Ghost::Constant(0.0), Ghost::Constant(0.0), buf);
                    col.copy_from_slice(buf);
                    a + b
                },
            )
            .sum();
        let clipped = clipped * dx * dv;
        self.ledger.velocity_inflow += clipped;
        if clipped.abs() > 1e-12 && !self.clip_warned {
            log::warn!(
                "velocity grid clipped {:.3e} of mass at t = {:.4}; widen the velocity window",
                -clipped,
                f.t
            );
            self.clip_warned = true;
        }
    }

    /// Solves the Poisson equation for the current density.
    pub fn solve_field(&mut self) -> Result<()> {
        if let Some(e) = &self.frozen_field {
            self.electric = e.clone();
            return Ok(());
        }
        let rho = self.field.density();
        let xs = self.field.x.nodes();
        let (phi, _) = solve_full_potential(
            &xs,
            &rho,
            self.electron,
            self.phi_b,
            0.0,
            Some(&self.potential),
            &self.newton,
        )?;
        self.electric = derivative(&phi, self.field.x.spacing());
        self.potential = phi;
        Ok(())
    }

    /// One Strang step: half transport, field solve, acceleration, half
    /// transport. Negative `dt` runs backwards.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        self.advect_x(0.5 * dt);
        self.solve_field()?;
        let e = std::mem::take(&mut self.electric);
        self.advect_v(&e, dt);
        self.electric = e;
        self.advect_x(0.5 * dt);
        self.field.t += dt;
        Ok(())
    }

    pub fn validate_dt(&self, dt: f64, cfl: f64) -> Result<()> {
        let vmax = self.field.v.start.abs().max(self.field.v.end.abs());
        let cx = dt.abs() * vmax / self.field.x.spacing();
        if cx > cfl * (1.0 + 1e-12) {
            return Err(SheathError::InvalidConfig(format!(
                "time step {dt} violates the transport CFL limit ({cx:.3} > {cfl})"
            )));
        }
        Ok(())
    }
}

/// Extent of the occupied velocities of a perturbation.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SupportBox {
    pub empty: bool,
    pub min_xi: f64,
    pub max_xi: f64,
    /// Whether any cell inside the probe band is occupied.
    pub band_occupied: bool,
}

/// Occupied velocity range of `|g - reference|` above `threshold` times its
/// maximum. `band` is an open velocity interval that should stay empty.
pub fn track_support(
    field: &PhaseSpaceField,
    reference: &[f64],
    threshold: f64,
    band: Option<(f64, f64)>,
) -> SupportBox {
    let nv = field.v.n;
    let diff_max = field
        .values
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if diff_max == 0.0 {
        return SupportBox {
            empty: true,
            min_xi: f64::NAN,
            max_xi: f64::NAN,
            band_occupied: false,
        };
    }
    let cut = threshold * diff_max;
    let mut occupied = vec![false; nv];
    for (k, (a, b)) in field.values.iter().zip(reference).enumerate() {
        if (a - b).abs() > cut {
            occupied[k % nv] = true;
        }
    }
    let first = occupied.iter().position(|&o| o).unwrap();
    let last = occupied.iter().rposition(|&o| o).unwrap();
    let band_occupied = band.is_some_and(|(lo, hi)| {
        occupied
            .iter()
            .enumerate()
            .any(|(iv, &o)| o && field.v.node(iv) > lo && field.v.node(iv) < hi)
    });
    SupportBox {
        empty: false,
        min_xi: field.v.node(first),
        max_xi: field.v.node(last),
        band_occupied,
    }
}
