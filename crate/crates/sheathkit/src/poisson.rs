//! Nonlinear Poisson problems on a truncated half-line.
//!
//! Both the full potential `Phi'' = rho_i - n_e(Phi)` and the perturbation
//! `phi'' = n - (n_e(Phi^s + phi) - n_e(Phi^s))` are solved by damped Newton
//! on a three-point finite-difference discretization.

use serde::{Deserialize, Serialize};

use crate::config::ElectronModel;
use crate::distributions::eta;
use crate::error::{Result, SheathError};
use crate::numerics::{derivative, second_derivative, solve_tridiagonal};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Sup-norm residual before each iteration and after the last one.
    pub residuals: Vec<f64>,
    /// Sup-norm of each accepted update.
    pub updates: Vec<f64>,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `u'' = s - N_j(u)` at interior nodes with `u(x_0) = left`,
/// `u(x_last) = right`. `nonlin(j, u)` returns `(N_j(u), dN_j/du)`.
pub fn newton_dirichlet<N>(
    grid: &[f64],
    source: &[f64],
    nonlin: N,
    left: f64,
    right: f64,
    initial: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, NewtonReport)>
where
    N: Fn(usize, f64) -> (f64, f64),
{
    let n = grid.len();
    if n < 3 || source.len() != n {
        return Err(SheathError::InvalidConfig(
            "Poisson grid needs at least three nodes and a matching source".into(),
        ));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SheathError::InvalidConfig("Poisson grid must be strictly increasing".into()));
    }
    let mut u = match initial {
        Some(g) if g.len() == n => g.to_vec(),
        _ => {
            // Linear interpolation of the boundary values.
            let (a, b) = (grid[0], grid[n - 1]);
            grid.iter().map(|&x| left + (right - left) * (x - a) / (b - a)).collect()
        }
    };
    u[0] = left;
    u[n - 1] = right;

    let m = n - 2;
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    for k in 0..m {
        let j = k + 1;
        let hl = grid[j] - grid[j - 1];
        let hr = grid[j + 1] - grid[j];
        lower[k] = 2.0 / (hl * (hl + hr));
        upper[k] = 2.0 / (hr * (hl + hr));
    }
    let residual = |u: &[f64], jac: Option<&mut Vec<f64>>| -> Vec<f64> {
        let mut r = vec![0.0; m];
        let mut diag_out = jac;
        for k in 0..m {
            let j = k + 1;
            let (nv, nd) = nonlin(j, u[j]);
            r[k] = lower[k] * u[j - 1] - (lower[k] + upper[k]) * u[j] + upper[k] * u[j + 1] - source[j] + nv;
            if let Some(d) = diag_out.as_deref_mut() {
                d[k] = -(lower[k] + upper[k]) + nd;
            }
        }
        r
    };

    let mut report = NewtonReport::default();
    let mut diag = vec![0.0; m];
    let mut r = residual(&u, Some(&mut diag));
    let mut rn = sup_norm(&r);
    report.residuals.push(rn);
    for it in 0..opts.max_iterations {
        if rn < opts.tolerance {
            report.iterations = it;
            return Ok((u, report));
        }
        if !rn.is_finite() {
            break;
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let Some(step) = solve_tridiagonal(&lower, &diag, &upper, &rhs) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial = u.clone();
            for k in 0..m {
                trial[k + 1] += lambda * step[k];
            }
            let mut tdiag = vec![0.0; m];
            let tr = residual(&trial, Some(&mut tdiag));
            let tn = sup_norm(&tr);
            if tn.is_finite() && tn < rn {
                accepted = Some((trial, tr, tdiag, tn));
                break;
            }
            lambda *= 0.5;
        }
        let Some((trial, tr, tdiag, tn)) = accepted else {
            report.iterations = it;
            return Err(SheathError::NewtonDiverged {
                iterations: it,
                residual: rn,
            });
        };
        report.updates.push(lambda * sup_norm(&step));
        u = trial;
        r = tr;
        diag = tdiag;
        rn = tn;
        report.residuals.push(rn);
    }
    if rn < opts.tolerance {
        report.iterations = opts.max_iterations;
        return Ok((u, report));
    }
    Err(SheathError::NewtonDiverged {
        iterations: opts.max_iterations,
        residual: rn,
    })
}

/// Full potential: `Phi'' = rho_i - n_e(Phi)`, `Phi(0) = left`,
/// `Phi(x_max) = right`.
pub fn solve_full_potential(
    grid: &[f64],
    ion_density: &[f64],
    electron: ElectronModel,
    left: f64,
    right: f64,
    initial: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, NewtonReport)> {
    newton_dirichlet(
        grid,
        ion_density,
        |_, p| (electron.density(p), electron.derivative(p)),
        left,
        right,
        initial,
        opts,
    )
}

/// Perturbation problem around a stationary background.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticProblem {
    pub grid: Vec<f64>,
    /// `Phi^s` sampled on the grid.
    pub background: Vec<f64>,
    pub electron: ElectronModel,
    /// Density perturbation `n`.
    pub source: Vec<f64>,
}

impl EllipticProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if self.background.len() != n || self.source.len() != n {
            return Err(SheathError::InvalidConfig("grid, background and source lengths differ".into()));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SheathError::InvalidConfig("grid must be strictly increasing".into()));
        }
        if self.background.iter().chain(&self.source).any(|v| !v.is_finite()) {
            return Err(SheathError::InvalidConfig("non-finite problem data".into()));
        }
        Ok(())
    }

    /// Stationary ion density consistent with the discrete operator:
    /// `n_e(Phi^s) + D2 Phi^s` at interior nodes.
    pub fn discrete_stationary_density(&self) -> Vec<f64> {
        let g = &self.grid;
        let p = &self.background;
        let n = g.len();
        let mut rho = vec![f64::NAN; n];
        for j in 1..n - 1 {
            let hl = g[j] - g[j - 1];
            let hr = g[j + 1] - g[j];
            let d2 = 2.0 / (hl + hr) * ((p[j + 1] - p[j]) / hr - (p[j] - p[j - 1]) / hl);
            rho[j] = self.electron.density(p[j]) + d2;
        }
        rho
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationSolution {
    pub phi: Vec<f64>,
    pub report: NewtonReport,
}

/// `phi'' = n - (n_e(Phi^s + phi) - n_e(Phi^s))`, `phi(0) = phi(x_max) = 0`.
pub fn solve_perturbation_potential(problem: &EllipticProblem, opts: &NewtonOptions) -> Result<PerturbationSolution> {
    problem.validate()?;
    let e = problem.electron;
    let bg = &problem.background;
    let (phi, report) = newton_dirichlet(
        &problem.grid,
        &problem.source,
        |j, v| {
            let p = bg[j] + v;
            (e.density(p) - e.density(bg[j]), e.derivative(p))
        },
        0.0,
        0.0,
        None,
        opts,
    )?;
    Ok(PerturbationSolution { phi, report })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsReport {
    /// Upper barrier `max(Phi_b, n_e^{-1}(inf(rho^s + n)))`.
    pub upper_barrier: f64,
    /// Lower barrier magnitude `max(Phi_b, -n_e^{-1}(sup(rho^s + n)))`.
    pub lower_barrier: f64,
    pub sup_potential: f64,
    pub inf_potential: f64,
    pub holds: bool,
}

/// Checks the maximum-principle barriers for `Phi = Phi^s + phi`.
pub fn potential_bounds_check(problem: &EllipticProblem, phi: &[f64], phi_b: f64) -> BoundsReport {
    let rho = problem.discrete_stationary_density();
    let n = problem.grid.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 1..n - 1 {
        let v = rho[j] + problem.source[j];
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let e = problem.electron;
    let upper = phi_b.max(e.inverse(lo).unwrap_or(f64::INFINITY));
    let lower = phi_b.max(e.inverse(hi).map(|v| -v).unwrap_or(f64::INFINITY));
    let total: Vec<f64> = problem.background.iter().zip(phi).map(|(a, b)| a + b).collect();
    let sup = total.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let inf = total.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + upper.abs().min(1e6) + lower.abs().min(1e6));
    BoundsReport {
        upper_barrier: upper,
        lower_barrier: lower,
        sup_potential: sup,
        inf_potential: inf,
        holds: sup <= upper + tol && inf >= -lower - tol,
    }
}

/// Weighted norms entering the elliptic estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticReport {
    pub beta: f64,
    pub eta: f64,
    pub phi_sq: f64,
    pub dphi_sq: f64,
    pub ddphi_sq: f64,
    pub n_sq: f64,
    pub n_h1: f64,
    /// `||w phi||^2 + 2(1+eta) ||w phi'||^2`.
    pub lhs1: f64,
    /// `(1+eta)^2 ||w n||^2`.
    pub rhs1: f64,
    /// `||w phi''||^2`.
    pub lhs2: f64,
    /// `(1 + beta^2 (1+eta)^2) ||w n||^2`.
    pub rhs2: f64,
    /// `(lhs - rhs) / ||w n||^2`; nonpositive means the clean inequality holds.
    pub excess1: f64,
    pub excess2: f64,
}

fn weighted_sq(u: &[f64], w: &[f64]) -> f64 {
    u.iter().zip(w).map(|(a, b)| a * a * b).sum()
}

/// Evaluates both elliptic inequalities on a uniform grid with weight
/// `e^{beta x}` and trapezoid quadrature.
pub fn elliptic_estimates_check(grid: &[f64], phi: &[f64], n: &[f64], beta: f64) -> Result<EllipticReport> {
    let m = grid.len();
    if m < 4 || phi.len() != m || n.len() != m {
        return Err(SheathError::InvalidConfig("elliptic check needs matching arrays of length >= 4".into()));
    }
    let h = (grid[m - 1] - grid[0]) / (m - 1) as f64;
    if grid.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
        return Err(SheathError::InvalidConfig("elliptic check needs a uniform grid".into()));
    }
    let eta = eta(beta)?;
    let w: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let t = if i == 0 || i == m - 1 { 0.5 * h } else { h };
            t * (beta * x).exp()
        })
        .collect();
    let dphi = derivative(phi, h);
    let ddphi = second_derivative(phi, h);
    let dn = derivative(n, h);
    let phi_sq = weighted_sq(phi, &w);
    let dphi_sq = weighted_sq(&dphi, &w);
    let ddphi_sq = weighted_sq(&ddphi, &w);
    let n_sq = weighted_sq(n, &w);
    let n_h1 = (n_sq + weighted_sq(&dn, &w)).sqrt();
    let lhs1 = phi_sq + 2.0 * (1.0 + eta) * dphi_sq;
    let rhs1 = (1.0 + eta).powi(2) * n_sq;
    let lhs2 = ddphi_sq;
    let rhs2 = (1.0 + beta * beta * (1.0 + eta).powi(2)) * n_sq;
    let rel = |l: f64, r: f64| if n_sq > 0.0 { (l - r) / n_sq } else { 0.0 };
    Ok(EllipticReport {
        beta,
        eta,
        phi_sq,
        dphi_sq,
        ddphi_sq,
        n_sq,
        n_h1,
        lhs1,
        rhs1,
        lhs2,
        rhs2,
        excess1: rel(lhs1, rhs1),
        excess2: rel(lhs2, rhs2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, x_max: f64) -> Vec<f64> {
        (0..n).map(|i| x_max * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn zero_source_gives_zero() {
        let g = grid(101, 20.0);
        let p = EllipticProblem {
            background: vec![0.0; g.len()],
            source: vec![0.0; g.len()],
            grid: g,
            electron: ElectronModel::Boltzmann,
        };
        let s = solve_perturbation_potential(&p, &Default::default()).unwrap();
        assert!(s.phi.iter().all(|v| *v == 0.0));
        assert_eq!(s.report.iterations, 0);
    }

    #[test]
    fn linear_model_closed_form() {
        // phi'' - phi = e^{-2x} has the decaying solution (e^{-2x} - e^{-x}) / 3.
        let g = grid(2001, 30.0);
        let n: Vec<f64> = g.iter().map(|x| (-2.0 * x).exp()).collect();
        let p = EllipticProblem {
            background: vec![0.0; g.len()],
            source: n,
            grid: g.clone(),
            electron: ElectronModel::Linear,
        };
        let s = solve_perturbation_potential(&p, &Default::default()).unwrap();
        let err = g
            .iter()
            .zip(&s.phi)
            .map(|(x, v)| (v - ((-2.0 * x).exp() - (-x).exp()) / 3.0).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn newton_reports_divergence() {
        let g = grid(51, 10.0);
        let src = vec![1e6; g.len()];
        let out = newton_dirichlet(
            &g,
            &src,
            |_, u| (u.exp(), u.exp()),
            0.0,
            0.0,
            None,
            &NewtonOptions { max_iterations: 3, tolerance: 1e-10 },
        );
        assert!(matches!(out, Err(SheathError::NewtonDiverged { .. })));
    }
}
