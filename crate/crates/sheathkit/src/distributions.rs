//! The end-state ion distribution: a drifting Maxwellian with a smooth cutoff
//! that removes every ion not moving towards the wall.
//!
//! All velocity integrals are reduced to the wall-normal component: the
//! transverse Maxwellian factor integrates to one and never enters the
//! dynamics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::PlasmaConfig;
use crate::error::{Result, SheathError};
use crate::quadrature::{integrate_with_breaks, QuadOptions};

/// Smooth transition `t(s)` from 0 (s <= 0) to 1 (s >= 1) built from
/// `e^{-1/s}`, with its first two derivatives.
pub fn smooth_transition(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let q = 1.0 - s;
    // t = 1 / (1 + e^{1/s - 1/q}); evaluated this way it never overflows.
    let z = 1.0 / s - 1.0 / q;
    let t = if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    };
    let w = t * (1.0 - t);
    let g = 1.0 / (s * s) + 1.0 / (q * q);
    let dg = -2.0 / (s * s * s) + 2.0 / (q * q * q);
    let d1 = w * g;
    let d2 = w * (dg + g * g * (1.0 - 2.0 * t));
    (t, d1, d2)
}

/// Cutoff weight: 0 for `xi >= -r`, 1 for `xi <= -r - sigma`, smooth and
/// monotone in between.
pub fn cutoff_psi(xi: f64, r: f64, sigma: f64) -> f64 {
    smooth_transition((-r - xi) / sigma).0
}

/// Cutoff and its first two `xi` derivatives.
pub fn cutoff_psi_derivs(xi: f64, r: f64, sigma: f64) -> (f64, f64, f64) {
    let (t, d1, d2) = smooth_transition((-r - xi) / sigma);
    (t, -d1 / sigma, d2 / (sigma * sigma))
}

/// `eta(beta) = beta^2 / (2 - beta^2)`. `beta = 1` is accepted so the formula
/// can be probed at the edge of its range.
pub fn eta(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(SheathError::InvalidConfig(format!(
            "weight exponent beta must lie in (0, 1], got {beta}"
        )));
    }
    Ok(beta * beta / (2.0 - beta * beta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CutoffMode {
    #[default]
    Smooth,
    /// psi == 1; only meaningful in tests.
    Disabled,
}

/// The end state `F_inf = M_inf psi` with its quasi-neutral density.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndState {
    pub config: PlasmaConfig,
    pub rho_infty: f64,
    pub cutoff: CutoffMode,
}

pub(crate) fn quad_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-15,
        rel_tol: 1e-12,
        max_segments: 4000,
    }
}

impl EndState {
    /// Builds the end state with `rho_infty` fixed by `int F_inf = 1`.
    pub fn normalize_quasi_neutral(config: &PlasmaConfig) -> Result<Self> {
        Self::with_cutoff(config, CutoffMode::Smooth)
    }

    pub fn with_cutoff(config: &PlasmaConfig, cutoff: CutoffMode) -> Result<Self> {
        config.validate()?;
        let mut state = EndState {
            config: *config,
            rho_infty: 1.0,
            cutoff,
        };
        if cutoff == CutoffMode::Smooth {
            let unit_mass = state.integrate(|_| 1.0)?;
            if !(unit_mass > 0.0) {
                return Err(SheathError::QuadratureFailure(
                    "cut-off Maxwellian has no mass".into(),
                ));
            }
            state.rho_infty = 1.0 / unit_mass;
        }
        Ok(state)
    }

    pub fn u(&self) -> f64 {
        self.config.u_infty
    }

    pub fn theta(&self) -> f64 {
        self.config.theta_infty
    }

    /// `ln M_1(xi)` for the wall-normal marginal Maxwellian.
    pub fn log_m1(&self, xi: f64) -> f64 {
        let th = self.theta();
        let d = xi - self.u();
        self.rho_infty.ln() - 0.5 * (2.0 * PI * th).ln() - d * d / (2.0 * th)
    }

    pub fn m1(&self, xi: f64) -> f64 {
        self.log_m1(xi).exp()
    }

    pub fn psi_derivs(&self, xi: f64) -> (f64, f64, f64) {
        match self.cutoff {
            CutoffMode::Smooth => cutoff_psi_derivs(xi, self.config.r, self.config.sigma),
            CutoffMode::Disabled => (1.0, 0.0, 0.0),
        }
    }

    pub fn psi(&self, xi: f64) -> f64 {
        self.psi_derivs(xi).0
    }

    /// Wall-normal marginal of `F_inf`.
    pub fn f_infty(&self, xi: f64) -> f64 {
        let p = self.psi(xi);
        if p == 0.0 {
            0.0
        } else {
            self.m1(xi) * p
        }
    }

    /// `F_inf`, `F_inf'`, `F_inf''` in `xi`.
    pub fn f_infty_derivs(&self, xi: f64) -> (f64, f64, f64) {
        let (p, dp, ddp) = self.psi_derivs(xi);
        if p == 0.0 && dp == 0.0 && ddp == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let th = self.theta();
        let m = self.m1(xi);
        let a = (xi - self.u()) / th;
        let dm = -a * m;
        let ddm = m * (a * a - 1.0 / th);
        (m * p, dm * p + m * dp, ddm * p + 2.0 * dm * dp + m * ddp)
    }

    pub fn sample(&self, xis: &[f64]) -> Vec<f64> {
        xis.iter().map(|&x| self.f_infty(x)).collect()
    }

    /// Lower end of the velocity interval carrying all the mass.
    pub fn lower_velocity(&self) -> f64 {
        let lo = self.u() - 12.0 * self.theta().sqrt();
        match self.cutoff {
            CutoffMode::Smooth => lo.min(-self.config.r - self.config.sigma),
            CutoffMode::Disabled => lo,
        }
    }

    /// Upper end of the support.
    pub fn upper_velocity(&self) -> f64 {
        match self.cutoff {
            CutoffMode::Smooth => -self.config.r,
            CutoffMode::Disabled => self.u() + 12.0 * self.theta().sqrt(),
        }
    }

    /// Breakpoints splitting the support so narrow Gaussians are not missed.
    pub fn breakpoints(&self, lo: f64, hi: f64, extra: &[f64]) -> Vec<f64> {
        let s = self.theta().sqrt();
        let mut pts = vec![lo, hi];
        for j in -12..=12 {
            pts.push(self.u() + j as f64 * s);
        }
        if self.cutoff == CutoffMode::Smooth {
            pts.push(-self.config.r - self.config.sigma);
            pts.push(-self.config.r);
        }
        pts.extend_from_slice(extra);
        pts.retain(|p| *p >= lo && *p <= hi && p.is_finite());
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        pts
    }

    /// `int w(xi) F_inf(xi) dxi` over the support.
    pub fn integrate<W: Fn(f64) -> f64>(&self, w: W) -> Result<f64> {
        self.integrate_with_extra(w, &[])
    }

    pub fn integrate_with_extra<W: Fn(f64) -> f64>(&self, w: W, extra: &[f64]) -> Result<f64> {
        let lo = self.lower_velocity();
        let hi = self.upper_velocity();
        let pts = self.breakpoints(lo, hi, extra);
        let r = integrate_with_breaks(|xi| w(xi) * self.f_infty(xi), &pts, &quad_opts())?;
        Ok(r.value)
    }

    /// `int F_inf`; one by construction.
    pub fn total_density(&self) -> Result<f64> {
        self.integrate(|_| 1.0)
    }

    /// `K = int xi^{-2} F_inf`. The Bohm criterion holds iff `K < 1`.
    pub fn bohm_integral(&self) -> Result<f64> {
        if self.cutoff == CutoffMode::Disabled {
            return Err(SheathError::InvalidConfig(
                "Bohm integral diverges without the cutoff".into(),
            ));
        }
        self.integrate(|xi| 1.0 / (xi * xi))
    }

    /// Norm of the cutoff defect `d/dxi (M psi - M) / M^{1/2}` over `xi < 0`.
    ///
    /// The square of the defect is `M [(psi - 1) (-(xi-u)/theta) + psi']^2`,
    /// so the `M^{-1/2}` factor never has to be formed.
    pub fn mu_infty(&self) -> Result<f64> {
        if self.cutoff == CutoffMode::Disabled {
            return Ok(0.0);
        }
        let (r, sigma) = (self.config.r, self.config.sigma);
        let th = self.theta();
        let u = self.u();
        let integrand = |xi: f64| {
            let (p, dp, _) = self.psi_derivs(xi);
            let b = (p - 1.0) * (-(xi - u) / th) + dp;
            if b == 0.0 {
                0.0
            } else {
                (self.log_m1(xi) + 2.0 * b.abs().ln()).exp()
            }
        };
        let lo = -r - sigma;
        let mut pts = vec![lo, -r, 0.0];
        let s = th.sqrt();
        for j in -12..=12 {
            let p = u + j as f64 * s;
            if p > lo && p < 0.0 {
                pts.push(p);
            }
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        let sq = integrate_with_breaks(integrand, &pts, &quad_opts())?.value;
        Ok(sq.max(0.0).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ElectronModel;

    fn cfg(u: f64, th: f64, r: f64, sigma: f64) -> PlasmaConfig {
        PlasmaConfig {
            u_infty: u,
            theta_infty: th,
            r,
            sigma,
            phi_b: 0.0,
            electron_model: ElectronModel::Boltzmann,
        }
    }

    #[test]
    fn transition_closed_form() {
        // t(1/2) = 1/2 by symmetry; t(1/3) = 1 / (1 + e^{3 - 3/2}).
        assert!((smooth_transition(0.5).0 - 0.5).abs() < 1e-15);
        let expect = 1.0 / (1.0 + (1.5f64).exp());
        assert!((smooth_transition(1.0 / 3.0).0 - expect).abs() < 1e-15);
        let psi = cutoff_psi(-1.25, 1.0, 0.5);
        assert!((psi - 0.5).abs() < 1e-15);
        assert_eq!(cutoff_psi(-0.9, 1.0, 0.5), 0.0);
        assert_eq!(cutoff_psi(-2.6, 1.0, 0.5), 1.0);
    }

    #[test]
    fn transition_derivatives_match_differences() {
        for &s in &[0.05, 0.2, 0.5, 0.77, 0.95] {
            let h = 1e-6;
            let (_, d1, d2) = smooth_transition(s);
            let fd1 = (smooth_transition(s + h).0 - smooth_transition(s - h).0) / (2.0 * h);
            let fd2 = (smooth_transition(s + h).1 - smooth_transition(s - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-6 * (1.0 + d1.abs()), "s={s}");
            assert!((d2 - fd2).abs() < 1e-5 * (1.0 + d2.abs()), "s={s}");
        }
    }

    #[test]
    fn f_infty_derivatives_match_differences() {
        let es = EndState::normalize_quasi_neutral(&cfg(-2.0, 0.5, 1.0, 0.25)).unwrap();
        for &xi in &[-3.0, -1.2, -1.1, -1.05] {
            let h = 1e-6;
            let (_, d1, d2) = es.f_infty_derivs(xi);
            let fd1 = (es.f_infty(xi + h) - es.f_infty(xi - h)) / (2.0 * h);
            let fd2 = (es.f_infty_derivs(xi + h).1 - es.f_infty_derivs(xi - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-6, "xi={xi}");
            assert!((d2 - fd2).abs() < 1e-5, "xi={xi}");
        }
    }

    #[test]
    fn normalization_and_support() {
        let es = EndState::normalize_quasi_neutral(&cfg(-2.0, 0.5, 1.0, 0.25)).unwrap();
        assert!(es.rho_infty > 1.0);
        assert!((es.total_density().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(es.f_infty(-1.0), 0.0);
        assert_eq!(es.f_infty(-0.5), 0.0);
        assert!(es.f_infty(-1.3) > 0.0);
    }

    #[test]
    fn disabled_cutoff_has_unit_density() {
        let es = EndState::with_cutoff(&cfg(-2.0, 0.5, 1.0, 0.25), CutoffMode::Disabled).unwrap();
        assert_eq!(es.rho_infty, 1.0);
        assert_eq!(es.mu_infty().unwrap(), 0.0);
        assert!((es.total_density().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eta_values() {
        assert!((eta(0.5).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(eta(1.0).unwrap(), 1.0);
        assert!(eta(1e-8).unwrap() < 1e-15);
        assert!(eta(0.0).is_err());
        assert!(eta(1.2).is_err());
    }
}
