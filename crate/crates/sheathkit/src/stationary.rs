//! The stationary sheath: Sagdeev potential, solvability set, the potential
//! profile from the first integral, and the closed-form ion distribution.

use serde::{Deserialize, Serialize};

use crate::config::ElectronModel;
use crate::distributions::EndState;
use crate::error::{NotSolvableReason, Result, SheathError};
use crate::quadrature::{integrate, QuadOptions};

/// Ion density at potential `phi`: `int F_inf |xi| / sqrt(xi^2 + 2 phi)`.
pub fn ion_density(es: &EndState, phi: f64) -> Result<f64> {
    check_phi(phi)?;
    es.integrate(|xi| xi.abs() / (xi * xi + 2.0 * phi).sqrt())
}

/// `d n_i / d phi = -int F_inf |xi| (xi^2 + 2 phi)^{-3/2}`.
pub fn ion_density_derivative(es: &EndState, phi: f64) -> Result<f64> {
    check_phi(phi)?;
    es.integrate(|xi| {
        let q = xi * xi + 2.0 * phi;
        -xi.abs() / (q * q.sqrt())
    })
}

/// `int_0^phi n_i`. The inner integral is done in closed form, which leaves
/// `int F_inf |xi| (sqrt(xi^2 + 2 phi) - |xi|)`; the difference is written
/// without cancellation.
pub fn ion_potential_integral(es: &EndState, phi: f64) -> Result<f64> {
    check_phi(phi)?;
    if phi == 0.0 {
        return Ok(0.0);
    }
    es.integrate(|xi| {
        let a = xi.abs();
        a * 2.0 * phi / ((xi * xi + 2.0 * phi).sqrt() + a)
    })
}

/// Sagdeev potential `V(phi) = int_0^phi (n_i - n_e)`.
///
/// With `int F_inf = 1` the ion part is `phi - 2 phi^2 J(phi)`,
/// `J = int F_inf (sqrt(xi^2 + 2 phi) + |xi|)^{-2}`, so `V` is assembled from
/// two terms that are each `O(phi^2)` and no leading-order cancellation is left.
pub fn sagdeev_value(es: &EndState, electron: ElectronModel, phi: f64) -> Result<f64> {
    check_phi(phi)?;
    if phi == 0.0 {
        return Ok(0.0);
    }
    let j = es.integrate(|xi| {
        let s = (xi * xi + 2.0 * phi).sqrt() + xi.abs();
        1.0 / (s * s)
    })?;
    Ok(electron.antiderivative_deficit(phi) - 2.0 * phi * phi * j)
}

fn check_phi(phi: f64) -> Result<()> {
    if !(phi >= 0.0) || !phi.is_finite() {
        return Err(SheathError::InvalidConfig(format!(
            "potential must be finite and nonnegative, got {phi}"
        )));
    }
    Ok(())
}

/// Tabulated Sagdeev potential on `[0, phi_max]`.
#[derive(Clone, Debug)]
pub struct SagdeevPotential {
    pub end_state: EndState,
    pub electron: ElectronModel,
    pub bohm_integral: f64,
    pub phi: Vec<f64>,
    pub v: Vec<f64>,
    pub dv: Vec<f64>,
}

impl SagdeevPotential {
    /// Tabulates `V` and `V'` on `nodes` uniform points. Fails when the Bohm
    /// criterion is violated, since then `V < 0` right away.
    pub fn new(es: &EndState, electron: ElectronModel, phi_max: f64, nodes: usize) -> Result<Self> {
        if !(phi_max > 0.0) || nodes < 2 {
            return Err(SheathError::InvalidConfig(format!(
                "need phi_max > 0 and at least two nodes (got {phi_max}, {nodes})"
            )));
        }
        electron.validate()?;
        let k = es.bohm_integral()?;
        if k >= 1.0 {
            return Err(SheathError::NotSolvable(NotSolvableReason::BohmViolated {
                bohm_integral: k,
            }));
        }
        let mut phi = Vec::with_capacity(nodes);
        let mut v = Vec::with_capacity(nodes);
        let mut dv = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let p = phi_max * i as f64 / (nodes - 1) as f64;
            phi.push(p);
            v.push(sagdeev_value(es, electron, p)?);
            dv.push(ion_density(es, p)? - electron.density(p));
        }
        Ok(Self {
            end_state: es.clone(),
            electron,
            bohm_integral: k,
            phi,
            v,
            dv,
        })
    }

    pub fn phi_max(&self) -> f64 {
        *self.phi.last().unwrap()
    }

    /// Direct evaluation, not table interpolation.
    pub fn value(&self, phi: f64) -> Result<f64> {
        sagdeev_value(&self.end_state, self.electron, phi)
    }

    pub fn derivative(&self, phi: f64) -> Result<f64> {
        Ok(ion_density(&self.end_state, phi)? - self.electron.density(phi))
    }

    /// `V''(0) = 1 - K`.
    pub fn curvature_at_zero(&self) -> f64 {
        1.0 - self.bohm_integral
    }
}

/// Supremum of the solvability set `B = {phi > 0 : V > 0 on (0, phi]}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SupB {
    Finite(f64),
    /// `V > 0` on the whole table; the supremum is at least this value.
    ExceedsMax(f64),
}

impl SupB {
    pub fn admits(&self, phi_b: f64) -> bool {
        match *self {
            SupB::Finite(s) => phi_b < s,
            SupB::ExceedsMax(m) => phi_b <= m,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            SupB::Finite(s) => Some(s),
            SupB::ExceedsMax(_) => None,
        }
    }
}

/// First positive zero of `V` by scanning the table and bisecting to 1e-10.
pub fn sup_b(pot: &SagdeevPotential) -> Result<SupB> {
    let first = pot.v.iter().skip(1).position(|&v| v <= 0.0).map(|i| i + 1);
    let Some(i) = first else {
        return Ok(SupB::ExceedsMax(pot.phi_max()));
    };
    if i == 1 && pot.curvature_at_zero() <= 0.0 {
        return Ok(SupB::Finite(0.0));
    }
    let (mut lo, mut hi) = (pot.phi[i - 1], pot.phi[i]);
    if lo == 0.0 {
        // The root lies in the first cell; step off zero where V vanishes.
        lo = hi * 1e-6;
        if pot.value(lo)? <= 0.0 {
            return Ok(SupB::Finite(0.0));
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if pot.value(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SupB::Finite(0.5 * (lo + hi)))
}

/// Discretization controls for the stationary profile.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct StationaryGridSpec {
    /// Nodes of the quadrature part of the profile (uniform in `ln Phi`).
    pub nodes: usize,
    /// The exponential tail takes over once `Phi < tail_fraction * Phi_b`.
    pub tail_fraction: f64,
    /// Extent of the sampled grid; defaults to where `Phi ~ 1e-10 Phi_b`.
    pub x_max: Option<f64>,
    /// Upper end of the scan for `sup B`.
    pub sup_b_scan_max: f64,
}

impl Default for StationaryGridSpec {
    fn default() -> Self {
        Self {
            nodes: 400,
            tail_fraction: 1e-3,
            x_max: None,
            sup_b_scan_max: 50.0,
        }
    }
}

/// The stationary potential and, through [`StationarySolution::reconstruct_fs`],
/// the stationary ion distribution.
#[derive(Clone, Debug)]
pub struct StationarySolution {
    pub end_state: EndState,
    pub electron: ElectronModel,
    pub phi_b: f64,
    pub bohm_integral: f64,
    pub sup_b: SupB,
    /// `sqrt(1 - K)`, the rate of the linearized tail.
    pub decay_rate: f64,
    /// Log-linear fit of the quadrature part of the profile.
    pub decay_rate_est: f64,
    /// Graded output grid with potential and field.
    pub x: Vec<f64>,
    pub phi_s: Vec<f64>,
    pub dphi_s: Vec<f64>,
    // Quadrature nodes used for interpolation.
    nodes_x: Vec<f64>,
    nodes_phi: Vec<f64>,
    nodes_dphi: Vec<f64>,
}

pub fn solve_stationary_potential(
    es: &EndState,
    electron: ElectronModel,
    phi_b: f64,
    spec: &StationaryGridSpec,
) -> Result<StationarySolution> {
    check_phi(phi_b)?;
    electron.validate()?;
    let k = es.bohm_integral()?;
    if k >= 1.0 {
        return Err(SheathError::NotSolvable(NotSolvableReason::BohmViolated {
            bohm_integral: k,
        }));
    }
    let c = (1.0 - k).sqrt();
    let scan = SagdeevPotential::new(es, electron, spec.sup_b_scan_max.max(phi_b), 1001)?;
    let sup = sup_b(&scan)?;
    if phi_b > 0.0 {
        // Resolve the check on (0, phi_b] more finely than the wide scan.
        let local = SagdeevPotential::new(es, electron, phi_b, 401)?;
        if let SupB::Finite(s) = sup_b(&local)? {
            return Err(SheathError::NotSolvable(NotSolvableReason::PhiBTooLarge {
                phi_b,
                sup_b: s,
            }));
        }
    }

    if phi_b == 0.0 {
        let x_max = spec.x_max.unwrap_or(30.0);
        let n = spec.nodes.max(2);
        let x: Vec<f64> = (0..n).map(|i| x_max * i as f64 / (n - 1) as f64).collect();
        return Ok(StationarySolution {
            end_state: es.clone(),
            electron,
            phi_b,
            bohm_integral: k,
            sup_b: sup,
            decay_rate: c,
            decay_rate_est: c,
            phi_s: vec![0.0; n],
            dphi_s: vec![0.0; n],
            nodes_x: x.clone(),
            nodes_phi: vec![0.0; n],
            nodes_dphi: vec![0.0; n],
            x,
        });
    }

    let n = spec.nodes.max(8);
    let s_top = phi_b.ln();
    let s_bot = (phi_b * spec.tail_fraction).ln();
    let ds = (s_top - s_bot) / (n - 1) as f64;
    let mut nodes_x = Vec::with_capacity(n);
    let mut nodes_phi = Vec::with_capacity(n);
    let mut nodes_dphi = Vec::with_capacity(n);
    // dx/ds = Phi / sqrt(2 V(Phi)) with Phi = e^s; smooth down to the tail.
    let dxds = |s: f64| -> f64 {
        let p = s.exp();
        match sagdeev_value(es, electron, p) {
            Ok(v) if v > 0.0 => p / (2.0 * v).sqrt(),
            _ => f64::NAN,
        }
    };
    let opts = QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-11,
        max_segments: 200,
    };
    let mut x = 0.0;
    for i in 0..n {
        let s = s_top - i as f64 * ds;
        if i > 0 {
            let s_prev = s_top - (i - 1) as f64 * ds;
            x += integrate(dxds, s, s_prev, &opts)?.value;
        }
        let p = s.exp();
        let v = sagdeev_value(es, electron, p)?;
        nodes_x.push(x);
        nodes_phi.push(p);
        nodes_dphi.push(-(2.0 * v.max(0.0)).sqrt());
    }

    let x_tail = *nodes_x.last().unwrap();
    let phi_tail = *nodes_phi.last().unwrap();
    let decay_rate_est = fit_tail_rate(&nodes_x, &nodes_phi, 0.1 * phi_b);

    let x_max = spec
        .x_max
        .unwrap_or(x_tail + (1e7f64).ln() / c)
        .max(x_tail);
    let mut gx = nodes_x.clone();
    let mut gphi = nodes_phi.clone();
    let mut gdphi = nodes_dphi.clone();
    let mut h = nodes_x[n - 1] - nodes_x[n - 2];
    let mut xt = x_tail;
    while xt < x_max {
        h *= 1.05;
        xt = (xt + h).min(x_max);
        let p = phi_tail * (-c * (xt - x_tail)).exp();
        gx.push(xt);
        gphi.push(p);
        gdphi.push(-c * p);
    }

    Ok(StationarySolution {
        end_state: es.clone(),
        electron,
        phi_b,
        bohm_integral: k,
        sup_b: sup,
        decay_rate: c,
        decay_rate_est,
        x: gx,
        phi_s: gphi,
        dphi_s: gdphi,
        nodes_x,
        nodes_phi,
        nodes_dphi,
    })
}

/// Slope of `ln Phi` against `x` over nodes with `Phi <= below`.
fn fit_tail_rate(x: &[f64], phi: &[f64], below: f64) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(phi)
        .filter(|(_, &p)| p <= below && p > 0.0)
        .map(|(&x, &p)| (x, p.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    -sxy / sxx
}

impl StationarySolution {
    pub fn x_tail(&self) -> f64 {
        *self.nodes_x.last().unwrap()
    }

    fn locate(&self, x: f64) -> Option<usize> {
        let nx = &self.nodes_x;
        if x >= *nx.last().unwrap() {
            return None;
        }
        let i = nx.partition_point(|&v| v <= x);
        Some(i.saturating_sub(1).min(nx.len() - 2))
    }

    /// `Phi^s(x)` and `d Phi^s / dx`: cubic Hermite with exact slopes on the
    /// quadrature part, analytic exponential beyond it.
    pub fn phi_and_dphi_at(&self, x: f64) -> (f64, f64) {
        if self.phi_b == 0.0 {
            return (0.0, 0.0);
        }
        if x <= 0.0 {
            return (self.phi_b, self.nodes_dphi[0]);
        }
        match self.locate(x) {
            None => {
                let p = *self.nodes_phi.last().unwrap()
                    * (-self.decay_rate * (x - self.x_tail())).exp();
                (p, -self.decay_rate * p)
            }
            Some(i) => {
                let (x0, x1) = (self.nodes_x[i], self.nodes_x[i + 1]);
                let h = x1 - x0;
                let t = (x - x0) / h;
                let (p0, p1) = (self.nodes_phi[i], self.nodes_phi[i + 1]);
                let (m0, m1) = (self.nodes_dphi[i] * h, self.nodes_dphi[i + 1] * h);
                let t2 = t * t;
                let t3 = t2 * t;
                let val = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
                    + (t3 - 2.0 * t2 + t) * m0
                    + (-2.0 * t3 + 3.0 * t2) * p1
                    + (t3 - t2) * m1;
                let der = ((6.0 * t2 - 6.0 * t) * p0
                    + (3.0 * t2 - 4.0 * t + 1.0) * m0
                    + (-6.0 * t2 + 6.0 * t) * p1
                    + (3.0 * t2 - 2.0 * t) * m1)
                    / h;
                (val, der)
            }
        }
    }

    pub fn phi_at(&self, x: f64) -> f64 {
        self.phi_and_dphi_at(x).0
    }

    pub fn dphi_at(&self, x: f64) -> f64 {
        self.phi_and_dphi_at(x).1
    }

    /// Wall-normal marginal of `F^s` at potential `phi`.
    pub fn fs_from_phi(&self, phi: f64, xi: f64) -> f64 {
        if xi >= 0.0 {
            return 0.0;
        }
        let d = xi * xi - 2.0 * phi;
        if d <= 0.0 {
            return 0.0;
        }
        self.end_state.f_infty(-d.sqrt())
    }

    /// `F^s(x, xi) = F_inf(-sqrt(xi^2 - 2 Phi^s(x)))` on the ion side of the
    /// turning curve, zero elsewhere.
    pub fn reconstruct_fs(&self, x: f64, xi: f64) -> f64 {
        self.fs_from_phi(self.phi_at(x), xi)
    }

    /// `max |(dPhi/dx)^2 / 2 - V(Phi)|` over the output grid.
    pub fn first_integral_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (&p, &d) in self.phi_s.iter().zip(&self.dphi_s) {
            let v = sagdeev_value(&self.end_state, self.electron, p)?;
            worst = worst.max((0.5 * d * d - v).abs());
        }
        Ok(worst)
    }

    /// Ion density `n_i(Phi^s(x))` along the output grid.
    pub fn ion_density_profile(&self) -> Result<Vec<f64>> {
        self.phi_s.iter().map(|&p| ion_density(&self.end_state, p)).collect()
    }

    pub fn electron_density_profile(&self) -> Vec<f64> {
        self.phi_s.iter().map(|&p| self.electron.density(p)).collect()
    }
}

/// Defect norms of the stationary distribution relative to the end state at
/// one position.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FsEstimateRow {
    pub x: f64,
    pub phi: f64,
    pub dphi: f64,
    /// `|| d_xi (F^s - F_inf) / M^{1/2} ||`.
    pub defect: f64,
    /// `|| d_x d_xi F^s / M^{1/2} ||`.
    pub defect_dx: f64,
    /// `|| grad_xi (d_xi F^s / M^{1/2}) ||`, transverse part included.
    pub gradient: f64,
    pub defect_over_phi: f64,
    pub defect_dx_over_dphi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FsEstimateReport {
    pub phi_b: f64,
    pub rows: Vec<FsEstimateRow>,
}

/// Evaluates the stationary-distribution estimates at the requested
/// positions. Report only: the constants are measured, not asserted.
pub fn check_fs_estimates(sol: &StationarySolution, xs: &[f64]) -> Result<FsEstimateReport> {
    let es = &sol.end_state;
    let th = es.theta();
    let u = es.u();
    let (r, sigma) = (es.config.r, es.config.sigma);
    let mut rows = Vec::with_capacity(xs.len());
    for &x in xs {
        let (phi, dphi) = sol.phi_and_dphi_at(x);
        // Pieces evaluated in log space: F_inf^{(k)}(zeta) / M(xi)^{1/2}.
        let scaled = |zeta: f64, xi: f64| -> (f64, f64) {
            let (p, dp, ddp) = es.psi_derivs(zeta);
            if p == 0.0 && dp == 0.0 && ddp == 0.0 {
                return (0.0, 0.0);
            }
            let a = (zeta - u) / th;
            let w = (es.log_m1(zeta) - 0.5 * es.log_m1(xi)).exp();
            let d1 = w * (-a * p + dp);
            let d2 = w * ((a * a - 1.0 / th) * p - 2.0 * a * dp + ddp);
            (d1, d2)
        };
        let pieces = |xi: f64| -> (f64, f64, f64) {
            let q = xi * xi - 2.0 * phi;
            if xi >= 0.0 || q <= 0.0 {
                return (0.0, 0.0, 0.0);
            }
            let zeta = -q.sqrt();
            let (d1, d2) = scaled(zeta, xi);
            // d_xi g^s, d_x d_xi g^s and d_xi^2 g^s, each over M(xi)^{1/2}.
            let gxi = d1 * xi / zeta;
            let gxxi = -dphi * xi / (zeta * zeta) * (d2 - d1 / zeta);
            let gxixi = d2 * (xi / zeta).powi(2) - d1 * 2.0 * phi / zeta.powi(3);
            (gxi, gxxi, gxixi)
        };
        let end_part = |xi: f64| -> f64 {
            let (p, dp, _) = es.psi_derivs(xi);
            let a = (xi - u) / th;
            (0.5 * es.log_m1(xi)).exp() * (-a * p + dp)
        };
        let lo = es.lower_velocity() - (2.0 * phi).sqrt();
        let hi = 0.0;
        let extra = [
            -(r * r + 2.0 * phi).sqrt(),
            -((r + sigma).powi(2) + 2.0 * phi).sqrt(),
            -r,
            -r - sigma,
        ];
        let mut pts = es.breakpoints(lo, hi, &extra);
        if pts.first() != Some(&lo) {
            pts.insert(0, lo);
        }
        let opts = QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-10,
            max_segments: 4000,
        };
        let q = |f: &dyn Fn(f64) -> f64| -> Result<f64> {
            Ok(crate::quadrature::integrate_with_breaks(f, &pts, &opts)?.value)
        };
        let defect_sq = q(&|xi| (pieces(xi).0 - end_part(xi)).powi(2))?;
        let dx_sq = q(&|xi| pieces(xi).1.powi(2))?;
        let h_sq = q(&|xi| pieces(xi).0.powi(2))?;
        let dh_sq = q(&|xi| {
            let (gxi, _, gxixi) = pieces(xi);
            (gxixi + gxi * (xi - u) / (2.0 * th)).powi(2)
        })?;
        let defect = defect_sq.max(0.0).sqrt();
        let defect_dx = dx_sq.max(0.0).sqrt();
        rows.push(FsEstimateRow {
            x,
            phi,
            dphi,
            defect,
            defect_dx,
            gradient: (dh_sq + h_sq / (2.0 * th)).max(0.0).sqrt(),
            defect_over_phi: if phi > 0.0 { defect / phi } else { 0.0 },
            defect_dx_over_dphi: if dphi != 0.0 { defect_dx / dphi.abs() } else { 0.0 },
        });
    }
    Ok(FsEstimateReport { phi_b: sol.phi_b, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PlasmaConfig;

    fn es(u: f64, th: f64) -> EndState {
        EndState::normalize_quasi_neutral(&PlasmaConfig {
            u_infty: u,
            theta_infty: th,
            r: 0.5,
            sigma: 0.1,
            phi_b: 0.0,
            electron_model: ElectronModel::Boltzmann,
        })
        .unwrap()
    }

    #[test]
    fn ion_density_at_zero_is_one() {
        let e = es(-2.0, 0.01);
        assert!((ion_density(&e, 0.0).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn potential_integral_matches_nested_quadrature() {
        let e = es(-1.5, 0.2);
        for &phi in &[0.05, 0.4, 1.3] {
            let nested = integrate(
                |s| ion_density(&e, s).unwrap(),
                0.0,
                phi,
                &QuadOptions { rel_tol: 1e-11, ..Default::default() },
            )
            .unwrap()
            .value;
            let closed = ion_potential_integral(&e, phi).unwrap();
            assert!((nested - closed).abs() < 1e-10 * closed.max(1e-3), "{phi}");
        }
    }

    #[test]
    fn hermite_profile_is_monotone() {
        let e = es(-2.0, 0.01);
        let sol = solve_stationary_potential(&e, ElectronModel::Boltzmann, 0.1, &Default::default()).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..2000 {
            let x = i as f64 * 0.01;
            let (p, d) = sol.phi_and_dphi_at(x);
            assert!(p <= prev && p >= 0.0 && p <= 0.1);
            assert!(d < 0.0);
            prev = p;
        }
    }
}
