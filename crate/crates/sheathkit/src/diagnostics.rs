//! Weighted norms of the perturbation, hydrodynamic moments, the energy
//! functional, the stability margin and its matrix form, rate fits, and the
//! search for constants satisfying the stability condition.
//!
//! The evolved unknown is the wall-normal marginal `g`. The full perturbation
//! is `f(x, xi) = M_1^{-1/2}(g - g_ref)(x, xi_1) * m_perp^{1/2}(xi')` with
//! `m_perp` the transverse Maxwellian, so every `xi'` integral is analytic:
//! `|f|^2` integrates to the reduced `f^2`, and `|grad_{xi'} f|^2` adds
//! `f^2 / (2 theta)`.

use serde::{Deserialize, Serialize};

use crate::config::{ElectronModel, PlasmaConfig};
use crate::distributions::{eta, EndState};
use crate::error::{Result, SheathError};
use crate::numerics::{derivative_strided, linear_fit, UniformGrid};
use crate::vlasov::PhaseSpaceField;

/// Below this both `g` and the reference count as empty.
const EMPTY: f64 = 1e-300;

/// `f = M_1^{-1/2} (g - reference)` on the grid of `field`, in log space.
pub fn perturbation_f(field: &PhaseSpaceField, reference: &[f64], es: &EndState) -> Result<Vec<f64>> {
    let nv = field.v.n;
    let half_log_m: Vec<f64> = field.v.nodes().iter().map(|&v| 0.5 * es.log_m1(v)).collect();
    let mut out = vec![0.0; field.values.len()];
    for (k, (&g, &r)) in field.values.iter().zip(reference).enumerate() {
        if g.abs() < EMPTY && r.abs() < EMPTY {
            continue;
        }
        let d = g - r;
        if d == 0.0 {
            continue;
        }
        let l = d.abs().ln() - half_log_m[k % nv];
        if l > 700.0 {
            return Err(SheathError::WeightOverflow { ix: k / nv, iv: k % nv });
        }
        out[k] = d.signum() * l.exp();
    }
    Ok(out)
}

/// Inverse of [`perturbation_f`]: `M_1^{1/2} f`.
pub fn weighted_to_raw(f: &[f64], v: &UniformGrid, es: &EndState) -> Vec<f64> {
    let nv = v.n;
    let half: Vec<f64> = v.nodes().iter().map(|&x| 0.5 * es.log_m1(x)).collect();
    f.iter()
        .enumerate()
        .map(|(k, &a)| if a == 0.0 { 0.0 } else { a * half[k % nv].exp() })
        .collect()
}

/// `f_x` and `f_xi` by centered differences (one-sided at the edges).
pub fn gradients(f: &[f64], x: &UniformGrid, v: &UniformGrid) -> (Vec<f64>, Vec<f64>) {
    let (nx, nv) = (x.n, v.n);
    let mut fx = vec![0.0; f.len()];
    let mut fv = vec![0.0; f.len()];
    for iv in 0..nv {
        derivative_strided(f, x.spacing(), nx, nv, iv, &mut fx);
    }
    for ix in 0..nx {
        derivative_strided(f, v.spacing(), nv, 1, ix * nv, &mut fv);
    }
    (fx, fv)
}

/// Weighted norms of a perturbation `f` (all with weight `e^{beta x}`).
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct WeightedNorms {
    pub beta: f64,
    /// `||e^{beta x/2} f||`.
    pub l2: f64,
    /// Full `H^1` norm including the transverse velocity derivatives.
    pub h1: f64,
    /// `||e^{beta x/2} |xi_1|^{1/2} f chi(xi_1 < 0)||`.
    pub dissipation: f64,
    /// Same with `f_x` in place of `f`.
    pub dissipation_dx: f64,
    /// Squared pieces: `||f||^2`, `||f_x||^2`, `||f_{xi_1}||^2`.
    pub f_sq: f64,
    pub fx_sq: f64,
    pub fv_sq: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(SheathError::InvalidConfig(format!("weight exponent must be >= 0, got {beta}")));
    }
    Ok(())
}

pub fn weighted_h1(f: &[f64], x: &UniformGrid, v: &UniformGrid, theta: f64, beta: f64) -> Result<WeightedNorms> {
    check_beta(beta)?;
    let (fx, fv) = gradients(f, x, v);
    let nv = v.n;
    let wx: Vec<f64> = x
        .weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * (beta * x.node(i)).exp())
        .collect();
    let wv = v.weights();
    let vs = v.nodes();
    let (mut s0, mut sx, mut sv, mut d0, mut d1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &a) in f.iter().enumerate() {
        let (ix, iv) = (k / nv, k % nv);
        let w = wx[ix] * wv[iv];
        s0 += w * a * a;
        sx += w * fx[k] * fx[k];
        sv += w * fv[k] * fv[k];
        if vs[iv] < 0.0 {
            let wd = w * vs[iv].abs();
            d0 += wd * a * a;
            d1 += wd * fx[k] * fx[k];
        }
    }
    Ok(WeightedNorms {
        beta,
        l2: s0.sqrt(),
        h1: (s0 * (1.0 + 0.5 / theta) + sx + sv).sqrt(),
        dissipation: d0.sqrt(),
        dissipation_dx: d1.sqrt(),
        f_sq: s0,
        fx_sq: sx,
        fv_sq: sv,
    })
}

/// Density and flux perturbations.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Moments {
    pub n: Vec<f64>,
    pub m: Vec<f64>,
}

/// `n = int M_1^{1/2} f dxi_1`, `m = int xi_1 M_1^{1/2} f dxi_1` (trapezoid).
pub fn moments(f: &[f64], x: &UniformGrid, v: &UniformGrid, es: &EndState) -> Moments {
    let nv = v.n;
    let wv = v.weights();
    let vs = v.nodes();
    let sq: Vec<f64> = vs.iter().map(|&a| (0.5 * es.log_m1(a)).exp()).collect();
    let mut n = vec![0.0; x.n];
    let mut m = vec![0.0; x.n];
    for ix in 0..x.n {
        let row = &f[ix * nv..(ix + 1) * nv];
        for iv in 0..nv {
            let a = wv[iv] * sq[iv] * row[iv];
            n[ix] += a;
            m[ix] += a * vs[iv];
        }
    }
    Moments { n, m }
}

/// `int e^{alpha x} u^2 dx` by the trapezoid rule.
pub fn weighted_sq_x(u: &[f64], x: &UniformGrid, alpha: f64) -> f64 {
    x.weights()
        .iter()
        .zip(u)
        .enumerate()
        .map(|(i, (w, a))| w * (alpha * x.node(i)).exp() * a * a)
        .sum()
}

/// `int int e^{alpha x} u^2 dx dxi_1` by the trapezoid rule.
pub fn weighted_sq_xv(u: &[f64], x: &UniformGrid, v: &UniformGrid, alpha: f64) -> f64 {
    let nv = v.n;
    let wv = v.weights();
    x.weights()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let e = w * (alpha * x.node(i)).exp();
            e * u[i * nv..(i + 1) * nv].iter().zip(&wv).map(|(a, b)| a * a * b).sum::<f64>()
        })
        .sum()
}

/// `E = ||f||^2 + ||f_x||^2 + ||n||^2 / theta + c (||grad_xi f||^2)`, all with
/// weight `e^{beta x}`. `coefficient` stands in for the ratio of the unknown
/// coercivity constants and defaults to one.
pub fn energy_functional(norms: &WeightedNorms, n_sq: f64, theta: f64, coefficient: f64) -> f64 {
    let grad_xi = norms.fv_sq + norms.f_sq * 0.5 / theta;
    norms.f_sq + norms.fx_sq + n_sq / theta + coefficient * grad_xi
}

/// Every functional of one snapshot.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SnapshotDiagnostics {
    pub norms: WeightedNorms,
    pub n_l2: f64,
    pub energy: f64,
}

pub fn snapshot_diagnostics(
    f: &[f64],
    x: &UniformGrid,
    v: &UniformGrid,
    es: &EndState,
    beta: f64,
    energy_coefficient: f64,
) -> Result<SnapshotDiagnostics> {
    let norms = weighted_h1(f, x, v, es.theta(), beta)?;
    let mo = moments(f, x, v, es);
    let n_sq = weighted_sq_x(&mo.n, x, beta);
    Ok(SnapshotDiagnostics {
        norms,
        n_l2: n_sq.sqrt(),
        energy: energy_functional(&norms, n_sq, es.theta(), energy_coefficient),
    })
}

/// `(nodes, weights)` of the `n`-point Gauss-Hermite rule for `e^{-t^2}`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    let nf = n as f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // Orthonormal recurrence.
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Weighted `H^1` norm of the full perturbation computed by tensor quadrature
/// over `(x, xi_1, xi_2, xi_3)`. The transverse directions use `nq`
/// Gauss-Hermite nodes and numerical differentiation of the interpolating
/// polynomial; this is the independent check of the reduction used by
/// [`weighted_h1`].
pub fn brute_force_h1(f: &[f64], x: &UniformGrid, v: &UniformGrid, theta: f64, beta: f64, nq: usize) -> Result<f64> {
    check_beta(beta)?;
    let (t, wt) = gauss_hermite(nq);
    let scale = (2.0 * theta).sqrt();
    let s: Vec<f64> = t.iter().map(|a| scale * a).collect();
    // Quadrature weights for int h(s) ds with h containing e^{-s^2/(2 theta)}.
    let ws: Vec<f64> = wt.iter().zip(&t).map(|(w, a)| scale * w * (a * a).exp()).collect();
    // Transverse factor m^{1/2}(s) = (2 pi theta)^{-1/4} e^{-s^2/(4 theta)} per direction.
    let gauss = |a: f64| (-a * a / (4.0 * theta)).exp();
    let amp = (2.0 * std::f64::consts::PI * theta).powf(-0.25);
    let diff = lagrange_derivative_matrix(&s);

    let nv = v.n;
    let (fx, fv) = gradients(f, x, v);
    let wx: Vec<f64> = x
        .weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * (beta * x.node(i)).exp())
        .collect();
    let wv = v.weights();
    let mut total = 0.0;
    let mut p = vec![0.0; nq];
    let mut dp = vec![0.0; nq];
    let mut vals = vec![vec![0.0; nq]; nq];
    for k in 0..f.len() {
        let w = wx[k / nv] * wv[k % nv];
        // Sampled transverse slice of the full perturbation and its x, xi_1 derivatives.
        for a in 0..nq {
            for b in 0..nq {
                vals[a][b] = amp * amp * gauss(s[a]) * gauss(s[b]);
            }
        }
        for a in 0..nq {
            for b in 0..nq {
                let m = vals[a][b];
                let (full, gx, gv) = (f[k] * m, fx[k] * m, fv[k] * m);
                // d/ds_2 on the line b = const: strip the Gaussian envelope,
                // differentiate the interpolating polynomial, put it back.
                for c in 0..nq {
                    p[c] = f[k] * vals[c][b] / gauss(s[c]);
                }
                mat_vec(&diff, &p, &mut dp);
                let g2 = gauss(s[a]) * (dp[a] - s[a] / (2.0 * theta) * p[a]);
                for c in 0..nq {
                    p[c] = f[k] * vals[a][c] / gauss(s[c]);
                }
                mat_vec(&diff, &p, &mut dp);
                let g3 = gauss(s[b]) * (dp[b] - s[b] / (2.0 * theta) * p[b]);
                total += w * ws[a] * ws[b] * (full * full + gx * gx + gv * gv + g2 * g2 + g3 * g3);
            }
        }
    }
    Ok(total.sqrt())
}

fn mat_vec(m: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Differentiation matrix of the Lagrange interpolant through `nodes`.
fn lagrange_derivative_matrix(nodes: &[f64]) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let bary: Vec<f64> = (0..n)
        .map(|j| {
            1.0 / (0..n)
                .filter(|&k| k != j)
                .map(|k| nodes[j] - nodes[k])
                .product::<f64>()
        })
        .collect();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                d[i][j] = bary[j] / bary[i] / (nodes[i] - nodes[j]);
                diag -= d[i][j];
            }
        }
        d[i][i] = diag;
    }
    d
}

/// Off-diagonal entries, matrix and margin of the stability condition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityBudget {
    pub beta: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub rho_infty: f64,
    pub mu_infty: f64,
    pub d1: f64,
    pub d2: f64,
    pub matrix: [[f64; 3]; 3],
    /// `|u|/theta - d1^2 - d2^2`, which equals `det D`.
    pub asp1_lhs: f64,
    pub leading_minors: [f64; 3],
    pub positive_definite: bool,
}

impl StabilityBudget {
    /// `w^T D w`.
    pub fn quadratic_form(&self, w: [f64; 3]) -> f64 {
        let d = &self.matrix;
        (0..3).map(|i| (0..3).map(|j| w[i] * d[i][j] * w[j]).sum::<f64>()).sum()
    }
}

/// Builds the budget from raw numbers; used by [`check_asp1`] and by tests
/// that draw parameters at random.
pub fn stability_budget(
    u: f64,
    theta: f64,
    rho: f64,
    mu: f64,
    r: f64,
    epsilon: f64,
    beta: f64,
) -> Result<StabilityBudget> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(SheathError::InvalidConfig(format!("beta must lie in (0, 1), got {beta}")));
    }
    if !(epsilon > 0.0 && epsilon < 0.5 * r) {
        return Err(SheathError::InvalidConfig(format!("epsilon must lie in (0, r/2), got {epsilon}")));
    }
    if !(theta > 0.0 && rho > 0.0 && mu >= 0.0 && u.is_finite()) {
        return Err(SheathError::InvalidConfig("need theta > 0, rho > 0, mu >= 0".into()));
    }
    let et = eta(beta)?;
    let gap = (r - 2.0 * epsilon).sqrt();
    let d1 = ((rho / theta).sqrt() * (1.0 + et).sqrt() + mu / beta) * (1.0 + et).sqrt() / gap;
    let d2 = (1.0 + beta * beta * (1.0 + et) * (1.0 + et)).sqrt() * mu / (beta * gap);
    let c = u.abs() / theta;
    let matrix = [[1.0, 0.0, -d1], [0.0, 1.0, -d2], [-d1, -d2, c]];
    let asp1_lhs = c - d1 * d1 - d2 * d2;
    let det = c - d1 * d1 - d2 * d2;
    let leading_minors = [1.0, 1.0, det];
    Ok(StabilityBudget {
        beta,
        epsilon,
        eta: et,
        rho_infty: rho,
        mu_infty: mu,
        d1,
        d2,
        matrix,
        asp1_lhs,
        leading_minors,
        positive_definite: leading_minors.iter().all(|m| *m > 0.0),
    })
}

pub fn check_asp1(es: &EndState, beta: f64, epsilon: f64) -> Result<StabilityBudget> {
    let mu = es.mu_infty()?;
    stability_budget(es.u(), es.theta(), es.rho_infty, mu, es.config.r, epsilon, beta)
}

/// Which parameter the constant search varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Fixed `u`, cold limit: scan `theta` and `beta`.
    ConditionI,
    /// Fixed `theta`, `beta = 1/2`: scan `|u|`.
    ConditionIi,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRequest {
    pub mode: SelectionMode,
    /// Used by condition (i).
    #[serde(default)]
    pub u_infty: Option<f64>,
    /// Used by condition (ii).
    #[serde(default)]
    pub theta_infty: Option<f64>,
    pub r: f64,
    pub sigma: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantSelection {
    pub mode: SelectionMode,
    pub beta: f64,
    pub u_infty: f64,
    pub theta_infty: f64,
    pub rho_infty: f64,
    pub mu_infty: f64,
    pub bohm_integral: f64,
    pub margin: f64,
    pub candidates_tried: usize,
}

fn end_state_for(u: f64, theta: f64, r: f64, sigma: f64) -> Result<EndState> {
    EndState::normalize_quasi_neutral(&PlasmaConfig {
        u_infty: u,
        theta_infty: theta,
        r,
        sigma,
        phi_b: 0.0,
        electron_model: ElectronModel::Boltzmann,
    })
}

/// Geometric search for parameters satisfying the stability condition with
/// the Bohm criterion in force. Returns the first hit in scan order.
pub fn select_constants(req: &SelectionRequest) -> Result<ConstantSelection> {
    let SelectionRequest { mode, r, sigma, epsilon, .. } = *req;
    if !(r > 0.0 && sigma > 0.0 && epsilon > 0.0 && epsilon < 0.5 * r) {
        return Err(SheathError::InvalidConfig("need r, sigma > 0 and 0 < epsilon < r/2".into()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut tried = 0usize;
    let mut consider = |es: &EndState, betas: &[f64]| -> Result<Option<ConstantSelection>> {
        let k = es.bohm_integral()?;
        let mu = es.mu_infty()?;
        for &beta in betas {
            tried += 1;
            let b = stability_budget(es.u(), es.theta(), es.rho_infty, mu, r, epsilon, beta)?;
            best = best.max(b.asp1_lhs);
            if k < 1.0 && b.asp1_lhs > 0.0 {
                return Ok(Some(ConstantSelection {
                    mode,
                    beta,
                    u_infty: es.u(),
                    theta_infty: es.theta(),
                    rho_infty: es.rho_infty,
                    mu_infty: mu,
                    bohm_integral: k,
                    margin: b.asp1_lhs,
                    candidates_tried: tried,
                }));
            }
        }
        Ok(None)
    };
    match mode {
        SelectionMode::ConditionI => {
            let u = req
                .u_infty
                .ok_or_else(|| SheathError::InvalidConfig("condition (i) needs u_infty".into()))?;
            if u.abs() <= 1.0 || u >= 0.0 {
                return Err(SheathError::InvalidConfig(format!(
                    "condition (i) needs u_infty < -1, got {u}"
                )));
            }
            if r - 2.0 * epsilon < 1.0 {
                return Err(SheathError::InvalidConfig(format!(
                    "condition (i) needs r - 2 epsilon >= 1, got {}",
                    r - 2.0 * epsilon
                )));
            }
            let betas: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
            let mut theta = 1.0;
            while theta >= 1e-8 * (1.0 - 1e-12) {
                let es = end_state_for(u, theta, r, sigma)?;
                if let Some(hit) = consider(&es, &betas)? {
                    return Ok(hit);
                }
                theta *= 0.5;
            }
        }
        SelectionMode::ConditionIi => {
            let theta = req
                .theta_infty
                .ok_or_else(|| SheathError::InvalidConfig("condition (ii) needs theta_infty".into()))?;
            if !(theta > 0.0) {
                return Err(SheathError::InvalidConfig("theta_infty must be positive".into()));
            }
            for k in 0..=16 {
                let mag = 2f64.powi(k);
                if mag <= r + 2.0 * sigma {
                    continue;
                }
                let es = end_state_for(-mag, theta, r, sigma)?;
                if let Some(hit) = consider(&es, &[0.5])? {
                    return Ok(hit);
                }
            }
        }
    }
    Err(SheathError::NotFound { best_margin: best })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Decay,
    Growth,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RateFit {
    pub gamma: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `ln norm = a + b t` over `window` and reports `gamma = -2b` for decay
/// or `2b` for growth.
pub fn fit_rate(t: &[f64], norm: &[f64], window: (f64, f64), kind: RateKind) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&a, &b) in t.iter().zip(norm) {
        if a < window.0 || a > window.1 {
            continue;
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(SheathError::DegenerateSeries(format!("norm {b} at t = {a}")));
        }
        xs.push(a);
        ys.push(b.ln());
    }
    if xs.len() < 3 {
        return Err(SheathError::DegenerateSeries(format!(
            "only {} samples in window [{}, {}]",
            xs.len(),
            window.0,
            window.1
        )));
    }
    let (intercept, slope, r_squared) = linear_fit(&xs, &ys);
    let gamma = match kind {
        RateKind::Decay => -2.0 * slope,
        RateKind::Growth => 2.0 * slope,
    };
    Ok(RateFit {
        gamma,
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_hermite_integrates_moments() {
        let (x, w) = gauss_hermite(8);
        let sp = std::f64::consts::PI.sqrt();
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(a, b)| a * a * b).sum();
        let m14: f64 = x.iter().zip(&w).map(|(a, b)| a.powi(14) * b).sum();
        assert!((m0 - sp).abs() < 1e-13);
        assert!((m2 - sp / 2.0).abs() < 1e-13);
        // 13!! / 2^7 * sqrt(pi)
        assert!((m14 / (135135.0 / 128.0 * sp) - 1.0).abs() < 1e-12);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn weighted_gaussian_norm_matches_closed_form() {
        // f = e^{-(x-c)^2/(2s^2)} in x times a Gaussian in xi, weight e^{beta x}.
        let (c, s, beta) = (10.0, 1.0, 0.3);
        let x = UniformGrid::new(0.0, 20.0, 801);
        let v = UniformGrid::new(-8.0, 8.0, 641);
        let nv = v.n;
        let mut f = vec![0.0; x.n * nv];
        for i in 0..x.n {
            for j in 0..nv {
                let a = x.node(i) - c;
                let b = v.node(j);
                f[i * nv + j] = (-a * a / (2.0 * s * s) - b * b / 2.0).exp();
            }
        }
        let n = weighted_h1(&f, &x, &v, 1.0, beta).unwrap();
        // int e^{beta x} e^{-(x-c)^2/s^2} = s sqrt(pi) e^{beta c + beta^2 s^2/4}
        let ix = s * std::f64::consts::PI.sqrt() * (beta * c + beta * beta * s * s / 4.0).exp();
        let iv = std::f64::consts::PI.sqrt();
        assert!((n.f_sq / (ix * iv) - 1.0).abs() < 1e-8);
        // beta = 0 is the plain norm.
        let plain = weighted_h1(&f, &x, &v, 1.0, 0.0).unwrap();
        let direct: f64 = weighted_sq_xv(&f, &x, &v, 0.0);
        assert!((plain.f_sq - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn rate_fit_on_synthetic_series() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().map(|a| (-0.15 * a).exp()).collect();
        let fit = fit_rate(&t, &y, (0.0, 10.0), RateKind::Decay).unwrap();
        assert!((fit.gamma - 0.3).abs() < 1e-12 && (fit.r_squared - 1.0).abs() < 1e-12);
        let flat = vec![2.0; t.len()];
        assert!(fit_rate(&t, &flat, (0.0, 10.0), RateKind::Decay).unwrap().gamma.abs() < 1e-12);
        let bad: Vec<f64> = y.iter().map(|a| a - 0.5).collect();
        assert!(matches!(
            fit_rate(&t, &bad, (0.0, 10.0), RateKind::Decay),
            Err(SheathError::DegenerateSeries(_))
        ));
    }

    #[test]
    fn zero_margin_limit() {
        // mu = 0 and eta -> 0: lhs * theta = |u| - rho / (r - 2 eps).
        let b = stability_budget(-3.0, 0.5, 1.2, 0.0, 2.0, 0.25, 1e-6).unwrap();
        let expect = (3.0 - 1.2 / 1.5) / 0.5;
        assert!((b.asp1_lhs - expect).abs() < 1e-9);
    }
}
