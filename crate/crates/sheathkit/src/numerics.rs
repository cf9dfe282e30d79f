//! Grids, finite differences, trapezoid weights and a tridiagonal solver.

use serde::{Deserialize, Serialize};

/// `n` equally spaced nodes covering `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub start: f64,
    pub end: f64,
    pub n: usize,
}

impl UniformGrid {
    pub fn new(start: f64, end: f64, n: usize) -> Self {
        assert!(n >= 2 && end > start, "degenerate grid [{start}, {end}] with {n} nodes");
        Self { start, end, n }
    }

    pub fn spacing(&self) -> f64 {
        (self.end - self.start) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.end
        } else {
            self.start + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.n];
        w[0] = 0.5 * h;
        w[self.n - 1] = 0.5 * h;
        w
    }
}

/// First derivative on a uniform grid: centered inside, one-sided second
/// order at the ends.
pub fn derivative(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    let mut d = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let s = (u[1] - u[0]) / h;
            d[0] = s;
            d[1] = s;
        }
        return d;
    }
    d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
    d
}

/// Strided variant of [`derivative`] for one axis of a row-major array.
pub fn derivative_strided(u: &[f64], h: f64, len: usize, stride: usize, offset: usize, out: &mut [f64]) {
    let at = |i: usize| u[offset + i * stride];
    if len < 3 {
        for i in 0..len {
            out[offset + i * stride] = 0.0;
        }
        return;
    }
    out[offset] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
    for i in 1..len - 1 {
        out[offset + i * stride] = (at(i + 1) - at(i - 1)) / (2.0 * h);
    }
    out[offset + (len - 1) * stride] = (3.0 * at(len - 1) - 4.0 * at(len - 2) + at(len - 3)) / (2.0 * h);
}

/// Second derivative on a uniform grid, second order everywhere.
pub fn second_derivative(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    assert!(n >= 4, "second derivative needs four nodes");
    let h2 = h * h;
    let mut d = vec![0.0; n];
    d[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h2;
    for i in 1..n - 1 {
        d[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / h2;
    }
    d[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) / h2;
    d
}

/// Solves a tridiagonal system by the Thomas algorithm. `sub[0]` and
/// `sup[n-1]` are ignored. Returns `None` on a zero pivot.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 || !piv.is_finite() {
        return None;
    }
    c[0] = sup[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - sub[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { sup[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}

/// Ordinary least-squares line `y = a + b x`, returning `(a, b, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (intercept, slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense() {
        let sub = [0.0, 1.0, -2.0, 0.5];
        let diag = [4.0, 5.0, 6.0, 3.0];
        let sup = [1.0, -1.0, 2.0, 0.0];
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let mut rhs = [0.0; 4];
        for i in 0..4 {
            rhs[i] = diag[i] * x_true[i];
            if i > 0 {
                rhs[i] += sub[i] * x_true[i - 1];
            }
            if i < 3 {
                rhs[i] += sup[i] * x_true[i + 1];
            }
        }
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        for i in 0..4 {
            assert!((x[i] - x_true[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn differences_are_second_order() {
        let err = |n: usize| {
            let g = UniformGrid::new(0.0, 2.0, n);
            let u: Vec<f64> = g.nodes().iter().map(|x| x.sin()).collect();
            let d = derivative(&u, g.spacing());
            let dd = second_derivative(&u, g.spacing());
            let e1 = g.nodes().iter().zip(&d).map(|(x, v)| (v - x.cos()).abs()).fold(0.0, f64::max);
            let e2 = g.nodes().iter().zip(&dd).map(|(x, v)| (v + x.sin()).abs()).fold(0.0, f64::max);
            (e1, e2)
        };
        let (a1, a2) = err(41);
        let (b1, b2) = err(81);
        assert!((a1 / b1).log2() > 1.9);
        assert!((a2 / b2).log2() > 1.9);
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (a, b, r2) = linear_fit(&x, &y);
        assert!((a - 2.0).abs() < 1e-13 && (b + 0.5).abs() < 1e-13 && (r2 - 1.0).abs() < 1e-13);
    }
}
