//! Globally adaptive 7/15-point Gauss-Kronrod quadrature.

use crate::error::{Result, SheathError};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_segments: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            max_segments: 4000,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    // Standard error rescaling: the raw Gauss/Kronrod difference is very
    // pessimistic for smooth integrands.
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Segment { a, b, value, error: err }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<QuadResult> {
    integrate_with_breaks(f, &[a, b], opts)
}

/// Integrates `f` over `[points[0], points[last]]`, with the interior points
/// used as initial subdivision. Points must be nondecreasing.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    points: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult> {
    if points.len() < 2 {
        return Err(SheathError::QuadratureFailure("need at least two points".into()));
    }
    if points.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(SheathError::QuadratureFailure(format!(
            "breakpoints not sorted: {points:?}"
        )));
    }
    let mut segs: Vec<Segment> = points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| kronrod15(&f, w[0], w[1]))
        .collect();
    let mut evaluations = 15 * segs.len();
    if segs.is_empty() {
        return Ok(QuadResult { value: 0.0, error: 0.0, evaluations });
    }
    loop {
        let value: f64 = segs.iter().map(|s| s.value).sum();
        let error: f64 = segs.iter().map(|s| s.error).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(SheathError::QuadratureFailure("non-finite integrand".into()));
        }
        let tol = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= tol {
            return Ok(QuadResult { value, error, evaluations });
        }
        if segs.len() >= opts.max_segments {
            return Err(SheathError::QuadratureFailure(format!(
                "segment limit reached (value {value:e}, error {error:e}, tol {tol:e})"
            )));
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, s)| if s.error > acc.1 { (i, s.error) } else { acc });
        let s = segs[worst];
        let mid = 0.5 * (s.a + s.b);
        if !(mid > s.a && mid < s.b) {
            // Interval cannot be split further in floating point.
            return Ok(QuadResult { value, error, evaluations });
        }
        segs[worst] = kronrod15(&f, s.a, mid);
        segs.push(kronrod15(&f, mid, s.b));
        evaluations += 30;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| x.powi(6) - 3.0 * x, -1.0, 2.0, &QuadOptions::default()).unwrap();
        let exact = (2f64.powi(7) + 1.0) / 7.0 - 1.5 * (4.0 - 1.0);
        assert!((r.value - exact).abs() < 1e-13);
    }

    #[test]
    fn narrow_gaussian_with_breaks() {
        let s = 1e-3;
        let g = |x: f64| (-(x - 0.3) * (x - 0.3) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let mut pts = vec![-5.0];
        for j in -12..=12 {
            pts.push(0.3 + j as f64 * s);
        }
        pts.push(5.0);
        let r = integrate_with_breaks(g, &pts, &QuadOptions::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn endpoint_sqrt_singularity() {
        let r = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, &QuadOptions { rel_tol: 1e-10, ..Default::default() }).unwrap();
        assert!((r.value - 2.0).abs() < 1e-8);
    }
}
