use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sheathkit::distributions::EndState;
use sheathkit::numerics::UniformGrid;
use sheathkit::vlasov::{PhaseSpaceField, VlasovSolver, XBoundary};
use sheathkit::{ElectronModel, PlasmaConfig};

fn end_state() -> EndState {
    EndState::normalize_quasi_neutral(&PlasmaConfig {
        u_infty: -2.0,
        theta_infty: 0.01,
        r: 0.5,
        sigma: 0.1,
        phi_b: 0.0,
        electron_model: ElectronModel::Boltzmann,
    })
    .unwrap()
}

fn solver(field: PhaseSpaceField) -> VlasovSolver {
    VlasovSolver::new(field, &end_state(), ElectronModel::Boltzmann, 0.0)
}

fn fill(x: UniformGrid, v: UniformGrid, mut g: impl FnMut(f64, f64) -> f64) -> PhaseSpaceField {
    let mut f = PhaseSpaceField::zeros(x, v);
    for ix in 0..x.n {
        for iv in 0..v.n {
            f.values[ix * v.n + iv] = g(x.node(ix), v.node(iv));
        }
    }
    f
}

#[test]
fn free_transport_converges() {
    // Periodic rows of period n * dx, advected at two speeds to time 1.
    let err = |n: usize| {
        let x = UniformGrid::new(0.0, 1.0, n);
        let period = n as f64 * x.spacing();
        let v = UniformGrid::new(-0.7, 0.45, 2);
        let g0 = |a: f64| 1.0 + 0.5 * (2.0 * PI * a / period).sin();
        let mut s = solver(fill(x, v, |a, _| g0(a)));
        s.boundary = XBoundary::Periodic;
        let steps = 4 * n;
        for _ in 0..steps {
            s.advect_x(1.0 / steps as f64);
        }
        let mut worst: f64 = 0.0;
        for ix in 0..n {
            for iv in 0..2 {
                let exact = g0(x.node(ix) - v.node(iv));
                worst = worst.max((s.field.at(ix, iv) - exact).abs());
            }
        }
        worst
    };
    let e: Vec<f64> = [32, 64, 128].iter().map(|&n| err(n)).collect();
    for w in e.windows(2) {
        assert!((w[0] / w[1]).log2() > 1.8, "errors {e:?}");
    }
}

#[test]
fn integer_velocity_shift_is_exact() {
    let x = UniformGrid::new(0.0, 1.0, 4);
    let v = UniformGrid::new(-1.0, 1.0, 21);
    let bump = |b: f64| (1.0 - b * b).max(0.0).powi(3);
    let f = fill(x, v, |_, b| bump(2.0 * b));
    let mut s = solver(f.clone());
    let dt = 0.1;
    // E dt / dv = 2 cells.
    let e = vec![2.0 * v.spacing() / dt; x.n];
    s.advect_v(&e, dt);
    for ix in 0..x.n {
        for iv in 2..v.n {
            assert!((s.field.at(ix, iv) - f.at(ix, iv - 2)).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_field_leaves_velocity_untouched() {
    let x = UniformGrid::new(0.0, 5.0, 16);
    let v = UniformGrid::new(-3.0, 1.0, 32);
    let f = fill(x, v, |a, b| (-(a - 2.0).powi(2) - (b + 1.0).powi(2)).exp());
    let mut s = solver(f.clone());
    s.advect_v(&vec![0.0; x.n], 0.3);
    assert_eq!(s.field.values, f.values);
}

#[test]
fn acceleration_conserves_each_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = UniformGrid::new(0.0, 5.0, 12);
    let v = UniformGrid::new(-4.0, 4.0, 64);
    let f = fill(x, v, |_, b| if b.abs() < 2.0 { rng.gen_range(0.0..1.0) } else { 0.0 });
    let mut s = solver(f.clone());
    let e: Vec<f64> = (0..x.n).map(|i| 0.4 * (i as f64 - 5.5)).collect();
    s.advect_v(&e, 0.37);
    for ix in 0..x.n {
        let before: f64 = f.column(ix).iter().sum();
        let after: f64 = s.field.column(ix).iter().sum();
        assert!((before - after).abs() < 1e-12 * before);
        assert!(s.field.column(ix).iter().all(|&a| a >= 0.0));
    }
    assert!(s.ledger.velocity_inflow.abs() < 1e-14);
}

#[test]
fn absorbing_boundaries_and_ledger() {
    let es = end_state();
    let x = UniformGrid::new(0.0, 10.0, 64);
    let v = UniformGrid::new(-3.0, 3.0, 64);
    let f = fill(x, v, |a, b| (1.0 + 0.3 * (a / 3.0).sin()) * (-(b + 0.5).powi(2)).exp());
    let mut s = VlasovSolver::new(f, &es, ElectronModel::Boltzmann, 0.0);
    let m0 = s.field.cell_mass();
    for _ in 0..20 {
        s.advect_x(0.05);
    }
    for iv in 0..v.n {
        let b = v.node(iv);
        if b > 0.0 {
            assert_eq!(s.field.at(0, iv), 0.0);
        } else if b < 0.0 {
            assert_eq!(s.field.at(x.n - 1, iv), es.f_infty(b));
        }
    }
    let drift = s.field.cell_mass() - m0 - s.ledger.net();
    assert!(drift.abs() < 1e-12 * m0, "ledger drift {drift:e}");
    assert!(s.ledger.wall_inflow < 0.0, "mass leaves through the wall");
}

#[test]
fn full_steps_stay_nonnegative() {
    let es = end_state();
    let x = UniformGrid::new(0.0, 8.0, 48);
    let v = UniformGrid::new(-3.5, 1.0, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = fill(x, v, |_, b| es.f_infty(b) * rng.gen_range(0.5..1.5));
    let mut s = VlasovSolver::new(f, &es, ElectronModel::Boltzmann, 0.05);
    let dt = s.cfl_dt(0.8);
    for _ in 0..40 {
        s.step(dt).unwrap();
    }
    let (lo, _) = s.field.min_max();
    assert!(lo >= 0.0, "min {lo}");
}

#[test]
fn periodic_run_is_time_reversible() {
    let es = end_state();
    let n = 64;
    let x = UniformGrid::new(0.0, 4.0, n);
    let v = UniformGrid::new(-3.0, -1.0, n);
    let period = n as f64 * x.spacing();
    let f = fill(x, v, |a, b| es.f_infty(b) * (1.0 + 0.1 * (2.0 * PI * a / period).sin()));
    let g0 = f.values.clone();
    let mut s = VlasovSolver::new(f, &es, ElectronModel::Boltzmann, 0.0);
    s.boundary = XBoundary::Periodic;
    let dt = 0.5 * s.cfl_dt(0.8);
    for _ in 0..20 {
        s.step(dt).unwrap();
    }
    let moved: f64 = s.field.values.iter().zip(&g0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    for _ in 0..20 {
        s.step(-dt).unwrap();
    }
    let back: f64 = s.field.values.iter().zip(&g0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(s.field.t.abs() < 1e-12);
    assert!(back < 1e-2 * moved, "returned to {back:e}, moved {moved:e}");
}
