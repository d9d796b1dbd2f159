use super::*;
use crate::algorithms::{run, AlgorithmConfig};
use crate::inequalities::certified_lambda;
use crate::linalg::Vector;
use crate::model::make_conjugate_1d;
use approx::assert_relative_eq;

fn lambda_star() -> f64 {
    (3.0 - 5f64.sqrt()) / 2.0
}

fn lt() -> f64 {
    2f64.sqrt()
}

fn lx() -> f64 {
    5f64.sqrt()
}

fn conj_c() -> f64 {
    let m = make_conjugate_1d(0.0, 1.0, 1.0).unwrap();
    constant_c(&m, lambda_star(), 0.25).unwrap()
}

#[test]
fn basic_em_bound() {
    let zero = em_bound_basic(lambda_star(), lt(), 0.0, 10).unwrap();
    assert!(zero.values.iter().all(|v| *v == 0.0));

    let curve = em_bound_basic(lambda_star(), lt(), 0.25, 10).unwrap();
    assert_eq!(curve.values.len(), 11);
    assert_eq!(curve.values[0], 0.25);
    let factor = 1.0 - lambda_star() / lt();
    assert_relative_eq!(factor, 0.729909, epsilon = 1e-6);
    for (k, v) in curve.values.iter().enumerate() {
        assert_relative_eq!(*v, 0.25 * factor.powi(k as i32), max_relative = 1e-13);
    }
    assert!(matches!(em_bound_basic(2.0, 1.5, 1.0, 3), Err(Error::InvalidConstants(_))));
    assert!(matches!(em_bound_basic(1.5, 1.5, 1.0, 3), Err(Error::InvalidConstants(_))));
}

#[test]
fn constant_c_cases() {
    // L² = 5, posterior variance at the MLE 1/2, MLE pair = stationary point = (0, 0).
    let c = conj_c();
    assert_relative_eq!(c, 5.0 * 0.5 + 10.0 / lambda_star() * 0.25, epsilon = 1e-12);
    assert_relative_eq!(c, 9.0451, epsilon = 1e-4);

    // Shifted data: the stationary point and MLE pair coincide at (y, y).
    let shifted = make_conjugate_1d(1.7, 1.0, 1.0).unwrap();
    assert_relative_eq!(constant_c(&shifted, lambda_star(), 0.0).unwrap(), 5.0 * 0.5, epsilon = 1e-12);

    let m = make_conjugate_1d(0.0, 1.0, 1.0).unwrap();
    assert!(constant_c(&m, 2.0 * lambda_star(), 0.25).unwrap() < c);
    assert!(constant_c(&m, 0.0, 0.25).is_err());
}

#[test]
fn sharp_grid_shape() {
    let grid = sharp_h_grid(lx());
    assert_eq!(grid.len(), 201);
    assert_eq!(grid[0], 0.0);
    assert_relative_eq!(grid[1], 1e-6, max_relative = 1e-12);
    assert_relative_eq!(grid[200], 1.0 / (4.0 * lx()), max_relative = 1e-12);
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn sharp_bound_with_only_h_zero() {
    let curve = em_bound_sharp_on_grid(lambda_star(), lt(), lx(), 1, conj_c(), 0.25, 30, &[0.0]).unwrap();
    let basic = em_bound_basic(lambda_star(), lt(), 0.25, 30).unwrap();
    for (k, (s, b)) in curve.values.iter().zip(&basic.values).enumerate() {
        let env = (-(k as f64) * lambda_star() / lt()).exp() * 0.25;
        assert_relative_eq!(*s, env, max_relative = 1e-13);
        assert!(*s >= *b);
    }
}

#[test]
fn sharp_bound_beats_envelope_at_small_k() {
    let c = conj_c();
    let curve = em_bound_sharp(lambda_star(), lt(), lx(), 1, c, 0.25, 40).unwrap();
    for (k, v) in curve.values.iter().enumerate() {
        let env = (-(k as f64) * lambda_star() / lt()).exp() * 0.25;
        assert!(*v <= env * (1.0 + 1e-15));
    }
    // Independent finer grid: ten times as many points over the same range.
    let hi = 1.0 / (4.0 * lx());
    let fine: Vec<f64> = std::iter::once(0.0)
        .chain((0..2000).map(|i| (1e-6f64.ln() + i as f64 / 1999.0 * (hi.ln() - 1e-6f64.ln())).exp()))
        .collect();
    let finer = em_bound_sharp_on_grid(lambda_star(), lt(), lx(), 1, c, 0.25, 3, &fine).unwrap();
    for k in 1..=3 {
        let env = (-(k as f64) * lambda_star() / lt()).exp() * 0.25;
        assert!(curve.values[k] < env, "k = {k}");
        assert!(curve.minimising_h[k] > 0.0);
        assert!(finer.minimising_h[k] > 0.0);
        assert!(finer.values[k] <= curve.values[k]);
        assert_relative_eq!(finer.values[k], curve.values[k], max_relative = 1e-3);
    }
    // The sharp bound tends to zero through h = 0 as k grows.
    let long = em_bound_sharp(lambda_star(), lt(), lx(), 1, c, 0.25, 400).unwrap();
    assert!(long.values[400] < 1e-20);
    assert_eq!(long.minimising_h[400], 0.0);
}

#[test]
fn sharp_bound_dominates_em_trace() {
    let m = make_conjugate_1d(0.0, 1.0, 1.0).unwrap();
    let trace = run(&m, &AlgorithmConfig::exact(Scheme::Em, 0.0, 30, Vector::from_element(1, 1.0))).unwrap();
    let lambda = certified_lambda(&m).unwrap().lambda;
    let gap0 = trace.records[0].gap;
    let c = constant_c(&m, lambda, gap0).unwrap();
    let curve = em_bound_sharp(lambda, m.lipschitz_theta(), m.lipschitz_x(), 1, c, gap0, 30).unwrap();
    for (r, b) in trace.records.iter().zip(&curve.values) {
        assert!(r.gap <= b + 1e-9);
    }
}

#[test]
fn first_order_cases() {
    let l = lambda_star();
    let zero = first_order_bound(l, lt(), 0.3, 0.0, 5).unwrap();
    assert!(zero.values.iter().all(|v| *v == 0.0));
    assert_eq!(zero.metric, Metric::LambdaDSquared);

    let full = first_order_bound(l, lt(), 1.0 / lt(), 0.25, 10).unwrap();
    for (k, v) in full.values.iter().enumerate() {
        assert_relative_eq!(*v, 2.0 * 0.25 * (-(k as f64) * l / lt()).exp(), max_relative = 1e-13);
    }
    let half = first_order_bound(l, lt(), 0.5 / lt(), 0.25, 10).unwrap();
    let slope = |c: &BoundCurve<f64>| (c.values[10].ln() - c.values[0].ln()) / 10.0;
    assert_relative_eq!(slope(&half), 0.5 * slope(&full), max_relative = 1e-12);
    assert!(matches!(first_order_bound(l, lt(), 1.0, 0.25, 3), Err(Error::StepSize { .. })));
}

#[test]
fn langevin_cases() {
    let l = lambda_star();
    let c = conj_c();
    let h = 0.1;
    let curve = langevin_em_bound(l, lt(), lx(), 1, c, h, 0.25, 5000).unwrap();
    let b = 8.0 * 5.0 + c * lx() / 2.0;
    let asym = 2.0 * h * h * b / (1.0 - (-l * (h + 1.0 / lt())).exp());
    assert_relative_eq!(curve.asymptote, asym, max_relative = 1e-13);
    assert_relative_eq!(curve.values[5000], asym, max_relative = 1e-12);
    assert!(curve.values.windows(2).all(|w| w[1] <= w[0]));

    let quarter = langevin_em_bound(l, lt(), lx(), 1, c, h / 4.0, 0.25, 1).unwrap();
    let ratio = curve.asymptote / quarter.asymptote;
    assert!(ratio > 14.0 && ratio < 16.0, "{ratio}");

    let frozen = langevin_em_bound(l, lt(), lx(), 1, c, 0.0, 0.25, 20).unwrap();
    assert!(frozen.values.iter().all(|v| *v == 0.5));

    assert!(matches!(
        langevin_em_bound(l, lt(), lx(), 1, c, 0.2, 0.25, 3),
        Err(Error::StepSize { .. })
    ));
    assert!(curve.provenance.contains("reuses"));
}

#[test]
fn agd_cases() {
    let l = lambda_star();
    let big_l = lx();
    let h = 1.0 / (8.0 * big_l);
    let curve = agd_bound(l, big_l, 1, h, 0.25, 10_000).unwrap();
    let asym = 12.0 * 5.0 * h * h / (1.0 - (-l * h).exp());
    assert_relative_eq!(curve.asymptote, asym, max_relative = 1e-13);
    assert_relative_eq!(curve.values[10_000], asym, max_relative = 1e-9);

    let asymptote = |h: f64| agd_bound(l, big_l, 1, h, 0.0, 0).unwrap().asymptote;
    let mut last = f64::INFINITY;
    for h in [1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4] {
        let r = asymptote(h) / asymptote(h / 2.0);
        assert!(r < last && r > 2.0);
        last = r;
    }
    assert!((last - 2.0).abs() < 1e-3);

    let pure = agd_bound(l, big_l, 1, h, 0.0, 6).unwrap();
    assert_relative_eq!(pure.values[0], asym, max_relative = 1e-14);
    assert!(pure.values.iter().all(|v| *v == pure.values[0]));
    assert!(matches!(agd_bound(l, big_l, 1, 0.2, 0.25, 3), Err(Error::StepSize { .. })));
}

#[test]
fn gap_to_distance_cases() {
    let zero = em_bound_basic(lambda_star(), lt(), 0.0, 4).unwrap();
    assert!(gap_to_distance(&zero).unwrap().values.iter().all(|v| *v == 0.0));

    let basic = em_bound_basic(lambda_star(), lt(), 0.25, 8).unwrap();
    let dist = gap_to_distance(&basic).unwrap();
    assert_eq!(dist.metric, Metric::LambdaDSquared);
    let factor = 1.0 - lambda_star() / lt();
    for (k, v) in dist.values.iter().enumerate() {
        assert_relative_eq!(*v, 2.0 * factor.powi(k as i32) * 0.25, max_relative = 1e-13);
    }
    assert!(gap_to_distance(&dist).is_err());
}

#[test]
fn f32_curves() {
    let curve = em_bound_basic(0.381_966_f32, 1.414_213_5, 0.25, 5).unwrap();
    assert!((curve.values[5] - 0.25 * 0.729_909_f32.powi(5)).abs() < 1e-6);
}
