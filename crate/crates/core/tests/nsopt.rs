mod common;

use common::*;
use tds_hinf::{minimize, Error, ObjectiveEval, OptimizerOptions, Termination};

fn smooth_eval(value: f64, grad: Vec<f64>) -> ObjectiveEval {
    ObjectiveEval {
        value,
        grad: Some(grad),
        smooth: true,
    }
}

#[test]
fn quadratic_bowl_converges_to_center() {
    let center = [1.5, -2.0, 0.25];
    let obj = (3usize, move |p: &[f64]| {
        let mut v = 0.0;
        let mut g = vec![0.0; 3];
        for i in 0..3 {
            let w = (i + 1) as f64;
            v += w * (p[i] - center[i]).powi(2);
            g[i] = 2.0 * w * (p[i] - center[i]);
        }
        smooth_eval(v, g)
    });
    let rep = minimize(&obj, &[0.0, 0.0, 0.0], &OptimizerOptions::default()).unwrap();
    for (pi, ci) in rep.p.iter().zip(&center) {
        assert!((pi - ci).abs() <= 1e-6, "p = {:?}", rep.p);
    }
    assert!(rep.value <= 1e-10);
    assert!(matches!(
        rep.termination,
        Termination::SmallGradient | Termination::Stationary
    ));
}

#[test]
fn rosenbrock_valley() {
    let obj = (2usize, |p: &[f64]| {
        let (x, y) = (p[0], p[1]);
        let v = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let g = vec![
            -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
            200.0 * (y - x * x),
        ];
        smooth_eval(v, g)
    });
    let rep = minimize(&obj, &[-1.2, 1.0], &OptimizerOptions::default()).unwrap();
    assert!(rep.value <= 1e-9, "value {}", rep.value);
    assert!((rep.p[0] - 1.0).abs() <= 1e-4 && (rep.p[1] - 1.0).abs() <= 1e-4);
}

#[test]
fn soft_threshold_kink() {
    // f(x) = sum |x_i| + 0.5 ||x - d||^2 has the closed-form minimizer
    // x_i = sign(d_i) max(|d_i| - 1, 0); the second block sits on a kink.
    let d = [2.0, -0.3];
    let obj = (2usize, move |p: &[f64]| {
        let mut v = 0.0;
        let mut g = vec![0.0; 2];
        let mut smooth = true;
        for i in 0..2 {
            v += p[i].abs() + 0.5 * (p[i] - d[i]).powi(2);
            let s = if p[i].abs() <= 1e-12 {
                smooth = false;
                0.0
            } else {
                p[i].signum()
            };
            g[i] = s + (p[i] - d[i]);
        }
        ObjectiveEval {
            value: v,
            grad: Some(g),
            smooth,
        }
    });
    let rep = minimize(&obj, &[0.7, 0.9], &OptimizerOptions::default()).unwrap();
    assert!((rep.p[0] - 1.0).abs() <= 1e-5, "p = {:?}", rep.p);
    assert!(rep.p[1].abs() <= 1e-5, "p = {:?}", rep.p);
}

#[test]
fn piecewise_linear_max_needs_sampling() {
    // f(x) = max_i (a_i . x + b_i), minimized on a nonsmooth valley floor;
    // the minimum sits where three planes meet.
    let planes = [([1.0, 0.0], 0.0), ([-1.0, 0.2], 0.1), ([0.0, -1.0], 0.05)];
    let obj = (2usize, move |p: &[f64]| {
        let vals: Vec<f64> = planes
            .iter()
            .map(|(a, b)| a[0] * p[0] + a[1] * p[1] + b)
            .collect();
        let (imax, &vmax) = vals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .unwrap();
        let second = vals
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != imax)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        ObjectiveEval {
            value: vmax,
            grad: Some(planes[imax].0.to_vec()),
            smooth: vmax - second > 1e-9,
        }
    });
    let rep = minimize(&obj, &[1.3, -0.7], &OptimizerOptions::default()).unwrap();
    // Optimum where plane 0 meets plane 1 meets plane 2.
    let obj_ref = &obj;
    let floor = |x: &[f64]| {
        planes
            .iter()
            .map(|(a, b)| a[0] * x[0] + a[1] * x[1] + b)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    assert!(
        rep.value <= floor(&[0.0, 0.0]) + 1e-4,
        "value {}",
        rep.value
    );
    let _ = obj_ref;
}

#[test]
fn infinite_objective_at_start_is_an_error() {
    let obj = (1usize, |_: &[f64]| ObjectiveEval {
        value: f64::INFINITY,
        grad: None,
        smooth: false,
    });
    match minimize(&obj, &[0.0], &OptimizerOptions::default()) {
        Err(Error::GuardViolatedAtStart) => {}
        other => panic!("expected guard violation, got {other:?}"),
    }
}

#[test]
fn line_search_respects_feasibility_guard() {
    // Quadratic bowl with an infeasible region beyond radius 2; the start is
    // close to the wall and the minimizer at the origin.
    let obj = (2usize, |p: &[f64]| {
        let r2 = p[0] * p[0] + p[1] * p[1];
        if r2 > 4.0 {
            return ObjectiveEval {
                value: f64::INFINITY,
                grad: None,
                smooth: false,
            };
        }
        smooth_eval(r2, vec![2.0 * p[0], 2.0 * p[1]])
    });
    let rep = minimize(&obj, &[1.95, 0.3], &OptimizerOptions::default()).unwrap();
    assert!(rep.value.is_finite());
    assert!(rep.value <= 1e-8, "value {}", rep.value);
}

#[test]
fn empty_parameter_vector_short_circuits() {
    let obj = (0usize, |_: &[f64]| smooth_eval(42.0, vec![]));
    let rep = minimize(&obj, &[], &OptimizerOptions::default()).unwrap();
    assert_eq!(rep.value, 42.0);
    assert_eq!(rep.iterations, 0);
}

#[test]
fn iteration_budget_is_respected() {
    let obj = (2usize, |p: &[f64]| {
        let (x, y) = (p[0], p[1]);
        let v = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let g = vec![
            -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
            200.0 * (y - x * x),
        ];
        smooth_eval(v, g)
    });
    let opts = OptimizerOptions {
        max_iter: 3,
        gradient_sampling: false,
        ..OptimizerOptions::default()
    };
    let rep = minimize(&obj, &[-1.2, 1.0], &opts).unwrap();
    assert!(rep.iterations <= 3);
    assert!(matches!(rep.termination, Termination::IterationLimit));
}

#[test]
fn seeded_runs_are_deterministic() {
    let obj = (2usize, |p: &[f64]| {
        let v = p[0].abs() + (p[1] - 1.0).powi(2);
        let g = vec![if p[0] >= 0.0 { 1.0 } else { -1.0 }, 2.0 * (p[1] - 1.0)];
        ObjectiveEval {
            value: v,
            grad: Some(g),
            smooth: p[0].abs() > 1e-10,
        }
    });
    let opts = OptimizerOptions {
        seed: 7,
        ..OptimizerOptions::default()
    };
    let a = minimize(&obj, &[0.9, -0.4], &opts).unwrap();
    let b = minimize(&obj, &[0.9, -0.4], &opts).unwrap();
    assert_eq!(a.p, b.p);
    assert_eq!(a.value, b.value);
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.gs_rounds, b.gs_rounds);
}

#[test]
fn trace_records_monotone_best_values() {
    let obj = (2usize, |p: &[f64]| {
        smooth_eval(
            p[0] * p[0] + 3.0 * p[1] * p[1],
            vec![2.0 * p[0], 6.0 * p[1]],
        )
    });
    let rep = minimize(&obj, &[3.0, -2.0], &OptimizerOptions::default()).unwrap();
    assert!(!rep.trace.is_empty());
    for w in rep.trace.windows(2) {
        assert!(w[1].value <= w[0].value + 1e-12);
    }
    let _ = rng(0); // keep the common module exercised
}
