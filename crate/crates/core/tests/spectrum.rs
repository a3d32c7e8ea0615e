mod common;

use common::*;
use nalgebra::{dmatrix, DMatrix};
use num_complex::Complex64;
use tds_hinf::{
    char_roots, correct_root, difference_abscissa, interconnect, is_strongly_stable,
    robust_spectral_abscissa, spectral_abscissa, spectral_abscissa_detailed, Error, RootOptions,
};

fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(
        f(lo) * f(hi) < 0.0,
        "oracle bracket does not straddle a root"
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(lo) > 0.0) == (f(mid) > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots of a real cubic via the characteristic polynomial of a 3x3 matrix,
/// using trigonometric/Cardano formulas only.
fn cubic_eig_abscissa(a: &DMatrix<f64>) -> f64 {
    let tr = a[(0, 0)] + a[(1, 1)] + a[(2, 2)];
    let m2 = |i: usize, j: usize, k: usize, l: usize| a[(i, j)] * a[(k, l)] - a[(i, l)] * a[(k, j)];
    let sum_minors = m2(1, 1, 2, 2) + m2(0, 0, 2, 2) + m2(0, 0, 1, 1);
    let det = a[(0, 0)] * m2(1, 1, 2, 2) - a[(0, 1)] * m2(1, 0, 2, 2)
        + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)]);
    // lambda^3 - tr lambda^2 + sum_minors lambda - det = 0; depressed cubic
    // t^3 + p t + q with lambda = t + tr/3.
    let p = sum_minors - tr * tr / 3.0;
    let q = -det + tr * sum_minors / 3.0 - 2.0 * tr.powi(3) / 27.0;
    let shift = tr / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc >= 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        let real_root = u + v + shift;
        // Complex pair real part: -(u+v)/2 + shift.
        real_root.max(-(u + v) / 2.0 + shift)
    } else {
        // Three real roots.
        let r = (-p / 3.0_f64).sqrt();
        let phi = (-q / (2.0 * r.powi(3))).acos();
        (0..3)
            .map(|k| 2.0 * r * ((phi + 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() + shift)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[test]
fn scalar_delay_equation_rightmost_root() {
    // x'(t) = x(t-1): rightmost root solves lambda = exp(-lambda) on the
    // real axis.
    let sys = tds_hinf::DdaeSystem::new(
        DMatrix::identity(1, 1),
        vec![(1.0, dmatrix![1.0])],
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
    )
    .unwrap();
    let want = bisect(&|x: f64| x - (-x).exp(), 0.0, 1.0);
    let res = char_roots(&sys, -3.0, &RootOptions::default()).unwrap();
    assert!(!res.roots.is_empty());
    let right = &res.roots[0];
    assert!(
        (right.lambda.re - want).abs() <= 1e-10,
        "{} vs {want}",
        right.lambda.re
    );
    assert!(right.lambda.im.abs() <= 1e-10);
    assert!(right.corrected);
    assert!((res.abscissa - want).abs() <= 1e-10);
    assert!(!is_strongly_stable(&sys).unwrap());
}

#[test]
fn stable_scalar_delay_equation() {
    // x'(t) = -x(t) + 0.5 x(t-1): the rightmost root is real in (-1, 0).
    let sys = tds_hinf::DdaeSystem::new(
        DMatrix::identity(1, 1),
        vec![(0.0, dmatrix![-1.0]), (1.0, dmatrix![0.5])],
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
    )
    .unwrap();
    let want = bisect(&|x: f64| x + 1.0 - 0.5 * (-x).exp(), -1.0, 0.0);
    let alpha = spectral_abscissa(&sys).unwrap();
    assert!((alpha - want).abs() <= 1e-10, "{alpha} vs {want}");
    assert!(is_strongly_stable(&sys).unwrap());
}

#[test]
fn defective_eigenvalue_multiplicity() {
    // Jordan block: double root at -1 without any delay.
    let sys = tds_hinf::DdaeSystem::new(
        DMatrix::identity(2, 2),
        vec![(0.0, dmatrix![-1.0, 1.0; 0.0, -1.0])],
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap();
    let res = char_roots(&sys, -3.0, &RootOptions::default()).unwrap();
    let total: usize = res.roots.iter().map(|r| r.multiplicity).sum();
    assert_eq!(total, 2, "roots: {:?}", res.roots);
    assert!(!res.clusters.is_empty());
    let cl = &res.clusters[0];
    assert_eq!(cl.multiplicity, 2);
    assert!((cl.center - Complex64::new(-1.0, 0.0)).norm() <= 1e-5);
    assert!((res.abscissa + 1.0).abs() <= 1e-6);
}

#[test]
fn root_correction_certifies_residuals() {
    let sys = two_delay_descriptor(1.0, 2.0);
    let res = char_roots(&sys, -1.0, &RootOptions::default()).unwrap();
    assert!(!res.roots.is_empty());
    for root in &res.roots {
        // sigma_min(M(lambda)) relative to the matrix scale certifies a root.
        let m = tds_hinf::transfer::char_matrix(&sys, root.lambda);
        let sv = tds_hinf::lapack::singular_values(&m).unwrap();
        let smin = sv[sv.len() - 1];
        let smax = sv[0];
        assert!(
            smin <= 1e-8 * smax.max(1.0),
            "lambda = {} has sigma_min {smin:.2e}",
            root.lambda
        );
    }
    // Perturbing a root and re-correcting comes back to it.
    let lam = res.roots[0].lambda;
    let corr = correct_root(&sys, lam + Complex64::new(1e-3, -2e-3)).unwrap();
    assert!(corr.converged);
    assert!((corr.lambda - lam).norm() <= 1e-8 * (1.0 + lam.norm()));
}

#[test]
fn window_respects_requested_real_part() {
    let sys = two_delay_descriptor(1.0, 2.0);
    let r_min = -0.8;
    let res = char_roots(&sys, r_min, &RootOptions::default()).unwrap();
    for root in &res.roots {
        assert!(root.lambda.re >= r_min - 0.1 * (1.0 + r_min.abs()));
    }
    // Roots come sorted by descending real part.
    for w in res.roots.windows(2) {
        assert!(w[0].lambda.re >= w[1].lambda.re - 1e-12);
    }
}

#[test]
fn difference_abscissa_of_two_delay_chain() {
    // gamma(c) = 0.25 exp(-c) + 0.5 exp(-2c) = 1 defines c_D.
    let sys = two_delay_descriptor(1.0, 2.0);
    let part = sys.partition().unwrap();
    let want = bisect(
        &|c: f64| 0.25 * (-c).exp() + 0.5 * (-2.0 * c).exp() - 1.0,
        -2.0,
        2.0,
    );
    let got = difference_abscissa(&part).unwrap();
    assert!(
        (got - want).abs() <= 1e-9 * (1.0 + want.abs()),
        "c_D = {got}, oracle {want}"
    );
}

#[test]
fn difference_abscissa_of_scalar_algebraic_loop() {
    // Algebraic equation 0 = -x2 + a x2(t - tau): c_D = ln|a| / tau.
    for &(a, tau) in &[(0.5, 1.0), (0.5, 2.0), (1.5, 1.0), (0.9, 0.5)] {
        let sys = tds_hinf::DdaeSystem::new(
            dmatrix![1.0, 0.0; 0.0, 0.0],
            vec![
                (0.0, dmatrix![-1.0, 0.0; 0.0, -1.0]),
                (tau, dmatrix![0.0, 0.0; 0.0, a]),
            ],
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let part = sys.partition().unwrap();
        let want = a.ln() / tau;
        let got = difference_abscissa(&part).unwrap();
        assert!(
            (got - want).abs() <= 1e-8 * (1.0 + want.abs()),
            "a={a} tau={tau}: c_D {got} vs {want}"
        );
    }
}

#[test]
fn difference_abscissa_without_algebraic_part_is_minus_infinity() {
    let mut r = rng(23);
    let sys = random_stable_retarded(&mut r);
    let part = sys.partition().unwrap();
    assert_eq!(difference_abscissa(&part).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn difference_abscissa_of_nilpotent_coupling_is_minus_infinity() {
    // The delayed algebraic block is strictly nilpotent: no difference chain.
    let e = DMatrix::from_partial_diagonal(3, 3, &[1.0]);
    let mut a0 = -DMatrix::identity(3, 3);
    a0[(0, 0)] = -0.5;
    let mut a1 = DMatrix::zeros(3, 3);
    a1[(1, 2)] = 0.7; // upper triangular in the algebraic corner
    let sys = tds_hinf::DdaeSystem::new(
        e,
        vec![(0.0, a0), (1.0, a1)],
        DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
    )
    .unwrap();
    let part = sys.partition().unwrap();
    assert_eq!(part.nu, 2);
    assert_eq!(difference_abscissa(&part).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn difference_abscissa_of_cyclic_two_delay_coupling() {
    // Delayed blocks are individually nilpotent but combine to spectral
    // radius sqrt(exp(-c tau1) exp(-c tau2)), so c_D = 0.
    let e = DMatrix::from_partial_diagonal(3, 3, &[1.0]);
    let mut a0 = -DMatrix::identity(3, 3);
    a0[(0, 0)] = -0.5;
    let mut a1 = DMatrix::zeros(3, 3);
    a1[(1, 2)] = 1.0;
    let mut a2 = DMatrix::zeros(3, 3);
    a2[(2, 1)] = 1.0;
    let sys = tds_hinf::DdaeSystem::new(
        e,
        vec![(0.0, a0), (1.0, a1), (2.0, a2)],
        DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
    )
    .unwrap();
    let part = sys.partition().unwrap();
    let got = difference_abscissa(&part).unwrap();
    assert!(got.abs() <= 1e-7, "c_D = {got}");
}

#[test]
fn neutral_chain_alpha_equals_difference_abscissa() {
    // M(lambda) = diag(lambda + 1, 1 - 0.5 exp(-lambda)): difference roots
    // on the vertical line Re = ln(1/2).
    let sys = tds_hinf::DdaeSystem::new(
        dmatrix![1.0, 0.0; 0.0, 0.0],
        vec![
            (0.0, dmatrix![-1.0, 0.0; 0.0, -1.0]),
            (1.0, dmatrix![0.0, 0.0; 0.0, 0.5]),
        ],
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap();
    let report = robust_spectral_abscissa(&sys).unwrap();
    let want = 0.5_f64.ln();
    assert!((report.c_d - want).abs() <= 1e-8);
    assert!(
        (report.alpha - want).abs() <= 1e-6,
        "alpha {}",
        report.alpha
    );
    assert!((report.alpha_bar - want).abs() <= 1e-6);
    assert!(report.strongly_stable);
}

#[test]
fn open_loop_plant_abscissa_matches_cubic_formula() {
    let plant = demo_plant();
    let sys = tds_hinf::DdaeSystem::new(
        DMatrix::identity(3, 3),
        vec![(0.0, plant.a.clone())],
        plant.b_w.clone(),
        plant.c_z.clone(),
    )
    .unwrap();
    let want = cubic_eig_abscissa(&plant.a);
    let got = spectral_abscissa(&sys).unwrap();
    assert!(
        (got - want).abs() <= 1e-9 * (1.0 + want.abs()),
        "{got} vs cubic formula {want}"
    );
    assert!(got > 0.0, "open loop must be unstable");
}

#[test]
fn closed_loop_root_cluster_under_printed_gain() {
    // Four simple roots huddle around -0.1495; with a matching cluster
    // radius they are reported as one cluster of multiplicity four.
    let plant = demo_plant();
    let sys = interconnect(&plant, &demo_gain_k1(), 0.0).unwrap();
    let opts = RootOptions {
        cluster_radius: 0.09,
        ..RootOptions::default()
    };
    let res = char_roots(&sys, -0.4, &RootOptions::default()).unwrap();
    // Residual certificate for every returned root.
    for root in &res.roots {
        let m = tds_hinf::transfer::char_matrix(&sys, root.lambda);
        let sv = tds_hinf::lapack::singular_values(&m).unwrap();
        assert!(sv[sv.len() - 1] <= 1e-8 * sv[0].max(1.0));
    }
    let near: Vec<Complex64> = res
        .roots
        .iter()
        .filter(|r| (r.lambda - Complex64::new(-0.1495, 0.0)).norm() <= 0.09)
        .map(|r| r.lambda)
        .collect();
    assert_eq!(near.len(), 4, "rightmost group: {near:?}");
    let res_cl = char_roots(&sys, -0.4, &opts).unwrap();
    let top = &res_cl.clusters[0];
    assert_eq!(top.multiplicity, 4);
    assert!(
        (top.center.re + 0.1495).abs() <= 1e-3,
        "center {}",
        top.center
    );
    let report = robust_spectral_abscissa(&sys).unwrap();
    assert!(report.strongly_stable);
    assert!(report.alpha < -0.12 && report.alpha > -0.18);
}

#[test]
fn abscissa_error_on_rootless_window() {
    // A pure integrator chain has roots, but an empty window stays honest:
    // r_min far above them yields no roots and a clear error.
    let sys = tds_hinf::DdaeSystem::new(
        DMatrix::identity(1, 1),
        vec![(0.0, dmatrix![-5.0])],
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
    )
    .unwrap();
    let res = char_roots(&sys, -1.0, &RootOptions::default()).unwrap();
    assert!(res.roots.is_empty());
    // The detailed abscissa widens its own window instead.
    let (alpha, rightmost, _) = spectral_abscissa_detailed(&sys).unwrap();
    assert!((alpha + 5.0).abs() <= 1e-8);
    assert!(rightmost.is_some());
}

#[test]
fn strong_stability_rejects_critical_difference_part() {
    // alpha < 0 but c_D = 0: stable roots, fragile to delay perturbations.
    let e = DMatrix::from_partial_diagonal(3, 3, &[1.0]);
    let mut a0 = -DMatrix::identity(3, 3);
    a0[(0, 0)] = -0.5;
    let mut a1 = DMatrix::zeros(3, 3);
    a1[(1, 2)] = 1.0;
    let mut a2 = DMatrix::zeros(3, 3);
    a2[(2, 1)] = 1.0;
    let sys = tds_hinf::DdaeSystem::new(
        e,
        vec![(0.0, a0), (1.0, a1), (2.0, a2)],
        DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
    )
    .unwrap();
    match is_strongly_stable(&sys) {
        Ok(stable) => assert!(!stable),
        Err(Error::NonConvergence(_)) => panic!("difference abscissa did not converge"),
        Err(e) => panic!("unexpected error {e}"),
    }
}
