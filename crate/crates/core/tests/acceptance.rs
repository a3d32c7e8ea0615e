//! End-to-end checks, one per acceptance criterion. Each test prints a
//! single line "criterion N: PASS - ..." with the measured quantities; a
//! failing assertion carries the matching FAIL text.

mod common;

use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;
use std::sync::Mutex;
use std::time::Instant;

/// The runtime caps assume a criterion has the machine to itself, so the
/// criteria run one at a time regardless of the harness thread count.
static GATE: Mutex<()> = Mutex::new(());

fn exclusive() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}
use tds_hinf::lapack::singular_values;
use tds_hinf::transfer::log_grid;
use tds_hinf::{
    char_roots, discretize::discretize, discretize::level_crossings, eliminate_feedthrough,
    eliminate_io_delays, eval_T, grad_robust_abscissa, grad_strong_norm, hinf_design, hinf_norm_T,
    hinf_norm_Ta_at_delays, interconnect, robust_spectral_abscissa, stabilize, strong_hinf_norm,
    strong_norm_Ta, ControllerBlock, DdaeSystem, DelayedIoSystem, NormBranch, NormOptions,
    PlantBlock, RootOptions, SynthesisOptions,
};

fn sigma_at(sys: &DdaeSystem, omega: f64) -> f64 {
    let t = eval_T(sys, Complex64::new(0.0, omega)).unwrap();
    singular_values(&t).unwrap()[0]
}

/// Central difference that gives up when any probe point is infeasible.
fn try_central_diff(f: impl Fn(&[f64]) -> Option<f64>, p: &[f64], h: f64) -> Option<Vec<f64>> {
    let mut g = vec![0.0; p.len()];
    for k in 0..p.len() {
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[k] += h;
        lo[k] -= h;
        g[k] = (f(&hi)? - f(&lo)?) / (2.0 * h);
    }
    Some(g)
}

#[test]
fn criterion_1_asymptotic_norms_of_the_reference_loop() {
    let _gate = exclusive();
    let t0 = Instant::now();
    let sys = two_delay_descriptor(1.0, 2.0);
    let part = sys.partition().unwrap();
    let torus = strong_norm_Ta(&part, &NormOptions::default()).unwrap();
    let (axis, _) = hinf_norm_Ta_at_delays(&part, &[1.0, 2.0], 2.0 * PI).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    assert!(
        (torus.value - 4.0).abs() <= 1e-6,
        "criterion 1: FAIL - strong asymptotic norm {} not 4 +- 1e-6",
        torus.value
    );
    assert!(
        (axis - 2.0320).abs() <= 1e-2,
        "criterion 1: FAIL - axis asymptotic norm {axis} not 2.0320 +- 1e-2"
    );
    assert!(dt < 5.0, "criterion 1: FAIL - took {dt:.1}s, cap 5s");
    println!(
        "criterion 1: PASS - strong asymptotic norm {:.7}, axis restriction {:.4} ({dt:.2}s)",
        torus.value, axis
    );
}

#[test]
fn criterion_2_perturbed_delays_finite_peak() {
    let _gate = exclusive();
    let t0 = Instant::now();
    let sys = two_delay_descriptor(0.99, 2.0);
    let strong = strong_hinf_norm(&sys).unwrap();
    let plain = hinf_norm_T(&sys, 0.0, &NormOptions::default()).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    assert!(
        (strong.value - 4.0).abs() <= 1e-4 && strong.branch == NormBranch::Asymptotic,
        "criterion 2: FAIL - combined norm {} branch {:?}, expected 4 via the asymptotic part",
        strong.value,
        strong.branch
    );
    let omega = plain
        .omega
        .expect("criterion 2: FAIL - no peak frequency reported");
    assert!(
        (plain.value - 3.9993).abs() <= 1e-3,
        "criterion 2: FAIL - level-set peak {} not 3.9993 +- 1e-3",
        plain.value
    );
    assert!(
        (omega - 158.6569).abs() <= 0.5,
        "criterion 2: FAIL - peak frequency {omega} not 158.6569 +- 0.5"
    );
    assert!(dt < 30.0, "criterion 2: FAIL - took {dt:.1}s, cap 30s");
    println!(
        "criterion 2: PASS - combined {:.6} (asymptotic), finite peak {:.4} at {:.4} rad/s ({dt:.2}s)",
        strong.value, plain.value, omega
    );
}

#[test]
fn criterion_3_norm_continuity_across_delay_perturbation() {
    let _gate = exclusive();
    let t0 = Instant::now();
    let nominal = two_delay_descriptor(1.0, 2.0);
    let perturbed = two_delay_descriptor(0.99, 2.0);
    let plain_nom = hinf_norm_T(&nominal, 0.0, &NormOptions::default()).unwrap();
    let plain_per = hinf_norm_T(&perturbed, 0.0, &NormOptions::default()).unwrap();
    let strong_nom = strong_hinf_norm(&nominal).unwrap();
    let strong_per = strong_hinf_norm(&perturbed).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    // 2.5788 is the candidate value the dense-scan oracle in the transfer
    // tests confirms for the nominal delays.
    assert!(
        (plain_nom.value - 2.5788).abs() <= 2e-3,
        "criterion 3: FAIL - nominal plain peak {} not 2.5788 +- 2e-3",
        plain_nom.value
    );
    assert!(
        (plain_per.value - 3.9993).abs() <= 1e-3,
        "criterion 3: FAIL - perturbed plain peak {} not 3.9993 +- 1e-3",
        plain_per.value
    );
    assert!(
        (strong_nom.value - 4.0).abs() <= 1e-4 && (strong_per.value - 4.0).abs() <= 1e-4,
        "criterion 3: FAIL - strong norm moved: {} vs {}",
        strong_nom.value,
        strong_per.value
    );
    println!(
        "criterion 3: PASS - plain peak jumps {:.4} -> {:.4}, strong norm stays {:.6}/{:.6} ({dt:.2}s)",
        plain_nom.value, plain_per.value, strong_nom.value, strong_per.value
    );
}

#[test]
fn criterion_4_demo_loop_evaluations() {
    let _gate = exclusive();
    let t0 = Instant::now();
    let plant = demo_plant();
    let open = interconnect(&plant, &ControllerBlock::zero(0, 1, 3), 0.0).unwrap();
    let open_alpha = robust_spectral_abscissa(&open).unwrap().alpha;

    let sys1 = interconnect(&plant, &demo_gain_k1(), 0.0).unwrap();
    let opts = RootOptions {
        cluster_radius: 0.09,
        ..RootOptions::default()
    };
    let spec1 = char_roots(&sys1, -0.4, &opts).unwrap();
    let top = &spec1.clusters[0];
    let norm1 = strong_hinf_norm(&sys1).unwrap().value;

    let sys2 = interconnect(&plant, &demo_gain_k2(), 0.0).unwrap();
    let norm2 = strong_hinf_norm(&sys2).unwrap().value;
    let dt = t0.elapsed().as_secs_f64();

    assert!(
        (open_alpha - 0.1081).abs() <= 1e-4,
        "criterion 4: FAIL - open-loop abscissa {open_alpha} not 0.1081 +- 1e-4"
    );
    // At the four-decimal printed gain the fourfold rightmost root resolves
    // into four simple roots a few 1e-2 apart; the rightmost cluster carries
    // the stated location and multiplicity.
    assert!(
        (top.center.re + 0.1495).abs() <= 1e-3 && top.multiplicity == 4,
        "criterion 4: FAIL - rightmost cluster {:.5} x{} not -0.1495 x4",
        top.center.re,
        top.multiplicity
    );
    assert!(
        (norm1 - 79.5443).abs() <= 0.01 * 79.5443,
        "criterion 4: FAIL - norm at the first gain {norm1} not 79.5443 +- 1%"
    );
    assert!(
        (norm2 - 28.4167).abs() <= 0.01 * 28.4167,
        "criterion 4: FAIL - norm at the second gain {norm2} not 28.4167 +- 1%"
    );
    assert!(dt < 120.0, "criterion 4: FAIL - took {dt:.1}s, cap 120s");
    println!(
        "criterion 4: PASS - open abscissa {:.4}, cluster {:.4} x{} (abscissa {:.4}), norms {:.2}/{:.2} ({dt:.2}s)",
        open_alpha, top.center.re, top.multiplicity, spec1.abscissa, norm1, norm2
    );
}

#[test]
fn criterion_5_demo_loop_synthesis() {
    let _gate = exclusive();
    let t0 = Instant::now();
    let plant = demo_plant();
    let mut opts = SynthesisOptions {
        restarts: 3,
        seed: 7,
        ..SynthesisOptions::default()
    };
    opts.optimizer.max_iter = 200;
    opts.optimizer.gs_iters = 8;
    let (_, alpha, _) = stabilize(&plant, 0, &opts).unwrap();
    let (_, norm, _) = hinf_design(&plant, Some(&demo_gain_k1()), 0, &opts).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    assert!(
        alpha <= -0.10,
        "criterion 5: FAIL - stabilization reached only {alpha}"
    );
    assert!(
        norm <= 30.0,
        "criterion 5: FAIL - norm design reached only {norm}"
    );
    println!("criterion 5: PASS - stabilized to {alpha:.4}, norm designed to {norm:.4} ({dt:.1}s)");
}

#[test]
fn criterion_6_norm_oracle_equivalence_on_random_systems() {
    let _gate = exclusive();
    let t0 = Instant::now();
    let grid = log_grid(1e-6, 1e4, 1_000_000);
    let mut worst_norm = 0.0f64;
    let mut worst_cross = 0.0f64;
    let mut crossings_checked = 0usize;
    for case in 0..20 {
        let mut r = rng(1000 + case);
        let sys = random_stable_retarded(&mut r);
        let value = strong_hinf_norm(&sys).unwrap().value;
        let sweep = tds_hinf::sigma_sweep(&sys, &grid).unwrap();
        let (_, dense) = sweep.peak.expect("sweep produced no regular point");
        let rel = (value - dense).abs() / dense;
        worst_norm = worst_norm.max(rel);
        assert!(
            rel <= 1e-4,
            "criterion 6: FAIL - case {case}: norm {value} vs dense sweep {dense} (rel {rel:.2e})"
        );

        // Pick a level strictly between zero and the peak, then compare the
        // pencil crossings against bisection-refined sign changes of the
        // dense sweep.
        let gamma = 0.8 * value;
        let norms: f64 = sys
            .delay_terms
            .iter()
            .map(|(_, a)| a.singular_values().max())
            .sum();
        let bc = sys.b.singular_values().max() * sys.c.singular_values().max();
        let omega_bound = norms + bc / gamma;
        let order = ((sys.tau_max() * omega_bound / 1.6).ceil() as usize + 8).min(160);
        let horizon = 1.6 * order as f64 / sys.tau_max();
        assert!(
            omega_bound <= horizon,
            "criterion 6: FAIL - case {case}: crossing bound {omega_bound} beyond trusted range {horizon}"
        );
        let disc = discretize(&sys, order).unwrap();
        let reported = level_crossings(&disc, gamma).unwrap();
        for pair in sweep.points.windows(2) {
            let (s0, s1) = match (pair[0].sigma, pair[1].sigma) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            };
            if (s0 - gamma) * (s1 - gamma) >= 0.0 {
                continue;
            }
            let (mut lo, mut hi) = (pair[0].omega, pair[1].omega);
            let f_lo = s0 - gamma;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (sigma_at(&sys, mid) - gamma) * f_lo > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let oracle = 0.5 * (lo + hi);
            let nearest = reported
                .iter()
                .map(|w| (w - oracle).abs())
                .fold(f64::INFINITY, f64::min);
            worst_cross = worst_cross.max(nearest);
            crossings_checked += 1;
            assert!(
                nearest <= 1e-4,
                "criterion 6: FAIL - case {case}: oracle crossing {oracle} missed by {nearest:.2e} (reported {reported:?})"
            );
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "criterion 6: PASS - 20 systems, worst norm deviation {worst_norm:.2e}, {crossings_checked} crossings worst {worst_cross:.2e} ({dt:.1}s)"
    );
}

#[test]
fn criterion_7_gradient_finite_difference_suite() {
    let _gate = exclusive();
    let t0 = Instant::now();
    let h = 1e-6;
    let mut checked = 0usize;
    let mut seed = 0u64;
    let mut worst = 0.0f64;
    while checked < 50 {
        seed += 1;
        assert!(
            seed < 1000,
            "criterion 7: FAIL - could not find 50 smooth points in 1000 draws"
        );
        let mut r = rng(40_000 + seed);
        let sys = random_stable_retarded(&mut r);
        let fam = entrywise_family(sys, &mut r);
        let p: Vec<f64> = (0..fam.n_p()).map(|_| r.gen_range(-0.15..0.15)).collect();
        let (abs_ok, norm_ok) = (grad_robust_abscissa(&fam, &p), grad_strong_norm(&fam, &p));
        let ((_, ga, sa), (_, gn, sn)) = match (abs_ok, norm_ok) {
            (Ok(a), Ok(n)) => (a, n),
            _ => continue,
        };
        if !sa || !sn {
            continue;
        }
        let fd_abs = try_central_diff(
            |q| grad_robust_abscissa(&fam, q).ok().map(|(v, _, _)| v),
            &p,
            h,
        );
        let fd_norm =
            try_central_diff(|q| grad_strong_norm(&fam, q).ok().map(|(v, _, _)| v), &p, h);
        let (fd_abs, fd_norm) = match (fd_abs, fd_norm) {
            (Some(a), Some(n)) => (a, n),
            _ => continue,
        };
        let ea = vec_rel_err(&ga, &fd_abs);
        let en = vec_rel_err(&gn, &fd_norm);
        worst = worst.max(ea).max(en);
        assert!(
            ea <= 1e-4,
            "criterion 7: FAIL - abscissa gradient off by {ea:.2e} at seed {seed}: {ga:?} vs {fd_abs:?}"
        );
        assert!(
            en <= 1e-4,
            "criterion 7: FAIL - norm gradient off by {en:.2e} at seed {seed}: {gn:?} vs {fd_norm:?}"
        );
        checked += 1;
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "criterion 7: PASS - both gradients at {checked} smooth points, worst deviation {worst:.2e} ({dt:.1}s)"
    );
}

#[test]
fn criterion_8_structural_invariants() {
    let _gate = exclusive();
    let t0 = Instant::now();
    let mut r = rng(8080);

    // Feedthrough elimination preserves T(lambda) + D.
    let mut worst_ft = 0.0f64;
    for _ in 0..4 {
        let sys = random_stable_retarded(&mut r);
        let d = random_matrix(&mut r, sys.n_z(), sys.n_w(), 1.0);
        let aug = eliminate_feedthrough(&sys, &d).unwrap();
        for _ in 0..6 {
            let lam = Complex64::new(r.gen_range(-0.01..0.3), r.gen_range(-5.0..5.0));
            let want = eval_T(&sys, lam).unwrap()
                + DMatrix::from_fn(sys.n_z(), sys.n_w(), |i, j| Complex64::new(d[(i, j)], 0.0));
            let got = eval_T(&aug, lam).unwrap();
            let rel = (got - &want).norm() / (1.0 + want.norm());
            worst_ft = worst_ft.max(rel);
            assert!(
                rel <= 1e-10,
                "criterion 8: FAIL - feedthrough slack changed T by {rel:.2e}"
            );
        }
    }

    // Input/output delay elimination: scalar loop with a closed form.
    let slack = eliminate_io_delays(&DelayedIoSystem {
        e: DMatrix::identity(1, 1),
        a_terms: vec![
            (0.0, DMatrix::from_row_slice(1, 1, &[-1.0])),
            (1.0, DMatrix::from_row_slice(1, 1, &[0.4])),
        ],
        b_terms: vec![
            (0.0, DMatrix::from_row_slice(1, 1, &[2.0])),
            (0.3, DMatrix::from_row_slice(1, 1, &[1.0])),
        ],
        c_terms: vec![
            (0.0, DMatrix::from_row_slice(1, 1, &[-0.5])),
            (0.7, DMatrix::from_row_slice(1, 1, &[1.0])),
        ],
    })
    .unwrap();
    let mut worst_io = 0.0f64;
    for _ in 0..6 {
        let lam = Complex64::new(r.gen_range(-0.2..0.5), r.gen_range(-6.0..6.0));
        let want = (-0.5 + (-0.7 * lam).exp()) * (2.0 + (-0.3 * lam).exp())
            / (lam + 1.0 - 0.4 * (-lam).exp());
        let got = eval_T(&slack, lam).unwrap()[(0, 0)];
        let rel = (got - want).norm() / (1.0 + want.norm());
        worst_io = worst_io.max(rel);
        assert!(
            rel <= 1e-10,
            "criterion 8: FAIL - io-delay slack changed T by {rel:.2e}"
        );
    }

    // Undelayed static feedback equals the direct state-space elimination.
    let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.0, -0.5]);
    let b_u = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let b_w = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
    let c_y = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let c_z = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let plant = PlantBlock::new(
        a.clone(),
        b_u.clone(),
        b_w.clone(),
        c_y.clone(),
        c_z.clone(),
        DMatrix::zeros(1, 1),
        vec![0.0],
        vec![0.0],
    )
    .unwrap();
    let kmat = DMatrix::from_row_slice(1, 1, &[-2.5]);
    let loop_sys = interconnect(&plant, &ControllerBlock::static_gain(kmat.clone()), 0.0).unwrap();
    let a_cl = &a + &b_u * &kmat * &c_y;
    let mut worst_cl = 0.0f64;
    for _ in 0..6 {
        let lam = Complex64::new(r.gen_range(-0.3..0.6), r.gen_range(-4.0..4.0));
        let mut m = DMatrix::from_fn(2, 2, |i, j| Complex64::new(-a_cl[(i, j)], 0.0));
        m[(0, 0)] += lam;
        m[(1, 1)] += lam;
        let x = m
            .lu()
            .solve(&DMatrix::from_fn(2, 1, |i, _| {
                Complex64::new(b_w[(i, 0)], 0.0)
            }))
            .unwrap();
        let want = Complex64::new(c_z[(0, 0)], 0.0) * x[(0, 0)]
            + Complex64::new(c_z[(0, 1)], 0.0) * x[(1, 0)];
        let got = eval_T(&loop_sys, lam).unwrap()[(0, 0)];
        let rel = (got - want).norm() / (1.0 + want.norm());
        worst_cl = worst_cl.max(rel);
        assert!(
            rel <= 1e-10,
            "criterion 8: FAIL - undelayed interconnection differs from elimination by {rel:.2e}"
        );
    }

    // Null-space factors of the partition annihilate E to round-off.
    let mut worst_part = 0.0f64;
    for sys in [
        two_delay_descriptor(1.0, 2.0),
        interconnect(&demo_plant(), &demo_gain_k1(), 0.0).unwrap(),
    ] {
        let part = sys.partition().unwrap();
        let ue = (part.u.transpose() * &sys.e).norm();
        let ev = (&sys.e * &part.v).norm();
        worst_part = worst_part.max(ue).max(ev);
        assert!(
            ue <= 1e-12 && ev <= 1e-12,
            "criterion 8: FAIL - partition residuals {ue:.2e}/{ev:.2e} above 1e-12"
        );
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "criterion 8: PASS - transfers preserved (feedthrough {worst_ft:.1e}, io {worst_io:.1e}, loop {worst_cl:.1e}), partition residual {worst_part:.1e} ({dt:.1}s)"
    );
}

#[test]
fn criterion_9_delay_scaling_invariance() {
    let _gate = exclusive();
    let t0 = Instant::now();
    let base = two_delay_descriptor(1.0, 2.0);
    let v0 = strong_norm_Ta(&base.partition().unwrap(), &NormOptions::default())
        .unwrap()
        .value;
    let mut worst = 0.0f64;
    for c in [0.5, 2.0, PI] {
        let scaled = two_delay_descriptor(c, 2.0 * c);
        let v = strong_norm_Ta(&scaled.partition().unwrap(), &NormOptions::default())
            .unwrap()
            .value;
        worst = worst.max((v - v0).abs());
        assert!(
            (v - v0).abs() <= 1e-8,
            "criterion 9: FAIL - scaling delays by {c} moved the norm {v0} -> {v}"
        );
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("criterion 9: PASS - norm {v0:.8} invariant under delay scaling, worst shift {worst:.1e} ({dt:.2}s)");
}
