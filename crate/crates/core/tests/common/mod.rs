//! Shared fixtures: reference systems with closed-form transfer functions,
//! a three-state demo plant and seeded random system generators.

#![allow(dead_code)]
#![allow(non_snake_case)]

use nalgebra::{dmatrix, DMatrix};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tds_hinf::{ControllerBlock, DdaeSystem, ParameterizedSystem, PlantBlock};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Descriptor system with one differential and one algebraic state,
///
///   x1'(t) = -0.1 x1(t) - x2(t)
///        0 =  x1(t) - x2(t) + 0.25 x2(t - tau1) - 0.5 x2(t - tau2) + w(t)
///     z(t) = -2 x1(t) + x2(t),
///
/// whose transfer function and asymptotic transfer function have the closed
/// forms in [`two_delay_T`] and [`two_delay_Ta`].
pub fn two_delay_descriptor(tau1: f64, tau2: f64) -> DdaeSystem {
    let e = dmatrix![1.0, 0.0; 0.0, 0.0];
    let a0 = dmatrix![-0.1, -1.0; 1.0, -1.0];
    let a1 = dmatrix![0.0, 0.0; 0.0, 0.25];
    let a2 = dmatrix![0.0, 0.0; 0.0, -0.5];
    let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let c = DMatrix::from_row_slice(1, 2, &[-2.0, 1.0]);
    DdaeSystem::new(e, vec![(0.0, a0), (tau1, a1), (tau2, a2)], b, c).unwrap()
}

/// The factor 1 - 0.25 e1 + 0.5 e2 shared by both closed forms, with
/// e_i = exp(-lambda tau_i) or exp(-j theta_i).
pub fn two_delay_factor(e1: Complex64, e2: Complex64) -> Complex64 {
    Complex64::new(1.0, 0.0) - 0.25 * e1 + 0.5 * e2
}

pub fn two_delay_T(tau1: f64, tau2: f64, lambda: Complex64) -> Complex64 {
    let d = two_delay_factor((-lambda * tau1).exp(), (-lambda * tau2).exp());
    (lambda + 2.1) / ((lambda + 0.1) * d + 1.0)
}

pub fn two_delay_Ta(theta1: f64, theta2: f64) -> Complex64 {
    let j = Complex64::i();
    let d = two_delay_factor((-j * theta1).exp(), (-j * theta2).exp());
    1.0 / d
}

/// Three-state plant x' = A x + w + b u(t - 5) with full state measurement
/// y = x and performance output z = x. The open loop is unstable.
pub fn demo_plant() -> PlantBlock {
    let a = dmatrix![
        -0.08, -0.03,  0.2;
         0.2,  -0.04, -0.005;
        -0.06,  0.2,  -0.07
    ];
    let b_u = DMatrix::from_column_slice(3, 1, &[-0.1, -0.2, 0.1]);
    PlantBlock::new(
        a,
        b_u,
        DMatrix::identity(3, 3),
        DMatrix::identity(3, 3),
        DMatrix::identity(3, 3),
        DMatrix::zeros(3, 1),
        vec![5.0],
        vec![0.0; 3],
    )
    .unwrap()
}

/// Static gain stabilizing [`demo_plant`]; the closed loop has a rightmost
/// cluster of four characteristic roots near -0.1495.
pub fn demo_gain_k1() -> ControllerBlock {
    ControllerBlock::static_gain(DMatrix::from_row_slice(1, 3, &[0.4712, 0.5037, 0.6023]))
}

/// Static gain for [`demo_plant`] with a much lower closed-loop H-infinity
/// norm than [`demo_gain_k1`].
pub fn demo_gain_k2() -> ControllerBlock {
    ControllerBlock::static_gain(DMatrix::from_row_slice(1, 3, &[0.7580, 1.2247, 0.6626]))
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * (r.gen::<f64>() * 2.0 - 1.0))
}

/// Random retarded system (E = I) with n <= 4 states, up to two delays and up
/// to two inputs/outputs, shifted until strongly exponentially stable with a
/// margin.
pub fn random_stable_retarded(r: &mut ChaCha8Rng) -> DdaeSystem {
    loop {
        let n = r.gen_range(1..=4);
        let m = r.gen_range(1..=2);
        let nw = r.gen_range(1..=2);
        let nz = r.gen_range(1..=2);
        let scale = 1.0 / n as f64;
        let mut a0 = random_matrix(r, n, n, scale);
        let mut terms: Vec<(f64, DMatrix<f64>)> = (0..m)
            .map(|_| (r.gen_range(0.2..2.5), random_matrix(r, n, n, 0.6 * scale)))
            .collect();
        let b = random_matrix(r, n, nw, 1.0);
        let c = random_matrix(r, nz, n, 1.0);
        let mut ok = false;
        for _ in 0..25 {
            let mut all = vec![(0.0, a0.clone())];
            all.extend(terms.iter().cloned());
            let sys = DdaeSystem::new(DMatrix::identity(n, n), all, b.clone(), c.clone()).unwrap();
            match tds_hinf::robust_spectral_abscissa(&sys) {
                Ok(rep) if rep.alpha_bar < -0.05 => {
                    ok = true;
                    break;
                }
                Ok(rep) => {
                    let shift = rep.alpha_bar + 0.3;
                    a0 -= DMatrix::identity(n, n) * shift;
                }
                Err(_) => {
                    // Shrink the delayed terms and push the diagonal left.
                    for (_, ai) in terms.iter_mut() {
                        *ai *= 0.5;
                    }
                    a0 -= DMatrix::identity(n, n) * 0.5;
                }
            }
        }
        if !ok {
            continue;
        }
        let mut all = vec![(0.0, a0)];
        all.extend(terms);
        return DdaeSystem::new(DMatrix::identity(n, n), all, b, c).unwrap();
    }
}

/// Wraps a system in a parameter family with `n_p` single-entry derivative
/// directions spread over the delayed A-terms, B and C.
pub fn entrywise_family(sys: DdaeSystem, r: &mut ChaCha8Rng) -> ParameterizedSystem {
    use tds_hinf::model::ParamDerivative;
    let n = sys.n();
    let terms = sys.delay_terms.len();
    let mut derivs = Vec::new();
    let term = r.gen_range(0..terms);
    let mut d = ParamDerivative::single_a(
        term,
        r.gen_range(0..n),
        r.gen_range(0..n),
        if r.gen::<bool>() { 1.0 } else { -1.0 },
    );
    // A second A-entry in the same direction keeps the family generic.
    d.a_entries.push((
        r.gen_range(0..terms),
        r.gen_range(0..n),
        r.gen_range(0..n),
        r.gen::<f64>() - 0.5,
    ));
    derivs.push(d);
    derivs.push(ParamDerivative {
        a_entries: vec![],
        b_entries: vec![(r.gen_range(0..n), r.gen_range(0..sys.n_w()), 1.0)],
        c_entries: vec![],
    });
    derivs.push(ParamDerivative {
        a_entries: vec![],
        b_entries: vec![],
        c_entries: vec![(r.gen_range(0..sys.n_z()), r.gen_range(0..n), 1.0)],
    });
    ParameterizedSystem { base: sys, derivs }
}

/// Central finite difference of a scalar function.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, p: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; p.len()];
    for k in 0..p.len() {
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[k] += h;
        lo[k] -= h;
        g[k] = (f(&hi) - f(&lo)) / (2.0 * h);
    }
    g
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = 1.0 + a.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den
}
