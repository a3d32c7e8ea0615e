//! Evaluation of the transfer function T(lambda) = C M(lambda)^{-1} B with
//! M(lambda) = lambda E - A_0 - sum_i A_i exp(-lambda tau_i), its asymptotic
//! counterpart built from the algebraic blocks, and their derivatives with
//! respect to frequency, torus angles and affine system parameters.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lapack::{self, ComplexLu};
use crate::model::{DdaeSystem, ParameterizedSystem, PartitionedSystem};

/// Reciprocal condition bound below which M(lambda) counts as singular
/// (lambda is then a characteristic root up to roundoff).
pub const SINGULAR_RCOND: f64 = 1e3 * f64::EPSILON;

/// M(lambda) and its frequency derivative evaluated at one point.
pub struct CharacteristicMatrixEval {
    pub lambda: Complex64,
    pub m: DMatrix<Complex64>,
    pub m_lambda: DMatrix<Complex64>,
}

/// M(lambda) = lambda E - A_0 - sum_{i>=1} A_i exp(-lambda tau_i).
pub fn char_matrix(sys: &DdaeSystem, lambda: Complex64) -> DMatrix<Complex64> {
    let n = sys.n();
    let mut m = DMatrix::from_fn(n, n, |i, j| Complex64::new(sys.e[(i, j)], 0.0) * lambda);
    for (tau, a) in &sys.delay_terms {
        let w = (-lambda * *tau).exp();
        for j in 0..n {
            for i in 0..n {
                m[(i, j)] -= w * a[(i, j)];
            }
        }
    }
    m
}

/// d/dlambda M(lambda) = E + sum_{i>=1} tau_i A_i exp(-lambda tau_i).
pub fn char_matrix_derivative(sys: &DdaeSystem, lambda: Complex64) -> DMatrix<Complex64> {
    let n = sys.n();
    let mut md = sys.e.map(|x| Complex64::new(x, 0.0));
    for (tau, a) in &sys.delay_terms {
        if *tau > 0.0 {
            let w = (-lambda * *tau).exp() * *tau;
            for j in 0..n {
                for i in 0..n {
                    md[(i, j)] += w * a[(i, j)];
                }
            }
        }
    }
    md
}

pub fn char_eval(sys: &DdaeSystem, lambda: Complex64) -> CharacteristicMatrixEval {
    CharacteristicMatrixEval {
        lambda,
        m: char_matrix(sys, lambda),
        m_lambda: char_matrix_derivative(sys, lambda),
    }
}

/// Factorization of M(lambda) with the singularity guard applied.
pub fn factor_char_matrix(sys: &DdaeSystem, lambda: Complex64) -> Result<ComplexLu> {
    let lu = ComplexLu::factor(char_matrix(sys, lambda))?;
    let rcond = lu.rcond()?;
    if rcond < SINGULAR_RCOND {
        return Err(Error::SingularAtFrequency { lambda, rcond });
    }
    Ok(lu)
}

fn complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// T(lambda) = C M(lambda)^{-1} B.
pub fn eval_T(sys: &DdaeSystem, lambda: Complex64) -> Result<DMatrix<Complex64>> {
    let lu = factor_char_matrix(sys, lambda)?;
    let x = lu.solve(&complex(&sys.b))?;
    Ok(complex(&sys.c) * x)
}

/// Same transfer function assembled from the null-space partition blocks,
/// giving an independent evaluation route for testing: rows and columns are
/// transformed by [U_perp U] and [V_perp V] and the blockwise resolvent is
/// inverted instead.
pub fn eval_T_block_form(
    part: &PartitionedSystem,
    lambda: Complex64,
) -> Result<DMatrix<Complex64>> {
    let sys = &part.sys;
    let r = sys.n() - part.nu;
    let n = sys.n();
    let mut mbar = DMatrix::<Complex64>::zeros(n, n);
    for (idx, (tau, _)) in sys.delay_terms.iter().enumerate() {
        let w = (-lambda * *tau).exp();
        for (dst_r, dst_c, blk) in [
            (0usize, 0usize, &part.a11[idx]),
            (0, r, &part.a12[idx]),
            (r, 0, &part.a21[idx]),
            (r, r, &part.a22[idx]),
        ] {
            for j in 0..blk.ncols() {
                for i in 0..blk.nrows() {
                    mbar[(dst_r + i, dst_c + j)] -= w * blk[(i, j)];
                }
            }
        }
    }
    for j in 0..r {
        for i in 0..r {
            mbar[(i, j)] += lambda * part.e11[(i, j)];
        }
    }
    let lu = ComplexLu::factor(mbar)?;
    let rcond = lu.rcond()?;
    if rcond < SINGULAR_RCOND {
        return Err(Error::SingularAtFrequency { lambda, rcond });
    }
    let mut bbar = DMatrix::<Complex64>::zeros(n, sys.n_w());
    bbar.view_mut((0, 0), (r, sys.n_w()))
        .copy_from(&complex(&part.b1));
    bbar.view_mut((r, 0), (part.nu, sys.n_w()))
        .copy_from(&complex(&part.b2));
    let x = lu.solve(&bbar)?;
    let mut cbar = DMatrix::<Complex64>::zeros(sys.n_z(), n);
    cbar.view_mut((0, 0), (sys.n_z(), r))
        .copy_from(&complex(&part.c1));
    cbar.view_mut((0, r), (sys.n_z(), part.nu))
        .copy_from(&complex(&part.c2));
    Ok(cbar * x)
}

fn a22_at(part: &PartitionedSystem, weights: &[Complex64]) -> DMatrix<Complex64> {
    part.a22_weighted(weights)
}

fn eval_ta_with_weights(
    part: &PartitionedSystem,
    weights: &[Complex64],
    theta_for_error: &[f64],
) -> Result<DMatrix<Complex64>> {
    if part.nu == 0 {
        return Ok(DMatrix::zeros(part.sys.n_z(), part.sys.n_w()));
    }
    let a22 = a22_at(part, weights);
    let lu = ComplexLu::factor(a22)?;
    if lu.rcond()? < SINGULAR_RCOND {
        return Err(Error::SingularOnTorus {
            theta: theta_for_error.to_vec(),
        });
    }
    let x = lu.solve(&complex(&part.b2))?;
    Ok(-(complex(&part.c2) * x))
}

/// Asymptotic transfer function on the torus:
/// Ta(theta) = -C_2 (U^T A_0 V + sum_i U^T A_i V exp(-j theta_i))^{-1} B_2,
/// with one angle per positive delay.
pub fn eval_Ta_torus(part: &PartitionedSystem, theta: &[f64]) -> Result<DMatrix<Complex64>> {
    if theta.len() != part.m() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} torus angles, got {}",
            part.m(),
            theta.len()
        )));
    }
    let weights: Vec<Complex64> = theta
        .iter()
        .map(|t| Complex64::new(0.0, -*t).exp())
        .collect();
    eval_ta_with_weights(part, &weights, theta)
}

/// Asymptotic transfer function along the complex plane:
/// Ta(lambda) = -C_2 (U^T A_0 V + sum_i U^T A_i V exp(-lambda tau_i))^{-1} B_2.
pub fn eval_Ta_lambda(part: &PartitionedSystem, lambda: Complex64) -> Result<DMatrix<Complex64>> {
    let weights: Vec<Complex64> = part
        .delays()
        .iter()
        .map(|tau| (-lambda * *tau).exp())
        .collect();
    let theta: Vec<f64> = part.delays().iter().map(|tau| lambda.im * *tau).collect();
    eval_ta_with_weights(part, &weights, &theta)
}

/// Derivative of Ta(theta) with respect to angle theta_k (k indexes the
/// positive delays): C_2 A22^{-1} (-j U^T A_k V e^{-j theta_k}) A22^{-1} B_2.
pub fn eval_dTa_dtheta(
    part: &PartitionedSystem,
    theta: &[f64],
    k: usize,
) -> Result<DMatrix<Complex64>> {
    if k >= part.m() {
        return Err(Error::IndexOutOfRange {
            index: k,
            count: part.m(),
        });
    }
    let weights: Vec<Complex64> = theta
        .iter()
        .map(|t| Complex64::new(0.0, -*t).exp())
        .collect();
    let a22 = a22_at(part, &weights);
    let lu = ComplexLu::factor(a22)?;
    if lu.rcond()? < SINGULAR_RCOND {
        return Err(Error::SingularOnTorus {
            theta: theta.to_vec(),
        });
    }
    let x = lu.solve(&complex(&part.b2))?;
    let yt = lu.solve_transpose(&complex(&part.c2).transpose())?;
    let mid = complex(&part.a22[k + 1]) * (Complex64::new(0.0, -1.0) * weights[k]);
    Ok(yt.transpose() * mid * x)
}

/// dT/dlambda = -C M^{-1} M_lambda M^{-1} B.
pub fn eval_dT(sys: &DdaeSystem, lambda: Complex64) -> Result<DMatrix<Complex64>> {
    let ev = char_eval(sys, lambda);
    let lu = ComplexLu::factor(ev.m)?;
    let rcond = lu.rcond()?;
    if rcond < SINGULAR_RCOND {
        return Err(Error::SingularAtFrequency { lambda, rcond });
    }
    let x = lu.solve(&complex(&sys.b))?;
    let yt = lu.solve_transpose(&complex(&sys.c).transpose())?;
    Ok(-(yt.transpose() * (ev.m_lambda * x)))
}

/// Derivatives of T with respect to every affine parameter at once, reusing a
/// single factorization of M(lambda):
/// dT/dp_k = (dC/dp_k) M^{-1} B + C M^{-1} (sum_i dA_i/dp_k e^{-lambda tau_i}) M^{-1} B
///         + C M^{-1} (dB/dp_k).
pub fn eval_dT_dp_all(
    psys: &ParameterizedSystem,
    p: &[f64],
    lambda: Complex64,
) -> Result<Vec<DMatrix<Complex64>>> {
    let sys = psys.instantiate(p)?;
    let lu = factor_char_matrix(&sys, lambda)?;
    let x = lu.solve(&complex(&sys.b))?;
    let yt = lu.solve_transpose(&complex(&sys.c).transpose())?;
    let y = yt.transpose();
    let weights: Vec<Complex64> = sys
        .delay_terms
        .iter()
        .map(|(tau, _)| (-lambda * *tau).exp())
        .collect();
    let mut out = Vec::with_capacity(psys.n_p());
    for k in 0..psys.n_p() {
        let ap = psys.a_deriv_weighted(k, &weights)?;
        let mut d = &y * (ap * &x);
        let bp = psys.b_deriv(k)?;
        if bp.iter().any(|&v| v != 0.0) {
            d += &y * complex(&bp);
        }
        let cp = psys.c_deriv(k)?;
        if cp.iter().any(|&v| v != 0.0) {
            d += complex(&cp) * &x;
        }
        out.push(d);
    }
    Ok(out)
}

/// Derivative of T with respect to the k-th affine parameter.
pub fn eval_dT_dp(
    psys: &ParameterizedSystem,
    p: &[f64],
    lambda: Complex64,
    k: usize,
) -> Result<DMatrix<Complex64>> {
    if k >= psys.n_p() {
        return Err(Error::IndexOutOfRange {
            index: k,
            count: psys.n_p(),
        });
    }
    let sys = psys.instantiate(p)?;
    let lu = factor_char_matrix(&sys, lambda)?;
    let x = lu.solve(&complex(&sys.b))?;
    let yt = lu.solve_transpose(&complex(&sys.c).transpose())?;
    let y = yt.transpose();
    let weights: Vec<Complex64> = sys
        .delay_terms
        .iter()
        .map(|(tau, _)| (-lambda * *tau).exp())
        .collect();
    let ap = psys.a_deriv_weighted(k, &weights)?;
    let mut d = &y * (ap * &x);
    let bp = psys.b_deriv(k)?;
    if bp.iter().any(|&v| v != 0.0) {
        d += &y * complex(&bp);
    }
    let cp = psys.c_deriv(k)?;
    if cp.iter().any(|&v| v != 0.0) {
        d += complex(&cp) * &x;
    }
    Ok(d)
}

/// One point of a singular value sweep; `sigma` is None where M(j omega) is
/// singular (omega coincides with a characteristic root).
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub omega: f64,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FrequencyResponse {
    pub points: Vec<SweepPoint>,
    /// (omega, sigma) of the largest sampled value, if any point was regular.
    pub peak: Option<(f64, f64)>,
}

/// Largest singular value of T(j omega) over a frequency grid (strictly
/// increasing). Grid points hitting characteristic roots become gaps.
pub fn sigma_sweep(sys: &DdaeSystem, grid: &[f64]) -> Result<FrequencyResponse> {
    if grid.is_empty() {
        return Err(Error::AssumptionViolation("empty frequency grid".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::AssumptionViolation(
            "frequency grid must be strictly increasing".into(),
        ));
    }
    let points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&omega| {
            let sigma = eval_T(sys, Complex64::new(0.0, omega))
                .ok()
                .and_then(|t| lapack::singular_values(&t).ok().map(|s| s.max()));
            SweepPoint { omega, sigma }
        })
        .collect();
    let peak = points
        .iter()
        .filter_map(|p| p.sigma.map(|s| (p.omega, s)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    Ok(FrequencyResponse { points, peak })
}

/// Logarithmically spaced grid, endpoints included.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && points >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}
