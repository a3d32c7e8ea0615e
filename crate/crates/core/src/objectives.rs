//! Values and analytic gradients of the two synthesis objectives as
//! functions of the free controller parameters: the robust spectral abscissa
//! (for stabilization) and the strong H-infinity norm (for performance).
//! Each also reports whether the point looked smooth; ties between branches,
//! clustered rightmost roots and coalescing singular values all flag
//! nonsmoothness so the optimizer can fall back to sampling.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lapack::{self, ComplexLu};
use crate::model::{ParameterizedSystem, PartitionedSystem};
use crate::spectrum;
use crate::strong_norm::{self, effective_delays, NormBranch, NormOptions};
use crate::transfer;

fn complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn bilinear(u: &DVector<Complex64>, m: &DMatrix<Complex64>, v: &DVector<Complex64>) -> Complex64 {
    let mv = m * v;
    u.iter().zip(mv.iter()).map(|(a, b)| a.conj() * b).sum()
}

fn dominant_eig(
    f: &DMatrix<Complex64>,
) -> Result<(Complex64, DVector<Complex64>, DVector<Complex64>, bool)> {
    let eig = lapack::eig_complex(f, true)?;
    let mut order: Vec<usize> = (0..eig.values.len()).collect();
    order.sort_by(|&a, &b| {
        eig.values[b]
            .norm()
            .partial_cmp(&eig.values[a].norm())
            .unwrap()
    });
    let top = order[0];
    let mu = eig.values[top];
    let simple = order.len() < 2
        || eig.values[order[0]].norm() - eig.values[order[1]].norm() > 1e-8 * mu.norm().max(1e-300);
    let x = eig.right.as_ref().unwrap().column(top).into_owned();
    let y = eig.left.as_ref().unwrap().column(top).into_owned();
    Ok((mu, x, y, simple))
}

/// Gradient of the rightmost-root real part via the eigenvalue sensitivity
/// d lambda / d p = (y^H (sum_i dA_i/dp e^{-lambda tau_i}) x) / (y^H M_lambda x).
fn abscissa_gradient(
    psys: &ParameterizedSystem,
    sys: &crate::model::DdaeSystem,
    lambda: Complex64,
) -> Result<(Vec<f64>, bool)> {
    let m = transfer::char_matrix(sys, lambda);
    let ml = transfer::char_matrix_derivative(sys, lambda);
    let (uf, _, vh) = lapack::svd_complex(&m)?;
    let n = sys.n();
    let x: DVector<Complex64> = vh.row(n - 1).map(|z| z.conj()).transpose();
    let y: DVector<Complex64> = uf.column(n - 1).into_owned();
    let denom = y.dotc(&(&ml * &x));
    let well_conditioned = denom.norm() > 1e-8 * ml.norm().max(1e-300);
    if denom.norm() == 0.0 {
        return Ok((vec![0.0; psys.n_p()], false));
    }
    let weights: Vec<Complex64> = sys
        .delay_terms
        .iter()
        .map(|(tau, _)| (-lambda * *tau).exp())
        .collect();
    let mut grad = Vec::with_capacity(psys.n_p());
    for k in 0..psys.n_p() {
        let ap = psys.a_deriv_weighted(k, &weights)?;
        grad.push((y.dotc(&(ap * &x)) / denom).re);
    }
    Ok((grad, well_conditioned))
}

/// Gradient of the delay-difference abscissa through the implicit relation
/// gamma(c, p) = 1: dc/dp = -(dgamma/dp) / (dgamma/dc), with the torus
/// maximizer held fixed (envelope theorem).
fn difference_gradient(
    psys: &ParameterizedSystem,
    part: &PartitionedSystem,
    c_d: f64,
) -> Result<(Vec<f64>, bool)> {
    let eff = effective_delays(part);
    let (_, theta_eff, dgdc) = spectrum::gamma_of_c(part, &eff, c_d, 24)?;
    let m = part.m();
    let delays = part.delays().to_vec();
    let mut theta = vec![0.0; m];
    for (j, &i) in eff.iter().enumerate() {
        theta[i] = theta_eff[j];
    }
    let a022 = ComplexLu::factor(complex(&part.a22[0]))?;
    let nu = part.nu;
    let mut gmat = DMatrix::<Complex64>::zeros(nu, nu);
    let mut wfull = vec![Complex64::new(0.0, 0.0); m + 1];
    for i in 0..m {
        let w = (-c_d * delays[i]).exp() * Complex64::new(0.0, theta[i]).exp();
        wfull[i + 1] = w;
        gmat += complex(&part.a22[i + 1]) * w;
    }
    let f = a022.solve(&gmat)?;
    let (mu, x, y, simple) = dominant_eig(&f)?;
    let rho = mu.norm();
    let denom = y.dotc(&x);
    let mut smooth = simple && denom.norm() > 1e-12 && dgdc.is_finite() && dgdc.abs() > 1e-12;
    if rho < 1e-300 || denom.norm() == 0.0 || !dgdc.is_finite() || dgdc == 0.0 {
        return Ok((vec![0.0; psys.n_p()], false));
    }
    // A delay whose coupling block vanishes at this point leaves its torus
    // angle undetermined; if parameters can revive the block the max is
    // nonsmooth in p.
    for i in 0..m {
        if !eff.contains(&i) {
            let mut unit = vec![Complex64::new(0.0, 0.0); m + 1];
            unit[i + 1] = Complex64::new(1.0, 0.0);
            for k in 0..psys.n_p() {
                if psys.a22_deriv_weighted(part, k, &unit)?.norm() > 1e-12 {
                    smooth = false;
                }
            }
        }
    }
    let phase = mu.conj() / rho;
    let mut unit0 = vec![Complex64::new(0.0, 0.0); m + 1];
    unit0[0] = Complex64::new(1.0, 0.0);
    let mut grad = Vec::with_capacity(psys.n_p());
    for k in 0..psys.n_p() {
        let da022 = psys.a22_deriv_weighted(part, k, &unit0)?;
        let dg = psys.a22_deriv_weighted(part, k, &wfull)?;
        let df = a022.solve(&(dg - &da022 * &f))?;
        let dmu = y.dotc(&(&df * &x)) / denom;
        let dgamma_dp = (phase * dmu).re;
        grad.push(-dgamma_dp / dgdc);
    }
    Ok((grad, smooth))
}

/// Robust spectral abscissa of the closed loop at parameters p, with its
/// gradient. Returns (value, gradient, smooth).
pub fn grad_robust_abscissa(
    psys: &ParameterizedSystem,
    p: &[f64],
) -> Result<(f64, Vec<f64>, bool)> {
    let sys = psys.instantiate(p)?;
    let part = sys.partition()?;
    let (alpha, rightmost, spec_res) = spectrum::spectral_abscissa_detailed(&sys)?;
    let c_d = spectrum::difference_abscissa(&part)?;
    let value = alpha.max(c_d);
    if !value.is_finite() {
        // No roots and no difference coupling: constant objective.
        return Ok((value, vec![0.0; psys.n_p()], true));
    }
    let tie = (alpha - c_d).abs() <= 1e-8 * (1.0 + value.abs());
    if c_d > alpha {
        let (grad, smooth) = difference_gradient(psys, &part, c_d)?;
        return Ok((value, grad, smooth && !tie));
    }
    let lambda0 = rightmost
        .ok_or_else(|| Error::NonConvergence("finite abscissa without a rightmost root".into()))?;
    let lambda = if lambda0.im < 0.0 {
        lambda0.conj()
    } else {
        lambda0
    };
    let (grad, well_conditioned) = abscissa_gradient(psys, &sys, lambda)?;
    let mut smooth = well_conditioned && !tie;
    if spec_res.roots[0].multiplicity > 1 {
        smooth = false;
    }
    if let Some(second) = spec_res.roots.get(1) {
        let conj_partner = (second.lambda - spec_res.roots[0].lambda.conj()).norm()
            <= 1e-6 * (1.0 + lambda.norm());
        if !conj_partner && second.lambda.re >= alpha - 1e-8 * (1.0 + alpha.abs()) {
            smooth = false;
        }
    }
    Ok((value, grad, smooth))
}

/// Strong H-infinity norm of the closed loop at parameters p, with its
/// gradient Re(u^H dT/dp v) taken at the active peak (finite-frequency or
/// asymptotic). Errors with NotStronglyStable outside the stability region.
pub fn grad_strong_norm(psys: &ParameterizedSystem, p: &[f64]) -> Result<(f64, Vec<f64>, bool)> {
    grad_strong_norm_with(psys, p, &NormOptions::default())
}

pub fn grad_strong_norm_with(
    psys: &ParameterizedSystem,
    p: &[f64],
    opts: &NormOptions,
) -> Result<(f64, Vec<f64>, bool)> {
    let sys = psys.instantiate(p)?;
    let report = spectrum::robust_spectral_abscissa(&sys)?;
    if report.alpha_bar >= 0.0 {
        return Err(Error::NotStronglyStable {
            alpha: report.alpha_bar,
        });
    }
    let part = sys.partition()?;
    let asymptotic = strong_norm::strong_norm_Ta(&part, opts)?;
    let finite = strong_norm::hinf_norm_T_unchecked(&sys, asymptotic.value, opts)?;
    let value = finite.value.max(asymptotic.value);
    let branch = if finite.omega.is_some() && finite.value > asymptotic.value {
        NormBranch::FiniteFrequency
    } else {
        NormBranch::Asymptotic
    };
    let mut smooth = asymptotic.converged && finite.corrector_converged;
    if finite.omega.is_some()
        && (finite.value - asymptotic.value).abs() <= 1e-8 * (1.0 + value.abs())
    {
        smooth = false;
    }
    if let Some((_, rs)) = finite.runner_up {
        if branch == NormBranch::FiniteFrequency && rs >= value * (1.0 - 1e-8) {
            smooth = false;
        }
    }
    let grad = match branch {
        NormBranch::FiniteFrequency => {
            let omega = finite.omega.unwrap();
            let lam = Complex64::new(0.0, omega);
            let t = transfer::eval_T(&sys, lam)?;
            let (s, u, v) = lapack::svd_top(&t)?;
            if s.len() >= 2 && s[0] - s[1] <= 1e-8 * s[0] {
                smooth = false;
            }
            let derivs = transfer::eval_dT_dp_all(psys, p, lam)?;
            derivs.iter().map(|d| bilinear(&u, d, &v).re).collect()
        }
        NormBranch::Asymptotic => {
            let theta = &asymptotic.theta;
            let ta = transfer::eval_Ta_torus(&part, theta)?;
            let (s, u, v) = lapack::svd_top(&ta)?;
            if s.len() >= 2 && s[0] - s[1] <= 1e-8 * s[0] {
                smooth = false;
            }
            let m = part.m();
            let mut weights = vec![Complex64::new(1.0, 0.0); m + 1];
            for i in 0..m {
                weights[i + 1] = Complex64::new(0.0, -theta[i]).exp();
            }
            let lu = ComplexLu::factor(part.a22_weighted(&weights[1..]))?;
            let b2 = complex(&part.b2);
            let c2 = complex(&part.c2);
            let x = lu.solve(&b2)?;
            let y = lu.solve_transpose(&c2.transpose())?.transpose();
            let vmat = complex(&part.v);
            let ut = complex(&part.u).transpose();
            let mut grad = Vec::with_capacity(psys.n_p());
            for k in 0..psys.n_p() {
                let da22 = psys.a22_deriv_weighted(&part, k, &weights)?;
                let mut dta = &y * (&da22 * &x);
                let bp = psys.b_deriv(k)?;
                if bp.iter().any(|&e| e != 0.0) {
                    dta -= &y * (&ut * complex(&bp));
                }
                let cp = psys.c_deriv(k)?;
                if cp.iter().any(|&e| e != 0.0) {
                    dta -= (complex(&cp) * &vmat) * &x;
                }
                grad.push(bilinear(&u, &dta, &v).re);
            }
            grad
        }
    };
    Ok((value, grad, smooth))
}
