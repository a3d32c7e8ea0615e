//! Characteristic roots det(M(lambda)) = 0 via the spectral discretization
//! pencil plus a Newton correction on the true nonlinear eigenvalue problem,
//! the spectral abscissa, the delay-difference abscissa (abscissa of the
//! associated difference equation, robust against delay perturbations), and
//! strong stability.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::discretize::discretize;
use crate::error::{Error, Result};
use crate::lapack::{self, ComplexLu};
use crate::model::{DdaeSystem, PartitionedSystem};
use crate::strong_norm::effective_delays;
use crate::torus::{maximize_on_torus, TorusEval};
use crate::transfer::{char_matrix, char_matrix_derivative};

#[derive(Debug, Clone)]
pub struct RootOptions {
    /// Discretization degree; sized from the root window when absent.
    pub order: Option<usize>,
    pub newton_max_iter: usize,
    /// Accept a corrected root when ||M(lambda) x|| <= tol * ||M_lambda||_F.
    pub residual_rel_tol: f64,
    /// Roots closer than this (relative) collapse to one entry whose
    /// multiplicity counts the merges.
    pub dedupe_tol: f64,
    /// Single-linkage radius grouping nearby roots into clusters, the
    /// numerical stand-in for multiple eigenvalues split by roundoff.
    pub cluster_radius: f64,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            order: None,
            newton_max_iter: 50,
            residual_rel_tol: 1e-10,
            dedupe_tol: 1e-6,
            cluster_radius: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CharRoot {
    pub lambda: Complex64,
    /// ||M(lambda) x|| / ||x|| at the returned point.
    pub residual: f64,
    /// Newton correction converged; otherwise lambda is the raw pencil value.
    pub corrected: bool,
    /// Number of pencil eigenvalues that converged onto this root.
    pub multiplicity: usize,
}

#[derive(Debug, Clone)]
pub struct RootCluster {
    pub center: Complex64,
    pub multiplicity: usize,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    /// Distinct roots, rightmost first.
    pub roots: Vec<CharRoot>,
    /// Single-linkage clusters of the roots, rightmost center first.
    pub clusters: Vec<RootCluster>,
    /// max Re over the returned roots (NEG_INFINITY when none).
    pub abscissa: f64,
    pub r_min: f64,
    pub order_used: usize,
}

#[derive(Debug, Clone)]
pub struct CorrectedRoot {
    pub lambda: Complex64,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct StrongStabilityReport {
    /// Spectral abscissa (sup Re of the characteristic roots).
    pub alpha: f64,
    /// Delay-difference abscissa; NEG_INFINITY when the delayed terms do not
    /// couple into the algebraic part.
    pub c_d: f64,
    /// Robust spectral abscissa max(alpha, c_d): the limit abscissa under
    /// arbitrarily small delay perturbations.
    pub alpha_bar: f64,
    pub strongly_stable: bool,
}

/// Heuristic bound on |lambda| over characteristic roots with
/// Re(lambda) >= r, used to size the discretization: on such roots
/// |lambda| ||E x|| = ||sum_i A_i e^{-lambda tau_i} x||.
fn envelope_frequency(sys: &DdaeSystem, r: f64) -> f64 {
    let sigma_pos = lapack::svd_real(&sys.e)
        .ok()
        .map(|(_, s, _)| {
            let smax = s.max();
            let tol = sys.n() as f64 * f64::EPSILON * smax;
            s.iter()
                .cloned()
                .filter(|&x| x > tol)
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|x| x.is_finite())
        .unwrap_or(1.0);
    let amp: f64 = sys
        .delay_terms
        .iter()
        .map(|(tau, a)| a.norm() * (-r.min(0.0) * tau).exp())
        .sum();
    (amp / sigma_pos) * 1.1 + 1.0
}

fn order_for_envelope(sys: &DdaeSystem, env: f64, dim_cap: usize) -> usize {
    let tau_max = sys.tau_max();
    if tau_max == 0.0 {
        return 2;
    }
    let n = sys.n();
    let max_order = (dim_cap / n).saturating_sub(1).clamp(6, 240);
    (((env * tau_max) / 1.6).ceil() as usize + 8).clamp(20, max_order.max(20))
}

/// Newton correction of a candidate root on the bordered system
/// [M(lambda) x; c^H x - 1] = 0 with Jacobian [[M, M_lambda x], [c^H, 0]].
pub fn correct_root(sys: &DdaeSystem, lambda0: Complex64) -> Result<CorrectedRoot> {
    correct_root_with(sys, lambda0, 50, 1e-10)
}

fn correct_root_with(
    sys: &DdaeSystem,
    lambda0: Complex64,
    max_iter: usize,
    rel_tol: f64,
) -> Result<CorrectedRoot> {
    let n = sys.n();
    let m0 = char_matrix(sys, lambda0);
    let (_, _, vh) = lapack::svd_complex(&m0)?;
    let mut x: DVector<Complex64> = vh.row(n - 1).map(|z| z.conj()).transpose();
    let c = x.clone();
    let mut lambda = lambda0;
    let residual_at = |m: &nalgebra::DMatrix<Complex64>, x: &DVector<Complex64>| -> f64 {
        (m * x).norm() / x.norm().max(1e-300)
    };
    let mut best = CorrectedRoot {
        lambda: lambda0,
        residual: residual_at(&m0, &x),
        converged: false,
        iterations: 0,
    };
    for it in 0..max_iter {
        let m = char_matrix(sys, lambda);
        let ml = char_matrix_derivative(sys, lambda);
        let res = residual_at(&m, &x);
        if res < best.residual {
            best = CorrectedRoot {
                lambda,
                residual: res,
                converged: false,
                iterations: it,
            };
        }
        if res <= rel_tol * ml.norm().max(1e-300) {
            return Ok(CorrectedRoot {
                lambda,
                residual: res,
                converged: true,
                iterations: it,
            });
        }
        let mlx = &ml * &x;
        let mut jac = nalgebra::DMatrix::<Complex64>::zeros(n + 1, n + 1);
        jac.view_mut((0, 0), (n, n)).copy_from(&m);
        jac.view_mut((0, n), (n, 1)).copy_from(&mlx);
        for j in 0..n {
            jac[(n, j)] = c[j].conj();
        }
        let mut rhs = nalgebra::DMatrix::<Complex64>::zeros(n + 1, 1);
        let mx = &m * &x;
        for i in 0..n {
            rhs[(i, 0)] = mx[i];
        }
        rhs[(n, 0)] = c.dotc(&x) - Complex64::new(1.0, 0.0);
        let lu = ComplexLu::factor(jac)?;
        let delta = match lu.solve(&rhs) {
            Ok(d) => d,
            Err(_) => break,
        };
        for i in 0..n {
            x[i] -= delta[(i, 0)];
        }
        lambda -= delta[(n, 0)];
        if !lambda.re.is_finite()
            || !lambda.im.is_finite()
            || (lambda - lambda0).norm() > 10.0 * (1.0 + lambda0.norm())
        {
            break;
        }
    }
    Ok(best)
}

fn snap_imag(mut l: Complex64) -> Complex64 {
    if l.im.abs() <= 1e-9 * (1.0 + l.re.abs()) {
        l.im = 0.0;
    }
    l
}

fn dedupe_roots(mut raw: Vec<CharRoot>, tol: f64) -> Vec<CharRoot> {
    raw.sort_by(|a, b| {
        b.lambda
            .re
            .partial_cmp(&a.lambda.re)
            .unwrap()
            .then(a.lambda.im.partial_cmp(&b.lambda.im).unwrap())
    });
    let mut out: Vec<CharRoot> = Vec::new();
    for r in raw {
        if let Some(hit) = out
            .iter_mut()
            .find(|o| (o.lambda - r.lambda).norm() <= tol * (1.0 + o.lambda.norm()))
        {
            hit.multiplicity += r.multiplicity;
            if r.corrected && (!hit.corrected || r.residual < hit.residual) {
                hit.lambda = r.lambda;
                hit.residual = r.residual;
                hit.corrected = true;
            }
        } else {
            out.push(r);
        }
    }
    // A root reached only by long-travel correction still exists once.
    for r in out.iter_mut() {
        r.multiplicity = r.multiplicity.max(1);
    }
    out
}

fn cluster_roots(roots: &[CharRoot], radius: f64) -> Vec<RootCluster> {
    let k = roots.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if (roots[i].lambda - roots[j].lambda).norm() <= radius {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut groups: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for i in 0..k {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut clusters: Vec<RootCluster> = groups
        .values()
        .map(|members| {
            let mult: usize = members.iter().map(|&i| roots[i].multiplicity).sum();
            let mut center = Complex64::new(0.0, 0.0);
            for &i in members {
                center += roots[i].lambda * roots[i].multiplicity as f64;
            }
            center /= mult as f64;
            let radius = members
                .iter()
                .map(|&i| (roots[i].lambda - center).norm())
                .fold(0.0, f64::max);
            RootCluster {
                center: snap_imag(center),
                multiplicity: mult,
                radius,
            }
        })
        .collect();
    clusters.sort_by(|a, b| b.center.re.partial_cmp(&a.center.re).unwrap());
    clusters
}

/// Newton correction travel distance beyond which a candidate no longer
/// counts toward the multiplicity of the root it lands on: spurious pencil
/// eigenvalues are pulled in from far away, while the discretized copies of a
/// genuine multiple root start out clustered around it.
const MULTIPLICITY_TRAVEL_TOL: f64 = 0.05;

fn correct_candidates(
    sys: &DdaeSystem,
    cands: Vec<Complex64>,
    opts: &RootOptions,
) -> Vec<CharRoot> {
    cands
        .into_par_iter()
        .filter_map(|l0| {
            let cr =
                correct_root_with(sys, l0, opts.newton_max_iter, opts.residual_rel_tol).ok()?;
            let lambda = snap_imag(if cr.converged { cr.lambda } else { l0 });
            let stayed_local =
                (lambda - l0).norm() <= MULTIPLICITY_TRAVEL_TOL * (1.0 + lambda.norm());
            Some(CharRoot {
                lambda,
                residual: cr.residual,
                corrected: cr.converged,
                multiplicity: if stayed_local { 1 } else { 0 },
            })
        })
        .collect()
}

/// All characteristic roots with Re(lambda) >= r_min, up to the resolution of
/// the discretization (candidates beyond its trusted frequency range are not
/// reported).
pub fn char_roots(sys: &DdaeSystem, r_min: f64, opts: &RootOptions) -> Result<SpectrumResult> {
    let order = opts
        .order
        .unwrap_or_else(|| order_for_envelope(sys, envelope_frequency(sys, r_min), 1000));
    let disc = discretize(sys, order)?;
    let eigs = lapack::eig_pencil_real(&disc.a_n, &disc.e_n)?;
    let tau_max = sys.tau_max();
    let trust = if tau_max > 0.0 {
        1.8 * order as f64 / tau_max
    } else {
        f64::INFINITY
    };
    let margin = 0.05 * (1.0 + r_min.abs());
    let cands: Vec<Complex64> = eigs
        .into_iter()
        .filter(|l| l.re >= r_min - margin && l.im.abs() <= trust)
        .collect();
    let corrected = correct_candidates(sys, cands, opts);
    let mut roots = dedupe_roots(corrected, opts.dedupe_tol);
    roots.retain(|r| r.lambda.re >= r_min);
    let clusters = cluster_roots(&roots, opts.cluster_radius);
    let abscissa = roots
        .first()
        .map(|r| r.lambda.re)
        .unwrap_or(f64::NEG_INFINITY);
    Ok(SpectrumResult {
        roots,
        clusters,
        abscissa,
        r_min,
        order_used: order,
    })
}

/// Spectral abscissa with the root pinning it down, bootstrapped: compute
/// rightmost roots at a small degree, then grow the degree until it covers
/// the frequency envelope of everything right of the found abscissa.
pub fn spectral_abscissa_detailed(
    sys: &DdaeSystem,
) -> Result<(f64, Option<Complex64>, SpectrumResult)> {
    let opts = RootOptions::default();
    let tau_max = sys.tau_max();
    let mut order = order_for_envelope(sys, 1.0, 600).clamp(2, 20);
    if tau_max == 0.0 {
        order = 2;
    }
    let mut last: Option<SpectrumResult> = None;
    for round in 0..4 {
        let disc = discretize(sys, order)?;
        let eigs = lapack::eig_pencil_real(&disc.a_n, &disc.e_n)?;
        let trust = if tau_max > 0.0 {
            1.8 * order as f64 / tau_max
        } else {
            f64::INFINITY
        };
        let mut cands: Vec<Complex64> = eigs.into_iter().filter(|l| l.im.abs() <= trust).collect();
        cands.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
        cands.truncate(60);
        let corrected = correct_candidates(sys, cands, &opts);
        let roots = dedupe_roots(corrected, opts.dedupe_tol);
        let clusters = cluster_roots(&roots, opts.cluster_radius);
        let abscissa = roots
            .first()
            .map(|r| r.lambda.re)
            .unwrap_or(f64::NEG_INFINITY);
        let result = SpectrumResult {
            roots,
            clusters,
            abscissa,
            r_min: f64::NEG_INFINITY,
            order_used: order,
        };
        let alpha = result.abscissa;
        if tau_max == 0.0 || !alpha.is_finite() {
            last = Some(result);
            break;
        }
        let env = envelope_frequency(sys, alpha - 0.3 * (1.0 + alpha.abs()));
        let needed = order_for_envelope(sys, env, 600);
        last = Some(result);
        if needed <= order || round == 3 {
            break;
        }
        order = needed;
    }
    let result = last.unwrap();
    let rightmost = result.roots.first().map(|r| r.lambda);
    Ok((result.abscissa, rightmost, result))
}

pub fn spectral_abscissa(sys: &DdaeSystem) -> Result<f64> {
    spectral_abscissa_detailed(sys).map(|(a, _, _)| a)
}

fn complexify(m: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Spectral radius of (U^T A_0 V)^{-1} sum_i U^T A_i V e^{-c tau_i + j theta_i}
/// maximized over the torus, together with the maximizer details needed for
/// derivative computations: (gamma, theta, d gamma / d c).
pub(crate) fn gamma_of_c(
    part: &PartitionedSystem,
    eff: &[usize],
    c: f64,
    grid_density: usize,
) -> Result<(f64, Vec<f64>, f64)> {
    let a022 = ComplexLu::factor(complexify(&part.a22[0]))?;
    let delays = part.delays().to_vec();
    let eval = |th_eff: &[f64]| -> Result<(f64, Vec<f64>, f64, bool)> {
        let nu = part.nu;
        let mut g = nalgebra::DMatrix::<Complex64>::zeros(nu, nu);
        for (j, &i) in eff.iter().enumerate() {
            let w = (-c * delays[i]).exp() * Complex64::new(0.0, th_eff[j]).exp();
            let blk = complexify(&part.a22[i + 1]);
            g += blk * w;
        }
        let f = a022.solve(&g)?;
        let eig = lapack::eig_complex(&f, true)?;
        let mut order: Vec<usize> = (0..eig.values.len()).collect();
        order.sort_by(|&a, &b| {
            eig.values[b]
                .norm()
                .partial_cmp(&eig.values[a].norm())
                .unwrap()
        });
        let top = order[0];
        let mu = eig.values[top];
        let rho = mu.norm();
        if rho < 1e-300 {
            return Ok((0.0, vec![0.0; eff.len()], 0.0, true));
        }
        let right = eig.right.as_ref().unwrap().column(top).into_owned();
        let left = eig.left.as_ref().unwrap().column(top).into_owned();
        let denom = left.dotc(&right);
        let simple = order.len() < 2
            || (eig.values[order[0]].norm() - eig.values[order[1]].norm()) > 1e-8 * rho;
        if denom.norm() < 1e-12 {
            return Ok((rho, vec![0.0; eff.len()], 0.0, false));
        }
        let phase = mu.conj() / rho;
        let mut grad = Vec::with_capacity(eff.len());
        let mut dgdc_term = nalgebra::DMatrix::<Complex64>::zeros(nu, nu);
        for (j, &i) in eff.iter().enumerate() {
            let w = (-c * delays[i]).exp() * Complex64::new(0.0, th_eff[j]).exp();
            let blk = complexify(&part.a22[i + 1]);
            let dg_dth = &blk * (Complex64::new(0.0, 1.0) * w);
            let df = a022.solve(&dg_dth)?;
            let dmu = left.dotc(&(&df * &right)) / denom;
            grad.push((phase * dmu).re);
            dgdc_term += blk * (w * (-delays[i]));
        }
        let dfc = a022.solve(&dgdc_term)?;
        let dmu_dc = left.dotc(&(&dfc * &right)) / denom;
        let dgamma_dc = (phase * dmu_dc).re;
        Ok((rho, grad, dgamma_dc, simple))
    };

    let torus_fn = |th: &[f64]| -> Result<TorusEval> {
        let (rho, grad, _, simple) = eval(th)?;
        Ok(TorusEval {
            value: rho,
            grad,
            simple,
        })
    };
    let opt = maximize_on_torus(eff.len(), grid_density, &torus_fn, 1e-9)?;
    let (rho, _, dgdc, _) = eval(&opt.theta)?;
    Ok((rho.max(opt.value), opt.theta, dgdc))
}

/// Abscissa of the associated difference equation: the unique c with
/// max_theta rho((U^T A_0 V)^{-1} sum_i U^T A_i V e^{-c tau_i + j theta_i}) = 1,
/// or NEG_INFINITY when the delayed terms do not reach the algebraic part.
pub fn difference_abscissa(part: &PartitionedSystem) -> Result<f64> {
    if part.nu == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let eff = effective_delays(part);
    if eff.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let density = 24;
    let gamma = |c: f64| gamma_of_c(part, &eff, c, density);

    // Bracket gamma(c) = 1: gamma decreases in c, to 0 as c -> inf, and
    // diverges as c -> -inf unless the coupling is nilpotent for every theta.
    let mut hi = 0.0f64;
    let mut g_hi = gamma(hi)?;
    while g_hi.0 >= 1.0 {
        hi += (hi.abs()).max(1.0);
        if hi > 1e3 {
            return Err(Error::NonConvergence(
                "difference abscissa: no upper bracket below c = 1e3".into(),
            ));
        }
        g_hi = gamma(hi)?;
    }
    let mut lo = hi - 1.0;
    let mut g_lo = gamma(lo)?;
    while g_lo.0 < 1.0 {
        lo -= (lo.abs()).max(1.0);
        if lo < -60.0 {
            // Coupling is nilpotent on the whole torus; there are no
            // difference-equation roots at all.
            return Ok(f64::NEG_INFINITY);
        }
        g_lo = gamma(lo)?;
    }
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        let g_mid = gamma(mid)?;
        if g_mid.0 >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Newton polish on gamma(c) = 1 to push the bisection result to machine
    // accuracy (the value feeds finite-difference gradient checks).
    let mut c = 0.5 * (lo + hi);
    for _ in 0..6 {
        let (g, _, dgdc) = gamma(c)?;
        if !dgdc.is_finite() || dgdc == 0.0 {
            break;
        }
        let step = (g - 1.0) / dgdc;
        if !step.is_finite() {
            break;
        }
        let next = c - step;
        if (next - c).abs() > 1.0 {
            break;
        }
        c = next;
        if step.abs() < 1e-14 * (1.0 + c.abs()) {
            break;
        }
    }
    Ok(c)
}

/// Robust spectral abscissa: max of the spectral abscissa and the
/// delay-difference abscissa. Negative iff the system is strongly
/// exponentially stable (stability persists under arbitrarily small delay
/// perturbations).
pub fn robust_spectral_abscissa(sys: &DdaeSystem) -> Result<StrongStabilityReport> {
    let part = sys.partition()?;
    let alpha = spectral_abscissa(sys)?;
    let c_d = difference_abscissa(&part)?;
    let alpha_bar = alpha.max(c_d);
    Ok(StrongStabilityReport {
        alpha,
        c_d,
        alpha_bar,
        strongly_stable: alpha_bar < 0.0,
    })
}

pub fn is_strongly_stable(sys: &DdaeSystem) -> Result<bool> {
    Ok(robust_spectral_abscissa(sys)?.strongly_stable)
}
