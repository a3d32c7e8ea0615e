//! Chebyshev spectral discretization of the delay system on [-tau_max, 0]
//! and the level-crossing computation used by the norm level-set iteration.
//!
//! The solution segment is collocated at Chebyshev extremal points; the
//! infinitesimal generator becomes a matrix pencil (A_N, E_N) whose finite
//! eigenvalues approximate characteristic roots and whose transfer function
//! C_N (lambda E_N - A_N)^{-1} B_N approximates T(lambda).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lapack::{self, ComplexLu};
use crate::model::DdaeSystem;

/// Accept a pencil eigenvalue as an imaginary-axis crossing when
/// |Re| <= IMAG_AXIS_TOL * (1 + |Im|).
pub const IMAG_AXIS_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Discretization {
    /// State dimension of the original system.
    pub n_base: usize,
    /// Polynomial degree N; the mesh has N+1 nodes.
    pub order: usize,
    /// Collocation nodes in [-tau_max, 0], node 0 at t = 0.
    pub mesh: Vec<f64>,
    pub e_n: DMatrix<f64>,
    pub a_n: DMatrix<f64>,
    pub b_n: DMatrix<f64>,
    pub c_n: DMatrix<f64>,
}

impl Discretization {
    pub fn dim(&self) -> usize {
        self.a_n.nrows()
    }
}

/// Chebyshev extremal nodes mapped to [-tau_max, 0]:
/// t_k = (cos(k pi / N) - 1) tau_max / 2, so t_0 = 0 and t_N = -tau_max.
pub fn chebyshev_mesh(order: usize, tau_max: f64) -> Vec<f64> {
    (0..=order)
        .map(|k| ((k as f64 * std::f64::consts::PI / order as f64).cos() - 1.0) * tau_max / 2.0)
        .collect()
}

/// Barycentric weights for the extremal mesh: (-1)^k, halved at both ends.
/// Any common scaling cancels in the interpolation formulas.
pub fn barycentric_weights(order: usize) -> Vec<f64> {
    (0..=order)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            if k == 0 || k == order {
                0.5 * sign
            } else {
                sign
            }
        })
        .collect()
}

/// Values of all Lagrange basis polynomials at x (barycentric second form).
pub fn lagrange_basis_at(mesh: &[f64], weights: &[f64], x: f64) -> Vec<f64> {
    debug_assert_eq!(mesh.len(), weights.len());
    for (k, &t) in mesh.iter().enumerate() {
        if x == t {
            let mut out = vec![0.0; mesh.len()];
            out[k] = 1.0;
            return out;
        }
    }
    let terms: Vec<f64> = mesh
        .iter()
        .zip(weights)
        .map(|(&t, &w)| w / (x - t))
        .collect();
    let denom: f64 = terms.iter().sum();
    terms.into_iter().map(|t| t / denom).collect()
}

/// Differentiation matrix on the mesh: D[k][l] = (w_l / w_k) / (x_k - x_l)
/// off the diagonal, with diagonal entries chosen so each row sums to zero.
pub fn differentiation_matrix(mesh: &[f64], weights: &[f64]) -> DMatrix<f64> {
    let np = mesh.len();
    let mut d = DMatrix::zeros(np, np);
    for k in 0..np {
        let mut row_sum = 0.0;
        for l in 0..np {
            if l != k {
                let v = (weights[l] / weights[k]) / (mesh[k] - mesh[l]);
                d[(k, l)] = v;
                row_sum += v;
            }
        }
        d[(k, k)] = -row_sum;
    }
    d
}

/// Build the pencil quadruple (E_N, A_N, B_N, C_N). Block row 0 collocates
/// the delayed dynamics through barycentric interpolation at -tau_i; block
/// rows k >= 1 enforce that the segment derivative matches the polynomial
/// derivative. A delay-free system degenerates to the dense quadruple
/// (E, sum_i A_i, B, C) of size n.
pub fn discretize(sys: &DdaeSystem, order: usize) -> Result<Discretization> {
    let n = sys.n();
    let tau_max = sys.tau_max();
    if tau_max == 0.0 {
        let mut a0 = DMatrix::zeros(n, n);
        for (_, a) in &sys.delay_terms {
            a0 += a;
        }
        return Ok(Discretization {
            n_base: n,
            order,
            mesh: vec![0.0],
            e_n: sys.e.clone(),
            a_n: a0,
            b_n: sys.b.clone(),
            c_n: sys.c.clone(),
        });
    }
    if order < 2 {
        return Err(Error::InvalidOrder(order));
    }
    let mesh = chebyshev_mesh(order, tau_max);
    let weights = barycentric_weights(order);
    let d = differentiation_matrix(&mesh, &weights);
    let dim = n * (order + 1);

    let mut e_n = DMatrix::zeros(dim, dim);
    e_n.view_mut((0, 0), (n, n)).copy_from(&sys.e);
    for k in n..dim {
        e_n[(k, k)] = 1.0;
    }

    let mut a_n = DMatrix::zeros(dim, dim);
    for (tau, a) in &sys.delay_terms {
        let basis = lagrange_basis_at(&mesh, &weights, -*tau);
        for (l, &phi) in basis.iter().enumerate() {
            if phi != 0.0 {
                for j in 0..n {
                    for i in 0..n {
                        a_n[(i, l * n + j)] += phi * a[(i, j)];
                    }
                }
            }
        }
    }
    for k in 1..=order {
        for l in 0..=order {
            let dkl = d[(k, l)];
            if dkl != 0.0 {
                for i in 0..n {
                    a_n[(k * n + i, l * n + i)] = dkl;
                }
            }
        }
    }

    let mut b_n = DMatrix::zeros(dim, sys.n_w());
    b_n.view_mut((0, 0), (n, sys.n_w())).copy_from(&sys.b);
    let mut c_n = DMatrix::zeros(sys.n_z(), dim);
    c_n.view_mut((0, 0), (sys.n_z(), n)).copy_from(&sys.c);

    Ok(Discretization {
        n_base: n,
        order,
        mesh,
        e_n,
        a_n,
        b_n,
        c_n,
    })
}

/// Transfer function of the discretized quadruple,
/// C_N (lambda E_N - A_N)^{-1} B_N.
pub fn transfer_of_quadruple(
    disc: &Discretization,
    lambda: Complex64,
) -> Result<DMatrix<Complex64>> {
    let dim = disc.dim();
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        lambda * disc.e_n[(i, j)] - disc.a_n[(i, j)]
    });
    let lu = ComplexLu::factor(m)?;
    if lu.rcond()? < crate::transfer::SINGULAR_RCOND {
        return Err(Error::SingularAtFrequency {
            lambda,
            rcond: lu.rcond()?,
        });
    }
    let x = lu.solve(&disc.b_n.map(|v| Complex64::new(v, 0.0)))?;
    Ok(disc.c_n.map(|v| Complex64::new(v, 0.0)) * x)
}

/// Frequencies omega >= 0 where a singular value of the discretized transfer
/// function crosses the level gamma. They are the imaginary-axis eigenvalues
/// of the real pencil
///   lambda diag(E_N, E_N^T) - [ A_N, g B_N B_N^T ; -g C_N^T C_N, -A_N^T ],
/// g = 1/gamma, accepted when |Re| <= IMAG_AXIS_TOL (1 + |Im|).
pub fn level_crossings(disc: &Discretization, gamma: f64) -> Result<Vec<f64>> {
    // Negated form so NaN fails the guard as well.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(gamma > 0.0) {
        return Err(Error::AssumptionViolation(format!(
            "level gamma must be positive, got {gamma}"
        )));
    }
    let dim = disc.dim();
    let g = 1.0 / gamma;
    let bbt = &disc.b_n * disc.b_n.transpose();
    let ctc = disc.c_n.transpose() * &disc.c_n;

    let mut ah = DMatrix::zeros(2 * dim, 2 * dim);
    ah.view_mut((0, 0), (dim, dim)).copy_from(&disc.a_n);
    ah.view_mut((0, dim), (dim, dim)).copy_from(&(g * &bbt));
    ah.view_mut((dim, 0), (dim, dim)).copy_from(&(-g * &ctc));
    ah.view_mut((dim, dim), (dim, dim))
        .copy_from(&(-disc.a_n.transpose()));

    let mut eh = DMatrix::zeros(2 * dim, 2 * dim);
    eh.view_mut((0, 0), (dim, dim)).copy_from(&disc.e_n);
    eh.view_mut((dim, dim), (dim, dim))
        .copy_from(&disc.e_n.transpose());

    let eigs = lapack::eig_pencil_real(&ah, &eh)?;
    let mut omegas: Vec<f64> = eigs
        .into_iter()
        .filter(|l| l.re.abs() <= IMAG_AXIS_TOL * (1.0 + l.im.abs()))
        .map(|l| l.im.abs())
        .collect();
    omegas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    omegas.dedup_by(|a, b| (*a - *b).abs() <= 1e-8 * (1.0 + b.abs()));
    Ok(omegas)
}
