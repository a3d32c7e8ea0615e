//! Maximization of a smooth function over the torus [0, 2pi)^d by dense grid
//! search followed by a Newton polish of the stationarity condition. Shared
//! by the asymptotic norm (sigma_1 over the torus) and the delay-difference
//! abscissa (spectral radius over the torus).

use rayon::prelude::*;

use crate::error::{Error, Result};

const TAU: f64 = 2.0 * std::f64::consts::PI;
/// Upper bound on grid evaluations per sweep; the per-axis density is reduced
/// to stay under it when the torus dimension is large.
const MAX_GRID_POINTS: usize = 200_000;

/// One objective evaluation: value, gradient with respect to the angles, and
/// whether the gradient is trustworthy (top singular value or eigenvalue
/// separated from the next one).
pub struct TorusEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub simple: bool,
}

#[derive(Debug, Clone)]
pub struct TorusOpt {
    pub theta: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    /// Stationarity residual met the tolerance (always true for dim 0).
    pub converged: bool,
}

pub fn wrap_angle(t: f64) -> f64 {
    let w = t.rem_euclid(TAU);
    if w == TAU {
        0.0
    } else {
        w
    }
}

fn effective_density(dim: usize, requested: usize) -> usize {
    let mut density = requested.max(4);
    while density > 4 && (density as f64).powi(dim as i32) > MAX_GRID_POINTS as f64 {
        density -= 1;
    }
    density
}

type TorusFn<'a> = &'a (dyn Fn(&[f64]) -> Result<TorusEval> + Sync);

fn grid_best(dim: usize, density: usize, f: TorusFn) -> Result<(Vec<f64>, f64)> {
    let total = density.pow(dim as u32);
    let best = (0..total)
        .into_par_iter()
        .filter_map(|flat| {
            let mut theta = vec![0.0; dim];
            let mut rem = flat;
            for t in theta.iter_mut() {
                *t = TAU * (rem % density) as f64 / density as f64;
                rem /= density;
            }
            f(&theta).ok().map(|ev| (theta, ev.value))
        })
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    best.ok_or_else(|| Error::NonConvergence("torus objective singular at every grid point".into()))
}

fn local_refine(
    center: &[f64],
    radius: f64,
    per_axis: usize,
    f: TorusFn,
) -> Option<(Vec<f64>, f64)> {
    let dim = center.len();
    let total = per_axis.pow(dim as u32);
    (0..total)
        .into_par_iter()
        .filter_map(|flat| {
            let mut theta = vec![0.0; dim];
            let mut rem = flat;
            for (j, t) in theta.iter_mut().enumerate() {
                let frac = (rem % per_axis) as f64 / (per_axis - 1) as f64;
                *t = wrap_angle(center[j] - radius + 2.0 * radius * frac);
                rem /= per_axis;
            }
            f(&theta).ok().map(|ev| (theta, ev.value))
        })
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
}

fn newton_polish(start: &[f64], cell: f64, f: TorusFn, rel_tol: f64) -> Option<TorusOpt> {
    let dim = start.len();
    let mut theta = start.to_vec();
    let mut ev = f(&theta).ok()?;
    let fd_h = 1e-6;
    for _ in 0..40 {
        let gnorm = ev.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm <= rel_tol * ev.value.abs().max(1.0) {
            return Some(TorusOpt {
                theta,
                value: ev.value,
                grad_norm: gnorm,
                converged: true,
            });
        }
        if !ev.simple {
            return None;
        }
        // Hessian by central differences of the analytic gradient.
        let mut hess = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            let mut tp = theta.clone();
            tp[j] += fd_h;
            let mut tm = theta.clone();
            tm[j] -= fd_h;
            let (gp, gm) = match (f(&tp), f(&tm)) {
                (Ok(a), Ok(b)) => (a.grad, b.grad),
                _ => return None,
            };
            for i in 0..dim {
                hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * fd_h);
            }
        }
        let g = nalgebra::DVector::from_column_slice(&ev.grad);
        let mut step = -hess.lu().solve(&g)?;
        let snorm = step.norm();
        if !snorm.is_finite() {
            return None;
        }
        if snorm > cell {
            step *= cell / snorm;
        }
        let cand: Vec<f64> = theta
            .iter()
            .zip(step.iter())
            .map(|(t, s)| wrap_angle(t + s))
            .collect();
        let cand_ev = f(&cand).ok()?;
        if cand_ev.value < ev.value - 1e-6 * ev.value.abs().max(1.0) {
            // Stationary point of the wrong kind; give up on Newton here.
            return None;
        }
        theta = cand;
        ev = cand_ev;
    }
    None
}

/// Maximize f over [0, 2pi)^dim: dense grid, Newton polish, and a refined
/// grid fallback when the polish cannot converge (for instance when the top
/// singular values coalesce at the maximizer).
pub fn maximize_on_torus(
    dim: usize,
    grid_density: usize,
    f: TorusFn,
    rel_tol: f64,
) -> Result<TorusOpt> {
    if dim == 0 {
        let ev = f(&[])?;
        return Ok(TorusOpt {
            theta: Vec::new(),
            value: ev.value,
            grad_norm: 0.0,
            converged: true,
        });
    }
    let density = effective_density(dim, grid_density);
    let (mut theta, mut value) = grid_best(dim, density, f)?;
    let mut cell = TAU / density as f64;

    if let Some(opt) = newton_polish(&theta, cell, f, rel_tol) {
        if opt.value >= value {
            return Ok(opt);
        }
    }
    // Refinement fallback: zoom the grid around the best point, retrying the
    // polish from each improved center.
    for _ in 0..4 {
        let per_axis = effective_density(dim, 9).max(3);
        if let Some((t, v)) = local_refine(&theta, cell, per_axis, f) {
            if v >= value {
                theta = t;
                value = v;
            }
        }
        cell /= 3.0;
        if let Some(opt) = newton_polish(&theta, cell, f, rel_tol) {
            if opt.value >= value {
                return Ok(opt);
            }
        }
    }
    let grad_norm = f(&theta)
        .map(|ev| ev.grad.iter().map(|g| g * g).sum::<f64>().sqrt())
        .unwrap_or(f64::INFINITY);
    Ok(TorusOpt {
        theta,
        value,
        grad_norm,
        converged: grad_norm <= rel_tol * value.abs().max(1.0),
    })
}
