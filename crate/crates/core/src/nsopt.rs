//! Nonsmooth unconstrained minimization in the HANSO style: BFGS with a weak
//! Wolfe line search drives the iterate into the neighborhood of a minimizer,
//! then gradient sampling certifies approximate Clarke stationarity and grinds
//! further down along minimal-norm hull directions. Objectives may return
//! +infinity to mark guard violations (infeasible points); such steps are
//! rejected by the line search.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    /// Objective value; +infinity rejects the point.
    pub value: f64,
    /// Gradient, present whenever the value is finite.
    pub grad: Option<Vec<f64>>,
    /// False when the objective detected a nonsmooth point (tied maxima,
    /// coalescing singular values, clustered roots).
    pub smooth: bool,
}

pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, p: &[f64]) -> ObjectiveEval;
}

impl<F> Objective for (usize, F)
where
    F: Fn(&[f64]) -> ObjectiveEval + Sync,
{
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, p: &[f64]) -> ObjectiveEval {
        (self.1)(p)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// Stop when ||grad|| <= grad_tol * (1 + |f|); also the stationarity
    /// tolerance of the sampling phase.
    pub grad_tol: f64,
    pub armijo: f64,
    pub curvature: f64,
    pub max_line_iters: usize,
    pub gradient_sampling: bool,
    /// Sampling radii relative to 1 + ||p||, tried in order.
    pub gs_radii: Vec<f64>,
    pub gs_iters: usize,
    /// Sample count per round; 0 means 2 * dim + 2.
    pub gs_samples: usize,
    /// Stop as soon as the objective drops below this value. Useful when any
    /// point below a threshold is acceptable, e.g. during stabilization.
    pub target_value: Option<f64>,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 300,
            grad_tol: 1e-6,
            armijo: 1e-4,
            curvature: 0.5,
            max_line_iters: 60,
            gradient_sampling: true,
            gs_radii: vec![1e-4, 1e-5, 1e-6],
            gs_iters: 15,
            gs_samples: 0,
            target_value: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient met the tolerance during the BFGS phase.
    SmallGradient,
    /// The objective dropped below the requested target value.
    TargetReached,
    /// Sampling certified approximate stationarity at the final radius.
    Stationary,
    IterationLimit,
    /// Line search could not find acceptable descent and sampling (if
    /// enabled) made no further progress.
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizerReport {
    pub p: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub gs_rounds: usize,
    pub termination: Termination,
    pub trace: Vec<TraceEntry>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(p: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    p.iter().zip(d).map(|(x, y)| x + t * y).collect()
}

/// Point of minimal Euclidean norm in the convex hull of the given
/// gradients (Gilbert's algorithm). The returned point w satisfies
/// min_i g_i . w >= ||w||^2 - tol, certifying near-optimality.
fn min_norm_hull(grads: &[Vec<f64>]) -> Vec<f64> {
    let mut w = grads
        .iter()
        .min_by(|a, b| norm(a).partial_cmp(&norm(b)).unwrap())
        .unwrap()
        .clone();
    for _ in 0..200 {
        let ww = dot(&w, &w);
        let gmin = grads
            .iter()
            .min_by(|a, b| dot(a, &w).partial_cmp(&dot(b, &w)).unwrap())
            .unwrap();
        let gw = dot(gmin, &w);
        if gw >= ww - 1e-14 * ww.max(1.0) {
            break;
        }
        let diff: Vec<f64> = w.iter().zip(gmin).map(|(a, b)| a - b).collect();
        let dd = dot(&diff, &diff);
        if dd <= 0.0 {
            break;
        }
        let t = (dot(&w, &diff) / dd).clamp(0.0, 1.0);
        for (wi, gi) in w.iter_mut().zip(gmin) {
            *wi = (1.0 - t) * *wi + t * gi;
        }
    }
    w
}

struct LineSearchHit {
    t: f64,
    value: f64,
    grad: Vec<f64>,
}

/// Weak Wolfe line search by bisection with expansion: Armijo failures
/// (including guard violations) shrink from above, curvature failures expand
/// from below.
fn weak_wolfe(
    obj: &dyn Objective,
    p: &[f64],
    f0: f64,
    d: &[f64],
    g0d: f64,
    opts: &OptimizerOptions,
) -> Option<LineSearchHit> {
    let mut t = 1.0;
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    let mut best: Option<LineSearchHit> = None;
    for _ in 0..opts.max_line_iters {
        let e = obj.eval(&axpy(p, t, d));
        let armijo_ok = e.value.is_finite() && e.value <= f0 + opts.armijo * t * g0d;
        if !armijo_ok {
            hi = t;
        } else {
            let grad = e.grad?;
            let gd = dot(&grad, d);
            if best.as_ref().is_none_or(|b| e.value < b.value) {
                best = Some(LineSearchHit {
                    t,
                    value: e.value,
                    grad: grad.clone(),
                });
            }
            if gd < opts.curvature * g0d {
                lo = t;
            } else {
                return Some(LineSearchHit {
                    t,
                    value: e.value,
                    grad,
                });
            }
        }
        t = if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * t
        };
        if t <= 1e-20 || !t.is_finite() {
            break;
        }
    }
    // Weak acceptance: a plain decrease is still a usable step.
    best.filter(|b| b.value < f0)
}

fn ball_sample(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    // Gaussian direction (Box-Muller) scaled to a uniform ball sample.
    let mut v = Vec::with_capacity(dim);
    while v.len() < dim {
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        v.push(r * (2.0 * std::f64::consts::PI * u2).cos());
        if v.len() < dim {
            v.push(r * (2.0 * std::f64::consts::PI * u2).sin());
        }
    }
    let n = norm(&v).max(1e-300);
    let scale = radius * rng.gen::<f64>().powf(1.0 / dim as f64) / n;
    v.iter().map(|x| x * scale).collect()
}

pub fn minimize(
    obj: &dyn Objective,
    p0: &[f64],
    opts: &OptimizerOptions,
) -> Result<OptimizerReport> {
    let dim = obj.dim();
    if p0.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "objective has {} parameters, start point has {}",
            dim,
            p0.len()
        )));
    }
    let e0 = obj.eval(p0);
    if !e0.value.is_finite() {
        return Err(Error::GuardViolatedAtStart);
    }
    if dim == 0 {
        return Ok(OptimizerReport {
            p: Vec::new(),
            value: e0.value,
            iterations: 0,
            gs_rounds: 0,
            termination: Termination::SmallGradient,
            trace: Vec::new(),
        });
    }
    let mut p = p0.to_vec();
    let mut f = e0.value;
    if opts.target_value.is_some_and(|t| f < t) {
        return Ok(OptimizerReport {
            p,
            value: f,
            iterations: 0,
            gs_rounds: 0,
            termination: Termination::TargetReached,
            trace: Vec::new(),
        });
    }
    let mut g = e0
        .grad
        .ok_or_else(|| Error::NonConvergence("objective returned no gradient".into()))?;
    let mut h = DMatrix::<f64>::identity(dim, dim);
    let mut trace = Vec::new();
    let mut termination = Termination::IterationLimit;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let gnorm = norm(&g);
        if gnorm <= opts.grad_tol * (1.0 + f.abs()) {
            termination = Termination::SmallGradient;
            trace.push(TraceEntry {
                iter,
                value: f,
                grad_norm: gnorm,
                step: 0.0,
            });
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut d_vec = -(&h * &gv);
        let mut g0d = d_vec.dot(&gv);
        if g0d >= 0.0 {
            // Curvature information went bad; restart from steepest descent.
            h = DMatrix::identity(dim, dim);
            d_vec = -gv.clone();
            g0d = -gv.norm_squared();
        }
        let d: Vec<f64> = d_vec.iter().cloned().collect();
        match weak_wolfe(obj, &p, f, &d, g0d, opts) {
            Some(hit) => {
                let p_new = axpy(&p, hit.t, &d);
                let s: Vec<f64> = p_new.iter().zip(&p).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = hit.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) {
                    let sv = DVector::from_column_slice(&s);
                    let yv = DVector::from_column_slice(&y);
                    let rho = 1.0 / sy;
                    let hy = &h * &yv;
                    let yhy = yv.dot(&hy);
                    // Inverse BFGS update.
                    h += (rho * rho * yhy + rho) * (&sv * sv.transpose());
                    h -= rho * (&hy * sv.transpose() + &sv * hy.transpose());
                }
                trace.push(TraceEntry {
                    iter,
                    value: hit.value,
                    grad_norm: gnorm,
                    step: hit.t,
                });
                p = p_new;
                f = hit.value;
                g = hit.grad;
                if opts.target_value.is_some_and(|t| f < t) {
                    termination = Termination::TargetReached;
                    break;
                }
            }
            None => {
                termination = Termination::LineSearchStalled;
                trace.push(TraceEntry {
                    iter,
                    value: f,
                    grad_norm: gnorm,
                    step: 0.0,
                });
                break;
            }
        }
    }

    let mut gs_rounds = 0;
    if opts.gradient_sampling && dim > 0 && termination != Termination::TargetReached {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
        let samples = if opts.gs_samples == 0 {
            2 * dim + 2
        } else {
            opts.gs_samples
        };
        let mut stationary_at_last_radius = false;
        'radii: for &rel in &opts.gs_radii {
            let mut radius = rel * (1.0 + norm(&p));
            stationary_at_last_radius = false;
            for _ in 0..opts.gs_iters {
                gs_rounds += 1;
                let mut grads: Vec<Vec<f64>> = vec![g.clone()];
                let mut attempts = 0;
                while grads.len() < samples + 1 && attempts < 3 * samples {
                    attempts += 1;
                    let dp = ball_sample(&mut rng, dim, radius);
                    let e = obj.eval(&axpy(&p, 1.0, &dp));
                    if e.value.is_finite() {
                        if let Some(gr) = e.grad {
                            grads.push(gr);
                        }
                    }
                }
                let w = min_norm_hull(&grads);
                let wnorm = norm(&w);
                if wnorm <= opts.grad_tol * (1.0 + f.abs()) {
                    stationary_at_last_radius = true;
                    break;
                }
                let d: Vec<f64> = w.iter().map(|x| -x / wnorm).collect();
                let mut t = radius;
                let mut moved = false;
                for _ in 0..40 {
                    let cand = axpy(&p, t, &d);
                    let e = obj.eval(&cand);
                    if e.value.is_finite() && e.value < f - 1e-6 * t * wnorm {
                        if let Some(gr) = e.grad {
                            p = cand;
                            f = e.value;
                            g = gr;
                            moved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if moved {
                    if opts.target_value.is_some_and(|t| f < t) {
                        termination = Termination::TargetReached;
                        break 'radii;
                    }
                } else {
                    radius *= 0.5;
                    if radius < 1e-14 * (1.0 + norm(&p)) {
                        break;
                    }
                }
            }
        }
        if stationary_at_last_radius && termination != Termination::TargetReached {
            termination = Termination::Stationary;
        }
    }

    Ok(OptimizerReport {
        p,
        value: f,
        iterations,
        gs_rounds,
        termination,
        trace,
    })
}
