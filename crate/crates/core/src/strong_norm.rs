//! Strong H-infinity norm of the delay system transfer function: the maximum
//! of the asymptotic transfer function norm over the delay torus (which is
//! what the H-infinity norm degenerates to under arbitrarily small delay
//! perturbations) and the peak of sigma_1(T(j omega)) over frequency, located
//! by a level-set iteration on the spectral discretization and polished by a
//! Newton corrector on the true transfer function.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::discretize::{discretize, level_crossings, transfer_of_quadruple};
use crate::error::{Error, Result};
use crate::lapack::{self, ComplexLu};
use crate::model::{DdaeSystem, PartitionedSystem};
use crate::spectrum;
use crate::torus::{maximize_on_torus, TorusEval};
use crate::transfer::{self, log_grid, SINGULAR_RCOND};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormBranch {
    /// The norm is attained (approached) at a finite frequency.
    FiniteFrequency,
    /// The asymptotic torus maximum dominates; the norm is only approached
    /// as omega grows.
    Asymptotic,
}

#[derive(Debug, Clone)]
pub struct NormOptions {
    /// Grid points per torus dimension in the asymptotic step.
    pub grid_density: usize,
    /// Relative gap between level-set iterates (and the tie tolerance
    /// between the two norm branches).
    pub rel_tol: f64,
    /// Relative stationarity tolerance of the Newton correctors.
    pub corrector_rel_tol: f64,
    /// Discretization degree override; chosen from a frequency presweep when
    /// absent.
    pub initial_order: Option<usize>,
    /// Hard cap on the discretization degree.
    pub max_order: usize,
}

impl Default for NormOptions {
    fn default() -> Self {
        NormOptions {
            grid_density: 24,
            rel_tol: 1e-6,
            corrector_rel_tol: 1e-8,
            initial_order: None,
            max_order: 320,
        }
    }
}

/// Maximizer of the asymptotic transfer function over the torus.
#[derive(Debug, Clone)]
pub struct TorusPeak {
    pub value: f64,
    /// One angle per positive delay (zeros for delays that do not couple
    /// into the algebraic part).
    pub theta: Vec<f64>,
    pub u: DVector<Complex64>,
    pub v: DVector<Complex64>,
    pub converged: bool,
}

/// Peak of sigma_1(T(j omega)) found by the level-set iteration.
#[derive(Debug, Clone)]
pub struct LevelSetPeak {
    pub value: f64,
    /// None when no frequency response point exceeds the requested start
    /// level (the value then equals the start level).
    pub omega: Option<f64>,
    pub u: DVector<Complex64>,
    pub v: DVector<Complex64>,
    pub order_used: usize,
    /// Level crossings beyond the trusted frequency range of the
    /// discretization were discarded.
    pub frequency_capped: bool,
    pub corrector_converged: bool,
    /// Second-highest well-separated local peak (omega, sigma), when seen.
    pub runner_up: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct StrongNormResult {
    pub value: f64,
    pub branch: NormBranch,
    pub asymptotic: TorusPeak,
    pub finite: LevelSetPeak,
}

fn complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn bilinear(u: &DVector<Complex64>, m: &DMatrix<Complex64>, v: &DVector<Complex64>) -> Complex64 {
    let mv = m * v;
    u.iter().zip(mv.iter()).map(|(a, b)| a.conj() * b).sum()
}

fn sigma1_of(m: &DMatrix<Complex64>) -> Option<f64> {
    lapack::singular_values(m).ok().map(|s| s.max())
}

/// Indices (into the positive delays) whose algebraic coupling block
/// U^T A_i V is nonzero; only these delays influence the asymptotic
/// transfer function.
pub fn effective_delays(part: &PartitionedSystem) -> Vec<usize> {
    if part.nu == 0 {
        return Vec::new();
    }
    (0..part.m())
        .filter(|&i| {
            let block = &part.a22[i + 1];
            let scale = part.sys.delay_terms[i + 1].1.norm().max(1.0);
            block.amax() > 100.0 * f64::EPSILON * scale
        })
        .collect()
}

fn embed_angles(m: usize, eff: &[usize], th: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; m];
    for (j, &i) in eff.iter().enumerate() {
        full[i] = th[j];
    }
    full
}

/// Norm of the asymptotic transfer function over the full torus,
/// max over theta of sigma_1(Ta(theta)). Independent of the delay values.
pub fn strong_norm_Ta(part: &PartitionedSystem, opts: &NormOptions) -> Result<TorusPeak> {
    let m = part.m();
    let (nz, nw) = (part.sys.n_z(), part.sys.n_w());
    if part.nu == 0 || nz == 0 || nw == 0 {
        return Ok(TorusPeak {
            value: 0.0,
            theta: vec![0.0; m],
            u: DVector::zeros(nz),
            v: DVector::zeros(nw),
            converged: true,
        });
    }
    let eff = effective_delays(part);
    let b2 = complex(&part.b2);
    let c2 = complex(&part.c2);
    let c2t = c2.transpose();

    let f = |th_eff: &[f64]| -> Result<TorusEval> {
        let theta = embed_angles(m, &eff, th_eff);
        let weights: Vec<Complex64> = theta
            .iter()
            .map(|t| Complex64::new(0.0, -*t).exp())
            .collect();
        let lu = ComplexLu::factor(part.a22_weighted(&weights))?;
        if lu.rcond()? < SINGULAR_RCOND {
            return Err(Error::SingularOnTorus { theta });
        }
        let x = lu.solve(&b2)?;
        let ta = -(&c2 * &x);
        let (s, u, v) = lapack::svd_top(&ta)?;
        let sigma = s[0];
        let simple = s.len() < 2 || s[0] - s[1] > 1e-8 * s[0];
        let y = lu.solve_transpose(&c2t)?.transpose();
        let grad = eff
            .iter()
            .map(|&i| {
                let da22 = complex(&part.a22[i + 1]) * (Complex64::new(0.0, -1.0) * weights[i]);
                bilinear(&u, &(&y * (da22 * &x)), &v).re
            })
            .collect();
        Ok(TorusEval {
            value: sigma,
            grad,
            simple,
        })
    };

    let opt = maximize_on_torus(eff.len(), opts.grid_density, &f, opts.corrector_rel_tol)?;
    let theta = embed_angles(m, &eff, &opt.theta);
    let ta = transfer::eval_Ta_torus(part, &theta)?;
    let (s, u, v) = lapack::svd_top(&ta)?;
    Ok(TorusPeak {
        // max with zero also normalizes the -0.0 of an exactly zero block.
        value: s.max().max(0.0),
        theta,
        u,
        v,
        converged: opt.converged,
    })
}

fn golden_max(
    mut lo: f64,
    mut hi: f64,
    f: &dyn Fn(f64) -> Option<f64>,
    iters: usize,
) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let val = |x: f64| f(x).unwrap_or(f64::NEG_INFINITY);
    let mut a = hi - INVPHI * (hi - lo);
    let mut b = lo + INVPHI * (hi - lo);
    let (mut fa, mut fb) = (val(a), val(b));
    for _ in 0..iters {
        if fa > fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INVPHI * (hi - lo);
            fa = val(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INVPHI * (hi - lo);
            fb = val(b);
        }
    }
    if fa > fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// H-infinity norm of the asymptotic transfer function evaluated at the
/// given delay values: sup over [0, omega_cap] of
/// sigma_1(Ta(e^{-j omega tau_1}, ..., e^{-j omega tau_m})).
/// Returns (norm, argmax frequency).
pub fn hinf_norm_Ta_at_delays(
    part: &PartitionedSystem,
    taus: &[f64],
    omega_cap: f64,
) -> Result<(f64, f64)> {
    if taus.len() != part.m() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} delays, got {}",
            part.m(),
            taus.len()
        )));
    }
    // Negated form so NaN fails the guard as well.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(omega_cap > 0.0) {
        return Err(Error::AssumptionViolation(
            "omega_cap must be positive".into(),
        ));
    }
    let (nz, nw) = (part.sys.n_z(), part.sys.n_w());
    if part.nu == 0 || nz == 0 || nw == 0 {
        return Ok((0.0, 0.0));
    }
    let b2 = complex(&part.b2);
    let c2 = complex(&part.c2);
    let sigma_at = |omega: f64| -> Option<f64> {
        let weights: Vec<Complex64> = taus
            .iter()
            .map(|t| Complex64::new(0.0, -omega * *t).exp())
            .collect();
        let lu = ComplexLu::factor(part.a22_weighted(&weights)).ok()?;
        if lu.rcond().ok()? < SINGULAR_RCOND {
            return None;
        }
        let x = lu.solve(&b2).ok()?;
        sigma1_of(&(-(&c2 * &x)))
    };
    let tau_max = taus.iter().cloned().fold(0.0, f64::max);
    let n_pts = ((omega_cap * tau_max.max(1e-3) * 30.0).ceil() as usize).clamp(4_000, 2_000_000);
    let step = omega_cap / n_pts as f64;
    let best = (0..=n_pts)
        .into_par_iter()
        .filter_map(|i| {
            let w = i as f64 * step;
            sigma_at(w).map(|s| (w, s))
        })
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .ok_or_else(|| {
            Error::NonConvergence("asymptotic transfer singular on the whole sweep".into())
        })?;
    let (w, s) = golden_max((best.0 - step).max(0.0), best.0 + step, &sigma_at, 90);
    if s >= best.1 {
        Ok((s, w))
    } else {
        Ok((best.1, best.0))
    }
}

struct Candidate {
    omega: f64,
    sigma: f64,
    bracket: (f64, f64),
}

/// H-infinity norm of T over the imaginary axis, ignoring the asymptotic
/// part: returns the corrected peak when one exceeds `start_level`,
/// otherwise a peak-less result carrying the start level.
pub fn hinf_norm_T(sys: &DdaeSystem, start_level: f64, opts: &NormOptions) -> Result<LevelSetPeak> {
    let report = spectrum::robust_spectral_abscissa(sys)?;
    if report.alpha_bar >= 0.0 {
        return Err(Error::NotStronglyStable {
            alpha: report.alpha_bar,
        });
    }
    hinf_norm_T_unchecked(sys, start_level, opts)
}

pub(crate) fn hinf_norm_T_unchecked(
    sys: &DdaeSystem,
    start_level: f64,
    opts: &NormOptions,
) -> Result<LevelSetPeak> {
    let (nz, nw) = (sys.n_z(), sys.n_w());
    let no_peak = |value: f64, order: usize, capped: bool| LevelSetPeak {
        value,
        omega: None,
        u: DVector::zeros(nz),
        v: DVector::zeros(nw),
        order_used: order,
        frequency_capped: capped,
        corrector_converged: true,
        runner_up: None,
    };
    if nz == 0 || nw == 0 {
        return Ok(no_peak(start_level, 0, false));
    }
    let sig = |omega: f64| -> Option<f64> {
        transfer::eval_T(sys, Complex64::new(0.0, omega))
            .ok()
            .and_then(|t| sigma1_of(&t))
    };

    // Presweep of the true response to seed the lower bound and to size the
    // discretization: the degree must resolve oscillations up to the peak
    // region, roughly 1.6 N / tau_max in frequency.
    let tau_max = sys.tau_max();
    let a_scale: f64 = sys.delay_terms.iter().map(|(_, a)| a.norm()).sum();
    let e_scale = sys.e.norm().max(1e-3);
    let mut omega_hi = (1e3f64).max(10.0 * a_scale / e_scale);
    if let Some(&tau_min) = sys.delays().first() {
        omega_hi = omega_hi.max(30.0 / tau_min);
    }
    omega_hi = omega_hi.min(1e7);
    let mut grid = log_grid(1e-3, omega_hi, 900);
    grid.insert(0, 0.0);
    let pres: Vec<(usize, f64)> = grid
        .par_iter()
        .enumerate()
        .filter_map(|(i, &w)| sig(w).map(|s| (i, s)))
        .collect();
    if pres.is_empty() {
        return Err(Error::NonConvergence(
            "transfer function singular at every presweep frequency".into(),
        ));
    }
    let sweep_max = pres
        .iter()
        .map(|&(_, s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    // Among presweep points within rel_tol of the sweep maximum, keep the
    // lowest frequency: resolving it is enough, anything higher is treated
    // by the trust horizon.
    let (peak_idx, peak_sigma) = pres
        .iter()
        .cloned()
        .filter(|&(_, s)| s >= sweep_max * (1.0 - 1e-3))
        .min_by(|a, b| grid[a.0].partial_cmp(&grid[b.0]).unwrap())
        .unwrap();
    let mut scope = grid[peak_idx];

    // The asymptotic transfer function along the axis locates narrow
    // near-cancellation spikes that a log sweep of T can underestimate.
    if tau_max > 0.0 {
        if let Ok(part) = sys.partition() {
            if part.nu > 0 && !effective_delays(&part).is_empty() {
                let step = 2.0 * std::f64::consts::PI / (30.0 * tau_max);
                let n = ((omega_hi / step).ceil() as usize).clamp(100, 200_000);
                let scan: Vec<(f64, f64)> = (0..=n)
                    .into_par_iter()
                    .filter_map(|i| {
                        let w = i as f64 * omega_hi / n as f64;
                        transfer::eval_Ta_lambda(&part, Complex64::new(0.0, w))
                            .ok()
                            .and_then(|t| sigma1_of(&t))
                            .map(|s| (w, s))
                    })
                    .collect();
                if let Some(&(_, smax)) = scan.iter().max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                {
                    if smax > 0.7 * sweep_max.max(start_level) {
                        if let Some(&(w, _)) = scan
                            .iter()
                            .filter(|&&(_, s)| s >= smax * (1.0 - 1e-3))
                            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
                        {
                            scope = scope.max(w);
                        }
                    }
                }
            }
        }
    }

    let mut order = opts.initial_order.unwrap_or_else(|| {
        ((0.85 * scope * tau_max).ceil() as usize + 12).clamp(20, opts.max_order)
    });

    let mut lb = start_level;
    let mut best: Option<Candidate> = None;
    if peak_sigma > lb {
        lb = peak_sigma;
        let blo = if peak_idx > 0 {
            grid[peak_idx - 1]
        } else {
            0.0
        };
        let bhi = grid
            .get(peak_idx + 1)
            .cloned()
            .unwrap_or(grid[peak_idx] * 1.1 + 1.0);
        best = Some(Candidate {
            omega: grid[peak_idx],
            sigma: peak_sigma,
            bracket: (blo, bhi),
        });
    }
    if lb <= 0.0 {
        // The response is identically zero on the sweep and no positive
        // start level was given.
        return Ok(no_peak(start_level.max(0.0), order, false));
    }

    let mut runner: Option<(f64, f64)> = None;
    let pencil_dim_guard = 1500;
    for attempt in 0..5 {
        let disc = discretize(sys, order)?;
        let horizon = if tau_max > 0.0 {
            1.6 * order as f64 / tau_max
        } else {
            f64::INFINITY
        };
        let mut capped = false;
        for _ in 0..25 {
            let gamma = lb * (1.0 + opts.rel_tol);
            let all = level_crossings(&disc, gamma)?;
            let xs: Vec<f64> = all.iter().cloned().filter(|&w| w <= horizon).collect();
            capped |= xs.len() < all.len();
            if xs.is_empty() {
                break;
            }
            // Midpoints of the intervals where the discretized response
            // exceeds gamma; the parity of the first interval follows from
            // the value at omega = 0.
            let sigma0 = sig(0.0).unwrap_or(0.0);
            let mut bounds: Vec<f64> = Vec::with_capacity(xs.len() + 2);
            if sigma0 > gamma {
                bounds.push(0.0);
            }
            bounds.extend_from_slice(&xs);
            if bounds.len() % 2 == 1 {
                // Unpaired trailing crossing: probe just beyond it.
                bounds.push(xs.last().unwrap() * 1.05 + 0.1);
            }
            let mids: Vec<(f64, f64, f64)> = bounds
                .chunks(2)
                .map(|c| (0.5 * (c[0] + c[1]), c[0], c[1]))
                .collect();
            let evals: Vec<Candidate> = mids
                .par_iter()
                .filter_map(|&(mid, blo, bhi)| {
                    sig(mid).map(|s| Candidate {
                        omega: mid,
                        sigma: s,
                        bracket: (blo, bhi),
                    })
                })
                .collect();
            let Some(top) = evals
                .iter()
                .max_by(|a, b| a.sigma.partial_cmp(&b.sigma).unwrap())
            else {
                break;
            };
            if let Some(r) = evals
                .iter()
                .filter(|c| (c.omega - top.omega).abs() > 0.02 * (1.0 + top.omega.abs()))
                .max_by(|a, b| a.sigma.partial_cmp(&b.sigma).unwrap())
            {
                if runner.is_none_or(|(_, s)| r.sigma > s) {
                    runner = Some((r.omega, r.sigma));
                }
            }
            if top.sigma <= lb {
                break;
            }
            lb = top.sigma;
            best = Some(Candidate {
                omega: top.omega,
                sigma: top.sigma,
                bracket: top.bracket,
            });
        }

        let Some(cand) = best.as_ref() else {
            return Ok(no_peak(start_level, order, capped));
        };
        let (sigma_star, omega_star, u, v, conv) =
            newton_peak(sys, cand.omega, cand.bracket, opts.corrector_rel_tol, &sig)?;
        let value = sigma_star.max(lb);
        lb = value;

        // Accept once the discretization reproduces the corrected peak;
        // otherwise the crossing structure was not trustworthy, so double
        // the degree and rerun.
        let disc_ok = transfer_of_quadruple(&disc, Complex64::new(0.0, omega_star))
            .ok()
            .and_then(|t| sigma1_of(&t))
            .map(|sn| (sn - sigma_star).abs() <= 1e-3 * sigma_star.max(1e-300))
            .unwrap_or(false);
        let next_order = (order * 2).min(opts.max_order);
        let can_grow =
            next_order > order && 2 * sys.n() * (next_order + 1) <= pencil_dim_guard && attempt < 4;
        if disc_ok || !can_grow {
            // Polish the runner-up when it is close enough to matter for
            // nonsmoothness detection.
            if let Some((rw, rs)) = runner {
                if rs >= value * (1.0 - 1e-4)
                    && (rw - omega_star).abs() > 0.02 * (1.0 + omega_star.abs())
                {
                    let span = 0.01 * (1.0 + rw);
                    let (w2, s2) = golden_max((rw - span).max(0.0), rw + span, &sig, 90);
                    runner = Some((w2, s2.max(rs)));
                }
            }
            return Ok(LevelSetPeak {
                value,
                omega: Some(omega_star),
                u,
                v,
                order_used: order,
                frequency_capped: capped,
                corrector_converged: conv,
                runner_up: runner,
            });
        }
        best = Some(Candidate {
            omega: omega_star,
            sigma: sigma_star,
            bracket: cand.bracket,
        });
        order = next_order;
    }
    unreachable!("level-set attempts exhausted without returning");
}

/// Newton iteration on the stationarity condition d sigma_1 / d omega = 0,
/// using g(omega) = Re(u^H j T'(j omega) v); falls back to a golden-section
/// search on the bracket when sigma_1 is not simple or Newton strays.
/// (sigma, omega, left/right singular vectors, corrector converged).
type CorrectedPeak = (f64, f64, DVector<Complex64>, DVector<Complex64>, bool);

struct SigmaSlope {
    sigma: f64,
    slope: f64,
    u: DVector<Complex64>,
    v: DVector<Complex64>,
    simple: bool,
}

fn newton_peak(
    sys: &DdaeSystem,
    omega0: f64,
    bracket: (f64, f64),
    rel_tol: f64,
    sig: &(dyn Fn(f64) -> Option<f64> + Sync),
) -> Result<CorrectedPeak> {
    let (lo, hi) = (bracket.0.max(0.0), bracket.1);
    let eval = |w: f64| -> Result<SigmaSlope> {
        let lam = Complex64::new(0.0, w);
        let t = transfer::eval_T(sys, lam)?;
        let (s, u, v) = lapack::svd_top(&t)?;
        let dt = transfer::eval_dT(sys, lam)?;
        let slope = -bilinear(&u, &dt, &v).im;
        let simple = s.len() < 2 || s[0] - s[1] > 1e-8 * s[0];
        Ok(SigmaSlope {
            sigma: s[0],
            slope,
            u,
            v,
            simple,
        })
    };
    let mut w = omega0.clamp(lo, hi);
    for _ in 0..60 {
        let Ok(at) = eval(w) else {
            break;
        };
        if at.slope.abs() <= rel_tol * at.sigma.max(1e-300) {
            return Ok((at.sigma, w, at.u, at.v, true));
        }
        if !at.simple {
            break;
        }
        let h = 1e-5 * (1.0 + w.abs());
        let (gp, gm) = match (eval(w + h), eval((w - h).max(0.0))) {
            (Ok(a), Ok(b)) => (a.slope, b.slope),
            _ => break,
        };
        let gd = (gp - gm) / (2.0 * h);
        let g = at.slope;
        if !gd.is_finite() || gd == 0.0 {
            break;
        }
        let step = -g / gd;
        let span = (hi - lo).max(1e-9);
        if !step.is_finite() || step.abs() > 2.0 * span {
            break;
        }
        w = (w + step).max(0.0);
        if w < lo - span || w > hi + span {
            break;
        }
    }
    let (wg, _) = golden_max(lo, hi.max(lo + 1e-12), sig, 120);
    let at = eval(wg)?;
    let stationary = at.slope.abs() <= 1e-6 * at.sigma.max(1e-300);
    Ok((at.sigma, wg, at.u, at.v, stationary))
}

/// The strong H-infinity norm: maximum of the asymptotic torus norm and the
/// finite-frequency peak.
pub fn strong_hinf_norm(sys: &DdaeSystem) -> Result<StrongNormResult> {
    strong_hinf_norm_with(sys, &NormOptions::default())
}

pub fn strong_hinf_norm_with(sys: &DdaeSystem, opts: &NormOptions) -> Result<StrongNormResult> {
    let report = spectrum::robust_spectral_abscissa(sys)?;
    if report.alpha_bar >= 0.0 {
        return Err(Error::NotStronglyStable {
            alpha: report.alpha_bar,
        });
    }
    let part = sys.partition()?;
    let asymptotic = strong_norm_Ta(&part, opts)?;
    let finite = hinf_norm_T_unchecked(sys, asymptotic.value, opts)?;
    let branch = if finite.omega.is_some() && finite.value > asymptotic.value {
        NormBranch::FiniteFrequency
    } else {
        NormBranch::Asymptotic
    };
    Ok(StrongNormResult {
        value: finite.value.max(asymptotic.value),
        branch,
        asymptotic,
        finite,
    })
}
