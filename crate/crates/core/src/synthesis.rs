//! Fixed-structure controller synthesis for delay plants: close the loop
//! symbolically (the controller parameters enter the closed-loop matrices
//! affinely), stabilize by minimizing the robust spectral abscissa, then
//! minimize the strong H-infinity norm over the stabilizing parameters,
//! restarting from perturbed initial points and keeping the best run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
pub use crate::model::build_closed_loop;
use crate::model::{ControllerBlock, ParameterizedSystem, PlantBlock};
use crate::nsopt::{minimize, Objective, ObjectiveEval, OptimizerOptions, OptimizerReport};
use crate::objectives::{grad_robust_abscissa, grad_strong_norm};

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Optimization runs: the unperturbed start plus restarts-1 perturbed ones.
    pub restarts: usize,
    pub seed: u64,
    /// Relative scale of the Gaussian perturbation applied to restart points.
    pub perturbation: f64,
    /// Delay on the controller input path (measurement feedback delay).
    pub feedback_delay: f64,
    /// The stabilization phase stops once the robust spectral abscissa drops
    /// below minus this margin; the norm phase then takes over. Set to zero
    /// to spend the full iteration budget pushing the abscissa down.
    pub stability_margin: f64,
    pub optimizer: OptimizerOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            restarts: 3,
            seed: 1,
            perturbation: 0.5,
            feedback_delay: 0.0,
            stability_margin: 0.1,
            optimizer: OptimizerOptions::default(),
        }
    }
}

struct AbscissaObjective<'a> {
    psys: &'a ParameterizedSystem,
}

impl Objective for AbscissaObjective<'_> {
    fn dim(&self) -> usize {
        self.psys.n_p()
    }
    fn eval(&self, p: &[f64]) -> ObjectiveEval {
        match grad_robust_abscissa(self.psys, p) {
            Ok((value, grad, smooth)) => ObjectiveEval {
                value,
                grad: Some(grad),
                smooth,
            },
            Err(_) => ObjectiveEval {
                value: f64::INFINITY,
                grad: None,
                smooth: false,
            },
        }
    }
}

struct NormObjective<'a> {
    psys: &'a ParameterizedSystem,
}

impl Objective for NormObjective<'_> {
    fn dim(&self) -> usize {
        self.psys.n_p()
    }
    fn eval(&self, p: &[f64]) -> ObjectiveEval {
        // Any failure (most importantly loss of strong stability) rejects
        // the point, which confines the line search to the admissible set.
        match grad_strong_norm(self.psys, p) {
            Ok((value, grad, smooth)) => ObjectiveEval {
                value,
                grad: Some(grad),
                smooth,
            },
            Err(_) => ObjectiveEval {
                value: f64::INFINITY,
                grad: None,
                smooth: false,
            },
        }
    }
}

fn restart_points(p0: &[f64], opts: &SynthesisOptions) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![p0.to_vec()];
    for _ in 1..opts.restarts.max(1) {
        let perturbed: Vec<f64> = p0
            .iter()
            .map(|&x| {
                let u1: f64 = rng.gen::<f64>().max(1e-300);
                let u2: f64 = rng.gen();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                x + opts.perturbation * (1.0 + x.abs()) * z
            })
            .collect();
        starts.push(perturbed);
    }
    starts
}

fn best_run(
    obj: &(dyn Objective + Sync),
    starts: Vec<Vec<f64>>,
    opts: &SynthesisOptions,
) -> Result<OptimizerReport> {
    let runs: Vec<Result<OptimizerReport>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let mut oo = opts.optimizer.clone();
            oo.seed = opts.optimizer.seed.wrapping_add(i as u64);
            minimize(obj, start, &oo)
        })
        .collect();
    let mut best: Option<OptimizerReport> = None;
    let mut first_err: Option<Error> = None;
    for run in runs {
        match run {
            Ok(rep) => {
                if best.as_ref().is_none_or(|b| rep.value < b.value) {
                    best = Some(rep);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or_else(|| Error::NonConvergence("no run finished".into())))
}

/// Find controller parameters making the closed loop strongly exponentially
/// stable by minimizing the robust spectral abscissa, starting from the zero
/// controller of the given order.
pub fn stabilize(
    plant: &PlantBlock,
    order: usize,
    opts: &SynthesisOptions,
) -> Result<(ControllerBlock, f64, OptimizerReport)> {
    let k0 = ControllerBlock::zero(order, plant.n_u(), plant.n_y());
    stabilize_from(plant, &k0, opts)
}

/// Same as `stabilize`, starting from (and keeping the structure of) the
/// given controller.
pub fn stabilize_from(
    plant: &PlantBlock,
    k0: &ControllerBlock,
    opts: &SynthesisOptions,
) -> Result<(ControllerBlock, f64, OptimizerReport)> {
    let psys = build_closed_loop(plant, k0, opts.feedback_delay)?;
    let obj = AbscissaObjective { psys: &psys };
    let p0 = k0.parameters();
    if p0.is_empty() {
        let (value, _, _) = grad_robust_abscissa(&psys, &[])?;
        if value < 0.0 {
            return Ok((
                k0.clone(),
                value,
                OptimizerReport {
                    p: Vec::new(),
                    value,
                    iterations: 0,
                    gs_rounds: 0,
                    termination: crate::nsopt::Termination::SmallGradient,
                    trace: Vec::new(),
                },
            ));
        }
        return Err(Error::NoStabilizingControllerFound {
            alpha: value,
            best: Vec::new(),
        });
    }
    let mut phase_opts = opts.clone();
    if phase_opts.optimizer.target_value.is_none() && opts.stability_margin > 0.0 {
        phase_opts.optimizer.target_value = Some(-opts.stability_margin);
    }
    let report = best_run(&obj, restart_points(&p0, opts), &phase_opts)?;
    let k = k0.with_parameters(&report.p)?;
    if report.value < 0.0 {
        Ok((k, report.value, report))
    } else {
        Err(Error::NoStabilizingControllerFound {
            alpha: report.value,
            best: report.p,
        })
    }
}

/// Minimize the strong H-infinity norm of the closed loop over the free
/// controller parameters. Starts from `init` when given (running the
/// stabilization phase first if that start is not strongly stabilizing),
/// otherwise from a stabilized zero-initialized controller of the given
/// order. Returns the controller, the achieved norm and the winning run.
pub fn hinf_design(
    plant: &PlantBlock,
    init: Option<&ControllerBlock>,
    order: usize,
    opts: &SynthesisOptions,
) -> Result<(ControllerBlock, f64, OptimizerReport)> {
    let k_init = match init {
        Some(k) => {
            k.validate(plant.n_u(), plant.n_y())?;
            k.clone()
        }
        None => stabilize(plant, order, opts)?.0,
    };
    let psys = build_closed_loop(plant, &k_init, opts.feedback_delay)?;
    let mut p0 = k_init.parameters();
    let stable_at_start = grad_strong_norm(&psys, &p0).is_ok();
    let k_start = if stable_at_start {
        k_init
    } else {
        let (k_stab, _, _) = stabilize_from(plant, &k_init, opts)?;
        p0 = k_stab.parameters();
        k_stab
    };
    let obj = NormObjective { psys: &psys };
    if p0.is_empty() {
        let (value, _, _) = grad_strong_norm(&psys, &[])?;
        return Ok((
            k_start,
            value,
            OptimizerReport {
                p: Vec::new(),
                value,
                iterations: 0,
                gs_rounds: 0,
                termination: crate::nsopt::Termination::SmallGradient,
                trace: Vec::new(),
            },
        ));
    }
    // Restarts whose perturbed start leaves the stability region fail with
    // a start-guard error; the remaining runs decide.
    let report = best_run(&obj, restart_points(&p0, opts), opts)?;
    let k = k_start.with_parameters(&report.p)?;
    Ok((k, report.value, report))
}
