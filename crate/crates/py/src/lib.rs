//! Python bindings for the time-delay descriptor system toolbox.
//!
//! Matrices cross the boundary as nested lists (row major); complex scalars
//! and matrices map to Python complex numbers. Long-running analysis and
//! synthesis calls release the GIL.

use nalgebra::DMatrix;
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use tds_hinf::{
    char_roots, eval_T, hinf_design, interconnect, log_grid, robust_spectral_abscissa, sigma_sweep,
    spectral_abscissa, stabilize, stabilize_from, strong_hinf_norm, ControllerBlock, DdaeSystem,
    Error, NormBranch, PlantBlock, RootOptions, SynthesisOptions,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::DimensionMismatch(_)
        | Error::AssumptionViolation(_)
        | Error::InvalidOrder(_)
        | Error::IndexOutOfRange { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>], name: &str) -> PyResult<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 {
        return Err(PyValueError::new_err(format!("{name} must be nonempty")));
    }
    if rows.iter().any(|r| r.len() != nc) {
        return Err(PyValueError::new_err(format!(
            "{name} rows have inconsistent lengths"
        )));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(PyValueError::new_err(format!(
            "{name} contains a non-finite entry"
        )));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn real_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn complex_rows(m: &DMatrix<Complex64>) -> Vec<Vec<Complex64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Descriptor delay system E x'(t) = A_0 x(t) + sum_i A_i x(t - tau_i) + B w,
/// z = C x, with a possibly singular E.
#[pyclass(module = "tds_hinf._native")]
struct Ddae {
    sys: DdaeSystem,
}

#[pymethods]
impl Ddae {
    /// terms is a list of (delay, A) pairs; a zero-delay term is added when
    /// absent. Omitting e gives an ordinary (retarded) delay system.
    #[new]
    #[pyo3(signature = (terms, b, c, e=None))]
    fn new(
        terms: Vec<(f64, Vec<Vec<f64>>)>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        e: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let b = matrix(&b, "b")?;
        let c = matrix(&c, "c")?;
        let n = b.nrows();
        let e = match e {
            Some(rows) => matrix(&rows, "e")?,
            None => DMatrix::identity(n, n),
        };
        let mut delay_terms = Vec::with_capacity(terms.len());
        for (i, (tau, a)) in terms.into_iter().enumerate() {
            delay_terms.push((tau, matrix(&a, &format!("terms[{i}]"))?));
        }
        let sys = DdaeSystem::new(e, delay_terms, b, c).map_err(py_err)?;
        Ok(Ddae { sys })
    }

    #[getter]
    fn n(&self) -> usize {
        self.sys.n()
    }

    #[getter]
    fn delays(&self) -> Vec<f64> {
        self.sys.delays()
    }

    /// Strong H-infinity norm: the smallest upper bound on the transfer
    /// function gain that is robust against arbitrarily small delay
    /// perturbations.
    fn strong_norm(&self, py: Python<'_>) -> PyResult<f64> {
        let r = py
            .allow_threads(|| strong_hinf_norm(&self.sys))
            .map_err(py_err)?;
        Ok(r.value)
    }

    /// Strong norm with its finite-frequency / asymptotic breakdown.
    fn norm_details<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = py
            .allow_threads(|| strong_hinf_norm(&self.sys))
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("value", r.value)?;
        d.set_item(
            "branch",
            match r.branch {
                NormBranch::FiniteFrequency => "finite",
                NormBranch::Asymptotic => "asymptotic",
            },
        )?;
        d.set_item("asymptotic", r.asymptotic.value)?;
        d.set_item("torus_argmax", r.asymptotic.theta)?;
        d.set_item("finite", r.finite.value)?;
        d.set_item("peak_frequency", r.finite.omega)?;
        d.set_item("discretization_order", r.finite.order_used)?;
        d.set_item("frequency_capped", r.finite.frequency_capped)?;
        Ok(d)
    }

    /// Characteristic roots with real part >= min_real, rightmost first.
    #[pyo3(signature = (min_real=-1.0))]
    fn roots(&self, py: Python<'_>, min_real: f64) -> PyResult<Vec<Complex64>> {
        let spec = py
            .allow_threads(|| char_roots(&self.sys, min_real, &RootOptions::default()))
            .map_err(py_err)?;
        Ok(spec.roots.iter().map(|r| r.lambda).collect())
    }

    /// Root clusters (center, multiplicity) in the same window, grouping
    /// roots within the given single-linkage radius.
    #[pyo3(signature = (min_real=-1.0, radius=1e-4))]
    fn clusters(
        &self,
        py: Python<'_>,
        min_real: f64,
        radius: f64,
    ) -> PyResult<Vec<(Complex64, usize)>> {
        let opts = RootOptions {
            cluster_radius: radius,
            ..RootOptions::default()
        };
        let spec = py
            .allow_threads(|| char_roots(&self.sys, min_real, &opts))
            .map_err(py_err)?;
        Ok(spec
            .clusters
            .iter()
            .map(|c| (c.center, c.multiplicity))
            .collect())
    }

    fn spectral_abscissa(&self, py: Python<'_>) -> PyResult<f64> {
        py.allow_threads(|| spectral_abscissa(&self.sys))
            .map_err(py_err)
    }

    /// Robust spectral abscissa: the limit of the spectral abscissa under
    /// arbitrarily small delay perturbations.
    fn robust_abscissa(&self, py: Python<'_>) -> PyResult<f64> {
        let rep = py
            .allow_threads(|| robust_spectral_abscissa(&self.sys))
            .map_err(py_err)?;
        Ok(rep.alpha_bar)
    }

    fn is_strongly_stable(&self, py: Python<'_>) -> PyResult<bool> {
        py.allow_threads(|| tds_hinf::is_strongly_stable(&self.sys))
            .map_err(py_err)
    }

    fn stability_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let rep = py
            .allow_threads(|| robust_spectral_abscissa(&self.sys))
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("alpha", rep.alpha)?;
        d.set_item("c_d", rep.c_d)?;
        d.set_item("alpha_bar", rep.alpha_bar)?;
        d.set_item("strongly_stable", rep.strongly_stable)?;
        Ok(d)
    }

    /// Transfer function matrix T(s) = C (s E - sum_i A_i e^(-s tau_i))^-1 B.
    fn transfer(&self, s: Complex64) -> PyResult<Vec<Vec<Complex64>>> {
        let t = eval_T(&self.sys, s).map_err(py_err)?;
        Ok(complex_rows(&t))
    }

    /// Largest singular value of T(i omega) on a log grid. Returns a list of
    /// (omega, sigma) pairs; sigma is None where T is singular.
    #[pyo3(signature = (wmin=1e-3, wmax=1e3, points=400))]
    fn sigma_sweep(
        &self,
        py: Python<'_>,
        wmin: f64,
        wmax: f64,
        points: usize,
    ) -> PyResult<Vec<(f64, Option<f64>)>> {
        if !(wmin.is_finite() && wmax.is_finite() && 0.0 < wmin && wmin < wmax) {
            return Err(PyValueError::new_err(
                "need finite frequencies with 0 < wmin < wmax",
            ));
        }
        if points < 2 {
            return Err(PyValueError::new_err("need at least 2 grid points"));
        }
        let grid = log_grid(wmin, wmax, points);
        let resp = py
            .allow_threads(|| sigma_sweep(&self.sys, &grid))
            .map_err(py_err)?;
        Ok(resp.points.iter().map(|p| (p.omega, p.sigma)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Ddae(n={}, delays={:?})", self.sys.n(), self.sys.delays())
    }
}

/// Finite-dimensional LTI controller u = C_k x_k + D_k y, x_k' = A_k x_k + B_k y.
#[pyclass(module = "tds_hinf._native")]
#[derive(Clone)]
struct Controller {
    k: ControllerBlock,
}

#[pymethods]
impl Controller {
    /// Zero-initialized controller of the given order with every entry free.
    #[new]
    fn new(order: usize, n_u: usize, n_y: usize) -> PyResult<Self> {
        if n_u == 0 || n_y == 0 {
            return Err(PyValueError::new_err("need n_u >= 1 and n_y >= 1"));
        }
        Ok(Controller {
            k: ControllerBlock::zero(order, n_u, n_y),
        })
    }

    /// Static output feedback u = K y.
    #[staticmethod]
    fn static_gain(d: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Controller {
            k: ControllerBlock::static_gain(matrix(&d, "d")?),
        })
    }

    #[getter]
    fn order(&self) -> usize {
        self.k.order
    }

    #[getter]
    fn a_k(&self) -> Vec<Vec<f64>> {
        real_rows(&self.k.a_k)
    }

    #[getter]
    fn b_k(&self) -> Vec<Vec<f64>> {
        real_rows(&self.k.b_k)
    }

    #[getter]
    fn c_k(&self) -> Vec<Vec<f64>> {
        real_rows(&self.k.c_k)
    }

    #[getter]
    fn d_k(&self) -> Vec<Vec<f64>> {
        real_rows(&self.k.d_k)
    }

    /// Current values of the free entries in canonical order.
    fn parameters(&self) -> Vec<f64> {
        self.k.parameters()
    }

    fn with_parameters(&self, p: Vec<f64>) -> PyResult<Self> {
        Ok(Controller {
            k: self.k.with_parameters(&p).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Controller(order={}, n_u={}, n_y={}, free={})",
            self.k.order,
            self.k.d_k.nrows(),
            self.k.d_k.ncols(),
            self.k.free_count()
        )
    }
}

/// Open-loop plant with disturbance input w, performance output z, control
/// input u and measured output y, plus per-channel input/output delays.
#[pyclass(module = "tds_hinf._native")]
struct Plant {
    plant: PlantBlock,
}

impl Plant {
    fn options(
        seed: u64,
        restarts: usize,
        max_iter: usize,
        feedback_delay: f64,
    ) -> SynthesisOptions {
        let mut opts = SynthesisOptions {
            restarts,
            seed,
            feedback_delay,
            ..SynthesisOptions::default()
        };
        opts.optimizer.max_iter = max_iter;
        opts
    }
}

#[pymethods]
impl Plant {
    #[new]
    #[pyo3(signature = (a, b_u, b_w, c_y, c_z, d_yu=None, input_delays=None, output_delays=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        a: Vec<Vec<f64>>,
        b_u: Vec<Vec<f64>>,
        b_w: Vec<Vec<f64>>,
        c_y: Vec<Vec<f64>>,
        c_z: Vec<Vec<f64>>,
        d_yu: Option<Vec<Vec<f64>>>,
        input_delays: Option<Vec<f64>>,
        output_delays: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let a = matrix(&a, "a")?;
        let b_u = matrix(&b_u, "b_u")?;
        let b_w = matrix(&b_w, "b_w")?;
        let c_y = matrix(&c_y, "c_y")?;
        let c_z = matrix(&c_z, "c_z")?;
        let (n_u, n_y) = (b_u.ncols(), c_y.nrows());
        let d_yu = match d_yu {
            Some(rows) => matrix(&rows, "d_yu")?,
            None => DMatrix::zeros(n_y, n_u),
        };
        let plant = PlantBlock::new(
            a,
            b_u,
            b_w,
            c_y,
            c_z,
            d_yu,
            input_delays.unwrap_or_else(|| vec![0.0; n_u]),
            output_delays.unwrap_or_else(|| vec![0.0; n_y]),
        )
        .map_err(py_err)?;
        Ok(Plant { plant })
    }

    #[getter]
    fn n_x(&self) -> usize {
        self.plant.n_x()
    }

    #[getter]
    fn n_u(&self) -> usize {
        self.plant.n_u()
    }

    #[getter]
    fn n_y(&self) -> usize {
        self.plant.n_y()
    }

    /// Close the loop with the given controller (optionally through a
    /// measurement feedback delay) and return the w -> z descriptor system.
    #[pyo3(signature = (k, feedback_delay=0.0))]
    fn closed_loop(&self, k: &Controller, feedback_delay: f64) -> PyResult<Ddae> {
        let sys = interconnect(&self.plant, &k.k, feedback_delay).map_err(py_err)?;
        Ok(Ddae { sys })
    }

    /// Search for a strongly stabilizing controller by minimizing the robust
    /// spectral abscissa of the closed loop. Returns (controller, abscissa).
    #[pyo3(signature = (order=0, init=None, seed=1, restarts=3, max_iter=300, feedback_delay=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn stabilize(
        &self,
        py: Python<'_>,
        order: usize,
        init: Option<Controller>,
        seed: u64,
        restarts: usize,
        max_iter: usize,
        feedback_delay: f64,
    ) -> PyResult<(Controller, f64)> {
        let opts = Plant::options(seed, restarts, max_iter, feedback_delay);
        let (k, alpha, _) = py
            .allow_threads(|| match &init {
                Some(k0) => stabilize_from(&self.plant, &k0.k, &opts),
                None => stabilize(&self.plant, order, &opts),
            })
            .map_err(py_err)?;
        Ok((Controller { k }, alpha))
    }

    /// Minimize the strong H-infinity norm of the closed loop over the free
    /// controller parameters, stabilizing first when the starting point is
    /// not strongly stable. Returns (controller, norm).
    #[pyo3(signature = (order=0, init=None, seed=1, restarts=3, max_iter=300, feedback_delay=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn hinf_design(
        &self,
        py: Python<'_>,
        order: usize,
        init: Option<Controller>,
        seed: u64,
        restarts: usize,
        max_iter: usize,
        feedback_delay: f64,
    ) -> PyResult<(Controller, f64)> {
        let opts = Plant::options(seed, restarts, max_iter, feedback_delay);
        let (k, norm, _) = py
            .allow_threads(|| hinf_design(&self.plant, init.as_ref().map(|c| &c.k), order, &opts))
            .map_err(py_err)?;
        Ok((Controller { k }, norm))
    }

    fn __repr__(&self) -> String {
        format!(
            "Plant(n_x={}, n_u={}, n_y={})",
            self.plant.n_x(),
            self.plant.n_u(),
            self.plant.n_y()
        )
    }
}

#[pymodule]
fn _native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Ddae>()?;
    m.add_class::<Controller>()?;
    m.add_class::<Plant>()?;
    Ok(())
}
