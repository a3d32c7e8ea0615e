//! Data model for delay descriptor systems and their interconnections.
//!
//! The central container is [`DdaeSystem`]: E x'(t) = A_0 x(t) +
//! sum_{i>=1} A_i x(t - tau_i) + B w(t), z(t) = C x(t), where E may be
//! singular. Closed loops of a plant with a (possibly dynamic, possibly
//! structured) controller are assembled in this form by keeping the controller
//! input/output as algebraic variables, so controller parameters enter the
//! system matrices affinely and no elimination is ever required.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lapack;

/// Delays closer than this are considered equal and their terms are summed.
const DELAY_MERGE_TOL: f64 = 1e-12;

/// Delay descriptor system in standard form.
#[derive(Debug, Clone)]
pub struct DdaeSystem {
    pub e: DMatrix<f64>,
    /// (tau_i, A_i) sorted by delay; the first entry always has tau = 0.
    pub delay_terms: Vec<(f64, DMatrix<f64>)>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl DdaeSystem {
    /// Validates dimensions, sorts the delay list, merges terms sharing a
    /// delay and guarantees the presence of the zero-delay term.
    pub fn new(
        e: DMatrix<f64>,
        delay_terms: Vec<(f64, DMatrix<f64>)>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self> {
        let n = e.nrows();
        if e.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "E must be square, got {:?}",
                e.shape()
            )));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows but the state dimension is {}",
                b.nrows(),
                n
            )));
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "C has {} columns but the state dimension is {}",
                c.ncols(),
                n
            )));
        }
        let mut terms: Vec<(f64, DMatrix<f64>)> = Vec::new();
        for (tau, a) in delay_terms {
            if !tau.is_finite() || tau < 0.0 {
                return Err(Error::AssumptionViolation(format!(
                    "delays must be finite and nonnegative, got {tau}"
                )));
            }
            if a.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!(
                    "delay term matrix has shape {:?}, expected {}x{}",
                    a.shape(),
                    n,
                    n
                )));
            }
            let tau = if tau <= DELAY_MERGE_TOL { 0.0 } else { tau };
            match terms
                .iter_mut()
                .find(|(t, _)| (*t - tau).abs() <= DELAY_MERGE_TOL * (1.0 + tau))
            {
                Some((_, acc)) => *acc += a,
                None => terms.push((tau, a)),
            }
        }
        if !terms.iter().any(|(t, _)| *t == 0.0) {
            terms.push((0.0, DMatrix::zeros(n, n)));
        }
        terms.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        Ok(DdaeSystem {
            e,
            delay_terms: terms,
            b,
            c,
        })
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.c.nrows()
    }

    /// Number of distinct positive delays.
    pub fn m(&self) -> usize {
        self.delay_terms.len() - 1
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.delay_terms[0].1
    }

    /// The positive delays tau_1 < ... < tau_m.
    pub fn delays(&self) -> Vec<f64> {
        self.delay_terms.iter().skip(1).map(|(t, _)| *t).collect()
    }

    pub fn tau_max(&self) -> f64 {
        self.delay_terms.last().map(|(t, _)| *t).unwrap_or(0.0)
    }

    pub fn partition(&self) -> Result<PartitionedSystem> {
        partition(self)
    }
}

/// Null-space partition of a [`DdaeSystem`]: orthogonal bases U, V for the
/// left/right null spaces of E, their complements and all transformed blocks
/// A_i^(kl) = (basis_k)^T A_i (basis_l).
#[derive(Debug, Clone)]
pub struct PartitionedSystem {
    pub sys: DdaeSystem,
    /// Left null-space basis of E (n x nu, orthonormal, U^T E = 0).
    pub u: DMatrix<f64>,
    /// Right null-space basis of E (n x nu, orthonormal, E V = 0).
    pub v: DMatrix<f64>,
    pub u_perp: DMatrix<f64>,
    pub v_perp: DMatrix<f64>,
    /// Nullity of E.
    pub nu: usize,
    /// U_perp^T E V_perp (nonsingular by construction).
    pub e11: DMatrix<f64>,
    /// Per delay term i = 0..m: U_perp^T A_i V_perp.
    pub a11: Vec<DMatrix<f64>>,
    /// U_perp^T A_i V.
    pub a12: Vec<DMatrix<f64>>,
    /// U^T A_i V_perp.
    pub a21: Vec<DMatrix<f64>>,
    /// U^T A_i V.
    pub a22: Vec<DMatrix<f64>>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
}

impl PartitionedSystem {
    pub fn delays(&self) -> Vec<f64> {
        self.sys.delays()
    }

    pub fn m(&self) -> usize {
        self.sys.m()
    }

    /// U^T A_0 V + sum_{i>=1} U^T A_i V * w_i for given per-delay weights.
    pub fn a22_weighted(&self, weights: &[Complex64]) -> DMatrix<Complex64> {
        let mut acc = self.a22[0].map(|x| Complex64::new(x, 0.0));
        for (i, w) in weights.iter().enumerate() {
            acc += self.a22[i + 1].map(|x| x * w);
        }
        acc
    }
}

/// Computes the null-space partition. The bases come from a singular value
/// decomposition of E with rank tolerance n * eps * sigma_max.
pub fn partition(sys: &DdaeSystem) -> Result<PartitionedSystem> {
    let n = sys.n();
    let (uf, s, vt) = lapack::svd_real(&sys.e)?;
    let smax = if s.is_empty() { 0.0 } else { s[0] };
    let tol = n as f64 * f64::EPSILON * smax;
    let rank = s.iter().filter(|&&x| x > tol).count();
    let nu = n - rank;
    let vf = vt.transpose();
    let u_perp = uf.columns(0, rank).into_owned();
    let u = uf.columns(rank, nu).into_owned();
    let v_perp = vf.columns(0, rank).into_owned();
    let v = vf.columns(rank, nu).into_owned();

    let a22_0 = u.transpose() * sys.a0() * &v;
    if nu > 0 {
        let (_, s22, _) = lapack::svd_real(&a22_0)?;
        let s22max = s22[0];
        if s22max <= 0.0 || s22[nu - 1] <= 1e3 * f64::EPSILON * s22max {
            return Err(Error::AssumptionViolation(
                "U^T A_0 V is singular: the algebraic part of the system is ill-posed".into(),
            ));
        }
    }

    let proj = |l: &DMatrix<f64>, a: &DMatrix<f64>, r: &DMatrix<f64>| l.transpose() * a * r;
    let mut a11 = Vec::new();
    let mut a12 = Vec::new();
    let mut a21 = Vec::new();
    let mut a22 = Vec::new();
    for (_, a) in &sys.delay_terms {
        a11.push(proj(&u_perp, a, &v_perp));
        a12.push(proj(&u_perp, a, &v));
        a21.push(proj(&u, a, &v_perp));
        a22.push(proj(&u, a, &v));
    }
    let e11 = u_perp.transpose() * &sys.e * &v_perp;
    let b1 = u_perp.transpose() * &sys.b;
    let b2 = u.transpose() * &sys.b;
    let c1 = &sys.c * &v_perp;
    let c2 = &sys.c * &v;
    Ok(PartitionedSystem {
        sys: sys.clone(),
        u,
        v,
        u_perp,
        v_perp,
        nu,
        e11,
        a11,
        a12,
        a21,
        a22,
        b1,
        b2,
        c1,
        c2,
    })
}

/// Open-loop plant with control channel (u, y), disturbance w and
/// performance output z. Each control input and measured output channel may
/// carry its own delay.
#[derive(Debug, Clone)]
pub struct PlantBlock {
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
    pub c_z: DMatrix<f64>,
    /// Feedthrough from u to y.
    pub d_yu: DMatrix<f64>,
    /// Delay on each control input channel (length n_u).
    pub input_delays: Vec<f64>,
    /// Delay on each measured output channel (length n_y).
    pub output_delays: Vec<f64>,
}

impl PlantBlock {
    // One argument per physical block; an options struct would obscure them.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b_u: DMatrix<f64>,
        b_w: DMatrix<f64>,
        c_y: DMatrix<f64>,
        c_z: DMatrix<f64>,
        d_yu: DMatrix<f64>,
        input_delays: Vec<f64>,
        output_delays: Vec<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch("plant A must be square".into()));
        }
        let n_u = b_u.ncols();
        let n_y = c_y.nrows();
        if b_u.nrows() != n || b_w.nrows() != n {
            return Err(Error::DimensionMismatch(
                "plant input matrices must have as many rows as A".into(),
            ));
        }
        if c_y.ncols() != n || c_z.ncols() != n {
            return Err(Error::DimensionMismatch(
                "plant output matrices must have as many columns as A".into(),
            ));
        }
        if d_yu.shape() != (n_y, n_u) {
            return Err(Error::DimensionMismatch(format!(
                "D_yu must be {}x{}, got {:?}",
                n_y,
                n_u,
                d_yu.shape()
            )));
        }
        if input_delays.len() != n_u || output_delays.len() != n_y {
            return Err(Error::DimensionMismatch(
                "one delay per control input and measured output channel required".into(),
            ));
        }
        if input_delays
            .iter()
            .chain(&output_delays)
            .any(|t| !t.is_finite() || *t < 0.0)
        {
            return Err(Error::AssumptionViolation(
                "channel delays must be finite and nonnegative".into(),
            ));
        }
        Ok(PlantBlock {
            a,
            b_u,
            b_w,
            c_y,
            c_z,
            d_yu,
            input_delays,
            output_delays,
        })
    }

    /// Plant without channel delays.
    pub fn undelayed(
        a: DMatrix<f64>,
        b_u: DMatrix<f64>,
        b_w: DMatrix<f64>,
        c_y: DMatrix<f64>,
        c_z: DMatrix<f64>,
        d_yu: DMatrix<f64>,
    ) -> Result<Self> {
        let n_u = b_u.ncols();
        let n_y = c_y.nrows();
        PlantBlock::new(a, b_u, b_w, c_y, c_z, d_yu, vec![0.0; n_u], vec![0.0; n_y])
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c_y.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.b_w.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.c_z.nrows()
    }
}

/// Finite-dimensional controller of fixed order: u = C_K x_K + D_K y,
/// x_K' = A_K x_K + B_K y. Order zero reduces to the static gain D_K.
/// The boolean masks mark which entries are free optimization parameters;
/// the rest keep their prescribed values.
#[derive(Debug, Clone)]
pub struct ControllerBlock {
    pub order: usize,
    pub a_k: DMatrix<f64>,
    pub b_k: DMatrix<f64>,
    pub c_k: DMatrix<f64>,
    pub d_k: DMatrix<f64>,
    pub free_a: DMatrix<bool>,
    pub free_b: DMatrix<bool>,
    pub free_c: DMatrix<bool>,
    pub free_d: DMatrix<bool>,
}

impl ControllerBlock {
    /// Zero-initialized controller with every entry free.
    pub fn zero(order: usize, n_u: usize, n_y: usize) -> Self {
        ControllerBlock {
            order,
            a_k: DMatrix::zeros(order, order),
            b_k: DMatrix::zeros(order, n_y),
            c_k: DMatrix::zeros(n_u, order),
            d_k: DMatrix::zeros(n_u, n_y),
            free_a: DMatrix::from_element(order, order, true),
            free_b: DMatrix::from_element(order, n_y, true),
            free_c: DMatrix::from_element(n_u, order, true),
            free_d: DMatrix::from_element(n_u, n_y, true),
        }
    }

    /// Static gain u = K y with every gain entry free.
    pub fn static_gain(k: DMatrix<f64>) -> Self {
        let (n_u, n_y) = k.shape();
        let mut c = ControllerBlock::zero(0, n_u, n_y);
        c.d_k = k;
        c
    }

    pub fn validate(&self, n_u: usize, n_y: usize) -> Result<()> {
        let nc = self.order;
        let want = [
            (self.a_k.shape(), (nc, nc), "A_K"),
            (self.b_k.shape(), (nc, n_y), "B_K"),
            (self.c_k.shape(), (n_u, nc), "C_K"),
            (self.d_k.shape(), (n_u, n_y), "D_K"),
        ];
        for (got, expect, name) in want {
            if got != expect {
                return Err(Error::DimensionMismatch(format!(
                    "controller {name} must be {}x{}, got {}x{}",
                    expect.0, expect.1, got.0, got.1
                )));
            }
        }
        for (mask, mat, name) in [
            (&self.free_a, &self.a_k, "A_K"),
            (&self.free_b, &self.b_k, "B_K"),
            (&self.free_c, &self.c_k, "C_K"),
            (&self.free_d, &self.d_k, "D_K"),
        ] {
            if mask.shape() != mat.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "mask for controller {name} has the wrong shape"
                )));
            }
        }
        Ok(())
    }

    /// Number of free entries, i.e. the parameter count of the closed loop.
    pub fn free_count(&self) -> usize {
        [&self.free_a, &self.free_b, &self.free_c, &self.free_d]
            .iter()
            .map(|m| m.iter().filter(|&&f| f).count())
            .sum()
    }

    /// Free entries in canonical order: A_K, B_K, C_K, D_K, each row-major.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.free_count());
        for (mask, mat) in [
            (&self.free_a, &self.a_k),
            (&self.free_b, &self.b_k),
            (&self.free_c, &self.c_k),
            (&self.free_d, &self.d_k),
        ] {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    if mask[(i, j)] {
                        p.push(mat[(i, j)]);
                    }
                }
            }
        }
        p
    }

    /// Controller with the free entries replaced by the given parameter
    /// vector, in the same canonical order as [`Self::parameters`].
    pub fn with_parameters(&self, p: &[f64]) -> Result<ControllerBlock> {
        if p.len() != self.free_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.free_count(),
                p.len()
            )));
        }
        let mut out = self.clone();
        let mut it = p.iter();
        for (mask, mat) in [
            (&self.free_a, &mut out.a_k),
            (&self.free_b, &mut out.b_k),
            (&self.free_c, &mut out.c_k),
            (&self.free_d, &mut out.d_k),
        ] {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    if mask[(i, j)] {
                        mat[(i, j)] = *it.next().unwrap();
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Closed-loop interconnection of a plant and a concrete controller with an
/// optional delay on the controller input: u(t) = C_K x_K + D_K y(t - tau_fb).
///
/// The augmented state is X = [x; x_K; u; y] with equation rows ordered
/// [plant dynamics; controller dynamics; y definition; u definition], so for
/// order zero the blocks are
///
///   E = diag(I, 0, 0),
///   A_0 = [A B_u 0; C_y D_yu -I; 0 I 0],  A_fb = [0 0 0; 0 0 0; 0 0 -K],
///   B = [B_w; 0; 0],  C = [C_z 0 0],
///
/// with plant channel delays moving the corresponding B_u columns or C_y rows
/// into the matching delay term.
pub fn interconnect(
    plant: &PlantBlock,
    k: &ControllerBlock,
    feedback_delay: f64,
) -> Result<DdaeSystem> {
    let psys = build_closed_loop(plant, k, feedback_delay)?;
    psys.instantiate(&k.parameters())
}

/// Like [`interconnect`], but also records one affine derivative matrix per
/// free controller entry, in the canonical parameter order.
pub fn build_closed_loop(
    plant: &PlantBlock,
    k: &ControllerBlock,
    feedback_delay: f64,
) -> Result<ParameterizedSystem> {
    k.validate(plant.n_u(), plant.n_y())?;
    if !feedback_delay.is_finite() || feedback_delay < 0.0 {
        return Err(Error::AssumptionViolation(
            "feedback delay must be finite and nonnegative".into(),
        ));
    }
    let (n, nc, nu, ny) = (plant.n_x(), k.order, plant.n_u(), plant.n_y());
    let nn = n + nc + nu + ny;
    let (row_x, row_k, row_y, row_u) = (0, n, n + nc, n + nc + ny);
    let (col_x, col_k, col_u, col_y) = (0, n, n + nc, n + nc + nu);

    // Collect the distinct delays up front so parameter derivatives can refer
    // to final term indices.
    let snap = |t: f64| if t <= DELAY_MERGE_TOL { 0.0 } else { t };
    let mut delays: Vec<f64> = vec![0.0];
    let add_delay = |delays: &mut Vec<f64>, t: f64| -> usize {
        let t = snap(t);
        match delays
            .iter()
            .position(|d| (d - t).abs() <= DELAY_MERGE_TOL * (1.0 + t))
        {
            Some(i) => i,
            None => {
                delays.push(t);
                delays.len() - 1
            }
        }
    };
    for &t in &plant.input_delays {
        add_delay(&mut delays, t);
    }
    for &t in &plant.output_delays {
        add_delay(&mut delays, t);
    }
    let fb_idx = add_delay(&mut delays, feedback_delay);
    // Sort and build an old-index -> new-index map.
    let mut order: Vec<usize> = (0..delays.len()).collect();
    order.sort_by(|&i, &j| delays[i].partial_cmp(&delays[j]).unwrap());
    let mut rank = vec![0usize; delays.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let sorted_delays: Vec<f64> = order.iter().map(|&i| delays[i]).collect();
    let fb_idx = rank[fb_idx];
    let delay_index = |t: f64| {
        let t = snap(t);
        sorted_delays
            .iter()
            .position(|d| (d - t).abs() <= DELAY_MERGE_TOL * (1.0 + t))
            .unwrap()
    };

    let mut terms: Vec<DMatrix<f64>> = vec![DMatrix::zeros(nn, nn); sorted_delays.len()];

    // The base system is assembled at parameter vector zero: free controller
    // entries enter through the derivative directions only, so instantiate(p)
    // places the absolute values p into those entries.
    let masked = |mat: &DMatrix<f64>, mask: &DMatrix<bool>| {
        DMatrix::from_fn(mat.nrows(), mat.ncols(), |i, j| {
            if mask[(i, j)] {
                0.0
            } else {
                mat[(i, j)]
            }
        })
    };
    let a_k0 = masked(&k.a_k, &k.free_a);
    let b_k0 = masked(&k.b_k, &k.free_b);
    let c_k0 = masked(&k.c_k, &k.free_c);
    let d_k0 = masked(&k.d_k, &k.free_d);

    // Plant dynamics rows.
    terms[0]
        .view_mut((row_x, col_x), (n, n))
        .copy_from(&plant.a);
    for j in 0..nu {
        let idx = delay_index(plant.input_delays[j]);
        terms[idx]
            .view_mut((row_x, col_u + j), (n, 1))
            .copy_from(&plant.b_u.column(j));
    }
    // Controller dynamics rows: x_K' = A_K x_K + B_K y(t - tau_fb).
    terms[0].view_mut((row_k, col_k), (nc, nc)).copy_from(&a_k0);
    terms[fb_idx]
        .view_mut((row_k, col_y), (nc, ny))
        .copy_from(&b_k0);
    // Measured output rows: 0 = C_y x(t - tau_out) + D_yu u - y.
    for i in 0..ny {
        let idx = delay_index(plant.output_delays[i]);
        terms[idx]
            .view_mut((row_y + i, col_x), (1, n))
            .copy_from(&plant.c_y.row(i));
    }
    terms[0]
        .view_mut((row_y, col_u), (ny, nu))
        .copy_from(&plant.d_yu);
    for i in 0..ny {
        terms[0][(row_y + i, col_y + i)] = -1.0;
    }
    // Controller output rows: 0 = u - C_K x_K - D_K y(t - tau_fb).
    for j in 0..nu {
        terms[0][(row_u + j, col_u + j)] = 1.0;
    }
    let mut ckm = terms[0].view_mut((row_u, col_k), (nu, nc));
    ckm.copy_from(&(-&c_k0));
    let mut dkm = terms[fb_idx].view_mut((row_u, col_y), (nu, ny));
    dkm += -&d_k0;

    let mut e = DMatrix::zeros(nn, nn);
    for i in 0..n + nc {
        e[(i, i)] = 1.0;
    }
    let mut b = DMatrix::zeros(nn, plant.n_w());
    b.view_mut((row_x, 0), (n, plant.n_w()))
        .copy_from(&plant.b_w);
    let mut c = DMatrix::zeros(plant.n_z(), nn);
    c.view_mut((0, col_x), (plant.n_z(), n))
        .copy_from(&plant.c_z);

    let delay_terms: Vec<(f64, DMatrix<f64>)> = sorted_delays.iter().cloned().zip(terms).collect();
    let base = DdaeSystem::new(e, delay_terms, b, c)?;
    debug_assert_eq!(base.delay_terms.len(), sorted_delays.len());

    // Affine derivatives, one per free controller entry in canonical order.
    let mut derivs = Vec::new();
    for i in 0..nc {
        for j in 0..nc {
            if k.free_a[(i, j)] {
                derivs.push(ParamDerivative::single_a(0, row_k + i, col_k + j, 1.0));
            }
        }
    }
    for i in 0..nc {
        for j in 0..ny {
            if k.free_b[(i, j)] {
                derivs.push(ParamDerivative::single_a(fb_idx, row_k + i, col_y + j, 1.0));
            }
        }
    }
    for i in 0..nu {
        for j in 0..nc {
            if k.free_c[(i, j)] {
                derivs.push(ParamDerivative::single_a(0, row_u + i, col_k + j, -1.0));
            }
        }
    }
    for i in 0..nu {
        for j in 0..ny {
            if k.free_d[(i, j)] {
                derivs.push(ParamDerivative::single_a(
                    fb_idx,
                    row_u + i,
                    col_y + j,
                    -1.0,
                ));
            }
        }
    }
    Ok(ParameterizedSystem { base, derivs })
}

/// Absorbs a direct feedthrough z = C x + D w into standard form by the slack
/// variable gamma_w = w: the state extends to X = [x; gamma_w] with
/// A_0 -> diag(A_0, -I), B -> [B; I] and C -> [C D].
pub fn eliminate_feedthrough(sys: &DdaeSystem, d: &DMatrix<f64>) -> Result<DdaeSystem> {
    let (n, nw, nz) = (sys.n(), sys.n_w(), sys.n_z());
    if d.shape() != (nz, nw) {
        return Err(Error::DimensionMismatch(format!(
            "feedthrough must be {}x{}, got {:?}",
            nz,
            nw,
            d.shape()
        )));
    }
    let nn = n + nw;
    let mut e = DMatrix::zeros(nn, nn);
    e.view_mut((0, 0), (n, n)).copy_from(&sys.e);
    let mut terms = Vec::new();
    for (idx, (tau, a)) in sys.delay_terms.iter().enumerate() {
        let mut at = DMatrix::zeros(nn, nn);
        at.view_mut((0, 0), (n, n)).copy_from(a);
        if idx == 0 {
            for i in 0..nw {
                at[(n + i, n + i)] = -1.0;
            }
        }
        terms.push((*tau, at));
    }
    let mut b = DMatrix::zeros(nn, nw);
    b.view_mut((0, 0), (n, nw)).copy_from(&sys.b);
    for i in 0..nw {
        b[(n + i, i)] = 1.0;
    }
    let mut c = DMatrix::zeros(nz, nn);
    c.view_mut((0, 0), (nz, n)).copy_from(&sys.c);
    c.view_mut((0, n), (nz, nw)).copy_from(d);
    DdaeSystem::new(e, terms, b, c)
}

/// Descriptor system whose disturbance input and performance output may enter
/// with channel-wise delays: E x' = sum_i A_i x(t - tau_i) + sum_j B_j
/// w(t - rho_j), z = sum_l C_l x(t - eta_l).
#[derive(Debug, Clone)]
pub struct DelayedIoSystem {
    pub e: DMatrix<f64>,
    pub a_terms: Vec<(f64, DMatrix<f64>)>,
    pub b_terms: Vec<(f64, DMatrix<f64>)>,
    pub c_terms: Vec<(f64, DMatrix<f64>)>,
}

/// Eliminates delayed inputs/outputs with slack variables: gamma_w = w turns
/// B_j w(t - rho_j) into the delay term A_rho [x; gamma_w] and dually a slack
/// gamma_z = sum_l C_l x(t - eta_l) collects delayed outputs, so the result is
/// in standard form with undelayed B and C.
pub fn eliminate_io_delays(sys: &DelayedIoSystem) -> Result<DdaeSystem> {
    let n = sys.e.nrows();
    if sys.e.ncols() != n {
        return Err(Error::DimensionMismatch("E must be square".into()));
    }
    if sys.b_terms.is_empty() || sys.c_terms.is_empty() {
        return Err(Error::DimensionMismatch(
            "at least one input term and one output term are required".into(),
        ));
    }
    let nw = sys.b_terms[0].1.ncols();
    let nz = sys.c_terms[0].1.nrows();
    for (_, bt) in &sys.b_terms {
        if bt.shape() != (n, nw) {
            return Err(Error::DimensionMismatch("inconsistent input terms".into()));
        }
    }
    for (_, ct) in &sys.c_terms {
        if ct.shape() != (nz, n) {
            return Err(Error::DimensionMismatch("inconsistent output terms".into()));
        }
    }
    let slack_in = sys.b_terms.iter().any(|(t, _)| *t > 0.0);
    let slack_out = sys.c_terms.iter().any(|(t, _)| *t > 0.0);
    let nn = n + if slack_in { nw } else { 0 } + if slack_out { nz } else { 0 };
    let col_w = n;
    let row_w = n;
    let col_z = n + if slack_in { nw } else { 0 };
    let row_z = col_z;

    let mut e = DMatrix::zeros(nn, nn);
    e.view_mut((0, 0), (n, n)).copy_from(&sys.e);

    let mut terms: Vec<(f64, DMatrix<f64>)> = Vec::new();
    let term_at = |terms: &mut Vec<(f64, DMatrix<f64>)>, tau: f64| -> usize {
        let tau = if tau <= DELAY_MERGE_TOL { 0.0 } else { tau };
        match terms
            .iter()
            .position(|(t, _)| (t - tau).abs() <= DELAY_MERGE_TOL * (1.0 + tau))
        {
            Some(i) => i,
            None => {
                terms.push((tau, DMatrix::zeros(nn, nn)));
                terms.len() - 1
            }
        }
    };
    term_at(&mut terms, 0.0);
    for (tau, a) in &sys.a_terms {
        let i = term_at(&mut terms, *tau);
        let mut view = terms[i].1.view_mut((0, 0), (n, n));
        view += a;
    }

    let mut b = DMatrix::zeros(nn, nw);
    if slack_in {
        for (tau, bt) in &sys.b_terms {
            let i = term_at(&mut terms, *tau);
            let mut view = terms[i].1.view_mut((0, col_w), (n, nw));
            view += bt;
        }
        // Slack definition row: 0 = -gamma_w + w.
        for i in 0..nw {
            terms[0].1[(row_w + i, col_w + i)] = -1.0;
            b[(row_w + i, i)] = 1.0;
        }
    } else {
        let mut acc = DMatrix::zeros(n, nw);
        for (_, bt) in &sys.b_terms {
            acc += bt;
        }
        b.view_mut((0, 0), (n, nw)).copy_from(&acc);
    }

    let mut c = DMatrix::zeros(nz, nn);
    if slack_out {
        // Slack definition rows: 0 = -gamma_z + sum_l C_l x(t - eta_l).
        for (tau, ct) in &sys.c_terms {
            let i = term_at(&mut terms, *tau);
            let mut view = terms[i].1.view_mut((row_z, 0), (nz, n));
            view += ct;
        }
        for i in 0..nz {
            terms[0].1[(row_z + i, col_z + i)] = -1.0;
            c[(i, col_z + i)] = 1.0;
        }
    } else {
        let mut acc = DMatrix::zeros(nz, n);
        for (_, ct) in &sys.c_terms {
            acc += ct;
        }
        c.view_mut((0, 0), (nz, n)).copy_from(&acc);
    }

    DdaeSystem::new(e, terms, b, c)
}

/// One affine parameter direction: the constant derivative matrices of the
/// system with respect to a single scalar parameter, stored sparsely.
#[derive(Debug, Clone, Default)]
pub struct ParamDerivative {
    /// Entries (delay term index, row, col, coefficient) of dA_i/dp.
    pub a_entries: Vec<(usize, usize, usize, f64)>,
    /// Entries (row, col, coefficient) of dB/dp.
    pub b_entries: Vec<(usize, usize, f64)>,
    /// Entries (row, col, coefficient) of dC/dp.
    pub c_entries: Vec<(usize, usize, f64)>,
}

impl ParamDerivative {
    pub fn single_a(term: usize, row: usize, col: usize, coeff: f64) -> Self {
        ParamDerivative {
            a_entries: vec![(term, row, col, coeff)],
            ..Default::default()
        }
    }
}

/// Descriptor system whose matrices depend affinely on a parameter vector p:
/// matrices(p) = base + sum_k p_k * derivative_k.
#[derive(Debug, Clone)]
pub struct ParameterizedSystem {
    pub base: DdaeSystem,
    pub derivs: Vec<ParamDerivative>,
}

impl ParameterizedSystem {
    pub fn n_p(&self) -> usize {
        self.derivs.len()
    }

    fn check_entries(&self) -> Result<()> {
        let (n, nw, nz) = (self.base.n(), self.base.n_w(), self.base.n_z());
        let mt = self.base.delay_terms.len();
        for d in &self.derivs {
            for &(t, r, c, _) in &d.a_entries {
                if t >= mt || r >= n || c >= n {
                    return Err(Error::DimensionMismatch(
                        "parameter derivative entry out of bounds".into(),
                    ));
                }
            }
            for &(r, c, _) in &d.b_entries {
                if r >= n || c >= nw {
                    return Err(Error::DimensionMismatch(
                        "parameter derivative entry out of bounds".into(),
                    ));
                }
            }
            for &(r, c, _) in &d.c_entries {
                if r >= nz || c >= n {
                    return Err(Error::DimensionMismatch(
                        "parameter derivative entry out of bounds".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Exact affine assembly of the system at parameter vector p.
    pub fn instantiate(&self, p: &[f64]) -> Result<DdaeSystem> {
        if p.len() != self.n_p() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.n_p(),
                p.len()
            )));
        }
        self.check_entries()?;
        let mut sys = self.base.clone();
        for (pk, d) in p.iter().zip(&self.derivs) {
            for &(t, r, c, coeff) in &d.a_entries {
                sys.delay_terms[t].1[(r, c)] += pk * coeff;
            }
            for &(r, c, coeff) in &d.b_entries {
                sys.b[(r, c)] += pk * coeff;
            }
            for &(r, c, coeff) in &d.c_entries {
                sys.c[(r, c)] += pk * coeff;
            }
        }
        Ok(sys)
    }

    /// sum_i dA_i/dp_k * w_i for per-term complex weights w (length = number
    /// of delay terms, including the zero-delay term).
    pub fn a_deriv_weighted(&self, k: usize, weights: &[Complex64]) -> Result<DMatrix<Complex64>> {
        let d = self.derivs.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            count: self.n_p(),
        })?;
        let n = self.base.n();
        let mut out = DMatrix::zeros(n, n);
        for &(t, r, c, coeff) in &d.a_entries {
            out[(r, c)] += weights[t] * coeff;
        }
        Ok(out)
    }

    pub fn b_deriv(&self, k: usize) -> Result<DMatrix<f64>> {
        let d = self.derivs.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            count: self.n_p(),
        })?;
        let mut out = DMatrix::zeros(self.base.n(), self.base.n_w());
        for &(r, c, coeff) in &d.b_entries {
            out[(r, c)] += coeff;
        }
        Ok(out)
    }

    pub fn c_deriv(&self, k: usize) -> Result<DMatrix<f64>> {
        let d = self.derivs.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            count: self.n_p(),
        })?;
        let mut out = DMatrix::zeros(self.base.n_z(), self.base.n());
        for &(r, c, coeff) in &d.c_entries {
            out[(r, c)] += coeff;
        }
        Ok(out)
    }

    /// Restriction of the weighted A-derivative to the algebraic blocks,
    /// U^T (sum_i dA_i/dp_k w_i) V.
    pub fn a22_deriv_weighted(
        &self,
        part: &PartitionedSystem,
        k: usize,
        weights: &[Complex64],
    ) -> Result<DMatrix<Complex64>> {
        let full = self.a_deriv_weighted(k, weights)?;
        let uc = part.u.map(|x| Complex64::new(x, 0.0));
        let vc = part.v.map(|x| Complex64::new(x, 0.0));
        Ok(uc.transpose() * full * vc)
    }
}

/// Helper for tests and callers assembling systems from plain arrays.
pub fn dmatrix_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nr = rows.len();
    let nc = if nr > 0 { rows[0].len() } else { 0 };
    DMatrix::from_fn(nr, nc, |i, j| rows[i][j])
}

/// Unit vector helper.
pub fn unit_vector(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}
