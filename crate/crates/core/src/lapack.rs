//! Thin safe wrappers around the handful of LAPACK routines the crate needs.
//!
//! nalgebra's own decompositions cover the real symmetric cases well, but the
//! algorithms here lean on complex LU with condition estimates, the complex
//! SVD, the QZ iteration for (possibly singular) real pencils and the complex
//! nonsymmetric eigenproblem with left eigenvectors. Calling into LAPACK
//! directly keeps those on the well-trodden path. nalgebra stores matrices
//! column-major, so buffers pass through without copies.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

#[link(name = "openblas")]
extern "C" {
    fn dgesvd_(
        jobu: *const u8,
        jobvt: *const u8,
        m: *const i32,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        s: *mut f64,
        u: *mut f64,
        ldu: *const i32,
        vt: *mut f64,
        ldvt: *const i32,
        work: *mut f64,
        lwork: *const i32,
        info: *mut i32,
    );
    fn zgesvd_(
        jobu: *const u8,
        jobvt: *const u8,
        m: *const i32,
        n: *const i32,
        a: *mut Complex64,
        lda: *const i32,
        s: *mut f64,
        u: *mut Complex64,
        ldu: *const i32,
        vt: *mut Complex64,
        ldvt: *const i32,
        work: *mut Complex64,
        lwork: *const i32,
        rwork: *mut f64,
        info: *mut i32,
    );
    fn dggev_(
        jobvl: *const u8,
        jobvr: *const u8,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        b: *mut f64,
        ldb: *const i32,
        alphar: *mut f64,
        alphai: *mut f64,
        beta: *mut f64,
        vl: *mut f64,
        ldvl: *const i32,
        vr: *mut f64,
        ldvr: *const i32,
        work: *mut f64,
        lwork: *const i32,
        info: *mut i32,
    );
    fn zgeev_(
        jobvl: *const u8,
        jobvr: *const u8,
        n: *const i32,
        a: *mut Complex64,
        lda: *const i32,
        w: *mut Complex64,
        vl: *mut Complex64,
        ldvl: *const i32,
        vr: *mut Complex64,
        ldvr: *const i32,
        work: *mut Complex64,
        lwork: *const i32,
        rwork: *mut f64,
        info: *mut i32,
    );
    fn zgetrf_(
        m: *const i32,
        n: *const i32,
        a: *mut Complex64,
        lda: *const i32,
        ipiv: *mut i32,
        info: *mut i32,
    );
    fn zgetrs_(
        trans: *const u8,
        n: *const i32,
        nrhs: *const i32,
        a: *const Complex64,
        lda: *const i32,
        ipiv: *const i32,
        b: *mut Complex64,
        ldb: *const i32,
        info: *mut i32,
    );
    fn zgecon_(
        norm: *const u8,
        n: *const i32,
        a: *const Complex64,
        lda: *const i32,
        anorm: *const f64,
        rcond: *mut f64,
        work: *mut Complex64,
        rwork: *mut f64,
        info: *mut i32,
    );
}

fn check(routine: &'static str, info: i32) -> Result<()> {
    if info == 0 {
        Ok(())
    } else {
        Err(Error::EigSolverFailure { routine, info })
    }
}

/// Full real SVD, A = U diag(s) Vt. Returns (U, s, Vt) with U m-by-m and
/// Vt n-by-n.
pub fn svd_real(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok((
            DMatrix::identity(m, m),
            DVector::zeros(0),
            DMatrix::identity(n, n),
        ));
    }
    let mut a = a.clone();
    let (mi, ni) = (m as i32, n as i32);
    let mut s = DVector::zeros(m.min(n));
    let mut u = DMatrix::zeros(m, m);
    let mut vt = DMatrix::zeros(n, n);
    let mut info = 0i32;
    let job = b'A';
    let mut query = [0.0f64];
    let lwork = -1i32;
    unsafe {
        dgesvd_(
            &job,
            &job,
            &mi,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &mi,
            s.as_mut_slice().as_mut_ptr(),
            u.as_mut_slice().as_mut_ptr(),
            &mi,
            vt.as_mut_slice().as_mut_ptr(),
            &ni,
            query.as_mut_ptr(),
            &lwork,
            &mut info,
        );
    }
    check("dgesvd", info)?;
    let lwork = query[0] as i32;
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        dgesvd_(
            &job,
            &job,
            &mi,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &mi,
            s.as_mut_slice().as_mut_ptr(),
            u.as_mut_slice().as_mut_ptr(),
            &mi,
            vt.as_mut_slice().as_mut_ptr(),
            &ni,
            work.as_mut_ptr(),
            &lwork,
            &mut info,
        );
    }
    check("dgesvd", info)?;
    Ok((u, s, vt))
}

/// Full complex SVD, A = U diag(s) Vh. Returns (U, s, Vh) with Vh the
/// conjugate transpose of V.
pub fn svd_complex(
    a: &DMatrix<Complex64>,
) -> Result<(DMatrix<Complex64>, DVector<f64>, DMatrix<Complex64>)> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok((
            DMatrix::identity(m, m),
            DVector::zeros(0),
            DMatrix::identity(n, n),
        ));
    }
    let mut a = a.clone();
    let (mi, ni) = (m as i32, n as i32);
    let mut s = DVector::zeros(m.min(n));
    let mut u = DMatrix::zeros(m, m);
    let mut vh = DMatrix::zeros(n, n);
    let mut rwork = vec![0.0f64; 5 * m.min(n)];
    let mut info = 0i32;
    let job = b'A';
    let mut query = [Complex64::new(0.0, 0.0)];
    let lwork = -1i32;
    unsafe {
        zgesvd_(
            &job,
            &job,
            &mi,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &mi,
            s.as_mut_slice().as_mut_ptr(),
            u.as_mut_slice().as_mut_ptr(),
            &mi,
            vh.as_mut_slice().as_mut_ptr(),
            &ni,
            query.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    check("zgesvd", info)?;
    let lwork = query[0].re as i32;
    let mut work = vec![Complex64::new(0.0, 0.0); lwork as usize];
    unsafe {
        zgesvd_(
            &job,
            &job,
            &mi,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &mi,
            s.as_mut_slice().as_mut_ptr(),
            u.as_mut_slice().as_mut_ptr(),
            &mi,
            vh.as_mut_slice().as_mut_ptr(),
            &ni,
            work.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    check("zgesvd", info)?;
    Ok((u, s, vh))
}

/// Largest singular value together with its left/right singular vectors.
pub fn sigma1(a: &DMatrix<Complex64>) -> Result<(f64, DVector<Complex64>, DVector<Complex64>)> {
    let (u, s, vh) = svd_complex(a)?;
    if s.is_empty() {
        return Ok((0.0, DVector::zeros(a.nrows()), DVector::zeros(a.ncols())));
    }
    let u1 = u.column(0).into_owned();
    let v1 = vh.row(0).map(|x| x.conj()).transpose();
    Ok((s[0], u1, v1))
}

/// All singular values (descending) together with the top singular pair,
/// so callers can both use sigma_1 and check its separation from sigma_2.
pub fn svd_top(
    a: &DMatrix<Complex64>,
) -> Result<(DVector<f64>, DVector<Complex64>, DVector<Complex64>)> {
    let (u, s, vh) = svd_complex(a)?;
    if s.is_empty() {
        return Ok((s, DVector::zeros(a.nrows()), DVector::zeros(a.ncols())));
    }
    let u1 = u.column(0).into_owned();
    let v1 = vh.row(0).map(|x| x.conj()).transpose();
    Ok((s, u1, v1))
}

/// All singular values, descending.
pub fn singular_values(a: &DMatrix<Complex64>) -> Result<DVector<f64>> {
    let (_, s, _) = svd_complex(a)?;
    Ok(s)
}

/// Finite eigenvalues of the real pencil (A, B) via QZ. Eigenvalues whose
/// beta vanishes (the pencil's infinite part, present whenever B is singular)
/// are dropped.
pub fn eig_pencil_real(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "pencil blocks must be square and equal-sized, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = a.clone();
    let mut b = b.clone();
    let ni = n as i32;
    let mut alphar = vec![0.0f64; n];
    let mut alphai = vec![0.0f64; n];
    let mut beta = vec![0.0f64; n];
    let jobn = b'N';
    let ldv = 1i32;
    let mut vdummy = [0.0f64];
    let mut info = 0i32;
    let mut query = [0.0f64];
    let lwork = -1i32;
    unsafe {
        dggev_(
            &jobn,
            &jobn,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &ni,
            b.as_mut_slice().as_mut_ptr(),
            &ni,
            alphar.as_mut_ptr(),
            alphai.as_mut_ptr(),
            beta.as_mut_ptr(),
            vdummy.as_mut_ptr(),
            &ldv,
            vdummy.as_mut_ptr(),
            &ldv,
            query.as_mut_ptr(),
            &lwork,
            &mut info,
        );
    }
    check("dggev", info)?;
    let lwork = query[0] as i32;
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        dggev_(
            &jobn,
            &jobn,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &ni,
            b.as_mut_slice().as_mut_ptr(),
            &ni,
            alphar.as_mut_ptr(),
            alphai.as_mut_ptr(),
            beta.as_mut_ptr(),
            vdummy.as_mut_ptr(),
            &ldv,
            vdummy.as_mut_ptr(),
            &ldv,
            work.as_mut_ptr(),
            &lwork,
            &mut info,
        );
    }
    check("dggev", info)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let al = Complex64::new(alphar[i], alphai[i]);
        // beta == 0 marks an eigenvalue at infinity; a denormal beta against
        // an O(1) alpha is the same thing up to roundoff.
        if beta[i].abs() > 1e-290 && (al.norm() / beta[i].abs()).is_finite() {
            out.push(al / beta[i]);
        }
    }
    Ok(out)
}

pub struct ComplexEig {
    pub values: Vec<Complex64>,
    /// Right eigenvectors as columns.
    pub right: Option<DMatrix<Complex64>>,
    /// Left eigenvectors as columns (y such that y^H A = lambda y^H).
    pub left: Option<DMatrix<Complex64>>,
}

/// Complex nonsymmetric eigendecomposition.
pub fn eig_complex(a: &DMatrix<Complex64>, vectors: bool) -> Result<ComplexEig> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if n == 0 {
        return Ok(ComplexEig {
            values: Vec::new(),
            right: vectors.then(|| DMatrix::zeros(0, 0)),
            left: vectors.then(|| DMatrix::zeros(0, 0)),
        });
    }
    let mut a = a.clone();
    let ni = n as i32;
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let job = if vectors { b'V' } else { b'N' };
    let mut vl = DMatrix::zeros(if vectors { n } else { 1 }, if vectors { n } else { 1 });
    let mut vr = vl.clone();
    let ldv = if vectors { ni } else { 1 };
    let mut rwork = vec![0.0f64; 2 * n];
    let mut info = 0i32;
    let mut query = [Complex64::new(0.0, 0.0)];
    let lwork = -1i32;
    unsafe {
        zgeev_(
            &job,
            &job,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &ni,
            w.as_mut_ptr(),
            vl.as_mut_slice().as_mut_ptr(),
            &ldv,
            vr.as_mut_slice().as_mut_ptr(),
            &ldv,
            query.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    check("zgeev", info)?;
    let lwork = query[0].re as i32;
    let mut work = vec![Complex64::new(0.0, 0.0); lwork as usize];
    unsafe {
        zgeev_(
            &job,
            &job,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &ni,
            w.as_mut_ptr(),
            vl.as_mut_slice().as_mut_ptr(),
            &ldv,
            vr.as_mut_slice().as_mut_ptr(),
            &ldv,
            work.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    check("zgeev", info)?;
    Ok(ComplexEig {
        values: w,
        right: vectors.then_some(vr),
        left: vectors.then_some(vl),
    })
}

/// LU factorization of a square complex matrix with a reciprocal condition
/// estimate, reused across solves with the same coefficient matrix.
pub struct ComplexLu {
    lu: DMatrix<Complex64>,
    ipiv: Vec<i32>,
    anorm1: f64,
    exactly_singular: bool,
}

impl ComplexLu {
    pub fn factor(m: DMatrix<Complex64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "LU needs a square matrix, got {:?}",
                m.shape()
            )));
        }
        let anorm1 = (0..n)
            .map(|j| m.column(j).iter().map(|x| x.norm()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let mut lu = m;
        let mut ipiv = vec![0i32; n.max(1)];
        let ni = n as i32;
        let mut info = 0i32;
        if n > 0 {
            unsafe {
                zgetrf_(
                    &ni,
                    &ni,
                    lu.as_mut_slice().as_mut_ptr(),
                    &ni,
                    ipiv.as_mut_ptr(),
                    &mut info,
                );
            }
        }
        if info < 0 {
            return Err(Error::EigSolverFailure {
                routine: "zgetrf",
                info,
            });
        }
        Ok(ComplexLu {
            lu,
            ipiv,
            anorm1,
            exactly_singular: info > 0,
        })
    }

    pub fn n(&self) -> usize {
        self.lu.nrows()
    }

    /// Reciprocal 1-norm condition number; 0 for an exactly singular factor.
    pub fn rcond(&self) -> Result<f64> {
        if self.exactly_singular {
            return Ok(0.0);
        }
        let n = self.n();
        if n == 0 {
            return Ok(1.0);
        }
        let ni = n as i32;
        let mut rcond = 0.0f64;
        let mut work = vec![Complex64::new(0.0, 0.0); 2 * n];
        let mut rwork = vec![0.0f64; 2 * n];
        let mut info = 0i32;
        let norm = b'1';
        unsafe {
            zgecon_(
                &norm,
                &ni,
                self.lu.as_slice().as_ptr(),
                &ni,
                &self.anorm1,
                &mut rcond,
                work.as_mut_ptr(),
                rwork.as_mut_ptr(),
                &mut info,
            );
        }
        check("zgecon", info)?;
        Ok(rcond)
    }

    fn solve_impl(&self, b: &DMatrix<Complex64>, trans: u8) -> Result<DMatrix<Complex64>> {
        let n = self.n();
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "solve rhs has {} rows, matrix is {}x{}",
                b.nrows(),
                n,
                n
            )));
        }
        let mut x = b.clone();
        if n == 0 || b.ncols() == 0 {
            return Ok(x);
        }
        let ni = n as i32;
        let nrhs = b.ncols() as i32;
        let mut info = 0i32;
        unsafe {
            zgetrs_(
                &trans,
                &ni,
                &nrhs,
                self.lu.as_slice().as_ptr(),
                &ni,
                self.ipiv.as_ptr(),
                x.as_mut_slice().as_mut_ptr(),
                &ni,
                &mut info,
            );
        }
        check("zgetrs", info)?;
        Ok(x)
    }

    /// Solves M X = B.
    pub fn solve(&self, b: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        self.solve_impl(b, b'N')
    }

    /// Solves M^T X = B (plain transpose, no conjugation), which yields rows
    /// of C M^{-1} from columns of C^T.
    pub fn solve_transpose(&self, b: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        self.solve_impl(b, b'T')
    }
}
