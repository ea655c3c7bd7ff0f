//! Dense Hermitian/symmetric eigensolves through LAPACK (system OpenBLAS),
//! plus the small matrix containers the rest of the crate shares.
//!
//! Matrices are stored column-major so they can be handed to LAPACK without
//! copies. For Hermitian/symmetric input the distinction only matters for the
//! eigenvectors, which we always read back in the same convention.

use num_complex::Complex64;

use crate::error::{Error, Result};

extern "C" {
    fn dsyevd_(
        jobz: *const u8,
        uplo: *const u8,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        w: *mut f64,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );
    fn zheevd_(
        jobz: *const u8,
        uplo: *const u8,
        n: *const i32,
        a: *mut Complex64,
        lda: *const i32,
        w: *mut f64,
        work: *mut Complex64,
        lwork: *const i32,
        rwork: *mut f64,
        lrwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );
    fn zgesv_(
        n: *const i32,
        nrhs: *const i32,
        a: *mut Complex64,
        lda: *const i32,
        ipiv: *mut i32,
        b: *mut Complex64,
        ldb: *const i32,
        info: *mut i32,
    );
}

/// Solve A X = B in place (B overwritten with X, column-major, nrhs columns).
/// A is consumed (overwritten by its LU factors).
pub fn solve_complex(mut a: ComplexMat, b: &mut [Complex64], nrhs: usize) -> Result<()> {
    let n = a.n as i32;
    assert_eq!(b.len(), a.n * nrhs);
    let mut ipiv = vec![0i32; a.n];
    let mut info = 0i32;
    unsafe {
        zgesv_(
            &n,
            &(nrhs as i32),
            a.data.as_mut_ptr(),
            &n,
            ipiv.as_mut_ptr(),
            b.as_mut_ptr(),
            &n,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Guard(format!("zgesv failed with info {info}")));
    }
    Ok(())
}

/// Column-major real matrix.
#[derive(Debug, Clone)]
pub struct RealMat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl RealMat {
    pub fn zeros(n: usize) -> Self {
        RealMat { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i + j * self.n]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + j * self.n] = v;
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.n {
            for i in 0..j {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let xj = x[j];
            let col = &self.data[j * n..(j + 1) * n];
            for i in 0..n {
                y[i] += col[i] * xj;
            }
        }
    }
}

/// Column-major complex matrix.
#[derive(Debug, Clone)]
pub struct ComplexMat {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl ComplexMat {
    pub fn zeros(n: usize) -> Self {
        ComplexMat { n, data: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i + j * self.n]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i + j * self.n] = v;
    }

    pub fn max_nonhermiticity(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.n {
            for i in 0..=j {
                worst = worst.max((self.at(i, j) - self.at(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn max_imag(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, z| m.max(z.im.abs()))
    }

    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        let n = self.n;
        y.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for j in 0..n {
            let xj = x[j];
            let col = &self.data[j * n..(j + 1) * n];
            for i in 0..n {
                y[i] += col[i] * xj;
            }
        }
    }
}

/// Eigendecomposition of a real symmetric matrix: ascending eigenvalues, and
/// eigenvectors as columns of `vectors` when requested.
#[derive(Debug, Clone)]
pub struct RealEig {
    pub n: usize,
    pub values: Vec<f64>,
    pub vectors: Option<Vec<f64>>,
}

impl RealEig {
    /// y = U^T x with U the eigenvector matrix.
    pub fn project(&self, x: &[f64], y: &mut [f64]) {
        let u = self.vectors.as_ref().expect("eigenvectors not computed");
        let n = self.n;
        for (j, yj) in y.iter_mut().enumerate() {
            let col = &u[j * n..(j + 1) * n];
            *yj = col.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// y = U x.
    pub fn synthesize(&self, x: &[f64], y: &mut [f64]) {
        let u = self.vectors.as_ref().expect("eigenvectors not computed");
        let n = self.n;
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let xj = x[j];
            let col = &u[j * n..(j + 1) * n];
            for i in 0..n {
                y[i] += col[i] * xj;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComplexEig {
    pub n: usize,
    pub values: Vec<f64>,
    pub vectors: Option<Vec<Complex64>>,
}

/// Eigendecomposition of a real symmetric matrix (consumes the matrix buffer).
pub fn eigh_real(mut a: RealMat, want_vectors: bool) -> Result<RealEig> {
    let n = a.n;
    let nn = n as i32;
    let mut w = vec![0.0f64; n];
    let mut info = 0i32;
    let jobz = if want_vectors { b"V" } else { b"N" };
    let (lwork, liwork) = if want_vectors {
        (1 + 6 * n + 2 * n * n, 3 + 5 * n)
    } else {
        (2 * n + 1, 1)
    };
    let mut work = vec![0.0f64; lwork.max(1)];
    let mut iwork = vec![0i32; liwork.max(1)];
    unsafe {
        dsyevd_(
            jobz.as_ptr(),
            b"L".as_ptr(),
            &nn,
            a.data.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &(lwork as i32),
            iwork.as_mut_ptr(),
            &(liwork as i32),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Guard(format!("dsyevd did not converge (info={info})")));
    }
    Ok(RealEig { n, values: w, vectors: want_vectors.then_some(a.data) })
}

/// Eigendecomposition of a complex Hermitian matrix.
pub fn eigh_complex(mut a: ComplexMat, want_vectors: bool) -> Result<ComplexEig> {
    let n = a.n;
    let nn = n as i32;
    let mut w = vec![0.0f64; n];
    let mut info = 0i32;
    let jobz = if want_vectors { b"V" } else { b"N" };
    let (lwork, lrwork, liwork) = if want_vectors {
        (2 * n + n * n, 1 + 5 * n + 2 * n * n, 3 + 5 * n)
    } else {
        (n + 1, n.max(1), 1)
    };
    let mut work = vec![Complex64::new(0.0, 0.0); lwork.max(1)];
    let mut rwork = vec![0.0f64; lrwork.max(1)];
    let mut iwork = vec![0i32; liwork.max(1)];
    unsafe {
        zheevd_(
            jobz.as_ptr(),
            b"L".as_ptr(),
            &nn,
            a.data.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &(lwork as i32),
            rwork.as_mut_ptr(),
            &(lrwork as i32),
            iwork.as_mut_ptr(),
            &(liwork as i32),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Guard(format!("zheevd did not converge (info={info})")));
    }
    Ok(ComplexEig { n, values: w, vectors: want_vectors.then_some(a.data) })
}
