//! Dense complex linear-algebra helpers shared by the estimation stages.
//!
//! All index arithmetic on length-`L` objects is cyclic.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::{Fft, FftPlanner};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Reduces a signed index modulo `len`.
#[inline]
pub fn wrap(i: isize, len: usize) -> usize {
    i.rem_euclid(len as isize) as usize
}

/// `e^{i theta}`.
#[inline]
pub fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// Unitary DFT matrix, `F[l, k] = e^{-2 pi i k l / L} / sqrt(L)`.
pub fn dft_matrix(len: usize) -> CMatrix {
    let scale = 1.0 / (len as f64).sqrt();
    CMatrix::from_fn(len, len, |l, k| {
        let phase = -2.0 * std::f64::consts::PI * ((k * l) % len) as f64 / len as f64;
        cis(phase) * scale
    })
}

/// Unitary FFT of fixed length, applied in place.
#[derive(Clone)]
pub struct UnitaryDft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for UnitaryDft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitaryDft").field("len", &self.len).finish()
    }
}

impl UnitaryDft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            scale: 1.0 / (len as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `buf <- F buf`, processing consecutive rows of length `L`.
    pub fn forward(&self, buf: &mut [C64]) {
        self.forward.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }

    /// `buf <- F* buf`.
    pub fn inverse(&self, buf: &mut [C64]) {
        self.inverse.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// non-increasing order. Only the lower triangle is trusted; callers that
/// are unsure should hermitize first.
pub fn eigh_desc(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenvalues of a Hermitian matrix, non-increasing.
pub fn eigvals_desc(m: &CMatrix) -> Vec<f64> {
    let mut values: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// `(m + m*) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Euclidean projection of a Hermitian matrix onto the PSD cone. Eigenvalues
/// below `floor` are set to zero.
pub fn project_psd(m: &CMatrix, floor: f64) -> CMatrix {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return m.clone();
    }
    let mut out = CMatrix::zeros(n, n);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < floor {
            continue;
        }
        let u = eig.eigenvectors.column(idx);
        out.gerc(C64::new(lambda, 0.0), &u, &u, ONE);
    }
    out
}

/// `Circulant{z}[k1, k2] = z[(k2 - k1) mod L]`.
pub fn circulant(z: &[C64]) -> CMatrix {
    let n = z.len();
    CMatrix::from_fn(n, n, |k1, k2| z[(k2 + n - k1) % n])
}

/// Circulant phase mask `Circulant{[1, e^{-i a_1}, ..., e^{-i a_{L-1}}]}` built
/// from correction angles `a_1..a_{L-1}`.
pub fn correction_mask(angles: &[f64]) -> CMatrix {
    let mut z = Vec::with_capacity(angles.len() + 1);
    z.push(ONE);
    z.extend(angles.iter().map(|&a| cis(-a)));
    circulant(&z)
}

/// Cyclic shift of rows by `i` and columns by `j`:
/// `out[k, m] = x[k - i, m - j]`.
pub fn shift_rows_cols(x: &CMatrix, i: usize, j: usize) -> CMatrix {
    let n = x.nrows();
    CMatrix::from_fn(n, n, |k, m| x[((k + n - i % n) % n, (m + n - j % n) % n)])
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum()
}

/// `F m F*`.
pub fn time_to_fourier(m: &CMatrix) -> CMatrix {
    let f = dft_matrix(m.nrows());
    &f * m * f.adjoint()
}

/// `F* m F`.
pub fn fourier_to_time(m: &CMatrix) -> CMatrix {
    let f = dft_matrix(m.nrows());
    f.adjoint() * m * &f
}

/// Principal argument mapped into `[0, 2 pi)`.
pub fn arg_2pi(z: C64) -> f64 {
    let a = z.arg();
    let tau = std::f64::consts::TAU;
    let wrapped = if a < 0.0 { a + tau } else { a };
    if wrapped >= tau {
        0.0
    } else {
        wrapped
    }
}

/// Dot product `<a, b> = sum conj(a_i) b_i` over slices.
pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn cnorm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Result of a conjugate-gradient solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients for a Hermitian positive definite
/// operator. `x` holds the initial guess and receives the solution.
pub fn conjugate_gradient<F>(
    mut op: F,
    rhs: &[C64],
    x: &mut [C64],
    precond: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> CgOutcome
where
    F: FnMut(&[C64], &mut [C64]),
{
    let n = rhs.len();
    let rhs_norm = cnorm(rhs);
    if rhs_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = ZERO);
        return CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let apply_precond = |r: &[C64], z: &mut [C64]| match precond {
        Some(d) => z.iter_mut().zip(r).zip(d).for_each(|((z, r), d)| *z = r / *d),
        None => z.copy_from_slice(r),
    };
    let mut ax = vec![ZERO; n];
    op(x, &mut ax);
    let mut r: Vec<C64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![ZERO; n];
    apply_precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = cdot(&r, &z).re;
    let mut ap = vec![ZERO; n];
    let mut rel = cnorm(&r) / rhs_norm;
    let mut iterations = 0;
    while rel > tol && iterations < max_iter {
        op(&p, &mut ap);
        let pap = cdot(&p, &ap).re;
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        iterations += 1;
        rel = cnorm(&r) / rhs_norm;
        if rel <= tol {
            break;
        }
        apply_precond(&r, &mut z);
        let rz_next = cdot(&r, &z).re;
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + p[i] * beta;
        }
    }
    CgOutcome {
        iterations,
        relative_residual: rel,
        converged: rel <= tol,
    }
}
