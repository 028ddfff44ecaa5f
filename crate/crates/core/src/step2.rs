//! Circulant phase retrieval: resolves the per-diagonal phases left open by
//! step 1 from the Hermitian PSD low-rank structure of the covariance.

use nalgebra::SVD;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MrfaError, Result};
use crate::linalg::{
    arg_2pi, cdot, cnorm, conjugate_gradient, correction_mask, eigh_desc, eigvals_desc,
    fourier_to_time, hermitize, shift_rows_cols, CMatrix, C64, ZERO,
};
use crate::signal_model::HermitianMatrix;

/// Relative gap at the `r^2` eigenvalue cutoff below which the spectrum of
/// `H_{i,i}` is reported as degenerate.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Largest rank with `r^2 < L`, used when the rank is not supplied.
pub fn default_rank(len: usize) -> usize {
    let mut r = 0;
    while (r + 1) * (r + 1) < len {
        r += 1;
    }
    r
}

/// Rejects ranks for which the phase system is under-determined.
pub fn check_rank(rank: usize, len: usize) -> Result<()> {
    if rank == 0 {
        return Err(MrfaError::Parameter("rank must be >= 1".into()));
    }
    if rank * rank >= len {
        return Err(MrfaError::Underdetermined { rank, len });
    }
    Ok(())
}

/// `H = x ⊙ conj(R_{i,j} x)`.
pub fn build_h(x: &CMatrix, i: usize, j: usize) -> CMatrix {
    let shifted = shift_rows_cols(x, i, j);
    x.zip_map(&shifted, |a, b| a * b.conj())
}

/// Columns of `V` sorted by decreasing |eigenvalue| of the Hermitian part of
/// `h`, truncated to `count`. Also reports whether the cutoff is a near tie.
fn leading_eigenvectors(h: &CMatrix, count: usize) -> (CMatrix, bool) {
    let (values, vectors) = eigh_desc(&hermitize(h));
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    let top = values[order[0]].abs();
    let tie = count < values.len()
        && (values[order[count - 1]].abs() - values[order[count]].abs()) <= TIE_TOLERANCE * top;
    let n = h.nrows();
    (CMatrix::from_fn(n, count, |r, c| vectors[(r, order[c])]), tie)
}

/// The operator `[M, -BlockDiag(Z^(0), ..., Z^(L-1))]` kept in factored form.
///
/// Row block `i` is indexed row-major by `(k, l)`. Column `m < L` carries
/// `H_{i,i+1}` restricted to the `m`-th circulant diagonal; the remaining
/// columns hold `vec(B^(i))` (row-major `r^2 x r^2`) for each `i`, and
/// `Z^(i) vec(B) = vec(V^(i) B V^(i+1)*)`.
#[derive(Clone, Debug)]
pub struct StructuredA {
    len: usize,
    rank: usize,
    h_next: Vec<CMatrix>,
    bases: Vec<CMatrix>,
    degenerate_spectrum: bool,
}

/// Builds the structured phase-retrieval operator from the working matrix.
pub fn assemble_structured_a(x: &CMatrix, rank: Option<usize>) -> Result<StructuredA> {
    let len = x.nrows();
    if len != x.ncols() || len < 2 {
        return Err(MrfaError::Shape("expected a square matrix with L >= 2".into()));
    }
    let rank = rank.unwrap_or_else(|| default_rank(len));
    check_rank(rank, len)?;
    let r2 = rank * rank;
    let spectral: Vec<(CMatrix, bool)> = (0..len)
        .into_par_iter()
        .map(|i| leading_eigenvectors(&build_h(x, i, i), r2))
        .collect();
    let degenerate_spectrum = spectral.iter().any(|(_, tie)| *tie);
    let bases = spectral.into_iter().map(|(v, _)| v).collect();
    let h_next = (0..len)
        .into_par_iter()
        .map(|i| build_h(x, i, (i + 1) % len))
        .collect();
    Ok(StructuredA {
        len,
        rank,
        h_next,
        bases,
        degenerate_spectrum,
    })
}

impl StructuredA {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn block_width(&self) -> usize {
        self.rank.pow(4)
    }

    /// `(rows, cols) = (L^3, L + r^4 L)`.
    pub fn shape(&self) -> (usize, usize) {
        let l = self.len;
        (l * l * l, l + self.block_width() * l)
    }

    pub fn degenerate_spectrum(&self) -> bool {
        self.degenerate_spectrum
    }

    pub fn basis(&self, i: usize) -> &CMatrix {
        &self.bases[i]
    }

    pub fn h_next(&self, i: usize) -> &CMatrix {
        &self.h_next[i]
    }

    /// Dense `Z^(i) = V^(i) ⊗ conj(V^(i+1))`, shape `L^2 x r^4`.
    pub fn z_block(&self, i: usize) -> CMatrix {
        let l = self.len;
        let r2 = self.rank * self.rank;
        let v = &self.bases[i];
        let w = &self.bases[(i + 1) % l];
        CMatrix::from_fn(l * l, r2 * r2, |row, col| {
            let (k, j) = (row / l, row % l);
            let (a, b) = (col / r2, col % r2);
            v[(k, a)] * w[(j, b)].conj()
        })
    }

    fn b_block(&self, beta: &[C64], i: usize) -> CMatrix {
        let r2 = self.rank * self.rank;
        let start = self.len + i * r2 * r2;
        CMatrix::from_row_slice(r2, r2, &beta[start..start + r2 * r2])
    }

    /// `out = A beta`.
    pub fn apply(&self, beta: &[C64], out: &mut [C64]) {
        let l = self.len;
        out.par_chunks_mut(l * l).enumerate().for_each(|(i, dst)| {
            let v = &self.bases[i];
            let w = &self.bases[(i + 1) % l];
            let low_rank = v * self.b_block(beta, i) * w.adjoint();
            let h = &self.h_next[i];
            for k in 0..l {
                for j in 0..l {
                    dst[k * l + j] = beta[(j + l - k) % l] * h[(k, j)] - low_rank[(k, j)];
                }
            }
        });
    }

    /// `out = A* y`.
    pub fn adjoint(&self, y: &[C64], out: &mut [C64]) {
        let l = self.len;
        let width = self.block_width();
        let parts: Vec<(Vec<C64>, CMatrix)> = (0..l)
            .into_par_iter()
            .map(|i| {
                let block = CMatrix::from_row_slice(l, l, &y[i * l * l..(i + 1) * l * l]);
                let h = &self.h_next[i];
                let mut head = vec![ZERO; l];
                for k in 0..l {
                    for j in 0..l {
                        head[(j + l - k) % l] += h[(k, j)].conj() * block[(k, j)];
                    }
                }
                let tail = -(self.bases[i].adjoint() * block * &self.bases[(i + 1) % l]);
                (head, tail)
            })
            .collect();
        out[..l].iter_mut().for_each(|v| *v = ZERO);
        for (i, (head, tail)) in parts.iter().enumerate() {
            for m in 0..l {
                out[m] += head[m];
            }
            let r2 = self.rank * self.rank;
            let dst = &mut out[l + i * width..l + (i + 1) * width];
            for a in 0..r2 {
                for b in 0..r2 {
                    dst[a * r2 + b] = tail[(a, b)];
                }
            }
        }
    }

    /// `||A beta||`.
    pub fn residual_norm(&self, beta: &[C64]) -> f64 {
        let mut out = vec![ZERO; self.shape().0];
        self.apply(beta, &mut out);
        cnorm(&out)
    }

    /// Fully materialized operator. Intended for small `L`.
    pub fn materialize(&self) -> CMatrix {
        let l = self.len;
        let (rows, cols) = self.shape();
        let width = self.block_width();
        let mut a = CMatrix::zeros(rows, cols);
        for i in 0..l {
            let h = &self.h_next[i];
            for k in 0..l {
                for j in 0..l {
                    a[(i * l * l + k * l + j, (j + l - k) % l)] = h[(k, j)];
                }
            }
            let z = self.z_block(i);
            for row in 0..l * l {
                for col in 0..width {
                    a[(i * l * l + row, l + i * width + col)] = -z[(row, col)];
                }
            }
        }
        a
    }

    /// Diagonal of the leading `L x L` block of `A* A`.
    fn head_diagonal(&self) -> Vec<f64> {
        let l = self.len;
        let mut d = vec![0.0; l];
        for h in &self.h_next {
            for k in 0..l {
                for m in 0..l {
                    d[m] += h[(k, (k + m) % l)].norm_sqr();
                }
            }
        }
        d
    }

    /// Coupling `C_i[(a, b), m] = (V^(i)* (H ⊙ Circ e_m) V^(i+1))[a, b]`,
    /// stacked over `i`; `A* A = [[D, -C*], [-C, I]]`.
    fn coupling(&self) -> CMatrix {
        let l = self.len;
        let r2 = self.rank * self.rank;
        let width = self.block_width();
        let blocks: Vec<CMatrix> = (0..l)
            .into_par_iter()
            .map(|i| {
                let v = &self.bases[i];
                let w = &self.bases[(i + 1) % l];
                let h = &self.h_next[i];
                let mut c = CMatrix::zeros(width, l);
                for m in 0..l {
                    for a in 0..r2 {
                        for b in 0..r2 {
                            let mut acc = ZERO;
                            for k in 0..l {
                                acc += v[(k, a)].conj() * w[((k + m) % l, b)] * h[(k, (k + m) % l)];
                            }
                            c[(a * r2 + b, m)] = acc;
                        }
                    }
                }
                c
            })
            .collect();
        let mut c = CMatrix::zeros(width * l, l);
        for (i, block) in blocks.iter().enumerate() {
            c.rows_mut(i * width, width).copy_from(block);
        }
        c
    }

    /// Frobenius norm squared, equal to `trace(A* A)`.
    fn trace_normal(&self) -> f64 {
        self.head_diagonal().iter().sum::<f64>() + (self.block_width() * self.len) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvMethod {
    DenseSvd,
    InversePowerCg,
}

impl std::str::FromStr for SvMethod {
    type Err = MrfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" | "dense_svd" | "dense-svd" => Ok(Self::DenseSvd),
            "cg" | "inverse_power_cg" | "inverse-power-cg" => Ok(Self::InversePowerCg),
            other => Err(MrfaError::Parameter(format!("unknown singular-vector method '{other}'"))),
        }
    }
}

/// Right singular vector of the smallest singular value and the two smallest
/// singular values.
#[derive(Clone, Debug)]
pub struct NullVector {
    pub vector: Vec<C64>,
    pub sv_min: f64,
    pub sv_second: f64,
    /// Largest singular value, known exactly on the dense path only.
    pub sv_max: Option<f64>,
    pub method: SvMethod,
}

/// Largest size (`L`) for which the dense path is allowed.
pub const DENSE_LIMIT: usize = 16;

pub fn smallest_right_singular_vector(a: &StructuredA, method: SvMethod) -> Result<NullVector> {
    match method {
        SvMethod::DenseSvd => dense_null_vector(a),
        SvMethod::InversePowerCg => match inverse_power_null_vector(a) {
            Ok(v) => Ok(v),
            Err(_) if a.len() <= DENSE_LIMIT => dense_null_vector(a),
            Err(err) => Err(err),
        },
    }
}

fn dense_null_vector(a: &StructuredA) -> Result<NullVector> {
    if a.len() > DENSE_LIMIT {
        return Err(MrfaError::Parameter(format!(
            "dense SVD is limited to L <= {DENSE_LIMIT}"
        )));
    }
    let svd = SVD::new(a.materialize(), false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| MrfaError::Convergence("SVD did not produce right vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
    let row = order[0];
    let vector = v_t.row(row).iter().map(|v| v.conj()).collect();
    Ok(NullVector {
        vector,
        sv_min: svd.singular_values[order[0]],
        sv_second: order
            .get(1)
            .map(|&i| svd.singular_values[i])
            .unwrap_or(f64::INFINITY),
        sv_max: order.last().map(|&i| svd.singular_values[i]),
        method: SvMethod::DenseSvd,
    })
}

/// Shifted solves `(A* A + eps I) x = rhs`, reduced to the leading `L x L`
/// Schur complement because the trailing block of `A* A` is the identity.
struct ShiftedSolver {
    len: usize,
    eps: f64,
    coupling: CMatrix,
    reduced: CMatrix,
    max_iter: usize,
}

impl ShiftedSolver {
    fn new(a: &StructuredA) -> Self {
        let (_, cols) = a.shape();
        let eps = 1e-10 * a.trace_normal() / cols as f64;
        let coupling = a.coupling();
        let mut reduced = -(coupling.adjoint() * &coupling) / C64::new(1.0 + eps, 0.0);
        for (m, d) in a.head_diagonal().into_iter().enumerate() {
            reduced[(m, m)] += C64::new(d + eps, 0.0);
        }
        let reduced = hermitize(&reduced);
        Self {
            len: a.len(),
            eps,
            coupling,
            reduced,
            max_iter: 10 * cols,
        }
    }

    fn solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        let l = self.len;
        let scale = C64::new(1.0 / (1.0 + self.eps), 0.0);
        let g = nalgebra::DVector::from_column_slice(&rhs[l..]);
        let mut reduced_rhs: Vec<C64> = (self.coupling.adjoint() * &g * scale).iter().copied().collect();
        for (m, v) in reduced_rhs.iter_mut().enumerate() {
            *v += rhs[m];
        }
        let mut x = vec![ZERO; l];
        let outcome = conjugate_gradient(
            |p, out| {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = (0..l).map(|c| self.reduced[(r, c)] * p[c]).sum();
                }
            },
            &reduced_rhs,
            &mut x,
            None,
            1e-12,
            self.max_iter,
        );
        if !outcome.converged {
            return Err(MrfaError::Convergence(format!(
                "CG stopped at relative residual {:.3e} after {} iterations",
                outcome.relative_residual, outcome.iterations
            )));
        }
        let xv = nalgebra::DVector::from_column_slice(&x);
        let tail = (&self.coupling * xv + g) * scale;
        x.extend(tail.iter().copied());
        Ok(x)
    }
}

fn normalize(v: &mut [C64]) -> f64 {
    let n = cnorm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn inverse_iteration(
    solver: &ShiftedSolver,
    start: Vec<C64>,
    deflate: Option<&[C64]>,
) -> Result<Vec<C64>> {
    let project = |v: &mut Vec<C64>| {
        if let Some(d) = deflate {
            let c = cdot(d, v);
            v.iter_mut().zip(d).for_each(|(x, y)| *x -= y * c);
        }
    };
    let mut current = start;
    project(&mut current);
    normalize(&mut current);
    for _ in 0..500 {
        let mut next = solver.solve(&current)?;
        project(&mut next);
        if normalize(&mut next) == 0.0 {
            return Err(MrfaError::Degenerate("inverse iteration collapsed".into()));
        }
        let align = cdot(&current, &next).norm();
        current = next;
        if align >= 1.0 - 1e-12 {
            break;
        }
    }
    Ok(current)
}

fn inverse_power_null_vector(a: &StructuredA) -> Result<NullVector> {
    let solver = ShiftedSolver::new(a);
    let n = a.shape().1;
    let start: Vec<C64> = (0..n)
        .map(|i| C64::new(1.0 + 0.5 * ((i * 7919) % 97) as f64 / 97.0, 0.25 * ((i * 104729) % 89) as f64 / 89.0))
        .collect();
    let first = inverse_iteration(&solver, start.clone(), None)?;
    let second = inverse_iteration(&solver, start, Some(&first))?;
    let sv_min = a.residual_norm(&first);
    let sv_second = a.residual_norm(&second);
    Ok(NullVector {
        vector: first,
        sv_min,
        sv_second,
        sv_max: None,
        method: SvMethod::InversePowerCg,
    })
}

/// Largest singular value of `A` by power iteration on `A* A`.
pub fn largest_singular_value(a: &StructuredA) -> f64 {
    let (rows, cols) = a.shape();
    let mut v: Vec<C64> = (0..cols).map(|i| C64::new(1.0, (i % 5) as f64 * 0.1)).collect();
    normalize(&mut v);
    let mut av = vec![ZERO; rows];
    let mut w = vec![ZERO; cols];
    let mut estimate = 0.0;
    for _ in 0..2000 {
        a.apply(&v, &mut av);
        a.adjoint(&av, &mut w);
        let next = cnorm(&w).sqrt();
        v.copy_from_slice(&w);
        normalize(&mut v);
        if (next - estimate).abs() <= 1e-12 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate
}

/// Correction angles `phi_1..phi_{L-1}` in `[0, 2 pi)` from the leading `L`
/// entries of the null vector (cumulative sum of consecutive phase
/// differences, with the global phase removed).
pub fn recover_angles(v: &[C64]) -> Result<Vec<f64>> {
    let l = v.len();
    if l == 0 {
        return Err(MrfaError::Shape("empty vector".into()));
    }
    let largest = v.iter().map(|x| x.norm()).fold(0.0f64, f64::max);
    if let Some(m) = v.iter().position(|x| !(x.norm() >= 1e-8 * largest) || largest == 0.0) {
        return Err(MrfaError::Degenerate(format!(
            "null-vector entry {m} is negligible; the phase difference is undetermined"
        )));
    }
    // arguments relative to v[0], so a global phase cancels exactly
    let args: Vec<f64> = v.iter().map(|&x| arg_2pi(x * v[0].conj())).collect();
    let mean_shift = args.iter().sum::<f64>() / l as f64;
    let tau = std::f64::consts::TAU;
    let mut partial = 0.0;
    let mut angles = Vec::with_capacity(l - 1);
    for (m, arg) in args.iter().enumerate().skip(1) {
        partial += arg;
        let phi = (-partial + m as f64 * mean_shift).rem_euclid(tau);
        angles.push(if phi >= tau { 0.0 } else { phi });
    }
    Ok(angles)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step2Config {
    pub method: SvMethod,
    /// Treat a small singular gap as a hard error instead of a warning.
    pub strict: bool,
}

impl Default for Step2Config {
    fn default() -> Self {
        Self {
            method: SvMethod::InversePowerCg,
            strict: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagnostics {
    pub rank: usize,
    pub sv_min: f64,
    pub sv_second: f64,
    pub sv_max: f64,
    /// `(max - min) / mean` of the leading `L` null-vector magnitudes.
    pub v_magnitude_spread: f64,
    pub psd_violation: f64,
    pub condition1_warning: bool,
    pub degenerate_spectrum: bool,
    pub method: SvMethod,
    pub alignment_error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PhaseSolution {
    pub angles: Vec<f64>,
    pub sigma_estimate_fourier: HermitianMatrix,
    pub sigma_estimate_time: HermitianMatrix,
    pub diagnostics: PhaseDiagnostics,
}

/// Runs the phase retrieval on `c_tilde`. When `sigma_truth` (time domain)
/// is given, the shift-aligned error is reported.
pub fn run_step2(
    c_tilde: &CMatrix,
    rank: Option<usize>,
    sigma_truth: Option<&HermitianMatrix>,
    config: &Step2Config,
) -> Result<PhaseSolution> {
    let l = c_tilde.nrows();
    let largest = c_tilde.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    if largest == 0.0 || c_tilde.iter().any(|v| v.norm() <= 1e-14 * largest) {
        return Err(MrfaError::Degenerate(
            "working matrix has vanishing entries; phases are not identifiable".into(),
        ));
    }
    let a = assemble_structured_a(c_tilde, rank)?;
    let null = smallest_right_singular_vector(&a, config.method)?;
    let sv_max = null.sv_max.unwrap_or_else(|| largest_singular_value(&a));
    let head = &null.vector[..l];
    let mags: Vec<f64> = head.iter().map(|v| v.norm()).collect();
    let mean = mags.iter().sum::<f64>() / l as f64;
    let spread = (mags.iter().copied().fold(f64::MIN, f64::max)
        - mags.iter().copied().fold(f64::MAX, f64::min))
        / mean;
    let condition1_warning = null.sv_second <= 10.0 * null.sv_min;
    if condition1_warning && config.strict {
        return Err(MrfaError::Precondition(format!(
            "singular gap too small (sv_min {:.3e}, sv_second {:.3e})",
            null.sv_min, null.sv_second
        )));
    }
    let angles = recover_angles(head)?;
    let fourier = hermitize(&c_tilde.component_mul(&correction_mask(&angles)));
    let time = hermitize(&fourier_to_time(&fourier));
    let eig = eigvals_desc(&fourier);
    let top = eig.first().copied().unwrap_or(0.0);
    let bottom = eig.last().copied().unwrap_or(0.0);
    let psd_violation = if top > 0.0 { (-bottom).max(0.0) / top } else { f64::INFINITY };
    let sigma_estimate_time = HermitianMatrix::from_parts(time, false, Some(a.rank()));
    let alignment_error = match sigma_truth {
        Some(truth) => Some(crate::analysis::alignment_error(&sigma_estimate_time, truth)?),
        None => None,
    };
    Ok(PhaseSolution {
        angles,
        sigma_estimate_fourier: HermitianMatrix::from_parts(fourier, false, Some(a.rank())),
        sigma_estimate_time,
        diagnostics: PhaseDiagnostics {
            rank: a.rank(),
            sv_min: null.sv_min,
            sv_second: null.sv_second,
            sv_max,
            v_magnitude_spread: spread,
            psd_violation,
            condition1_warning,
            degenerate_spectrum: a.degenerate_spectrum(),
            method: null.method,
            alignment_error,
        },
    })
}
