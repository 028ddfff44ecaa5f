//! Recovery of the Fourier-domain covariance up to one unknown phase per
//! circulant diagonal.
//!
//! The trispectrum is fitted by PSD matrices `G_m` (the would-be outer
//! products `d_m d_m*` of the diagonals), each `G_m` is reduced to its best
//! rank-one factor, and the factors are laid back onto their diagonals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MrfaError, Result};
use crate::linalg::{
    cdot, cnorm, conjugate_gradient, eigh_desc, hermitize, project_psd, CMatrix, C64, ZERO,
};
use crate::moments::{estimate_moments, MomentEstimates};
use crate::signal_model::{to_fourier, Domain, Field, HermitianMatrix, ObservationBatch};

const NO_TERM: u32 = u32::MAX;

/// d~_m with squared norm below this fraction of the largest one are
/// reported as weak.
const WEAK_DIAGONAL_RATIO: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step1Solver {
    Admm,
    ProjectedGradient,
}

impl std::str::FromStr for Step1Solver {
    type Err = MrfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "admm" => Ok(Self::Admm),
            "pg" | "projected_gradient" | "projected-gradient" => Ok(Self::ProjectedGradient),
            other => Err(MrfaError::Parameter(format!("unknown step-1 solver '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step1Config {
    pub solver: Step1Solver,
    pub max_iters: usize,
    /// Relative stopping tolerance on primal/dual residuals (ADMM) or on the
    /// iterate change (projected gradient).
    pub tol_residual: f64,
    /// Eigenvalues below this are clipped to zero by the PSD projection.
    pub tol_psd: f64,
    /// Initial ADMM penalty; adapted by residual balancing.
    pub penalty_rho: f64,
    pub field: Field,
}

impl Step1Config {
    pub fn new(field: Field) -> Self {
        Self {
            solver: Step1Solver::Admm,
            max_iters: 5000,
            tol_residual: 1e-10,
            tol_psd: 1e-12,
            penalty_rho: 1.0,
            field,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(MrfaError::Parameter("max_iters must be >= 1".into()));
        }
        if !(self.tol_residual > 0.0) || !(self.tol_psd > 0.0) || !(self.penalty_rho > 0.0) {
            return Err(MrfaError::Parameter(
                "tolerances and penalty must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step1Diagnostics {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Second over first eigenvalue of each fitted `G_m`, `m = 1..L-1`.
    pub rank_one_gaps: Vec<f64>,
    /// Diagonals whose recovered norm is negligible; the phase of such a
    /// diagonal carries no information.
    pub weak_diagonals: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Step1Output {
    pub c_tilde: CMatrix,
    pub g_matrices: Vec<HermitianMatrix>,
    pub power: Vec<f64>,
    pub diagnostics: Step1Diagnostics,
}

/// Fitted `G_1..G_{L-1}` and the attained objective.
#[derive(Clone, Debug)]
pub struct GFit {
    pub g_matrices: Vec<HermitianMatrix>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Linear map from the stacked `G_1..G_{L-1}` to the predicted trispectrum,
/// with the pinned `G_0 = P P^T` folded into the target.
///
/// Variable `(m, a, b)` (entry `G_m[a, b]`, `m >= 1`) lives at
/// `((m - 1) L + a) L + b`. Equation `(k1, m, k2)` matches the trispectrum
/// slot `T[k1, k1 + m, k2 + m]` and sums `G_m[k1, k2]`,
/// `G_{k2-k1}[k1, k1 + m]` and, for real signals,
/// `G_{k1+k2+m}[-k2, -k2 - m]`.
#[derive(Clone, Debug)]
pub struct TrispectrumFit {
    len: usize,
    terms: Vec<[u32; 3]>,
    target: Vec<C64>,
    diag: Vec<f64>,
}

impl TrispectrumFit {
    pub fn new(moments: &MomentEstimates, field: Field) -> Self {
        let l = moments.len;
        let power = &moments.power;
        let mut terms = Vec::with_capacity(l * l * l);
        let mut target = Vec::with_capacity(l * l * l);
        for k1 in 0..l {
            for m in 0..l {
                for k2 in 0..l {
                    let mut slots = [
                        (m, k1, k2),
                        ((k2 + l - k1) % l, k1, (k1 + m) % l),
                        ((k1 + k2 + m) % l, (l - k2) % l, (2 * l - k2 - m) % l),
                    ];
                    let used = match field {
                        Field::Complex => 2,
                        Field::Real => 3,
                    };
                    let mut constant = ZERO;
                    let mut ids = [NO_TERM; 3];
                    for (t, slot) in slots.iter_mut().take(used).enumerate() {
                        let (mm, a, b) = *slot;
                        if mm == 0 {
                            constant += C64::new(power[a] * power[b], 0.0);
                        } else {
                            ids[t] = (((mm - 1) * l + a) * l + b) as u32;
                        }
                    }
                    terms.push(ids);
                    target.push(moments.trispectrum.get(k1, m, k2) - constant);
                }
            }
        }
        let n_vars = (l - 1) * l * l;
        let mut diag = vec![0.0; n_vars];
        for ids in &terms {
            let present: Vec<u32> = ids.iter().copied().filter(|&i| i != NO_TERM).collect();
            for (pos, &i) in present.iter().enumerate() {
                if present[..pos].contains(&i) {
                    continue;
                }
                let mult = present.iter().filter(|&&j| j == i).count() as f64;
                diag[i as usize] += mult * mult;
            }
        }
        Self {
            len: l,
            terms,
            target,
            diag,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_vars(&self) -> usize {
        self.diag.len()
    }

    pub fn n_equations(&self) -> usize {
        self.terms.len()
    }

    pub fn apply(&self, x: &[C64], out: &mut [C64]) {
        for (o, ids) in out.iter_mut().zip(&self.terms) {
            let mut acc = ZERO;
            for &i in ids {
                if i != NO_TERM {
                    acc += x[i as usize];
                }
            }
            *o = acc;
        }
    }

    pub fn adjoint(&self, r: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = ZERO);
        for (rv, ids) in r.iter().zip(&self.terms) {
            for &i in ids {
                if i != NO_TERM {
                    out[i as usize] += rv;
                }
            }
        }
    }

    /// `||A x - target||^2`.
    pub fn objective(&self, x: &[C64]) -> f64 {
        let mut pred = vec![ZERO; self.terms.len()];
        self.apply(x, &mut pred);
        pred.iter()
            .zip(&self.target)
            .map(|(p, t)| (p - t).norm_sqr())
            .sum()
    }

    /// Dense normal matrix `A* A` (for small `L` diagnostics only).
    pub fn normal_matrix(&self) -> CMatrix {
        let n = self.n_vars();
        let mut out = CMatrix::zeros(n, n);
        let mut e = vec![ZERO; n];
        let mut ae = vec![ZERO; self.terms.len()];
        let mut col = vec![ZERO; n];
        for j in 0..n {
            e[j] = C64::new(1.0, 0.0);
            self.apply(&e, &mut ae);
            self.adjoint(&ae, &mut col);
            for i in 0..n {
                out[(i, j)] = col[i];
            }
            e[j] = ZERO;
        }
        out
    }

    fn gradient_rhs(&self) -> Vec<C64> {
        let mut out = vec![ZERO; self.n_vars()];
        self.adjoint(&self.target, &mut out);
        out
    }

    /// Block `m` (1-based diagonal index) of a stacked variable vector.
    fn block(&self, x: &[C64], m: usize) -> CMatrix {
        let l = self.len;
        let start = (m - 1) * l * l;
        CMatrix::from_row_slice(l, l, &x[start..start + l * l])
    }

    /// Projects each block onto the Hermitian PSD cone.
    fn project(&self, v: &[C64], floor: f64, out: &mut [C64]) {
        let l = self.len;
        out.par_chunks_mut(l * l).enumerate().for_each(|(idx, dst)| {
            let block = self.block(v, idx + 1);
            let p = project_psd(&hermitize(&block), floor);
            for a in 0..l {
                for b in 0..l {
                    dst[a * l + b] = p[(a, b)];
                }
            }
        });
    }
}

/// Solves the PSD-constrained least-squares fit of the trispectrum.
pub fn solve_g_matrices(moments: &MomentEstimates, config: &Step1Config) -> Result<GFit> {
    config.validate()?;
    if moments.len < 2 {
        return Err(MrfaError::Parameter("need L >= 2".into()));
    }
    let fit = TrispectrumFit::new(moments, config.field);
    let (x, iterations, converged) = match config.solver {
        Step1Solver::Admm => admm(&fit, config),
        Step1Solver::ProjectedGradient => projected_gradient(&fit, config),
    };
    let objective = fit.objective(&x);
    let g_matrices = (1..moments.len)
        .map(|m| HermitianMatrix::from_parts(fit.block(&x, m), true, None))
        .collect();
    Ok(GFit {
        g_matrices,
        objective,
        iterations,
        converged,
    })
}

fn admm(fit: &TrispectrumFit, config: &Step1Config) -> (Vec<C64>, usize, bool) {
    let n = fit.n_vars();
    let rhs0: Vec<C64> = fit.gradient_rhs().into_iter().map(|v| v * 2.0).collect();
    let mut x = vec![ZERO; n];
    let mut z = vec![ZERO; n];
    let mut z_prev = vec![ZERO; n];
    let mut u = vec![ZERO; n];
    let mut v = vec![ZERO; n];
    let mut rhs = vec![ZERO; n];
    let mut rho = config.penalty_rho;
    let mut best = (f64::INFINITY, z.clone());
    let mut scratch = vec![ZERO; fit.n_equations()];
    let mut precond: Vec<f64> = fit.diag.iter().map(|d| 2.0 * d + rho).collect();

    for it in 1..=config.max_iters {
        for i in 0..n {
            rhs[i] = rhs0[i] + (z[i] - u[i]) * rho;
        }
        conjugate_gradient(
            |p, out| {
                fit.apply(p, &mut scratch);
                fit.adjoint(&scratch, out);
                for (o, pv) in out.iter_mut().zip(p) {
                    *o = *o * 2.0 + pv * rho;
                }
            },
            &rhs,
            &mut x,
            Some(&precond),
            1e-13,
            200,
        );

        std::mem::swap(&mut z, &mut z_prev);
        for i in 0..n {
            v[i] = x[i] + u[i];
        }
        fit.project(&v, config.tol_psd, &mut z);
        for i in 0..n {
            u[i] += x[i] - z[i];
        }

        let primal: f64 = x.iter().zip(&z).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let dual = rho
            * z.iter()
                .zip(&z_prev)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
        let obj = fit.objective(&z);
        if obj < best.0 {
            best.0 = obj;
            best.1.copy_from_slice(&z);
        }
        let scale = cnorm(&x).max(cnorm(&z)).max(f64::MIN_POSITIVE);
        let dual_scale = (rho * cnorm(&u)).max(f64::MIN_POSITIVE);
        if primal <= config.tol_residual * scale && dual <= config.tol_residual * dual_scale.max(scale) {
            return (z, it, true);
        }
        if it % 10 == 0 {
            let factor = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                u.iter_mut().for_each(|ui| *ui /= factor);
                precond = fit.diag.iter().map(|d| 2.0 * d + rho).collect();
            }
        }
    }
    (best.1, config.max_iters, false)
}

fn projected_gradient(fit: &TrispectrumFit, config: &Step1Config) -> (Vec<C64>, usize, bool) {
    let n = fit.n_vars();
    let mut scratch = vec![ZERO; fit.n_equations()];
    let mut grad = vec![ZERO; n];

    // Lipschitz constant of the gradient, 2 * lambda_max(A* A).
    let mut w: Vec<C64> = (0..n).map(|i| C64::new(1.0 + (i % 7) as f64 * 0.1, 0.0)).collect();
    let mut lambda = 1.0;
    for _ in 0..50 {
        fit.apply(&w, &mut scratch);
        fit.adjoint(&scratch, &mut grad);
        let norm = cnorm(&grad);
        lambda = norm / cnorm(&w);
        w.iter_mut().zip(&grad).for_each(|(a, g)| *a = g / norm);
    }
    let step = 1.0 / (2.0 * lambda * 1.01);

    let mut x = vec![ZERO; n];
    let mut x_prev = vec![ZERO; n];
    let mut y = vec![ZERO; n];
    let mut t = 1.0f64;
    let mut trial = vec![ZERO; n];
    for it in 1..=config.max_iters {
        fit.apply(&y, &mut scratch);
        scratch.iter_mut().zip(&fit.target).for_each(|(p, tv)| *p -= tv);
        fit.adjoint(&scratch, &mut grad);
        for i in 0..n {
            trial[i] = y[i] - grad[i] * (2.0 * step);
        }
        std::mem::swap(&mut x, &mut x_prev);
        fit.project(&trial, config.tol_psd, &mut x);
        let change: f64 = x.iter().zip(&x_prev).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        if change <= config.tol_residual * cnorm(&x).max(f64::MIN_POSITIVE) {
            return (x, it, true);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        // Restart momentum when it points uphill.
        let uphill = cdot(&grad, &x.iter().zip(&x_prev).map(|(a, b)| a - b).collect::<Vec<_>>()).re > 0.0;
        if uphill {
            t = 1.0;
            y.copy_from_slice(&x);
        } else {
            for i in 0..n {
                y[i] = x[i] + (x[i] - x_prev[i]) * momentum;
            }
            t = t_next;
        }
    }
    (x, config.max_iters, false)
}

/// Leading eigenpair scaled as `sqrt(mu_1) u_1`, rotated so that entry 0 is
/// nonnegative real.
pub fn rank_one_diagonal(g: &HermitianMatrix) -> Result<Vec<C64>> {
    let (values, vectors) = eigh_desc(g.matrix());
    let mu = values.first().copied().unwrap_or(0.0);
    if mu < 0.0 {
        return Err(MrfaError::Degenerate(format!(
            "leading eigenvalue {mu:.3e} is negative"
        )));
    }
    let scale = mu.sqrt();
    let mut d: Vec<C64> = vectors.column(0).iter().map(|v| v * scale).collect();
    if let Some(first) = d.first().copied() {
        if first.norm() > 0.0 {
            let rot = first.conj() / first.norm();
            d.iter_mut().for_each(|v| *v *= rot);
            d[0] = C64::new(d[0].norm(), 0.0);
        }
    }
    Ok(d)
}

/// Lays the diagonals back out: `C[k, k] = P[k] - sigma2`,
/// `C[k, k + m] = d_m[k]`.
pub fn assemble_c_tilde(power: &[f64], diagonals: &[Vec<C64>], sigma2: f64) -> CMatrix {
    let l = power.len();
    let mut c = CMatrix::zeros(l, l);
    for k in 0..l {
        c[(k, k)] = C64::new(power[k] - sigma2, 0.0);
    }
    for (idx, d) in diagonals.iter().enumerate() {
        let m = idx + 1;
        for k in 0..l {
            c[(k, (k + m) % l)] = d[k];
        }
    }
    c
}

/// Step 1 from already computed moments.
pub fn run_step1_from_moments(
    moments: &MomentEstimates,
    sigma2: f64,
    config: &Step1Config,
) -> Result<Step1Output> {
    if !(sigma2 >= 0.0) {
        return Err(MrfaError::Parameter(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    let fit = solve_g_matrices(moments, config)?;
    let mut diagonals = Vec::with_capacity(fit.g_matrices.len());
    let mut gaps = Vec::with_capacity(fit.g_matrices.len());
    for g in &fit.g_matrices {
        diagonals.push(rank_one_diagonal(g)?);
        let eig = g.eigenvalues();
        let top = eig.first().copied().unwrap_or(0.0);
        let second = eig.get(1).copied().unwrap_or(0.0).max(0.0);
        gaps.push(if top > 0.0 { second / top } else { 0.0 });
    }
    let norms: Vec<f64> = diagonals.iter().map(|d| cnorm(d).powi(2)).collect();
    let largest = norms.iter().copied().fold(0.0f64, f64::max);
    let weak_diagonals = norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n <= WEAK_DIAGONAL_RATIO * largest)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(Step1Output {
        c_tilde: assemble_c_tilde(&moments.power, &diagonals, sigma2),
        g_matrices: fit.g_matrices,
        power: moments.power.clone(),
        diagnostics: Step1Diagnostics {
            objective: fit.objective,
            iterations: fit.iterations,
            converged: fit.converged,
            rank_one_gaps: gaps,
            weak_diagonals,
        },
    })
}

/// Moments from observations followed by [`run_step1_from_moments`].
pub fn run_step1(batch: &ObservationBatch, sigma2: f64, config: &Step1Config) -> Result<Step1Output> {
    if batch.field() != config.field {
        return Err(MrfaError::Parameter(format!(
            "batch field {} does not match configured field {}",
            batch.field(),
            config.field
        )));
    }
    let fourier;
    let batch = match batch.domain() {
        Domain::Fourier => batch,
        Domain::Time => {
            fourier = to_fourier(batch)?;
            &fourier
        }
    };
    let moments = estimate_moments(batch)?;
    run_step1_from_moments(&moments, sigma2, config)
}
