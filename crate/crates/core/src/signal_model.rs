//! Generative factor model under random cyclic shifts, observation sampling,
//! and DFT transport between the time and Fourier domains.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MrfaError, Result};
use crate::linalg::{
    dft_matrix, eigvals_desc, hermitian_defect, hermitize, CMatrix, UnitaryDft, C64, ONE, ZERO,
};

/// Rows generated per independently seeded RNG stream.
pub const SAMPLE_BLOCK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

impl Field {
    pub fn code(self) -> u8 {
        match self {
            Field::Real => 0,
            Field::Complex => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Field::Real),
            1 => Ok(Field::Complex),
            other => Err(MrfaError::Format(format!("unknown field code {other}"))),
        }
    }
}

impl std::str::FromStr for Field {
    type Err = MrfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "real" => Ok(Field::Real),
            "complex" => Ok(Field::Complex),
            other => Err(MrfaError::Parameter(format!("unknown field '{other}'"))),
        }
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Field::Real => "real",
            Field::Complex => "complex",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Time,
    Fourier,
}

impl Domain {
    pub fn code(self) -> u8 {
        match self {
            Domain::Time => 0,
            Domain::Fourier => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Domain::Time),
            1 => Ok(Domain::Fourier),
            other => Err(MrfaError::Format(format!("unknown domain code {other}"))),
        }
    }
}

/// Ground-truth parameters of `y = R_s{sum_i a_i v_i} + noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    eigenvalues: Vec<f64>,
    factors: CMatrix,
    sigma2: f64,
    field: Field,
    shift_dist: Vec<f64>,
    seed: Option<u64>,
}

impl FactorModel {
    /// Validates and assembles a model. `factors` is `L x r` with orthonormal
    /// columns; `eigenvalues` must be non-increasing and nonnegative.
    pub fn new(
        eigenvalues: Vec<f64>,
        factors: CMatrix,
        sigma2: f64,
        field: Field,
        shift_dist: Vec<f64>,
    ) -> Result<Self> {
        let len = factors.nrows();
        let rank = factors.ncols();
        if len == 0 || rank == 0 || rank > len {
            return Err(MrfaError::Parameter(format!(
                "need 1 <= r <= L, got L = {len}, r = {rank}"
            )));
        }
        if eigenvalues.len() != rank {
            return Err(MrfaError::Parameter(format!(
                "{} eigenvalues for {} factors",
                eigenvalues.len(),
                rank
            )));
        }
        if eigenvalues.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(MrfaError::Parameter("eigenvalues must be finite and >= 0".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(MrfaError::Parameter("eigenvalues must be non-increasing".into()));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(MrfaError::Parameter(format!("sigma2 must be >= 0, got {sigma2}")));
        }
        let gram = factors.adjoint() * &factors;
        let gram_err = (gram - CMatrix::identity(rank, rank)).camax();
        if gram_err > 1e-12 {
            return Err(MrfaError::Parameter(format!(
                "factor columns are not orthonormal (Gram deviation {gram_err:.3e})"
            )));
        }
        if field == Field::Real && factors.iter().any(|v| v.im != 0.0) {
            return Err(MrfaError::Parameter("real field requires real factors".into()));
        }
        if shift_dist.len() != len {
            return Err(MrfaError::Parameter(format!(
                "shift distribution has {} entries, expected {len}",
                shift_dist.len()
            )));
        }
        let total: f64 = shift_dist.iter().sum();
        if shift_dist.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(MrfaError::Parameter(
                "shift distribution must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(Self {
            eigenvalues,
            factors,
            sigma2,
            field,
            shift_dist,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_shift_dist(self, shift_dist: Vec<f64>) -> Result<Self> {
        let seed = self.seed;
        let model = Self::new(self.eigenvalues, self.factors, self.sigma2, self.field, shift_dist)?;
        Ok(Self { seed, ..model })
    }

    pub fn with_sigma2(self, sigma2: f64) -> Result<Self> {
        let seed = self.seed;
        let model = Self::new(self.eigenvalues, self.factors, sigma2, self.field, self.shift_dist)?;
        Ok(Self { seed, ..model })
    }

    pub fn len(&self) -> usize {
        self.factors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> usize {
        self.factors.ncols()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn factors(&self) -> &CMatrix {
        &self.factors
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn shift_dist(&self) -> &[f64] {
        &self.shift_dist
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// Uniform distribution over all `L` shifts.
pub fn uniform_shifts(len: usize) -> Vec<f64> {
    vec![1.0 / len as f64; len]
}

/// Uniform distribution over shifts `0..count`, zero elsewhere.
pub fn uniform_prefix_shifts(len: usize, count: usize) -> Result<Vec<f64>> {
    if count == 0 || count > len {
        return Err(MrfaError::Parameter(format!(
            "shift support {count} must lie in 1..={len}"
        )));
    }
    let mut dist = vec![0.0; len];
    dist[..count].iter_mut().for_each(|p| *p = 1.0 / count as f64);
    Ok(dist)
}

/// Dense `L x L` complex Hermitian matrix with optional PSD/rank metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    matrix: CMatrix,
    is_psd: bool,
    rank_estimate: Option<usize>,
}

impl HermitianMatrix {
    /// Accepts `matrix` if it is square and Hermitian to within
    /// `1e-12 * max(1, max |entry|)`.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(MrfaError::Shape(format!(
                "expected a square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.iter().fold(1.0f64, |acc, v| acc.max(v.norm()));
        let defect = hermitian_defect(&matrix);
        if defect > 1e-12 * scale {
            return Err(MrfaError::Shape(format!(
                "matrix is not Hermitian (defect {defect:.3e})"
            )));
        }
        Ok(Self {
            matrix,
            is_psd: false,
            rank_estimate: None,
        })
    }

    /// Replaces `matrix` by its Hermitian part.
    pub fn from_hermitian_part(matrix: &CMatrix) -> Self {
        Self {
            matrix: hermitize(matrix),
            is_psd: false,
            rank_estimate: None,
        }
    }

    /// Wraps a matrix that is Hermitian by construction.
    pub(crate) fn from_parts(matrix: CMatrix, is_psd: bool, rank_estimate: Option<usize>) -> Self {
        Self {
            matrix,
            is_psd,
            rank_estimate,
        }
    }

    /// Marks the matrix PSD after checking
    /// `min eigenvalue >= -1e-10 * max eigenvalue`.
    pub fn mark_psd(mut self) -> Result<Self> {
        let eig = eigvals_desc(&self.matrix);
        let top = eig.first().copied().unwrap_or(0.0).max(0.0);
        let bottom = eig.last().copied().unwrap_or(0.0);
        if bottom < -1e-10 * top {
            return Err(MrfaError::Precondition(format!(
                "matrix is not PSD (eigenvalues {bottom:.3e} .. {top:.3e})"
            )));
        }
        self.is_psd = true;
        Ok(self)
    }

    pub fn with_rank_estimate(mut self, rank: usize) -> Self {
        self.rank_estimate = Some(rank);
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn is_psd(&self) -> bool {
        self.is_psd
    }

    pub fn rank_estimate(&self) -> Option<usize> {
        self.rank_estimate
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigvals_desc(&self.matrix)
    }

    /// Number of eigenvalues above `rel_tol` times the largest one.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let eig = self.eigenvalues();
        let top = eig.first().copied().unwrap_or(0.0);
        eig.iter().filter(|&&v| v > rel_tol * top.max(f64::MIN_POSITIVE)).count()
    }
}

/// `N` observations of length `L`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBatch {
    len: usize,
    data: Vec<C64>,
    domain: Domain,
    field: Field,
}

impl ObservationBatch {
    pub fn new(len: usize, data: Vec<C64>, domain: Domain, field: Field) -> Result<Self> {
        if len == 0 || data.is_empty() || !data.len().is_multiple_of(len) {
            return Err(MrfaError::Shape(format!(
                "{} values do not form a nonempty batch of length-{len} rows",
                data.len()
            )));
        }
        if field == Field::Real && domain == Domain::Time && data.iter().any(|v| v.im != 0.0) {
            return Err(MrfaError::Parameter(
                "real time-domain observations must have zero imaginary parts".into(),
            ));
        }
        Ok(Self {
            len,
            data,
            domain,
            field,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.len
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.len..(i + 1) * self.len]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, C64> {
        self.data.chunks_exact(self.len)
    }

    /// Concatenates two batches with matching layout.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.len != other.len || self.domain != other.domain || self.field != other.field {
            return Err(MrfaError::Shape("batches differ in layout".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.len, data, self.domain, self.field)
    }

    /// Rows `start..end` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.count() {
            return Err(MrfaError::Parameter(format!("invalid row range {start}..{end}")));
        }
        Self::new(
            self.len,
            self.data[start * self.len..end * self.len].to_vec(),
            self.domain,
            self.field,
        )
    }
}

/// `out[l] = x[(l - s) mod L]`.
pub fn cyclic_shift<T: Copy>(x: &[T], s: isize) -> Vec<T> {
    let len = x.len();
    if len == 0 {
        return Vec::new();
    }
    let s = s.rem_euclid(len as isize) as usize;
    (0..len).map(|l| x[(l + len - s) % len]).collect()
}

/// Random model: eigenvalues i.i.d. uniform on `[0, 1]` normalized to sum
/// one, factors Gaussian then orthonormalized, uniform shifts.
pub fn random_model(len: usize, rank: usize, sigma2: f64, field: Field, seed: u64) -> Result<FactorModel> {
    if len == 0 || rank == 0 || rank > len {
        return Err(MrfaError::Parameter(format!(
            "need 1 <= r <= L, got L = {len}, r = {rank}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eigenvalues: Vec<f64> = (0..rank).map(|_| rng.random::<f64>()).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total > 0.0 {
        eigenvalues.iter_mut().for_each(|v| *v /= total);
    } else {
        eigenvalues.iter_mut().for_each(|v| *v = 1.0 / rank as f64);
    }
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let factors = random_orthonormal(len, rank, field, &mut rng);
    Ok(FactorModel::new(eigenvalues, factors, sigma2, field, uniform_shifts(len))?.with_seed(seed))
}

/// Model with prescribed eigenvalues and random orthonormal factors.
pub fn random_model_with_eigenvalues(
    len: usize,
    eigenvalues: &[f64],
    sigma2: f64,
    field: Field,
    seed: u64,
) -> Result<FactorModel> {
    let rank = eigenvalues.len();
    if len == 0 || rank == 0 || rank > len {
        return Err(MrfaError::Parameter(format!(
            "need 1 <= r <= L, got L = {len}, r = {rank}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = random_orthonormal(len, rank, field, &mut rng);
    Ok(FactorModel::new(eigenvalues.to_vec(), factors, sigma2, field, uniform_shifts(len))?.with_seed(seed))
}

/// Gaussian columns orthonormalized by modified Gram-Schmidt (run twice),
/// each column's first nonzero entry rotated to be positive real.
pub fn random_orthonormal<R: Rng>(len: usize, rank: usize, field: Field, rng: &mut R) -> CMatrix {
    loop {
        let mut q = CMatrix::from_fn(len, rank, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = match field {
                Field::Real => 0.0,
                Field::Complex => rng.sample(StandardNormal),
            };
            C64::new(re, im)
        });
        if orthonormalize_columns(&mut q) {
            return q;
        }
    }
}

/// In-place orthonormalization; returns false if the columns are
/// numerically dependent.
pub(crate) fn orthonormalize_columns(q: &mut CMatrix) -> bool {
    let (len, rank) = q.shape();
    for j in 0..rank {
        for _pass in 0..2 {
            for p in 0..j {
                let proj: C64 = (0..len).map(|i| q[(i, p)].conj() * q[(i, j)]).sum();
                for i in 0..len {
                    let qp = q[(i, p)];
                    q[(i, j)] -= proj * qp;
                }
            }
        }
        let norm = q.column(j).norm();
        if norm < 1e-10 {
            return false;
        }
        for i in 0..len {
            q[(i, j)] /= C64::new(norm, 0.0);
        }
        if let Some(first) = (0..len).map(|i| q[(i, j)]).find(|v| v.norm() > 1e-14) {
            let phase = first.conj() / first.norm();
            for i in 0..len {
                q[(i, j)] *= phase;
            }
        }
    }
    true
}

/// Orthonormal DCT-IV atoms of the given orders, supported on the first
/// `support` samples of a length-`len` signal.
pub fn local_cosine_factors(len: usize, support: usize, orders: &[usize]) -> Result<CMatrix> {
    if support == 0 || support > len {
        return Err(MrfaError::Parameter(format!(
            "support {support} must lie in 1..={len}"
        )));
    }
    if orders.iter().any(|&k| k >= support) {
        return Err(MrfaError::Parameter("cosine order must be below the support".into()));
    }
    let scale = (2.0 / support as f64).sqrt();
    Ok(CMatrix::from_fn(len, orders.len(), |n, c| {
        if n >= support {
            return ZERO;
        }
        let k = orders[c] as f64;
        let arg = std::f64::consts::PI * (k + 0.5) * (n as f64 + 0.5) / support as f64;
        C64::new(scale * arg.cos(), 0.0)
    }))
}

/// Support length of the local-cosine atoms in [`local_cosine_model`].
pub const LOCAL_COSINE_SUPPORT: usize = 16;

/// Real model with DCT-IV atoms of orders 0, 3 and 6 on a 16-sample window,
/// shifted uniformly over the positions that keep the window inside the
/// signal.
pub fn local_cosine_model(len: usize, eigenvalues: &[f64], sigma2: f64) -> Result<FactorModel> {
    if eigenvalues.len() > 3 {
        return Err(MrfaError::Parameter("at most three local-cosine atoms".into()));
    }
    let orders = [0, 3, 6];
    let factors = local_cosine_factors(len, LOCAL_COSINE_SUPPORT, &orders[..eigenvalues.len()])?;
    let shifts = uniform_prefix_shifts(len, len + 1 - LOCAL_COSINE_SUPPORT)?;
    FactorModel::new(eigenvalues.to_vec(), factors, sigma2, Field::Real, shifts)
}

/// `sum_i lambda_i v_i v_i*` in the requested domain.
pub fn covariance_of(model: &FactorModel, domain: Domain) -> HermitianMatrix {
    let factors = match domain {
        Domain::Time => model.factors.clone(),
        Domain::Fourier => dft_matrix(model.len()) * &model.factors,
    };
    let len = model.len();
    let mut cov = CMatrix::zeros(len, len);
    for (i, &lambda) in model.eigenvalues.iter().enumerate() {
        let v = factors.column(i);
        cov.gerc(C64::new(lambda, 0.0), &v, &v, ONE);
    }
    HermitianMatrix {
        matrix: hermitize(&cov),
        is_psd: true,
        rank_estimate: Some(model.rank()),
    }
}

/// Draws `n` time-domain observations. Rows are produced in blocks of
/// [`SAMPLE_BLOCK`], block `b` using ChaCha stream `b` of `seed`, so the output
/// does not depend on the number of worker threads.
pub fn sample_observations(model: &FactorModel, n: usize, seed: u64) -> Result<ObservationBatch> {
    if n == 0 {
        return Err(MrfaError::Parameter("need at least one observation".into()));
    }
    let len = model.len();
    let shifts = WeightedIndex::new(&model.shift_dist)
        .map_err(|e| MrfaError::Parameter(format!("bad shift distribution: {e}")))?;
    let amp: Vec<f64> = model.eigenvalues.iter().map(|&l| l.sqrt()).collect();
    let noise = model.sigma2.sqrt();
    let field = model.field;
    let mut data = vec![ZERO; n * len];
    data.par_chunks_mut(SAMPLE_BLOCK * len)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block as u64);
            let mut x = vec![ZERO; len];
            for row in chunk.chunks_exact_mut(len) {
                let s = shifts.sample(&mut rng);
                x.iter_mut().for_each(|v| *v = ZERO);
                for (i, &a) in amp.iter().enumerate() {
                    let coef = gaussian(&mut rng, field, a);
                    for (l, v) in x.iter_mut().enumerate() {
                        *v += coef * model.factors[(l, i)];
                    }
                }
                for (l, out) in row.iter_mut().enumerate() {
                    *out = x[(l + len - s) % len] + gaussian(&mut rng, field, noise);
                }
            }
        });
    ObservationBatch::new(len, data, Domain::Time, field)
}

/// Real `N(0, std^2)` or circular complex `CN(0, std^2)` draw.
fn gaussian<R: Rng>(rng: &mut R, field: Field, std: f64) -> C64 {
    match field {
        Field::Real => C64::new(std * rng.sample::<f64, _>(StandardNormal), 0.0),
        Field::Complex => {
            let s = std * std::f64::consts::FRAC_1_SQRT_2;
            C64::new(
                s * rng.sample::<f64, _>(StandardNormal),
                s * rng.sample::<f64, _>(StandardNormal),
            )
        }
    }
}

/// Applies the unitary DFT to every row.
pub fn to_fourier(batch: &ObservationBatch) -> Result<ObservationBatch> {
    if batch.domain != Domain::Time {
        return Err(MrfaError::Domain("batch is already in the Fourier domain".into()));
    }
    let dft = UnitaryDft::new(batch.len);
    let mut data = batch.data.clone();
    data.par_chunks_mut(SAMPLE_BLOCK * batch.len)
        .for_each(|chunk| chunk.chunks_exact_mut(batch.len).for_each(|row| dft.forward(row)));
    Ok(ObservationBatch {
        len: batch.len,
        data,
        domain: Domain::Fourier,
        field: batch.field,
    })
}

/// Inverse of [`to_fourier`].
pub fn to_time(batch: &ObservationBatch) -> Result<ObservationBatch> {
    if batch.domain != Domain::Fourier {
        return Err(MrfaError::Domain("batch is already in the time domain".into()));
    }
    let dft = UnitaryDft::new(batch.len);
    let mut data = batch.data.clone();
    data.par_chunks_mut(SAMPLE_BLOCK * batch.len)
        .for_each(|chunk| chunk.chunks_exact_mut(batch.len).for_each(|row| dft.inverse(row)));
    if batch.field == Field::Real {
        data.iter_mut().for_each(|v| v.im = 0.0);
    }
    Ok(ObservationBatch {
        len: batch.len,
        data,
        domain: Domain::Time,
        field: batch.field,
    })
}

/// Empirical covariance `(1/N) sum y y*` of a batch.
pub fn sample_covariance(batch: &ObservationBatch) -> CMatrix {
    let len = batch.len;
    let mut acc = DMatrix::<C64>::zeros(len, len);
    for row in batch.rows() {
        for a in 0..len {
            for b in 0..len {
                acc[(a, b)] += row[a] * row[b].conj();
            }
        }
    }
    acc / C64::new(batch.count() as f64, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_shift_examples() {
        assert_eq!(cyclic_shift(&[1, 2, 3, 4], 1), vec![4, 1, 2, 3]);
        assert_eq!(cyclic_shift(&[1, 2, 3, 4], 0), vec![1, 2, 3, 4]);
        assert_eq!(cyclic_shift(&[1, 2, 3, 4], 4), vec![1, 2, 3, 4]);
        assert_eq!(cyclic_shift(&[1, 2, 3, 4], -1), vec![2, 3, 4, 1]);
    }

    #[test]
    fn rank_one_model_has_unit_eigenvalue() {
        let m = random_model(8, 1, 0.0, Field::Complex, 3).unwrap();
        assert_eq!(m.eigenvalues(), &[1.0]);
    }

    #[test]
    fn factors_are_orthonormal() {
        for field in [Field::Real, Field::Complex] {
            let m = random_model(8, 3, 0.0, field, 11).unwrap();
            let gram = m.factors().adjoint() * m.factors();
            assert!((gram - CMatrix::identity(3, 3)).camax() < 1e-12);
            let s: f64 = m.eigenvalues().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(m.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn random_model_is_deterministic() {
        let a = random_model(9, 2, 0.1, Field::Complex, 42).unwrap();
        let b = random_model(9, 2, 0.1, Field::Complex, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_rank_rejected() {
        assert!(random_model(4, 0, 0.0, Field::Real, 0).is_err());
        assert!(random_model(4, 5, 0.0, Field::Real, 0).is_err());
    }

    #[test]
    fn covariance_of_basis_vector() {
        let mut v = CMatrix::zeros(5, 1);
        v[(0, 0)] = ONE;
        let m = FactorModel::new(vec![1.0], v, 0.0, Field::Real, uniform_shifts(5)).unwrap();
        let cov = covariance_of(&m, Domain::Time);
        assert_eq!(cov.matrix()[(0, 0)], ONE);
        assert_eq!(cov.matrix().iter().filter(|v| v.norm() > 0.0).count(), 1);
    }

    #[test]
    fn covariance_trace_and_rank() {
        let m = random_model(10, 3, 0.0, Field::Complex, 5).unwrap();
        for domain in [Domain::Time, Domain::Fourier] {
            let cov = covariance_of(&m, domain);
            let tr: f64 = cov.matrix().diagonal().iter().map(|v| v.re).sum();
            assert!((tr - 1.0).abs() < 1e-12);
            assert_eq!(cov.numerical_rank(1e-10), 3);
            assert!(cov.is_psd());
        }
    }

    #[test]
    fn fourier_of_impulse_and_constant() {
        let mut e0 = vec![ZERO; 4];
        e0[0] = ONE;
        let b = ObservationBatch::new(4, e0, Domain::Time, Field::Real).unwrap();
        let f = to_fourier(&b).unwrap();
        for v in f.data() {
            assert!((v - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
        let c = ObservationBatch::new(4, vec![C64::new(2.0, 0.0); 4], Domain::Time, Field::Real).unwrap();
        let f = to_fourier(&c).unwrap();
        assert!((f.data()[0] - C64::new(4.0, 0.0)).norm() < 1e-12);
        assert!(f.data()[1..].iter().all(|v| v.norm() < 1e-12));
        assert!(to_fourier(&f).is_err());
    }

    #[test]
    fn fourier_round_trip() {
        let m = random_model(7, 2, 0.1, Field::Complex, 1).unwrap();
        let b = sample_observations(&m, 20, 3).unwrap();
        let back = to_time(&to_fourier(&b).unwrap()).unwrap();
        for (x, y) in b.data().iter().zip(back.data()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn noiseless_unshifted_rank_one_rows_are_multiples_of_factor() {
        let base = random_model(6, 1, 0.0, Field::Complex, 8).unwrap();
        let mut delta = vec![0.0; 6];
        delta[0] = 1.0;
        let m = base.with_shift_dist(delta).unwrap();
        let b = sample_observations(&m, 50, 1).unwrap();
        let v: Vec<C64> = m.factors().column(0).iter().copied().collect();
        for row in b.rows() {
            let coef: C64 = v.iter().zip(row).map(|(a, b)| a.conj() * b).sum();
            for (a, y) in v.iter().zip(row) {
                assert!((coef * a - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_blockwise() {
        let m = random_model(5, 2, 0.05, Field::Real, 2).unwrap();
        let a = sample_observations(&m, SAMPLE_BLOCK + 10, 77).unwrap();
        let b = sample_observations(&m, SAMPLE_BLOCK + 10, 77).unwrap();
        assert_eq!(a, b);
        let short = sample_observations(&m, 10, 77).unwrap();
        assert_eq!(short.data(), &a.data()[..10 * 5]);
        assert!(a.data().iter().all(|v| v.im == 0.0));
    }

    #[test]
    fn local_cosines_are_orthonormal() {
        let f = local_cosine_factors(50, 16, &[0, 3, 6]).unwrap();
        let gram = f.adjoint() * &f;
        assert!((gram - CMatrix::identity(3, 3)).camax() < 1e-12);
    }
}
