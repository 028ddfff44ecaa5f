//! Error metric, identifiability diagnostics and the benchmark harness.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MrfaError, Result};
use crate::linalg::{cis, eigvals_desc, frobenius_sq, hermitian_defect, shift_rows_cols, CMatrix, C64, ONE};
use crate::moments::{moment_distance, moments_of_matrix};
use crate::signal_model::{covariance_of, random_model, sample_observations, Domain, Field, HermitianMatrix};
use crate::step1::{run_step1, Step1Config};
use crate::step2::{
    assemble_structured_a, check_rank, default_rank, largest_singular_value, run_step2,
    smallest_right_singular_vector, Step2Config, SvMethod, DENSE_LIMIT,
};

/// `min_l ||estimate - R_{l,l} truth||_F^2 / ||truth||_F^2` over all cyclic
/// shifts, both matrices in the time domain.
pub fn alignment_error(estimate: &HermitianMatrix, truth: &HermitianMatrix) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(MrfaError::Shape(format!(
            "dimension mismatch: {} vs {}",
            estimate.dim(),
            truth.dim()
        )));
    }
    let denom = frobenius_sq(truth.matrix());
    if denom == 0.0 {
        return Err(MrfaError::UndefinedMetric);
    }
    let l = truth.dim();
    let best = (0..l)
        .map(|s| frobenius_sq(&(estimate.matrix() - shift_rows_cols(truth.matrix(), s, s))))
        .fold(f64::INFINITY, f64::min);
    Ok(best / denom)
}

/// Modulation vector `f_l[k] = exp(-2 pi i k l / L)`.
fn modulation(len: usize, shift: usize) -> Vec<C64> {
    (0..len)
        .map(|k| cis(-std::f64::consts::TAU * ((k * shift) % len) as f64 / len as f64))
        .collect()
}

/// `diag(f_l) S diag(f_l)*` for a Fourier-domain covariance `S`; the Fourier
/// image of the time-domain shift by `l`.
pub fn omega_element(sigma_hat: &CMatrix, shift: usize) -> CMatrix {
    let f = modulation(sigma_hat.nrows(), shift);
    CMatrix::from_fn(sigma_hat.nrows(), sigma_hat.ncols(), |a, b| {
        f[a] * sigma_hat[(a, b)] * f[b].conj()
    })
}

/// All `L` members of the fundamental ambiguity set.
pub fn omega_elements(sigma_hat: &CMatrix) -> Vec<CMatrix> {
    (0..sigma_hat.nrows()).map(|s| omega_element(sigma_hat, s)).collect()
}

/// Smallest relative Frobenius distance from `x` to the ambiguity set of
/// `sigma_hat`.
pub fn omega_distance(x: &CMatrix, sigma_hat: &CMatrix) -> f64 {
    let scale = frobenius_sq(sigma_hat).sqrt().max(f64::MIN_POSITIVE);
    omega_elements(sigma_hat)
        .iter()
        .map(|o| frobenius_sq(&(x - o)).sqrt() / scale)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition1Report {
    pub sv_min: f64,
    pub sv_second: f64,
    pub sv_max: f64,
    pub holds: bool,
    /// False when the covariance has (near-)vanishing entries, which the
    /// identifiability argument excludes.
    pub reliable: bool,
}

/// Builds the phase-retrieval operator from an exact Fourier-domain
/// covariance and reports its two smallest singular values.
pub fn check_condition1(sigma_hat: &HermitianMatrix, rank: usize) -> Result<Condition1Report> {
    let l = sigma_hat.dim();
    check_rank(rank, l)?;
    let x = sigma_hat.matrix();
    let largest = x.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let reliable = largest > 0.0 && x.iter().all(|v| v.norm() > 1e-12 * largest);
    let a = assemble_structured_a(x, Some(rank))?;
    let method = if l <= DENSE_LIMIT {
        SvMethod::DenseSvd
    } else {
        SvMethod::InversePowerCg
    };
    let null = smallest_right_singular_vector(&a, method)?;
    let sv_max = null.sv_max.unwrap_or_else(|| largest_singular_value(&a));
    Ok(Condition1Report {
        sv_min: null.sv_min,
        sv_second: null.sv_second,
        sv_max,
        holds: null.sv_second > 1e-8 * sv_max,
        reliable,
    })
}

#[derive(Clone, Debug)]
pub struct Counterexample {
    pub x: CMatrix,
    pub is_hermitian: bool,
    pub is_psd: bool,
    pub min_eigenvalue: f64,
    pub moment_residual: f64,
    pub omega_distance: f64,
    pub in_omega: bool,
}

/// Tolerance on the relative distance to the ambiguity set for counting a
/// matrix as one of its members.
pub const OMEGA_TOLERANCE: f64 = 1e-8;

/// Perturbs the first and last circulant diagonals of a full-rank
/// covariance by opposite phases. The result shares all moments with the
/// input yet, for small `phi > 0`, lies outside the ambiguity set.
pub fn full_rank_counterexample(sigma_hat: &HermitianMatrix, phi: f64) -> Result<Counterexample> {
    let l = sigma_hat.dim();
    if l < 3 {
        return Err(MrfaError::Parameter("need L >= 3".into()));
    }
    let s = sigma_hat.matrix();
    let eig = eigvals_desc(s);
    if !(eig[l - 1] > 0.0) {
        return Err(MrfaError::Precondition(
            "covariance must be positive definite".into(),
        ));
    }
    if s.iter().any(|v| v.norm() == 0.0) {
        return Err(MrfaError::Precondition("covariance has zero entries".into()));
    }
    let mut z = vec![ONE; l];
    z[1] = cis(phi);
    z[l - 1] = cis(-phi);
    let x = s.component_mul(&crate::linalg::circulant(&z));
    let scale = x.iter().fold(1.0f64, |acc, v| acc.max(v.norm()));
    let is_hermitian = hermitian_defect(&x) <= 1e-12 * scale;
    let x_eig = eigvals_desc(&crate::linalg::hermitize(&x));
    let min_eigenvalue = x_eig[l - 1];
    let moment_residual = moment_distance(
        &moments_of_matrix(&x, 0.0, Field::Complex)?,
        &moments_of_matrix(s, 0.0, Field::Complex)?,
    );
    let distance = omega_distance(&x, s);
    Ok(Counterexample {
        x,
        is_hermitian,
        is_psd: min_eigenvalue > 0.0,
        min_eigenvalue,
        moment_residual,
        omega_distance: distance,
        in_omega: distance <= OMEGA_TOLERANCE,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Max,
    Median,
}

impl Aggregation {
    pub fn apply(self, values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        Some(match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Max => values.iter().copied().fold(f64::MIN, f64::max),
            Aggregation::Median => {
                let mut v = values.to_vec();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            }
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = MrfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "median" => Ok(Self::Median),
            other => Err(MrfaError::Parameter(format!("unknown aggregation '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub lengths: Vec<usize>,
    pub ranks: Vec<usize>,
    pub sigma2: Vec<f64>,
    pub n: Vec<usize>,
    pub trials: usize,
    pub field: Field,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(MrfaError::Parameter("trials must be >= 1".into()));
        }
        if self.lengths.is_empty() || self.ranks.is_empty() || self.sigma2.is_empty() || self.n.is_empty() {
            return Err(MrfaError::Parameter("every sweep list must be nonempty".into()));
        }
        if self.n.contains(&0) {
            return Err(MrfaError::Parameter("all N must be >= 1".into()));
        }
        if self.lengths.iter().any(|&l| l < 2) || self.ranks.contains(&0) {
            return Err(MrfaError::Parameter("need L >= 2 and r >= 1".into()));
        }
        if self.lengths.iter().any(|&l| self.ranks.iter().any(|&r| r > l)) {
            return Err(MrfaError::Parameter("rank cannot exceed L".into()));
        }
        if self.sigma2.iter().any(|&s| !(s >= 0.0)) {
            return Err(MrfaError::Parameter("sigma2 values must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed(String),
}

impl std::fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrialStatus::Ok => f.write_str("ok"),
            TrialStatus::Failed(reason) => write!(f, "failed:{reason}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub len: usize,
    pub rank: usize,
    pub sigma2: f64,
    pub n: usize,
    pub trial: usize,
    pub error: f64,
    pub status: TrialStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub len: usize,
    pub rank: usize,
    /// Rank handed to the phase retrieval; differs from `rank` when
    /// `rank^2 >= L`.
    pub solver_rank: usize,
    pub sigma2: f64,
    pub n: usize,
    pub aggregate: Option<f64>,
    pub log10_aggregate: Option<f64>,
    pub failures: usize,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeRecord {
    pub len: usize,
    pub rank: usize,
    pub sigma2: f64,
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellReport>,
    pub trials: Vec<TrialRecord>,
    pub slopes: Vec<SlopeRecord>,
    pub wall_clock_secs: f64,
}

impl ErrorReport {
    pub fn cell(&self, len: usize, rank: usize, sigma2: f64, n: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.len == len && c.rank == rank && c.sigma2 == sigma2 && c.n == n)
    }

    pub fn all_cells_failed(&self) -> bool {
        self.cells.iter().all(|c| c.aggregate.is_none())
    }

    /// One row per trial: `L,r,sigma2,N,trial,error,status`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "L,r,sigma2,N,trial,error,status")?;
        for t in &self.trials {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.len, t.rank, t.sigma2, t.n, t.trial, t.error, t.status
            )?;
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic seed derived from a base seed and a list of keys.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ k))
}

/// Seeds for one trial: the model depends on `(L, r, trial)` only, so every
/// `sigma2` and `N` sees the same model; the sample stream depends on `N` as
/// well but not on `sigma2`.
fn trial_seeds(seed: u64, len: usize, rank: usize, n: usize, trial: usize) -> (u64, u64) {
    let model_seed = derive_seed(seed, &[len as u64, rank as u64, trial as u64]);
    (model_seed, derive_seed(model_seed, &[n as u64]))
}

/// One full pipeline run: simulate, step 1, step 2, score.
pub fn run_trial(
    len: usize,
    rank: usize,
    sigma2: f64,
    n: usize,
    field: Field,
    seed: u64,
    trial: usize,
) -> Result<f64> {
    let (model_seed, sample_seed) = trial_seeds(seed, len, rank, n, trial);
    let model = random_model(len, rank, sigma2, field, model_seed)?;
    let batch = sample_observations(&model, n, sample_seed)?;
    let step1 = run_step1(&batch, sigma2, &Step1Config::new(field))?;
    let solver_rank = if rank * rank < len { rank } else { default_rank(len) };
    let truth = covariance_of(&model, Domain::Time);
    let solution = run_step2(&step1.c_tilde, Some(solver_rank), Some(&truth), &Step2Config::default())?;
    solution
        .diagnostics
        .alignment_error
        .ok_or_else(|| MrfaError::Precondition("missing alignment error".into()))
}

fn failure_code(err: &MrfaError) -> &'static str {
    match err {
        MrfaError::Parameter(_) => "parameter",
        MrfaError::Domain(_) => "domain",
        MrfaError::Shape(_) => "shape",
        MrfaError::Degenerate(_) => "degenerate",
        MrfaError::Underdetermined { .. } => "underdetermined",
        MrfaError::Convergence(_) => "convergence",
        MrfaError::UndefinedMetric => "undefined_metric",
        MrfaError::Precondition(_) => "precondition",
        MrfaError::Format(_) | MrfaError::Io(_) | MrfaError::Json(_) => "io",
    }
}

/// Runs every `(L, r, sigma2, N, trial)` combination of the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ErrorReport> {
    spec.validate()?;
    let start = Instant::now();
    let mut jobs = Vec::new();
    for &len in &spec.lengths {
        for &rank in &spec.ranks {
            if rank > len {
                continue;
            }
            for &sigma2 in &spec.sigma2 {
                for &n in &spec.n {
                    for trial in 0..spec.trials {
                        jobs.push((len, rank, sigma2, n, trial));
                    }
                }
            }
        }
    }
    let trials: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(len, rank, sigma2, n, trial)| {
            let (error, status) = match run_trial(len, rank, sigma2, n, spec.field, spec.seed, trial) {
                Ok(e) if e.is_finite() => (e, TrialStatus::Ok),
                Ok(_) => (f64::NAN, TrialStatus::Failed("non_finite".into())),
                Err(err) => (f64::NAN, TrialStatus::Failed(failure_code(&err).into())),
            };
            TrialRecord {
                len,
                rank,
                sigma2,
                n,
                trial,
                error,
                status,
            }
        })
        .collect();

    let mut cells = Vec::new();
    for chunk in trials.chunks(spec.trials) {
        let first = &chunk[0];
        let ok: Vec<f64> = chunk
            .iter()
            .filter(|t| t.status == TrialStatus::Ok)
            .map(|t| t.error)
            .collect();
        let failures = chunk.len() - ok.len();
        let aggregate = spec.aggregation.apply(&ok);
        cells.push(CellReport {
            len: first.len,
            rank: first.rank,
            solver_rank: if first.rank * first.rank < first.len {
                first.rank
            } else {
                default_rank(first.len)
            },
            sigma2: first.sigma2,
            n: first.n,
            aggregate,
            log10_aggregate: aggregate.map(f64::log10),
            failures,
            flagged: failures as f64 > 0.2 * chunk.len() as f64,
        });
    }

    let mut slopes = Vec::new();
    for chunk in cells.chunks(spec.n.len()) {
        let points: Vec<(f64, f64)> = chunk
            .iter()
            .filter_map(|c| c.aggregate.filter(|&a| a > 0.0).map(|a| ((c.n as f64).log10(), a.log10())))
            .collect();
        slopes.push(SlopeRecord {
            len: chunk[0].len,
            rank: chunk[0].rank,
            sigma2: chunk[0].sigma2,
            slope: loglog_slope(&points),
        });
    }

    Ok(ErrorReport {
        spec: spec.clone(),
        cells,
        trials,
        slopes,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Least-squares slope of `y` against `x`; `None` with fewer than two
/// distinct abscissae.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Error as a function of `N` for each `(L, r, sigma2)`; mean aggregation
/// by default.
pub fn run_error_vs_n(spec: &ExperimentSpec) -> Result<ErrorReport> {
    run_experiment(spec)
}

/// Error over an `(L, r)` grid. Cells with `r^2 >= L` are run with the
/// largest admissible solver rank and are expected to fail.
pub fn run_rank_vs_length(spec: &ExperimentSpec) -> Result<ErrorReport> {
    run_experiment(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::random_model;

    #[test]
    fn alignment_absorbs_shift() {
        let model = random_model(7, 2, 0.0, Field::Complex, 4).unwrap();
        let truth = covariance_of(&model, Domain::Time);
        let shifted = HermitianMatrix::new(shift_rows_cols(truth.matrix(), 3, 3)).unwrap();
        assert!(alignment_error(&shifted, &truth).unwrap() < 1e-28);
        assert_eq!(alignment_error(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn zero_truth_is_undefined() {
        let z = HermitianMatrix::new(CMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(alignment_error(&z, &z), Err(MrfaError::UndefinedMetric)));
    }

    #[test]
    fn aggregations() {
        let v = [3.0, 1.0, 2.0, 10.0];
        assert_eq!(Aggregation::Mean.apply(&v), Some(4.0));
        assert_eq!(Aggregation::Max.apply(&v), Some(10.0));
        assert_eq!(Aggregation::Median.apply(&v), Some(2.5));
        assert_eq!(Aggregation::Mean.apply(&[]), None);
    }

    #[test]
    fn slope_of_line() {
        let pts = [(3.0, -1.0), (4.0, -2.0), (5.0, -3.0)];
        assert!((loglog_slope(&pts).unwrap() + 1.0).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_none());
    }
}
