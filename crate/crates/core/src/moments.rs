//! Shift-invariant second and fourth order moments: empirical estimators
//! accumulated from Fourier-domain observations, and closed forms computed
//! from a Fourier-domain covariance matrix.
//!
//! The trispectrum is stored in diagonal coordinates: entry `[k1, m, k2]`
//! holds `T[k1, k1 + m, k2 + m]`, where the raw triple `T[a, b, c]` is
//! `E[y[a] conj(y[b]) y[c] conj(y[a - b + c])]`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MrfaError, Result};
use crate::linalg::{CMatrix, C64, ZERO};
use crate::signal_model::{Domain, Field, HermitianMatrix, ObservationBatch};

/// Observations per leaf of the pairwise summation tree.
pub const ACCUMULATION_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Empirical { n: u64 },
    Exact,
}

/// Dense `L x L x L` trispectrum in `[k1, m, k2]` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Trispectrum {
    len: usize,
    data: Vec<C64>,
}

impl Trispectrum {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            data: vec![ZERO; len * len * len],
        }
    }

    pub fn from_data(len: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != len * len * len {
            return Err(MrfaError::Shape(format!(
                "trispectrum of length {} does not match L = {len}",
                data.len()
            )));
        }
        Ok(Self { len, data })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn index(&self, k1: usize, m: usize, k2: usize) -> usize {
        (k1 * self.len + m) * self.len + k2
    }

    /// `T[k1, k1 + m, k2 + m]`.
    #[inline]
    pub fn get(&self, k1: usize, m: usize, k2: usize) -> C64 {
        self.data[self.index(k1, m, k2)]
    }

    /// Raw-coordinate access `T[a, b, c]`.
    #[inline]
    pub fn raw(&self, a: usize, b: usize, c: usize) -> C64 {
        let l = self.len;
        let m = (b + l - a) % l;
        self.get(a, m, (c + l - m) % l)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest deviation across the four index permutations that leave the
    /// fourth-order moment unchanged.
    pub fn symmetry_residual(&self) -> f64 {
        let l = self.len;
        let mut worst = 0.0f64;
        for a in 0..l {
            for b in 0..l {
                for c in 0..l {
                    let d = (a + c + l - b) % l;
                    let v = self.raw(a, b, c);
                    for w in [self.raw(c, b, a), self.raw(a, d, c), self.raw(c, d, a)] {
                        worst = worst.max((v - w).norm());
                    }
                }
            }
        }
        worst
    }
}

/// Power spectrum and trispectrum together with their origin.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimates {
    pub len: usize,
    pub power: Vec<f64>,
    pub trispectrum: Trispectrum,
    pub provenance: Provenance,
}

impl MomentEstimates {
    pub fn new(power: Vec<f64>, trispectrum: Trispectrum, provenance: Provenance) -> Result<Self> {
        if power.len() != trispectrum.len() {
            return Err(MrfaError::Shape("power and trispectrum lengths differ".into()));
        }
        Ok(Self {
            len: power.len(),
            power,
            trispectrum,
            provenance,
        })
    }
}

/// Lexicographically smallest representative of each symmetry orbit of raw
/// triples, and the map from every tensor slot to its representative.
#[derive(Debug)]
struct CanonicalIndex {
    /// `(a, b, c, d)` with `d = a - b + c`.
    quads: Vec<[u32; 4]>,
    /// Tensor slot (in `[k1, m, k2]` order) to position in `quads`.
    slot_to_canon: Vec<u32>,
}

impl CanonicalIndex {
    fn new(len: usize) -> Self {
        let l = len;
        let canon_of = |a: usize, b: usize, c: usize| {
            let d = (a + c + l - b) % l;
            [(a, b, c), (c, b, a), (a, d, c), (c, d, a)]
                .into_iter()
                .min()
                .expect("orbit is nonempty")
        };
        let raw_id = |(a, b, c): (usize, usize, usize)| (a * l + b) * l + c;
        let mut position = vec![u32::MAX; l * l * l];
        let mut quads = Vec::with_capacity(l * l * l / 4 + l * l);
        for a in 0..l {
            for b in 0..l {
                for c in 0..l {
                    if canon_of(a, b, c) == (a, b, c) {
                        position[raw_id((a, b, c))] = quads.len() as u32;
                        let d = (a + c + l - b) % l;
                        quads.push([a as u32, b as u32, c as u32, d as u32]);
                    }
                }
            }
        }
        let mut slot_to_canon = vec![0u32; l * l * l];
        for k1 in 0..l {
            for m in 0..l {
                for k2 in 0..l {
                    let raw = (k1, (k1 + m) % l, (k2 + m) % l);
                    let pos = position[raw_id(canon_of(raw.0, raw.1, raw.2))];
                    slot_to_canon[(k1 * l + m) * l + k2] = pos;
                }
            }
        }
        Self { quads, slot_to_canon }
    }
}

/// Running sums for the moment estimators. Two accumulators over disjoint
/// observations merge by adding their sums.
#[derive(Clone, Debug)]
pub struct MomentAccumulator {
    len: usize,
    count: u64,
    power_sum: Vec<f64>,
    canon_sum: Vec<C64>,
    index: Arc<CanonicalIndex>,
}

impl MomentAccumulator {
    pub fn new(len: usize) -> Self {
        let index = Arc::new(CanonicalIndex::new(len));
        Self {
            len,
            count: 0,
            power_sum: vec![0.0; len],
            canon_sum: vec![ZERO; index.quads.len()],
            index,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    fn empty_like(&self) -> Self {
        Self {
            len: self.len,
            count: 0,
            power_sum: vec![0.0; self.len],
            canon_sum: vec![ZERO; self.canon_sum.len()],
            index: Arc::clone(&self.index),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        self.count += other.count;
        self.power_sum
            .iter_mut()
            .zip(&other.power_sum)
            .for_each(|(a, b)| *a += b);
        self.canon_sum
            .iter_mut()
            .zip(&other.canon_sum)
            .for_each(|(a, b)| *a += b);
    }

    fn add_rows_naive(&mut self, rows: &[C64]) {
        let l = self.len;
        let mut outer = vec![ZERO; l * l];
        for row in rows.chunks_exact(l) {
            for a in 0..l {
                self.power_sum[a] += row[a].norm_sqr();
                for b in 0..l {
                    outer[a * l + b] = row[a] * row[b].conj();
                }
            }
            for (acc, q) in self.canon_sum.iter_mut().zip(&self.index.quads) {
                let ab = outer[q[0] as usize * l + q[1] as usize];
                let cd = outer[q[2] as usize * l + q[3] as usize];
                *acc += ab * cd;
            }
        }
        self.count += (rows.len() / l) as u64;
    }

    fn pairwise(&self, rows: &[C64], chunks: usize) -> Self {
        let l = self.len;
        if chunks <= 1 {
            let mut acc = self.empty_like();
            acc.add_rows_naive(rows);
            return acc;
        }
        let left_chunks = chunks / 2;
        let split = (left_chunks * ACCUMULATION_CHUNK * l).min(rows.len());
        let (left, right) = rows.split_at(split);
        let (mut a, b) = rayon::join(
            || self.pairwise(left, left_chunks),
            || self.pairwise(right, chunks - left_chunks),
        );
        a.add_assign(&b);
        a
    }

    /// Adds every row of a Fourier-domain batch using a balanced pairwise
    /// tree over chunks of [`ACCUMULATION_CHUNK`] rows.
    pub fn accumulate(&mut self, batch: &ObservationBatch) -> Result<()> {
        if batch.domain() != Domain::Fourier {
            return Err(MrfaError::Domain("moment estimation needs Fourier-domain rows".into()));
        }
        if batch.len() != self.len {
            return Err(MrfaError::Shape(format!(
                "batch length {} does not match accumulator length {}",
                batch.len(),
                self.len
            )));
        }
        let chunks = batch.count().div_ceil(ACCUMULATION_CHUNK);
        let partial = self.pairwise(batch.data(), chunks);
        self.add_assign(&partial);
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.len != self.len {
            return Err(MrfaError::Shape("cannot merge accumulators of different length".into()));
        }
        self.add_assign(other);
        Ok(())
    }

    pub fn power_spectrum(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(MrfaError::Parameter("no observations accumulated".into()));
        }
        let n = self.count as f64;
        Ok(self.power_sum.iter().map(|v| v / n).collect())
    }

    pub fn trispectrum(&self) -> Result<Trispectrum> {
        if self.count == 0 {
            return Err(MrfaError::Parameter("no observations accumulated".into()));
        }
        let inv = 1.0 / self.count as f64;
        let means: Vec<C64> = self.canon_sum.iter().map(|v| v * inv).collect();
        let data = self
            .index
            .slot_to_canon
            .iter()
            .map(|&p| means[p as usize])
            .collect();
        Trispectrum::from_data(self.len, data)
    }

    pub fn finish(&self) -> Result<MomentEstimates> {
        MomentEstimates::new(
            self.power_spectrum()?,
            self.trispectrum()?,
            Provenance::Empirical { n: self.count },
        )
    }
}

/// `P[k] = (1/N) sum_i |y_i[k]|^2`.
pub fn estimate_power_spectrum(batch: &ObservationBatch) -> Result<Vec<f64>> {
    if batch.domain() != Domain::Fourier {
        return Err(MrfaError::Domain("moment estimation needs Fourier-domain rows".into()));
    }
    let l = batch.len();
    let mut sums = vec![0.0; l];
    for row in batch.rows() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v.norm_sqr();
        }
    }
    let n = batch.count() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Empirical trispectrum of a Fourier-domain batch.
pub fn estimate_trispectrum(batch: &ObservationBatch) -> Result<Trispectrum> {
    let mut acc = MomentAccumulator::new(batch.len());
    acc.accumulate(batch)?;
    acc.trispectrum()
}

/// Both empirical moments in a single pass.
pub fn estimate_moments(batch: &ObservationBatch) -> Result<MomentEstimates> {
    let mut acc = MomentAccumulator::new(batch.len());
    acc.accumulate(batch)?;
    acc.finish()
}

/// Diagonals with circulant wrapping, `d_m[k] = X[k, k + m]`, with `sigma2`
/// added to the main diagonal.
pub fn diagonals(x: &CMatrix, sigma2: f64) -> Vec<Vec<C64>> {
    let l = x.nrows();
    (0..l)
        .map(|m| {
            (0..l)
                .map(|k| {
                    let v = x[(k, (k + m) % l)];
                    if m == 0 {
                        v + sigma2
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

/// Closed-form trispectrum generated by arbitrary diagonals `d_m`.
pub fn trispectrum_from_diagonals(d: &[Vec<C64>], field: Field) -> Trispectrum {
    let l = d.len();
    let mut t = Trispectrum::zeros(l);
    for k1 in 0..l {
        for m in 0..l {
            for k2 in 0..l {
                let j = (k2 + l - k1) % l;
                let mut v = d[m][k1] * d[m][k2].conj() + d[j][k1] * d[j][(k1 + m) % l].conj();
                if field == Field::Real {
                    let q = (k1 + k2 + m) % l;
                    let a = (l - k2) % l;
                    let b = (2 * l - k2 - m) % l;
                    v += d[q][a] * d[q][b].conj();
                }
                let idx = t.index(k1, m, k2);
                t.data[idx] = v;
            }
        }
    }
    t
}

/// Moments implied by an arbitrary matrix `x` (no Hermitian check). Used
/// for residual checks on candidate solutions.
pub fn moments_of_matrix(x: &CMatrix, sigma2: f64, field: Field) -> Result<MomentEstimates> {
    if x.nrows() != x.ncols() || x.nrows() == 0 {
        return Err(MrfaError::Shape("expected a nonempty square matrix".into()));
    }
    let d = diagonals(x, sigma2);
    let power = d[0].iter().map(|v| v.re).collect();
    MomentEstimates::new(power, trispectrum_from_diagonals(&d, field), Provenance::Exact)
}

/// Exact power spectrum and trispectrum of observations whose Fourier-domain
/// signal covariance is `sigma_hat` and noise variance is `sigma2`.
pub fn exact_moments(sigma_hat: &HermitianMatrix, sigma2: f64, field: Field) -> Result<MomentEstimates> {
    if !(sigma2 >= 0.0) {
        return Err(MrfaError::Parameter(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    moments_of_matrix(sigma_hat.matrix(), sigma2, field)
}

/// `||T(a) - T(b)||_F + ||P(a) - P(b)||` between two moment sets.
pub fn moment_distance(a: &MomentEstimates, b: &MomentEstimates) -> f64 {
    let p: f64 = a
        .power
        .iter()
        .zip(&b.power)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    a.trispectrum.distance(&b.trispectrum) + p
}

/// Splits work across rows for callers that hold several batches.
pub fn estimate_moments_many(batches: &[ObservationBatch]) -> Result<MomentEstimates> {
    let first = batches
        .first()
        .ok_or_else(|| MrfaError::Parameter("no batches given".into()))?;
    let partials: Vec<Result<MomentAccumulator>> = batches
        .par_iter()
        .map(|b| {
            let mut acc = MomentAccumulator::new(first.len());
            acc.accumulate(b)?;
            Ok(acc)
        })
        .collect();
    let mut total = MomentAccumulator::new(first.len());
    for p in partials {
        total.merge(&p?)?;
    }
    total.finish()
}
