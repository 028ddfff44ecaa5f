#![allow(dead_code)]

use mrfa_core::linalg::{cis, circulant, frobenius_sq, CMatrix, C64, ONE};
use mrfa_core::signal_model::{covariance_of, Domain, FactorModel, HermitianMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn fourier_cov(model: &FactorModel) -> HermitianMatrix {
    covariance_of(model, Domain::Fourier)
}

pub fn time_cov(model: &FactorModel) -> HermitianMatrix {
    covariance_of(model, Domain::Time)
}

/// Random unit-modulus circulant generator with `z[0] = 1` and
/// `z[L - m] = conj(z[m])`, so the mask keeps Hermitian matrices Hermitian.
pub fn hermitian_phases(len: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut z = vec![ONE; len];
    for m in 1..len {
        if m < len - m {
            z[m] = cis(rng.random_range(0.0..std::f64::consts::TAU));
            z[len - m] = z[m].conj();
        } else if m == len - m {
            z[m] = if rng.random_bool(0.5) { ONE } else { -ONE };
        }
    }
    z
}

pub fn phase_masked(x: &CMatrix, z: &[C64]) -> CMatrix {
    x.component_mul(&circulant(z))
}

/// `min over circulant phases ||c - s ⊙ Circ(phases)||_F`, solved diagonal by
/// diagonal.
pub fn phase_aligned_distance(c: &CMatrix, s: &CMatrix) -> f64 {
    let l = c.nrows();
    let mut total = 0.0;
    for m in 0..l {
        let inner: C64 = (0..l).map(|k| s[(k, (k + m) % l)].conj() * c[(k, (k + m) % l)]).sum();
        let rot = if inner.norm() > 0.0 { inner / inner.norm() } else { ONE };
        total += (0..l)
            .map(|k| (c[(k, (k + m) % l)] - s[(k, (k + m) % l)] * rot).norm_sqr())
            .sum::<f64>();
    }
    total.sqrt()
}

pub fn frobenius(m: &CMatrix) -> f64 {
    frobenius_sq(m).sqrt()
}

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

pub fn sample_mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
