mod common;

use common::*;
use mrfa_core::analysis::{
    alignment_error, check_condition1, full_rank_counterexample, omega_element, omega_elements,
    run_error_vs_n, Aggregation, ExperimentSpec, OMEGA_TOLERANCE,
};
use mrfa_core::linalg::{
    cis, eigh_desc, eigvals_desc, frobenius_sq, hermitian_defect, shift_rows_cols, CMatrix, C64, ONE,
    ZERO,
};
use mrfa_core::moments::{
    diagonals, estimate_moments, estimate_power_spectrum, exact_moments, moment_distance,
    moments_of_matrix,
};
use mrfa_core::signal_model::{
    random_model, random_model_with_eigenvalues, sample_covariance, sample_observations, to_fourier,
    uniform_shifts, Field, HermitianMatrix,
};
use mrfa_core::step1::{
    rank_one_diagonal, run_step1, run_step1_from_moments, Step1Config, TrispectrumFit,
};
use mrfa_core::step2::{
    assemble_structured_a, build_h, recover_angles, run_step2, smallest_right_singular_vector,
    Step2Config, SvMethod,
};
use mrfa_core::MrfaError;

fn rel_fro(a: &CMatrix, b: &CMatrix) -> f64 {
    frobenius(&(a - b)) / frobenius(b)
}

// ---- sampling ----

#[test]
fn mean_energy_within_three_standard_errors() {
    let model = random_model(6, 2, 0.1, Field::Complex, 11).unwrap();
    let batch = sample_observations(&model, 100_000, 12).unwrap();
    let energy: Vec<f64> = batch.rows().map(|r| r.iter().map(|v| v.norm_sqr()).sum()).collect();
    let (mean, se) = sample_mean_and_se(&energy);
    let expected = model.eigenvalues().iter().sum::<f64>() + 6.0 * 0.1;
    assert!((mean - expected).abs() <= 3.0 * se, "mean {mean}, expected {expected}, se {se}");
}

#[test]
fn sample_covariance_is_shift_average() {
    let model = random_model(6, 2, 0.0, Field::Complex, 21).unwrap();
    let batch = sample_observations(&model, 100_000, 22).unwrap();
    let truth = time_cov(&model);
    let mut avg = CMatrix::zeros(6, 6);
    for s in 0..6 {
        avg += shift_rows_cols(truth.matrix(), s, s);
    }
    avg /= C64::new(6.0, 0.0);
    let err = frobenius(&(sample_covariance(&batch) - avg));
    assert!(err <= 5e-2, "error {err}");
}

#[test]
fn unshifted_sample_covariance_converges_at_root_n() {
    // error at N versus 4N, averaged over a few seeds
    let mut ratios = Vec::new();
    for seed in 0..4 {
        let model = random_model(6, 3, 0.0, Field::Complex, 100 + seed)
            .unwrap()
            .with_shift_dist(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let truth = time_cov(&model);
        let small = sample_observations(&model, 10_000, 200 + seed).unwrap();
        let large = sample_observations(&model, 40_000, 300 + seed).unwrap();
        let e_small = frobenius(&(sample_covariance(&small) - truth.matrix()));
        let e_large = frobenius(&(sample_covariance(&large) - truth.matrix()));
        ratios.push(e_small / e_large);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((1.4..=2.8).contains(&mean), "ratios {ratios:?}");
}

// ---- moments ----

#[test]
fn power_spectrum_within_three_standard_errors() {
    let sigma2 = 0.1;
    let model = random_model(6, 2, sigma2, Field::Complex, 31).unwrap();
    let batch = to_fourier(&sample_observations(&model, 100_000, 32).unwrap()).unwrap();
    let p = estimate_power_spectrum(&batch).unwrap();
    let s = fourier_cov(&model);
    for k in 0..6 {
        let col: Vec<f64> = batch.rows().map(|r| r[k].norm_sqr()).collect();
        let (_, se) = sample_mean_and_se(&col);
        let expected = s.matrix()[(k, k)].re + sigma2;
        assert!((p[k] - expected).abs() <= 3.0 * se, "k={k}: {} vs {expected}", p[k]);
    }
}

#[test]
fn noiseless_trispectrum_matches_closed_form() {
    let model = random_model(6, 2, 0.0, Field::Complex, 41).unwrap();
    let batch = to_fourier(&sample_observations(&model, 100_000, 42).unwrap()).unwrap();
    let est = estimate_moments(&batch).unwrap();
    let exact = exact_moments(&fourier_cov(&model), 0.0, Field::Complex).unwrap();
    let rel = est.trispectrum.distance(&exact.trispectrum) / exact.trispectrum.frobenius();
    assert!(rel <= 5e-2, "relative error {rel}");
}

// ---- step 1 ----

#[test]
fn fitted_g_matrices_are_outer_products_of_diagonals() {
    let model = random_model(6, 2, 0.0, Field::Complex, 51).unwrap();
    let s = fourier_cov(&model);
    assert!(s.matrix().iter().all(|v| v.norm() > 1e-6));
    let moments = exact_moments(&s, 0.0, Field::Complex).unwrap();
    let out = run_step1_from_moments(&moments, 0.0, &Step1Config::new(Field::Complex)).unwrap();
    let d = diagonals(s.matrix(), 0.0);
    for (idx, g) in out.g_matrices.iter().enumerate() {
        let dm = CMatrix::from_column_slice(6, 1, &d[idx + 1]);
        let outer = &dm * dm.adjoint();
        let err = frobenius(&(g.matrix() - outer));
        assert!(err <= 1e-5, "G_{} off by {err}", idx + 1);
    }
}

#[test]
fn exact_moments_reach_zero_objective_and_psd_blocks() {
    for (len, field, seed) in [(6, Field::Complex, 61), (7, Field::Real, 62)] {
        let model = random_model(len, 2, 0.05, field, seed).unwrap();
        let moments = exact_moments(&fourier_cov(&model), 0.05, field).unwrap();
        let config = Step1Config::new(field);
        let out = run_step1_from_moments(&moments, 0.05, &config).unwrap();
        assert!(out.diagnostics.objective <= 1e-8, "objective {}", out.diagnostics.objective);
        for g in &out.g_matrices {
            assert!(hermitian_defect(g.matrix()) <= 1e-12);
            let eig = g.eigenvalues();
            assert!(*eig.last().unwrap() >= -config.tol_psd);
        }
    }
}

#[test]
fn exact_moment_bypass_recovers_diagonals_up_to_phase() {
    let sigma2 = 0.05;
    let model = random_model(8, 2, sigma2, Field::Complex, 71).unwrap();
    let s = fourier_cov(&model);
    let moments = exact_moments(&s, sigma2, Field::Complex).unwrap();
    let out = run_step1_from_moments(&moments, sigma2, &Step1Config::new(Field::Complex)).unwrap();
    let dist = phase_aligned_distance(&out.c_tilde, s.matrix());
    assert!(dist <= 1e-5, "phase-aligned distance {dist}");
    for k in 0..8 {
        assert!((out.c_tilde[(k, k)].re - s.matrix()[(k, k)].re).abs() <= 1e-14);
        assert!(out.c_tilde[(k, k)].im.abs() <= 1e-10);
    }
}

#[test]
fn rank_one_diagonal_exact_and_zero() {
    let d: Vec<C64> = (0..5).map(|k| C64::new(k as f64 - 1.5, 0.3 * k as f64)).collect();
    let dv = CMatrix::from_column_slice(5, 1, &d);
    let g = HermitianMatrix::new(&dv * dv.adjoint()).unwrap();
    let out = rank_one_diagonal(&g).unwrap();
    let norm_d: f64 = d.iter().map(|v| v.norm_sqr()).sum();
    let norm_o: f64 = out.iter().map(|v| v.norm_sqr()).sum();
    assert!((norm_d - norm_o).abs() <= 1e-12 * norm_d);
    let inner: C64 = d.iter().zip(&out).map(|(a, b)| a.conj() * b).sum();
    let rot = inner / inner.norm();
    for (a, b) in d.iter().zip(&out) {
        assert!((a * rot - b).norm() <= 1e-12);
    }
    assert!(out[0].im == 0.0 && out[0].re >= 0.0);

    let zero = HermitianMatrix::new(CMatrix::zeros(4, 4)).unwrap();
    assert!(rank_one_diagonal(&zero).unwrap().iter().all(|v| *v == ZERO));
}

#[test]
fn rank_one_diagonal_perturbation_bounds() {
    let d: Vec<C64> = (0..6).map(|k| cis(0.7 * k as f64) * (1.0 + 0.2 * k as f64)).collect();
    let dv = CMatrix::from_column_slice(6, 1, &d);
    let norm_d2: f64 = d.iter().map(|v| v.norm_sqr()).sum();
    for scale in [1e-2, 1e-3, 1e-4] {
        let raw = CMatrix::from_fn(6, 6, |a, b| C64::new(((a * 7 + b * 3) % 5) as f64 - 2.0, ((a + 2 * b) % 3) as f64 - 1.0));
        let e = (&raw + raw.adjoint()) * C64::new(scale, 0.0);
        let e_norm = frobenius(&e);
        let g = HermitianMatrix::new(&dv * dv.adjoint() + &e).unwrap();
        let out = rank_one_diagonal(&g).unwrap();
        let norm_o2: f64 = out.iter().map(|v| v.norm_sqr()).sum();
        assert!((norm_o2 - norm_d2).abs() <= e_norm, "Weyl bound, scale {scale}");
        let inner: C64 = d.iter().zip(&out).map(|(a, b)| a.conj() * b).sum();
        let cos = inner.norm() / (norm_d2.sqrt() * norm_o2.sqrt());
        let sin = (1.0 - cos * cos).max(0.0).sqrt();
        assert!(sin <= 2.0 * e_norm / norm_d2, "Davis-Kahan bound, scale {scale}");
    }
}

#[test]
fn g5_is_close_to_rank_one_from_samples() {
    let model = random_model_with_eigenvalues(10, &[1.0, 0.7, 0.5], 0.05, Field::Complex, 81).unwrap();
    let batch = sample_observations(&model, 10_000, 82).unwrap();
    let out = run_step1(&batch, 0.05, &Step1Config::new(Field::Complex)).unwrap();
    let eig = out.g_matrices[4].eigenvalues();
    assert!(eig[1] / eig[0] < 0.1, "eigenvalues {eig:?}");
}

#[test]
fn step1_error_shrinks_with_n() {
    let mut rms = Vec::new();
    for n in [1_000, 10_000, 100_000] {
        let mut sq = 0.0;
        for trial in 0..5 {
            let model = random_model(8, 2, 0.05, Field::Complex, 90 + trial).unwrap();
            let batch = sample_observations(&model, n, 1000 * trial + n as u64).unwrap();
            let out = run_step1(&batch, 0.05, &Step1Config::new(Field::Complex)).unwrap();
            sq += phase_aligned_distance(&out.c_tilde, fourier_cov(&model).matrix()).powi(2);
        }
        rms.push((sq / 5.0).sqrt());
    }
    assert!(rms.windows(2).all(|w| w[1] <= w[0]), "rms {rms:?}");
    assert!(rms[2] < 1e-2, "rms {rms:?}");
}

#[test]
fn unconstrained_normal_matrix_is_singular() {
    for len in [4, 6, 8] {
        let model = random_model(len, 2, 0.0, Field::Complex, len as u64).unwrap();
        let moments = exact_moments(&fourier_cov(&model), 0.0, Field::Complex).unwrap();
        let fit = TrispectrumFit::new(&moments, Field::Complex);
        let sv = eigvals_desc(&fit.normal_matrix());
        let top = sv[0];
        let smallest = sv.last().unwrap().abs();
        assert!(smallest <= 1e-10 * top, "L={len}: smallest {smallest}, top {top}");
    }
}

#[test]
fn field_mismatch_rejected() {
    let model = random_model(5, 1, 0.0, Field::Real, 3).unwrap();
    let batch = sample_observations(&model, 10, 4).unwrap();
    let err = run_step1(&batch, 0.0, &Step1Config::new(Field::Complex)).unwrap_err();
    assert!(matches!(err, MrfaError::Parameter(_)));
}

// ---- step 2 ----

#[test]
fn h_rank_is_at_most_r_squared() {
    for r in 1..=3 {
        let model = random_model(10, r, 0.0, Field::Complex, 110 + r as u64).unwrap();
        let s = fourier_cov(&model);
        for i in 0..10 {
            let eig = eigvals_desc(&build_h(s.matrix(), i, i));
            assert!(eig[r * r] <= 1e-10 * eig[0], "r={r} i={i}: {eig:?}");
        }
    }
}

#[test]
fn h_ignores_circulant_phases_on_the_diagonal_shift() {
    let model = random_model(7, 2, 0.0, Field::Complex, 121).unwrap();
    let s = fourier_cov(&model);
    let x = phase_masked(s.matrix(), &hermitian_phases(7, 122));
    for i in 0..7 {
        let diff = frobenius(&(build_h(&x, i, i) - build_h(s.matrix(), i, i)));
        assert!(diff <= 1e-14);
    }
    let h0 = build_h(&x, 0, 0);
    assert!(h0.iter().all(|v| v.im == 0.0 && v.re >= 0.0));
}

#[test]
fn structured_operator_shape_and_orthonormal_blocks() {
    let model = random_model(10, 3, 0.0, Field::Complex, 131).unwrap();
    let a = assemble_structured_a(fourier_cov(&model).matrix(), Some(3)).unwrap();
    assert_eq!(a.shape(), (1000, 820));
    for i in 0..10 {
        let z = a.z_block(i);
        let gram = z.adjoint() * &z;
        let err = max_abs(&(gram - CMatrix::identity(81, 81)));
        assert!(err <= 1e-10, "block {i}: {err}");
    }
    let dense = a.materialize();
    let right = dense.columns(10, 810);
    let gram = right.adjoint() * right;
    assert!(max_abs(&(gram - CMatrix::identity(810, 810))) <= 1e-10);
}

#[test]
fn reference_setting_has_one_dimensional_null_space() {
    let model = random_model_with_eigenvalues(10, &[1.0, 0.7, 0.5], 0.0, Field::Complex, 141).unwrap();
    let a = assemble_structured_a(fourier_cov(&model).matrix(), Some(3)).unwrap();
    let dense = a.materialize();
    let norm = dense.clone().svd(false, false).singular_values[0];
    let null = smallest_right_singular_vector(&a, SvMethod::DenseSvd).unwrap();
    assert!(null.sv_min <= 1e-10 * norm, "sv_min {} norm {norm}", null.sv_min);
    assert!(null.sv_second > 1e-8 * norm, "sv_second {}", null.sv_second);
    assert!(a.residual_norm(&null.vector) <= null.sv_min + 1e-8);
    let mags: Vec<f64> = null.vector[..10].iter().map(|v| v.norm()).collect();
    let mean = mags.iter().sum::<f64>() / 10.0;
    let spread = (mags.iter().cloned().fold(f64::MIN, f64::max) - mags.iter().cloned().fold(f64::MAX, f64::min)) / mean;
    assert!(spread <= 1e-8, "spread {spread}");
}

#[test]
fn inverse_power_agrees_with_dense_svd() {
    for (len, rank, seed) in [(7, 2, 151), (10, 3, 152), (12, 3, 153)] {
        let model = random_model(len, rank, 0.0, Field::Complex, seed).unwrap();
        let x = phase_masked(fourier_cov(&model).matrix(), &hermitian_phases(len, seed));
        let a = assemble_structured_a(&x, Some(rank)).unwrap();
        let dense = smallest_right_singular_vector(&a, SvMethod::DenseSvd).unwrap();
        let cg = smallest_right_singular_vector(&a, SvMethod::InversePowerCg).unwrap();
        assert_eq!(cg.method, SvMethod::InversePowerCg);
        let inner: C64 = dense.vector.iter().zip(&cg.vector).map(|(a, b)| a.conj() * b).sum();
        let rot = inner / inner.norm();
        let diff: f64 = dense
            .vector
            .iter()
            .zip(&cg.vector)
            .map(|(a, b)| (a * rot - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-6, "L={len}: {diff}");
    }
}

#[test]
fn angles_recovered_up_to_linear_family() {
    let len = 9;
    let phi: Vec<f64> = (0..len).map(|m| if m == 0 { 0.0 } else { (m as f64 * 1.37).rem_euclid(std::f64::consts::TAU) }).collect();
    let v: Vec<C64> = (0..len)
        .map(|m| {
            let prev = phi[(m + len - 1) % len];
            cis(-(phi[m] - prev))
        })
        .collect();
    let got = recover_angles(&v).unwrap();
    let tau = std::f64::consts::TAU;
    let matches = (0..len).any(|k| {
        (1..len).all(|m| {
            let d = (got[m - 1] - phi[m] - tau * (k * m) as f64 / len as f64).rem_euclid(tau);
            d < 1e-10 || tau - d < 1e-10
        })
    });
    assert!(matches, "{got:?} vs {phi:?}");
    assert!(got.iter().all(|&a| (0.0..tau).contains(&a)));
}

#[test]
fn exact_input_without_phases_is_recovered() {
    let model = random_model(10, 3, 0.0, Field::Complex, 161).unwrap();
    let s = fourier_cov(&model);
    let sol = run_step2(s.matrix(), Some(3), Some(&time_cov(&model)), &Step2Config::default()).unwrap();
    assert!(sol.diagnostics.alignment_error.unwrap() <= 1e-8);
}

#[test]
fn exact_input_with_random_phases_is_recovered() {
    for seed in 0..3u64 {
        let model = random_model(10, 3, 0.0, Field::Complex, 170 + seed).unwrap();
        let x = phase_masked(fourier_cov(&model).matrix(), &hermitian_phases(10, 180 + seed));
        let sol = run_step2(&x, Some(3), Some(&time_cov(&model)), &Step2Config::default()).unwrap();
        let err = sol.diagnostics.alignment_error.unwrap();
        assert!(err <= 1e-6, "seed {seed}: {err}");
        let t = &sol.sigma_estimate_time;
        let back = mrfa_core::linalg::fourier_to_time(sol.sigma_estimate_fourier.matrix());
        assert!(max_abs(&(t.matrix() - back)) <= 1e-12);
        let tau = std::f64::consts::TAU;
        assert!(sol.angles.iter().all(|&a| (0.0..tau).contains(&a)));
    }
}

#[test]
fn dense_path_is_bit_reproducible() {
    let model = random_model(8, 2, 0.0, Field::Complex, 191).unwrap();
    let x = phase_masked(fourier_cov(&model).matrix(), &hermitian_phases(8, 192));
    let config = Step2Config {
        method: SvMethod::DenseSvd,
        strict: false,
    };
    let a = run_step2(&x, Some(2), None, &config).unwrap();
    let b = run_step2(&x, Some(2), None, &config).unwrap();
    assert_eq!(a.angles, b.angles);
}

#[test]
fn vanishing_entries_are_rejected() {
    let mut x = CMatrix::identity(5, 5);
    x[(0, 1)] = ONE;
    x[(1, 0)] = ONE;
    assert!(matches!(
        run_step2(&x, Some(1), None, &Step2Config::default()),
        Err(MrfaError::Degenerate(_))
    ));
}

#[test]
fn underdetermined_rank_rejected() {
    let model = random_model(10, 3, 0.0, Field::Complex, 201).unwrap();
    let err = run_step2(fourier_cov(&model).matrix(), Some(4), None, &Step2Config::default()).unwrap_err();
    assert!(matches!(err, MrfaError::Underdetermined { rank: 4, len: 10 }));
}

#[test]
fn kronecker_block_matrix_is_psd() {
    for len in [5, 6, 8] {
        let model = random_model(len, 2, 0.0, Field::Complex, 210 + len as u64).unwrap();
        let x = fourier_cov(&model).into_matrix();
        let n = len * len;
        let mut s = CMatrix::zeros(n, n);
        for i in 0..len {
            for j in 0..len {
                let block = x.zip_map(&shift_rows_cols(&x, i, j), |a, b| a * b.conj());
                s.view_mut((i * len, j * len), (len, len)).copy_from(&block);
            }
        }
        assert!(hermitian_defect(&s) <= 1e-12 * max_abs(&s));
        let eig = eigvals_desc(&mrfa_core::linalg::hermitize(&s));
        assert!(*eig.last().unwrap() >= -1e-10 * eig[0], "L={len}: {}", eig.last().unwrap());
    }
}

// ---- analysis ----

#[test]
fn omega_members_share_moments_and_structure() {
    for len in [6, 10] {
        let model = random_model(len, 3.min(len - 1), 0.0, Field::Complex, 220 + len as u64).unwrap();
        let s = fourier_cov(&model);
        let reference = exact_moments(&s, 0.0, Field::Complex).unwrap();
        let truth = time_cov(&model);
        for (shift, o) in omega_elements(s.matrix()).iter().enumerate() {
            assert!(hermitian_defect(o) <= 1e-14);
            let eig = eigvals_desc(o);
            assert!(eig[len - 1] >= -1e-12 * eig[0]);
            let rank = eig.iter().filter(|&&v| v > 1e-10 * eig[0]).count();
            assert_eq!(rank, model.rank());
            let residual = moment_distance(&moments_of_matrix(o, 0.0, Field::Complex).unwrap(), &reference);
            assert!(residual <= 1e-12, "shift {shift}: {residual}");
            let time = HermitianMatrix::from_hermitian_part(&mrfa_core::linalg::fourier_to_time(o));
            assert!(alignment_error(&time, &truth).unwrap() <= 1e-10);
        }
    }
}

#[test]
fn omega_element_is_fourier_image_of_shift() {
    let model = random_model(7, 2, 0.0, Field::Complex, 231).unwrap();
    let t = time_cov(&model);
    for shift in 0..7 {
        let direct = mrfa_core::linalg::time_to_fourier(&shift_rows_cols(t.matrix(), shift, shift));
        let o = omega_element(fourier_cov(&model).matrix(), shift);
        assert!(max_abs(&(direct - o)) <= 1e-13);
    }
}

#[test]
fn alignment_error_perturbation_bound() {
    let model = random_model(9, 2, 0.0, Field::Complex, 241).unwrap();
    let truth = time_cov(&model);
    let e = CMatrix::from_fn(9, 9, |a, b| C64::new(((a * b) % 7) as f64 * 1e-3, 0.0));
    let e = (&e + e.adjoint()) * C64::new(0.5, 0.0);
    let est = HermitianMatrix::new(truth.matrix() + &e).unwrap();
    let bound = frobenius_sq(&e) / frobenius_sq(truth.matrix());
    assert!(alignment_error(&est, &truth).unwrap() <= bound * (1.0 + 1e-12));
}

#[test]
fn alignment_error_matches_brute_force() {
    for len in [3, 7, 12] {
        let a = time_cov(&random_model(len, 2, 0.0, Field::Complex, 250 + len as u64).unwrap());
        let b = time_cov(&random_model(len, 2, 0.0, Field::Complex, 260 + len as u64).unwrap());
        let mut best = f64::INFINITY;
        let denom: f64 = b.matrix().iter().map(|v| v.norm_sqr()).sum();
        for s in 0..len {
            let mut acc = 0.0;
            for i in 0..len {
                for j in 0..len {
                    let shifted = b.matrix()[((i + len - s) % len, (j + len - s) % len)];
                    acc += (a.matrix()[(i, j)] - shifted).norm_sqr();
                }
            }
            best = best.min(acc / denom);
        }
        let got = alignment_error(&a, &b).unwrap();
        assert!((got - best).abs() <= 1e-14 * best.max(1.0));
    }
}

#[test]
fn condition1_holds_in_reference_setting() {
    let model = random_model_with_eigenvalues(10, &[1.0, 0.7, 0.5], 0.0, Field::Complex, 271).unwrap();
    let report = check_condition1(&fourier_cov(&model), 3).unwrap();
    assert!(report.holds && report.reliable);
    assert!(report.sv_min <= 1e-10 * report.sv_max);
}

#[test]
fn condition1_holds_across_random_models() {
    for len in [6, 10] {
        let rank = if len == 6 { 2 } else { 3 };
        for seed in 0..25u64 {
            let model = random_model(len, rank, 0.0, Field::Complex, 1000 * len as u64 + seed).unwrap();
            let report = check_condition1(&fourier_cov(&model), rank).unwrap();
            assert!(report.holds, "L={len} seed={seed}: {report:?}");
        }
    }
}

#[test]
fn zero_entry_model_is_flagged() {
    let s = 0.5f64.sqrt();
    let v = CMatrix::from_column_slice(4, 1, &[C64::new(s, 0.0), C64::new(s, 0.0), ZERO, ZERO]);
    let model = mrfa_core::signal_model::FactorModel::new(vec![1.0], v, 0.0, Field::Complex, uniform_shifts(4)).unwrap();
    let sh = fourier_cov(&model);
    assert!(sh.matrix().iter().any(|v| v.norm() < 1e-15));
    let report = check_condition1(&sh, 1).unwrap();
    assert!(!report.reliable);
}

fn full_rank_model(len: usize, seed: u64) -> HermitianMatrix {
    let eig: Vec<f64> = (0..len).map(|i| 1.0 - 0.5 * i as f64 / (len - 1) as f64).collect();
    let total: f64 = eig.iter().sum();
    let eig: Vec<f64> = eig.iter().map(|v| v / total).collect();
    fourier_cov(&random_model_with_eigenvalues(len, &eig, 0.0, Field::Complex, seed).unwrap())
}

#[test]
fn counterexample_at_zero_angle_is_trivial() {
    let s = full_rank_model(6, 281);
    let ce = full_rank_counterexample(&s, 0.0).unwrap();
    assert!(ce.in_omega);
    assert_eq!(ce.moment_residual, 0.0);
    assert!(ce.omega_distance <= OMEGA_TOLERANCE);
}

#[test]
fn counterexample_is_hermitian_for_any_angle() {
    let s = full_rank_model(6, 282);
    for phi in [0.01, 0.3, 1.0, 2.5] {
        assert!(full_rank_counterexample(&s, phi).unwrap().is_hermitian);
    }
}

#[test]
fn counterexample_requires_positive_definite_input() {
    let model = random_model(6, 2, 0.0, Field::Complex, 283).unwrap();
    assert!(matches!(
        full_rank_counterexample(&fourier_cov(&model), 0.05),
        Err(MrfaError::Precondition(_))
    ));
}

#[test]
fn pipeline_error_median_decreases_with_n() {
    let spec = ExperimentSpec {
        lengths: vec![10],
        ranks: vec![2],
        sigma2: vec![0.01],
        n: vec![1_000, 10_000, 100_000],
        trials: 20,
        field: Field::Complex,
        seed: 5,
        aggregation: Aggregation::Median,
    };
    let report = run_error_vs_n(&spec).unwrap();
    let medians: Vec<f64> = report.cells.iter().map(|c| c.aggregate.unwrap()).collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "medians {medians:?}");
    assert!(report.trials.iter().all(|t| t.error.is_finite() && t.error >= 0.0));
}

#[test]
fn experiments_are_reproducible() {
    let spec = ExperimentSpec {
        lengths: vec![6],
        ranks: vec![1, 2],
        sigma2: vec![0.0],
        n: vec![2_000],
        trials: 3,
        field: Field::Real,
        seed: 9,
        aggregation: Aggregation::Max,
    };
    let a = run_error_vs_n(&spec).unwrap();
    let b = run_error_vs_n(&spec).unwrap();
    let ea: Vec<u64> = a.trials.iter().map(|t| t.error.to_bits()).collect();
    let eb: Vec<u64> = b.trials.iter().map(|t| t.error.to_bits()).collect();
    assert_eq!(ea, eb);
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("L,r,sigma2,N,trial,error,status\n"));
    assert_eq!(text.lines().count(), 1 + 6);
}

#[test]
fn eigh_is_sorted_descending() {
    let m = CMatrix::from_fn(4, 4, |a, b| C64::new((a + b) as f64, 0.0));
    let (vals, vecs) = eigh_desc(&m);
    assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    let recon = &vecs * CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(4, vals.iter().map(|&v| C64::new(v, 0.0)))) * vecs.adjoint();
    assert!(rel_fro(&recon, &m) <= 1e-12);
}

/// Step-1 sweep at L = 26 with 20 trials per N; tens of minutes on one core.
#[test]
#[ignore]
fn long_step1_error_decreases_with_n_at_length_26() {
    let mut means = Vec::new();
    for n in [1_000, 10_000, 100_000] {
        let mut acc = 0.0;
        for trial in 0..20u64 {
            let model = random_model(26, 2, 0.0, Field::Complex, 300 + trial).unwrap();
            let batch = sample_observations(&model, n, 7 * trial + n as u64).unwrap();
            let out = run_step1(&batch, 0.0, &Step1Config::new(Field::Complex)).unwrap();
            let s = fourier_cov(&model);
            acc += phase_aligned_distance(&out.c_tilde, s.matrix()) / frobenius(s.matrix());
        }
        means.push(acc / 20.0);
    }
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}
