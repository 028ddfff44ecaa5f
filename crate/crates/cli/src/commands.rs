use std::io::Write;
use std::path::{Path, PathBuf};

use mrfa_core::analysis::{
    check_condition1, full_rank_counterexample, run_error_vs_n, run_rank_vs_length, Aggregation,
    ExperimentSpec,
};
use mrfa_core::io::{
    create, moments_to_json, open, read_json, read_observations, write_json, write_matrix_blocks,
    write_moments, write_observations, ModelFile, SolutionRecord, Step1Record,
};
use mrfa_core::moments::{estimate_moments, exact_moments, MomentEstimates};
use mrfa_core::signal_model::{
    covariance_of, local_cosine_model, random_model, random_model_with_eigenvalues,
    sample_observations, to_fourier, Domain, FactorModel, Field, HermitianMatrix,
};
use mrfa_core::step1::{run_step1_from_moments, Step1Config};
use mrfa_core::step2::{run_step2, Step2Config, SvMethod};
use mrfa_core::MrfaError;

use crate::args::*;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_CONDITION: u8 = 4;
pub const EXIT_UNDERDETERMINED: u8 = 5;
pub const EXIT_ALL_FAILED: u8 = 6;
const EXIT_FAILURE: u8 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<MrfaError> for CliError {
    fn from(err: MrfaError) -> Self {
        let code = match &err {
            MrfaError::Parameter(_) | MrfaError::Domain(_) | MrfaError::Shape(_) => EXIT_USAGE,
            MrfaError::Io(_) | MrfaError::Format(_) | MrfaError::Json(_) => EXIT_IO,
            MrfaError::Underdetermined { .. } => EXIT_UNDERDETERMINED,
            _ => EXIT_FAILURE,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        MrfaError::Io(err).into()
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: crate::args::Cli) -> CliResult {
    let verbose = cli.verbose;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Moments(a) => moments(a),
        Command::Estimate(a) => estimate(a, verbose),
        Command::Condition(a) => condition(a),
        Command::Counterexample(a) => counterexample(a),
        Command::BenchN(a) => bench(a, Aggregation::Mean, false),
        Command::BenchGrid(a) => bench(a, Aggregation::Max, true),
    }
}

fn field_of(arg: FieldArg) -> Field {
    match arg {
        FieldArg::Real => Field::Real,
        FieldArg::Complex => Field::Complex,
    }
}

/// `obs.bin` -> `obs.model.json`.
pub fn sidecar_path(dump: &Path) -> PathBuf {
    dump.with_extension("model.json")
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn build_model(a: &SimulateArgs) -> CliResult<FactorModel> {
    let field = field_of(a.field);
    let model = match a.model {
        ModelKind::Random => match &a.eigenvalues {
            Some(eig) => {
                if eig.len() != a.rank {
                    return Err(CliError::usage("--eigenvalues must list exactly r values"));
                }
                random_model_with_eigenvalues(a.len, eig, a.sigma2, field, a.seed)?
            }
            None => random_model(a.len, a.rank, a.sigma2, field, a.seed)?,
        },
        ModelKind::LocalCosine => {
            if field != Field::Real {
                return Err(CliError::usage("the local-cosine model is real-valued"));
            }
            let eig = match &a.eigenvalues {
                Some(e) => e.clone(),
                None => vec![1.0, 0.7, 0.3][..a.rank.min(3)].to_vec(),
            };
            if eig.len() != a.rank {
                return Err(CliError::usage("--eigenvalues must list exactly r values"));
            }
            local_cosine_model(a.len, &eig, a.sigma2)?.with_seed(a.seed)
        }
    };
    Ok(model)
}

fn simulate(a: SimulateArgs) -> CliResult {
    if a.n == 0 {
        return Err(CliError::usage("--N must be >= 1"));
    }
    let model = build_model(&a)?;
    let mut batch = sample_observations(&model, a.n, a.seed)?;
    if a.fourier {
        batch = to_fourier(&batch)?;
    }
    let mut out = create(&a.output)?;
    write_observations(&mut out, &batch)?;
    out.flush()?;
    write_json(&sidecar_path(&a.output), &ModelFile::from_model(&model))?;
    println!(
        "wrote {} observations of length {} to {}",
        batch.count(),
        batch.len(),
        a.output.display()
    );
    Ok(())
}

fn moments(a: MomentsArgs) -> CliResult {
    let batch = read_observations(&mut open(&a.input)?)?;
    let batch = match batch.domain() {
        Domain::Fourier => batch,
        Domain::Time => to_fourier(&batch)?,
    };
    let m = estimate_moments(&batch)?;
    let mut out = create(&a.output)?;
    write_moments(&mut out, &m)?;
    out.flush()?;
    if let Some(path) = a.json {
        write_json(&path, &moments_to_json(&m)?)?;
    }
    println!("wrote moments (L = {}, N = {}) to {}", m.len, batch.count(), a.output.display());
    Ok(())
}

struct EstimateInput {
    moments: MomentEstimates,
    field: Field,
    sigma2: f64,
    truth: Option<HermitianMatrix>,
}

fn load_estimate_input(a: &EstimateArgs) -> CliResult<EstimateInput> {
    if let Some(path) = &a.from_model {
        let file: ModelFile = read_json(path)?;
        let model = file.to_model()?;
        if !a.exact {
            return Err(CliError::usage("--from-model needs --exact"));
        }
        let sigma2 = a.sigma2.unwrap_or(model.sigma2());
        let moments = exact_moments(&covariance_of(&model, Domain::Fourier), sigma2, model.field())?;
        return Ok(EstimateInput {
            moments,
            field: model.field(),
            sigma2,
            truth: Some(file.covariance()?),
        });
    }
    let input = a.input.as_ref().ok_or_else(|| CliError::usage("--input is required"))?;
    let batch = read_observations(&mut open(input)?)?;
    let sidecar = a.model.clone().unwrap_or_else(|| sidecar_path(input));
    let file: Option<ModelFile> = if sidecar.exists() {
        Some(read_json(&sidecar)?)
    } else if a.model.is_some() {
        return Err(MrfaError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("model file {} not found", sidecar.display()),
        ))
        .into());
    } else {
        None
    };
    let sigma2 = match (a.sigma2, &file) {
        (Some(s), _) => s,
        (None, Some(f)) => f.sigma2,
        (None, None) => return Err(CliError::usage("--sigma2 is required without a model sidecar")),
    };
    let field = batch.field();
    let batch = match batch.domain() {
        Domain::Fourier => batch,
        Domain::Time => to_fourier(&batch)?,
    };
    let truth = match &file {
        Some(f) => Some(f.covariance()?),
        None => None,
    };
    Ok(EstimateInput {
        moments: estimate_moments(&batch)?,
        field,
        sigma2,
        truth,
    })
}

fn estimate(a: EstimateArgs, verbose: bool) -> CliResult {
    let input = load_estimate_input(&a)?;
    let len = input.moments.len;
    if let Some(r) = a.rank {
        mrfa_core::step2::check_rank(r, len)?;
    }
    let mut config = Step1Config::new(input.field);
    config.max_iters = a.max_iters;
    let step1 = run_step1_from_moments(&input.moments, input.sigma2, &config)?;
    if verbose {
        eprintln!(
            "step 1: objective {:e}, {} iterations, converged {}",
            step1.diagnostics.objective, step1.diagnostics.iterations, step1.diagnostics.converged
        );
    }
    if !step1.diagnostics.converged {
        eprintln!("warning: step-1 solver hit the iteration limit; using the best iterate");
    }
    write_json(&with_suffix(&a.output, ".step1.json"), &Step1Record::new(&step1, input.field))?;
    let mut out = create(&with_suffix(&a.output, ".step1.bin"))?;
    write_matrix_blocks(&mut out, &[&step1.c_tilde])?;
    out.flush()?;

    let step2_config = Step2Config {
        method: match a.method {
            MethodArg::Dense => SvMethod::DenseSvd,
            MethodArg::Cg => SvMethod::InversePowerCg,
        },
        strict: false,
    };
    let solution = run_step2(&step1.c_tilde, a.rank, input.truth.as_ref(), &step2_config)?;
    let record = SolutionRecord::new(&solution);
    write_json(&with_suffix(&a.output, ".solution.json"), &record)?;
    let mut out = create(&with_suffix(&a.output, ".cov.bin"))?;
    write_matrix_blocks(
        &mut out,
        &[solution.sigma_estimate_fourier.matrix(), solution.sigma_estimate_time.matrix()],
    )?;
    out.flush()?;

    let d = &solution.diagnostics;
    if verbose {
        eprintln!(
            "step 2: sv_min {:e}, sv_second {:e}, spread {:e}, psd violation {:e}",
            d.sv_min, d.sv_second, d.v_magnitude_spread, d.psd_violation
        );
    }
    let top: Vec<String> = record.eigenvalues.iter().take(d.rank).map(|v| format!("{v:.4}")).collect();
    let mut line = format!("L={len} r={} eigenvalues=[{}]", d.rank, top.join(", "));
    if let Some(err) = d.alignment_error {
        line.push_str(&format!(" error={err:e}"));
    }
    println!("{line}");
    if d.condition1_warning {
        eprintln!(
            "warning: small singular gap (sv_min {:e}, sv_second {:e}); Condition 1 may fail",
            d.sv_min, d.sv_second
        );
        if a.strict {
            return Err(CliError {
                code: EXIT_CONDITION,
                message: "Condition 1 warning escalated by --strict".into(),
            });
        }
    }
    Ok(())
}

fn condition(a: ConditionArgs) -> CliResult {
    let model = match &a.from_model {
        Some(path) => read_json::<ModelFile>(path)?.to_model()?,
        None => {
            let (len, rank) = match (a.len, a.rank) {
                (Some(l), Some(r)) => (l, r),
                _ => return Err(CliError::usage("give --from-model or both --L and --r")),
            };
            random_model(len, rank, 0.0, field_of(a.field), a.seed)?
        }
    };
    let rank = a.rank.unwrap_or(model.rank());
    let report = check_condition1(&covariance_of(&model, Domain::Fourier), rank)?;
    println!("{}", serde_json::to_string(&report).map_err(MrfaError::from)?);
    Ok(())
}

fn counterexample(a: CounterexampleArgs) -> CliResult {
    if a.len < 3 {
        return Err(CliError::usage("--L must be >= 3"));
    }
    let raw: Vec<f64> = (0..a.len)
        .map(|i| 1.0 - 0.5 * i as f64 / (a.len - 1) as f64)
        .collect();
    let total: f64 = raw.iter().sum();
    let eig: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let model = random_model_with_eigenvalues(a.len, &eig, 0.0, Field::Complex, a.seed)?;
    let ce = full_rank_counterexample(&covariance_of(&model, Domain::Fourier), a.phi)?;
    let summary = serde_json::json!({
        "L": a.len,
        "phi": a.phi,
        "is_hermitian": ce.is_hermitian,
        "is_psd": ce.is_psd,
        "min_eigenvalue": ce.min_eigenvalue,
        "moment_residual": ce.moment_residual,
        "omega_distance": ce.omega_distance,
        "in_omega": ce.in_omega,
    });
    println!("{summary}");
    if let Some(path) = a.output {
        let mut out = create(&path)?;
        write_matrix_blocks(&mut out, &[&ce.x])?;
        out.flush()?;
    }
    Ok(())
}

/// `6:12` (inclusive) or `6,9,10`.
pub fn parse_usize_set(text: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("cannot parse '{text}' as a list or range");
    if let Some((lo, hi)) = text.split_once(':') {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(format!("empty range '{text}'"));
        }
        return Ok((lo..=hi).collect());
    }
    let values = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect::<Result<Vec<usize>, _>>()?;
    if values.is_empty() {
        return Err(format!("empty list '{text}'"));
    }
    Ok(values)
}

fn bench(a: BenchArgs, default_aggregation: Aggregation, grid: bool) -> CliResult {
    let lengths = parse_usize_set(&a.lengths).map_err(CliError::usage)?;
    let ranks = parse_usize_set(&a.ranks).map_err(CliError::usage)?;
    if a.n.is_empty() {
        return Err(CliError::usage("--N needs at least one value"));
    }
    let spec = ExperimentSpec {
        lengths,
        ranks,
        sigma2: a.sigma2.clone(),
        n: a.n.clone(),
        trials: a.trials,
        field: field_of(a.field),
        seed: a.seed,
        aggregation: match a.aggregation {
            Some(AggregationArg::Mean) => Aggregation::Mean,
            Some(AggregationArg::Max) => Aggregation::Max,
            Some(AggregationArg::Median) => Aggregation::Median,
            None => default_aggregation,
        },
    };
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let report = pool.install(|| {
        if grid {
            run_rank_vs_length(&spec)
        } else {
            run_error_vs_n(&spec)
        }
    })?;

    let mut csv = create(&with_suffix(&a.output, ".csv"))?;
    report.write_csv(&mut csv)?;
    csv.flush()?;
    write_json(&with_suffix(&a.output, ".json"), &report)?;

    for cell in &report.cells {
        let agg = cell
            .log10_aggregate
            .map_or_else(|| "failed".to_string(), |v| format!("{v:.3}"));
        println!(
            "L={} r={} sigma2={} N={} log10_error={} failures={}{}",
            cell.len,
            cell.rank,
            cell.sigma2,
            cell.n,
            agg,
            cell.failures,
            if cell.flagged { " FLAGGED" } else { "" }
        );
    }
    if !grid {
        for s in &report.slopes {
            match s.slope {
                Some(v) => println!("slope L={} r={} sigma2={}: {v:.3}", s.len, s.rank, s.sigma2),
                None => println!("slope L={} r={} sigma2={}: n/a", s.len, s.rank, s.sigma2),
            }
        }
    }
    if report.all_cells_failed() {
        return Err(CliError {
            code: EXIT_ALL_FAILED,
            message: "every benchmark cell failed".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usize_sets() {
        assert_eq!(parse_usize_set("6:9").unwrap(), vec![6, 7, 8, 9]);
        assert_eq!(parse_usize_set("6,9,10").unwrap(), vec![6, 9, 10]);
        assert!(parse_usize_set("9:6").is_err());
        assert!(parse_usize_set("").is_err());
        assert!(parse_usize_set("a").is_err());
    }

    #[test]
    fn sidecar_next_to_dump() {
        assert_eq!(sidecar_path(Path::new("out/obs.bin")), PathBuf::from("out/obs.model.json"));
    }
}
