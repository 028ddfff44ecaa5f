//! Binary dumps and JSON records exchanged between pipeline stages.
//!
//! All binary formats are little-endian and store complex values as
//! `(re, im)` float64 pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MrfaError, Result};
use crate::linalg::{CMatrix, C64};
use crate::moments::{MomentEstimates, Provenance, Trispectrum};
use crate::signal_model::{Domain, FactorModel, Field, HermitianMatrix, ObservationBatch};
use crate::step1::Step1Output;
use crate::step2::PhaseSolution;

pub const OBSERVATION_MAGIC: &[u8; 4] = b"MRFA";
pub const MOMENT_MAGIC: &[u8; 4] = b"MRFM";
pub const MATRIX_MAGIC: &[u8; 4] = b"MRFC";
pub const FORMAT_VERSION: u32 = 1;

/// Largest `L` for which the JSON moment export is produced.
pub const MOMENT_JSON_LIMIT: usize = 12;

fn write_pairs<W: Write>(out: &mut W, values: impl IntoIterator<Item = C64>) -> Result<()> {
    for v in values {
        out.write_all(&v.re.to_le_bytes())?;
        out.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => MrfaError::Format("file is truncated".into()),
        _ => MrfaError::Io(e),
    })?;
    Ok(buf)
}

fn read_u8<R: Read>(input: &mut R) -> Result<u8> {
    Ok(read_exact::<R, 1>(input)?[0])
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(input)?))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(input)?))
}

fn read_pairs<R: Read>(input: &mut R, count: usize) -> Result<Vec<C64>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let re = f64::from_le_bytes(read_exact(input)?);
        let im = f64::from_le_bytes(read_exact(input)?);
        out.push(C64::new(re, im));
    }
    Ok(out)
}

fn expect_header<R: Read>(input: &mut R, magic: &[u8; 4]) -> Result<()> {
    let found: [u8; 4] = read_exact(input)?;
    if &found != magic {
        return Err(MrfaError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(input)?;
    if version != FORMAT_VERSION {
        return Err(MrfaError::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn expect_end<R: Read>(input: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match input.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(MrfaError::Format("trailing bytes after payload".into())),
    }
}

fn checked_len(value: u32) -> Result<usize> {
    if value == 0 {
        return Err(MrfaError::Format("zero length in header".into()));
    }
    Ok(value as usize)
}

pub fn write_observations<W: Write>(out: &mut W, batch: &ObservationBatch) -> Result<()> {
    out.write_all(OBSERVATION_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(batch.len() as u32).to_le_bytes())?;
    out.write_all(&(batch.count() as u64).to_le_bytes())?;
    out.write_all(&[batch.field().code(), batch.domain().code()])?;
    write_pairs(out, batch.data().iter().copied())
}

pub fn read_observations<R: Read>(input: &mut R) -> Result<ObservationBatch> {
    expect_header(input, OBSERVATION_MAGIC)?;
    let len = checked_len(read_u32(input)?)?;
    let n = read_u64(input)? as usize;
    let field = Field::from_code(read_u8(input)?)?;
    let domain = Domain::from_code(read_u8(input)?)?;
    let total = len
        .checked_mul(n)
        .ok_or_else(|| MrfaError::Format("header size overflows".into()))?;
    let data = read_pairs(input, total)?;
    expect_end(input)?;
    ObservationBatch::new(len, data, domain, field)
}

pub fn write_moments<W: Write>(out: &mut W, moments: &MomentEstimates) -> Result<()> {
    out.write_all(MOMENT_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(moments.len as u32).to_le_bytes())?;
    let (code, n) = match moments.provenance {
        Provenance::Empirical { n } => (0u8, n),
        Provenance::Exact => (1u8, 0),
    };
    out.write_all(&[code])?;
    out.write_all(&n.to_le_bytes())?;
    write_pairs(out, moments.power.iter().map(|&p| C64::new(p, 0.0)))?;
    write_pairs(out, moments.trispectrum.data().iter().copied())
}

pub fn read_moments<R: Read>(input: &mut R) -> Result<MomentEstimates> {
    expect_header(input, MOMENT_MAGIC)?;
    let len = checked_len(read_u32(input)?)?;
    let code = read_u8(input)?;
    let n = read_u64(input)?;
    let provenance = match code {
        0 => Provenance::Empirical { n },
        1 => Provenance::Exact,
        other => return Err(MrfaError::Format(format!("unknown provenance code {other}"))),
    };
    let power = read_pairs(input, len)?.into_iter().map(|v| v.re).collect();
    let tensor = read_pairs(input, len * len * len)?;
    expect_end(input)?;
    MomentEstimates::new(power, Trispectrum::from_data(len, tensor)?, provenance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexArray2 {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl ComplexArray2 {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let rows = |f: fn(&C64) -> f64| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect())
                .collect()
        };
        Self {
            re: rows(|v| v.re),
            im: rows(|v| v.im),
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let rows = self.re.len();
        let cols = self.re.first().map_or(0, Vec::len);
        if self.im.len() != rows
            || self.re.iter().chain(&self.im).any(|r| r.len() != cols)
        {
            return Err(MrfaError::Format("ragged complex array".into()));
        }
        Ok(CMatrix::from_fn(rows, cols, |i, j| C64::new(self.re[i][j], self.im[i][j])))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentsJson {
    #[serde(rename = "L")]
    pub len: usize,
    pub provenance: Provenance,
    pub power: Vec<f64>,
    /// `trispectrum[k1][m][k2] = [re, im]`.
    pub trispectrum: Vec<Vec<Vec<[f64; 2]>>>,
}

pub fn moments_to_json(moments: &MomentEstimates) -> Result<MomentsJson> {
    let l = moments.len;
    if l > MOMENT_JSON_LIMIT {
        return Err(MrfaError::Parameter(format!(
            "JSON moment export is limited to L <= {MOMENT_JSON_LIMIT}"
        )));
    }
    let t = &moments.trispectrum;
    Ok(MomentsJson {
        len: l,
        provenance: moments.provenance,
        power: moments.power.clone(),
        trispectrum: (0..l)
            .map(|k1| {
                (0..l)
                    .map(|m| (0..l).map(|k2| { let v = t.get(k1, m, k2); [v.re, v.im] }).collect())
                    .collect()
            })
            .collect(),
    })
}

pub fn write_matrix_blocks<W: Write>(out: &mut W, blocks: &[&CMatrix]) -> Result<()> {
    let len = blocks.first().map_or(0, |b| b.nrows());
    if blocks.iter().any(|b| b.nrows() != len || b.ncols() != len) {
        return Err(MrfaError::Shape("blocks must share one square shape".into()));
    }
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(blocks.len() as u32).to_le_bytes())?;
    out.write_all(&(len as u32).to_le_bytes())?;
    for b in blocks {
        write_pairs(out, (0..len).flat_map(|i| (0..len).map(move |j| b[(i, j)])))?;
    }
    Ok(())
}

pub fn read_matrix_blocks<R: Read>(input: &mut R) -> Result<Vec<CMatrix>> {
    expect_header(input, MATRIX_MAGIC)?;
    let count = read_u32(input)? as usize;
    let len = checked_len(read_u32(input)?)?;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        blocks.push(CMatrix::from_row_slice(len, len, &read_pairs(input, len * len)?));
    }
    expect_end(input)?;
    Ok(blocks)
}

/// JSON form of a [`FactorModel`], with the time-domain covariance attached
/// for scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "L")]
    pub len: usize,
    pub r: usize,
    pub eigenvalues: Vec<f64>,
    pub factors: ComplexArray2,
    pub sigma2: f64,
    pub field: Field,
    pub shift_dist: Vec<f64>,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<ComplexArray2>,
}

impl ModelFile {
    pub fn from_model(model: &FactorModel) -> Self {
        let cov = crate::signal_model::covariance_of(model, Domain::Time);
        Self {
            len: model.len(),
            r: model.rank(),
            eigenvalues: model.eigenvalues().to_vec(),
            factors: ComplexArray2::from_matrix(model.factors()),
            sigma2: model.sigma2(),
            field: model.field(),
            shift_dist: model.shift_dist().to_vec(),
            seed: model.seed(),
            covariance: Some(ComplexArray2::from_matrix(cov.matrix())),
        }
    }

    pub fn to_model(&self) -> Result<FactorModel> {
        let factors = self.factors.to_matrix()?;
        if factors.nrows() != self.len || factors.ncols() != self.r {
            return Err(MrfaError::Format(format!(
                "factors are {}x{}, header says {}x{}",
                factors.nrows(),
                factors.ncols(),
                self.len,
                self.r
            )));
        }
        let model = FactorModel::new(
            self.eigenvalues.clone(),
            factors,
            self.sigma2,
            self.field,
            self.shift_dist.clone(),
        )?;
        Ok(match self.seed {
            Some(s) => model.with_seed(s),
            None => model,
        })
    }

    /// Stored ground-truth covariance, or the one implied by the factors.
    pub fn covariance(&self) -> Result<HermitianMatrix> {
        match &self.covariance {
            Some(c) => HermitianMatrix::new(c.to_matrix()?),
            None => Ok(crate::signal_model::covariance_of(&self.to_model()?, Domain::Time)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step1Record {
    #[serde(rename = "L")]
    pub len: usize,
    pub field: Field,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rank_one_gaps: Vec<f64>,
    pub weak_diagonals: Vec<usize>,
}

impl Step1Record {
    pub fn new(output: &Step1Output, field: Field) -> Self {
        let d = &output.diagnostics;
        Self {
            len: output.c_tilde.nrows(),
            field,
            objective: d.objective,
            iterations: d.iterations,
            converged: d.converged,
            rank_one_gaps: d.rank_one_gaps.clone(),
            weak_diagonals: d.weak_diagonals.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    #[serde(rename = "L")]
    pub len: usize,
    pub rank: usize,
    pub angles: Vec<f64>,
    pub sv_min: f64,
    pub sv_second: f64,
    pub sv_max: f64,
    pub v_magnitude_spread: f64,
    pub psd_violation: f64,
    pub condition1_warning: bool,
    pub degenerate_spectrum: bool,
    pub eigenvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment_error: Option<f64>,
}

impl SolutionRecord {
    pub fn new(solution: &PhaseSolution) -> Self {
        let d = &solution.diagnostics;
        Self {
            len: solution.sigma_estimate_time.dim(),
            rank: d.rank,
            angles: solution.angles.clone(),
            sv_min: d.sv_min,
            sv_second: d.sv_second,
            sv_max: d.sv_max,
            v_magnitude_spread: d.v_magnitude_spread,
            psd_violation: d.psd_violation,
            condition1_warning: d.condition1_warning,
            degenerate_spectrum: d.degenerate_spectrum,
            eigenvalues: solution.sigma_estimate_time.eigenvalues(),
            alignment_error: d.alignment_error,
        }
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::estimate_moments;
    use crate::signal_model::{random_model, sample_observations, to_fourier};

    #[test]
    fn observation_round_trip() {
        let model = random_model(5, 2, 0.1, Field::Complex, 3).unwrap();
        let batch = sample_observations(&model, 17, 4).unwrap();
        let mut buf = Vec::new();
        write_observations(&mut buf, &batch).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 2 + 17 * 5 * 16);
        assert_eq!(read_observations(&mut buf.as_slice()).unwrap(), batch);
    }

    #[test]
    fn truncated_dump_is_format_error() {
        let model = random_model(4, 1, 0.0, Field::Real, 3).unwrap();
        let batch = sample_observations(&model, 3, 4).unwrap();
        let mut buf = Vec::new();
        write_observations(&mut buf, &batch).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_observations(&mut buf.as_slice()), Err(MrfaError::Format(_))));
        assert!(matches!(read_observations(&mut &b"NOPE"[..]), Err(MrfaError::Format(_))));
    }

    #[test]
    fn moment_round_trip() {
        let model = random_model(4, 2, 0.0, Field::Complex, 8).unwrap();
        let batch = to_fourier(&sample_observations(&model, 50, 1).unwrap()).unwrap();
        let m = estimate_moments(&batch).unwrap();
        let mut buf = Vec::new();
        write_moments(&mut buf, &m).unwrap();
        let back = read_moments(&mut buf.as_slice()).unwrap();
        assert_eq!(back.power, m.power);
        assert_eq!(back.trispectrum, m.trispectrum);
        assert_eq!(back.provenance, m.provenance);
        assert_eq!(moments_to_json(&m).unwrap().trispectrum[1][2][3], [m.trispectrum.get(1, 2, 3).re, m.trispectrum.get(1, 2, 3).im]);
    }

    #[test]
    fn model_round_trip() {
        let model = random_model(6, 2, 0.05, Field::Real, 9).unwrap();
        let file = ModelFile::from_model(&model);
        let text = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_model().unwrap(), model);
        assert!(text.contains("\"L\":6"));
    }

    #[test]
    fn matrix_blocks_round_trip() {
        let a = CMatrix::from_fn(3, 3, |i, j| C64::new(i as f64, j as f64 * 0.5));
        let b = a.adjoint();
        let mut buf = Vec::new();
        write_matrix_blocks(&mut buf, &[&a, &b]).unwrap();
        assert_eq!(read_matrix_blocks(&mut buf.as_slice()).unwrap(), vec![a, b]);
    }
}
