//! On-disk formats.
//!
//! * MDS1 datasets: one JSON header line
//!   `{"format":"MDS1","n":…,"dims":[…],"dtype":"f64le","has_response":…}`,
//!   then `n·∏dims` little-endian `f64` values (sample-major, row-major within
//!   a sample), then `n` responses if present.
//! * CSV datasets: header `y,x_1_1,x_1_2,…` with predictor columns in
//!   row-major order; `y` may be omitted.
//! * Estimate JSON, reduced-feature CSV and covariance JSON written by the CLI.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{MatrixDataset, TensorDataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::matnorm::MatNormParams;
use crate::pipeline::{PsmmConfig, ReducedFeatures, SliceSummary, SubspaceEstimate, TensorSubspaceEstimate};
use crate::tensor::Tensor;

pub const MDS1_FORMAT: &str = "MDS1";
pub const MDS1_DTYPE: &str = "f64le";
pub const ESTIMATE_FORMAT_VERSION: u32 = 1;
const MAX_HEADER_BYTES: u64 = 1 << 16;
/// Orthonormality required of bases read back from an estimate file.
const BASIS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mds1Header {
    pub format: String,
    pub n: usize,
    pub dims: Vec<usize>,
    pub dtype: String,
    pub has_response: bool,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_mds1<W: Write>(mut out: W, data: &TensorDataset) -> Result<()> {
    let header = Mds1Header {
        format: MDS1_FORMAT.into(),
        n: data.n(),
        dims: data.dims().to_vec(),
        dtype: MDS1_DTYPE.into(),
        has_response: data.responses().is_some(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(8 * data.n() * (data.samples()[0].len() + 1));
    for x in data.samples() {
        for v in x.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in data.responses().unwrap_or(&[]) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn write_mds1_matrix<W: Write>(out: W, data: &MatrixDataset) -> Result<()> {
    write_mds1(out, &data.to_tensor())
}

pub fn read_mds1<R: Read>(input: R) -> Result<TensorDataset> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    (&mut reader).take(MAX_HEADER_BYTES).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(format_err("MDS1 header line is missing or unterminated"));
    }
    let header: Mds1Header =
        serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| format_err(format!("bad MDS1 header: {e}")))?;
    if header.format != MDS1_FORMAT {
        return Err(format_err(format!("format is {:?}, expected \"MDS1\"", header.format)));
    }
    if header.dtype != MDS1_DTYPE {
        return Err(format_err(format!("dtype is {:?}, expected \"f64le\"", header.dtype)));
    }
    if header.dims.len() < 2 || header.dims.contains(&0) {
        return Err(format_err(format!("dims {:?} must have length >= 2 and positive entries", header.dims)));
    }
    if header.n == 0 {
        return Err(Error::EmptyDataset);
    }
    let size: usize = header.dims.iter().product();
    let values = header
        .n
        .checked_mul(size + usize::from(header.has_response))
        .and_then(|v| v.checked_mul(8).map(|_| v))
        .ok_or_else(|| format_err("MDS1 payload size overflows"))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != 8 * values {
        return Err(format_err(format!(
            "MDS1 payload has {} bytes, header implies {}",
            payload.len(),
            8 * values
        )));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let samples = floats[..header.n * size]
        .chunks_exact(size)
        .map(|c| Tensor::new(header.dims.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let responses = header.has_response.then(|| floats[header.n * size..].to_vec());
    TensorDataset::new(samples, responses)
}

fn parse_x_column(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("x_")?;
    let (i, j) = rest.split_once('_')?;
    Some((i.parse().ok()?, j.parse().ok()?))
}

/// Reads the CSV dataset format (matrix predictors only).
pub fn read_csv_dataset<R: Read>(input: R) -> Result<MatrixDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let mut cols: Vec<&str> = headers.iter().collect();
    let has_response = cols.first() == Some(&"y");
    if has_response {
        cols.remove(0);
    }
    let offset = usize::from(has_response);
    let positions = cols
        .iter()
        .map(|c| parse_x_column(c).ok_or_else(|| format_err(format!("unexpected CSV column {c:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let d1 = positions.iter().map(|p| p.0).max().ok_or_else(|| format_err("CSV has no predictor columns"))?;
    let d2 = positions.iter().map(|p| p.1).max().unwrap_or(0);
    if d1 == 0 || d2 == 0 || positions.len() != d1 * d2 {
        return Err(format_err("CSV predictor columns must be x_i_j for every 1 <= i <= d1, 1 <= j <= d2"));
    }
    for (k, &(i, j)) in positions.iter().enumerate() {
        if (i - 1) * d2 + (j - 1) != k {
            return Err(format_err(format!("CSV column x_{i}_{j} is out of row-major order")));
        }
    }
    let mut samples = Vec::new();
    let mut responses = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| format_err(format!("row {}: cannot parse {s:?} as a number", line + 1)))
        };
        if has_response {
            responses.push(parse(&record[0])?);
        }
        let values = (0..d1 * d2).map(|k| parse(&record[k + offset])).collect::<Result<Vec<f64>>>()?;
        samples.push(DMatrix::from_row_slice(d1, d2, &values));
    }
    MatrixDataset::new(samples, has_response.then_some(responses))
}

pub fn write_csv_dataset<W: Write>(out: W, data: &MatrixDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = Vec::new();
    if data.responses().is_some() {
        header.push("y".to_string());
    }
    for i in 1..=data.d1() {
        for j in 1..=data.d2() {
            header.push(format!("x_{i}_{j}"));
        }
    }
    w.write_record(&header)?;
    for (k, x) in data.samples().iter().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        if let Some(y) = data.responses() {
            rec.push(y[k].to_string());
        }
        for i in 0..data.d1() {
            for j in 0..data.d2() {
                rec.push(x[(i, j)].to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads either format, telling them apart by the first byte (`{` for MDS1).
pub fn read_dataset(bytes: &[u8]) -> Result<TensorDataset> {
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        None => Err(Error::EmptyDataset),
        Some(b'{') => read_mds1(bytes),
        Some(_) => Ok(read_csv_dataset(bytes)?.to_tensor()),
    }
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_columns(cols: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let d = cols.first().map(Vec::len).ok_or_else(|| format_err(format!("{what} has no columns")))?;
    if d == 0 || cols.iter().any(|c| c.len() != d) {
        return Err(format_err(format!("{what} columns must be non-empty and of equal length")));
    }
    let flat: Vec<f64> = cols.iter().flatten().copied().collect();
    let m = DMatrix::from_column_slice(d, cols.len(), &flat);
    if linalg::orthonormality_error(&m) > BASIS_TOL {
        return Err(format_err(format!("{what} is not orthonormal")));
    }
    Ok(m)
}

/// Estimate file contents; matrix fits fill the row/column fields, tensor
/// fits fill `mode_bases` and `eigvals_modes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_basis: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col_basis: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigvals_row: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigvals_col: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_bases: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigvals_modes: Option<Vec<Vec<f64>>>,
    pub selected_dims: Vec<usize>,
    #[serde(default)]
    pub symmetric: bool,
    pub config: PsmmConfig,
    pub convergence: Vec<SliceSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    Matrix(SubspaceEstimate),
    Tensor(TensorSubspaceEstimate),
}

impl EstimateFile {
    pub fn from_matrix(est: &SubspaceEstimate) -> Self {
        EstimateFile {
            format_version: ESTIMATE_FORMAT_VERSION,
            row_basis: Some(columns(&est.row_basis)),
            col_basis: Some(columns(&est.col_basis)),
            eigvals_row: Some(est.eigvals_row.clone()),
            eigvals_col: Some(est.eigvals_col.clone()),
            mode_bases: None,
            eigvals_modes: None,
            selected_dims: vec![est.selected.0, est.selected.1],
            symmetric: est.symmetric,
            config: est.config.clone(),
            convergence: est.convergence.clone(),
        }
    }

    pub fn from_tensor(est: &TensorSubspaceEstimate) -> Self {
        EstimateFile {
            format_version: ESTIMATE_FORMAT_VERSION,
            row_basis: None,
            col_basis: None,
            eigvals_row: None,
            eigvals_col: None,
            mode_bases: Some(est.mode_bases.iter().map(columns).collect()),
            eigvals_modes: Some(est.eigvals.clone()),
            selected_dims: est.selected.clone(),
            symmetric: false,
            config: est.config.clone(),
            convergence: est.convergence.clone(),
        }
    }

    pub fn into_estimate(self) -> Result<Estimate> {
        if self.format_version != ESTIMATE_FORMAT_VERSION {
            return Err(format_err(format!("unsupported estimate format_version {}", self.format_version)));
        }
        if let Some(modes) = self.mode_bases {
            let mode_bases = modes
                .iter()
                .enumerate()
                .map(|(k, b)| from_columns(b, &format!("mode {} basis", k + 1)))
                .collect::<Result<Vec<_>>>()?;
            let selected: Vec<usize> = mode_bases.iter().map(|b| b.ncols()).collect();
            if selected != self.selected_dims {
                return Err(format_err("selected_dims disagree with the mode bases"));
            }
            return Ok(Estimate::Tensor(TensorSubspaceEstimate {
                mode_bases,
                eigvals: self.eigvals_modes.unwrap_or_default(),
                selected,
                config: self.config,
                convergence: self.convergence,
            }));
        }
        let row = from_columns(self.row_basis.as_deref().unwrap_or(&[]), "row_basis")?;
        let col = from_columns(self.col_basis.as_deref().unwrap_or(&[]), "col_basis")?;
        if self.selected_dims != [row.ncols(), col.ncols()] {
            return Err(format_err("selected_dims disagree with the bases"));
        }
        Ok(Estimate::Matrix(SubspaceEstimate {
            selected: (row.ncols(), col.ncols()),
            row_basis: row,
            col_basis: col,
            eigvals_row: self.eigvals_row.unwrap_or_default(),
            eigvals_col: self.eigvals_col.unwrap_or_default(),
            symmetric: self.symmetric,
            config: self.config,
            convergence: self.convergence,
        }))
    }
}

pub fn write_estimate<W: Write>(mut out: W, est: &Estimate) -> Result<()> {
    let file = match est {
        Estimate::Matrix(m) => EstimateFile::from_matrix(m),
        Estimate::Tensor(t) => EstimateFile::from_tensor(t),
    };
    serde_json::to_writer_pretty(&mut out, &file)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_estimate<R: Read>(input: R) -> Result<Estimate> {
    let file: EstimateFile = serde_json::from_reader(input).map_err(|e| format_err(format!("bad estimate file: {e}")))?;
    file.into_estimate()
}

fn index_names(dims: &[usize]) -> Vec<String> {
    let total: usize = dims.iter().product();
    let mut idx = vec![0usize; dims.len()];
    let mut names = Vec::with_capacity(total);
    for _ in 0..total {
        let parts: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
        names.push(format!("v_{}", parts.join("_")));
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    names
}

/// Reduced coordinates as CSV: `sample_index`, then `v_i_j` in row-major
/// order, then `v1,v2,v3` for symmetric rank-2 estimates.
pub fn write_reduced_csv<W: Write>(out: W, reduced: &ReducedFeatures) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (r1, r2) = reduced.coordinates.first().map(|m| m.shape()).unwrap_or((0, 0));
    let mut header = vec!["sample_index".to_string()];
    header.extend(index_names(&[r1, r2]));
    if reduced.symmetric_triples.is_some() {
        header.extend(["v1", "v2", "v3"].map(String::from));
    }
    w.write_record(&header)?;
    for (k, m) in reduced.coordinates.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        for i in 0..r1 {
            for j in 0..r2 {
                rec.push(m[(i, j)].to_string());
            }
        }
        if let Some(t) = &reduced.symmetric_triples {
            rec.extend(t[k].iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Tensor cores as CSV with columns `v_i_j_k…` in row-major order.
pub fn write_reduced_tensor_csv<W: Write>(out: W, cores: &[Tensor]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dims = cores.first().map(|t| t.dims().to_vec()).unwrap_or_default();
    let mut header = vec!["sample_index".to_string()];
    header.extend(index_names(&dims));
    w.write_record(&header)?;
    for (k, t) in cores.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(t.data().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Flip-flop output; matrices are arrays of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovFile {
    pub mean: Vec<Vec<f64>>,
    pub sigma_row: Vec<Vec<f64>>,
    pub sigma_col: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl CovFile {
    pub fn from_params(p: &MatNormParams) -> Self {
        CovFile {
            mean: rows(&p.mean),
            sigma_row: rows(&p.sigma_row),
            sigma_col: rows(&p.sigma_col),
            iterations: p.iterations,
            converged: p.converged,
        }
    }
}

pub fn write_cov<W: Write>(mut out: W, p: &MatNormParams) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &CovFile::from_params(p))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// True bases of a simulated instance, as column arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub model: u32,
    pub row_basis: Vec<Vec<f64>>,
    pub col_basis: Vec<Vec<f64>>,
}

impl TruthFile {
    pub fn new(model: u32, row: &DMatrix<f64>, col: &DMatrix<f64>) -> Self {
        TruthFile { model, row_basis: columns(row), col_basis: columns(col) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_data(with_y: bool) -> MatrixDataset {
        let xs = vec![
            DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.25, 0.1, 1e-300, -0.0]),
            DMatrix::from_row_slice(2, 3, &[f64::MAX, 2.0, 3.0, 4.0, 5.0, 6.0 / 7.0]),
        ];
        MatrixDataset::new(xs, with_y.then(|| vec![0.3, -1.0 / 3.0])).unwrap()
    }

    #[test]
    fn mds1_round_trip_is_bitwise() {
        for with_y in [true, false] {
            let data = sample_data(with_y);
            let mut buf = Vec::new();
            write_mds1_matrix(&mut buf, &data).unwrap();
            let back = read_mds1(buf.as_slice()).unwrap().to_matrix().unwrap();
            for (a, b) in data.samples().iter().zip(back.samples()) {
                assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(data.responses(), back.responses());
        }
    }

    #[test]
    fn mds1_length_arithmetic() {
        let data = sample_data(true);
        let mut buf = Vec::new();
        write_mds1_matrix(&mut buf, &data).unwrap();
        let header_len = buf.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(buf.len(), header_len + 8 * 2 * (6 + 1));
        assert!(read_mds1(&buf[..buf.len() - 1]).is_err());
        let text = String::from_utf8(buf[..header_len].to_vec()).unwrap();
        assert_eq!(text, "{\"format\":\"MDS1\",\"n\":2,\"dims\":[2,3],\"dtype\":\"f64le\",\"has_response\":true}\n");
    }

    #[test]
    fn mds1_rejects_bad_headers() {
        for h in [
            "{\"format\":\"MDS2\",\"n\":1,\"dims\":[1,1],\"dtype\":\"f64le\",\"has_response\":false}\n",
            "{\"format\":\"MDS1\",\"n\":1,\"dims\":[1],\"dtype\":\"f64le\",\"has_response\":false}\n",
            "{\"format\":\"MDS1\",\"n\":1,\"dims\":[1,1],\"dtype\":\"f32le\",\"has_response\":false}\n",
            "{\"format\":\"MDS1\"",
        ] {
            let mut bytes = h.as_bytes().to_vec();
            bytes.extend_from_slice(&1.0f64.to_le_bytes());
            assert!(read_mds1(bytes.as_slice()).is_err(), "{h}");
        }
        let empty = "{\"format\":\"MDS1\",\"n\":0,\"dims\":[1,1],\"dtype\":\"f64le\",\"has_response\":false}\n";
        assert!(matches!(read_mds1(empty.as_bytes()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn csv_round_trip_matches_mds1() {
        let data = sample_data(true);
        let mut buf = Vec::new();
        write_csv_dataset(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,x_1_1,x_1_2,x_1_3,x_2_1,x_2_2,x_2_3\n"));
        let back = read_dataset(&buf).unwrap().to_matrix().unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_rejects_bad_columns() {
        assert!(read_csv_dataset("y,x_1_2,x_1_1\n1,2,3\n".as_bytes()).is_err());
        assert!(read_csv_dataset("y,x_1_1,z\n1,2,3\n".as_bytes()).is_err());
        assert!(read_csv_dataset("y,x_1_1\n1,abc\n".as_bytes()).is_err());
        let d = read_csv_dataset("x_1_1,x_1_2\n1,2\n3,4\n".as_bytes()).unwrap();
        assert!(d.responses().is_none());
        assert_eq!((d.n(), d.d1(), d.d2()), (2, 1, 2));
    }

    #[test]
    fn estimate_json_round_trip() {
        let est = SubspaceEstimate {
            row_basis: linalg::orthonormalize(&DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 2.0])).unwrap(),
            col_basis: DMatrix::identity(2, 2),
            eigvals_row: vec![3.0, 0.1, 0.0],
            eigvals_col: vec![1.0, 0.5],
            selected: (1, 2),
            symmetric: false,
            config: PsmmConfig::default(),
            convergence: vec![SliceSummary { slice: 1, iterations: 4, converged: true, objective: 1.5, qp_failures: 0 }],
        };
        let mut buf = Vec::new();
        write_estimate(&mut buf, &Estimate::Matrix(est.clone())).unwrap();
        assert_eq!(read_estimate(buf.as_slice()).unwrap(), Estimate::Matrix(est));
    }

    #[test]
    fn estimate_rejects_non_orthonormal_basis() {
        let mut file = EstimateFile::from_matrix(&SubspaceEstimate {
            row_basis: DMatrix::identity(2, 1),
            col_basis: DMatrix::identity(2, 1),
            eigvals_row: vec![],
            eigvals_col: vec![],
            selected: (1, 1),
            symmetric: false,
            config: PsmmConfig::default(),
            convergence: vec![],
        });
        file.row_basis = Some(vec![vec![1.0, 1.0]]);
        assert!(file.into_estimate().is_err());
    }

    #[test]
    fn reduced_csv_layout() {
        let reduced = ReducedFeatures {
            coordinates: vec![DMatrix::from_row_slice(1, 2, &[1.0, 2.5])],
            symmetric_triples: Some(vec![[1.0, 3.0, 2.0]]),
        };
        let mut buf = Vec::new();
        write_reduced_csv(&mut buf, &reduced).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sample_index,v_1_1,v_1_2,v1,v2,v3\n0,1,2.5,1,3,2\n");
    }
}
