use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `n` labelled (or unlabelled) `d1 × d2` predictor matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDataset {
    d1: usize,
    d2: usize,
    samples: Vec<DMatrix<f64>>,
    responses: Option<Vec<f64>>,
}

fn check_responses(n: usize, responses: &Option<Vec<f64>>) -> Result<()> {
    if let Some(y) = responses {
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} responses for {n} samples",
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite response".into()));
        }
    }
    Ok(())
}

impl MatrixDataset {
    pub fn new(samples: Vec<DMatrix<f64>>, responses: Option<Vec<f64>>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let (d1, d2) = first.shape();
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidInput("samples must have non-zero dimensions".into()));
        }
        for (i, x) in samples.iter().enumerate() {
            if x.shape() != (d1, d2) {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has shape {:?}, expected ({d1}, {d2})",
                    x.shape()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("sample {i} has non-finite entries")));
            }
        }
        check_responses(samples.len(), &responses)?;
        Ok(MatrixDataset { d1, d2, samples, responses })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    pub fn with_responses(mut self, responses: Option<Vec<f64>>) -> Result<Self> {
        check_responses(self.n(), &responses)?;
        self.responses = responses;
        Ok(self)
    }

    /// Applies `f` to every sample, keeping the responses.
    pub fn map_samples(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Result<Self> {
        MatrixDataset::new(self.samples.iter().map(f).collect(), self.responses.clone())
    }

    pub fn to_tensor(&self) -> TensorDataset {
        TensorDataset {
            dims: vec![self.d1, self.d2],
            samples: self.samples.iter().map(Tensor::from_matrix).collect(),
            responses: self.responses.clone(),
        }
    }
}

/// `n` order-K predictor arrays sharing `dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset {
    dims: Vec<usize>,
    samples: Vec<Tensor>,
    responses: Option<Vec<f64>>,
}

impl TensorDataset {
    pub fn new(samples: Vec<Tensor>, responses: Option<Vec<f64>>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let dims = first.dims().to_vec();
        if dims.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "tensor samples need order >= 2, got {}",
                dims.len()
            )));
        }
        for (i, x) in samples.iter().enumerate() {
            if x.dims() != dims.as_slice() {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has dims {:?}, expected {dims:?}",
                    x.dims()
                )));
            }
            if x.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("sample {i} has non-finite entries")));
            }
        }
        check_responses(samples.len(), &responses)?;
        Ok(TensorDataset { dims, samples, responses })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn samples(&self) -> &[Tensor] {
        &self.samples
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    /// The order-2 case as a [`MatrixDataset`].
    pub fn to_matrix(&self) -> Option<MatrixDataset> {
        if self.order() != 2 {
            return None;
        }
        let samples = self.samples.iter().filter_map(Tensor::to_matrix).collect();
        MatrixDataset::new(samples, self.responses.clone()).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(MatrixDataset::new(vec![], None), Err(Error::EmptyDataset)));
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 3);
        assert!(MatrixDataset::new(vec![a.clone(), b], None).is_err());
        assert!(MatrixDataset::new(vec![a.clone()], Some(vec![1.0, 2.0])).is_err());
        let mut c = a.clone();
        c[(0, 0)] = f64::NAN;
        assert!(MatrixDataset::new(vec![c], None).is_err());
        assert!(MatrixDataset::new(vec![a], Some(vec![f64::INFINITY])).is_err());
    }

    #[test]
    fn matrix_tensor_round_trip() {
        let xs = vec![
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            DMatrix::from_row_slice(2, 3, &[-1.0, 0.5, 0.0, 2.0, 1e-300, 7.0]),
        ];
        let m = MatrixDataset::new(xs, Some(vec![0.1, 0.2])).unwrap();
        let t = m.to_tensor();
        assert_eq!(t.dims(), &[2, 3]);
        assert_eq!(t.to_matrix().unwrap(), m);
    }
}
