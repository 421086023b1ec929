use std::fmt;

use crate::error::{ensure, Result};

/// Dense row-major `f32` array.
///
/// Shapes are explicit: no op in this crate broadcasts except scalar
/// scaling and the last-axis bias add.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ensure!(
            numel == data.len(),
            ShapeMismatch,
            "shape {:?} holds {} values, got {}",
            shape,
            numel,
            data.len()
        );
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f32) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        ensure!(rows.iter().all(|r| r.len() == cols), ShapeMismatch, "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(&[rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        ensure!(self.data.len() == 1, ShapeMismatch, "item() on shape {:?}", self.shape);
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        ensure!(
            self.shape == other.shape,
            ShapeMismatch,
            "{:?} vs {:?}",
            self.shape,
            other.shape
        );
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f32) -> Self {
        self.map(|x| x * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&x| x as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len().max(1) as f64
    }

    /// Population standard deviation over every element, accumulated in f64.
    pub fn std(&self) -> f64 {
        let n = self.data.len().max(1) as f64;
        let mean = self.mean();
        let var = self.data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        var.sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        ensure!(self.shape == other.shape, ShapeMismatch, "{:?} vs {:?}", self.shape, other.shape);
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Number of elements in one slice along axis 0.
    fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Sub-tensor `self[start..end]` along the leading axis.
    pub fn slice_axis0(&self, start: usize, end: usize) -> Result<Self> {
        ensure!(self.rank() >= 1, InvalidShape, "slice on scalar");
        ensure!(
            start <= end && end <= self.shape[0],
            OutOfRange,
            "slice {}..{} of axis with extent {}",
            start,
            end,
            self.shape[0]
        );
        let row = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self { shape, data: self.data[start * row..end * row].to_vec() })
    }

    /// Gathers slices along the leading axis; indices may repeat.
    pub fn select_axis0(&self, indices: &[usize]) -> Result<Self> {
        ensure!(self.rank() >= 1, InvalidShape, "select on scalar");
        let row = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            ensure!(i < self.shape[0], OutOfRange, "index {} >= {}", i, self.shape[0]);
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Self { shape, data })
    }

    pub fn concat_axis0(parts: &[&Tensor]) -> Result<Self> {
        ensure!(!parts.is_empty(), InvalidShape, "concat of nothing");
        let tail = &parts[0].shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            ensure!(
                p.rank() >= 1 && &p.shape[1..] == tail,
                ShapeMismatch,
                "concat {:?} with {:?}",
                parts[0].shape,
                p.shape
            );
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = parts[0].shape.clone();
        shape[0] = lead;
        Ok(Self { shape, data })
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        super::kernels::permute(self, axes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap().numel(), 6);
    }

    #[test]
    fn select_repeats_rows() {
        let t = Tensor::new(&[3, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let s = t.select_axis0(&[0, 2, 2]).unwrap();
        assert_eq!(s.data(), &[0., 1., 4., 5., 4., 5.]);
        assert!(t.select_axis0(&[3]).is_err());
    }

    #[test]
    fn std_is_population() {
        let t = Tensor::new(&[4], vec![1., 2., 3., 4.]).unwrap();
        assert!((t.std() - 1.25f64.sqrt()).abs() < 1e-12);
    }
}
