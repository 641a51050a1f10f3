//! Flat parameter vectors and the handful of BLAS-1 style primitives the
//! rest of the crate is built on.
//!
//! A [`ParamVector`] is the sole representation of model state that crosses
//! module boundaries: models map it onto their layer layout, optimizers and
//! meta-updates treat it as plain vector arithmetic.

use std::ops::{Index, IndexMut};

/// Dense vector of 64-bit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// True when every entry is finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn scale(&self, s: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|x| x * s).collect())
    }

    pub fn add(&self, other: &ParamVector) -> ParamVector {
        axpy(self, 1.0, other)
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        axpy(self, -1.0, other)
    }

    pub fn norm_l2(&self) -> f64 {
        dot(self, self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Inner product `Σ a_i b_i`.
///
/// Panics on dimension mismatch; shape errors in these primitives are
/// contract violations, not recoverable conditions.
pub fn dot(a: &ParamVector, b: &ParamVector) -> f64 {
    assert_eq!(
        a.dim(),
        b.dim(),
        "dot: dimension mismatch ({} vs {})",
        a.dim(),
        b.dim()
    );
    a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum()
}

/// Returns `y + alpha * x` without modifying the inputs.
pub fn axpy(y: &ParamVector, alpha: f64, x: &ParamVector) -> ParamVector {
    assert_eq!(
        y.dim(),
        x.dim(),
        "axpy: dimension mismatch ({} vs {})",
        y.dim(),
        x.dim()
    );
    ParamVector(
        y.0.iter()
            .zip(&x.0)
            .map(|(yi, xi)| yi + alpha * xi)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_hand_examples() {
        let a = ParamVector::new(vec![1.0, 2.0]);
        let b = ParamVector::new(vec![3.0, 4.0]);
        assert_eq!(dot(&a, &b), 11.0);

        let v = ParamVector::new(vec![0.3, -1.7, 2.2]);
        assert_eq!(dot(&v, &ParamVector::zeros(3)), 0.0);

        let p = ParamVector::new(vec![1.0, 0.0, -1.0]);
        let q = ParamVector::new(vec![2.0, 5.0, 2.0]);
        assert_eq!(dot(&p, &q), 0.0);
    }

    #[test]
    fn axpy_hand_examples() {
        let y = ParamVector::new(vec![1.0, 1.0]);
        let x = ParamVector::new(vec![2.0, 4.0]);
        assert_eq!(axpy(&y, 0.5, &x).as_slice(), &[2.0, 3.0]);
        // alpha = 0 leaves y unchanged
        assert_eq!(axpy(&y, 0.0, &x), y);
        // y = 0, alpha = 1 returns x
        assert_eq!(axpy(&ParamVector::zeros(2), 1.0, &x), x);
        // inputs unmodified
        assert_eq!(y.as_slice(), &[1.0, 1.0]);
        assert_eq!(x.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn dot_dimension_mismatch_panics() {
        dot(&ParamVector::zeros(2), &ParamVector::zeros(3));
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn axpy_dimension_mismatch_panics() {
        axpy(&ParamVector::zeros(2), 1.0, &ParamVector::zeros(3));
    }

    #[test]
    fn finiteness_flag() {
        assert!(ParamVector::new(vec![1.0, -2.0]).is_finite());
        assert!(!ParamVector::new(vec![1.0, f64::NAN]).is_finite());
        assert!(!ParamVector::new(vec![f64::INFINITY]).is_finite());
    }
}
