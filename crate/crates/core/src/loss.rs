//! The differentiable-loss interface and its verification oracles.
//!
//! Everything the inner loop, the meta-algorithms, and the expansion
//! estimators consume is a [`DifferentiableLoss`]: a scalar value with an
//! analytic gradient and Hessian-vector product over a flat [`ParamVector`].
//!
//! Two oracle families live here as well. [`QuadraticLoss`] has closed-form
//! derivatives and zero third derivatives, so every Taylor-structure check
//! against it is exact rather than approximate. [`fd_grad`] / [`fd_hvp`] are
//! the central-finite-difference routes used to validate analytic gradients
//! and HVPs; they intentionally share no code with the implementations they
//! check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::vector::ParamVector;

/// Default step for finite-difference gradient checks.
pub const FD_GRAD_H: f64 = 1e-5;
/// Default step for finite differences through multi-step updates.
pub const FD_THROUGH_UPDATE_H: f64 = 1e-4;

/// A scalar loss with analytic first- and second-order access.
pub trait DifferentiableLoss: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, phi: &ParamVector) -> f64;
    fn grad(&self, phi: &ParamVector) -> ParamVector;
    /// Hessian-vector product `L''(phi) v`.
    fn hvp(&self, phi: &ParamVector, v: &ParamVector) -> ParamVector;
}

impl DifferentiableLoss for Box<dyn DifferentiableLoss> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, phi: &ParamVector) -> f64 {
        (**self).value(phi)
    }
    fn grad(&self, phi: &ParamVector) -> ParamVector {
        (**self).grad(phi)
    }
    fn hvp(&self, phi: &ParamVector, v: &ParamVector) -> ParamVector {
        (**self).hvp(phi, v)
    }
}

/// `L(phi) = 1/2 (phi - c)^T A (phi - c)` with `A` symmetric PSD.
///
/// Gradient and HVP are exact: `A(phi - c)` and `Av`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

impl QuadraticLoss {
    /// Builds the loss, rejecting matrices that are not symmetric within
    /// `1e-12` (max absolute entry of `A - A^T`).
    pub fn new(a: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != c.len() {
            return Err(Error::InvalidConfig(format!(
                "quadratic loss shapes: A is {}x{}, c has {}",
                a.nrows(),
                a.ncols(),
                c.len()
            )));
        }
        let max_asym = (&a - a.transpose()).abs().max();
        if max_asym > 1e-12 {
            return Err(Error::NotSymmetric {
                tol: 1e-12,
                max: max_asym,
            });
        }
        Ok(QuadraticLoss { a, c })
    }

    /// 1-D convenience: `1/2 a (phi - c)^2`.
    pub fn scalar(a: f64, c: f64) -> Self {
        QuadraticLoss {
            a: DMatrix::from_element(1, 1, a),
            c: DVector::from_element(1, c),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.c
    }
}

/// Exact gradient `A(phi - c)` of a quadratic loss.
pub fn quadratic_grad(loss: &QuadraticLoss, phi: &ParamVector) -> ParamVector {
    loss.grad(phi)
}

impl DifferentiableLoss for QuadraticLoss {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, phi: &ParamVector) -> f64 {
        let d = DVector::from_column_slice(phi.as_slice()) - &self.c;
        0.5 * (&self.a * &d).dot(&d)
    }

    fn grad(&self, phi: &ParamVector) -> ParamVector {
        let d = DVector::from_column_slice(phi.as_slice()) - &self.c;
        ParamVector::new((&self.a * d).data.into())
    }

    fn hvp(&self, _phi: &ParamVector, v: &ParamVector) -> ParamVector {
        let v = DVector::from_column_slice(v.as_slice());
        ParamVector::new((&self.a * v).data.into())
    }
}

/// Mean of several losses over the same parameter space.
///
/// Matches the models' mean-over-batch reduction, so a "minibatch" of
/// quadratic tasks composes the same way an MLP minibatch does.
pub struct MeanLoss<L> {
    terms: Vec<L>,
}

impl<L: DifferentiableLoss> MeanLoss<L> {
    pub fn new(terms: Vec<L>) -> Self {
        assert!(!terms.is_empty(), "MeanLoss needs at least one term");
        MeanLoss { terms }
    }
}

impl<L: DifferentiableLoss> DifferentiableLoss for MeanLoss<L> {
    fn dim(&self) -> usize {
        self.terms[0].dim()
    }

    fn value(&self, phi: &ParamVector) -> f64 {
        let s: f64 = self.terms.iter().map(|t| t.value(phi)).sum();
        s / self.terms.len() as f64
    }

    fn grad(&self, phi: &ParamVector) -> ParamVector {
        let mut acc = ParamVector::zeros(self.dim());
        for t in &self.terms {
            acc = crate::vector::axpy(&acc, 1.0, &t.grad(phi));
        }
        acc.scale(1.0 / self.terms.len() as f64)
    }

    fn hvp(&self, phi: &ParamVector, v: &ParamVector) -> ParamVector {
        let mut acc = ParamVector::zeros(self.dim());
        for t in &self.terms {
            acc = crate::vector::axpy(&acc, 1.0, &t.hvp(phi, v));
        }
        acc.scale(1.0 / self.terms.len() as f64)
    }
}

/// Central-difference gradient oracle: `(L(phi + h e_i) - L(phi - h e_i)) / 2h`
/// per coordinate.
pub fn fd_grad(loss: &dyn DifferentiableLoss, phi: &ParamVector, h: f64) -> Result<ParamVector> {
    assert!(h > 0.0, "fd_grad: h must be positive");
    let mut out = ParamVector::zeros(phi.dim());
    let mut probe = phi.clone();
    for i in 0..phi.dim() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = loss.value(&probe);
        probe[i] = orig - h;
        let down = loss.value(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::OracleFailure(format!(
                "loss value non-finite while probing coordinate {i}"
            )));
        }
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Central-difference HVP oracle: `(grad(phi + h v) - grad(phi - h v)) / 2h`.
pub fn fd_hvp(
    loss: &dyn DifferentiableLoss,
    phi: &ParamVector,
    v: &ParamVector,
    h: f64,
) -> Result<ParamVector> {
    assert!(h > 0.0, "fd_hvp: h must be positive");
    assert_eq!(phi.dim(), v.dim(), "fd_hvp: dimension mismatch");
    let up = loss.grad(&crate::vector::axpy(phi, h, v));
    let down = loss.grad(&crate::vector::axpy(phi, -h, v));
    if !up.is_finite() || !down.is_finite() {
        return Err(Error::OracleFailure(
            "gradient non-finite while probing along v".into(),
        ));
    }
    Ok(up.sub(&down).scale(1.0 / (2.0 * h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_pair() -> (QuadraticLoss, QuadraticLoss) {
        (QuadraticLoss::scalar(1.0, 1.0), QuadraticLoss::scalar(1.0, 3.0))
    }

    #[test]
    fn quadratic_grad_examples() {
        let (l1, _) = scalar_pair();
        let phi = ParamVector::new(vec![0.0]);
        assert_eq!(quadratic_grad(&l1, &phi).as_slice(), &[-1.0]);
        // at the center the gradient vanishes
        assert_eq!(
            quadratic_grad(&l1, &ParamVector::new(vec![1.0])).as_slice(),
            &[0.0]
        );

        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let l = QuadraticLoss::new(a, DVector::zeros(2)).unwrap();
        assert_eq!(
            quadratic_grad(&l, &ParamVector::new(vec![1.0, 1.0])).as_slice(),
            &[2.0, 1.0]
        );
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            QuadraticLoss::new(a, DVector::zeros(2)),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn fd_grad_matches_closed_forms() {
        let (l1, _) = scalar_pair();
        let phi = ParamVector::new(vec![0.0]);
        let g = fd_grad(&l1, &phi, 1e-4).unwrap();
        assert_abs_diff_eq!(g[0], -1.0, epsilon = 1e-8);

        // L = 1/2 phi^2 at phi = 3
        let l = QuadraticLoss::scalar(1.0, 0.0);
        let g = fd_grad(&l, &ParamVector::new(vec![3.0]), 1e-4).unwrap();
        assert_abs_diff_eq!(g[0], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn fd_grad_of_constant_loss_is_zero() {
        struct Constant;
        impl DifferentiableLoss for Constant {
            fn dim(&self) -> usize {
                3
            }
            fn value(&self, _: &ParamVector) -> f64 {
                7.5
            }
            fn grad(&self, _: &ParamVector) -> ParamVector {
                ParamVector::zeros(3)
            }
            fn hvp(&self, _: &ParamVector, _: &ParamVector) -> ParamVector {
                ParamVector::zeros(3)
            }
        }
        let g = fd_grad(&Constant, &ParamVector::new(vec![0.4, -2.0, 1.0]), 1e-4).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn fd_grad_reports_non_finite_loss() {
        struct Bad;
        impl DifferentiableLoss for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, _: &ParamVector) -> f64 {
                f64::NAN
            }
            fn grad(&self, _: &ParamVector) -> ParamVector {
                ParamVector::zeros(1)
            }
            fn hvp(&self, _: &ParamVector, _: &ParamVector) -> ParamVector {
                ParamVector::zeros(1)
            }
        }
        assert!(matches!(
            fd_grad(&Bad, &ParamVector::zeros(1), 1e-4),
            Err(Error::OracleFailure(_))
        ));
    }

    #[test]
    fn fd_hvp_matches_closed_forms() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let l = QuadraticLoss::new(a, DVector::zeros(2)).unwrap();
        let phi = ParamVector::new(vec![0.7, -0.3]);
        let v = ParamVector::new(vec![1.0, 1.0]);
        let hv = fd_hvp(&l, &phi, &v, 1e-4).unwrap();
        assert_abs_diff_eq!(hv[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(hv[1], 1.0, epsilon = 1e-8);

        // v = 0 gives the zero vector
        let hv = fd_hvp(&l, &phi, &ParamVector::zeros(2), 1e-4).unwrap();
        assert_eq!(hv.as_slice(), &[0.0, 0.0]);

        // identity Hessian returns v
        let id = QuadraticLoss::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let v = ParamVector::new(vec![0.2, -1.4]);
        let hv = fd_hvp(&id, &phi, &v, 1e-4).unwrap();
        assert_abs_diff_eq!(hv[0], v[0], epsilon = 1e-8);
        assert_abs_diff_eq!(hv[1], v[1], epsilon = 1e-8);
    }

    #[test]
    fn mean_loss_composes() {
        let (l1, l2) = scalar_pair();
        let mean = MeanLoss::new(vec![l1, l2]);
        let phi = ParamVector::new(vec![0.0]);
        // mean of 1/2(0-1)^2 and 1/2(0-3)^2 = (0.5 + 4.5) / 2
        assert_eq!(mean.value(&phi), 2.5);
        assert_eq!(mean.grad(&phi).as_slice(), &[-2.0]);
        assert_eq!(
            mean.hvp(&phi, &ParamVector::new(vec![1.0])).as_slice(),
            &[1.0]
        );
    }
}
