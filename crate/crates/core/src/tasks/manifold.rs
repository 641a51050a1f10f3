//! Affine solution manifolds and the squared-distance interpretation of the
//! meta-update.
//!
//! A task is a manifold `W = { phi : M phi = q }` with full-row-rank `M`.
//! Iterating `phi <- (1 - eps) phi + eps P_W(phi)` over sampled tasks is SGD
//! on the expected half squared distance to the manifolds; the closed-form
//! minimizer of that objective is the oracle the iterates are checked
//! against.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::optim::OuterSchedule;
use crate::vector::ParamVector;

#[derive(Debug, Clone)]
pub struct AffineManifoldTask {
    m: DMatrix<f64>,
    q: DVector<f64>,
    /// Cholesky factor of `M M^T`.
    gram: Cholesky<f64, nalgebra::Dyn>,
}

impl AffineManifoldTask {
    /// Builds the task, rejecting rank-deficient constraint matrices (the
    /// Gram matrix `M M^T` must be positive definite).
    pub fn new(m: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() > m.ncols() || m.nrows() != q.len() {
            return Err(Error::InvalidConfig(format!(
                "constraint matrix is {}x{} with rhs {}",
                m.nrows(),
                m.ncols(),
                q.len()
            )));
        }
        let gram = Cholesky::new(&m * m.transpose()).ok_or(Error::RankDeficient)?;
        Ok(AffineManifoldTask { m, q, gram })
    }

    /// Hyperplane `{ phi : <normal, phi> = offset }`.
    pub fn hyperplane(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let d = normal.len();
        Self::new(
            DMatrix::from_row_slice(1, d, &normal),
            DVector::from_element(1, offset),
        )
    }

    pub fn ambient_dim(&self) -> usize {
        self.m.ncols()
    }

    /// Orthogonal projection `phi - M^T (M M^T)^{-1} (M phi - q)`.
    pub fn project(&self, phi: &ParamVector) -> ParamVector {
        let x = DVector::from_column_slice(phi.as_slice());
        let residual = &self.m * &x - &self.q;
        let u = self.gram.solve(&residual);
        let projected = x - self.m.transpose() * u;
        ParamVector::new(projected.data.into())
    }

    pub fn distance(&self, phi: &ParamVector) -> f64 {
        phi.sub(&self.project(phi)).norm_l2()
    }

    /// `N = M^T (M M^T)^{-1} M`, the orthogonal projector onto the normal
    /// space of the manifold.
    pub fn normal_projector(&self) -> DMatrix<f64> {
        let mt = self.m.transpose();
        let inv_gram = self
            .gram
            .solve(&DMatrix::identity(self.m.nrows(), self.m.nrows()));
        &mt * inv_gram * &self.m
    }

    /// Minimum-norm point on the manifold.
    pub fn min_norm_point(&self) -> DVector<f64> {
        self.m.transpose() * self.gram.solve(&self.q)
    }
}

/// Projection onto the manifold (closest point).
pub fn manifold_project(task: &AffineManifoldTask, phi: &ParamVector) -> ParamVector {
    task.project(phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskOrder {
    /// Visit the manifolds round-robin.
    Alternating,
}

/// Runs `iters` updates `phi <- (1 - eps) phi + eps P(phi)` and returns the
/// iterate trace (`iters + 1` entries including the start).
pub fn manifold_sgd_iterate(
    phi0: &ParamVector,
    tasks: &[AffineManifoldTask],
    order: TaskOrder,
    schedule: &OuterSchedule,
    iters: usize,
) -> Vec<ParamVector> {
    assert!(!tasks.is_empty());
    assert!(iters <= schedule.total_iters, "schedule too short");
    let TaskOrder::Alternating = order;
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(phi0.clone());
    let mut phi = phi0.clone();
    for i in 0..iters {
        let eps = schedule.epsilon(i);
        let task = &tasks[i % tasks.len()];
        let projected = task.project(&phi);
        phi = crate::vector::axpy(&phi.scale(1.0 - eps), eps, &projected);
        trace.push(phi.clone());
    }
    trace
}

/// Closed-form minimizer of `sum_t p_t 1/2 ||phi - P_t(phi)||^2`.
///
/// Solves `(sum p N_t) phi = sum p N_t c_t`. When the system is singular
/// (parallel manifolds, or a single manifold) the minimum-norm solution is
/// returned with the `degenerate` flag set.
pub struct FixedPointOracle {
    pub point: ParamVector,
    pub degenerate: bool,
}

pub fn manifold_fixed_point_oracle(
    tasks: &[AffineManifoldTask],
    probs: &[f64],
) -> Result<FixedPointOracle> {
    if tasks.is_empty() || tasks.len() != probs.len() {
        return Err(Error::InvalidConfig(
            "need one probability per manifold task".into(),
        ));
    }
    let d = tasks[0].ambient_dim();
    if tasks.iter().any(|t| t.ambient_dim() != d) {
        return Err(Error::InvalidConfig("ambient dimensions differ".into()));
    }
    let mut system = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (task, &p) in tasks.iter().zip(probs) {
        let n = task.normal_projector();
        rhs += p * (&n * task.min_norm_point());
        system += p * n;
    }
    let svd = system.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-10 * max_sv.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let solution = svd
        .pseudo_inverse(tol)
        .map_err(|_| Error::RankDeficient)?
        * rhs;
    Ok(FixedPointOracle {
        point: ParamVector::new(solution.data.into()),
        degenerate: rank < d,
    })
}
