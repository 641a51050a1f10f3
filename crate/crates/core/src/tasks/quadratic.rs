//! Quadratic task families.
//!
//! Quadratics have zero third derivatives, so every Taylor-structure
//! statement about the inner loop is exact on them instead of approximate.
//! They serve as the exactness oracle for the meta-gradient and expansion
//! checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::loss::{DifferentiableLoss, MeanLoss, QuadraticLoss};
use crate::rng::RngStream;
use crate::task::{Pool, Task, TaskEval, TaskFamily};
use crate::vector::ParamVector;

/// A task whose training pool is an explicit set of quadratic losses; a
/// minibatch is the mean of the selected quadratics.
pub struct QuadraticSetTask {
    train: Vec<QuadraticLoss>,
    tail: Vec<QuadraticLoss>,
    dim: usize,
}

impl QuadraticSetTask {
    pub fn new(train: Vec<QuadraticLoss>, tail: Vec<QuadraticLoss>) -> Self {
        assert!(!train.is_empty(), "need at least one training quadratic");
        let dim = train[0].dim();
        assert!(train.iter().chain(&tail).all(|l| l.dim() == dim));
        QuadraticSetTask { train, tail, dim }
    }

    /// The scalar pair used throughout the walkthrough tests:
    /// `L1 = 1/2 (phi-1)^2`, `L2 = 1/2 (phi-3)^2`.
    pub fn scalar_pair() -> Self {
        Self::new(
            vec![QuadraticLoss::scalar(1.0, 1.0), QuadraticLoss::scalar(1.0, 3.0)],
            Vec::new(),
        )
    }

    /// `n` scalar unit-curvature quadratics with random centers.
    pub fn isotropic_family(n: usize, stream: RngStream) -> Self {
        let mut rng = stream.rng();
        let train = (0..n)
            .map(|_| QuadraticLoss::scalar(1.0, rng.gen_range(-2.0..2.0)))
            .collect();
        Self::new(train, Vec::new())
    }

    pub fn train_losses(&self) -> &[QuadraticLoss] {
        &self.train
    }
}

impl Task for QuadraticSetTask {
    fn dim(&self) -> usize {
        self.dim
    }

    fn pool_size(&self, pool: Pool) -> usize {
        match pool {
            Pool::Train => self.train.len(),
            Pool::Tail => self.tail.len(),
        }
    }

    fn loss(&self, pool: Pool, ids: &[usize]) -> Box<dyn DifferentiableLoss> {
        let src = match pool {
            Pool::Train => &self.train,
            Pool::Tail => &self.tail,
        };
        Box::new(MeanLoss::new(ids.iter().map(|&i| src[i].clone()).collect()))
    }

    fn eval(&self, phi: &ParamVector) -> TaskEval {
        let mean = MeanLoss::new(self.train.clone());
        TaskEval {
            loss: mean.value(phi),
            accuracy: None,
        }
    }
}

/// Distribution over quadratic tasks with diagonal curvatures drawn from
/// `curvature_range` and centers from a normal with `center_sd`.
pub struct QuadraticFamily {
    pub dim: usize,
    pub pool: usize,
    pub curvature_range: (f64, f64),
    pub center_sd: f64,
}

impl QuadraticFamily {
    pub fn scalar(pool: usize) -> Self {
        QuadraticFamily {
            dim: 1,
            pool,
            curvature_range: (0.5, 1.5),
            center_sd: 1.0,
        }
    }
}

impl TaskFamily for QuadraticFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn init_params(&self, stream: RngStream) -> ParamVector {
        let mut rng = stream.rng();
        ParamVector::new(
            (0..self.dim)
                .map(|_| crate::rng::normal(&mut rng, 0.0, 1.0))
                .collect(),
        )
    }

    fn sample_train(&self, stream: RngStream) -> Box<dyn Task> {
        let mut rng = stream.rng();
        let (lo, hi) = self.curvature_range;
        let train = (0..self.pool)
            .map(|_| {
                let diag: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(lo..hi)).collect();
                let center: Vec<f64> = (0..self.dim)
                    .map(|_| crate::rng::normal(&mut rng, 0.0, self.center_sd))
                    .collect();
                QuadraticLoss::new(
                    DMatrix::from_diagonal(&DVector::from_vec(diag)),
                    DVector::from_vec(center),
                )
                .expect("diagonal matrices are symmetric")
            })
            .collect();
        Box::new(QuadraticSetTask::new(train, Vec::new()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_loss_is_mean_of_members() {
        let task = QuadraticSetTask::scalar_pair();
        let loss = task.loss(Pool::Train, &[0, 1]);
        let phi = ParamVector::new(vec![0.0]);
        assert_eq!(loss.value(&phi), 2.5);
        assert_eq!(loss.grad(&phi).as_slice(), &[-2.0]);
    }

    #[test]
    fn family_sampling_is_deterministic() {
        let fam = QuadraticFamily::scalar(8);
        let s = RngStream::new(4, 9);
        let a = fam.sample_train(s);
        let b = fam.sample_train(s);
        let phi = ParamVector::new(vec![0.7]);
        assert_eq!(a.loss(Pool::Train, &[3]).value(&phi), b.loss(Pool::Train, &[3]).value(&phi));
    }
}
