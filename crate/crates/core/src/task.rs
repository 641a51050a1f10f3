//! Task abstraction: a sampled learning problem exposing minibatch losses.
//!
//! A task addresses its data by sample id inside one of two pools: the
//! training pool the inner loop draws from, and an optional disjoint tail
//! pool (used by separate-tail meta-gradients and by evaluation queries).

use crate::loss::DifferentiableLoss;
use crate::rng::RngStream;
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Train,
    Tail,
}

/// Held-out measurement of adapted parameters on one task.
#[derive(Debug, Clone, Copy)]
pub struct TaskEval {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

pub trait Task: Send + Sync {
    /// Parameter dimension of the bound model.
    fn dim(&self) -> usize;

    /// Number of samples in a pool; a task without a disjoint tail reports 0
    /// for [`Pool::Tail`].
    fn pool_size(&self, pool: Pool) -> usize;

    /// Loss bound to the given samples of a pool (mean reduction).
    fn loss(&self, pool: Pool, ids: &[usize]) -> Box<dyn DifferentiableLoss>;

    /// Held-out metric for `phi` (task-defined: grid loss for regression,
    /// query loss/accuracy for episodes).
    fn eval(&self, phi: &ParamVector) -> TaskEval;
}

/// A distribution over tasks plus the model bound to it.
pub trait TaskFamily: Send + Sync {
    fn dim(&self) -> usize;

    fn init_params(&self, stream: RngStream) -> ParamVector;

    /// Samples a task for meta-training.
    fn sample_train(&self, stream: RngStream) -> Box<dyn Task>;

    /// Samples a task for meta-evaluation. Families whose training and
    /// evaluation protocols coincide use the default.
    fn sample_eval(&self, stream: RngStream) -> Box<dyn Task> {
        self.sample_train(stream)
    }
}
