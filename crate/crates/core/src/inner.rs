//! The inner loop: k optimization steps on minibatches drawn from a task.
//!
//! Sampling supports the two modes whose difference drives the batch-overlap
//! experiments: `cycle` walks a shuffled permutation of the training pool
//! (reshuffling each time it is exhausted, like ordinary epochs), while
//! `replacement` draws every batch independently. The tail batch that
//! first-order meta-gradients are computed on comes either from the same
//! stream (shared) or from the task's disjoint tail pool (separate).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::DifferentiableLoss;
use crate::optim::{InnerOptimizer, OptimizerKind};
use crate::rng::RngStream;
use crate::task::{Pool, Task};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Cycle,
    Replacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailMode {
    /// Tail batch drawn from the training pool by the same sampling mode.
    Shared,
    /// Tail batch drawn from the task's disjoint tail pool.
    Separate,
}

/// How to build the per-task inner optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerSpec {
    Sgd { alpha: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerSpec {
    pub fn adam_default(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn build(&self, dim: usize) -> InnerOptimizer {
        match *self {
            OptimizerSpec::Sgd { alpha } => InnerOptimizer::Sgd(crate::optim::SgdState::new(alpha)),
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                InnerOptimizer::Adam(crate::optim::AdamState::new(dim, lr, beta1, beta2, eps))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerLoopConfig {
    pub k: usize,
    pub batch_size: usize,
    pub sampling: SamplingMode,
    pub tail: TailMode,
    pub optimizer: OptimizerSpec,
    pub record_trajectory: bool,
}

impl InnerLoopConfig {
    pub fn sgd(k: usize, batch_size: usize, alpha: f64) -> Self {
        InnerLoopConfig {
            k,
            batch_size,
            sampling: SamplingMode::Cycle,
            tail: TailMode::Shared,
            optimizer: OptimizerSpec::Sgd { alpha },
            record_trajectory: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("inner-loop k must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if let OptimizerSpec::Sgd { alpha } = self.optimizer {
            if alpha < 0.0 {
                return Err(Error::InvalidConfig("sgd alpha must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Identities of the samples one batch was assembled from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIds {
    pub pool: Pool,
    pub ids: Vec<usize>,
    /// True when the same source sample appears more than once.
    pub has_duplicates: bool,
}

impl BatchIds {
    pub fn new(pool: Pool, ids: Vec<usize>) -> Self {
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        let has_duplicates = sorted.windows(2).any(|w| w[0] == w[1]);
        BatchIds {
            pool,
            ids,
            has_duplicates,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Fraction of `a`'s entries whose id also occurs in `b`.
pub fn id_overlap_fraction(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let bset: std::collections::HashSet<usize> = b.iter().copied().collect();
    let hits = a.iter().filter(|id| bset.contains(id)).count();
    hits as f64 / a.len() as f64
}

/// `|ids(b1) ∩ ids(b2)| / |ids(b1)|`.
pub fn overlap_fraction(b1: &BatchIds, b2: &BatchIds) -> f64 {
    id_overlap_fraction(&b1.ids, &b2.ids)
}

/// Endless deterministic id stream over one pool.
struct IdStream {
    mode: SamplingMode,
    pool_size: usize,
    perm: Vec<usize>,
    cursor: usize,
}

impl IdStream {
    fn new(mode: SamplingMode, pool_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut perm: Vec<usize> = (0..pool_size).collect();
        if mode == SamplingMode::Cycle {
            perm.shuffle(rng);
        }
        IdStream {
            mode,
            pool_size,
            perm,
            cursor: 0,
        }
    }

    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self.mode {
            SamplingMode::Replacement => (0..size)
                .map(|_| rng.gen_range(0..self.pool_size))
                .collect(),
            SamplingMode::Cycle => {
                let mut ids = Vec::with_capacity(size);
                for _ in 0..size {
                    if self.cursor == self.pool_size {
                        self.perm.shuffle(rng);
                        self.cursor = 0;
                    }
                    ids.push(self.perm[self.cursor]);
                    self.cursor += 1;
                }
                ids
            }
        }
    }
}

/// Draws the k inner batches plus the tail batch for the meta-gradient.
///
/// Shared tail continues the same id stream (cycle: the next batch in the
/// cycle; replacement: a fresh draw). Separate tail opens an independent
/// stream over the tail pool.
pub fn sample_batches(
    task: &dyn Task,
    cfg: &InnerLoopConfig,
    stream: RngStream,
) -> Result<(Vec<BatchIds>, BatchIds)> {
    cfg.validate()?;
    let train_size = task.pool_size(Pool::Train);
    if train_size == 0 {
        return Err(Error::InvalidConfig("task has an empty training pool".into()));
    }
    let mut rng = stream.rng();
    let mut ids = IdStream::new(cfg.sampling, train_size, &mut rng);
    let batches: Vec<BatchIds> = (0..cfg.k)
        .map(|_| BatchIds::new(Pool::Train, ids.next_batch(cfg.batch_size, &mut rng)))
        .collect();
    let tail = match cfg.tail {
        TailMode::Shared => BatchIds::new(Pool::Train, ids.next_batch(cfg.batch_size, &mut rng)),
        TailMode::Separate => sample_separate_tail(task, cfg, stream)?,
    };
    Ok((batches, tail))
}

/// Draws one batch from the task's disjoint tail pool, using the same
/// sampling mode and an rng stream independent of the training-batch stream.
pub fn sample_separate_tail(
    task: &dyn Task,
    cfg: &InnerLoopConfig,
    stream: RngStream,
) -> Result<BatchIds> {
    let tail_size = task.pool_size(Pool::Tail);
    if tail_size == 0 {
        return Err(Error::MissingTail);
    }
    let mut tail_rng = stream.substream(0x7A11).rng();
    let mut tail_ids = IdStream::new(cfg.sampling, tail_size, &mut tail_rng);
    Ok(BatchIds::new(
        Pool::Tail,
        tail_ids.next_batch(cfg.batch_size, &mut tail_rng),
    ))
}

/// Record of one inner loop.
///
/// `start`/`end` are always present; full iterate and gradient sequences are
/// kept only when recording was requested (memory is `(k+1) * dim`).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub k: usize,
    pub optimizer: OptimizerKind,
    /// SGD step size when the optimizer was SGD.
    pub alpha: Option<f64>,
    pub start: ParamVector,
    pub end: ParamVector,
    /// `phi_1 .. phi_{k+1}` when recorded, else empty.
    pub iterates: Vec<ParamVector>,
    /// `g_1 .. g_k` when recorded, else empty.
    pub gradients: Vec<ParamVector>,
    /// Identities of the k inner batches (empty for explicit-loss runs).
    pub batches: Vec<BatchIds>,
    /// Tail batch for first-order meta-gradients, when one was sampled.
    pub tail: Option<BatchIds>,
}

impl Trajectory {
    pub fn recorded(&self) -> bool {
        !self.iterates.is_empty()
    }
}

/// Runs k steps over an explicit loss sequence. This is the primitive behind
/// [`run_inner`]; analysis paths use it directly to freeze batch sequences.
pub fn run_inner_on_losses<L: DifferentiableLoss + ?Sized>(
    phi: &ParamVector,
    losses: &[&L],
    opt: &mut InnerOptimizer,
    record: bool,
) -> Result<Trajectory> {
    if losses.is_empty() {
        return Err(Error::InvalidConfig("inner loop needs at least one loss".into()));
    }
    let k = losses.len();
    let alpha = opt.sgd_alpha();
    let kind = opt.kind();
    let mut iterates = Vec::new();
    let mut gradients = Vec::new();
    if record {
        iterates.reserve(k + 1);
        gradients.reserve(k);
        iterates.push(phi.clone());
    }
    let mut current = phi.clone();
    for (step, loss) in losses.iter().enumerate() {
        let g = loss.grad(&current);
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: "inner-loop gradient".into(),
                step: step + 1,
            });
        }
        current = opt.step(&current, &g);
        if !current.is_finite() {
            return Err(Error::NonFinite {
                context: "inner-loop iterate".into(),
                step: step + 1,
            });
        }
        if record {
            gradients.push(g);
            iterates.push(current.clone());
        }
    }
    Ok(Trajectory {
        k,
        optimizer: kind,
        alpha,
        start: phi.clone(),
        end: current,
        iterates,
        gradients,
        batches: Vec::new(),
        tail: None,
    })
}

/// Runs `U_tau^k(phi)`: samples batches per the config and takes k optimizer
/// steps, recording the trajectory when asked. Deterministic given the
/// stream.
pub fn run_inner(
    phi: &ParamVector,
    task: &dyn Task,
    cfg: &InnerLoopConfig,
    opt: &mut InnerOptimizer,
    stream: RngStream,
) -> Result<Trajectory> {
    let (batches, tail) = sample_batches(task, cfg, stream)?;
    let losses: Vec<Box<dyn DifferentiableLoss>> = batches
        .iter()
        .map(|b| task.loss(b.pool, &b.ids))
        .collect();
    let refs: Vec<&Box<dyn DifferentiableLoss>> = losses.iter().collect();
    let mut traj = run_inner_on_losses(phi, &refs, opt, cfg.record_trajectory)?;
    traj.batches = batches;
    traj.tail = Some(tail);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::QuadraticLoss;
    use crate::tasks::quadratic::QuadraticSetTask;
    use approx::assert_abs_diff_eq;

    fn sgd(alpha: f64) -> InnerOptimizer {
        InnerOptimizer::Sgd(crate::optim::SgdState::new(alpha))
    }

    #[test]
    fn scalar_quadratic_walkthrough() {
        // L1 = 1/2 (phi-1)^2, L2 = 1/2 (phi-3)^2, phi = 0, alpha = 0.1
        let l1 = QuadraticLoss::scalar(1.0, 1.0);
        let l2 = QuadraticLoss::scalar(1.0, 3.0);
        let phi = ParamVector::new(vec![0.0]);
        let mut opt = sgd(0.1);
        let traj =
            run_inner_on_losses(&phi, &[&l1 as &dyn crate::loss::DifferentiableLoss, &l2], &mut opt, true)
                .unwrap();
        assert_eq!(traj.gradients[0].as_slice(), &[-1.0]);
        assert_abs_diff_eq!(traj.iterates[1][0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(traj.gradients[1][0], -2.9, epsilon = 1e-15);
        assert_abs_diff_eq!(traj.end[0], 0.39, epsilon = 1e-15);
    }

    #[test]
    fn k_zero_rejected() {
        let cfg = InnerLoopConfig::sgd(0, 1, 0.1);
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn cycle_partitions_when_batches_fit() {
        // train 100, batch 25, k = 4: pairwise disjoint batches
        let task = QuadraticSetTask::isotropic_family(100, RngStream::new(1, 0));
        let mut cfg = InnerLoopConfig::sgd(4, 25, 0.1);
        cfg.sampling = SamplingMode::Cycle;
        let (batches, _) = sample_batches(&task, &cfg, RngStream::new(7, 3)).unwrap();
        for i in 0..4 {
            assert!(!batches[i].has_duplicates);
            for j in 0..i {
                assert_eq!(overlap_fraction(&batches[i], &batches[j]), 0.0);
            }
        }
    }

    #[test]
    fn cycle_wraps_into_full_overlap() {
        // train 25, batch 25, k = 5: every batch holds the same 25 samples
        let task = QuadraticSetTask::isotropic_family(25, RngStream::new(1, 0));
        let cfg = InnerLoopConfig::sgd(5, 25, 0.1);
        let (batches, _) = sample_batches(&task, &cfg, RngStream::new(9, 0)).unwrap();
        for b in &batches {
            assert!(!b.has_duplicates);
            assert_eq!(overlap_fraction(b, &batches[0]), 1.0);
        }
    }

    #[test]
    fn replacement_batches_are_flag_checked() {
        let task = QuadraticSetTask::isotropic_family(4, RngStream::new(1, 0));
        let mut cfg = InnerLoopConfig::sgd(1, 16, 0.1);
        cfg.sampling = SamplingMode::Replacement;
        let (batches, _) = sample_batches(&task, &cfg, RngStream::new(3, 0)).unwrap();
        // 16 draws from 4 ids must repeat
        assert!(batches[0].has_duplicates);
    }

    #[test]
    fn separate_tail_without_tail_pool_errors() {
        let task = QuadraticSetTask::isotropic_family(10, RngStream::new(1, 0));
        let mut cfg = InnerLoopConfig::sgd(2, 5, 0.1);
        cfg.tail = TailMode::Separate;
        assert!(matches!(
            sample_batches(&task, &cfg, RngStream::new(0, 0)),
            Err(Error::MissingTail)
        ));
    }

    #[test]
    fn overlap_fraction_hand_examples() {
        let a = BatchIds::new(Pool::Train, vec![1, 2, 3, 4]);
        let b = BatchIds::new(Pool::Train, vec![3, 4, 5, 6]);
        assert_eq!(overlap_fraction(&a, &b), 0.5);
        assert_eq!(overlap_fraction(&a, &a), 1.0);
        let c = BatchIds::new(Pool::Train, vec![7, 8]);
        assert_eq!(overlap_fraction(&a, &c), 0.0);
    }

    #[test]
    fn trajectory_is_deterministic_and_replayable() {
        let task = QuadraticSetTask::isotropic_family(20, RngStream::new(5, 0));
        let mut cfg = InnerLoopConfig::sgd(6, 5, 0.05);
        cfg.record_trajectory = true;
        let phi = ParamVector::zeros(1);
        let s = RngStream::new(11, 2);

        let t1 = run_inner(&phi, &task, &cfg, &mut sgd(0.05), s).unwrap();
        let t2 = run_inner(&phi, &task, &cfg, &mut sgd(0.05), s).unwrap();
        assert_eq!(t1.end, t2.end);
        assert_eq!(t1.batches, t2.batches);

        // exact SGD replay from the logged gradients
        let mut replay = t1.start.clone();
        for g in &t1.gradients {
            replay = crate::vector::axpy(&replay, -0.05, g);
        }
        assert_eq!(replay, t1.end);

        // phi_{k+1} - phi_1 = -alpha * sum g_i
        let mut gsum = ParamVector::zeros(phi.dim());
        for g in &t1.gradients {
            gsum = crate::vector::axpy(&gsum, 1.0, g);
        }
        let lhs = t1.end.sub(&t1.start);
        let rhs = gsum.scale(-0.05);
        assert!(lhs.sub(&rhs).norm_inf() <= 1e-12);
    }
}
