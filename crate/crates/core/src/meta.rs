//! Meta-algorithms: Reptile, first-order MAML, exact MAML, and arbitrary
//! linear combinations of inner gradients, plus the meta-training and
//! meta-evaluation drivers.
//!
//! All directions are returned in ascent form (`phi_tilde - phi` for
//! Reptile, `-g_meta` for gradient-style updates) so the outer step is
//! always `phi + eps * direction`.
//!
//! First-order MAML exists in two conventions and both are implemented: the
//! operational one evaluates the gradient of a designated tail batch at the
//! post-update point (this is what the experiments use), while the analysis
//! one takes the last inner-loop gradient `g_k` as the meta-gradient (this is
//! what the Taylor-expansion checks use). Conflating the two breaks the
//! expansion coefficients.

use crate::error::{Error, Result};
use crate::inner::{run_inner, InnerLoopConfig, Trajectory};
use crate::loss::DifferentiableLoss;
use crate::optim::{outer_step, restore, snapshot, InnerOptimizer, OptimizerKind, OuterSchedule};
use crate::par::map_indices;
use crate::rng::RngStream;
use crate::task::{Task, TaskEval, TaskFamily};
use crate::vector::{axpy, ParamVector};

const TAG_INIT: u64 = 0x11;
const TAG_TASK: u64 = 0x22;
const TAG_INNER: u64 = 0x33;
const TAG_EVAL: u64 = 0x44;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComboNormalize {
    Sum,
    Average,
}

/// Which meta-gradient the outer loop follows.
#[derive(Debug, Clone, PartialEq)]
pub enum MetaAlgorithm {
    Reptile,
    /// First-order MAML over k minibatches: the k-th batch is the
    /// meta-gradient batch and its gradient is taken at `phi_k`, after k-1
    /// updates. The inner config's tail mode decides where batch k comes
    /// from: `Shared` continues the training-pool stream (so it can overlap
    /// the earlier batches), `Separate` draws it from the disjoint tail pool.
    Fomaml,
    /// Exact MAML through the SGD inner loop (second-order via HVPs).
    Maml,
    /// Linear combination `sum w_i g_i` of the inner-loop gradients.
    Combo {
        weights: Vec<f64>,
        normalize: ComboNormalize,
    },
}

impl MetaAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            MetaAlgorithm::Reptile => "reptile",
            MetaAlgorithm::Fomaml => "fomaml",
            MetaAlgorithm::Maml => "maml",
            MetaAlgorithm::Combo { .. } => "combo",
        }
    }

    fn needs_trajectory(&self) -> bool {
        matches!(self, MetaAlgorithm::Maml | MetaAlgorithm::Combo { .. })
    }
}

/// A direction in parameter space for the outer optimizer, with per-term
/// norms kept for diagnostics.
#[derive(Debug, Clone)]
pub struct MetaGradient {
    pub direction: ParamVector,
    pub algorithm: &'static str,
    pub term_norms: Vec<f64>,
}

impl MetaGradient {
    fn checked(self) -> Result<Self> {
        if !self.direction.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{} meta-gradient", self.algorithm),
                step: 0,
            });
        }
        Ok(self)
    }
}

/// Reptile direction `phi_{k+1} - phi_1`.
pub fn reptile_direction(traj: &Trajectory) -> MetaGradient {
    let direction = traj.end.sub(&traj.start);
    let norm = direction.norm_l2();
    MetaGradient {
        direction,
        algorithm: "reptile",
        term_norms: vec![norm],
    }
}

/// Reptile gradient form `(phi_1 - phi_{k+1}) / alpha`; defined for SGD
/// trajectories, where it equals the sum of the inner gradients.
pub fn reptile_gradient_form(traj: &Trajectory) -> Option<ParamVector> {
    traj.alpha
        .map(|alpha| traj.start.sub(&traj.end).scale(1.0 / alpha))
}

/// Post-update-tail first-order MAML: `-grad(L_tail, phi_{k+1})` with the
/// tail batch recorded on the trajectory. This is the two-pool form (adapt on
/// A, differentiate on B at the adapted point); training and the overlap
/// sweeps instead fold the meta-gradient batch into the sequence as batch k
/// (see [`MetaAlgorithm::Fomaml`]).
pub fn fomaml_tail_direction(traj: &Trajectory, task: &dyn Task) -> Result<MetaGradient> {
    let tail = traj.tail.as_ref().ok_or(Error::MissingTail)?;
    let g = task.loss(tail.pool, &tail.ids).grad(&traj.end);
    let norm = g.norm_l2();
    MetaGradient {
        direction: g.scale(-1.0),
        algorithm: "fomaml",
        term_norms: vec![norm],
    }
    .checked()
}

/// Analysis-convention first-order MAML: the last inner gradient `g_k`,
/// evaluated at `phi_k` before the final update.
pub fn fomaml_gk_direction(traj: &Trajectory) -> Result<MetaGradient> {
    let g = traj.gradients.last().ok_or_else(|| {
        Error::Unsupported {
            required: "a recorded trajectory".into(),
            what: "g_k convention".into(),
        }
    })?;
    MetaGradient {
        direction: g.scale(-1.0),
        algorithm: "fomaml",
        term_norms: vec![g.norm_l2()],
    }
    .checked()
}

/// Multiplies `v` by the transposed update Jacobians along the trajectory:
/// `v <- (I - alpha H_1(phi_1)) ... (I - alpha H_m(phi_m)) v` applied right
/// to left, with `m = losses.len()` steps taken from `traj.iterates`.
fn backward_jacobian_product<L: DifferentiableLoss + ?Sized>(
    traj: &Trajectory,
    losses: &[&L],
    mut v: ParamVector,
    alpha: f64,
) -> ParamVector {
    for j in (0..losses.len()).rev() {
        let hv = losses[j].hvp(&traj.iterates[j], &v);
        v = axpy(&v, -alpha, &hv);
    }
    v
}

/// Exact MAML gradient from a recorded SGD trajectory:
/// `v <- g_k; for j = k-1 .. 1: v <- v - alpha * hvp(L_j, phi_j, v)`.
///
/// `losses[j]` must be the loss the trajectory used at step `j`.
pub fn maml_from_trajectory<L: DifferentiableLoss + ?Sized>(
    traj: &Trajectory,
    losses: &[&L],
) -> Result<MetaGradient> {
    let alpha = traj.alpha.ok_or_else(|| Error::Unsupported {
        required: "an SGD inner loop".into(),
        what: "MAML meta-gradient".into(),
    })?;
    if !traj.recorded() || losses.len() != traj.k {
        return Err(Error::Unsupported {
            required: "a recorded trajectory with one loss per step".into(),
            what: "MAML meta-gradient".into(),
        });
    }
    let k = traj.k;
    let gk = traj.gradients[k - 1].clone();
    let gk_norm = gk.norm_l2();
    let v = backward_jacobian_product(traj, &losses[..k - 1], gk, alpha);
    MetaGradient {
        direction: v.scale(-1.0),
        algorithm: "maml",
        term_norms: vec![gk_norm, v.norm_l2()],
    }
    .checked()
}

/// Runs the inner loop and computes the exact MAML direction. Restricted to
/// SGD inner loops; differentiating through Adam's rescaling is out of scope.
pub fn maml_direction(
    phi: &ParamVector,
    task: &dyn Task,
    cfg: &InnerLoopConfig,
    stream: RngStream,
) -> Result<MetaGradient> {
    let mut opt = cfg.optimizer.build(task.dim());
    if opt.kind() != OptimizerKind::Sgd {
        return Err(Error::Unsupported {
            required: "an SGD inner loop".into(),
            what: "MAML meta-gradient".into(),
        });
    }
    let mut cfg = cfg.clone();
    cfg.record_trajectory = true;
    let traj = run_inner(phi, task, &cfg, &mut opt, stream)?;
    let losses: Vec<Box<dyn DifferentiableLoss>> = traj
        .batches
        .iter()
        .map(|b| task.loss(b.pool, &b.ids))
        .collect();
    let refs: Vec<&Box<dyn DifferentiableLoss>> = losses.iter().collect();
    maml_from_trajectory(&traj, &refs)
}

/// Brute-force validation route for the MAML gradient: central finite
/// differences of `phi -> L_k(U^{k-1}(phi))` with the batch sequence frozen.
/// Returns the gradient form (not negated). Intended for small models.
pub fn maml_fd_oracle<L: DifferentiableLoss + ?Sized>(
    phi: &ParamVector,
    losses: &[&L],
    alpha: f64,
    h: f64,
) -> Result<ParamVector> {
    assert!(h > 0.0, "maml_fd_oracle: h must be positive");
    let k = losses.len();
    assert!(k >= 1, "need at least one loss");
    let composite = |start: &ParamVector| -> Result<f64> {
        let mut p = start.clone();
        for loss in &losses[..k - 1] {
            p = axpy(&p, -alpha, &loss.grad(&p));
        }
        let v = losses[k - 1].value(&p);
        if !v.is_finite() {
            return Err(Error::OracleFailure("composite loss non-finite".into()));
        }
        Ok(v)
    };
    let mut out = ParamVector::zeros(phi.dim());
    let mut probe = phi.clone();
    for i in 0..phi.dim() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = composite(&probe)?;
        probe[i] = orig - h;
        let down = composite(&probe)?;
        probe[i] = orig;
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Linear combination of the recorded inner gradients, in gradient form
/// `sum w_i g_i`; `Average` divides by `sum |w_i|`.
pub fn combo_direction(
    traj: &Trajectory,
    weights: &[f64],
    normalize: ComboNormalize,
) -> Result<MetaGradient> {
    if weights.len() != traj.k {
        return Err(Error::InvalidConfig(format!(
            "combo needs {} weights, got {}",
            traj.k,
            weights.len()
        )));
    }
    let weight_mass: f64 = weights.iter().map(|w| w.abs()).sum();
    if weight_mass == 0.0 {
        return Err(Error::InvalidConfig("combo weights are all zero".into()));
    }
    if !traj.recorded() {
        return Err(Error::Unsupported {
            required: "a recorded trajectory".into(),
            what: "combo meta-gradient".into(),
        });
    }
    let mut g = ParamVector::zeros(traj.start.dim());
    let mut term_norms = Vec::with_capacity(traj.k);
    for (gi, &w) in traj.gradients.iter().zip(weights) {
        term_norms.push(w.abs() * gi.norm_l2());
        g = axpy(&g, w, gi);
    }
    if normalize == ComboNormalize::Average {
        g = g.scale(1.0 / weight_mass);
    }
    MetaGradient {
        direction: g.scale(-1.0),
        algorithm: "combo",
        term_norms,
    }
    .checked()
}

/// Evaluation-time adaptation settings.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub trials: usize,
    /// Inner steps at evaluation; 0 measures the unadapted parameters.
    pub adapt_steps: usize,
    pub batch_size: usize,
    pub sampling: crate::inner::SamplingMode,
    pub optimizer: crate::inner::OptimizerSpec,
}

#[derive(Debug, Clone, Copy)]
pub struct TrialOutcome {
    pub pre: TaskEval,
    pub post: TaskEval,
}

/// Per-trial outcomes of one evaluation pass.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub outcomes: Vec<TrialOutcome>,
}

fn mean_stderr(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl EvalReport {
    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn post_loss(&self) -> (f64, f64) {
        mean_stderr(self.outcomes.iter().map(|o| o.post.loss))
    }

    pub fn pre_loss(&self) -> (f64, f64) {
        mean_stderr(self.outcomes.iter().map(|o| o.pre.loss))
    }

    pub fn post_accuracy(&self) -> Option<(f64, f64)> {
        if self.outcomes.iter().all(|o| o.post.accuracy.is_some()) {
            Some(mean_stderr(
                self.outcomes.iter().map(|o| o.post.accuracy.unwrap()),
            ))
        } else {
            None
        }
    }

    /// Fraction of trials whose post-adaptation loss fell below
    /// `(1 - reduction) * pre`.
    pub fn loss_reduction_count(&self, reduction: f64) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.post.loss <= (1.0 - reduction) * o.pre.loss)
            .count()
    }
}

/// Adapts `phi` on freshly sampled evaluation tasks and measures each task's
/// held-out metric before and after adaptation. Each trial uses a fresh
/// optimizer state (evaluation must not inherit or pollute training moments).
pub fn meta_evaluate(
    phi: &ParamVector,
    family: &dyn TaskFamily,
    settings: &EvalSettings,
    stream: RngStream,
) -> Result<EvalReport> {
    assert!(settings.trials >= 1, "need at least one trial");
    let results = map_indices(settings.trials, |t| -> Result<TrialOutcome> {
        let trial_stream = stream.substream(TAG_EVAL).substream(t as u64);
        let task = family.sample_eval(trial_stream);
        let pre = task.eval(phi);
        let post = if settings.adapt_steps == 0 {
            pre
        } else {
            let cfg = InnerLoopConfig {
                k: settings.adapt_steps,
                batch_size: settings.batch_size,
                sampling: settings.sampling,
                tail: crate::inner::TailMode::Shared,
                optimizer: settings.optimizer.clone(),
                record_trajectory: false,
            };
            let mut opt = settings.optimizer.build(task.dim());
            let traj = run_inner(phi, task.as_ref(), &cfg, &mut opt, trial_stream.substream(1))?;
            task.eval(&traj.end)
        };
        Ok(TrialOutcome { pre, post })
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { outcomes })
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct LogRecord {
    pub iter: usize,
    pub epsilon: f64,
    pub direction_norm: f64,
    pub eval: Option<EvalPoint>,
}

#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub pre_loss: f64,
    pub post_loss: f64,
    pub post_loss_stderr: f64,
    pub accuracy: Option<f64>,
    pub accuracy_stderr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MetaTrainConfig {
    pub algo: MetaAlgorithm,
    pub inner: InnerLoopConfig,
    pub schedule: OuterSchedule,
    pub meta_batch: usize,
    /// Record a log row every `log_every` iterations (plus the last).
    pub log_every: usize,
    /// Run a periodic evaluation every `eval_cadence` iterations; 0 disables.
    pub eval_cadence: usize,
    pub eval: Option<EvalSettings>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub log: Vec<LogRecord>,
}

fn validate_train_config(cfg: &MetaTrainConfig) -> Result<()> {
    cfg.inner.validate()?;
    if cfg.meta_batch == 0 {
        return Err(Error::InvalidConfig("meta_batch must be >= 1".into()));
    }
    if cfg.log_every == 0 {
        return Err(Error::InvalidConfig("log_every must be >= 1".into()));
    }
    match &cfg.algo {
        MetaAlgorithm::Maml => {
            if !matches!(cfg.inner.optimizer, crate::inner::OptimizerSpec::Sgd { .. }) {
                return Err(Error::Unsupported {
                    required: "an SGD inner loop".into(),
                    what: "MAML meta-training".into(),
                });
            }
        }
        MetaAlgorithm::Combo { weights, .. } => {
            if weights.len() != cfg.inner.k {
                return Err(Error::InvalidConfig(format!(
                    "combo needs k = {} weights, got {}",
                    cfg.inner.k,
                    weights.len()
                )));
            }
            if weights.iter().all(|w| *w == 0.0) {
                return Err(Error::InvalidConfig("combo weights are all zero".into()));
            }
        }
        _ => {}
    }
    if cfg.eval_cadence > 0 && cfg.eval.is_none() {
        return Err(Error::InvalidConfig(
            "eval_cadence set but no eval settings given".into(),
        ));
    }
    Ok(())
}

/// Computes one task's meta-gradient starting from `phi`.
pub fn task_direction(
    algo: &MetaAlgorithm,
    phi: &ParamVector,
    task: &dyn Task,
    inner_cfg: &InnerLoopConfig,
    opt: &mut InnerOptimizer,
    stream: RngStream,
) -> Result<MetaGradient> {
    if inner_cfg.tail == crate::inner::TailMode::Separate
        && matches!(algo, MetaAlgorithm::Fomaml | MetaAlgorithm::Maml)
    {
        // separate-tail form: k-1 adaptation steps on the training pool,
        // batch k comes from the disjoint tail pool at phi_k
        let adapted = if inner_cfg.k > 1 {
            let mut adapt_cfg = inner_cfg.clone();
            adapt_cfg.k = inner_cfg.k - 1;
            adapt_cfg.record_trajectory = matches!(algo, MetaAlgorithm::Maml);
            Some(run_inner(phi, task, &adapt_cfg, opt, stream)?)
        } else {
            None
        };
        let phi_k = adapted.as_ref().map(|t| t.end.clone()).unwrap_or_else(|| phi.clone());
        let tail = crate::inner::sample_separate_tail(task, inner_cfg, stream)?;
        let g = task.loss(tail.pool, &tail.ids).grad(&phi_k);
        let gk_norm = g.norm_l2();
        let (v, algorithm) = match algo {
            MetaAlgorithm::Fomaml => (g, "fomaml"),
            MetaAlgorithm::Maml => {
                let v = match &adapted {
                    Some(traj) => {
                        let alpha = traj.alpha.ok_or_else(|| Error::Unsupported {
                            required: "an SGD inner loop".into(),
                            what: "MAML meta-gradient".into(),
                        })?;
                        let losses: Vec<Box<dyn DifferentiableLoss>> = traj
                            .batches
                            .iter()
                            .map(|b| task.loss(b.pool, &b.ids))
                            .collect();
                        let refs: Vec<&Box<dyn DifferentiableLoss>> = losses.iter().collect();
                        backward_jacobian_product(traj, &refs, g, alpha)
                    }
                    None => g,
                };
                (v, "maml")
            }
            _ => unreachable!(),
        };
        let norm = v.norm_l2();
        return MetaGradient {
            direction: v.scale(-1.0),
            algorithm,
            term_norms: vec![gk_norm, norm],
        }
        .checked();
    }

    let mut cfg = inner_cfg.clone();
    cfg.record_trajectory = inner_cfg.record_trajectory
        || algo.needs_trajectory()
        || matches!(algo, MetaAlgorithm::Fomaml);
    let traj = run_inner(phi, task, &cfg, opt, stream)?;
    match algo {
        MetaAlgorithm::Reptile => Ok(reptile_direction(&traj)),
        MetaAlgorithm::Fomaml => fomaml_gk_direction(&traj),
        MetaAlgorithm::Maml => {
            let losses: Vec<Box<dyn DifferentiableLoss>> = traj
                .batches
                .iter()
                .map(|b| task.loss(b.pool, &b.ids))
                .collect();
            let refs: Vec<&Box<dyn DifferentiableLoss>> = losses.iter().collect();
            maml_from_trajectory(&traj, &refs)
        }
        MetaAlgorithm::Combo { weights, normalize } => combo_direction(&traj, weights, *normalize),
    }
}

fn merge_adam_states(template: &mut InnerOptimizer, finals: Vec<InnerOptimizer>) {
    if let InnerOptimizer::Adam(merged) = template {
        let n = finals.len() as f64;
        let mut m = ParamVector::zeros(merged.m.dim());
        let mut v = ParamVector::zeros(merged.v.dim());
        let mut t = merged.t;
        for state in finals {
            if let InnerOptimizer::Adam(a) = state {
                m = axpy(&m, 1.0 / n, &a.m);
                v = axpy(&v, 1.0 / n, &a.v);
                t = a.t;
            }
        }
        merged.m = m;
        merged.v = v;
        merged.t = t;
    }
}

/// Meta-trains on the family: each outer iteration samples `meta_batch`
/// tasks, computes per-task directions from the same starting point, reduces
/// them by a fixed-order mean, and applies the annealed outer step.
///
/// Adam moments persist across inner loops and outer iterations; each task in
/// a meta-batch works on its own clone of the current moments and the clones
/// are averaged back afterwards. Periodic evaluations snapshot and restore
/// the moments so measurement never leaks into training.
pub fn meta_train(
    family: &dyn TaskFamily,
    cfg: &MetaTrainConfig,
    stream: RngStream,
) -> Result<TrainOutcome> {
    validate_train_config(cfg)?;
    let dim = family.dim();
    let mut phi = family.init_params(stream.substream(TAG_INIT));
    let mut opt_template = cfg.inner.optimizer.build(dim);
    let mut log = Vec::new();
    let total = cfg.schedule.total_iters;

    for iter in 0..total {
        let iter_stream = stream.substream(TAG_TASK).substream(iter as u64);
        let results = map_indices(cfg.meta_batch, |slot| -> Result<(MetaGradient, InnerOptimizer)> {
            let slot_stream = iter_stream.substream(slot as u64);
            let task = family.sample_train(slot_stream);
            let mut opt = opt_template.clone();
            let dir = task_direction(
                &cfg.algo,
                &phi,
                task.as_ref(),
                &cfg.inner,
                &mut opt,
                slot_stream.substream(TAG_INNER),
            )?;
            Ok((dir, opt))
        });

        let mut directions = Vec::with_capacity(cfg.meta_batch);
        let mut finals = Vec::with_capacity(cfg.meta_batch);
        for r in results {
            match r {
                Ok((d, o)) => {
                    directions.push(d);
                    finals.push(o);
                }
                Err(_) => return Err(Error::Divergence { iter }),
            }
        }

        let mut reduced = ParamVector::zeros(dim);
        for d in &directions {
            reduced = axpy(&reduced, 1.0 / cfg.meta_batch as f64, &d.direction);
        }
        let direction_norm = reduced.norm_l2();
        phi = outer_step(&phi, &reduced, &cfg.schedule, iter);
        if !phi.is_finite() {
            return Err(Error::Divergence { iter });
        }
        merge_adam_states(&mut opt_template, finals);

        let due_eval = cfg.eval_cadence > 0
            && ((iter + 1) % cfg.eval_cadence == 0 || iter + 1 == total);
        let eval_point = if due_eval {
            let settings = cfg.eval.as_ref().unwrap();
            // moments are backed up and restored around evaluation
            let blob = snapshot(&opt_template);
            let report = meta_evaluate(
                &phi,
                family,
                settings,
                stream.substream(TAG_EVAL).substream(iter as u64),
            )?;
            opt_template = restore(&blob, dim)?;
            let (post, post_se) = report.post_loss();
            let (pre, _) = report.pre_loss();
            let acc = report.post_accuracy();
            Some(EvalPoint {
                pre_loss: pre,
                post_loss: post,
                post_loss_stderr: post_se,
                accuracy: acc.map(|a| a.0),
                accuracy_stderr: acc.map(|a| a.1),
            })
        } else {
            None
        };

        if iter % cfg.log_every == 0 || iter + 1 == total || eval_point.is_some() {
            log.push(LogRecord {
                iter,
                epsilon: cfg.schedule.epsilon(iter),
                direction_norm,
                eval: eval_point,
            });
        }
    }

    Ok(TrainOutcome { params: phi, log })
}
