//! Config-to-library plumbing shared by the training commands.

use metalearn::inner::{InnerLoopConfig, OptimizerSpec, SamplingMode, TailMode};
use metalearn::meta::{ComboNormalize, EvalSettings, MetaAlgorithm};
use metalearn::mlp::{Activation, MlpSpec, OutputKind};
use metalearn::optim::{OuterSchedule, ScheduleMode};
use metalearn::tasks::episode::EpisodeFamily;

use crate::config::ConfigReader;
use crate::CliError;

pub fn read_seed(reader: &mut ConfigReader, override_seed: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = override_seed {
        reader.force("seed", s);
    }
    reader.get_u64("seed", 0)
}

pub fn read_model(
    reader: &mut ConfigReader,
    default_layers: &[usize],
    output: OutputKind,
) -> Result<MlpSpec, CliError> {
    let layers = reader.get_list_usize("model.layers", default_layers)?;
    if layers.len() < 2 || layers.iter().any(|&n| n == 0) {
        return Err(CliError::Config(
            "model.layers needs at least two positive sizes".into(),
        ));
    }
    let activation = match reader
        .get_choice("model.activation", &["tanh", "relu"], "tanh")?
        .as_str()
    {
        "tanh" => Activation::Tanh,
        _ => Activation::Relu,
    };
    if output == OutputKind::SoftmaxCrossEntropy && *layers.last().unwrap() < 2 {
        return Err(CliError::Config(
            "softmax output needs at least 2 output units".into(),
        ));
    }
    Ok(MlpSpec::new(layers, activation, output))
}

pub struct OptimizerDefaults {
    pub kind: &'static str,
    pub alpha: f64,
    pub adam_lr: f64,
}

/// Reads an optimizer choice under `prefix` (`{prefix}.optimizer` plus its
/// step-size keys).
pub fn read_optimizer(
    reader: &mut ConfigReader,
    prefix: &str,
    defaults: &OptimizerDefaults,
) -> Result<OptimizerSpec, CliError> {
    let kind = reader.get_choice(
        &format!("{prefix}.optimizer"),
        &["sgd", "adam"],
        defaults.kind,
    )?;
    let alpha = reader.get_f64(&format!("{prefix}.alpha"), defaults.alpha)?;
    let adam_lr = reader.get_f64(&format!("{prefix}.adam_lr"), defaults.adam_lr)?;
    let beta1 = reader.get_f64(&format!("{prefix}.adam_beta1"), 0.0)?;
    let beta2 = reader.get_f64(&format!("{prefix}.adam_beta2"), 0.999)?;
    let eps = reader.get_f64(&format!("{prefix}.adam_eps"), 1e-8)?;
    Ok(match kind.as_str() {
        "sgd" => OptimizerSpec::Sgd { alpha },
        _ => OptimizerSpec::Adam {
            lr: adam_lr,
            beta1,
            beta2,
            eps,
        },
    })
}

pub struct InnerDefaults {
    pub k: usize,
    pub batch_size: usize,
    pub sampling: &'static str,
    pub tail: &'static str,
    pub optimizer: OptimizerDefaults,
}

pub fn read_inner(reader: &mut ConfigReader, d: &InnerDefaults) -> Result<InnerLoopConfig, CliError> {
    let k = reader.get_usize("inner.k", d.k)?;
    let batch_size = reader.get_usize("inner.batch_size", d.batch_size)?;
    let sampling = match reader
        .get_choice("inner.sampling", &["cycle", "replacement"], d.sampling)?
        .as_str()
    {
        "cycle" => SamplingMode::Cycle,
        _ => SamplingMode::Replacement,
    };
    let tail = match reader
        .get_choice("inner.tail", &["shared", "separate"], d.tail)?
        .as_str()
    {
        "shared" => TailMode::Shared,
        _ => TailMode::Separate,
    };
    let optimizer = read_optimizer(reader, "inner", &d.optimizer)?;
    let cfg = InnerLoopConfig {
        k,
        batch_size,
        sampling,
        tail,
        optimizer,
        record_trajectory: false,
    };
    cfg.validate().map_err(CliError::from)?;
    Ok(cfg)
}

pub struct OuterDefaults {
    pub step_size: f64,
    pub desk_iterations: usize,
    pub paper_iterations: usize,
    pub meta_batch: usize,
}

pub struct OuterConfig {
    pub schedule: OuterSchedule,
    pub meta_batch: usize,
    pub log_every: usize,
}

pub fn read_outer(
    reader: &mut ConfigReader,
    d: &OuterDefaults,
    paper_scale: bool,
) -> Result<OuterConfig, CliError> {
    let step_size = reader.get_f64("outer.step_size", d.step_size)?;
    let default_iters = if paper_scale {
        d.paper_iterations
    } else {
        d.desk_iterations
    };
    let iterations = reader.get_usize("outer.iterations", default_iters)?;
    if iterations == 0 {
        return Err(CliError::Config("outer.iterations must be >= 1".into()));
    }
    let mode = match reader
        .get_choice("outer.schedule", &["linear", "constant"], "linear")?
        .as_str()
    {
        "linear" => ScheduleMode::LinearToZero,
        _ => ScheduleMode::Constant,
    };
    let meta_batch = reader.get_usize("outer.meta_batch", d.meta_batch)?;
    let log_every = reader.get_usize("outer.log_every", (iterations / 200).max(1))?;
    Ok(OuterConfig {
        schedule: OuterSchedule {
            eps0: step_size,
            total_iters: iterations,
            mode,
        },
        meta_batch,
        log_every,
    })
}

pub struct EvalDefaults {
    pub adapt_steps: usize,
    pub batch_size: usize,
    pub cadence_divisor: usize,
    pub cadence_trials: usize,
    pub final_trials: usize,
    pub optimizer: OptimizerDefaults,
}

pub struct EvalConfig {
    pub cadence: usize,
    pub cadence_settings: EvalSettings,
    pub final_settings: EvalSettings,
}

pub fn read_eval(
    reader: &mut ConfigReader,
    d: &EvalDefaults,
    total_iterations: usize,
) -> Result<EvalConfig, CliError> {
    let adapt_steps = reader.get_usize("eval.adapt_steps", d.adapt_steps)?;
    let batch_size = reader.get_usize("eval.batch_size", d.batch_size)?;
    let sampling = match reader
        .get_choice("eval.sampling", &["cycle", "replacement"], "cycle")?
        .as_str()
    {
        "cycle" => SamplingMode::Cycle,
        _ => SamplingMode::Replacement,
    };
    let optimizer = read_optimizer(reader, "eval", &d.optimizer)?;
    let default_cadence = (total_iterations / d.cadence_divisor).max(1);
    let cadence = reader.get_usize("eval.cadence", default_cadence)?;
    let cadence_trials = reader.get_usize("eval.cadence_trials", d.cadence_trials)?;
    let final_trials = reader.get_usize("eval.final_trials", d.final_trials)?;
    let base = EvalSettings {
        trials: cadence_trials,
        adapt_steps,
        batch_size,
        sampling,
        optimizer,
    };
    let mut final_settings = base.clone();
    final_settings.trials = final_trials;
    Ok(EvalConfig {
        cadence,
        cadence_settings: base,
        final_settings,
    })
}

pub struct EpisodeDefaults {
    pub classes: usize,
    pub dim: usize,
    pub sigma: f64,
    pub train_shots: usize,
    pub eval_shots: usize,
    pub query_per_class: usize,
}

pub fn read_episode_family(
    reader: &mut ConfigReader,
    model: MlpSpec,
    d: &EpisodeDefaults,
) -> Result<EpisodeFamily, CliError> {
    let classes = reader.get_usize("task.classes", d.classes)?;
    let dim = reader.get_usize("task.dim", d.dim)?;
    let sigma = reader.get_f64("task.sigma", d.sigma)?;
    let train_shots = reader.get_usize("task.train_shots", d.train_shots)?;
    let eval_shots = reader.get_usize("task.eval_shots", d.eval_shots)?;
    let query = reader.get_usize("task.query_per_class", d.query_per_class)?;
    if classes < 2 || sigma <= 0.0 || train_shots == 0 || eval_shots == 0 || query == 0 {
        return Err(CliError::Config(
            "task: need classes >= 2, sigma > 0, and positive shot/query counts".into(),
        ));
    }
    if model.in_dim() != dim || model.out_dim() != classes {
        return Err(CliError::Config(format!(
            "model is {}-in {}-out but the episode family needs {dim}-in {classes}-out",
            model.in_dim(),
            model.out_dim()
        )));
    }
    Ok(EpisodeFamily::new(
        model,
        classes,
        dim,
        sigma,
        train_shots,
        eval_shots,
        query,
    ))
}

/// Builds the trained algorithm named in a config's algorithm list. `joint`
/// is the g1-only combination, the joint-training baseline.
pub fn algo_from_name(name: &str, k: usize) -> Result<MetaAlgorithm, CliError> {
    Ok(match name {
        "reptile" => MetaAlgorithm::Reptile,
        "fomaml" => MetaAlgorithm::Fomaml,
        "maml" => MetaAlgorithm::Maml,
        "joint" => {
            let mut weights = vec![0.0; k];
            weights[0] = 1.0;
            MetaAlgorithm::Combo {
                weights,
                normalize: ComboNormalize::Sum,
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown algorithm `{other}` (expected reptile, fomaml, maml, or joint)"
            )))
        }
    })
}
