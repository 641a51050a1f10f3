//! Sine-wave regression demo: meta-train with Reptile and MAML, then show
//! pre/post-adaptation predictions on held-out tasks against a random-init
//! control.

use nalgebra::DMatrix;
use serde::Serialize;

use metalearn::meta::{meta_evaluate, meta_train, EvalSettings, MetaAlgorithm, MetaTrainConfig};
use metalearn::mlp::{mlp_predict, MlpSpec, OutputKind};
use metalearn::inner::{InnerLoopConfig, OptimizerSpec, SamplingMode, TailMode};
use metalearn::task::{Task, TaskFamily};
use metalearn::tasks::sine::{eval_grid, mean_abs_prediction, sine_sample, SineFamily};
use metalearn::{ParamVector, RngStream};

use crate::config::ConfigReader;
use crate::output::{ensure_out_dir, fmt_f64, write_json, write_params, write_text, write_train_log, CsvFile};
use crate::runs::{
    read_eval, read_inner, read_model, read_outer, read_seed, EvalDefaults, InnerDefaults,
    OptimizerDefaults, OuterDefaults,
};
use crate::{CliError, RunArgs, RunArtifact};

const EVAL_STREAM: u64 = 0x5E;
const CURVE_STREAM: u64 = 0xC5;
const CONTROL_STREAM: u64 = 0xF0;

#[derive(Serialize)]
struct AlgoSummary {
    algorithm: String,
    trials: usize,
    pre_abs_mean: f64,
    pre_loss_mean: f64,
    post_loss_mean: f64,
    post_loss_stderr: f64,
    /// Tasks whose eval loss dropped by at least 90% after adaptation.
    reduced_90_count: usize,
}

#[derive(Serialize)]
struct SineSummary {
    train_points: usize,
    eval_adapt_steps: usize,
    runs: Vec<AlgoSummary>,
}

fn curves_csv(
    out: &std::path::Path,
    name: &str,
    spec: &MlpSpec,
    family: &SineFamily,
    phi_pre: &ParamVector,
    phi_post: &ParamVector,
    task_stream: RngStream,
) -> Result<(), CliError> {
    let task = sine_sample(family, task_stream);
    let grid = eval_grid();
    let inputs = DMatrix::from_row_slice(1, grid.len(), &grid);
    let pre = mlp_predict(spec, phi_pre, &inputs);
    let post = mlp_predict(spec, phi_post, &inputs);
    let mut csv = CsvFile::new(out, name, "x,f_pre,f_post,f_true");
    for (i, &x) in grid.iter().enumerate() {
        csv.row(&[
            fmt_f64(x),
            fmt_f64(pre[(0, i)]),
            fmt_f64(post[(0, i)]),
            fmt_f64(task.target(x)),
        ]);
    }
    csv.finish()?;
    Ok(())
}

/// Adapts `phi` on one held-out task with the eval settings and returns the
/// adapted parameters (for the prediction curves).
fn adapt_once(
    phi: &ParamVector,
    family: &SineFamily,
    settings: &EvalSettings,
    stream: RngStream,
) -> Result<ParamVector, CliError> {
    let task = sine_sample(family, stream);
    let cfg = InnerLoopConfig {
        k: settings.adapt_steps,
        batch_size: settings.batch_size,
        sampling: settings.sampling,
        tail: TailMode::Shared,
        optimizer: settings.optimizer.clone(),
        record_trajectory: false,
    };
    let mut opt = settings.optimizer.build(task.dim());
    let traj = metalearn::inner::run_inner(phi, &task, &cfg, &mut opt, stream.substream(1))?;
    Ok(traj.end)
}

pub fn run(args: &RunArgs) -> Result<RunArtifact, CliError> {
    let mut reader = ConfigReader::load(&args.config)?;
    let seed = read_seed(&mut reader, args.seed)?;
    let model = read_model(&mut reader, &[1, 64, 64, 1], OutputKind::Linear)?;
    if model.in_dim() != 1 || model.out_dim() != 1 {
        return Err(CliError::Config("sine model must be 1-in 1-out".into()));
    }
    let train_points = reader.get_usize("task.train_points", 10)?;

    let inner = read_inner(
        &mut reader,
        &InnerDefaults {
            k: 10,
            batch_size: 10,
            sampling: "cycle",
            tail: "shared",
            optimizer: OptimizerDefaults {
                kind: "sgd",
                alpha: 0.02,
                adam_lr: 0.001,
            },
        },
    )?;
    let outer = read_outer(
        &mut reader,
        &OuterDefaults {
            step_size: 1.0,
            desk_iterations: 12_000,
            paper_iterations: 30_000,
            meta_batch: 1,
        },
        args.paper_scale,
    )?;
    let eval = read_eval(
        &mut reader,
        &EvalDefaults {
            adapt_steps: 32,
            batch_size: 10,
            cadence_divisor: 6,
            cadence_trials: 20,
            final_trials: 100,
            optimizer: OptimizerDefaults {
                kind: "sgd",
                alpha: 0.02,
                adam_lr: 0.001,
            },
        },
        outer.schedule.total_iters,
    )?;

    // the MAML run has its own inner loop and outer step scale
    let maml_alpha = reader.get_f64("maml.alpha", 0.01)?;
    let maml_k = reader.get_usize("maml.k", 5)?;
    let maml_batch = reader.get_usize("maml.batch_size", 10)?;
    let maml_step = reader.get_f64("maml.step_size", 0.02)?;
    let checkpoint = reader.get_bool("checkpoint", false)?;
    reader.reject_unknown()?;

    ensure_out_dir(&args.out)?;
    write_text(&args.out, "config.resolved", &reader.resolved_text("sine-demo"))?;

    let family = SineFamily::with_model(model.clone(), train_points);
    let root = RngStream::root(seed);

    let reptile_cfg = MetaTrainConfig {
        algo: MetaAlgorithm::Reptile,
        inner: inner.clone(),
        schedule: outer.schedule,
        meta_batch: outer.meta_batch,
        log_every: outer.log_every,
        eval_cadence: eval.cadence,
        eval: Some(eval.cadence_settings.clone()),
    };
    let mut maml_inner = inner.clone();
    maml_inner.k = maml_k;
    maml_inner.batch_size = maml_batch;
    maml_inner.optimizer = OptimizerSpec::Sgd { alpha: maml_alpha };
    maml_inner.sampling = SamplingMode::Cycle;
    let mut maml_schedule = outer.schedule;
    maml_schedule.eps0 = maml_step;
    let maml_cfg = MetaTrainConfig {
        algo: MetaAlgorithm::Maml,
        inner: maml_inner,
        schedule: maml_schedule,
        meta_batch: outer.meta_batch,
        log_every: outer.log_every,
        eval_cadence: eval.cadence,
        eval: Some(eval.cadence_settings.clone()),
    };

    let trained = metalearn::par::map_indices(2, |i| {
        let cfg = if i == 0 { &reptile_cfg } else { &maml_cfg };
        meta_train(&family, cfg, root.substream(i as u64))
    });
    let mut params = Vec::new();
    for (i, outcome) in trained.into_iter().enumerate() {
        let outcome = outcome?;
        let name = if i == 0 { "reptile" } else { "maml" };
        write_train_log(&args.out, &format!("train_log_{name}.csv"), &outcome.log)?;
        params.push((name.to_string(), outcome.params));
    }
    // random-init control: the untouched initialization
    params.push((
        "random".to_string(),
        family.init_params(root.substream(CONTROL_STREAM)),
    ));

    let mut runs = Vec::new();
    for (name, phi) in &params {
        let report = meta_evaluate(
            phi,
            &family,
            &eval.final_settings,
            root.substream(EVAL_STREAM),
        )?;
        let (post, post_se) = report.post_loss();
        let (pre, _) = report.pre_loss();
        runs.push(AlgoSummary {
            algorithm: name.clone(),
            trials: report.n(),
            pre_abs_mean: mean_abs_prediction(&model, phi),
            pre_loss_mean: pre,
            post_loss_mean: post,
            post_loss_stderr: post_se,
            reduced_90_count: report.loss_reduction_count(0.9),
        });

        let adapted = adapt_once(phi, &family, &eval.final_settings, root.substream(CURVE_STREAM))?;
        curves_csv(
            &args.out,
            &format!("curves_{name}.csv"),
            &model,
            &family,
            phi,
            &adapted,
            root.substream(CURVE_STREAM),
        )?;
        if checkpoint {
            write_params(&args.out, &format!("params_{name}.csv"), phi)?;
        }
        if args.svg {
            let grid = eval_grid();
            let inputs = DMatrix::from_row_slice(1, grid.len(), &grid);
            let task = sine_sample(&family, root.substream(CURVE_STREAM));
            let pre = mlp_predict(&model, phi, &inputs);
            let post = mlp_predict(&model, &adapted, &inputs);
            let series = vec![
                crate::svg::Series {
                    name: "true".into(),
                    points: grid.iter().map(|&x| (x, task.target(x))).collect(),
                },
                crate::svg::Series {
                    name: "before".into(),
                    points: grid.iter().enumerate().map(|(i, &x)| (x, pre[(0, i)])).collect(),
                },
                crate::svg::Series {
                    name: "after 32 steps".into(),
                    points: grid.iter().enumerate().map(|(i, &x)| (x, post[(0, i)])).collect(),
                },
            ];
            crate::svg::line_chart(
                &args.out,
                &format!("curves_{name}.svg"),
                &format!("{name}: adaptation to a held-out sine task"),
                "x",
                "f(x)",
                &series,
                false,
                false,
            )?;
        }
    }

    let summary = SineSummary {
        train_points,
        eval_adapt_steps: eval.final_settings.adapt_steps,
        runs,
    };
    write_json(&args.out, "eval_summary.json", &summary)?;

    Ok(RunArtifact {
        out_dir: args.out.clone(),
    })
}
