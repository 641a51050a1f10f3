//! Batch-overlap sensitivity sweeps: how shared-tail first-order MAML
//! degrades when its meta-gradient batch overlaps the earlier inner batches,
//! across inner-iteration count, batch size, or outer step size.

use serde::Serialize;

use metalearn::inner::{InnerLoopConfig, SamplingMode, TailMode};
use metalearn::meta::{meta_evaluate, meta_train, MetaAlgorithm, MetaTrainConfig};
use metalearn::mlp::OutputKind;
use metalearn::RngStream;

use crate::config::ConfigReader;
use crate::output::{ensure_out_dir, fmt_f64, write_json, write_text, CsvFile};
use crate::runs::{
    read_episode_family, read_eval, read_inner, read_model, read_outer, read_seed,
    EpisodeDefaults, EvalDefaults, InnerDefaults, OptimizerDefaults, OuterDefaults,
};
use crate::{CliError, RunArgs, RunArtifact};

const EVAL_STREAM: u64 = 0x5E;

const VARIANTS: [&str; 4] = [
    "reptile",
    "fomaml-shared-cycle",
    "fomaml-shared-replacement",
    "fomaml-separate",
];

fn variant_config(variant: &str, base: &InnerLoopConfig) -> InnerLoopConfig {
    let mut cfg = base.clone();
    match variant {
        "reptile" => {}
        "fomaml-shared-cycle" => {
            cfg.tail = TailMode::Shared;
            cfg.sampling = SamplingMode::Cycle;
        }
        "fomaml-shared-replacement" => {
            cfg.tail = TailMode::Shared;
            cfg.sampling = SamplingMode::Replacement;
        }
        "fomaml-separate" => {
            cfg.tail = TailMode::Separate;
        }
        _ => unreachable!(),
    }
    cfg
}

fn variant_algo(variant: &str) -> MetaAlgorithm {
    if variant == "reptile" {
        MetaAlgorithm::Reptile
    } else {
        MetaAlgorithm::Fomaml
    }
}

#[derive(Serialize)]
struct CellResult {
    axis_value: f64,
    variant: String,
    final_accuracy: f64,
    final_accuracy_stderr: f64,
    final_query_loss: f64,
}

#[derive(Serialize)]
struct OverlapSummary {
    axis: String,
    train_pool: usize,
    cells: Vec<CellResult>,
}

pub fn run(args: &RunArgs) -> Result<RunArtifact, CliError> {
    let mut reader = ConfigReader::load(&args.config)?;
    let seed = read_seed(&mut reader, args.seed)?;
    let axis = reader.get_choice(
        "sweep.axis",
        &["iterations", "batch_size", "outer_step"],
        "iterations",
    )?;
    let model = read_model(&mut reader, &[20, 64, 64, 5], OutputKind::SoftmaxCrossEntropy)?;
    let family = read_episode_family(
        &mut reader,
        model,
        &EpisodeDefaults {
            classes: 5,
            dim: 20,
            sigma: 0.3,
            train_shots: 20,
            eval_shots: 5,
            query_per_class: 1,
        },
    )?;
    let pool = family.num_classes * family.train_shots;
    // the outer-step sweep looks at full batches; the others use batch 25
    let default_batch = if axis == "outer_step" { pool } else { 25 };
    let inner = read_inner(
        &mut reader,
        &InnerDefaults {
            k: 4,
            batch_size: default_batch,
            sampling: "cycle",
            tail: "shared",
            optimizer: OptimizerDefaults {
                kind: "adam",
                alpha: 0.003,
                adam_lr: 0.003,
            },
        },
    )?;
    let outer = read_outer(
        &mut reader,
        &OuterDefaults {
            step_size: 1.0,
            desk_iterations: 2_000,
            paper_iterations: 40_000,
            meta_batch: 1,
        },
        args.paper_scale,
    )?;
    let eval = read_eval(
        &mut reader,
        &EvalDefaults {
            adapt_steps: 5,
            batch_size: 25,
            cadence_divisor: 4,
            cadence_trials: 100,
            final_trials: 1000,
            optimizer: OptimizerDefaults {
                kind: "adam",
                alpha: 0.003,
                adam_lr: 0.003,
            },
        },
        outer.schedule.total_iters,
    )?;
    let values: Vec<f64> = match axis.as_str() {
        "iterations" => reader
            .get_list_usize("sweep.values", &[1, 2, 3, 4, 5, 6, 7, 8])?
            .into_iter()
            .map(|v| v as f64)
            .collect(),
        "batch_size" => reader
            .get_list_usize("sweep.values", &[5, 10, 25, 50, 100])?
            .into_iter()
            .map(|v| v as f64)
            .collect(),
        _ => reader.get_list_f64("sweep.values", &[0.125, 0.25, 0.5, 1.0, 2.0])?,
    };
    reader.reject_unknown()?;

    if values.is_empty() {
        return Err(CliError::Config("sweep.values must not be empty".into()));
    }
    if axis == "iterations" && values.iter().any(|&v| v < 1.0)
        || axis == "batch_size" && values.iter().any(|&v| v < 1.0)
        || axis == "outer_step" && values.iter().any(|&v| v <= 0.0)
    {
        return Err(CliError::Config(format!("invalid sweep value for axis {axis}")));
    }

    ensure_out_dir(&args.out)?;
    write_text(&args.out, "config.resolved", &reader.resolved_text("overlap-sweep"))?;

    let root = RngStream::root(seed);
    let cells: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|v| (0..VARIANTS.len()).map(move |a| (v, a)))
        .collect();

    let outcomes = metalearn::par::map_indices(cells.len(), |idx| {
        let (vi, ai) = cells[idx];
        let value = values[vi];
        let variant = VARIANTS[ai];
        let mut cfg = variant_config(variant, &inner);
        let mut schedule = outer.schedule;
        match axis.as_str() {
            "iterations" => cfg.k = value as usize,
            "batch_size" => cfg.batch_size = value as usize,
            _ => schedule.eps0 = value,
        }
        let train_cfg = MetaTrainConfig {
            algo: variant_algo(variant),
            inner: cfg,
            schedule,
            meta_batch: outer.meta_batch,
            log_every: outer.log_every,
            eval_cadence: 0,
            eval: None,
        };
        let outcome = meta_train(&family, &train_cfg, root.substream(idx as u64))?;
        let report = meta_evaluate(
            &outcome.params,
            &family,
            &eval.final_settings,
            root.substream(EVAL_STREAM),
        )?;
        Ok::<_, CliError>(report)
    });

    let mut csv = CsvFile::new(
        &args.out,
        &format!("overlap_{axis}.csv"),
        "axis_value,variant,final_accuracy,final_accuracy_stderr,final_query_loss",
    );
    let mut results = Vec::new();
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        let report = outcome?;
        let (vi, ai) = cells[idx];
        let (acc, acc_se) = report.post_accuracy().expect("episode eval has accuracy");
        let (loss, _) = report.post_loss();
        csv.row(&[
            fmt_f64(values[vi]),
            VARIANTS[ai].to_string(),
            fmt_f64(acc),
            fmt_f64(acc_se),
            fmt_f64(loss),
        ]);
        results.push(CellResult {
            axis_value: values[vi],
            variant: VARIANTS[ai].to_string(),
            final_accuracy: acc,
            final_accuracy_stderr: acc_se,
            final_query_loss: loss,
        });
    }
    csv.finish()?;

    if args.svg {
        let series: Vec<crate::svg::Series> = VARIANTS
            .iter()
            .map(|variant| crate::svg::Series {
                name: variant.to_string(),
                points: results
                    .iter()
                    .filter(|c| c.variant == *variant)
                    .map(|c| (c.axis_value, c.final_accuracy))
                    .collect(),
            })
            .collect();
        crate::svg::line_chart(
            &args.out,
            &format!("overlap_{axis}.svg"),
            &format!("final accuracy vs {axis}"),
            &axis,
            "accuracy",
            &series,
            false,
            false,
        )?;
    }

    let summary = OverlapSummary {
        axis,
        train_pool: pool,
        cells: results,
    };
    write_json(&args.out, "eval_summary.json", &summary)?;

    Ok(RunArtifact {
        out_dir: args.out.clone(),
    })
}
