//! Inner-gradient combination sweep over four non-overlapping minibatches:
//! which linear combinations of g1..g4 make good outer-loop directions.

use serde::Serialize;

use metalearn::meta::{meta_evaluate, meta_train, ComboNormalize, MetaAlgorithm, MetaTrainConfig};
use metalearn::mlp::OutputKind;
use metalearn::RngStream;

use crate::config::ConfigReader;
use crate::output::{ensure_out_dir, write_json, write_text, write_train_log};
use crate::runs::{
    read_episode_family, read_eval, read_inner, read_model, read_outer, read_seed,
    EpisodeDefaults, EvalDefaults, InnerDefaults, OptimizerDefaults, OuterDefaults,
};
use crate::{CliError, RunArgs, RunArtifact};

const EVAL_STREAM: u64 = 0x5E;

/// The fixed combination set: each single gradient, and each prefix sum.
fn combination_set() -> Vec<(String, Vec<f64>, ComboNormalize)> {
    let weights = |ids: &[usize]| {
        let mut w = vec![0.0; 4];
        for &i in ids {
            w[i] = 1.0;
        }
        w
    };
    let mut out = Vec::new();
    for (name, ids) in [
        ("g1", vec![0usize]),
        ("g2", vec![1]),
        ("g3", vec![2]),
        ("g4", vec![3]),
    ] {
        out.push((name.to_string(), weights(&ids), ComboNormalize::Sum));
    }
    for (name, ids) in [
        ("g1-2", vec![0usize, 1]),
        ("g1-3", vec![0, 1, 2]),
        ("g1-4", vec![0, 1, 2, 3]),
    ] {
        out.push((format!("{name}_sum"), weights(&ids), ComboNormalize::Sum));
        out.push((format!("{name}_avg"), weights(&ids), ComboNormalize::Average));
    }
    out
}

#[derive(Serialize)]
struct ComboResult {
    combination: String,
    final_accuracy: f64,
    final_accuracy_stderr: f64,
    eval_episodes: usize,
}

#[derive(Serialize)]
struct ComboSummary {
    train_pool: usize,
    batch_size: usize,
    results: Vec<ComboResult>,
}

pub fn run(args: &RunArgs) -> Result<RunArtifact, CliError> {
    let mut reader = ConfigReader::load(&args.config)?;
    let seed = read_seed(&mut reader, args.seed)?;
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
    let inner = read_inner(
        &mut reader,
        &InnerDefaults {
            k: 4,
            batch_size: 25,
            sampling: "cycle",
            tail: "shared",
            optimizer: OptimizerDefaults {
                kind: "sgd",
                alpha: 0.003,
                adam_lr: 0.001,
            },
        },
    )?;
    let outer = read_outer(
        &mut reader,
        &OuterDefaults {
            step_size: 0.25,
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
            cadence_divisor: 8,
            cadence_trials: 200,
            final_trials: 1000,
            optimizer: OptimizerDefaults {
                kind: "sgd",
                alpha: 0.003,
                adam_lr: 0.001,
            },
        },
        outer.schedule.total_iters,
    )?;
    reader.reject_unknown()?;

    // the sweep is defined over exactly four non-overlapping batches
    let pool = family.num_classes * family.train_shots;
    if inner.k != 4 {
        return Err(CliError::Config("combo sweep requires inner.k = 4".into()));
    }
    if inner.sampling != metalearn::inner::SamplingMode::Cycle
        || inner.batch_size * 4 != pool
    {
        return Err(CliError::Config(format!(
            "combo sweep needs cycle sampling with batch_size * 4 == train pool ({pool})"
        )));
    }

    ensure_out_dir(&args.out)?;
    write_text(&args.out, "config.resolved", &reader.resolved_text("combo-sweep"))?;

    let root = RngStream::root(seed);
    let combos = combination_set();
    let trained = metalearn::par::map_indices(combos.len(), |i| {
        let (_, weights, normalize) = &combos[i];
        let cfg = MetaTrainConfig {
            algo: MetaAlgorithm::Combo {
                weights: weights.clone(),
                normalize: *normalize,
            },
            inner: inner.clone(),
            schedule: outer.schedule,
            meta_batch: outer.meta_batch,
            log_every: outer.log_every,
            eval_cadence: eval.cadence,
            eval: Some(eval.cadence_settings.clone()),
        };
        meta_train(&family, &cfg, root.substream(i as u64))
    });

    let mut results = Vec::new();
    for ((name, _, _), outcome) in combos.iter().zip(trained) {
        let outcome = outcome?;
        write_train_log(&args.out, &format!("combo_{name}.csv"), &outcome.log)?;
        let report = meta_evaluate(
            &outcome.params,
            &family,
            &eval.final_settings,
            root.substream(EVAL_STREAM),
        )?;
        let (acc, acc_se) = report.post_accuracy().expect("episode eval has accuracy");
        results.push(ComboResult {
            combination: name.clone(),
            final_accuracy: acc,
            final_accuracy_stderr: acc_se,
            eval_episodes: report.n(),
        });
    }

    if args.svg {
        let series: Vec<crate::svg::Series> = combos
            .iter()
            .map(|(name, _, _)| crate::svg::Series {
                name: name.clone(),
                points: super::fewshot::read_accuracy_curve(
                    &args.out.join(format!("combo_{name}.csv")),
                ),
            })
            .collect();
        crate::svg::line_chart(
            &args.out,
            "combo_curves.svg",
            "gradient combinations: query accuracy",
            "outer iteration",
            "accuracy",
            &series,
            false,
            false,
        )?;
    }

    let summary = ComboSummary {
        train_pool: pool,
        batch_size: inner.batch_size,
        results,
    };
    write_json(&args.out, "eval_summary.json", &summary)?;

    Ok(RunArtifact {
        out_dir: args.out.clone(),
    })
}
