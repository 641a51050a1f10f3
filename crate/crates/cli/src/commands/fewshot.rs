//! Few-shot classification on the synthetic episode family: meta-train each
//! configured algorithm and report final query accuracy over many held-out
//! episodes.

use serde::Serialize;

use metalearn::inner::OptimizerSpec;
use metalearn::meta::{meta_evaluate, meta_train, MetaAlgorithm, MetaTrainConfig};
use metalearn::mlp::OutputKind;
use metalearn::RngStream;

use crate::config::ConfigReader;
use crate::output::{ensure_out_dir, write_json, write_params, write_text, write_train_log};
use crate::runs::{
    algo_from_name, read_episode_family, read_eval, read_inner, read_model, read_outer, read_seed,
    EpisodeDefaults, EvalDefaults, InnerDefaults, OptimizerDefaults, OuterDefaults,
};
use crate::{CliError, RunArgs, RunArtifact};

const EVAL_STREAM: u64 = 0x5E;

#[derive(Serialize)]
struct AlgoResult {
    algorithm: String,
    final_accuracy: f64,
    final_accuracy_stderr: f64,
    final_query_loss: f64,
    eval_episodes: usize,
}

#[derive(Serialize)]
struct FewshotSummary {
    classes: usize,
    eval_shots: usize,
    chance_accuracy: f64,
    results: Vec<AlgoResult>,
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
            train_shots: 10,
            eval_shots: 1,
            query_per_class: 1,
        },
    )?;
    let algorithms =
        reader.get_list_string("algorithms", &["reptile", "fomaml", "maml", "joint"])?;
    let inner = read_inner(
        &mut reader,
        &InnerDefaults {
            k: 5,
            batch_size: 10,
            sampling: "cycle",
            tail: "separate",
            optimizer: OptimizerDefaults {
                kind: "adam",
                alpha: 0.02,
                adam_lr: 0.001,
            },
        },
    )?;
    let outer = read_outer(
        &mut reader,
        &OuterDefaults {
            step_size: 1.0,
            desk_iterations: 2_000,
            paper_iterations: 100_000,
            meta_batch: 5,
        },
        args.paper_scale,
    )?;
    let eval = read_eval(
        &mut reader,
        &EvalDefaults {
            adapt_steps: 50,
            batch_size: 5,
            cadence_divisor: 8,
            cadence_trials: 200,
            final_trials: 1000,
            optimizer: OptimizerDefaults {
                kind: "adam",
                alpha: 0.02,
                adam_lr: 0.001,
            },
        },
        outer.schedule.total_iters,
    )?;
    // MAML runs on SGD inner loops
    let maml_alpha = reader.get_f64("maml.alpha", 0.1)?;
    let maml_step = reader.get_f64("maml.step_size", outer.schedule.eps0)?;
    let checkpoint = reader.get_bool("checkpoint", false)?;
    reader.reject_unknown()?;

    ensure_out_dir(&args.out)?;
    write_text(&args.out, "config.resolved", &reader.resolved_text("fewshot"))?;

    let root = RngStream::root(seed);
    let mut configs = Vec::new();
    for name in &algorithms {
        let algo = algo_from_name(name, inner.k)?;
        let mut cfg = MetaTrainConfig {
            algo,
            inner: inner.clone(),
            schedule: outer.schedule,
            meta_batch: outer.meta_batch,
            log_every: outer.log_every,
            eval_cadence: eval.cadence,
            eval: Some(eval.cadence_settings.clone()),
        };
        if matches!(cfg.algo, MetaAlgorithm::Maml) {
            cfg.inner.optimizer = OptimizerSpec::Sgd { alpha: maml_alpha };
            cfg.schedule.eps0 = maml_step;
        }
        configs.push((name.clone(), cfg));
    }

    let trained = metalearn::par::map_indices(configs.len(), |i| {
        meta_train(&family, &configs[i].1, root.substream(i as u64))
    });

    let mut results = Vec::new();
    for ((name, _), outcome) in configs.iter().zip(trained) {
        let outcome = outcome?;
        write_train_log(&args.out, &format!("train_log_{name}.csv"), &outcome.log)?;
        if checkpoint {
            write_params(&args.out, &format!("params_{name}.csv"), &outcome.params)?;
        }
        // every algorithm is scored on the same held-out episode stream
        let report = meta_evaluate(
            &outcome.params,
            &family,
            &eval.final_settings,
            root.substream(EVAL_STREAM),
        )?;
        let (acc, acc_se) = report.post_accuracy().ok_or_else(|| {
            CliError::Io("episode evaluation must produce accuracies".into())
        })?;
        let (loss, _) = report.post_loss();
        results.push(AlgoResult {
            algorithm: name.clone(),
            final_accuracy: acc,
            final_accuracy_stderr: acc_se,
            final_query_loss: loss,
            eval_episodes: report.n(),
        });
    }

    if args.svg {
        let series: Vec<crate::svg::Series> = configs
            .iter()
            .map(|(name, _)| {
                let log_path = args.out.join(format!("train_log_{name}.csv"));
                let points = read_accuracy_curve(&log_path);
                crate::svg::Series {
                    name: name.clone(),
                    points,
                }
            })
            .collect();
        crate::svg::line_chart(
            &args.out,
            "learning_curves.svg",
            "query accuracy during meta-training",
            "outer iteration",
            "accuracy",
            &series,
            false,
            false,
        )?;
    }

    let summary = FewshotSummary {
        classes: family.model.out_dim(),
        eval_shots: family.eval_shots,
        chance_accuracy: 1.0 / family.model.out_dim() as f64,
        results,
    };
    write_json(&args.out, "eval_summary.json", &summary)?;

    Ok(RunArtifact {
        out_dir: args.out.clone(),
    })
}

/// Pulls (iteration, accuracy) pairs back out of a v1 training log.
pub(crate) fn read_accuracy_curve(path: &std::path::Path) -> Vec<(f64, f64)> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for line in text.lines().skip(2) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() >= 7 && !cells[6].is_empty() {
            if let (Ok(x), Ok(y)) = (cells[0].parse::<f64>(), cells[6].parse::<f64>()) {
                out.push((x, y));
            }
        }
    }
    out
}
