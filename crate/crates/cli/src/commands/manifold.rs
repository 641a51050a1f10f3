//! Solution-manifold demo: iterate `phi <- (1-eps) phi + eps P(phi)` over
//! alternating affine manifolds and compare against the closed-form
//! minimizer of the average squared distance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use metalearn::optim::{OuterSchedule, ScheduleMode};
use metalearn::tasks::manifold::{
    manifold_fixed_point_oracle, manifold_sgd_iterate, AffineManifoldTask, TaskOrder,
};
use metalearn::{ParamVector, RngStream};

use crate::config::ConfigReader;
use crate::output::{ensure_out_dir, fmt_f64, write_json, write_text, CsvFile};
use crate::runs::read_seed;
use crate::{CliError, RunArgs, RunArtifact};

#[derive(Serialize)]
struct ManifoldSummary {
    preset: String,
    iterations: usize,
    epsilon0: f64,
    schedule: String,
    oracle_point: Vec<f64>,
    oracle_degenerate: bool,
    start_distance: f64,
    final_distance: f64,
    /// Constant step sizes only reach a neighborhood of the oracle point.
    neighborhood_only: bool,
}

fn build_tasks(
    preset: &str,
    dim: usize,
    rows: &[usize],
    stream: RngStream,
) -> Result<Vec<AffineManifoldTask>, CliError> {
    match preset {
        "orthogonal-lines" => Ok(vec![
            AffineManifoldTask::hyperplane(vec![0.0, 1.0], 0.0)?,
            AffineManifoldTask::hyperplane(vec![1.0, 0.0], 0.0)?,
        ]),
        "random" => {
            let mut rng = stream.rng();
            rows.iter()
                .map(|&r| {
                    if r == 0 || r >= dim {
                        return Err(CliError::Config(format!(
                            "task.rows entries must be in 1..{dim}"
                        )));
                    }
                    let m = DMatrix::from_fn(r, dim, |_, _| rng.gen_range(-1.0..1.0));
                    let q = DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0));
                    AffineManifoldTask::new(m, q).map_err(CliError::from)
                })
                .collect()
        }
        other => Err(CliError::Config(format!("unknown preset `{other}`"))),
    }
}

pub fn run(args: &RunArgs) -> Result<RunArtifact, CliError> {
    let mut reader = ConfigReader::load(&args.config)?;
    let seed = read_seed(&mut reader, args.seed)?;
    let preset = reader.get_choice("task.preset", &["orthogonal-lines", "random"], "orthogonal-lines")?;
    let dim = reader.get_usize("task.dim", 10)?;
    let rows = reader.get_list_usize("task.rows", &[4, 6])?;
    let iterations = reader.get_usize("run.iterations", 2_000_000)?;
    let eps0 = reader.get_f64("run.epsilon", 1.0)?;
    let schedule_name = reader.get_choice("run.schedule", &["linear", "constant"], "linear")?;
    let trace_every = reader.get_usize("run.trace_every", (iterations / 1000).max(1))?;
    reader.reject_unknown()?;

    if iterations == 0 || eps0 <= 0.0 || eps0 > 1.0 {
        return Err(CliError::Config(
            "run: iterations >= 1 and epsilon in (0, 1] required".into(),
        ));
    }

    ensure_out_dir(&args.out)?;
    write_text(&args.out, "config.resolved", &reader.resolved_text("manifold-demo"))?;

    let stream = RngStream::root(seed);
    let tasks = build_tasks(&preset, dim, &rows, stream.substream(1))?;
    let ambient = tasks[0].ambient_dim();
    let probs = vec![1.0 / tasks.len() as f64; tasks.len()];
    let oracle = manifold_fixed_point_oracle(&tasks, &probs)?;

    let mut rng = stream.substream(2).rng();
    let start = ParamVector::new((0..ambient).map(|_| rng.gen_range(-2.0..2.0)).collect());

    let schedule = OuterSchedule {
        eps0,
        total_iters: iterations,
        mode: if schedule_name == "linear" {
            ScheduleMode::LinearToZero
        } else {
            ScheduleMode::Constant
        },
    };
    let trace = manifold_sgd_iterate(&start, &tasks, TaskOrder::Alternating, &schedule, iterations);

    let mut header = String::from("iter");
    for i in 0..ambient {
        header.push_str(&format!(",phi{i}"));
    }
    header.push_str(",distance_to_oracle");
    let mut csv = CsvFile::new(&args.out, "trace.csv", &header);
    let mut curve = Vec::new();
    for (i, phi) in trace.iter().enumerate() {
        if i % trace_every != 0 && i != trace.len() - 1 {
            continue;
        }
        let dist = phi.sub(&oracle.point).norm_l2();
        let mut cells = vec![i.to_string()];
        cells.extend(phi.iter().map(|v| fmt_f64(*v)));
        cells.push(fmt_f64(dist));
        csv.row(&cells);
        curve.push((i as f64, dist));
    }
    csv.finish()?;

    let final_distance = trace.last().unwrap().sub(&oracle.point).norm_l2();
    let summary = ManifoldSummary {
        preset: preset.clone(),
        iterations,
        epsilon0: eps0,
        schedule: schedule_name.clone(),
        oracle_point: oracle.point.as_slice().to_vec(),
        oracle_degenerate: oracle.degenerate,
        start_distance: start.sub(&oracle.point).norm_l2(),
        final_distance,
        neighborhood_only: schedule_name == "constant",
    };
    write_json(&args.out, "eval_summary.json", &summary)?;

    if args.svg {
        crate::svg::line_chart(
            &args.out,
            "trace.svg",
            "distance to oracle fixed point",
            "iteration",
            "distance",
            &[crate::svg::Series {
                name: "distance".into(),
                points: curve,
            }],
            false,
            true,
        )?;
    }

    Ok(RunArtifact {
        out_dir: args.out.clone(),
    })
}
