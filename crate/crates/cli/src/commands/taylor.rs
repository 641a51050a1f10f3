//! Expansion verification: estimates AvgGrad / AvgGradInner, measures the
//! meta-gradients on frozen batch sequences, and checks that the residual
//! scales like the square of the inner step size (or is exactly zero on the
//! quadratic family).

use serde::Serialize;

use metalearn::analysis::{
    coefficients, estimate_terms, residual_study, AnalysisAlgo, PointFlag, ResidualStudy,
};
use metalearn::mlp::OutputKind;
use metalearn::task::TaskFamily;
use metalearn::tasks::quadratic::QuadraticFamily;
use metalearn::tasks::sine::SineFamily;
use metalearn::RngStream;

use crate::config::ConfigReader;
use crate::output::{ensure_out_dir, fmt_f64, write_json, write_text, CsvFile};
use crate::runs::{read_model, read_seed};
use crate::{CliError, RunArgs, RunArtifact};

#[derive(Serialize)]
struct StudyVerdict {
    algorithm: String,
    k: usize,
    exact: bool,
    slope: Option<f64>,
    slope_stderr: Option<f64>,
    dropped_points: usize,
    pass: bool,
}

#[derive(Serialize)]
struct TaylorSummary {
    family: String,
    n_samples: usize,
    alpha_grid: Vec<f64>,
    slope_min: f64,
    slope_max: f64,
    avg_grad_norm: f64,
    avg_grad_inner_norm: f64,
    studies: Vec<StudyVerdict>,
    all_pass: bool,
}

fn parse_algo(name: &str) -> Result<AnalysisAlgo, CliError> {
    Ok(match name {
        "reptile" => AnalysisAlgo::Reptile,
        "fomaml" => AnalysisAlgo::Fomaml,
        "maml" => AnalysisAlgo::Maml,
        other => {
            return Err(CliError::Config(format!(
                "unknown analysis algorithm `{other}`"
            )))
        }
    })
}

fn write_study_csv(
    out: &std::path::Path,
    name: &str,
    study: &ResidualStudy,
) -> Result<(), CliError> {
    let mut csv = CsvFile::new(out, name, "alpha,residual_norm,stderr,n,flag");
    for p in &study.points {
        let flag = match p.flag {
            PointFlag::Ok => "ok",
            PointFlag::Dropped => "dropped",
            PointFlag::Exact => "exact",
        };
        csv.row(&[
            fmt_f64(p.alpha),
            fmt_f64(p.residual),
            fmt_f64(p.stderr),
            p.n.to_string(),
            flag.to_string(),
        ]);
    }
    // summary row carries the fitted slope in the residual/stderr columns
    csv.row(&[
        "slope".into(),
        study.slope.map(fmt_f64).unwrap_or_default(),
        study.slope_stderr.map(fmt_f64).unwrap_or_default(),
        String::new(),
        "summary".into(),
    ]);
    csv.finish()?;
    Ok(())
}

pub fn run(args: &RunArgs) -> Result<RunArtifact, CliError> {
    let mut reader = ConfigReader::load(&args.config)?;
    let seed = read_seed(&mut reader, args.seed)?;
    let family_name = reader.get_choice("study.family", &["quadratic", "sine"], "sine")?;
    let algo_names = reader.get_list_string("study.algorithms", &["reptile", "fomaml", "maml"])?;
    let k_list = reader.get_list_usize("study.k_list", &[2, 3])?;
    let alpha_grid = reader.get_list_f64("study.alpha_grid", &[0.003, 0.01, 0.03, 0.1])?;
    let n_samples = reader.get_usize("study.n_samples", 2000)?;
    let batch_size = reader.get_usize("study.batch_size", 5)?;
    let slope_min = reader.get_f64("check.slope_min", 1.7)?;
    let slope_max = reader.get_f64("check.slope_max", 2.3)?;

    let family: Box<dyn TaskFamily> = match family_name.as_str() {
        "quadratic" => {
            let pool = reader.get_usize("task.pool", 8)?;
            let dim = reader.get_usize("task.dim", 1)?;
            let lo = reader.get_f64("task.curvature_min", 0.5)?;
            let hi = reader.get_f64("task.curvature_max", 1.5)?;
            let center_sd = reader.get_f64("task.center_sd", 1.0)?;
            Box::new(QuadraticFamily {
                dim,
                pool,
                curvature_range: (lo, hi),
                center_sd,
            })
        }
        _ => {
            let model = read_model(&mut reader, &[1, 32, 32, 1], OutputKind::Linear)?;
            let train_points = reader.get_usize("task.train_points", 10)?;
            if model.in_dim() != 1 || model.out_dim() != 1 {
                return Err(CliError::Config("sine model must be 1-in 1-out".into()));
            }
            Box::new(SineFamily::with_model(model, train_points))
        }
    };
    reader.reject_unknown()?;

    ensure_out_dir(&args.out)?;
    write_text(&args.out, "config.resolved", &reader.resolved_text("taylor-check"))?;

    let stream = RngStream::root(seed);

    // coefficient table (exact integers)
    let mut coeff_csv = CsvFile::new(&args.out, "coefficients.csv", "algorithm,k,c_grad,c_inner");
    for name in &algo_names {
        let algo = parse_algo(name)?;
        for &k in &k_list {
            let c = coefficients(algo, k);
            coeff_csv.row(&[
                name.clone(),
                k.to_string(),
                c.c_grad.to_string(),
                c.c_inner.to_string(),
            ]);
        }
    }
    coeff_csv.finish()?;

    let phi = family.init_params(stream.substream(0xA0));
    let terms = estimate_terms(&phi, family.as_ref(), batch_size, n_samples.min(500), stream.substream(0xD0))?;

    let mut verdicts = Vec::new();
    let mut svg_series = Vec::new();
    for name in &algo_names {
        let algo = parse_algo(name)?;
        for &k in &k_list {
            let study = residual_study(
                family.as_ref(),
                algo,
                k,
                &alpha_grid,
                batch_size,
                n_samples,
                stream.substream(0xE0),
            )?;
            write_study_csv(&args.out, &format!("study_{name}_k{k}.csv"), &study)?;
            let dropped = study
                .points
                .iter()
                .filter(|p| p.flag == PointFlag::Dropped)
                .count();
            let pass = study.exact
                || study
                    .slope
                    .map(|s| s >= slope_min && s <= slope_max)
                    .unwrap_or(false);
            if args.svg {
                svg_series.push(crate::svg::Series {
                    name: format!("{name} k={k}"),
                    points: study
                        .points
                        .iter()
                        .filter(|p| p.flag != PointFlag::Dropped)
                        .map(|p| (p.alpha, p.residual))
                        .collect(),
                });
            }
            verdicts.push(StudyVerdict {
                algorithm: name.clone(),
                k,
                exact: study.exact,
                slope: study.slope,
                slope_stderr: study.slope_stderr,
                dropped_points: dropped,
                pass,
            });
        }
    }

    let all_pass = verdicts.iter().all(|v| v.pass);
    let summary = TaylorSummary {
        family: family_name.clone(),
        n_samples,
        alpha_grid: alpha_grid.clone(),
        slope_min,
        slope_max,
        avg_grad_norm: terms.avg_grad.norm_l2(),
        avg_grad_inner_norm: terms.avg_grad_inner.norm_l2(),
        studies: verdicts,
        all_pass,
    };
    write_json(&args.out, "taylor_summary.json", &summary)?;

    if args.svg {
        crate::svg::line_chart(
            &args.out,
            "residuals.svg",
            "expansion residual vs inner step size",
            "alpha",
            "residual norm",
            &svg_series,
            true,
            true,
        )?;
    }

    for v in &summary.studies {
        let status = if v.pass { "pass" } else { "FAIL" };
        let detail = if v.exact {
            "exact".to_string()
        } else {
            format!("slope {:.3}", v.slope.unwrap_or(f64::NAN))
        };
        println!("taylor-check {} k={}: {} ({})", v.algorithm, v.k, status, detail);
    }

    if !all_pass {
        return Err(CliError::CheckFailed(
            "one or more residual studies failed the slope check".into(),
        ));
    }
    Ok(RunArtifact {
        out_dir: args.out.clone(),
    })
}
