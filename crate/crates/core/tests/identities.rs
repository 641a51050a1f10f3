//! Cross-module identity checks: every dual-route pair (analytic vs oracle)
//! exercised on real models, not just the scalar walkthrough.

use metalearn::analysis::{measured_meta_gradient_sym, pair_terms, AnalysisAlgo};
use metalearn::gradcheck::{check_loss, GradCheckConfig};
use metalearn::inner::{run_inner, run_inner_on_losses, InnerLoopConfig, SamplingMode};
use metalearn::loss::{DifferentiableLoss, QuadraticLoss};
use metalearn::meta::{
    fomaml_gk_direction, maml_fd_oracle, maml_from_trajectory, meta_train, reptile_gradient_form,
    MetaAlgorithm, MetaTrainConfig,
};
use metalearn::mlp::{mlp_init, mlp_loss, permute_output_units, Minibatch, MlpSpec, Targets};
use metalearn::optim::{InnerOptimizer, OuterSchedule, SgdState};
use metalearn::task::{Pool, Task};
use metalearn::tasks::episode::{episode_sample, EpisodeFamily};
use metalearn::tasks::quadratic::QuadraticFamily;
use metalearn::tasks::sine::{sine_sample, SineFamily};
use metalearn::{axpy, ParamVector, RngStream};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn random_unit(dim: usize, stream: RngStream) -> ParamVector {
    let mut rng = stream.rng();
    let v = ParamVector::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
    v.scale(1.0 / v.norm_l2())
}

fn random_mlp_batch(spec: &MlpSpec, batch: usize, stream: RngStream) -> Minibatch {
    let mut rng = stream.rng();
    let inputs = DMatrix::from_fn(spec.in_dim(), batch, |_, _| rng.gen_range(-1.5..1.5));
    let targets = match spec.output {
        metalearn::mlp::OutputKind::Linear => Targets::Regression(DMatrix::from_fn(
            spec.out_dim(),
            batch,
            |_, _| rng.gen_range(-1.5..1.5),
        )),
        metalearn::mlp::OutputKind::SoftmaxCrossEntropy => {
            Targets::Classes((0..batch).map(|_| rng.gen_range(0..spec.out_dim())).collect())
        }
    };
    Minibatch::new(inputs, targets, (0..batch).collect())
}

#[test]
fn derivative_checks_on_assorted_tanh_nets() {
    let shapes: [Vec<usize>; 4] = [
        vec![1, 16, 1],
        vec![3, 24, 12, 2],
        vec![5, 32, 5],
        vec![2, 48, 24, 1],
    ];
    let cfg = GradCheckConfig::default();
    for (i, shape) in shapes.iter().enumerate() {
        for variant in 0..2 {
            let spec = if variant == 0 || *shape.last().unwrap() < 2 {
                MlpSpec::regression(shape.clone())
            } else {
                MlpSpec::classifier(shape.clone())
            };
            let seed = (i * 2 + variant) as u64;
            let phi = mlp_init(&spec, RngStream::new(seed, 0));
            let loss = mlp_loss(&spec, random_mlp_batch(&spec, 6, RngStream::new(seed, 1)));
            let dim = spec.param_count();
            let v = random_unit(dim, RngStream::new(seed, 2));
            let w = random_unit(dim, RngStream::new(seed, 3));
            let report = check_loss(&loss, &phi, &v, &w, &cfg).unwrap();
            assert!(
                report.ok(),
                "shape {shape:?} variant {variant}: {report:?}"
            );
        }
    }
}

#[test]
fn k1_reptile_gradient_is_single_batch_gradient_on_mlp() {
    let family = SineFamily::with_model(MlpSpec::regression(vec![1, 12, 1]), 10);
    let task = sine_sample(&family, RngStream::new(3, 0));
    let phi = mlp_init(&family.model, RngStream::new(3, 1));
    let cfg = InnerLoopConfig {
        record_trajectory: true,
        ..InnerLoopConfig::sgd(1, 5, 0.02)
    };
    let mut opt = InnerOptimizer::Sgd(SgdState::new(0.02));
    let traj = run_inner(&phi, &task, &cfg, &mut opt, RngStream::new(3, 2)).unwrap();

    let g1 = task
        .loss(Pool::Train, &traj.batches[0].ids)
        .grad(&phi);
    let rep = reptile_gradient_form(&traj).unwrap();
    assert!(rep.sub(&g1).norm_inf() <= 1e-12 * (1.0 + g1.norm_inf()));

    // FOMAML (g_k) and MAML coincide with it at k = 1
    let fo = fomaml_gk_direction(&traj).unwrap().direction.scale(-1.0);
    assert!(fo.sub(&g1).norm_inf() <= 1e-12);
    let losses = [task.loss(Pool::Train, &traj.batches[0].ids)];
    let refs: Vec<&Box<dyn DifferentiableLoss>> = losses.iter().collect();
    let ma = maml_from_trajectory(&traj, &refs)
        .unwrap()
        .direction
        .scale(-1.0);
    assert!(ma.sub(&g1).norm_inf() <= 1e-12);
}

#[test]
fn sgd_reptile_gradient_equals_gradient_sum_on_mlp() {
    let family = SineFamily::with_model(MlpSpec::regression(vec![1, 16, 16, 1]), 10);
    let task = sine_sample(&family, RngStream::new(5, 0));
    let phi = mlp_init(&family.model, RngStream::new(5, 1));
    let cfg = InnerLoopConfig {
        record_trajectory: true,
        sampling: SamplingMode::Replacement,
        ..InnerLoopConfig::sgd(6, 4, 0.03)
    };
    let mut opt = InnerOptimizer::Sgd(SgdState::new(0.03));
    let traj = run_inner(&phi, &task, &cfg, &mut opt, RngStream::new(5, 2)).unwrap();

    let mut gsum = ParamVector::zeros(phi.dim());
    for g in &traj.gradients {
        gsum = axpy(&gsum, 1.0, g);
    }
    let rep = reptile_gradient_form(&traj).unwrap();
    assert!(
        rep.sub(&gsum).norm_inf() <= 1e-12 * (1.0 + gsum.norm_inf()),
        "max diff {}",
        rep.sub(&gsum).norm_inf()
    );
}

#[test]
fn maml_matches_fd_oracle_on_tanh_mlp() {
    // ~200-parameter net, k = 3: the analytic product route against brute
    // finite differences through the whole unrolled update
    let spec = MlpSpec::regression(vec![2, 12, 8, 1]);
    let phi = mlp_init(&spec, RngStream::new(11, 0));
    let alpha = 0.05;
    let losses: Vec<_> = (0..3)
        .map(|i| mlp_loss(&spec, random_mlp_batch(&spec, 5, RngStream::new(11, 10 + i))))
        .collect();
    let refs: Vec<&dyn DifferentiableLoss> =
        losses.iter().map(|l| l as &dyn DifferentiableLoss).collect();

    let mut opt = InnerOptimizer::Sgd(SgdState::new(alpha));
    let traj = run_inner_on_losses(&phi, &refs, &mut opt, true).unwrap();
    let analytic = maml_from_trajectory(&traj, &refs)
        .unwrap()
        .direction
        .scale(-1.0);
    let oracle = maml_fd_oracle(&phi, &refs, alpha, 1e-4).unwrap();

    let rel = analytic.sub(&oracle).norm_inf() / (1.0 + oracle.norm_inf());
    assert!(rel <= 1e-5, "relative error {rel}");
}

#[test]
fn maml_matches_closed_form_product_on_quadratics() {
    // on quadratics the chain-rule product is exact:
    // g = (I - alpha A_1)(I - alpha A_2) ... g_k
    let dim = 4;
    let mut rng = RngStream::new(17, 0).rng();
    let mut sym = |scale: f64| {
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-scale..scale));
        let a = (&m + m.transpose()).scale(0.5) + DMatrix::identity(dim, dim);
        QuadraticLoss::new(a, DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    };
    let losses = [sym(0.3), sym(0.3), sym(0.3)];
    let refs: Vec<&QuadraticLoss> = losses.iter().collect();
    let alpha = 0.07;
    let phi = ParamVector::new(vec![0.4, -0.2, 0.9, 0.1]);

    let mut opt = InnerOptimizer::Sgd(SgdState::new(alpha));
    let traj = run_inner_on_losses(&phi, &refs, &mut opt, true).unwrap();
    let analytic = maml_from_trajectory(&traj, &refs)
        .unwrap()
        .direction
        .scale(-1.0);

    // closed form built from the matrices directly
    let gk = DVector::from_column_slice(traj.gradients[2].as_slice());
    let eye = DMatrix::identity(dim, dim);
    let product = (&eye - losses[0].matrix().scale(alpha))
        * ((&eye - losses[1].matrix().scale(alpha)) * gk);
    let expect = ParamVector::new(product.data.into());
    assert!(
        analytic.sub(&expect).norm_inf() <= 1e-10,
        "max diff {}",
        analytic.sub(&expect).norm_inf()
    );
}

#[test]
fn quadratic_reptile_measurement_matches_prediction_exactly() {
    // on a fixed quadratic pair the order-averaged Reptile gradient equals
    // the leading-order expression with zero remainder
    let l1 = QuadraticLoss::scalar(1.0, 1.0);
    let l2 = QuadraticLoss::scalar(1.0, 3.0);
    let refs: [&QuadraticLoss; 2] = [&l1, &l2];
    for &alpha in &[0.003, 0.03, 0.3] {
        for &phi0 in &[-1.0, 0.0, 2.0] {
            let phi = ParamVector::new(vec![phi0]);
            let (avg_grad, avg_inner) = pair_terms(&phi, &l1, &l2);
            let measured = measured_meta_gradient_sym(&phi, &refs, AnalysisAlgo::Reptile, alpha)
                .unwrap()
                .unwrap();
            let predicted = axpy(&avg_grad.scale(2.0), -alpha, &avg_inner);
            assert!((measured[0] - predicted[0]).abs() <= 1e-10);
        }
    }
}

#[test]
fn episode_label_permutation_equivariance() {
    let spec = MlpSpec::classifier(vec![6, 10, 4]);
    let family = EpisodeFamily::new(spec.clone(), 4, 6, 0.4, 3, 1, 2);
    let episode = episode_sample(&family, 3, RngStream::new(23, 0));
    let phi = mlp_init(&spec, RngStream::new(23, 1));
    let perm = [2usize, 3, 1, 0];
    let relabeled = episode.relabel(&perm);
    let phi_perm = permute_output_units(&spec, &phi, &perm);

    let ids: Vec<usize> = (0..episode.support_size()).collect();
    let base = episode.loss(Pool::Train, &ids).value(&phi);
    let perm_loss = relabeled.loss(Pool::Train, &ids).value(&phi_perm);
    assert!((base - perm_loss).abs() <= 1e-12);

    let qids: Vec<usize> = (0..episode.query_size()).collect();
    let base_q = episode.loss(Pool::Tail, &qids).value(&phi);
    let perm_q = relabeled.loss(Pool::Tail, &qids).value(&phi_perm);
    assert!((base_q - perm_q).abs() <= 1e-12);
}

#[cfg(feature = "parallel")]
#[test]
fn meta_training_is_thread_count_invariant() {
    let family = QuadraticFamily::scalar(8);
    let cfg = MetaTrainConfig {
        algo: MetaAlgorithm::Reptile,
        inner: InnerLoopConfig::sgd(3, 2, 0.05),
        schedule: OuterSchedule::linear(0.5, 40),
        meta_batch: 4,
        log_every: 1,
        eval_cadence: 0,
        eval: None,
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| meta_train(&family, &cfg, RngStream::root(12)).unwrap())
    };
    let single = run(1);
    let quad = run(4);
    assert_eq!(single.params, quad.params);
    let norms_a: Vec<f64> = single.log.iter().map(|r| r.direction_norm).collect();
    let norms_b: Vec<f64> = quad.log.iter().map(|r| r.direction_norm).collect();
    assert_eq!(norms_a, norms_b);
}
