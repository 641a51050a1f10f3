//! Property tests for the algebraic invariants.

use metalearn::inner::{id_overlap_fraction, BatchIds};
use metalearn::loss::DifferentiableLoss;
use metalearn::mlp::{mlp_init, mlp_loss, mlp_predict, Minibatch, MlpSpec, Targets};
use metalearn::optim::OuterSchedule;
use metalearn::task::Pool;
use metalearn::tasks::manifold::AffineManifoldTask;
use metalearn::{axpy, dot, ParamVector, RngStream};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim)
}

proptest! {
    #[test]
    fn dot_is_symmetric_and_bilinear(a in vec_strategy(6), b in vec_strategy(6), s in -3.0..3.0f64) {
        let (va, vb) = (ParamVector::new(a), ParamVector::new(b));
        prop_assert!((dot(&va, &vb) - dot(&vb, &va)).abs() < 1e-9);
        let scaled = dot(&va.scale(s), &vb);
        prop_assert!((scaled - s * dot(&va, &vb)).abs() < 1e-8 * (1.0 + scaled.abs()));
    }

    #[test]
    fn axpy_matches_componentwise(y in vec_strategy(5), x in vec_strategy(5), alpha in -2.0..2.0f64) {
        let out = axpy(&ParamVector::new(y.clone()), alpha, &ParamVector::new(x.clone()));
        for i in 0..5 {
            prop_assert!((out[i] - (y[i] + alpha * x[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_fraction_is_bounded(a in prop::collection::vec(0usize..30, 1..20),
                                   b in prop::collection::vec(0usize..30, 1..20)) {
        let f = id_overlap_fraction(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        let ba = BatchIds::new(Pool::Train, a);
        prop_assert_eq!(id_overlap_fraction(&ba.ids, &ba.ids), 1.0);
    }

    #[test]
    fn hyperplane_projection_idempotent(n0 in 0.2..2.0f64, n1 in -2.0..2.0f64,
                                        off in -3.0..3.0f64, p in vec_strategy(2)) {
        let task = AffineManifoldTask::hyperplane(vec![n0, n1], off).unwrap();
        let phi = ParamVector::new(p);
        let proj = task.project(&phi);
        let twice = task.project(&proj);
        prop_assert!(proj.sub(&twice).norm_inf() < 1e-9);
        // the residual is orthogonal to the manifold direction (-n1, n0)
        let residual = phi.sub(&proj);
        let tangent = ParamVector::new(vec![-n1, n0]);
        prop_assert!(dot(&residual, &tangent).abs() < 1e-8 * (1.0 + residual.norm_l2()));
    }

    #[test]
    fn softmax_outputs_are_a_distribution(seed in 0u64..500, cols in 1usize..6) {
        let spec = MlpSpec::classifier(vec![3, 8, 4]);
        let phi = mlp_init(&spec, RngStream::new(seed, 0));
        let mut rng = RngStream::new(seed, 1).rng();
        use rand::Rng;
        let inputs = DMatrix::from_fn(3, cols, |_, _| rng.gen_range(-2.0..2.0));
        let probs = mlp_predict(&spec, &phi, &inputs);
        for col in probs.column_iter() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-12);
            prop_assert!(col.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn schedule_is_nonincreasing_and_nonnegative(eps0 in 0.0..4.0f64, total in 1usize..200) {
        let sched = OuterSchedule::linear(eps0, total);
        let mut prev = f64::INFINITY;
        for i in 0..total {
            let e = sched.epsilon(i);
            prop_assert!(e >= 0.0);
            prop_assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn hvp_linearity_on_mlp(seed in 0u64..200, a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let spec = MlpSpec::regression(vec![2, 6, 1]);
        let phi = mlp_init(&spec, RngStream::new(seed, 0));
        let mut rng = RngStream::new(seed, 1).rng();
        use rand::Rng;
        let batch = Minibatch::new(
            DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0)),
            Targets::Regression(DMatrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0))),
            vec![0, 1, 2],
        );
        let loss = mlp_loss(&spec, batch);
        let dim = spec.param_count();
        let v = ParamVector::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let w = ParamVector::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let combo = loss.hvp(&phi, &axpy(&v.scale(a), b, &w));
        let split = axpy(&loss.hvp(&phi, &v).scale(a), b, &loss.hvp(&phi, &w));
        prop_assert!(combo.sub(&split).norm_inf() < 1e-10 * (1.0 + split.norm_inf()));
    }
}

#[test]
fn quadratic_loss_rejects_center_shape_mismatch() {
    let a = DMatrix::identity(2, 2);
    assert!(metalearn::loss::QuadraticLoss::new(a, DVector::zeros(3)).is_err());
}
