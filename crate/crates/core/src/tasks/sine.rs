//! 1-D sine-wave regression tasks.
//!
//! A task is `f(x) = a sin(x + b)` with amplitude `a ~ U([0.1, 5.0])` and
//! phase `b ~ U([0, 2pi])`. The learner sees `p` sampled points and is scored
//! by squared error over a fixed 50-point grid on `[-5, 5]`. Because the
//! random phase makes the average target function zero everywhere, joint
//! training on the expected loss learns nothing useful here, which is what
//! makes this family a meta-learning test bed.

use nalgebra::DMatrix;
use rand::Rng;

use crate::loss::DifferentiableLoss;
use crate::mlp::{mlp_init, mlp_loss, mlp_predict, Minibatch, MlpSpec, Targets};
use crate::rng::RngStream;
use crate::task::{Pool, Task, TaskEval, TaskFamily};
use crate::vector::ParamVector;

pub const AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const INPUT_RANGE: (f64, f64) = (-5.0, 5.0);
pub const GRID_POINTS: usize = 50;

/// The 50-point evaluation grid: endpoints exactly -5 and +5, spacing 10/49.
pub fn eval_grid() -> Vec<f64> {
    (0..GRID_POINTS)
        .map(|i| -5.0 + 10.0 * (i as f64 / (GRID_POINTS - 1) as f64))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
    /// The p sampled training inputs.
    pub train_x: Vec<f64>,
    model: MlpSpec,
}

impl SineTask {
    pub fn target(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }

    fn batch(&self, ids: &[usize]) -> Minibatch {
        let xs: Vec<f64> = ids.iter().map(|&i| self.train_x[i]).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| self.target(x)).collect();
        Minibatch::new(
            DMatrix::from_row_slice(1, xs.len(), &xs),
            Targets::Regression(DMatrix::from_row_slice(1, ys.len(), &ys)),
            ids.to_vec(),
        )
    }
}

/// Sine-wave task distribution bound to a 1-in 1-out model.
#[derive(Debug, Clone)]
pub struct SineFamily {
    pub model: MlpSpec,
    pub train_points: usize,
}

impl SineFamily {
    /// `1 -> 64 -> 64 -> 1` tanh net seeing 10 sampled points.
    pub fn standard() -> Self {
        SineFamily {
            model: MlpSpec::regression(vec![1, 64, 64, 1]),
            train_points: 10,
        }
    }

    pub fn with_model(model: MlpSpec, train_points: usize) -> Self {
        assert_eq!(model.in_dim(), 1, "sine model must be 1-in");
        assert_eq!(model.out_dim(), 1, "sine model must be 1-out");
        SineFamily {
            model,
            train_points,
        }
    }
}

/// Draws amplitude, phase, and the p training inputs.
pub fn sine_sample(family: &SineFamily, stream: RngStream) -> SineTask {
    let mut rng = stream.rng();
    let amplitude = rng.gen_range(AMPLITUDE_RANGE.0..AMPLITUDE_RANGE.1);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let train_x = (0..family.train_points)
        .map(|_| rng.gen_range(INPUT_RANGE.0..INPUT_RANGE.1))
        .collect();
    SineTask {
        amplitude,
        phase,
        train_x,
        model: family.model.clone(),
    }
}

/// Mean squared error of the model against the target over the 50-point grid.
pub fn sine_eval_loss(spec: &MlpSpec, phi: &ParamVector, task: &SineTask) -> f64 {
    let grid = eval_grid();
    let inputs = DMatrix::from_row_slice(1, grid.len(), &grid);
    let outputs = mlp_predict(spec, phi, &inputs);
    grid.iter()
        .enumerate()
        .map(|(i, &x)| {
            let d = outputs[(0, i)] - task.target(x);
            d * d
        })
        .sum::<f64>()
        / grid.len() as f64
}

/// Mean absolute prediction over the grid; near zero after meta-training.
pub fn mean_abs_prediction(spec: &MlpSpec, phi: &ParamVector) -> f64 {
    let grid = eval_grid();
    let inputs = DMatrix::from_row_slice(1, grid.len(), &grid);
    let outputs = mlp_predict(spec, phi, &inputs);
    outputs.iter().map(|y| y.abs()).sum::<f64>() / grid.len() as f64
}

impl Task for SineTask {
    fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn pool_size(&self, pool: Pool) -> usize {
        match pool {
            Pool::Train => self.train_x.len(),
            Pool::Tail => 0,
        }
    }

    fn loss(&self, pool: Pool, ids: &[usize]) -> Box<dyn DifferentiableLoss> {
        assert_eq!(pool, Pool::Train, "sine tasks have no tail pool");
        Box::new(mlp_loss(&self.model, self.batch(ids)))
    }

    fn eval(&self, phi: &ParamVector) -> TaskEval {
        TaskEval {
            loss: sine_eval_loss(&self.model, phi, self),
            accuracy: None,
        }
    }
}

impl TaskFamily for SineFamily {
    fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn init_params(&self, stream: RngStream) -> ParamVector {
        mlp_init(&self.model, stream)
    }

    fn sample_train(&self, stream: RngStream) -> Box<dyn Task> {
        Box::new(sine_sample(self, stream))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_shape_is_exact() {
        let g = eval_grid();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], -5.0);
        assert_eq!(g[49], 5.0);
        let h = 10.0 / 49.0;
        for w in g.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], h, epsilon = 1e-14);
        }
    }

    #[test]
    fn sampling_ranges_and_mean() {
        let fam = SineFamily::with_model(MlpSpec::regression(vec![1, 4, 1]), 10);
        let base = RngStream::new(123, 0);
        let n = 100_000;
        let mut amp_sum = 0.0;
        for i in 0..n {
            let t = sine_sample(&fam, base.substream(i as u64));
            assert!((AMPLITUDE_RANGE.0..AMPLITUDE_RANGE.1).contains(&t.amplitude));
            assert!((0.0..std::f64::consts::TAU).contains(&t.phase));
            assert!(t.train_x.iter().all(|x| (-5.0..5.0).contains(x)));
            amp_sum += t.amplitude;
        }
        // E[a] = (0.1 + 5.0) / 2 = 2.55; 3-sigma Monte-Carlo band
        let mean = amp_sum / n as f64;
        let sd = (5.0 - 0.1) / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 2.55).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn fixed_stream_reproduces_task() {
        let fam = SineFamily::with_model(MlpSpec::regression(vec![1, 4, 1]), 10);
        let s = RngStream::new(7, 7);
        let a = sine_sample(&fam, s);
        let b = sine_sample(&fam, s);
        assert_eq!(a.amplitude, b.amplitude);
        assert_eq!(a.phase, b.phase);
        assert_eq!(a.train_x, b.train_x);
    }

    #[test]
    fn eval_loss_zero_for_perfect_predictor_and_grid_mean_for_zero() {
        let fam = SineFamily::with_model(MlpSpec::regression(vec![1, 4, 1]), 10);

        // a flat target is matched exactly by the zero network
        let mut flat = sine_sample(&fam, RngStream::new(2, 1));
        flat.amplitude = 0.0;
        let zero = ParamVector::zeros(fam.model.param_count());
        assert_eq!(sine_eval_loss(&fam.model, &zero, &flat), 0.0);

        let task = sine_sample(&fam, RngStream::new(2, 0));

        // the zero function scores a^2 * grid-mean of sin^2(x + b)
        let phi = ParamVector::zeros(fam.model.param_count());
        let expect = eval_grid()
            .iter()
            .map(|&x| {
                let t = task.target(x);
                t * t
            })
            .sum::<f64>()
            / 50.0;
        assert_abs_diff_eq!(
            sine_eval_loss(&fam.model, &phi, &task),
            expect,
            epsilon = 1e-12
        );
        // the analytic grid mean of sin^2 is close to 1/2
        assert!((expect / (task.amplitude * task.amplitude) - 0.5).abs() < 0.15);
    }
}
