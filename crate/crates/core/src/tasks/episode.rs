//! Synthetic N-way K-shot classification episodes.
//!
//! Each episode draws N fresh Gaussian class prototypes in R^D, builds a
//! support set of `shots` noisy points per class and a disjoint query set,
//! and assigns episode-local labels 0..N-1 by a fresh random permutation.
//! Fresh prototypes per episode give an infinite task distribution; the
//! per-episode label permutation means no fixed output unit ever carries
//! class identity across episodes, so joint training cannot shortcut the
//! protocol.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::loss::DifferentiableLoss;
use crate::mlp::{mlp_init, mlp_loss, mlp_predict, predicted_classes, Minibatch, MlpSpec, Targets};
use crate::rng::{normal, RngStream};
use crate::task::{Pool, Task, TaskEval, TaskFamily};
use crate::vector::ParamVector;

/// Configuration of the episode generator.
#[derive(Debug, Clone)]
pub struct EpisodeFamily {
    pub model: MlpSpec,
    /// N: classes per episode.
    pub num_classes: usize,
    /// D: input dimension.
    pub input_dim: usize,
    /// Isotropic noise around each prototype.
    pub noise_sigma: f64,
    /// Shots per class in meta-training episodes.
    pub train_shots: usize,
    /// K: shots per class in evaluation episodes.
    pub eval_shots: usize,
    /// Held-out query points per class.
    pub query_per_class: usize,
}

impl EpisodeFamily {
    pub fn new(
        model: MlpSpec,
        num_classes: usize,
        input_dim: usize,
        noise_sigma: f64,
        train_shots: usize,
        eval_shots: usize,
        query_per_class: usize,
    ) -> Self {
        assert!(num_classes >= 2, "need at least two classes");
        assert!(eval_shots >= 1 && train_shots >= 1 && query_per_class >= 1);
        assert!(noise_sigma > 0.0, "noise sigma must be positive");
        assert_eq!(model.in_dim(), input_dim);
        assert_eq!(model.out_dim(), num_classes);
        EpisodeFamily {
            model,
            num_classes,
            input_dim,
            noise_sigma,
            train_shots,
            eval_shots,
            query_per_class,
        }
    }
}

/// One sampled episode.
#[derive(Debug, Clone)]
pub struct FewShotEpisode {
    model: MlpSpec,
    /// Prototype of the class labeled `i`.
    pub prototypes: Vec<DVector<f64>>,
    /// The permutation that assigned labels to prototype draw order.
    pub label_permutation: Vec<usize>,
    support_x: DMatrix<f64>,
    support_y: Vec<usize>,
    query_x: DMatrix<f64>,
    query_y: Vec<usize>,
}

impl FewShotEpisode {
    pub fn support_size(&self) -> usize {
        self.support_y.len()
    }

    pub fn query_size(&self) -> usize {
        self.query_y.len()
    }

    pub fn query_labels(&self) -> &[usize] {
        &self.query_y
    }

    /// Label of the prototype nearest to `x`; the zero-noise oracle
    /// classifier.
    pub fn nearest_prototype_label(&self, x: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (label, p) in self.prototypes.iter().enumerate() {
            let d = (x - p).norm_squared();
            if d < best_d {
                best_d = d;
                best = label;
            }
        }
        best
    }

    /// Applies a label permutation: class `i` becomes class `perm[i]`.
    /// Composing this with the matching output-unit permutation of the model
    /// parameters must leave every loss unchanged.
    pub fn relabel(&self, perm: &[usize]) -> FewShotEpisode {
        let n = self.prototypes.len();
        assert_eq!(perm.len(), n);
        let mut prototypes = vec![DVector::zeros(self.prototypes[0].len()); n];
        for i in 0..n {
            prototypes[perm[i]] = self.prototypes[i].clone();
        }
        FewShotEpisode {
            model: self.model.clone(),
            prototypes,
            label_permutation: self.label_permutation.iter().map(|&s| perm[s]).collect(),
            support_x: self.support_x.clone(),
            support_y: self.support_y.iter().map(|&y| perm[y]).collect(),
            query_x: self.query_x.clone(),
            query_y: self.query_y.iter().map(|&y| perm[y]).collect(),
        }
    }

    /// Accuracy of the nearest-prototype oracle on the query set.
    pub fn oracle_query_accuracy(&self) -> f64 {
        let n = self.query_size();
        let hits = (0..n)
            .filter(|&i| {
                let col = DVector::from_column_slice(self.query_x.column(i).as_slice());
                self.nearest_prototype_label(&col) == self.query_y[i]
            })
            .count();
        hits as f64 / n as f64
    }

    fn batch(&self, pool: Pool, ids: &[usize]) -> Minibatch {
        let (xs, ys) = match pool {
            Pool::Train => (&self.support_x, &self.support_y),
            Pool::Tail => (&self.query_x, &self.query_y),
        };
        let mut inputs = DMatrix::zeros(xs.nrows(), ids.len());
        let mut classes = Vec::with_capacity(ids.len());
        for (col, &id) in ids.iter().enumerate() {
            inputs.set_column(col, &xs.column(id));
            classes.push(ys[id]);
        }
        Minibatch::new(inputs, Targets::Classes(classes), ids.to_vec())
    }
}

/// Samples one episode with the given shots per class.
pub fn episode_sample(family: &EpisodeFamily, shots: usize, stream: RngStream) -> FewShotEpisode {
    let n = family.num_classes;
    let d = family.input_dim;
    let mut rng = stream.rng();

    let raw_prototypes: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(d, |_, _| normal(&mut rng, 0.0, 1.0)))
        .collect();
    let mut label_permutation: Vec<usize> = (0..n).collect();
    label_permutation.shuffle(&mut rng);

    // prototypes indexed by their episode-local label
    let mut prototypes = vec![DVector::zeros(d); n];
    for (slot, proto) in raw_prototypes.into_iter().enumerate() {
        prototypes[label_permutation[slot]] = proto;
    }

    let draw_points = |per_class: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let total = n * per_class;
        let mut xs = DMatrix::zeros(d, total);
        let mut ys = Vec::with_capacity(total);
        let mut col = 0;
        for label in 0..n {
            for _ in 0..per_class {
                for row in 0..d {
                    xs[(row, col)] = prototypes[label][row] + normal(rng, 0.0, family.noise_sigma);
                }
                ys.push(label);
                col += 1;
            }
        }
        (xs, ys)
    };

    let (support_x, support_y) = draw_points(shots, &mut rng);
    let (query_x, query_y) = draw_points(family.query_per_class, &mut rng);

    FewShotEpisode {
        model: family.model.clone(),
        prototypes,
        label_permutation,
        support_x,
        support_y,
        query_x,
        query_y,
    }
}

impl Task for FewShotEpisode {
    fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn pool_size(&self, pool: Pool) -> usize {
        match pool {
            Pool::Train => self.support_size(),
            Pool::Tail => self.query_size(),
        }
    }

    fn loss(&self, pool: Pool, ids: &[usize]) -> Box<dyn DifferentiableLoss> {
        Box::new(mlp_loss(&self.model, self.batch(pool, ids)))
    }

    fn eval(&self, phi: &ParamVector) -> TaskEval {
        let probs = mlp_predict(&self.model, phi, &self.query_x);
        let predicted = predicted_classes(&probs);
        let hits = predicted
            .iter()
            .zip(&self.query_y)
            .filter(|(p, y)| p == y)
            .count();
        let all: Vec<usize> = (0..self.query_size()).collect();
        let loss = self.loss(Pool::Tail, &all).value(phi);
        TaskEval {
            loss,
            accuracy: Some(hits as f64 / self.query_size() as f64),
        }
    }
}

impl TaskFamily for EpisodeFamily {
    fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn init_params(&self, stream: RngStream) -> ParamVector {
        mlp_init(&self.model, stream)
    }

    fn sample_train(&self, stream: RngStream) -> Box<dyn Task> {
        Box::new(episode_sample(self, self.train_shots, stream))
    }

    fn sample_eval(&self, stream: RngStream) -> Box<dyn Task> {
        Box::new(episode_sample(self, self.eval_shots, stream))
    }
}
