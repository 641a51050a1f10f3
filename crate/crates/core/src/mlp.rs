//! Fully-connected networks over a flat parameter vector.
//!
//! The model owns a fixed layout: for each layer, the weight matrix
//! (row-major, out x in) followed by the bias vector. Gradients come from
//! backpropagation; Hessian-vector products use the forward-over-reverse
//! construction, which is exact (no finite differencing on the analytic
//! path).
//!
//! Loss reductions are means over the batch, so inner-loop step sizes are
//! batch-size-independent.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::loss::DifferentiableLoss;
use crate::rng::RngStream;
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// Raw affine outputs, squared-error loss.
    Linear,
    /// Softmax over the final layer, cross-entropy loss.
    SoftmaxCrossEntropy,
}

/// Architecture description; parameters themselves live in a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output: OutputKind,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output: OutputKind) -> Self {
        assert!(layer_sizes.len() >= 2, "MLP needs at least 2 layers");
        assert!(
            layer_sizes.iter().all(|&n| n > 0),
            "layer sizes must be positive"
        );
        if output == OutputKind::SoftmaxCrossEntropy {
            assert!(
                *layer_sizes.last().unwrap() >= 2,
                "softmax output requires at least 2 units"
            );
        }
        MlpSpec {
            layer_sizes,
            activation,
            output,
        }
    }

    pub fn regression(layer_sizes: Vec<usize>) -> Self {
        Self::new(layer_sizes, Activation::Tanh, OutputKind::Linear)
    }

    pub fn classifier(layer_sizes: Vec<usize>) -> Self {
        Self::new(layer_sizes, Activation::Tanh, OutputKind::SoftmaxCrossEntropy)
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total parameter count: `sum (n_in + 1) * n_out` over layers.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    fn unpack(&self, phi: &ParamVector) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        assert_eq!(
            phi.dim(),
            self.param_count(),
            "parameter vector has dim {} but spec needs {}",
            phi.dim(),
            self.param_count()
        );
        let flat = phi.as_slice();
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let weights = DMatrix::from_row_slice(n_out, n_in, &flat[offset..offset + n_in * n_out]);
                offset += n_in * n_out;
                let bias = DVector::from_column_slice(&flat[offset..offset + n_out]);
                offset += n_out;
                (weights, bias)
            })
            .collect()
    }

    fn pack(&self, layers: &[(DMatrix<f64>, DVector<f64>)]) -> ParamVector {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in layers {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    flat.push(w[(r, c)]);
                }
            }
            flat.extend(b.iter());
        }
        ParamVector::new(flat)
    }
}

/// Glorot-uniform weights, zero biases; deterministic given the stream.
pub fn mlp_init(spec: &MlpSpec, stream: RngStream) -> ParamVector {
    let mut rng = stream.rng();
    let mut flat = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        for _ in 0..n_in * n_out {
            flat.push(rng.gen_range(-limit..limit));
        }
        flat.extend(std::iter::repeat(0.0).take(n_out));
    }
    ParamVector::new(flat)
}

/// Regression targets are an `out_dim x batch` matrix; classification targets
/// are per-sample class indices.
#[derive(Debug, Clone)]
pub enum Targets {
    Regression(DMatrix<f64>),
    Classes(Vec<usize>),
}

/// A batch of examples with the identities of the source samples, used by
/// the inner loop to reason about batch overlap.
#[derive(Debug, Clone)]
pub struct Minibatch {
    /// `in_dim x batch`; columns are samples.
    pub inputs: DMatrix<f64>,
    pub targets: Targets,
    pub sample_ids: Vec<usize>,
    /// Set when sampling with replacement put the same source sample in the
    /// batch more than once.
    pub has_duplicates: bool,
}

impl Minibatch {
    pub fn new(inputs: DMatrix<f64>, targets: Targets, sample_ids: Vec<usize>) -> Self {
        let batch = inputs.ncols();
        assert!(batch >= 1, "batch must contain at least one sample");
        assert_eq!(batch, sample_ids.len(), "one id per sample");
        match &targets {
            Targets::Regression(y) => assert_eq!(y.ncols(), batch),
            Targets::Classes(c) => assert_eq!(c.len(), batch),
        }
        let mut seen = sample_ids.clone();
        seen.sort_unstable();
        let has_duplicates = seen.windows(2).any(|w| w[0] == w[1]);
        Minibatch {
            inputs,
            targets,
            sample_ids,
            has_duplicates,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fraction of `b1`'s samples whose id also appears in `b2`.
pub fn overlap_fraction(b1: &Minibatch, b2: &Minibatch) -> f64 {
    crate::inner::id_overlap_fraction(&b1.sample_ids, &b2.sample_ids)
}

struct Forward {
    /// Pre-activations `z_1..z_L`.
    zs: Vec<DMatrix<f64>>,
    /// Activations `a_0..a_L` with `a_0` the input and `a_L` the raw output.
    acts: Vec<DMatrix<f64>>,
}

fn act(kind: Activation, z: &DMatrix<f64>) -> DMatrix<f64> {
    match kind {
        Activation::Tanh => z.map(|x| x.tanh()),
        Activation::Relu => z.map(|x| x.max(0.0)),
    }
}

fn act_prime(kind: Activation, z: &DMatrix<f64>) -> DMatrix<f64> {
    match kind {
        Activation::Tanh => z.map(|x| {
            let t = x.tanh();
            1.0 - t * t
        }),
        Activation::Relu => z.map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
    }
}

fn act_second(kind: Activation, z: &DMatrix<f64>) -> DMatrix<f64> {
    match kind {
        Activation::Tanh => z.map(|x| {
            let t = x.tanh();
            -2.0 * t * (1.0 - t * t)
        }),
        Activation::Relu => DMatrix::zeros(z.nrows(), z.ncols()),
    }
}

fn add_bias(z: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in z.column_iter_mut() {
        col += b;
    }
}

fn forward_pass(
    spec: &MlpSpec,
    layers: &[(DMatrix<f64>, DVector<f64>)],
    inputs: &DMatrix<f64>,
) -> Forward {
    let depth = layers.len();
    let mut acts = Vec::with_capacity(depth + 1);
    let mut zs = Vec::with_capacity(depth);
    acts.push(inputs.clone());
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = w * acts.last().unwrap();
        add_bias(&mut z, b);
        let a = if l + 1 < depth {
            act(spec.activation, &z)
        } else {
            z.clone()
        };
        zs.push(z);
        acts.push(a);
    }
    Forward { zs, acts }
}

/// Column-wise softmax with the usual max-shift for stability.
fn softmax_columns(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut col in p.column_iter_mut() {
        let m = col.max();
        col.apply(|x| *x = (*x - m).exp());
        let s = col.sum();
        col /= s;
    }
    p
}

/// Deterministic forward pass. Linear output returns raw outputs;
/// softmax output returns class probabilities.
pub fn mlp_predict(spec: &MlpSpec, phi: &ParamVector, inputs: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(inputs.nrows(), spec.in_dim(), "input dimension mismatch");
    let layers = spec.unpack(phi);
    let fwd = forward_pass(spec, &layers, inputs);
    let out = fwd.acts.last().unwrap();
    match spec.output {
        OutputKind::Linear => out.clone(),
        OutputKind::SoftmaxCrossEntropy => softmax_columns(out),
    }
}

/// Predicted class per column; ties break toward the lowest class index.
pub fn predicted_classes(probs: &DMatrix<f64>) -> Vec<usize> {
    probs
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for i in 1..col.len() {
                if col[i] > col[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Re-indexes the final layer's output units: unit `i` of the input vector
/// becomes unit `perm[i]` of the result. Used to check that episodic label
/// permutations are pure relabelings.
pub fn permute_output_units(spec: &MlpSpec, phi: &ParamVector, perm: &[usize]) -> ParamVector {
    let n_out = spec.out_dim();
    assert_eq!(perm.len(), n_out);
    let mut layers = spec.unpack(phi);
    let last = layers.len() - 1;
    let (w, b) = layers[last].clone();
    for i in 0..n_out {
        let j = perm[i];
        for c in 0..w.ncols() {
            layers[last].0[(j, c)] = w[(i, c)];
        }
        layers[last].1[j] = b[i];
    }
    spec.pack(&layers)
}

/// A loss bound to one minibatch: mean squared error for linear output, mean
/// cross-entropy for softmax output.
#[derive(Debug, Clone)]
pub struct MlpLoss {
    spec: MlpSpec,
    batch: Minibatch,
}

/// Binds a loss instance to a batch.
pub fn mlp_loss(spec: &MlpSpec, batch: Minibatch) -> MlpLoss {
    MlpLoss::new(spec.clone(), batch)
}

impl MlpLoss {
    pub fn new(spec: MlpSpec, batch: Minibatch) -> Self {
        assert_eq!(batch.inputs.nrows(), spec.in_dim(), "input dim mismatch");
        match (&batch.targets, spec.output) {
            (Targets::Regression(y), OutputKind::Linear) => {
                assert_eq!(y.nrows(), spec.out_dim(), "target dim mismatch")
            }
            (Targets::Classes(c), OutputKind::SoftmaxCrossEntropy) => {
                assert!(c.iter().all(|&k| k < spec.out_dim()), "class out of range")
            }
            _ => panic!("target kind does not match output kind"),
        }
        MlpLoss { spec, batch }
    }

    pub fn batch(&self) -> &Minibatch {
        &self.batch
    }

    /// dL/d(output pre-activation), shape out_dim x batch.
    fn output_delta(&self, out: &DMatrix<f64>) -> DMatrix<f64> {
        let b = self.batch.len() as f64;
        match (&self.batch.targets, self.spec.output) {
            (Targets::Regression(y), OutputKind::Linear) => (out - y) * (2.0 / b),
            (Targets::Classes(classes), OutputKind::SoftmaxCrossEntropy) => {
                let mut delta = softmax_columns(out);
                for (col, &class) in classes.iter().enumerate() {
                    delta[(class, col)] -= 1.0;
                }
                delta / b
            }
            _ => unreachable!(),
        }
    }
}

impl DifferentiableLoss for MlpLoss {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn value(&self, phi: &ParamVector) -> f64 {
        let layers = self.spec.unpack(phi);
        let fwd = forward_pass(&self.spec, &layers, &self.batch.inputs);
        let out = fwd.acts.last().unwrap();
        let b = self.batch.len() as f64;
        match (&self.batch.targets, self.spec.output) {
            (Targets::Regression(y), OutputKind::Linear) => {
                let diff = out - y;
                diff.iter().map(|x| x * x).sum::<f64>() / b
            }
            (Targets::Classes(classes), OutputKind::SoftmaxCrossEntropy) => {
                let mut total = 0.0;
                for (col, &class) in classes.iter().enumerate() {
                    let logits = out.column(col);
                    let m = logits.max();
                    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                    total += lse - logits[class];
                }
                total / b
            }
            _ => unreachable!(),
        }
    }

    fn grad(&self, phi: &ParamVector) -> ParamVector {
        let layers = self.spec.unpack(phi);
        let fwd = forward_pass(&self.spec, &layers, &self.batch.inputs);
        let depth = layers.len();

        // delta[l] = dL/dz_{l+1}
        let mut delta = self.output_delta(fwd.acts.last().unwrap());
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = vec![Default::default(); depth];
        for l in (0..depth).rev() {
            let gw = &delta * fwd.acts[l].transpose();
            let gb = sum_columns(&delta);
            grads[l] = (gw, gb);
            if l > 0 {
                let back = layers[l].0.transpose() * &delta;
                delta = back.component_mul(&act_prime(self.spec.activation, &fwd.zs[l - 1]));
            }
        }
        self.spec.pack(&grads)
    }

    fn hvp(&self, phi: &ParamVector, v: &ParamVector) -> ParamVector {
        let spec = &self.spec;
        let layers = spec.unpack(phi);
        let dirs = spec.unpack(v);
        let depth = layers.len();
        let fwd = forward_pass(spec, &layers, &self.batch.inputs);

        // Forward tangent pass: r_z[l], r_a[l] are directional derivatives of
        // z_{l+1} and a_{l+1} along v.
        let mut r_acts: Vec<DMatrix<f64>> = Vec::with_capacity(depth + 1);
        let mut r_zs: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
        r_acts.push(DMatrix::zeros(
            self.batch.inputs.nrows(),
            self.batch.inputs.ncols(),
        ));
        for l in 0..depth {
            let (w, _) = &layers[l];
            let (vw, vb) = &dirs[l];
            let mut rz = w * r_acts.last().unwrap() + vw * &fwd.acts[l];
            add_bias(&mut rz, vb);
            let ra = if l + 1 < depth {
                act_prime(spec.activation, &fwd.zs[l]).component_mul(&rz)
            } else {
                rz.clone()
            };
            r_zs.push(rz);
            r_acts.push(ra);
        }

        let b = self.batch.len() as f64;
        let out = fwd.acts.last().unwrap();
        let r_out = r_acts.last().unwrap();

        let mut delta = self.output_delta(out);
        let mut r_delta = match (&self.batch.targets, spec.output) {
            (Targets::Regression(_), OutputKind::Linear) => r_out * (2.0 / b),
            (Targets::Classes(_), OutputKind::SoftmaxCrossEntropy) => {
                // tangent of softmax: p .* (rz - <p, rz>)
                let p = softmax_columns(out);
                let mut rp = DMatrix::zeros(p.nrows(), p.ncols());
                for c in 0..p.ncols() {
                    let pc = p.column(c);
                    let rc = r_out.column(c);
                    let dot = pc.dot(&rc);
                    for r in 0..p.nrows() {
                        rp[(r, c)] = pc[r] * (rc[r] - dot);
                    }
                }
                rp / b
            }
            _ => unreachable!(),
        };

        let mut r_grads: Vec<(DMatrix<f64>, DVector<f64>)> = vec![Default::default(); depth];
        for l in (0..depth).rev() {
            let gw = &r_delta * fwd.acts[l].transpose() + &delta * r_acts[l].transpose();
            let gb = sum_columns(&r_delta);
            r_grads[l] = (gw, gb);
            if l > 0 {
                let w = &layers[l].0;
                let vw = &dirs[l].0;
                let back = w.transpose() * &delta;
                let r_back = w.transpose() * &r_delta + vw.transpose() * &delta;
                let sp = act_prime(spec.activation, &fwd.zs[l - 1]);
                let spp = act_second(spec.activation, &fwd.zs[l - 1]);
                r_delta = r_back.component_mul(&sp)
                    + back.component_mul(&spp).component_mul(&r_zs[l - 1]);
                delta = back.component_mul(&sp);
            }
        }
        spec.pack(&r_grads)
    }
}

fn sum_columns(m: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        out += col;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{fd_grad, fd_hvp};
    use crate::vector::dot;
    use approx::assert_abs_diff_eq;

    fn tiny_batch(x: &[f64], y: &[f64]) -> Minibatch {
        Minibatch::new(
            DMatrix::from_row_slice(1, x.len(), x),
            Targets::Regression(DMatrix::from_row_slice(1, y.len(), y)),
            (0..x.len()).collect(),
        )
    }

    #[test]
    fn param_counts() {
        assert_eq!(MlpSpec::regression(vec![1, 64, 64, 1]).param_count(), 4353);
        assert_eq!(MlpSpec::regression(vec![2, 3]).param_count(), 9);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = MlpSpec::regression(vec![2, 8, 1]);
        let s = RngStream::new(11, 4);
        let a = mlp_init(&spec, s);
        let b = mlp_init(&spec, s);
        assert_eq!(a, b);
        assert_eq!(a.dim(), spec.param_count());
        let limit0 = (6.0_f64 / 10.0).sqrt();
        for &w in &a.as_slice()[..16] {
            assert!(w.abs() < limit0);
        }
        // biases of the first layer are zero
        assert_eq!(&a.as_slice()[16..24], &[0.0; 8]);
    }

    #[test]
    fn affine_forward_hand_example() {
        // [1,1] net, w = 3, b = 1, input 2 -> 7
        let spec = MlpSpec::regression(vec![1, 1]);
        let phi = ParamVector::new(vec![3.0, 1.0]);
        let out = mlp_predict(&spec, &phi, &DMatrix::from_row_slice(1, 1, &[2.0]));
        assert_eq!(out[(0, 0)], 7.0);
    }

    #[test]
    fn zero_weights_outputs() {
        let spec = MlpSpec::regression(vec![2, 4, 1]);
        let phi = ParamVector::zeros(spec.param_count());
        let out = mlp_predict(&spec, &phi, &DMatrix::from_row_slice(2, 3, &[1.0; 6]));
        assert!(out.iter().all(|&x| x == 0.0));

        let cls = MlpSpec::classifier(vec![2, 4, 5]);
        let phi = ParamVector::zeros(cls.param_count());
        let probs = mlp_predict(&cls, &phi, &DMatrix::from_row_slice(2, 1, &[0.3, -2.0]));
        for &p in probs.iter() {
            assert_abs_diff_eq!(p, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_linear_layer_loss_and_grads() {
        // w = 2, b = 0, x = 1, y = 0: loss (wx-y)^2 = 4, d/dw = 4, d/db = 4
        let spec = MlpSpec::regression(vec![1, 1]);
        let loss = mlp_loss(&spec, tiny_batch(&[1.0], &[0.0]));
        let phi = ParamVector::new(vec![2.0, 0.0]);
        assert_eq!(loss.value(&phi), 4.0);
        let g = loss.grad(&phi);
        assert_eq!(g.as_slice(), &[4.0, 4.0]);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_grad() {
        let spec = MlpSpec::regression(vec![1, 1]);
        let phi = ParamVector::new(vec![2.0, 1.0]);
        // targets equal outputs: y = 2x + 1
        let loss = mlp_loss(&spec, tiny_batch(&[0.5, -1.0], &[2.0, -1.0]));
        assert_eq!(loss.value(&phi), 0.0);
        assert!(loss.grad(&phi).as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_n() {
        let spec = MlpSpec::classifier(vec![3, 5]);
        let phi = ParamVector::zeros(spec.param_count());
        let batch = Minibatch::new(
            DMatrix::from_row_slice(3, 2, &[0.1, 0.4, -1.0, 0.9, 2.0, 0.0]),
            Targets::Classes(vec![0, 3]),
            vec![0, 1],
        );
        let loss = mlp_loss(&spec, batch);
        assert_abs_diff_eq!(loss.value(&phi), 5.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn softmax_columns_normalized_and_ce_nonnegative() {
        let spec = MlpSpec::classifier(vec![2, 6, 4]);
        let phi = mlp_init(&spec, RngStream::new(5, 0));
        let inputs = DMatrix::from_fn(2, 7, |r, c| ((r + 2 * c) as f64).sin());
        let probs = mlp_predict(&spec, &phi, &inputs);
        for col in probs.column_iter() {
            assert_abs_diff_eq!(col.sum(), 1.0, epsilon = 1e-12);
        }
        let batch = Minibatch::new(inputs, Targets::Classes(vec![0, 1, 2, 3, 0, 1, 2]), (0..7).collect());
        assert!(mlp_loss(&spec, batch).value(&phi) >= 0.0);
    }

    #[test]
    fn loss_invariant_under_batch_permutation() {
        let spec = MlpSpec::regression(vec![1, 8, 1]);
        let phi = mlp_init(&spec, RngStream::new(9, 1));
        let fwd = mlp_loss(&spec, tiny_batch(&[0.1, 0.5, -0.4], &[1.0, 2.0, 3.0]));
        let rev = mlp_loss(&spec, tiny_batch(&[-0.4, 0.5, 0.1], &[3.0, 2.0, 1.0]));
        assert_abs_diff_eq!(fwd.value(&phi), rev.value(&phi), epsilon = 1e-15);
    }

    fn random_vec(dim: usize, stream: RngStream, scale: f64) -> ParamVector {
        let mut rng = stream.rng();
        ParamVector::new((0..dim).map(|_| rng.gen_range(-scale..scale)).collect())
    }

    #[test]
    fn backprop_matches_fd_on_random_nets() {
        for seed in 0..5u64 {
            let spec = MlpSpec::regression(vec![2, 6, 5, 1]);
            let phi = mlp_init(&spec, RngStream::new(seed, 0));
            let mut rng = RngStream::new(seed, 1).rng();
            let inputs = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
            let targets = DMatrix::from_fn(1, 4, |_, _| rng.gen_range(-1.0..1.0));
            let loss = mlp_loss(&spec, Minibatch::new(inputs, Targets::Regression(targets), (0..4).collect()));
            let g = loss.grad(&phi);
            let fd = fd_grad(&loss, &phi, 1e-5).unwrap();
            let err = g.sub(&fd).norm_inf();
            assert!(err <= 1e-6 * (1.0 + g.norm_inf()), "err {err}");
        }
    }

    #[test]
    fn hvp_matches_fd_and_is_symmetric() {
        let spec = MlpSpec::classifier(vec![3, 7, 4]);
        let phi = mlp_init(&spec, RngStream::new(2, 0));
        let mut rng = RngStream::new(2, 1).rng();
        let inputs = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
        let loss = mlp_loss(
            &spec,
            Minibatch::new(inputs, Targets::Classes(vec![0, 1, 2, 3, 1]), (0..5).collect()),
        );
        let dim = spec.param_count();
        let v = random_vec(dim, RngStream::new(2, 2), 1.0).scale(1.0 / (dim as f64).sqrt());
        let w = random_vec(dim, RngStream::new(2, 3), 1.0).scale(1.0 / (dim as f64).sqrt());

        let hv = loss.hvp(&phi, &v);
        let fd = fd_hvp(&loss, &phi, &v, 1e-5).unwrap();
        let err = hv.sub(&fd).norm_inf();
        assert!(err <= 1e-5 * (1.0 + hv.norm_inf()), "err {err}");

        // symmetry: <w, Hv> = <v, Hw>
        let hw = loss.hvp(&phi, &w);
        assert_abs_diff_eq!(dot(&w, &hv), dot(&v, &hw), epsilon = 1e-9);

        // linearity in v
        let combo = loss.hvp(&phi, &crate::vector::axpy(&v.scale(0.3), -1.7, &w));
        let expect = crate::vector::axpy(&hv.scale(0.3), -1.7, &hw);
        assert!(combo.sub(&expect).norm_inf() < 1e-10);
    }

    #[test]
    fn predicted_class_ties_break_low() {
        let probs = DMatrix::from_row_slice(3, 1, &[0.4, 0.4, 0.2]);
        assert_eq!(predicted_classes(&probs), vec![0]);
    }

    #[test]
    fn output_permutation_is_pure_relabeling() {
        let spec = MlpSpec::classifier(vec![2, 5, 4]);
        let phi = mlp_init(&spec, RngStream::new(3, 0));
        let mut rng = RngStream::new(3, 1).rng();
        let inputs = DMatrix::from_fn(2, 6, |_, _| rng.gen_range(-1.0..1.0));
        let classes = vec![0, 1, 2, 3, 2, 1];
        let perm = [2usize, 0, 3, 1];

        let base = mlp_loss(
            &spec,
            Minibatch::new(inputs.clone(), Targets::Classes(classes.clone()), (0..6).collect()),
        );
        let permuted_classes: Vec<usize> = classes.iter().map(|&c| perm[c]).collect();
        let permuted = mlp_loss(
            &spec,
            Minibatch::new(inputs, Targets::Classes(permuted_classes), (0..6).collect()),
        );
        let phi_perm = permute_output_units(&spec, &phi, &perm);
        assert_abs_diff_eq!(base.value(&phi), permuted.value(&phi_perm), epsilon = 1e-12);
    }
}
