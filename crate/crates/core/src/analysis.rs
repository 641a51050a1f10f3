//! Executable form of the leading-order expansion of the meta-gradients.
//!
//! The expansion says the expected meta-gradient of each algorithm is
//! `c_grad * AvgGrad - c_inner * alpha * AvgGradInner + O(alpha^2)`, where
//! AvgGrad is the expected gradient at the initial point (the joint-training
//! direction) and AvgGradInner is the expected symmetrized Hessian-gradient
//! cross term (its negative increases the inner product between gradients of
//! different minibatches of the same task). This module estimates the two
//! terms by Monte Carlo, measures the actual meta-gradients on frozen batch
//! sequences, and studies how the residual scales with the step size.
//!
//! Estimators symmetrize explicitly over which batch comes first (measured
//! meta-gradients are averaged over all batch-order permutations) so that on
//! fixed batch sets the per-sample residual is exactly the remainder term
//! rather than remainder plus an order-dependent noise term. Common random
//! numbers across the step-size grid keep the residual slopes measurable.

use crate::error::{Error, Result};
use crate::inner::run_inner_on_losses;
use crate::loss::DifferentiableLoss;
use crate::meta::maml_from_trajectory;
use crate::optim::{InnerOptimizer, SgdState};
use crate::par::map_indices;
use crate::rng::RngStream;
use crate::task::{Pool, TaskFamily};
use crate::vector::{axpy, dot, ParamVector};

use rand::Rng;

/// Meta-gradient flavors covered by the expansion (the combo family is a
/// reparametrization of these).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisAlgo {
    Maml,
    Fomaml,
    Reptile,
}

impl AnalysisAlgo {
    pub fn name(&self) -> &'static str {
        match self {
            AnalysisAlgo::Maml => "maml",
            AnalysisAlgo::Fomaml => "fomaml",
            AnalysisAlgo::Reptile => "reptile",
        }
    }
}

/// Leading-order coefficients; exact integers for every k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coefficients {
    pub c_grad: u64,
    pub c_inner: u64,
}

/// MAML `(1, 2(k-1))`, FOMAML `(1, k-1)`, Reptile `(k, k(k-1)/2)`.
pub fn coefficients(algo: AnalysisAlgo, k: usize) -> Coefficients {
    assert!(k >= 1);
    let k = k as u64;
    match algo {
        AnalysisAlgo::Maml => Coefficients {
            c_grad: 1,
            c_inner: 2 * (k - 1),
        },
        AnalysisAlgo::Fomaml => Coefficients {
            c_grad: 1,
            c_inner: k - 1,
        },
        AnalysisAlgo::Reptile => Coefficients {
            c_grad: k,
            c_inner: k * (k - 1) / 2,
        },
    }
}

/// Monte-Carlo estimates of the two expansion terms at one parameter point.
#[derive(Debug, Clone)]
pub struct TaylorTerms {
    pub avg_grad: ParamVector,
    pub avg_grad_inner: ParamVector,
    pub avg_grad_stderr: ParamVector,
    pub avg_grad_inner_stderr: ParamVector,
    pub n_samples: usize,
}

/// Symmetrized terms for one fixed loss pair:
/// `(1/2 (g1 + g2), 1/2 (H2 g1 + H1 g2))`, everything at `phi`.
pub fn pair_terms<L: DifferentiableLoss + ?Sized>(
    phi: &ParamVector,
    l1: &L,
    l2: &L,
) -> (ParamVector, ParamVector) {
    let g1 = l1.grad(phi);
    let g2 = l2.grad(phi);
    let h21 = l2.hvp(phi, &g1);
    let h12 = l1.hvp(phi, &g2);
    (
        axpy(&g1, 1.0, &g2).scale(0.5),
        axpy(&h21, 1.0, &h12).scale(0.5),
    )
}

/// The unhalved cross term `H2 g1 + H1 g2`, which equals the gradient of
/// `phi -> g1(phi) . g2(phi)`.
pub fn symmetrized_cross_term<L: DifferentiableLoss + ?Sized>(
    phi: &ParamVector,
    l1: &L,
    l2: &L,
) -> ParamVector {
    let (_, half) = pair_terms(phi, l1, l2);
    half.scale(2.0)
}

fn draw_batch(rng: &mut rand_chacha::ChaCha8Rng, pool: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| rng.gen_range(0..pool)).collect()
}

const CHUNK: usize = 32;

struct MeanVar {
    sum: ParamVector,
    sumsq: ParamVector,
    n: usize,
}

impl MeanVar {
    fn new(dim: usize) -> Self {
        MeanVar {
            sum: ParamVector::zeros(dim),
            sumsq: ParamVector::zeros(dim),
            n: 0,
        }
    }

    fn push(&mut self, v: &ParamVector) {
        for i in 0..v.dim() {
            self.sum[i] += v[i];
            self.sumsq[i] += v[i] * v[i];
        }
        self.n += 1;
    }

    fn merge(&mut self, other: MeanVar) {
        for i in 0..self.sum.dim() {
            self.sum[i] += other.sum[i];
            self.sumsq[i] += other.sumsq[i];
        }
        self.n += other.n;
    }

    fn mean(&self) -> ParamVector {
        self.sum.scale(1.0 / self.n as f64)
    }

    fn stderr(&self) -> ParamVector {
        let n = self.n as f64;
        let mut out = ParamVector::zeros(self.sum.dim());
        if self.n < 2 {
            return out;
        }
        for i in 0..out.dim() {
            let mean = self.sum[i] / n;
            let var = (self.sumsq[i] / n - mean * mean).max(0.0) * n / (n - 1.0);
            out[i] = (var / n).sqrt();
        }
        out
    }
}

/// Estimates AvgGrad and AvgGradInner at `phi`: each sample draws a task and
/// two independent minibatches, accumulating the pair-symmetrized terms.
/// Samples are chunked with a fixed reduction order, so results are
/// byte-identical across thread counts.
pub fn estimate_terms(
    phi: &ParamVector,
    family: &dyn TaskFamily,
    batch_size: usize,
    n_samples: usize,
    stream: RngStream,
) -> Result<TaylorTerms> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig("need at least 2 samples".into()));
    }
    let dim = phi.dim();
    let chunks = n_samples.div_ceil(CHUNK);
    let partials = map_indices(chunks, |c| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(n_samples);
        let mut grad_acc = MeanVar::new(dim);
        let mut inner_acc = MeanVar::new(dim);
        for s in lo..hi {
            let sample_stream = stream.substream(0xE5).substream(s as u64);
            let task = family.sample_train(sample_stream);
            let mut rng = sample_stream.substream(1).rng();
            let pool = task.pool_size(Pool::Train);
            let b1 = draw_batch(&mut rng, pool, batch_size);
            let b2 = draw_batch(&mut rng, pool, batch_size);
            let l1 = task.loss(Pool::Train, &b1);
            let l2 = task.loss(Pool::Train, &b2);
            let (g, h) = pair_terms(phi, &l1, &l2);
            grad_acc.push(&g);
            inner_acc.push(&h);
        }
        (grad_acc, inner_acc)
    });
    let mut grad_acc = MeanVar::new(dim);
    let mut inner_acc = MeanVar::new(dim);
    for (g, h) in partials {
        grad_acc.merge(g);
        inner_acc.merge(h);
    }
    Ok(TaylorTerms {
        avg_grad: grad_acc.mean(),
        avg_grad_inner: inner_acc.mean(),
        avg_grad_stderr: grad_acc.stderr(),
        avg_grad_inner_stderr: inner_acc.stderr(),
        n_samples,
    })
}

/// Leading-order prediction `c_grad * AvgGrad - c_inner * alpha * AvgGradInner`.
pub fn predicted_meta_gradient(
    terms: &TaylorTerms,
    algo: AnalysisAlgo,
    k: usize,
    alpha: f64,
) -> ParamVector {
    let c = coefficients(algo, k);
    axpy(
        &terms.avg_grad.scale(c.c_grad as f64),
        -(c.c_inner as f64) * alpha,
        &terms.avg_grad_inner,
    )
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..k).collect();
    fn heap(n: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n <= 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..n {
            heap(n - 1, items, out);
            if n % 2 == 0 {
                items.swap(i, n - 1);
            } else {
                items.swap(0, n - 1);
            }
        }
    }
    heap(k, &mut items, &mut out);
    out
}

/// Measures the gradient-form meta-gradient of `algo` on a frozen loss set,
/// averaged over every ordering of the losses (the batch-order
/// symmetrization). `None` when the inner loop hit a non-finite value.
pub fn measured_meta_gradient_sym<L: DifferentiableLoss + ?Sized>(
    phi: &ParamVector,
    losses: &[&L],
    algo: AnalysisAlgo,
    alpha: f64,
) -> Result<Option<ParamVector>> {
    let k = losses.len();
    if k == 0 || k > 4 {
        return Err(Error::InvalidConfig(
            "order symmetrization supports 1 <= k <= 4".into(),
        ));
    }
    let perms = permutations(k);
    let mut acc = ParamVector::zeros(phi.dim());
    for perm in &perms {
        let ordered: Vec<&L> = perm.iter().map(|&i| losses[i]).collect();
        let mut opt = InnerOptimizer::Sgd(SgdState::new(alpha));
        let traj = match run_inner_on_losses(phi, &ordered, &mut opt, true) {
            Ok(t) => t,
            Err(Error::NonFinite { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let g = match algo {
            AnalysisAlgo::Reptile => {
                let mut sum = ParamVector::zeros(phi.dim());
                for gi in &traj.gradients {
                    sum = axpy(&sum, 1.0, gi);
                }
                sum
            }
            AnalysisAlgo::Fomaml => traj.gradients[k - 1].clone(),
            AnalysisAlgo::Maml => {
                let meta = maml_from_trajectory(&traj, &ordered)?;
                meta.direction.scale(-1.0)
            }
        };
        if !g.is_finite() {
            return Ok(None);
        }
        acc = axpy(&acc, 1.0, &g);
    }
    Ok(Some(acc.scale(1.0 / perms.len() as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFlag {
    Ok,
    /// The inner loop diverged for at least one sample at this step size.
    Dropped,
    /// Residuals at machine precision; the expansion is exact here.
    Exact,
}

#[derive(Debug, Clone)]
pub struct ResidualPoint {
    pub alpha: f64,
    pub residual: f64,
    pub stderr: f64,
    pub n: usize,
    pub flag: PointFlag,
}

#[derive(Debug, Clone)]
pub struct ResidualStudy {
    pub algo: AnalysisAlgo,
    pub k: usize,
    pub points: Vec<ResidualPoint>,
    /// Fitted log-log slope over the kept points; `None` when the expansion
    /// was exact or fewer than two points survived.
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub exact: bool,
}

struct ResidualAccum {
    per_alpha: Vec<MeanVar>,
    diverged: Vec<bool>,
}

/// Residual scale used to flag machine-precision (exact) expansions.
const EXACT_REL_TOL: f64 = 1e-10;

/// Measures `r(alpha) = || E[g_alg] - prediction ||` over the step-size grid
/// with common random numbers: every alpha sees the same tasks and frozen
/// batch sequences, and the per-sample prediction uses the same batches'
/// gradients and Hessians. The fitted log-log slope isolates the remainder
/// order.
pub fn residual_study(
    family: &dyn TaskFamily,
    algo: AnalysisAlgo,
    k: usize,
    alpha_grid: &[f64],
    batch_size: usize,
    n_samples: usize,
    stream: RngStream,
) -> Result<ResidualStudy> {
    if !(2..=4).contains(&k) {
        return Err(Error::InvalidConfig("residual study needs 2 <= k <= 4".into()));
    }
    if alpha_grid.len() < 4 || alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "alpha grid must be strictly increasing with >= 4 points".into(),
        ));
    }
    if alpha_grid[0] <= 0.0 {
        return Err(Error::InvalidConfig("alpha grid must be positive".into()));
    }
    let phi = family.init_params(stream.substream(0xA0));
    let dim = phi.dim();
    let n_alpha = alpha_grid.len();
    let chunks = n_samples.div_ceil(CHUNK);

    let partials = map_indices(chunks, |c| -> Result<ResidualAccum> {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(n_samples);
        let mut acc = ResidualAccum {
            per_alpha: (0..n_alpha).map(|_| MeanVar::new(dim)).collect(),
            diverged: vec![false; n_alpha],
        };
        for s in lo..hi {
            let sample_stream = stream.substream(0xB0).substream(s as u64);
            let task = family.sample_train(sample_stream);
            let mut rng = sample_stream.substream(1).rng();
            let pool = task.pool_size(Pool::Train);
            let losses: Vec<Box<dyn DifferentiableLoss>> = (0..k)
                .map(|_| task.loss(Pool::Train, &draw_batch(&mut rng, pool, batch_size)))
                .collect();
            let refs: Vec<&Box<dyn DifferentiableLoss>> = losses.iter().collect();

            // per-sample expansion terms over the same frozen batches
            let grads: Vec<ParamVector> = refs.iter().map(|l| l.grad(&phi)).collect();
            let mut avg_grad = ParamVector::zeros(dim);
            for g in &grads {
                avg_grad = axpy(&avg_grad, 1.0 / k as f64, g);
            }
            let mut inner = ParamVector::zeros(dim);
            let pairs = (k * (k - 1)) as f64;
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        let hv = refs[i].hvp(&phi, &grads[j]);
                        inner = axpy(&inner, 1.0 / pairs, &hv);
                    }
                }
            }

            let coeff = coefficients(algo, k);
            for (a, &alpha) in alpha_grid.iter().enumerate() {
                match measured_meta_gradient_sym(&phi, &refs, algo, alpha)? {
                    Some(measured) => {
                        let pred = axpy(
                            &avg_grad.scale(coeff.c_grad as f64),
                            -(coeff.c_inner as f64) * alpha,
                            &inner,
                        );
                        acc.per_alpha[a].push(&measured.sub(&pred));
                    }
                    None => acc.diverged[a] = true,
                }
            }
        }
        Ok(acc)
    });

    let mut per_alpha: Vec<MeanVar> = (0..n_alpha).map(|_| MeanVar::new(dim)).collect();
    let mut diverged = vec![false; n_alpha];
    for partial in partials {
        let partial = partial?;
        for (a, mv) in partial.per_alpha.into_iter().enumerate() {
            per_alpha[a].merge(mv);
            diverged[a] = diverged[a] || partial.diverged[a];
        }
    }

    // scale for exactness detection: the size of the prediction itself
    let grad_scale = per_alpha
        .iter()
        .map(|mv| if mv.n > 0 { mv.mean().norm_l2() } else { 0.0 })
        .fold(0.0, f64::max);

    let mut points = Vec::with_capacity(n_alpha);
    for (a, &alpha) in alpha_grid.iter().enumerate() {
        if diverged[a] {
            points.push(ResidualPoint {
                alpha,
                residual: f64::NAN,
                stderr: f64::NAN,
                n: per_alpha[a].n,
                flag: PointFlag::Dropped,
            });
            continue;
        }
        let mean = per_alpha[a].mean();
        let stderr_vec = per_alpha[a].stderr();
        points.push(ResidualPoint {
            alpha,
            residual: mean.norm_l2(),
            stderr: stderr_vec.norm_l2(),
            n: per_alpha[a].n,
            flag: PointFlag::Ok,
        });
    }

    // exactness: every kept residual is at machine precision
    let exact = points
        .iter()
        .filter(|p| p.flag == PointFlag::Ok)
        .all(|p| p.residual <= EXACT_REL_TOL * (1.0 + grad_scale));
    if exact {
        for p in points.iter_mut().filter(|p| p.flag == PointFlag::Ok) {
            p.flag = PointFlag::Exact;
        }
    }

    let (slope, slope_stderr) = if exact {
        (None, None)
    } else {
        fit_loglog_slope(
            &points
                .iter()
                .filter(|p| p.flag == PointFlag::Ok && p.residual > 0.0)
                .map(|p| (p.alpha, p.residual))
                .collect::<Vec<_>>(),
        )
    };

    Ok(ResidualStudy {
        algo,
        k,
        points,
        slope,
        slope_stderr,
        exact,
    })
}

fn fit_loglog_slope(points: &[(f64, f64)]) -> (Option<f64>, Option<f64>) {
    if points.len() < 2 {
        return (None, None);
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let stderr = if xs.len() > 2 {
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let fit = ybar + slope * (x - xbar);
                (y - fit) * (y - fit)
            })
            .sum();
        Some((ss_res / (n - 2.0) / sxx).sqrt())
    } else {
        None
    };
    (Some(slope), stderr)
}

/// Monte-Carlo estimate of `E[g1 . g2]` at two parameter vectors, paired
/// over the same tasks and batches.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub mean_before: f64,
    pub mean_after: f64,
    pub diff_mean: f64,
    pub diff_stderr: f64,
    pub n: usize,
}

pub fn inner_product_probe(
    phi_before: &ParamVector,
    phi_after: &ParamVector,
    family: &dyn TaskFamily,
    batch_size: usize,
    n_samples: usize,
    stream: RngStream,
) -> Result<ProbeResult> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig("need at least 2 samples".into()));
    }
    let chunks = n_samples.div_ceil(CHUNK);
    let partials = map_indices(chunks, |c| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(n_samples);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for s in lo..hi {
            let sample_stream = stream.substream(0xC0).substream(s as u64);
            let task = family.sample_train(sample_stream);
            let mut rng = sample_stream.substream(1).rng();
            let pool = task.pool_size(Pool::Train);
            let l1 = task.loss(Pool::Train, &draw_batch(&mut rng, pool, batch_size));
            let l2 = task.loss(Pool::Train, &draw_batch(&mut rng, pool, batch_size));
            let before = dot(&l1.grad(phi_before), &l2.grad(phi_before));
            let after = dot(&l1.grad(phi_after), &l2.grad(phi_after));
            let diff = after - before;
            sums.0 += before;
            sums.1 += after;
            sums.2 += diff;
            sums.3 += diff * diff;
        }
        sums
    });
    let mut total = (0.0, 0.0, 0.0, 0.0);
    for p in partials {
        total.0 += p.0;
        total.1 += p.1;
        total.2 += p.2;
        total.3 += p.3;
    }
    let n = n_samples as f64;
    let diff_mean = total.2 / n;
    let diff_var = (total.3 / n - diff_mean * diff_mean).max(0.0) * n / (n - 1.0);
    Ok(ProbeResult {
        mean_before: total.0 / n,
        mean_after: total.1 / n,
        diff_mean,
        diff_stderr: (diff_var / n).sqrt(),
        n: n_samples,
    })
}
