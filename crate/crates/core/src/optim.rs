//! Inner- and outer-loop optimizers.
//!
//! The inner loop runs plain SGD or Adam. Adam defaults to `beta1 = 0`
//! (momentum hurts here because consecutive steps come from different
//! minibatches) and its moments persist across steps; evaluation-time
//! adaptation must not leak into them, which is what [`snapshot`] /
//! [`restore`] are for.

use crate::error::{Error, Result};
use crate::vector::{axpy, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub step_size: f64,
}

impl SgdState {
    pub fn new(step_size: f64) -> Self {
        assert!(step_size >= 0.0, "SGD step size must be non-negative");
        SgdState { step_size }
    }
}

/// Returns `phi - alpha * g`.
pub fn sgd_step(state: &SgdState, phi: &ParamVector, g: &ParamVector) -> ParamVector {
    axpy(phi, -state.step_size, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
}

impl AdamState {
    pub fn new(dim: usize, step_size: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        assert!(step_size > 0.0);
        assert!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2));
        assert!(eps > 0.0);
        AdamState {
            step_size,
            beta1,
            beta2,
            eps,
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            t: 0,
        }
    }
}

/// Standard Adam update with bias correction; mutates the moment state.
pub fn adam_step(state: &mut AdamState, phi: &ParamVector, g: &ParamVector) -> ParamVector {
    assert_eq!(phi.dim(), state.m.dim(), "adam state dim mismatch");
    assert_eq!(phi.dim(), g.dim(), "gradient dim mismatch");
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut out = phi.clone();
    for i in 0..phi.dim() {
        let gi = g[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * gi;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * gi * gi;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        out[i] -= state.step_size * m_hat / (v_hat.sqrt() + state.eps);
    }
    out
}

/// The inner-loop optimizer, stepped gradient-by-gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerOptimizer {
    Sgd(SgdState),
    Adam(AdamState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl InnerOptimizer {
    pub fn kind(&self) -> OptimizerKind {
        match self {
            InnerOptimizer::Sgd(_) => OptimizerKind::Sgd,
            InnerOptimizer::Adam(_) => OptimizerKind::Adam,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            InnerOptimizer::Sgd(_) => None,
            InnerOptimizer::Adam(a) => Some(a.m.dim()),
        }
    }

    /// SGD step size when this is an SGD optimizer.
    pub fn sgd_alpha(&self) -> Option<f64> {
        match self {
            InnerOptimizer::Sgd(s) => Some(s.step_size),
            InnerOptimizer::Adam(_) => None,
        }
    }

    pub fn step(&mut self, phi: &ParamVector, g: &ParamVector) -> ParamVector {
        match self {
            InnerOptimizer::Sgd(s) => sgd_step(s, phi, g),
            InnerOptimizer::Adam(a) => adam_step(a, phi, g),
        }
    }
}

/// Opaque copy of optimizer state taken by [`snapshot`].
#[derive(Debug, Clone, PartialEq)]
pub struct OpaqueStateBlob(InnerOptimizer);

/// Captures the full optimizer state.
pub fn snapshot(state: &InnerOptimizer) -> OpaqueStateBlob {
    OpaqueStateBlob(state.clone())
}

/// Rebuilds the state captured by [`snapshot`]; rejects blobs whose moment
/// dimensions do not match `model_dim`.
pub fn restore(blob: &OpaqueStateBlob, model_dim: usize) -> Result<InnerOptimizer> {
    if let Some(dim) = blob.0.dim() {
        if dim != model_dim {
            return Err(Error::SnapshotDimMismatch {
                blob: dim,
                model: model_dim,
            });
        }
    }
    Ok(blob.0.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// `eps(i) = eps0 * (1 - i / total_iters)`.
    LinearToZero,
    /// `eps(i) = eps0` for every iteration.
    Constant,
}

/// Outer step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterSchedule {
    pub eps0: f64,
    pub total_iters: usize,
    pub mode: ScheduleMode,
}

impl OuterSchedule {
    pub fn linear(eps0: f64, total_iters: usize) -> Self {
        assert!(total_iters > 0);
        OuterSchedule {
            eps0,
            total_iters,
            mode: ScheduleMode::LinearToZero,
        }
    }

    pub fn constant(eps0: f64, total_iters: usize) -> Self {
        assert!(total_iters > 0);
        OuterSchedule {
            eps0,
            total_iters,
            mode: ScheduleMode::Constant,
        }
    }

    pub fn epsilon(&self, iter: usize) -> f64 {
        match self.mode {
            ScheduleMode::LinearToZero => {
                self.eps0 * (1.0 - iter as f64 / self.total_iters as f64)
            }
            ScheduleMode::Constant => self.eps0,
        }
    }
}

/// Applies the outer update `phi + eps(iter) * direction`. The direction is
/// the ascent form: `phi_tilde - phi` for Reptile, `-g_meta` for
/// gradient-style meta-updates.
pub fn outer_step(
    phi: &ParamVector,
    direction: &ParamVector,
    schedule: &OuterSchedule,
    iter: usize,
) -> ParamVector {
    assert!(iter < schedule.total_iters, "iteration beyond schedule");
    axpy(phi, schedule.epsilon(iter), direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sgd_step_examples() {
        let s = SgdState::new(0.1);
        let phi = ParamVector::new(vec![0.0]);
        assert_eq!(sgd_step(&s, &phi, &ParamVector::new(vec![-1.0])).as_slice(), &[0.1]);
        assert_eq!(sgd_step(&s, &phi, &ParamVector::zeros(1)), phi);
        let frozen = SgdState::new(0.0);
        assert_eq!(sgd_step(&frozen, &phi, &ParamVector::new(vec![5.0])), phi);
    }

    #[test]
    fn adam_first_step_is_signed_unit() {
        let mut a = AdamState::new(1, 0.001, 0.0, 0.999, 1e-8);
        let phi = ParamVector::new(vec![0.5]);
        let out = adam_step(&mut a, &phi, &ParamVector::new(vec![1.0]));
        // v_hat = g^2 at t=1, so the step is step_size * sign(g) up to eps
        assert_abs_diff_eq!(out[0], 0.5 - 0.001, epsilon = 1e-9);
        assert_eq!(a.t, 1);
    }

    #[test]
    fn adam_zero_gradient_fixed_point() {
        let mut a = AdamState::new(2, 0.01, 0.0, 0.999, 1e-8);
        let phi = ParamVector::new(vec![1.0, -2.0]);
        let out = adam_step(&mut a, &phi, &ParamVector::zeros(2));
        assert_eq!(out, phi);
    }

    #[test]
    fn adam_first_step_scale_invariance() {
        let phi = ParamVector::new(vec![0.0]);
        let mut a1 = AdamState::new(1, 0.001, 0.0, 0.999, 1e-12);
        let mut a2 = AdamState::new(1, 0.001, 0.0, 0.999, 1e-12);
        let s1 = adam_step(&mut a1, &phi, &ParamVector::new(vec![0.3]));
        let s2 = adam_step(&mut a2, &phi, &ParamVector::new(vec![3.0]));
        assert_abs_diff_eq!(s1[0], s2[0], epsilon = 1e-9);
    }

    #[test]
    fn adam_degenerate_betas_is_sign_sgd() {
        let mut a = AdamState::new(3, 0.01, 0.0, 0.0, 1e-300);
        let mut phi = ParamVector::new(vec![0.0, 1.0, -1.0]);
        for g in [
            ParamVector::new(vec![0.5, -2.0, 3.0]),
            ParamVector::new(vec![-0.1, 0.2, -0.3]),
        ] {
            let next = adam_step(&mut a, &phi, &g);
            for i in 0..3 {
                let step = next[i] - phi[i];
                assert_abs_diff_eq!(step, -0.01 * g[i].signum(), epsilon = 1e-9);
            }
            phi = next;
        }
    }

    #[test]
    fn snapshot_restore_roundtrip_and_isolation() {
        let mut state = InnerOptimizer::Adam(AdamState::new(2, 0.01, 0.0, 0.999, 1e-8));
        let phi = ParamVector::new(vec![0.3, -0.7]);
        let g = ParamVector::new(vec![1.0, 2.0]);
        state.step(&phi, &g);

        let blob = snapshot(&state);
        assert_eq!(restore(&blob, 2).unwrap(), state);

        // run 100 steps, restore, then check the next trajectory matches the
        // one taken without the detour
        let mut detour = restore(&blob, 2).unwrap();
        let mut p = phi.clone();
        for _ in 0..100 {
            p = detour.step(&p, &g);
        }
        let mut resumed = restore(&blob, 2).unwrap();
        assert_eq!(resumed, state);
        let a = resumed.step(&phi, &g);
        let b = state.step(&phi, &g);
        assert_eq!(a, b);
        assert_eq!(resumed, state);
    }

    #[test]
    fn restore_rejects_dim_mismatch() {
        let state = InnerOptimizer::Adam(AdamState::new(3, 0.01, 0.0, 0.999, 1e-8));
        let blob = snapshot(&state);
        assert!(matches!(
            restore(&blob, 5),
            Err(crate::error::Error::SnapshotDimMismatch { blob: 3, model: 5 })
        ));
    }

    #[test]
    fn schedule_anneals_to_zero_monotonically() {
        let sched = OuterSchedule::linear(1.0, 100);
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let e = sched.epsilon(i);
            assert!(e >= 0.0 && e < prev);
            prev = e;
        }
        assert_abs_diff_eq!(sched.epsilon(99), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn outer_step_examples() {
        let sched = OuterSchedule::linear(1.0, 10);
        let phi = ParamVector::new(vec![0.0]);
        let dir = ParamVector::new(vec![2.0]);
        assert_eq!(outer_step(&phi, &dir, &sched, 0).as_slice(), &[2.0]);
        // near the end of the schedule the step is nearly zero
        let last = outer_step(&phi, &dir, &sched, 9);
        assert_abs_diff_eq!(last[0], 0.2, epsilon = 1e-12);
    }
}
