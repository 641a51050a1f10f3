//! Derivative checking against the finite-difference oracles.
//!
//! Used by the test suites to validate analytic gradients and
//! Hessian-vector products of any [`DifferentiableLoss`]; the comparisons
//! are relative with an absolute floor, `err <= tol * (1 + ||reference||)`.

use crate::error::Result;
use crate::loss::{fd_grad, fd_hvp, DifferentiableLoss, FD_GRAD_H};
use crate::vector::{dot, ParamVector};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub grad_h: f64,
    pub hvp_h: f64,
    pub grad_tol: f64,
    pub hvp_tol: f64,
    pub symmetry_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            grad_h: FD_GRAD_H,
            hvp_h: FD_GRAD_H,
            grad_tol: 1e-6,
            hvp_tol: 1e-5,
            symmetry_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub grad_err: f64,
    pub grad_ok: bool,
    pub hvp_err: f64,
    pub hvp_ok: bool,
    pub symmetry_err: f64,
    pub symmetry_ok: bool,
}

impl GradCheckReport {
    pub fn ok(&self) -> bool {
        self.grad_ok && self.hvp_ok && self.symmetry_ok
    }
}

/// Checks the analytic gradient and HVP of `loss` at `phi` against central
/// finite differences, and the Hessian symmetry `<w, Hv> = <v, Hw>`, along
/// the probe directions `v`, `w`.
pub fn check_loss(
    loss: &dyn DifferentiableLoss,
    phi: &ParamVector,
    v: &ParamVector,
    w: &ParamVector,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let g = loss.grad(phi);
    let g_fd = fd_grad(loss, phi, cfg.grad_h)?;
    let grad_err = g.sub(&g_fd).norm_inf();
    let grad_ok = grad_err <= cfg.grad_tol * (1.0 + g.norm_inf());

    let hv = loss.hvp(phi, v);
    let hv_fd = fd_hvp(loss, phi, v, cfg.hvp_h)?;
    let hvp_err = hv.sub(&hv_fd).norm_inf();
    let hvp_ok = hvp_err <= cfg.hvp_tol * (1.0 + hv.norm_inf());

    let hw = loss.hvp(phi, w);
    let symmetry_err = (dot(w, &hv) - dot(v, &hw)).abs();
    let symmetry_ok = symmetry_err <= cfg.symmetry_tol;

    Ok(GradCheckReport {
        grad_err,
        grad_ok,
        hvp_err,
        hvp_ok,
        symmetry_err,
        symmetry_ok,
    })
}
