//! Sinc quadrature for the inverse fractional power L^(-beta), beta in
//! (1/4, 1).
//!
//! Each node y_l = l*k contributes a shifted resolvent: L^(-beta) W is
//! approximated by the sum over l of (c_id^(l) I + c_op^(l) L)^(-1) W with
//!
//!   c_id^(l) = pi / (2 k sin(pi beta)) * exp(-2 beta y_l),
//!   c_op^(l) = c_id^(l) * exp(2 y_l),
//!
//! summed for l = -K_minus ..= K_plus. Tying k to the mesh width via
//! k = -1 / (beta ln h) balances quadrature and discretization error; the
//! truncation limits K_minus = ceil(pi^2 / (4 k^2 beta)) and
//! K_plus = ceil(pi^2 / (4 k^2 (1 - beta))) balance the two tails.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureStep {
    /// Node index l.
    pub index: i64,
    /// Node position y_l = l * k.
    pub y: f64,
    /// Coefficient of the identity.
    pub c_id: f64,
    /// Coefficient of the elliptic operator.
    pub c_op: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraturePlan {
    pub beta: f64,
    pub kappa: f64,
    /// Step size k.
    pub step_size: f64,
    pub k_minus: i64,
    pub k_plus: i64,
    /// Steps in ascending l order.
    pub steps: Vec<QuadratureStep>,
}

impl QuadraturePlan {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Builds the quadrature plan for (kappa^2 - Laplacian)^beta at mesh width
/// h. `step_override` replaces the h-coupled step size k.
pub fn plan(beta: f64, kappa: f64, h: f64, step_override: Option<f64>) -> Result<QuadraturePlan> {
    if !(beta > 0.25 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must lie in (1/4, 1), got {beta}"
        )));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let k = match step_override {
        Some(k) => {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "quadrature step must be positive, got {k}"
                )));
            }
            k
        }
        None => {
            if !(h > 0.0 && h < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "mesh width must lie in (0, 1) to derive the quadrature step, got {h}; \
                     pass an explicit step instead"
                )));
            }
            -1.0 / (beta * h.ln())
        }
    };
    let k_minus = (PI * PI / (4.0 * k * k * beta)).ceil() as i64;
    let k_plus = (PI * PI / (4.0 * k * k * (1.0 - beta))).ceil() as i64;
    let c_const = PI / (2.0 * k * (PI * beta).sin());
    let mut steps = Vec::with_capacity((k_minus + k_plus + 1) as usize);
    for l in -k_minus..=k_plus {
        let y = l as f64 * k;
        let c_id = c_const * (-2.0 * beta * y).exp();
        let c_op = c_id * (2.0 * y).exp();
        if !(c_id > 0.0 && c_id.is_finite() && c_op > 0.0 && c_op.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "quadrature coefficients overflow at l = {l} (beta {beta}, step {k})"
            )));
        }
        steps.push(QuadratureStep {
            index: l,
            y,
            c_id,
            c_op,
        });
    }
    Ok(QuadraturePlan {
        beta,
        kappa,
        step_size: k,
        k_minus,
        k_plus,
        steps,
    })
}

/// Sums per-step solutions in ascending l order. The inputs must already be
/// ordered by l, as produced by iterating `QuadraturePlan::steps`.
pub fn accumulate(partials: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = partials
        .first()
        .ok_or_else(|| Error::InvalidParameter("no partial solutions to accumulate".into()))?;
    let mut out = vec![0.0; first.len()];
    for p in partials {
        if p.len() != first.len() {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                actual: p.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Ok(out)
}

/// Scalar transfer function of the plan: sum_l 1 / (c_id + c_op * lambda).
/// Converges to lambda^(-beta); used by the quadrature accuracy tests.
pub fn scalar_sum(plan: &QuadraturePlan, lambda: f64) -> f64 {
    plan.steps
        .iter()
        .map(|s| 1.0 / (s.c_id + s.c_op * lambda))
        .sum()
}
