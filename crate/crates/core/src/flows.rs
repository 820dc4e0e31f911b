//! Explicit time stepping of the nonlinear displacement-filtering flows
//!
//! ```text
//! du/dt = (-1)^(k-1) |d1 u|^q  d_i^k ( d_i^k u / |d_i^k u|^(2-p) )
//! ```
//!
//! with `i` the filtering axis, `k` the derivative order, `p` the regularizer
//! power and `q` the mobility power. The mobility always differentiates along
//! `X1`. For `p = 1` the inner quotient uses the smoothed magnitude
//! `sqrt(s^2 + beta^2)`.
//!
//! The inner and outer derivatives are compact: for `k = 1` a forward
//! difference onto cell faces followed by a backward difference back onto
//! cells, for `k = 2` the three-point second difference applied twice. Ghost
//! cells are filled by [`Extension`], so with the default even extension the
//! odd derivatives up to order `2k - 1` vanish on the faces normal to `i`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{self, extend_line, norm_linf, Axis, Extension, ScalarField};

/// Smallest effective diffusivity used by [`stable_dt`].
const DIFFUSIVITY_FLOOR: f64 = 1e-300;

/// Selects one member of the flow family.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowParams {
    pub axis: Axis,
    /// Derivative order `k`.
    pub order: usize,
    /// Regularizer power `p`.
    pub power: usize,
    /// Mobility power `q`.
    pub mobility: usize,
    /// Smoothing of `|d_i^k u|` for `p = 1`.
    pub beta: f64,
    /// Added to the mobility, `|d1 u|^q + epsilon`.
    pub epsilon: f64,
    /// Safety factor applied to the parabolic step bound, in `(0, 1]`.
    pub cfl: f64,
    /// Upper bound on any single step.
    pub dt_max: f64,
    pub max_steps: usize,
    pub extension: Extension,
}

impl FlowParams {
    pub fn new(axis: Axis, order: usize, power: usize, mobility: usize) -> Self {
        FlowParams {
            axis,
            order,
            power,
            mobility,
            beta: 1e-6,
            epsilon: 0.0,
            cfl: 0.9,
            dt_max: 1.0,
            max_steps: 20_000_000,
            extension: Extension::Even,
        }
    }

    /// Default smoothing for data with the given dynamic range.
    pub fn default_beta(range: f64) -> f64 {
        1e-6 * range.abs().max(f64::MIN_POSITIVE)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_extension(mut self, extension: Extension) -> Self {
        self.extension = extension;
        self
    }

    pub fn with_dt_max(mut self, dt_max: f64) -> Self {
        self.dt_max = dt_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !matches!(self.order, 1 | 2) {
            return bad(format!("order k must be 1 or 2, got {}", self.order));
        }
        if !matches!(self.power, 1 | 2) {
            return bad(format!("power p must be 1 or 2, got {}", self.power));
        }
        if !matches!(self.mobility, 1 | 2) {
            return bad(format!("mobility q must be 1 or 2, got {}", self.mobility));
        }
        if self.power == 1 && !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!(
                "beta must be positive when p = 1, got {}",
                self.beta
            ));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            ));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl factor must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.dt_max > 0.0) {
            return bad(format!("dt_max must be positive, got {}", self.dt_max));
        }
        Ok(())
    }

    #[inline]
    fn quotient(&self, s: f64) -> f64 {
        if self.power == 2 {
            s
        } else {
            s / (s * s + self.beta * self.beta).sqrt()
        }
    }

    /// Lipschitz constant of [`Self::quotient`]: its slope at `s = 0` for `p = 1`.
    #[inline]
    fn quotient_lipschitz(&self) -> f64 {
        if self.power == 2 {
            1.0
        } else {
            1.0 / self.beta
        }
    }
}

/// State of an evolution.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub u: ScalarField,
    /// Elapsed time, the sum of all accepted steps.
    pub time: f64,
    pub steps: usize,
    pub last_dt: f64,
}

/// Result of [`evolve`]: the final state plus `||rhs||_inf` before every step.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub state: FlowState,
    pub residuals: Vec<f64>,
    /// Set by [`evolve_to_steady`] when the residual target was met.
    pub converged: bool,
}

/// `(-1)^(k-1) d_i^k q(d_i^k u)` on one padded line (ghost width `k`).
fn line_operator(e: &[f64], n: usize, h: f64, params: &FlowParams) -> Vec<f64> {
    match params.order {
        1 => {
            // face f sits between cells f-1 and f
            let flux: Vec<f64> = (0..=n)
                .map(|f| params.quotient((e[f + 1] - e[f]) / h))
                .collect();
            (0..n).map(|j| (flux[j + 1] - flux[j]) / h).collect()
        }
        _ => {
            // second differences at cells -1..=n, stored from index 0
            let h2 = h * h;
            let q: Vec<f64> = (0..n + 2)
                .map(|c| params.quotient((e[c + 2] - 2.0 * e[c + 1] + e[c]) / h2))
                .collect();
            (0..n)
                .map(|j| -(q[j + 2] - 2.0 * q[j + 1] + q[j]) / h2)
                .collect()
        }
    }
}

/// Spatial operator without mobility, `(-1)^(k-1) d_i^k q(d_i^k u)`.
pub fn diffusion_term(u: &ScalarField, params: &FlowParams) -> Result<ScalarField> {
    params.validate()?;
    u.ensure_stencil(params.order)?;
    let axis = params.axis;
    let n = u.extent(axis);
    let h = u.spacing(axis);
    let lines: Vec<Vec<f64>> = (0..u.extent(axis.other()))
        .into_par_iter()
        .map(|idx| {
            let e = extend_line(&u.line(axis, idx), params.order, params.extension);
            line_operator(&e, n, h, params)
        })
        .collect();
    Ok(ScalarField::from_lines_like(u, axis, &lines))
}

/// `|d1 u|^q + epsilon`, with the first difference taken along `X1`.
pub fn mobility(u: &ScalarField, params: &FlowParams) -> Result<ScalarField> {
    let d1 = grid::diff_with(u, Axis::X1, 1, params.extension)?;
    let q = params.mobility as i32;
    Ok(d1.map(|g| g.abs().powi(q) + params.epsilon))
}

fn rhs_and_dt(u: &ScalarField, params: &FlowParams) -> Result<(ScalarField, f64)> {
    let term = diffusion_term(u, params)?;
    let mob = mobility(u, params)?;
    let rhs = mob.zip_map(&term, |m, t| m * t);
    let diffusivity = mob.max() * params.quotient_lipschitz();
    let k = params.order as i32;
    let h = u.spacing(params.axis);
    let bound = params.cfl * h.powi(2 * k) / (4f64.powi(k) * diffusivity.max(DIFFUSIVITY_FLOOR));
    Ok((rhs, bound.min(params.dt_max)))
}

/// Right-hand side `(-1)^(k-1) |d1 u|^q d_i^k q(d_i^k u)` of the flow.
pub fn flow_rhs(u: &ScalarField, params: &FlowParams) -> Result<ScalarField> {
    Ok(rhs_and_dt(u, params)?.0)
}

/// Forward-Euler step bound `cfl h^(2k) / (4^k max(|d1 u|^q + eps) L)` for the
/// frozen-coefficient linearization, with `L` the Lipschitz constant of the
/// inner quotient (`1`, or `1/beta` for `p = 1`), capped at `dt_max`.
pub fn stable_dt(u: &ScalarField, params: &FlowParams) -> Result<f64> {
    Ok(rhs_and_dt(u, params)?.1)
}

fn check_time(t: f64, what: &str) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "{what} must be finite and non-negative, got {t}"
        )))
    }
}

/// Forward-Euler integration from `u0` up to exactly `t_end`.
pub fn evolve(
    u0: &ScalarField,
    params: &FlowParams,
    t_end: f64,
    dt_override: Option<f64>,
) -> Result<Evolution> {
    check_time(t_end, "t_end")?;
    if let Some(dt) = dt_override {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "dt override must be positive, got {dt}"
            )));
        }
    }
    params.validate()?;
    u0.ensure_stencil(params.order)?;

    let mut state = FlowState {
        u: u0.clone(),
        time: 0.0,
        steps: 0,
        last_dt: 0.0,
    };
    let mut residuals = Vec::new();
    while state.time < t_end {
        if state.steps >= params.max_steps {
            return Err(Error::StepLimit { steps: state.steps });
        }
        let (rhs, stable) = rhs_and_dt(&state.u, params)?;
        residuals.push(norm_linf(&rhs));
        let mut dt = stable.min(dt_override.unwrap_or(f64::INFINITY));
        let remaining = t_end - state.time;
        let last = dt >= remaining * (1.0 - 1e-12);
        if last {
            dt = remaining;
        }
        state.u.axpy(dt, &rhs);
        state.steps += 1;
        if !state.u.is_finite() {
            return Err(Error::Stability {
                step: state.steps,
                time: state.time + dt,
            });
        }
        state.last_dt = dt;
        state.time = if last { t_end } else { state.time + dt };
    }
    Ok(Evolution {
        state,
        residuals,
        converged: true,
    })
}

/// Steps until `||rhs||_inf < rel_tol * ||rhs(u0)||_inf` or `t_max` elapses.
pub fn evolve_to_steady(
    u0: &ScalarField,
    params: &FlowParams,
    rel_tol: f64,
    t_max: f64,
) -> Result<Evolution> {
    check_time(t_max, "t_max")?;
    params.validate()?;
    u0.ensure_stencil(params.order)?;
    let mut state = FlowState {
        u: u0.clone(),
        time: 0.0,
        steps: 0,
        last_dt: 0.0,
    };
    let mut residuals = Vec::new();
    let mut target = None;
    loop {
        let (rhs, stable) = rhs_and_dt(&state.u, params)?;
        let r = norm_linf(&rhs);
        residuals.push(r);
        let target = *target.get_or_insert(rel_tol * r);
        if r <= target || r == 0.0 {
            return Ok(Evolution {
                state,
                residuals,
                converged: true,
            });
        }
        if state.time >= t_max || state.steps >= params.max_steps {
            return Ok(Evolution {
                state,
                residuals,
                converged: false,
            });
        }
        let dt = stable.min(t_max - state.time);
        state.u.axpy(dt, &rhs);
        state.steps += 1;
        if !state.u.is_finite() {
            return Err(Error::Stability {
                step: state.steps,
                time: state.time + dt,
            });
        }
        state.last_dt = dt;
        state.time += dt;
    }
}
