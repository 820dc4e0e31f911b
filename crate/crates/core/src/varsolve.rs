//! Energies of the non-convex displacement functionals and the lagged convex
//! iteration that minimizes them.
//!
//! Each step freezes the data weight at the previous iterate,
//!
//! ```text
//! Fc(u; v) = 1/2 sum A (u - v)^2 / w(v) + alpha R(u),
//! w(v)     = (d1 v)^2 + eps   (q = 2)   or   |d1 v| + eps   (q = 1),
//! ```
//!
//! and minimizes the resulting strictly convex problem. `R` is the discrete
//! regularizer `1/p sum A |K u|^p`, where `K` is the forward difference onto
//! interior faces (`k = 1`) or the even-reflected second difference (`k = 2`)
//! along the filtering axis, and `A = dx1 dx2`.

use crate::error::{Error, Result};
use crate::flows::{self, FlowParams};
use crate::grid::{self, norm_l2, norm_linf, Axis, ScalarField};
use crate::linsolve::{conjugate_gradient, CgOptions};

/// Relative slack allowed when checking the monotonicity monitors.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyParams {
    pub axis: Axis,
    pub order: usize,
    pub power: usize,
    pub alpha: f64,
    pub epsilon: f64,
    /// Data term variant: 2 for the squared-slope weight, 1 for the geometric-mean weight.
    pub q: usize,
    /// Smoothing of `|K u|` used by the `p = 1` solver.
    pub beta: f64,
    pub cg: CgOptions,
    /// Relative change that ends the `p = 1` inner fixed point.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl EnergyParams {
    pub fn new(axis: Axis, order: usize, power: usize, q: usize, alpha: f64, epsilon: f64) -> Self {
        EnergyParams {
            axis,
            order,
            power,
            alpha,
            epsilon,
            q,
            beta: 1e-6,
            cg: CgOptions::default(),
            inner_tol: 1e-6,
            inner_max_iter: 500,
        }
    }

    /// `1e-3 * range^2`, the default weight floor for data with the given range.
    pub fn default_epsilon(range: f64) -> f64 {
        (1e-3 * range * range).max(f64::MIN_POSITIVE)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        grid::check_order(self.order)?;
        if !matches!(self.power, 1 | 2) {
            return bad(format!("power p must be 1 or 2, got {}", self.power));
        }
        if !matches!(self.q, 1 | 2) {
            return bad(format!("data variant q must be 1 or 2, got {}", self.q));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.power == 1 && !(self.beta > 0.0) {
            return bad(format!(
                "beta must be positive when p = 1, got {}",
                self.beta
            ));
        }
        Ok(())
    }

    fn flow_params(&self) -> FlowParams {
        FlowParams::new(self.axis, self.order, self.power, self.q).with_beta(self.beta)
    }
}

/// Sparse rows of `K` for one line of length `n`: `(column, value)` pairs.
fn stencil_rows(n: usize, k: usize, h: f64) -> Vec<Vec<(usize, f64)>> {
    match k {
        1 => (0..n - 1)
            .map(|f| vec![(f, -1.0 / h), (f + 1, 1.0 / h)])
            .collect(),
        _ => {
            let c = 1.0 / (h * h);
            (0..n)
                .map(|j| {
                    if j == 0 {
                        vec![(0, -c), (1, c)]
                    } else if j == n - 1 {
                        vec![(n - 2, c), (n - 1, -c)]
                    } else {
                        vec![(j - 1, c), (j, -2.0 * c), (j + 1, c)]
                    }
                })
                .collect()
        }
    }
}

/// `K` along one axis of a field, applied line by line.
struct LineOperator {
    axis: Axis,
    n1: usize,
    lines: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl LineOperator {
    fn new(u: &ScalarField, axis: Axis, k: usize) -> Result<Self> {
        u.ensure_stencil(k)?;
        Ok(LineOperator {
            axis,
            n1: u.n1(),
            lines: u.extent(axis.other()),
            rows: stencil_rows(u.extent(axis), k, u.spacing(axis)),
        })
    }

    #[inline]
    fn cell(&self, line: usize, j: usize) -> usize {
        match self.axis {
            Axis::X1 => line * self.n1 + j,
            Axis::X2 => j * self.n1 + line,
        }
    }

    fn out_len(&self) -> usize {
        self.lines * self.rows.len()
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let m = self.rows.len();
        let mut out = vec![0.0; self.out_len()];
        for line in 0..self.lines {
            for (r, row) in self.rows.iter().enumerate() {
                out[line * m + r] = row.iter().map(|&(j, c)| c * u[self.cell(line, j)]).sum();
            }
        }
        out
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let m = self.rows.len();
        for line in 0..self.lines {
            for (r, row) in self.rows.iter().enumerate() {
                let v = y[line * m + r];
                for &(j, c) in row {
                    out[self.cell(line, j)] += c * v;
                }
            }
        }
    }

    /// Diagonal of `K' diag(phi) K`.
    fn weighted_gram_diag(&self, phi: &[f64], cells: usize) -> Vec<f64> {
        let m = self.rows.len();
        let mut d = vec![0.0; cells];
        for line in 0..self.lines {
            for (r, row) in self.rows.iter().enumerate() {
                for &(j, c) in row {
                    d[self.cell(line, j)] += phi[line * m + r] * c * c;
                }
            }
        }
        d
    }
}

/// `1/p sum A |K u|^p`; non-negative for both powers.
pub fn energy_r(u: &ScalarField, axis: Axis, k: usize, p: usize) -> Result<f64> {
    if !matches!(p, 1 | 2) {
        return Err(Error::InvalidParams(format!(
            "power p must be 1 or 2, got {p}"
        )));
    }
    let op = LineOperator::new(u, axis, k)?;
    let s = op.apply(u.values());
    let sum: f64 = if p == 2 {
        s.iter().map(|v| 0.5 * v * v).sum()
    } else {
        s.iter().map(|v| v.abs()).sum()
    };
    Ok(u.cell_area() * sum)
}

/// Regularizer the solver actually minimizes: exact for `p = 2`,
/// `sum A (sqrt(s^2 + beta^2) - beta)` for `p = 1`.
pub fn smoothed_regularizer(u: &ScalarField, params: &EnergyParams) -> Result<f64> {
    if params.power == 2 {
        return energy_r(u, params.axis, params.order, 2);
    }
    let op = LineOperator::new(u, params.axis, params.order)?;
    let b = params.beta;
    let sum: f64 = op
        .apply(u.values())
        .iter()
        .map(|s| (s * s + b * b).sqrt() - b)
        .sum();
    Ok(u.cell_area() * sum)
}

fn weighted_misfit(u: &ScalarField, u_ref: &ScalarField, weight: &ScalarField) -> f64 {
    let sum: f64 = u
        .values()
        .iter()
        .zip(u_ref.values())
        .zip(weight.values())
        .map(|((a, b), w)| (a - b) * (a - b) / w)
        .sum();
    0.5 * u.cell_area() * sum
}

/// Data weight `(d1 u)^2 + eps` (q = 2) or `|d1 u| + eps` (q = 1).
pub fn data_weight(u: &ScalarField, q: usize, epsilon: f64) -> Result<ScalarField> {
    let d1 = grid::diff(u, Axis::X1, 1)?;
    Ok(match q {
        2 => d1.map(|g| g * g + epsilon),
        _ => d1.map(|g| g.abs() + epsilon),
    })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "epsilon must be positive, got {epsilon}"
        )))
    }
}

/// `1/2 sum A (u - u_ref)^2 / ((d1 u)^2 + eps)`.
pub fn energy_d2(u: &ScalarField, u_ref: &ScalarField, epsilon: f64) -> Result<f64> {
    u.ensure_same_shape(u_ref)?;
    check_epsilon(epsilon)?;
    Ok(weighted_misfit(u, u_ref, &data_weight(u, 2, epsilon)?))
}

/// `1/2 sum A (u - u_ref)^2 / (|d1 u| + eps)`.
pub fn energy_d1(u: &ScalarField, u_ref: &ScalarField, epsilon: f64) -> Result<f64> {
    u.ensure_same_shape(u_ref)?;
    check_epsilon(epsilon)?;
    Ok(weighted_misfit(u, u_ref, &data_weight(u, 1, epsilon)?))
}

/// The convex surrogate `Fc(u; u_prev)` with the data weight frozen at `u_prev`.
pub fn convex_energy(u: &ScalarField, u_prev: &ScalarField, params: &EnergyParams) -> Result<f64> {
    params.validate()?;
    u.ensure_same_shape(u_prev)?;
    let w = data_weight(u_prev, params.q, params.epsilon)?;
    Ok(weighted_misfit(u, u_prev, &w) + params.alpha * smoothed_regularizer(u, params)?)
}

/// Exact minimizer of `Fc(.; u_prev)`.
///
/// For `p = 2` this is one CG solve of `(u - u_prev)/w + alpha K'K u = 0`. For
/// `p = 1` the smoothed energy is minimized by damped Newton steps, each a CG
/// solve with the curvature `beta^2 / ((K u)^2 + beta^2)^(3/2)`, until the
/// relative update drops below `inner_tol`. Every iterate starts from `u_prev`
/// and only ever lowers `Fc`.
pub fn convex_step(u_prev: &ScalarField, params: &EnergyParams) -> Result<ScalarField> {
    params.validate()?;
    if !u_prev.is_finite() {
        return Err(Error::InvalidParams("non-finite input".into()));
    }
    let op = LineOperator::new(u_prev, params.axis, params.order)?;
    let w = data_weight(u_prev, params.q, params.epsilon)?;
    let inv_w: Vec<f64> = w.values().iter().map(|w| 1.0 / w).collect();
    let up = u_prev.values();
    let cells = up.len();
    let alpha = params.alpha;

    // (W^-1 + alpha K' diag(phi) K) x = rhs
    let solve = |phi: &[f64], rhs: &[f64], x: &mut [f64]| -> Result<()> {
        let gram = op.weighted_gram_diag(phi, cells);
        let inv_diag: Vec<f64> = inv_w
            .iter()
            .zip(&gram)
            .map(|(iw, g)| 1.0 / (iw + alpha * g))
            .collect();
        let apply = |v: &[f64], out: &mut [f64]| {
            let mut s = op.apply(v);
            s.iter_mut().zip(phi).for_each(|(s, p)| *s *= p);
            op.apply_transpose(&s, out);
            for i in 0..v.len() {
                out[i] = v[i] * inv_w[i] + alpha * out[i];
            }
        };
        conjugate_gradient(apply, &inv_diag, rhs, x, params.cg)?;
        Ok(())
    };

    let mut x = up.to_vec();
    if params.power == 2 {
        let b: Vec<f64> = up.iter().zip(&inv_w).map(|(u, iw)| u * iw).collect();
        solve(&vec![1.0; op.out_len()], &b, &mut x)?;
    } else {
        let b2 = params.beta * params.beta;
        let beta = params.beta;
        // Fc / cell_area
        let energy = |x: &[f64]| -> f64 {
            let misfit: f64 = x
                .iter()
                .zip(up)
                .zip(&inv_w)
                .map(|((a, b), iw)| (a - b) * (a - b) * iw)
                .sum();
            let reg: f64 = op.apply(x).iter().map(|s| (s * s + b2).sqrt() - beta).sum();
            0.5 * misfit + alpha * reg
        };
        let scale = up
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let mut e = energy(&x);
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..params.inner_max_iter {
            let s = op.apply(&x);
            let flux: Vec<f64> = s.iter().map(|s| s / (s * s + b2).sqrt()).collect();
            let curv: Vec<f64> = s.iter().map(|s| b2 / (s * s + b2).powf(1.5)).collect();
            let mut grad = vec![0.0; cells];
            op.apply_transpose(&flux, &mut grad);
            for i in 0..cells {
                grad[i] = (x[i] - up[i]) * inv_w[i] + alpha * grad[i];
            }
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            let mut dir = vec![0.0; cells];
            solve(&curv, &neg, &mut dir)?;
            let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            if !(slope < 0.0) {
                converged = true;
                break;
            }
            let mut t = 1.0;
            let mut trial: Vec<f64>;
            let mut accepted = false;
            loop {
                trial = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                let et = energy(&trial);
                if et <= e + 1e-4 * t * slope {
                    e = et;
                    accepted = true;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    break;
                }
            }
            if !accepted {
                // no further decrease representable in floating point
                converged = true;
                break;
            }
            change = t * dir.iter().map(|d| d * d).sum::<f64>().sqrt() / scale;
            x = trial;
            if change <= params.inner_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NotConverged {
                solver: "smoothed Newton",
                iterations: params.inner_max_iter,
                residual: change,
            });
        }
    }
    let mut out = u_prev.clone();
    out.values_mut().copy_from_slice(&x);
    Ok(out)
}

/// L2 norm of `(u - u_prev)/alpha - w(u_prev) (-1)^(k-1) d^k q(d^k u)`, the
/// semi-implicit step relation with time step `alpha`.
pub fn explicit_flow_residual(
    u: &ScalarField,
    u_prev: &ScalarField,
    params: &EnergyParams,
) -> Result<f64> {
    params.validate()?;
    u.ensure_same_shape(u_prev)?;
    let w = data_weight(u_prev, params.q, params.epsilon)?;
    let term = flows::diffusion_term(u, &params.flow_params())?;
    let mut res = u.sub(u_prev).scale(1.0 / params.alpha);
    res.axpy(-1.0, &w.zip_map(&term, |a, b| a * b));
    Ok(norm_l2(&res))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub m: usize,
    /// `Fc(u_m; u_{m-1})`
    pub fc: f64,
    pub r: f64,
    /// `||u_m - u_{m-1}||_L2`
    pub du_l2: f64,
    /// `||d1 u_m||_inf`
    pub grad_linf: f64,
}

/// A broken monitor. These are diagnostics; iteration continues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Violation {
    SurrogateIncreased {
        m: usize,
        previous: f64,
        current: f64,
    },
    RegularizerIncreased {
        m: usize,
        previous: f64,
        current: f64,
    },
    /// `||u_m - u_{m-1}||^2 / (2 (C^q + eps)) > Fc_m - Fc_{m+1}`
    DecreaseBound { m: usize, lhs: f64, rhs: f64 },
}

#[derive(Clone, Debug, Default)]
pub struct IterTrace {
    pub records: Vec<IterRecord>,
    pub violations: Vec<Violation>,
    /// `||d1 u_0||_inf`
    pub initial_grad_linf: f64,
    pub converged: bool,
}

impl IterTrace {
    pub const CSV_HEADER: &'static str = "m,Fc,R,du_l2,grad_linf";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                r.m, r.fc, r.r, r.du_l2, r.grad_linf
            ));
        }
        s
    }

    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Default stopping tolerance, `1e-6 ||u0||_L2`.
pub fn default_stop_tol(u0: &ScalarField) -> f64 {
    1e-6 * norm_l2(u0)
}

/// Runs the lagged iteration `u_m = argmin Fc(.; u_{m-1})` from `u0`.
pub fn iterate(
    u0: &ScalarField,
    params: &EnergyParams,
    m_max: usize,
    stop_tol: f64,
) -> Result<(ScalarField, IterTrace)> {
    if m_max == 0 {
        return Err(Error::InvalidParams("m_max must be at least 1".into()));
    }
    params.validate()?;
    let q = params.q as i32;
    let grad = |u: &ScalarField| -> Result<f64> { Ok(norm_linf(&grid::diff(u, Axis::X1, 1)?)) };

    let mut trace = IterTrace {
        initial_grad_linf: grad(u0)?,
        ..Default::default()
    };
    // running max of ||d1 u_j||_inf over j <= m - 1, the C of the decrease bound
    let mut c_running = trace.initial_grad_linf;
    let mut c_before_prev = c_running;
    let mut u_prev = u0.clone();
    for m in 1..=m_max {
        let u = convex_step(&u_prev, params)?;
        let rec = IterRecord {
            m,
            fc: convex_energy(&u, &u_prev, params)?,
            r: smoothed_regularizer(&u, params)?,
            du_l2: norm_l2(&u.sub(&u_prev)),
            grad_linf: grad(&u)?,
        };
        if let Some(last) = trace.records.last().copied() {
            let slack = |v: f64| MONOTONE_SLACK * v.abs().max(f64::MIN_POSITIVE);
            if rec.fc > last.fc + slack(last.fc) {
                trace.violations.push(Violation::SurrogateIncreased {
                    m,
                    previous: last.fc,
                    current: rec.fc,
                });
            }
            if rec.r > last.r + slack(last.r) {
                trace.violations.push(Violation::RegularizerIncreased {
                    m,
                    previous: last.r,
                    current: rec.r,
                });
            }
            // bound for step m - 1 uses the weight of u_{m-2}
            let sup_w = c_before_prev.powi(q) + params.epsilon;
            let lhs = last.du_l2 * last.du_l2 / (2.0 * sup_w);
            let rhs = last.fc - rec.fc;
            if lhs > rhs + slack(last.fc) {
                trace
                    .violations
                    .push(Violation::DecreaseBound { m: m - 1, lhs, rhs });
            }
        }
        c_before_prev = c_running;
        c_running = c_running.max(rec.grad_linf);
        trace.records.push(rec);
        u_prev = u;
        if rec.du_l2 <= stop_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((u_prev, trace))
}
