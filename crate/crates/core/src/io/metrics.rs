//! Quality measures for comparing fields.

use std::fmt;

use crate::error::Result;
use crate::grid::ScalarField;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rmse: f64,
    /// `+inf` when the fields coincide.
    pub psnr: f64,
    /// `None` when the reference has zero norm.
    pub rel_l2: Option<f64>,
    /// Mean strip width over the rows, for strip experiments.
    pub fwhm: Option<f64>,
    /// Spread of the interface position across rows, for interface experiments.
    pub interface_variance: Option<f64>,
}

/// RMSE, PSNR and relative L2 error of `a` against the reference `b`.
///
/// PSNR uses the range of the reference, or the joint range of both fields
/// when the reference is constant.
pub fn metrics(a: &ScalarField, b: &ScalarField) -> Result<MetricReport> {
    a.ensure_same_shape(b)?;
    let sq: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let rmse = (sq / a.values().len() as f64).sqrt();
    let range = if b.range() > 0.0 {
        b.range()
    } else {
        a.max().max(b.max()) - a.min().min(b.min())
    };
    let psnr = if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (range / rmse).log10()
    };
    let norm_b = b.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel_l2 = (norm_b > 0.0).then(|| sq.sqrt() / norm_b);
    Ok(MetricReport {
        rmse,
        psnr,
        rel_l2,
        fwhm: None,
        interface_variance: None,
    })
}

pub fn rmse(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    Ok(metrics(a, b)?.rmse)
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), fmt_num)
}

impl MetricReport {
    /// `key,value` lines.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nrmse,{}\npsnr,{}\nrel_l2,{}\nfwhm,{}\ninterface_variance,{}\n",
            fmt_num(self.rmse),
            fmt_num(self.psnr),
            fmt_opt(self.rel_l2),
            fmt_opt(self.fwhm),
            fmt_opt(self.interface_variance)
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rmse={} psnr={} rel_l2={}",
            fmt_num(self.rmse),
            fmt_num(self.psnr),
            fmt_opt(self.rel_l2)
        )?;
        if let Some(w) = self.fwhm {
            write!(f, " fwhm={}", fmt_num(w))?;
        }
        if let Some(v) = self.interface_variance {
            write!(f, " interface_variance={}", fmt_num(v))?;
        }
        Ok(())
    }
}

/// Full width at half maximum of the peak of `row`, in cells.
///
/// The half level is midway between the row minimum and maximum; the crossings
/// on each side of the maximum are linearly interpolated. `None` for a flat row.
pub fn fwhm(row: &[f64]) -> Option<f64> {
    let (lo, hi) = row
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !(hi > lo) {
        return None;
    }
    let half = 0.5 * (lo + hi);
    let peak = row.iter().position(|&v| v == hi)?;
    let mut l = peak;
    while l > 0 && row[l - 1] >= half {
        l -= 1;
    }
    let mut r = peak;
    while r + 1 < row.len() && row[r + 1] >= half {
        r += 1;
    }
    let left = if l > 0 {
        (l - 1) as f64 + (half - row[l - 1]) / (row[l] - row[l - 1])
    } else {
        0.0
    };
    let right = if r + 1 < row.len() {
        r as f64 + (row[r] - half) / (row[r] - row[r + 1])
    } else {
        (row.len() - 1) as f64
    };
    Some(right - left)
}

/// [`fwhm`] of every row (fixed `x2`), profiles taken along `x1`.
pub fn row_fwhm(f: &ScalarField) -> Vec<Option<f64>> {
    (0..f.n2()).map(|j2| fwhm(f.row(j2))).collect()
}

/// Per row, the `x1` index (fractional) where the profile first crosses the
/// level midway between the field minimum and maximum.
pub fn interface_positions(f: &ScalarField) -> Vec<Option<f64>> {
    let mid = 0.5 * (f.min() + f.max());
    if !(f.max() > f.min()) {
        return vec![None; f.n2()];
    }
    (0..f.n2())
        .map(|j2| {
            let row = f.row(j2);
            row.windows(2).enumerate().find_map(|(j, w)| {
                let (a, b) = (w[0] - mid, w[1] - mid);
                if a == 0.0 {
                    Some(j as f64)
                } else if a * b < 0.0 || b == 0.0 {
                    Some(j as f64 + a / (a - b))
                } else {
                    None
                }
            })
        })
        .collect()
}

/// Population variance of the interface positions; `None` if some row has no crossing.
pub fn interface_variance(f: &ScalarField) -> Option<f64> {
    let pos: Option<Vec<f64>> = interface_positions(f).into_iter().collect();
    let pos = pos?;
    if pos.is_empty() {
        return None;
    }
    let mean = pos.iter().sum::<f64>() / pos.len() as f64;
    Some(pos.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / pos.len() as f64)
}
