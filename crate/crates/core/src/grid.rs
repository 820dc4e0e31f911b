//! Cell-centred 2D scalar fields, ghost-cell boundary extension and
//! finite-difference derivatives.
//!
//! Samples sit at `x = (j + 1/2) * dx` along each axis. Values are stored row
//! by row: a row is a line of constant `x2` running along `x1`, so
//! `values[j2 * n1 + j1]` is the sample at `(x1_j1, x2_j2)`.

use crate::error::{Error, Result};

/// Coordinate direction of a field.
///
/// `X1` is the first coordinate (the beam angle for sinograms), `X2` the
/// second (the detector offset).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X1,
    X2,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::X1 => Axis::X2,
            Axis::X2 => Axis::X1,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    /// Accepts `x1`, `1`, `x2` or `2`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x1" | "1" => Ok(Axis::X1),
            "x2" | "2" => Ok(Axis::X2),
            other => Err(Error::InvalidParams(format!(
                "unknown axis `{other}` (expected x1 or x2)"
            ))),
        }
    }
}

/// How ghost cells beyond a face normal to the differentiated axis are filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Extension {
    /// Half-sample symmetric reflection: `u[-m] = u[m-1]`. Every odd
    /// derivative of the extended data vanishes on the face.
    #[default]
    Even,
    /// Linear extrapolation from the two samples nearest the face. Affine
    /// data stays affine, which emulates an unbounded domain.
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    n1: usize,
    n2: usize,
    dx1: f64,
    dx2: f64,
    values: Vec<f64>,
}

impl ScalarField {
    /// Zero field on the unit square, `dx = 1/n` per axis.
    pub fn zeros(n1: usize, n2: usize) -> Self {
        assert!(n1 > 0 && n2 > 0, "field dimensions must be positive");
        ScalarField {
            n1,
            n2,
            dx1: 1.0 / n1 as f64,
            dx2: 1.0 / n2 as f64,
            values: vec![0.0; n1 * n2],
        }
    }

    pub fn constant(n1: usize, n2: usize, c: f64) -> Self {
        let mut f = Self::zeros(n1, n2);
        f.values.fill(c);
        f
    }

    /// Wraps row-major values (`values[j2 * n1 + j1]`) with unit-square spacing.
    pub fn from_values(n1: usize, n2: usize, values: Vec<f64>) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidParams(
                "field dimensions must be positive".into(),
            ));
        }
        if values.len() != n1 * n2 {
            return Err(Error::InvalidParams(format!(
                "expected {} values for a {n1}x{n2} field, got {}",
                n1 * n2,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite value at index {pos}"
            )));
        }
        let mut f = Self::zeros(n1, n2);
        f.values = values;
        Ok(f)
    }

    /// Samples `f(x1, x2)` at cell centres of the unit square.
    pub fn from_fn(n1: usize, n2: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::zeros(n1, n2).with_samples(f)
    }

    /// Re-samples `f` at this field's cell centres (respecting its spacing).
    pub fn with_samples(mut self, f: impl Fn(f64, f64) -> f64) -> Self {
        for j2 in 0..self.n2 {
            let x2 = self.coord(Axis::X2, j2);
            for j1 in 0..self.n1 {
                let x1 = self.coord(Axis::X1, j1);
                self.values[j2 * self.n1 + j1] = f(x1, x2);
            }
        }
        self
    }

    pub fn with_spacing(mut self, dx1: f64, dx2: f64) -> Self {
        assert!(dx1 > 0.0 && dx2 > 0.0, "grid spacing must be positive");
        self.dx1 = dx1;
        self.dx2 = dx2;
        self
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn dx1(&self) -> f64 {
        self.dx1
    }

    pub fn dx2(&self) -> f64 {
        self.dx2
    }

    pub fn spacing(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X1 => self.dx1,
            Axis::X2 => self.dx2,
        }
    }

    /// Number of samples along `axis`.
    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::X1 => self.n1,
            Axis::X2 => self.n2,
        }
    }

    pub fn cell_area(&self) -> f64 {
        self.dx1 * self.dx2
    }

    /// Cell-centre coordinate of sample `j` along `axis`.
    pub fn coord(&self, axis: Axis, j: usize) -> f64 {
        (j as f64 + 0.5) * self.spacing(axis)
    }

    #[inline]
    pub fn get(&self, j1: usize, j2: usize) -> f64 {
        self.values[j2 * self.n1 + j1]
    }

    #[inline]
    pub fn set(&mut self, j1: usize, j2: usize, v: f64) {
        self.values[j2 * self.n1 + j1] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, j2: usize) -> &[f64] {
        &self.values[j2 * self.n1..(j2 + 1) * self.n1]
    }

    pub fn row_mut(&mut self, j2: usize) -> &mut [f64] {
        &mut self.values[j2 * self.n1..(j2 + 1) * self.n1]
    }

    /// Copy of line `idx` running along `axis` (a row for `X1`, a column for `X2`).
    pub fn line(&self, axis: Axis, idx: usize) -> Vec<f64> {
        match axis {
            Axis::X1 => self.row(idx).to_vec(),
            Axis::X2 => (0..self.n2).map(|j2| self.get(idx, j2)).collect(),
        }
    }

    pub fn set_line(&mut self, axis: Axis, idx: usize, line: &[f64]) {
        assert_eq!(line.len(), self.extent(axis));
        match axis {
            Axis::X1 => self.row_mut(idx).copy_from_slice(line),
            Axis::X2 => {
                for (j2, &v) in line.iter().enumerate() {
                    self.set(idx, j2, v);
                }
            }
        }
    }

    /// Assembles a field from lines along `axis`, keeping this field's geometry.
    pub fn from_lines_like(template: &ScalarField, axis: Axis, lines: &[Vec<f64>]) -> ScalarField {
        let mut out = template.clone();
        for (idx, line) in lines.iter().enumerate() {
            out.set_line(axis, idx, line);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Element-wise combination; panics on shape mismatch (use `ensure_same_shape` first).
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.dims(), other.dims());
        let mut out = self.clone();
        out.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, &b)| *a = f(*a, b));
        out
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        assert_eq!(self.dims(), other.dims());
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(s, &o)| *s += a * o);
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, a: f64) -> ScalarField {
        self.map(|v| a * v)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Dynamic range `max - min`.
    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn ensure_same_shape(&self, other: &ScalarField) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    /// Checks that an order-`k` stencil fits along both axes (`n >= 2k + 1`).
    pub fn ensure_stencil(&self, k: usize) -> Result<()> {
        check_order(k)?;
        let needed = 2 * k + 1;
        if self.n1 < needed || self.n2 < needed {
            return Err(Error::DimensionTooSmall {
                n1: self.n1,
                n2: self.n2,
                order: k,
                needed,
            });
        }
        Ok(())
    }
}

pub(crate) fn check_order(k: usize) -> Result<()> {
    if k == 1 || k == 2 {
        Ok(())
    } else {
        Err(Error::InvalidOrder(k))
    }
}

/// Pads a line with `ghost` cells on each side. Requires `line.len() >= max(ghost, 2)`.
pub fn extend_line(line: &[f64], ghost: usize, ext: Extension) -> Vec<f64> {
    let n = line.len();
    debug_assert!(n >= ghost.max(2));
    let mut out = Vec::with_capacity(n + 2 * ghost);
    match ext {
        Extension::Even => {
            out.extend((1..=ghost).rev().map(|m| line[m - 1]));
            out.extend_from_slice(line);
            out.extend((1..=ghost).map(|m| line[n - m]));
        }
        Extension::Linear => {
            let (lo, lo_slope) = (line[0], line[1] - line[0]);
            let (hi, hi_slope) = (line[n - 1], line[n - 1] - line[n - 2]);
            out.extend((1..=ghost).rev().map(|m| lo - m as f64 * lo_slope));
            out.extend_from_slice(line);
            out.extend((1..=ghost).map(|m| hi + m as f64 * hi_slope));
        }
    }
    out
}

/// A field padded with ghost cells across the two faces normal to one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GhostField {
    axis: Axis,
    ghost: usize,
    template: ScalarField,
    lines: Vec<Vec<f64>>,
}

impl GhostField {
    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn ghost(&self) -> usize {
        self.ghost
    }

    /// Value at signed position `along` (may index ghost cells, `-ghost..n+ghost`)
    /// on line `across`.
    pub fn get(&self, along: isize, across: usize) -> f64 {
        self.lines[across][(along + self.ghost as isize) as usize]
    }

    /// The padded line `across`, ghost cells included.
    pub fn line(&self, across: usize) -> &[f64] {
        &self.lines[across]
    }

    /// Drops the ghost cells.
    pub fn interior(&self) -> ScalarField {
        let n = self.template.extent(self.axis);
        let lines: Vec<Vec<f64>> = self
            .lines
            .iter()
            .map(|l| l[self.ghost..self.ghost + n].to_vec())
            .collect();
        ScalarField::from_lines_like(&self.template, self.axis, &lines)
    }
}

/// Even (Neumann-type) ghost extension of width `k` across the faces normal to
/// `axis`: odd one-sided differences up to order `2k - 1` vanish on the face.
/// The faces normal to the other axis are left alone.
pub fn apply_bc(f: &ScalarField, axis: Axis, k: usize) -> Result<GhostField> {
    apply_bc_with(f, axis, k, Extension::Even)
}

pub fn apply_bc_with(f: &ScalarField, axis: Axis, k: usize, ext: Extension) -> Result<GhostField> {
    f.ensure_stencil(k)?;
    let lines = (0..f.extent(axis.other()))
        .map(|idx| extend_line(&f.line(axis, idx), k, ext))
        .collect();
    Ok(GhostField {
        axis,
        ghost: k,
        template: f.clone(),
        lines,
    })
}

/// Second-order central difference of order `k` along `axis`, with even ghost
/// cells at the boundary.
pub fn diff(f: &ScalarField, axis: Axis, k: usize) -> Result<ScalarField> {
    diff_with(f, axis, k, Extension::Even)
}

pub fn diff_with(f: &ScalarField, axis: Axis, k: usize, ext: Extension) -> Result<ScalarField> {
    f.ensure_stencil(k)?;
    let h = f.spacing(axis);
    let n = f.extent(axis);
    let mut out = f.clone();
    for idx in 0..f.extent(axis.other()) {
        let e = extend_line(&f.line(axis, idx), 1, ext);
        let d: Vec<f64> = (1..=n)
            .map(|j| match k {
                1 => (e[j + 1] - e[j - 1]) / (2.0 * h),
                _ => (e[j + 1] - 2.0 * e[j] + e[j - 1]) / (h * h),
            })
            .collect();
        out.set_line(axis, idx, &d);
    }
    Ok(out)
}

/// Grid-weighted L2 norm, `sqrt(sum dx1 dx2 f^2)`.
pub fn norm_l2(f: &ScalarField) -> f64 {
    (f.cell_area() * f.values().iter().map(|v| v * v).sum::<f64>()).sqrt()
}

pub fn norm_linf(f: &ScalarField) -> f64 {
    f.values().iter().fold(0.0, |m, v| m.max(v.abs()))
}
