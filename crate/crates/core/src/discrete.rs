//! Discrete line-displacement correction: exhaustive per-row search for row
//! jitter and a block-wise swap heuristic for column displacements.
//!
//! Costs are sums of absolute undivided `k`-th differences, so they are
//! independent of the grid spacing. A displacement `d_j` of line `j` means the
//! observed line reads the true one at index `i + d_j`; indices that fall off
//! the domain are clamped (edge replication).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{check_order, Axis, ScalarField};

/// Integer displacement of every row or column, each within `[-bound, bound]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntShiftField {
    shifts: Vec<i64>,
    bound: usize,
}

impl IntShiftField {
    pub fn new(shifts: Vec<i64>, bound: usize) -> Result<Self> {
        if let Some((j, d)) = shifts
            .iter()
            .enumerate()
            .find(|(_, d)| d.unsigned_abs() as usize > bound)
        {
            return Err(Error::InvalidParams(format!(
                "shift {d} of line {j} exceeds bound {bound}"
            )));
        }
        Ok(IntShiftField { shifts, bound })
    }

    pub fn zeros(len: usize, bound: usize) -> Self {
        IntShiftField {
            shifts: vec![0; len],
            bound,
        }
    }

    pub fn shifts(&self) -> &[i64] {
        &self.shifts
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// `index,shift` lines under a header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# bound={}\nindex,shift\n", self.bound);
        for (j, d) in self.shifts.iter().enumerate() {
            let _ = writeln!(out, "{j},{d}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut bound = None;
        let mut shifts = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            let bad = |reason: String| Error::Config {
                line: no + 1,
                reason,
            };
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("bound=") {
                    bound = Some(v.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?);
                }
                continue;
            }
            if line.is_empty() || line == "index,shift" {
                continue;
            }
            let (idx, d) = line
                .split_once(',')
                .ok_or_else(|| bad("expected `index,shift`".into()))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            if idx != shifts.len() {
                return Err(bad(format!("index {idx} out of sequence")));
            }
            shifts.push(
                d.trim()
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            );
        }
        let bound = bound.unwrap_or_else(|| {
            shifts
                .iter()
                .map(|d: &i64| d.unsigned_abs() as usize)
                .max()
                .unwrap_or(0)
        });
        IntShiftField::new(shifts, bound)
    }
}

#[inline]
fn clamped(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// `out(j1, j2) = img(j1 + shifts[j2], j2)`, edge-replicated.
pub fn shift_rows(img: &ScalarField, shifts: &[i64]) -> Result<ScalarField> {
    if shifts.len() != img.n2() {
        return Err(Error::InvalidParams(format!(
            "{} shifts for {} rows",
            shifts.len(),
            img.n2()
        )));
    }
    let n1 = img.n1();
    let mut out = img.clone();
    for (j2, &d) in shifts.iter().enumerate() {
        let src = img.row(j2);
        for (j1, v) in out.row_mut(j2).iter_mut().enumerate() {
            *v = src[clamped(j1 as i64 + d, n1)];
        }
    }
    Ok(out)
}

/// `out(j1, j2) = img(j1, j2 + shifts[j1])`, edge-replicated.
pub fn shift_columns(img: &ScalarField, shifts: &[i64]) -> Result<ScalarField> {
    if shifts.len() != img.n1() {
        return Err(Error::InvalidParams(format!(
            "{} shifts for {} columns",
            shifts.len(),
            img.n1()
        )));
    }
    let n2 = img.n2();
    let mut out = img.clone();
    for (j1, &d) in shifts.iter().enumerate() {
        for j2 in 0..n2 {
            out.set(j1, j2, img.get(j1, clamped(j2 as i64 + d, n2)));
        }
    }
    Ok(out)
}

/// Output column `j` is input column `j + shifts[j]`.
pub fn permute_columns(img: &ScalarField, shifts: &[i64]) -> Result<ScalarField> {
    let n1 = img.n1();
    if shifts.len() != n1 {
        return Err(Error::InvalidParams(format!(
            "{} shifts for {} columns",
            shifts.len(),
            n1
        )));
    }
    let mut seen = vec![false; n1];
    for (j, &d) in shifts.iter().enumerate() {
        let src = j as i64 + d;
        if src < 0 || src >= n1 as i64 || std::mem::replace(&mut seen[src as usize], true) {
            return Err(Error::InvalidParams(
                "shifts do not describe a column permutation".into(),
            ));
        }
    }
    let mut out = img.clone();
    for j2 in 0..img.n2() {
        let src = img.row(j2);
        for (j1, v) in out.row_mut(j2).iter_mut().enumerate() {
            *v = src[(j1 as i64 + shifts[j1]) as usize];
        }
    }
    Ok(out)
}

#[inline]
fn kth_difference(k: usize, w: &[f64]) -> f64 {
    if k == 1 {
        w[1] - w[0]
    } else {
        w[2] - 2.0 * w[1] + w[0]
    }
}

/// `sum |D^k u|` over all undivided `k`-th differences along `axis`.
pub fn difference_cost(img: &ScalarField, axis: Axis, k: usize) -> Result<f64> {
    check_order(k)?;
    let n = img.extent(axis);
    if n <= k {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for idx in 0..img.extent(axis.other()) {
        let line = img.line(axis, idx);
        total += line
            .windows(k + 1)
            .map(|w| kth_difference(k, w).abs())
            .sum::<f64>();
    }
    Ok(total)
}

/// Cost of placing `row` (read with relative shift `s`) below its corrected predecessors.
fn row_cost(row: &[f64], s: i64, prev: &[&[f64]], cols: std::ops::Range<usize>) -> f64 {
    let n = row.len();
    cols.map(|c| {
        let v = row[clamped(c as i64 + s, n)];
        match prev {
            [p1] => (v - p1[c]).abs(),
            [p2, p1] => (v - 2.0 * p1[c] + p2[c]).abs(),
            _ => 0.0,
        }
    })
    .sum()
}

/// Exhaustive-search row-jitter correction.
///
/// Rows are corrected one after another. Row 0 is the reference; for each
/// later row every shift keeping the recovered displacements within a span
/// of `2M` is tried, and the one minimizing the `k`-th vertical difference
/// against the one (`k = 1`) or two (`k = 2`) previously corrected rows wins.
/// Ties prefer the smaller `|s|`, then the negative `s`. The comparison uses
/// the columns at least `2M` away from the edges, where no candidate reads
/// replicated samples. The displacements are finally re-centred into
/// `[-M, M]`. Should the corrected image score worse on the full
/// [`difference_cost`] than the input, the input is returned with zero
/// shifts, so the objective never increases. Work is `O(M n1 n2)`.
pub fn jitter_correct_rows(
    img: &ScalarField,
    m: usize,
    k: usize,
) -> Result<(ScalarField, IntShiftField)> {
    check_order(k)?;
    let (n1, n2) = img.dims();
    if m >= n1 {
        return Err(Error::InvalidParams(format!(
            "shift bound {m} must be below the row width {n1}"
        )));
    }
    if m == 0 || n2 < 2 {
        return Ok((img.clone(), IntShiftField::zeros(n2, m)));
    }
    let span = 2 * m as i64;
    let margin = (2 * m).min((n1 - 1) / 2);
    let cols = margin..n1 - margin;

    let mut corrected: Vec<Vec<f64>> = vec![img.row(0).to_vec()];
    let mut rel = vec![0i64; n2];
    let (mut lo, mut hi) = (0i64, 0i64);
    for j in 1..n2 {
        let row = img.row(j);
        let prev: Vec<&[f64]> = if k == 2 && j >= 2 {
            vec![&corrected[j - 2], &corrected[j - 1]]
        } else {
            vec![&corrected[j - 1]]
        };
        let mut candidates: Vec<i64> = (hi - span..=lo + span).collect();
        candidates.sort_by_key(|&s| (s.abs(), s));
        let mut best = (f64::INFINITY, 0i64);
        for s in candidates {
            let c = row_cost(row, s, &prev, cols.clone());
            if c < best.0 {
                best = (c, s);
            }
        }
        let s = best.1;
        rel[j] = s;
        lo = lo.min(s);
        hi = hi.max(s);
        corrected.push((0..n1).map(|c| row[clamped(c as i64 + s, n1)]).collect());
    }

    // the recovered jitter is offset - rel; any offset in [hi - M, lo + M]
    // keeps it within [-M, M]
    let offset = 0i64.clamp(hi - m as i64, lo + m as i64);
    let undo: Vec<i64> = rel.iter().map(|s| s - offset).collect();
    let out = shift_rows(img, &undo)?;
    let jitter: Vec<i64> = undo.iter().map(|s| -s).collect();
    if difference_cost(&out, Axis::X2, k)? > difference_cost(img, Axis::X2, k)? {
        return Ok((img.clone(), IntShiftField::zeros(n2, m)));
    }
    Ok((out, IntShiftField::new(jitter, m)?))
}

/// Cost change of swapping columns `a < b`, from the differences that touch them.
fn swap_delta(cols: &[Vec<f64>], k: usize, a: usize, b: usize) -> f64 {
    let n = cols.len();
    let mut starts: Vec<usize> = (a.saturating_sub(k)..=a)
        .chain(b.saturating_sub(k)..=b)
        .filter(|&d| d + k < n)
        .collect();
    starts.sort_unstable();
    starts.dedup();
    let pick = |c: usize| {
        if c == a {
            b
        } else if c == b {
            a
        } else {
            c
        }
    };
    let rows = cols[0].len();
    let mut delta = 0.0;
    for &d in &starts {
        for r in 0..rows {
            let before = if k == 1 {
                cols[d + 1][r] - cols[d][r]
            } else {
                cols[d + 2][r] - 2.0 * cols[d + 1][r] + cols[d][r]
            };
            let after = if k == 1 {
                cols[pick(d + 1)][r] - cols[pick(d)][r]
            } else {
                cols[pick(d + 2)][r] - 2.0 * cols[pick(d + 1)][r] + cols[pick(d)][r]
            };
            delta += after.abs() - before.abs();
        }
    }
    delta
}

/// Heuristic column re-ordering within blocks of width `M`.
///
/// The columns are cut into consecutive blocks of `M` (the last one may be
/// shorter). Each block in turn is improved by best-swap passes: of all swaps
/// of two columns inside the block, the one lowering
/// [`difference_cost`] along `X1` the most is applied, until no swap lowers it.
/// The cost therefore never increases. Returned shifts say which input column
/// each output column came from (output `j` = input `j + d_j`).
///
/// The exact problem is a combinatorial assignment; this local search is only
/// a stand-in for it.
pub fn block_assign_columns(
    img: &ScalarField,
    m: usize,
    k: usize,
) -> Result<(ScalarField, IntShiftField)> {
    check_order(k)?;
    let n1 = img.n1();
    if m == 0 {
        return Err(Error::InvalidParams(
            "block width must be at least 1".into(),
        ));
    }
    if m > n1 {
        return Err(Error::InvalidParams(format!(
            "block width {m} exceeds the image width {n1}"
        )));
    }
    let mut cols: Vec<Vec<f64>> = (0..n1).map(|j| img.line(Axis::X2, j)).collect();
    let mut perm: Vec<usize> = (0..n1).collect();
    // ignore changes at rounding level relative to the local cost
    let scale = difference_cost(img, Axis::X1, k)? / n1 as f64;
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    for start in (0..n1).step_by(m) {
        let end = (start + m).min(n1);
        loop {
            let mut best = (-tol, None);
            for a in start..end {
                for b in a + 1..end {
                    let d = swap_delta(&cols, k, a, b);
                    if d < best.0 {
                        best = (d, Some((a, b)));
                    }
                }
            }
            match best.1 {
                Some((a, b)) => {
                    cols.swap(a, b);
                    perm.swap(a, b);
                }
                None => break,
            }
        }
    }
    let shifts: Vec<i64> = perm
        .iter()
        .enumerate()
        .map(|(j, &p)| p as i64 - j as i64)
        .collect();
    let out = permute_columns(img, &shifts)?;
    Ok((out, IntShiftField::new(shifts, m)?))
}
