//! Log-domain reductions behind the Sinkhorn sweeps.

use ndarray::ArrayView2;
use rayon::prelude::*;

/// Terms more than this many nats below the running maximum are dropped;
/// `exp(-60)` is far below double precision relative to the leading term.
const NEGLIGIBLE_NATS: f64 = -60.0;

/// Stabilized `ln sum exp(x)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Entries whose exponent sits this many multiples of `eta` below the row
/// maximum are kept in the active set. The slack above [`NEGLIGIBLE_NATS`]
/// is what offsets may drift before the set has to be rebuilt.
pub(crate) const SCREEN_NATS: f64 = 160.0;
const DRIFT_NATS: f64 = (SCREEN_NATS + NEGLIGIBLE_NATS) / 2.0 - 2.0;

/// A row keeps its active set only while it holds fewer entries than this
/// fraction of the columns.
const SPARSE_FRACTION: usize = 8;

#[derive(Debug, Default, Clone)]
struct ActiveRow {
    cols: Vec<u32>,
    cost: Vec<f64>,
}

const LANES: usize = 8;

#[inline]
pub(crate) fn row_max(cost: &[f64], offset: &[f64]) -> f64 {
    let mut lanes = [f64::NEG_INFINITY; LANES];
    let (cc, oc) = (cost.chunks_exact(LANES), offset.chunks_exact(LANES));
    let (cr, or) = (cc.remainder(), oc.remainder());
    for (c, w) in cc.zip(oc) {
        for k in 0..LANES {
            let a = w[k] - c[k];
            lanes[k] = if a > lanes[k] { a } else { lanes[k] };
        }
    }
    let mut max = f64::NEG_INFINITY;
    for a in lanes.into_iter().chain(cr.iter().zip(or).map(|(&c, &w)| w - c)) {
        if a > max {
            max = a;
        }
    }
    max
}

/// `eta * ln sum_j exp((offset_j - cost_j) / eta)` over the whole row, summing
/// in column order and skipping terms below the cutoff. Also counts the
/// entries within `SCREEN_NATS * eta` of the maximum.
#[inline]
fn dense_row(cost: &[f64], offset: &[f64], eta: f64, inv_eta: f64) -> (f64, f64, usize) {
    let max = row_max(cost, offset);
    let keep = max + NEGLIGIBLE_NATS * eta;
    let screen = max - SCREEN_NATS * eta;
    let mut sum = 0.0f64;
    let mut active = 0;
    let (cc, oc) = (cost.chunks_exact(LANES), offset.chunks_exact(LANES));
    let (cr, or) = (cc.remainder(), oc.remainder());
    for (c, w) in cc.zip(oc) {
        let mut hit = false;
        for k in 0..LANES {
            let a = w[k] - c[k];
            hit |= a > keep;
            active += usize::from(a >= screen);
        }
        if hit {
            for k in 0..LANES {
                let a = w[k] - c[k];
                if a > keep {
                    sum += ((a - max) * inv_eta).exp();
                }
            }
        }
    }
    for (&c, &w) in cr.iter().zip(or) {
        let a = w - c;
        active += usize::from(a >= screen);
        if a > keep {
            sum += ((a - max) * inv_eta).exp();
        }
    }
    (max + eta * sum.ln(), max, active)
}

#[inline]
fn sparse_row(row: &ActiveRow, offset: &[f64], eta: f64, inv_eta: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (&j, &c) in row.cols.iter().zip(&row.cost) {
        let a = offset[j as usize] - c;
        if a > max {
            max = a;
        }
    }
    let keep = max + NEGLIGIBLE_NATS * eta;
    let mut sum = 0.0f64;
    for (&j, &c) in row.cols.iter().zip(&row.cost) {
        let a = offset[j as usize] - c;
        if a > keep {
            sum += ((a - max) * inv_eta).exp();
        }
    }
    max + eta * sum.ln()
}

fn collect_active(row: &mut ActiveRow, cost: &[f64], offset: &[f64], floor: f64) {
    row.cols.clear();
    row.cost.clear();
    for (j, (&c, &w)) in cost.iter().zip(offset).enumerate() {
        if w - c >= floor {
            row.cols.push(j as u32);
            row.cost.push(c);
        }
    }
}

/// Row-wise soft maxima `eta * ln sum_j exp((offset_j - cost_ij) / eta)` with
/// screening of negligible entries.
///
/// A full pass records, per row, the columns within `SCREEN_NATS * eta` of
/// the row maximum. Later calls only visit those columns as long as no offset
/// has moved by more than `DRIFT_NATS * eta` since that pass; every skipped
/// term is then provably below the cutoff, so the result is bit-identical to
/// the full computation. Each row is reduced in a fixed order regardless of
/// threading.
#[derive(Debug, Default)]
pub(crate) struct ScreenedRows {
    eta: f64,
    reference: Vec<f64>,
    rows: Vec<ActiveRow>,
    sparse: bool,
    widest: usize,
}

impl ScreenedRows {
    pub(crate) fn new(nrows: usize) -> Self {
        Self {
            eta: f64::NAN,
            reference: Vec::new(),
            rows: vec![ActiveRow::default(); nrows],
            sparse: false,
            widest: 0,
        }
    }

    fn drift_ok(&self, offset: &[f64], eta: f64) -> bool {
        if !self.sparse || self.eta != eta {
            return false;
        }
        let budget = DRIFT_NATS * eta;
        self.reference
            .iter()
            .zip(offset)
            .all(|(&r, &w)| (w - r).abs() <= budget)
    }

    /// Per-row active columns, if they are still valid for `offset`. They
    /// then include every entry within `SCREEN_NATS - 2 * DRIFT_NATS` multiples
    /// of `eta` of the row maximum.
    pub(crate) fn active(&self, offset: &[f64], eta: f64) -> Option<impl Iterator<Item = &[u32]>> {
        self.drift_ok(offset, eta)
            .then(|| self.rows.iter().map(|row| row.cols.as_slice()))
    }

    pub(crate) fn reduce(&mut self, cost: ArrayView2<'_, f64>, offset: &[f64], eta: f64, out: &mut [f64], parallel: bool) {
        let ncols = cost.ncols();
        debug_assert_eq!(offset.len(), ncols);
        debug_assert_eq!(out.len(), cost.nrows());
        debug_assert_eq!(self.rows.len(), cost.nrows());
        let inv_eta = 1.0 / eta;

        if self.drift_ok(offset, eta) {
            let work = |(o, row): (&mut f64, &ActiveRow)| *o = sparse_row(row, offset, eta, inv_eta);
            if parallel {
                out.par_iter_mut().zip(self.rows.par_iter()).with_min_len(64).for_each(work);
            } else {
                out.iter_mut().zip(self.rows.iter()).for_each(work);
            }
            return;
        }

        let data = cost
            .to_slice()
            .expect("kernel cost matrices are kept in standard layout");
        let cap = ncols / SPARSE_FRACTION;
        // Active sets are only gathered once the previous full pass found
        // every row sparse enough.
        let collect = self.widest <= cap;
        let work = |(i, (o, row)): (usize, (&mut f64, &mut ActiveRow))| -> usize {
            let cost_row = &data[i * ncols..(i + 1) * ncols];
            let (value, max, active) = dense_row(cost_row, offset, eta, inv_eta);
            *o = value;
            if collect && active <= cap {
                collect_active(row, cost_row, offset, max - SCREEN_NATS * eta);
            }
            active
        };
        let widest = if parallel {
            out.par_iter_mut()
                .zip(self.rows.par_iter_mut())
                .with_min_len(8)
                .enumerate()
                .map(work)
                .reduce(|| 0, usize::max)
        } else {
            out.iter_mut().zip(self.rows.iter_mut()).enumerate().map(work).fold(0, usize::max)
        };
        self.widest = widest;
        self.sparse = collect && widest <= cap;
        self.eta = eta;
        self.reference.clear();
        self.reference.extend_from_slice(offset);
    }
}

/// Columns of each row within `SCREEN_NATS * eta` of the row maximum.
pub(crate) fn screen(cost: ArrayView2<'_, f64>, offset: &[f64], eta: f64, parallel: bool) -> Vec<Vec<u32>> {
    let ncols = cost.ncols();
    let data = cost
        .to_slice()
        .expect("kernel cost matrices are kept in standard layout");
    let work = |i: usize| {
        let row = &data[i * ncols..(i + 1) * ncols];
        let floor = row_max(row, offset) - SCREEN_NATS * eta;
        row.iter()
            .zip(offset)
            .enumerate()
            .filter(|(_, (&c, &w))| w - c >= floor)
            .map(|(j, _)| j as u32)
            .collect()
    };
    if parallel {
        (0..cost.nrows()).into_par_iter().with_min_len(8).map(work).collect()
    } else {
        (0..cost.nrows()).map(work).collect()
    }
}

/// Full-pass version of [`ScreenedRows::reduce`] that keeps no active sets.
#[cfg(test)]
pub(crate) fn soft_max_rows(cost: ArrayView2<'_, f64>, offset: &[f64], eta: f64, out: &mut [f64], parallel: bool) {
    let ncols = cost.ncols();
    let data = cost
        .to_slice()
        .expect("kernel cost matrices are kept in standard layout");
    let inv_eta = 1.0 / eta;
    let work = |(i, o): (usize, &mut f64)| *o = dense_row(&data[i * ncols..(i + 1) * ncols], offset, eta, inv_eta).0;
    if parallel {
        out.par_iter_mut().with_min_len(8).enumerate().for_each(work);
    } else {
        out.iter_mut().enumerate().for_each(work);
    }
}
