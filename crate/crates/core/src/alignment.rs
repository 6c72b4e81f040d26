//! Warping exemplar features through a transport plan.
//!
//! Warping is barycentric projection: each conditional position receives the
//! plan-weighted average of exemplar features. Finer pyramid levels reuse the
//! base-resolution plan, expanded uniformly over the `s x s` sub-cells of every
//! base cell.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::measures::FeatureSet;
use crate::sinkhorn::Plan;

/// Regularizer added to row sums in barycentric projection.
pub const ROW_EPSILON: f64 = 1e-12;

/// Height and width of a feature grid; features are stored row-major, `n = h * w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub h: usize,
    pub w: usize,
}

impl GridShape {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    /// Square grid holding exactly `n` cells.
    pub fn square(n: usize) -> Result<Self> {
        let side = (n as f64).sqrt().round() as usize;
        if side == 0 || side * side != n {
            return Err(Error::NotSquare { n });
        }
        Ok(Self { h: side, w: side })
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn scaled(&self, s: usize) -> Self {
        Self {
            h: self.h * s,
            w: self.w * s,
        }
    }
}

/// Feature maps at doubling resolutions. Level `k` is `(h 2^k) x (w 2^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureSet>,
    base: GridShape,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureSet>, base: GridShape) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Empty("feature pyramid has no levels"));
        }
        for (k, level) in levels.iter().enumerate() {
            let expected = base.scaled(1 << k).cells();
            if level.n() != expected {
                return Err(Error::ResolutionMismatch(format!(
                    "level {k} has {} features, expected {expected} for a {}x{} base",
                    level.n(),
                    base.h,
                    base.w
                )));
            }
        }
        Ok(Self { levels, base })
    }

    pub fn base(&self) -> GridShape {
        self.base
    }

    pub fn levels(&self) -> &[FeatureSet] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level_shape(&self, k: usize) -> GridShape {
        self.base.scaled(1 << k)
    }

    pub fn into_levels(self) -> Vec<FeatureSet> {
        self.levels
    }
}

fn warp_rows(plan: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, eps: f64) -> Array2<f64> {
    let mut out = plan.dot(&targets);
    for (mut row, mass) in out.rows_mut().into_iter().zip(plan.sum_axis(Axis(1))) {
        let denom = mass + eps;
        row.mapv_inplace(|x| x / denom);
    }
    out
}

/// Row `i` of the result is `sum_j T_ij z_j / (sum_j T_ij + ROW_EPSILON)`.
pub fn barycentric_warp(plan: ArrayView2<'_, f64>, z: &FeatureSet) -> Result<FeatureSet> {
    if plan.ncols() != z.n() {
        return Err(Error::ShapeMismatch {
            context: "plan columns vs exemplar rows",
            expected: (plan.nrows(), z.n()),
            found: plan.dim(),
        });
    }
    FeatureSet::new(warp_rows(plan, z.view(), ROW_EPSILON))
}

fn check_scale(scale: usize) -> Result<()> {
    if scale == 2 || scale == 4 {
        Ok(())
    } else {
        Err(Error::UnsupportedScale(scale))
    }
}

fn fine_to_base(grid: GridShape, scale: usize) -> Vec<usize> {
    let fine = grid.scaled(scale);
    (0..fine.cells())
        .map(|a| {
            let (y, x) = (a / fine.w, a % fine.w);
            (y / scale) * grid.w + x / scale
        })
        .collect()
}

/// Splits every base entry `T_ij` evenly over the `s^2 x s^2` fine pairs of cells,
/// giving each fine entry `T_ij / s^4`. Total mass is preserved.
pub fn expand_plan(plan: ArrayView2<'_, f64>, x_grid: GridShape, z_grid: GridShape, scale: usize) -> Result<Plan> {
    check_scale(scale)?;
    if plan.dim() != (x_grid.cells(), z_grid.cells()) {
        return Err(Error::ShapeMismatch {
            context: "plan vs grids",
            expected: (x_grid.cells(), z_grid.cells()),
            found: plan.dim(),
        });
    }
    let rows = fine_to_base(x_grid, scale);
    let cols = fine_to_base(z_grid, scale);
    let share = 1.0 / (scale * scale * scale * scale) as f64;
    Ok(Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| {
        plan[[rows[a], cols[b]]] * share
    }))
}

/// Mean of each `s x s` block of a fine feature map laid out on `grid.scaled(s)`.
fn block_pool(fine: &FeatureSet, grid: GridShape, scale: usize) -> Array2<f64> {
    let mut pooled = Array2::<f64>::zeros((grid.cells(), fine.dim()));
    for (a, &base) in fine_to_base(grid, scale).iter().enumerate() {
        let mut row = pooled.row_mut(base);
        row += &fine.row(a);
    }
    pooled.mapv_inplace(|x| x / (scale * scale) as f64);
    pooled
}

/// Warps every pyramid level with the base plan.
///
/// Level `k` is equivalent to `barycentric_warp(expand_plan(T, 2^k), level_k)`
/// but is evaluated without materializing the expanded plan: block-pooled
/// exemplar features are warped at base resolution and broadcast back over
/// each block. Supports up to three levels (scales 1, 2 and 4).
pub fn multi_stage_transport(plan: ArrayView2<'_, f64>, pyramid: &FeaturePyramid) -> Result<FeaturePyramid> {
    let base = pyramid.base();
    if plan.dim() != (base.cells(), base.cells()) {
        return Err(Error::ResolutionMismatch(format!(
            "plan is {}x{} but the pyramid base has {} cells",
            plan.nrows(),
            plan.ncols(),
            base.cells()
        )));
    }
    let mut levels = Vec::with_capacity(pyramid.len());
    for (k, level) in pyramid.levels().iter().enumerate() {
        if k == 0 {
            levels.push(barycentric_warp(plan, level)?);
            continue;
        }
        let scale = 1usize << k;
        check_scale(scale)?;
        let pooled = block_pool(level, base, scale);
        // Expanded rows carry 1/s^2 of the base row mass; scaling the
        // regularizer by s^2 keeps the same projection.
        let warped = warp_rows(plan, pooled.view(), ROW_EPSILON * (scale * scale) as f64);
        let rows = fine_to_base(base, scale);
        let out = Array2::from_shape_fn((rows.len(), level.dim()), |(a, c)| warped[[rows[a], c]]);
        levels.push(FeatureSet::new(out)?);
    }
    FeaturePyramid::new(levels, base)
}

fn row_normalized(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let total = row.sum();
        if total > 0.0 {
            row.mapv_inplace(|x| x / total);
        }
    }
    out
}

/// Mean absolute error of the round trip `Z -> X -> Z` through the plan,
/// `mean |Q (P Z) - Z|`, where `P` and `Q` are the row-normalized `T` and `T^T`.
pub fn cycle_loss(plan: ArrayView2<'_, f64>, z: &FeatureSet) -> Result<f64> {
    if plan.ncols() != z.n() {
        return Err(Error::ShapeMismatch {
            context: "plan columns vs exemplar rows",
            expected: (plan.nrows(), z.n()),
            found: plan.dim(),
        });
    }
    let forward = row_normalized(plan);
    let backward = row_normalized(plan.t());
    let round_trip = backward.dot(&forward.dot(z.as_array()));
    let n = round_trip.len() as f64;
    Ok((&round_trip - z.as_array()).mapv(f64::abs).sum() / n)
}
