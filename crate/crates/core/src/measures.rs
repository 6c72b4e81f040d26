//! Feature containers, cosine costs and adaptive mass estimation.
//!
//! Features are stored row-major: one feature vector per row. Masses are
//! estimated from the relevance of each feature to the mean of the opposite
//! set and are deliberately *not* normalized, so the two sides generally
//! carry different totals.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Rows with a Euclidean norm below this are rejected by cosine routines.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Floor applied to raw relevance scores so every mass stays positive.
pub const DEFAULT_MASS_FLOOR: f64 = 1e-6;

/// An `n x d` set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    data: Array2<f64>,
}

impl FeatureSet {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Empty("feature set has no rows"));
        }
        if data.ncols() == 0 {
            return Err(Error::Empty("feature set has zero dimension"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature set"));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("feature set has no rows"));
        }
        let d = rows[0].len();
        let mut flat = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let data = Array2::from_shape_vec((n, d), flat).expect("row lengths checked");
        Self::new(data)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Column-wise mean, i.e. the average feature vector.
    pub fn mean(&self) -> Array1<f64> {
        self.data
            .mean_axis(Axis(0))
            .expect("feature set is never empty")
    }

    /// Row norms, failing on the first row at or below the zero-norm threshold.
    pub fn checked_norms(&self) -> Result<Array1<f64>> {
        let mut norms = Array1::zeros(self.n());
        for (i, row) in self.data.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm < ZERO_NORM_THRESHOLD {
                return Err(Error::ZeroNormFeature { row: i, norm });
            }
            norms[i] = norm;
        }
        Ok(norms)
    }

    /// Copy with every row scaled to unit Euclidean norm.
    pub fn normalized(&self) -> Result<FeatureSet> {
        let norms = self.checked_norms()?;
        let mut data = self.data.clone();
        for (mut row, norm) in data.rows_mut().into_iter().zip(norms.iter()) {
            row.mapv_inplace(|v| v / norm);
        }
        Ok(FeatureSet { data })
    }
}

/// Nonnegative masses attached to the points of a [`FeatureSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct MassVector {
    mass: Array1<f64>,
    total: f64,
}

impl MassVector {
    pub fn new(mass: Array1<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::Empty("mass vector"));
        }
        if let Some((i, v)) = mass
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidMass(format!(
                "entry {i} = {v} is negative or non-finite"
            )));
        }
        let total = mass.sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMass(format!("total mass {total} is not positive")));
        }
        Ok(Self { mass, total })
    }

    pub fn from_vec(mass: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(mass))
    }

    /// `n` equal masses summing to `total`.
    pub fn uniform(n: usize, total: f64) -> Result<Self> {
        Self::new(Array1::from_elem(n, total / n as f64))
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.mass
    }

    pub fn log(&self) -> Array1<f64> {
        self.mass.mapv(f64::ln)
    }

    /// Copy rescaled to the requested total.
    pub fn scaled_to(&self, total: f64) -> Result<MassVector> {
        Self::new(self.mass.mapv(|m| m * total / self.total))
    }
}

/// `n_x x n_z` cosine-distance matrix with entries in `[0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    cost: Array2<f64>,
}

impl CostMatrix {
    pub fn new(cost: Array2<f64>) -> Result<Self> {
        if cost.is_empty() {
            return Err(Error::Empty("cost matrix"));
        }
        for ((row, col), &value) in cost.indexed_iter() {
            if !(0.0..=2.0).contains(&value) {
                return Err(Error::CostOutOfRange { row, col, value });
            }
        }
        // The solvers stream rows as contiguous slices.
        let cost = if cost.is_standard_layout() {
            cost
        } else {
            cost.as_standard_layout().into_owned()
        };
        Ok(Self { cost })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.cost.dim()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.cost
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.cost.view()
    }

    pub fn into_array(self) -> Array2<f64> {
        self.cost
    }
}

/// `C_ij = 1 - <x_i, z_j> / (|x_i| |z_j|)`, clamped to `[0, 2]` against rounding.
pub fn cosine_cost_matrix(x: &FeatureSet, z: &FeatureSet) -> Result<CostMatrix> {
    if x.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: z.dim(),
        });
    }
    let xn = x.normalized()?;
    let zn = z.normalized()?;
    let sim = xn.as_array().dot(&zn.as_array().t());
    let cost = sim.mapv(|s| (1.0 - s).clamp(0.0, 2.0));
    Ok(CostMatrix { cost })
}

/// Relevance masses `alpha_i = x_i . mean(Z)` and `beta_j = z_j . mean(X)`,
/// floored at [`DEFAULT_MASS_FLOOR`].
pub fn compute_masses(x: &FeatureSet, z: &FeatureSet) -> Result<(MassVector, MassVector)> {
    compute_masses_with_floor(x, z, DEFAULT_MASS_FLOOR)
}

pub fn compute_masses_with_floor(
    x: &FeatureSet,
    z: &FeatureSet,
    floor: f64,
) -> Result<(MassVector, MassVector)> {
    if x.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: z.dim(),
        });
    }
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(Error::InvalidMass(format!("mass floor {floor} must be positive")));
    }
    let alpha = x.as_array().dot(&z.mean()).mapv(|m| m.max(floor));
    let beta = z.as_array().dot(&x.mean()).mapv(|m| m.max(floor));
    Ok((MassVector::new(alpha)?, MassVector::new(beta)?))
}
