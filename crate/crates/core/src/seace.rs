//! Semantic-activation (de)normalization.
//!
//! Modulation parameters are averaged over positions that share semantics,
//! using a self-attention matrix of the conditional features, then used to
//! modulate the conditional activations. Affine projections of the result give
//! the parameters that denormalize a positionally normalized activation.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::measures::FeatureSet;

/// Added to the per-position variance before the square root.
pub const EPS_STD: f64 = 1e-5;

/// How the self-attention logits `x_i . x_j` become aggregation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Attention {
    /// Scale by `1/sqrt(d)` and softmax each row.
    #[default]
    Softmax,
    /// Plain dot products.
    Raw,
}

/// Per-position activations, `n` positions by `c` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    data: Array2<f64>,
}

impl ActivationMap {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("activation map"));
        }
        Ok(Self { data })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }
}

/// Scale and shift maps of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationPair {
    pub gamma: Array2<f64>,
    pub mu: Array2<f64>,
}

impl ModulationPair {
    pub fn new(gamma: Array2<f64>, mu: Array2<f64>) -> Result<Self> {
        if gamma.dim() != mu.dim() {
            return Err(Error::ShapeMismatch {
                context: "gamma vs mu",
                expected: gamma.dim(),
                found: mu.dim(),
            });
        }
        if !gamma.iter().chain(mu.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("modulation parameters"));
        }
        Ok(Self { gamma, mu })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.gamma.dim()
    }
}

/// `y = W x + b` applied to each position; `W` is `c_out x c_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl AffineMap {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::LengthMismatch {
                context: "affine bias vs output channels",
                expected: weight.nrows(),
                found: bias.len(),
            });
        }
        if !weight.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("affine map"));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(c: usize) -> Self {
        Self {
            weight: Array2::eye(c),
            bias: Array1::zeros(c),
        }
    }

    /// Zero weights; the output is the bias at every position.
    pub fn constant(bias: Array1<f64>) -> Self {
        let c = bias.len();
        Self {
            weight: Array2::zeros((c, c)),
            bias,
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weight.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.weight.ncols(),
                found: x.ncols(),
            });
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }
}

fn same_shape(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context,
            expected,
            found,
        })
    }
}

/// Self-attention of the conditional features, `n x n`. In softmax mode every
/// row is a probability vector.
pub fn semantic_activation_matrix(x: &FeatureSet, mode: Attention) -> Array2<f64> {
    let v = x.view();
    let mut m = v.dot(&v.t());
    if mode == Attention::Softmax {
        let scale = 1.0 / (x.dim() as f64).sqrt();
        for mut row in m.rows_mut() {
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|l| ((l - max) * scale).exp());
            let sum = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
    }
    m
}

/// `(M gamma, M mu)`.
pub fn aggregate_modulation(m: ArrayView2<'_, f64>, mods: &ModulationPair) -> Result<ModulationPair> {
    let (n, k) = m.dim();
    same_shape("attention matrix", (n, n), (n, k))?;
    if mods.gamma.nrows() != n {
        return Err(Error::LengthMismatch {
            context: "modulation rows vs attention size",
            expected: n,
            found: mods.gamma.nrows(),
        });
    }
    ModulationPair::new(m.dot(&mods.gamma), m.dot(&mods.mu))
}

/// `gamma * X_act + mu`, entrywise.
pub fn modulate_conditional(x_act: &ActivationMap, mods: &ModulationPair) -> Result<ActivationMap> {
    same_shape("modulation vs activation", x_act.shape(), mods.shape())?;
    ActivationMap::new(&mods.gamma * x_act.as_array() + &mods.mu)
}

/// `(gamma, mu) = (affine_gamma(X'), affine_mu(X'))` per position.
pub fn project_modulation(x_mod: &ActivationMap, gamma_map: &AffineMap, mu_map: &AffineMap) -> Result<ModulationPair> {
    ModulationPair::new(gamma_map.apply(x_mod.view())?, mu_map.apply(x_mod.view())?)
}

/// Channel mean and standard deviation `sqrt(var + EPS_STD)` at every position.
pub fn positional_norm_stats(l_act: &ActivationMap) -> Result<(Array1<f64>, Array1<f64>)> {
    let c = l_act.shape().1;
    if c < 2 {
        return Err(Error::TooFewChannels(c));
    }
    let data = l_act.as_array();
    let mean = data.mean_axis(Axis(1)).expect("at least two channels");
    let var = data.var_axis(Axis(1), 0.0);
    let std = var.mapv(|v| (v + EPS_STD).sqrt());
    Ok((mean, std))
}

/// `gamma * (L - mu_p) / gamma_p + mu`.
pub fn seace_denormalize(l_act: &ActivationMap, mods: &ModulationPair) -> Result<ActivationMap> {
    same_shape("modulation vs activation", l_act.shape(), mods.shape())?;
    let (mean, std) = positional_norm_stats(l_act)?;
    let mut out = l_act.as_array().clone();
    for (((mut row, m), s), (g, b)) in out
        .rows_mut()
        .into_iter()
        .zip(&mean)
        .zip(&std)
        .zip(mods.gamma.rows().into_iter().zip(mods.mu.rows()))
    {
        for ((x, &gi), &bi) in row.iter_mut().zip(&g).zip(&b) {
            *x = gi * (*x - m) / s + bi;
        }
    }
    ActivationMap::new(out)
}

/// Inputs of one SEACE block besides the activation being denormalized.
#[derive(Debug, Clone)]
pub struct SeaceBlock {
    pub attention: Attention,
    pub gamma_map: AffineMap,
    pub mu_map: AffineMap,
}

impl SeaceBlock {
    pub fn identity(c: usize) -> Self {
        Self {
            attention: Attention::Softmax,
            gamma_map: AffineMap::identity(c),
            mu_map: AffineMap::identity(c),
        }
    }

    /// Full block: attention over `x`, aggregation of the exemplar modulation,
    /// modulation of `x_act`, projection, and denormalization of `l_act`.
    pub fn apply(
        &self,
        x: &FeatureSet,
        exemplar: &ModulationPair,
        x_act: &ActivationMap,
        l_act: &ActivationMap,
    ) -> Result<ActivationMap> {
        let m = semantic_activation_matrix(x, self.attention);
        let aggregated = aggregate_modulation(m.view(), exemplar)?;
        let modulated = modulate_conditional(x_act, &aggregated)?;
        let mods = project_modulation(&modulated, &self.gamma_map, &self.mu_map)?;
        seace_denormalize(l_act, &mods)
    }
}
