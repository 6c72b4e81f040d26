//! Seeded synthetic feature fixtures: shared clusters, exemplar-only outliers
//! and feature pyramids.
//!
//! All randomness comes from ChaCha8 seeded with the 64-bit spec seed, so
//! outputs are bit-identical across runs and platforms.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::alignment::{FeaturePyramid, GridShape};
use crate::error::{Error, Result};
use crate::measures::FeatureSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Points per side.
    pub n: usize,
    pub d: usize,
    /// Clusters shared by both sides.
    pub k: usize,
    /// Fraction of exemplar points replaced by outliers, in `[0, 1)`.
    pub outlier_frac: f64,
    /// Expected norm of the isotropic within-cluster noise before renormalization.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 60,
            d: 128,
            k: 3,
            outlier_frac: 0.1,
            spread: 0.3,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n < self.k {
            return Err(Error::InvalidSpec(format!("need n >= k >= 1, got n={} k={}", self.n, self.k)));
        }
        if self.d == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_frac) {
            return Err(Error::InvalidSpec(format!(
                "outlier_frac must be in [0, 1), got {}",
                self.outlier_frac
            )));
        }
        if !(self.spread > 0.0) || !self.spread.is_finite() {
            return Err(Error::InvalidSpec(format!("spread must be positive, got {}", self.spread)));
        }
        Ok(())
    }

    pub fn outlier_count(&self) -> usize {
        (self.outlier_frac * self.n as f64).floor() as usize
    }
}

/// Labeled conditional/exemplar pair. Outlier rows of `z` carry label `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredPair {
    pub x: FeatureSet,
    pub z: FeatureSet,
    pub labels_x: Vec<usize>,
    pub labels_z: Vec<usize>,
    pub outlier_mask_z: Vec<bool>,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn unit(mut v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    v
}

fn sample_around(rng: &mut ChaCha8Rng, center: &Array1<f64>, spread: f64) -> Array1<f64> {
    let d = center.len();
    let noise = gaussian(rng, d) * (spread / (d as f64).sqrt());
    unit(center + &noise)
}

/// Draws `k + 1` unit centers; both sides sample `n` points round-robin over
/// the first `k`, then `floor(outlier_frac n)` exemplar rows are replaced by
/// points around the extra center.
pub fn gen_clustered_pair(spec: &SynthSpec) -> Result<ClusteredPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Array1<f64>> = (0..=spec.k).map(|_| unit(gaussian(&mut rng, spec.d))).collect();

    let draw = |rng: &mut ChaCha8Rng| {
        let labels: Vec<usize> = (0..spec.n).map(|i| i % spec.k).collect();
        let mut data = Array2::zeros((spec.n, spec.d));
        for (i, &label) in labels.iter().enumerate() {
            data.row_mut(i).assign(&sample_around(rng, &centers[label], spec.spread));
        }
        (data, labels)
    };
    let (x, labels_x) = draw(&mut rng);
    let (mut z, mut labels_z) = draw(&mut rng);

    let mut outlier_mask_z = vec![false; spec.n];
    let mut outliers = sample(&mut rng, spec.n, spec.outlier_count()).into_vec();
    outliers.sort_unstable();
    for j in outliers {
        z.row_mut(j).assign(&sample_around(&mut rng, &centers[spec.k], spec.spread));
        labels_z[j] = spec.k;
        outlier_mask_z[j] = true;
    }

    Ok(ClusteredPair {
        x: FeatureSet::new(x)?,
        z: FeatureSet::new(z)?,
        labels_x,
        labels_z,
        outlier_mask_z,
    })
}

/// Builds a pyramid on the square grid of `base`: each finer level replicates
/// every cell of the previous one 2x2, then adds iid uniform noise in
/// `[-m, m]` with `m = 0.1 * spread`. `spread = 0` yields block-constant levels.
pub fn gen_pyramid_from_image_grid(base: &FeatureSet, levels: usize, spread: f64, seed: u64) -> Result<FeaturePyramid> {
    if levels == 0 {
        return Err(Error::InvalidSpec("a pyramid needs at least one level".into()));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidSpec(format!("spread must be nonnegative, got {spread}")));
    }
    let grid = GridShape::square(base.n())?;
    let magnitude = 0.1 * spread;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![base.clone()];
    for k in 1..levels {
        let coarse = grid.scaled(1 << (k - 1));
        let fine = grid.scaled(1 << k);
        let prev = out[k - 1].as_array();
        let mut data = Array2::from_shape_fn((fine.cells(), base.dim()), |(a, c)| {
            let (y, x) = (a / fine.w, a % fine.w);
            prev[[(y / 2) * coarse.w + x / 2, c]]
        });
        if magnitude > 0.0 {
            data.mapv_inplace(|v| v + rng.random_range(-magnitude..=magnitude));
        }
        out.push(FeatureSet::new(data)?);
    }
    FeaturePyramid::new(out, grid)
}
