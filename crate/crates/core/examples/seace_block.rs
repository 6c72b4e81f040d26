//! Exemplar modulation aggregated by semantic attention, then used to
//! denormalize an activation.
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uft::measures::FeatureSet;
use uft::seace::{ActivationMap, AffineMap, Attention, ModulationPair, SeaceBlock, positional_norm_stats};

fn main() -> uft::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, c) = (6, 4);
    // Two semantic groups: positions 0..3 and 3..6.
    let x = FeatureSet::new(Array2::from_shape_fn((n, 2), |(i, k)| if (i < 3) == (k == 0) { 4.0 } else { 0.0 }))?;
    let exemplar = ModulationPair::new(
        Array2::from_shape_fn((n, c), |(i, _)| if i < 3 { 2.0 } else { 0.5 }),
        Array2::from_shape_fn((n, c), |(i, _)| if i < 3 { 1.0 } else { -1.0 }),
    )?;
    let x_act = ActivationMap::new(Array2::ones((n, c)))?;
    let l_act = ActivationMap::new(Array2::from_shape_fn((n, c), |_| rng.random_range(-1.0..1.0)))?;
    let block = SeaceBlock {
        attention: Attention::Softmax,
        gamma_map: AffineMap::identity(c),
        mu_map: AffineMap::constant(Array1::zeros(c)),
    };
    let out = block.apply(&x, &exemplar, &x_act, &l_act)?;
    let (mean, std) = positional_norm_stats(&out)?;
    println!("output\n{:.3}", out.as_array());
    println!("per-position mean {mean:.3}");
    println!("per-position std  {std:.3}");
    Ok(())
}
