//! Cosine costs and relevance masses for a small clustered pair.
use uft::measures::{compute_masses, cosine_cost_matrix};
use uft::synth::{gen_clustered_pair, SynthSpec};

fn main() -> uft::Result<()> {
    let pair = gen_clustered_pair(&SynthSpec { n: 8, d: 4, k: 2, outlier_frac: 0.25, ..Default::default() })?;
    let cost = cosine_cost_matrix(&pair.x, &pair.z)?;
    let (alpha, beta) = compute_masses(&pair.x, &pair.z)?;
    println!("cost\n{:.3}", cost.as_array());
    println!("alpha {:.4}", alpha.as_array());
    println!("beta  {:.4}", beta.as_array());
    println!("outliers in z: {:?}", pair.outlier_mask_z);
    Ok(())
}
