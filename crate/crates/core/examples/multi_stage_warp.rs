//! One base-resolution plan warps every level of an exemplar pyramid.
use uft::alignment::{cycle_loss, multi_stage_transport};
use uft::measures::{compute_masses, cosine_cost_matrix};
use uft::sinkhorn::{solve_unbalanced, SolverOptions};
use uft::synth::{gen_clustered_pair, gen_pyramid_from_image_grid, SynthSpec};

fn main() -> uft::Result<()> {
    let spec = SynthSpec { n: 64, d: 16, k: 4, ..Default::default() };
    let pair = gen_clustered_pair(&spec)?;
    let pyramid = gen_pyramid_from_image_grid(&pair.z, 3, 0.5, spec.seed)?;
    let cost = cosine_cost_matrix(&pair.x, &pair.z)?;
    let (alpha, beta) = compute_masses(&pair.x, &pair.z)?;
    let sol = solve_unbalanced(&cost, &alpha, &beta, &SolverOptions::default().with_eta(1e-3))?;
    let warped = multi_stage_transport(sol.plan.view(), &pyramid)?;
    for (k, level) in warped.levels().iter().enumerate() {
        let grid = warped.level_shape(k);
        println!("level {k}: {}x{} grid, {} features of dim {}", grid.h, grid.w, level.n(), level.dim());
    }
    println!("cycle loss {:.4e}", cycle_loss(sol.plan.view(), &pair.z)?);
    Ok(())
}
