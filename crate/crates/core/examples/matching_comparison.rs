//! Cosine nearest neighbours, balanced OT and unbalanced OT on a fixture
//! with outliers in the exemplar.
use uft::cli::{compare_pair, RunConfig};
use uft::synth::{gen_clustered_pair, SynthSpec};

fn main() {
    let cfg = RunConfig::default();
    for seed in 0..5 {
        let pair = gen_clustered_pair(&SynthSpec { n: 60, k: 3, outlier_frac: 0.1, seed, ..cfg.fixture.clone() }).unwrap();
        let cmp = compare_pair(&cfg, &pair).unwrap();
        println!(
            "seed {seed}: many-to-one cosine {:.3} balanced {:.3} unbalanced {:.3} | leakage balanced {:.3e} unbalanced {:.3e}",
            cmp.cosine.many_to_one_rate,
            cmp.balanced.many_to_one_rate,
            cmp.unbalanced.many_to_one_rate,
            cmp.balanced.outlier_leakage,
            cmp.unbalanced.outlier_leakage,
        );
    }
}
