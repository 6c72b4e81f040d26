//! Writing and reading the binary tensor format and pyramid manifests.
use uft::synth::{gen_clustered_pair, gen_pyramid_from_image_grid, SynthSpec};
use uft::tensor_io::{read_pyramid, read_tensor, write_matrix, write_pyramid, MANIFEST};

fn main() -> uft::Result<()> {
    let dir = std::env::temp_dir().join("uft-tensor-files");
    let pair = gen_clustered_pair(&SynthSpec { n: 16, d: 8, ..Default::default() })?;
    let path = dir.join("z.uft");
    std::fs::create_dir_all(&dir).expect("temp dir");
    write_matrix(&path, pair.z.as_array())?;
    let t = read_tensor(&path)?;
    println!("{}: shape {:?}, {} bytes", path.display(), t.shape, std::fs::metadata(&path).map_or(0, |m| m.len()));

    let pyramid = gen_pyramid_from_image_grid(&pair.z, 3, 0.2, 1)?;
    write_pyramid(&dir.join("pyramid"), &pyramid)?;
    print!("{}", std::fs::read_to_string(dir.join("pyramid").join(MANIFEST)).unwrap_or_default());
    let back = read_pyramid(&dir.join("pyramid"))?;
    println!("read back {} levels", back.len());
    Ok(())
}
