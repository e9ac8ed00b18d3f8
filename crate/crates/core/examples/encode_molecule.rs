//! Parse a molecule, give it coordinates and run the 3D encoder.
//!
//! ```bash
//! cargo run -p molm --example encode_molecule
//! ```

use molm::encoder3d::{Encoder3d, EncoderConfig};
use molm::molrepr::{apply_rigid, parse_smiles, parse_xyz, random_rigid, synthetic_embed};
use molm::params::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let water = parse_xyz("3\nwater\nO 0.000 0.000 0.117\nH 0.000 0.757 -0.469\nH 0.000 -0.757 -0.469\n")?;
    // SMILES carries no geometry; place heavy atoms on a seeded layout.
    let ethanol = synthetic_embed(&parse_smiles("CCO")?, 0)?;

    let mut store = ParamStore::new();
    let encoder = Encoder3d::new(EncoderConfig::default(), &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    for (name, mol) in [("water", &water), ("ethanol", &ethanol)] {
        let x = encoder.encode(&store, mol)?;
        let moved = encoder.encode(&store, &apply_rigid(mol, &random_rigid(7))?)?;
        println!(
            "{name:>8}: {} atoms -> {}x{} features, change under a rigid motion {:.1e}",
            mol.num_atoms(),
            x.num_atoms(),
            x.dim(),
            x.0.max_abs_diff(&moved.0)
        );
    }
    Ok(())
}
