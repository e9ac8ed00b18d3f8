use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MolError, Molecule};
use crate::tensor::Tensor;

/// Minimum interatomic distance enforced by [`synthetic_embed`], in Å.
pub const MIN_SYNTHETIC_DISTANCE: f64 = 0.5;
const PLACEMENT_ATTEMPTS: usize = 10_000;

/// A proper rigid motion: `x' = R·x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    /// Rejects rotations that are not orthonormal with `det = +1` within 1e-9.
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, MolError> {
        let t = Self { rotation, translation };
        if t.orthonormality_error() > 1e-9 || (t.determinant() - 1.0).abs() > 1e-9 {
            return Err(MolError::NotOrthonormal);
        }
        Ok(t)
    }

    pub fn translation_only(translation: [f64; 3]) -> Self {
        Self { translation, ..Self::identity() }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }

    pub fn with_translation(mut self, translation: [f64; 3]) -> Self {
        self.translation = translation;
        self
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// `max |RᵀR − I|` over entries.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot - target).abs());
            }
        }
        err
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }
}

/// Applies `t` row-wise: `coords · Rᵀ + t`. Atoms and bonds are unchanged.
pub fn apply_rigid(mol: &Molecule, t: &RigidTransform) -> Result<Molecule, MolError> {
    let coords = mol.coords()?.iter().map(|&p| t.apply_point(p)).collect();
    Ok(Molecule { coords: Some(coords), ..mol.clone() })
}

/// Euclidean distance matrix in Å.
pub fn pairwise_distances(mol: &Molecule) -> Result<Tensor, MolError> {
    let c = mol.coords()?;
    let n = c.len();
    let mut d = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let dist = ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2) + (c[i][2] - c[j][2]).powi(2)).sqrt();
            d.set(i, j, dist);
            d.set(j, i, dist);
        }
    }
    Ok(d)
}

/// Uniformly distributed rotation (random unit quaternion), zero translation.
pub fn random_rotation(seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    let rotation = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ];
    RigidTransform { rotation, translation: [0.0; 3] }
}

/// Random rotation plus a translation with components in `[-10, 10]` Å.
pub fn random_rigid(seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let translation = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
    random_rotation(seed).with_translation(translation)
}

/// Deterministic fixture coordinates: atoms placed uniformly in a cube of
/// side `2·n^(1/3)` Å, each resampled until it sits at least
/// [`MIN_SYNTHETIC_DISTANCE`] from every atom already placed.
///
/// The result is not a chemically meaningful conformer.
pub fn synthetic_embed(mol: &Molecule, seed: u64) -> Result<Molecule, MolError> {
    let n = mol.num_atoms();
    if n == 0 {
        return Err(MolError::NoAtoms);
    }
    let side = 2.0 * (n as f64).cbrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<[f64; 3]> = Vec::with_capacity(n);
    for atom in 0..n {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = [rng.gen_range(0.0..side), rng.gen_range(0.0..side), rng.gen_range(0.0..side)];
            let ok = coords.iter().all(|q| {
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                d2 >= MIN_SYNTHETIC_DISTANCE * MIN_SYNTHETIC_DISTANCE
            });
            if ok {
                coords.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(MolError::PlacementFailure { atom, attempts: PLACEMENT_ATTEMPTS });
        }
    }
    Ok(Molecule { coords: Some(coords), ..mol.clone() })
}
