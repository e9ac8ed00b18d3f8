//! Molecular data model: atoms, bonds, coordinates and the operations that
//! build or transform them (SMILES parsing, XYZ ingestion, rigid motions,
//! pairwise distances, synthetic conformers).

mod geometry;
mod smiles;
mod xyz;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use geometry::{
    apply_rigid, pairwise_distances, random_rigid, random_rotation, synthetic_embed, RigidTransform,
    MIN_SYNTHETIC_DISTANCE,
};
pub use smiles::parse_smiles;
pub use xyz::{load_xyz, parse_xyz};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MolError {
    #[error("empty input")]
    EmptyInput,
    #[error("unsupported element `{0}`")]
    UnsupportedElement(String),
    #[error("unbalanced branch parentheses")]
    UnbalancedBranch,
    #[error("ring closure {0} opened but never closed")]
    UnclosedRing(u32),
    #[error("multi-fragment SMILES ('.') is not supported")]
    MultiFragment,
    #[error("unexpected character `{ch}` at position {pos}")]
    UnexpectedChar { pos: usize, ch: char },
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("could not place atom {atom} after {attempts} attempts")]
    PlacementFailure { atom: usize, attempts: usize },
    #[error("declared {declared} atoms but found {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("malformed line {line}: {text}")]
    MalformedLine { line: usize, text: String },
    #[error("molecule has no coordinates")]
    CoordsUnset,
    #[error("coordinates must have one finite row per atom")]
    BadCoords,
    #[error("rotation is not orthonormal with determinant +1")]
    NotOrthonormal,
    #[error("molecule has no atoms")]
    NoAtoms,
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::H,
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    /// Case-sensitive symbol lookup.
    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.into_iter().find(|e| e.symbol() == s)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = MolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::from_symbol(s).ok_or_else(|| MolError::UnsupportedElement(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i32,
    pub aromatic: bool,
    /// Only set for bracket atoms.
    pub explicit_h: Option<u32>,
    /// Only set for bracket atoms.
    pub isotope: Option<u32>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Self { element, formal_charge: 0, aromatic: false, explicit_h: None, isotope: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Molecule {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Ångström; one row per atom when set.
    pub coords: Option<Vec<[f64; 3]>>,
    pub smiles: Option<String>,
}

impl Molecule {
    pub fn new(id: impl Into<String>, atoms: Vec<Atom>) -> Self {
        Self { id: id.into(), atoms, bonds: Vec::new(), coords: None, smiles: None }
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn elements(&self) -> Vec<Element> {
        self.atoms.iter().map(|a| a.element).collect()
    }

    /// Sets coordinates after checking one finite row per atom.
    pub fn with_coords(mut self, coords: Vec<[f64; 3]>) -> Result<Self, MolError> {
        if coords.len() != self.atoms.len() || coords.iter().flatten().any(|x| !x.is_finite()) {
            return Err(MolError::BadCoords);
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn coords(&self) -> Result<&[[f64; 3]], MolError> {
        self.coords.as_deref().ok_or(MolError::CoordsUnset)
    }

    /// Reorders atoms so that new atom `i` is old atom `perm[i]`; bond indices
    /// and coordinates follow.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        assert_eq!(perm.len(), self.atoms.len(), "permutation length");
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Molecule {
            id: self.id.clone(),
            atoms: perm.iter().map(|&p| self.atoms[p].clone()).collect(),
            bonds: self
                .bonds
                .iter()
                .map(|b| Bond { begin: inverse[b.begin], end: inverse[b.end], order: b.order })
                .collect(),
            coords: self.coords.as_ref().map(|c| perm.iter().map(|&p| c[p]).collect()),
            smiles: self.smiles.clone(),
        }
    }
}
