//! SMILES subset parser.
//!
//! Supported: organic-subset atoms, aromatic lowercase atoms, bracket atoms
//! with isotope / H-count / charge, bonds `- = # :`, branches, single-digit
//! and `%NN` ring closures. Stereo markers (`/ \ @`) are accepted and dropped
//! with a warning. Implicit hydrogens are never materialized.

use std::collections::{BTreeMap, HashSet};

use super::{Atom, Bond, BondOrder, Element, MolError, Molecule};

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    text: &'a str,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    bond_set: HashSet<(usize, usize)>,
    /// ring number -> (atom index, bond symbol written at the opening)
    open_rings: BTreeMap<u32, (usize, Option<BondOrder>)>,
    stereo_seen: bool,
}

/// Parses `text` into a molecule with `coords` unset and `smiles` recorded.
pub fn parse_smiles(text: &str) -> Result<Molecule, MolError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(MolError::EmptyInput);
    }
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
        text,
        atoms: Vec::new(),
        bonds: Vec::new(),
        bond_set: HashSet::new(),
        open_rings: BTreeMap::new(),
        stereo_seen: false,
    };
    p.run()?;
    if p.stereo_seen {
        log::warn!("stereo markers in `{}` ignored", p.text);
    }
    Ok(Molecule { id: String::new(), atoms: p.atoms, bonds: p.bonds, coords: None, smiles: Some(text.to_string()) })
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn unexpected(&self) -> MolError {
        match self.peek() {
            Some(ch) => MolError::UnexpectedChar { pos: self.pos, ch },
            None => MolError::UnexpectedChar { pos: self.pos, ch: '\0' },
        }
    }

    fn run(&mut self) -> Result<(), MolError> {
        let mut prev: Option<usize> = None;
        let mut branch_stack: Vec<usize> = Vec::new();
        let mut pending_bond: Option<BondOrder> = None;

        while let Some(ch) = self.peek() {
            match ch {
                '.' => return Err(MolError::MultiFragment),
                '(' => {
                    let Some(p) = prev else { return Err(self.unexpected()) };
                    if pending_bond.is_some() {
                        return Err(self.unexpected());
                    }
                    branch_stack.push(p);
                    self.pos += 1;
                }
                ')' => {
                    let Some(p) = branch_stack.pop() else { return Err(MolError::UnbalancedBranch) };
                    if pending_bond.is_some() {
                        return Err(self.unexpected());
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                '-' | '=' | '#' | ':' | '/' | '\\' => {
                    if prev.is_none() || pending_bond.is_some() {
                        return Err(self.unexpected());
                    }
                    pending_bond = Some(match ch {
                        '=' => BondOrder::Double,
                        '#' => BondOrder::Triple,
                        ':' => BondOrder::Aromatic,
                        '/' | '\\' => {
                            self.stereo_seen = true;
                            BondOrder::Single
                        }
                        _ => BondOrder::Single,
                    });
                    self.pos += 1;
                }
                '0'..='9' | '%' => {
                    let Some(p) = prev else { return Err(self.unexpected()) };
                    let ring = self.ring_number()?;
                    self.ring_closure(p, ring, pending_bond.take())?;
                }
                _ => {
                    let atom = self.atom()?;
                    let idx = self.atoms.len();
                    self.atoms.push(atom);
                    if let Some(p) = prev {
                        let order = pending_bond.take().unwrap_or_else(|| self.implicit_order(p, idx));
                        self.add_bond(p, idx, order)?;
                    }
                    prev = Some(idx);
                }
            }
        }
        if !branch_stack.is_empty() {
            return Err(MolError::UnbalancedBranch);
        }
        if pending_bond.is_some() {
            return Err(MolError::UnexpectedChar { pos: self.pos, ch: '\0' });
        }
        if let Some((&ring, _)) = self.open_rings.iter().next() {
            return Err(MolError::UnclosedRing(ring));
        }
        if self.atoms.is_empty() {
            return Err(MolError::EmptyInput);
        }
        Ok(())
    }

    fn implicit_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Result<(), MolError> {
        let key = (a.min(b), a.max(b));
        if a == b || !self.bond_set.insert(key) {
            return Err(MolError::DuplicateBond(key.0, key.1));
        }
        self.bonds.push(Bond { begin: a, end: b, order });
        Ok(())
    }

    fn ring_number(&mut self) -> Result<u32, MolError> {
        let ch = self.peek().ok_or_else(|| self.unexpected())?;
        if ch == '%' {
            let d1 = self.chars.get(self.pos + 1).and_then(|c| c.to_digit(10));
            let d2 = self.chars.get(self.pos + 2).and_then(|c| c.to_digit(10));
            match (d1, d2) {
                (Some(a), Some(b)) => {
                    self.pos += 3;
                    Ok(a * 10 + b)
                }
                _ => Err(self.unexpected()),
            }
        } else {
            self.pos += 1;
            Ok(ch.to_digit(10).expect("digit"))
        }
    }

    fn ring_closure(&mut self, atom: usize, ring: u32, bond: Option<BondOrder>) -> Result<(), MolError> {
        match self.open_rings.remove(&ring) {
            None => {
                self.open_rings.insert(ring, (atom, bond));
                Ok(())
            }
            Some((other, open_bond)) => {
                let order = bond.or(open_bond).unwrap_or_else(|| self.implicit_order(other, atom));
                self.add_bond(other, atom, order)
            }
        }
    }

    fn atom(&mut self) -> Result<Atom, MolError> {
        let ch = self.peek().ok_or_else(|| self.unexpected())?;
        if ch == '[' {
            return self.bracket_atom();
        }
        let two: String = self.chars[self.pos..(self.pos + 2).min(self.chars.len())].iter().collect();
        if two == "Cl" || two == "Br" {
            self.pos += 2;
            return Ok(Atom::new(Element::from_symbol(&two).expect("organic subset")));
        }
        let (element, aromatic) = match ch {
            'B' => (Element::B, false),
            'C' => (Element::C, false),
            'N' => (Element::N, false),
            'O' => (Element::O, false),
            'P' => (Element::P, false),
            'S' => (Element::S, false),
            'F' => (Element::F, false),
            'I' => (Element::I, false),
            'b' => (Element::B, true),
            'c' => (Element::C, true),
            'n' => (Element::N, true),
            'o' => (Element::O, true),
            'p' => (Element::P, true),
            's' => (Element::S, true),
            c if c.is_ascii_alphabetic() || c == '*' => {
                let sym: String = std::iter::once(c)
                    .chain(self.chars[self.pos + 1..].iter().copied().take_while(|c| c.is_ascii_lowercase()).take(1))
                    .collect();
                return Err(MolError::UnsupportedElement(sym));
            }
            _ => return Err(self.unexpected()),
        };
        self.pos += 1;
        Ok(Atom { aromatic, ..Atom::new(element) })
    }

    fn digits(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.chars[start..self.pos].iter().collect::<String>().parse().ok()).flatten()
    }

    fn bracket_atom(&mut self) -> Result<Atom, MolError> {
        let open = self.pos;
        self.pos += 1;
        let isotope = self.digits();

        let first = self.peek().ok_or(MolError::UnexpectedChar { pos: open, ch: '[' })?;
        let (element, aromatic) = if first.is_ascii_lowercase() {
            let sym = first.to_ascii_uppercase().to_string();
            self.pos += 1;
            let el = match first {
                'b' | 'c' | 'n' | 'o' | 'p' | 's' => Element::from_symbol(&sym).expect("aromatic subset"),
                _ => return Err(MolError::UnsupportedElement(first.to_string())),
            };
            (el, true)
        } else if first.is_ascii_uppercase() {
            let mut sym = first.to_string();
            self.pos += 1;
            if let Some(c) = self.peek().filter(|c| c.is_ascii_lowercase()) {
                sym.push(c);
                self.pos += 1;
            }
            (Element::from_symbol(&sym).ok_or(MolError::UnsupportedElement(sym))?, false)
        } else {
            return Err(self.unexpected());
        };

        while self.peek() == Some('@') {
            self.stereo_seen = true;
            self.pos += 1;
        }

        let mut explicit_h = Some(0);
        if self.peek() == Some('H') {
            self.pos += 1;
            explicit_h = Some(self.digits().unwrap_or(1));
        }

        let mut charge = 0i32;
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let sign = if c == '+' { 1 } else { -1 };
            match self.digits() {
                Some(n) => charge += sign * n as i32,
                None => charge += sign,
            }
        }

        if self.peek() != Some(']') {
            return Err(self.unexpected());
        }
        self.pos += 1;
        Ok(Atom { element, formal_charge: charge, aromatic, explicit_h, isotope })
    }
}
