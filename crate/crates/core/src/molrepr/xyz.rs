use std::path::Path;

use super::{Atom, Element, MolError, Molecule};

/// Reads an XYZ file; the molecule id is the file stem.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<Molecule, MolError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MolError::Io(format!("{}: {e}", path.display())))?;
    let mut mol = parse_xyz(&text)?;
    mol.id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(mol)
}

/// Parses XYZ text: a count line, a free comment line, then one
/// `Element x y z` line per atom. Trailing blank lines are ignored.
pub fn parse_xyz(text: &str) -> Result<Molecule, MolError> {
    let mut lines = text.lines();
    let count_line = lines.next().ok_or(MolError::EmptyInput)?;
    let declared: usize = count_line
        .trim()
        .parse()
        .map_err(|_| MolError::MalformedLine { line: 1, text: count_line.to_string() })?;
    let _comment = lines.next();

    let body: Vec<(usize, &str)> = lines.enumerate().map(|(i, l)| (i + 3, l)).collect();
    let last_nonblank = body.iter().rposition(|(_, l)| !l.trim().is_empty()).map_or(0, |p| p + 1);
    let body = &body[..last_nonblank];
    if body.len() != declared {
        return Err(MolError::CountMismatch { declared, found: body.len() });
    }

    let mut atoms = Vec::with_capacity(declared);
    let mut coords = Vec::with_capacity(declared);
    for &(line, text) in body {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(MolError::MalformedLine { line, text: text.to_string() });
        }
        let element: Element = fields[0].parse()?;
        let mut xyz = [0.0; 3];
        for (k, f) in fields[1..4].iter().enumerate() {
            xyz[k] = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| MolError::MalformedLine { line, text: text.to_string() })?;
        }
        atoms.push(Atom::new(element));
        coords.push(xyz);
    }
    Molecule::new("", atoms).with_coords(coords)
}

#[cfg(test)]
mod tests {
    use super::super::pairwise_distances;
    use super::*;

    #[test]
    fn carbon_monoxide() {
        let m = parse_xyz("2\nCO\nC 0 0 0\nO 0 0 1.2\n").unwrap();
        assert_eq!(m.elements(), vec![Element::C, Element::O]);
        assert!(m.bonds.is_empty());
        assert_eq!(pairwise_distances(&m).unwrap().get(0, 1), 1.2);
    }

    #[test]
    fn count_mismatch() {
        assert_eq!(
            parse_xyz("3\n\nC 0 0 0\nO 0 0 1.2\n"),
            Err(MolError::CountMismatch { declared: 3, found: 2 })
        );
    }

    #[test]
    fn unsupported_element() {
        assert_eq!(parse_xyz("1\n\nXx 0 0 0\n"), Err(MolError::UnsupportedElement("Xx".into())));
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse_xyz("1\n\nC 0 0\n"), Err(MolError::MalformedLine { line: 3, .. })));
        assert!(matches!(parse_xyz("1\n\nC 0 zero 0\n"), Err(MolError::MalformedLine { line: 3, .. })));
        assert!(matches!(parse_xyz("two\n\nC 0 0 0\n"), Err(MolError::MalformedLine { line: 1, .. })));
    }

    #[test]
    fn load_from_disk_uses_stem_as_id() {
        let dir = std::env::temp_dir().join(format!("molm-xyz-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("water.xyz");
        std::fs::write(&p, "3\nwater\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0\n\n").unwrap();
        let m = load_xyz(&p).unwrap();
        assert_eq!(m.id, "water");
        assert_eq!(m.num_atoms(), 3);
        std::fs::remove_dir_all(dir).ok();
    }
}
