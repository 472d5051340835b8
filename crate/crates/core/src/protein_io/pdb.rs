use std::collections::HashSet;
use std::fmt::Write as _;

use super::residues::{vdw_radius, AminoAcid, DEFAULT_VDW_RADIUS};
use super::{Atom, ProteinIoError, ProteinStructure, ResidueRecord};

/// Counters for everything the parser dropped or defaulted.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct ParseReport {
    /// Residues whose name maps to no canonical amino acid.
    pub skipped_nonstandard: usize,
    /// Residues without a Cα atom.
    pub skipped_without_ca: usize,
    /// Repeated atom names inside a residue (alternate locations); first kept.
    pub duplicate_atoms: usize,
    /// Atoms whose element has no bundled radius.
    pub unknown_elements: usize,
    /// Residues read under a non-canonical name and mapped to a canonical one.
    pub aliased_residues: usize,
}

struct PendingResidue {
    key: (char, i32, char),
    aa: Option<AminoAcid>,
    aliased: bool,
    atoms: Vec<(String, String, [f64; 3])>,
    names: HashSet<String>,
}

fn column(line: &str, start: usize, end: usize) -> &str {
    // 1-based inclusive columns; lines are ASCII by format.
    let end = end.min(line.len());
    if start - 1 >= end {
        ""
    } else {
        &line[start - 1..end]
    }
}

fn element_of(line: &str, atom_name: &str) -> String {
    let from_cols = column(line, 77, 78).trim();
    if !from_cols.is_empty() {
        return from_cols.to_ascii_uppercase();
    }
    atom_name.trim().chars().find(|c| c.is_ascii_alphabetic()).map(|c| c.to_ascii_uppercase().to_string()).unwrap_or_default()
}

/// Parses fixed-column PDB text into a [`ProteinStructure`].
///
/// Only the first model is read. Chains are concatenated in file order and
/// residues re-indexed from 0. `HETATM` records are kept only when their
/// residue name maps to a canonical amino acid (e.g. `MSE`).
pub fn parse_pdb(id: &str, bytes: &[u8]) -> Result<(ProteinStructure, ParseReport), ProteinIoError> {
    let text = String::from_utf8_lossy(bytes);
    let mut report = ParseReport::default();
    let mut pending: Vec<PendingResidue> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let record = column(line, 1, 6);
        if record.starts_with("ENDMDL") {
            break;
        }
        let is_atom = record == "ATOM  " || record.trim_end() == "ATOM";
        let is_het = record == "HETATM";
        if !is_atom && !is_het {
            continue;
        }
        if !line.is_ascii() {
            return Err(ProteinIoError::Parse { line: lineno, reason: "non-ASCII characters in coordinate record".into() });
        }
        if line.len() < 54 {
            return Err(ProteinIoError::Parse {
                line: lineno,
                reason: format!("record is {} columns wide, coordinates need 54", line.len()),
            });
        }
        let atom_name = column(line, 13, 16).trim().to_string();
        let res_name = column(line, 18, 20).trim().to_string();
        let chain = column(line, 22, 22).chars().next().unwrap_or(' ');
        let seq: i32 = column(line, 23, 26).trim().parse().map_err(|_| ProteinIoError::Parse {
            line: lineno,
            reason: format!("residue number {:?} is not an integer", column(line, 23, 26)),
        })?;
        let icode = column(line, 27, 27).chars().next().unwrap_or(' ');
        let mut xyz = [0.0; 3];
        for (k, (s, e)) in [(31, 38), (39, 46), (47, 54)].into_iter().enumerate() {
            let field = column(line, s, e);
            xyz[k] = field.trim().parse().map_err(|_| ProteinIoError::Parse {
                line: lineno,
                reason: format!("coordinate {:?} in columns {s}-{e} is not a number", field),
            })?;
        }
        if is_het && AminoAcid::is_canonical_name(&res_name) {
            // canonical residue names under HETATM are still residues
        } else if is_het && AminoAcid::from_residue_name(&res_name).is_none() {
            continue;
        }

        let key = (chain, seq, icode);
        if pending.last().is_none_or(|r| r.key != key) {
            let aa = AminoAcid::from_residue_name(&res_name);
            pending.push(PendingResidue {
                key,
                aa,
                aliased: aa.is_some() && !AminoAcid::is_canonical_name(&res_name),
                atoms: Vec::new(),
                names: HashSet::new(),
            });
        }
        let res = pending.last_mut().expect("residue pushed above");
        if !res.names.insert(atom_name.clone()) {
            report.duplicate_atoms += 1;
            continue;
        }
        let element = element_of(line, &atom_name);
        res.atoms.push((atom_name, element, xyz));
    }

    let mut residues = Vec::new();
    let mut atoms = Vec::new();
    for res in pending {
        let Some(aa) = res.aa else {
            report.skipped_nonstandard += 1;
            log::warn!("{id}: skipping non-standard residue at {:?}", res.key);
            continue;
        };
        let Some(ca) = res.atoms.iter().find(|a| a.0 == "CA").map(|a| a.2) else {
            report.skipped_without_ca += 1;
            continue;
        };
        if res.aliased {
            report.aliased_residues += 1;
        }
        let index = residues.len();
        for (name, element, pos) in res.atoms {
            let radius = vdw_radius(&element).unwrap_or_else(|| {
                report.unknown_elements += 1;
                log::warn!("{id}: no radius for element {element:?}, using {DEFAULT_VDW_RADIUS}");
                DEFAULT_VDW_RADIUS
            });
            atoms.push(Atom { name, element, residue: index, pos, radius });
        }
        residues.push(ResidueRecord { index, amino_acid: aa, ca, sasa: 0.0, rsa: 0.0, chain: res.key.0, seq_num: res.key.1 });
    }
    if residues.is_empty() {
        return Err(ProteinIoError::EmptyStructure { id: id.to_string() });
    }
    if residues.len() < 2 {
        return Err(ProteinIoError::TooFewResidues { id: id.to_string(), n: 1 });
    }
    Ok((ProteinStructure { id: id.to_string(), residues, atoms }, report))
}

/// Minimal fixed-column PDB text (ATOM records, one model).
pub fn write_pdb(s: &ProteinStructure) -> String {
    let mut out = String::new();
    for (serial, atom) in s.atoms.iter().enumerate() {
        let res = &s.residues[atom.residue];
        // four-character names start in column 13, shorter ones in column 14
        let name = if atom.name.len() >= 4 { atom.name.clone() } else { format!(" {:<3}", atom.name) };
        let _ = writeln!(
            out,
            "ATOM  {:>5} {:<4} {:>3} {}{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
            (serial + 1) % 100_000,
            name,
            res.amino_acid.three_letter(),
            res.chain,
            res.seq_num,
            atom.pos[0],
            atom.pos[1],
            atom.pos[2],
            1.0,
            0.0,
            atom.element
        );
    }
    out.push_str("END\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINES: &str = "\
HEADER    TEST
ATOM      1  N   ALA A   1      11.804   5.201  -7.203  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.104   6.134  -6.504  1.00  0.00           C
ATOM      3  C   ALA A   1       9.811   5.494  -6.005  1.00  0.00           C
ATOM      4  CA AGLY A   2       8.104   4.134  -5.504  0.50  0.00           C
ATOM      5  CA BGLY A   2       8.204   4.234  -5.604  0.50  0.00           C
HETATM    6  CA  MSE A   3       5.000   4.000  -5.000  1.00  0.00          SE
HETATM    7  O   HOH A 101       0.000   0.000   0.000  1.00  0.00           O
ATOM      8  CA  UNK A   4       2.000   2.000   2.000  1.00  0.00           C
ATOM      9  N   SER A   5       1.000   1.000   1.000  1.00  0.00           N
ENDMDL
ATOM     10  CA  LYS A   6       9.000   9.000   9.000  1.00  0.00           C
";

    #[test]
    fn parses_first_model_and_counts_drops() {
        let (s, rep) = parse_pdb("t", LINES.as_bytes()).unwrap();
        assert_eq!(s.residues.len(), 3);
        assert_eq!(s.residues[0].amino_acid, AminoAcid::Ala);
        assert_eq!(s.residues[0].ca, [11.104, 6.134, -6.504]);
        assert_eq!(s.residues[1].ca, [8.104, 4.134, -5.504]);
        assert_eq!(s.residues[2].amino_acid, AminoAcid::Met);
        assert_eq!(rep.duplicate_atoms, 1);
        assert_eq!(rep.skipped_nonstandard, 1);
        assert_eq!(rep.skipped_without_ca, 1);
        assert_eq!(rep.aliased_residues, 1);
        assert_eq!(s.atoms.iter().filter(|a| a.residue == 2).count(), 1);
        assert_eq!(s.atoms.iter().find(|a| a.residue == 2).unwrap().radius, 1.9);
    }

    #[test]
    fn no_atoms_is_empty_structure() {
        let err = parse_pdb("e", b"HEADER x\nEND\n").unwrap_err();
        assert!(matches!(err, ProteinIoError::EmptyStructure { .. }));
    }

    #[test]
    fn short_line_reports_line_number() {
        let text = "HEADER\nATOM      2  CA  ALA A   1      11.104   6.134\n";
        match parse_pdb("x", text.as_bytes()).unwrap_err() {
            ProteinIoError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_coordinate_is_parse_error() {
        let text = "ATOM      2  CA  ALA A   1      11.104   6.1x4  -6.504  1.00  0.00           C\n";
        assert!(matches!(parse_pdb("x", text.as_bytes()), Err(ProteinIoError::Parse { line: 1, .. })));
    }

    #[test]
    fn chains_are_concatenated_and_reindexed() {
        let text = "\
ATOM      1  CA  ALA A  10       0.000   0.000   0.000  1.00  0.00           C
ATOM      2  CA  GLY B   1       3.800   0.000   0.000  1.00  0.00           C
ATOM      3  CA  SER B   2       7.600   0.000   0.000  1.00  0.00           C
";
        let (s, _) = parse_pdb("c", text.as_bytes()).unwrap();
        let idx: Vec<usize> = s.residues.iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(s.residues[1].chain, 'B');
    }
}
