//! Structure parsing, solvent accessibility, and ingestion of per-residue
//! embeddings and annotations.

mod annotations;
mod embeddings;
mod pdb;
pub mod residues;
mod sasa;

use thiserror::Error;

pub use annotations::{load_annotations, parse_annotations, AnnotationKind, AnnotationSet, DomainSegment, Label};
pub use embeddings::{load_embeddings, read_embeddings, write_embeddings, EmbeddingMatrix, EmbeddingSet};
pub use pdb::{parse_pdb, write_pdb, ParseReport};
pub use residues::AminoAcid;
pub use sasa::{compute_sasa, shrake_rupley, sphere_points, SasaConfig};

#[derive(Debug, Error)]
pub enum ProteinIoError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("structure {id:?} has no residues with a CA atom")]
    EmptyStructure { id: String },
    #[error("structure {id:?} has {n} residue(s); at least 2 are required")]
    TooFewResidues { id: String, n: usize },
    #[error("atoms {a} and {b} have coincident centers")]
    Degenerate { a: usize, b: usize },
    #[error("atom {index} has non-positive radius {radius}")]
    BadRadius { index: usize, radius: f64 },
    #[error("embedding for {id:?} has {rows} rows but the structure has {expected} residues")]
    EmbeddingShape { id: String, rows: usize, expected: usize },
    #[error("{0}")]
    Data(String),
    #[error("annotation for {id:?}: residue index {index} out of range for {n} residues")]
    Range { id: String, index: usize, n: usize },
    #[error("duplicate annotation rows for {id:?}")]
    Conflict { id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Atom {
    pub name: String,
    pub element: String,
    pub residue: usize,
    pub pos: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResidueRecord {
    pub index: usize,
    pub amino_acid: AminoAcid,
    pub ca: [f64; 3],
    /// Absolute solvent-accessible area in Å².
    pub sasa: f64,
    /// `sasa` over the amino acid's maximum, clamped to [0, 1].
    pub rsa: f64,
    pub chain: char,
    pub seq_num: i32,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProteinStructure {
    pub id: String,
    pub residues: Vec<ResidueRecord>,
    pub atoms: Vec<Atom>,
}

impl ProteinStructure {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn sequence(&self) -> String {
        self.residues.iter().map(|r| r.amino_acid.one_letter()).collect()
    }

    pub fn ca_coords(&self) -> Vec<[f64; 3]> {
        self.residues.iter().map(|r| r.ca).collect()
    }

    /// A Cα-only structure, used for synthetic data and tests.
    pub fn from_ca_trace(id: &str, residues: &[(AminoAcid, [f64; 3])]) -> Self {
        let mut out = ProteinStructure { id: id.to_string(), residues: Vec::new(), atoms: Vec::new() };
        for (i, &(aa, pos)) in residues.iter().enumerate() {
            out.residues.push(ResidueRecord {
                index: i,
                amino_acid: aa,
                ca: pos,
                sasa: 0.0,
                rsa: 0.0,
                chain: 'A',
                seq_num: i as i32 + 1,
            });
            out.atoms.push(Atom {
                name: "CA".into(),
                element: "C".into(),
                residue: i,
                pos,
                radius: residues::vdw_radius("C").unwrap_or(residues::DEFAULT_VDW_RADIUS),
            });
        }
        out
    }

    /// Checks the invariants every downstream stage relies on.
    pub fn validate(&self) -> Result<(), ProteinIoError> {
        if self.residues.is_empty() {
            return Err(ProteinIoError::EmptyStructure { id: self.id.clone() });
        }
        if self.residues.len() < 2 {
            return Err(ProteinIoError::TooFewResidues { id: self.id.clone(), n: self.residues.len() });
        }
        for (i, r) in self.residues.iter().enumerate() {
            if r.index != i {
                return Err(ProteinIoError::Data(format!("{}: residue {} stored at position {i}", self.id, r.index)));
            }
            if !r.ca.iter().all(|c| c.is_finite()) {
                return Err(ProteinIoError::Data(format!("{}: residue {i} has non-finite coordinates", self.id)));
            }
        }
        Ok(())
    }
}
