use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{ProteinIoError, ProteinStructure};

const MAGIC: &[u8; 6] = b"SBEMB1";

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub protein_id: String,
    pub rows: usize,
    pub dim: usize,
    /// Row-major `rows × dim`.
    pub data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Result of loading an embedding file against a manifest.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingSet {
    pub matrices: BTreeMap<String, EmbeddingMatrix>,
    /// Manifest ids with no block in the file.
    pub missing: Vec<String>,
}

fn data_err(msg: String) -> ProteinIoError {
    ProteinIoError::Data(msg)
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32, ProteinIoError> {
    let bytes = buf.get(*pos..*pos + 4).ok_or_else(|| data_err(format!("embedding file truncated at byte {}", *pos)))?;
    *pos += 4;
    Ok(u32::from_le_bytes(bytes.try_into().expect("4 bytes")))
}

/// Decodes every block of an `SBEMB1` buffer.
pub fn read_embeddings(buf: &[u8]) -> Result<Vec<EmbeddingMatrix>, ProteinIoError> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(data_err("embedding file does not start with SBEMB1".into()));
    }
    let mut pos = MAGIC.len();
    let mut out = Vec::new();
    while pos < buf.len() {
        let id_len = read_u32(buf, &mut pos)? as usize;
        let id_bytes = buf.get(pos..pos + id_len).ok_or_else(|| data_err(format!("embedding id truncated at byte {pos}")))?;
        let id = std::str::from_utf8(id_bytes).map_err(|_| data_err(format!("embedding id at byte {pos} is not UTF-8")))?.to_string();
        pos += id_len;
        let rows = read_u32(buf, &mut pos)? as usize;
        let dim = read_u32(buf, &mut pos)? as usize;
        if dim == 0 {
            return Err(data_err(format!("embedding for {id:?} has dim 0")));
        }
        let count = rows * dim;
        let bytes = buf
            .get(pos..pos + 4 * count)
            .ok_or_else(|| data_err(format!("embedding for {id:?} truncated: expected {count} floats at byte {pos}")))?;
        let mut data = Vec::with_capacity(count);
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(data_err(format!(
                    "embedding for {id:?} has non-finite value at row {}, column {} (byte offset {})",
                    k / dim,
                    k % dim,
                    pos + 4 * k
                )));
            }
            data.push(v as f64);
        }
        pos += 4 * count;
        out.push(EmbeddingMatrix { protein_id: id, rows, dim, data });
    }
    Ok(out)
}

pub fn write_embeddings(w: &mut impl Write, mats: &[EmbeddingMatrix]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for m in mats {
        w.write_all(&(m.protein_id.len() as u32).to_le_bytes())?;
        w.write_all(m.protein_id.as_bytes())?;
        w.write_all(&(m.rows as u32).to_le_bytes())?;
        w.write_all(&(m.dim as u32).to_le_bytes())?;
        for &v in &m.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads `path` and keeps the blocks named in `manifest`, validating row counts
/// against the matching structures.
pub fn load_embeddings(path: &Path, manifest: &[&ProteinStructure]) -> Result<EmbeddingSet, ProteinIoError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut by_id: BTreeMap<String, EmbeddingMatrix> = read_embeddings(&buf)?.into_iter().map(|m| (m.protein_id.clone(), m)).collect();
    let mut set = EmbeddingSet::default();
    for s in manifest {
        match by_id.remove(&s.id) {
            Some(m) => {
                if m.rows != s.len() {
                    return Err(ProteinIoError::EmbeddingShape { id: s.id.clone(), rows: m.rows, expected: s.len() });
                }
                set.matrices.insert(s.id.clone(), m);
            }
            None => set.missing.push(s.id.clone()),
        }
    }
    if !set.missing.is_empty() {
        log::warn!("{} protein(s) have no embedding block: {:?}", set.missing.len(), set.missing);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protein_io::AminoAcid;

    fn mat(id: &str, rows: usize, dim: usize) -> EmbeddingMatrix {
        EmbeddingMatrix { protein_id: id.into(), rows, dim, data: (0..rows * dim).map(|i| i as f64 * 0.5).collect() }
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &[mat("P1", 3, 4), mat("P2", 1, 2)]).unwrap();
        let back = read_embeddings(&buf).unwrap();
        assert_eq!(back[0], mat("P1", 3, 4));
        assert_eq!(back[1].rows, 1);
    }

    #[test]
    fn nan_reports_offset() {
        let mut m = mat("P1", 2, 2);
        m.data[3] = f64::NAN;
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &[m]).unwrap();
        let err = read_embeddings(&buf).unwrap_err().to_string();
        assert!(err.contains("row 1, column 1"), "{err}");
        assert!(err.contains("byte offset"), "{err}");
    }

    #[test]
    fn row_mismatch_names_protein() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let mut f = std::fs::File::create(&path).unwrap();
        write_embeddings(&mut f, &[mat("P1", 3, 4)]).unwrap();
        drop(f);
        let pts: Vec<_> = (0..4).map(|i| (AminoAcid::Ala, [i as f64 * 3.8, 0.0, 0.0])).collect();
        let s = ProteinStructure::from_ca_trace("P1", &pts);
        match load_embeddings(&path, &[&s]).unwrap_err() {
            ProteinIoError::EmbeddingShape { id, rows, expected } => assert_eq!((id.as_str(), rows, expected), ("P1", 3, 4)),
            e => panic!("unexpected {e}"),
        }
        let other = ProteinStructure::from_ca_trace("P9", &pts);
        let set = load_embeddings(&path, &[&other]).unwrap();
        assert_eq!(set.missing, vec!["P9".to_string()]);
    }
}
