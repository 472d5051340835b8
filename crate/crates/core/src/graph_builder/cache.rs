use std::io::{Read, Write};

use super::{ContactGraph, GraphError};
use crate::diff::Tensor;
use crate::protein_io::{AminoAcid, Label};

const MAGIC: &[u8; 8] = b"SBGRAPH1";

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u32).to_le_bytes())
}

fn put_f32s(w: &mut impl Write, vals: &[f64]) -> std::io::Result<()> {
    for &v in vals {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn put_f64s(w: &mut impl Write, vals: &[f64]) -> std::io::Result<()> {
    for &v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes graphs in the `SBGRAPH1` layout: magic, graph count, then one block
/// per graph (id, sizes, u32 edge endpoints, f32 features, f64 coordinates and
/// RSA, residue codes, optional labels).
pub fn write_graphs(w: &mut impl Write, graphs: &[ContactGraph]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, graphs.len())?;
    for g in graphs {
        put_u32(w, g.protein_id.len())?;
        w.write_all(g.protein_id.as_bytes())?;
        put_u32(w, g.n_nodes)?;
        put_u32(w, g.node_dim())?;
        put_u32(w, g.edges.len())?;
        put_u32(w, g.edge_dim())?;
        w.write_all(&g.epsilon.to_le_bytes())?;
        for &(i, j) in &g.edges {
            put_u32(w, i)?;
            put_u32(w, j)?;
        }
        put_f32s(w, g.node_features.data())?;
        put_f32s(w, g.edge_features.data())?;
        for c in &g.coords {
            put_f64s(w, c)?;
        }
        put_f64s(w, &g.rsa)?;
        let codes: Vec<u8> = g.residues.iter().map(|a| a.index() as u8).collect();
        w.write_all(&codes)?;
        match &g.graph_label {
            None => w.write_all(&[0])?,
            Some(Label::Class(c)) => {
                w.write_all(&[1])?;
                put_u32(w, *c)?;
            }
            Some(Label::Multi(v)) => {
                w.write_all(&[2])?;
                put_u32(w, v.len())?;
                for &c in v {
                    put_u32(w, c)?;
                }
            }
            Some(Label::Scalar(s)) => {
                w.write_all(&[3])?;
                w.write_all(&s.to_le_bytes())?;
            }
        }
        match &g.node_labels {
            None => w.write_all(&[0])?,
            Some(l) => {
                w.write_all(&[1])?;
                w.write_all(l)?;
            }
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| GraphError::Cache(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, GraphError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64, GraphError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, GraphError> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    }
}

pub fn read_graphs(r: &mut impl Read) -> Result<Vec<ContactGraph>, GraphError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(GraphError::Cache("missing SBGRAPH1 header".into()));
    }
    let mut c = Cursor { buf: &buf, pos: MAGIC.len() };
    let count = c.u32()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = c.u32()?;
        let protein_id = String::from_utf8(c.take(id_len)?.to_vec()).map_err(|_| GraphError::Cache("id is not UTF-8".into()))?;
        let n = c.u32()?;
        let d = c.u32()?;
        let ne = c.u32()?;
        let de = c.u32()?;
        let epsilon = c.f64()?;
        let mut edges = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (i, j) = (c.u32()?, c.u32()?);
            if i >= n || j >= n {
                return Err(GraphError::Cache(format!("{protein_id}: edge ({i},{j}) out of range")));
            }
            edges.push((i, j));
        }
        let to_tensor = |rows, cols, v| Tensor::from_vec(rows, cols, v).map_err(|e| GraphError::Cache(e.to_string()));
        let node_features = to_tensor(n, d, c.f32s(n * d)?)?;
        let edge_features = to_tensor(ne, de, c.f32s(ne * de)?)?;
        let mut coords = Vec::with_capacity(n);
        for _ in 0..n {
            coords.push([c.f64()?, c.f64()?, c.f64()?]);
        }
        let mut rsa = Vec::with_capacity(n);
        for _ in 0..n {
            rsa.push(c.f64()?);
        }
        let residues = c
            .take(n)?
            .iter()
            .map(|&b| AminoAcid::from_index(b as usize).ok_or_else(|| GraphError::Cache(format!("bad residue code {b}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let graph_label = match c.u8()? {
            0 => None,
            1 => Some(Label::Class(c.u32()?)),
            2 => {
                let k = c.u32()?;
                Some(Label::Multi((0..k).map(|_| c.u32()).collect::<Result<_, _>>()?))
            }
            3 => Some(Label::Scalar(c.f64()?)),
            t => return Err(GraphError::Cache(format!("unknown label tag {t}"))),
        };
        let node_labels = match c.u8()? {
            0 => None,
            _ => Some(c.take(n)?.to_vec()),
        };
        out.push(ContactGraph {
            protein_id,
            n_nodes: n,
            edges,
            node_features,
            edge_features,
            coords,
            residues,
            rsa,
            epsilon,
            graph_label,
            node_labels,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_builder::{build_contact_graph, FeatureConfig};
    use crate::protein_io::ProteinStructure;

    #[test]
    fn round_trip_is_exact() {
        let pts: Vec<_> = (0..6).map(|i| (AminoAcid::ALL[i * 3], [i as f64 * 3.1, (i % 2) as f64 * 1.7, 0.3])).collect();
        let s = ProteinStructure::from_ca_trace("G1", &pts);
        let mut g = build_contact_graph(&s, None, &FeatureConfig::structural()).unwrap();
        g.graph_label = Some(Label::Multi(vec![0, 3]));
        g.node_labels = Some(vec![0, 1, 0, 0, 1, 0]);
        let mut h = g.clone();
        h.protein_id = "G2".into();
        h.graph_label = Some(Label::Scalar(0.25));
        let mut buf = Vec::new();
        write_graphs(&mut buf, &[g.clone(), h.clone()]).unwrap();
        let back = read_graphs(&mut buf.as_slice()).unwrap();
        assert_eq!(back, vec![g, h]);
    }
}
