use std::collections::HashMap;
use std::io::{self, Read, Write};

use super::{OptimizerState, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named collection of tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensor_mut_at(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// True when both stores hold the same names with the same shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }

    /// Overwrites tensors by name; every name in `self` must be present in `src` with the same shape.
    pub fn load_from(&mut self, src: &ParamStore) -> Result<(), String> {
        for (i, name) in self.names.iter().enumerate() {
            let t = src.by_name(name).ok_or_else(|| format!("missing tensor {name}"))?;
            if t.shape() != self.tensors[i].shape() {
                return Err(format!("tensor {name}: shape {:?} vs expected {:?}", t.shape(), self.tensors[i].shape()));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }
}

/// Everything persisted for one trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata, JSON by convention (model configuration).
    pub meta: String,
    pub params: ParamStore,
    pub buffers: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

const MAGIC: &[u8; 7] = b"SBCKPT1";

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_blocks<W: Write>(w: &mut W, names: &[String], tensors: &[Tensor]) -> io::Result<()> {
    write_u32(w, tensors.len() as u32)?;
    for (name, t) in names.iter().zip(tensors) {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(w, 2)?;
        write_u32(w, t.rows() as u32)?;
        write_u32(w, t.cols() as u32)?;
        for &x in t.data() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes a checkpoint:
/// `"SBCKPT1" | meta_len u32 | meta | params | buffers | has_opt u8 [step u64 | m | v]`,
/// where each tensor section is `count u32` followed by blocks of
/// `name_len u32 | name | ndim u32 | dims u32… | f32 data`, all little-endian.
pub fn write_checkpoint<W: Write>(w: &mut W, ck: &Checkpoint) -> io::Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, ck.meta.len() as u32)?;
    w.write_all(ck.meta.as_bytes())?;
    write_blocks(w, ck.params.names(), ck.params.tensors())?;
    write_blocks(w, ck.buffers.names(), ck.buffers.tensors())?;
    match &ck.optimizer {
        None => w.write_all(&[0u8])?,
        Some(st) => {
            w.write_all(&[1u8])?;
            w.write_all(&st.step.to_le_bytes())?;
            let m_names: Vec<String> = ck.params.names().iter().map(|n| format!("m:{n}")).collect();
            let v_names: Vec<String> = ck.params.names().iter().map(|n| format!("v:{n}")).collect();
            write_blocks(w, &m_names, &st.m)?;
            write_blocks(w, &v_names, &st.v)?;
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_blocks<R: Read>(r: &mut R) -> io::Result<ParamStore> {
    let n = read_u32(r)?;
    let mut store = ParamStore::default();
    for _ in 0..n {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let ndim = read_u32(r)? as usize;
        let dims: Vec<usize> = (0..ndim).map(|_| read_u32(r).map(|d| d as usize)).collect::<io::Result<_>>()?;
        let (rows, cols) = match dims.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => return Err(bad(format!("tensor {name}: unsupported rank {ndim}"))),
        };
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        if store.by_name(&name).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        store.add(name, Tensor::from_vec(rows, cols, data).map_err(|e| bad(e.to_string()))?);
    }
    Ok(store)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> io::Result<Checkpoint> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let len = read_u32(r)? as usize;
    let mut meta = vec![0u8; len];
    r.read_exact(&mut meta)?;
    let meta = String::from_utf8(meta).map_err(|_| bad("metadata is not UTF-8"))?;
    let params = read_blocks(r)?;
    let buffers = read_blocks(r)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let optimizer = if flag[0] == 1 {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let step = u64::from_le_bytes(b);
        let m = read_blocks(r)?;
        let v = read_blocks(r)?;
        if m.len() != params.len() || v.len() != params.len() {
            return Err(bad("optimizer state does not match parameters"));
        }
        Some(OptimizerState { step, m: m.tensors().to_vec(), v: v.tensors().to_vec() })
    } else {
        None
    };
    Ok(Checkpoint { meta, params, buffers, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_at_f32_precision() {
        let mut params = ParamStore::default();
        params.add("a.weight", Tensor::from_vec(2, 3, vec![0.5, -1.25, 3.0, 0.0, 0.0009765625, 7.5]).unwrap());
        params.add("a.bias", Tensor::row_vector(&[0.25, -0.5, 1.0]));
        let mut buffers = ParamStore::default();
        buffers.add("bn.running_mean", Tensor::row_vector(&[0.0, 1.0]));
        let mut opt = OptimizerState::new(&params);
        opt.step = 12;
        opt.m[1] = Tensor::row_vector(&[1.0, 2.0, 3.0]);
        let ck = Checkpoint { meta: "{\"k\":1}".into(), params, buffers, optimizer: Some(opt) };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        assert_eq!(&buf[..7], b"SBCKPT1");
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_checkpoint(&mut &b"SBCKPT0\0\0\0\0"[..]).is_err());
    }
}
