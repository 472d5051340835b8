use rand::Rng;

use super::{ForwardOptions, ForwardOut, GraphBatch, Model, ModelError, ModelKind, Stage, TaskKind};
use crate::diff::{BatchStats, DiffError, ParamStore, StreamRng, Tape, Tensor, Var};

/// Denominator guard in blob means.
pub const BLOB_EPS: f64 = 1e-8;
pub const BN_MOMENTUM: f64 = 0.1;

/// Parameters of one model placed on a tape.
pub struct Bound<'a> {
    pub store: &'a ParamStore,
    pub vars: &'a [Var],
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<Var, DiffError> {
        self.store.id_of(name).map(|id| self.vars[id.0]).ok_or_else(|| DiffError::Param(format!("no parameter {name:?}")))
    }

    pub fn linear(&self, t: &mut Tape, name: &str, x: Var) -> Result<Var, DiffError> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        let y = t.matmul(x, w)?;
        t.add(y, b)
    }
}

struct Ctx<'a, 'r> {
    bound: Bound<'a>,
    buffers: &'a ParamStore,
    train: bool,
    rng: Option<&'r mut StreamRng>,
    stats: Vec<(String, BatchStats)>,
}

impl Ctx<'_, '_> {
    fn batch_norm(&mut self, t: &mut Tape, name: &str, x: Var) -> Result<Var, DiffError> {
        let gamma = self.bound.get(&format!("{name}.gamma"))?;
        let beta = self.bound.get(&format!("{name}.beta"))?;
        if self.train {
            let (y, s) = t.batch_norm_train(x, gamma, beta)?;
            self.stats.push((name.to_string(), s));
            Ok(y)
        } else {
            let rm = self.buffers.by_name(&format!("{name}.running_mean")).ok_or_else(|| DiffError::Param(format!("no buffer for {name}")))?;
            let rv = self.buffers.by_name(&format!("{name}.running_var")).ok_or_else(|| DiffError::Param(format!("no buffer for {name}")))?;
            t.batch_norm_eval(x, gamma, beta, rm.data(), rv.data())
        }
    }

    fn layer_norm(&self, t: &mut Tape, name: &str, x: Var) -> Result<Var, DiffError> {
        let gamma = self.bound.get(&format!("{name}.gamma"))?;
        let beta = self.bound.get(&format!("{name}.beta"))?;
        t.layer_norm(x, gamma, beta)
    }

    fn dropout(&mut self, t: &mut Tape, x: Var, p: f64) -> Result<Var, DiffError> {
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let rng = self.rng.as_deref_mut().ok_or_else(|| DiffError::Param("training forward needs an rng".into()))?;
        t.dropout(x, p, rng)
    }
}

/// Gumbel(0,1) draws, `u` clamped away from 0 and 1.
pub fn gumbel_noise(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let v = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::from_vec(rows, cols, v).expect("sized above")
}

/// `softmax((logits + noise) / τ)` row-wise.
pub fn blob_assign(t: &mut Tape, logits: Var, tau: f64, noise: Option<&Tensor>) -> Result<Var, DiffError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DiffError::Param(format!("temperature must be positive, got {tau}")));
    }
    let mut z = logits;
    if let Some(g) = noise {
        if g.shape() != t.value(logits).shape() {
            return Err(DiffError::Shape("Gumbel noise shape differs from blob logits".into()));
        }
        let g = t.constant(g.clone());
        z = t.add(z, g)?;
    }
    let z = t.scale(z, 1.0 / tau)?;
    t.softmax(z)
}

/// Assignment-weighted node means per blob and graph, stacked as rows `k·G + g`.
pub fn blob_pool(t: &mut Tape, h: Var, a: Var, node_graph: &[usize], n_graphs: usize) -> Result<Var, DiffError> {
    let k = t.value(a).cols();
    let mut means = Vec::with_capacity(k);
    for c in 0..k {
        let ak = t.slice_cols(a, c, c + 1)?;
        let weighted = t.mul(h, ak)?;
        let num = t.segment_sum(weighted, node_graph, n_graphs)?;
        let den = t.segment_sum(ak, node_graph, n_graphs)?;
        let den = t.affine(den, 1.0, BLOB_EPS)?;
        means.push(t.div(num, den)?);
    }
    t.concat_rows(&means)
}

/// `[max_k b_k ‖ mean_i h_i]` per graph.
pub fn readout(t: &mut Tape, blobs: Var, h: Var, node_graph: &[usize], n_graphs: usize) -> Result<Var, DiffError> {
    let rows = t.value(blobs).rows();
    let blob_graph: Vec<usize> = (0..rows).map(|r| r % n_graphs).collect();
    let zb = t.segment_max(blobs, &blob_graph, n_graphs)?;
    let zg = t.segment_mean(h, node_graph, n_graphs)?;
    t.concat_cols(&[zb, zg])
}

/// GINE convolution: `MLP((1+ε)h_i + Σ_j relu(h_j + W_e e_ji + b_e))`.
fn gine_conv(
    t: &mut Tape,
    ctx: &mut Ctx<'_, '_>,
    l: usize,
    h: Var,
    batch: &GraphBatch,
    edge_attr: Var,
    edge_weight: Option<Var>,
) -> Result<Var, DiffError> {
    let n = batch.n_nodes();
    let mut pre = {
        let eps = ctx.bound.get(&format!("gine.{l}.eps"))?;
        let one_plus = t.affine(eps, 1.0, 1.0)?;
        t.mul(h, one_plus)?
    };
    if batch.n_edges() > 0 {
        let hs = t.gather_rows(h, &batch.src)?;
        let e = ctx.bound.linear(t, &format!("gine.{l}.edge"), edge_attr)?;
        let m = t.add(hs, e)?;
        let mut m = t.relu(m)?;
        if let Some(w) = edge_weight {
            m = t.mul(m, w)?;
        }
        let agg = t.scatter_add(m, &batch.dst, n)?;
        pre = t.add(pre, agg)?;
    }
    let y = ctx.bound.linear(t, &format!("gine.{l}.mlp1"), pre)?;
    let y = ctx.batch_norm(t, &format!("gine.{l}.mlp_bn"), y)?;
    let y = t.relu(y)?;
    ctx.bound.linear(t, &format!("gine.{l}.mlp2"), y)
}

pub(super) fn forward(
    model: &Model,
    t: &mut Tape,
    pv: &[Var],
    batch: &GraphBatch,
    opts: ForwardOptions<'_>,
) -> Result<ForwardOut, ModelError> {
    let cfg = &model.config;
    if pv.len() != model.params.len() {
        return Err(ModelError::Config(format!("{} bound parameters for a model with {}", pv.len(), model.params.len())));
    }
    let ForwardOptions { train, tau, rng, x, edge_weight, noise } = opts;
    let mut ctx = Ctx { bound: Bound { store: &model.params, vars: pv }, buffers: &model.buffers, train, rng, stats: Vec::new() };
    let x = match x {
        Some(v) => v,
        None => t.constant(batch.x.clone()),
    };
    let g = batch.n_graphs();

    if !cfg.kind.is_graph_network() {
        let input = if cfg.kind == ModelKind::SeqMlp {
            t.constant(batch.composition.clone())
        } else {
            t.segment_mean(x, &batch.node_graph, g).at(|| "mean pooling".into())?
        };
        let mut hcur = input;
        for (lin, ln) in [("mlp1", "mlp_ln1"), ("mlp2", "mlp_ln2")] {
            hcur = (|| {
                let y = ctx.bound.linear(t, lin, hcur)?;
                let y = ctx.layer_norm(t, ln, y)?;
                let y = t.gelu(y)?;
                ctx.dropout(t, y, cfg.mlp_dropout)
            })()
            .at(|| format!("baseline {lin}"))?;
        }
        let logits = ctx.bound.linear(t, "mlp3", hcur).at(|| "baseline output".into())?;
        return Ok(ForwardOut { logits, node_states: None, assignment: None, blobs: None, jk: None, bn_stats: ctx.stats });
    }

    let edge_attr = t.constant(batch.edge_attr.clone());
    let mut h = ctx.bound.linear(t, "input", x).at(|| "input projection".into())?;
    let mut layer_outputs = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        h = (|| {
            let y = gine_conv(t, &mut ctx, l, h, batch, edge_attr, edge_weight)?;
            let y = ctx.batch_norm(t, &format!("gine.{l}.bn"), y)?;
            let y = t.relu(y)?;
            ctx.dropout(t, y, cfg.dropout)
        })()
        .at(|| format!("gine layer {l}"))?;
        layer_outputs.push(h);
    }
    let needs_jk = cfg.kind == ModelKind::GinJk || cfg.task == TaskKind::Node;
    let jk = if needs_jk { Some(t.concat_cols(&layer_outputs).at(|| "jumping knowledge".into())?) } else { None };

    if cfg.task == TaskKind::Node {
        let jkv = jk.expect("node tasks build jk");
        let logits = (|| {
            let y = ctx.bound.linear(t, "node1", jkv)?;
            let y = t.relu(y)?;
            ctx.bound.linear(t, "node2", y)
        })()
        .at(|| "node head".into())?;
        return Ok(ForwardOut { logits, node_states: Some(h), assignment: None, blobs: None, jk, bn_stats: ctx.stats });
    }

    let (z, assignment, blobs) = if cfg.kind == ModelKind::SoftBlobGin {
        let k = cfg.blobs;
        let n = batch.n_nodes();
        let bl = ctx.bound.linear(t, "blob_head", h).at(|| "blob head".into())?;
        let noise = match (noise, train) {
            (Some(nz), _) => Some(nz),
            (None, true) => {
                let rng = ctx.rng.as_deref_mut().ok_or_else(|| ModelError::Config("training forward needs an rng".into()))?;
                Some(gumbel_noise(rng, n, k))
            }
            (None, false) => None,
        };
        let a = blob_assign(t, bl, tau, noise.as_ref()).at(|| "blob assignment".into())?;
        let blobs = (|| {
            let means = blob_pool(t, h, a, &batch.node_graph, g)?;
            let y = ctx.layer_norm(t, "blob_ln", means)?;
            let y = ctx.bound.linear(t, "refiner1", y)?;
            let y = t.relu(y)?;
            ctx.bound.linear(t, "refiner2", y)
        })()
        .at(|| "blob pooling".into())?;
        let z = readout(t, blobs, h, &batch.node_graph, g).at(|| "readout".into())?;
        (z, Some(a), Some(blobs))
    } else {
        let jkv = jk.expect("gin_jk builds jk");
        let z = (|| {
            let mean = t.segment_mean(jkv, &batch.node_graph, g)?;
            let max = t.segment_max(jkv, &batch.node_graph, g)?;
            t.concat_cols(&[mean, max])
        })()
        .at(|| "readout".into())?;
        (z, None, None)
    };
    let logits = (|| {
        let y = ctx.bound.linear(t, "cls1", z)?;
        let y = ctx.batch_norm(t, "cls_bn", y)?;
        let y = t.relu(y)?;
        ctx.bound.linear(t, "cls2", y)
    })()
    .at(|| "classifier".into())?;
    Ok(ForwardOut { logits, node_states: Some(h), assignment, blobs, jk, bn_stats: ctx.stats })
}
