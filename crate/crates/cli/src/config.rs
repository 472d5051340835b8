//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use softblob::evaluation::ActiveMode;
use softblob::explainers::ExplainerConfig;
use softblob::graph_builder::{FeatureBlock, FeatureConfig};
use softblob::models::{ModelConfig, ModelKind, TaskKind};
use softblob::protein_io::{AnnotationKind, SasaConfig};
use softblob::training::TrainConfig;

use crate::error::{CliError, CliResult};

/// Every accepted key with its default and meaning.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("pdb_dir", "", "directory of .pdb files to featurize"),
    ("graphs", "", "existing SBGRAPH1 cache used instead of pdb_dir"),
    ("embeddings", "", "SBEMB1 per-residue embeddings; required by the esm block"),
    ("labels", "", "annotation CSV protein_id,value"),
    ("label_kind", "graph_label", "graph_label | multilabel | scalar | node_label"),
    ("active_sites", "", "CSV of annotated active-site residues, indices separated by ';'"),
    ("domains", "", "CSV of domain segments NAME:START-END separated by ';'"),
    ("epsilon", "8", "contact radius in Å"),
    ("blocks", "aa_onehot,physchem,sasa,degree,positional", "node feature blocks; add esm to use embeddings"),
    ("rbf_centers", "16", "radial basis functions on edge distances"),
    ("esm_dim", "1280", "embedding width"),
    ("probe_radius", "1.4", "SASA probe radius in Å"),
    ("sasa_points", "92", "test points per atom sphere"),
    ("model", "softblobgin", "softblobgin | gin_jk | seq_mlp | residue_mlp"),
    ("task", "graph", "graph | multilabel | regression | node"),
    ("hidden", "256", "hidden width"),
    ("layers", "4", "message-passing layers"),
    ("blobs", "8", "blob count K; a list runs one sub-run per value"),
    ("outputs", "", "output width; inferred from the labels when unset"),
    ("dropout", "0.1", "dropout inside the GINE layers"),
    ("mlp_hidden", "256", "hidden width of the MLP baselines"),
    ("mlp_dropout", "0.3", "dropout of the MLP baselines"),
    ("lr", "0.001", "peak learning rate"),
    ("weight_decay", "0.0001", "AdamW weight decay"),
    ("max_epochs", "200", "epoch limit"),
    ("patience", "30", "early-stopping patience on validation loss"),
    ("warmup", "10", "linear warmup epochs"),
    ("gamma", "1", "focal exponent"),
    ("label_smoothing", "0.05", "label smoothing"),
    ("edge_dropout", "0.05", "training edge-drop probability"),
    ("feature_mask", "0.05", "training feature-mask probability"),
    ("tau_start", "1", "initial assignment temperature"),
    ("tau_end", "0.1", "final assignment temperature"),
    ("batch_size", "32", "graphs per optimizer step"),
    ("clip_norm", "1", "gradient-norm clip"),
    ("node_focal", "false", "focal loss for node tasks"),
    ("split", "0.7,0.15,0.15", "train, validation and test fractions"),
    ("split_seed", "0", "seed of the protein shuffle behind the split"),
    ("seeds", "42", "training seeds; several give an ensemble"),
    ("method", "gnnexplainer", "gnnexplainer | ig"),
    ("explain_steps", "300", "explainer optimisation steps"),
    ("explain_lr", "0.01", "explainer learning rate"),
    ("lambdas", "0.005,0.1,0.1,0.1", "edge size, edge entropy, feature size, feature entropy weights"),
    ("ig_steps", "50", "integrated-gradient intervals"),
    ("explain_limit", "0", "explain at most this many test proteins; 0 = all"),
    ("top_fraction", "0.2", "fraction of residues counted as important"),
    ("seq_sep", "20", "sequence separation above which a contact is long-range"),
    ("peak_range", "6,10", "distance window in Å reported for important contacts"),
    ("z_samples", "100", "random subsets behind the spatial z-score"),
    ("active_mode", "fraction", "fraction | count enrichment of blobs in active sites"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gnnexplainer,
    Ig,
}

impl FromStr for Method {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Method> {
        match s {
            "gnnexplainer" => Ok(Method::Gnnexplainer),
            "ig" => Ok(Method::Ig),
            other => Err(CliError::Usage(format!("unknown explanation method {other:?} (gnnexplainer | ig)"))),
        }
    }
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gnnexplainer => "gnnexplainer",
            Method::Ig => "ig",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub pdb_dir: Option<PathBuf>,
    pub graphs: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub label_kind: AnnotationKind,
    pub active_sites: Option<PathBuf>,
    pub domains: Option<PathBuf>,
    pub features: FeatureConfig,
    pub sasa: SasaConfig,
    /// `in_dim`, `edge_dim`, `blobs` and (if unset) `outputs` are filled per run.
    pub model: ModelConfig,
    pub outputs: Option<usize>,
    pub blob_grid: Vec<usize>,
    pub train: TrainConfig,
    pub split: [f64; 3],
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub method: Method,
    pub explainer: ExplainerConfig,
    pub ig_steps: usize,
    pub explain_limit: usize,
    pub top_fraction: f64,
    pub seq_sep: usize,
    pub peak_range: (f64, f64),
    pub z_samples: usize,
    pub active_mode: ActiveMode,
}

/// Parsed but untyped entries keyed by name.
pub fn parse_entries(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim().to_string();
        if !SCHEMA.iter().any(|(name, _, _)| *name == k) {
            return Err(CliError::Config(format!("line {}: unknown key {k:?}", n + 1)));
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
    }
    Ok(out)
}

struct Entries<'a> {
    map: &'a BTreeMap<String, String>,
    base: &'a Path,
}

impl Entries<'_> {
    fn raw(&self, key: &str) -> &str {
        match self.map.get(key) {
            Some(v) => v,
            None => SCHEMA.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d).expect("key in schema"),
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {s:?}"))))
            .collect()
    }

    fn path(&self, key: &str) -> CliResult<Option<PathBuf>> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(None);
        }
        let p = self.base.join(v);
        if !p.exists() {
            return Err(CliError::Config(format!("{key}: {} does not exist", p.display())));
        }
        Ok(Some(p))
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> CliResult<RunConfig> {
        let map = parse_entries(text)?;
        let e = Entries { map: &map, base };
        let bad = |m: String| Err(CliError::Config(m));

        let blocks = e
            .list::<String>("blocks")?
            .iter()
            .map(|b| FeatureBlock::parse(b).ok_or_else(|| CliError::Config(format!("blocks: unknown block {b:?}"))))
            .collect::<CliResult<Vec<_>>>()?;
        let features = FeatureConfig {
            epsilon: e.get("epsilon")?,
            blocks,
            rbf_centers: e.get("rbf_centers")?,
            rbf_sigma: None,
            esm_dim: e.get("esm_dim")?,
        };
        features.validate()?;

        let kind = ModelKind::parse(e.raw("model")).ok_or_else(|| CliError::Config(format!("model: unknown {:?}", e.raw("model"))))?;
        let task = TaskKind::parse(e.raw("task")).ok_or_else(|| CliError::Config(format!("task: unknown {:?}", e.raw("task"))))?;
        let outputs = if e.raw("outputs").is_empty() { None } else { Some(e.get("outputs")?) };
        let blob_grid: Vec<usize> = e.list("blobs")?;
        if blob_grid.is_empty() {
            return bad("blobs: at least one value is required".into());
        }
        let model = ModelConfig {
            kind,
            task,
            in_dim: features.node_dim(),
            edge_dim: features.edge_dim(),
            hidden: e.get("hidden")?,
            layers: e.get("layers")?,
            blobs: blob_grid[0],
            outputs: outputs.unwrap_or(1),
            dropout: e.get("dropout")?,
            mlp_hidden: e.get("mlp_hidden")?,
            mlp_dropout: e.get("mlp_dropout")?,
            ..ModelConfig::default()
        };

        let train = TrainConfig {
            lr0: e.get("lr")?,
            weight_decay: e.get("weight_decay")?,
            max_epochs: e.get("max_epochs")?,
            patience: e.get("patience")?,
            warmup: e.get("warmup")?,
            gamma: e.get("gamma")?,
            label_smoothing: e.get("label_smoothing")?,
            edge_dropout: e.get("edge_dropout")?,
            feature_mask: e.get("feature_mask")?,
            tau_start: e.get("tau_start")?,
            tau_end: e.get("tau_end")?,
            batch_size: e.get("batch_size")?,
            clip_norm: e.get("clip_norm")?,
            node_focal: e.get("node_focal")?,
            ..TrainConfig::default()
        };
        train.validate()?;

        let split: Vec<f64> = e.list("split")?;
        let split: [f64; 3] = split.try_into().map_err(|_| CliError::Config("split: expected three fractions".into()))?;
        if split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-6 || split[0] == 0.0 {
            return bad(format!("split: fractions {split:?} must be non-negative, sum to 1 and give a training share"));
        }
        let seeds: Vec<u64> = e.list("seeds")?;
        if seeds.is_empty() {
            return bad("seeds: the seed list is empty".into());
        }
        let lambdas: Vec<f64> = e.list("lambdas")?;
        let lambdas: [f64; 4] = lambdas.try_into().map_err(|_| CliError::Config("lambdas: expected four weights".into()))?;
        let peak: Vec<f64> = e.list("peak_range")?;
        if peak.len() != 2 || peak[0] > peak[1] {
            return bad("peak_range: expected LOW,HIGH".into());
        }
        let top_fraction: f64 = e.get("top_fraction")?;
        if !(top_fraction > 0.0 && top_fraction <= 1.0) {
            return bad(format!("top_fraction {top_fraction} outside (0, 1]"));
        }
        let active_mode = match e.raw("active_mode") {
            "fraction" => ActiveMode::Fraction,
            "count" => ActiveMode::Count,
            other => return bad(format!("active_mode: unknown {other:?}")),
        };
        let label_kind: AnnotationKind = e.raw("label_kind").parse().map_err(CliError::Config)?;
        if matches!(label_kind, AnnotationKind::ActiveSite | AnnotationKind::Domain) {
            return bad("label_kind: active sites and domains have their own keys".into());
        }

        let cfg = RunConfig {
            pdb_dir: e.path("pdb_dir")?,
            graphs: e.path("graphs")?,
            embeddings: e.path("embeddings")?,
            labels: e.path("labels")?,
            label_kind,
            active_sites: e.path("active_sites")?,
            domains: e.path("domains")?,
            features,
            sasa: SasaConfig { probe_radius: e.get("probe_radius")?, sphere_points: e.get("sasa_points")? },
            model,
            outputs,
            blob_grid,
            train,
            split,
            split_seed: e.get("split_seed")?,
            seeds,
            method: e.raw("method").parse().map_err(|err: CliError| CliError::Config(err.to_string()))?,
            explainer: ExplainerConfig {
                steps: e.get("explain_steps")?,
                lr: e.get("explain_lr")?,
                lambdas,
                ..ExplainerConfig::default()
            },
            ig_steps: e.get("ig_steps")?,
            explain_limit: e.get("explain_limit")?,
            top_fraction,
            seq_sep: e.get("seq_sep")?,
            peak_range: (peak[0], peak[1]),
            z_samples: e.get("z_samples")?,
            active_mode,
        };
        if cfg.pdb_dir.is_none() && cfg.graphs.is_none() {
            return bad("one of pdb_dir or graphs is required".into());
        }
        if cfg.features.has(FeatureBlock::Esm) && cfg.embeddings.is_none() && cfg.graphs.is_none() {
            return bad("the esm block needs an embeddings file".into());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<(RunConfig, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((RunConfig::parse(&text, base)?, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<RunConfig> {
        let dir = std::env::temp_dir();
        RunConfig::parse(&format!("graphs = .\n{text}"), &dir)
    }

    #[test]
    fn defaults_apply() {
        let c = parse("").unwrap();
        assert_eq!(c.seeds, vec![42]);
        assert_eq!(c.blob_grid, vec![8]);
        assert_eq!(c.features.node_dim(), 38);
        assert_eq!(c.explainer.lambdas, [0.005, 0.1, 0.1, 0.1]);
        assert_eq!(c.method, Method::Gnnexplainer);
    }

    #[test]
    fn grids_lists_and_comments() {
        let c = parse("blobs = 3, 5,8,12  # sweep\nseeds=1,2\n\n# note\nmethod = ig\n").unwrap();
        assert_eq!(c.blob_grid, vec![3, 5, 8, 12]);
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.method, Method::Ig);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "nonsense = 1",
            "hidden = 1\nhidden = 2",
            "hidden",
            "hidden = many",
            "seeds = ",
            "split = 0.5,0.5",
            "blocks = aa_onehot,wings",
            "method = lime",
            "patience = 300\nmax_epochs = 10",
            "pdb_dir = /definitely/not/here",
        ] {
            assert!(matches!(parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn esm_without_embeddings_is_rejected() {
        let dir = std::env::temp_dir();
        let err = RunConfig::parse("pdb_dir = .\nblocks = aa_onehot,esm", &dir).unwrap_err();
        assert!(err.to_string().contains("embeddings"), "{err}");
    }
}
