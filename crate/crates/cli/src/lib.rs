//! Run-directory pipeline over the `softblob` library.
//!
//! ```text
//! <out>/config.snapshot            verbatim config
//! <out>/cli.json                   command-line overrides
//! <out>/graphs/                    SBGRAPH1 cache, manifest, failures
//! <out>/train/k<K>/seed_<S>/       checkpoint and history per seed
//! <out>/eval/ <out>/explain/<method>/ <out>/bioeval/<method>/ <out>/blobs/
//! <out>/report.json, report.csv
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use softblob::diff::{derive_seed, read_checkpoint};
use softblob::graph_builder::{read_graphs, ContactGraph};
use softblob::models::Model;
use softblob::protein_io::{load_annotations, AnnotationKind, AnnotationSet, Label};

pub mod commands;
pub mod config;
pub mod error;
pub mod run_dir;

use config::{Method, RunConfig};
pub use error::{CliError, CliResult};
use run_dir::{content_hash, write_json, write_text, RunDir};

#[derive(Debug, Parser)]
#[command(name = "softblob", version, about = "Blob-pooled GIN pipeline for protein contact graphs")]
pub struct Cli {
    /// Flat key = value run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Seeds, comma separated; overrides the config.
    #[arg(long = "seeds", visible_alias = "seed", global = true, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Also write series and histogram CSVs for plotting.
    #[arg(long, global = true)]
    pub plot_data: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse structures and build the contact-graph cache.
    Featurize,
    /// Train one model per seed and blob count.
    Train,
    /// Test-split metrics for every trained model.
    Eval {
        /// Also score the softmax-averaged ensemble of all seeds.
        #[arg(long)]
        ensemble: bool,
    },
    /// Explain test proteins with a trained model.
    Explain {
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Biological-faithfulness and fidelity statistics of explanations.
    BioEval {
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Blob sizes, importances, active-site and domain analyses.
    Blobs {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Collect every report of the run directory.
    Report,
    /// Write a synthetic dataset (PDB files, annotations, config).
    Synth {
        /// motif | two-hop
        #[arg(long, default_value = "motif")]
        kind: String,
        #[arg(long, default_value_t = 40)]
        count: usize,
    },
}

/// Everything a command needs: the typed config, the run directory and flags.
pub struct Context {
    pub cfg: RunConfig,
    pub run: RunDir,
    pub jobs: usize,
    pub plot_data: bool,
}

/// Protein indices of each split.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub const GRAPH_CACHE: &str = "graphs/graphs.sbgraph";

impl Context {
    pub fn graphs(&self) -> CliResult<Vec<ContactGraph>> {
        let path = self.run.path(GRAPH_CACHE);
        let bytes = std::fs::read(&path).map_err(|_| CliError::Data(format!("{} is missing; run featurize first", path.display())))?;
        let graphs = read_graphs(&mut bytes.as_slice())?;
        if graphs.is_empty() {
            return Err(CliError::Data("the graph cache is empty".into()));
        }
        Ok(graphs)
    }

    /// Deterministic shuffle keyed by protein id, so the split does not
    /// depend on file order or on which proteins failed. Class labels are
    /// split separately so every class reaches training.
    pub fn split(&self, graphs: &[ContactGraph]) -> Split {
        let key = |g: &ContactGraph| {
            let h = content_hash([g.protein_id.as_bytes()]);
            derive_seed(self.cfg.split_seed, &[u64::from_str_radix(&h[..16], 16).expect("hex")])
        };
        let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
        for (i, g) in graphs.iter().enumerate() {
            let class = match g.graph_label {
                Some(Label::Class(c)) => Some(c),
                _ => None,
            };
            strata.entry(class).or_default().push(i);
        }
        let mut s = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
        for mut order in strata.into_values() {
            order.sort_by_key(|&i| (key(&graphs[i]), i));
            let n = order.len() as f64;
            let n_train = ((self.cfg.split[0] * n).round() as usize).clamp(1, order.len());
            let n_val = ((self.cfg.split[1] * n).round() as usize).min(order.len() - n_train);
            s.train.extend_from_slice(&order[..n_train]);
            s.val.extend_from_slice(&order[n_train..n_train + n_val]);
            s.test.extend_from_slice(&order[n_train + n_val..]);
        }
        for v in [&mut s.train, &mut s.val, &mut s.test] {
            v.sort_unstable();
        }
        s
    }

    pub fn run_names(&self) -> Vec<(usize, String)> {
        self.cfg.blob_grid.iter().map(|&k| (k, format!("k{k}"))).collect()
    }

    pub fn checkpoint_path(&self, run: &str, seed: u64) -> PathBuf {
        self.run.path(format!("train/{run}/seed_{seed}/model.ckpt"))
    }

    /// The given checkpoint, or the first seed of the first run.
    pub fn model(&self, checkpoint: Option<&Path>) -> CliResult<(Model, PathBuf)> {
        let path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => self.checkpoint_path(&self.run_names()[0].1, self.cfg.seeds[0]),
        };
        Ok((load_model(&path)?, path))
    }

    /// Active sites or domains keyed to the cached graphs, if configured.
    pub fn annotations(&self, kind: AnnotationKind, graphs: &[ContactGraph]) -> CliResult<Option<AnnotationSet>> {
        let path = match kind {
            AnnotationKind::ActiveSite => &self.cfg.active_sites,
            AnnotationKind::Domain => &self.cfg.domains,
            _ => &self.cfg.labels,
        };
        let Some(path) = path else { return Ok(None) };
        let sizes = graphs.iter().map(|g| (g.protein_id.clone(), g.n_nodes)).collect();
        Ok(Some(load_annotations(path, kind, &sizes)?))
    }

    pub fn method(&self, flag: Option<&str>) -> CliResult<Method> {
        match flag {
            Some(m) => m.parse(),
            None => Ok(self.cfg.method),
        }
    }
}

pub fn load_model(path: &Path) -> CliResult<Model> {
    let bytes = std::fs::read(path).map_err(|_| CliError::Data(format!("checkpoint {} is missing; run train first", path.display())))?;
    let ck = read_checkpoint(&mut bytes.as_slice()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Model::from_checkpoint(&ck)?)
}

pub fn run(cli: Cli) -> CliResult<()> {
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    if let Command::Synth { kind, count } = &cli.command {
        let seed = cli.seeds.first().copied().unwrap_or(7);
        return commands::synth::run(&RunDir::create(&cli.out)?, kind, *count, seed);
    }
    let config = cli.config.as_ref().ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let (mut cfg, text) = RunConfig::load(config)?;
    if !cli.seeds.is_empty() {
        cfg.seeds = cli.seeds.clone();
    }
    let run = RunDir::create(&cli.out)?;
    write_text(&run.path("config.snapshot"), &text)?;
    write_json(&run.path("cli.json"), &serde_json::json!({ "seeds": cfg.seeds, "jobs": cli.jobs, "command": format!("{:?}", cli.command) }))?;
    let ctx = Context { cfg, run, jobs: cli.jobs, plot_data: cli.plot_data };
    match &cli.command {
        Command::Featurize => commands::featurize::run(&ctx),
        Command::Train => commands::train::run(&ctx),
        Command::Eval { ensemble } => commands::eval::run(&ctx, *ensemble),
        Command::Explain { method, checkpoint } => commands::explain::run(&ctx, ctx.method(method.as_deref())?, checkpoint.as_deref()),
        Command::BioEval { method, checkpoint } => commands::bioeval::run(&ctx, ctx.method(method.as_deref())?, checkpoint.as_deref()),
        Command::Blobs { checkpoint } => commands::blobs::run(&ctx, checkpoint.as_deref()),
        Command::Report => commands::report::run(&ctx),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}
