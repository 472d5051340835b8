use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use softblob::diff::write_checkpoint;
use softblob::graph_builder::ContactGraph;
use softblob::models::{Model, ModelConfig};
use softblob::training::{train, TrainConfig, TrainError, TrainHistory};

use super::{infer_outputs, predict, select, task_metrics};
use crate::error::{CliError, CliResult};
use crate::run_dir::{cache_hit, content_hash, parallel_map, read_json, store_key, write_json, write_text};
use crate::{load_model, Context};

struct Job {
    blobs: usize,
    run: String,
    seed: u64,
}

fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_metric,lr,tau\n");
    for e in &h.epochs {
        let metric = e.val_metric.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, metric, e.lr, e.tau);
    }
    s
}

fn save(dir: &Path, file: &str, model: &Model, history: &TrainHistory) -> CliResult<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &model.to_checkpoint())?;
    std::fs::write(dir.join(file), bytes)?;
    write_json(&dir.join("history.json"), history)?;
    write_text(&dir.join("history.csv"), &history_csv(history))
}

const OUTPUTS: [&str; 3] = ["model.ckpt", "history.json", "history.csv"];

pub fn run(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let graphs = ctx.graphs()?;
    let split = ctx.split(&graphs);
    let ids = |idx: &[usize]| idx.iter().map(|&i| graphs[i].protein_id.clone()).collect::<Vec<_>>();
    let split_ids = serde_json::json!({ "train": ids(&split.train), "val": ids(&split.val), "test": ids(&split.test) });
    write_json(&ctx.run.path("split.json"), &split_ids)?;

    let train_set: Vec<ContactGraph> = split.train.iter().map(|&i| graphs[i].clone()).collect();
    let val_set: Vec<ContactGraph> = if split.val.is_empty() {
        log::warn!("validation split is empty; early stopping watches the training set");
        train_set.clone()
    } else {
        split.val.iter().map(|&i| graphs[i].clone()).collect()
    };
    let outputs = match cfg.outputs {
        Some(o) => o,
        None => infer_outputs(cfg.model.task, &graphs)?,
    };
    let graph_key = std::fs::read_to_string(ctx.run.path("graphs/cache.key")).unwrap_or_default();
    let jobs: Vec<Job> = ctx
        .run_names()
        .into_iter()
        .flat_map(|(blobs, run)| cfg.seeds.iter().map(move |&seed| Job { blobs, run: run.clone(), seed }))
        .collect();

    let results = parallel_map(ctx.jobs, &jobs, |_, job| -> CliResult<()> {
        let dir = ctx.run.ensure(format!("train/{}/seed_{}", job.run, job.seed))?;
        let mcfg = ModelConfig {
            in_dim: graphs[0].node_dim(),
            edge_dim: graphs[0].edge_dim(),
            blobs: job.blobs,
            outputs,
            ..cfg.model.clone()
        };
        let tcfg = TrainConfig { seed: job.seed, ..cfg.train.clone() };
        let key = content_hash([
            graph_key.as_bytes(),
            serde_json::to_string(&mcfg)?.as_bytes(),
            serde_json::to_string(&tcfg)?.as_bytes(),
            split_ids.to_string().as_bytes(),
        ]);
        if cache_hit(&dir, &key, &OUTPUTS) {
            log::info!("{} seed {}: checkpoint is current", job.run, job.seed);
            return Ok(());
        }
        log::info!("{} seed {}: training on {} graphs", job.run, job.seed, train_set.len());
        let model = Model::new(mcfg, job.seed)?;
        match train(model, &train_set, &val_set, &tcfg) {
            Ok((model, history)) => {
                save(&dir, "model.ckpt", &model, &history)?;
                store_key(&dir, &key)
            }
            Err(TrainError::Diverged { epoch, reason, last_good, history }) => {
                save(&dir, "last_good.ckpt", &last_good, &history)?;
                Err(CliError::Numeric(format!("{} seed {} diverged at epoch {epoch}: {reason}", job.run, job.seed)))
            }
            Err(e) => Err(e.into()),
        }
    });
    let mut first_err = None;
    for (job, r) in jobs.iter().zip(results) {
        if let Err(e) = r {
            log::error!("{} seed {}: {e}", job.run, job.seed);
            first_err.get_or_insert(e);
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    let val_refs = if split.val.is_empty() { select(&graphs, &split.train) } else { select(&graphs, &split.val) };
    for (_, run) in ctx.run_names() {
        let mut members = BTreeMap::new();
        let mut models = Vec::new();
        for &seed in &cfg.seeds {
            let m = load_model(&ctx.checkpoint_path(&run, seed))?;
            let h: TrainHistory = read_json(&ctx.run.path(format!("train/{run}/seed_{seed}/history.json")))?;
            let metrics = task_metrics(m.config.task, &predict(std::slice::from_ref(&m), &val_refs)?, &val_refs)?;
            members.insert(seed.to_string(), serde_json::json!({ "best_epoch": h.best_epoch, "epochs": h.epochs.len(), "val": metrics }));
            models.push(m);
        }
        let ensemble = if models.len() > 1 { Some(task_metrics(models[0].config.task, &predict(&models, &val_refs)?, &val_refs)?) } else { None };
        write_json(&ctx.run.path(format!("train/{run}/ensemble.json")), &serde_json::json!({ "members": members, "ensemble_val": ensemble }))?;
        println!("{run}: {} checkpoint(s) under {}", models.len(), ctx.run.path(format!("train/{run}")).display());
    }
    Ok(())
}
