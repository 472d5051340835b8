use std::fmt::Write as _;

use super::{predict, select, task_metrics};
use crate::error::CliResult;
use crate::run_dir::{write_json, write_text};
use crate::{load_model, Context};

pub fn run(ctx: &Context, ensemble: bool) -> CliResult<()> {
    let graphs = ctx.graphs()?;
    let split = ctx.split(&graphs);
    let test = if split.test.is_empty() {
        log::warn!("test split is empty; scoring the validation split");
        select(&graphs, &split.val)
    } else {
        select(&graphs, &split.test)
    };
    let mut runs = serde_json::Map::new();
    let mut csv = String::from("run,member,metric,value\n");
    for (blobs, run) in ctx.run_names() {
        let models = ctx.cfg.seeds.iter().map(|&s| load_model(&ctx.checkpoint_path(&run, s))).collect::<CliResult<Vec<_>>>()?;
        let task = models[0].config.task;
        let mut members = serde_json::Map::new();
        let mut means: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
        for (seed, m) in ctx.cfg.seeds.iter().zip(&models) {
            let metrics = task_metrics(task, &predict(std::slice::from_ref(m), &test)?, &test)?;
            for (k, v) in &metrics {
                let _ = writeln!(csv, "{run},seed_{seed},{k},{v}");
                means.entry(k.clone()).or_default().push(*v);
            }
            members.insert(format!("seed_{seed}"), serde_json::to_value(&metrics)?);
        }
        let mean: std::collections::BTreeMap<String, f64> = means.iter().map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64)).collect();
        let mut entry = serde_json::json!({ "blobs": blobs, "task": task, "test_proteins": test.len(), "members": members, "member_mean": mean });
        if ensemble {
            let metrics = task_metrics(task, &predict(&models, &test)?, &test)?;
            for (k, v) in &metrics {
                let _ = writeln!(csv, "{run},ensemble,{k},{v}");
            }
            entry["ensemble"] = serde_json::to_value(&metrics)?;
        }
        println!("{run}: {}", serde_json::to_string(&entry["member_mean"])?);
        runs.insert(run, entry);
    }
    let dir = ctx.run.ensure("eval")?;
    write_json(&dir.join("report.json"), &runs)?;
    write_text(&dir.join("metrics.csv"), &csv)
}
