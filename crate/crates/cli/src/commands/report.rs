use std::fmt::Write as _;
use std::path::Path;

use serde_json::{Map, Value};
use softblob::training::TrainHistory;

use crate::error::{CliError, CliResult};
use crate::run_dir::{read_json, write_json, write_text};
use crate::Context;

/// Per-protein listings stay in their own reports.
const SKIP: [&str; 3] = ["per_protein", "proteins", "members"];

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                if !SKIP.contains(&k.as_str()) {
                    flatten(&key(k), v, out);
                }
            }
        }
        Value::Array(a) => {
            for (i, v) in a.iter().enumerate() {
                flatten(&key(&i.to_string()), v, out);
            }
        }
        Value::Null => {}
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn subdirs(dir: &Path) -> Vec<String> {
    let mut out: Vec<String> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    out.sort();
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let mut sections = Map::new();
    let mut training = Map::new();
    let mut curves = String::from("run,seed,epoch,train_loss,val_loss,val_metric,lr,tau\n");
    for run in subdirs(&ctx.run.path("train")) {
        let ens = ctx.run.path(format!("train/{run}/ensemble.json"));
        if ens.exists() {
            training.insert(run.clone(), read_json(&ens)?);
        }
        for seed in subdirs(&ctx.run.path(format!("train/{run}"))) {
            let h = ctx.run.path(format!("train/{run}/{seed}/history.json"));
            if !h.exists() {
                continue;
            }
            let h: TrainHistory = read_json(&h)?;
            for e in &h.epochs {
                let m = e.val_metric.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(curves, "{run},{seed},{},{},{},{m},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr, e.tau);
            }
        }
    }
    if !training.is_empty() {
        sections.insert("train".into(), Value::Object(training));
    }
    let eval = ctx.run.path("eval/report.json");
    if eval.exists() {
        sections.insert("eval".into(), read_json(&eval)?);
    }
    let mut bio = Map::new();
    for method in subdirs(&ctx.run.path("bioeval")) {
        let p = ctx.run.path(format!("bioeval/{method}/report.json"));
        if p.exists() {
            bio.insert(method, read_json(&p)?);
        }
    }
    if !bio.is_empty() {
        sections.insert("bioeval".into(), Value::Object(bio));
    }
    let blobs = ctx.run.path("blobs/report.json");
    if blobs.exists() {
        sections.insert("blobs".into(), read_json(&blobs)?);
    }
    if sections.is_empty() {
        return Err(CliError::Data("nothing to report; run train, eval, bio-eval or blobs first".into()));
    }

    let mut csv = String::from("section,key,value\n");
    for (name, v) in &sections {
        let mut rows = Vec::new();
        flatten("", v, &mut rows);
        for (k, v) in rows {
            let _ = writeln!(csv, "{name},{},{}", csv_field(&k), csv_field(&v));
        }
    }
    write_json(&ctx.run.path("report.json"), &sections)?;
    write_text(&ctx.run.path("report.csv"), &csv)?;
    if ctx.plot_data {
        write_text(&ctx.run.path("plot/training_curves.csv"), &curves)?;
    }
    println!("report: {} section(s) -> {}", sections.len(), ctx.run.path("report.json").display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_skips_listings() {
        let v = serde_json::json!({ "a": { "b": 1.5, "per_protein": [1, 2] }, "c": [true, null], "d": "x,y" });
        let mut rows = Vec::new();
        flatten("", &v, &mut rows);
        assert_eq!(rows, [("a.b".into(), "1.5".into()), ("c.0".into(), "true".into()), ("d".into(), "x,y".into())]);
        assert_eq!(csv_field("x,y"), "\"x,y\"");
    }
}
