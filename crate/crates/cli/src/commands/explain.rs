use std::fmt::Write as _;
use std::path::Path;

use softblob::explainers::{
    gnn_explain, integrated_gradients, node_importance, summarize, write_attributions, write_edge_masks, write_feature_masks, Attribution,
    ExplanationMask,
};
use softblob::graph_builder::ContactGraph;

use super::select;
use crate::config::Method;
use crate::error::{CliError, CliResult};
use crate::run_dir::{parallel_map, write_failures, write_json, write_text, Failure};
use crate::Context;

enum Explained {
    Mask(ExplanationMask),
    Ig(Attribution),
}

/// Test proteins (validation when the test split is empty), capped by `explain_limit`.
pub fn targets<'a>(ctx: &Context, graphs: &'a [ContactGraph]) -> Vec<&'a ContactGraph> {
    let split = ctx.split(graphs);
    let mut out = if split.test.is_empty() { select(graphs, &split.val) } else { select(graphs, &split.test) };
    if ctx.cfg.explain_limit > 0 {
        out.truncate(ctx.cfg.explain_limit);
    }
    out
}

pub fn run(ctx: &Context, method: Method, checkpoint: Option<&Path>) -> CliResult<()> {
    let graphs = ctx.graphs()?;
    let (model, ck_path) = ctx.model(checkpoint)?;
    if model.config.task == softblob::models::TaskKind::Node {
        return Err(CliError::Config("explanations target graph-level models".into()));
    }
    let chosen = targets(ctx, &graphs);
    log::info!("explaining {} protein(s) with {}", chosen.len(), method.name());
    let results = parallel_map(ctx.jobs, &chosen, |_, g| -> Result<Explained, String> {
        match method {
            Method::Gnnexplainer => gnn_explain(&model, g, &ctx.cfg.explainer).map(Explained::Mask),
            Method::Ig => integrated_gradients(&model, g, None, ctx.cfg.ig_steps).map(Explained::Ig),
        }
        .map_err(|e| e.to_string())
    });

    let dir = ctx.run.ensure(format!("explain/{}", method.name()))?;
    let mut failures = Vec::new();
    let mut importance = String::from("protein_id,residue,importance\n");
    let mut masks = Vec::new();
    let mut attrs = Vec::new();
    for (g, r) in chosen.iter().zip(results) {
        match r {
            Ok(Explained::Mask(m)) => {
                for (i, v) in node_importance(&m.edge_mask, g).iter().enumerate() {
                    let _ = writeln!(importance, "{},{i},{v}", g.protein_id);
                }
                masks.push((*g, m));
            }
            Ok(Explained::Ig(a)) => {
                for r in 0..a.values.rows() {
                    let v: f64 = a.values.row(r).iter().map(|x| x.abs()).sum();
                    let _ = writeln!(importance, "{},{r},{v}", g.protein_id);
                }
                attrs.push(a);
            }
            Err(reason) => failures.push(Failure { protein_id: g.protein_id.clone(), stage: "explain".into(), reason }),
        }
    }
    write_text(&dir.join("residue_importance.csv"), &importance)?;
    let done;
    match method {
        Method::Gnnexplainer => {
            let items: Vec<(&ContactGraph, &ExplanationMask)> = masks.iter().map(|(g, m)| (*g, m)).collect();
            let mut buf = Vec::new();
            write_edge_masks(&mut buf, &items)?;
            std::fs::write(dir.join("edge_masks.csv"), &buf)?;
            buf.clear();
            write_feature_masks(&mut buf, &masks.iter().map(|(_, m)| m).collect::<Vec<_>>())?;
            std::fs::write(dir.join("feature_masks.csv"), &buf)?;
            let summaries: Vec<_> = masks.iter().map(|(_, m)| summarize(m, &ctx.cfg.explainer, &ctx.cfg.features)).collect();
            write_json(
                &dir.join("summary.json"),
                &serde_json::json!({ "method": "gnnexplainer", "checkpoint": ck_path, "explainer": ctx.cfg.explainer, "proteins": summaries }),
            )?;
            done = masks.len();
        }
        Method::Ig => {
            let mut buf = Vec::new();
            write_attributions(&mut buf, &attrs.iter().collect::<Vec<_>>())?;
            std::fs::write(dir.join("attributions.csv"), &buf)?;
            let rows: Vec<_> = attrs
                .iter()
                .map(|a| {
                    let delta = a.f_input - a.f_baseline;
                    serde_json::json!({
                        "protein_id": a.protein_id,
                        "target": a.target,
                        "f_input": a.f_input,
                        "f_baseline": a.f_baseline,
                        "completeness_gap": a.completeness_gap(),
                        "relative_gap": a.completeness_gap() / delta.abs().max(1e-12),
                    })
                })
                .collect();
            write_json(
                &dir.join("summary.json"),
                &serde_json::json!({ "method": "ig", "checkpoint": ck_path, "steps": ctx.cfg.ig_steps, "baseline": "zeros", "proteins": rows }),
            )?;
            done = attrs.len();
        }
    }
    write_failures(&dir, &failures)?;
    println!("explained {done} protein(s) with {}, {} failure(s) -> {}", method.name(), failures.len(), dir.display());
    Ok(())
}
