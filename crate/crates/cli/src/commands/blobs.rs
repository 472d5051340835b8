use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use softblob::diff::Tape;
use softblob::evaluation::{
    active_blob_analysis, blob_importance, blob_structure_stats, graph_blobs, hard_assignments, jaccard_domains, BlobStats, ProteinBlobs,
};
use softblob::graph_builder::ContactGraph;
use softblob::models::{GraphBatch, Model, ModelKind};
use softblob::protein_io::AnnotationKind;

use crate::error::{CliError, CliResult};
use crate::run_dir::{parallel_map, write_failures, write_json, write_text, Failure};
use crate::Context;

struct ProteinOut {
    hard: Vec<usize>,
    importance: Vec<f64>,
    stats: BlobStats,
}

fn analyse(model: &Model, g: &ContactGraph) -> CliResult<ProteinOut> {
    let batch = GraphBatch::single(g);
    let mut tape = Tape::new();
    let pv = model.bind(&mut tape, false);
    let out = model.forward(&mut tape, &pv, &batch, model.eval_options())?;
    let (Some(a), Some(b)) = (out.assignment, out.blobs) else {
        return Err(CliError::Config("the model has no blob layer".into()));
    };
    let hard = hard_assignments(tape.value(a));
    let importance = blob_importance(&graph_blobs(tape.value(b), 1, 0));
    let stats = blob_structure_stats(&hard, model.config.blobs, &g.rsa, &g.coords);
    Ok(ProteinOut { hard, importance, stats })
}

pub fn run(ctx: &Context, checkpoint: Option<&Path>) -> CliResult<()> {
    let graphs = ctx.graphs()?;
    let (model, ck_path) = ctx.model(checkpoint)?;
    if model.config.kind != ModelKind::SoftBlobGin {
        return Err(CliError::Config(format!("blob analysis needs a softblobgin checkpoint, got {:?}", model.config.kind)));
    }
    let k = model.config.blobs;
    let results = parallel_map(ctx.jobs, &graphs, |_, g| analyse(&model, g));
    let mut failures = Vec::new();
    let mut done: Vec<(&ContactGraph, ProteinOut)> = Vec::new();
    for (g, r) in graphs.iter().zip(results) {
        match r {
            Ok(p) => done.push((g, p)),
            Err(CliError::Config(m)) => return Err(CliError::Config(m)),
            Err(e) => failures.push(Failure { protein_id: g.protein_id.clone(), stage: "blobs".into(), reason: e.to_string() }),
        }
    }

    let sites = ctx.annotations(AnnotationKind::ActiveSite, &graphs)?;
    let active = sites.as_ref().map(|s| {
        let items: Vec<ProteinBlobs> = done
            .iter()
            .map(|(g, p)| ProteinBlobs {
                protein_id: &g.protein_id,
                hard: &p.hard,
                importance: &p.importance,
                active_sites: s.active_sites.get(&g.protein_id),
            })
            .collect();
        active_blob_analysis(&items, ctx.cfg.active_mode)
    });

    let domains = ctx.annotations(AnnotationKind::Domain, &graphs)?;
    let mut jaccard = BTreeMap::new();
    if let Some(d) = &domains {
        for (g, p) in &done {
            let Some(segs) = d.domains.get(&g.protein_id) else { continue };
            match jaccard_domains(&p.hard, k, segs) {
                Ok(j) => {
                    jaccard.insert(g.protein_id.clone(), j);
                }
                Err(e) => failures.push(Failure { protein_id: g.protein_id.clone(), stage: "jaccard".into(), reason: e.to_string() }),
            }
        }
    }
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);

    let dir = ctx.run.ensure("blobs")?;
    let mut csv = String::from("protein_id,blob,size,importance,mean_rsa,mean_intra_distance\n");
    for (g, p) in &done {
        let mut sizes = vec![0usize; k];
        for &b in &p.hard {
            sizes[b] += 1;
        }
        let by_blob: BTreeMap<usize, _> = p.stats.blobs.iter().map(|b| (b.blob, b)).collect();
        for b in 0..k {
            let (rsa, dist) = match by_blob.get(&b) {
                Some(s) => (s.mean_rsa.to_string(), s.mean_intra_distance.map(|d| d.to_string()).unwrap_or_default()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(csv, "{},{b},{},{},{rsa},{dist}", g.protein_id, sizes[b], p.importance[b]);
        }
    }
    write_text(&dir.join("blobs.csv"), &csv)?;

    let per_protein: Vec<_> = done
        .iter()
        .map(|(g, p)| serde_json::json!({ "protein_id": g.protein_id, "importance": p.importance, "structure": p.stats }))
        .collect();
    let report = serde_json::json!({
        "checkpoint": ck_path,
        "blobs": k,
        "proteins": done.len(),
        "mean_empty_blobs": mean(done.iter().map(|(_, p)| p.stats.empty_blobs as f64).collect()),
        "mean_core_rsa": mean(done.iter().map(|(_, p)| p.stats.core_mean_rsa).collect()),
        "mean_rest_rsa": mean(done.iter().filter_map(|(_, p)| p.stats.rest_mean_rsa).collect()),
        "active_sites": active,
        "domain_jaccard": if domains.is_some() { serde_json::json!({ "mean": mean(jaccard.values().copied().collect()), "per_protein": jaccard }) } else { serde_json::Value::Null },
        "per_protein": per_protein,
    });
    write_json(&dir.join("report.json"), &report)?;

    if ctx.plot_data {
        if let Some(a) = &active {
            let mut counts = vec![0usize; k];
            for p in &a.proteins {
                counts[p.rank - 1] += 1;
            }
            let mut s = String::from("rank,proteins\n");
            for (r, c) in counts.iter().enumerate() {
                let _ = writeln!(s, "{},{c}", r + 1);
            }
            write_text(&dir.join("plot/active_rank_distribution.csv"), &s)?;
        }
        let mut s = String::from("protein_id,blob,importance\n");
        for (g, p) in &done {
            for (b, v) in p.importance.iter().enumerate() {
                let _ = writeln!(s, "{},{b},{v}", g.protein_id);
            }
        }
        write_text(&dir.join("plot/blob_importance.csv"), &s)?;
    }
    write_failures(&dir, &failures)?;
    println!("blob analysis over {} protein(s) -> {}", done.len(), dir.display());
    Ok(())
}
