use std::path::PathBuf;

use softblob::graph_builder::{build_contact_graph, read_graphs, write_graphs, ContactGraph, FeatureBlock};
use softblob::protein_io::{compute_sasa, load_annotations, load_embeddings, parse_pdb, AnnotationKind, ParseReport, ProteinStructure};

use crate::error::{CliError, CliResult};
use crate::run_dir::{cache_hit, content_hash, parallel_map, store_key, write_failures, write_json, Failure};
use crate::{Context, GRAPH_CACHE};

#[derive(Debug, serde::Serialize)]
struct ManifestEntry {
    protein_id: String,
    source: String,
    status: &'static str,
    residues: Option<usize>,
    undirected_edges: Option<usize>,
    parse: Option<ParseReport>,
    reason: Option<String>,
}

const OUTPUTS: [&str; 3] = ["graphs.sbgraph", "manifest.json", "failures.json"];

fn pdb_files(dir: &std::path::Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pdb")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no .pdb files in {}", dir.display())));
    }
    Ok(files)
}

fn cache_key(ctx: &Context, inputs: &[(String, Vec<u8>)]) -> CliResult<String> {
    let cfg = &ctx.cfg;
    let settings = serde_json::to_vec(&serde_json::json!({
        "features": cfg.features,
        "probe_radius": cfg.sasa.probe_radius,
        "sasa_points": cfg.sasa.sphere_points,
        "label_kind": cfg.label_kind,
    }))?;
    let mut parts: Vec<Vec<u8>> = vec![b"featurize-1".to_vec(), settings];
    for (name, bytes) in inputs {
        parts.push(name.as_bytes().to_vec());
        parts.push(bytes.clone());
    }
    for p in [&cfg.embeddings, &cfg.labels].into_iter().flatten() {
        parts.push(std::fs::read(p)?);
    }
    Ok(content_hash(parts.iter().map(Vec::as_slice)))
}

fn stem(p: &std::path::Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let dir = ctx.run.ensure("graphs")?;
    let inputs: Vec<(String, Vec<u8>)> = match (&cfg.graphs, &cfg.pdb_dir) {
        (Some(g), _) => vec![(g.display().to_string(), std::fs::read(g)?)],
        (None, Some(d)) => pdb_files(d)?.iter().map(|p| Ok((stem(p), std::fs::read(p)?))).collect::<CliResult<_>>()?,
        (None, None) => unreachable!("validated by the config"),
    };
    let key = cache_key(ctx, &inputs)?;
    if cache_hit(&dir, &key, &OUTPUTS) {
        log::info!("graph cache is current; nothing to do");
        println!("cache hit: {}", ctx.run.path(GRAPH_CACHE).display());
        return Ok(());
    }

    let mut failures = Vec::new();
    let mut manifest = Vec::new();
    let mut graphs: Vec<ContactGraph> = if cfg.graphs.is_some() {
        let graphs = read_graphs(&mut inputs[0].1.as_slice())?;
        for g in &graphs {
            manifest.push(ManifestEntry {
                protein_id: g.protein_id.clone(),
                source: inputs[0].0.clone(),
                status: "ok",
                residues: Some(g.n_nodes),
                undirected_edges: Some(g.num_undirected()),
                parse: None,
                reason: None,
            });
        }
        graphs
    } else {
        let parsed = parallel_map(ctx.jobs, &inputs, |_, (id, bytes)| -> Result<(ProteinStructure, ParseReport), String> {
            let (mut s, report) = parse_pdb(id, bytes).map_err(|e| e.to_string())?;
            s.validate().map_err(|e| e.to_string())?;
            compute_sasa(&mut s, cfg.sasa).map_err(|e| e.to_string())?;
            Ok((s, report))
        });
        let mut structures = Vec::new();
        for ((id, _), r) in inputs.iter().zip(parsed) {
            match r {
                Ok(ok) => structures.push(ok),
                Err(reason) => {
                    failures.push(Failure { protein_id: id.clone(), stage: "parse".into(), reason: reason.clone() });
                    manifest.push(ManifestEntry {
                        protein_id: id.clone(),
                        source: format!("{id}.pdb"),
                        status: "failed",
                        residues: None,
                        undirected_edges: None,
                        parse: None,
                        reason: Some(reason),
                    });
                }
            }
        }
        let embeddings = match (&cfg.embeddings, cfg.features.has(FeatureBlock::Esm)) {
            (Some(path), true) => Some(load_embeddings(path, &structures.iter().map(|(s, _)| s).collect::<Vec<_>>())?),
            _ => None,
        };
        let built = parallel_map(ctx.jobs, &structures, |_, (s, _)| {
            let emb = match &embeddings {
                Some(set) => Some(set.matrices.get(&s.id).ok_or_else(|| "no embedding block".to_string())?),
                None => None,
            };
            build_contact_graph(s, emb, &cfg.features).map_err(|e| e.to_string())
        });
        let mut out = Vec::new();
        for ((s, report), r) in structures.into_iter().zip(built) {
            let mut entry = ManifestEntry {
                protein_id: s.id.clone(),
                source: format!("{}.pdb", s.id),
                status: "ok",
                residues: Some(s.len()),
                undirected_edges: None,
                parse: Some(report),
                reason: None,
            };
            match r {
                Ok(g) => {
                    entry.undirected_edges = Some(g.num_undirected());
                    out.push(g);
                }
                Err(reason) => {
                    failures.push(Failure { protein_id: s.id.clone(), stage: "graph".into(), reason: reason.clone() });
                    entry.status = "failed";
                    entry.reason = Some(reason);
                }
            }
            manifest.push(entry);
        }
        out
    };

    if let Some(path) = &cfg.labels {
        let sizes = graphs.iter().map(|g| (g.protein_id.clone(), g.n_nodes)).collect();
        let set = load_annotations(path, cfg.label_kind, &sizes)?;
        graphs.retain_mut(|g| {
            let found = if cfg.label_kind == AnnotationKind::NodeLabel {
                set.node_label_vector(&g.protein_id, g.n_nodes).map(|v| g.node_labels = Some(v)).is_some()
            } else {
                set.labels.get(&g.protein_id).map(|l| g.graph_label = Some(l.clone())).is_some()
            };
            if !found {
                failures.push(Failure { protein_id: g.protein_id.clone(), stage: "labels".into(), reason: "no annotation row".into() });
                if let Some(e) = manifest.iter_mut().find(|e| e.protein_id == g.protein_id) {
                    e.status = "unlabelled";
                }
            }
            found
        });
    }
    graphs.sort_by(|a, b| a.protein_id.cmp(&b.protein_id));
    manifest.sort_by(|a, b| a.protein_id.cmp(&b.protein_id));
    if graphs.is_empty() {
        write_failures(&dir, &failures)?;
        return Err(CliError::Data("no protein could be featurized".into()));
    }

    let mut bytes = Vec::new();
    write_graphs(&mut bytes, &graphs)?;
    std::fs::write(dir.join("graphs.sbgraph"), bytes)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_failures(&dir, &failures)?;
    store_key(&dir, &key)?;
    println!("featurized {} protein(s), {} failure(s) -> {}", graphs.len(), failures.len(), ctx.run.path(GRAPH_CACHE).display());
    Ok(())
}
