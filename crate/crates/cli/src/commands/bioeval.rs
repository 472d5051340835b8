use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use softblob::diff::{argmax, stream_rng};
use softblob::evaluation::{
    class_stability, enrichment, fidelity_suite, sasa_gap, spatial_zscore, tertiary_contact_stats, top_fraction_set, EnrichmentTable,
    FidelityRow, TertiaryStats, ENRICHMENT_DELTA, SPARSITY_LEVELS,
};
use softblob::graph_builder::ContactGraph;
use softblob::models::GraphBatch;
use softblob::protein_io::{AminoAcid, Label};

use crate::config::Method;
use crate::error::{CliError, CliResult};
use crate::run_dir::{parallel_map, write_failures, write_json, write_text, Failure};
use crate::Context;

#[derive(serde::Deserialize)]
struct ImportanceRow {
    protein_id: String,
    residue: usize,
    importance: f64,
}

#[derive(serde::Deserialize)]
struct EdgeRow {
    protein_id: String,
    edge_i: usize,
    edge_j: usize,
    #[serde(rename = "M")]
    m: f64,
}

#[derive(serde::Deserialize)]
struct FeatureRow {
    protein_id: String,
    feature_index: usize,
    #[serde(rename = "F")]
    f: f64,
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}; run explain first", path.display())))?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

fn group_values(rows: impl IntoIterator<Item = (String, usize, f64)>) -> CliResult<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (id, k, v) in rows {
        let vals = out.entry(id.clone()).or_default();
        if k != vals.len() {
            return Err(CliError::Data(format!("{id}: rows out of order at index {k}")));
        }
        vals.push(v);
    }
    Ok(out)
}

#[derive(Default)]
struct ProteinResult {
    sasa_gap: Option<f64>,
    z: Option<f64>,
    tertiary: Option<TertiaryStats>,
    failures: Vec<Failure>,
}

#[derive(serde::Serialize)]
struct B1 {
    skipped: Option<String>,
    per_class: BTreeMap<String, EnrichmentTable>,
    pooled: Option<EnrichmentTable>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn run(ctx: &Context, method: Method, checkpoint: Option<&Path>) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let graphs = ctx.graphs()?;
    let by_id: HashMap<&str, &ContactGraph> = graphs.iter().map(|g| (g.protein_id.as_str(), g)).collect();
    let src = ctx.run.path(format!("explain/{}", method.name()));
    let importance = group_values(
        read_rows::<ImportanceRow>(&src.join("residue_importance.csv"))?.into_iter().map(|r| (r.protein_id, r.residue, r.importance)),
    )?;
    let edge_masks: BTreeMap<String, Vec<f64>> = if method == Method::Gnnexplainer {
        let rows = read_rows::<EdgeRow>(&src.join("edge_masks.csv"))?;
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in rows {
            let g = by_id.get(r.protein_id.as_str()).ok_or_else(|| CliError::Data(format!("{} is not in the graph cache", r.protein_id)))?;
            let v = out.entry(r.protein_id.clone()).or_default();
            if v.len() >= g.num_undirected() || g.undirected(v.len()) != (r.edge_i, r.edge_j) {
                return Err(CliError::Data(format!("{}: edge ({}, {}) does not match the cached graph", r.protein_id, r.edge_i, r.edge_j)));
            }
            v.push(r.m);
        }
        out
    } else {
        BTreeMap::new()
    };

    let items: Vec<(&ContactGraph, &Vec<f64>)> = importance
        .iter()
        .map(|(id, imp)| {
            let g = by_id.get(id.as_str()).ok_or_else(|| CliError::Data(format!("{id} is not in the graph cache")))?;
            if imp.len() != g.n_nodes {
                return Err(CliError::Data(format!("{id}: {} importances for {} residues", imp.len(), g.n_nodes)));
            }
            Ok((*g, imp))
        })
        .collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(CliError::Data("no explained proteins found".into()));
    }

    let results = parallel_map(ctx.jobs, &items, |i, (g, imp)| {
        let mut r = ProteinResult::default();
        let fail = |stage: &str, e: &dyn std::fmt::Display| Failure { protein_id: g.protein_id.clone(), stage: stage.into(), reason: e.to_string() };
        match sasa_gap(imp, &g.rsa, cfg.top_fraction) {
            Ok(d) => r.sasa_gap = Some(d),
            Err(e) => r.failures.push(fail("sasa_gap", &e)),
        }
        let top = top_fraction_set(imp, cfg.top_fraction);
        let mut rng = stream_rng(cfg.seeds[0], &[0xb3, i as u64]);
        match spatial_zscore(&g.coords, &top, cfg.z_samples, &mut rng) {
            Ok(z) => r.z = Some(z.z),
            Err(e) => r.failures.push(fail("spatial_z", &e)),
        }
        if let Some(m) = edge_masks.get(&g.protein_id) {
            match tertiary_contact_stats(m, g, cfg.seq_sep, cfg.peak_range) {
                Ok(t) => r.tertiary = Some(t),
                Err(e) => r.failures.push(fail("tertiary", &e)),
            }
        }
        r
    });

    let dir = ctx.run.ensure(format!("bioeval/{}", method.name()))?;
    let failures: Vec<Failure> = results.iter().flat_map(|r| r.failures.clone()).collect();

    // B1: pooled within class, over the top-fraction residues of each protein
    let tops: Vec<Vec<usize>> = items.iter().map(|(_, imp)| top_fraction_set(imp, cfg.top_fraction)).collect();
    let classes: Vec<Option<usize>> = items.iter().map(|(g, _)| match g.graph_label { Some(Label::Class(c)) => Some(c), _ => None }).collect();
    let b1 = if classes.iter().all(Option::is_none) {
        B1 { skipped: Some("no class annotations".into()), per_class: BTreeMap::new(), pooled: None }
    } else {
        let mut per_class = BTreeMap::new();
        let mut groups: BTreeMap<usize, Vec<(&[AminoAcid], &[usize])>> = BTreeMap::new();
        for (((g, _), top), c) in items.iter().zip(&tops).zip(&classes) {
            if let Some(c) = c {
                groups.entry(*c).or_default().push((g.residues.as_slice(), top.as_slice()));
            }
        }
        for (c, group) in &groups {
            per_class.insert(c.to_string(), enrichment(group, ENRICHMENT_DELTA)?);
        }
        let all: Vec<(&[AminoAcid], &[usize])> = items.iter().zip(&tops).map(|((g, _), t)| (g.residues.as_slice(), t.as_slice())).collect();
        B1 { skipped: None, per_class, pooled: Some(enrichment(&all, ENRICHMENT_DELTA)?) }
    };

    let gaps: Vec<f64> = results.iter().filter_map(|r| r.sasa_gap).collect();
    let zs: Vec<f64> = results.iter().filter_map(|r| r.z).collect();
    let b2 = serde_json::json!({ "mean_delta_rsa": mean(&gaps), "defined": gaps.len(), "undefined": items.len() - gaps.len() });
    let b3 = serde_json::json!({
        "mean_z": mean(&zs),
        "fraction_below_minus_one": mean(&zs.iter().map(|&z| f64::from(u8::from(z < -1.0))).collect::<Vec<_>>()),
        "defined": zs.len(),
        "undefined": items.len() - zs.len(),
        "samples": cfg.z_samples,
    });

    let terts: Vec<&TertiaryStats> = results.iter().filter_map(|r| r.tertiary.as_ref()).collect();
    let mut histogram: Vec<usize> = Vec::new();
    let (mut imp, mut imp_long, mut rest, mut rest_long, mut peak) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in &terts {
        if histogram.len() < t.histogram.len() {
            histogram.resize(t.histogram.len(), 0);
        }
        for (a, b) in histogram.iter_mut().zip(&t.histogram) {
            *a += b;
        }
        imp += t.important_edges as f64;
        rest += t.other_edges as f64;
        imp_long += t.long_range_fraction_important.unwrap_or(0.0) * t.important_edges as f64;
        rest_long += t.long_range_fraction_other.unwrap_or(0.0) * t.other_edges as f64;
        peak += t.peak_fraction.unwrap_or(0.0) * t.important_edges as f64;
    }
    let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
    let b4 = if method == Method::Gnnexplainer {
        serde_json::json!({
            "important_edges": imp,
            "other_edges": rest,
            "long_range_fraction_important": ratio(imp_long, imp),
            "long_range_fraction_other": ratio(rest_long, rest),
            "peak_range": [cfg.peak_range.0, cfg.peak_range.1],
            "peak_fraction": ratio(peak, imp),
            "seq_sep": cfg.seq_sep,
            "bin_width": 0.5,
            "histogram": histogram,
            "proteins_without_important_edges": terts.iter().filter(|t| t.empty_important).count(),
        })
    } else {
        serde_json::json!({ "skipped": "needs edge masks" })
    };

    let (model, ck_path) = ctx.model(checkpoint)?;
    let fidelity: Option<Vec<FidelityRow>>;
    let mut stability = BTreeMap::new();
    if method == Method::Gnnexplainer {
        let pairs: Vec<(&ContactGraph, Vec<f64>)> =
            items.iter().filter_map(|(g, _)| edge_masks.get(&g.protein_id).map(|m| (*g, m.clone()))).collect();
        let gs: Vec<&ContactGraph> = pairs.iter().map(|(g, _)| *g).collect();
        let ms: Vec<Vec<f64>> = pairs.into_iter().map(|(_, m)| m).collect();
        fidelity = Some(fidelity_suite(&model, &gs, &ms, &SPARSITY_LEVELS)?);
        let fm = group_values(read_rows::<FeatureRow>(&src.join("feature_masks.csv"))?.into_iter().map(|r| (r.protein_id, r.feature_index, r.f)))?;
        let mut masks = Vec::new();
        let mut predicted = Vec::new();
        for g in &gs {
            if let Some(f) = fm.get(&g.protein_id) {
                let s = model.predict_scores(&GraphBatch::single(g))?;
                masks.push(f.clone());
                predicted.push(argmax(s.row(0)));
            }
        }
        stability = class_stability(&masks, &predicted);
    } else {
        fidelity = None;
    }

    let mut per_protein = String::from("protein_id,class,sasa_gap,z_spatial,important_edges,long_range_fraction_important\n");
    for (((g, _), r), c) in items.iter().zip(&results).zip(&classes) {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let (ie, lr) = match &r.tertiary {
            Some(t) => (t.important_edges.to_string(), opt(t.long_range_fraction_important)),
            None => (String::new(), String::new()),
        };
        let c = c.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(per_protein, "{},{c},{},{},{ie},{lr}", g.protein_id, opt(r.sasa_gap), opt(r.z));
    }
    write_text(&dir.join("per_protein.csv"), &per_protein)?;

    if ctx.plot_data {
        write_plots(&dir, &items, &b1, &histogram, &results)?;
    }
    let report = serde_json::json!({
        "method": method.name(),
        "checkpoint": ck_path,
        "proteins": items.len(),
        "top_fraction": cfg.top_fraction,
        "biological": { "b1_enrichment": b1, "b2_sasa": b2, "b3_spatial": b3, "b4_tertiary": b4 },
        "fidelity": {
            "skipped": fidelity.is_none().then_some("needs edge masks"),
            "levels": fidelity,
            "feature_mask_stability": stability,
        },
    });
    write_json(&dir.join("report.json"), &report)?;
    write_failures(&dir, &failures)?;
    println!("bio-eval over {} protein(s) -> {}", items.len(), dir.display());
    Ok(())
}

fn write_plots(dir: &Path, items: &[(&ContactGraph, &Vec<f64>)], b1: &B1, histogram: &[usize], results: &[ProteinResult]) -> CliResult<()> {
    let plot = dir.join("plot");
    // mean RSA by importance decile, ranks taken within each protein
    let mut sums = [0.0; 10];
    let mut counts = [0usize; 10];
    for (g, imp) in items {
        let order = softblob::evaluation::top_k_indices(imp, imp.len());
        for (rank, &i) in order.iter().enumerate() {
            let d = rank * 10 / order.len();
            sums[d] += g.rsa[i];
            counts[d] += 1;
        }
    }
    let mut s = String::from("importance_decile,mean_rsa,residues\n");
    for d in 0..10 {
        let m = if counts[d] > 0 { (sums[d] / counts[d] as f64).to_string() } else { String::new() };
        let _ = writeln!(s, "{},{m},{}", d + 1, counts[d]);
    }
    write_text(&plot.join("sasa_profile.csv"), &s)?;

    let mut s = String::from("group,amino_acid,log2_enrichment\n");
    let tables = b1.per_class.iter().map(|(k, t)| (k.as_str(), t)).chain(b1.pooled.iter().map(|t| ("all", t)));
    for (group, t) in tables {
        for (a, v) in AminoAcid::ALL.iter().zip(&t.enrichment) {
            let _ = writeln!(s, "{group},{},{v}", a.one_letter());
        }
    }
    write_text(&plot.join("enrichment_matrix.csv"), &s)?;

    let mut s = String::from("bin_start,bin_end,count\n");
    for (b, c) in histogram.iter().enumerate() {
        let _ = writeln!(s, "{},{},{c}", b as f64 * 0.5, (b + 1) as f64 * 0.5);
    }
    write_text(&plot.join("distance_histogram.csv"), &s)?;

    let mut s = String::from("protein_id,z_spatial\n");
    for ((g, _), r) in items.iter().zip(results) {
        if let Some(z) = r.z {
            let _ = writeln!(s, "{},{z}", g.protein_id);
        }
    }
    write_text(&plot.join("z_distribution.csv"), &s)
}
