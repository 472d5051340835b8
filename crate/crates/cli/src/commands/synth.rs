use std::fmt::Write as _;

use softblob::graph_builder::ContactGraph;
use softblob::protein_io::{write_pdb, ProteinStructure};
use softblob::synthetic::{planted_motif_dataset, two_hop_dataset, MotifDatasetConfig, NodeTaskConfig};

use crate::error::{CliError, CliResult};
use crate::run_dir::{write_text, RunDir};

fn write_structures(dir: &RunDir, graphs: &[&ContactGraph]) -> CliResult<()> {
    for g in graphs {
        let trace: Vec<_> = g.residues.iter().copied().zip(g.coords.iter().copied()).collect();
        let s = ProteinStructure::from_ca_trace(&g.protein_id, &trace);
        write_text(&dir.path(format!("pdb/{}.pdb", g.protein_id)), &write_pdb(&s))?;
    }
    Ok(())
}

fn join(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes `pdb/`, annotation CSVs and a `run.conf` that trains on them.
pub fn run(dir: &RunDir, kind: &str, count: usize, seed: u64) -> CliResult<()> {
    if count < 4 {
        return Err(CliError::Usage("--count must be at least 4".into()));
    }
    let conf = match kind {
        "motif" => {
            let cfg = MotifDatasetConfig { graphs: count, seed, ..MotifDatasetConfig::default() };
            let data = planted_motif_dataset(&cfg).map_err(|e| CliError::Data(e.to_string()))?;
            write_structures(dir, &data.iter().map(|p| &p.graph).collect::<Vec<_>>())?;
            let (mut labels, mut sites) = (String::from("protein_id,value\n"), String::from("protein_id,value\n"));
            for p in &data {
                let _ = writeln!(labels, "{},{}", p.graph.protein_id, p.motif.class());
                let mut nodes = p.motif_nodes.clone();
                nodes.sort_unstable();
                let _ = writeln!(sites, "{},{}", p.graph.protein_id, join(&nodes));
            }
            write_text(&dir.path("labels.csv"), &labels)?;
            write_text(&dir.path("active_sites.csv"), &sites)?;
            format!(
                "pdb_dir = pdb\nlabels = labels.csv\nlabel_kind = graph_label\nactive_sites = active_sites.csv\n\
                 epsilon = {}\nblocks = aa_onehot\nmodel = softblobgin\ntask = graph\nblobs = 4\nseeds = {seed}\n",
                cfg.epsilon
            )
        }
        "two-hop" => {
            let cfg = NodeTaskConfig { graphs: count, seed, ..NodeTaskConfig::default() };
            let data = two_hop_dataset(&cfg).map_err(|e| CliError::Data(e.to_string()))?;
            write_structures(dir, &data.iter().collect::<Vec<_>>())?;
            let mut labels = String::from("protein_id,value\n");
            for g in &data {
                let pos: Vec<usize> = g.node_labels.iter().flatten().enumerate().filter(|(_, &l)| l == 1).map(|(i, _)| i).collect();
                let _ = writeln!(labels, "{},{}", g.protein_id, join(&pos));
            }
            write_text(&dir.path("node_labels.csv"), &labels)?;
            format!(
                "pdb_dir = pdb\nlabels = node_labels.csv\nlabel_kind = node_label\nepsilon = {}\nblocks = degree,positional\n\
                 model = softblobgin\ntask = node\nblobs = 4\nseeds = {seed}\n",
                cfg.epsilon
            )
        }
        other => return Err(CliError::Usage(format!("unknown synthetic kind {other:?}; expected motif or two-hop"))),
    };
    write_text(&dir.path("run.conf"), &conf)?;
    println!("wrote {count} {kind} structure(s) and run.conf under {}", dir.root.display());
    Ok(())
}
