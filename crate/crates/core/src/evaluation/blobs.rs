use std::collections::{BTreeMap, BTreeSet};

use super::{spearman, EvalError, SpearmanResult};
use crate::diff::{argmax, Tensor};
use crate::evaluation::bio::mean_pairwise_distance;
use crate::protein_io::DomainSegment;

/// Blob id per residue: row-wise argmax of the soft assignment.
pub fn hard_assignments(a: &Tensor) -> Vec<usize> {
    (0..a.rows()).map(|r| argmax(a.row(r))).collect()
}

/// Rows `k·G + g` of a stacked blob matrix: the `K × ħ` blobs of graph `g`.
pub fn graph_blobs(stacked: &Tensor, n_graphs: usize, g: usize) -> Tensor {
    let k = stacked.rows() / n_graphs;
    let rows: Vec<usize> = (0..k).map(|b| b * n_graphs + g).collect();
    stacked.select_rows(&rows)
}

/// Share of readout dimensions whose max is supplied by each blob (ties → lower blob).
pub fn blob_importance(blobs: &Tensor) -> Vec<f64> {
    let (k, h) = blobs.shape();
    let mut pi = vec![0.0; k];
    for c in 0..h {
        let mut best = 0;
        for b in 1..k {
            if blobs.get(b, c) > blobs.get(best, c) {
                best = b;
            }
        }
        pi[best] += 1.0 / h as f64;
    }
    pi
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveMode {
    /// Annotated residues over blob size.
    Fraction,
    /// Annotated residue count.
    Count,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ActiveBlob {
    pub protein_id: String,
    pub active_blob: usize,
    /// `π_active / mean(π_other)`; absent with one blob or all-zero others.
    pub ratio: Option<f64>,
    /// 1 = highest importance.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ActiveBlobReport {
    pub proteins: Vec<ActiveBlob>,
    pub excluded_without_annotation: usize,
    pub mean_ratio: Option<f64>,
    pub mean_rank: Option<f64>,
    /// π against per-blob active-site enrichment over all non-empty (protein, blob) pairs.
    pub spearman: Option<SpearmanResult>,
    pub mode: ActiveMode,
}

pub struct ProteinBlobs<'a> {
    pub protein_id: &'a str,
    pub hard: &'a [usize],
    pub importance: &'a [f64],
    pub active_sites: Option<&'a BTreeSet<usize>>,
}

pub fn active_blob_analysis(items: &[ProteinBlobs<'_>], mode: ActiveMode) -> ActiveBlobReport {
    let mut proteins = Vec::new();
    let mut excluded = 0;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for p in items {
        let Some(active) = p.active_sites.filter(|s| !s.is_empty()) else {
            excluded += 1;
            continue;
        };
        let k = p.importance.len();
        let mut size = vec![0usize; k];
        let mut hits = vec![0usize; k];
        for (i, &b) in p.hard.iter().enumerate() {
            size[b] += 1;
            if active.contains(&i) {
                hits[b] += 1;
            }
        }
        let active_blob = argmax(&hits.iter().map(|&h| h as f64).collect::<Vec<_>>());
        let pa = p.importance[active_blob];
        let others: Vec<f64> = (0..k).filter(|&t| t != active_blob).map(|t| p.importance[t]).collect();
        let mean_other = if others.is_empty() { 0.0 } else { others.iter().sum::<f64>() / others.len() as f64 };
        let ratio = if mean_other > 0.0 { Some(pa / mean_other) } else { None };
        let rank = 1 + p.importance.iter().filter(|&&v| v > pa).count();
        proteins.push(ActiveBlob { protein_id: p.protein_id.to_string(), active_blob, ratio, rank });
        for t in 0..k {
            if size[t] > 0 {
                xs.push(p.importance[t]);
                ys.push(match mode {
                    ActiveMode::Fraction => hits[t] as f64 / size[t] as f64,
                    ActiveMode::Count => hits[t] as f64,
                });
            }
        }
    }
    let ratios: Vec<f64> = proteins.iter().filter_map(|p| p.ratio).collect();
    let mean = |v: &[f64]| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
    let ranks: Vec<f64> = proteins.iter().map(|p| p.rank as f64).collect();
    ActiveBlobReport {
        mean_ratio: mean(&ratios),
        mean_rank: mean(&ranks),
        spearman: spearman(&xs, &ys).ok(),
        proteins,
        excluded_without_annotation: excluded,
        mode,
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlobStat {
    pub blob: usize,
    pub size: usize,
    pub mean_rsa: f64,
    /// Mean pairwise Cα distance; absent for single-residue blobs.
    pub mean_intra_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlobStats {
    pub blobs: Vec<BlobStat>,
    pub empty_blobs: usize,
    /// Largest blob (ties → lower id).
    pub core_blob: usize,
    pub core_mean_rsa: f64,
    pub rest_mean_rsa: Option<f64>,
}

pub fn blob_structure_stats(hard: &[usize], k: usize, rsa: &[f64], coords: &[[f64; 3]]) -> BlobStats {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &b) in hard.iter().enumerate() {
        members[b].push(i);
    }
    let mut blobs = Vec::new();
    for (b, m) in members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        blobs.push(BlobStat {
            blob: b,
            size: m.len(),
            mean_rsa: m.iter().map(|&i| rsa[i]).sum::<f64>() / m.len() as f64,
            mean_intra_distance: (m.len() > 1).then(|| mean_pairwise_distance(coords, m)),
        });
    }
    let sizes: Vec<f64> = members.iter().map(|m| m.len() as f64).collect();
    let core_blob = argmax(&sizes);
    let rest: Vec<usize> = (0..hard.len()).filter(|&i| hard[i] != core_blob).collect();
    let core = &members[core_blob];
    BlobStats {
        empty_blobs: members.iter().filter(|m| m.is_empty()).count(),
        core_blob,
        core_mean_rsa: core.iter().map(|&i| rsa[i]).sum::<f64>() / core.len().max(1) as f64,
        rest_mean_rsa: (!rest.is_empty()).then(|| rest.iter().map(|&i| rsa[i]).sum::<f64>() / rest.len() as f64),
        blobs,
    }
}

pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Mean over domains of the best Jaccard overlap with any blob.
pub fn jaccard_domains(hard: &[usize], k: usize, domains: &[DomainSegment]) -> Result<f64, EvalError> {
    let mut by_domain: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for s in domains {
        by_domain.entry(&s.domain).or_default().extend(s.start..=s.end);
    }
    if by_domain.is_empty() {
        return Err(EvalError::Undefined("no domain segments".into()));
    }
    let mut blobs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for (i, &b) in hard.iter().enumerate() {
        blobs[b].insert(i);
    }
    let total: f64 = by_domain.values().map(|d| blobs.iter().map(|b| jaccard(d, b)).fold(0.0, f64::max)).sum();
    Ok(total / by_domain.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn importance_cases() {
        assert_eq!(blob_importance(&Tensor::from_rows(&[vec![0.1, -3.0]]).unwrap()), vec![1.0]);
        let b = Tensor::from_rows(&[vec![2.0, 2.0, 2.0], vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(blob_importance(&b), vec![1.0, 0.0]);
    }

    #[test]
    fn jaccard_hand_case() {
        let hard: Vec<usize> = (0..20).map(|i| usize::from((5..15).contains(&i))).collect();
        let d = [DomainSegment { domain: "D".into(), start: 0, end: 9 }];
        // blob 1 = {5..14}: 5/15; blob 0 = {0..4, 15..19}: 5/15
        assert!((jaccard_domains(&hard, 2, &d).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_blobs_and_domains() {
        let hard = vec![0, 0, 1, 1];
        let d = [DomainSegment { domain: "A".into(), start: 0, end: 1 }, DomainSegment { domain: "B".into(), start: 2, end: 3 }];
        assert_eq!(jaccard_domains(&hard, 2, &d).unwrap(), 1.0);
    }

    #[test]
    fn single_blob_stats() {
        let s = blob_structure_stats(&[0, 0, 0], 1, &[0.1, 0.2, 0.3], &[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(s.blobs[0].size, 3);
        assert!((s.blobs[0].mean_rsa - 0.2).abs() < 1e-12);
        assert_eq!(s.rest_mean_rsa, None);
    }

    #[test]
    fn uniform_importance_ratio_one() {
        let active: BTreeSet<usize> = [0].into_iter().collect();
        let p = ProteinBlobs { protein_id: "p", hard: &[0, 1, 2], importance: &[1.0 / 3.0; 3], active_sites: Some(&active) };
        let r = active_blob_analysis(&[p], ActiveMode::Fraction);
        assert!((r.proteins[0].ratio.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.proteins[0].rank, 1);
    }
}
