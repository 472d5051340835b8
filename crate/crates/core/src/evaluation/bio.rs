use rand::seq::index::sample;
use statrs::distribution::{Binomial, DiscreteCDF};

use super::{top_k_indices, EvalError};
use crate::diff::StreamRng;
use crate::graph_builder::ContactGraph;
use crate::protein_io::AminoAcid;

/// Pseudocount in log-enrichment ratios.
pub const ENRICHMENT_DELTA: f64 = 1e-6;
pub const CATALYTIC_SET_NOTE: &str = "H,C,S,D,E,K,R,Y";

/// The `⌈fraction·N⌉` highest-scoring residues (ties → lower index).
pub fn top_fraction_set(importance: &[f64], fraction: f64) -> Vec<usize> {
    let k = ((fraction * importance.len() as f64).ceil() as usize).min(importance.len());
    let mut idx = top_k_indices(importance, k);
    idx.sort_unstable();
    idx
}

pub fn log_enrichment(p_top: f64, p_bg: f64, delta: f64) -> f64 {
    ((p_top + delta) / (p_bg + delta)).log2()
}

fn frequencies<'a>(residues: impl Iterator<Item = &'a AminoAcid>) -> [f64; 20] {
    let mut f = [0.0; 20];
    let mut n = 0.0;
    for a in residues {
        f[a.index()] += 1.0;
        n += 1.0;
    }
    if n > 0.0 {
        for v in &mut f {
            *v /= n;
        }
    }
    f
}

fn catalytic_contrast(enr: &[f64; 20]) -> f64 {
    let (mut cat, mut rest) = (Vec::new(), Vec::new());
    for aa in AminoAcid::ALL {
        if aa.is_catalytic() {
            cat.push(enr[aa.index()]);
        } else {
            rest.push(enr[aa.index()]);
        }
    }
    cat.iter().sum::<f64>() / cat.len() as f64 - rest.iter().sum::<f64>() / rest.len() as f64
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    /// One-sided `P(X ≥ positive)`, `X ~ Binomial(positive + negative, 1/2)`.
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnrichmentTable {
    pub proteins: usize,
    /// Log2 enrichment per amino acid, one-letter alphabetical order.
    pub enrichment: Vec<f64>,
    /// Mean enrichment over catalytic residues minus mean over the rest.
    pub catalytic_contrast: f64,
    /// Per-protein contrasts tested for a positive sign.
    pub sign_test: SignTest,
}

/// Pooled enrichment over proteins given as `(residues, important indices)`.
pub fn enrichment(items: &[(&[AminoAcid], &[usize])], delta: f64) -> Result<EnrichmentTable, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Undefined("no proteins in class".into()));
    }
    let top = frequencies(items.iter().flat_map(|(res, idx)| idx.iter().map(move |&i| &res[i])));
    let bg = frequencies(items.iter().flat_map(|(res, _)| res.iter()));
    let mut enr = [0.0; 20];
    for a in 0..20 {
        enr[a] = log_enrichment(top[a], bg[a], delta);
    }
    let (mut positive, mut negative) = (0, 0);
    for (res, idx) in items {
        let t = frequencies(idx.iter().map(|&i| &res[i]));
        let b = frequencies(res.iter());
        let mut e = [0.0; 20];
        for a in 0..20 {
            e[a] = log_enrichment(t[a], b[a], delta);
        }
        let c = catalytic_contrast(&e);
        if c > 0.0 {
            positive += 1;
        } else if c < 0.0 {
            negative += 1;
        }
    }
    let n = (positive + negative) as u64;
    let p_value = if n == 0 {
        1.0
    } else if positive == 0 {
        1.0
    } else {
        let b = Binomial::new(0.5, n).expect("valid binomial");
        1.0 - b.cdf(positive as u64 - 1)
    };
    Ok(EnrichmentTable {
        proteins: items.len(),
        enrichment: enr.to_vec(),
        catalytic_contrast: catalytic_contrast(&enr),
        sign_test: SignTest { positive, negative, p_value },
    })
}

/// Mean RSA of the important residues minus the mean of the rest.
pub fn sasa_gap(importance: &[f64], rsa: &[f64], fraction: f64) -> Result<f64, EvalError> {
    if importance.len() != rsa.len() {
        return Err(EvalError::Param("importance and RSA lengths differ".into()));
    }
    if rsa.len() < 5 {
        return Err(EvalError::Undefined("SASA gap needs at least 5 residues".into()));
    }
    let top = top_fraction_set(importance, fraction);
    let mut is_top = vec![false; rsa.len()];
    for &i in &top {
        is_top[i] = true;
    }
    let (mut a, mut na, mut b, mut nb) = (0.0, 0, 0.0, 0);
    for (i, &r) in rsa.iter().enumerate() {
        if is_top[i] {
            a += r;
            na += 1;
        } else {
            b += r;
            nb += 1;
        }
    }
    if na == 0 || nb == 0 {
        return Err(EvalError::Undefined("one side of the SASA split is empty".into()));
    }
    Ok(a / na as f64 - b / nb as f64)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpatialZ {
    pub z: f64,
    pub mean_distance: f64,
    pub null_mean: f64,
    pub null_std: f64,
}

/// Mean pairwise Euclidean distance over `idx`.
pub fn mean_pairwise_distance(coords: &[[f64; 3]], idx: &[usize]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let (p, q) = (coords[idx[a]], coords[idx[b]]);
            s += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            n += 1;
        }
    }
    s / n as f64
}

/// Compactness of `set` against `b` random equal-size subsets.
pub fn spatial_zscore(coords: &[[f64; 3]], set: &[usize], b: usize, rng: &mut StreamRng) -> Result<SpatialZ, EvalError> {
    if set.len() < 2 || set.len() > coords.len() {
        return Err(EvalError::Param(format!("important set of size {} on {} residues", set.len(), coords.len())));
    }
    if b < 2 {
        return Err(EvalError::Param("need at least 2 null samples".into()));
    }
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    let d = mean_pairwise_distance(coords, &sorted);
    let null: Vec<f64> = (0..b)
        .map(|_| {
            let mut s = sample(rng, coords.len(), set.len()).into_vec();
            s.sort_unstable();
            mean_pairwise_distance(coords, &s)
        })
        .collect();
    let mu = null.iter().sum::<f64>() / b as f64;
    let sd = (null.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (b - 1) as f64).sqrt();
    if sd <= 1e-12 * mu.abs().max(1.0) {
        return Err(EvalError::Undefined("random subsets have zero spread".into()));
    }
    Ok(SpatialZ { z: (d - mu) / sd, mean_distance: d, null_mean: mu, null_std: sd })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TertiaryStats {
    pub important_edges: usize,
    pub other_edges: usize,
    pub long_range_fraction_important: Option<f64>,
    pub long_range_fraction_other: Option<f64>,
    pub bin_width: f64,
    /// Cα–Cα distance counts of important edges, bins of `bin_width` on `[0, ε]`.
    pub histogram: Vec<usize>,
    /// Fraction of important-edge distances inside `peak_range`.
    pub peak_fraction: Option<f64>,
    pub empty_important: bool,
}

pub fn tertiary_contact_stats(
    mask: &[f64],
    g: &ContactGraph,
    seq_sep_cut: usize,
    peak_range: (f64, f64),
) -> Result<TertiaryStats, EvalError> {
    if mask.len() != g.num_undirected() {
        return Err(EvalError::Param("one mask value per undirected edge is required".into()));
    }
    let bin_width = 0.5;
    let bins = ((g.epsilon / bin_width).ceil() as usize).max(1);
    let mut histogram = vec![0; bins];
    let (mut imp, mut imp_long, mut rest, mut rest_long, mut peak) = (0, 0, 0, 0, 0);
    for (u, &m) in mask.iter().enumerate() {
        let (i, j) = g.undirected(u);
        let long = j.abs_diff(i) > seq_sep_cut;
        if m >= 0.5 {
            imp += 1;
            imp_long += long as usize;
            let d = g.distance(i, j);
            histogram[((d / bin_width) as usize).min(bins - 1)] += 1;
            if d >= peak_range.0 && d <= peak_range.1 {
                peak += 1;
            }
        } else {
            rest += 1;
            rest_long += long as usize;
        }
    }
    let frac = |a: usize, n: usize| if n > 0 { Some(a as f64 / n as f64) } else { None };
    Ok(TertiaryStats {
        important_edges: imp,
        other_edges: rest,
        long_range_fraction_important: frac(imp_long, imp),
        long_range_fraction_other: frac(rest_long, rest),
        bin_width,
        histogram,
        peak_fraction: frac(peak, imp),
        empty_important: imp == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enrichment_formula_values() {
        assert_eq!(log_enrichment(0.3, 0.3, ENRICHMENT_DELTA), 0.0);
        assert!((log_enrichment(0.2, 0.1, ENRICHMENT_DELTA) - 1.0).abs() < 1e-5);
        assert!((log_enrichment(0.0, 0.5, ENRICHMENT_DELTA) - (1e-6f64 / 0.500001).log2()).abs() < 1e-12);
        assert!((log_enrichment(0.0, 0.5, ENRICHMENT_DELTA) + 18.93).abs() < 0.01);
    }

    #[test]
    fn equal_frequencies_give_zero_enrichment() {
        let res = vec![AminoAcid::Ala, AminoAcid::His, AminoAcid::Ala, AminoAcid::His];
        let idx = vec![0, 1];
        let t = enrichment(&[(&res, &idx)], ENRICHMENT_DELTA).unwrap();
        assert!(t.enrichment.iter().all(|&e| e.abs() < 1e-12));
    }

    #[test]
    fn sasa_gap_cases() {
        assert_eq!(sasa_gap(&[5.0, 4.0, 3.0, 2.0, 1.0], &[0.4; 5], 0.2).unwrap(), 0.0);
        let g = sasa_gap(&[5.0, 0.0, 0.0, 0.0, 0.0], &[0.1, 0.3, 0.3, 0.3, 0.3], 0.2).unwrap();
        assert!((g + 0.2).abs() < 1e-12);
    }

    #[test]
    fn whole_protein_z_undefined() {
        let coords: Vec<[f64; 3]> = (0..6).map(|i| [i as f64, (i * i) as f64, 0.0]).collect();
        let all: Vec<usize> = (0..6).collect();
        let mut rng = crate::diff::stream_rng(1, &[]);
        assert!(matches!(spatial_zscore(&coords, &all, 100, &mut rng), Err(EvalError::Undefined(_))));
    }

    #[test]
    fn top_fraction_uses_ceiling() {
        assert_eq!(top_fraction_set(&[0.1, 0.9, 0.9, 0.2, 0.0, 0.3], 0.2), vec![1, 2]);
    }
}
