use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::str::FromStr;

use super::ProteinIoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    GraphLabel,
    Multilabel,
    Scalar,
    NodeLabel,
    ActiveSite,
    Domain,
}

impl FromStr for AnnotationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "graph_label" => Self::GraphLabel,
            "multilabel" => Self::Multilabel,
            "scalar" => Self::Scalar,
            "node_label" => Self::NodeLabel,
            "active_site" => Self::ActiveSite,
            "domain" => Self::Domain,
            other => return Err(format!("unknown annotation kind {other:?}")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Label {
    Class(usize),
    Multi(Vec<usize>),
    Scalar(f64),
}

/// Inclusive residue range belonging to one domain.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DomainSegment {
    pub domain: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationSet {
    pub labels: BTreeMap<String, Label>,
    pub active_sites: BTreeMap<String, BTreeSet<usize>>,
    pub domains: BTreeMap<String, Vec<DomainSegment>>,
    /// Positive residue indices per protein; all other residues are negative.
    pub node_labels: BTreeMap<String, BTreeSet<usize>>,
    /// Ids present in the file but absent from the known structures.
    pub unknown_ids: BTreeSet<String>,
}

impl AnnotationSet {
    /// Per-residue 0/1 labels for a protein with `n` residues.
    pub fn node_label_vector(&self, id: &str, n: usize) -> Option<Vec<u8>> {
        self.node_labels.get(id).map(|pos| (0..n).map(|i| u8::from(pos.contains(&i))).collect())
    }

    /// Union of two sets; keys in `other` win on overlap.
    pub fn merge(&mut self, other: AnnotationSet) {
        self.labels.extend(other.labels);
        self.active_sites.extend(other.active_sites);
        self.domains.extend(other.domains);
        self.node_labels.extend(other.node_labels);
        self.unknown_ids.extend(other.unknown_ids);
    }
}

fn parse_index(id: &str, field: &str, line: usize) -> Result<usize, ProteinIoError> {
    field
        .trim()
        .parse()
        .map_err(|_| ProteinIoError::Parse { line, reason: format!("{id}: {field:?} is not a residue index") })
}

fn index_list(id: &str, value: &str, line: usize) -> Result<BTreeSet<usize>, ProteinIoError> {
    value.split(';').filter(|f| !f.trim().is_empty()).map(|f| parse_index(id, f, line)).collect()
}

fn check_range(id: &str, idx: usize, sizes: &HashMap<String, usize>) -> Result<(), ProteinIoError> {
    match sizes.get(id) {
        Some(&n) if idx >= n => Err(ProteinIoError::Range { id: id.to_string(), index: idx, n }),
        _ => Ok(()),
    }
}

/// Parses annotation CSV text (`protein_id,value` header, `;` inside values).
///
/// `sizes` maps known protein ids to residue counts; indices are range-checked
/// against it and ids outside it are kept but listed in `unknown_ids`.
pub fn parse_annotations(
    text: &str,
    kind: AnnotationKind,
    sizes: &HashMap<String, usize>,
) -> Result<AnnotationSet, ProteinIoError> {
    let mut set = AnnotationSet::default();
    let mut seen = BTreeSet::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let row = raw.trim();
        if row.is_empty() || (k == 0 && row.starts_with("protein_id")) {
            continue;
        }
        let (id, value) = row
            .split_once(',')
            .ok_or_else(|| ProteinIoError::Parse { line, reason: "expected protein_id,value".into() })?;
        let (id, value) = (id.trim().to_string(), value.trim());
        if !seen.insert(id.clone()) {
            return Err(ProteinIoError::Conflict { id });
        }
        if !sizes.contains_key(&id) {
            set.unknown_ids.insert(id.clone());
        }
        match kind {
            AnnotationKind::GraphLabel => {
                set.labels.insert(id.clone(), Label::Class(parse_index(&id, value, line)?));
            }
            AnnotationKind::Multilabel => {
                let v = index_list(&id, value, line)?;
                set.labels.insert(id.clone(), Label::Multi(v.into_iter().collect()));
            }
            AnnotationKind::Scalar => {
                let v: f64 = value
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| ProteinIoError::Parse { line, reason: format!("{id}: {value:?} is not a finite number") })?;
                set.labels.insert(id.clone(), Label::Scalar(v));
            }
            AnnotationKind::NodeLabel | AnnotationKind::ActiveSite => {
                let v = index_list(&id, value, line)?;
                for &i in &v {
                    check_range(&id, i, sizes)?;
                }
                if kind == AnnotationKind::NodeLabel {
                    set.node_labels.insert(id.clone(), v);
                } else {
                    set.active_sites.insert(id.clone(), v);
                }
            }
            AnnotationKind::Domain => {
                let mut segs = Vec::new();
                for part in value.split(';').filter(|p| !p.trim().is_empty()) {
                    let bad = || ProteinIoError::Parse { line, reason: format!("{id}: domain segment {part:?} is not NAME:START-END") };
                    let (name, range) = part.trim().split_once(':').ok_or_else(bad)?;
                    let (a, b) = range.split_once('-').ok_or_else(bad)?;
                    let (start, end) = (parse_index(&id, a, line)?, parse_index(&id, b, line)?);
                    if end < start {
                        return Err(bad());
                    }
                    check_range(&id, end, sizes)?;
                    segs.push(DomainSegment { domain: name.trim().to_string(), start, end });
                }
                set.domains.insert(id.clone(), segs);
            }
        }
    }
    if !set.unknown_ids.is_empty() {
        log::warn!("{} annotated id(s) match no structure", set.unknown_ids.len());
    }
    Ok(set)
}

pub fn load_annotations(
    path: &Path,
    kind: AnnotationKind,
    sizes: &HashMap<String, usize>,
) -> Result<AnnotationSet, ProteinIoError> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations(&text, kind, sizes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes() -> HashMap<String, usize> {
        [("P1".to_string(), 300), ("P2".to_string(), 50)].into_iter().collect()
    }

    #[test]
    fn graph_label_row() {
        let s = parse_annotations("protein_id,value\nP1,3\n", AnnotationKind::GraphLabel, &sizes()).unwrap();
        assert_eq!(s.labels["P1"], Label::Class(3));
    }

    #[test]
    fn active_site_list() {
        let s = parse_annotations("protein_id,value\nP1,10;25;57\n", AnnotationKind::ActiveSite, &sizes()).unwrap();
        assert_eq!(s.active_sites["P1"], [10, 25, 57].into_iter().collect());
    }

    #[test]
    fn out_of_range_site() {
        let err = parse_annotations("protein_id,value\nP1,400\n", AnnotationKind::ActiveSite, &sizes()).unwrap_err();
        assert!(matches!(err, ProteinIoError::Range { index: 400, n: 300, .. }));
    }

    #[test]
    fn duplicate_rows_conflict() {
        let err = parse_annotations("protein_id,value\nP1,1\nP1,2\n", AnnotationKind::GraphLabel, &sizes()).unwrap_err();
        assert!(matches!(err, ProteinIoError::Conflict { .. }));
    }

    #[test]
    fn unknown_ids_are_flagged() {
        let s = parse_annotations("protein_id,value\nQ7,1\n", AnnotationKind::GraphLabel, &sizes()).unwrap();
        assert!(s.unknown_ids.contains("Q7"));
        assert_eq!(s.labels["Q7"], Label::Class(1));
    }

    #[test]
    fn domains_and_multilabel() {
        let s = parse_annotations("protein_id,value\nP2,D1:0-20;D2:21-49\n", AnnotationKind::Domain, &sizes()).unwrap();
        assert_eq!(s.domains["P2"][1], DomainSegment { domain: "D2".into(), start: 21, end: 49 });
        let m = parse_annotations("protein_id,value\nP2,4;1\n", AnnotationKind::Multilabel, &sizes()).unwrap();
        assert_eq!(m.labels["P2"], Label::Multi(vec![1, 4]));
    }

    #[test]
    fn node_label_vector_marks_positives() {
        let s = parse_annotations("protein_id,value\nP2,0;3\n", AnnotationKind::NodeLabel, &sizes()).unwrap();
        let v = s.node_label_vector("P2", 5).unwrap();
        assert_eq!(v, vec![1, 0, 0, 1, 0]);
    }
}
