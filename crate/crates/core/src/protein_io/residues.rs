use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

/// The 20 canonical amino acids, in one-letter alphabetical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum AminoAcid {
    Ala,
    Cys,
    Asp,
    Glu,
    Phe,
    Gly,
    His,
    Ile,
    Lys,
    Leu,
    Met,
    Asn,
    Pro,
    Gln,
    Arg,
    Ser,
    Thr,
    Val,
    Trp,
    Tyr,
}

pub const ONE_LETTER: &str = "ACDEFGHIKLMNPQRSTVWY";

/// Residues treated as catalytic in enrichment contrasts.
pub const CATALYTIC: [AminoAcid; 8] = [
    AminoAcid::His,
    AminoAcid::Cys,
    AminoAcid::Ser,
    AminoAcid::Asp,
    AminoAcid::Glu,
    AminoAcid::Lys,
    AminoAcid::Arg,
    AminoAcid::Tyr,
];

impl AminoAcid {
    pub const ALL: [AminoAcid; 20] = [
        AminoAcid::Ala,
        AminoAcid::Cys,
        AminoAcid::Asp,
        AminoAcid::Glu,
        AminoAcid::Phe,
        AminoAcid::Gly,
        AminoAcid::His,
        AminoAcid::Ile,
        AminoAcid::Lys,
        AminoAcid::Leu,
        AminoAcid::Met,
        AminoAcid::Asn,
        AminoAcid::Pro,
        AminoAcid::Gln,
        AminoAcid::Arg,
        AminoAcid::Ser,
        AminoAcid::Thr,
        AminoAcid::Val,
        AminoAcid::Trp,
        AminoAcid::Tyr,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<AminoAcid> {
        Self::ALL.get(i).copied()
    }

    pub fn one_letter(self) -> char {
        ONE_LETTER.as_bytes()[self.index()] as char
    }

    pub fn from_one_letter(c: char) -> Option<AminoAcid> {
        ONE_LETTER.find(c.to_ascii_uppercase()).map(|i| Self::ALL[i])
    }

    pub fn three_letter(self) -> &'static str {
        &table().rows[self.index()].three
    }

    /// Canonical three-letter code, or a non-canonical alias mapped to its parent.
    pub fn from_residue_name(name: &str) -> Option<AminoAcid> {
        let t = table();
        let upper = name.trim().to_ascii_uppercase();
        t.by_three.get(&upper).copied().or_else(|| t.aliases.get(&upper).copied())
    }

    pub fn is_canonical_name(name: &str) -> bool {
        table().by_three.contains_key(&name.trim().to_ascii_uppercase())
    }

    pub fn properties(self) -> &'static ResidueProperties {
        &table().rows[self.index()]
    }

    pub fn is_catalytic(self) -> bool {
        CATALYTIC.contains(&self)
    }
}

impl fmt::Display for AminoAcid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.one_letter())
    }
}

#[derive(Clone, Debug)]
pub struct ResidueProperties {
    pub three: String,
    pub max_sasa: f64,
    /// Raw physicochemical scales, in the column order of the bundled table.
    pub scales: [f64; 10],
}

pub const SCALE_NAMES: [&str; 10] = [
    "kyte_doolittle",
    "charge",
    "molecular_weight",
    "vdw_volume",
    "grantham_polarity",
    "vihinen_flexibility",
    "accessibility",
    "helix_propensity",
    "sheet_propensity",
    "turn_propensity",
];

struct Table {
    rows: Vec<ResidueProperties>,
    by_three: HashMap<String, AminoAcid>,
    aliases: HashMap<String, AminoAcid>,
    normalized: Vec<[f64; 10]>,
    radii: HashMap<String, f64>,
}

fn data_lines(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).skip(1).map(|l| l.split('\t').collect())
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rows = Vec::new();
        let mut by_three = HashMap::new();
        for (i, cols) in data_lines(include_str!("../../data/residues.tsv")).enumerate() {
            let aa = AminoAcid::ALL[i];
            assert_eq!(cols[0].chars().next(), Some(aa.one_letter()), "residue table out of order");
            let num = |k: usize| cols[k].parse::<f64>().expect("numeric residue table entry");
            let mut scales = [0.0; 10];
            for (j, s) in scales.iter_mut().enumerate() {
                *s = num(3 + j);
            }
            by_three.insert(cols[1].to_string(), aa);
            rows.push(ResidueProperties { three: cols[1].to_string(), max_sasa: num(2), scales });
        }
        let mut aliases = HashMap::new();
        for cols in data_lines(include_str!("../../data/residue_aliases.tsv")) {
            aliases.insert(cols[0].to_string(), by_three[cols[1]]);
        }
        let mut normalized = vec![[0.0; 10]; 20];
        for j in 0..10 {
            let lo = rows.iter().map(|r| r.scales[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.scales[j]).fold(f64::NEG_INFINITY, f64::max);
            for (i, r) in rows.iter().enumerate() {
                normalized[i][j] = (r.scales[j] - lo) / (hi - lo);
            }
        }
        let mut radii = HashMap::new();
        for cols in data_lines(include_str!("../../data/vdw_radii.tsv")) {
            radii.insert(cols[0].to_string(), cols[1].parse().expect("numeric radius"));
        }
        Table { rows, by_three, aliases, normalized, radii }
    })
}

/// The ten physicochemical scales of `aa`, min–max normalized over the 20 amino acids.
pub fn normalized_properties(aa: AminoAcid) -> [f64; 10] {
    table().normalized[aa.index()]
}

pub const DEFAULT_VDW_RADIUS: f64 = 1.7;

/// Van der Waals radius for an element symbol, if the bundled table knows it.
pub fn vdw_radius(element: &str) -> Option<f64> {
    table().radii.get(&element.trim().to_ascii_uppercase()).copied()
}

/// Source of the max-SASA normalization table, recorded in reports.
pub const MAX_SASA_SOURCE: &str = "Tien et al. 2013 (theoretical)";
