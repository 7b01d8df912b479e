//! Thresholded [0, 100] scores, aggregation, ranking and best-variant
//! selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use crate::data::{Organ, TrainingModality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Dice,
    Ravd,
    Assd,
    Mssd,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [Self::Dice, Self::Ravd, Self::Assd, Self::Mssd];

    /// Acceptance limit: dice must exceed it, the others stay below it.
    pub fn threshold(self) -> f64 {
        match self {
            Self::Dice => 0.80,
            Self::Ravd => 5.0,
            Self::Assd => 15.0,
            Self::Mssd => 60.0,
        }
    }
}

/// Linear map of an in-threshold value onto `(0, 100]`; values at or past
/// the threshold (and NaN) score 0.
pub fn metric_score(kind: MetricKind, value: f64) -> f64 {
    let t = kind.threshold();
    let s = match kind {
        // dice in percent minus 80, times 100/20
        MetricKind::Dice if value > t => (value * 100.0 - 80.0) * 5.0,
        MetricKind::Ravd | MetricKind::Assd | MetricKind::Mssd if value < t => 100.0 * (1.0 - value / t),
        _ => 0.0,
    };
    s.clamp(0.0, 100.0)
}

pub fn metric_scores(r: &MetricReport) -> [f64; 4] {
    [
        metric_score(MetricKind::Dice, r.dice),
        metric_score(MetricKind::Ravd, r.ravd),
        metric_score(MetricKind::Assd, r.assd),
        metric_score(MetricKind::Mssd, r.mssd),
    ]
}

/// Mean of the four metric scores.
pub fn case_score(r: &MetricReport) -> f64 {
    metric_scores(r).iter().sum::<f64>() / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateLevel {
    /// Cases of one organ.
    Organ,
    /// Organs of one modality.
    Modality,
    /// The T1 and T2 scores of one organ.
    Mr,
    /// Organ scores of one modality group.
    MultiOrgan,
}

pub fn aggregate(scores: &[f64], level: AggregateLevel) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyAggregation(format!("{level:?} level")));
    }
    if level == AggregateLevel::Mr && scores.len() != 2 {
        return Err(Error::EmptyAggregation(format!(
            "the MR score averages exactly a T1 and a T2 score, got {} values",
            scores.len()
        )));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Modality axis of a scoreboard category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityGroup {
    Ct,
    T1,
    T2,
    /// Mean of T1 and T2.
    Mr,
}

impl ModalityGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ct => "ct",
            Self::T1 => "t1",
            Self::T2 => "t2",
            Self::Mr => "mr",
        }
    }

    fn single(self) -> Option<TrainingModality> {
        match self {
            Self::Ct => Some(TrainingModality::Ct),
            Self::T1 => Some(TrainingModality::T1Dual),
            Self::T2 => Some(TrainingModality::T2Spir),
            Self::Mr => None,
        }
    }
}

/// A scoreboard column: one organ, or all four (`organ = None`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Category {
    pub group: ModalityGroup,
    pub organ: Option<Organ>,
}

impl Category {
    pub const fn new(group: ModalityGroup, organ: Option<Organ>) -> Self {
        Self { group, organ }
    }

    /// The published scoreboard layout.
    pub const SCOREBOARD: [Category; 6] = [
        Category::new(ModalityGroup::Ct, Some(Organ::Liver)),
        Category::new(ModalityGroup::Mr, Some(Organ::Liver)),
        Category::new(ModalityGroup::Mr, Some(Organ::RightKidney)),
        Category::new(ModalityGroup::Mr, Some(Organ::LeftKidney)),
        Category::new(ModalityGroup::Mr, Some(Organ::Spleen)),
        Category::new(ModalityGroup::Mr, None),
    ];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.organ {
            Some(o) => write!(f, "{}_{}", self.group.as_str(), o.as_str()),
            None => write!(f, "{}_multiorgan", self.group.as_str()),
        }
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown category {s:?}; expected e.g. ct_liver or mr_multiorgan"));
        let (g, o) = s.split_once('_').ok_or_else(bad)?;
        let group = match g {
            "ct" => ModalityGroup::Ct,
            "t1" => ModalityGroup::T1,
            "t2" => ModalityGroup::T2,
            "mr" => ModalityGroup::Mr,
            _ => return Err(bad()),
        };
        let organ = match o {
            "multiorgan" => None,
            o => Some(o.parse::<Organ>().map_err(|_| bad())?),
        };
        Ok(Self { group, organ })
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One evaluated case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub variant: String,
    pub modality: TrainingModality,
    pub organ: Organ,
    pub case: String,
    /// Absent when a metric is undefined (an empty mask).
    pub report: Option<MetricReport>,
    pub metric_scores: [f64; 4],
    pub case_score: f64,
}

impl CaseScore {
    pub fn from_report(
        variant: impl Into<String>,
        modality: TrainingModality,
        organ: Organ,
        case: impl Into<String>,
        report: Option<MetricReport>,
    ) -> Self {
        let (metric_scores, case_score) = match &report {
            Some(r) => (metric_scores(r), case_score(r)),
            None => ([0.0; 4], 0.0),
        };
        Self {
            variant: variant.into(),
            modality,
            organ,
            case: case.into(),
            report,
            metric_scores,
            case_score,
        }
    }

    fn key(&self) -> (&str, TrainingModality, Organ, &str) {
        (&self.variant, self.modality, self.organ, &self.case)
    }
}

/// `(modality, organ)` cell of the selection registry.
pub type Cell = (TrainingModality, Organ);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: Vec<CaseScore>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a case, replacing an earlier row with the same key.
    pub fn insert(&mut self, row: CaseScore) -> Result<()> {
        if !(0.0..=100.0).contains(&row.case_score) {
            return Err(Error::Metric(format!(
                "case score {} of {}/{} lies outside [0, 100]",
                row.case_score, row.variant, row.case
            )));
        }
        self.rows.retain(|r| r.key() != row.key());
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[CaseScore] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn variants(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.variant.as_str()).collect()
    }

    pub fn cells(&self) -> BTreeSet<Cell> {
        self.rows.iter().map(|r| (r.modality, r.organ)).collect()
    }

    /// Mean case score of one variant in one cell.
    pub fn cell_score(&self, variant: &str, modality: TrainingModality, organ: Organ) -> Option<f64> {
        let cases: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant && r.modality == modality && r.organ == organ)
            .map(|r| r.case_score)
            .collect();
        aggregate(&cases, AggregateLevel::Organ).ok()
    }

    /// Score of a variant in a category, if every ingredient is present.
    pub fn score(&self, variant: &str, cat: Category) -> Option<f64> {
        match (cat.group.single(), cat.organ) {
            (Some(m), Some(o)) => self.cell_score(variant, m, o),
            (None, Some(o)) => {
                let t1 = self.cell_score(variant, TrainingModality::T1Dual, o)?;
                let t2 = self.cell_score(variant, TrainingModality::T2Spir, o)?;
                aggregate(&[t1, t2], AggregateLevel::Mr).ok()
            }
            (_, None) => {
                let organs = Organ::ALL
                    .iter()
                    .map(|&o| self.score(variant, Category::new(cat.group, Some(o))))
                    .collect::<Option<Vec<f64>>>()?;
                aggregate(&organs, AggregateLevel::MultiOrgan).ok()
            }
        }
    }

    /// `(variant, score)` for every variant scored in the category.
    pub fn category_scores(&self, cat: Category) -> Vec<(String, f64)> {
        self.variants()
            .into_iter()
            .filter_map(|v| self.score(v, cat).map(|s| (v.to_owned(), s)))
            .collect()
    }

    /// A table holding `name` as a composite whose cell `c` copies the
    /// cases of `registry[c]`.
    pub fn composite(&self, name: &str, registry: &BTreeMap<Cell, Selection>) -> ScoreTable {
        let rows = self
            .rows
            .iter()
            .filter(|r| {
                registry
                    .get(&(r.modality, r.organ))
                    .is_some_and(|s| s.variant == r.variant)
            })
            .map(|r| CaseScore {
                variant: name.to_owned(),
                ..r.clone()
            })
            .collect();
        ScoreTable { rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub name: String,
    pub score: f64,
    /// Competition rank: one plus the number of strictly better entries.
    pub rank: usize,
    /// `"5"`, or `"5/6"` for a two-way tie at rank 5.
    pub label: String,
}

/// Orders entries by descending score (by name within exact ties).
/// Tied entries share the rank of the first; their label lists every
/// position the tie spans.
pub fn rank(entries: &[(String, f64)]) -> Result<Vec<RankedEntry>> {
    if entries.is_empty() {
        return Err(Error::EmptyAggregation("cannot rank an empty category".into()));
    }
    if let Some((n, s)) = entries.iter().find(|(_, s)| s.is_nan()) {
        return Err(Error::Metric(format!("score of {n} is {s}")));
    }
    let mut sorted: Vec<&(String, f64)> = entries.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut out = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let j = (i..sorted.len()).find(|&k| sorted[k].1 != sorted[i].1).unwrap_or(sorted.len());
        let label = (i + 1..=j).map(|r| r.to_string()).collect::<Vec<_>>().join("/");
        for e in &sorted[i..j] {
            out.push(RankedEntry {
                name: e.0.clone(),
                score: e.1,
                rank: i + 1,
                label: label.clone(),
            });
        }
        i = j;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub variant: String,
    pub score: f64,
}

/// Best variant per `(modality, organ)` cell of the table. Ties go to the
/// variant with fewer parameters (unknown counts last), then by name.
pub fn select_movpunet<F>(table: &ScoreTable, parameters: F) -> Result<BTreeMap<Cell, Selection>>
where
    F: Fn(&str) -> Option<usize>,
{
    let cells: Vec<Cell> = table.cells().into_iter().collect();
    select_movpunet_for(table, &cells, parameters)
}

/// Like [`select_movpunet`] for an explicit cell list; a cell without any
/// scored variant is an error.
pub fn select_movpunet_for<F>(table: &ScoreTable, cells: &[Cell], parameters: F) -> Result<BTreeMap<Cell, Selection>>
where
    F: Fn(&str) -> Option<usize>,
{
    if cells.is_empty() {
        return Err(Error::EmptyAggregation("no cells to select from".into()));
    }
    let mut out = BTreeMap::new();
    for &(m, o) in cells {
        let best = table
            .variants()
            .into_iter()
            .filter_map(|v| table.cell_score(v, m, o).map(|s| (v, s)))
            .min_by(|a, b| {
                b.1.total_cmp(&a.1)
                    .then_with(|| {
                        let pa = parameters(a.0).unwrap_or(usize::MAX);
                        let pb = parameters(b.0).unwrap_or(usize::MAX);
                        pa.cmp(&pb)
                    })
                    .then_with(|| a.0.cmp(b.0))
            })
            .ok_or_else(|| Error::EmptyAggregation(format!("no variant scored for {m}/{o}")))?;
        out.insert(
            (m, o),
            Selection {
                variant: best.0.to_owned(),
                score: best.1,
            },
        );
    }
    Ok(out)
}
