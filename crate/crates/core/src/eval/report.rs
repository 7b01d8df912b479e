//! Per-case CSV reports and the JSON scoreboard.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use super::score::{rank, CaseScore, Category, Cell, RankedEntry, ScoreTable, Selection};
use crate::data::{Organ, TrainingModality};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const REPORT_HEADER: [&str; 13] = [
    "variant",
    "modality",
    "organ",
    "case",
    "dice",
    "ravd",
    "assd",
    "mssd",
    "score_dice",
    "score_ravd",
    "score_assd",
    "score_mssd",
    "case_score",
];

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

pub fn write_report_to<W: Write>(w: W, rows: &[CaseScore]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in rows {
        let m = r
            .report
            .map(|m| [m.dice, m.ravd, m.assd, m.mssd])
            .unwrap_or([f64::NAN; 4]);
        let mut rec = vec![
            r.variant.clone(),
            r.modality.as_str().to_owned(),
            r.organ.as_str().to_owned(),
            r.case.clone(),
        ];
        rec.extend(m.iter().chain(r.metric_scores.iter()).map(|&v| num(v)));
        rec.push(num(r.case_score));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `rows` atomically as a report CSV.
pub fn write_report(path: &Path, rows: &[CaseScore]) -> Result<()> {
    write_atomic(path, |w| write_report_to(w, rows).map_err(std::io::Error::other))
}

fn parse_err(path: &Path, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Metric(format!("{}:{line}: {msg}", path.display()))
}

/// Reads a report CSV into a table. The `case_score` column is taken as
/// authoritative; the raw metrics are kept when all four are defined.
pub fn read_report(path: &Path) -> Result<ScoreTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| parse_err(path, 1, e))?.clone();
    if header.iter().ne(REPORT_HEADER.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header {}", REPORT_HEADER.join(",")),
        ));
    }
    let mut table = ScoreTable::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, 0, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let float = |i: usize| -> Result<f64> {
            let s = field(i).trim();
            s.parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("column {} is not a number: {s:?}", REPORT_HEADER[i])))
        };
        let modality: TrainingModality = field(1).parse().map_err(|e| parse_err(path, line, e))?;
        let organ: Organ = field(2).parse().map_err(|e| parse_err(path, line, e))?;
        let m = [float(4)?, float(5)?, float(6)?, float(7)?];
        let scores = [float(8)?, float(9)?, float(10)?, float(11)?];
        let case_score = float(12)?;
        if !(0.0..=100.0).contains(&case_score) {
            return Err(parse_err(path, line, format!("case_score {case_score} is outside [0, 100]")));
        }
        let report = m.iter().all(|v| v.is_finite()).then_some(MetricReport {
            dice: m[0],
            ravd: m[1],
            assd: m[2],
            mssd: m[3],
        });
        table.insert(CaseScore {
            variant: field(0).to_owned(),
            modality,
            organ,
            case: field(3).to_owned(),
            report,
            metric_scores: scores,
            case_score,
        })?;
    }
    if table.is_empty() {
        return Err(Error::EmptyAggregation(format!("{} holds no cases", path.display())));
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub modality: TrainingModality,
    pub organ: Organ,
    pub variant: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoreboard {
    pub columns: Vec<Category>,
    /// Variant -> column -> score; missing columns are omitted.
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
    pub rankings: BTreeMap<String, Vec<RankedEntry>>,
    /// Composite built from the best variant of every cell, reported
    /// alongside but never ranked.
    pub composite: Option<CompositeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeRow {
    pub name: String,
    pub registry: Vec<RegistryEntry>,
    pub scores: BTreeMap<String, f64>,
}

impl Scoreboard {
    pub fn build(
        table: &ScoreTable,
        columns: &[Category],
        composite: Option<(&str, &BTreeMap<Cell, Selection>)>,
    ) -> Result<Self> {
        let mut scores: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut rankings = BTreeMap::new();
        for &c in columns {
            let entries = table.category_scores(c);
            for (v, s) in &entries {
                scores.entry(v.clone()).or_default().insert(c.to_string(), *s);
            }
            if !entries.is_empty() {
                rankings.insert(c.to_string(), rank(&entries)?);
            }
        }
        let composite = composite.map(|(name, reg)| {
            let t = table.composite(name, reg);
            CompositeRow {
                name: name.to_owned(),
                registry: reg
                    .iter()
                    .map(|(&(modality, organ), s)| RegistryEntry {
                        modality,
                        organ,
                        variant: s.variant.clone(),
                        score: s.score,
                    })
                    .collect(),
                scores: columns
                    .iter()
                    .filter_map(|&c| t.score(name, c).map(|s| (c.to_string(), s)))
                    .collect(),
            }
        });
        Ok(Self {
            columns: columns.to_vec(),
            scores,
            rankings,
            composite,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, self).map_err(std::io::Error::other)?;
            w.write_all(b"\n")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let r = MetricReport {
            dice: 0.95,
            ravd: 1.0,
            assd: 1.5,
            mssd: 12.0,
        };
        let rows = vec![
            CaseScore::from_report("unet", TrainingModality::Ct, Organ::Liver, "1", Some(r)),
            CaseScore::from_report("unet", TrainingModality::Ct, Organ::Liver, "2", None),
        ];
        write_report(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&REPORT_HEADER.join(",")));
        assert!(text.contains("nan"));
        let t = read_report(&p).unwrap();
        assert_eq!(t.rows(), &rows[..]);
    }

    #[test]
    fn reader_rejects_out_of_range_scores() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, format!("{}\nx,ct,liver,1,nan,nan,nan,nan,0,0,0,0,120\n", REPORT_HEADER.join(","))).unwrap();
        assert!(read_report(&p).is_err());
        std::fs::write(&p, "variant,case\nx,1\n").unwrap();
        assert!(read_report(&p).is_err());
    }
}
