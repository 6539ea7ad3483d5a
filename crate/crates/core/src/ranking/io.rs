use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{mean_performance, worst_case_performance, MetricRecord, RankTable};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::volumes::Region;

const RECORD_HEADER: [&str; 7] = ["algorithm", "institution", "case", "region", "metric", "value", "missing"];

fn parse_flag(s: &str, line: u64) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" => Ok(false),
        "1" | "true" | "yes" => Ok(true),
        other => Err(Error::Ranking(format!("line {line}: bad missing flag {other:?}"))),
    }
}

/// Reads metric records. A row is missing when its `missing` flag is set or
/// its value is empty.
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ranking(format!("missing column {name}")))
    };
    let idx: Vec<usize> = RECORD_HEADER[..6].iter().map(|n| col(n)).collect::<Result<_>>()?;
    let missing_col = headers.iter().position(|h| h == "missing");

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(idx[i]).unwrap_or("");
        let region: Region = field(3)
            .parse()
            .map_err(|_| Error::Ranking(format!("line {line}: unknown region {:?}", field(3))))?;
        let metric: MetricKind = field(4)
            .parse()
            .map_err(|_| Error::Ranking(format!("line {line}: unknown metric {:?}", field(4))))?;
        let flagged = match missing_col {
            Some(c) => parse_flag(row.get(c).unwrap_or(""), line)?,
            None => false,
        };
        let value = if flagged || field(5).is_empty() {
            None
        } else {
            let v: f64 = field(5)
                .parse()
                .map_err(|_| Error::Ranking(format!("line {line}: bad value {:?}", field(5))))?;
            Some(v)
        };
        out.push(MetricRecord {
            algorithm: field(0).to_string(),
            institution: field(1).to_string(),
            case: field(2).to_string(),
            region,
            metric,
            value,
        });
    }
    Ok(out)
}

pub fn write_records_csv<W: Write>(records: &[MetricRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.algorithm.as_str(),
            r.institution.as_str(),
            r.case.as_str(),
            r.region.as_str(),
            r.metric.as_str(),
            &r.value.map(|v| v.to_string()).unwrap_or_default(),
            if r.is_missing() { "1" } else { "0" },
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per algorithm in final-rank order with per-institution ranks as
/// extra columns.
pub fn write_rank_csv<W: Write>(table: &RankTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["algorithm".to_string(), "final_rank".into(), "mean_rank".into()];
    header.extend(table.institutions.iter().map(|i| format!("rank_{i}")));
    w.write_record(&header)?;
    for (alg, rank) in table.ordered() {
        let mut row = vec![alg.to_string(), rank.to_string(), table.mean_ranks[alg].to_string()];
        row.extend(table.institutions.iter().map(|i| table.per_institution[alg][i].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub algorithm: String,
    pub region: Region,
    pub metric: MetricKind,
    pub mean: f64,
    pub worst_institution: String,
    pub worst: f64,
}

/// Ranks plus mean and worst-case statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub table: RankTable,
    pub summaries: Vec<MetricSummary>,
}

impl RankReport {
    /// Summaries are skipped for combinations with no present values.
    pub fn build(records: &[MetricRecord], table: RankTable) -> Self {
        let mut summaries = Vec::new();
        for alg in &table.algorithms {
            for region in Region::ALL {
                for metric in MetricKind::ALL {
                    let (Ok(mean), Ok((inst, worst))) = (
                        mean_performance(records, alg, metric, region),
                        worst_case_performance(records, alg, metric, region),
                    ) else {
                        continue;
                    };
                    summaries.push(MetricSummary {
                        algorithm: alg.clone(),
                        region,
                        metric,
                        mean,
                        worst_institution: inst,
                        worst,
                    });
                }
            }
        }
        RankReport { table, summaries }
    }
}
