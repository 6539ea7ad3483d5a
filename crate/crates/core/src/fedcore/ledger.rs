use std::io::Write;

use serde::{Deserialize, Serialize};

use super::CollaboratorId;
use crate::error::Result;

/// Per-round participation and traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round_index: usize,
    pub selected: Vec<CollaboratorId>,
    /// Collaborators whose fresh update reached the aggregator.
    pub responded: Vec<CollaboratorId>,
    /// Collaborators whose update (fresh or stale) entered the combine step.
    pub aggregated: Vec<CollaboratorId>,
    pub bytes_down: u64,
    pub bytes_up: u64,
    pub consensus_val_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub rounds: usize,
    pub bytes_down: u64,
    pub bytes_up: u64,
}

/// Append-only log of round records with running totals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommLedger {
    records: Vec<RoundRecord>,
    totals: LedgerTotals,
}

impl CommLedger {
    pub fn append(&mut self, record: RoundRecord) {
        self.totals.rounds += 1;
        self.totals.bytes_down += record.bytes_down;
        self.totals.bytes_up += record.bytes_up;
        self.records.push(record);
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn totals(&self) -> LedgerTotals {
        self.totals
    }

    /// One row per round.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "round",
            "selected",
            "responded",
            "aggregated",
            "bytes_down",
            "bytes_up",
            "consensus_val_score",
        ])?;
        for r in &self.records {
            w.write_record([
                r.round_index.to_string(),
                r.selected.join(";"),
                r.responded.join(";"),
                r.aggregated.join(";"),
                r.bytes_down.to_string(),
                r.bytes_up.to_string(),
                r.consensus_val_score.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Communication cost of a run.
///
/// `product_metric` is mean bytes per round times the number of rounds; it
/// equals `cumulative_bytes` and is reported so both readings of the cost
/// definition are visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rounds: usize,
    pub bytes_down: u64,
    pub bytes_up: u64,
    pub cumulative_bytes: u64,
    pub mean_bytes_per_round: f64,
    pub product_metric: f64,
}

pub fn communication_cost(ledger: &CommLedger) -> CostReport {
    let t = ledger.totals();
    let cumulative = t.bytes_down + t.bytes_up;
    let mean = if t.rounds == 0 {
        0.0
    } else {
        cumulative as f64 / t.rounds as f64
    };
    CostReport {
        rounds: t.rounds,
        bytes_down: t.bytes_down,
        bytes_up: t.bytes_up,
        cumulative_bytes: cumulative,
        mean_bytes_per_round: mean,
        product_metric: mean * t.rounds as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: usize, selected: usize, responded: usize) -> RoundRecord {
        let ids = |n: usize| (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>();
        RoundRecord {
            round_index: round,
            selected: ids(selected),
            responded: ids(responded),
            aggregated: ids(responded),
            bytes_down: selected as u64 * 40,
            bytes_up: responded as u64 * 56,
            consensus_val_score: Some(0.5),
        }
    }

    #[test]
    fn empty_ledger_costs_nothing() {
        let c = communication_cost(&CommLedger::default());
        assert_eq!((c.rounds, c.cumulative_bytes), (0, 0));
        assert_eq!((c.mean_bytes_per_round, c.product_metric), (0.0, 0.0));
    }

    #[test]
    fn three_by_two_ledger() {
        let mut l = CommLedger::default();
        l.append(record(1, 3, 3));
        l.append(record(2, 3, 3));
        assert_eq!(l.totals().bytes_down, 240);
        assert_eq!(l.totals().bytes_up, 336);
        let c = communication_cost(&l);
        assert_eq!(c.cumulative_bytes, 576);
        assert_eq!(c.mean_bytes_per_round, 288.0);
        assert_eq!(c.product_metric, 576.0);

        let mut dropped = CommLedger::default();
        dropped.append(record(1, 3, 3));
        dropped.append(record(2, 3, 2));
        assert_eq!(communication_cost(&dropped).cumulative_bytes, 520);
    }

    #[test]
    fn csv_layout() {
        let mut l = CommLedger::default();
        l.append(record(1, 2, 1));
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "round,selected,responded,aggregated,bytes_down,bytes_up,consensus_val_score\n\
             1,c0;c1,c0,c0,80,56,0.5\n"
        );
    }
}
