//! Per-institution robustness statistics and rank-then-aggregate ranking.
//!
//! At each institution every algorithm is ranked on each comparison, i.e.
//! each (case, region, metric) triple: DSC descending, HD95 ascending, a
//! missing prediction below any present value, and ties sharing the minimum
//! rank. An algorithm's per-institution rank is the mean of its comparison
//! ranks; its final rank orders the means of its per-institution ranks, again
//! with minimum-rank ties.

mod io;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::volumes::Region;

pub use io::{read_records_csv, write_records_csv, write_rank_csv, RankReport, MetricSummary};

/// Relative tolerance under which two mean ranks count as tied.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub algorithm: String,
    pub institution: String,
    pub case: String,
    pub region: Region,
    pub metric: MetricKind,
    /// `None` marks a missing prediction.
    pub value: Option<f64>,
}

impl MetricRecord {
    pub fn is_missing(&self) -> bool {
        self.value.is_none()
    }
}

type Key<'a> = (&'a str, &'a str, &'a str, Region, MetricKind);

/// Rejects NaN values and duplicate keys.
pub fn validate_records(records: &[MetricRecord]) -> Result<()> {
    let mut seen: BTreeSet<Key<'_>> = BTreeSet::new();
    for r in records {
        if let Some(v) = r.value {
            if !v.is_finite() {
                return Err(Error::Ranking(format!(
                    "non-finite value for {}/{}/{}/{}/{}",
                    r.algorithm, r.institution, r.case, r.region, r.metric
                )));
            }
        }
        let key = (r.algorithm.as_str(), r.institution.as_str(), r.case.as_str(), r.region, r.metric);
        if !seen.insert(key) {
            return Err(Error::Ranking(format!(
                "duplicate record for algorithm {} institution {} case {} {} {}",
                r.algorithm, r.institution, r.case, r.region, r.metric
            )));
        }
    }
    Ok(())
}

/// Per-institution mean of the present case values for one algorithm,
/// metric and region, keyed by institution.
pub fn institution_means(
    records: &[MetricRecord],
    algorithm: &str,
    metric: MetricKind,
    region: Region,
) -> Result<BTreeMap<String, f64>> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.algorithm == algorithm && r.metric == metric && r.region == region)
    {
        let slot = acc.entry(r.institution.as_str()).or_insert((0.0, 0));
        if let Some(v) = r.value {
            slot.0 += v;
            slot.1 += 1;
        }
    }
    if acc.is_empty() {
        return Err(Error::Ranking(format!(
            "no {metric} {region} records for algorithm {algorithm}"
        )));
    }
    acc.into_iter()
        .map(|(inst, (sum, n))| {
            if n == 0 {
                Err(Error::Ranking(format!(
                    "institution {inst} has no present {metric} {region} values for {algorithm}"
                )))
            } else {
                Ok((inst.to_string(), sum / n as f64))
            }
        })
        .collect()
}

/// Mean over institutions of each institution's case mean, so every
/// institution weighs the same regardless of its case count.
pub fn mean_performance(
    records: &[MetricRecord],
    algorithm: &str,
    metric: MetricKind,
    region: Region,
) -> Result<f64> {
    let means = institution_means(records, algorithm, metric, region)?;
    Ok(means.values().sum::<f64>() / means.len() as f64)
}

/// Institution with the worst mean (lowest DSC, highest HD95). Ties go to
/// the lexicographically first institution.
pub fn worst_case_performance(
    records: &[MetricRecord],
    algorithm: &str,
    metric: MetricKind,
    region: Region,
) -> Result<(String, f64)> {
    let means = institution_means(records, algorithm, metric, region)?;
    let mut worst: Option<(String, f64)> = None;
    for (inst, v) in means {
        let worse = match &worst {
            None => true,
            Some((_, w)) if metric.higher_is_better() => v < *w,
            Some((_, w)) => v > *w,
        };
        if worse {
            worst = Some((inst, v));
        }
    }
    worst.ok_or_else(|| Error::Ranking("no institutions".into()))
}

/// Better-first ordering of two entries of a comparison.
fn compare(metric: MetricKind, a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Greater,
        (Some(_), None) => Ordering::Less,
        (Some(x), Some(y)) => {
            if metric.higher_is_better() {
                y.total_cmp(&x)
            } else {
                x.total_cmp(&y)
            }
        }
    }
}

/// Minimum ranks (1-based) of `items` under a better-first comparison.
fn min_ranks<T, F: Fn(&T, &T) -> Ordering>(items: &[T], cmp: F) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| cmp(&items[i], &items[j]));
    let mut ranks = vec![0; items.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && cmp(&items[order[pos - 1]], &items[i]) == Ordering::Equal {
            ranks[order[pos - 1]]
        } else {
            pos + 1
        };
    }
    ranks
}

fn algorithms_of(records: &[MetricRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| r.algorithm.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn institutions_of(records: &[MetricRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| r.institution.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Mean comparison rank of every algorithm at `institution`.
///
/// Every algorithm seen anywhere in `records` must supply a record (present
/// or missing) for the same set of cases, each with all three regions and
/// both metrics.
pub fn per_institution_rank(records: &[MetricRecord], institution: &str) -> Result<BTreeMap<String, f64>> {
    validate_records(records)?;
    let algorithms = algorithms_of(records);
    per_institution_rank_for(records, institution, &algorithms)
}

fn per_institution_rank_for(
    records: &[MetricRecord],
    institution: &str,
    algorithms: &[String],
) -> Result<BTreeMap<String, f64>> {
    // (case, region, metric) -> algorithm -> value
    let mut table: BTreeMap<(&str, Region, MetricKind), BTreeMap<&str, Option<f64>>> = BTreeMap::new();
    let mut cases_by_alg: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.institution == institution) {
        table
            .entry((r.case.as_str(), r.region, r.metric))
            .or_default()
            .insert(r.algorithm.as_str(), r.value);
        cases_by_alg.entry(r.algorithm.as_str()).or_default().insert(r.case.as_str());
    }
    if table.is_empty() {
        return Err(Error::Ranking(format!("no records for institution {institution}")));
    }
    let cases: BTreeSet<&str> = table.keys().map(|k| k.0).collect();
    for alg in algorithms {
        match cases_by_alg.get(alg.as_str()) {
            Some(c) if *c == cases => {}
            Some(c) => {
                return Err(Error::Ranking(format!(
                    "algorithm {alg} covers {} of {} cases at institution {institution}; \
                     flag absent predictions as missing",
                    c.len(),
                    cases.len()
                )))
            }
            None => {
                return Err(Error::Ranking(format!(
                    "algorithm {alg} has no records at institution {institution}"
                )))
            }
        }
    }
    for case in &cases {
        for region in Region::ALL {
            for metric in MetricKind::ALL {
                let row = table.get(&(*case, region, metric));
                let complete = row.is_some_and(|row| algorithms.iter().all(|a| row.contains_key(a.as_str())));
                if !complete {
                    return Err(Error::Ranking(format!(
                        "incomplete comparison at institution {institution}: case {case} {region} {metric}"
                    )));
                }
            }
        }
    }

    let mut sums = vec![0usize; algorithms.len()];
    for ((_, _, metric), row) in &table {
        let values: Vec<Option<f64>> = algorithms.iter().map(|a| row[a.as_str()]).collect();
        let ranks = min_ranks(&values, |a, b| compare(*metric, *a, *b));
        for (s, r) in sums.iter_mut().zip(ranks) {
            *s += r;
        }
    }
    let n = table.len() as f64;
    Ok(algorithms
        .iter()
        .zip(sums)
        .map(|(a, s)| (a.clone(), s as f64 / n))
        .collect())
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_EPS * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub algorithms: Vec<String>,
    pub institutions: Vec<String>,
    /// `per_institution[algorithm][institution]` mean comparison rank.
    pub per_institution: BTreeMap<String, BTreeMap<String, f64>>,
    pub mean_ranks: BTreeMap<String, f64>,
    pub final_ranks: BTreeMap<String, usize>,
}

impl RankTable {
    /// Algorithms in final-rank order, ties broken by name.
    pub fn ordered(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<(&str, usize)> = self
            .final_ranks
            .iter()
            .map(|(a, r)| (a.as_str(), *r))
            .collect();
        v.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
        v
    }
}

/// Final ranks from `per_institution[algorithm][institution]`.
pub fn final_rank(per_institution: &BTreeMap<String, BTreeMap<String, f64>>) -> Result<RankTable> {
    let algorithms: Vec<String> = per_institution.keys().cloned().collect();
    let institutions: Vec<String> = per_institution
        .values()
        .next()
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    if algorithms.is_empty() || institutions.is_empty() {
        return Err(Error::Ranking("nothing to rank".into()));
    }
    for (alg, ranks) in per_institution {
        if ranks.keys().ne(institutions.iter()) {
            return Err(Error::Ranking(format!(
                "algorithm {alg} is ranked at a different set of institutions"
            )));
        }
    }
    let means: Vec<f64> = algorithms
        .iter()
        .map(|a| per_institution[a].values().sum::<f64>() / institutions.len() as f64)
        .collect();
    let ranks = min_ranks(&means, |a, b| if tied(*a, *b) { Ordering::Equal } else { a.total_cmp(b) });
    Ok(RankTable {
        mean_ranks: algorithms.iter().cloned().zip(means).collect(),
        final_ranks: algorithms.iter().cloned().zip(ranks).collect(),
        algorithms,
        institutions,
        per_institution: per_institution.clone(),
    })
}

/// Full pipeline: per-institution ranks at every institution, then final
/// ranks.
pub fn rank_algorithms(records: &[MetricRecord]) -> Result<RankTable> {
    validate_records(records)?;
    let algorithms = algorithms_of(records);
    let institutions = institutions_of(records);
    let mut per: BTreeMap<String, BTreeMap<String, f64>> =
        algorithms.iter().map(|a| (a.clone(), BTreeMap::new())).collect();
    for inst in &institutions {
        for (alg, r) in per_institution_rank_for(records, inst, &algorithms)? {
            per.get_mut(&alg).unwrap().insert(inst.clone(), r);
        }
    }
    final_rank(&per)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(alg: &str, inst: &str, case: &str, region: Region, metric: MetricKind, v: Option<f64>) -> MetricRecord {
        MetricRecord {
            algorithm: alg.into(),
            institution: inst.into(),
            case: case.into(),
            region,
            metric,
            value: v,
        }
    }

    /// Full record set for one algorithm and case with constant values.
    fn case_records(alg: &str, inst: &str, case: &str, dsc: Option<f64>, hd: Option<f64>) -> Vec<MetricRecord> {
        Region::ALL
            .iter()
            .flat_map(|&r| {
                [
                    rec(alg, inst, case, r, MetricKind::Dice, dsc),
                    rec(alg, inst, case, r, MetricKind::Hd95, hd),
                ]
            })
            .collect()
    }

    #[test]
    fn two_level_mean() {
        let recs = vec![
            rec("a", "A", "1", Region::WT, MetricKind::Dice, Some(0.8)),
            rec("a", "A", "2", Region::WT, MetricKind::Dice, Some(0.6)),
            rec("a", "B", "3", Region::WT, MetricKind::Dice, Some(1.0)),
        ];
        let m = mean_performance(&recs, "a", MetricKind::Dice, Region::WT).unwrap();
        assert!((m - 0.85).abs() < 1e-15);
        let pooled = (0.8 + 0.6 + 1.0) / 3.0;
        assert!((pooled - 0.8f64).abs() < 1e-15);
        assert!((m - pooled).abs() > 0.04);
        let (inst, v) = worst_case_performance(&recs, "a", MetricKind::Dice, Region::WT).unwrap();
        assert_eq!(inst, "A");
        assert!((v - 0.7).abs() < 1e-15);
    }

    #[test]
    fn mean_single_institution_and_constant() {
        let recs = vec![
            rec("a", "A", "1", Region::ET, MetricKind::Dice, Some(0.2)),
            rec("a", "A", "2", Region::ET, MetricKind::Dice, Some(0.4)),
        ];
        assert!((mean_performance(&recs, "a", MetricKind::Dice, Region::ET).unwrap() - 0.3).abs() < 1e-15);
        let constant = vec![
            rec("a", "A", "1", Region::ET, MetricKind::Dice, Some(0.5)),
            rec("a", "B", "2", Region::ET, MetricKind::Dice, Some(0.5)),
            rec("a", "B", "3", Region::ET, MetricKind::Dice, Some(0.5)),
        ];
        assert_eq!(mean_performance(&constant, "a", MetricKind::Dice, Region::ET).unwrap(), 0.5);
        assert!(mean_performance(&constant, "zzz", MetricKind::Dice, Region::ET).is_err());
    }

    #[test]
    fn worst_case_for_distance_is_max() {
        let recs = vec![
            rec("a", "A", "1", Region::TC, MetricKind::Hd95, Some(3.0)),
            rec("a", "B", "2", Region::TC, MetricKind::Hd95, Some(5.0)),
        ];
        assert_eq!(
            worst_case_performance(&recs, "a", MetricKind::Hd95, Region::TC).unwrap(),
            ("B".to_string(), 5.0)
        );
        let one = &recs[..1];
        assert_eq!(
            worst_case_performance(one, "a", MetricKind::Hd95, Region::TC).unwrap(),
            ("A".to_string(), 3.0)
        );
    }

    #[test]
    fn dominance_and_ties() {
        let mut recs = case_records("good", "A", "1", Some(0.9), Some(1.0));
        recs.extend(case_records("bad", "A", "1", Some(0.5), Some(9.0)));
        let r = per_institution_rank(&recs, "A").unwrap();
        assert_eq!(r["good"], 1.0);
        assert_eq!(r["bad"], 2.0);

        let mut same = case_records("x", "A", "1", Some(0.7), Some(2.0));
        same.extend(case_records("y", "A", "1", Some(0.7), Some(2.0)));
        let r = per_institution_rank(&same, "A").unwrap();
        assert_eq!((r["x"], r["y"]), (1.0, 1.0));
    }

    #[test]
    fn split_decision_averages_to_one_and_a_half() {
        // One case, one region: algorithm p wins DSC, q wins HD95. Other
        // regions are identical ties at rank 1.
        let mut recs = Vec::new();
        for (alg, dsc, hd) in [("p", 0.9, 5.0), ("q", 0.8, 2.0)] {
            recs.push(rec(alg, "A", "1", Region::WT, MetricKind::Dice, Some(dsc)));
            recs.push(rec(alg, "A", "1", Region::WT, MetricKind::Hd95, Some(hd)));
        }
        let only_wt: BTreeMap<String, f64> = {
            // rank the two WT comparisons by hand
            let mut sums = BTreeMap::new();
            for m in MetricKind::ALL {
                let vals: Vec<(&str, f64)> = recs
                    .iter()
                    .filter(|r| r.metric == m)
                    .map(|r| (r.algorithm.as_str(), r.value.unwrap()))
                    .collect();
                for (a, v) in &vals {
                    let better = vals
                        .iter()
                        .filter(|(_, w)| if m.higher_is_better() { w > v } else { w < v })
                        .count();
                    *sums.entry(a.to_string()).or_insert(0.0) += (1 + better) as f64 / 2.0;
                }
            }
            sums
        };
        assert_eq!(only_wt["p"], 1.5);
        assert_eq!(only_wt["q"], 1.5);
        for alg in ["p", "q"] {
            for region in [Region::ET, Region::TC] {
                recs.push(rec(alg, "A", "1", region, MetricKind::Dice, Some(0.5)));
                recs.push(rec(alg, "A", "1", region, MetricKind::Hd95, Some(1.0)));
            }
        }
        let r = per_institution_rank(&recs, "A").unwrap();
        assert_eq!(r["p"], r["q"]);
        assert_eq!(r["p"], 7.0 / 6.0);
    }

    #[test]
    fn missing_ranks_last() {
        let mut recs = case_records("present", "A", "1", Some(0.0), Some(500.0));
        recs.extend(case_records("absent", "A", "1", None, None));
        let r = per_institution_rank(&recs, "A").unwrap();
        assert_eq!(r["present"], 1.0);
        assert_eq!(r["absent"], 2.0);
    }

    #[test]
    fn ragged_cases_rejected() {
        let mut recs = case_records("a", "A", "1", Some(0.5), Some(1.0));
        recs.extend(case_records("a", "A", "2", Some(0.5), Some(1.0)));
        recs.extend(case_records("b", "A", "1", Some(0.5), Some(1.0)));
        assert!(matches!(per_institution_rank(&recs, "A"), Err(Error::Ranking(_))));
        recs.extend(case_records("b", "A", "2", None, None));
        per_institution_rank(&recs, "A").unwrap();
        recs.pop();
        assert!(per_institution_rank(&recs, "A").is_err());
    }

    #[test]
    fn duplicates_rejected() {
        let mut recs = case_records("a", "A", "1", Some(0.5), Some(1.0));
        recs.push(recs[0].clone());
        assert!(rank_algorithms(&recs).is_err());
    }

    fn per(entries: &[(&str, &[f64])]) -> BTreeMap<String, BTreeMap<String, f64>> {
        entries
            .iter()
            .map(|(a, ranks)| {
                (
                    a.to_string(),
                    ranks.iter().enumerate().map(|(i, r)| (format!("i{i}"), *r)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn final_rank_examples() {
        let t = final_rank(&per(&[("A", &[1.0, 1.0]), ("B", &[2.0, 2.0])])).unwrap();
        assert_eq!((t.final_ranks["A"], t.final_ranks["B"]), (1, 2));
        let t = final_rank(&per(&[("A", &[1.0, 2.0]), ("B", &[2.0, 1.0])])).unwrap();
        assert_eq!((t.final_ranks["A"], t.final_ranks["B"]), (1, 1));
        let t = final_rank(&per(&[("x", &[1.5]), ("y", &[1.5]), ("z", &[2.0])])).unwrap();
        assert_eq!(
            (t.final_ranks["x"], t.final_ranks["y"], t.final_ranks["z"]),
            (1, 1, 3)
        );
    }

    #[test]
    fn final_rank_rejects_ragged() {
        let mut p = per(&[("A", &[1.0, 1.0]), ("B", &[2.0, 2.0])]);
        p.get_mut("B").unwrap().remove("i1");
        assert!(final_rank(&p).is_err());
        assert!(final_rank(&BTreeMap::new()).is_err());
    }

    #[test]
    fn min_ranks_convention() {
        assert_eq!(min_ranks(&[3, 1, 3, 2, 1], |a, b| a.cmp(b)), vec![4, 1, 4, 3, 1]);
    }
}
