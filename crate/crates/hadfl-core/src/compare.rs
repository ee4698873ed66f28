//! Cross-scheme comparison summaries.
//!
//! Reads metrics files from runs over the same task and reports, per
//! scheme: best accuracy, virtual time to its own near-best accuracy, time
//! to a common target, and speedup ratios against every other scheme. The
//! two time bases are labeled separately because each scheme peaks at a
//! different accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;

#[derive(Debug, Clone)]
pub struct SchemeSummary {
    pub scheme: String,
    pub runs: usize,
    pub best_accuracy: f64,
    /// Median virtual time to reach (best accuracy - 0.01).
    pub time_to_own_best: Option<f64>,
    /// Median virtual time to reach the common target.
    pub time_to_common: Option<f64>,
    pub total_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub common_target: f64,
    pub summaries: Vec<SchemeSummary>,
}

/// Virtual time of the first record reaching `target` accuracy.
pub fn time_to_accuracy(records: &[MetricsRecord], target: f64) -> Option<f64> {
    records
        .iter()
        .find(|r| r.test_accuracy >= target)
        .map(|r| r.virtual_time)
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(xs[xs.len() / 2])
}

/// Builds the comparison from (scheme label, per-seed records) pairs. The
/// common target is `common_fraction` of the best accuracy of the scheme
/// named by `target_scheme` (or the overall best when absent).
pub fn compare(
    runs: &[(String, Vec<MetricsRecord>)],
    target_scheme: Option<&str>,
    common_fraction: f64,
) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::invalid("runs", "need at least two runs to compare"));
    }
    let mut by_scheme: BTreeMap<String, Vec<&Vec<MetricsRecord>>> = BTreeMap::new();
    for (scheme, records) in runs {
        by_scheme.entry(scheme.clone()).or_default().push(records);
    }
    let best_of = |records: &[&Vec<MetricsRecord>]| -> f64 {
        records
            .iter()
            .flat_map(|r| r.iter())
            .map(|r| r.test_accuracy)
            .fold(0.0, f64::max)
    };
    let reference_best = match target_scheme {
        Some(name) => by_scheme
            .get(name)
            .map(|r| best_of(r))
            .ok_or_else(|| Error::invalid("target_scheme", format!("no runs for `{name}`")))?,
        None => by_scheme.values().map(|r| best_of(r)).fold(0.0, f64::max),
    };
    let common_target = reference_best * common_fraction;
    let mut summaries = Vec::new();
    for (scheme, records) in &by_scheme {
        let best = best_of(records);
        let own_target = best - 0.01;
        let own_times: Vec<f64> = records
            .iter()
            .filter_map(|r| time_to_accuracy(r, own_target))
            .collect();
        let common_times: Vec<f64> = records
            .iter()
            .filter_map(|r| time_to_accuracy(r, common_target))
            .collect();
        let reached_common = common_times.len() == records.len();
        let reached_own = own_times.len() == records.len();
        summaries.push(SchemeSummary {
            scheme: scheme.clone(),
            runs: records.len(),
            best_accuracy: best,
            time_to_own_best: if reached_own { median(own_times) } else { None },
            time_to_common: if reached_common {
                median(common_times)
            } else {
                None
            },
            total_bytes: records
                .iter()
                .filter_map(|r| r.last().map(|rec| rec.total_bytes))
                .max()
                .unwrap_or(0),
        });
    }
    Ok(Comparison {
        common_target,
        summaries,
    })
}

impl Comparison {
    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "common accuracy target: {:.4} (time-to-common below uses it)",
            self.common_target
        );
        let _ = writeln!(
            s,
            "{:<16} {:>5} {:>10} {:>14} {:>14} {:>14}",
            "scheme", "runs", "best acc", "t(own best)", "t(common)", "bytes"
        );
        for sm in &self.summaries {
            let own = sm
                .time_to_own_best
                .map(|t| format!("{t:.3}"))
                .unwrap_or_else(|| "not reached".into());
            let common = sm
                .time_to_common
                .map(|t| format!("{t:.3}"))
                .unwrap_or_else(|| "not reached".into());
            let _ = writeln!(
                s,
                "{:<16} {:>5} {:>10.4} {:>14} {:>14} {:>14}",
                sm.scheme, sm.runs, sm.best_accuracy, own, common, sm.total_bytes
            );
        }
        // pairwise speedups on the common target
        for a in &self.summaries {
            for b in &self.summaries {
                if a.scheme == b.scheme {
                    continue;
                }
                if let (Some(ta), Some(tb)) = (a.time_to_common, b.time_to_common) {
                    if ta > 0.0 {
                        let _ = writeln!(
                            s,
                            "speedup {} vs {} (common target): {:.2}x",
                            a.scheme,
                            b.scheme,
                            tb / ta
                        );
                    }
                }
            }
        }
        s
    }

    /// Machine-readable summary lines.
    pub fn render_csv(&self) -> String {
        let mut s = String::from(
            "scheme,runs,best_accuracy,time_to_own_best,time_to_common,total_bytes\n",
        );
        for sm in &self.summaries {
            let own = sm
                .time_to_own_best
                .map(|t| t.to_string())
                .unwrap_or_else(|| "not-reached".into());
            let common = sm
                .time_to_common
                .map(|t| t.to_string())
                .unwrap_or_else(|| "not-reached".into());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                sm.scheme, sm.runs, sm.best_accuracy, own, common, sm.total_bytes
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(times_and_accs: &[(f64, f64)]) -> Vec<MetricsRecord> {
        times_and_accs
            .iter()
            .enumerate()
            .map(|(i, &(t, a))| MetricsRecord {
                sync_round: i as u64 + 1,
                virtual_time: t,
                train_loss: 1.0 - a,
                test_accuracy: a,
                versions: vec![],
                selected: vec![],
                round_bytes: 10,
                total_bytes: 10 * (i as u64 + 1),
            })
            .collect()
    }

    #[test]
    fn identical_runs_have_unity_speedup() {
        let r = records(&[(1.0, 0.5), (2.0, 0.9), (3.0, 0.95)]);
        let runs = vec![("a".to_string(), r.clone()), ("b".to_string(), r)];
        let cmp = compare(&runs, None, 0.95).unwrap();
        let ta = cmp.summaries[0].time_to_common.unwrap();
        let tb = cmp.summaries[1].time_to_common.unwrap();
        assert!((ta / tb - 1.0).abs() < 1e-12);
    }

    #[test]
    fn halved_time_doubles_speedup() {
        let slow = records(&[(2.0, 0.5), (4.0, 0.96)]);
        let fast = records(&[(1.0, 0.5), (2.0, 0.96)]);
        let runs = vec![("slow".to_string(), slow), ("fast".to_string(), fast)];
        let cmp = compare(&runs, None, 0.95).unwrap();
        let t_fast = cmp
            .summaries
            .iter()
            .find(|s| s.scheme == "fast")
            .unwrap()
            .time_to_common
            .unwrap();
        let t_slow = cmp
            .summaries
            .iter()
            .find(|s| s.scheme == "slow")
            .unwrap()
            .time_to_common
            .unwrap();
        assert!((t_slow / t_fast - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unreached_target_is_reported() {
        let low = records(&[(1.0, 0.3), (2.0, 0.4)]);
        let high = records(&[(1.0, 0.5), (2.0, 0.99)]);
        let runs = vec![("low".to_string(), low), ("high".to_string(), high)];
        let cmp = compare(&runs, None, 0.95).unwrap();
        let low_summary = cmp.summaries.iter().find(|s| s.scheme == "low").unwrap();
        assert!(low_summary.time_to_common.is_none());
        assert!(cmp.render_table().contains("not reached"));
    }

    #[test]
    fn median_over_seeds() {
        let a = records(&[(1.0, 0.96)]);
        let b = records(&[(3.0, 0.96)]);
        let c = records(&[(10.0, 0.96)]);
        let runs = vec![
            ("x".to_string(), a),
            ("x".to_string(), b),
            ("x".to_string(), c),
            ("y".to_string(), records(&[(1.0, 0.9)])),
        ];
        let cmp = compare(&runs, Some("x"), 0.95).unwrap();
        let x = cmp.summaries.iter().find(|s| s.scheme == "x").unwrap();
        assert_eq!(x.time_to_common, Some(3.0));
    }
}
