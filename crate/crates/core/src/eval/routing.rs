use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cost {
    pub actions: f64,
    pub tokens: f64,
    pub latency_ms: f64,
}

impl Cost {
    pub fn new(actions: f64, tokens: f64, latency_ms: f64) -> Self {
        Cost { actions, tokens, latency_ms }
    }

    fn is_valid(&self) -> bool {
        [self.actions, self.tokens, self.latency_ms].iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Per-sample outcome under both strategies. Fields are optional on the
/// wire so that gaps surface as `IncompleteRecord` instead of parse errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub sample_id: String,
    #[serde(default)]
    pub correct_direct: Option<bool>,
    #[serde(default)]
    pub correct_agentic: Option<bool>,
    #[serde(default)]
    pub cost_direct: Option<Cost>,
    #[serde(default)]
    pub cost_agentic: Option<Cost>,
    #[serde(default)]
    pub learned_choice: Option<Strategy>,
}

impl RoutingRecord {
    pub fn new(sample_id: &str, correct: (bool, bool), cost: (Cost, Cost), learned: Strategy) -> Self {
        RoutingRecord {
            sample_id: sample_id.to_string(),
            correct_direct: Some(correct.0),
            correct_agentic: Some(correct.1),
            cost_direct: Some(cost.0),
            cost_agentic: Some(cost.1),
            learned_choice: Some(learned),
        }
    }

    fn complete(&self) -> Result<Complete, RoutingError> {
        let missing = |field: &str| RoutingError::IncompleteRecord {
            sample_id: self.sample_id.clone(),
            field: field.to_string(),
        };
        let cd = self.cost_direct.ok_or_else(|| missing("cost_direct"))?;
        let ca = self.cost_agentic.ok_or_else(|| missing("cost_agentic"))?;
        if !cd.is_valid() {
            return Err(missing("cost_direct"));
        }
        if !ca.is_valid() {
            return Err(missing("cost_agentic"));
        }
        Ok(Complete {
            correct: [
                self.correct_direct.ok_or_else(|| missing("correct_direct"))?,
                self.correct_agentic.ok_or_else(|| missing("correct_agentic"))?,
            ],
            cost: [cd, ca],
            learned: self.learned_choice.ok_or_else(|| missing("learned_choice"))?,
        })
    }
}

struct Complete {
    correct: [bool; 2],
    cost: [Cost; 2],
    learned: Strategy,
}

fn slot(s: Strategy) -> usize {
    match s {
        Strategy::Direct => 0,
        Strategy::Agentic => 1,
    }
}

/// Correct strategy if exactly one is; otherwise the one with fewer
/// actions, direct on ties.
pub fn oracle_choice(correct: [bool; 2], cost: [Cost; 2]) -> Strategy {
    match correct {
        [true, false] => Strategy::Direct,
        [false, true] => Strategy::Agentic,
        _ if cost[1].actions < cost[0].actions => Strategy::Agentic,
        _ => Strategy::Direct,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("record `{sample_id}` is missing or has an invalid `{field}`")]
    IncompleteRecord { sample_id: String, field: String },
    #[error("no routing records")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyStats {
    pub accuracy: f64,
    pub mean_actions: f64,
    pub mean_tokens: f64,
    pub mean_latency_ms: f64,
    pub direct_fraction: f64,
    pub agentic_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub samples: usize,
    pub always_direct: StrategyStats,
    pub always_agentic: StrategyStats,
    pub oracle: StrategyStats,
    pub learned: StrategyStats,
}

#[derive(Default)]
struct Acc {
    correct: usize,
    direct: usize,
    cost: Cost,
}

impl Acc {
    fn add(&mut self, r: &Complete, s: Strategy) {
        let i = slot(s);
        self.correct += usize::from(r.correct[i]);
        self.direct += usize::from(i == 0);
        self.cost.actions += r.cost[i].actions;
        self.cost.tokens += r.cost[i].tokens;
        self.cost.latency_ms += r.cost[i].latency_ms;
    }

    fn finish(&self, n: usize) -> StrategyStats {
        let n = n as f64;
        let direct_fraction = self.direct as f64 / n;
        StrategyStats {
            accuracy: self.correct as f64 / n,
            mean_actions: self.cost.actions / n,
            mean_tokens: self.cost.tokens / n,
            mean_latency_ms: self.cost.latency_ms / n,
            direct_fraction,
            agentic_fraction: 1.0 - direct_fraction,
        }
    }
}

/// Aggregates the two fixed strategies, the per-sample oracle, and the
/// policy's own routing. Accuracies are fractions in [0, 1].
pub fn routing_report(records: &[RoutingRecord]) -> Result<StrategyReport, RoutingError> {
    if records.is_empty() {
        return Err(RoutingError::Empty);
    }
    let mut acc: [Acc; 4] = Default::default();
    for r in records {
        let c = r.complete()?;
        acc[0].add(&c, Strategy::Direct);
        acc[1].add(&c, Strategy::Agentic);
        acc[2].add(&c, oracle_choice(c.correct, c.cost));
        acc[3].add(&c, c.learned);
    }
    let n = records.len();
    Ok(StrategyReport {
        samples: n,
        always_direct: acc[0].finish(n),
        always_agentic: acc[1].finish(n),
        oracle: acc[2].finish(n),
        learned: acc[3].finish(n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, d: bool, a: bool, learned: Strategy) -> RoutingRecord {
        RoutingRecord::new(id, (d, a), (Cost::new(1.0, 100.0, 10.0), Cost::new(3.0, 900.0, 80.0)), learned)
    }

    #[test]
    fn three_sample_table() {
        let r = routing_report(&[
            rec("1", true, false, Strategy::Direct),
            rec("2", true, true, Strategy::Agentic),
            rec("3", false, true, Strategy::Direct),
        ])
        .unwrap();
        assert_eq!(r.oracle.accuracy, 1.0);
        assert!((r.always_direct.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.always_agentic.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.learned.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.oracle.mean_actions - 5.0 / 3.0).abs() < 1e-12);
        assert!((r.learned.direct_fraction - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_correct_picks_direct() {
        let r = routing_report(&[rec("1", true, true, Strategy::Agentic), rec("2", true, true, Strategy::Agentic)])
            .unwrap();
        assert_eq!(r.oracle.mean_actions, 1.0);
        assert_eq!(r.oracle.direct_fraction, 1.0);
    }

    #[test]
    fn both_wrong_scores_zero() {
        let r = routing_report(&[rec("1", false, false, Strategy::Agentic)]).unwrap();
        for s in [r.always_direct, r.always_agentic, r.oracle, r.learned] {
            assert_eq!(s.accuracy, 0.0);
        }
    }

    #[test]
    fn gaps_are_reported() {
        let mut r = rec("x", true, true, Strategy::Direct);
        r.cost_agentic = None;
        assert_eq!(
            routing_report(&[r]),
            Err(RoutingError::IncompleteRecord { sample_id: "x".into(), field: "cost_agentic".into() })
        );
        let parsed: RoutingRecord = serde_json::from_str(r#"{"sample_id":"y","correct_direct":true}"#).unwrap();
        assert!(matches!(routing_report(&[parsed]), Err(RoutingError::IncompleteRecord { .. })));
        assert_eq!(routing_report(&[]), Err(RoutingError::Empty));
    }

    proptest::proptest! {
        #[test]
        fn oracle_dominates(rows in proptest::collection::vec((proptest::bool::ANY, proptest::bool::ANY, 0u8..5, 0u8..5, proptest::bool::ANY), 1..40)) {
            let records: Vec<_> = rows
                .iter()
                .enumerate()
                .map(|(i, &(d, a, cd, ca, l))| {
                    let learned = if l { Strategy::Agentic } else { Strategy::Direct };
                    let cost = (Cost::new(cd.into(), 1.0, 1.0), Cost::new(ca.into(), 1.0, 1.0));
                    RoutingRecord::new(&i.to_string(), (d, a), cost, learned)
                })
                .collect();
            let r = routing_report(&records).unwrap();
            for s in [r.always_direct, r.always_agentic, r.learned] {
                proptest::prop_assert!(r.oracle.accuracy >= s.accuracy);
                if s.accuracy == r.oracle.accuracy {
                    proptest::prop_assert!(r.oracle.mean_actions <= s.mean_actions + 1e-12);
                }
            }
            proptest::prop_assert!((r.oracle.direct_fraction + r.oracle.agentic_fraction - 1.0).abs() < 1e-12);
        }
    }
}
