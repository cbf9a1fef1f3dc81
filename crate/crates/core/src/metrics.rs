//! Pass-rate metrics, least-squares fits, worst-plan avoidance and relative
//! improvement.
//!
//! Rates are kept as exact counts and only turned into percentages when read;
//! rounding to two decimals happens at presentation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{ConstraintKind, EvaluationReport};
use crate::discriminators::Ranking;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("ranking {ranking} does not contain plan `{plan_id}`")]
    MissingPlan { ranking: usize, plan_id: String },
    #[error("baseline must be positive")]
    ZeroBaseline,
}

/// Exact counts behind a [`BatchMetrics`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCounts {
    pub plans: u64,
    pub delivered: u64,
    pub commonsense_passed: u64,
    pub commonsense_applicable: u64,
    pub commonsense_all_passed: u64,
    pub hard_passed: u64,
    pub hard_applicable: u64,
    pub hard_all_passed: u64,
    pub final_passed: u64,
}

impl BatchCounts {
    pub fn tally(reports: &[EvaluationReport]) -> BatchCounts {
        let mut c = BatchCounts {
            plans: reports.len() as u64,
            ..Default::default()
        };
        for r in reports.iter().filter(|r| r.delivered) {
            c.delivered += 1;
            let (p, a) = r.counts(ConstraintKind::Commonsense);
            c.commonsense_passed += p as u64;
            c.commonsense_applicable += a as u64;
            let (p, a) = r.counts(ConstraintKind::Hard);
            c.hard_passed += p as u64;
            c.hard_applicable += a as u64;
            let cs = r.all_passed(ConstraintKind::Commonsense);
            let hard = r.all_passed(ConstraintKind::Hard);
            c.commonsense_all_passed += cs as u64;
            c.hard_all_passed += hard as u64;
            c.final_passed += (cs && hard) as u64;
        }
        c
    }
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Delivery, micro/macro and final pass rates, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub delivery_rate: f64,
    pub commonsense_micro: f64,
    pub commonsense_macro: f64,
    pub hard_micro: f64,
    pub hard_macro: f64,
    pub final_pass_rate: f64,
    pub counts: BatchCounts,
}

impl BatchMetrics {
    pub fn from_counts(c: BatchCounts) -> Result<BatchMetrics, MetricsError> {
        if c.plans == 0 {
            return Err(MetricsError::EmptyBatch);
        }
        Ok(BatchMetrics {
            delivery_rate: percent(c.delivered, c.plans),
            commonsense_micro: percent(c.commonsense_passed, c.commonsense_applicable),
            commonsense_macro: percent(c.commonsense_all_passed, c.plans),
            hard_micro: percent(c.hard_passed, c.hard_applicable),
            hard_macro: percent(c.hard_all_passed, c.plans),
            final_pass_rate: percent(c.final_passed, c.plans),
            counts: c,
        })
    }

    pub fn row(&self, label: impl Into<String>) -> MetricRow {
        MetricRow {
            label: label.into(),
            delivery_rate: self.delivery_rate,
            commonsense_micro: self.commonsense_micro,
            commonsense_macro: self.commonsense_macro,
            hard_micro: self.hard_micro,
            hard_macro: self.hard_macro,
            final_pass_rate: self.final_pass_rate,
        }
    }
}

/// Micro rates count individual applicable checks over delivered plans;
/// macro rates count plans with every check of a kind passing over all
/// plans; undelivered plans fail every macro and the final rate.
pub fn batch_metrics(reports: &[EvaluationReport]) -> Result<BatchMetrics, MetricsError> {
    BatchMetrics::from_counts(BatchCounts::tally(reports))
}

/// One labeled line of a metric table, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub delivery_rate: f64,
    pub commonsense_micro: f64,
    pub commonsense_macro: f64,
    pub hard_micro: f64,
    pub hard_macro: f64,
    pub final_pass_rate: f64,
}

impl MetricRow {
    pub fn values(&self) -> [f64; 6] {
        [
            self.delivery_rate,
            self.commonsense_micro,
            self.commonsense_macro,
            self.hard_micro,
            self.hard_macro,
            self.final_pass_rate,
        ]
    }

    /// A plan passing everything passes every check of each kind, so the
    /// final rate can never exceed either macro rate.
    pub fn final_within_macros(&self) -> bool {
        self.final_pass_rate <= self.commonsense_macro.min(self.hard_macro)
    }
}

const HEADERS: [&str; 7] = ["", "Delivery", "CS Micro", "CS Macro", "Hard Micro", "Hard Macro", "Final"];

/// Aligned plain-text table, two decimals per rate.
pub fn render_table(rows: &[MetricRow]) -> String {
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            let v = r.values();
            [
                r.label.clone(),
                format!("{:.2}", v[0]),
                format!("{:.2}", v[1]),
                format!("{:.2}", v[2]),
                format!("{:.2}", v[3]),
                format!("{:.2}", v[4]),
                format!("{:.2}", v[5]),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: &[&str]| {
        let mut s = format!("{:<w$}", cols[0], w = widths[0]);
        for (c, w) in cols[1..].iter().zip(&widths[1..]) {
            write!(s, "  {c:>w$}").unwrap();
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&HEADERS);
    for row in &cells {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Ordinary least-squares fit of `ys` on `xs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub r_squared: f64,
    pub slope: f64,
    pub intercept: f64,
}

pub fn r_squared(xs: &[f64], ys: &[f64]) -> Result<FitResult, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::DegenerateInput("xs and ys differ in length"));
    }
    if xs.len() < 2 {
        return Err(MetricsError::DegenerateInput("fewer than two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::DegenerateInput("xs are constant"));
    }
    if syy == 0.0 {
        return Err(MetricsError::DegenerateInput("ys are constant"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - (intercept + slope * x)).powi(2)).sum();
    Ok(FitResult {
        r_squared: 1.0 - ss_res / syy,
        slope,
        intercept,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// The same fit on average ranks of both variables.
pub fn r_squared_ranks(xs: &[f64], ys: &[f64]) -> Result<FitResult, MetricsError> {
    r_squared(&average_ranks(xs), &average_ranks(ys))
}

/// Number of rankings whose top plan is not `worst_id`.
pub fn worst_plan_avoidance(rankings: &[Ranking], worst_id: &str) -> Result<usize, MetricsError> {
    let mut avoided = 0;
    for (i, r) in rankings.iter().enumerate() {
        if !r.ordered_plan_ids.iter().any(|p| p == worst_id) {
            return Err(MetricsError::MissingPlan {
                ranking: i,
                plan_id: worst_id.to_string(),
            });
        }
        if r.top() != Some(worst_id) {
            avoided += 1;
        }
    }
    Ok(avoided)
}

/// `100 * (improved - baseline) / baseline`.
pub fn relative_improvement(baseline: f64, improved: f64) -> Result<f64, MetricsError> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(100.0 * (improved - baseline) / baseline)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::constraints::{ConstraintId, ConstraintOutcome};
    use crate::discriminators::RankingSource;

    fn report(delivered: bool, cs: &[bool], hard: &[bool]) -> EvaluationReport {
        let outcomes = |ids: &[ConstraintId], passes: &[bool]| {
            ids.iter()
                .zip(passes)
                .map(|(&id, &p)| {
                    if p {
                        ConstraintOutcome::pass(id)
                    } else {
                        ConstraintOutcome::fail(id, "x")
                    }
                })
                .collect()
        };
        let mut r = EvaluationReport::undelivered("q");
        if delivered {
            r.delivered = true;
            r.commonsense = outcomes(&ConstraintId::ALL[..8], cs);
            r.hard = outcomes(&ConstraintId::ALL[8..], hard);
        }
        r
    }

    #[test]
    fn all_passing_batch_is_100_everywhere() {
        let m = batch_metrics(&[report(true, &[true; 8], &[true; 2]), report(true, &[true; 3], &[true])]).unwrap();
        for v in m.row("").values() {
            assert_eq!(v, 100.0);
        }
    }

    #[test]
    fn hand_counted_micro_and_macro() {
        // two plans with four applicable commonsense checks each, six passes
        let m = batch_metrics(&[
            report(true, &[true, true, true, true], &[]),
            report(true, &[true, false, true, false], &[]),
        ])
        .unwrap();
        assert_eq!(m.commonsense_micro, 75.0);
        assert_eq!(m.commonsense_macro, 50.0);
        assert_eq!(m.counts.commonsense_passed, 6);
        assert_eq!(m.counts.commonsense_applicable, 8);
    }

    #[test]
    fn undelivered_plans_fail_macro_and_final() {
        let m = batch_metrics(&[report(true, &[true], &[true]), report(false, &[], &[])]).unwrap();
        assert_eq!(m.delivery_rate, 50.0);
        assert_eq!(m.commonsense_micro, 100.0);
        assert_eq!(m.commonsense_macro, 50.0);
        assert_eq!(m.final_pass_rate, 50.0);
        let none = batch_metrics(&[report(false, &[], &[])]).unwrap();
        assert_eq!(none.commonsense_micro, 0.0);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert_eq!(batch_metrics(&[]), Err(MetricsError::EmptyBatch));
    }

    #[test]
    fn published_rows_keep_final_within_macros() {
        for row in crate::fixtures::published_rows() {
            assert!(row.final_within_macros(), "{row:?}");
        }
        assert!(5.55 <= f64::min(17.78, 28.33));
    }

    #[test]
    fn table_is_aligned() {
        let mut rows = crate::fixtures::published_rows();
        rows[0].label = "row 1".into();
        rows[1].label = "row 2".into();
        let text = render_table(&rows[..2]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "       Delivery  CS Micro  CS Macro  Hard Micro  Hard Macro  Final");
        assert_eq!(lines[1], "row 1    100.00     80.07     17.78       50.23       28.33   5.55");
        assert_eq!(lines[2], "row 2    100.00     84.93     27.22       61.19       42.78  12.78");
    }

    #[test]
    fn r_squared_reference_values() {
        assert_abs_diff_eq!(r_squared(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().r_squared, 1.0, epsilon = 1e-9);
        let flat = r_squared(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(flat.r_squared, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(flat.slope, 0.0, epsilon = 1e-12);
        let fit = r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(fit.r_squared, 0.75, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.slope, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn r_squared_rejects_degenerate_input() {
        assert!(matches!(r_squared(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::DegenerateInput(_))));
        assert!(matches!(r_squared(&[1.0, 2.0], &[3.0, 3.0]), Err(MetricsError::DegenerateInput(_))));
        assert!(matches!(r_squared(&[1.0], &[3.0]), Err(MetricsError::DegenerateInput(_))));
        assert!(matches!(r_squared(&[1.0, 2.0], &[3.0]), Err(MetricsError::DegenerateInput(_))));
    }

    #[test]
    fn rank_variant_uses_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 30.0, 20.0, 30.0]), vec![1.0, 3.5, 2.0, 3.5]);
        // monotone but non-linear: ranks line up exactly
        assert_abs_diff_eq!(r_squared_ranks(&[1.0, 2.0, 3.0], &[1.0, 10.0, 100.0]).unwrap().r_squared, 1.0, epsilon = 1e-12);
    }

    fn ranking(ids: &[&str]) -> Ranking {
        Ranking {
            source: RankingSource::Llm,
            ordered_plan_ids: ids.iter().map(|s| s.to_string()).collect(),
            scores: Default::default(),
        }
    }

    #[test]
    fn worst_plan_avoidance_counts() {
        let none = vec![ranking(&["a", "w"]); 10];
        assert_eq!(worst_plan_avoidance(&none, "w").unwrap(), 10);
        let all = vec![ranking(&["w", "a"]); 4];
        assert_eq!(worst_plan_avoidance(&all, "w").unwrap(), 0);
        let one = [ranking(&["w", "a"]), ranking(&["a", "w"]), ranking(&["a", "w"])];
        assert_eq!(worst_plan_avoidance(&one, "w").unwrap(), 2);
        assert!(matches!(
            worst_plan_avoidance(&[ranking(&["a"])], "w"),
            Err(MetricsError::MissingPlan { ranking: 0, .. })
        ));
    }

    #[test]
    fn relative_improvement_examples() {
        assert_abs_diff_eq!(relative_improvement(5.55, 7.78).unwrap(), 40.18, epsilon = 0.005);
        assert_abs_diff_eq!(relative_improvement(5.55, 6.11).unwrap(), 10.09, epsilon = 0.005);
        assert_eq!(relative_improvement(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(relative_improvement(0.0, 3.0), Err(MetricsError::ZeroBaseline));
    }

    pub(crate) fn arb_report(checks: usize) -> impl Strategy<Value = EvaluationReport> {
        (
            proptest::bool::weighted(0.9),
            proptest::collection::vec(proptest::bool::weighted(0.8), checks..=checks),
            proptest::collection::vec(proptest::bool::weighted(0.6), 2..=2),
        )
            .prop_map(|(d, cs, hard)| report(d, &cs, &hard))
    }

    proptest! {
        #[test]
        fn final_never_exceeds_either_macro(
            batch in proptest::collection::vec((1usize..=8).prop_flat_map(arb_report), 1..40)
        ) {
            let m = batch_metrics(&batch).unwrap();
            prop_assert!(m.row("").final_within_macros());
            for v in m.row("").values() {
                prop_assert!((0.0..=100.0).contains(&v));
            }
        }

        #[test]
        fn micro_dominates_macro_with_equal_check_counts(
            batch in (1usize..=8).prop_flat_map(|n| proptest::collection::vec(arb_report(n), 1..40))
        ) {
            let m = batch_metrics(&batch).unwrap();
            prop_assert!(m.commonsense_micro >= m.commonsense_macro);
            prop_assert!(m.hard_micro >= m.hard_macro);
        }

        #[test]
        fn r_squared_is_affine_invariant(
            points in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..30),
            scale in prop_oneof![-50.0..-0.1f64, 0.1..50.0f64],
            shift in -1000.0..1000.0f64,
        ) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
            let Ok(base) = r_squared(&xs, &ys) else { return Ok(()) };
            let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            let fit = r_squared(&moved, &ys).unwrap();
            prop_assert!((fit.r_squared - base.r_squared).abs() < 1e-6);
            prop_assert!(fit.r_squared <= 1.0 + 1e-12);
        }

        #[test]
        fn avoidance_is_bounded(tops in proptest::collection::vec(proptest::bool::ANY, 0..20)) {
            let rankings: Vec<Ranking> = tops
                .iter()
                .map(|&w| if w { ranking(&["w", "a"]) } else { ranking(&["a", "w"]) })
                .collect();
            let n = worst_plan_avoidance(&rankings, "w").unwrap();
            prop_assert_eq!(n, tops.iter().filter(|&&w| !w).count());
            prop_assert!(n <= rankings.len());
        }
    }
}
