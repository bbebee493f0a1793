//! Percentile thresholds and outlier verdicts.
//!
//! Free-energy ranks records by implausibility; the threshold `beta` is the
//! nearest-rank upper percentile of the training scores, so roughly the top
//! `alpha` percent of training rows score at or above it. The boundary rule is
//! `score >= beta`: ties at the threshold are all flagged.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::schema::Dataset;

/// Detection settings. Direction is fixed: higher free-energy = more outlying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    /// Percentile of training scores flagged, in (0, 100).
    pub percentile: f64,
}

impl DetectionConfig {
    pub fn new(percentile: f64) -> Result<Self> {
        if !(percentile > 0.0 && percentile < 100.0) {
            return Err(Error::Config(format!(
                "percentile must lie in (0,100), got {percentile}"
            )));
        }
        Ok(DetectionConfig { percentile })
    }
}

/// Per-row scores, threshold, verdicts, and the descending-score ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    pub threshold: f64,
    /// `true` = outlier.
    pub verdicts: Vec<bool>,
    /// Row indices sorted by descending score, ties by ascending index.
    pub ranking: Vec<usize>,
}

/// Nearest-rank upper percentile: `beta` is the `ceil(n * alpha / 100)`-th
/// largest training score, so at least `alpha`% of training rows reach it.
pub fn threshold_from_percentile(train_scores: &[f64], alpha: f64) -> Result<f64> {
    if train_scores.is_empty() {
        return Err(Error::Data("cannot take a percentile of no scores".into()));
    }
    if !(alpha > 0.0 && alpha < 100.0) {
        return Err(Error::Config(format!(
            "percentile must lie in (0,100), got {alpha}"
        )));
    }
    let n = train_scores.len();
    let rank = ((n as f64) * alpha / 100.0).ceil() as usize;
    let rank = rank.clamp(1, n);
    let mut sorted = train_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));
    Ok(sorted[n - rank])
}

/// Score every row and flag those with `free_energy >= beta`.
pub fn detect(model: &Model, data: &Dataset, beta: f64) -> Result<ScoreReport> {
    let scores = model.free_energy_batch(data)?;
    Ok(report_from_scores(scores, beta))
}

/// Build a report from precomputed scores.
pub fn report_from_scores(scores: Vec<f64>, beta: f64) -> ScoreReport {
    let verdicts = scores.iter().map(|&s| s >= beta).collect();
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must not be NaN")
            .then(a.cmp(&b))
    });
    ScoreReport {
        scores,
        threshold: beta,
        verdicts,
        ranking,
    }
}

/// Serialize a report as `row_index,free_energy,verdict` CSV.
pub fn write_report<W: Write>(report: &ScoreReport, writer: &mut W) -> Result<()> {
    writeln!(writer, "row_index,free_energy,verdict")?;
    for (i, (score, verdict)) in report.scores.iter().zip(&report.verdicts).enumerate() {
        writeln!(
            writer,
            "{},{},{}",
            i,
            score,
            if *verdict { "outlier" } else { "inlier" }
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use crate::schema::{parse_schema, Cell, Dataset};
    use proptest::prelude::*;

    #[test]
    fn percentile_top_five_of_hundred() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let beta = threshold_from_percentile(&scores, 5.0).unwrap();
        assert_eq!(beta, 96.0);
        assert_eq!(scores.iter().filter(|&&s| s >= beta).count(), 5);
    }

    #[test]
    fn percentile_degenerate_ties() {
        let scores = vec![3.0; 7];
        let beta = threshold_from_percentile(&scores, 10.0).unwrap();
        assert_eq!(beta, 3.0);
        assert!(scores.iter().all(|&s| s >= beta));
    }

    #[test]
    fn percentile_two_elements() {
        assert_eq!(threshold_from_percentile(&[1.0, 2.0], 50.0).unwrap(), 2.0);
    }

    #[test]
    fn percentile_rejects_bad_input() {
        assert!(threshold_from_percentile(&[], 5.0).is_err());
        assert!(threshold_from_percentile(&[1.0], 0.0).is_err());
        assert!(threshold_from_percentile(&[1.0], 100.0).is_err());
    }

    fn toy_report() -> ScoreReport {
        report_from_scores(vec![2.0, -1.0, 5.0, 2.0], 2.0)
    }

    #[test]
    fn detect_thresholds_and_ranks() {
        let r = toy_report();
        assert_eq!(r.verdicts, vec![true, false, true, true]);
        assert_eq!(r.ranking, vec![2, 0, 3, 1]);
    }

    #[test]
    fn detect_infinite_thresholds() {
        let schema = parse_schema("b:binary").unwrap();
        let model = Model::zeros(schema.clone(), 2).unwrap();
        let data = Dataset::new(
            schema,
            vec![vec![Cell::Binary(0)], vec![Cell::Binary(1)]],
            None,
        )
        .unwrap();
        let all_out = detect(&model, &data, f64::NEG_INFINITY).unwrap();
        assert!(all_out.verdicts.iter().all(|&v| v));
        let all_in = detect(&model, &data, f64::INFINITY).unwrap();
        assert!(all_in.verdicts.iter().all(|&v| !v));
    }

    #[test]
    fn report_csv_shape() {
        let mut buf = Vec::new();
        write_report(&toy_report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "row_index,free_energy,verdict");
        assert_eq!(lines[1], "0,2,outlier");
        assert_eq!(lines[2], "1,-1,inlier");
        assert_eq!(lines.len(), 5);
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(
            scores in proptest::collection::vec(-1e3f64..1e3, 2..60),
            alpha in 1.0f64..99.0,
        ) {
            let beta = threshold_from_percentile(&scores, alpha).unwrap();
            let base = report_from_scores(scores.clone(), beta);

            // strictly increasing transform that stays finite on the whole range
            let mapped: Vec<f64> = scores.iter().map(|s| 3.0 * s + s.atan()).collect();
            let mapped_beta = threshold_from_percentile(&mapped, alpha).unwrap();
            let mapped_report = report_from_scores(mapped, mapped_beta);

            prop_assert_eq!(base.verdicts, mapped_report.verdicts);
            prop_assert_eq!(base.ranking, mapped_report.ranking);
        }

        #[test]
        fn flag_rate_bound(
            scores in proptest::collection::vec(-50f64..50.0, 1..80),
            alpha in 1.0f64..99.0,
        ) {
            let n = scores.len();
            let beta = threshold_from_percentile(&scores, alpha).unwrap();
            let flagged = scores.iter().filter(|&&s| s >= beta).count();
            let multiplicity = scores.iter().filter(|&&s| s == beta).count();
            let rank = ((n as f64) * alpha / 100.0).ceil() as usize;
            prop_assert!(flagged as f64 + 1e-12 >= (n as f64) * alpha / 100.0);
            // at most rank - 1 scores exceed beta; ties at beta add the rest
            prop_assert!(flagged <= rank - 1 + multiplicity);
        }
    }
}
