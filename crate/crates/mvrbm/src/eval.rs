//! Contamination procedure, detection metrics, and the experiment runner.
//!
//! Real datasets get outliers planted by perturbing a random 10% of rows:
//! numeric cells shift by 2-3 standard deviations, discrete cells switch to an
//! alternative value. Detection quality is reported as precision/recall/F over
//! the outlier class plus rank-based ROC AUC.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detect::{detect, threshold_from_percentile, ScoreReport};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::schema::{
    apply_standardization, fit_standardization, split, Cell, ColumnKind, Dataset,
    StandardizationStats,
};
use crate::seed;
use crate::train::{train, TrainingConfig, TrainingReport};

/// Contamination settings: fraction of rows perturbed and the shift range for
/// numeric cells, in units of the column standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContaminationConfig {
    pub fraction: f64,
    pub shift_low: f64,
    pub shift_high: f64,
    pub seed: u64,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        ContaminationConfig {
            fraction: 0.10,
            shift_low: 2.0,
            shift_high: 3.0,
            seed: 0,
        }
    }
}

impl ContaminationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config("contamination fraction must lie in (0,1)".into()));
        }
        if !(self.shift_low > 0.0 && self.shift_low <= self.shift_high) {
            return Err(Error::Config("shift range must satisfy 0 < low <= high".into()));
        }
        Ok(())
    }
}

/// Detection quality over the outlier (positive) class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Present when scores were available, not just verdicts.
    pub auc: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// Plant outliers: perturb `round(fraction * n)` rows chosen without
/// replacement. Gaussian/count cells shift by `s * sigma` with
/// `s ~ Uniform(low, high)` and a random sign (counts round to the nearest
/// non-negative integer), binary cells flip, nominal cells switch to a
/// uniformly chosen different category. Column sigmas come from the clean data.
pub fn contaminate(data: &Dataset, config: &ContaminationConfig) -> Result<Dataset> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot contaminate an empty dataset".into()));
    }
    let n = data.len();
    let chosen = ((n as f64) * config.fraction).round() as usize;

    // per-column sigma over the clean values, numeric columns only
    let sigmas: Vec<Option<f64>> = (0..data.schema.len())
        .map(|col| match data.schema.columns()[col].kind {
            ColumnKind::Gaussian | ColumnKind::Count => {
                let mean = data.rows.iter().map(|r| r[col].as_f64()).sum::<f64>() / n as f64;
                let var = data
                    .rows
                    .iter()
                    .map(|r| {
                        let d = r[col].as_f64() - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n as f64;
                Some(var.sqrt())
            }
            _ => None,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "contaminate"));
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut flags = vec![false; n];
    for &i in &indices[..chosen] {
        flags[i] = true;
    }

    let mut rows = data.rows.clone();
    for (i, row) in rows.iter_mut().enumerate() {
        if !flags[i] {
            continue;
        }
        for (col, cell) in row.iter_mut().enumerate() {
            match (&data.schema.columns()[col].kind, *cell) {
                (ColumnKind::Binary, Cell::Binary(v)) => *cell = Cell::Binary(1 - v),
                (ColumnKind::Nominal(c), Cell::Nominal(v)) => {
                    let offset = 1 + (rng.random::<u64>() as usize) % (c - 1);
                    *cell = Cell::Nominal((v + offset) % c);
                }
                (ColumnKind::Gaussian, Cell::Gaussian(v)) => {
                    let sigma = sigmas[col].expect("gaussian sigma computed");
                    let s = config.shift_low + rng.random::<f64>() * (config.shift_high - config.shift_low);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    *cell = Cell::Gaussian(v + sign * s * sigma);
                }
                (ColumnKind::Count, Cell::Count(v)) => {
                    let sigma = sigmas[col].expect("count sigma computed");
                    let s = config.shift_low + rng.random::<f64>() * (config.shift_high - config.shift_low);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let shifted = (v as f64 + sign * s * sigma).round().max(0.0);
                    *cell = Cell::Count(shifted as u64);
                }
                _ => unreachable!("dataset invariants guarantee matching cells"),
            }
        }
    }
    Dataset::new(data.schema.clone(), rows, Some(flags))
}

/// Precision, recall, and F over the outlier class.
pub fn f_score(labels: &[bool], verdicts: &[bool]) -> Result<MetricsReport> {
    if labels.is_empty() {
        return Err(Error::Data("f_score needs at least one row".into()));
    }
    if labels.len() != verdicts.len() {
        return Err(Error::Data(format!(
            "{} labels vs {} verdicts",
            labels.len(),
            verdicts.len()
        )));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fn_ = 0;
    for (&label, &verdict) in labels.iter().zip(verdicts) {
        match (label, verdict) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        precision,
        recall,
        f_score: f,
        auc: None,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
    })
}

/// Exact ROC AUC by rank statistics:
/// `P(score_out > score_in) + 0.5 P(score_out = score_in)`, ties averaged.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Data(format!(
            "{} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data("ROC AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("scores must not be NaN"));

    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1) + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = positives as f64;
    let q = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// A full experiment: optional contamination, split, standardization fitted on
/// train, CD training, train-percentile threshold, detection and test metrics.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub contamination: Option<ContaminationConfig>,
    pub test_fraction: f64,
    pub training: TrainingConfig,
    /// Percentile of training scores used as the threshold.
    pub percentile: f64,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub model: Model,
    pub stats: StandardizationStats,
    pub threshold: f64,
    pub train_report: ScoreReport,
    pub test_report: ScoreReport,
    pub test_labels: Vec<bool>,
    pub metrics: MetricsReport,
    pub training: TrainingReport,
}

/// Run the pipeline. Contamination (when requested) precedes splitting, so
/// planted outliers also land in the training set; otherwise the dataset must
/// already carry ground-truth labels.
pub fn run_experiment(data: &Dataset, spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let labeled = match &spec.contamination {
        Some(config) => {
            let config = ContaminationConfig {
                seed: seed::derive(spec.seed, "contaminate"),
                ..*config
            };
            contaminate(data, &config)?
        }
        None => {
            if data.labels.is_none() {
                return Err(Error::Data(
                    "experiment needs either a contamination config or ground-truth labels".into(),
                ));
            }
            data.clone()
        }
    };

    let (train_raw, test_raw) = split(&labeled, spec.test_fraction, seed::derive(spec.seed, "split"))?;
    let stats = fit_standardization(&train_raw)?;
    let train_set = apply_standardization(&train_raw, &stats)?;
    let test_set = apply_standardization(&test_raw, &stats)?;

    let training_config = TrainingConfig {
        seed: seed::derive(spec.seed, "train"),
        ..spec.training.clone()
    };
    let (model, training_report) = train(&train_set, &training_config, Some(&test_set))?;

    let train_scores = model.free_energy_batch(&train_set)?;
    let threshold = threshold_from_percentile(&train_scores, spec.percentile)?;
    let train_report = crate::detect::report_from_scores(train_scores, threshold);
    let test_report = detect(&model, &test_set, threshold)?;

    let test_labels = test_set.labels.clone().expect("labels survive the split");
    let mut metrics = f_score(&test_labels, &test_report.verdicts)?;
    metrics.auc = roc_auc(&test_labels, &test_report.scores).ok();

    Ok(ExperimentOutcome {
        model,
        stats,
        threshold,
        train_report,
        test_report,
        test_labels,
        metrics,
        training: training_report,
    })
}

/// Build a rare-class benchmark: all `normals` as inliers plus intrusions
/// sampled without replacement until they make up `outlier_share` of the mix.
pub fn rare_class_mix(
    normals: &Dataset,
    intrusions: &Dataset,
    outlier_share: f64,
    seed_value: u64,
) -> Result<Dataset> {
    if normals.schema != intrusions.schema {
        return Err(Error::Data("normal and intrusion schemas differ".into()));
    }
    if !(outlier_share > 0.0 && outlier_share < 1.0) {
        return Err(Error::Config("outlier share must lie in (0,1)".into()));
    }
    let n_normal = normals.len();
    let wanted = ((n_normal as f64) * outlier_share / (1.0 - outlier_share)).round() as usize;
    if wanted > intrusions.len() {
        return Err(Error::Data(format!(
            "need {wanted} intrusion rows, only {} available",
            intrusions.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, "rare-class"));
    let mut picks: Vec<usize> = (0..intrusions.len()).collect();
    picks.shuffle(&mut rng);

    let mut rows = normals.rows.clone();
    let mut labels = vec![false; n_normal];
    for &i in &picks[..wanted] {
        rows.push(intrusions.rows[i].clone());
        labels.push(true);
    }
    // shuffle the combined set so intrusions are not a trailing block
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng);
    let rows = order.iter().map(|&i| rows[i].clone()).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    Dataset::new(normals.schema.clone(), rows, Some(labels))
}

/// Serialize metrics as a two-line CSV.
pub fn write_metrics<W: Write>(metrics: &MetricsReport, writer: &mut W) -> Result<()> {
    writeln!(writer, "precision,recall,f_score,auc,tp,fp,tn,fn")?;
    writeln!(
        writer,
        "{},{},{},{},{},{},{},{}",
        metrics.precision,
        metrics.recall,
        metrics.f_score,
        metrics.auc.map_or(String::from(""), |a| a.to_string()),
        metrics.true_positives,
        metrics.false_positives,
        metrics.true_negatives,
        metrics.false_negatives
    )?;
    Ok(())
}

/// Serialize per-epoch training curves as CSV.
pub fn write_training_curve<W: Write>(report: &TrainingReport, writer: &mut W) -> Result<()> {
    writeln!(writer, "epoch,train_free_energy,validation_free_energy")?;
    for (epoch, fe) in report.train_free_energy.iter().enumerate() {
        let val = report
            .validation_free_energy
            .as_ref()
            .map_or(String::from(""), |v| v[epoch].to_string());
        writeln!(writer, "{},{},{}", epoch, fe, val)?;
    }
    Ok(())
}

/// Equal-width score histogram as gnuplot-compatible `bin_center count` lines.
pub fn write_histogram<W: Write>(scores: &[f64], bins: usize, writer: &mut W) -> Result<()> {
    if scores.is_empty() || bins == 0 {
        return Err(Error::Data("histogram needs scores and at least one bin".into()));
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if max > min { (max - min) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let bin = (((s - min) / width) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    for (i, count) in counts.iter().enumerate() {
        writeln!(writer, "{} {}", min + (i as f64 + 0.5) * width, count)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_schema;
    use crate::synth::{generate, SynthConfig};
    use proptest::prelude::*;

    fn mixed_data(n: usize) -> Dataset {
        let schema = parse_schema("b:binary\ng:gaussian\nn:nominal,3\nc:count").unwrap();
        let rows = (0..n)
            .map(|i| {
                vec![
                    Cell::Binary((i % 2) as u8),
                    Cell::Gaussian(i as f64 * 0.1),
                    Cell::Nominal(i % 3),
                    Cell::Count((i % 7) as u64),
                ]
            })
            .collect();
        Dataset::new(schema, rows, None).unwrap()
    }

    #[test]
    fn contaminate_flags_and_preserves_clean_rows() {
        let data = mixed_data(770);
        let config = ContaminationConfig {
            seed: 1,
            ..ContaminationConfig::default()
        };
        let out = contaminate(&data, &config).unwrap();
        let flags = out.labels.as_ref().unwrap();
        assert_eq!(flags.iter().filter(|&&f| f).count(), 77);
        for (i, flag) in flags.iter().enumerate() {
            if !flag {
                assert_eq!(out.rows[i], data.rows[i]);
            } else {
                // binary flips deterministically, nominal switches away
                assert_ne!(out.rows[i][0], data.rows[i][0]);
                assert_ne!(out.rows[i][2], data.rows[i][2]);
            }
        }
    }

    #[test]
    fn contaminated_numeric_shift_is_in_range() {
        let data = mixed_data(500);
        let config = ContaminationConfig {
            seed: 3,
            ..ContaminationConfig::default()
        };
        let n = data.len() as f64;
        let mean = data.rows.iter().map(|r| r[1].as_f64()).sum::<f64>() / n;
        let sigma = (data.rows.iter().map(|r| (r[1].as_f64() - mean).powi(2)).sum::<f64>() / n).sqrt();
        let out = contaminate(&data, &config).unwrap();
        for (i, flag) in out.labels.as_ref().unwrap().iter().enumerate() {
            if *flag {
                let shift = (out.rows[i][1].as_f64() - data.rows[i][1].as_f64()).abs() / sigma;
                assert!((2.0..=3.0).contains(&shift), "shift {shift} sigmas");
            }
        }
    }

    #[test]
    fn f_score_hand_cases() {
        // TP=8, FP=2, FN=2 -> P=0.8, R=0.8, F=0.8
        let mut labels = vec![true; 10];
        labels.extend(vec![false; 10]);
        let mut verdicts = vec![true; 8];
        verdicts.extend(vec![false; 2]);
        verdicts.extend(vec![true; 2]);
        verdicts.extend(vec![false; 8]);
        let m = f_score(&labels, &verdicts).unwrap();
        assert!((m.f_score - 0.8).abs() < 1e-12);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (8, 2, 2));

        let all_inlier = vec![false; 20];
        assert_eq!(f_score(&labels, &all_inlier).unwrap().f_score, 0.0);
        let perfect = f_score(&labels, &labels).unwrap();
        assert_eq!(perfect.f_score, 1.0);
        assert!(f_score(&labels, &verdicts[..5]).is_err());
    }

    #[test]
    fn roc_auc_edge_cases() {
        let labels = vec![true, true, false, false];
        assert_eq!(roc_auc(&labels, &[4.0, 3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&labels, &[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&labels, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
        assert!(roc_auc(&[true, true], &[1.0, 2.0]).is_err());
    }

    /// O(n^2) pairwise oracle for AUC.
    fn auc_pairwise(labels: &[bool], scores: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    proptest! {
        #[test]
        fn roc_auc_matches_pairwise_oracle(
            entries in proptest::collection::vec((any::<bool>(), -10i32..10), 2..200)
        ) {
            let labels: Vec<bool> = entries.iter().map(|e| e.0).collect();
            // coarse integer scores force plenty of ties
            let scores: Vec<f64> = entries.iter().map(|e| e.1 as f64 / 2.0).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let fast = roc_auc(&labels, &scores).unwrap();
            let oracle = auc_pairwise(&labels, &scores);
            prop_assert!((fast - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn experiment_runs_end_to_end_on_synthetic_data() {
        let data = generate(&SynthConfig {
            samples_per_component: 150,
            seed: 7,
            ..SynthConfig::default()
        })
        .unwrap();
        let spec = ExperimentSpec {
            contamination: None,
            test_fraction: 0.3,
            training: TrainingConfig {
                hidden: 10,
                epochs: 10,
                learning_rate: 0.05,
                batch_size: Some(64),
                ..TrainingConfig::default()
            },
            percentile: 5.0,
            seed: 11,
        };
        let outcome = run_experiment(&data, &spec).unwrap();
        assert_eq!(outcome.test_report.scores.len(), 135);
        assert_eq!(outcome.training.train_free_energy.len(), 10);
        assert!(outcome.metrics.f_score >= 0.0);
        assert!(outcome.metrics.auc.is_some());

        // deterministic replay
        let outcome2 = run_experiment(&data, &spec).unwrap();
        assert_eq!(outcome.model, outcome2.model);
        assert_eq!(outcome.test_report, outcome2.test_report);
    }

    #[test]
    fn training_improves_over_untrained_baseline() {
        let data = generate(&SynthConfig {
            samples_per_component: 300,
            seed: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let spec_with = |epochs: usize| ExperimentSpec {
            contamination: None,
            test_fraction: 0.3,
            training: TrainingConfig {
                hidden: 10,
                epochs,
                learning_rate: 0.05,
                batch_size: Some(64),
                ..TrainingConfig::default()
            },
            percentile: 5.0,
            seed: 3,
        };
        let untrained = run_experiment(&data, &spec_with(0)).unwrap();
        let trained = run_experiment(&data, &spec_with(20)).unwrap();
        let (base, tuned) = (
            untrained.metrics.auc.unwrap(),
            trained.metrics.auc.unwrap(),
        );
        assert!(tuned > base, "training did not improve AUC ({base} -> {tuned})");
        assert!(tuned > 0.7, "trained AUC only {tuned}");
    }

    #[test]
    fn experiment_without_labels_or_contamination_errors() {
        let data = mixed_data(50);
        let spec = ExperimentSpec {
            contamination: None,
            test_fraction: 0.3,
            training: TrainingConfig::default(),
            percentile: 10.0,
            seed: 1,
        };
        assert!(run_experiment(&data, &spec).is_err());
    }

    #[test]
    fn rare_class_mix_share() {
        let schema = parse_schema("b:binary").unwrap();
        let normals = Dataset::new(schema.clone(), vec![vec![Cell::Binary(0)]; 900], None).unwrap();
        let intrusions = Dataset::new(schema, vec![vec![Cell::Binary(1)]; 500], None).unwrap();
        let mixed = rare_class_mix(&normals, &intrusions, 0.10, 5).unwrap();
        assert_eq!(mixed.len(), 1000);
        assert_eq!(mixed.labels.as_ref().unwrap().iter().filter(|&&f| f).count(), 100);
    }

    #[test]
    fn histogram_counts_sum_to_n() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let mut buf = Vec::new();
        write_histogram(&scores, 12, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let total: usize = text
            .lines()
            .map(|l| l.split_whitespace().nth(1).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 100);
    }
}
