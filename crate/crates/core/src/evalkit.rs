//! Metrics, the feature x model grid and the balancing study.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::learners::derive_seed;
use crate::pipeline::{fit_model, split_data, ExperimentConfig, FeatureKind, Featurizer, LabeledSet, ModelKind, Pipeline};
use crate::textprep::Preprocessor;

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }
}

/// Tallies `(true, predicted)` pairs over `num_classes` classes.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::precondition(format!(
            "label length mismatch: {} true vs {} predicted",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::precondition("no labels to evaluate"));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for c in [t, p] {
            if c >= num_classes {
                return Err(Error::Index {
                    index: c,
                    len: num_classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Names of ratios that were 0/0 and reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
    /// Whether the class is part of the macro mean (it occurs in the truth).
    pub in_macro: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub featurize: f64,
    pub train: f64,
    pub predict: f64,
}

impl PhaseTiming {
    pub fn total(&self) -> f64 {
        self.featurize + self.train + self.predict
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub averaging: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    /// Set when any 0/0 ratio was reported as 0.
    pub undefined_ratios: bool,
    #[serde(default)]
    pub seconds: PhaseTiming,
    #[serde(default)]
    pub manifest_hash: Option<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro metrics; the macro mean runs over classes present in the truth.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::precondition("confusion matrix is empty"));
    }
    let k = cm.classes();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.counts[c][c];
        let support: u64 = cm.counts[c].iter().sum();
        let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
        let mut undefined = Vec::new();
        let precision = ratio(tp, predicted, "precision", &mut undefined);
        let recall = ratio(tp, support, "recall", &mut undefined);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            undefined.push("f1".to_string());
            0.0
        };
        per_class.push(ClassMetrics {
            class: c,
            precision,
            recall,
            f1,
            support,
            undefined,
            in_macro: support > 0,
        });
    }
    let included: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.in_macro).collect();
    let n = included.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| included.iter().map(|m| f(m)).sum::<f64>() / n;
    Ok(MetricsReport {
        averaging: "macro".to_string(),
        accuracy: cm.trace() as f64 / total as f64,
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        undefined_ratios: per_class.iter().any(|m| !m.undefined.is_empty()),
        per_class,
        confusion: cm.clone(),
        seconds: PhaseTiming::default(),
        manifest_hash: None,
    })
}

pub fn evaluate_labels(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<MetricsReport> {
    metrics_from_confusion(&confusion_matrix(y_true, y_pred, num_classes)?)
}

/// Scores `pipeline` on the corpus test split, or on every labeled sample when nothing is split.
pub fn evaluate_pipeline(pipeline: &Pipeline, corpus: &Corpus) -> Result<MetricsReport> {
    let has_test = corpus.split_samples(Split::Test).next().is_some();
    let mut y_true = Vec::new();
    let mut y_pred = Vec::new();
    for s in corpus.samples() {
        let Some(label) = s.label else { continue };
        if has_test && s.split != Some(Split::Test) {
            continue;
        }
        y_true.push(label.index());
        y_pred.push(pipeline.predict_text(&s.text)?.label.index());
    }
    evaluate_labels(&y_true, &y_pred, NUM_CLASSES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub features: Vec<FeatureKind>,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub balance: bool,
    /// Run the embedded preprocessor on sample text (idempotent on preprocessed text).
    pub preprocess: bool,
    /// Record wall-clock seconds; off keeps reruns byte-identical.
    pub timing: bool,
    pub config: ExperimentConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            features: FeatureKind::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            seed: 0,
            balance: false,
            preprocess: true,
            timing: false,
            config: ExperimentConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() || self.models.is_empty() {
            return Err(Error::precondition("grid needs at least one feature and one model"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok { metrics: Box<MetricsReport> },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub feature: FeatureKind,
    pub model: ModelKind,
    pub balanced: bool,
    pub seed: u64,
    pub outcome: CellOutcome,
    #[serde(default)]
    pub flags: Vec<String>,
    pub seconds: PhaseTiming,
}

impl GridRow {
    pub fn metrics(&self) -> Option<&MetricsReport> {
        match &self.outcome {
            CellOutcome::Ok { metrics } => Some(metrics),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub manifest_hash: Option<String>,
    pub averaging: String,
    pub timing: bool,
    pub rows: Vec<GridRow>,
}

fn feature_index(f: FeatureKind) -> u64 {
    FeatureKind::ALL.iter().position(|&k| k == f).expect("listed feature") as u64
}

fn model_index(m: ModelKind) -> u64 {
    ModelKind::ALL.iter().position(|&k| k == m).expect("listed model") as u64
}

/// Seed owned by one grid cell, independent of which other cells run.
pub fn cell_seed(master: u64, feature: FeatureKind, model: ModelKind) -> u64 {
    derive_seed(derive_seed(master, 1 + feature_index(feature)), 1 + model_index(model))
}

fn featurizer_seed(master: u64, feature: FeatureKind) -> u64 {
    derive_seed(derive_seed(master, 1 + feature_index(feature)), 0)
}

struct Clock(bool);

impl Clock {
    fn time<T>(&self, f: impl FnOnce() -> T) -> (T, f64) {
        let start = Instant::now();
        let out = f();
        (out, if self.0 { start.elapsed().as_secs_f64() } else { 0.0 })
    }
}

fn run_cell(
    feature: FeatureKind,
    model: ModelKind,
    balanced: bool,
    featurizer: &std::result::Result<(Featurizer, f64), String>,
    data: &crate::pipeline::SplitData,
    spec: &GridSpec,
    clock: &Clock,
) -> GridRow {
    let seed = cell_seed(spec.seed, feature, model);
    let mut row = GridRow {
        feature,
        model,
        balanced,
        seed,
        outcome: CellOutcome::Failed { error: String::new() },
        flags: Vec::new(),
        seconds: PhaseTiming::default(),
    };
    let (fz, featurize_secs) = match featurizer {
        Ok((fz, s)) => (fz, *s),
        Err(e) => {
            row.outcome = CellOutcome::Failed { error: e.clone() };
            return row;
        }
    };
    row.seconds.featurize = featurize_secs;
    let (fit, train_secs) = clock.time(|| fit_model(model, fz, &data.train, &data.val, &spec.config, balanced, seed));
    row.seconds.train = train_secs;
    let fit = match fit {
        Ok(f) => f,
        Err(e) => {
            row.outcome = CellOutcome::Failed { error: e.to_string() };
            return row;
        }
    };
    row.flags = fit.flags;
    let max_len = spec.config.hybrid.max_len;
    let (pred, predict_secs) = clock.time(|| {
        data.test
            .docs
            .iter()
            .map(|d| fit.model.predict(fz, d, max_len))
            .collect::<Result<Vec<usize>>>()
    });
    row.seconds.predict = predict_secs;
    row.outcome = match pred.and_then(|p| evaluate_labels(&data.test.labels, &p, NUM_CLASSES)) {
        Ok(mut m) => {
            m.seconds = row.seconds;
            CellOutcome::Ok { metrics: Box::new(m) }
        }
        Err(e) => CellOutcome::Failed { error: e.to_string() },
    };
    row
}

fn prepare(corpus: &Corpus, spec: &GridSpec) -> Result<crate::pipeline::SplitData> {
    spec.validate()?;
    let pre = Preprocessor::default();
    let data = split_data(corpus, spec.preprocess.then_some(&pre))?;
    if data.test.is_empty() {
        return Err(Error::precondition("test split is empty"));
    }
    Ok(data)
}

/// Visits cells in (feature, model) order, building each feature space once.
fn for_each_cell(
    data: &crate::pipeline::SplitData,
    spec: &GridSpec,
    settings: &[bool],
    mut visit: impl FnMut(GridRow),
) {
    let clock = Clock(spec.timing);
    for &feature in &spec.features {
        let empty = LabeledSet::default();
        let val = if data.val.is_empty() { &empty } else { &data.val };
        let (fz, secs) =
            clock.time(|| Featurizer::fit(feature, &data.train, val, &spec.config, featurizer_seed(spec.seed, feature)));
        let fz = fz.map(|f| (f, secs)).map_err(|e| format!("featurizer: {e}"));
        for &model in &spec.models {
            for &balanced in settings {
                visit(run_cell(feature, model, balanced, &fz, data, spec, &clock));
            }
        }
    }
}

/// One row per (feature, model) pair in spec order; failed cells are recorded, not raised.
pub fn run_grid(corpus: &Corpus, spec: &GridSpec) -> Result<GridResult> {
    let data = prepare(corpus, spec)?;
    let mut rows = Vec::new();
    for_each_cell(&data, spec, &[spec.balance], |r| rows.push(r));
    Ok(GridResult {
        manifest_hash: None,
        averaging: "macro".to_string(),
        timing: spec.timing,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl MetricDeltas {
    /// `after - before` for every metric.
    pub fn between(before: &MetricsReport, after: &MetricsReport) -> Self {
        MetricDeltas {
            precision: after.precision - before.precision,
            recall: after.recall - before.recall,
            f1: after.f1 - before.f1,
            accuracy: after.accuracy - before.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingPair {
    pub feature: FeatureKind,
    pub model: ModelKind,
    pub unbalanced: GridRow,
    pub balanced: GridRow,
    /// Absent when either run failed.
    pub delta: Option<MetricDeltas>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingReport {
    pub manifest_hash: Option<String>,
    pub averaging: String,
    pub timing: bool,
    pub pairs: Vec<BalancingPair>,
}

impl BalancingReport {
    /// The unbalanced and balanced rows of every pair, in order.
    pub fn rows(&self) -> Vec<&GridRow> {
        self.pairs.iter().flat_map(|p| [&p.unbalanced, &p.balanced]).collect()
    }
}

/// Runs every cell with SMOTE off and on; `spec.balance` is ignored.
pub fn balancing_report(corpus: &Corpus, spec: &GridSpec) -> Result<BalancingReport> {
    let data = prepare(corpus, spec)?;
    let mut rows = Vec::new();
    for_each_cell(&data, spec, &[false, true], |r| rows.push(r));
    let mut pairs = Vec::with_capacity(rows.len() / 2);
    let mut it = rows.into_iter();
    while let (Some(unbalanced), Some(balanced)) = (it.next(), it.next()) {
        let delta = match (unbalanced.metrics(), balanced.metrics()) {
            (Some(b), Some(a)) => Some(MetricDeltas::between(b, a)),
            _ => None,
        };
        pairs.push(BalancingPair {
            feature: unbalanced.feature,
            model: unbalanced.model,
            unbalanced,
            balanced,
            delta,
        });
    }
    Ok(BalancingReport {
        manifest_hash: None,
        averaging: "macro".to_string(),
        timing: spec.timing,
        pairs,
    })
}

pub const CSV_COLUMNS: [&str; 8] = ["feature", "model", "balanced", "precision", "recall", "f1", "accuracy", "seconds"];

/// CSV with `#` header lines for the manifest hash, averaging mode and timing.
pub fn rows_to_csv<'a>(rows: impl IntoIterator<Item = &'a GridRow>, manifest_hash: Option<&str>, timing: bool) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("# manifest: {}\n", manifest_hash.unwrap_or("none")));
    out.push_str("# averaging: macro\n");
    out.push_str(&format!("# timing: {}\n", if timing { "on" } else { "off" }));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::data(format!("csv: {e}"));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in rows {
        let num = |v: f64| format!("{v:.6}");
        let (p, rc, f, a) = match r.metrics() {
            Some(m) => (num(m.precision), num(m.recall), num(m.f1), num(m.accuracy)),
            None => Default::default(),
        };
        w.write_record([
            r.feature.as_str().to_string(),
            r.model.as_str().to_string(),
            r.balanced.to_string(),
            p,
            rc,
            f,
            a,
            format!("{:.3}", r.seconds.total()),
        ])
        .map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::data(format!("csv: {e}")))?;
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}

impl GridResult {
    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows, self.manifest_hash.as_deref(), self.timing)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl BalancingReport {
    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(self.rows(), self.manifest_hash.as_deref(), self.timing)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tally_example() {
        let cm = confusion_matrix(&[0, 0, 0, 1, 1], &[0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![2, 1], vec![0, 2]]);
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());
        assert!(confusion_matrix(&[], &[], 2).is_err());
        assert!(confusion_matrix(&[3], &[0], 2).is_err());
    }

    #[test]
    fn hand_metrics() {
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 1], vec![0, 2]],
        };
        let m = metrics_from_confusion(&cm).unwrap();
        assert_eq!(m.per_class[0].precision, 1.0);
        assert_eq!(m.per_class[0].recall, 2.0 / 3.0);
        assert!((m.per_class[0].f1 - 0.8).abs() < 1e-15);
        assert_eq!(m.per_class[1].precision, 2.0 / 3.0);
        assert_eq!(m.per_class[1].recall, 1.0);
        assert!((m.f1 - 0.8).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.8);
        assert!(!m.undefined_ratios);
    }

    #[test]
    fn absent_class_is_flagged_and_excluded() {
        let m = evaluate_labels(&[0, 1, 1], &[0, 1, 1], 3).unwrap();
        assert_eq!(m.f1, 1.0);
        assert!(m.undefined_ratios && !m.per_class[2].in_macro);
        assert_eq!(m.per_class[2].undefined, ["precision", "recall", "f1"]);
    }

    #[test]
    fn metrics_from_empty_matrix_fail() {
        let cm = ConfusionMatrix {
            counts: vec![vec![0; 2]; 2],
        };
        assert!(metrics_from_confusion(&cm).is_err());
    }

    #[test]
    fn csv_layout() {
        let row = GridRow {
            feature: FeatureKind::Count,
            model: ModelKind::Nb,
            balanced: false,
            seed: 1,
            outcome: CellOutcome::Failed { error: "x".into() },
            flags: vec![],
            seconds: PhaseTiming::default(),
        };
        let csv = rows_to_csv([&row], Some("abc"), false).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# manifest: abc");
        assert_eq!(lines[3], CSV_COLUMNS.join(","));
        assert_eq!(lines[4], "count,nb,false,,,,,0.000");
    }

    #[test]
    fn cell_seeds_differ() {
        let mut seen = std::collections::BTreeSet::new();
        for &f in FeatureKind::ALL {
            for &m in ModelKind::ALL {
                assert!(seen.insert(cell_seed(3, f, m)));
            }
        }
    }

    proptest! {
        #[test]
        fn metric_laws(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let cm = confusion_matrix(&t, &p, 4).unwrap();
            prop_assert_eq!(cm.total(), t.len() as u64);
            let m = metrics_from_confusion(&cm).unwrap();
            let hits = t.iter().zip(&p).filter(|(a, b)| a == b).count();
            prop_assert_eq!(m.accuracy, hits as f64 / t.len() as f64);
            let inc: Vec<f64> = m.per_class.iter().filter(|c| c.in_macro).map(|c| c.f1).collect();
            let lo = inc.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = inc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
