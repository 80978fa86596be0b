//! Thresholding, classification and ranking metrics, the transitive-closure
//! baseline and the training-size sweep.
//!
//! Scores follow the embedding convention: lower means more confidently
//! positive, and a pair is predicted positive iff `score < τ`.

use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::embed::{EmbeddingModel, LossHyper, ModelKind};
use crate::error::{Error, Result};
use crate::folds::{self, LabeledPair, Protocol, SplitConfig};
use crate::poset::{Closure, NodeKind};
use crate::scalar::Scalar;
use crate::train::{self, TrainConfig};

/// A score and whether the pair is truly positive.
pub type Scored<F> = (F, bool);

/// Raw model scores for labeled pairs.
pub fn score_pairs<'a, F: Scalar>(
    model: &EmbeddingModel<F>,
    pairs: impl IntoIterator<Item = &'a LabeledPair>,
) -> Vec<Scored<F>> {
    pairs
        .into_iter()
        .map(|p| (model.raw_score(p.x, p.y), p.label.is_positive()))
        .collect()
}

fn sorted_by_score<F: Scalar>(scored: &[Scored<F>]) -> Vec<Scored<F>> {
    let mut v = scored.to_vec();
    // stable, so equal scores keep input order
    v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Threshold maximising F1 on `dev`. Candidates are `−∞`, the midpoints between
/// consecutive distinct scores, and `+∞`; ties go to the larger threshold.
pub fn tune_threshold<F: Scalar>(dev: &[Scored<F>]) -> Result<F> {
    let positives = dev.iter().filter(|s| s.1).count();
    if positives == 0 || positives == dev.len() {
        return Err(Error::DegenerateDev);
    }
    let sorted = sorted_by_score(dev);
    // with the first k pairs predicted positive, F1 = 2·tp / (k + |pos|)
    let f1 = |tp: usize, k: usize| 2.0 * tp as f64 / (k + positives) as f64;
    let mut best = (0.0, F::neg_infinity());
    let mut tp = 0;
    let mut k = 0;
    while k < sorted.len() {
        let score = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == score {
            tp += sorted[k].1 as usize;
            k += 1;
        }
        let tau = match sorted.get(k) {
            Some(&(next, _)) => {
                let mid = score + (next - score) / F::lit(2.0);
                // adjacent floats: fall back to the upper score itself
                if mid > score {
                    mid
                } else {
                    next
                }
            }
            None => F::infinity(),
        };
        let value = f1(tp, k);
        if value >= best.0 {
            best = (value, tau);
        }
    }
    Ok(best.1)
}

/// Confusion counts and the metrics derived from them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl Classification {
    pub fn from_predictions(predicted_and_actual: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Classification::default();
        for (pred, actual) in predicted_and_actual {
            match (pred, actual) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_pos += 1,
                (false, false) => c.true_neg += 1,
                (false, true) => c.false_neg += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let total = c.true_pos + c.false_pos + c.true_neg + c.false_neg;
        c.accuracy = ratio(c.true_pos + c.true_neg, total);
        c.precision = ratio(c.true_pos, c.true_pos + c.false_pos);
        c.recall = ratio(c.true_pos, c.true_pos + c.false_neg);
        c.f1 = if c.precision + c.recall > 0.0 {
            2.0 * c.precision * c.recall / (c.precision + c.recall)
        } else {
            0.0
        };
        c
    }
}

/// Micro-averaged accuracy and positive-class P/R/F1 at threshold `tau`.
pub fn classification_metrics<F: Scalar>(test: &[Scored<F>], tau: F) -> Classification {
    Classification::from_predictions(test.iter().map(|&(s, actual)| (s < tau, actual)))
}

/// Mean over positives of the precision at that positive's rank, ranking by
/// ascending score with stable ties.
pub fn average_precision<F: Scalar>(scored: &[Scored<F>]) -> Result<f64> {
    let positives = scored.iter().filter(|s| s.1).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (i, &(_, pos)) in sorted_by_score(scored).iter().enumerate() {
        if pos {
            tp += 1;
            sum += tp as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// `(recall, precision)` at every ranking prefix that ends on a positive.
pub fn rp_curve<F: Scalar>(scored: &[Scored<F>]) -> Result<Vec<(f64, f64)>> {
    let positives = scored.iter().filter(|s| s.1).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut tp = 0usize;
    let mut out = Vec::with_capacity(positives);
    for (i, &(_, pos)) in sorted_by_score(scored).iter().enumerate() {
        if pos {
            tp += 1;
            out.push((tp as f64 / positives as f64, tp as f64 / (i + 1) as f64));
        }
    }
    Ok(out)
}

pub fn rp_curve_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("recall,precision\n");
    for (r, p) in curve {
        out.push_str(&format!("{r},{p}\n"));
    }
    out
}

fn finite_or_string<S: Serializer>(value: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if value.is_finite() {
        s.serialize_f64(*value)
    } else {
        s.serialize_str(&value.to_string())
    }
}

fn f64_or_string<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
    }
}

/// Everything reported for one evaluated system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    /// Decision threshold; `inf`/`-inf` are written as strings.
    #[serde(serialize_with = "finite_or_string", deserialize_with = "f64_or_string")]
    pub threshold: f64,
    #[serde(flatten)]
    pub classification: Classification,
    /// Absent for the closure baseline, whose scores are binary.
    pub average_precision: Option<f64>,
    pub rp_curve: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Tune `τ` on the dev folds, then score the eval folds.
pub fn evaluate<F: Scalar>(
    model: &EmbeddingModel<F>,
    folds: &folds::FoldSet,
) -> Result<EvalReport> {
    let dev = score_pairs(model, folds.dev());
    let tau = tune_threshold(&dev)?;
    let test = score_pairs(model, folds.eval());
    Ok(EvalReport {
        system: model.kind().to_string(),
        threshold: tau.as_f64(),
        classification: classification_metrics(&test, tau),
        average_precision: Some(average_precision(&test)?),
        rp_curve: rp_curve(&test)?,
    })
}

/// Closure-lookup predictions for `test`, and the metrics they earn.
#[derive(Clone, Debug, PartialEq)]
pub struct TcBaseline {
    pub predictions: Vec<bool>,
    pub classification: Classification,
}

/// Predict `x ≺ y` exactly when the pair lies in the closure of the learn positives.
pub fn tc_baseline(learn_closure: &Closure, test: &[LabeledPair]) -> TcBaseline {
    let predictions: Vec<bool> = test
        .iter()
        .map(|p| learn_closure.holds(p.x, p.y))
        .collect();
    let classification = Classification::from_predictions(
        predictions
            .iter()
            .zip(test)
            .map(|(&pred, p)| (pred, p.label.is_positive())),
    );
    TcBaseline {
        predictions,
        classification,
    }
}

impl TcBaseline {
    pub fn report(&self) -> EvalReport {
        EvalReport {
            system: "tc".into(),
            threshold: 0.5,
            classification: self.classification,
            average_precision: None,
            rp_curve: Vec::new(),
        }
    }
}

/// A system compared in the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepSystem {
    ClosureBaseline,
    Model(ModelKind),
}

impl std::fmt::Display for SweepSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepSystem::ClosureBaseline => f.write_str("tc"),
            SweepSystem::Model(k) => write!(f, "{k}"),
        }
    }
}

impl std::str::FromStr for SweepSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tc" => Ok(SweepSystem::ClosureBaseline),
            other => other.parse().map(SweepSystem::Model),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub system: SweepSystem,
    /// Eval-fold F1; NaN when the cell failed.
    pub f1: f64,
    pub error: Option<String>,
}

pub struct SweepSpec<'a, F> {
    pub protocol: Protocol,
    pub fractions: &'a [f64],
    pub systems: &'a [SweepSystem],
    /// Dev/eval sizes and seed; the learn fraction is overridden per row.
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub hyper: LossHyper<F>,
}

/// For each learn fraction, re-split with the same seed, then score every
/// system on the eval fold. Failing cells are recorded and skipped.
pub fn training_size_sweep<F: Scalar>(
    closure: &Closure,
    node_kinds: &[NodeKind],
    spec: &SweepSpec<'_, F>,
) -> Result<Vec<SweepRow>> {
    if spec
        .fractions
        .iter()
        .any(|f| !(*f > 0.0 && *f <= 1.0))
    {
        return Err(Error::Config("sweep fractions must lie in (0, 1]".into()));
    }
    let mut rows = Vec::new();
    for &fraction in spec.fractions {
        let cfg = SplitConfig {
            protocol: spec.protocol,
            learn_fraction: fraction,
            ..spec.split.clone()
        };
        let split = folds::split(closure, &cfg);
        for &system in spec.systems {
            let cell = split.as_ref().map_err(|e| e.to_string()).and_then(|fs| {
                sweep_cell(closure, node_kinds, fs, system, spec).map_err(|e| e.to_string())
            });
            rows.push(match cell {
                Ok(f1) => SweepRow {
                    fraction,
                    system,
                    f1,
                    error: None,
                },
                Err(e) => SweepRow {
                    fraction,
                    system,
                    f1: f64::NAN,
                    error: Some(e),
                },
            });
        }
    }
    Ok(rows)
}

fn sweep_cell<F: Scalar>(
    closure: &Closure,
    node_kinds: &[NodeKind],
    folds: &folds::FoldSet,
    system: SweepSystem,
    spec: &SweepSpec<'_, F>,
) -> Result<f64> {
    match system {
        SweepSystem::ClosureBaseline => {
            let learn = folds.learn_closure(closure.num_nodes())?;
            let test: Vec<LabeledPair> = folds.eval().copied().collect();
            Ok(tc_baseline(&learn, &test).classification.f1)
        }
        SweepSystem::Model(kind) => {
            let (model, _) = train::train_model(kind, node_kinds, folds, &spec.hyper, &spec.train)?;
            Ok(evaluate(&model, folds)?.classification.f1)
        }
    }
}

/// CSV `fraction,model,f1`; failed cells carry `NaN`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("fraction,model,f1\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.fraction, r.system, r.f1));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[(f64, bool)]) -> Vec<Scored<f64>> {
        v.to_vec()
    }

    #[test]
    fn threshold_on_separable_fixture() {
        let dev = s(&[(0.1, true), (0.2, true), (0.9, false), (1.0, false)]);
        let tau = tune_threshold(&dev).unwrap();
        assert_eq!(tau, 0.55);
        assert_eq!(classification_metrics(&dev, tau).f1, 1.0);
    }

    #[test]
    fn threshold_with_equal_scores_predicts_all_positive() {
        let dev = s(&[(0.3, true), (0.3, false), (0.3, false), (0.3, true), (0.3, true)]);
        let tau = tune_threshold(&dev).unwrap();
        assert_eq!(tau, f64::INFINITY);
        let p = 3.0 / 5.0;
        let f1 = classification_metrics(&dev, tau).f1;
        assert!((f1 - 2.0 * p / (p + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn threshold_on_interleaved_scores() {
        let dev = s(&[(0.1, false), (0.2, true), (0.3, false), (0.4, true)]);
        let tau = tune_threshold(&dev).unwrap();
        let f1 = classification_metrics(&dev, tau).f1;
        assert!(f1 < 1.0);
        // predicting everything positive (2·2/(4+2)) beats every interior cut
        assert_eq!(tau, f64::INFINITY);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_dev_rejected() {
        assert!(matches!(
            tune_threshold(&s(&[(0.1, true), (0.2, true)])),
            Err(Error::DegenerateDev)
        ));
    }

    #[test]
    fn sentinel_closed_forms() {
        let test = s(&[(0.1, true), (0.5, false), (0.7, true), (0.9, false)]);
        let none = classification_metrics(&test, f64::NEG_INFINITY);
        assert_eq!((none.accuracy, none.recall, none.f1), (0.5, 0.0, 0.0));
        let all = classification_metrics(&test, f64::INFINITY);
        assert_eq!((all.accuracy, all.precision, all.recall), (0.5, 0.5, 1.0));
        assert!((all.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(average_precision(&s(&[(0.0, true), (1.0, true), (2.0, false)])).unwrap(), 1.0);
        assert_eq!(average_precision(&s(&[(0.0, false), (1.0, true)])).unwrap(), 0.5);
        assert!(matches!(
            average_precision(&s(&[(0.0, false)])),
            Err(Error::NoPositives)
        ));
        // ties keep input order
        assert_eq!(average_precision(&s(&[(1.0, false), (1.0, true)])).unwrap(), 0.5);
    }

    #[test]
    fn rp_curve_examples() {
        let c = rp_curve(&s(&[(0.0, true), (1.0, false), (2.0, true)])).unwrap();
        assert_eq!(c, vec![(0.5, 1.0), (1.0, 2.0 / 3.0)]);
        let perfect = rp_curve(&s(&[(0.0, true), (0.1, true), (0.2, false)])).unwrap();
        assert!(perfect.iter().all(|&(_, p)| p == 1.0));
        assert_eq!(rp_curve_csv(&c), "recall,precision\n0.5,1\n1,0.6666666666666666\n");
    }

    #[test]
    fn report_json_keeps_infinite_threshold() {
        let r = EvalReport {
            system: "oe".into(),
            threshold: f64::INFINITY,
            classification: Classification::default(),
            average_precision: Some(0.25),
            rp_curve: vec![(1.0, 0.25)],
        };
        let json = r.to_json();
        assert!(json.contains("\"threshold\": \"inf\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
