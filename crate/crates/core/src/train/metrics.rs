//! Binary confusion counts, derived metrics and the report layout.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Counts for the positive class `TB`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn record(&mut self, predicted: usize, actual: usize) {
        let pos = Label::Tb.index();
        match (predicted == pos, actual == pos) {
            (true, true) => self.tp += 1,
            (false, true) => self.fn_ += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn from_pairs(predicted: &[usize], actual: &[usize]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (p, a) in predicted.iter().zip(actual) {
            cm.record(*p, *a);
        }
        Ok(cm)
    }

    /// Commutative merge, used when evaluation is split across workers.
    pub fn merge(self, other: Self) -> Self {
        ConfusionMatrix::new(
            self.tp + other.tp,
            self.fn_ + other.fn_,
            self.fp + other.fp,
            self.tn + other.tn,
        )
    }
}

/// Metrics whose denominator was zero are reported as 0 and flagged here.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl UndefinedFlags {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: UndefinedFlags,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics_from_cm(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("confusion matrix is empty".into()));
    }
    let (accuracy, _) = ratio(cm.tp + cm.tn, total);
    let (precision, p_undef) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, r_undef) = ratio(cm.tp, cm.tp + cm.fn_);
    let (f1, f_undef) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        undefined: UndefinedFlags {
            precision: p_undef,
            recall: r_undef,
            f1: f_undef,
        },
    })
}

/// Evaluation summary, persisted as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: u64,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean cross-entropy.
    pub mean_loss: f64,
    pub undefined: UndefinedFlags,
}

impl EvalReport {
    pub fn new(confusion: ConfusionMatrix, mean_loss: f64) -> Result<Self> {
        let m = metrics_from_cm(&confusion)?;
        Ok(EvalReport {
            samples: confusion.total(),
            confusion,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            mean_loss,
            undefined: m.undefined,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EvalReport::from_json(&text)
    }

    /// Rows in display order; loss is cross-entropy scaled by 100.
    pub fn rows(&self) -> [(&'static str, f64); 5] {
        [
            ("F1 Score", self.f1 * 100.0),
            ("Accuracy", self.accuracy * 100.0),
            ("Loss", self.mean_loss * 100.0),
            ("Precision", self.precision * 100.0),
            ("Recall", self.recall * 100.0),
        ]
    }

    /// Aligned metric table followed by the confusion counts.
    pub fn render_table(&self, model_name: &str) -> String {
        let mut s = String::new();
        let width = model_name.len().max(8);
        let _ = writeln!(s, "{:<10}  {:>width$}", "Metrics", model_name);
        for (name, pct) in self.rows() {
            let flag = match name {
                "Precision" if self.undefined.precision => " (undefined)",
                "Recall" if self.undefined.recall => " (undefined)",
                "F1 Score" if self.undefined.f1 => " (undefined)",
                _ => "",
            };
            let cell = format!("{:.0}%", pct);
            let _ = writeln!(s, "{name:<10}  {cell:>width$}{flag}");
        }
        let c = &self.confusion;
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12}{:>12}{:>12}", "", "pred TB", "pred Normal");
        let _ = writeln!(s, "{:<12}{:>12}{:>12}", "true TB", c.tp, c.fn_);
        let _ = writeln!(s, "{:<12}{:>12}{:>12}", "true Normal", c.fp, c.tn);
        s
    }
}
