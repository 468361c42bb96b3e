//! Confusion-matrix evaluation of a change map against ground truth, with
//! `changed` as the positive class.

use serde::{Deserialize, Serialize};

use crate::clustering::{ChangeMap, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Overall error, `fp + fn`.
    pub oe: u64,
    /// Percentage correct classification, `(tp + tn) / N`.
    pub pcc: f64,
    pub kappa: f64,
}

impl Metrics {
    /// Derives every score from raw confusion counts.
    ///
    /// `PRE = ((tp+fp)·Mc + (fn+tn)·Mu) / N²` where `Mc = tp+fn` and
    /// `Mu = fp+tn` are the true class sizes; `kappa = (pcc − PRE)/(1 − PRE)`.
    /// When `PRE == 1` (both maps single-class and equal in class), kappa is 1
    /// if there are no errors and 0 otherwise.
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Metrics {
        let n = tp + tn + fp + fn_;
        let oe = fp + fn_;
        let nf = n as f64;
        let pcc = (tp + tn) as f64 / nf;

        let mc = (tp + fn_) as u128;
        let mu = (fp + tn) as u128;
        let chance = (tp + fp) as u128 * mc + (fn_ + tn) as u128 * mu;
        let n2 = n as u128 * n as u128;
        let kappa = if chance == n2 {
            if oe == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            let pre = chance as f64 / n2 as f64;
            (pcc - pre) / (1.0 - pre)
        };

        Metrics {
            tp,
            tn,
            fp,
            fn_,
            oe,
            pcc,
            kappa,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn evaluate(pred: &ChangeMap, truth: &ChangeMap) -> Result<Metrics> {
    if pred.dims() != truth.dims() {
        return Err(Error::invalid(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        match (p, t) {
            (Label::Changed, Label::Changed) => tp += 1,
            (Label::Unchanged, Label::Unchanged) => tn += 1,
            (Label::Changed, Label::Unchanged) => fp += 1,
            (Label::Unchanged, Label::Changed) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, tn, fp, fn_))
}
