use indexmap::IndexMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::{LabelMap, UNLABELED};

/// Accuracy summary over the evaluated pixels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// Percent correct per truth class; `None` when a class has no evaluated pixels.
    pub per_class_ca: Vec<Option<f64>>,
    pub overall_ca: f64,
    /// `confusion[truth - 1][pred - 1]`.
    pub confusion: Vec<Vec<u64>>,
    pub evaluated_pixels: u64,
    pub timing_s: IndexMap<String, f64>,
}

impl EvalReport {
    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    /// Overall accuracy recomputed from the confusion matrix.
    pub fn overall_from_confusion(&self) -> f64 {
        let total: u64 = self.confusion.iter().flatten().sum();
        let hits: u64 = (0..self.num_classes()).map(|k| self.confusion[k][k]).sum();
        100.0 * hits as f64 / total as f64
    }
}

pub fn default_class_names(k: usize) -> Vec<String> {
    (1..=k).map(|c| format!("class_{c}")).collect()
}

/// Confusion over labeled truth pixels not listed in `exclude`.
pub fn evaluate(pred: &LabelMap, truth: &LabelMap, exclude: &[usize]) -> Result<EvalReport> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::invalid("prediction and truth differ in size"));
    }
    let k = truth.num_classes() as usize;
    if pred.num_classes() as usize > k {
        return Err(Error::invalid(
            "prediction uses more classes than the ground truth",
        ));
    }
    let mut skip = vec![false; truth.len()];
    for &i in exclude {
        if i >= skip.len() {
            return Err(Error::invalid(format!("excluded index {i} out of range")));
        }
        skip[i] = true;
    }
    let mut confusion = vec![vec![0u64; k]; k];
    for (i, (&t, &p)) in truth.as_slice().iter().zip(pred.as_slice()).enumerate() {
        if t == UNLABELED || skip[i] {
            continue;
        }
        if p == UNLABELED {
            return Err(Error::invalid(format!(
                "prediction leaves evaluated pixel {i} unlabeled"
            )));
        }
        confusion[t as usize - 1][p as usize - 1] += 1;
    }
    let evaluated: u64 = confusion.iter().flatten().sum();
    if evaluated == 0 {
        return Err(Error::invalid("empty evaluation set"));
    }
    let per_class_ca = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| 100.0 * row[c] as f64 / total as f64)
        })
        .collect();
    let hits: u64 = (0..k).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        class_names: default_class_names(k),
        per_class_ca,
        overall_ca: 100.0 * hits as f64 / evaluated as f64,
        confusion,
        evaluated_pixels: evaluated,
        timing_s: IndexMap::new(),
    })
}
