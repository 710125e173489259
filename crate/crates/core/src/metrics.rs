//! Pixel-level accuracy measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts with rows = true class, columns = predicted class (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::shape("confusion", "counts must be square"));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, k: usize) -> u64 {
        (0..self.classes).map(|j| self.get(k, j)).sum()
    }

    pub fn col_total(&self, k: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, k)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    fn require_counts(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Contract("confusion matrix is empty".into())),
            t => Ok(t as f64),
        }
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        Ok(self.trace() as f64 / self.require_counts()?)
    }

    /// Recall per class; `None` for classes without test pixels.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|k| match self.row_total(k) {
                0 => None,
                r => Some(self.get(k, k) as f64 / r as f64),
            })
            .collect()
    }

    /// Mean per-class accuracy over classes that have test pixels.
    pub fn average_accuracy(&self) -> Result<f64> {
        self.require_counts()?;
        let present: Vec<f64> = self.per_class().into_iter().flatten().collect();
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    /// Cohen's kappa. When chance agreement is 1 the statistic is taken as 1
    /// for perfect agreement and 0 otherwise.
    pub fn kappa(&self) -> Result<f64> {
        let total = self.require_counts()?;
        let p_o = self.trace() as f64 / total;
        let p_e = (0..self.classes)
            .map(|k| self.row_total(k) as f64 * self.col_total(k) as f64)
            .sum::<f64>()
            / (total * total);
        if p_e >= 1.0 {
            return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
        }
        Ok((p_o - p_e) / (1.0 - p_e))
    }
}

/// Confusion over `test` pixels of 1-based class maps.
pub fn confusion(pred: &[u16], truth: &[u16], test: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::shape("confusion", "prediction and truth maps differ in size"));
    }
    let mut m = ConfusionMatrix::new(classes);
    for &p in test {
        let (t, q) = match (truth.get(p), pred.get(p)) {
            (Some(&t), Some(&q)) => (usize::from(t), usize::from(q)),
            _ => return Err(Error::shape("confusion", format!("test pixel {p} out of range"))),
        };
        if t == 0 {
            return Err(Error::Contract(format!("test pixel {p} is unannotated")));
        }
        if t > classes || q == 0 || q > classes {
            return Err(Error::Contract(format!("pixel {p}: class out of 1..={classes}")));
        }
        m.record(t - 1, q - 1);
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class: Vec<Option<f64>>,
    pub n_test: u64,
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            oa: m.overall_accuracy()?,
            aa: m.average_accuracy()?,
            kappa: m.kappa()?,
            per_class: m.per_class(),
            n_test: m.total(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn confusion_counts_test_pixels_only() {
        let truth = [1, 2, 2, 0, 1];
        let pred = [1, 1, 2, 2, 2];
        let cm = confusion(&pred, &truth, &[0, 1, 2], 2).unwrap();
        assert_eq!(cm, m(&[&[1, 0], &[1, 1]]));
        assert_eq!(cm.total(), 3);
        assert!(confusion(&pred, &truth, &[3], 2).is_err());
        let single = confusion(&[2], &[1], &[0], 2).unwrap();
        assert_eq!(single.get(0, 1), 1);
        let same = confusion(&truth, &truth, &[0, 1, 2, 4], 2).unwrap();
        assert_eq!(same.trace(), same.total());
    }

    #[test]
    fn hand_counted_accuracies() {
        let cm = m(&[&[1, 1], &[0, 2]]);
        assert_eq!(cm.overall_accuracy().unwrap(), 0.75);
        assert_eq!(cm.per_class(), vec![Some(0.5), Some(1.0)]);
        assert_eq!(cm.average_accuracy().unwrap(), 0.75);
        let diag = m(&[&[3, 0], &[0, 5]]);
        assert_eq!(diag.overall_accuracy().unwrap(), 1.0);
        assert_eq!(diag.average_accuracy().unwrap(), 1.0);
        assert_eq!(diag.kappa().unwrap(), 1.0);
    }

    #[test]
    fn absent_class_skipped_in_average() {
        let cm = m(&[&[2, 0, 0], &[0, 0, 0], &[1, 0, 1]]);
        assert_eq!(cm.per_class()[1], None);
        assert_eq!(cm.average_accuracy().unwrap(), 0.75);
    }

    #[test]
    fn kappa_cases() {
        assert_eq!(m(&[&[1, 1], &[1, 1]]).kappa().unwrap(), 0.0);
        // p_o = 0.7, p_e = (25·30 + 25·20) / 2500 = 0.5
        let k = m(&[&[20, 5], &[10, 15]]).kappa().unwrap();
        assert!((k - 0.4).abs() < 1e-15);
        assert_eq!(m(&[&[4, 0], &[0, 0]]).kappa().unwrap(), 1.0);
        assert!(ConfusionMatrix::new(2).kappa().is_err());
    }

    #[test]
    fn report_json_fields() {
        let r = MetricsReport::from_confusion(&m(&[&[1, 1], &[0, 2]])).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["n_test"], 4);
        assert_eq!(v["per_class"][0], 0.5);
        assert_eq!(v["oa"], 0.75);
    }
}
