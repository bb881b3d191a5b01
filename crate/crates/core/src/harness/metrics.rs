use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

/// Overall accuracy and intersection-over-union per class from the confusion counts.
pub fn evaluate(pred: &[usize], gt: &[usize], num_classes: usize) -> Result<Metrics> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!("prediction has {} labels, ground truth {}", pred.len(), gt.len())));
    }
    if gt.is_empty() {
        return Err(Error::invalid("cannot evaluate zero points"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        if p >= num_classes || g >= num_classes {
            return Err(Error::invalid(format!("label out of range for {num_classes} classes")));
        }
        if p == g {
            tp[p] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let per_class_iou: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let union = tp[c] + fp[c] + fn_[c];
            (union > 0).then(|| tp[c] as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    Ok(Metrics { accuracy: correct as f64 / gt.len() as f64, per_class_iou, miou })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let m = evaluate(&[0, 1, 2, 2], &[0, 1, 2, 2], 4).unwrap();
        assert_eq!(m.miou, 1.0);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.per_class_iou[3], None);
    }

    #[test]
    fn confusion_arithmetic() {
        let m = evaluate(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((m.per_class_iou[0].unwrap() - 0.5).abs() < 1e-12);
        assert!((m.per_class_iou[1].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.miou - 0.583333).abs() < 1e-6);
        assert_eq!(m.accuracy, 0.75);
    }

    #[test]
    fn all_wrong_binary() {
        let m = evaluate(&[1, 1, 0], &[0, 0, 1], 2).unwrap();
        assert_eq!(m.miou, 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(evaluate(&[0], &[0, 1], 2).is_err());
    }
}
