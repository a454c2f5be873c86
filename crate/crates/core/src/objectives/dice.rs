use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiceError {
    #[error("label volumes differ in shape: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("label {label} at voxel {index} outside [0, {num_classes})")]
    LabelOutOfRange {
        index: usize,
        label: u16,
        num_classes: u16,
    },
    #[error("need at least one foreground class (num_classes >= 2), got {0}")]
    NoForeground(u16),
    #[error("label volume has {actual} voxels, shape requires {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Integer label map; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    shape: (usize, usize, usize),
    labels: Vec<u16>,
}

impl LabelVolume {
    pub fn new(shape: (usize, usize, usize), labels: Vec<u16>) -> Result<Self, DiceError> {
        let expected = shape.0 * shape.1 * shape.2;
        if labels.len() != expected {
            return Err(DiceError::LengthMismatch {
                expected,
                actual: labels.len(),
            });
        }
        Ok(Self { shape, labels })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }
}

/// Mean Dice over foreground classes `1..num_classes`.
///
/// A class absent from both volumes scores 1.
pub fn dice_score(
    pred: &LabelVolume,
    truth: &LabelVolume,
    num_classes: u16,
) -> Result<f64, DiceError> {
    if pred.shape != truth.shape {
        return Err(DiceError::ShapeMismatch(pred.shape, truth.shape));
    }
    if num_classes < 2 {
        return Err(DiceError::NoForeground(num_classes));
    }
    let n = num_classes as usize;
    let mut pred_count = vec![0u64; n];
    let mut truth_count = vec![0u64; n];
    let mut overlap = vec![0u64; n];
    for (index, (&p, &t)) in pred.labels.iter().zip(&truth.labels).enumerate() {
        for label in [p, t] {
            if label >= num_classes {
                return Err(DiceError::LabelOutOfRange {
                    index,
                    label,
                    num_classes,
                });
            }
        }
        pred_count[p as usize] += 1;
        truth_count[t as usize] += 1;
        if p == t {
            overlap[p as usize] += 1;
        }
    }
    let total: f64 = (1..n)
        .map(|c| {
            let denom = pred_count[c] + truth_count[c];
            if denom == 0 {
                1.0
            } else {
                2.0 * overlap[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(labels: Vec<u16>) -> LabelVolume {
        let n = labels.len();
        LabelVolume::new((n, 1, 1), labels).unwrap()
    }

    #[test]
    fn identical_is_one() {
        let a = vol(vec![0, 1, 2, 2, 1, 0]);
        assert_eq!(dice_score(&a, &a, 3).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        let a = vol(vec![1, 1, 0, 0]);
        let b = vol(vec![0, 0, 1, 1]);
        assert_eq!(dice_score(&a, &b, 2).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap() {
        // |A| = 100, |B| = 100, |A ∩ B| = 50.
        let mut a = vec![0u16; 200];
        let mut b = vec![0u16; 200];
        a[..100].fill(1);
        b[50..150].fill(1);
        assert_eq!(dice_score(&vol(a), &vol(b), 2).unwrap(), 0.5);
    }

    #[test]
    fn empty_class_scores_one() {
        let a = vol(vec![0, 1, 1, 0]);
        // Class 2 is absent from both: (1.0 + 1.0) / 2.
        assert_eq!(dice_score(&a, &a.clone(), 3).unwrap(), 1.0);
        let b = vol(vec![0, 1, 0, 0]);
        let expected = (2.0 * 1.0 / 3.0 + 1.0) / 2.0;
        assert!((dice_score(&a, &b, 3).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let a = vol(vec![0, 1]);
        let b = vol(vec![0, 1, 1]);
        assert!(matches!(
            dice_score(&a, &b, 2),
            Err(DiceError::ShapeMismatch(..))
        ));
        let c = vol(vec![0, 3]);
        assert!(matches!(
            dice_score(&a, &c, 2),
            Err(DiceError::LabelOutOfRange {
                index: 1,
                label: 3,
                ..
            })
        ));
        assert!(matches!(
            dice_score(&a, &a, 1),
            Err(DiceError::NoForeground(1))
        ));
    }
}
