use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `2|P ∩ T| / (|P| + |T|)` for one class; 1 when both masks are empty.
pub fn dice(pred: &[u8], truth: &[u8], class: u8) -> f64 {
    let (mut p, mut t, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(truth) {
        let (ia, ib) = (a == class, b == class);
        p += ia as usize;
        t += ib as usize;
        both += (ia && ib) as usize;
    }
    if p + t == 0 { 1.0 } else { 2.0 * both as f64 / (p + t) as f64 }
}

/// Foreground Dice scores (classes `1..num_classes`) and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

pub fn dice_report(pred: &[u8], truth: &[u8], num_classes: usize) -> Result<DiceReport> {
    if pred.len() != truth.len() {
        return Err(Error::dim("dice", format!("{} predicted voxels vs {} true", pred.len(), truth.len())));
    }
    let mut p = vec![0usize; 256];
    let mut t = vec![0usize; 256];
    let mut both = vec![0usize; 256];
    for (&a, &b) in pred.iter().zip(truth) {
        p[a as usize] += 1;
        t[b as usize] += 1;
        if a == b {
            both[a as usize] += 1;
        }
    }
    let per_class: Vec<f64> = (1..num_classes)
        .map(|c| if p[c] + t[c] == 0 { 1.0 } else { 2.0 * both[c] as f64 / (p[c] + t[c]) as f64 })
        .collect();
    let mean = per_class.iter().sum::<f64>() / per_class.len().max(1) as f64;
    Ok(DiceReport { per_class, mean })
}

/// Voxel-wise concatenation of several cases scored as one.
pub fn pooled_dice_report(cases: &[(&[u8], &[u8])], num_classes: usize) -> Result<DiceReport> {
    let pred: Vec<u8> = cases.iter().flat_map(|c| c.0.iter().copied()).collect();
    let truth: Vec<u8> = cases.iter().flat_map(|c| c.1.iter().copied()).collect();
    dice_report(&pred, &truth, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        assert_eq!(dice(&[1, 1, 0], &[1, 1, 0], 1), 1.0);
        assert_eq!(dice(&[1, 1, 0, 0], &[0, 0, 1, 1], 1), 0.0);
        assert_eq!(dice(&[1, 1, 1, 1, 0, 0], &[0, 0, 1, 1, 1, 1], 1), 0.5);
        assert_eq!(dice(&[0, 0], &[0, 0], 3), 1.0);
    }

    #[test]
    fn report_matches_per_class_dice() {
        let pred = [0, 1, 2, 2, 1, 0, 2];
        let truth = [0, 1, 1, 2, 2, 0, 2];
        let r = dice_report(&pred, &truth, 4).unwrap();
        for c in 1..4u8 {
            assert_eq!(r.per_class[c as usize - 1], dice(&pred, &truth, c));
        }
        assert_eq!(r.mean, r.per_class.iter().sum::<f64>() / 3.0);
        assert!(dice_report(&pred, &truth[..3], 4).is_err());
    }
}
