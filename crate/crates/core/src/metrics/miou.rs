use serde::Serialize;

use crate::error::{OccError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouReport {
    /// Indexed by class id; entry 0 (empty) is always `None`. `None` elsewhere means zero union.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with a defined IoU; `None` if there are none.
    pub mean: Option<f64>,
    /// Semantic classes with zero union, excluded from the mean.
    pub undefined: Vec<usize>,
}

/// Per-class IoU over non-ignored voxels (`ignore[i] == true` drops voxel `i`).
pub fn miou(pred: &[usize], gt: &[usize], classes: usize, ignore: Option<&[bool]>) -> Result<MiouReport> {
    if pred.len() != gt.len() {
        return Err(OccError::input(format!("prediction has {} voxels, ground truth {}", pred.len(), gt.len())));
    }
    if let Some(mask) = ignore {
        if mask.len() != gt.len() {
            return Err(OccError::input(format!("ignore mask has {} entries, expected {}", mask.len(), gt.len())));
        }
    }
    if classes == 0 {
        return Err(OccError::input("class count must be positive"));
    }
    let mut tp = vec![0u64; classes];
    let mut fp = vec![0u64; classes];
    let mut fn_ = vec![0u64; classes];
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if p >= classes || g >= classes {
            return Err(OccError::input(format!("label at voxel {i} out of range for {classes} classes")));
        }
        if ignore.is_some_and(|m| m[i]) {
            continue;
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let mut per_class = vec![None; classes];
    let mut undefined = Vec::new();
    for m in 1..classes {
        let union = tp[m] + fp[m] + fn_[m];
        if union == 0 {
            undefined.push(m);
        } else {
            per_class[m] = Some(tp[m] as f64 / union as f64);
        }
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(MiouReport { per_class, mean, undefined })
}
