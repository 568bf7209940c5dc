//! BEV ground truth and the loss stack, each loss with its analytic gradient.

mod affinity;
mod bev_gt;
mod lovasz;
mod voxel;

pub use affinity::{affinity_losses, AffinityLosses};
pub use bev_gt::{bev_gt_from_occ, or_pool2x2, BevGroundTruth};
pub use lovasz::lovasz_softmax;
pub use voxel::{bev_bce, depth_loss, dice_loss, focal_loss};

use serde::{Deserialize, Serialize};

use crate::error::{OccError, Result};
use crate::tensor::Tensor;
use crate::view_transform::{depth_targets, DepthBinSpec};

/// Default focusing parameter of the focal loss.
pub const FOCAL_GAMMA: f64 = 2.0;
/// Smoothing term of the dice loss.
pub const DICE_EPS: f64 = 1e-6;

/// Per-voxel class ids over `[H, W, Z]`, 0 = empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyVolume {
    dims: [usize; 3],
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl OccupancyVolume {
    pub fn new(dims: [usize; 3], labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if labels.len() != dims.iter().product::<usize>() {
            return Err(OccError::input(format!("{} labels for dims {dims:?}", labels.len())));
        }
        let m = class_names.len();
        if let Some(bad) = labels.iter().find(|&&l| l >= m) {
            return Err(OccError::input(format!("label {bad} out of range for {m} classes")));
        }
        Ok(Self { dims, labels, class_names })
    }

    /// Generic names `empty`, `class1`, ... for `m` classes.
    pub fn default_names(m: usize) -> Vec<String> {
        (0..m).map(|i| if i == 0 { "empty".to_string() } else { format!("class{i}") }).collect()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn label(&self, i: usize, j: usize, k: usize) -> usize {
        self.labels[(i * self.dims[1] + j) * self.dims[2] + k]
    }
}

/// A scalar loss and its gradient with respect to the logits it was computed from.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Tensor,
}

/// Every term of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub focal: f64,
    pub sem_affinity: f64,
    pub geo_affinity: f64,
    pub dice: f64,
    pub lovasz: f64,
    pub depth: f64,
    pub bev: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("focal", self.focal),
            ("sem_affinity", self.sem_affinity),
            ("geo_affinity", self.geo_affinity),
            ("dice", self.dice),
            ("lovasz", self.lovasz),
            ("depth", self.depth),
            ("bev", self.bev),
        ]
    }
}

/// Unweighted sum of all seven terms.
pub fn total_loss(terms: &LossBreakdown) -> f64 {
    terms.terms().iter().map(|(_, v)| v).sum()
}

/// Every term for one forward pass against a labelled scene. The depth term is
/// one cross-entropy over the valid pixels of all cameras.
pub fn loss_breakdown(
    logits: &Tensor,
    bev_logits: &Tensor,
    depth_logits: &[Tensor],
    depth_maps: &[Tensor],
    bins: &DepthBinSpec,
    gt: &OccupancyVolume,
) -> Result<LossBreakdown> {
    if depth_logits.len() != depth_maps.len() {
        return Err(OccError::input(format!(
            "{} depth logit maps for {} depth maps",
            depth_logits.len(),
            depth_maps.len()
        )));
    }
    let labels = gt.labels();
    let affinity = affinity_losses(logits, labels)?;
    let (mut depth_sum, mut depth_valid) = (0.0, 0usize);
    for (x, d) in depth_logits.iter().zip(depth_maps) {
        let t = depth_targets(d, bins)?;
        let n = t.valid.iter().filter(|&&v| v).count();
        depth_sum += depth_loss(x, &t.one_hot, &t.valid)?.value * n as f64;
        depth_valid += n;
    }
    let bev_gt = or_pool2x2(&bev_gt_from_occ(gt))?;
    Ok(LossBreakdown {
        focal: focal_loss(logits, labels, FOCAL_GAMMA, None)?.value,
        sem_affinity: affinity.sem.value,
        geo_affinity: affinity.geo.value,
        dice: dice_loss(logits, labels, DICE_EPS)?.value,
        lovasz: lovasz_softmax(logits, labels, None)?.value,
        depth: if depth_valid == 0 { 0.0 } else { depth_sum / depth_valid as f64 },
        bev: bev_bce(bev_logits, &bev_gt)?.value,
    })
}

pub(crate) fn check_logits(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let m = *logits.dims().first().ok_or_else(|| OccError::input("logits need a class axis"))?;
    let n = logits.plane_len();
    if m == 0 || labels.len() != n {
        return Err(OccError::input(format!(
            "logits {:?} do not match {} labels",
            logits.dims(),
            labels.len()
        )));
    }
    Ok((m, n))
}

/// Pull a gradient with respect to softmax probabilities back to the logits.
pub(crate) fn softmax_backward(probs: &Tensor, grad_probs: &[f64]) -> Tensor {
    let m = probs.dims()[0];
    let n = probs.plane_len();
    let p = probs.data();
    let mut out = vec![0.0; p.len()];
    for i in 0..n {
        let dot: f64 = (0..m).map(|c| p[c * n + i] * grad_probs[c * n + i]).sum();
        for c in 0..m {
            out[c * n + i] = p[c * n + i] * (grad_probs[c * n + i] - dot);
        }
    }
    Tensor::new(probs.dims().to_vec(), out).expect("same dims as probs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_is_plain_sum() {
        assert_eq!(total_loss(&LossBreakdown::default()), 0.0);
        let ones = LossBreakdown {
            focal: 1.0,
            sem_affinity: 1.0,
            geo_affinity: 1.0,
            dice: 1.0,
            lovasz: 1.0,
            depth: 1.0,
            bev: 1.0,
        };
        assert_eq!(total_loss(&ones), 7.0);
        let t = LossBreakdown { focal: 0.3, sem_affinity: 1.25, geo_affinity: 0.7, dice: 0.01, lovasz: 0.4, depth: 2.1, bev: 0.69 };
        let manual = 0.3 + 1.25 + 0.7 + 0.01 + 0.4 + 2.1 + 0.69;
        assert!((total_loss(&t) - manual).abs() < 1e-12);
    }

    #[test]
    fn volume_rejects_bad_labels() {
        assert!(OccupancyVolume::new([1, 1, 2], vec![0, 3], OccupancyVolume::default_names(3)).is_err());
        assert!(OccupancyVolume::new([1, 1, 2], vec![0], OccupancyVolume::default_names(3)).is_err());
        let v = OccupancyVolume::new([1, 2, 2], vec![0, 1, 2, 0], OccupancyVolume::default_names(3)).unwrap();
        assert_eq!(v.label(0, 1, 0), 2);
    }
}
