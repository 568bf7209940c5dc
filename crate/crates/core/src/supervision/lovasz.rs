use super::{check_logits, softmax_backward, LossValue};
use crate::error::Result;
use crate::tensor::{channel_softmax, Tensor};

/// Per-position weights of the Jaccard loss's Lovász extension for ground
/// truth sorted by descending error: `jaccard[i] - jaccard[i - 1]` with
/// `jaccard = 1 - (G - cumsum(gt)) / (G + cumsum(1 - gt))`.
fn lovasz_grad(gt_sorted: &[bool]) -> Vec<f64> {
    let total = gt_sorted.iter().filter(|&&g| g).count() as f64;
    let mut inter = 0.0;
    let mut union_extra = 0.0;
    let mut prev = 0.0;
    gt_sorted
        .iter()
        .map(|&g| {
            if g {
                inter += 1.0;
            } else {
                union_extra += 1.0;
            }
            let jaccard = 1.0 - (total - inter) / (total + union_extra);
            let w = jaccard - prev;
            prev = jaccard;
            w
        })
        .collect()
}

/// Lovász-softmax averaged over classes present in the non-ignored labels.
pub fn lovasz_softmax(logits: &Tensor, labels: &[usize], ignore: Option<usize>) -> Result<LossValue> {
    let (m, n) = check_logits(logits, labels)?;
    let probs = channel_softmax(logits)?;
    let p = probs.data();
    let kept: Vec<usize> = (0..n).filter(|&i| Some(labels[i]) != ignore).collect();
    let present: Vec<usize> = (0..m).filter(|&c| kept.iter().any(|&i| labels[i] == c)).collect();
    let mut grad_p = vec![0.0; p.len()];
    if present.is_empty() {
        return Ok(LossValue { value: 0.0, grad: Tensor::zeros(logits.dims()) });
    }
    let scale = 1.0 / present.len() as f64;
    let mut total = 0.0;
    for &c in &present {
        let mut order: Vec<(f64, usize)> = kept
            .iter()
            .map(|&i| {
                let fg = labels[i] == c;
                let pc = p[c * n + i];
                (if fg { 1.0 - pc } else { pc }, i)
            })
            .collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let gt_sorted: Vec<bool> = order.iter().map(|&(_, i)| labels[i] == c).collect();
        let weights = lovasz_grad(&gt_sorted);
        for (&(err, i), &w) in order.iter().zip(&weights) {
            total += scale * err * w;
            let de_dp = if labels[i] == c { -1.0 } else { 1.0 };
            grad_p[c * n + i] += scale * w * de_dp;
        }
    }
    Ok(LossValue { value: total, grad: softmax_backward(&probs, &grad_p) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_zero() {
        let labels = [0, 1, 2, 1];
        let mut logits = Tensor::filled(&[3, 4], -1000.0);
        for (i, &l) in labels.iter().enumerate() {
            logits.data_mut()[l * 4 + i] = 1000.0;
        }
        assert!(lovasz_softmax(&logits, &labels, None).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn single_voxel_equals_error() {
        // two classes, p(class 1) = 0.3
        let logit = (0.3f64 / 0.7).ln();
        let logits = Tensor::new(vec![2, 1], vec![0.0, logit]).unwrap();
        let v = lovasz_softmax(&logits, &[1], None).unwrap().value;
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn nothing_present() {
        let logits = Tensor::zeros(&[3, 2]);
        assert_eq!(lovasz_softmax(&logits, &[7, 7], Some(7)).unwrap().value, 0.0);
    }
}
