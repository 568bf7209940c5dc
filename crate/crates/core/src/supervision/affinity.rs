use super::{check_logits, softmax_backward, LossValue};
use crate::error::Result;
use crate::tensor::{channel_softmax, Tensor};

/// Semantic and geometric scene-class affinity terms.
#[derive(Debug, Clone)]
pub struct AffinityLosses {
    pub sem: LossValue,
    pub geo: LossValue,
}

const LOG_FLOOR: f64 = 1e-12;

/// `-(ln precision + ln recall + ln specificity)` for soft mask `p` against
/// binary truth `t`, with the gradient with respect to `p`. `None` when a
/// denominator vanishes.
fn class_term(p: &[f64], t: &[bool]) -> Option<(f64, Vec<f64>)> {
    let sum_p: f64 = p.iter().sum();
    let pos = t.iter().filter(|&&v| v).count() as f64;
    let neg = t.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 || sum_p <= 0.0 {
        return None;
    }
    let inter: f64 = p.iter().zip(t).filter(|(_, &v)| v).map(|(x, _)| x).sum();
    let true_neg: f64 = p.iter().zip(t).filter(|(_, &v)| !v).map(|(x, _)| 1.0 - x).sum();
    let log_term = |ratio: f64| -> (f64, bool) {
        if ratio > LOG_FLOOR {
            (-ratio.ln(), true)
        } else {
            (-LOG_FLOOR.ln(), false)
        }
    };
    let (lp, dp) = log_term(inter / sum_p);
    let (lr, dr) = log_term(inter / pos);
    let (ls, ds) = log_term(true_neg / neg);
    let grad = p
        .iter()
        .zip(t)
        .map(|(_, &is_pos)| {
            let tv = if is_pos { 1.0 } else { 0.0 };
            let mut g = 0.0;
            if dp {
                g += -tv / inter + 1.0 / sum_p;
            }
            if dr {
                g += -tv / inter;
            }
            if ds {
                g += (1.0 - tv) / true_neg;
            }
            g
        })
        .collect();
    Some((lp + lr + ls, grad))
}

/// `sem` averages the class term over semantic classes `m >= 1` that have
/// both positives and negatives; `geo` applies it to occupied-vs-empty with
/// `p_occupied = 1 - p_empty`.
pub fn affinity_losses(logits: &Tensor, labels: &[usize]) -> Result<AffinityLosses> {
    let (m, n) = check_logits(logits, labels)?;
    let probs = channel_softmax(logits)?;
    let p = probs.data();

    let mut grad_sem = vec![0.0; p.len()];
    let mut terms = Vec::new();
    for c in 1..m {
        let truth: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if let Some((v, g)) = class_term(&p[c * n..(c + 1) * n], &truth) {
            terms.push((c, v, g));
        }
    }
    let mut sem = 0.0;
    if !terms.is_empty() {
        let scale = 1.0 / terms.len() as f64;
        for (c, v, g) in &terms {
            sem += scale * v;
            for i in 0..n {
                grad_sem[c * n + i] = scale * g[i];
            }
        }
    }

    let mut grad_geo = vec![0.0; p.len()];
    let occupied: Vec<f64> = (0..n).map(|i| 1.0 - p[i]).collect();
    let truth: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let geo = match class_term(&occupied, &truth) {
        Some((v, g)) => {
            for i in 0..n {
                grad_geo[i] = -g[i];
            }
            v
        }
        None => 0.0,
    };

    Ok(AffinityLosses {
        sem: LossValue { value: sem, grad: softmax_backward(&probs, &grad_sem) },
        geo: LossValue { value: geo, grad: softmax_backward(&probs, &grad_geo) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let labels = [0, 1, 2, 1, 0];
        let mut logits = Tensor::filled(&[3, 5], -1000.0);
        for (i, &l) in labels.iter().enumerate() {
            logits.data_mut()[l * 5 + i] = 1000.0;
        }
        let a = affinity_losses(&logits, &labels).unwrap();
        assert!(a.sem.value.abs() < 1e-12);
        assert!(a.geo.value.abs() < 1e-12);
    }

    #[test]
    fn hand_counted_half_probabilities() {
        // truth [c, not c], p(c) = [0.5, 0.5]: precision = recall = specificity = 0.5
        let (v, _) = class_term(&[0.5, 0.5], &[true, false]).unwrap();
        assert!((v - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 2.0794).abs() < 1e-4);
        let logits = Tensor::zeros(&[2, 2]);
        let a = affinity_losses(&logits, &[1, 0]).unwrap();
        assert!((a.sem.value - v).abs() < 1e-12);
        assert!((a.geo.value - v).abs() < 1e-12);
    }

    #[test]
    fn degenerate_classes_are_skipped() {
        assert!(class_term(&[0.2, 0.3], &[false, false]).is_none());
        assert!(class_term(&[0.2, 0.3], &[true, true]).is_none());
        let logits = Tensor::zeros(&[3, 2]);
        // every voxel empty: no semantic class present, geo has no positives
        let a = affinity_losses(&logits, &[0, 0]).unwrap();
        assert_eq!(a.sem.value, 0.0);
        assert_eq!(a.geo.value, 0.0);
    }
}
