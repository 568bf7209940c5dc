use super::{check_logits, softmax_backward, LossValue};
use crate::error::{OccError, Result};
use crate::tensor::{channel_softmax, Tensor};

/// Mean over non-ignored voxels of `-(1 - p_t)^gamma * ln p_t`, uniform class weights.
pub fn focal_loss(logits: &Tensor, labels: &[usize], gamma: f64, ignore: Option<usize>) -> Result<LossValue> {
    let (m, n) = check_logits(logits, labels)?;
    if !(gamma >= 0.0) {
        return Err(OccError::input(format!("focal gamma must be >= 0, got {gamma}")));
    }
    let kept = labels.iter().filter(|&&l| Some(l) != ignore).count();
    if let Some(&bad) = labels.iter().find(|&&l| Some(l) != ignore && l >= m) {
        return Err(OccError::input(format!("label {bad} out of range for {m} classes")));
    }
    let mut grad = Tensor::zeros(logits.dims());
    if kept == 0 {
        return Ok(LossValue { value: 0.0, grad });
    }
    let probs = channel_softmax(logits)?;
    let p = probs.data();
    let g = grad.data_mut();
    let scale = 1.0 / kept as f64;
    let mut total = 0.0;
    for (i, &t) in labels.iter().enumerate() {
        if Some(t) == ignore {
            continue;
        }
        let q = p[t * n + i];
        let ln_q = q.max(f64::MIN_POSITIVE).ln();
        let r = 1.0 - q;
        total += -r.powf(gamma) * ln_q;
        // d/dq of -(1-q)^g ln q
        let focus = if gamma == 0.0 || r <= 0.0 { 0.0 } else { gamma * r.powf(gamma - 1.0) * ln_q };
        let dq = focus - r.powf(gamma) / q.max(f64::MIN_POSITIVE);
        for c in 0..m {
            let delta = if c == t { 1.0 } else { 0.0 };
            g[c * n + i] = scale * dq * q * (delta - p[c * n + i]);
        }
    }
    Ok(LossValue { value: total * scale, grad })
}

/// `1 - mean_m (2 sum p*y + eps) / (sum p + sum y + eps)` over all classes.
pub fn dice_loss(logits: &Tensor, labels: &[usize], eps: f64) -> Result<LossValue> {
    let (m, n) = check_logits(logits, labels)?;
    if !(eps > 0.0) {
        return Err(OccError::input(format!("dice eps must be positive, got {eps}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(OccError::input(format!("label {bad} out of range for {m} classes")));
    }
    let probs = channel_softmax(logits)?;
    let p = probs.data();
    let mut grad_p = vec![0.0; p.len()];
    let mut score = 0.0;
    for c in 0..m {
        let pc = &p[c * n..(c + 1) * n];
        let inter: f64 = pc.iter().zip(labels).filter(|(_, &l)| l == c).map(|(v, _)| v).sum();
        let sum_p: f64 = pc.iter().sum();
        let sum_y = labels.iter().filter(|&&l| l == c).count() as f64;
        let num = 2.0 * inter + eps;
        let den = sum_p + sum_y + eps;
        score += num / den;
        for (i, &l) in labels.iter().enumerate() {
            let y = if l == c { 1.0 } else { 0.0 };
            grad_p[c * n + i] = -(2.0 * y * den - num) / (den * den * m as f64);
        }
    }
    Ok(LossValue { value: 1.0 - score / m as f64, grad: softmax_backward(&probs, &grad_p) })
}

/// Mean cross-entropy over valid pixels between `softmax(depth_logits)` and one-hot bins.
pub fn depth_loss(depth_logits: &Tensor, targets: &Tensor, valid: &[bool]) -> Result<LossValue> {
    if depth_logits.dims() != targets.dims() || depth_logits.rank() < 2 || valid.len() != depth_logits.plane_len() {
        return Err(OccError::input(format!(
            "depth logits {:?}, targets {:?} and {} mask entries disagree",
            depth_logits.dims(),
            targets.dims(),
            valid.len()
        )));
    }
    let d_n = depth_logits.dims()[0];
    let n = depth_logits.plane_len();
    let mut grad = Tensor::zeros(depth_logits.dims());
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Ok(LossValue { value: 0.0, grad });
    }
    let probs = channel_softmax(depth_logits)?;
    let (p, y, x) = (probs.data(), targets.data(), depth_logits.data());
    let scale = 1.0 / count as f64;
    let g = grad.data_mut();
    let mut total = 0.0;
    for i in 0..n {
        if !valid[i] {
            continue;
        }
        let max = (0..d_n).map(|d| x[d * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..d_n).map(|d| (x[d * n + i] - max).exp()).sum::<f64>().ln();
        for d in 0..d_n {
            total += y[d * n + i] * (lse - x[d * n + i]);
            g[d * n + i] = scale * (p[d * n + i] - y[d * n + i]);
        }
    }
    Ok(LossValue { value: total * scale, grad })
}

/// Mean binary cross-entropy with logits over every `(m, x, y)` entry.
pub fn bev_bce(logits: &Tensor, gt: &Tensor) -> Result<LossValue> {
    if logits.dims() != gt.dims() || logits.is_empty() {
        return Err(OccError::input(format!("BEV logits {:?} vs target {:?}", logits.dims(), gt.dims())));
    }
    let scale = 1.0 / logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.data().iter().zip(gt.data()) {
        total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        let sig = if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) };
        grad.push(scale * (sig - y));
    }
    Ok(LossValue { value: total * scale, grad: Tensor::new(logits.dims().to_vec(), grad)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn saturated(m: usize, labels: &[usize]) -> Tensor {
        let n = labels.len();
        let mut t = Tensor::filled(&[m, n], -1000.0);
        for (i, &l) in labels.iter().enumerate() {
            t.data_mut()[l * n + i] = 1000.0;
        }
        t
    }

    #[test]
    fn focal_perfect_and_hand_value() {
        let labels = [0, 2, 1, 2];
        assert!(focal_loss(&saturated(3, &labels), &labels, 2.0, None).unwrap().value.abs() < 1e-12);
        let half = Tensor::zeros(&[2, 1]);
        let v = focal_loss(&half, &[1], 2.0, None).unwrap().value;
        assert!((v - 0.25 * LN_2).abs() < 1e-15);
        assert!((v - 0.173287).abs() < 1e-6);
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let logits = Tensor::from_fn(&[3, 4], |i| ((i * 7) % 5) as f64 * 0.6 - 1.1);
        let labels = [2, 0, 1, 1];
        let v = focal_loss(&logits, &labels, 0.0, None).unwrap().value;
        let probs = channel_softmax(&logits).unwrap();
        let ce: f64 = labels.iter().enumerate().map(|(i, &l)| -probs.data()[l * 4 + i].ln()).sum::<f64>() / 4.0;
        assert!((v - ce).abs() < 1e-12);
    }

    #[test]
    fn focal_ignores_and_all_ignored() {
        let logits = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.3);
        let a = focal_loss(&logits, &[1, 255, 0], 2.0, Some(255)).unwrap();
        let b = focal_loss(&logits.channels(0, 2).unwrap(), &[1, 255, 0], 2.0, Some(255)).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.grad.at(&[0, 1]), 0.0);
        assert_eq!(focal_loss(&logits, &[9, 9, 9], 2.0, Some(9)).unwrap().value, 0.0);
        assert!(focal_loss(&logits, &[0, 1, 0], -1.0, None).is_err());
    }

    #[test]
    fn dice_perfect_and_disjoint() {
        let labels = [0, 1, 1, 2];
        let perfect = dice_loss(&saturated(3, &labels), &labels, 1e-6).unwrap().value;
        assert!(perfect.abs() < 1e-6);
        // class 1 predicted everywhere it is absent and nowhere it is present
        let labels = [1, 1, 0, 0];
        let pred = saturated(2, &[0, 0, 1, 1]);
        let v = dice_loss(&pred, &labels, 1e-6).unwrap().value;
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn depth_cases() {
        let targets = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let perfect = Tensor::new(vec![2, 1, 2], vec![50.0, -50.0, -50.0, 50.0]).unwrap();
        assert!(depth_loss(&perfect, &targets, &[true, true]).unwrap().value < 1e-40);

        let mut t16 = Tensor::zeros(&[16, 1, 3]);
        t16.set(&[5, 0, 0], 1.0);
        t16.set(&[9, 0, 2], 1.0);
        let v = depth_loss(&Tensor::zeros(&[16, 1, 3]), &t16, &[true, false, true]).unwrap().value;
        assert!((v - 16f64.ln()).abs() < 1e-12);
        assert!((v - 2.7726).abs() < 1e-4);

        // perturbing an invalid pixel leaves the loss unchanged
        let mut noisy = Tensor::zeros(&[16, 1, 3]);
        for d in 0..16 {
            noisy.set(&[d, 0, 1], d as f64 * 3.0);
        }
        assert_eq!(depth_loss(&noisy, &t16, &[true, false, true]).unwrap().value, v);
        assert_eq!(depth_loss(&noisy, &t16, &[false; 3]).unwrap().value, 0.0);
    }

    #[test]
    fn bce_cases() {
        let gt = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let sat = gt.map(|y| if y > 0.5 { 1e3 } else { -1e3 });
        assert!(bev_bce(&sat, &gt).unwrap().value < 1e-300);
        let zero = bev_bce(&Tensor::zeros(&[2, 1, 2]), &gt).unwrap().value;
        assert!((zero - LN_2).abs() < 1e-15);
        let zero_other = bev_bce(&Tensor::zeros(&[2, 1, 2]), &Tensor::zeros(&[2, 1, 2])).unwrap().value;
        assert_eq!(zero, zero_other);
    }
}
