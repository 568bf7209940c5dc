//! Central finite-difference checks of every analytic gradient.

use serde::Serialize;

use crate::error::Result;
use crate::geometry::{CameraRig, VoxelGridSpec};
use crate::head::{bev_seg_head, bev_seg_head_backward, BevFeature, BevSegWeights, SamplePlan};
use crate::rng::SplitMix64;
use crate::supervision::{
    affinity_losses, bev_bce, depth_loss, dice_loss, focal_loss, lovasz_softmax, DICE_EPS, FOCAL_GAMMA,
};
use crate::tensor::{channel_softmax, conv2d, conv2d_backward, relu, relu_backward, ConvParams, Tensor};
use crate::view_transform::{build_frustum, DepthBinSpec, PoolPlan};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Pass threshold on the relative error.
pub const TOLERANCE: f64 = 1e-6;

/// Analytic and numeric gradients of one parameter group.
#[derive(Debug, Clone)]
pub struct GradPair {
    pub param: &'static str,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub type CaseFn = fn(&mut SplitMix64) -> Result<Vec<GradPair>>;

#[derive(Clone, Copy)]
pub struct GradCase {
    pub op: &'static str,
    pub run: CaseFn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpReport {
    pub op: String,
    pub seeds: usize,
    pub max_rel_error: f64,
    /// Seed that produced `max_rel_error`.
    pub worst_seed: u64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub step: f64,
    pub tolerance: f64,
    pub ops: Vec<OpReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|o| o.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.ops.iter().filter(|o| !o.passed).map(|o| o.op.as_str()).collect()
    }
}

/// `max|a - n| / max(max|a|, max|n|, 1e-12)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|x| x.abs()).fold(1e-12, f64::max);
    diff / scale
}

/// Central differences of a scalar function of `x`, one coordinate at a time.
pub fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - STEP;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * STEP));
    }
    Ok(out)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random(rng: &mut SplitMix64, dims: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(dims, |_| scale * rng.normal())
}

fn labels(rng: &mut SplitMix64, n: usize, m: usize) -> Vec<usize> {
    (0..n).map(|_| rng.range_inclusive(0, m - 1)).collect()
}

fn conv_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let stride = rng.range_inclusive(1, 2);
    let x = random(rng, &[2, 5, 7], 1.0);
    let w = random(rng, &[3, 2, 3, 3], 0.5);
    let bias = rng.fill_uniform(3, -0.5, 0.5);
    let params = ConvParams::new(w.clone(), bias.clone(), stride, 1)?;
    let y = conv2d(&x, &params)?;
    let g = random(rng, y.dims(), 1.0);
    let grads = conv2d_backward(&x, &params, &g)?;
    let nx = numeric_grad(&x, |xp| Ok(dot(&conv2d(xp, &params)?, &g)))?;
    let nw = numeric_grad(&w, |wp| Ok(dot(&conv2d(&x, &ConvParams::new(wp.clone(), bias.clone(), stride, 1)?)?, &g)))?;
    let bt = Tensor::new(vec![3], bias)?;
    let nb = numeric_grad(&bt, |bp| Ok(dot(&conv2d(&x, &ConvParams::new(w.clone(), bp.data().to_vec(), stride, 1)?)?, &g)))?;
    Ok(vec![
        GradPair { param: "input", analytic: grads.input.into_data(), numeric: nx },
        GradPair { param: "weight", analytic: grads.weight.into_data(), numeric: nw },
        GradPair { param: "bias", analytic: grads.bias, numeric: nb },
    ])
}

fn relu_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    // Keep inputs off the kink so the difference quotient is well defined.
    let x = Tensor::from_fn(&[3, 4, 5], |_| {
        let v: f64 = rng.normal();
        if v.abs() < 1e-3 { v.signum() * 1e-3 + v } else { v }
    });
    let g = random(rng, x.dims(), 1.0);
    let analytic = relu_backward(&x, &g)?.into_data();
    let numeric = numeric_grad(&x, |xp| Ok(dot(&relu(xp), &g)))?;
    Ok(vec![GradPair { param: "input", analytic, numeric }])
}

fn small_rig(rng: &mut SplitMix64, dims: [usize; 2]) -> Result<CameraRig> {
    let n = rng.range_inclusive(1, 3);
    let pitch = rng.uniform(0.0, 0.4);
    let focal = rng.uniform(3.0, 6.0);
    CameraRig::ring(n, rng.uniform(0.0, 0.3), rng.uniform(0.2, 0.8), pitch, focal, dims)
}

fn interp_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let grid = VoxelGridSpec::new([-3.0, -3.0, -1.0, 3.0, 3.0, 1.0], [6, 6, 2])?;
    let rig = small_rig(rng, [5, 6])?;
    let plan = SamplePlan::new(&rig, &grid)?;
    let feats: Vec<Tensor> = (0..rig.len()).map(|_| random(rng, &[2, 5, 6], 1.0)).collect();
    let g = random(rng, &[2, 6, 6, 2], 1.0);
    let analytic = plan.backward(&g)?;
    let mut out = Vec::new();
    for cam in 0..rig.len() {
        let numeric = numeric_grad(&feats[cam], |fp| {
            let mut all = feats.clone();
            all[cam] = fp.clone();
            Ok(dot(plan.sample(&all)?.features(), &g))
        })?;
        out.push(GradPair { param: "features", analytic: analytic[cam].data().to_vec(), numeric });
    }
    Ok(out)
}

fn voxel_pool_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let half = VoxelGridSpec::new([-3.0, -3.0, -1.0, 3.0, 3.0, 1.0], [4, 4, 2])?;
    let rig = small_rig(rng, [3, 4])?;
    let bins = DepthBinSpec::new(0.5, 4.5, 3)?;
    let frustums = rig.cameras.iter().map(|c| build_frustum(c, &bins)).collect::<Result<Vec<_>>>()?;
    let plan = PoolPlan::new(&frustums, &half)?;
    let lifted: Vec<Tensor> = (0..rig.len()).map(|_| random(rng, &[3, 4, 3, 2], 1.0)).collect();
    let g = random(rng, &[2, 4, 4, 2], 1.0);
    let dims: Vec<Vec<usize>> = lifted.iter().map(|t| t.dims().to_vec()).collect();
    let analytic = plan.backward(&g, &dims)?;
    let mut out = Vec::new();
    for cam in 0..rig.len() {
        let numeric = numeric_grad(&lifted[cam], |lp| {
            let mut all = lifted.clone();
            all[cam] = lp.clone();
            Ok(dot(plan.pool(&all)?.features(), &g))
        })?;
        out.push(GradPair { param: "lifted", analytic: analytic[cam].data().to_vec(), numeric });
    }
    Ok(out)
}

fn seg_head_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let (c, h, w, m) = (3, 4, 4, 4);
    // Resample until every pre-activation is clear of the ReLU kink.
    let (b, weights) = loop {
        let b = random(rng, &[c, h, w], 1.0);
        let weights = BevSegWeights {
            conv: ConvParams::same(random(rng, &[c, c, 3, 3], 0.4), rng.fill_uniform(c, -0.2, 0.2))?,
            classifier: ConvParams::same(random(rng, &[m, c, 1, 1], 0.5), rng.fill_uniform(m, -0.2, 0.2))?,
        };
        if conv2d(&b, &weights.conv)?.data().iter().all(|v| v.abs() > 1e-3) {
            break (b, weights);
        }
    };
    let bf = BevFeature::new(b.clone())?;
    let g = random(rng, &[m, h, w], 1.0);
    let grads = bev_seg_head_backward(&bf, &weights, &g)?;
    let loss = |bp: &Tensor, wt: &BevSegWeights| -> Result<f64> { Ok(dot(&bev_seg_head(&BevFeature::new(bp.clone())?, wt)?, &g)) };
    let nb = numeric_grad(&b, |bp| loss(bp, &weights))?;
    let nw = numeric_grad(weights.conv.weight(), |wp| {
        let mut wt = weights.clone();
        *wt.conv.weight_mut() = wp.clone();
        loss(&b, &wt)
    })?;
    let nc = numeric_grad(weights.classifier.weight(), |wp| {
        let mut wt = weights.clone();
        *wt.classifier.weight_mut() = wp.clone();
        loss(&b, &wt)
    })?;
    Ok(vec![
        GradPair { param: "input", analytic: grads.input.into_data(), numeric: nb },
        GradPair { param: "conv.weight", analytic: grads.conv.weight.into_data(), numeric: nw },
        GradPair { param: "classifier.weight", analytic: grads.classifier.weight.into_data(), numeric: nc },
    ])
}

fn logits_and_labels(rng: &mut SplitMix64) -> (Tensor, Vec<usize>) {
    let (m, n) = (4, 12);
    (random(rng, &[m, 3, 4], 1.5), labels(rng, n, m))
}

fn loss_pair(x: &Tensor, grad: Tensor, f: impl Fn(&Tensor) -> Result<f64>) -> Result<Vec<GradPair>> {
    let numeric = numeric_grad(x, f)?;
    Ok(vec![GradPair { param: "logits", analytic: grad.into_data(), numeric }])
}

fn focal_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let (x, y) = logits_and_labels(rng);
    let lv = focal_loss(&x, &y, FOCAL_GAMMA, None)?;
    loss_pair(&x, lv.grad, |xp| Ok(focal_loss(xp, &y, FOCAL_GAMMA, None)?.value))
}

fn sem_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let (x, y) = logits_and_labels(rng);
    let lv = affinity_losses(&x, &y)?.sem;
    loss_pair(&x, lv.grad, |xp| Ok(affinity_losses(xp, &y)?.sem.value))
}

fn geo_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let (x, y) = logits_and_labels(rng);
    let lv = affinity_losses(&x, &y)?.geo;
    loss_pair(&x, lv.grad, |xp| Ok(affinity_losses(xp, &y)?.geo.value))
}

fn dice_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let (x, y) = logits_and_labels(rng);
    let lv = dice_loss(&x, &y, DICE_EPS)?;
    loss_pair(&x, lv.grad, |xp| Ok(dice_loss(xp, &y, DICE_EPS)?.value))
}

/// Smallest gap between distinct-voxel errors within any class; ties make the loss non-smooth.
fn min_error_gap(x: &Tensor, y: &[usize]) -> Result<f64> {
    let p = channel_softmax(x)?;
    let (m, n) = (x.dims()[0], x.plane_len());
    let mut gap = f64::INFINITY;
    for c in 0..m {
        let mut e: Vec<f64> = (0..n).map(|i| ((y[i] == c) as u8 as f64 - p.data()[c * n + i]).abs()).collect();
        e.sort_by(f64::total_cmp);
        gap = e.windows(2).map(|w| w[1] - w[0]).fold(gap, f64::min);
    }
    Ok(gap)
}

fn lovasz_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let (x, y) = loop {
        let (x, y) = logits_and_labels(rng);
        if min_error_gap(&x, &y)? > 1e-3 {
            break (x, y);
        }
    };
    let lv = lovasz_softmax(&x, &y, None)?;
    loss_pair(&x, lv.grad, |xp| Ok(lovasz_softmax(xp, &y, None)?.value))
}

fn depth_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let (d, h, w) = (5, 3, 4);
    let x = random(rng, &[d, h, w], 1.5);
    let valid: Vec<bool> = (0..h * w).map(|_| rng.next_f64() < 0.7).collect();
    let mut t = Tensor::zeros(&[d, h, w]);
    for (pix, &v) in valid.iter().enumerate() {
        if v {
            let b = rng.range_inclusive(0, d - 1);
            t.data_mut()[b * h * w + pix] = 1.0;
        }
    }
    let lv = depth_loss(&x, &t, &valid)?;
    loss_pair(&x, lv.grad, |xp| Ok(depth_loss(xp, &t, &valid)?.value))
}

fn bev_bce_case(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
    let x = random(rng, &[4, 3, 3], 2.0);
    let gt = Tensor::from_fn(x.dims(), |_| (rng.next_f64() < 0.4) as u8 as f64);
    let lv = bev_bce(&x, &gt)?;
    loss_pair(&x, lv.grad, |xp| Ok(bev_bce(xp, &gt)?.value))
}

/// Every differentiable operation, in report order.
pub fn default_cases() -> Vec<GradCase> {
    vec![
        GradCase { op: "conv2d", run: conv_case },
        GradCase { op: "relu", run: relu_case },
        GradCase { op: "interp_sample", run: interp_case },
        GradCase { op: "voxel_pool", run: voxel_pool_case },
        GradCase { op: "bev_seg_head", run: seg_head_case },
        GradCase { op: "focal_loss", run: focal_case },
        GradCase { op: "sem_affinity", run: sem_case },
        GradCase { op: "geo_affinity", run: geo_case },
        GradCase { op: "dice_loss", run: dice_case },
        GradCase { op: "lovasz_softmax", run: lovasz_case },
        GradCase { op: "depth_loss", run: depth_case },
        GradCase { op: "bev_bce", run: bev_bce_case },
    ]
}

/// Runs each case for `seeds` consecutive seeds starting at `base_seed`.
pub fn run_cases(cases: &[GradCase], seeds: usize, base_seed: u64) -> Result<GradReport> {
    let mut ops = Vec::with_capacity(cases.len());
    for case in cases {
        let mut worst = (0.0f64, base_seed);
        for s in 0..seeds as u64 {
            let seed = base_seed.wrapping_add(s);
            let mut rng = SplitMix64::new(seed);
            for pair in (case.run)(&mut rng)? {
                let err = relative_error(&pair.analytic, &pair.numeric);
                // NaN counts as a failure.
                if !(err <= worst.0) {
                    worst = (if err.is_nan() { f64::INFINITY } else { err }, seed);
                }
            }
        }
        ops.push(OpReport {
            op: case.op.to_string(),
            seeds,
            max_rel_error: worst.0,
            worst_seed: worst.1,
            passed: worst.0 < TOLERANCE,
        });
    }
    Ok(GradReport { step: STEP, tolerance: TOLERANCE, ops })
}

pub fn run_suite(seeds: usize, base_seed: u64) -> Result<GradReport> {
    run_cases(&default_cases(), seeds, base_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_normwise() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.0, 0.5]) - 0.5).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    fn broken_bce(rng: &mut SplitMix64) -> Result<Vec<GradPair>> {
        let mut pairs = bev_bce_case(rng)?;
        pairs[0].analytic[0] += 0.05;
        Ok(pairs)
    }

    #[test]
    fn broken_kernel_is_named() {
        let cases = [GradCase { op: "relu", run: relu_case }, GradCase { op: "broken_bce", run: broken_bce }];
        let r = run_cases(&cases, 3, 0).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failing(), vec!["broken_bce"]);
    }

    #[test]
    fn suite_passes_few_seeds() {
        let r = run_suite(3, 100).unwrap();
        assert!(r.passed(), "{:?}", r.ops);
    }
}
