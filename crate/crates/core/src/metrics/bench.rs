use std::time::Instant;

use serde::Serialize;

use super::flops::{head2d_layers, head3d_layers, Stage};
use crate::error::{OccError, Result};
use crate::geometry::{CameraRig, VoxelGridSpec};
use crate::head::{bev_collapse, bev_decode, head_3dfcn, integrate, interp_sample, HeadConfig, HeadWeights};
use crate::rng::SplitMix64;
use crate::tensor::{parallel_enabled, set_parallel, Tensor};
use crate::view_transform::LiftedVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BenchOptions {
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { repeats: 9, warmup: 2, seed: 0, parallel: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub flops: u64,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub stages: Vec<StageTiming>,
    pub repeats: usize,
    pub warmup: usize,
    pub parallel: bool,
    pub grid: VoxelGridSpec,
    pub cameras: usize,
    pub config: HeadConfig,
}

impl BenchReport {
    pub fn stage(&self, name: &str) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Nearest-rank percentile of an ascending-sorted slice, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn summarize(stage: &str, flops: u64, mut samples: Vec<f64>) -> StageTiming {
    samples.sort_by(f64::total_cmp);
    StageTiming {
        stage: stage.to_string(),
        flops,
        median_ms: median(&samples),
        p10_ms: percentile(&samples, 0.1),
        p90_ms: percentile(&samples, 0.9),
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    // Clamp so a coarse clock never reports a zero duration.
    (t.elapsed().as_secs_f64() * 1e3).max(1e-6)
}

struct Restore(bool);

impl Drop for Restore {
    fn drop(&mut self) {
        set_parallel(self.0);
    }
}

/// Times the collapsed-2D head against the 3D FCN head on the same seeded `V_B`.
///
/// Stages: `head2d_2d` (collapse + decode), `head2d_2d_to_3d` (interp_sample),
/// `head2d_3d` (integrate), `head2d_total` (their per-repeat sum) and `head3d_total`.
pub fn bench_heads(cfg: &HeadConfig, grid: &VoxelGridSpec, rig: &CameraRig, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.repeats < 5 {
        return Err(OccError::config(format!("repeats must be at least 5, got {}", opts.repeats)));
    }
    cfg.validate(grid)?;
    rig.validate()?;
    let half = grid.halved()?;
    let mut rng = SplitMix64::new(opts.seed);
    let weights = HeadWeights::seeded(cfg, grid, rng.next_u64())?;
    let mut dims = vec![cfg.lifted_channels];
    dims.extend_from_slice(&half.dims);
    let vb = LiftedVolume::new(Tensor::from_fn(&dims, |_| rng.uniform(0.0, 1.0)), &half)?;
    let features: Vec<Tensor> = rig
        .cameras
        .iter()
        .map(|c| Tensor::from_fn(&[cfg.image_channels, c.image_dims[0], c.image_dims[1]], |_| rng.uniform(0.0, 1.0)))
        .collect();

    let _restore = Restore(parallel_enabled());
    set_parallel(opts.parallel);

    let mut t2d = Vec::with_capacity(opts.repeats);
    let mut t2d3d = Vec::with_capacity(opts.repeats);
    let mut t3d = Vec::with_capacity(opts.repeats);
    let mut t2d_total = Vec::with_capacity(opts.repeats);
    let mut t3d_total = Vec::with_capacity(opts.repeats);
    for rep in 0..opts.warmup + opts.repeats {
        let t = Instant::now();
        let bev = bev_decode(&bev_collapse(&vb), &weights.decoder)?;
        let a = elapsed_ms(t);
        let t = Instant::now();
        let p = interp_sample(&features, rig, grid)?;
        let b = elapsed_ms(t);
        let t = Instant::now();
        let fused = integrate(&bev, &p, &weights.fuse)?;
        let c = elapsed_ms(t);
        std::hint::black_box(&fused);
        let t = Instant::now();
        let y3 = head_3dfcn(&vb, &weights.fcn3d)?;
        let d = elapsed_ms(t);
        std::hint::black_box(&y3);
        if rep >= opts.warmup {
            t2d.push(a);
            t2d3d.push(b);
            t3d.push(c);
            t2d_total.push(a + b + c);
            t3d_total.push(d);
        }
    }

    let l2 = head2d_layers(cfg, grid, rig.len())?;
    let sum = |s: Stage| l2.iter().filter(|l| l.stage == s).map(|l| l.spec.flops()).sum::<u64>();
    let (f2d, f2d3d, f3d) = (sum(Stage::TwoD), sum(Stage::TwoDToThreeD), sum(Stage::ThreeD));
    let f3d_head: u64 = head3d_layers(cfg, grid)?.iter().map(|l| l.spec.flops()).sum();
    Ok(BenchReport {
        stages: vec![
            summarize("head2d_2d", f2d, t2d),
            summarize("head2d_2d_to_3d", f2d3d, t2d3d),
            summarize("head2d_3d", f3d, t3d),
            summarize("head2d_total", f2d + f2d3d + f3d, t2d_total),
            summarize("head3d_total", f3d_head, t3d_total),
        ],
        repeats: opts.repeats,
        warmup: opts.warmup,
        parallel: opts.parallel,
        grid: *grid,
        cameras: rig.len(),
        config: cfg.clone(),
    })
}
