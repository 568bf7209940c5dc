use super::bev::{bev_collapse, bev_decode, bev_seg_head, BevFeature};
use super::integrate::{integrate, FusedVolume};
use super::interp::interp_sample;
use super::weights::HeadWeights;
use super::HeadConfig;
use crate::error::{OccError, Result};
use crate::geometry::{CameraRig, VoxelGridSpec};
use crate::tensor::Tensor;
use crate::view_transform::{build_frustum, lift, voxel_pool, DepthBinSpec, LiftedVolume};

/// Per-camera inputs, all in rig order.
#[derive(Debug, Clone)]
pub struct CameraInputs {
    /// `[C1, H', W']` image features.
    pub features: Vec<Tensor>,
    /// `[D, H', W']` depth logits.
    pub depth_logits: Vec<Tensor>,
    /// `[C2, H', W']` context features.
    pub context: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// `[M, H, W, Z]`.
    pub logits: Tensor,
    /// `[M, H/2, W/2]`.
    pub bev_logits: Tensor,
    pub lifted: LiftedVolume,
    pub bev: BevFeature,
    pub fused: FusedVolume,
}

/// lift -> voxel_pool -> bev_collapse -> bev_decode -> {bev_seg_head, integrate(interp_sample)}.
pub fn forward_pipeline(
    inputs: &CameraInputs,
    rig: &CameraRig,
    grid: &VoxelGridSpec,
    bins: &DepthBinSpec,
    cfg: &HeadConfig,
    weights: &HeadWeights,
) -> Result<PipelineOutput> {
    cfg.validate(grid)?;
    let n = rig.len();
    if inputs.features.len() != n || inputs.depth_logits.len() != n || inputs.context.len() != n {
        return Err(OccError::input(format!(
            "expected {n} feature, depth and context maps, got {}, {}, {}",
            inputs.features.len(),
            inputs.depth_logits.len(),
            inputs.context.len()
        )));
    }
    for (i, cam) in rig.cameras.iter().enumerate() {
        let [h, w] = cam.image_dims;
        let checks = [
            ("features", &inputs.features[i], cfg.image_channels),
            ("depth logits", &inputs.depth_logits[i], bins.count),
            ("context", &inputs.context[i], cfg.lifted_channels),
        ];
        for (what, t, c) in checks {
            if t.dims() != [c, h, w] {
                return Err(OccError::input(format!(
                    "camera {i} {what} {:?}, expected [{c}, {h}, {w}]",
                    t.dims()
                )));
            }
        }
    }
    let half = grid.halved()?;
    let frustums = rig
        .cameras
        .iter()
        .map(|c| build_frustum(c, bins))
        .collect::<Result<Vec<_>>>()?;
    let lifted = inputs
        .depth_logits
        .iter()
        .zip(&inputs.context)
        .map(|(d, c)| lift(d, c))
        .collect::<Result<Vec<_>>>()?;
    let vb = voxel_pool(&frustums, &lifted, &half)?;
    let bprime = bev_collapse(&vb);
    let bev = bev_decode(&bprime, &weights.decoder)?;
    let bev_logits = bev_seg_head(&bev, &weights.bev_seg)?;
    let p = interp_sample(&inputs.features, rig, grid)?;
    let fused = integrate(&bev, &p, &weights.fuse)?;
    Ok(PipelineOutput { logits: fused.logits.clone(), bev_logits, lifted: vb, bev, fused })
}
