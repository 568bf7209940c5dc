//! Lift-splat view transformation into the half-resolution voxel volume.

use serde::{Deserialize, Serialize};

use crate::error::{OccError, Result};
use crate::geometry::{mat3_vec, Camera, Mat3, VoxelGridSpec};
use crate::tensor::{channel_softmax, Tensor};

/// Uniform depth bins over `[d_min, d_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthBinSpec {
    pub d_min: f64,
    pub d_max: f64,
    pub count: usize,
}

impl DepthBinSpec {
    pub fn new(d_min: f64, d_max: f64, count: usize) -> Result<Self> {
        let b = Self { d_min, d_max, count };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_max > self.d_min && self.d_max.is_finite()) || self.count == 0 {
            return Err(OccError::config(format!(
                "depth bins need 0 < d_min < d_max and count >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.d_max - self.d_min) / self.count as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.d_min + (i as f64 + 0.5) * self.width()
    }

    /// Bin holding depth `d`, or `None` outside `[d_min, d_max)`.
    pub fn bin_of(&self, d: f64) -> Option<usize> {
        if !(d >= self.d_min && d < self.d_max) {
            return None;
        }
        let i = ((d - self.d_min) / self.width()).floor() as usize;
        Some(i.min(self.count - 1))
    }
}

/// `[C2, H/2, W/2, Z/2]` features over the half-resolution grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedVolume {
    features: Tensor,
}

impl LiftedVolume {
    pub fn new(features: Tensor, half: &VoxelGridSpec) -> Result<Self> {
        if features.rank() != 4 || features.dims()[1..] != half.dims {
            return Err(OccError::input(format!(
                "lifted volume dims {:?} do not match half grid {:?}",
                features.dims(),
                half.dims
            )));
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn into_features(self) -> Tensor {
        self.features
    }

    pub fn channels(&self) -> usize {
        self.features.dims()[0]
    }
}

/// Camera-frame ray through pixel `(u, v)`, scaled so its z component is 1.
pub fn pixel_ray(kinv: &Mat3, u: f64, v: f64) -> [f64; 3] {
    let r = mat3_vec(kinv, [u, v, 1.0]);
    [r[0] / r[2], r[1] / r[2], 1.0]
}

/// Ego-frame point at z-depth `depth` along a ray from [`pixel_ray`].
pub fn unproject_along(cam: &Camera, ray: [f64; 3], depth: f64) -> [f64; 3] {
    cam.camera_to_ego([depth * ray[0], depth * ray[1], depth])
}

/// Ego-frame point for every `(row, col, depth bin)` of a camera, `[H', W', D, 3]`.
pub fn build_frustum(cam: &Camera, bins: &DepthBinSpec) -> Result<Tensor> {
    let kinv = cam.intrinsics_inverse()?;
    let [h, w] = cam.image_dims;
    let mut data = Vec::with_capacity(h * w * bins.count * 3);
    for v in 0..h {
        for u in 0..w {
            let ray = pixel_ray(&kinv, u as f64, v as f64);
            for b in 0..bins.count {
                data.extend_from_slice(&unproject_along(cam, ray, bins.center(b)));
            }
        }
    }
    Tensor::new(vec![h, w, bins.count, 3], data)
}

/// Depth-distribution times context outer product, `[H', W', D, C2]`.
pub fn lift(depth_logits: &Tensor, context: &Tensor) -> Result<Tensor> {
    if depth_logits.rank() != 3 || context.rank() != 3 || depth_logits.dims()[1..] != context.dims()[1..] {
        return Err(OccError::input(format!(
            "depth logits {:?} and context {:?} must be [D, H', W'] and [C2, H', W']",
            depth_logits.dims(),
            context.dims()
        )));
    }
    let probs = channel_softmax(depth_logits)?;
    let (d_n, h, w) = (depth_logits.dims()[0], depth_logits.dims()[1], depth_logits.dims()[2]);
    let c_n = context.dims()[0];
    let plane = h * w;
    let (p, ctx) = (probs.data(), context.data());
    let mut out = Vec::with_capacity(plane * d_n * c_n);
    for pix in 0..plane {
        for d in 0..d_n {
            let pd = p[d * plane + pix];
            for c in 0..c_n {
                out.push(pd * ctx[c * plane + pix]);
            }
        }
    }
    Tensor::new(vec![h, w, d_n, c_n], out)
}

/// Voxel assignment of every frustum point, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct PoolPlan {
    half: VoxelGridSpec,
    /// Per camera, linear voxel index per frustum point (row, col, bin order).
    targets: Vec<Vec<Option<usize>>>,
}

impl PoolPlan {
    pub fn new(frustums: &[Tensor], half: &VoxelGridSpec) -> Result<Self> {
        let targets = frustums
            .iter()
            .map(|f| {
                if f.rank() != 4 || f.dims()[3] != 3 {
                    return Err(OccError::input(format!("frustum must be [H', W', D, 3], got {:?}", f.dims())));
                }
                Ok(f.data()
                    .chunks_exact(3)
                    .map(|p| half.locate([p[0], p[1], p[2]]).map(|i| half.linear_index(i)))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self { half: *half, targets })
    }

    pub fn in_range_mask(&self, camera: usize) -> &[Option<usize>] {
        &self.targets[camera]
    }

    /// Sum-scatter lifted features into `[C2, H/2, W/2, Z/2]`.
    pub fn pool(&self, lifted: &[Tensor]) -> Result<LiftedVolume> {
        if lifted.len() != self.targets.len() {
            return Err(OccError::input(format!(
                "{} lifted tensors for {} cameras",
                lifted.len(),
                self.targets.len()
            )));
        }
        let c_n = lifted.first().map(|t| t.dims().last().copied().unwrap_or(0)).unwrap_or(0);
        let nvox = self.half.voxel_count();
        let mut out = vec![0.0; c_n * nvox];
        for (feat, targets) in lifted.iter().zip(&self.targets) {
            if feat.rank() != 4 || feat.dims()[3] != c_n || feat.len() / c_n.max(1) != targets.len() {
                return Err(OccError::input(format!("lifted dims {:?} disagree with frustum", feat.dims())));
            }
            for (vec, target) in feat.data().chunks_exact(c_n.max(1)).zip(targets) {
                if let Some(vox) = *target {
                    for (c, &v) in vec.iter().enumerate() {
                        out[c * nvox + vox] += v;
                    }
                }
            }
        }
        let mut dims = vec![c_n];
        dims.extend_from_slice(&self.half.dims);
        LiftedVolume::new(Tensor::new(dims, out)?, &self.half)
    }

    /// Gradient of [`PoolPlan::pool`] with respect to each camera's lifted features.
    pub fn backward(&self, grad_volume: &Tensor, lifted_dims: &[Vec<usize>]) -> Result<Vec<Tensor>> {
        let c_n = grad_volume.dims()[0];
        let nvox = self.half.voxel_count();
        if grad_volume.len() != c_n * nvox {
            return Err(OccError::input("grad volume does not match the half grid"));
        }
        let g = grad_volume.data();
        self.targets
            .iter()
            .zip(lifted_dims)
            .map(|(targets, dims)| {
                let mut out = vec![0.0; targets.len() * c_n];
                for (i, target) in targets.iter().enumerate() {
                    if let Some(vox) = *target {
                        for c in 0..c_n {
                            out[i * c_n + c] = g[c * nvox + vox];
                        }
                    }
                }
                Tensor::new(dims.clone(), out)
            })
            .collect()
    }
}

/// Sum-pool every camera's lifted features into the half grid.
pub fn voxel_pool(frustums: &[Tensor], lifted: &[Tensor], half: &VoxelGridSpec) -> Result<LiftedVolume> {
    PoolPlan::new(frustums, half)?.pool(lifted)
}

#[derive(Debug, Clone)]
pub struct DepthTargets {
    /// `[D, H', W']` one-hot; all-zero at invalid pixels.
    pub one_hot: Tensor,
    pub valid: Vec<bool>,
}

/// Bin index `floor((d - d_min) / width)` for depths in `[d_min, d_max)`.
pub fn depth_targets(depth_map: &Tensor, bins: &DepthBinSpec) -> Result<DepthTargets> {
    if depth_map.rank() != 2 {
        return Err(OccError::input(format!("depth map must be [H', W'], got {:?}", depth_map.dims())));
    }
    let plane = depth_map.len();
    let mut one_hot = vec![0.0; bins.count * plane];
    let mut valid = vec![false; plane];
    for (pix, &d) in depth_map.data().iter().enumerate() {
        if let Some(b) = bins.bin_of(d) {
            one_hot[b * plane + pix] = 1.0;
            valid[pix] = true;
        }
    }
    let mut dims = vec![bins.count];
    dims.extend_from_slice(depth_map.dims());
    Ok(DepthTargets { one_hot: Tensor::new(dims, one_hot)?, valid })
}
