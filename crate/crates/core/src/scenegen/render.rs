use rayon::prelude::*;

use crate::error::{OccError, Result};
use crate::geometry::{Camera, CameraRig, VoxelGridSpec};
use crate::head::{CameraInputs, HeadConfig};
use crate::rng::SplitMix64;
use crate::supervision::OccupancyVolume;
use crate::tensor::{parallel_enabled, Tensor};
use crate::view_transform::{pixel_ray, unproject_along, DepthBinSpec};

/// One camera's render: class one-hot features, z-depth and first-hit voxel per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    /// `[M, H', W']`; background pixels carry the empty class.
    pub features: Tensor,
    /// `[H', W']` z-depth of the first hit, 0.0 where the ray hits nothing.
    pub depth: Tensor,
    /// Linear index of the first occupied voxel per pixel, row-major.
    pub hits: Vec<Option<usize>>,
}

struct PixelHit {
    class: usize,
    depth: f64,
    voxel: Option<usize>,
}

fn far_distance(cam: &Camera, grid: &VoxelGridSpec) -> f64 {
    let c = cam.center();
    let (s, e) = (grid.start(), grid.end());
    let mut best: f64 = 0.0;
    for corner in 0..8 {
        let p = [
            if corner & 1 == 0 { s[0] } else { e[0] },
            if corner & 2 == 0 { s[1] } else { e[1] },
            if corner & 4 == 0 { s[2] } else { e[2] },
        ];
        best = best.max(((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt());
    }
    best
}

fn render_one(scene: &OccupancyVolume, grid: &VoxelGridSpec, cam: &Camera) -> Result<RenderedView> {
    let kinv = cam.intrinsics_inverse()?;
    let [h, w] = cam.image_dims;
    let m = scene.classes();
    let vs = grid.voxel_size();
    let step = 0.5 * vs[0].min(vs[1]).min(vs[2]);
    let far = far_distance(cam, grid);
    let labels = scene.labels();
    let march = |pix: usize| -> PixelHit {
        let (v, u) = (pix / w, pix % w);
        let ray = pixel_ray(&kinv, u as f64, v as f64);
        let norm = (ray[0] * ray[0] + ray[1] * ray[1] + 1.0).sqrt();
        let dz = step / norm;
        let mut n = 1usize;
        while n as f64 * step <= far {
            let depth = n as f64 * dz;
            if let Some(idx) = grid.locate(unproject_along(cam, ray, depth)) {
                let lin = grid.linear_index(idx);
                if labels[lin] != 0 {
                    return PixelHit { class: labels[lin], depth, voxel: Some(lin) };
                }
            }
            n += 1;
        }
        PixelHit { class: 0, depth: 0.0, voxel: None }
    };
    let hits: Vec<PixelHit> = if parallel_enabled() {
        (0..h * w).into_par_iter().map(march).collect()
    } else {
        (0..h * w).map(march).collect()
    };
    let plane = h * w;
    let mut features = vec![0.0; m * plane];
    for (pix, hit) in hits.iter().enumerate() {
        features[hit.class * plane + pix] = 1.0;
    }
    Ok(RenderedView {
        features: Tensor::new(vec![m, h, w], features)?,
        depth: Tensor::new(vec![h, w], hits.iter().map(|x| x.depth).collect())?,
        hits: hits.iter().map(|x| x.voxel).collect(),
    })
}

/// Ray-marches every pixel of every camera through the labelled grid with a
/// fixed step of half the smallest voxel edge.
pub fn render_views(scene: &OccupancyVolume, grid: &VoxelGridSpec, rig: &CameraRig) -> Result<Vec<RenderedView>> {
    if scene.dims() != grid.dims {
        return Err(OccError::input(format!("scene dims {:?} do not match grid {:?}", scene.dims(), grid.dims)));
    }
    rig.validate()?;
    rig.cameras.iter().map(|cam| render_one(scene, grid, cam)).collect()
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every feature value.
pub fn add_feature_noise(views: &mut [RenderedView], sigma: f64, seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for view in views {
        for x in view.features.data_mut() {
            *x += sigma * rng.normal();
        }
    }
}

/// Network inputs derived from renders: features zero-padded from `M` to `C1`
/// channels, context = first `C2` padded channels, and depth logits
/// `-(b - b*)^2` around the rendered depth bin `b*` (all zero where depth is invalid).
pub fn camera_inputs(views: &[RenderedView], cfg: &HeadConfig, bins: &DepthBinSpec) -> Result<CameraInputs> {
    let mut out = CameraInputs { features: Vec::new(), depth_logits: Vec::new(), context: Vec::new() };
    for (i, view) in views.iter().enumerate() {
        let fd = view.features.dims();
        let (m, h, w) = (fd[0], fd[1], fd[2]);
        if cfg.image_channels < m {
            return Err(OccError::config(format!(
                "camera {i}: {m} rendered classes do not fit in {} image channels",
                cfg.image_channels
            )));
        }
        if cfg.lifted_channels > cfg.image_channels {
            return Err(OccError::config("context channels cannot exceed image channels"));
        }
        let plane = h * w;
        let mut feat = view.features.data().to_vec();
        feat.resize(cfg.image_channels * plane, 0.0);
        let features = Tensor::new(vec![cfg.image_channels, h, w], feat)?;
        out.context.push(features.channels(0, cfg.lifted_channels)?);
        out.features.push(features);
        let mut logits = vec![0.0; bins.count * plane];
        for (pix, &d) in view.depth.data().iter().enumerate() {
            if let Some(target) = bins.bin_of(d) {
                for b in 0..bins.count {
                    logits[b * plane + pix] = -((b as f64 - target as f64).powi(2));
                }
            }
        }
        out.depth_logits.push(Tensor::new(vec![bins.count, h, w], logits)?);
    }
    Ok(out)
}
