use crate::error::{OccError, Result};
use crate::geometry::{compose_e2i, project_with, CameraRig, VoxelGridSpec};
use crate::tensor::Tensor;

/// Sampled image features `P` on the fine grid plus per-voxel observer counts.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedVolume {
    features: Tensor,
    counts: Vec<u32>,
}

impl InterpolatedVolume {
    /// `[C1, H, W, Z]`; exactly zero where no camera observes the voxel.
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Number of cameras observing each voxel, `[H, W, Z]` row-major.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn observed(&self) -> Vec<bool> {
        self.counts.iter().map(|&c| c > 0).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    camera: usize,
    /// Pixel offsets (row-major in the camera's `H' x W'` plane) of the 4 neighbours.
    pixels: [usize; 4],
    weights: [f64; 4],
}

/// Projection of every fine voxel center into every camera, shared by the
/// forward and backward passes.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    grid: VoxelGridSpec,
    image_dims: [usize; 2],
    cameras: usize,
    /// CSR layout: taps of voxel `i` are `taps[starts[i]..starts[i + 1]]`.
    starts: Vec<usize>,
    taps: Vec<Tap>,
}

fn bilinear_taps(u: f64, v: f64, [h, w]: [usize; 2]) -> ([usize; 4], [f64; 4]) {
    let axis = |x: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let i0 = (x.floor() as usize).min(n - 2);
        (i0, i0 + 1, x - i0 as f64)
    };
    let (x0, x1, fx) = axis(u, w);
    let (y0, y1, fy) = axis(v, h);
    (
        [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx],
    )
}

impl SamplePlan {
    pub fn new(rig: &CameraRig, grid: &VoxelGridSpec) -> Result<Self> {
        rig.validate()?;
        let image_dims = rig.cameras[0].image_dims;
        if rig.cameras.iter().any(|c| c.image_dims != image_dims) {
            return Err(OccError::input("all cameras must share the feature image size"));
        }
        let e2i: Vec<_> = rig.cameras.iter().map(compose_e2i).collect();
        let [h, w, z] = grid.dims;
        let mut starts = Vec::with_capacity(h * w * z + 1);
        let mut taps = Vec::new();
        for i in 0..h {
            for j in 0..w {
                for k in 0..z {
                    starts.push(taps.len());
                    let p = grid.center(i, j, k);
                    for (camera, (cam, m)) in rig.cameras.iter().zip(&e2i).enumerate() {
                        let pr = project_with(m, cam, p);
                        if pr.valid {
                            let (pixels, weights) = bilinear_taps(pr.u, pr.v, image_dims);
                            taps.push(Tap { camera, pixels, weights });
                        }
                    }
                }
            }
        }
        starts.push(taps.len());
        Ok(Self { grid: *grid, image_dims, cameras: rig.len(), starts, taps })
    }

    pub fn counts(&self) -> Vec<u32> {
        self.starts.windows(2).map(|s| (s[1] - s[0]) as u32).collect()
    }

    fn check_features(&self, features: &[Tensor]) -> Result<usize> {
        if features.len() != self.cameras {
            return Err(OccError::input(format!("{} feature maps for {} cameras", features.len(), self.cameras)));
        }
        let c = features[0].dims().first().copied().unwrap_or(0);
        for f in features {
            if f.dims() != [c, self.image_dims[0], self.image_dims[1]] {
                return Err(OccError::input(format!(
                    "feature map {:?} does not match [{c}, {}, {}]",
                    f.dims(),
                    self.image_dims[0],
                    self.image_dims[1]
                )));
            }
        }
        Ok(c)
    }

    /// Mean over observing cameras of the bilinear sample at each voxel center.
    pub fn sample(&self, features: &[Tensor]) -> Result<InterpolatedVolume> {
        let c_n = self.check_features(features)?;
        let nvox = self.grid.voxel_count();
        let plane = self.image_dims[0] * self.image_dims[1];
        let mut out = vec![0.0; c_n * nvox];
        for vox in 0..nvox {
            let taps = &self.taps[self.starts[vox]..self.starts[vox + 1]];
            if taps.is_empty() {
                continue;
            }
            let inv = 1.0 / taps.len() as f64;
            for c in 0..c_n {
                let mut acc = 0.0;
                for tap in taps {
                    let f = &features[tap.camera].data()[c * plane..(c + 1) * plane];
                    acc += (0..4).map(|n| tap.weights[n] * f[tap.pixels[n]]).sum::<f64>();
                }
                out[c * nvox + vox] = acc * inv;
            }
        }
        let mut dims = vec![c_n];
        dims.extend_from_slice(&self.grid.dims);
        Ok(InterpolatedVolume { features: Tensor::new(dims, out)?, counts: self.counts() })
    }

    /// Gradient of [`SamplePlan::sample`] with respect to every camera's feature map.
    pub fn backward(&self, grad: &Tensor) -> Result<Vec<Tensor>> {
        let nvox = self.grid.voxel_count();
        if grad.rank() != 4 || grad.dims()[1..] != self.grid.dims {
            return Err(OccError::input(format!("grad dims {:?} do not match the fine grid", grad.dims())));
        }
        let c_n = grad.dims()[0];
        let plane = self.image_dims[0] * self.image_dims[1];
        let mut out = vec![vec![0.0; c_n * plane]; self.cameras];
        let g = grad.data();
        for vox in 0..nvox {
            let taps = &self.taps[self.starts[vox]..self.starts[vox + 1]];
            if taps.is_empty() {
                continue;
            }
            let inv = 1.0 / taps.len() as f64;
            for tap in taps {
                let dst = &mut out[tap.camera];
                for c in 0..c_n {
                    let gv = g[c * nvox + vox] * inv;
                    for n in 0..4 {
                        dst[c * plane + tap.pixels[n]] += gv * tap.weights[n];
                    }
                }
            }
        }
        out.into_iter()
            .map(|d| Tensor::new(vec![c_n, self.image_dims[0], self.image_dims[1]], d))
            .collect()
    }
}

/// Project fine voxel centers into each camera, bilinearly sample its
/// `[C1, H', W']` features and average over the cameras that see the voxel.
pub fn interp_sample(features: &[Tensor], rig: &CameraRig, grid: &VoxelGridSpec) -> Result<InterpolatedVolume> {
    SamplePlan::new(rig, grid)?.sample(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_point, Camera};
    use crate::rng::SplitMix64;

    fn forward_cam(dims: [usize; 2]) -> Camera {
        let mut e = [[0.0; 4]; 4];
        for i in 0..4 {
            e[i][i] = 1.0;
        }
        Camera::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], e, dims).unwrap()
    }

    #[test]
    fn constant_features() {
        let rig = CameraRig::ring(4, 0.3, 1.0, 0.3, 10.0, [8, 12]).unwrap();
        let grid = VoxelGridSpec::new([-6.0, -6.0, -1.0, 6.0, 6.0, 1.0], [12, 12, 4]).unwrap();
        let feats: Vec<_> = (0..4).map(|_| Tensor::filled(&[2, 8, 12], 3.25)).collect();
        let p = interp_sample(&feats, &rig, &grid).unwrap();
        for (vox, &count) in p.counts().iter().enumerate() {
            for c in 0..2 {
                let v = p.features().data()[c * 576 + vox];
                if count > 0 {
                    assert!((v - 3.25).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(p.counts().iter().any(|&c| c > 0));
    }

    #[test]
    fn exact_pixel_and_midpoint() {
        // single voxel centered at (1, 1, 2) in a K = I camera projects to pixel (0.5, 0.5)
        let cam = forward_cam([2, 2]);
        let rig = CameraRig::new(vec![cam]).unwrap();
        let f = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let grid = VoxelGridSpec::new([0.5, 0.5, 1.5, 1.5, 1.5, 2.5], [1, 1, 1]).unwrap();
        let p = interp_sample(std::slice::from_ref(&f), &rig, &grid).unwrap();
        assert!((p.features().data()[0] - 1.5).abs() < 1e-15);

        // voxel center (1, 0, 1) lands exactly on column 1, row 0
        let grid = VoxelGridSpec::new([0.5, -0.5, 0.5, 1.5, 0.5, 1.5], [1, 1, 1]).unwrap();
        let p = interp_sample(&[f], &rig, &grid).unwrap();
        assert_eq!(p.features().data()[0], 1.0);
    }

    fn naive_interp(features: &[Tensor], rig: &CameraRig, grid: &VoxelGridSpec) -> (Tensor, Vec<u32>) {
        let [h, w, z] = grid.dims;
        let c_n = features[0].dims()[0];
        let mut out = Tensor::zeros(&[c_n, h, w, z]);
        let mut counts = vec![0u32; h * w * z];
        for i in 0..h {
            for j in 0..w {
                for k in 0..z {
                    let p = grid.center(i, j, k);
                    let mut sums = vec![0.0; c_n];
                    let mut n = 0;
                    for (cam, f) in rig.cameras.iter().zip(features) {
                        let pc = cam.ego_to_camera(p);
                        if pc[2] <= 1e-6 {
                            continue;
                        }
                        let kk = &cam.intrinsics;
                        let u = (kk[0][0] * pc[0] + kk[0][1] * pc[1] + kk[0][2] * pc[2]) / pc[2];
                        let v = (kk[1][1] * pc[1] + kk[1][2] * pc[2]) / pc[2];
                        let (hh, ww) = (cam.image_dims[0] as f64, cam.image_dims[1] as f64);
                        if u < 0.0 || v < 0.0 || u > ww - 1.0 || v > hh - 1.0 {
                            continue;
                        }
                        n += 1;
                        let (x0, y0) = (u.floor(), v.floor());
                        for c in 0..c_n {
                            let mut acc = 0.0;
                            for (dy, dx) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                                let (yy, xx) = (y0 + dy, x0 + dx);
                                let wt = (1.0 - (v - yy).abs()).max(0.0) * (1.0 - (u - xx).abs()).max(0.0);
                                if wt > 0.0 {
                                    acc += wt * f.at(&[c, yy as usize, xx as usize]);
                                }
                            }
                            sums[c] += acc;
                        }
                    }
                    counts[(i * w + j) * z + k] = n;
                    if n > 0 {
                        for c in 0..c_n {
                            out.set(&[c, i, j, k], sums[c] / n as f64);
                        }
                    }
                }
            }
        }
        (out, counts)
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = SplitMix64::new(77);
        for seed in 0..5 {
            let rig = CameraRig::ring(3, 0.4, 0.8 + 0.1 * seed as f64, 0.25, 9.0, [9, 14]).unwrap();
            let grid = VoxelGridSpec::new([-5.0, -5.0, -1.0, 5.0, 5.0, 1.0], [10, 10, 4]).unwrap();
            let feats: Vec<_> = (0..3).map(|_| Tensor::from_fn(&[3, 9, 14], |_| rng.uniform(-2.0, 2.0))).collect();
            let p = interp_sample(&feats, &rig, &grid).unwrap();
            let (want, counts) = naive_interp(&feats, &rig, &grid);
            assert_eq!(p.counts(), counts.as_slice());
            assert!(p.features().max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn mask_is_disjunction_of_projection_validity() {
        let rig = CameraRig::ring(5, 0.2, 0.5, 0.1, 7.0, [6, 10]).unwrap();
        let grid = VoxelGridSpec::new([-4.0, -4.0, -1.0, 4.0, 4.0, 1.0], [8, 8, 4]).unwrap();
        let plan = SamplePlan::new(&rig, &grid).unwrap();
        let counts = plan.counts();
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..4 {
                    let any = rig.cameras.iter().any(|c| project_point(c, grid.center(i, j, k)).valid);
                    assert_eq!(counts[(i * 8 + j) * 4 + k] > 0, any);
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_features() {
        let rig = CameraRig::new(vec![forward_cam([2, 2])]).unwrap();
        let grid = VoxelGridSpec::new([0.0, 0.0, 1.0, 1.0, 1.0, 2.0], [1, 1, 1]).unwrap();
        assert!(interp_sample(&[Tensor::zeros(&[1, 3, 2])], &rig, &grid).is_err());
        assert!(interp_sample(&[], &rig, &grid).is_err());
    }
}
