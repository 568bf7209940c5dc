//! Voxel grids and the ego -> camera -> image projection chain.
//!
//! Frames: the ego frame is indexed as (x along the grid's H axis, y along W,
//! z up along Z). Camera frames are x right, y down, z forward. Pixel
//! coordinates put integer values at pixel centers; `u` is the column and `v`
//! the row.

use serde::{Deserialize, Serialize};

use crate::error::{OccError, Result};
use crate::tensor::Tensor;

pub type Mat3 = [[f64; 3]; 3];
pub type Mat4 = [[f64; 4]; 4];
pub type Mat34 = [[f64; 4]; 3];

/// Minimum camera-frame depth treated as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Perception range `[H_s, W_s, Z_s, H_e, W_e, Z_e]` (meters) and voxel counts `[H, W, Z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGridSpec {
    pub range: [f64; 6],
    pub dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(range: [f64; 6], dims: [usize; 3]) -> Result<Self> {
        let spec = Self { range, dims };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if !(self.range[axis + 3] > self.range[axis]) {
                return Err(OccError::config(format!(
                    "range end must exceed start on axis {axis}: {:?}",
                    self.range
                )));
            }
            if self.dims[axis] == 0 {
                return Err(OccError::config(format!("grid dims must be positive: {:?}", self.dims)));
            }
        }
        if self.range.iter().any(|v| !v.is_finite()) {
            return Err(OccError::config("range must be finite"));
        }
        Ok(())
    }

    /// Voxel shape `[(W_e - W_s)/W, (H_e - H_s)/H, (Z_e - Z_s)/Z]`.
    pub fn voxel_size(&self) -> [f64; 3] {
        let e = self.axis_extents();
        [e[1], e[0], e[2]]
    }

    /// Voxel extent along the ego axes in grid order (H, W, Z).
    pub fn axis_extents(&self) -> [f64; 3] {
        let r = &self.range;
        [
            (r[3] - r[0]) / self.dims[0] as f64,
            (r[4] - r[1]) / self.dims[1] as f64,
            (r[5] - r[2]) / self.dims[2] as f64,
        ]
    }

    pub fn start(&self) -> [f64; 3] {
        [self.range[0], self.range[1], self.range[2]]
    }

    pub fn end(&self) -> [f64; 3] {
        [self.range[3], self.range[4], self.range[5]]
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Same range with every axis count halved; all counts must be even.
    pub fn halved(&self) -> Result<Self> {
        if self.dims.iter().any(|d| d % 2 != 0) {
            return Err(OccError::config(format!("grid dims must be even to halve: {:?}", self.dims)));
        }
        Ok(Self { range: self.range, dims: [self.dims[0] / 2, self.dims[1] / 2, self.dims[2] / 2] })
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let s = self.axis_extents();
        let o = self.start();
        [
            o[0] + (i as f64 + 0.5) * s[0],
            o[1] + (j as f64 + 0.5) * s[1],
            o[2] + (k as f64 + 0.5) * s[2],
        ]
    }

    /// Voxel holding `p`; each axis is half-open, so upper faces belong to the next voxel.
    pub fn locate(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let s = self.axis_extents();
        let o = self.start();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - o[a]) / s[a]).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }
}

/// Voxel centers in the ego frame as `[H, W, Z, 3]`.
pub fn voxel_centers(spec: &VoxelGridSpec) -> Tensor {
    let [h, w, z] = spec.dims;
    let mut data = Vec::with_capacity(h * w * z * 3);
    for i in 0..h {
        for j in 0..w {
            for k in 0..z {
                data.extend_from_slice(&spec.center(i, j, k));
            }
        }
    }
    Tensor::new(vec![h, w, z, 3], data).expect("center buffer sized from dims")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    /// Row-major 3x3 intrinsic matrix (camera -> image).
    pub intrinsics: Mat3,
    /// Row-major 4x4 rigid transform ego -> camera.
    pub extrinsic: Mat4,
    /// Feature image `[H', W']`.
    pub image_dims: [usize; 2],
}

impl Camera {
    pub fn new(intrinsics: Mat3, extrinsic: Mat4, image_dims: [usize; 2]) -> Result<Self> {
        let cam = Self { intrinsics, extrinsic, image_dims };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 {
            return Err(OccError::config("intrinsics must be upper-triangular"));
        }
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(OccError::config("focal lengths must be positive"));
        }
        if k[2][2] == 0.0 {
            return Err(OccError::config("intrinsics are singular"));
        }
        let r = self.rotation();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|i| r[a][i] * r[b][i]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(OccError::config("extrinsic rotation is not orthonormal"));
                }
            }
        }
        if self.extrinsic[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(OccError::config("extrinsic bottom row must be [0, 0, 0, 1]"));
        }
        if self.image_dims.contains(&0) {
            return Err(OccError::config("image dims must be positive"));
        }
        if self.extrinsic.iter().flatten().chain(k.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(OccError::config("camera matrices must be finite"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3 {
        let e = &self.extrinsic;
        [
            [e[0][0], e[0][1], e[0][2]],
            [e[1][0], e[1][1], e[1][2]],
            [e[2][0], e[2][1], e[2][2]],
        ]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.extrinsic[0][3], self.extrinsic[1][3], self.extrinsic[2][3]]
    }

    /// Camera center in the ego frame, `-R^T t`.
    pub fn center(&self) -> [f64; 3] {
        let r = self.rotation();
        let t = self.translation();
        let mut c = [0.0; 3];
        for i in 0..3 {
            c[i] = -(0..3).map(|j| r[j][i] * t[j]).sum::<f64>();
        }
        c
    }

    pub fn ego_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let e = &self.extrinsic;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = e[i][0] * p[0] + e[i][1] * p[1] + e[i][2] * p[2] + e[i][3];
        }
        out
    }

    pub fn camera_to_ego(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let t = self.translation();
        let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2];
        }
        out
    }

    pub fn intrinsics_inverse(&self) -> Result<Mat3> {
        invert3(&self.intrinsics).ok_or_else(|| OccError::config("intrinsic matrix is singular"))
    }

    /// Whether continuous pixel `(u, v)` lies on the closed pixel-center grid.
    pub fn in_image(&self, u: f64, v: f64) -> bool {
        let [h, w] = self.image_dims;
        (0.0..=(w - 1) as f64).contains(&u) && (0.0..=(h - 1) as f64).contains(&v)
    }

    /// Camera looking out from `position` along `yaw` (about ego z, 0 = +x),
    /// tilted down by `pitch` radians.
    pub fn looking(position: [f64; 3], yaw: f64, pitch: f64, intrinsics: Mat3, image_dims: [usize; 2]) -> Result<Self> {
        let forward = [yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), -pitch.sin()];
        let right = [yaw.sin(), -yaw.cos(), 0.0];
        let down = cross(forward, right);
        let rot = [right, down, forward];
        let mut ext = [[0.0; 4]; 4];
        for i in 0..3 {
            ext[i][..3].copy_from_slice(&rot[i]);
            ext[i][3] = -(0..3).map(|j| rot[i][j] * position[j]).sum::<f64>();
        }
        ext[3][3] = 1.0;
        Camera::new(intrinsics, ext, image_dims)
    }
}

/// Pinhole intrinsics with the principal point at the image center.
pub fn centered_intrinsics(focal: f64, image_dims: [usize; 2]) -> Mat3 {
    let cx = (image_dims[1] as f64 - 1.0) / 2.0;
    let cy = (image_dims[0] as f64 - 1.0) / 2.0;
    [[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn invert3(m: &Mat3) -> Option<Mat3> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if !det.is_finite() || det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    Some([
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
        ],
    ])
}

pub(crate) fn mat3_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// `T_e2i = K * [R | t]`.
pub fn compose_e2i(cam: &Camera) -> Mat34 {
    let k = &cam.intrinsics;
    let e = &cam.extrinsic;
    let mut out = [[0.0; 4]; 3];
    for i in 0..3 {
        for j in 0..4 {
            out[i][j] = (0..3).map(|m| k[i][m] * e[m][j]).sum();
        }
    }
    out
}

/// One projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub valid: bool,
}

pub fn project_with(e2i: &Mat34, cam: &Camera, p: [f64; 3]) -> Projection {
    let h = [p[0], p[1], p[2], 1.0];
    let row = |r: &[f64; 4]| r[0] * h[0] + r[1] * h[1] + r[2] * h[2] + r[3] * h[3];
    let (ud, vd, d) = (row(&e2i[0]), row(&e2i[1]), row(&e2i[2]));
    if d > MIN_DEPTH {
        let (u, v) = (ud / d, vd / d);
        Projection { u, v, depth: d, valid: cam.in_image(u, v) }
    } else {
        Projection { u: f64::NAN, v: f64::NAN, depth: d, valid: false }
    }
}

pub fn project_point(cam: &Camera, p: [f64; 3]) -> Projection {
    project_with(&compose_e2i(cam), cam, p)
}

/// Batched projection of `[..., 3]`.
#[derive(Debug, Clone)]
pub struct ProjectedPoints {
    /// `[..., 2]` as `(u, v)`; zeroed where the depth test fails.
    pub uv: Tensor,
    pub depth: Tensor,
    pub valid: Vec<bool>,
}

pub fn project_points(points: &Tensor, cam: &Camera) -> Result<ProjectedPoints> {
    if points.dims().last() != Some(&3) {
        return Err(OccError::input(format!("points must end in 3, got {:?}", points.dims())));
    }
    let lead = &points.dims()[..points.rank() - 1];
    let e2i = compose_e2i(cam);
    let n = points.len() / 3;
    let mut uv = Vec::with_capacity(2 * n);
    let mut depth = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for p in points.data().chunks_exact(3) {
        let pr = project_with(&e2i, cam, [p[0], p[1], p[2]]);
        if pr.depth > MIN_DEPTH {
            uv.extend_from_slice(&[pr.u, pr.v]);
        } else {
            uv.extend_from_slice(&[0.0, 0.0]);
        }
        depth.push(pr.depth);
        valid.push(pr.valid);
    }
    let mut uv_dims = lead.to_vec();
    uv_dims.push(2);
    Ok(ProjectedPoints { uv: Tensor::new(uv_dims, uv)?, depth: Tensor::new(lead.to_vec(), depth)?, valid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        let rig = Self { cameras };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(OccError::config("camera rig needs at least one camera"));
        }
        self.cameras.iter().try_for_each(Camera::validate)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// `n` outward-facing cameras evenly spaced on a horizontal ring around the ego origin.
    pub fn ring(n: usize, radius: f64, height: f64, pitch: f64, focal: f64, image_dims: [usize; 2]) -> Result<Self> {
        let k = centered_intrinsics(focal, image_dims);
        let cams = (0..n)
            .map(|i| {
                let yaw = std::f64::consts::TAU * i as f64 / n as f64;
                let pos = [radius * yaw.cos(), radius * yaw.sin(), height];
                Camera::looking(pos, yaw, pitch, k, image_dims)
            })
            .collect::<Result<Vec<_>>>()?;
        CameraRig::new(cams)
    }
}
