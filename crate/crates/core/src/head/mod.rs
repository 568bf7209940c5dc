//! Collapsed-BEV occupancy head: BEV collapse and 2D decoding, interpolation
//! sampling of image features at voxel centers, fusion and classification.
//! Also hosts the 3D FCN comparison head.

mod bev;
mod fcn3d;
mod integrate;
mod interp;
mod pipeline;
mod weights;

pub use bev::{
    bev_collapse, bev_decode, bev_seg_head, bev_seg_head_backward, bev_uncollapse, BevFeature, SegHeadGrads,
};
pub use fcn3d::head_3dfcn;
pub use integrate::{integrate, FusedVolume};
pub use interp::{interp_sample, InterpolatedVolume, SamplePlan};
pub use pipeline::{forward_pipeline, CameraInputs, PipelineOutput};
pub use weights::{BevSegWeights, DecoderWeights, Fcn3dWeights, FuseWeights, HeadWeights, ResidualStage};

use serde::{Deserialize, Serialize};

use crate::error::{OccError, Result};
use crate::geometry::VoxelGridSpec;

/// Channel widths and layer layout of both heads. The fine grid comes from
/// the accompanying [`VoxelGridSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    /// C1: image feature channels sampled into the fine grid.
    pub image_channels: usize,
    /// C2: lifted voxel channels.
    pub lifted_channels: usize,
    /// C3: decoded BEV channels.
    pub bev_channels: usize,
    /// Channels of the fused voxel feature.
    pub fused_channels: usize,
    /// M, including the empty class 0.
    pub classes: usize,
    /// Width of each residual decoder stage; stages after the first halve the resolution.
    pub decoder_widths: Vec<usize>,
    pub kernel: usize,
    pub fcn3d_layers: usize,
    pub fcn3d_width: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            image_channels: 8,
            lifted_channels: 8,
            bev_channels: 16,
            fused_channels: 16,
            classes: 5,
            decoder_widths: vec![16, 32, 32],
            kernel: 3,
            fcn3d_layers: 3,
            fcn3d_width: 16,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self, grid: &VoxelGridSpec) -> Result<()> {
        let channels = [
            ("image_channels", self.image_channels),
            ("lifted_channels", self.lifted_channels),
            ("bev_channels", self.bev_channels),
            ("fused_channels", self.fused_channels),
            ("classes", self.classes),
            ("fcn3d_layers", self.fcn3d_layers),
            ("fcn3d_width", self.fcn3d_width),
        ];
        if let Some((name, _)) = channels.iter().find(|(_, v)| *v == 0) {
            return Err(OccError::config(format!("{name} must be at least 1")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(OccError::config(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.decoder_widths.is_empty() || self.decoder_widths.contains(&0) {
            return Err(OccError::config("decoder_widths needs at least one positive width"));
        }
        let half = grid.halved()?;
        let factor = 1usize << (self.decoder_widths.len() - 1);
        if half.dims[0] % factor != 0 || half.dims[1] % factor != 0 {
            return Err(OccError::config(format!(
                "BEV plane {}x{} is not divisible by 2^{} for {} decoder stages",
                half.dims[0],
                half.dims[1],
                self.decoder_widths.len() - 1,
                self.decoder_widths.len()
            )));
        }
        Ok(())
    }

    /// Channels of the collapsed BEV feature, `C2 * Z/2`.
    pub fn collapsed_channels(&self, grid: &VoxelGridSpec) -> usize {
        self.lifted_channels * grid.dims[2] / 2
    }
}
