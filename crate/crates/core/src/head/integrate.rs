use super::bev::BevFeature;
use super::interp::InterpolatedVolume;
use super::weights::FuseWeights;
use crate::error::{OccError, Result};
use crate::tensor::{concat_channels, conv3d, repeat_z, upsample2x_bilinear, Tensor};

/// Fused voxel feature `V` and classifier logits `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedVolume {
    pub features: Tensor,
    pub logits: Tensor,
}

/// Upsample `B` to the fine plane, repeat it along z, concatenate with `P`,
/// then a pointwise fusion conv and a pointwise classifier.
pub fn integrate(b: &BevFeature, p: &InterpolatedVolume, weights: &FuseWeights) -> Result<FusedVolume> {
    let fine = p.features().dims();
    let up = upsample2x_bilinear(b.tensor())?;
    if up.dims()[1..] != fine[1..3] {
        return Err(OccError::input(format!(
            "upsampled BEV {:?} does not cover the fine plane {:?}",
            up.dims(),
            &fine[1..3]
        )));
    }
    let bz = repeat_z(&up, fine[3])?;
    let stacked = concat_channels(&bz, p.features())?;
    let features = conv3d(&stacked, &weights.fuse)?;
    let logits = conv3d(&features, &weights.classifier)?;
    Ok(FusedVolume { features, logits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraRig, VoxelGridSpec};
    use crate::head::interp_sample;
    use crate::rng::SplitMix64;
    use crate::tensor::ConvParams;

    fn setup(seed: u64) -> (BevFeature, InterpolatedVolume, InterpolatedVolume) {
        let mut rng = SplitMix64::new(seed);
        let rig = CameraRig::ring(2, 0.1, 0.5, 0.2, 6.0, [6, 8]).unwrap();
        let grid = VoxelGridSpec::new([-4.0, -4.0, -1.0, 4.0, 4.0, 1.0], [8, 8, 4]).unwrap();
        let feats: Vec<_> = (0..2).map(|_| Tensor::from_fn(&[3, 6, 8], |_| rng.uniform(-1.0, 1.0))).collect();
        let zero: Vec<_> = (0..2).map(|_| Tensor::zeros(&[3, 6, 8])).collect();
        let b = BevFeature::new(Tensor::from_fn(&[5, 4, 4], |_| rng.uniform(-1.0, 1.0))).unwrap();
        (
            b,
            interp_sample(&feats, &rig, &grid).unwrap(),
            interp_sample(&zero, &rig, &grid).unwrap(),
        )
    }

    #[test]
    fn identity_fusion_exposes_repeated_bev() {
        let (b, p, _) = setup(1);
        let w = FuseWeights {
            fuse: ConvParams::identity(3, 8, 5, 1).unwrap(),
            classifier: ConvParams::zeros(3, 5, 4, 1).unwrap(),
        };
        let out = integrate(&b, &p, &w).unwrap();
        let bz = repeat_z(&upsample2x_bilinear(b.tensor()).unwrap(), 4).unwrap();
        assert_eq!(out.features, bz);
        assert_eq!(out.logits.dims(), &[4, 8, 8, 4]);
    }

    #[test]
    fn zero_interp_branch_splits_linearly() {
        let (b, p, p0) = setup(2);
        let mut rng = SplitMix64::new(9);
        let mut fuse = ConvParams::zeros(3, 8, 6, 1).unwrap();
        *fuse.weight_mut() = Tensor::from_fn(&[6, 8, 1, 1, 1], |_| rng.uniform(-1.0, 1.0));
        let w = FuseWeights { fuse, classifier: ConvParams::identity(3, 6, 6, 1).unwrap() };
        let with_zero = integrate(&b, &p0, &w).unwrap();
        // only the B_z columns of the fusion weights contribute
        let mut bev_only = w.clone();
        for o in 0..6 {
            for c in 5..8 {
                bev_only.fuse.weight_mut().set(&[o, c, 0, 0, 0], 0.0);
            }
        }
        assert!(integrate(&b, &p, &bev_only).unwrap().features.max_abs_diff(&with_zero.features) < 1e-12);
    }

    #[test]
    fn rejects_plane_mismatch() {
        let (_, p, _) = setup(3);
        let b = BevFeature::new(Tensor::zeros(&[5, 3, 4])).unwrap();
        let w = FuseWeights {
            fuse: ConvParams::zeros(3, 8, 4, 1).unwrap(),
            classifier: ConvParams::zeros(3, 4, 2, 1).unwrap(),
        };
        assert!(matches!(integrate(&b, &p, &w), Err(OccError::InvalidInput(_))));
    }
}
