use super::weights::Fcn3dWeights;
use crate::error::Result;
use crate::tensor::{conv3d, relu, upsample2x_nearest_3d, Tensor};
use crate::view_transform::LiftedVolume;

/// Comparison head: nearest upsample `V_B` to the fine grid, `k^3` conv + ReLU
/// layers, then a pointwise classifier.
pub fn head_3dfcn(vb: &LiftedVolume, weights: &Fcn3dWeights) -> Result<Tensor> {
    let mut x = upsample2x_nearest_3d(vb.features())?;
    for layer in &weights.layers {
        x = relu(&conv3d(&x, layer)?);
    }
    conv3d(&x, &weights.classifier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VoxelGridSpec;
    use crate::rng::SplitMix64;
    use crate::tensor::ConvParams;

    fn vb(seed: u64) -> LiftedVolume {
        let mut rng = SplitMix64::new(seed);
        let half = VoxelGridSpec::new([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], [3, 3, 2]).unwrap();
        LiftedVolume::new(Tensor::from_fn(&[4, 3, 3, 2], |_| rng.uniform(0.0, 1.0)), &half).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let w = Fcn3dWeights {
            layers: vec![ConvParams::zeros(3, 4, 6, 3).unwrap(), ConvParams::zeros(3, 6, 6, 3).unwrap()],
            classifier: ConvParams::zeros(3, 6, 5, 1).unwrap(),
        };
        let y = head_3dfcn(&vb(1), &w).unwrap();
        assert_eq!(y.dims(), &[5, 6, 6, 4]);
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn identity_layer_projects_channels() {
        let mut rng = SplitMix64::new(2);
        let mut cls = ConvParams::zeros(3, 4, 2, 1).unwrap();
        *cls.weight_mut() = Tensor::from_fn(&[2, 4, 1, 1, 1], |_| rng.uniform(-1.0, 1.0));
        let w = Fcn3dWeights { layers: vec![ConvParams::identity(3, 4, 4, 1).unwrap()], classifier: cls.clone() };
        let v = vb(3);
        let y = head_3dfcn(&v, &w).unwrap();
        let up = upsample2x_nearest_3d(v.features()).unwrap();
        for o in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    for k in 0..4 {
                        let want: f64 = (0..4).map(|c| cls.weight().at(&[o, c, 0, 0, 0]) * up.at(&[c, i, j, k])).sum();
                        assert!((y.at(&[o, i, j, k]) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
