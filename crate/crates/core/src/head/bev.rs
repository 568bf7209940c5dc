use super::weights::{BevSegWeights, DecoderWeights};
use crate::error::{OccError, Result};
use crate::tensor::{
    add, avg_pool2x2, conv2d, conv2d_backward, relu, relu_backward, upsample2x_bilinear, ConvGrads, Tensor,
};
use crate::view_transform::LiftedVolume;

/// A `[channels, H/2, W/2]` BEV plane; either the collapsed `B'` or the decoded `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeature {
    plane: Tensor,
}

impl BevFeature {
    pub fn new(plane: Tensor) -> Result<Self> {
        if plane.rank() != 3 {
            return Err(OccError::input(format!("BEV feature must be [C, H, W], got {:?}", plane.dims())));
        }
        Ok(Self { plane })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.plane
    }

    pub fn into_tensor(self) -> Tensor {
        self.plane
    }

    pub fn channels(&self) -> usize {
        self.plane.dims()[0]
    }
}

/// Fold z into channels: `[C2, h, w, z]` -> `[C2*z, h, w]` with channel `c*z + k`.
pub fn bev_collapse(vb: &LiftedVolume) -> BevFeature {
    let t = vb.features();
    let (c, h, w, z) = (t.dims()[0], t.dims()[1], t.dims()[2], t.dims()[3]);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                for k in 0..z {
                    out[((ch * z + k) * h + i) * w + j] = src[((ch * h + i) * w + j) * z + k];
                }
            }
        }
    }
    BevFeature { plane: Tensor::new(vec![c * z, h, w], out).expect("same element count") }
}

/// Inverse of [`bev_collapse`].
pub fn bev_uncollapse(b: &BevFeature, z: usize) -> Result<Tensor> {
    let t = &b.plane;
    let (cz, h, w) = (t.dims()[0], t.dims()[1], t.dims()[2]);
    if z == 0 || cz % z != 0 {
        return Err(OccError::input(format!("{cz} channels do not split into z = {z}")));
    }
    let c = cz / z;
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                for k in 0..z {
                    out[((ch * h + i) * w + j) * z + k] = src[((ch * z + k) * h + i) * w + j];
                }
            }
        }
    }
    Tensor::new(vec![c, h, w, z], out)
}

/// Stem conv, residual stages (stages after the first start with 2x2 mean
/// pooling), then a top-down merge of 1x1 laterals back to the input scale.
pub fn bev_decode(bprime: &BevFeature, weights: &DecoderWeights) -> Result<BevFeature> {
    let stages = weights.stages.len();
    if stages == 0 || weights.laterals.len() != stages {
        return Err(OccError::config(format!(
            "decoder has {stages} stages and {} laterals",
            weights.laterals.len()
        )));
    }
    let cfg = |e: OccError| match e {
        OccError::InvalidInput(m) => OccError::Config(format!("decoder weights: {m}")),
        other => other,
    };
    let mut x = relu(&conv2d(&bprime.plane, &weights.stem).map_err(cfg)?);
    let mut features = Vec::with_capacity(stages);
    for (s, stage) in weights.stages.iter().enumerate() {
        if s > 0 {
            x = avg_pool2x2(&x)?;
        }
        let y = conv2d(&relu(&conv2d(&x, &stage.conv1).map_err(cfg)?), &stage.conv2).map_err(cfg)?;
        let skip = match &stage.skip {
            Some(p) => conv2d(&x, p).map_err(cfg)?,
            None => x.clone(),
        };
        x = relu(&add(&y, &skip).map_err(cfg)?);
        features.push(x.clone());
    }
    let mut merged = conv2d(&features[stages - 1], &weights.laterals[stages - 1]).map_err(cfg)?;
    for s in (0..stages - 1).rev() {
        let lateral = conv2d(&features[s], &weights.laterals[s]).map_err(cfg)?;
        merged = add(&upsample2x_bilinear(&merged)?, &lateral).map_err(cfg)?;
    }
    BevFeature::new(merged)
}

/// `k x k` conv + ReLU + `1 x 1` conv to per-class BEV logits.
pub fn bev_seg_head(b: &BevFeature, weights: &BevSegWeights) -> Result<Tensor> {
    let hidden = relu(&conv2d(&b.plane, &weights.conv)?);
    conv2d(&hidden, &weights.classifier)
}

#[derive(Debug, Clone)]
pub struct SegHeadGrads {
    pub input: Tensor,
    pub conv: ConvGrads,
    pub classifier: ConvGrads,
}

pub fn bev_seg_head_backward(b: &BevFeature, weights: &BevSegWeights, grad_logits: &Tensor) -> Result<SegHeadGrads> {
    let pre = conv2d(&b.plane, &weights.conv)?;
    let hidden = relu(&pre);
    let classifier = conv2d_backward(&hidden, &weights.classifier, grad_logits)?;
    let grad_pre = relu_backward(&pre, &classifier.input)?;
    let conv = conv2d_backward(&b.plane, &weights.conv, &grad_pre)?;
    Ok(SegHeadGrads { input: conv.input.clone(), conv, classifier })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VoxelGridSpec;
    use crate::head::weights::ResidualStage;
    use crate::rng::SplitMix64;
    use crate::tensor::ConvParams;

    fn volume(c: usize, h: usize, w: usize, z: usize, seed: u64) -> LiftedVolume {
        let mut rng = SplitMix64::new(seed);
        let t = Tensor::from_fn(&[c, h, w, z], |_| rng.uniform(-1.0, 1.0));
        let half = VoxelGridSpec::new([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], [h, w, z]).unwrap();
        LiftedVolume::new(t, &half).unwrap()
    }

    #[test]
    fn collapse_index_map() {
        let v = volume(2, 3, 3, 2, 1);
        let b = bev_collapse(&v);
        assert_eq!(b.tensor().dims(), &[4, 3, 3]);
        assert_eq!(b.tensor().at(&[2, 1, 2]), v.features().at(&[1, 1, 2, 0]));
        assert_eq!(b.tensor().at(&[1, 0, 1]), v.features().at(&[0, 0, 1, 1]));
        let back = bev_uncollapse(&b, 2).unwrap();
        assert!(back.bit_eq(v.features()));
        assert_eq!(b.tensor().sum().to_bits(), {
            let mut s = 0.0;
            for c in 0..2 {
                for k in 0..2 {
                    for i in 0..3 {
                        for j in 0..3 {
                            s += v.features().at(&[c, i, j, k]);
                        }
                    }
                }
            }
            s
        }
        .to_bits());
    }

    #[test]
    fn single_stage_identity_projects_channels() {
        let c_in = 4;
        let mut rng = SplitMix64::new(3);
        let x = Tensor::from_fn(&[c_in, 6, 6], |_| rng.uniform(0.0, 2.0));
        let mut lateral = ConvParams::zeros(2, c_in, 3, 1).unwrap();
        let proj = Tensor::from_fn(&[3, c_in, 1, 1], |_| rng.uniform(-1.0, 1.0));
        *lateral.weight_mut() = proj.clone();
        let weights = DecoderWeights {
            stem: ConvParams::identity(2, c_in, c_in, 3).unwrap(),
            stages: vec![ResidualStage {
                conv1: ConvParams::zeros(2, c_in, c_in, 3).unwrap(),
                conv2: ConvParams::zeros(2, c_in, c_in, 3).unwrap(),
                skip: None,
            }],
            laterals: vec![lateral],
        };
        let b = bev_decode(&BevFeature::new(x.clone()).unwrap(), &weights).unwrap();
        for o in 0..3 {
            for i in 0..6 {
                for j in 0..6 {
                    let want: f64 = (0..c_in).map(|c| proj.at(&[o, c, 0, 0]) * x.at(&[c, i, j])).sum();
                    assert!((b.tensor().at(&[o, i, j]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn decode_rejects_inconsistent_weights() {
        let weights = DecoderWeights {
            stem: ConvParams::zeros(2, 5, 4, 3).unwrap(),
            stages: vec![ResidualStage {
                conv1: ConvParams::zeros(2, 4, 4, 3).unwrap(),
                conv2: ConvParams::zeros(2, 4, 4, 3).unwrap(),
                skip: None,
            }],
            laterals: vec![ConvParams::zeros(2, 4, 2, 1).unwrap()],
        };
        let x = BevFeature::new(Tensor::zeros(&[3, 4, 4])).unwrap();
        assert!(matches!(bev_decode(&x, &weights), Err(OccError::Config(_))));
    }

    #[test]
    fn zero_seg_head() {
        let w = BevSegWeights {
            conv: ConvParams::zeros(2, 4, 4, 3).unwrap(),
            classifier: ConvParams::zeros(2, 4, 5, 1).unwrap(),
        };
        let b = BevFeature::new(Tensor::filled(&[4, 6, 6], 1.5)).unwrap();
        let logits = bev_seg_head(&b, &w).unwrap();
        assert_eq!(logits.dims(), &[5, 6, 6]);
        assert_eq!(logits.max_abs(), 0.0);
    }
}
