use super::OccupancyVolume;
use crate::error::{OccError, Result};
use crate::tensor::Tensor;

/// Multi-hot `[M, H, W]`: entry `(m, x, y)` is 1 iff the column holds a voxel of class `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGroundTruth {
    planes: Tensor,
}

impl BevGroundTruth {
    pub fn tensor(&self) -> &Tensor {
        &self.planes
    }

    pub fn into_tensor(self) -> Tensor {
        self.planes
    }
}

pub fn bev_gt_from_occ(gt: &OccupancyVolume) -> BevGroundTruth {
    let [h, w, z] = gt.dims();
    let m = gt.classes();
    let mut planes = vec![0.0; m * h * w];
    for i in 0..h {
        for j in 0..w {
            for k in 0..z {
                planes[(gt.label(i, j, k) * h + i) * w + j] = 1.0;
            }
        }
    }
    BevGroundTruth { planes: Tensor::new(vec![m, h, w], planes).expect("sized from dims") }
}

/// Logical OR over 2x2 blocks, bringing the BEV target to the decoded scale.
pub fn or_pool2x2(gt: &BevGroundTruth) -> Result<Tensor> {
    let t = &gt.planes;
    let (m, h, w) = (t.dims()[0], t.dims()[1], t.dims()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(OccError::input(format!("BEV plane {h}x{w} must be even")));
    }
    let x = t.data();
    let mut out = Vec::with_capacity(m * h * w / 4);
    for c in 0..m {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                let base = (c * h + 2 * i) * w + 2 * j;
                let any = x[base] + x[base + 1] + x[base + w] + x[base + w + 1] > 0.0;
                out.push(if any { 1.0 } else { 0.0 });
            }
        }
    }
    Tensor::new(vec![m, h / 2, w / 2], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(m: usize) -> Vec<String> {
        OccupancyVolume::default_names(m)
    }

    #[test]
    fn empty_column_sets_only_empty_bit() {
        let v = OccupancyVolume::new([1, 1, 4], vec![0; 4], names(4)).unwrap();
        assert_eq!(bev_gt_from_occ(&v).tensor().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn car_and_road_column() {
        // road = 1 at z = 0, car = 3 at z = 3
        let v = OccupancyVolume::new([1, 1, 5], vec![1, 0, 0, 3, 0], names(5)).unwrap();
        assert_eq!(bev_gt_from_occ(&v).tensor().data(), &[1.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn single_class_grid() {
        let v = OccupancyVolume::new([2, 3, 2], vec![2; 12], names(4)).unwrap();
        let gt = bev_gt_from_occ(&v);
        let t = gt.tensor();
        for m in 0..4 {
            let want = if m == 2 { 1.0 } else { 0.0 };
            assert!((0..6).all(|p| t.data()[m * 6 + p] == want));
        }
    }

    #[test]
    fn or_pooling() {
        let v = OccupancyVolume::new([2, 2, 1], vec![0, 0, 0, 1], names(2)).unwrap();
        let pooled = or_pool2x2(&bev_gt_from_occ(&v)).unwrap();
        assert_eq!(pooled.data(), &[1.0, 1.0]);
    }
}
