use super::Tensor;
use crate::error::{OccError, Result};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Subgradient 0 at `x == 0`.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.dims() != grad_out.dims() {
        return Err(OccError::input(format!(
            "relu grad dims {:?} vs input {:?}",
            grad_out.dims(),
            input.dims()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.dims().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(OccError::input(format!("cannot add {:?} and {:?}", a.dims(), b.dims())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.dims().to_vec(), data)
}

fn source_coord(o: usize, n: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear 2x upsampling of `[C, H, W]` (half-pixel mapping, border clamp).
pub fn upsample2x_bilinear(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 || input.dims()[1] == 0 || input.dims()[2] == 0 {
        return Err(OccError::input(format!("upsample2x expects [C, H, W], got {:?}", input.dims())));
    }
    let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (oh, ow) = (2 * h, 2 * w);
    let cols: Vec<_> = (0..ow).map(|o| source_coord(o, w)).collect();
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, fy) = source_coord(oy, h);
            for &(x0, x1, fx) in &cols {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Nearest-neighbour 2x upsampling along every spatial axis of `[C, H, W, Z]`.
pub fn upsample2x_nearest_3d(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 4 {
        return Err(OccError::input(format!("expected [C, H, W, Z], got {:?}", input.dims())));
    }
    let (c, h, w, z) = (input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]);
    let x = input.data();
    let mut out = Vec::with_capacity(c * h * w * z * 8);
    for ch in 0..c {
        for oh in 0..2 * h {
            for ow in 0..2 * w {
                let base = ((ch * h + oh / 2) * w + ow / 2) * z;
                for oz in 0..2 * z {
                    out.push(x[base + oz / 2]);
                }
            }
        }
    }
    Tensor::new(vec![c, 2 * h, 2 * w, 2 * z], out)
}

/// 2x2 mean pooling of `[C, H, W]` with even `H`, `W`.
pub fn avg_pool2x2(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 || !input.dims()[1].is_multiple_of(2) || !input.dims()[2].is_multiple_of(2) {
        return Err(OccError::input(format!("avg_pool2x2 expects even [C, H, W], got {:?}", input.dims())));
    }
    let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let x = input.data();
    let mut out = Vec::with_capacity(c * h * w / 4);
    for ch in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let i = (ch * h + 2 * oy) * w + 2 * ox;
                out.push(0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]));
            }
        }
    }
    Tensor::new(vec![c, h / 2, w / 2], out)
}

/// `[C, H, W]` -> `[C, H, W, Z]` with every z-slice equal to the input.
pub fn repeat_z(input: &Tensor, z: usize) -> Result<Tensor> {
    if input.rank() != 3 || z == 0 {
        return Err(OccError::input(format!("repeat_z expects [C, H, W] and Z >= 1, got {:?}, {z}", input.dims())));
    }
    let mut dims = input.dims().to_vec();
    dims.push(z);
    let data = input
        .data()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, z))
        .collect();
    Tensor::new(dims, data)
}

/// Softmax over axis 0 at every location, with max subtraction.
pub fn channel_softmax(input: &Tensor) -> Result<Tensor> {
    let c = *input.dims().first().unwrap_or(&0);
    if c == 0 {
        return Err(OccError::input("softmax needs at least one channel"));
    }
    let plane = input.plane_len();
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for loc in 0..plane {
        let max = (0..c).map(|ch| x[ch * plane + loc]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for ch in 0..c {
            let e = (x[ch * plane + loc] - max).exp();
            out[ch * plane + loc] = e;
            total += e;
        }
        for ch in 0..c {
            out[ch * plane + loc] /= total;
        }
    }
    Tensor::new(input.dims().to_vec(), out)
}

/// Concatenate along axis 0; `a`'s channels come first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != b.rank() || a.rank() == 0 || a.dims()[1..] != b.dims()[1..] {
        return Err(OccError::input(format!(
            "cannot concat channels of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut dims = a.dims().to_vec();
    dims[0] += b.dims()[0];
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::new(vec![2], vec![0.5, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
        let g = relu_backward(&x, &Tensor::filled(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn upsample_constant_and_single_pixel() {
        let x = Tensor::filled(&[2, 3, 2], 4.5);
        let y = upsample2x_bilinear(&x).unwrap();
        assert_eq!(y.dims(), &[2, 6, 4]);
        assert!(y.data().iter().all(|&v| v == 4.5));
        let one = Tensor::new(vec![1, 1, 1], vec![7.0]).unwrap();
        assert_eq!(upsample2x_bilinear(&one).unwrap().data(), &[7.0; 4]);
    }

    #[test]
    fn upsample_hand_evaluated_centers() {
        // sample coords for outputs 1 and 2 are 0.25 and 0.75; f(y, x) = x + 2y on the 2x2 grid
        let x = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = upsample2x_bilinear(&x).unwrap();
        let centers = [y.at(&[0, 1, 1]), y.at(&[0, 1, 2]), y.at(&[0, 2, 1]), y.at(&[0, 2, 2])];
        let expected = [0.75, 1.25, 1.75, 2.25];
        for (c, e) in centers.iter().zip(expected) {
            assert!((c - e).abs() < 1e-15);
        }
        // corners clamp to the source pixels
        assert_eq!(y.at(&[0, 0, 0]), 0.0);
        assert_eq!(y.at(&[0, 3, 3]), 3.0);
    }

    #[test]
    fn repeat_z_slices_and_sum() {
        let x = Tensor::from_fn(&[2, 3, 3], |i| i as f64 * 0.5 - 2.0);
        let one = repeat_z(&x, 1).unwrap();
        assert_eq!(one.dims(), &[2, 3, 3, 1]);
        assert_eq!(one.data(), x.data());
        let four = repeat_z(&x, 4).unwrap();
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(four.at(&[c, i, j, 0]), four.at(&[c, i, j, 3]));
                }
            }
        }
        assert!((four.sum() - 4.0 * x.sum()).abs() < 1e-12);
    }

    #[test]
    fn softmax_cases() {
        let u = channel_softmax(&Tensor::filled(&[4, 2], 3.0)).unwrap();
        assert!(u.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let s = channel_softmax(&Tensor::new(vec![2, 1], vec![5.0, 1005.0]).unwrap()).unwrap();
        assert!(s.data()[0] < 1e-300 && (s.data()[1] - 1.0).abs() < 1e-15);
        let r = channel_softmax(&Tensor::from_fn(&[5, 3, 2], |i| ((i * 37) % 11) as f64 - 4.0)).unwrap();
        for loc in 0..6 {
            let total: f64 = (0..5).map(|c| r.data()[c * 6 + loc]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_cases() {
        let a = Tensor::from_fn(&[3, 2, 2], |i| i as f64);
        let empty = Tensor::zeros(&[0, 2, 2]);
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        let b = Tensor::filled(&[5, 2, 2], 1.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims()[0], 8);
        assert_eq!(c.channels(0, 3).unwrap(), a);
        assert!(concat_channels(&a, &Tensor::zeros(&[1, 2, 3])).is_err());
    }

    #[test]
    fn pooling_and_nearest() {
        let x = Tensor::from_fn(&[1, 2, 4], |i| i as f64);
        assert_eq!(avg_pool2x2(&x).unwrap().data(), &[2.5, 4.5]);
        let v = Tensor::from_fn(&[1, 1, 1, 2], |i| i as f64 + 1.0);
        let up = upsample2x_nearest_3d(&v).unwrap();
        assert_eq!(up.dims(), &[1, 2, 2, 4]);
        assert_eq!(&up.data()[..4], &[1.0, 1.0, 2.0, 2.0]);
    }
}
