use rayon::prelude::*;

use super::{parallel_enabled, Tensor};
use crate::error::{OccError, Result};

/// Convolution weights plus geometry. Works for 2D (`[C_out, C_in, k, k]`)
/// and 3D (`[C_out, C_in, k, k, k]`) kernels; the rank is read from the weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    weight: Tensor,
    bias: Vec<f64>,
    stride: usize,
    padding: usize,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        let dims = weight.dims();
        if dims.len() != 4 && dims.len() != 5 {
            return Err(OccError::config(format!("conv weight must be rank 4 or 5, got {dims:?}")));
        }
        let k = dims[2];
        if dims[2..].iter().any(|&d| d != k) {
            return Err(OccError::config(format!("kernel must be isotropic, got {dims:?}")));
        }
        if k.is_multiple_of(2) {
            return Err(OccError::config(format!("kernel size must be odd, got {k}")));
        }
        if stride == 0 {
            return Err(OccError::config("stride must be positive"));
        }
        if bias.len() != dims[0] {
            return Err(OccError::config(format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                dims[0]
            )));
        }
        Ok(Self { weight, bias, stride, padding })
    }

    /// Stride 1 with `(k - 1) / 2` padding, preserving spatial dims.
    pub fn same(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        let k = weight.dims().get(2).copied().unwrap_or(1);
        Self::new(weight, bias, 1, k.saturating_sub(1) / 2)
    }

    pub fn zeros(spatial_rank: usize, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        let mut dims = vec![c_out, c_in];
        dims.extend(std::iter::repeat_n(k, spatial_rank));
        Self::same(Tensor::zeros(&dims), vec![0.0; c_out])
    }

    /// Center one-hot kernel mapping channel `i` to channel `i` for `i < min(c_in, c_out)`.
    pub fn identity(spatial_rank: usize, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        let mut p = Self::zeros(spatial_rank, c_in, c_out, k)?;
        let center = k / 2;
        for c in 0..c_in.min(c_out) {
            let mut idx = vec![c, c];
            idx.extend(std::iter::repeat_n(center, spatial_rank));
            p.weight.set(&idx, 1.0);
        }
        Ok(p)
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn spatial_rank(&self) -> usize {
        self.weight.rank() - 2
    }

    pub fn output_extent(&self, input: usize) -> Result<usize> {
        let span = input + 2 * self.padding;
        let k = self.kernel();
        if span < k {
            return Err(OccError::config(format!(
                "input extent {input} with padding {} is smaller than kernel {k}",
                self.padding
            )));
        }
        if !(span - k).is_multiple_of(self.stride) {
            return Err(OccError::config(format!(
                "extent ({input} + 2*{} - {k}) is not divisible by stride {}",
                self.padding, self.stride
            )));
        }
        Ok((span - k) / self.stride + 1)
    }

    fn check_input(&self, input: &Tensor, rank: usize) -> Result<Vec<usize>> {
        if self.spatial_rank() != rank {
            return Err(OccError::input(format!(
                "expected a {}D kernel, got {rank}D input",
                self.spatial_rank()
            )));
        }
        if input.rank() != rank + 1 {
            return Err(OccError::input(format!(
                "conv{rank}d expects rank {} input, got {:?}",
                rank + 1,
                input.dims()
            )));
        }
        if input.dims()[0] != self.in_channels() {
            return Err(OccError::input(format!(
                "input has {} channels, kernel expects {}",
                input.dims()[0],
                self.in_channels()
            )));
        }
        input.dims()[1..].iter().map(|&d| self.output_extent(d)).collect()
    }
}

/// Output positions `o` with `o * stride + tap - pad` inside `[0, n)`.
fn valid_range(n: usize, out: usize, tap: usize, stride: usize, pad: usize) -> std::ops::Range<usize> {
    let shift = tap as i64 - pad as i64;
    let s = stride as i64;
    let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
    let hi_incl = (n as i64 - 1 - shift).div_euclid(s);
    let hi = (hi_incl + 1).clamp(0, out as i64);
    let lo = lo.min(hi);
    lo as usize..hi as usize
}

fn for_each_out_channel(out: &mut [f64], plane: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    if plane == 0 {
        return;
    }
    if parallel_enabled() {
        out.par_chunks_mut(plane).enumerate().for_each(|(co, o)| f(co, o));
    } else {
        out.chunks_mut(plane).enumerate().for_each(|(co, o)| f(co, o));
    }
}

/// 2D cross-correlation plus bias on `[C_in, H, W]`.
pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let out_dims = params.check_input(input, 2)?;
    let (c_in, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (oh, ow) = (out_dims[0], out_dims[1]);
    let k = params.kernel();
    let (s, p) = (params.stride, params.padding);
    let x = input.data();
    let wt = params.weight.data();
    let c_out = params.out_channels();
    let mut out = vec![0.0; c_out * oh * ow];
    for_each_out_channel(&mut out, oh * ow, |co, o| {
        o.fill(params.bias[co]);
        for ci in 0..c_in {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let ys = valid_range(h, oh, ky, s, p);
                for kx in 0..k {
                    let wv = wt[((co * c_in + ci) * k + ky) * k + kx];
                    let xs = valid_range(w, ow, kx, s, p);
                    for oy in ys.clone() {
                        let iy = oy * s + ky - p;
                        let row = &xin[iy * w..(iy + 1) * w];
                        let orow = &mut o[oy * ow..(oy + 1) * ow];
                        for ox in xs.clone() {
                            orow[ox] += wv * row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![c_out, oh, ow], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// Analytic gradients of [`conv2d`] given the upstream gradient.
pub fn conv2d_backward(input: &Tensor, params: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let out_dims = params.check_input(input, 2)?;
    let c_out = params.out_channels();
    if grad_out.dims() != [c_out, out_dims[0], out_dims[1]] {
        return Err(OccError::input(format!(
            "grad_out dims {:?} do not match forward output [{c_out}, {}, {}]",
            grad_out.dims(),
            out_dims[0],
            out_dims[1]
        )));
    }
    let (c_in, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (oh, ow) = (out_dims[0], out_dims[1]);
    let k = params.kernel();
    let (s, p) = (params.stride, params.padding);
    let x = input.data();
    let g = grad_out.data();
    let wt = params.weight.data();

    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; c_out];
    for co in 0..c_out {
        let gplane = &g[co * oh * ow..(co + 1) * oh * ow];
        gb[co] = gplane.iter().sum();
        for ci in 0..c_in {
            let base = ci * h * w;
            for ky in 0..k {
                let ys = valid_range(h, oh, ky, s, p);
                for kx in 0..k {
                    let widx = ((co * c_in + ci) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let xs = valid_range(w, ow, kx, s, p);
                    let mut acc = 0.0;
                    for oy in ys.clone() {
                        let iy = oy * s + ky - p;
                        for ox in xs.clone() {
                            let ix = ox * s + kx - p;
                            let gv = gplane[oy * ow + ox];
                            acc += gv * x[base + iy * w + ix];
                            gx[base + iy * w + ix] += wv * gv;
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.dims().to_vec(), gx)?,
        weight: Tensor::new(params.weight.dims().to_vec(), gw)?,
        bias: gb,
    })
}

/// 3D cross-correlation plus bias on `[C_in, H, W, Z]`. Forward only.
pub fn conv3d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let out_dims = params.check_input(input, 3)?;
    let (c_in, h, w, z) = (input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]);
    let (oh, ow, oz) = (out_dims[0], out_dims[1], out_dims[2]);
    let k = params.kernel();
    let (s, p) = (params.stride, params.padding);
    let x = input.data();
    let wt = params.weight.data();
    let c_out = params.out_channels();
    let vol = h * w * z;
    let mut out = vec![0.0; c_out * oh * ow * oz];
    for_each_out_channel(&mut out, oh * ow * oz, |co, o| {
        o.fill(params.bias[co]);
        for ci in 0..c_in {
            let xin = &x[ci * vol..(ci + 1) * vol];
            for kh in 0..k {
                let hs = valid_range(h, oh, kh, s, p);
                for kw in 0..k {
                    let ws = valid_range(w, ow, kw, s, p);
                    for kz in 0..k {
                        let wv = wt[(((co * c_in + ci) * k + kh) * k + kw) * k + kz];
                        let zs = valid_range(z, oz, kz, s, p);
                        for ohh in hs.clone() {
                            let ih = ohh * s + kh - p;
                            for oww in ws.clone() {
                                let iw = oww * s + kw - p;
                                let src = &xin[(ih * w + iw) * z..(ih * w + iw + 1) * z];
                                let dst = &mut o[(ohh * ow + oww) * oz..(ohh * ow + oww + 1) * oz];
                                for ozz in zs.clone() {
                                    dst[ozz] += wv * src[ozz * s + kz - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![c_out, oh, ow, oz], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(dims: &[usize], rng: &mut SplitMix64) -> Tensor {
        Tensor::from_fn(dims, |_| rng.uniform(-10.0, 10.0))
    }

    fn naive_conv2d(x: &Tensor, p: &ConvParams) -> Tensor {
        let (ci_n, h, w) = (x.dims()[0], x.dims()[1] as i64, x.dims()[2] as i64);
        let k = p.kernel() as i64;
        let (s, pad) = (p.stride() as i64, p.padding() as i64);
        let oh = (h + 2 * pad - k) / s + 1;
        let ow = (w + 2 * pad - k) / s + 1;
        let co_n = p.out_channels();
        let mut out = Tensor::zeros(&[co_n, oh as usize, ow as usize]);
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = p.bias()[co];
                    for ci in 0..ci_n {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy * s + ky - pad;
                                let ix = ox * s + kx - pad;
                                if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                    continue;
                                }
                                acc += p.weight().at(&[co, ci, ky as usize, kx as usize])
                                    * x.at(&[ci, iy as usize, ix as usize]);
                            }
                        }
                    }
                    out.set(&[co, oy as usize, ox as usize], acc);
                }
            }
        }
        out
    }

    #[test]
    fn pointwise_scaling_doubles() {
        let w = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let p = ConvParams::same(w, vec![0.0]).unwrap();
        let x = Tensor::from_fn(&[1, 3, 4], |i| i as f64 - 5.0);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.data(), x.map(|v| 2.0 * v).data());
    }

    #[test]
    fn centered_one_hot_is_identity() {
        let p = ConvParams::identity(2, 3, 3, 3).unwrap();
        let mut rng = SplitMix64::new(1);
        let x = random(&[3, 5, 6], &mut rng);
        assert_eq!(conv2d(&x, &p).unwrap(), x);
        let p3 = ConvParams::identity(3, 2, 2, 3).unwrap();
        let x3 = random(&[2, 3, 4, 5], &mut rng);
        assert_eq!(conv3d(&x3, &p3).unwrap(), x3);
    }

    #[test]
    fn pointwise_3d_scaling() {
        let w = Tensor::new(vec![1, 1, 1, 1, 1], vec![2.0]).unwrap();
        let p = ConvParams::same(w, vec![0.0]).unwrap();
        let x = Tensor::from_fn(&[1, 2, 3, 4], |i| i as f64);
        assert_eq!(conv3d(&x, &p).unwrap().data(), x.map(|v| 2.0 * v).data());
    }

    #[test]
    fn strided_matches_naive() {
        let mut rng = SplitMix64::new(5);
        let x = random(&[3, 7, 9], &mut rng);
        let w = random(&[2, 3, 3, 3], &mut rng);
        let p = ConvParams::new(w, vec![0.5, -1.0], 2, 1).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert!(y.max_abs_diff(&naive_conv2d(&x, &p)) < 1e-12);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ConvParams::same(Tensor::zeros(&[1, 1, 2, 2]), vec![0.0]).is_err());
        let p = ConvParams::new(Tensor::zeros(&[1, 1, 3, 3]), vec![0.0], 2, 1).unwrap();
        // (6 + 2 - 3) = 5 is not divisible by 2
        assert!(matches!(conv2d(&Tensor::zeros(&[1, 6, 7]), &p), Err(OccError::Config(_))));
        let p = ConvParams::zeros(2, 2, 1, 3).unwrap();
        assert!(matches!(conv2d(&Tensor::zeros(&[3, 4, 4]), &p), Err(OccError::InvalidInput(_))));
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = SplitMix64::new(2);
        let x = random(&[2, 4, 4], &mut rng);
        let p = ConvParams::same(random(&[3, 2, 3, 3], &mut rng), vec![0.1, 0.2, 0.3]).unwrap();
        let g = conv2d_backward(&x, &p, &Tensor::zeros(&[3, 4, 4])).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.weight.max_abs(), 0.0);
        assert!(g.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn pointwise_identity_passes_gradient_through() {
        let p = ConvParams::identity(2, 3, 3, 1).unwrap();
        let mut rng = SplitMix64::new(3);
        let x = random(&[3, 4, 5], &mut rng);
        let g = random(&[3, 4, 5], &mut rng);
        assert_eq!(conv2d_backward(&x, &p, &g).unwrap().input, g);
    }

    #[test]
    fn backward_rejects_mismatched_grad() {
        let p = ConvParams::zeros(2, 1, 1, 3).unwrap();
        let x = Tensor::zeros(&[1, 4, 4]);
        assert!(conv2d_backward(&x, &p, &Tensor::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn parallel_mode_is_bit_identical() {
        let mut rng = SplitMix64::new(11);
        let x = random(&[4, 6, 6, 5], &mut rng);
        let p = ConvParams::same(random(&[3, 4, 3, 3, 3], &mut rng), vec![0.0; 3]).unwrap();
        let serial = conv3d(&x, &p).unwrap();
        set_parallel_for_test(true);
        let par = conv3d(&x, &p).unwrap();
        set_parallel_for_test(false);
        assert!(serial.bit_eq(&par));
    }

    fn set_parallel_for_test(on: bool) {
        super::super::set_parallel(on);
    }
}
