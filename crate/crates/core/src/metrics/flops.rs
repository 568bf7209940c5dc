use num_rational::Ratio;
use serde::Serialize;

use crate::error::{OccError, Result};
use crate::geometry::VoxelGridSpec;
use crate::head::{Fcn3dWeights, HeadConfig};

/// Multiply-accumulate accounting of one layer; bias and activations are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlopsLayerSpec {
    Conv2d { c_in: u64, c_out: u64, k: u64, h: u64, w: u64 },
    Conv3d { c_in: u64, c_out: u64, k: u64, h: u64, w: u64, z: u64 },
    Interp { n: u64, c: u64, h: u64, w: u64, z: u64 },
}

impl FlopsLayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            FlopsLayerSpec::Conv2d { .. } => "conv2d",
            FlopsLayerSpec::Conv3d { .. } => "conv3d",
            FlopsLayerSpec::Interp { .. } => "interp",
        }
    }

    pub fn flops(&self) -> u64 {
        match *self {
            FlopsLayerSpec::Conv2d { c_in, c_out, k, h, w } => c_in * k * k * c_out * h * w,
            FlopsLayerSpec::Conv3d { c_in, c_out, k, h, w, z } => c_in * k * k * k * c_out * h * w * z,
            FlopsLayerSpec::Interp { n, c, h, w, z } => 4 * n * c * h * w * z,
        }
    }

    /// The 3D layer with the same channels, kernel and plane over `z` slices.
    pub fn lifted_to_3d(&self, z: u64) -> Option<FlopsLayerSpec> {
        match *self {
            FlopsLayerSpec::Conv2d { c_in, c_out, k, h, w } => Some(FlopsLayerSpec::Conv3d { c_in, c_out, k, h, w, z }),
            _ => None,
        }
    }
}

/// `C_in * k^3 * C_out * H * W * Z`.
pub fn flops_conv3d(spec: &FlopsLayerSpec) -> Result<u64> {
    match spec {
        FlopsLayerSpec::Conv3d { .. } => Ok(spec.flops()),
        other => Err(OccError::input(format!("expected a conv3d layer, got {}", other.kind()))),
    }
}

/// `C_in * k^2 * C_out * H * W`.
pub fn flops_conv2d(spec: &FlopsLayerSpec) -> Result<u64> {
    match spec {
        FlopsLayerSpec::Conv2d { .. } => Ok(spec.flops()),
        other => Err(OccError::input(format!("expected a conv2d layer, got {}", other.kind()))),
    }
}

/// `4 * N * C * H * W * Z`: four bilinear neighbours per voxel, channel and camera.
pub fn flops_interp(n: u64, c: u64, h: u64, w: u64, z: u64) -> u64 {
    FlopsLayerSpec::Interp { n, c, h, w, z }.flops()
}

/// `FLOPs_3D / FLOPs_2D` for a layer pair sharing channels, kernel and plane; equals `k * Z`.
pub fn speedup_ratio(spec3d: &FlopsLayerSpec, spec2d: &FlopsLayerSpec) -> Result<Ratio<u64>> {
    match (*spec3d, *spec2d) {
        (
            FlopsLayerSpec::Conv3d { c_in: a, c_out: b, k: k3, h: h3, w: w3, .. },
            FlopsLayerSpec::Conv2d { c_in, c_out, k, h, w },
        ) if a == c_in && b == c_out && k3 == k && h3 == h && w3 == w => {
            Ok(Ratio::new(spec3d.flops(), spec2d.flops()))
        }
        _ => Err(OccError::input(format!("{spec3d:?} and {spec2d:?} are not a matched layer pair"))),
    }
}

/// Latency-breakdown bucket of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "2d_to_3d")]
    TwoDToThreeD,
    #[serde(rename = "3d")]
    ThreeD,
    /// Training-only auxiliary branch, excluded from head totals.
    Aux,
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::TwoD => "2d",
            Stage::TwoDToThreeD => "2d_to_3d",
            Stage::ThreeD => "3d",
            Stage::Aux => "aux",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedLayer {
    pub name: String,
    pub stage: Stage,
    pub spec: FlopsLayerSpec,
}

fn conv2d(c_in: usize, c_out: usize, k: usize, h: usize, w: usize) -> FlopsLayerSpec {
    FlopsLayerSpec::Conv2d { c_in: c_in as u64, c_out: c_out as u64, k: k as u64, h: h as u64, w: w as u64 }
}

fn conv3d(c_in: usize, c_out: usize, k: usize, dims: [usize; 3]) -> FlopsLayerSpec {
    FlopsLayerSpec::Conv3d {
        c_in: c_in as u64,
        c_out: c_out as u64,
        k: k as u64,
        h: dims[0] as u64,
        w: dims[1] as u64,
        z: dims[2] as u64,
    }
}

/// Layers of the collapsed-BEV head in execution order.
pub fn head2d_layers(cfg: &HeadConfig, grid: &VoxelGridSpec, cameras: usize) -> Result<Vec<NamedLayer>> {
    cfg.validate(grid)?;
    let [h, w, z] = grid.dims;
    let (bh, bw) = (h / 2, w / 2);
    let k = cfg.kernel;
    let widths = &cfg.decoder_widths;
    let mut out = Vec::new();
    let mut push = |name: String, stage, spec| out.push(NamedLayer { name, stage, spec });
    push("decoder.stem".into(), Stage::TwoD, conv2d(cfg.collapsed_channels(grid), widths[0], k, bh, bw));
    let mut prev = widths[0];
    for (s, &wd) in widths.iter().enumerate() {
        let (sh, sw) = (bh >> s, bw >> s);
        push(format!("decoder.stage{s}.conv1"), Stage::TwoD, conv2d(prev, wd, k, sh, sw));
        push(format!("decoder.stage{s}.conv2"), Stage::TwoD, conv2d(wd, wd, k, sh, sw));
        if prev != wd {
            push(format!("decoder.stage{s}.skip"), Stage::TwoD, conv2d(prev, wd, 1, sh, sw));
        }
        prev = wd;
    }
    for (s, &wd) in widths.iter().enumerate() {
        push(format!("decoder.lateral{s}"), Stage::TwoD, conv2d(wd, cfg.bev_channels, 1, bh >> s, bw >> s));
    }
    push("bev_seg.conv".into(), Stage::Aux, conv2d(cfg.bev_channels, cfg.bev_channels, k, bh, bw));
    push("bev_seg.classifier".into(), Stage::Aux, conv2d(cfg.bev_channels, cfg.classes, 1, bh, bw));
    push(
        "interp_sample".into(),
        Stage::TwoDToThreeD,
        FlopsLayerSpec::Interp { n: cameras as u64, c: cfg.image_channels as u64, h: h as u64, w: w as u64, z: z as u64 },
    );
    push(
        "fuse.fuse".into(),
        Stage::ThreeD,
        conv3d(cfg.bev_channels + cfg.image_channels, cfg.fused_channels, 1, grid.dims),
    );
    push("fuse.classifier".into(), Stage::ThreeD, conv3d(cfg.fused_channels, cfg.classes, 1, grid.dims));
    Ok(out)
}

/// Layers of the 3D FCN comparison head.
pub fn head3d_layers(cfg: &HeadConfig, grid: &VoxelGridSpec) -> Result<Vec<NamedLayer>> {
    cfg.validate(grid)?;
    let mut out = Vec::new();
    let mut prev = cfg.lifted_channels;
    for j in 0..cfg.fcn3d_layers {
        out.push(NamedLayer {
            name: format!("fcn3d.layer{j}"),
            stage: Stage::ThreeD,
            spec: conv3d(prev, cfg.fcn3d_width, cfg.kernel, grid.dims),
        });
        prev = cfg.fcn3d_width;
    }
    out.push(NamedLayer {
        name: "fcn3d.classifier".into(),
        stage: Stage::ThreeD,
        spec: conv3d(prev, cfg.classes, 1, grid.dims),
    });
    Ok(out)
}

/// Layer specs read off actual 3D head weights running on the fine grid.
pub fn fcn3d_layer_specs(weights: &Fcn3dWeights, grid: &VoxelGridSpec) -> Vec<FlopsLayerSpec> {
    weights
        .layers
        .iter()
        .chain(std::iter::once(&weights.classifier))
        .map(|p| conv3d(p.in_channels(), p.out_channels(), p.kernel(), grid.dims))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsRow {
    pub head: &'static str,
    pub name: String,
    pub stage: Stage,
    pub kind: &'static str,
    pub flops: u64,
    /// For 2D convs, the FLOPs ratio against the same layer run in 3D over the fine Z.
    pub ratio_vs_3d: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsReport {
    pub rows: Vec<FlopsRow>,
    pub head2d_total: u64,
    pub head3d_total: u64,
    pub interp: u64,
}

pub fn flops_report(cfg: &HeadConfig, grid: &VoxelGridSpec, cameras: usize) -> Result<FlopsReport> {
    let z = grid.dims[2] as u64;
    let mut rows = Vec::new();
    for (head, layers) in [("head2d", head2d_layers(cfg, grid, cameras)?), ("head3d", head3d_layers(cfg, grid)?)] {
        for l in layers {
            let ratio_vs_3d = match l.spec.lifted_to_3d(z) {
                Some(spec3d) => {
                    let r = speedup_ratio(&spec3d, &l.spec)?;
                    Some(r.to_integer())
                }
                None => None,
            };
            rows.push(FlopsRow { head, name: l.name, stage: l.stage, kind: l.spec.kind(), flops: l.spec.flops(), ratio_vs_3d });
        }
    }
    let total = |head: &str| -> u64 {
        rows.iter().filter(|r| r.head == head && r.stage != Stage::Aux).map(|r| r.flops).sum()
    };
    let head2d_total = total("head2d");
    let head3d_total = total("head3d");
    let interp = rows.iter().filter(|r| r.kind == "interp").map(|r| r.flops).sum();
    Ok(FlopsReport { rows, head2d_total, head3d_total, interp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::HeadWeights;
    use proptest::prelude::*;

    #[test]
    fn worked_values() {
        let c3 = FlopsLayerSpec::Conv3d { c_in: 8, c_out: 16, k: 3, h: 20, w: 20, z: 4 };
        let c2 = FlopsLayerSpec::Conv2d { c_in: 8, c_out: 16, k: 3, h: 20, w: 20 };
        assert_eq!(flops_conv3d(&c3).unwrap(), 5_529_600);
        assert_eq!(flops_conv2d(&c2).unwrap(), 460_800);
        assert_eq!(flops_conv3d(&c3).unwrap() / flops_conv2d(&c2).unwrap(), 12);
        assert_eq!(speedup_ratio(&c3, &c2).unwrap(), Ratio::from_integer(12));
        assert_eq!(flops_interp(4, 8, 40, 40, 8), 1_638_400);
        assert_eq!(flops_interp(1, 1, 1, 1, 1), 4);
        let unit3 = FlopsLayerSpec::Conv3d { c_in: 1, c_out: 1, k: 1, h: 1, w: 1, z: 1 };
        let unit2 = FlopsLayerSpec::Conv2d { c_in: 1, c_out: 1, k: 1, h: 1, w: 1 };
        assert_eq!(flops_conv3d(&unit3).unwrap(), 1);
        assert_eq!(flops_conv2d(&unit2).unwrap(), 1);
        assert_eq!(speedup_ratio(&unit3, &unit2).unwrap(), Ratio::from_integer(1));
    }

    #[test]
    fn ratio_examples() {
        for (k, z, want) in [(3, 8, 24), (1, 1, 1), (3, 16, 48)] {
            let c2 = FlopsLayerSpec::Conv2d { c_in: 4, c_out: 6, k, h: 5, w: 7 };
            let c3 = c2.lifted_to_3d(z).unwrap();
            assert_eq!(speedup_ratio(&c3, &c2).unwrap(), Ratio::from_integer(want));
        }
    }

    #[test]
    fn mismatched_pairs_rejected() {
        let c2 = FlopsLayerSpec::Conv2d { c_in: 4, c_out: 6, k: 3, h: 5, w: 7 };
        let c3 = FlopsLayerSpec::Conv3d { c_in: 32, c_out: 6, k: 3, h: 5, w: 7, z: 4 };
        assert!(speedup_ratio(&c3, &c2).is_err());
        assert!(speedup_ratio(&c2, &c2).is_err());
        assert!(flops_conv3d(&c2).is_err());
    }

    #[test]
    fn doubling_z_doubles_conv3d() {
        let a = FlopsLayerSpec::Conv3d { c_in: 3, c_out: 5, k: 3, h: 4, w: 6, z: 2 };
        let b = FlopsLayerSpec::Conv3d { c_in: 3, c_out: 5, k: 3, h: 4, w: 6, z: 4 };
        assert_eq!(b.flops(), 2 * a.flops());
    }

    #[test]
    fn fcn3d_weights_match_config_accounting() {
        let grid = VoxelGridSpec::new([-8.0, -8.0, -1.0, 8.0, 8.0, 2.2], [40, 40, 8]).unwrap();
        let cfg = HeadConfig::default();
        let w = HeadWeights::zeros(&cfg, &grid).unwrap();
        let from_weights: u64 = fcn3d_layer_specs(&w.fcn3d, &grid).iter().map(|s| flops_conv3d(s).unwrap()).sum();
        let from_config: u64 = head3d_layers(&cfg, &grid).unwrap().iter().map(|l| l.spec.flops()).sum();
        assert_eq!(from_weights, from_config);
    }

    #[test]
    fn report_totals_are_row_sums() {
        let grid = VoxelGridSpec::new([-8.0, -8.0, -1.0, 8.0, 8.0, 2.2], [40, 40, 8]).unwrap();
        let r = flops_report(&HeadConfig::default(), &grid, 4).unwrap();
        let s3: u64 = r.rows.iter().filter(|x| x.head == "head3d").map(|x| x.flops).sum();
        assert_eq!(s3, r.head3d_total);
        assert_eq!(r.interp, 4 * 4 * 8 * 40 * 40 * 8);
        assert!(r.rows.iter().filter(|x| x.kind == "conv2d" && x.name.ends_with("conv1")).all(|x| x.ratio_vs_3d == Some(24)));
    }

    proptest! {
        #[test]
        fn ratio_is_k_times_z(c_in in 1u64..64, c_out in 1u64..64, k in prop::sample::select(vec![1u64, 3, 5, 7]),
                              h in 1u64..64, w in 1u64..64, z in 1u64..32) {
            let c2 = FlopsLayerSpec::Conv2d { c_in, c_out, k, h, w };
            let c3 = c2.lifted_to_3d(z).unwrap();
            prop_assert_eq!(speedup_ratio(&c3, &c2).unwrap(), Ratio::from_integer(k * z));
        }

        #[test]
        fn interp_is_linear(n in 1u64..8, c in 1u64..16, h in 1u64..50, w in 1u64..50, z in 1u64..20) {
            let base = flops_interp(n, c, h, w, z);
            prop_assert_eq!(flops_interp(2 * n, c, h, w, z), 2 * base);
            prop_assert_eq!(flops_interp(n, 3 * c, h, w, z), 3 * base);
            prop_assert_eq!(flops_interp(n, c, h, w, 2 * z), 2 * base);
        }
    }
}
