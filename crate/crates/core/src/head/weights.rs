use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::HeadConfig;
use crate::error::{OccError, Result};
use crate::geometry::VoxelGridSpec;
use crate::rng::SplitMix64;
use crate::tensor::io::{self, DType};
use crate::tensor::{ConvParams, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStage {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    /// 1x1 projection on the skip path when the width changes.
    pub skip: Option<ConvParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub stem: ConvParams,
    pub stages: Vec<ResidualStage>,
    /// One 1x1 lateral per stage, projecting to C3.
    pub laterals: Vec<ConvParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevSegWeights {
    pub conv: ConvParams,
    pub classifier: ConvParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseWeights {
    pub fuse: ConvParams,
    pub classifier: ConvParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fcn3dWeights {
    pub layers: Vec<ConvParams>,
    pub classifier: ConvParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub decoder: DecoderWeights,
    pub bev_seg: BevSegWeights,
    pub fuse: FuseWeights,
    pub fcn3d: Fcn3dWeights,
}

struct Layout {
    rank: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
}

fn layouts(cfg: &HeadConfig, grid: &VoxelGridSpec) -> Vec<(String, Layout)> {
    let k = cfg.kernel;
    let l = |rank, c_in, c_out, k| Layout { rank, c_in, c_out, k };
    let mut out = vec![("decoder.stem".to_string(), l(2, cfg.collapsed_channels(grid), cfg.decoder_widths[0], k))];
    let mut prev = cfg.decoder_widths[0];
    for (s, &w) in cfg.decoder_widths.iter().enumerate() {
        out.push((format!("decoder.stage{s}.conv1"), l(2, prev, w, k)));
        out.push((format!("decoder.stage{s}.conv2"), l(2, w, w, k)));
        if prev != w {
            out.push((format!("decoder.stage{s}.skip"), l(2, prev, w, 1)));
        }
        prev = w;
    }
    for (s, &w) in cfg.decoder_widths.iter().enumerate() {
        out.push((format!("decoder.lateral{s}"), l(2, w, cfg.bev_channels, 1)));
    }
    out.push(("bev_seg.conv".into(), l(2, cfg.bev_channels, cfg.bev_channels, k)));
    out.push(("bev_seg.classifier".into(), l(2, cfg.bev_channels, cfg.classes, 1)));
    out.push(("fuse.fuse".into(), l(3, cfg.bev_channels + cfg.image_channels, cfg.fused_channels, 1)));
    out.push(("fuse.classifier".into(), l(3, cfg.fused_channels, cfg.classes, 1)));
    let mut prev = cfg.lifted_channels;
    for j in 0..cfg.fcn3d_layers {
        out.push((format!("fcn3d.layer{j}"), l(3, prev, cfg.fcn3d_width, k)));
        prev = cfg.fcn3d_width;
    }
    out.push(("fcn3d.classifier".into(), l(3, prev, cfg.classes, 1)));
    out
}

impl HeadWeights {
    fn assemble(cfg: &HeadConfig, grid: &VoxelGridSpec, mut make: impl FnMut(&str, &Layout) -> Result<ConvParams>) -> Result<Self> {
        cfg.validate(grid)?;
        let mut layers: BTreeMap<String, ConvParams> = BTreeMap::new();
        for (name, layout) in layouts(cfg, grid) {
            let p = make(&name, &layout)?;
            layers.insert(name, p);
        }
        let mut take = |name: String| layers.remove(&name).expect("layout covers every layer");
        let stages = (0..cfg.decoder_widths.len())
            .map(|s| {
                let has_skip = s > 0 && cfg.decoder_widths[s - 1] != cfg.decoder_widths[s];
                ResidualStage {
                    conv1: take(format!("decoder.stage{s}.conv1")),
                    conv2: take(format!("decoder.stage{s}.conv2")),
                    skip: has_skip.then(|| take(format!("decoder.stage{s}.skip"))),
                }
            })
            .collect();
        let stem = take("decoder.stem".into());
        let laterals = (0..cfg.decoder_widths.len()).map(|s| take(format!("decoder.lateral{s}"))).collect();
        Ok(Self {
            decoder: DecoderWeights { stem, stages, laterals },
            bev_seg: BevSegWeights { conv: take("bev_seg.conv".into()), classifier: take("bev_seg.classifier".into()) },
            fuse: FuseWeights { fuse: take("fuse.fuse".into()), classifier: take("fuse.classifier".into()) },
            fcn3d: Fcn3dWeights {
                layers: (0..cfg.fcn3d_layers).map(|j| take(format!("fcn3d.layer{j}"))).collect(),
                classifier: take("fcn3d.classifier".into()),
            },
        })
    }

    pub fn zeros(cfg: &HeadConfig, grid: &VoxelGridSpec) -> Result<Self> {
        Self::assemble(cfg, grid, |_, l| ConvParams::zeros(l.rank, l.c_in, l.c_out, l.k))
    }

    /// Uniform He-style initialisation drawn from SplitMix64 in layer-name order.
    pub fn seeded(cfg: &HeadConfig, grid: &VoxelGridSpec, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        Self::assemble(cfg, grid, |_, l| {
            let fan_in = l.c_in * l.k.pow(l.rank as u32);
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut dims = vec![l.c_out, l.c_in];
            dims.extend(std::iter::repeat_n(l.k, l.rank));
            let weight = Tensor::from_fn(&dims, |_| rng.uniform(-bound, bound));
            let bias = rng.fill_uniform(l.c_out, -0.1, 0.1);
            ConvParams::same(weight, bias)
        })
    }

    /// Every layer with its manifest name, in a fixed order.
    pub fn named_layers(&self) -> Vec<(String, &ConvParams)> {
        let mut out = vec![("decoder.stem".to_string(), &self.decoder.stem)];
        for (s, st) in self.decoder.stages.iter().enumerate() {
            out.push((format!("decoder.stage{s}.conv1"), &st.conv1));
            out.push((format!("decoder.stage{s}.conv2"), &st.conv2));
            if let Some(skip) = &st.skip {
                out.push((format!("decoder.stage{s}.skip"), skip));
            }
        }
        for (s, lat) in self.decoder.laterals.iter().enumerate() {
            out.push((format!("decoder.lateral{s}"), lat));
        }
        out.push(("bev_seg.conv".into(), &self.bev_seg.conv));
        out.push(("bev_seg.classifier".into(), &self.bev_seg.classifier));
        out.push(("fuse.fuse".into(), &self.fuse.fuse));
        out.push(("fuse.classifier".into(), &self.fuse.classifier));
        for (j, layer) in self.fcn3d.layers.iter().enumerate() {
            out.push((format!("fcn3d.layer{j}"), layer));
        }
        out.push(("fcn3d.classifier".into(), &self.fcn3d.classifier));
        out
    }

    /// Write one `.occt` per parameter tensor plus `manifest.json`
    /// (`"<layer>.weight"` / `"<layer>.bias"` -> file name). Returns the manifest path.
    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf> {
        fs::create_dir_all(dir)?;
        let mut manifest = BTreeMap::new();
        for (name, p) in self.named_layers() {
            let wfile = format!("{name}.weight.occt");
            let bfile = format!("{name}.bias.occt");
            io::write_tensor(dir.join(&wfile), p.weight(), DType::F64)?;
            io::write_tensor(dir.join(&bfile), &Tensor::new(vec![p.bias().len()], p.bias().to_vec())?, DType::F64)?;
            manifest.insert(format!("{name}.weight"), wfile);
            manifest.insert(format!("{name}.bias"), bfile);
        }
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest).expect("string map serializes"))?;
        Ok(path)
    }

    /// Load from a manifest; relative file paths resolve against the manifest's directory.
    pub fn load(manifest_path: &Path, cfg: &HeadConfig, grid: &VoxelGridSpec) -> Result<Self> {
        let text = fs::read_to_string(manifest_path)?;
        let mut manifest: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| OccError::config(format!("weights manifest {}: {e}", manifest_path.display())))?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let weights = Self::assemble(cfg, grid, |name, l| {
            let mut fetch = |key: String| -> Result<Tensor> {
                let file = manifest
                    .remove(&key)
                    .ok_or_else(|| OccError::config(format!("weights manifest lacks {key}")))?;
                io::read_tensor(base.join(file))
            };
            let weight = fetch(format!("{name}.weight"))?;
            let bias = fetch(format!("{name}.bias"))?;
            let mut dims = vec![l.c_out, l.c_in];
            dims.extend(std::iter::repeat_n(l.k, l.rank));
            if weight.dims() != dims.as_slice() || bias.dims() != [l.c_out] {
                return Err(OccError::config(format!(
                    "{name}: weight {:?} / bias {:?}, expected {dims:?} / [{}]",
                    weight.dims(),
                    bias.dims(),
                    l.c_out
                )));
            }
            ConvParams::same(weight, bias.into_data())
        })?;
        if let Some(extra) = manifest.keys().next() {
            return Err(OccError::config(format!("weights manifest has unknown entry {extra}")));
        }
        Ok(weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> VoxelGridSpec {
        VoxelGridSpec::new([-8.0, -8.0, -1.0, 8.0, 8.0, 2.2], [40, 40, 8]).unwrap()
    }

    #[test]
    fn layer_shapes_follow_config() {
        let cfg = HeadConfig::default();
        let w = HeadWeights::zeros(&cfg, &grid()).unwrap();
        assert_eq!(w.decoder.stem.in_channels(), 32);
        assert!(w.decoder.stages[0].skip.is_none());
        assert!(w.decoder.stages[1].skip.is_some());
        assert!(w.decoder.stages[2].skip.is_none());
        assert_eq!(w.fuse.fuse.in_channels(), 24);
        assert_eq!(w.fcn3d.layers.len(), 3);
        assert_eq!(w.fcn3d.layers[0].weight().dims(), &[16, 8, 3, 3, 3]);
    }

    #[test]
    fn seeded_is_deterministic() {
        let cfg = HeadConfig::default();
        let a = HeadWeights::seeded(&cfg, &grid(), 5).unwrap();
        let b = HeadWeights::seeded(&cfg, &grid(), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, HeadWeights::seeded(&cfg, &grid(), 6).unwrap());
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let cfg = HeadConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let w = HeadWeights::seeded(&cfg, &grid(), 1).unwrap();
        let manifest = w.save(dir.path()).unwrap();
        assert_eq!(HeadWeights::load(&manifest, &cfg, &grid()).unwrap(), w);

        let other = HeadConfig { bev_channels: 8, ..cfg.clone() };
        assert!(matches!(HeadWeights::load(&manifest, &other, &grid()), Err(OccError::Config(_))));
    }
}
