use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::RenderedView;
use super::world::{PlacedObject, Scene};
use crate::error::{OccError, Result};
use crate::geometry::{CameraRig, VoxelGridSpec};
use crate::supervision::OccupancyVolume;
use crate::tensor::io::{self, DType, OcctData};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub file: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub seed: u64,
    pub grid: VoxelGridSpec,
    pub class_names: Vec<String>,
    pub labels: FileEntry,
    pub features: Vec<FileEntry>,
    pub depths: Vec<FileEntry>,
    pub rig: CameraRig,
    pub objects: Vec<PlacedObject>,
}

/// Writes `labels.occt` (i64), `cam{i}.features.occt` / `cam{i}.depth.occt`
/// (f32) and `manifest.json` into `dir`; returns the manifest path.
pub fn write_scene(
    dir: &Path,
    seed: u64,
    grid: &VoxelGridSpec,
    scene: &Scene,
    rig: &CameraRig,
    views: &[RenderedView],
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let vol = &scene.volume;
    let labels: Vec<i64> = vol.labels().iter().map(|&l| l as i64).collect();
    io::write_labels(dir.join("labels.occt"), &vol.dims(), &labels)?;
    let mut features = Vec::new();
    let mut depths = Vec::new();
    for (i, v) in views.iter().enumerate() {
        let f = format!("cam{i}.features.occt");
        let d = format!("cam{i}.depth.occt");
        io::write_tensor(dir.join(&f), &v.features, DType::F32)?;
        io::write_tensor(dir.join(&d), &v.depth, DType::F32)?;
        features.push(FileEntry { file: f, dims: v.features.dims().to_vec() });
        depths.push(FileEntry { file: d, dims: v.depth.dims().to_vec() });
    }
    let manifest = SceneManifest {
        seed,
        grid: *grid,
        class_names: vol.class_names().to_vec(),
        labels: FileEntry { file: "labels.occt".into(), dims: vol.dims().to_vec() },
        features,
        depths,
        rig: rig.clone(),
        objects: scene.objects.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| OccError::Format(e.to_string()))?;
    fs::write(&path, text)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub manifest: SceneManifest,
    pub volume: OccupancyVolume,
    /// Per camera `[M, H', W']`.
    pub features: Vec<Tensor>,
    /// Per camera `[H', W']`.
    pub depths: Vec<Tensor>,
}

/// Reads a label volume file into class ids.
pub fn read_label_volume(path: &Path, class_names: Vec<String>) -> Result<OccupancyVolume> {
    match io::read(path)? {
        OcctData::Labels { dims, values } => {
            let dims: [usize; 3] = dims
                .try_into()
                .map_err(|d: Vec<usize>| OccError::Format(format!("{}: label volume must be rank 3, got {d:?}", path.display())))?;
            let labels = values
                .into_iter()
                .map(|v| usize::try_from(v).map_err(|_| OccError::Format(format!("{}: negative label {v}", path.display()))))
                .collect::<Result<Vec<_>>>()?;
            OccupancyVolume::new(dims, labels, class_names)
        }
        OcctData::Float(_) => Err(OccError::Format(format!("{}: expected an i64 label volume", path.display()))),
    }
}

pub fn read_scene(manifest_path: &Path) -> Result<LoadedScene> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: SceneManifest = serde_json::from_str(&text)
        .map_err(|e| OccError::config(format!("scene manifest {}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let volume = read_label_volume(&base.join(&manifest.labels.file), manifest.class_names.clone())?;
    let load = |entries: &[FileEntry]| -> Result<Vec<Tensor>> {
        entries
            .iter()
            .map(|e| {
                let t = io::read_tensor(base.join(&e.file))?;
                if t.dims() != e.dims.as_slice() {
                    return Err(OccError::Format(format!("{}: dims {:?}, manifest says {:?}", e.file, t.dims(), e.dims)));
                }
                Ok(t)
            })
            .collect()
    };
    let features = load(&manifest.features)?;
    let depths = load(&manifest.depths)?;
    if features.len() != manifest.rig.len() || depths.len() != manifest.rig.len() {
        return Err(OccError::Format("scene manifest camera count does not match its rig".into()));
    }
    Ok(LoadedScene { manifest, volume, features, depths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{gen_scene, render_views, RigSpec, SceneSpec};

    #[test]
    fn round_trip_and_byte_identical_rerun() {
        let spec = SceneSpec::default();
        let scene = gen_scene(&spec).unwrap();
        let rig = RigSpec::default().build().unwrap();
        let views = render_views(&scene.volume, &spec.grid, &rig).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = write_scene(a.path(), spec.seed, &spec.grid, &scene, &rig, &views).unwrap();
        write_scene(b.path(), spec.seed, &spec.grid, &scene, &rig, &views).unwrap();
        for name in ["manifest.json", "labels.occt", "cam0.features.occt", "cam3.depth.occt"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        let loaded = read_scene(&pa).unwrap();
        assert_eq!(loaded.volume, scene.volume);
        assert_eq!(loaded.features.len(), 4);
        assert_eq!(loaded.features[1], views[1].features);
        assert_eq!(loaded.manifest.rig, rig);
    }
}
