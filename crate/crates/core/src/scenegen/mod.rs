//! Seeded synthetic voxel worlds and ray-marched per-camera renders.

mod files;
mod render;
mod world;

pub use files::{read_label_volume, read_scene, write_scene, FileEntry, LoadedScene, SceneManifest};
pub use render::{add_feature_noise, camera_inputs, render_views, RenderedView};
pub use world::{gen_scene, ObjectKind, PlacedObject, RigSpec, Scene, SceneSpec};
