//! Dataset serialization.
//!
//! Layout: `<root>/manifest.json` plus one `scene_<idx>/` directory per
//! sample holding `view_<j>.rgb.png` (8-bit), `view_<j>.depth.f32`
//! (little-endian raw float32, row-major), and `view_<j>.camera.json`.
//! Point maps are recomputed on load, never stored.

use super::{unproject_depth, CameraModel, CameraSampler, GenerationConfig, MultiViewSample, View};
use crate::error::{Error, Result};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub rng_algorithm: String,
    pub seed: u64,
    pub scene_seeds: Vec<u64>,
    pub resolution: [usize; 2],
    pub n_views: usize,
    pub scene_count: usize,
    pub generation: GenerationConfig,
    pub camera_sampler: CameraSampler,
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraRecord {
    quaternion_wxyz: [f64; 4],
    translation: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    height: usize,
    width: usize,
}

impl CameraRecord {
    fn from_camera(cam: &CameraModel) -> Self {
        let q = *cam.rotation().quaternion();
        CameraRecord {
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
            translation: [cam.translation().x, cam.translation().y, cam.translation().z],
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            height: cam.height,
            width: cam.width,
        }
    }

    fn into_camera(self) -> Result<CameraModel> {
        let [w, x, y, z] = self.quaternion_wxyz;
        // new_unchecked keeps the stored bits; CameraModel::new validates the norm.
        let quat = UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z));
        CameraModel::new(
            quat,
            Vector3::new(self.translation[0], self.translation[1], self.translation[2]),
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.height,
            self.width,
        )
    }
}

fn scene_dir(root: &Path, idx: usize) -> PathBuf {
    root.join(format!("scene_{idx}"))
}

fn write_rgb_png(path: &Path, rgb: &[f32], h: usize, w: usize) -> Result<()> {
    let mut buf = Vec::with_capacity(h * w * 3);
    for &x in rgb {
        buf.push((x.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::contract("rgb buffer size mismatch"))?;
    img.save(path)?;
    Ok(())
}

fn read_rgb_png(path: &Path, h: usize, w: usize) -> Result<Vec<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::load(path, format!("cannot decode png: {e}")))?
        .to_rgb8();
    if img.height() as usize != h || img.width() as usize != w {
        return Err(Error::load(
            path,
            format!(
                "resolution {}x{} does not match manifest {h}x{w}",
                img.height(),
                img.width()
            ),
        ));
    }
    Ok(img.as_raw().iter().map(|&b| b as f32 / 255.0).collect())
}

fn write_depth_raw(path: &Path, depth: &[f32]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    let mut bytes = Vec::with_capacity(depth.len() * 4);
    for &d in depth {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    f.write_all(&bytes)?;
    Ok(())
}

fn read_depth_raw(path: &Path, len: usize) -> Result<Vec<f32>> {
    let mut f = fs::File::open(path)
        .map_err(|e| Error::load(path, format!("cannot open depth file: {e}")))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() != len * 4 {
        return Err(Error::load(
            path,
            format!("depth file has {} bytes, expected {}", bytes.len(), len * 4),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Streaming writer; the manifest is written by [`DatasetWriter::finalize`].
pub struct DatasetWriter {
    root: PathBuf,
    manifest: DatasetManifest,
    written: usize,
}

impl DatasetWriter {
    pub fn create(root: impl Into<PathBuf>, manifest: DatasetManifest) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(DatasetWriter {
            root,
            manifest,
            written: 0,
        })
    }

    pub fn write_sample(&mut self, sample: &MultiViewSample) -> Result<()> {
        let idx = self.written;
        if idx >= self.manifest.scene_count {
            return Err(Error::contract("writing more scenes than manifest declares"));
        }
        if sample.n_views() != self.manifest.n_views {
            return Err(Error::contract("sample view count differs from manifest"));
        }
        let dir = scene_dir(&self.root, idx);
        fs::create_dir_all(&dir)?;
        for (j, view) in sample.views.iter().enumerate() {
            write_rgb_png(
                &dir.join(format!("view_{j}.rgb.png")),
                &view.rgb,
                sample.height,
                sample.width,
            )?;
            write_depth_raw(&dir.join(format!("view_{j}.depth.f32")), &view.depth)?;
            let record = CameraRecord::from_camera(&view.camera);
            let json = serde_json::to_string_pretty(&record)?;
            fs::write(dir.join(format!("view_{j}.camera.json")), json)?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finalize(self) -> Result<()> {
        if self.written != self.manifest.scene_count {
            return Err(Error::contract(format!(
                "wrote {} scenes but manifest declares {}",
                self.written, self.manifest.scene_count
            )));
        }
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.root.join("manifest.json"), json)?;
        Ok(())
    }
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::load(&path, format!("cannot read manifest: {e}")))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::load(&path, format!("corrupt manifest: {e}")))?;
    if manifest.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::load(
            &path,
            format!(
                "schema version {} unsupported (expected {DATASET_SCHEMA_VERSION})",
                manifest.schema_version
            ),
        ));
    }
    Ok(manifest)
}

/// Read one sample; point maps are recomputed from depth + camera.
pub fn read_sample(root: &Path, manifest: &DatasetManifest, idx: usize) -> Result<MultiViewSample> {
    let dir = scene_dir(root, idx);
    let [h, w] = manifest.resolution;
    let mut views = Vec::with_capacity(manifest.n_views);
    let mut point_maps = Vec::with_capacity(manifest.n_views);
    let mut valid_masks = Vec::with_capacity(manifest.n_views);
    for j in 0..manifest.n_views {
        let cam_path = dir.join(format!("view_{j}.camera.json"));
        let cam_text = fs::read_to_string(&cam_path)
            .map_err(|e| Error::load(&cam_path, format!("cannot read camera: {e}")))?;
        let record: CameraRecord = serde_json::from_str(&cam_text)
            .map_err(|e| Error::load(&cam_path, format!("corrupt camera json: {e}")))?;
        let camera = record.into_camera()?;
        if camera.height != h || camera.width != w {
            return Err(Error::load(
                &cam_path,
                "camera resolution does not match manifest",
            ));
        }
        let rgb = read_rgb_png(&dir.join(format!("view_{j}.rgb.png")), h, w)?;
        let depth = read_depth_raw(&dir.join(format!("view_{j}.depth.f32")), h * w)?;
        let (points, valid) = unproject_depth(&depth, &camera);
        views.push(View { rgb, depth, camera });
        point_maps.push(points);
        valid_masks.push(valid);
    }
    Ok(MultiViewSample {
        views,
        point_maps,
        valid_masks,
        height: h,
        width: w,
    })
}

/// Read the whole dataset, verifying the manifest against the directory tree.
pub fn read_dataset(root: &Path) -> Result<(DatasetManifest, Vec<MultiViewSample>)> {
    let manifest = read_manifest(root)?;
    let dirs = count_scene_dirs(root)?;
    if dirs != manifest.scene_count {
        return Err(Error::load(
            root.join("manifest.json"),
            format!(
                "manifest declares {} scenes but {} scene directories exist",
                manifest.scene_count, dirs
            ),
        ));
    }
    let mut samples = Vec::with_capacity(manifest.scene_count);
    for idx in 0..manifest.scene_count {
        samples.push(read_sample(root, &manifest, idx)?);
    }
    Ok((manifest, samples))
}

fn count_scene_dirs(root: &Path) -> Result<usize> {
    let mut count = 0;
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir()
            && entry.file_name().to_string_lossy().starts_with("scene_")
        {
            count += 1;
        }
    }
    Ok(count)
}

/// Image-only access to a dataset: opens nothing but `view_*.rgb.png` files.
///
/// The distillation trainer is handed this type so it cannot observe
/// ground-truth depth, pose, or point files even if they exist.
pub struct ImageOnlyDataset {
    root: PathBuf,
    pub scene_count: usize,
    pub n_views: usize,
    pub resolution: [usize; 2],
}

impl ImageOnlyDataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = read_manifest(&root)?;
        Ok(ImageOnlyDataset {
            root,
            scene_count: manifest.scene_count,
            n_views: manifest.n_views,
            resolution: manifest.resolution,
        })
    }

    /// RGB images for one scene, each H*W*3 in [0,1].
    pub fn scene_images(&self, idx: usize) -> Result<Vec<Vec<f32>>> {
        let dir = scene_dir(&self.root, idx);
        let [h, w] = self.resolution;
        (0..self.n_views)
            .map(|j| read_rgb_png(&dir.join(format!("view_{j}.rgb.png")), h, w))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, render_views};

    fn tiny_manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            rng_algorithm: crate::rng::RNG_ALGORITHM.to_string(),
            seed: 0,
            scene_seeds: (0..n as u64).collect(),
            resolution: [32, 32],
            n_views: 2,
            scene_count: n,
            generation: GenerationConfig::default(),
            camera_sampler: CameraSampler::default(),
        }
    }

    fn render_one(seed: u64) -> MultiViewSample {
        let scene = generate_scene(seed, &GenerationConfig::default()).unwrap();
        render_views(&scene, 2, &CameraSampler::default(), (32, 32)).unwrap()
    }

    #[test]
    fn round_trip_depth_bits_and_rgb_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let sample = render_one(3);
        let mut writer = DatasetWriter::create(dir.path(), tiny_manifest(1)).unwrap();
        writer.write_sample(&sample).unwrap();
        writer.finalize().unwrap();

        let (_, loaded) = read_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        let got = &loaded[0];
        for j in 0..2 {
            // Depth stored raw: bit-identical including +inf misses.
            for (a, b) in sample.views[j].depth.iter().zip(&got.views[j].depth) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            let max_err = sample.views[j]
                .rgb
                .iter()
                .zip(&got.views[j].rgb)
                .map(|(a, b)| (a - b).abs())
                .fold(0f32, f32::max);
            assert!(max_err <= 1.0 / 255.0 + 1e-6, "rgb error {max_err}");
            assert_eq!(sample.views[j].camera, got.views[j].camera);
        }
    }

    #[test]
    fn scene_count_mismatch_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let sample = render_one(4);
        let mut manifest = tiny_manifest(1);
        manifest.scene_count = 1;
        let mut writer = DatasetWriter::create(dir.path(), manifest).unwrap();
        writer.write_sample(&sample).unwrap();
        writer.finalize().unwrap();
        // Add a stray scene directory to desynchronize the manifest.
        std::fs::create_dir(dir.path().join("scene_1")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Load { .. }), "got {err:?}");
    }

    #[test]
    fn missing_manifest_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        match err {
            Error::Load { file, .. } => {
                assert!(file.ends_with("manifest.json"));
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn image_only_dataset_reads_without_depth_files() {
        let dir = tempfile::tempdir().unwrap();
        let sample = render_one(5);
        let mut writer = DatasetWriter::create(dir.path(), tiny_manifest(1)).unwrap();
        writer.write_sample(&sample).unwrap();
        writer.finalize().unwrap();
        // Remove everything except images; image-only access must not notice.
        for entry in std::fs::read_dir(dir.path().join("scene_0")).unwrap() {
            let p = entry.unwrap().path();
            if !p.to_string_lossy().ends_with(".rgb.png") {
                std::fs::remove_file(p).unwrap();
            }
        }
        let ds = ImageOnlyDataset::open(dir.path()).unwrap();
        let images = ds.scene_images(0).unwrap();
        assert_eq!(images.len(), 2);
        assert_eq!(images[0].len(), 32 * 32 * 3);
    }
}
