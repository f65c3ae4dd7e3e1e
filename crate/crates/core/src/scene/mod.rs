//! Procedural multi-view scenes with exact analytic ground truth.
//!
//! Scenes are a handful of sphere/box primitives above a finite ground slab.
//! Rendering is analytic ray casting, so depth maps, poses, and point maps
//! are exact up to floating point. All ground-truth poses are re-expressed
//! relative to view 0 (the reference frame) before storage.

mod dataset;
mod render;

pub use dataset::{
    read_dataset, read_manifest, read_sample, DatasetManifest, DatasetWriter, ImageOnlyDataset,
};
pub use render::{cast_ray, render_views, scene_primitives, Hit, Primitive};

use crate::error::{Error, Result};
use crate::rng::stream;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Primitive kind for procedurally generated objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimitiveKind {
    Sphere,
    /// Axis-aligned cube; `size` is the half-extent.
    Box,
}

/// One object in a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Sphere radius or box half-extent, meters.
    pub size: f64,
    pub albedo: [f32; 3],
}

/// A procedurally generated scene: objects plus a ground slab at z=0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub objects: Vec<ObjectSpec>,
    pub ground_albedo: [f32; 3],
    /// Half-extent of the finite ground slab (top face at z=0).
    pub ground_half_extent: f64,
}

impl SceneSpec {
    /// Scene with no objects (ground slab only).
    pub fn empty(ground_half_extent: f64) -> Self {
        SceneSpec {
            seed: 0,
            objects: Vec::new(),
            ground_albedo: [0.55, 0.55, 0.55],
            ground_half_extent,
        }
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }
}

/// Bounds for procedural scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub num_objects: usize,
    /// Object centers are sampled inside this box.
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    /// Sphere radius / box half-extent range, meters.
    pub size_range: (f64, f64),
    pub sphere_probability: f64,
    pub ground_half_extent: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            num_objects: 3,
            workspace_min: [-0.35, -0.35, 0.05],
            workspace_max: [0.35, 0.35, 0.30],
            size_range: (0.05, 0.13),
            sphere_probability: 0.5,
            ground_half_extent: 1.4,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_objects == 0 {
            return Err(Error::config("num_objects must be >= 1"));
        }
        for d in 0..3 {
            if self.workspace_min[d] >= self.workspace_max[d] {
                return Err(Error::config(format!(
                    "workspace has non-positive extent along axis {d}"
                )));
            }
        }
        if self.size_range.0 <= 0.0 || self.size_range.0 >= self.size_range.1 {
            return Err(Error::config("degenerate object size range"));
        }
        if self.size_range.1 > self.workspace_max[2] {
            return Err(Error::config(
                "max object size exceeds workspace height; objects could not clear the ground",
            ));
        }
        if !(0.0..=1.0).contains(&self.sphere_probability) {
            return Err(Error::config("sphere_probability outside [0,1]"));
        }
        if self.ground_half_extent <= 0.0 {
            return Err(Error::config("ground_half_extent must be positive"));
        }
        Ok(())
    }
}

/// Deterministic function of `(seed, config)`. Objects never interpenetrate
/// the ground plane: `center.z >= size` is enforced during sampling.
pub fn generate_scene(seed: u64, config: &GenerationConfig) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = stream(seed, "scene-gen", &[]);
    let mut objects = Vec::with_capacity(config.num_objects);
    for _ in 0..config.num_objects {
        let kind = if rng.gen::<f64>() < config.sphere_probability {
            PrimitiveKind::Sphere
        } else {
            PrimitiveKind::Box
        };
        let size = rng.gen_range(config.size_range.0..config.size_range.1);
        let x = rng.gen_range(config.workspace_min[0]..config.workspace_max[0]);
        let y = rng.gen_range(config.workspace_min[1]..config.workspace_max[1]);
        let z_lo = config.workspace_min[2].max(size);
        let z = if z_lo < config.workspace_max[2] {
            rng.gen_range(z_lo..config.workspace_max[2])
        } else {
            z_lo
        };
        let albedo = [
            rng.gen_range(0.15..0.95) as f32,
            rng.gen_range(0.15..0.95) as f32,
            rng.gen_range(0.15..0.95) as f32,
        ];
        objects.push(ObjectSpec {
            kind,
            center: [x, y, z],
            size,
            albedo,
        });
    }
    let g = rng.gen_range(0.35..0.7) as f32;
    Ok(SceneSpec {
        seed,
        objects,
        ground_albedo: [g, g, g * 0.95],
        ground_half_extent: config.ground_half_extent,
    })
}

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Convention: `x_cam = R * x_world + t`, camera looks along +z, y is down in
/// the image (pixel row v grows with +y).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub height: usize,
    pub width: usize,
}

impl CameraModel {
    pub fn new(
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::config("focal lengths must be positive"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::config("principal point outside image"));
        }
        if (rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::config("rotation quaternion not unit-norm"));
        }
        Ok(CameraModel {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            height,
            width,
        })
    }

    /// Camera at `eye` looking at `target`, world +z as the up hint.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::config("look_at: eye equals target"))?;
        let up_hint = if forward.z.abs() > 0.999 {
            Vector3::new(0.0, 1.0, 0.0)
        } else {
            Vector3::new(0.0, 0.0, 1.0)
        };
        let right = forward.cross(&up_hint).normalize();
        // y points down in the camera frame so that +v in the image is "down".
        let down = forward.cross(&right);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(
            nalgebra::Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]),
        );
        let quat = UnitQuaternion::from_rotation_matrix(&rot);
        let translation = -(quat * eye);
        CameraModel::new(quat, translation, fx, fy, cx, cy, height, width)
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Camera center in the world frame.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn world_to_camera(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    /// Project a world point; returns `(u, v, z_depth)`.
    pub fn project(&self, p: Vector3<f64>) -> (f64, f64, f64) {
        let c = self.world_to_camera(p);
        (
            c.x / c.z * self.fx + self.cx,
            c.y / c.z * self.fy + self.cy,
            c.z,
        )
    }

    /// Unproject pixel `(u, v)` at z-depth `d` into the world frame.
    pub fn unproject_pixel(&self, u: f64, v: f64, d: f64) -> Vector3<f64> {
        let cam = Vector3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d);
        self.camera_to_world(cam)
    }

    /// Vertical field of view in radians.
    pub fn fov_v(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.fy)).atan()
    }

    /// This camera's pose expressed relative to `reference`:
    /// the returned transform maps reference-camera coordinates to this
    /// camera's coordinates. Intrinsics are kept.
    pub fn relative_to(&self, reference: &CameraModel) -> CameraModel {
        let rot = self.rotation * reference.rotation.inverse();
        let t = self.translation - (rot * reference.translation);
        CameraModel {
            rotation: rot,
            translation: t,
            ..*self
        }
    }

    /// Pose target vector `[qw,qx,qy,qz, tx,ty,tz, fov_v]` with `qw >= 0`.
    pub fn pose_target(&self) -> [f64; 8] {
        let mut q = *self.rotation.quaternion();
        if q.w < 0.0 {
            q = -q;
        }
        [
            q.w,
            q.i,
            q.j,
            q.k,
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.fov_v(),
        ]
    }
}

/// One rendered view: RGB in `[0,1]` (HWC), z-depth in meters (HW, +inf on
/// miss), and the camera that produced it.
#[derive(Debug, Clone)]
pub struct View {
    pub rgb: Vec<f32>,
    pub depth: Vec<f32>,
    pub camera: CameraModel,
}

/// A multi-view training sample. Cameras and point maps are expressed in the
/// reference frame of view 0 (whose stored pose is the identity).
#[derive(Debug, Clone)]
pub struct MultiViewSample {
    pub views: Vec<View>,
    /// Per view, H*W*3 world (= view-0 camera frame) coordinates; zeros where invalid.
    pub point_maps: Vec<Vec<f32>>,
    /// Per view, H*W validity (finite positive depth).
    pub valid_masks: Vec<Vec<bool>>,
    pub height: usize,
    pub width: usize,
}

impl MultiViewSample {
    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    /// Ground-truth pose target per view (relative to view 0).
    pub fn pose_targets(&self) -> Vec<[f64; 8]> {
        self.views.iter().map(|v| v.camera.pose_target()).collect()
    }

    /// Collect all valid ground-truth points across views.
    pub fn gather_valid_points(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::new();
        for (pm, mask) in self.point_maps.iter().zip(&self.valid_masks) {
            for (i, ok) in mask.iter().enumerate() {
                if *ok {
                    out.push([
                        pm[3 * i] as f64,
                        pm[3 * i + 1] as f64,
                        pm[3 * i + 2] as f64,
                    ]);
                }
            }
        }
        out
    }
}

/// Unproject a depth map through `camera` into world points.
///
/// Returns `(points, valid)` where `points` is H*W*3. Non-finite or
/// non-positive depths produce `valid = false` and a zero point, never a
/// NaN/inf coordinate.
pub fn unproject_depth(depth: &[f32], camera: &CameraModel) -> (Vec<f32>, Vec<bool>) {
    let (h, w) = (camera.height, camera.width);
    assert_eq!(depth.len(), h * w, "depth map size mismatch");
    let mut points = vec![0f32; h * w * 3];
    let mut valid = vec![false; h * w];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let d = depth[i] as f64;
            if d.is_finite() && d > 0.0 {
                let p = camera.unproject_pixel(u as f64, v as f64, d);
                points[3 * i] = p.x as f32;
                points[3 * i + 1] = p.y as f32;
                points[3 * i + 2] = p.z as f32;
                valid[i] = true;
            }
        }
    }
    (points, valid)
}

/// Pose distribution for sampled viewpoints: cameras on a spherical cap
/// looking at the (jittered) workspace center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSampler {
    pub radius_range: (f64, f64),
    pub elevation_deg_range: (f64, f64),
    pub azimuth_deg_range: (f64, f64),
    /// Uniform cube jitter applied to the look-at target, meters.
    pub target_jitter: f64,
    pub fov_v_deg: f64,
}

impl Default for CameraSampler {
    fn default() -> Self {
        CameraSampler {
            radius_range: (1.1, 1.9),
            elevation_deg_range: (30.0, 65.0),
            azimuth_deg_range: (0.0, 360.0),
            target_jitter: 0.05,
            fov_v_deg: 50.0,
        }
    }
}

impl CameraSampler {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            self.radius_range,
            self.elevation_deg_range,
            self.azimuth_deg_range,
        ];
        for (lo, hi) in ranges {
            if lo > hi {
                return Err(Error::config("camera sampler range with lo > hi"));
            }
        }
        if self.radius_range.0 <= 0.0 {
            return Err(Error::config("camera radius must be positive"));
        }
        if !(1.0..180.0).contains(&self.fov_v_deg) {
            return Err(Error::config("fov_v_deg outside (1, 180)"));
        }
        Ok(())
    }

    pub fn sample(
        &self,
        rng: &mut impl Rng,
        height: usize,
        width: usize,
    ) -> Result<CameraModel> {
        let radius = rng.gen_range(self.radius_range.0..=self.radius_range.1);
        let elev = rng
            .gen_range(self.elevation_deg_range.0..=self.elevation_deg_range.1)
            .to_radians();
        let azim = rng
            .gen_range(self.azimuth_deg_range.0..=self.azimuth_deg_range.1)
            .to_radians();
        let j = self.target_jitter;
        let target = Vector3::new(
            rng.gen_range(-j..=j),
            rng.gen_range(-j..=j),
            rng.gen_range(0.0..=j.max(1e-12)),
        );
        let eye = target
            + Vector3::new(
                radius * elev.cos() * azim.cos(),
                radius * elev.cos() * azim.sin(),
                radius * elev.sin(),
            );
        let fy = height as f64 / (2.0 * (self.fov_v_deg.to_radians() / 2.0).tan());
        CameraModel::look_at(
            eye,
            target,
            fy,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            height,
            width,
        )
    }
}
