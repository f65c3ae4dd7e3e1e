//! 3D reconstruction evaluation: relative pose error, depth metrics, and
//! Chamfer distance, plus a model-agnostic evaluation driver.
//!
//! Conventions (fixed in the report schema):
//! - RPE over consecutive frame pairs, rotation in degrees.
//! - Chamfer distance is the sum of the two directed mean distances.
//! - The delta metric uses strict inequality at the threshold.
//! - Scale normalization divides predictions and ground truth by the median
//!   ground-truth scene depth (configurable, `GtMedian` by default).

use crate::error::{Error, Result};
use crate::scene::{CameraModel, MultiViewSample};
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform (world -> camera convention, matching [`CameraModel`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_camera(cam: &CameraModel) -> Self {
        Pose {
            rotation: cam.rotation(),
            translation: cam.translation(),
        }
    }

    /// From the 8-vector `[qw,qx,qy,qz,tx,ty,tz,fov]`; the quaternion is
    /// normalized (predicted poses come in un-normalized).
    pub fn from_pose_vector(v: &[f64]) -> Result<Self> {
        if v.len() < 7 {
            return Err(Error::contract("pose vector must have >= 7 entries"));
        }
        let q = nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]);
        if q.norm() < 1e-12 {
            return Err(Error::contract("zero quaternion in pose vector"));
        }
        Ok(Pose {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::new(v[4], v[5], v[6]),
        })
    }

    pub fn inverse(&self) -> Pose {
        let rot = self.rotation.inverse();
        Pose {
            rotation: rot,
            translation: -(rot * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn rotation_angle_deg(&self) -> f64 {
        self.rotation.angle().to_degrees()
    }
}

fn check_trajectory(poses: &[Pose]) -> Result<()> {
    for p in poses {
        if (p.rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::contract("trajectory quaternion not unit-norm"));
        }
    }
    Ok(())
}

/// Relative pose error over consecutive frame pairs.
///
/// For each pair i -> i+1 the error transform is
/// `E = delta_gt^-1 ∘ delta_pred` with `delta = T_{i+1} ∘ T_i^-1`.
/// Returns `(RPE_t meters, RPE_r degrees)`. A change of the shared world
/// frame (`T -> T ∘ G` for all poses) cancels in the deltas, so RPE is
/// invariant to it.
pub fn rpe(pred: &[Pose], gt: &[Pose]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::contract(format!(
            "trajectory length mismatch: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::contract("RPE needs at least 2 poses"));
    }
    check_trajectory(pred)?;
    check_trajectory(gt)?;
    let mut t_sum = 0.0;
    let mut r_sum = 0.0;
    let pairs = pred.len() - 1;
    for i in 0..pairs {
        let d_pred = pred[i + 1].compose(&pred[i].inverse());
        let d_gt = gt[i + 1].compose(&gt[i].inverse());
        let err = d_gt.inverse().compose(&d_pred);
        t_sum += err.translation.norm();
        r_sum += err.rotation_angle_deg();
    }
    Ok((t_sum / pairs as f64, r_sum / pairs as f64))
}

/// Mean of `|d_pred - d_gt| / d_gt` over masked pixels.
pub fn absrel(d_pred: &[f32], d_gt: &[f32], mask: &[bool]) -> Result<f64> {
    if d_pred.len() != d_gt.len() || d_gt.len() != mask.len() {
        return Err(Error::contract("absrel: shape mismatch"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..d_gt.len() {
        if mask[i] {
            let g = d_gt[i] as f64;
            if g <= 0.0 {
                return Err(Error::contract("absrel: non-positive ground-truth depth"));
            }
            sum += (d_pred[i] as f64 - g).abs() / g;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("absrel: empty mask".into()));
    }
    Ok(sum / count as f64)
}

/// Fraction of masked pixels with `max(pred/gt, gt/pred) < threshold`
/// (strict inequality). Non-positive predictions never pass.
pub fn delta_metric(d_pred: &[f32], d_gt: &[f32], mask: &[bool], threshold: f64) -> Result<f64> {
    if d_pred.len() != d_gt.len() || d_gt.len() != mask.len() {
        return Err(Error::contract("delta: shape mismatch"));
    }
    let mut hits = 0usize;
    let mut count = 0usize;
    for i in 0..d_gt.len() {
        if mask[i] {
            let g = d_gt[i] as f64;
            if g <= 0.0 {
                return Err(Error::contract("delta: non-positive ground-truth depth"));
            }
            count += 1;
            let p = d_pred[i] as f64;
            if p > 0.0 {
                let ratio = (p / g).max(g / p);
                if ratio < threshold {
                    hits += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Empty("delta: empty mask".into()));
    }
    Ok(hits as f64 / count as f64)
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Brute-force directed mean nearest-neighbor distance (reference path).
fn directed_mean_brute(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let mut sum = 0.0;
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let d = dist(p, q);
            if d < best {
                best = d;
            }
        }
        sum += best;
    }
    sum / from.len() as f64
}

/// Symmetric Chamfer distance, brute force:
/// `(1/|P|) Σ_p min_q ||p-q|| + (1/|Q|) Σ_q min_p ||q-p||`.
pub fn chamfer_brute(p: &[[f64; 3]], q: &[[f64; 3]]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("chamfer: empty point set".into()));
    }
    Ok(directed_mean_brute(p, q) + directed_mean_brute(q, p))
}

/// Uniform-grid exact nearest-neighbor index.
struct PointGrid<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    origin: [f64; 3],
    dims: [i64; 3],
    buckets: std::collections::HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    fn build(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
        let n = points.len() as f64;
        let cell = (extent / n.cbrt().max(1.0)).max(1e-9);
        let mut dims = [1i64; 3];
        for a in 0..3 {
            dims[a] = (((hi[a] - lo[a]) / cell).floor() as i64 + 1).max(1);
        }
        let mut buckets: std::collections::HashMap<[i64; 3], Vec<u32>> =
            std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets
                .entry(Self::key_for(p, &lo, cell, &dims))
                .or_default()
                .push(i as u32);
        }
        PointGrid {
            points,
            cell,
            origin: lo,
            dims,
            buckets,
        }
    }

    fn key_for(p: &[f64; 3], origin: &[f64; 3], cell: f64, dims: &[i64; 3]) -> [i64; 3] {
        let mut k = [0i64; 3];
        for a in 0..3 {
            k[a] = (((p[a] - origin[a]) / cell).floor() as i64).clamp(0, dims[a] - 1);
        }
        k
    }

    /// Exact nearest distance from `p` to the indexed set.
    fn nearest(&self, p: &[f64; 3]) -> f64 {
        let center = Self::key_for(p, &self.origin, self.cell, &self.dims);
        let max_ring = self.dims.iter().max().copied().unwrap_or(1);
        let mut best = f64::INFINITY;
        let mut ring = 0i64;
        loop {
            let mut scanned_any = false;
            for kx in center[0] - ring..=center[0] + ring {
                for ky in center[1] - ring..=center[1] + ring {
                    for kz in center[2] - ring..=center[2] + ring {
                        // Only the shell of the ring (inner cells already done).
                        let cheb = (kx - center[0])
                            .abs()
                            .max((ky - center[1]).abs())
                            .max((kz - center[2]).abs());
                        if cheb != ring {
                            continue;
                        }
                        if kx < 0
                            || ky < 0
                            || kz < 0
                            || kx >= self.dims[0]
                            || ky >= self.dims[1]
                            || kz >= self.dims[2]
                        {
                            continue;
                        }
                        scanned_any = true;
                        if let Some(ids) = self.buckets.get(&[kx, ky, kz]) {
                            for &i in ids {
                                let d = dist(p, &self.points[i as usize]);
                                if d < best {
                                    best = d;
                                }
                            }
                        }
                    }
                }
            }
            // A point in ring k is at least (k-1)*cell away; once that lower
            // bound exceeds the best distance the search is complete.
            let next_lower_bound = (ring as f64) * self.cell;
            if best <= next_lower_bound || (ring > max_ring && !scanned_any && best.is_finite()) {
                return best;
            }
            if ring > max_ring + 2 {
                // Every cell scanned.
                return best;
            }
            ring += 1;
        }
    }
}

fn directed_mean_grid(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let grid = PointGrid::build(to);
    let mut sum = 0.0;
    for p in from {
        sum += grid.nearest(p);
    }
    sum / from.len() as f64
}

/// Symmetric Chamfer distance via a uniform-grid exact nearest-neighbor
/// search. Matches [`chamfer_brute`] to within float identity.
pub fn chamfer(p: &[[f64; 3]], q: &[[f64; 3]]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("chamfer: empty point set".into()));
    }
    Ok(directed_mean_grid(p, q) + directed_mean_grid(q, p))
}

/// How depth/point/translation scales are aligned before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleNorm {
    /// Compare raw metric values.
    Off,
    /// Divide predictions and ground truth by the median ground-truth scene depth.
    GtMedian,
    /// Divide each side by its own median depth (fixes global scale ambiguity).
    PerPrediction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub scale_norm: ScaleNorm,
    pub delta_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            scale_norm: ScaleNorm::GtMedian,
            delta_threshold: 1.25,
        }
    }
}

/// Per-frame geometric prediction for one multi-view scene.
#[derive(Debug, Clone)]
pub struct ScenePrediction {
    /// `[qw,qx,qy,qz,tx,ty,tz,fov]` per view, pose relative to view 0.
    pub poses: Vec<[f64; 8]>,
    /// Per view, H*W.
    pub depths: Vec<Vec<f32>>,
    /// Per view, H*W*3 reference-frame coordinates.
    pub points: Vec<Vec<f32>>,
}

/// Anything that maps a multi-view scene to geometric outputs.
///
/// Real models must only consume the RGB views; oracle/baseline predictors
/// used in tests may look at the ground truth.
pub trait ScenePredictor {
    fn predict(&self, sample: &MultiViewSample) -> Result<ScenePrediction>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub rpe_t: f64,
    pub rpe_r: f64,
    pub absrel: f64,
    pub delta: f64,
    pub cd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset_hash: String,
    pub checkpoint_hash: String,
    pub per_scene: Vec<SceneMetrics>,
    pub aggregate: SceneMetrics,
}

fn median(values: &mut Vec<f64>) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of empty set".into()));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(values[values.len() / 2])
}

/// Evaluate one scene prediction against ground truth.
pub fn evaluate_sample(
    pred: &ScenePrediction,
    sample: &MultiViewSample,
    opts: &EvalOptions,
) -> Result<SceneMetrics> {
    let n = sample.n_views();
    if pred.poses.len() != n || pred.depths.len() != n || pred.points.len() != n {
        return Err(Error::contract("prediction view count mismatch"));
    }

    let mut gt_depths: Vec<f64> = Vec::new();
    for (view, mask) in sample.views.iter().zip(&sample.valid_masks) {
        for (i, ok) in mask.iter().enumerate() {
            if *ok {
                gt_depths.push(view.depth[i] as f64);
            }
        }
    }
    let gt_scale = median(&mut gt_depths)?;

    let (pred_scale, gt_side_scale) = match opts.scale_norm {
        ScaleNorm::Off => (1.0, 1.0),
        ScaleNorm::GtMedian => (gt_scale, gt_scale),
        ScaleNorm::PerPrediction => {
            let mut pd: Vec<f64> = Vec::new();
            for (d, mask) in pred.depths.iter().zip(&sample.valid_masks) {
                for (i, ok) in mask.iter().enumerate() {
                    if *ok && d[i].is_finite() && d[i] > 0.0 {
                        pd.push(d[i] as f64);
                    }
                }
            }
            (median(&mut pd).unwrap_or(1.0), gt_scale)
        }
    };

    // Pose trajectories (scaled translations).
    let mut pred_poses = Vec::with_capacity(n);
    let mut gt_poses = Vec::with_capacity(n);
    for (i, view) in sample.views.iter().enumerate() {
        let mut p = Pose::from_pose_vector(&pred.poses[i])?;
        p.translation /= pred_scale;
        pred_poses.push(p);
        let mut g = Pose::from_camera(&view.camera);
        g.translation /= gt_side_scale;
        gt_poses.push(g);
    }
    let (rpe_t, rpe_r) = if n >= 2 {
        rpe(&pred_poses, &gt_poses)?
    } else {
        (0.0, 0.0)
    };

    // Depth metrics over all views jointly.
    let mut pd: Vec<f32> = Vec::new();
    let mut gd: Vec<f32> = Vec::new();
    let mut mask: Vec<bool> = Vec::new();
    for i in 0..n {
        for (px, (gx, ok)) in pred.depths[i]
            .iter()
            .zip(sample.views[i].depth.iter().zip(&sample.valid_masks[i]))
        {
            pd.push(px / pred_scale as f32);
            gd.push(gx / gt_side_scale as f32);
            mask.push(*ok);
        }
    }
    let absrel_v = absrel(&pd, &gd, &mask)?;
    let delta_v = delta_metric(&pd, &gd, &mask, opts.delta_threshold)?;

    // Chamfer between predicted and ground-truth point clouds at valid pixels.
    let mut p_pts: Vec<[f64; 3]> = Vec::new();
    let mut g_pts: Vec<[f64; 3]> = Vec::new();
    for i in 0..n {
        let pm = &pred.points[i];
        let gm = &sample.point_maps[i];
        for (px, ok) in sample.valid_masks[i].iter().enumerate() {
            if *ok {
                p_pts.push([
                    pm[3 * px] as f64 / pred_scale,
                    pm[3 * px + 1] as f64 / pred_scale,
                    pm[3 * px + 2] as f64 / pred_scale,
                ]);
                g_pts.push([
                    gm[3 * px] as f64 / gt_side_scale,
                    gm[3 * px + 1] as f64 / gt_side_scale,
                    gm[3 * px + 2] as f64 / gt_side_scale,
                ]);
            }
        }
    }
    let cd = chamfer(&p_pts, &g_pts)?;

    Ok(SceneMetrics {
        rpe_t,
        rpe_r,
        absrel: absrel_v,
        delta: delta_v,
        cd,
    })
}

/// Evaluate a predictor over a dataset; aggregate is the per-scene mean.
pub fn evaluate_model(
    predictor: &dyn ScenePredictor,
    samples: &[MultiViewSample],
    opts: &EvalOptions,
    dataset_hash: String,
    checkpoint_hash: String,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluate_model: no samples".into()));
    }
    let mut per_scene = Vec::with_capacity(samples.len());
    for sample in samples {
        let pred = predictor.predict(sample)?;
        per_scene.push(evaluate_sample(&pred, sample, opts)?);
    }
    let k = per_scene.len() as f64;
    let aggregate = SceneMetrics {
        rpe_t: per_scene.iter().map(|m| m.rpe_t).sum::<f64>() / k,
        rpe_r: per_scene.iter().map(|m| m.rpe_r).sum::<f64>() / k,
        absrel: per_scene.iter().map(|m| m.absrel).sum::<f64>() / k,
        delta: per_scene.iter().map(|m| m.delta).sum::<f64>() / k,
        cd: per_scene.iter().map(|m| m.cd).sum::<f64>() / k,
    };
    Ok(MetricsReport {
        dataset_hash,
        checkpoint_hash,
        per_scene,
        aggregate,
    })
}

/// Returns the ground truth itself (oracle upper bound for tests/baselines).
pub struct OraclePredictor;

impl ScenePredictor for OraclePredictor {
    fn predict(&self, sample: &MultiViewSample) -> Result<ScenePrediction> {
        Ok(ScenePrediction {
            poses: sample.pose_targets(),
            depths: sample.views.iter().map(|v| v.depth.clone()).collect(),
            points: sample.point_maps.clone(),
        })
    }
}

/// Predicts one constant depth everywhere (sanity lower bound). Points are
/// the unprojection of that constant depth; poses are identity.
pub struct ConstantDepthPredictor {
    pub depth: f32,
}

impl ScenePredictor for ConstantDepthPredictor {
    fn predict(&self, sample: &MultiViewSample) -> Result<ScenePrediction> {
        let n = sample.n_views();
        let hw = sample.height * sample.width;
        let mut poses = vec![[0.0f64; 8]; n];
        for p in poses.iter_mut() {
            p[0] = 1.0;
            p[7] = sample.views[0].camera.fov_v();
        }
        let mut depths = Vec::with_capacity(n);
        let mut points = Vec::with_capacity(n);
        for view in &sample.views {
            let depth = vec![self.depth; hw];
            let (pts, _) = crate::scene::unproject_depth(&depth, &view.camera);
            depths.push(depth);
            points.push(pts);
        }
        Ok(ScenePrediction {
            poses,
            depths,
            points,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(-3.0..3.0);
        let rotation = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let translation = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        Pose::new(rotation, translation)
    }

    #[test]
    fn rpe_identity() {
        let mut rng = crate::rng::stream(0, "rpe-test", &[]);
        let traj: Vec<Pose> = (0..5).map(|_| random_pose(&mut rng)).collect();
        let (t, r) = rpe(&traj, &traj).unwrap();
        assert!(t < 1e-12);
        assert!(r < 1e-9);
    }

    #[test]
    fn rpe_invariant_to_shared_world_transform() {
        let mut rng = crate::rng::stream(1, "rpe-test", &[]);
        let gt: Vec<Pose> = (0..6).map(|_| random_pose(&mut rng)).collect();
        let pred: Vec<Pose> = (0..6).map(|_| random_pose(&mut rng)).collect();
        let (t0, r0) = rpe(&pred, &gt).unwrap();
        let g = random_pose(&mut rng);
        let gt2: Vec<Pose> = gt.iter().map(|p| p.compose(&g)).collect();
        let pred2: Vec<Pose> = pred.iter().map(|p| p.compose(&g)).collect();
        let (t1, r1) = rpe(&pred2, &gt2).unwrap();
        assert!((t0 - t1).abs() < 1e-9, "{t0} vs {t1}");
        assert!((r0 - r1).abs() < 1e-9, "{r0} vs {r1}");
    }

    #[test]
    fn rpe_ninety_degree_hand_case() {
        let gt = vec![Pose::identity(), Pose::identity()];
        let rot = UnitQuaternion::from_axis_angle(
            &Vector3::z_axis(),
            std::f64::consts::FRAC_PI_2,
        );
        let pred = vec![Pose::identity(), Pose::new(rot, Vector3::zeros())];
        let (t, r) = rpe(&pred, &gt).unwrap();
        assert!(t < 1e-12);
        assert!((r - 90.0).abs() < 1e-9);
    }

    #[test]
    fn rpe_length_mismatch() {
        let a = vec![Pose::identity(), Pose::identity()];
        let b = vec![Pose::identity()];
        assert!(rpe(&a, &b).is_err());
    }

    #[test]
    fn absrel_hand_values() {
        let gt = [1.0f32, 2.0];
        let pred = [1.1f32, 1.8];
        let mask = [true, true];
        let v = absrel(&pred, &gt, &mask).unwrap();
        assert!((v - 0.1).abs() < 1e-7, "{v}");
        assert_eq!(absrel(&gt, &gt, &mask).unwrap(), 0.0);
        let double: Vec<f32> = gt.iter().map(|x| 2.0 * x).collect();
        let v = absrel(&double, &gt, &mask).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn absrel_empty_mask_errors() {
        let err = absrel(&[1.0], &[1.0], &[false]).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }

    #[test]
    fn delta_hand_values() {
        let gt = [1.0f32; 4];
        let pred = [1.1f32, 1.3, 0.9, 0.7];
        let mask = [true; 4];
        let v = delta_metric(&pred, &gt, &mask, 1.25).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
        assert_eq!(delta_metric(&gt, &gt, &mask, 1.25).unwrap(), 1.0);
        // Exactly at the boundary: strict inequality.
        let boundary = [1.25f32; 4];
        assert_eq!(delta_metric(&boundary, &gt, &mask, 1.25).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_hand_values() {
        let p = vec![[0.0, 0.0, 0.0]];
        let q = vec![[1.0, 0.0, 0.0]];
        assert!((chamfer_brute(&p, &q).unwrap() - 2.0).abs() < 1e-12);
        assert!((chamfer(&p, &q).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        assert!(chamfer(&p, &[]).is_err());
    }

    #[test]
    fn chamfer_grid_matches_brute() {
        let mut rng = crate::rng::stream(2, "chamfer-test", &[]);
        let gen = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<[f64; 3]> {
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-0.2..0.8),
                    ]
                })
                .collect()
        };
        let p = gen(&mut rng, 1000);
        let q = gen(&mut rng, 1000);
        let fast = chamfer(&p, &q).unwrap();
        let brute = chamfer_brute(&p, &q).unwrap();
        assert!(
            (fast - brute).abs() < 1e-9,
            "grid {fast} vs brute {brute}"
        );
    }

    #[test]
    fn chamfer_symmetry_and_translation_bound() {
        let mut rng = crate::rng::stream(3, "chamfer-test", &[]);
        let p: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        let q: Vec<[f64; 3]> = (0..150)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        assert_eq!(chamfer(&p, &q).unwrap(), chamfer(&q, &p).unwrap());

        let v = [0.3f64, -0.2, 0.1];
        let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let q2: Vec<[f64; 3]> = q
            .iter()
            .map(|p| [p[0] + v[0], p[1] + v[1], p[2] + v[2]])
            .collect();
        let before = chamfer(&p, &q).unwrap();
        let after = chamfer(&p, &q2).unwrap();
        assert!((after - before).abs() <= 2.0 * vn + 1e-12);
    }
}
