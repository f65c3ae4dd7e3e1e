//! Prediction heads over encoder features: a camera-pose transformer head
//! and dense (depth / point-map) heads that fuse the four tapped feature
//! levels coarse-to-fine. Head topology (level count, fusion width,
//! refinement depth) is identical between teacher and student; only the
//! input projections follow the respective embed dims.

use crate::encoder::{count_parameters as count_encoder_parameters, Encoder, EncoderConfig, EncoderOutput};
use crate::error::{Error, Result};
use crate::metrics::{ScenePrediction, ScenePredictor};
use crate::nn::{bilinear_resize, Conv2d, Init, Linear, ParamBuilder, ParamSet, TransformerLayer};
use crate::scene::MultiViewSample;
use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    /// Channel width of the dense fusion trunk.
    pub fusion_width: usize,
    /// Residual 3x3 conv pairs per fusion level.
    pub refinement_convs: usize,
    /// Self-attention layers in the camera head.
    pub camera_layers: usize,
    pub camera_heads: usize,
    /// Channel width of the output stage after fusion.
    pub mid_channels: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            fusion_width: 64,
            refinement_convs: 2,
            camera_layers: 2,
            camera_heads: 4,
            mid_channels: 32,
        }
    }
}

/// 3x3 convolution with edge-replicate padding, so constant feature maps
/// stay spatially constant through the stack.
#[derive(Clone)]
struct SameConv {
    conv: Conv2d,
    kernel: usize,
}

impl SameConv {
    fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    ) -> Result<Self> {
        // Padding handled manually (replicate), so build with stride 1 and
        // zero padding via a 1x1-equivalent config.
        let fan_in = in_ch * kernel * kernel;
        let w = pb.tensor(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::KaimingNormal { fan_in },
        )?;
        let b = pb.tensor(&format!("{name}.bias"), &[out_ch], Init::Zeros)?;
        let cfg = candle_nn::Conv2dConfig {
            padding: 0,
            stride: 1,
            dilation: 1,
            groups: 1,
        };
        Ok(SameConv {
            conv: Conv2d::from_parts(candle_nn::Conv2d::new(w, Some(b), cfg)),
            kernel,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pad = self.kernel / 2;
        let x = if pad > 0 {
            x.pad_with_same(2, pad, pad)?.pad_with_same(3, pad, pad)?
        } else {
            x.clone()
        };
        self.conv.forward(&x)
    }
}

/// Residual refinement: `x + conv2(gelu(conv1(x)))`, repeated per config.
#[derive(Clone)]
struct RefineBlock {
    convs: Vec<SameConv>,
}

impl RefineBlock {
    fn new(pb: &mut ParamBuilder, name: &str, width: usize, n_convs: usize) -> Result<Self> {
        let convs = (0..n_convs)
            .map(|i| SameConv::new(pb, &format!("{name}.conv{i}"), width, width, 3))
            .collect::<Result<Vec<_>>>()?;
        Ok(RefineBlock { convs })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(&y)?;
            if i + 1 < self.convs.len() {
                y = y.gelu()?;
            }
        }
        (x + y).map_err(Into::into)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseMode {
    /// One channel through exp: strictly positive output.
    Depth,
    /// Three linear channels (reference-frame coordinates).
    Points,
}

/// Dense prediction head: per level, drop special tokens, project patch
/// tokens to the fusion width, reshape to a grid, resample to a
/// level-specific scale, then fuse coarse-to-fine with residual conv
/// refinement and bilinearly upsample to the input resolution.
pub struct DenseHead {
    mode: DenseMode,
    proj: Vec<Linear>,
    refine: Vec<RefineBlock>,
    out_conv1: SameConv,
    out_conv2: SameConv,
    out_proj: SameConv,
}

impl DenseHead {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        embed_dim: usize,
        cfg: &HeadConfig,
        mode: DenseMode,
    ) -> Result<Self> {
        let f = cfg.fusion_width;
        let proj = (0..4)
            .map(|i| Linear::new(pb, &format!("{name}.proj{i}"), embed_dim, f))
            .collect::<Result<Vec<_>>>()?;
        let refine = (0..4)
            .map(|i| RefineBlock::new(pb, &format!("{name}.refine{i}"), f, cfg.refinement_convs))
            .collect::<Result<Vec<_>>>()?;
        let out_ch = match mode {
            DenseMode::Depth => 1,
            DenseMode::Points => 3,
        };
        Ok(DenseHead {
            mode,
            proj,
            refine,
            out_conv1: SameConv::new(pb, &format!("{name}.out_conv1"), f, cfg.mid_channels, 3)?,
            out_conv2: SameConv::new(
                pb,
                &format!("{name}.out_conv2"),
                cfg.mid_channels,
                cfg.mid_channels,
                3,
            )?,
            out_proj: SameConv::new(pb, &format!("{name}.out_proj"), cfg.mid_channels, out_ch, 1)?,
        })
    }

    /// `levels`: exactly 4 tensors of shape `(B, N, S, D)` ordered from the
    /// earliest tapped block to the last. Returns `(B*N, out_ch, H, W)`.
    pub fn forward(
        &self,
        levels: &[Tensor],
        special_tokens: usize,
        patch_grid: (usize, usize),
        resolution: (usize, usize),
    ) -> Result<Tensor> {
        if levels.len() != 4 {
            return Err(Error::contract(format!(
                "dense head expects exactly 4 feature levels, got {}",
                levels.len()
            )));
        }
        let (gh, gw) = patch_grid;
        let (out_h, out_w) = resolution;
        // Level spatial scales: earliest tap at 2x the patch grid, then
        // progressively coarser.
        let scales = [
            (2 * gh, 2 * gw),
            (gh, gw),
            ((gh / 2).max(1), (gw / 2).max(1)),
            ((gh / 4).max(1), (gw / 4).max(1)),
        ];
        let mut grids = Vec::with_capacity(4);
        for (i, level) in levels.iter().enumerate() {
            let (b, n, s, _d) = level.dims4()?;
            let t = s - special_tokens;
            let patches = level.narrow(2, special_tokens, t)?;
            let projected = self.proj[i].forward(&patches)?; // (B,N,T,F)
            let f = projected.dim(3)?;
            let grid = projected
                .reshape((b * n, gh, gw, f))?
                .permute((0, 3, 1, 2))?
                .contiguous()?;
            grids.push(bilinear_resize(&grid, scales[i].0, scales[i].1)?);
        }
        // Coarse-to-fine fusion.
        let mut fused = self.refine[3].forward(&grids[3])?;
        for i in (0..3).rev() {
            fused = bilinear_resize(&fused, scales[i].0, scales[i].1)?;
            fused = (fused + &grids[i])?;
            fused = self.refine[i].forward(&fused)?;
        }
        // Output stage: light convs with one intermediate upsample.
        let x = self.out_conv1.forward(&fused)?.gelu()?;
        let x = bilinear_resize(&x, (out_h / 2).max(1), (out_w / 2).max(1))?;
        let x = self.out_conv2.forward(&x)?.gelu()?;
        let x = bilinear_resize(&x, out_h, out_w)?;
        let x = self.out_proj.forward(&x)?;
        match self.mode {
            DenseMode::Depth => Ok(x.exp()?),
            DenseMode::Points => Ok(x),
        }
    }
}

/// Camera head: self-attention over the per-frame camera tokens followed by
/// a linear map to 8 values `[quat(4), translation(3), fov(1)]`. The
/// quaternion is hard-normalized with `w >= 0`; fov goes through softplus.
pub struct CameraHead {
    layers: Vec<TransformerLayer>,
    out: Linear,
}

fn softplus(x: &Tensor) -> Result<Tensor> {
    // max(x, 0) + ln(1 + exp(-|x|)), overflow-safe.
    let relu = x.relu()?;
    let neg_abs = x.abs()?.neg()?;
    Ok((relu + (neg_abs.exp()? + 1.0)?.log()?)?)
}

impl CameraHead {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        embed_dim: usize,
        cfg: &HeadConfig,
    ) -> Result<Self> {
        let layers = (0..cfg.camera_layers)
            .map(|i| {
                TransformerLayer::new(
                    pb,
                    &format!("{name}.layer{i}"),
                    embed_dim,
                    cfg.camera_heads,
                    4.0,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CameraHead {
            layers,
            out: Linear::new(pb, &format!("{name}.out"), embed_dim, 8)?,
        })
    }

    /// `camera_tokens`: `(B, N, D)` -> `(B, N, 8)`.
    pub fn forward(&self, camera_tokens: &Tensor) -> Result<Tensor> {
        let mut x = camera_tokens.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        let raw = self.out.forward(&x)?;
        let q = raw.narrow(2, 0, 4)?;
        let t = raw.narrow(2, 4, 3)?;
        let fov = softplus(&raw.narrow(2, 7, 1)?)?;
        // Normalize and canonicalize w >= 0. The sign factor is built from a
        // comparison, so it acts as a constant under autodiff.
        let norm = (q.sqr()?.sum_keepdim(2)? + 1e-12)?.sqrt()?;
        let q = q.broadcast_div(&norm)?;
        let w = q.narrow(2, 0, 1)?;
        let sign = (w.ge(0.0)?.to_dtype(q.dtype())? * 2.0)?.affine(1.0, -1.0)?;
        let q = q.broadcast_mul(&sign)?;
        Tensor::cat(&[&q, &t, &fov], 2).map_err(Into::into)
    }
}

/// Per-frame geometric outputs of the full model.
pub struct GeometricOutput {
    /// `(B, N, 8)`: normalized quaternion (w>=0), translation, fov.
    pub theta: Tensor,
    /// `(B, N, H, W)`, strictly positive by construction.
    pub depth: Tensor,
    /// `(B, N, H, W, 3)` reference-frame coordinates.
    pub points: Tensor,
}

/// Encoder plus all prediction heads.
pub struct GeometryModel {
    pub encoder: Encoder,
    camera: CameraHead,
    depth_head: DenseHead,
    point_head: DenseHead,
    head_cfg: HeadConfig,
}

impl GeometryModel {
    pub fn new(pb: &mut ParamBuilder, enc_cfg: &EncoderConfig, head_cfg: &HeadConfig) -> Result<Self> {
        let encoder = Encoder::new(pb, "encoder", enc_cfg)?;
        let camera = CameraHead::new(pb, "camera_head", enc_cfg.embed_dim, head_cfg)?;
        let depth_head = DenseHead::new(pb, "depth_head", enc_cfg.embed_dim, head_cfg, DenseMode::Depth)?;
        let point_head = DenseHead::new(pb, "point_head", enc_cfg.embed_dim, head_cfg, DenseMode::Points)?;
        Ok(GeometryModel {
            encoder,
            camera,
            depth_head,
            point_head,
            head_cfg: head_cfg.clone(),
        })
    }

    pub fn head_config(&self) -> &HeadConfig {
        &self.head_cfg
    }

    pub fn forward_from_encoded(&self, encoded: &EncoderOutput) -> Result<GeometricOutput> {
        let cfg = self.encoder.config();
        let (b, n, _s, _d) = encoded.tokens.dims4()?;
        let theta = self.camera.forward(&encoded.camera_tokens()?)?;
        let (h, w) = (cfg.height, cfg.width);
        let depth = self
            .depth_head
            .forward(
                &encoded.intermediates,
                cfg.special_tokens(),
                cfg.patch_grid(),
                (h, w),
            )?
            .reshape((b, n, h, w))?;
        let points = self
            .point_head
            .forward(
                &encoded.intermediates,
                cfg.special_tokens(),
                cfg.patch_grid(),
                (h, w),
            )?
            .permute((0, 2, 3, 1))?
            .contiguous()?
            .reshape((b, n, h, w, 3))?;
        Ok(GeometricOutput {
            theta,
            depth,
            points,
        })
    }

    /// `images`: `(B, N, 3, H, W)` -> geometric outputs. Deterministic in
    /// eval mode (the model has no stochastic layers).
    pub fn forward(&self, images: &Tensor) -> Result<GeometricOutput> {
        let encoded = self.encoder.forward(images)?;
        self.forward_from_encoded(&encoded)
    }
}

/// Sidecar configuration stored next to model weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    pub dtype: String,
    pub param_hash: String,
}

/// Save weights + config sidecar into `dir` (`model.safetensors`, `config.json`).
pub fn save_model(dir: &Path, enc_cfg: &EncoderConfig, head_cfg: &HeadConfig, params: &ParamSet) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    params.save(&dir.join("model.safetensors"))?;
    let hash = params.content_hash()?;
    let cfg = ModelConfig {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        encoder: enc_cfg.clone(),
        heads: head_cfg.clone(),
        dtype: "f32".to_string(),
        param_hash: hash.clone(),
    };
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    Ok(hash)
}

/// Load a model checkpoint; `trainable` controls whether weights become
/// autodiff variables or frozen tensors.
pub fn load_model(dir: &Path, trainable: bool) -> Result<(GeometryModel, ParamSet, ModelConfig)> {
    let cfg_path = dir.join("config.json");
    let text = std::fs::read_to_string(&cfg_path)
        .map_err(|e| Error::load(&cfg_path, format!("cannot read checkpoint config: {e}")))?;
    let cfg: ModelConfig = serde_json::from_str(&text)
        .map_err(|e| Error::load(&cfg_path, format!("corrupt checkpoint config: {e}")))?;
    if cfg.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::load(&cfg_path, "unsupported checkpoint schema version"));
    }
    cfg.encoder.validate()?;
    let weights = crate::nn::load_weights(&dir.join("model.safetensors"))?;
    let mut pb = ParamBuilder::from_weights(DType::F32, weights, trainable);
    let model = GeometryModel::new(&mut pb, &cfg.encoder, &cfg.heads)?;
    let params = pb.finish();
    let hash = params.content_hash()?;
    if hash != cfg.param_hash {
        return Err(Error::load(
            dir.join("model.safetensors"),
            "weight hash does not match checkpoint config",
        ));
    }
    Ok((model, params, cfg))
}

/// Exact parameter count of encoder + heads for a config pair.
pub fn count_model_parameters(enc_cfg: &EncoderConfig, head_cfg: &HeadConfig) -> Result<usize> {
    let rng = crate::rng::stream(0, "param-count", &[]);
    let mut pb = ParamBuilder::init(DType::F32, rng);
    let _ = GeometryModel::new(&mut pb, enc_cfg, head_cfg)?;
    Ok(pb.finish().count())
}

/// Encoder-only parameter count re-exported for convenience.
pub fn count_backbone_parameters(enc_cfg: &EncoderConfig) -> Result<usize> {
    count_encoder_parameters(enc_cfg)
}

/// Convert stored HWC `[0,1]` images into an `(N, 3, H, W)` tensor.
pub fn images_to_tensor(images: &[Vec<f32>], h: usize, w: usize, device: &Device) -> Result<Tensor> {
    let n = images.len();
    let mut data = vec![0f32; n * 3 * h * w];
    for (i, img) in images.iter().enumerate() {
        if img.len() != h * w * 3 {
            return Err(Error::contract("image buffer size mismatch"));
        }
        for v in 0..h {
            for u in 0..w {
                for c in 0..3 {
                    data[((i * 3 + c) * h + v) * w + u] = img[(v * w + u) * 3 + c];
                }
            }
        }
    }
    Tensor::from_vec(data, (n, 3, h, w), device).map_err(Into::into)
}

impl ScenePredictor for GeometryModel {
    fn predict(&self, sample: &MultiViewSample) -> Result<ScenePrediction> {
        let (h, w) = (sample.height, sample.width);
        let rgbs: Vec<Vec<f32>> = sample.views.iter().map(|v| v.rgb.clone()).collect();
        let images = images_to_tensor(&rgbs, h, w, &Device::Cpu)?.unsqueeze(0)?;
        let out = self.forward(&images)?;
        let n = sample.n_views();
        let theta = out.theta.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let mut poses = Vec::with_capacity(n);
        for i in 0..n {
            let mut p = [0f64; 8];
            p.copy_from_slice(&theta[i * 8..(i + 1) * 8]);
            poses.push(p);
        }
        let depth_flat = out.depth.flatten_all()?.to_vec1::<f32>()?;
        let depths = depth_flat.chunks(h * w).map(|c| c.to_vec()).collect();
        let pts_flat = out.points.flatten_all()?.to_vec1::<f32>()?;
        let points = pts_flat.chunks(h * w * 3).map(|c| c.to_vec()).collect();
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
    use crate::encoder::Role;
    use rand::Rng;

    fn tiny_enc_cfg() -> EncoderConfig {
        EncoderConfig {
            role: Role::Student,
            patch_size: 8,
            embed_dim: 32,
            num_heads: 4,
            num_blocks: 4,
            mlp_ratio: 2.0,
            num_register_tokens: 2,
            tap_indices: vec![1, 2, 3, 4],
            height: 16,
            width: 16,
        }
    }

    fn tiny_head_cfg() -> HeadConfig {
        HeadConfig {
            fusion_width: 16,
            refinement_convs: 2,
            camera_layers: 1,
            camera_heads: 2,
            mid_channels: 8,
        }
    }

    fn build_model(seed: u64) -> GeometryModel {
        let rng = crate::rng::stream(seed, "heads-test", &[]);
        let mut pb = ParamBuilder::init(DType::F32, rng);
        GeometryModel::new(&mut pb, &tiny_enc_cfg(), &tiny_head_cfg()).unwrap()
    }

    fn random_images(b: usize, n: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = crate::rng::stream(seed, "heads-imgs", &[]);
        let data: Vec<f32> = (0..b * n * 3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(data, (b, n, 3, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn full_forward_shape_contract() {
        let model = build_model(0);
        let images = random_images(1, 4, 16, 16, 1);
        let out = model.forward(&images).unwrap();
        assert_eq!(out.theta.dims(), &[1, 4, 8]);
        assert_eq!(out.depth.dims(), &[1, 4, 16, 16]);
        assert_eq!(out.points.dims(), &[1, 4, 16, 16, 3]);
    }

    #[test]
    fn quaternion_normalized_and_canonical() {
        let model = build_model(3);
        let images = random_images(1, 3, 16, 16, 4);
        let out = model.forward(&images).unwrap();
        let theta = out.theta.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for f in 0..3 {
            let q = &theta[f * 8..f * 8 + 4];
            let norm: f32 = q.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
            assert!(q[0] >= 0.0, "w must be canonicalized non-negative");
            let fov = theta[f * 8 + 7];
            assert!(fov > 0.0);
        }
    }

    #[test]
    fn single_frame_pose_shape() {
        let model = build_model(5);
        let images = random_images(1, 1, 16, 16, 6);
        let out = model.forward(&images).unwrap();
        assert_eq!(out.theta.dims(), &[1, 1, 8]);
    }

    #[test]
    fn depth_positive_under_random_weights() {
        for seed in 0..3 {
            let model = build_model(seed);
            let images = random_images(1, 2, 16, 16, seed + 10);
            let out = model.forward(&images).unwrap();
            let depth = out.depth.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            for d in depth {
                assert!(d.is_finite() && d > 0.0, "depth {d}");
            }
        }
    }

    #[test]
    fn eval_repeatability_bit_exact() {
        let model = build_model(7);
        let images = random_images(1, 2, 16, 16, 8);
        let a = model.forward(&images).unwrap();
        let b = model.forward(&images).unwrap();
        let av = a.depth.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let bv = b.depth.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(av, bv);
    }

    #[test]
    fn wrong_level_count_is_contract_error() {
        let rng = crate::rng::stream(0, "heads-test", &[]);
        let mut pb = ParamBuilder::init(DType::F32, rng);
        let head = DenseHead::new(&mut pb, "d", 32, &tiny_head_cfg(), DenseMode::Depth).unwrap();
        let lvl = Tensor::zeros((1, 1, 7, 32), DType::F32, &Device::Cpu).unwrap();
        let err = head
            .forward(&[lvl.clone(), lvl.clone(), lvl], 3, (2, 2), (16, 16))
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn zeroed_levels_give_constant_map() {
        let rng = crate::rng::stream(1, "heads-test", &[]);
        let mut pb = ParamBuilder::init(DType::F32, rng);
        let head = DenseHead::new(&mut pb, "d", 32, &tiny_head_cfg(), DenseMode::Depth).unwrap();
        let lvl = Tensor::zeros((1, 2, 7, 32), DType::F32, &Device::Cpu).unwrap();
        let out = head
            .forward(&[lvl.clone(), lvl.clone(), lvl.clone(), lvl], 3, (2, 2), (16, 16))
            .unwrap();
        let vals = out.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let per_frame = 16 * 16;
        for frame in vals.chunks(per_frame) {
            let first = frame[0];
            for v in frame {
                assert!(
                    (v - first).abs() < 1e-6 * first.abs().max(1.0),
                    "map not constant: {v} vs {first}"
                );
            }
        }
    }

    #[test]
    fn head_topology_parity_between_roles() {
        let shared = HeadConfig::default();
        // Same topology object drives both models; embed dims differ.
        let teacher = EncoderConfig::teacher();
        let student = EncoderConfig::student();
        assert_eq!(shared.fusion_width, 64);
        let t = count_model_parameters(&teacher, &shared).unwrap();
        let s = count_model_parameters(&student, &shared).unwrap();
        let ratio = s as f64 / t as f64;
        assert!(ratio <= 0.25, "student/teacher parameter ratio {ratio:.3}");
    }

    #[test]
    fn dense_head_gradient_check_f64() {
        use candle_core::Var;
        let rng = crate::rng::stream(11, "heads-test", &[]);
        let mut pb = ParamBuilder::init(DType::F64, rng);
        let cfg = HeadConfig {
            fusion_width: 8,
            refinement_convs: 2,
            camera_layers: 1,
            camera_heads: 2,
            mid_channels: 4,
        };
        let head = DenseHead::new(&mut pb, "d", 16, &cfg, DenseMode::Depth).unwrap();
        let set = pb.finish();
        let mut rng = crate::rng::stream(12, "heads-test", &[]);
        let data: Vec<f64> = (0..1 * 1 * 7 * 16).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let lvl = Var::from_tensor(
            &Tensor::from_vec(data, (1, 1, 7, 16), &Device::Cpu).unwrap(),
        )
        .unwrap();
        let loss_fn = || {
            let t = lvl.as_tensor().clone();
            let out = head.forward(&[t.clone(), t.clone(), t.clone(), t], 3, (2, 2), (16, 16))?;
            Ok(out.sqr()?.mean_all()?)
        };
        let mut vars = set.trainable_vars();
        vars.push(lvl.clone());
        let mut probe = crate::rng::stream(13, "heads-test", &[]);
        let max_rel = crate::nn::grad_check(&loss_fn, &vars[..4], 1e-5, 2, &mut probe).unwrap();
        assert!(max_rel < 1e-4, "dense head gradient mismatch: {max_rel}");
    }

    #[test]
    fn checkpoint_roundtrip_and_frozen_load() {
        let dir = tempfile::tempdir().unwrap();
        let rng = crate::rng::stream(15, "heads-test", &[]);
        let mut pb = ParamBuilder::init(DType::F32, rng);
        let enc_cfg = tiny_enc_cfg();
        let head_cfg = tiny_head_cfg();
        let model = GeometryModel::new(&mut pb, &enc_cfg, &head_cfg).unwrap();
        let params = pb.finish();
        let hash = save_model(dir.path(), &enc_cfg, &head_cfg, &params).unwrap();

        let (loaded, loaded_params, cfg) = load_model(dir.path(), false).unwrap();
        assert!(!loaded_params.is_trainable());
        assert_eq!(cfg.param_hash, hash);
        assert_eq!(cfg.encoder, enc_cfg);
        let images = random_images(1, 2, 16, 16, 16);
        let a = model.forward(&images).unwrap().depth;
        let b = loaded.forward(&images).unwrap().depth;
        let av = a.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let bv = b.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(av, bv);
    }
}
