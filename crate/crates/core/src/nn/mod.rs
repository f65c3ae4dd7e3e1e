//! Tensor-backend substrate: deterministic parameter management, the
//! transformer building blocks shared by the encoder, heads, and policies,
//! and checkpoint serialization.
//!
//! All weight initialization draws from a caller-supplied ChaCha stream, so
//! model construction is a pure function of (config, seed). Frozen models are
//! built without `Var`s: their weights are plain tensors invisible to
//! autodiff, which makes "no gradient into the teacher/encoder" a structural
//! property rather than a masked one.

pub mod optim;

use crate::error::{Error, Result};
use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Gaussian with the given standard deviation.
    Normal(f64),
    /// Uniform in `[-limit, limit]` with `limit = sqrt(6 / (fan_in + fan_out))`.
    XavierUniform { fan_in: usize, fan_out: usize },
    /// Gaussian with `std = sqrt(2 / fan_in)`.
    KaimingNormal { fan_in: usize },
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the dependency surface to `rand` itself.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl Init {
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match *self {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => (0..n).map(|_| gaussian(rng) * std).collect(),
            Init::XavierUniform { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
            }
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n).map(|_| gaussian(rng) * std).collect()
            }
        }
    }
}

/// Named parameter registry. Trainable mode wraps every tensor in a `Var`;
/// frozen mode hands out plain tensors that autodiff cannot reach.
pub struct ParamBuilder {
    device: Device,
    dtype: DType,
    rng: ChaCha8Rng,
    trainable: bool,
    pretrained: Option<HashMap<String, Tensor>>,
    vars: Vec<(String, Var)>,
    frozen: Vec<(String, Tensor)>,
}

impl ParamBuilder {
    pub fn init(dtype: DType, rng: ChaCha8Rng) -> Self {
        ParamBuilder {
            device: Device::Cpu,
            dtype,
            rng,
            trainable: true,
            pretrained: None,
            vars: Vec::new(),
            frozen: Vec::new(),
        }
    }

    /// Build from checkpoint weights. `trainable = false` yields a frozen
    /// model whose parameters are structurally outside autodiff.
    pub fn from_weights(
        dtype: DType,
        weights: HashMap<String, Tensor>,
        trainable: bool,
    ) -> Self {
        ParamBuilder {
            device: Device::Cpu,
            dtype,
            rng: crate::rng::stream(0, "unused", &[]),
            trainable,
            pretrained: Some(weights),
            vars: Vec::new(),
            frozen: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> Device {
        self.device.clone()
    }

    /// Register a parameter and return the tensor handle to close over.
    pub fn tensor(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let value = match &self.pretrained {
            Some(map) => {
                let t = map.get(name).ok_or_else(|| {
                    Error::Load {
                        file: "checkpoint".into(),
                        reason: format!("missing weight `{name}`"),
                    }
                })?;
                if t.dims() != dims {
                    return Err(Error::Load {
                        file: "checkpoint".into(),
                        reason: format!(
                            "weight `{name}` has shape {:?}, expected {:?}",
                            t.dims(),
                            dims
                        ),
                    });
                }
                t.to_dtype(self.dtype)?.to_device(&self.device)?
            }
            None => {
                let data = init.sample(n, &mut self.rng);
                Tensor::from_vec(data, dims, &self.device)?.to_dtype(self.dtype)?
            }
        };
        if self.trainable {
            let var = Var::from_tensor(&value)?;
            let handle = var.as_tensor().clone();
            self.vars.push((name.to_string(), var));
            Ok(handle)
        } else {
            self.frozen.push((name.to_string(), value.clone()));
            Ok(value)
        }
    }

    pub fn finish(self) -> ParamSet {
        ParamSet {
            vars: self.vars,
            frozen: self.frozen,
        }
    }
}

/// Parameters of a constructed model, in creation order.
pub struct ParamSet {
    vars: Vec<(String, Var)>,
    frozen: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn is_trainable(&self) -> bool {
        !self.vars.is_empty()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        if self.vars.is_empty() {
            self.frozen.clone()
        } else {
            self.vars
                .iter()
                .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
                .collect()
        }
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.elem_count())
            .sum()
    }

    /// SHA-256 over `(name, shape, little-endian f32 bytes)` in name order.
    pub fn content_hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut entries = self.named_tensors();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut hasher = Sha256::new();
        for (name, t) in entries {
            hasher.update(name.as_bytes());
            for d in t.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            for x in data {
                hasher.update(x.to_le_bytes());
            }
        }
        Ok(format!("{:x}", hasher.finalize()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self.named_tensors().into_iter().collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }
}

/// Load checkpoint weights for [`ParamBuilder::from_weights`].
pub fn load_weights(path: &Path) -> Result<HashMap<String, Tensor>> {
    if !path.exists() {
        return Err(Error::load(path, "weight file does not exist"));
    }
    Ok(candle_core::safetensors::load(path, &Device::Cpu)?)
}

/// Linear layer; weight shape `(out, in)`.
#[derive(Clone)]
pub struct Linear {
    inner: candle_nn::Linear,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let w = pb.tensor(
            &format!("{name}.weight"),
            &[out_dim, in_dim],
            Init::XavierUniform {
                fan_in: in_dim,
                fan_out: out_dim,
            },
        )?;
        let b = pb.tensor(&format!("{name}.bias"), &[out_dim], Init::Zeros)?;
        Ok(Linear {
            inner: candle_nn::Linear::new(w, Some(b)),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::Module::forward(&self.inner, x)?)
    }
}

/// Layer normalization over the last dimension, composed from primitive ops
/// so it differentiates and supports both f32 and f64.
#[derive(Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Result<Self> {
        let weight = pb.tensor(&format!("{name}.weight"), &[dim], Init::Ones)?;
        let bias = pb.tensor(&format!("{name}.bias"), &[dim], Init::Zeros)?;
        Ok(LayerNorm {
            weight,
            bias,
            eps: 1e-6,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dim = x.dim(candle_core::D::Minus1)? as f64;
        let mean = (x.sum_keepdim(candle_core::D::Minus1)? / dim)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = (centered.sqr()?.sum_keepdim(candle_core::D::Minus1)? / dim)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)?)
    }
}

/// Multi-head attention. Self-attention when `context` is `None`,
/// cross-attention (keys/values from `context`) otherwise.
#[derive(Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    num_heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, num_heads: usize) -> Result<Self> {
        if dim % num_heads != 0 {
            return Err(Error::config(format!(
                "embed dim {dim} not divisible by {num_heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(pb, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(pb, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(pb, &format!("{name}.v"), dim, dim)?,
            o: Linear::new(pb, &format!("{name}.o"), dim, dim)?,
            num_heads,
            head_dim: dim / num_heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, s, _) = x.dims3()?;
        Ok(x.reshape((b, s, self.num_heads, self.head_dim))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    pub fn forward(&self, x: &Tensor, context: Option<&Tensor>) -> Result<Tensor> {
        let (b, s, d) = x.dims3()?;
        let kv = context.unwrap_or(x);
        let q = self.split_heads(&self.q.forward(x)?)?;
        let k = self.split_heads(&self.k.forward(kv)?)?;
        let v = self.split_heads(&self.v.forward(kv)?)?;
        let scale = (self.head_dim as f64).powf(-0.5);
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        let attn = candle_nn::ops::softmax(&scores, candle_core::D::Minus1)?;
        let ctx = attn.matmul(&v)?;
        let merged = ctx.transpose(1, 2)?.contiguous()?.reshape((b, s, d))?;
        self.o.forward(&merged)
    }
}

/// Two-layer MLP with GELU.
#[derive(Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(pb, &format!("{name}.fc1"), dim, hidden)?,
            fc2: Linear::new(pb, &format!("{name}.fc2"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

/// Pre-norm residual transformer layer: attention sub-layer + MLP sub-layer.
#[derive(Clone)]
pub struct TransformerLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl TransformerLayer {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        dim: usize,
        num_heads: usize,
        mlp_ratio: f64,
    ) -> Result<Self> {
        let hidden = (dim as f64 * mlp_ratio).round() as usize;
        Ok(TransformerLayer {
            norm1: LayerNorm::new(pb, &format!("{name}.norm1"), dim)?,
            attn: MultiHeadAttention::new(pb, &format!("{name}.attn"), dim, num_heads)?,
            norm2: LayerNorm::new(pb, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::new(pb, &format!("{name}.mlp"), dim, hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.norm1.forward(x)?, None)?)?;
        let x = (&x + self.mlp.forward(&self.norm2.forward(&x)?)?)?;
        Ok(x)
    }
}

/// Pre-norm transformer decoder layer: self-attention, cross-attention to a
/// context sequence, then MLP.
#[derive(Clone)]
pub struct DecoderLayer {
    norm1: LayerNorm,
    self_attn: MultiHeadAttention,
    norm2: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm3: LayerNorm,
    mlp: Mlp,
}

impl DecoderLayer {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        dim: usize,
        num_heads: usize,
        mlp_ratio: f64,
    ) -> Result<Self> {
        let hidden = (dim as f64 * mlp_ratio).round() as usize;
        Ok(DecoderLayer {
            norm1: LayerNorm::new(pb, &format!("{name}.norm1"), dim)?,
            self_attn: MultiHeadAttention::new(pb, &format!("{name}.self_attn"), dim, num_heads)?,
            norm2: LayerNorm::new(pb, &format!("{name}.norm2"), dim)?,
            cross_attn: MultiHeadAttention::new(pb, &format!("{name}.cross_attn"), dim, num_heads)?,
            norm3: LayerNorm::new(pb, &format!("{name}.norm3"), dim)?,
            mlp: Mlp::new(pb, &format!("{name}.mlp"), dim, hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        let x = (x + self.self_attn.forward(&self.norm1.forward(x)?, None)?)?;
        let x = (&x + self.cross_attn.forward(&self.norm2.forward(&x)?, Some(context))?)?;
        let x = (&x + self.mlp.forward(&self.norm3.forward(&x)?)?)?;
        Ok(x)
    }
}

/// 3x3 (or 1x1) convolution with same padding.
#[derive(Clone)]
pub struct Conv2d {
    inner: candle_nn::Conv2d,
}

impl Conv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let w = pb.tensor(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::KaimingNormal { fan_in },
        )?;
        let b = pb.tensor(&format!("{name}.bias"), &[out_ch], Init::Zeros)?;
        let cfg = candle_nn::Conv2dConfig {
            padding: kernel / 2,
            stride,
            dilation: 1,
            groups: 1,
        };
        Ok(Conv2d {
            inner: candle_nn::Conv2d::new(w, Some(b), cfg),
        })
    }

    pub fn from_parts(inner: candle_nn::Conv2d) -> Self {
        Conv2d { inner }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::Module::forward(&self.inner, x)?)
    }
}

/// Bilinear resize along H and W of an NCHW tensor, expressed as two matrix
/// products so it differentiates through the standard matmul backward.
/// Uses the align-corners mapping `src = dst * (in-1)/(out-1)`.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let dev = x.device();
    let dtype = x.dtype();
    let mat = |in_dim: usize, out_dim: usize| -> Result<Tensor> {
        let mut data = vec![0f64; out_dim * in_dim];
        for o in 0..out_dim {
            let src = if out_dim == 1 {
                0.0
            } else {
                o as f64 * (in_dim as f64 - 1.0) / (out_dim as f64 - 1.0)
            };
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_dim - 1);
            let frac = src - lo as f64;
            data[o * in_dim + lo] += 1.0 - frac;
            data[o * in_dim + hi] += frac;
        }
        Ok(Tensor::from_vec(data, (out_dim, in_dim), dev)?.to_dtype(dtype)?)
    };
    let a_h = mat(h, out_h)?; // (out_h, h)
    let a_w = mat(w, out_w)?.t()?.contiguous()?; // (w, out_w)
    let x = x.reshape((b * c, h, w))?;
    let x = a_h.broadcast_matmul(&x)?; // (b*c, out_h, w)
    let x = x.broadcast_matmul(&a_w)?; // (b*c, out_h, out_w)
    Ok(x.reshape((b, c, out_h, out_w))?)
}

/// Sinusoidal embedding for scalar positions (diffusion step, time index).
pub fn sinusoidal_embedding(
    positions: &[f64],
    dim: usize,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = vec![0f64; positions.len() * dim];
    for (i, &p) in positions.iter().enumerate() {
        for j in 0..half {
            let freq = (10_000f64).powf(-(j as f64) / half as f64);
            data[i * dim + j] = (p * freq).sin();
            data[i * dim + half + j] = (p * freq).cos();
        }
    }
    Ok(Tensor::from_vec(data, (positions.len(), dim), device)?.to_dtype(dtype)?)
}

/// Central finite-difference check of autodiff gradients.
///
/// `loss_fn` must recompute the loss from the current values of `vars`.
/// Probes `n_probe` coordinates per variable and returns the maximum
/// relative error between the analytic and numeric gradient.
pub fn grad_check(
    loss_fn: &dyn Fn() -> Result<Tensor>,
    vars: &[Var],
    eps: f64,
    n_probe: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let loss = loss_fn()?;
    let grads = loss.backward()?;
    let mut max_rel = 0.0f64;
    for var in vars {
        let grad = match grads.get(var.as_tensor()) {
            Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; var.elem_count()],
        };
        let base = var
            .as_tensor()
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        let dims = var.dims().to_vec();
        let n = base.len();
        for _ in 0..n_probe.min(n) {
            let idx = rng.gen_range(0..n);
            let mut perturbed = base.clone();
            perturbed[idx] = base[idx] + eps;
            var.set(&Tensor::from_vec(perturbed.clone(), dims.as_slice(), var.device())?
                .to_dtype(var.dtype())?)?;
            let up = loss_fn()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            perturbed[idx] = base[idx] - eps;
            var.set(&Tensor::from_vec(perturbed, dims.as_slice(), var.device())?
                .to_dtype(var.dtype())?)?;
            let down = loss_fn()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            var.set(&Tensor::from_vec(base.clone(), dims.as_slice(), var.device())?
                .to_dtype(var.dtype())?)?;
            let fd = (up - down) / (2.0 * eps);
            let g = grad[idx];
            let denom = fd.abs().max(g.abs()).max(1e-6);
            max_rel = max_rel.max((fd - g).abs() / denom);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_shapes_and_determinism() {
        let rng = crate::rng::stream(0, "nn-test", &[]);
        let mut pb = ParamBuilder::init(DType::F32, rng);
        let lin = Linear::new(&mut pb, "l", 8, 4).unwrap();
        let x = Tensor::ones((2, 3, 8), DType::F32, &Device::Cpu).unwrap();
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 3, 4]);

        let rng2 = crate::rng::stream(0, "nn-test", &[]);
        let mut pb2 = ParamBuilder::init(DType::F32, rng2);
        let lin2 = Linear::new(&mut pb2, "l", 8, 4).unwrap();
        let y2 = lin2.forward(&x).unwrap();
        let a = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = y2.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn param_roundtrip_through_safetensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let rng = crate::rng::stream(1, "nn-test", &[]);
        let mut pb = ParamBuilder::init(DType::F32, rng);
        let _ = Linear::new(&mut pb, "a", 5, 7).unwrap();
        let set = pb.finish();
        set.save(&path).unwrap();
        let h1 = set.content_hash().unwrap();

        let weights = load_weights(&path).unwrap();
        let mut pb2 = ParamBuilder::from_weights(DType::F32, weights, false);
        let _ = Linear::new(&mut pb2, "a", 5, 7).unwrap();
        let set2 = pb2.finish();
        assert!(!set2.is_trainable());
        assert_eq!(set2.content_hash().unwrap(), h1);
        assert_eq!(set2.count(), 5 * 7 + 7);
    }

    #[test]
    fn checkpoint_bytes_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.safetensors");
        let p2 = dir.path().join("b.safetensors");
        let mk = || {
            let rng = crate::rng::stream(2, "nn-test", &[]);
            let mut pb = ParamBuilder::init(DType::F32, rng);
            let _ = TransformerLayer::new(&mut pb, "t", 16, 4, 4.0).unwrap();
            pb.finish()
        };
        mk().save(&p1).unwrap();
        mk().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bilinear_resize_constant_preserving() {
        let x = Tensor::full(3.5f32, (1, 2, 4, 4), &Device::Cpu).unwrap();
        let y = bilinear_resize(&x, 9, 7).unwrap();
        assert_eq!(y.dims(), &[1, 2, 9, 7]);
        let vals = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for v in vals {
            assert!((v - 3.5).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_grad_check_f64() {
        let rng = crate::rng::stream(3, "nn-test", &[]);
        let mut pb = ParamBuilder::init(DType::F64, rng);
        let layer = TransformerLayer::new(&mut pb, "t", 8, 2, 2.0).unwrap();
        let set = pb.finish();
        let mut rng = crate::rng::stream(4, "nn-test", &[]);
        let data: Vec<f64> = (0..2 * 5 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(data, (2, 5, 8), &Device::Cpu).unwrap();
        let loss_fn = || {
            let y = layer.forward(&x)?;
            Ok((y.sqr()?.mean_all()? * 1.0)?)
        };
        let vars = set.trainable_vars();
        let mut probe_rng = crate::rng::stream(5, "nn-test", &[]);
        let max_rel = grad_check(&loss_fn, &vars, 1e-5, 2, &mut probe_rng).unwrap();
        assert!(max_rel < 1e-4, "gradient mismatch: {max_rel}");
    }
}
