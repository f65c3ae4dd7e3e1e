//! Multi-view geometry transformer backbone.
//!
//! Images are tokenized into patches, prepended with learned camera and
//! register tokens (frame 0 carries a distinct embedding set so the model can
//! tell the reference frame from the rest), and processed by a stack of
//! alternating-attention blocks. Each block runs global self-attention over
//! the concatenation of every frame's tokens followed by frame-wise
//! self-attention within each frame; both sub-layers are pre-norm residual
//! with their own MLP.
//!
//! The same code parameterizes the full-size "teacher" configuration and the
//! compressed "student"; four designated intermediate block outputs are
//! recorded for the dense prediction heads.

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, ParamBuilder, TransformerLayer};
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub role: Role,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub num_register_tokens: usize,
    /// 1-based indices of the blocks whose outputs feed the dense heads;
    /// strictly increasing, last entry must be the final block.
    pub tap_indices: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl EncoderConfig {
    /// Desk-scale teacher: 8 blocks at width 256, evenly spaced taps.
    pub fn teacher() -> Self {
        EncoderConfig {
            role: Role::Teacher,
            patch_size: 8,
            embed_dim: 256,
            num_blocks: 8,
            num_heads: 8,
            mlp_ratio: 4.0,
            num_register_tokens: 4,
            tap_indices: vec![2, 4, 6, 8],
            height: 64,
            width: 64,
        }
    }

    /// Compressed student: 4 blocks at width 128; with only 4 blocks every
    /// block is tapped.
    pub fn student() -> Self {
        EncoderConfig {
            role: Role::Student,
            patch_size: 8,
            embed_dim: 128,
            num_blocks: 4,
            num_heads: 4,
            mlp_ratio: 4.0,
            num_register_tokens: 4,
            tap_indices: vec![1, 2, 3, 4],
            height: 64,
            width: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::config("embed_dim not divisible by num_heads"));
        }
        if self.num_blocks < 4 {
            return Err(Error::config(
                "num_blocks must be >= 4 (dense heads tap 4 intermediate blocks)",
            ));
        }
        if self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return Err(Error::config("patch size must divide height and width"));
        }
        if self.tap_indices.len() != 4 {
            return Err(Error::config("exactly 4 tap indices required"));
        }
        if !self.tap_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("tap indices must be strictly increasing"));
        }
        if *self.tap_indices.last().unwrap() != self.num_blocks {
            return Err(Error::config("last tap index must be the final block"));
        }
        if self.tap_indices[0] == 0 {
            return Err(Error::config("tap indices are 1-based"));
        }
        Ok(())
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (self.height / self.patch_size, self.width / self.patch_size)
    }

    /// Patch tokens per frame.
    pub fn patch_tokens(&self) -> usize {
        let (gh, gw) = self.patch_grid();
        gh * gw
    }

    /// Per-frame sequence length: camera token + registers + patches.
    pub fn seq_len(&self) -> usize {
        1 + self.num_register_tokens + self.patch_tokens()
    }

    /// Number of special (camera + register) tokens at the head of each frame.
    pub fn special_tokens(&self) -> usize {
        1 + self.num_register_tokens
    }
}

/// Per-block pair of transformer layers: global over all frames' tokens,
/// then frame-wise within each frame.
struct AlternatingBlock {
    global: TransformerLayer,
    framewise: TransformerLayer,
}

pub struct EncoderOutput {
    /// Final tokens, `(B, N, S, D)`.
    pub tokens: Tensor,
    /// Post-block tokens from the 4 tapped blocks, each `(B, N, S, D)`.
    pub intermediates: Vec<Tensor>,
}

impl EncoderOutput {
    /// Camera tokens (sequence position 0 of every frame): `(B, N, D)`.
    pub fn camera_tokens(&self) -> Result<Tensor> {
        Ok(self.tokens.narrow(2, 0, 1)?.squeeze(2)?)
    }
}

pub struct Encoder {
    cfg: EncoderConfig,
    patch_proj: Linear,
    pos_embed: Tensor,
    camera_first: Tensor,
    camera_rest: Tensor,
    register_first: Tensor,
    register_rest: Tensor,
    blocks: Vec<AlternatingBlock>,
}

impl Encoder {
    /// Construct weights under `prefix`. Does not validate the config; use
    /// [`EncoderConfig::validate`] at configuration boundaries.
    pub fn new(pb: &mut ParamBuilder, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        let d = cfg.embed_dim;
        let r = cfg.num_register_tokens;
        let patch_in = 3 * cfg.patch_size * cfg.patch_size;
        let patch_proj = Linear::new(pb, &format!("{prefix}.patch_embed"), patch_in, d)?;
        let pos_embed = pb.tensor(
            &format!("{prefix}.pos_embed"),
            &[cfg.patch_tokens(), d],
            Init::Normal(0.02),
        )?;
        let camera_first = pb.tensor(
            &format!("{prefix}.camera_token_first"),
            &[1, d],
            Init::Normal(0.02),
        )?;
        let camera_rest = pb.tensor(
            &format!("{prefix}.camera_token_rest"),
            &[1, d],
            Init::Normal(0.02),
        )?;
        let register_first = pb.tensor(
            &format!("{prefix}.register_tokens_first"),
            &[r.max(1), d],
            Init::Normal(0.02),
        )?;
        let register_rest = pb.tensor(
            &format!("{prefix}.register_tokens_rest"),
            &[r.max(1), d],
            Init::Normal(0.02),
        )?;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for b in 0..cfg.num_blocks {
            blocks.push(AlternatingBlock {
                global: TransformerLayer::new(
                    pb,
                    &format!("{prefix}.block{b}.global"),
                    d,
                    cfg.num_heads,
                    cfg.mlp_ratio,
                )?,
                framewise: TransformerLayer::new(
                    pb,
                    &format!("{prefix}.block{b}.framewise"),
                    d,
                    cfg.num_heads,
                    cfg.mlp_ratio,
                )?,
            });
        }
        Ok(Encoder {
            cfg: cfg.clone(),
            patch_proj,
            pos_embed,
            camera_first,
            camera_rest,
            register_first,
            register_rest,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Tokenize `(B, N, 3, H, W)` images into `(B, N, T, D)` patch tokens
    /// (row-major patch order, learned positional embedding added).
    pub fn patchify(&self, images: &Tensor) -> Result<Tensor> {
        let (b, n, c, h, w) = images.dims5()?;
        let p = self.cfg.patch_size;
        if c != 3 {
            return Err(Error::config(format!("expected 3 channels, got {c}")));
        }
        if h != self.cfg.height || w != self.cfg.width {
            return Err(Error::config(format!(
                "input {h}x{w} does not match encoder config {}x{}",
                self.cfg.height, self.cfg.width
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let x = images.reshape((b * n, c, gh, p, gw, p))?;
        let x = x.permute((0, 2, 4, 1, 3, 5))?.contiguous()?;
        let x = x.reshape((b * n, gh * gw, c * p * p))?;
        let tokens = self.patch_proj.forward(&x)?;
        let tokens = tokens.broadcast_add(&self.pos_embed)?;
        tokens.reshape((b, n, gh * gw, self.cfg.embed_dim)).map_err(Into::into)
    }

    /// Prepend the camera token and register tokens. Frame 0 receives the
    /// first-frame embedding set, frames >= 1 the shared set.
    pub fn add_special_tokens(&self, patch_tokens: &Tensor) -> Result<Tensor> {
        let (b, n, _t, d) = patch_tokens.dims4()?;
        let r = self.cfg.num_register_tokens;
        let first = if r > 0 {
            Tensor::cat(&[&self.camera_first, &self.register_first.narrow(0, 0, r)?], 0)?
        } else {
            self.camera_first.clone()
        };
        let rest = if r > 0 {
            Tensor::cat(&[&self.camera_rest, &self.register_rest.narrow(0, 0, r)?], 0)?
        } else {
            self.camera_rest.clone()
        };
        let specials = if n == 1 {
            first.unsqueeze(0)?
        } else {
            let rest_frames = rest
                .unsqueeze(0)?
                .expand((n - 1, 1 + r, d))?
                .contiguous()?;
            Tensor::cat(&[&first.unsqueeze(0)?, &rest_frames], 0)?
        };
        let specials = specials
            .unsqueeze(0)?
            .expand((b, n, 1 + r, d))?
            .contiguous()?;
        Tensor::cat(&[&specials, patch_tokens], 2).map_err(Into::into)
    }

    fn run_blocks(&self, mut x: Tensor, ablate_global: bool) -> Result<EncoderOutput> {
        let (b, n, s, d) = x.dims4()?;
        let mut intermediates = Vec::with_capacity(4);
        for (i, block) in self.blocks.iter().enumerate() {
            if !ablate_global {
                let g = x.reshape((b, n * s, d))?;
                x = block.global.forward(&g)?.reshape((b, n, s, d))?;
            }
            let f = x.reshape((b * n, s, d))?;
            x = block.framewise.forward(&f)?.reshape((b, n, s, d))?;
            if self.cfg.tap_indices.contains(&(i + 1)) {
                intermediates.push(x.clone());
            }
        }
        Ok(EncoderOutput {
            tokens: x,
            intermediates,
        })
    }

    /// Full forward pass: patchify, add special tokens, run all blocks.
    pub fn forward(&self, images: &Tensor) -> Result<EncoderOutput> {
        self.run_blocks(self.add_special_tokens(&self.patchify(images)?)?, false)
    }

    /// Forward with every global attention sub-layer replaced by identity;
    /// used to assert frame-wise isolation.
    pub fn forward_framewise_only(&self, images: &Tensor) -> Result<EncoderOutput> {
        self.run_blocks(self.add_special_tokens(&self.patchify(images)?)?, true)
    }
}

/// Exact trainable-parameter count of an encoder built from `cfg`.
pub fn count_parameters(cfg: &EncoderConfig) -> Result<usize> {
    let rng = crate::rng::stream(0, "param-count", &[]);
    let mut pb = ParamBuilder::init(candle_core::DType::F32, rng);
    let _ = Encoder::new(&mut pb, "enc", cfg)?;
    Ok(pb.finish().count())
}
