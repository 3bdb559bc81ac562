//! Layers, blocks, and the full gaze regression network.
//!
//! The backbone is a lightweight hybrid: a conv stem and inverted residual
//! stages at channels C1..C5, three FFT residual blocks whose encoders mix
//! tokens with a trainable per-frequency complex mask instead of attention,
//! then a 1x1 head conv, global average pooling, and a linear layer to
//! [yaw, pitch] in radians.

pub mod checkpoint;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;
const MASK_INIT_SIGMA: f64 = 0.02;

/// Component switches for the ablation study. Each flag removes exactly one
/// documented subgraph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Replace each FFT residual block with a single inverted residual block.
    pub disable_fft_residual_block: bool,
    /// Drop the encoder stack inside FFT residual blocks (identity).
    pub disable_fft_encoder: bool,
    /// Fuse from the encoder output alone instead of concat with the input.
    pub disable_concat_shortcut: bool,
    /// Remove the residual add around the spectral filter inside encoders.
    pub disable_encoder_shortcut: bool,
}

/// Architecture description. The default reproduces the full-size model;
/// [`ModelConfig::small`] is the desk-scale training preset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_size: usize,
    pub stage_channels: [usize; 5],
    pub encoder_dims: [usize; 3],
    pub encoders_per_block: [usize; 3],
    /// Extra stride-1 inverted residual blocks at C2.
    pub stage2_repeats: usize,
    pub head_channels: usize,
    pub output_dims: usize,
    pub ffn_expansion: usize,
    pub irb_expansion: usize,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            input_size: 256,
            stage_channels: [16, 24, 48, 64, 80],
            encoder_dims: [64, 80, 96],
            encoders_per_block: [1, 4, 3],
            stage2_repeats: 2,
            head_channels: 320,
            output_dims: 2,
            ffn_expansion: 2,
            irb_expansion: 2,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    /// Reduced preset for fast CPU training on 64x64 synthetic data.
    pub fn small() -> ModelConfig {
        ModelConfig {
            input_size: 64,
            stage_channels: [8, 16, 24, 32, 40],
            encoder_dims: [32, 40, 48],
            encoders_per_block: [1, 1, 1],
            stage2_repeats: 0,
            head_channels: 128,
            output_dims: 2,
            ffn_expansion: 2,
            irb_expansion: 2,
            ablation: AblationFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.input_size.is_power_of_two() || self.input_size < 32 {
            return Err(Error::InvalidArgument(format!(
                "input_size {} must be a power of two >= 32",
                self.input_size
            )));
        }
        let positive = self
            .stage_channels
            .iter()
            .chain(self.encoder_dims.iter())
            .chain(self.encoders_per_block.iter())
            .chain([&self.head_channels, &self.output_dims])
            .all(|&v| v > 0);
        if !positive {
            return Err(Error::InvalidArgument(
                "channels, dims, depths, head and output sizes must be positive".into(),
            ));
        }
        if self.ffn_expansion == 0 || self.irb_expansion == 0 {
            return Err(Error::InvalidArgument(
                "expansion ratios must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Dw {
    pub w: ParamId,
    pub c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub c: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Irb {
    pub expand: Conv,
    pub expand_norm: Norm,
    pub dw: Dw,
    pub dw_norm: Norm,
    pub project: Conv,
    pub project_norm: Norm,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    pub ln1: Norm,
    pub mask_re: ParamId,
    pub mask_im: ParamId,
    pub ln2: Norm,
    pub ffn1: Conv,
    pub ffn2: Conv,
    pub dim: usize,
    pub size: usize,
    pub shortcut: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Frb {
    pub local_dw: Dw,
    pub local_norm: Norm,
    pub local_pw: Conv,
    pub encoders: Vec<Encoder>,
    pub fusion: Conv,
    pub fusion_norm: Norm,
    pub cin: usize,
    pub dim: usize,
    pub size: usize,
    pub concat: bool,
}

#[derive(Debug, Clone)]
pub(crate) enum Block {
    Irb(Irb),
    Frb(Frb),
}

/// The instantiated network: parameter store plus the block graph.
#[derive(Debug, Clone)]
pub struct FrNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub(crate) stem: (Conv, Norm),
    pub(crate) body: Vec<Block>,
    pub(crate) head_conv: (Conv, Norm),
    pub(crate) head_w: ParamId,
    pub(crate) head_b: ParamId,
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn uniform(&mut self, shape: &[usize], limit: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-limit..limit)).collect();
        Tensor::from_vec(shape, data).expect("builder shape")
    }

    fn normal(&mut self, shape: &[usize], mean: f64, sigma: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                // Box-Muller
                let u1: f64 = self.rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = self.rng.gen_range(0.0..1.0);
                mean + sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        Tensor::from_vec(shape, data).expect("builder shape")
    }

    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Conv {
        let fan_in = (cin * kernel * kernel) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let w = self.uniform(&[cout, cin, kernel, kernel], limit);
        let w = self.store.add(format!("{name}.w"), w, true);
        let b = bias.then(|| {
            self.store
                .add(format!("{name}.b"), Tensor::zeros(&[cout]).expect("shape"), true)
        });
        Conv {
            w,
            b,
            cin,
            cout,
            kernel,
            stride,
            pad,
        }
    }

    fn dw(&mut self, name: &str, c: usize, kernel: usize, stride: usize, pad: usize) -> Dw {
        let fan_in = (kernel * kernel) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let w = self.uniform(&[c, kernel, kernel], limit);
        let w = self.store.add(format!("{name}.w"), w, true);
        Dw {
            w,
            c,
            kernel,
            stride,
            pad,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = self
            .store
            .add(format!("{name}.gamma"), Tensor::ones(&[c]).expect("shape"), true);
        let beta = self
            .store
            .add(format!("{name}.beta"), Tensor::zeros(&[c]).expect("shape"), true);
        Norm { gamma, beta, c }
    }

    fn irb(&mut self, name: &str, cin: usize, cout: usize, stride: usize, expansion: usize) -> Irb {
        let hidden = cin * expansion;
        Irb {
            expand: self.conv(&format!("{name}.expand"), cin, hidden, 1, 1, 0, false),
            expand_norm: self.norm(&format!("{name}.expand_norm"), hidden),
            dw: self.dw(&format!("{name}.dw"), hidden, 3, stride, 1),
            dw_norm: self.norm(&format!("{name}.dw_norm"), hidden),
            project: self.conv(&format!("{name}.project"), hidden, cout, 1, 1, 0, false),
            project_norm: self.norm(&format!("{name}.project_norm"), cout),
            cin,
            cout,
            stride,
        }
    }

    fn encoder(
        &mut self,
        name: &str,
        dim: usize,
        size: usize,
        ffn_expansion: usize,
        shortcut: bool,
    ) -> Encoder {
        // identity filter at init, plus small noise
        let re = self.normal(&[dim, size, size], 1.0, MASK_INIT_SIGMA);
        let im = self.normal(&[dim, size, size], 0.0, MASK_INIT_SIGMA);
        let hidden = dim * ffn_expansion;
        Encoder {
            ln1: self.norm(&format!("{name}.ln1"), dim),
            mask_re: self.store.add(format!("{name}.mask.re"), re, true),
            mask_im: self.store.add(format!("{name}.mask.im"), im, true),
            ln2: self.norm(&format!("{name}.ln2"), dim),
            ffn1: self.conv(&format!("{name}.ffn1"), dim, hidden, 1, 1, 0, true),
            ffn2: self.conv(&format!("{name}.ffn2"), hidden, dim, 1, 1, 0, true),
            dim,
            size,
            shortcut,
        }
    }

    fn frb(&mut self, name: &str, cin: usize, dim: usize, size: usize, depth: usize, cfg: &ModelConfig) -> Frb {
        let encoders = if cfg.ablation.disable_fft_encoder {
            Vec::new()
        } else {
            (0..depth)
                .map(|i| {
                    self.encoder(
                        &format!("{name}.enc{i}"),
                        dim,
                        size,
                        cfg.ffn_expansion,
                        !cfg.ablation.disable_encoder_shortcut,
                    )
                })
                .collect()
        };
        let concat = !cfg.ablation.disable_concat_shortcut;
        let fusion_in = if concat { dim + cin } else { dim };
        Frb {
            local_dw: self.dw(&format!("{name}.local_dw"), cin, 3, 1, 1),
            local_norm: self.norm(&format!("{name}.local_norm"), cin),
            local_pw: self.conv(&format!("{name}.local_pw"), cin, dim, 1, 1, 0, true),
            encoders,
            fusion: self.conv(&format!("{name}.fusion"), fusion_in, cin, 1, 1, 0, false),
            fusion_norm: self.norm(&format!("{name}.fusion_norm"), cin),
            cin,
            dim,
            size,
            concat,
        }
    }
}

impl FrNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<FrNet> {
        config.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let [c1, c2, c3, c4, c5] = config.stage_channels;
        let s = config.input_size;

        let stem = (
            b.conv("stem", 3, c1, 3, 2, 1, false),
            b.norm("stem_norm", c1),
        );

        let mut body = Vec::new();
        let mut idx = 0usize;
        let mut next_name = move || {
            let name = format!("block{idx}");
            idx += 1;
            name
        };

        let mut irb_steps = vec![(c1, c2, 2)];
        irb_steps.extend(std::iter::repeat((c2, c2, 1)).take(config.stage2_repeats));
        irb_steps.push((c2, c3, 2));
        for (cin, cout, stride) in irb_steps {
            let name = next_name();
            body.push(Block::Irb(b.irb(&name, cin, cout, stride, config.irb_expansion)));
        }

        let frb_specs = [
            (c3, config.encoder_dims[0], s / 8, config.encoders_per_block[0]),
            (c4, config.encoder_dims[1], s / 16, config.encoders_per_block[1]),
            (c5, config.encoder_dims[2], s / 32, config.encoders_per_block[2]),
        ];
        for (stage, &(cin, dim, size, depth)) in frb_specs.iter().enumerate() {
            if stage > 0 {
                let (dcin, dcout) = if stage == 1 { (c3, c4) } else { (c4, c5) };
                let name = next_name();
                body.push(Block::Irb(b.irb(&name, dcin, dcout, 2, config.irb_expansion)));
            }
            let name = next_name();
            if config.ablation.disable_fft_residual_block {
                body.push(Block::Irb(b.irb(&name, cin, cin, 1, config.irb_expansion)));
            } else {
                body.push(Block::Frb(b.frb(&name, cin, dim, size, depth, &config)));
            }
        }

        let head_conv = (
            b.conv("head_conv", c5, config.head_channels, 1, 1, 0, false),
            b.norm("head_norm", config.head_channels),
        );
        let limit = (6.0 / config.head_channels as f64).sqrt();
        let head_weight = b.uniform(&[config.head_channels, config.output_dims], limit);
        let head_w = b.store.add("head.w", head_weight, true);
        let head_b = b.store.add(
            "head.b",
            Tensor::zeros(&[config.output_dims])?,
            true,
        );

        Ok(FrNet {
            config,
            params: b.store,
            stem,
            body,
            head_conv,
            head_w,
            head_b,
        })
    }

    /// Record a full forward pass on `tape`. Returns the output node
    /// (shape [output_dims], yaw then pitch) and the parameter binding.
    pub fn forward(&self, tape: &mut Tape, image: &Tensor) -> Result<(NodeId, Binding)> {
        let s = self.config.input_size;
        if image.shape() != [3, s, s] {
            return Err(Error::ShapeMismatch(format!(
                "expected input [3, {s}, {s}], got {:?}",
                image.shape()
            )));
        }
        let mut binding = Binding::new();
        let x = tape.leaf(image.clone());
        let out = self.forward_from(tape, &mut binding, x)?;
        Ok((out, binding))
    }

    fn forward_from(&self, tape: &mut Tape, bd: &mut Binding, x: NodeId) -> Result<NodeId> {
        let store = &self.params;
        let mut cur = conv_norm_act(tape, bd, store, &self.stem.0, &self.stem.1, x)?;
        for block in &self.body {
            cur = match block {
                Block::Irb(irb) => irb_forward(tape, bd, store, irb, cur)?,
                Block::Frb(frb) => frb_forward(tape, bd, store, frb, cur)?,
            };
        }
        cur = conv_norm_act(tape, bd, store, &self.head_conv.0, &self.head_conv.1, cur)?;
        let pooled = tape.global_avg_pool(cur)?;
        let w = bd.bind(tape, store, self.head_w);
        let b = bd.bind(tape, store, self.head_b);
        tape.linear(pooled, w, b)
    }

    /// Forward pass outside training; returns the output tensor.
    pub fn infer(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (out, _) = self.forward(&mut tape, image)?;
        Ok(tape.value(out).clone())
    }
}

pub(crate) fn conv_forward(
    tape: &mut Tape,
    bd: &mut Binding,
    store: &ParamStore,
    conv: &Conv,
    x: NodeId,
) -> Result<NodeId> {
    let w = bd.bind(tape, store, conv.w);
    let b = conv.b.map(|id| bd.bind(tape, store, id));
    tape.conv2d(x, w, b, conv.stride, conv.pad)
}

fn dw_forward(
    tape: &mut Tape,
    bd: &mut Binding,
    store: &ParamStore,
    dw: &Dw,
    x: NodeId,
) -> Result<NodeId> {
    let w = bd.bind(tape, store, dw.w);
    tape.depthwise_conv2d(x, w, None, dw.stride, dw.pad)
}

fn norm_forward(
    tape: &mut Tape,
    bd: &mut Binding,
    store: &ParamStore,
    norm: &Norm,
    x: NodeId,
) -> Result<NodeId> {
    let gamma = bd.bind(tape, store, norm.gamma);
    let beta = bd.bind(tape, store, norm.beta);
    tape.instance_norm(x, gamma, beta, NORM_EPS)
}

fn layer_norm_forward(
    tape: &mut Tape,
    bd: &mut Binding,
    store: &ParamStore,
    norm: &Norm,
    x: NodeId,
) -> Result<NodeId> {
    let gamma = bd.bind(tape, store, norm.gamma);
    let beta = bd.bind(tape, store, norm.beta);
    tape.layer_norm_channels(x, gamma, beta, NORM_EPS)
}

fn conv_norm_act(
    tape: &mut Tape,
    bd: &mut Binding,
    store: &ParamStore,
    conv: &Conv,
    norm: &Norm,
    x: NodeId,
) -> Result<NodeId> {
    let y = conv_forward(tape, bd, store, conv, x)?;
    let y = norm_forward(tape, bd, store, norm, y)?;
    tape.silu(y)
}

pub(crate) fn irb_forward(
    tape: &mut Tape,
    bd: &mut Binding,
    store: &ParamStore,
    irb: &Irb,
    x: NodeId,
) -> Result<NodeId> {
    let mut cur = conv_norm_act(tape, bd, store, &irb.expand, &irb.expand_norm, x)?;
    cur = dw_forward(tape, bd, store, &irb.dw, cur)?;
    cur = norm_forward(tape, bd, store, &irb.dw_norm, cur)?;
    cur = tape.silu(cur)?;
    cur = conv_forward(tape, bd, store, &irb.project, cur)?;
    cur = norm_forward(tape, bd, store, &irb.project_norm, cur)?;
    if irb.stride == 1 && irb.cin == irb.cout {
        cur = tape.add(x, cur)?;
    }
    Ok(cur)
}

pub(crate) fn encoder_forward(
    tape: &mut Tape,
    bd: &mut Binding,
    store: &ParamStore,
    enc: &Encoder,
    x: NodeId,
) -> Result<NodeId> {
    let normed = layer_norm_forward(tape, bd, store, &enc.ln1, x)?;
    let mre = bd.bind(tape, store, enc.mask_re);
    let mim = bd.bind(tape, store, enc.mask_im);
    let filtered = tape.apply_mask(normed, mre, mim)?;
    let u = if enc.shortcut {
        tape.add(x, filtered)?
    } else {
        filtered
    };
    let normed2 = layer_norm_forward(tape, bd, store, &enc.ln2, u)?;
    let f = conv_forward(tape, bd, store, &enc.ffn1, normed2)?;
    let f = tape.silu(f)?;
    let f = conv_forward(tape, bd, store, &enc.ffn2, f)?;
    tape.add(u, f)
}

pub(crate) fn frb_forward(
    tape: &mut Tape,
    bd: &mut Binding,
    store: &ParamStore,
    frb: &Frb,
    x: NodeId,
) -> Result<NodeId> {
    let mut cur = dw_forward(tape, bd, store, &frb.local_dw, x)?;
    cur = norm_forward(tape, bd, store, &frb.local_norm, cur)?;
    cur = tape.silu(cur)?;
    cur = conv_forward(tape, bd, store, &frb.local_pw, cur)?;
    for enc in &frb.encoders {
        cur = encoder_forward(tape, bd, store, enc, cur)?;
    }
    let fused_in = if frb.concat {
        tape.concat_channels(cur, x)?
    } else {
        cur
    };
    let fused = conv_forward(tape, bd, store, &frb.fusion, fused_in)?;
    let fused = norm_forward(tape, bd, store, &frb.fusion_norm, fused)?;
    tape.silu(fused)
}
