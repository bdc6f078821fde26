use crate::error::{DegError, Result};
use crate::frame::Frame;
use crate::io::{ByteReader, ByteWriter};
use crate::nn::{Activation, Conv2d, LayerNorm, Linear, Mlp, ParamLayout};
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Input shape and layer widths of the encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderArch {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub feature_dim: usize,
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self { height: 32, width: 32, channels: 1, conv1_channels: 16, conv2_channels: 32, feature_dim: 50 }
    }
}

impl EncoderArch {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 || !(self.channels == 1 || self.channels == 3) {
            return Err(DegError::config("encoder.arch", "input must be at least 2x2 with 1 or 3 channels"));
        }
        if self.conv1_channels == 0 || self.conv2_channels == 0 || self.feature_dim == 0 {
            return Err(DegError::config("encoder.arch", "layer widths must be positive"));
        }
        Ok(())
    }
}

/// Layer structure of the encoder: two stride-2 convolutions and a linear
/// projection (the similarity encoder), followed by the training-only
/// asymmetric head and the bilinear contrastive matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet {
    pub arch: EncoderArch,
    pub layout: ParamLayout,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub proj: Linear,
    pub norm: LayerNorm,
    pub head: Mlp,
    /// Offset of the `D×D` contrastive matrix.
    pub contrastive: usize,
}

impl EncoderNet {
    pub fn new(arch: EncoderArch) -> Self {
        let mut layout = ParamLayout::new();
        let conv1 = Conv2d::register(&mut layout, "conv1", arch.channels, arch.conv1_channels, arch.height, arch.width);
        let conv2 = Conv2d::register(&mut layout, "conv2", arch.conv1_channels, arch.conv2_channels, conv1.out_h, conv1.out_w);
        let proj = Linear::register(&mut layout, "proj", conv2.out_len(), arch.feature_dim);
        let d = arch.feature_dim;
        let norm = LayerNorm::register(&mut layout, "norm", d);
        let head = Mlp::register(&mut layout, "head", &[d, d, d], Activation::Elu, Activation::Identity);
        let contrastive = layout.push("contrastive", &[d, d]);
        Self { arch, layout, conv1, conv2, proj, norm, head, contrastive }
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }
}

/// A `D`-dimensional embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector<T>(pub Vec<T>);

impl<T: Scalar> LatentVector<T> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> LatentVector<U> {
        LatentVector(self.0.iter().map(|v| U::lit(v.as_f64())).collect())
    }
}

/// Encoder weights (online or momentum copy) over scalar type `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub net: EncoderNet,
    pub values: Vec<T>,
}

/// Activations kept by [`EncoderParams::forward_train`].
pub struct EncoderCache<T> {
    batch: usize,
    cols1: Vec<Vec<T>>,
    pre1: Vec<Vec<T>>,
    cols2: Vec<Vec<T>>,
    pre2: Vec<Vec<T>>,
    /// Flattened conv features, `batch × conv2.out_len()`.
    flat: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Encoder output, `batch × D`.
    pub latents: Vec<T>,
}

impl<T: Scalar> EncoderParams<T> {
    /// Fresh weights drawn from `seed`.
    pub fn init(arch: EncoderArch, seed: u64) -> Self {
        let net = EncoderNet::new(arch);
        let mut values = vec![T::zero(); net.layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.conv1.init(&mut values, &mut rng);
        net.conv2.init(&mut values, &mut rng);
        net.proj.init(&mut values, &mut rng);
        net.norm.init(&mut values);
        net.head.init(&mut values, &mut rng);
        let spec = net.layout.get("contrastive").expect("registered").clone();
        crate::nn::init_uniform(&mut values, &spec, 1.0 / (net.feature_dim() as f64).sqrt(), &mut rng);
        Self { net, values }
    }

    pub fn arch(&self) -> &EncoderArch {
        &self.net.arch
    }

    pub fn feature_dim(&self) -> usize {
        self.net.feature_dim()
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams { net: self.net.clone(), values: self.values.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn contrastive_matrix(&self) -> &[T] {
        let d = self.feature_dim();
        &self.values[self.net.contrastive..self.net.contrastive + d * d]
    }

    pub fn check_frame(&self, frame: &Frame) -> Result<()> {
        let a = &self.net.arch;
        let want = (a.height, a.width, a.channels);
        if frame.shape() != want {
            return Err(DegError::shape(want, frame.shape()));
        }
        Ok(())
    }

    /// Channel-major copy of the frame's pixels.
    fn planar(&self, frame: &Frame) -> Vec<T> {
        let (h, w, c) = frame.shape();
        let mut out = vec![T::zero(); h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = T::of_f32(frame.get(y, x, ch));
                }
            }
        }
        out
    }

    pub fn forward_train(&self, frames: &[&Frame]) -> Result<EncoderCache<T>> {
        for f in frames {
            self.check_frame(f)?;
        }
        let n = &self.net;
        let p = &self.values;
        let batch = frames.len();
        let flat_len = n.conv2.out_len();
        let mut cache = EncoderCache {
            batch,
            cols1: Vec::with_capacity(batch),
            pre1: Vec::with_capacity(batch),
            cols2: Vec::with_capacity(batch),
            pre2: Vec::with_capacity(batch),
            flat: vec![T::zero(); batch * flat_len],
            xhat: Vec::new(),
            inv_std: Vec::new(),
            latents: vec![T::zero(); batch * n.feature_dim()],
        };
        for (b, frame) in frames.iter().enumerate() {
            let input = self.planar(frame);
            let mut cols1 = vec![T::zero(); n.conv1.patch_len() * n.conv1.positions()];
            n.conv1.im2col(&input, &mut cols1);
            let mut pre1 = vec![T::zero(); n.conv1.out_len()];
            n.conv1.forward_cols(p, &cols1, &mut pre1);
            let act1: Vec<T> = pre1.iter().map(|&v| Activation::Elu.apply(v)).collect();
            let mut cols2 = vec![T::zero(); n.conv2.patch_len() * n.conv2.positions()];
            n.conv2.im2col(&act1, &mut cols2);
            let mut pre2 = vec![T::zero(); flat_len];
            n.conv2.forward_cols(p, &cols2, &mut pre2);
            for (dst, &v) in cache.flat[b * flat_len..(b + 1) * flat_len].iter_mut().zip(&pre2) {
                *dst = Activation::Elu.apply(v);
            }
            cache.cols1.push(cols1);
            cache.pre1.push(pre1);
            cache.cols2.push(cols2);
            cache.pre2.push(pre2);
        }
        let mut projected = vec![T::zero(); batch * n.feature_dim()];
        n.proj.forward(p, &cache.flat, batch, &mut projected);
        let (xhat, inv_std) = n.norm.forward(p, &projected, &mut cache.latents);
        cache.latents.iter_mut().for_each(|v| *v = v.tanh());
        cache.xhat = xhat;
        cache.inv_std = inv_std;
        Ok(cache)
    }

    /// Accumulates parameter gradients given `d_latents` (`batch × D`).
    pub fn backward(&self, cache: &EncoderCache<T>, d_latents: &[T], grad: &mut [T]) {
        let n = &self.net;
        let p = &self.values;
        let flat_len = n.conv2.out_len();
        let d_normed: Vec<T> = d_latents.iter().zip(&cache.latents).map(|(&d, &y)| d * (T::one() - y * y)).collect();
        let d_proj = n.norm.backward(p, &cache.xhat, &cache.inv_std, &d_normed, grad);
        let mut d_flat = vec![T::zero(); cache.batch * flat_len];
        n.proj.backward(p, &cache.flat, &d_proj, cache.batch, grad, Some(&mut d_flat));
        let mut scratch = Vec::new();
        for b in 0..cache.batch {
            let mut d_pre2 = d_flat[b * flat_len..(b + 1) * flat_len].to_vec();
            for ((d, &pre), &post) in d_pre2.iter_mut().zip(&cache.pre2[b]).zip(&cache.flat[b * flat_len..]) {
                *d *= Activation::Elu.derivative(pre, post);
            }
            let mut d_act1 = vec![T::zero(); n.conv1.out_len()];
            n.conv2.backward_cols(p, &cache.cols2[b], &d_pre2, grad, Some((&mut d_act1, &mut scratch)));
            for (d, &pre) in d_act1.iter_mut().zip(&cache.pre1[b]) {
                *d *= Activation::Elu.derivative(pre, Activation::Elu.apply(pre));
            }
            n.conv1.backward_cols(p, &cache.cols1[b], &d_act1, grad, None);
        }
    }

    /// `batch × D` latents.
    pub fn encode_batch(&self, frames: &[&Frame]) -> Result<Vec<T>> {
        Ok(self.forward_train(frames)?.latents)
    }

    pub fn encode(&self, frame: &Frame) -> Result<LatentVector<T>> {
        Ok(LatentVector(self.encode_batch(&[frame])?))
    }

    /// Asymmetric head applied to `batch × D` latents.
    pub fn head(&self, latents: &[T], batch: usize) -> Vec<T> {
        self.net.head.infer(&self.values, latents, batch)
    }
}

pub const ENCODER_MAGIC: &[u8; 4] = b"DEGE";
pub const ENCODER_VERSION: u32 = 1;

/// Checkpoint layout (little-endian): `"DEGE"`, version u32, D u32, input
/// shape as height, width, channels (3×u32), then every parameter tensor as
/// `rank u32, dims u32…, f32 payload` in this order: conv1.weight,
/// conv1.bias, conv2.weight, conv2.bias, proj.weight, proj.bias, norm.gain,
/// norm.bias,
/// head.0.weight, head.0.bias, head.1.weight, head.1.bias, contrastive.
pub fn encode_checkpoint<T: Scalar>(params: &EncoderParams<T>) -> Vec<u8> {
    let a = params.arch();
    let mut w = ByteWriter::new();
    w.magic(ENCODER_MAGIC)
        .u32(ENCODER_VERSION)
        .u32(a.feature_dim as u32)
        .u32(a.height as u32)
        .u32(a.width as u32)
        .u32(a.channels as u32);
    for t in params.net.layout.tensors() {
        w.tensor(&t.shape, params.values[t.range()].iter().map(|v| v.as_f32()));
    }
    w.into_bytes()
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<EncoderParams<T>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(ENCODER_MAGIC)?;
    let version = r.u32("version")?;
    if version != ENCODER_VERSION {
        return Err(DegError::UnsupportedVersion { format: "DEGE", found: version, expected: ENCODER_VERSION });
    }
    let feature_dim = r.u32("feature dim")? as usize;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let channels = r.u32("channels")? as usize;
    // widths of the two conv layers are read off the first dims of their weight tensors
    let peek = |offset: usize| -> Result<usize> {
        let mut probe = ByteReader::new(&bytes[offset..]);
        let rank = probe.u32("rank")?;
        if rank != 4 {
            return Err(DegError::Parse { offset, reason: format!("conv weight rank {rank}, expected 4") });
        }
        Ok(probe.u32("dim")? as usize)
    };
    let conv1_channels = peek(r.offset())?;
    let arch_probe = EncoderArch { height, width, channels, conv1_channels, conv2_channels: 1, feature_dim };
    let probe_net = EncoderNet::new(arch_probe);
    let conv1_bytes = 4 * (1 + 4) + 4 * probe_net.conv1.out_ch * probe_net.conv1.patch_len() + 4 * 2 + 4 * conv1_channels;
    if r.remaining() < conv1_bytes {
        return Err(r.error("truncated inside conv1"));
    }
    let conv2_channels = peek(r.offset() + conv1_bytes)?;
    let arch = EncoderArch { height, width, channels, conv1_channels, conv2_channels, feature_dim };
    arch.validate().map_err(|e| r.error(e.to_string()))?;
    let net = EncoderNet::new(arch);
    let mut values = Vec::with_capacity(net.layout.len());
    for t in net.layout.tensors() {
        let data = r.tensor(&t.name, &t.shape)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(r.error(format!("non-finite value in {}", t.name)));
        }
        values.extend(data.into_iter().map(T::of_f32));
    }
    r.finish()?;
    Ok(EncoderParams { net, values })
}

pub fn save_encoder<T: Scalar>(params: &EncoderParams<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_encoder<T: Scalar>(path: &Path) -> Result<EncoderParams<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}
