use super::encoder::{EncoderArch, EncoderParams};
use crate::error::{DegError, Result};
use crate::frame::{random_shift, Frame};
use crate::matrix::Matrix;
use crate::nn::{soft_update, Adam};
use crate::scalar::{ops, Scalar};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveTrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub learning_rate: f64,
    pub shift_bound: u32,
    pub ema_frequency: usize,
    pub ema_mix: f64,
    pub rng_seed: u64,
    pub arch: EncoderArch,
}

impl Default for ContrastiveTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            total_steps: 5000,
            learning_rate: 1e-4,
            shift_bound: 4,
            ema_frequency: 2,
            ema_mix: 0.05,
            rng_seed: 0,
            arch: EncoderArch::default(),
        }
    }
}

impl ContrastiveTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(DegError::config("encoder.batch_size", "contrast needs at least 2 frames per batch"));
        }
        if !(self.ema_mix > 0.0 && self.ema_mix <= 1.0) {
            return Err(DegError::config("encoder.ema_mix", "must lie in (0, 1]"));
        }
        if self.ema_frequency == 0 {
            return Err(DegError::config("encoder.ema_frequency", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(DegError::config("encoder.learning_rate", "must be positive"));
        }
        self.arch.validate()
    }
}

/// `logits[i][j] = u(E(anchor_i))ᵀ · W · E'(positive_j)`.
pub fn contrastive_logits<T: Scalar>(
    online: &EncoderParams<T>,
    target: &EncoderParams<T>,
    anchors: &[&Frame],
    positives: &[&Frame],
) -> Result<Matrix<T>> {
    if anchors.len() != positives.len() {
        return Err(DegError::BatchMismatch { anchors: anchors.len(), positives: positives.len() });
    }
    if anchors.is_empty() {
        return Err(DegError::EmptyBatch);
    }
    let m = anchors.len();
    let d = online.feature_dim();
    let z = online.head(&online.encode_batch(anchors)?, m);
    let k = target.encode_batch(positives)?;
    let mut zw = vec![T::zero(); m * d];
    ops::matmul(&z, online.contrastive_matrix(), m, d, d, &mut zw, false);
    let mut logits = vec![T::zero(); m * m];
    ops::matmul_a_bt(&zw, &k, m, d, m, &mut logits, false);
    Ok(Matrix::from_vec(m, m, logits))
}

fn check_logits<T: Scalar>(logits: &Matrix<T>) -> Result<()> {
    if !logits.is_square() || logits.rows() == 0 {
        return Err(DegError::shape("non-empty square logits", (logits.rows(), logits.cols())));
    }
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(DegError::NonFinite("contrastive logits"));
    }
    Ok(())
}

/// Row-wise cross-entropy with the diagonal as the positive class, averaged
/// over rows. Rows are shifted by their maximum before exponentiation.
pub fn contrastive_loss<T: Scalar>(logits: &Matrix<T>) -> Result<T> {
    Ok(loss_and_logit_grad(logits)?.0)
}

/// Loss together with `∂loss/∂logits`.
pub fn loss_and_logit_grad<T: Scalar>(logits: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    check_logits(logits)?;
    let m = logits.rows();
    let inv_m = T::one() / T::lit(m as f64);
    let mut grad = Matrix::zeros(m, m);
    let mut total = T::zero();
    for i in 0..m {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[i];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let target = if i == j { T::one() } else { T::zero() };
            grad.set(i, j, (p - target) * inv_m);
        }
    }
    // clamp the tiny negative values rounding can produce
    Ok(((total * inv_m).max(T::zero()), grad))
}

/// Loss and gradient with respect to every online parameter (convolutions,
/// projection, head, contrastive matrix). The target copy receives none.
pub fn loss_and_grad<T: Scalar>(
    online: &EncoderParams<T>,
    target: &EncoderParams<T>,
    anchors: &[&Frame],
    positives: &[&Frame],
) -> Result<(T, Vec<T>)> {
    if anchors.len() != positives.len() {
        return Err(DegError::BatchMismatch { anchors: anchors.len(), positives: positives.len() });
    }
    if anchors.is_empty() {
        return Err(DegError::EmptyBatch);
    }
    let m = anchors.len();
    let d = online.feature_dim();
    let w = online.contrastive_matrix();

    let enc = online.forward_train(anchors)?;
    let head_cache = online.net.head.forward(&online.values, &enc.latents, m);
    let z = &head_cache.out;
    let k = target.encode_batch(positives)?;

    // logits = Z·(K·Wᵀ)ᵀ
    let mut kwt = vec![T::zero(); m * d];
    ops::matmul_a_bt(&k, w, m, d, d, &mut kwt, false);
    let mut logits = vec![T::zero(); m * m];
    ops::matmul_a_bt(z, &kwt, m, d, m, &mut logits, false);
    let (loss, g) = loss_and_logit_grad(&Matrix::from_vec(m, m, logits))?;
    let g = g.into_vec();

    let mut grad = vec![T::zero(); online.values.len()];
    // ∂/∂W = Zᵀ·G·K
    let mut gk = vec![T::zero(); m * d];
    ops::matmul(&g, &k, m, m, d, &mut gk, false);
    let off = online.net.contrastive;
    ops::matmul_at_b(z, &gk, d, m, d, &mut grad[off..off + d * d], false);
    // ∂/∂Z = G·(K·Wᵀ)
    let mut dz = vec![T::zero(); m * d];
    ops::matmul(&g, &kwt, m, m, d, &mut dz, false);
    let dh = online.net.head.backward(&online.values, &head_cache, &dz, &mut grad);
    online.backward(&enc, &dh, &mut grad);
    Ok((loss, grad))
}

/// Online encoder, momentum copy and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveState<T> {
    pub online: EncoderParams<T>,
    pub target: EncoderParams<T>,
    pub adam: Adam<T>,
}

impl<T: Scalar> ContrastiveState<T> {
    /// The momentum copy starts equal to the online encoder.
    pub fn new(online: EncoderParams<T>, learning_rate: f64) -> Self {
        let adam = Adam::new(online.values.len(), learning_rate);
        Self { target: online.clone(), online, adam }
    }
}

/// Augments each frame twice, takes one optimizer step on the online encoder
/// and, on EMA steps, pulls the momentum copy toward it.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    state: &mut ContrastiveState<T>,
    batch: &[&Frame],
    config: &ContrastiveTrainConfig,
    rng: &mut R,
    step_index: usize,
) -> Result<T> {
    train_step_pairs(state, batch, batch, config, rng, step_index)
}

/// Like [`train_step`], but anchor `i` and positive `i` start from two
/// different renderings of the same content (for example a clean frame and a
/// corrupted copy).
pub fn train_step_pairs<T: Scalar, R: Rng + ?Sized>(
    state: &mut ContrastiveState<T>,
    anchor_frames: &[&Frame],
    positive_frames: &[&Frame],
    config: &ContrastiveTrainConfig,
    rng: &mut R,
    step_index: usize,
) -> Result<T> {
    if anchor_frames.len() != positive_frames.len() {
        return Err(DegError::BatchMismatch { anchors: anchor_frames.len(), positives: positive_frames.len() });
    }
    if anchor_frames.is_empty() {
        return Err(DegError::EmptyBatch);
    }
    let anchors: Vec<Frame> = anchor_frames.iter().map(|f| random_shift(f, config.shift_bound, rng)).collect();
    let positives: Vec<Frame> = positive_frames.iter().map(|f| random_shift(f, config.shift_bound, rng)).collect();
    let a: Vec<&Frame> = anchors.iter().collect();
    let p: Vec<&Frame> = positives.iter().collect();
    let (loss, grad) = loss_and_grad(&state.online, &state.target, &a, &p)?;
    state.adam.step(&mut state.online.values, &grad);
    if step_index % config.ema_frequency == 0 {
        soft_update(&mut state.target.values, &state.online.values, T::lit(config.ema_mix));
    }
    Ok(loss)
}

pub struct PretrainOutcome<T> {
    pub state: ContrastiveState<T>,
    /// One entry per step.
    pub losses: Vec<T>,
}

impl<T: Scalar> PretrainOutcome<T> {
    /// Mean of the last `window` losses.
    pub fn final_loss(&self, window: usize) -> Option<T> {
        let n = self.losses.len();
        if n == 0 {
            return None;
        }
        let tail = &self.losses[n.saturating_sub(window.max(1))..];
        Some(tail.iter().copied().sum::<T>() / T::lit(tail.len() as f64))
    }
}

/// Contrastive pretraining on a frame pool. Batches are drawn uniformly,
/// without replacement when the pool is large enough.
pub fn pretrain<T: Scalar>(pool: &[Frame], config: &ContrastiveTrainConfig) -> Result<PretrainOutcome<T>> {
    let views: Vec<Vec<Frame>> = pool.iter().map(|f| vec![f.clone()]).collect();
    pretrain_views(&views, config)
}

/// Pretraining where each pool entry lists several renderings of the same
/// state (for example a clean frame and corrupted copies of it). Anchor and
/// positive each pick one rendering of the sampled entry at random before the
/// usual random shift.
pub fn pretrain_views<T: Scalar>(pool: &[Vec<Frame>], config: &ContrastiveTrainConfig) -> Result<PretrainOutcome<T>> {
    config.validate()?;
    if pool.is_empty() || pool.iter().any(|v| v.is_empty()) {
        return Err(DegError::InvalidArgument("empty frame pool".into()));
    }
    let first = &pool[0][0];
    if !pool.iter().flatten().any(|f| f != first) {
        return Err(DegError::InvalidArgument("frame pool needs at least 2 distinct frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let init_seed = rng.random::<u64>();
    let online = EncoderParams::<T>::init(config.arch.clone(), init_seed);
    for f in pool.iter().flatten() {
        online.check_frame(f)?;
    }
    let mut state = ContrastiveState::new(online, config.learning_rate);
    let mut losses = Vec::with_capacity(config.total_steps);
    let m = config.batch_size;
    for step in 0..config.total_steps {
        let entries: Vec<&Vec<Frame>> = if pool.len() >= m {
            rand::seq::index::sample(&mut rng, pool.len(), m).into_iter().map(|i| &pool[i]).collect()
        } else {
            (0..m).map(|_| &pool[rng.random_range(0..pool.len())]).collect()
        };
        let mut pick = |views: &Vec<Frame>| -> usize { if views.len() == 1 { 0 } else { rng.random_range(0..views.len()) } };
        let picks: Vec<(usize, usize)> = entries.iter().map(|v| (pick(v), pick(v))).collect();
        let anchors: Vec<&Frame> = entries.iter().zip(&picks).map(|(v, p)| &v[p.0]).collect();
        let positives: Vec<&Frame> = entries.iter().zip(&picks).map(|(v, p)| &v[p.1]).collect();
        let loss = train_step_pairs(&mut state, &anchors, &positives, config, &mut rng, step)?;
        if step % 500 == 0 {
            log::debug!("contrastive step {step}: loss {loss}");
        }
        losses.push(loss);
    }
    Ok(PretrainOutcome { state, losses })
}

/// `(t, i)` = cosine similarity between `E(b_t)` and `E(a_i)`.
pub fn similarity_heatmap<T: Scalar>(params: &EncoderParams<T>, clip_a: &[Frame], clip_b: &[Frame]) -> Result<Matrix<T>> {
    if clip_a.is_empty() || clip_b.is_empty() {
        return Err(DegError::InvalidArgument("heatmap needs two non-empty sequences".into()));
    }
    let d = params.feature_dim();
    let unit = |frames: &[Frame]| -> Result<Vec<T>> {
        let refs: Vec<&Frame> = frames.iter().collect();
        let mut z = params.encode_batch(&refs)?;
        for row in z.chunks_exact_mut(d) {
            let n = ops::norm(row);
            if n == T::zero() {
                return Err(DegError::ZeroNorm);
            }
            row.iter_mut().for_each(|v| *v = *v / n);
        }
        Ok(z)
    };
    let za = unit(clip_a)?;
    let zb = unit(clip_b)?;
    let mut out = vec![T::zero(); clip_b.len() * clip_a.len()];
    ops::matmul_a_bt(&zb, &za, clip_b.len(), d, clip_a.len(), &mut out, false);
    Ok(Matrix::from_vec(clip_b.len(), clip_a.len(), out))
}

/// Mean of the diagonal minus mean of everything else (over the leading
/// square block).
pub fn diagonal_margin<T: Scalar>(heatmap: &Matrix<T>) -> T {
    let n = heatmap.rows().min(heatmap.cols());
    if n < 2 {
        return T::zero();
    }
    let (mut diag, mut off) = (T::zero(), T::zero());
    for r in 0..n {
        for c in 0..n {
            if r == c {
                diag += heatmap.get(r, c);
            } else {
                off += heatmap.get(r, c);
            }
        }
    }
    diag / T::lit(n as f64) - off / T::lit((n * n - n) as f64)
}
