//! Contrastive encoder.
//!
//! Frames are embedded by a small convolutional encoder `E`. During training
//! an anchor batch goes through `E` and an asymmetric head `u`, a positive
//! batch (independently shifted views of the same frames) goes through a
//! momentum copy `E'`, and the two are compared with a learned bilinear form
//! `W` under a softmax cross-entropy. Only `E` is used for similarity at
//! reward time.

mod contrastive;
mod encoder;

pub use contrastive::{
    contrastive_logits, contrastive_loss, diagonal_margin, loss_and_grad, loss_and_logit_grad, pretrain,
    pretrain_views,
    similarity_heatmap, train_step, train_step_pairs, ContrastiveState, ContrastiveTrainConfig, PretrainOutcome,
};
pub use encoder::{
    decode_checkpoint, encode_checkpoint, load_encoder, save_encoder, EncoderArch, EncoderCache, EncoderNet,
    EncoderParams, LatentVector, ENCODER_MAGIC, ENCODER_VERSION,
};
