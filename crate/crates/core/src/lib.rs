pub mod agent;
pub mod env;
pub mod error;
pub mod frame;
pub mod guidance;
pub mod io;
pub mod latent;
pub mod matrix;
pub mod nn;
pub mod reward;
pub mod scalar;

/// Single-precision encoder used for training and serving.
pub type Encoder = latent::EncoderParams<f32>;
pub type Latent = latent::LatentVector<f32>;
pub type Policy = agent::PolicyParams<f32>;
pub type AgentLearner = agent::Learner<f32>;
pub type Replay = agent::ReplayBuffer<f32>;
/// Reward bookkeeping runs in double precision.
pub type RewardState = reward::EpisodeRewardState<f64>;
pub type Reward = reward::RewardBreakdown<f64>;
