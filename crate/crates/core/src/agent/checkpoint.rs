//! "DEGA" policy checkpoints.
//!
//! Layout (little-endian): magic, version u32, obs_dim u32, act_dim u32,
//! hidden u32, then the actor, critic and target-critic vectors, each as a
//! u64 length followed by f64 values. Learner snapshots append both Adam
//! states (step count, first and second moments) and the update counter.

use super::{Learner, PolicyParams};
use crate::error::Result;
use crate::io::{ByteReader, ByteWriter};
use crate::nn::Adam;
use crate::scalar::Scalar;
use std::path::Path;

pub const POLICY_MAGIC: &[u8; 4] = b"DEGA";
pub const POLICY_VERSION: u32 = 1;

fn put<T: Scalar>(w: &mut ByteWriter, v: &[T]) {
    w.u64(v.len() as u64);
    w.f64s(v.iter().map(|x| x.as_f64()));
}

fn take<T: Scalar>(r: &mut ByteReader<'_>, expected: usize, what: &str) -> Result<Vec<T>> {
    let n = r.u64(what)? as usize;
    if n != expected {
        return Err(r.error(format!("{what} has {n} values, expected {expected}")));
    }
    let vals = r.f64s(n, what)?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(r.error(format!("{what} holds non-finite values")));
    }
    Ok(vals.into_iter().map(T::lit).collect())
}

fn write_policy<T: Scalar>(w: &mut ByteWriter, p: &PolicyParams<T>) {
    w.magic(POLICY_MAGIC).u32(POLICY_VERSION);
    w.u32(p.net.obs_dim as u32).u32(p.net.act_dim as u32).u32(p.net.hidden as u32);
    put(w, &p.actor);
    put(w, &p.critic);
    put(w, &p.target_critic);
}

fn read_policy<T: Scalar>(r: &mut ByteReader<'_>) -> Result<PolicyParams<T>> {
    r.expect_magic(POLICY_MAGIC)?;
    let version = r.u32("version")?;
    if version != POLICY_VERSION {
        return Err(crate::error::DegError::UnsupportedVersion {
            format: "DEGA",
            found: version,
            expected: POLICY_VERSION,
        });
    }
    let obs_dim = r.u32("obs_dim")? as usize;
    let act_dim = r.u32("act_dim")? as usize;
    let hidden = r.u32("hidden")? as usize;
    if obs_dim == 0 || !(2..=3).contains(&act_dim) || hidden == 0 || hidden > 1 << 16 || obs_dim > 1 << 20 {
        return Err(r.error("implausible network dimensions"));
    }
    let mut p = PolicyParams::<T>::init(obs_dim, act_dim, hidden, 0);
    p.actor = take(r, p.actor.len(), "actor")?;
    p.critic = take(r, p.critic.len(), "critic")?;
    p.target_critic = take(r, p.target_critic.len(), "target_critic")?;
    Ok(p)
}

pub fn encode_policy<T: Scalar>(p: &PolicyParams<T>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_policy(&mut w, p);
    w.into_bytes()
}

pub fn decode_policy<T: Scalar>(bytes: &[u8]) -> Result<PolicyParams<T>> {
    let mut r = ByteReader::new(bytes);
    let p = read_policy(&mut r)?;
    r.finish()?;
    Ok(p)
}

pub fn save_policy<T: Scalar>(p: &PolicyParams<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_policy(p))?;
    Ok(())
}

pub fn load_policy<T: Scalar>(path: &Path) -> Result<PolicyParams<T>> {
    decode_policy(&std::fs::read(path)?)
}

fn put_adam<T: Scalar>(w: &mut ByteWriter, a: &Adam<T>) {
    w.u64(a.t);
    put(w, &a.m);
    put(w, &a.v);
}

fn take_adam<T: Scalar>(r: &mut ByteReader<'_>, a: &mut Adam<T>, what: &str) -> Result<()> {
    a.t = r.u64(what)?;
    a.m = take(r, a.m.len(), what)?;
    a.v = take(r, a.v.len(), what)?;
    Ok(())
}

/// Policy checkpoint followed by the optimizer state.
pub fn encode_learner<T: Scalar>(l: &Learner<T>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_policy(&mut w, &l.params);
    put_adam(&mut w, &l.actor_opt);
    put_adam(&mut w, &l.critic_opt);
    w.u64(l.updates);
    w.into_bytes()
}

/// Restores a learner; learning rates come from `config`.
pub fn decode_learner<T: Scalar>(bytes: &[u8], config: &super::AgentConfig) -> Result<Learner<T>> {
    let mut r = ByteReader::new(bytes);
    let params = read_policy(&mut r)?;
    let mut l = Learner::new(params, config);
    take_adam(&mut r, &mut l.actor_opt, "actor_opt")?;
    take_adam(&mut r, &mut l.critic_opt, "critic_opt")?;
    l.updates = r.u64("updates")?;
    r.finish()?;
    Ok(l)
}
