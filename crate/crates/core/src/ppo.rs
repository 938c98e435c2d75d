//! On-policy PPO: batched rollout collection over parallel environments,
//! generalized advantage estimation, the clipped surrogate objective with
//! hand-derived gradients, and the training loop.
//!
//! Determinism contract: for a fixed seed the entire training trajectory is
//! bit-identical. Parallel work is split into a fixed number of chunks and
//! every reduction runs in chunk order, so thread scheduling cannot change
//! results.

use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use ndarray::parallel::prelude::*;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench;
use crate::ckpt::Checkpoint;
use crate::config::{RunConfig, TrainConfig};
use crate::env::{actor_obs_dim, critic_input_scale, critic_obs_dim, QuadEnv, Termination};
use crate::error::{Error, Result};
use crate::nn::{
    add_assign, global_grad_norm, scale_tensors, Adam, LayerNormPos, Policy, PolicyGrads,
    Scalar, ValueNet, ValueNetGrads,
};
use crate::traj::ReferenceTrajectory;

/// Fixed parallel fan-out; results never depend on the actual thread count.
const PAR_CHUNKS: usize = 8;

fn chunk_rows(n: usize) -> usize {
    n.div_ceil(PAR_CHUNKS).max(1)
}

/// A set of independently seeded environments stepped in lockstep.
pub struct VecEnvs {
    pub envs: Vec<QuadEnv>,
    action_rngs: Vec<ChaCha8Rng>,
    // Running per-env episode accumulators (episodes span batch boundaries).
    ep_return: Vec<f64>,
    ep_len: Vec<usize>,
}

impl VecEnvs {
    pub fn new(cfg: &RunConfig, n_envs: usize, seed: u64) -> Result<Self> {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let env_seeds: Vec<u64> = (0..n_envs).map(|_| master.random()).collect();
        let action_seeds: Vec<u64> = (0..n_envs).map(|_| master.random()).collect();
        let envs = env_seeds
            .into_iter()
            .map(|s| QuadEnv::new(cfg.quad.clone(), &cfg.gains, cfg.env.clone(), s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            envs,
            action_rngs: action_seeds.into_iter().map(ChaCha8Rng::seed_from_u64).collect(),
            ep_return: vec![0.0; n_envs],
            ep_len: vec![0; n_envs],
        })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }
}

/// Everything PPO needs from one collection phase. Flat arrays are indexed
/// `t * n_envs + e`; per-step grids are `(horizon, n_envs)`.
pub struct RolloutBatch {
    pub horizon: usize,
    pub n_envs: usize,
    pub actor_obs: Array2<f32>,
    pub critic_obs: Array2<f32>,
    pub actions: Array2<f32>,
    pub log_probs: Array1<f32>,
    pub rewards: Array2<f32>,
    pub values: Array2<f32>,
    pub dones: Array2<f32>,
    /// Critic value of the post-step state for time-limit truncations
    /// (zero for crashes and non-terminal steps).
    pub trunc_values: Array2<f32>,
    /// Critic value of the state left after the final step, per env.
    pub bootstrap: Array1<f32>,
    pub stats: RolloutStats,
}

/// Aggregate statistics of one collection phase.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RolloutStats {
    pub episodes: usize,
    pub crashes: usize,
    pub mean_episode_return: f64,
    pub mean_episode_len: f64,
    pub mean_step_reward: f64,
    pub mean_task: f64,
    pub mean_smooth: f64,
    pub mean_action_diff: f64,
}

/// Batched policy means with fixed-chunk parallelism.
pub fn par_policy_means(policy: &Policy<f32>, obs: &ArrayView2<f32>) -> Array2<f32> {
    let n = obs.nrows();
    let cs = chunk_rows(n);
    let mut out = Array2::zeros((n, policy.head.act_dim()));
    out.axis_chunks_iter_mut(Axis(0), cs)
        .into_par_iter()
        .zip(obs.axis_chunks_iter(Axis(0), cs).into_par_iter())
        .for_each(|(mut o, x)| o.assign(&policy.forward_mean(&x)));
    out
}

/// Batched critic values with fixed-chunk parallelism.
pub fn par_values(critic: &ValueNet<f32>, obs: &ArrayView2<f32>) -> Array1<f32> {
    let n = obs.nrows();
    let cs = chunk_rows(n);
    let mut out = Array1::zeros(n);
    out.axis_chunks_iter_mut(Axis(0), cs)
        .into_par_iter()
        .zip(obs.axis_chunks_iter(Axis(0), cs).into_par_iter())
        .for_each(|(mut o, x)| o.assign(&critic.forward(&x)));
    out
}

/// Step every environment `horizon` times under the stochastic policy,
/// recording what the update phase needs. Environments auto-reset; truncated
/// episodes record a bootstrap value of their terminal state.
pub fn collect_rollouts(
    venvs: &mut VecEnvs,
    policy: &Policy<f32>,
    critic: &ValueNet<f32>,
    horizon: usize,
) -> Result<RolloutBatch> {
    let n = venvs.len();
    let cfg = venvs.envs[0].cfg.clone();
    let da = actor_obs_dim(&cfg);
    let dc = critic_obs_dim(&cfg);
    let act_dim = policy.head.act_dim();

    let mut actor_obs = Array2::<f32>::zeros((horizon * n, da));
    let mut critic_obs = Array2::<f32>::zeros((horizon * n, dc));
    let mut actions = Array2::<f32>::zeros((horizon * n, act_dim));
    let mut log_probs = Array1::<f32>::zeros(horizon * n);
    let mut rewards = Array2::<f32>::zeros((horizon, n));
    let mut values = Array2::<f32>::zeros((horizon, n));
    let mut dones = Array2::<f32>::zeros((horizon, n));
    let mut trunc_values = Array2::<f32>::zeros((horizon, n));

    let mut stats = RolloutStats::default();
    let mut return_sum = 0.0;
    let mut len_sum = 0usize;

    for t in 0..horizon {
        let row0 = t * n;
        {
            let (mut a_slab, mut c_slab) = (
                actor_obs.slice_mut(s![row0..row0 + n, ..]),
                critic_obs.slice_mut(s![row0..row0 + n, ..]),
            );
            a_slab
                .outer_iter_mut()
                .into_par_iter()
                .zip(c_slab.outer_iter_mut().into_par_iter())
                .zip(venvs.envs.par_iter())
                .for_each(|((mut ar, mut cr), env)| {
                    env.write_obs(ar.as_slice_mut().unwrap(), cr.as_slice_mut().unwrap())
                });
        }
        let a_slab = actor_obs.slice(s![row0..row0 + n, ..]);
        let c_slab = critic_obs.slice(s![row0..row0 + n, ..]);
        let means = par_policy_means(policy, &a_slab);
        values.row_mut(t).assign(&par_values(critic, &c_slab));

        let mut raw_actions: Vec<[f64; 4]> = Vec::with_capacity(n);
        for e in 0..n {
            let (a, lp) = policy.head.sample_row(&means.row(e), &mut venvs.action_rngs[e]);
            let mut raw = [0.0f64; 4];
            for d in 0..act_dim {
                actions[(row0 + e, d)] = a[d];
                raw[d] = a[d] as f64;
            }
            log_probs[row0 + e] = lp;
            raw_actions.push(raw);
        }

        let results: Vec<_> = venvs
            .envs
            .par_iter_mut()
            .zip(raw_actions.par_iter())
            .map(|(env, raw)| env.step(raw))
            .collect();

        let mut trunc_envs: Vec<usize> = Vec::new();
        for (e, res) in results.into_iter().enumerate() {
            let r = res?;
            rewards[(t, e)] = r.reward.total as f32;
            stats.mean_step_reward += r.reward.total;
            stats.mean_task += r.reward.task;
            stats.mean_smooth += r.reward.smooth;
            stats.mean_action_diff += r.action_diff;
            venvs.ep_return[e] += r.reward.total;
            venvs.ep_len[e] += 1;
            match r.termination {
                Termination::Running => {}
                Termination::Crashed => {
                    dones[(t, e)] = 1.0;
                    stats.episodes += 1;
                    stats.crashes += 1;
                    return_sum += venvs.ep_return[e];
                    len_sum += venvs.ep_len[e];
                    venvs.ep_return[e] = 0.0;
                    venvs.ep_len[e] = 0;
                }
                Termination::TimeLimit => {
                    dones[(t, e)] = 1.0;
                    stats.episodes += 1;
                    return_sum += venvs.ep_return[e];
                    len_sum += venvs.ep_len[e];
                    venvs.ep_return[e] = 0.0;
                    venvs.ep_len[e] = 0;
                    trunc_envs.push(e);
                }
            }
        }

        if !trunc_envs.is_empty() {
            let mut term_obs = Array2::<f32>::zeros((trunc_envs.len(), dc));
            let mut scratch_actor = vec![0.0f32; da];
            for (i, &e) in trunc_envs.iter().enumerate() {
                venvs.envs[e]
                    .write_obs(&mut scratch_actor, term_obs.row_mut(i).as_slice_mut().unwrap());
            }
            let term_vals = par_values(critic, &term_obs.view());
            for (i, &e) in trunc_envs.iter().enumerate() {
                trunc_values[(t, e)] = term_vals[i];
            }
        }

        venvs
            .envs
            .par_iter_mut()
            .map(|env| {
                if env.terminated() != Termination::Running {
                    env.reset()
                } else {
                    Ok(())
                }
            })
            .collect::<Result<Vec<_>>>()?;
    }

    // Bootstrap values for whatever state each env ended in.
    let mut final_obs = Array2::<f32>::zeros((n, dc));
    let mut scratch_actor = vec![0.0f32; da];
    for (e, env) in venvs.envs.iter().enumerate() {
        env.write_obs(&mut scratch_actor, final_obs.row_mut(e).as_slice_mut().unwrap());
    }
    let bootstrap = par_values(critic, &final_obs.view());

    let steps = (horizon * n) as f64;
    stats.mean_step_reward /= steps;
    stats.mean_task /= steps;
    stats.mean_smooth /= steps;
    stats.mean_action_diff /= steps;
    if stats.episodes > 0 {
        stats.mean_episode_return = return_sum / stats.episodes as f64;
        stats.mean_episode_len = len_sum as f64 / stats.episodes as f64;
    }

    Ok(RolloutBatch {
        horizon,
        n_envs: n,
        actor_obs,
        critic_obs,
        actions,
        log_probs,
        rewards,
        values,
        dones,
        trunc_values,
        bootstrap,
        stats,
    })
}

/// Generalized advantage estimation:
/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t and
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}, with V at the horizon
/// taken from `bootstrap`. Returns (advantages, returns = A + V).
pub fn compute_gae<F: Scalar>(
    rewards: &ArrayView2<F>,
    values: &ArrayView2<F>,
    dones: &ArrayView2<F>,
    bootstrap: &ArrayView1<F>,
    gamma: F,
    lam: F,
) -> (Array2<F>, Array2<F>) {
    let (h, n) = rewards.dim();
    let mut adv = Array2::<F>::zeros((h, n));
    let mut a_next = Array1::<F>::zeros(n);
    let mut v_next = bootstrap.to_owned();
    for t in (0..h).rev() {
        for e in 0..n {
            let not_done = F::one() - dones[(t, e)];
            let delta = rewards[(t, e)] + gamma * v_next[e] * not_done - values[(t, e)];
            let a = delta + gamma * lam * not_done * a_next[e];
            adv[(t, e)] = a;
            a_next[e] = a;
            v_next[e] = values[(t, e)];
        }
    }
    let returns = &adv + values;
    (adv, returns)
}

/// Scalar diagnostics of one optimization step.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate PPO loss over one minibatch, with gradients accumulated
/// into `pol_grads` / `val_grads` (callers pass zeroed buffers).
///
/// total = policy + value_coef * value_mse - entropy_coef * entropy.
/// Generic over the scalar: training runs in f32, gradient checks in f64.
#[allow(clippy::too_many_arguments)]
pub fn ppo_minibatch<F: Scalar>(
    policy: &Policy<F>,
    critic: &ValueNet<F>,
    actor_obs: &ArrayView2<F>,
    critic_obs: &ArrayView2<F>,
    actions: &ArrayView2<F>,
    old_log_probs: &ArrayView1<F>,
    advantages: &ArrayView1<F>,
    returns: &ArrayView1<F>,
    cfg: &TrainConfig,
    pol_grads: &mut PolicyGrads<F>,
    val_grads: &mut ValueNetGrads<F>,
) -> Result<LossStats> {
    let m = actor_obs.nrows();
    let inv_m = F::from_f64(1.0 / m as f64);
    let cs = chunk_rows(m);
    let act_dim = policy.head.act_dim();
    let log_std = policy.head.clamped_log_std();
    let std: Vec<F> = log_std.iter().map(|v| v.exp()).collect();
    let eps = F::from_f64(cfg.clip_eps);
    let half = F::from_f64(0.5);
    let half_ln2pi = F::from_f64(0.5 * (2.0 * std::f64::consts::PI).ln());
    let value_coef = F::from_f64(cfg.value_coef);

    struct ChunkOut<F> {
        pol: PolicyGrads<F>,
        val: ValueNetGrads<F>,
        pol_loss: f64,
        val_loss: f64,
        clipped: usize,
    }

    let ranges: Vec<(usize, usize)> =
        (0..m).step_by(cs).map(|lo| (lo, (lo + cs).min(m))).collect();

    let chunks: Vec<ChunkOut<F>> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let a_obs = actor_obs.slice(s![lo..hi, ..]);
            let c_obs = critic_obs.slice(s![lo..hi, ..]);
            let (means, cache) = policy.forward_cached(&a_obs);
            let mut pol = policy.zero_grads();
            let mut val = critic.zero_grads();
            let mut d_means = Array2::<F>::zeros((hi - lo, act_dim));
            let mut pol_loss = 0.0f64;
            let mut clipped = 0usize;
            for i in 0..(hi - lo) {
                let row = lo + i;
                let mut lp_new = F::zero();
                let mut zs = [F::zero(); 8];
                for d in 0..act_dim {
                    let z = (actions[(row, d)] - means[(i, d)]) / std[d];
                    zs[d] = z;
                    lp_new = lp_new - half * z * z - log_std[d] - half_ln2pi;
                }
                let adv = advantages[row];
                let ratio = (lp_new - old_log_probs[row]).exp();
                let s1 = ratio * adv;
                let s2 = ratio.min(F::one() + eps).max(F::one() - eps) * adv;
                pol_loss += -(s1.min(s2)).to_f64();
                if (ratio - F::one()).abs() > eps {
                    clipped += 1;
                }
                if s1 <= s2 {
                    // Gradient flows through the unclipped branch.
                    let c = -adv * ratio * inv_m;
                    for d in 0..act_dim {
                        // dlogp/dmean = z / std
                        d_means[(i, d)] = c * zs[d] / std[d];
                        pol.head.log_std[d] =
                            pol.head.log_std[d] + c * (zs[d] * zs[d] - F::one());
                    }
                }
            }
            policy.backward(&cache, &d_means.view(), &mut pol);

            let (vals, vcache) = critic.forward_cached(&c_obs);
            let mut d_vals = Array1::<F>::zeros(hi - lo);
            let mut val_loss = 0.0f64;
            let two = F::one() + F::one();
            for i in 0..(hi - lo) {
                let resid = vals[i] - returns[lo + i];
                val_loss += (resid * resid).to_f64();
                d_vals[i] = two * resid * inv_m * value_coef;
            }
            critic.backward(&vcache, &d_vals.view(), &mut val);
            ChunkOut { pol, val, pol_loss, val_loss, clipped }
        })
        .collect();

    let mut pol_loss = 0.0;
    let mut val_loss = 0.0;
    let mut clipped = 0usize;
    for c in chunks {
        add_assign(pol_grads, &c.pol);
        add_assign(val_grads, &c.val);
        pol_loss += c.pol_loss;
        val_loss += c.val_loss;
        clipped += c.clipped;
    }
    pol_loss /= m as f64;
    val_loss /= m as f64;

    // Entropy bonus enters once per minibatch; log-std gradients respect the
    // clamp.
    let entropy = policy.head.entropy().to_f64();
    let mask = policy.head.log_std_grad_mask();
    let ec = F::from_f64(cfg.entropy_coef);
    for d in 0..act_dim {
        pol_grads.head.log_std[d] = (pol_grads.head.log_std[d] - ec) * mask[d];
    }

    let total = pol_loss + cfg.value_coef * val_loss - cfg.entropy_coef * entropy;
    if !total.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite loss: policy {pol_loss}, value {val_loss}"
        )));
    }
    Ok(LossStats {
        policy_loss: pol_loss,
        value_loss: val_loss,
        entropy,
        total_loss: total,
        clip_fraction: clipped as f64 / m as f64,
    })
}

fn gather_rows(src: &ArrayView2<f32>, idx: &[u32]) -> Array2<f32> {
    let mut out = Array2::zeros((idx.len(), src.ncols()));
    for (i, &r) in idx.iter().enumerate() {
        out.row_mut(i).assign(&src.row(r as usize));
    }
    out
}

fn gather_1d(src: &ArrayView1<f32>, idx: &[u32]) -> Array1<f32> {
    Array1::from_iter(idx.iter().map(|&r| src[r as usize]))
}

/// One line of the training metrics log. Field order is part of the format;
/// wall-clock time deliberately lives elsewhere so this file is bit-identical
/// across reruns of the same seed.
#[derive(Serialize)]
struct MetricsRecord {
    iteration: usize,
    env_steps: u64,
    #[serde(flatten)]
    rollout: RolloutStats,
    #[serde(flatten)]
    losses: LossStats,
    grad_norm: f64,
    eval_med: Option<f64>,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub iterations: usize,
    pub env_steps: u64,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub stopped_early: bool,
    pub last_eval_med: Option<f64>,
}

/// Full training loop: collect, estimate advantages, run clipped-surrogate
/// updates, log metrics, checkpoint periodically and optionally stop early on
/// an evaluation MED target.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    cfg.save(&out_dir.join("config.toml"))?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    let mut timings = std::io::BufWriter::new(std::fs::File::create(out_dir.join("timings.jsonl"))?);

    let t = &cfg.train;
    let mut master = ChaCha8Rng::seed_from_u64(t.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.random());
    let env_seed: u64 = master.random();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(master.random());

    let mut policy = Policy::<f32>::new(
        &mut init_rng,
        actor_obs_dim(&cfg.env),
        t.hidden_dim,
        4,
        t.init_log_std,
        LayerNormPos::AfterFirst,
    );
    let mut critic = ValueNet::<f32>::new(
        &mut init_rng,
        critic_obs_dim(&cfg.env),
        t.hidden_dim,
        critic_input_scale(&cfg.env),
        LayerNormPos::AfterFirst,
    );
    let mut adam_policy = Adam::new(&policy, t.learning_rate);
    let mut adam_critic = Adam::new(&critic, t.learning_rate);
    let mut venvs = VecEnvs::new(cfg, t.n_envs, env_seed)?;

    let batch = t.batch_size();
    let mb_size = batch / t.minibatch_count;
    let mut env_steps = 0u64;
    let mut stopped_early = false;
    let mut last_eval_med = None;
    let mut iterations = 0usize;

    let ckpt_path = out_dir.join("checkpoint.ckpt");
    let run_start = std::time::Instant::now();

    for it in 1..=t.total_iterations {
        iterations = it;
        let iter_start = std::time::Instant::now();
        let roll = collect_rollouts(&mut venvs, &policy, &critic, t.horizon)?;
        env_steps += (t.horizon * t.n_envs) as u64;

        // Truncation-aware rewards: dying of old age still bootstraps.
        let rewards_adj = &roll.rewards + &(roll.trunc_values.mapv(|v| v * t.gamma as f32));
        let (adv, ret) = compute_gae(
            &rewards_adj.view(),
            &roll.values.view(),
            &roll.dones.view(),
            &roll.bootstrap.view(),
            t.gamma as f32,
            t.gae_lambda as f32,
        );
        // Flatten to the obs row order (t * n_envs + e) and normalize
        // advantages over the whole batch.
        let adv_flat = Array1::from_iter(adv.iter().copied());
        let ret_flat = Array1::from_iter(ret.iter().copied());
        let mean = adv_flat.sum() as f64 / batch as f64;
        let mut var = 0.0f64;
        for v in adv_flat.iter() {
            let d = *v as f64 - mean;
            var += d * d;
        }
        let std = (var / batch as f64).sqrt().max(1e-8);
        let adv_norm = adv_flat.mapv(|v| ((v as f64 - mean) / std) as f32);

        let mut idx: Vec<u32> = (0..batch as u32).collect();
        let mut loss_acc = LossStats::default();
        let mut grad_norm_acc = 0.0f64;
        let mut n_updates = 0usize;
        for _epoch in 0..t.update_epochs {
            idx.shuffle(&mut shuffle_rng);
            for mb in 0..t.minibatch_count {
                let sel = &idx[mb * mb_size..(mb + 1) * mb_size];
                let a_obs = gather_rows(&roll.actor_obs.view(), sel);
                let c_obs = gather_rows(&roll.critic_obs.view(), sel);
                let acts = gather_rows(&roll.actions.view(), sel);
                let old_lp = gather_1d(&roll.log_probs.view(), sel);
                let mb_adv = gather_1d(&adv_norm.view(), sel);
                let mb_ret = gather_1d(&ret_flat.view(), sel);

                let mut pg = policy.zero_grads();
                let mut vg = critic.zero_grads();
                let stats = ppo_minibatch(
                    &policy,
                    &critic,
                    &a_obs.view(),
                    &c_obs.view(),
                    &acts.view(),
                    &old_lp.view(),
                    &mb_adv.view(),
                    &mb_ret.view(),
                    t,
                    &mut pg,
                    &mut vg,
                )?;

                let norm = ((global_grad_norm(&pg).powi(2) + global_grad_norm(&vg).powi(2))
                    as f32)
                    .sqrt();
                if norm as f64 > t.max_grad_norm {
                    let f = (t.max_grad_norm / norm as f64) as f32;
                    scale_tensors(&mut pg, f);
                    scale_tensors(&mut vg, f);
                }
                adam_policy.step(&mut policy, &pg);
                adam_critic.step(&mut critic, &vg);

                loss_acc.policy_loss += stats.policy_loss;
                loss_acc.value_loss += stats.value_loss;
                loss_acc.entropy += stats.entropy;
                loss_acc.total_loss += stats.total_loss;
                loss_acc.clip_fraction += stats.clip_fraction;
                grad_norm_acc += norm as f64;
                n_updates += 1;
            }
        }
        let inv = 1.0 / n_updates as f64;
        loss_acc.policy_loss *= inv;
        loss_acc.value_loss *= inv;
        loss_acc.entropy *= inv;
        loss_acc.total_loss *= inv;
        loss_acc.clip_fraction *= inv;
        grad_norm_acc *= inv;

        let mut eval_med = None;
        if t.eval_every > 0 && it % t.eval_every == 0 {
            let med = eval_slow_figure_eight(&policy, cfg)?;
            eval_med = Some(med);
            last_eval_med = Some(med);
            if let Some(target) = t.stop_at_eval_med {
                if med <= target {
                    stopped_early = true;
                }
            }
        }

        let record = MetricsRecord {
            iteration: it,
            env_steps,
            rollout: roll.stats.clone(),
            losses: loss_acc,
            grad_norm: grad_norm_acc,
            eval_med,
        };
        serde_json::to_writer(&mut metrics, &record)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        metrics.write_all(b"\n")?;
        metrics.flush()?;
        writeln!(
            timings,
            "{{\"iteration\":{},\"wall_ms\":{},\"total_s\":{:.1}}}",
            it,
            iter_start.elapsed().as_millis(),
            run_start.elapsed().as_secs_f64()
        )?;
        timings.flush()?;
        log::info!(
            "iter {it}: reward/step {:.3} task {:.3} | ep_ret {:.1} len {:.0} crashes {} | value_loss {:.4} clip {:.2} {} [{:.1}s]",
            roll.stats.mean_step_reward,
            roll.stats.mean_task,
            roll.stats.mean_episode_return,
            roll.stats.mean_episode_len,
            roll.stats.crashes,
            loss_acc.value_loss,
            loss_acc.clip_fraction,
            eval_med.map(|m| format!("eval_med {m:.4}")).unwrap_or_default(),
            iter_start.elapsed().as_secs_f64(),
        );

        if (t.checkpoint_every > 0 && it % t.checkpoint_every == 0)
            || it == t.total_iterations
            || stopped_early
        {
            Checkpoint::from_nets(&policy, &critic, cfg, it).save(&ckpt_path)?;
        }
        if stopped_early {
            break;
        }
    }

    if !ckpt_path.exists() {
        Checkpoint::from_nets(&policy, &critic, cfg, iterations).save(&ckpt_path)?;
    }
    Ok(TrainOutcome {
        iterations,
        env_steps,
        final_checkpoint: ckpt_path,
        metrics_path,
        stopped_early,
        last_eval_med,
    })
}

/// Deterministic-policy MED over one slow figure-eight lap, used for early
/// stopping during training.
pub fn eval_slow_figure_eight(policy: &Policy<f32>, cfg: &RunConfig) -> Result<f64> {
    let traj = ReferenceTrajectory::figure_eight(15.0)?;
    let trace = bench::run_tracking(
        policy,
        &cfg.quad,
        &cfg.gains,
        &bench::clean_env(&cfg.env),
        traj,
        0,
        false,
    )?;
    Ok(trace.med)
}
