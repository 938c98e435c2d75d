//! Ablation drivers: enumerate the study variants for each of the five
//! training factors, train them under identical seeds and report a
//! side-by-side figure-eight tracking table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{clean_env, run_tracking};
use crate::ckpt::Checkpoint;
use crate::config::{ActionPipeline, DrMode, RunConfig, SmoothnessKind};
use crate::error::{Error, Result};
use crate::ppo;
use crate::traj::ReferenceTrajectory;

/// A named configuration delta under study.
#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub name: String,
    pub cfg: RunConfig,
}

/// Variant list for a factor id in 1..=5.
///
/// 1: actor input space; 2: time vector placement; 3: smoothness mechanism;
/// 4: SysID/DR mode per dynamics parameter; 5: batch size (parallel envs).
pub fn factor_variants(factor: u8, base: &RunConfig) -> Result<Vec<AblationVariant>> {
    let mut variants = Vec::new();
    let mut push = |name: &str, cfg: RunConfig| {
        variants.push(AblationVariant { name: name.to_string(), cfg })
    };
    match factor {
        1 => {
            push("e_v_R", base.clone());
            let mut quat = base.clone();
            quat.env.rotation_obs = crate::config::RotationObs::Quaternion;
            push("e_v_q", quat);
            let mut no_vel = base.clone();
            no_vel.env.include_lin_vel = false;
            push("e_R", no_vel);
            let mut prev = base.clone();
            prev.env.include_prev_action = true;
            push("e_v_R_uprev", prev);
        }
        2 => {
            push("critic_t_only", base.clone());
            let mut both = base.clone();
            both.env.actor_time_vector = true;
            push("actor_and_critic_t", both);
            let mut none = base.clone();
            none.env.critic_time_vector = false;
            push("no_time_vector", none);
        }
        3 => {
            let mut clip = base.clone();
            clip.env.smoothness_kind = SmoothnessKind::None;
            clip.env.action_pipeline = ActionPipeline::Clip { frac: 0.5 };
            push("action_clipping", clip);
            let mut lpf = base.clone();
            lpf.env.smoothness_kind = SmoothnessKind::None;
            lpf.env.action_pipeline = ActionPipeline::LowPass { alpha: 0.4 };
            push("low_pass_filter", lpf);
            for (name, kind) in [
                ("acc", SmoothnessKind::Acc),
                ("jerk", SmoothnessKind::Jerk),
                ("snap", SmoothnessKind::Snap),
                ("action_norm", SmoothnessKind::ActionNorm),
                ("action_diff", SmoothnessKind::ActionDiff),
            ] {
                let mut v = base.clone();
                v.env.smoothness_kind = kind;
                v.env.smoothness_scale = None;
                v.env.action_pipeline = ActionPipeline::None;
                push(name, v);
            }
        }
        4 => {
            push("sysid", base.clone());
            let params: [(&str, fn(&mut crate::config::DrConfig, DrMode)); 4] = [
                ("mass", |d, m| d.mass = m),
                ("inertia", |d, m| d.inertia = m),
                ("motor_rate", |d, m| d.motor_rate = m),
                ("thrust_coeff", |d, m| d.thrust_coeff = m),
            ];
            let modes = [
                ("offset30", DrMode::Offset(0.30)),
                ("offset_dr30", DrMode::OffsetPlusDr(0.30)),
                ("sysid_dr30", DrMode::UniformDr(0.30)),
                ("sysid_dr10", DrMode::UniformDr(0.10)),
            ];
            for (pname, set) in params {
                for (mname, mode) in modes {
                    let mut v = base.clone();
                    v.env.dr = crate::config::DrConfig::all_sysid();
                    set(&mut v.env.dr, mode);
                    push(&format!("{pname}_{mname}"), v);
                }
            }
        }
        5 => {
            let base_envs = base.train.n_envs;
            for scale in [1usize, 4, 16] {
                let mut v = base.clone();
                v.train.n_envs = (base_envs * scale / 4).max(1);
                push(&format!("envs_{}", v.train.n_envs), v);
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown ablation factor {other} (expected 1..=5)"
            )))
        }
    }
    Ok(variants)
}

/// One row of an ablation comparison: deterministic-policy MED on the three
/// figure-eight speeds (single lap each).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub med_slow: Option<f64>,
    pub med_normal: Option<f64>,
    pub med_fast: Option<f64>,
    pub mean_action_diff: f64,
    pub train_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub factor: u8,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn render_table(&self) -> String {
        let mut out = format!("factor {}\n", self.factor);
        let width =
            self.rows.iter().map(|r| r.name.len()).max().unwrap_or(10).max(10);
        out.push_str(&format!(
            "{:width$}  {:>10} {:>10} {:>10} {:>10}\n",
            "variant",
            "slow",
            "normal",
            "fast",
            "|du|",
            width = width
        ));
        let cell = |v: Option<f64>| match v {
            Some(m) => format!("{m:>10.4}"),
            None => format!("{:>10}", "inf"),
        };
        for r in &self.rows {
            out.push_str(&format!(
                "{:width$}  {} {} {} {:>10.4}\n",
                r.name,
                cell(r.med_slow),
                cell(r.med_normal),
                cell(r.med_fast),
                r.mean_action_diff,
                width = width
            ));
        }
        out
    }
}

/// Train every variant of `factor` with identical seeds and evaluate each on
/// the figure-eight speeds. Artifacts land under `out_dir/<variant>/`.
pub fn ablate(factor: u8, base: &RunConfig, out_dir: &Path) -> Result<AblationReport> {
    let variants = factor_variants(factor, base)?;
    let mut rows = Vec::new();
    for v in variants {
        let dir = out_dir.join(&v.name);
        let outcome = ppo::train(&v.cfg, &dir)?;
        let ck = Checkpoint::load(&outcome.final_checkpoint)?;
        let (policy, _) = ck.restore_nets()?;
        let eval_cfg = clean_env(&v.cfg.env);
        let mut meds = [None; 3];
        let mut mean_ad = 0.0;
        for (i, period) in [15.0, 5.5, 3.5].iter().enumerate() {
            let traj = ReferenceTrajectory::figure_eight(*period)?;
            let trace =
                run_tracking(&policy, &v.cfg.quad, &v.cfg.gains, &eval_cfg, traj, 0, false)?;
            meds[i] = (!trace.crashed).then_some(trace.med);
            mean_ad += trace.mean_action_diff / 3.0;
        }
        rows.push(AblationRow {
            name: v.name,
            med_slow: meds[0],
            med_normal: meds[1],
            med_fast: meds[2],
            mean_action_diff: mean_ad,
            train_iterations: outcome.iterations,
        });
    }
    let report = AblationReport { factor, rows };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("ablation.json"),
        serde_json::to_string_pretty(&report).map_err(|e| Error::Io(std::io::Error::other(e)))?,
    )?;
    std::fs::write(out_dir.join("ablation.txt"), report.render_table())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_variant_sets_match_study_layout() {
        let base = RunConfig::default();
        assert_eq!(factor_variants(1, &base).unwrap().len(), 4);
        assert_eq!(factor_variants(2, &base).unwrap().len(), 3);
        let f3 = factor_variants(3, &base).unwrap();
        assert_eq!(f3.len(), 7, "seven smoothness mechanisms");
        let f4 = factor_variants(4, &base).unwrap();
        assert_eq!(f4.len(), 17, "sysid baseline + 4 params x 4 modes");
        assert_eq!(factor_variants(5, &base).unwrap().len(), 3);
        assert!(factor_variants(6, &base).is_err());
    }

    #[test]
    fn factor1_variant_dims_differ() {
        let base = RunConfig::default();
        let vs = factor_variants(1, &base).unwrap();
        let dims: Vec<usize> =
            vs.iter().map(|v| crate::env::actor_obs_dim(&v.cfg.env)).collect();
        assert_eq!(dims, vec![42, 37, 39, 46]);
    }

    #[test]
    fn tiny_ablation_smoke() {
        let mut base = RunConfig::default();
        base.train.n_envs = 2;
        base.train.horizon = 8;
        base.train.hidden_dim = 8;
        base.train.minibatch_count = 1;
        base.train.update_epochs = 1;
        base.train.total_iterations = 1;
        base.train.eval_every = 0;
        base.train.checkpoint_every = 0;
        base.env.episode_len = 20;
        let dir = tempfile::tempdir().unwrap();
        let report = ablate(2, &base, dir.path()).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(dir.path().join("ablation.json").exists());
    }
}
