//! Monte Carlo rollouts and data collection.

use super::{Environment, InitialController};
use crate::ensemble::TransitionDataset;
use crate::error::{CoreError, Result};
use crate::rng::{purpose, substream};
use nalgebra::{DMatrix, DVector};
use std::io::Write;

/// One sampled trajectory with the applied actions and raw noise norms.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub noise_norms_sq: Vec<f64>,
}

/// Sample `count` closed-loop trajectories of the environment under the
/// ancillary law `v_n = u_n + K_n (s_n - z_n)`.
///
/// Each trajectory consumes its own random substream, so the batch is
/// reproducible and order-independent. Used as the ground-truth containment
/// oracle for reachable tubes.
pub fn mc_rollout_ensemble(
    env: &dyn Environment,
    s0: &DVector<f64>,
    nominal: &[DVector<f64>],
    actions: &[DVector<f64>],
    gains: &[DMatrix<f64>],
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if nominal.len() < horizon + 1 {
        return Err(CoreError::InvalidInput(format!(
            "nominal trajectory must have at least horizon+1 = {} states, got {}",
            horizon + 1,
            nominal.len()
        )));
    }
    if actions.len() < horizon || gains.len() < horizon {
        return Err(CoreError::InvalidInput(
            "need one action and one gain per step".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for traj_idx in 0..count {
        let mut rng = substream(seed, &[purpose::MONTE_CARLO, traj_idx as u64]);
        let mut states = Vec::with_capacity(horizon + 1);
        let mut applied = Vec::with_capacity(horizon);
        let mut norms = Vec::with_capacity(horizon);
        let mut s = s0.clone();
        states.push(s.clone());
        for n in 0..horizon {
            let v = &actions[n] + &gains[n] * (&s - &nominal[n]);
            let (next, w_sq) = env.step_with_noise(&s, &v, &mut rng)?;
            applied.push(v);
            norms.push(w_sq);
            s = next;
            states.push(s.clone());
        }
        out.push(Trajectory {
            states,
            actions: applied,
            noise_norms_sq: norms,
        });
    }
    Ok(out)
}

/// Run the initial controller for `total_steps` environment steps in episodes
/// of `episode_len`, filling `dataset` and returning every visited state.
pub fn collect_transitions(
    env: &dyn Environment,
    controller: &InitialController,
    total_steps: usize,
    episode_len: usize,
    seed: u64,
    dataset: &mut TransitionDataset,
) -> Result<Vec<DVector<f64>>> {
    let mut visited = Vec::with_capacity(total_steps + total_steps / episode_len.max(1) + 1);
    let mut steps_done = 0usize;
    let mut episode = 0u64;
    while steps_done < total_steps {
        let mut init_rng = substream(seed, &[purpose::INIT_STATE, episode]);
        let mut env_rng = substream(seed, &[purpose::ENV_NOISE, episode]);
        let mut ctrl_rng = substream(seed, &[purpose::CONTROLLER, episode]);
        let mut s = env.sample_initial(&mut init_rng);
        visited.push(s.clone());
        for _ in 0..episode_len {
            if steps_done >= total_steps {
                break;
            }
            let a = controller.action(&s, &env.constraints().action, &mut ctrl_rng);
            let next = env.step(&s, &a, &mut env_rng)?;
            dataset.push(s.clone(), a, next.clone(), episode as usize)?;
            visited.push(next.clone());
            s = next;
            steps_done += 1;
        }
        episode += 1;
    }
    Ok(visited)
}

/// Write a trajectory batch as CSV: one row per step with
/// `episode, t, state components, action components, noise_norm_sq`.
pub fn export_trajectories_csv(path: &std::path::Path, batch: &[Trajectory]) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let (n_s, n_a) = match batch.first() {
        Some(t) => (
            t.states.first().map_or(0, |s| s.len()),
            t.actions.first().map_or(0, |a| a.len()),
        ),
        None => (0, 0),
    };
    let mut header = String::from("episode,t");
    for i in 0..n_s {
        header.push_str(&format!(",s{i}"));
    }
    for i in 0..n_a {
        header.push_str(&format!(",a{i}"));
    }
    header.push_str(",noise_norm_sq\n");
    file.write_all(header.as_bytes())
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    for (ep, traj) in batch.iter().enumerate() {
        for (t, s) in traj.states.iter().enumerate() {
            let mut row = format!("{ep},{t}");
            for v in s.iter() {
                row.push_str(&format!(",{v}"));
            }
            if t < traj.actions.len() {
                for v in traj.actions[t].iter() {
                    row.push_str(&format!(",{v}"));
                }
                row.push_str(&format!(",{}", traj.noise_norms_sq[t]));
            } else {
                for _ in 0..n_a {
                    row.push(',');
                }
                row.push(',');
            }
            row.push('\n');
            file.write_all(row.as_bytes())
                .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        }
    }
    Ok(())
}
