//! Ensemble training: bootstrap resampling, Gaussian NLL, Adam, early stop.

use super::dataset::TransitionDataset;
use super::net::{Dense, GaussianMlp};
use super::{EnsembleModel, Normalizer};
use crate::error::{CoreError, Result};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of the dataset held out for early stopping.
    pub holdout_frac: f64,
    /// Epochs without holdout improvement before a member stops.
    pub patience: usize,
    pub min_logvar: f64,
    pub max_logvar: f64,
    pub predict_delta: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![16, 16],
            epochs: 60,
            batch_size: 256,
            learning_rate: 1e-3,
            holdout_frac: 0.1,
            patience: 8,
            min_logvar: (1e-8_f64).ln(),
            max_logvar: (1e2_f64).ln(),
            predict_delta: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub member: usize,
    pub epoch: usize,
    pub train_nll: f64,
    pub holdout_nll: f64,
}

pub struct TrainOutcome {
    pub model: EnsembleModel,
    pub history: Vec<EpochRecord>,
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: usize,
    lr: f64,
}

impl Adam {
    fn new(net: &GaussianMlp, lr: f64) -> Self {
        let zeros: Vec<Dense> = net
            .layers
            .iter()
            .map(|l| Dense {
                w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                b: nalgebra::DVector::zeros(l.b.len()),
            })
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
        }
    }

    fn step(&mut self, net: &mut GaussianMlp, grads: &[Dense]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for (li, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[li], &mut self.v[li]);
            let layer = &mut net.layers[li];
            for idx in 0..layer.w.len() {
                let gi = g.w[idx];
                m.w[idx] = B1 * m.w[idx] + (1.0 - B1) * gi;
                v.w[idx] = B2 * v.w[idx] + (1.0 - B2) * gi * gi;
                layer.w[idx] -= self.lr * (m.w[idx] / bc1) / ((v.w[idx] / bc2).sqrt() + EPS);
            }
            for idx in 0..layer.b.len() {
                let gi = g.b[idx];
                m.b[idx] = B1 * m.b[idx] + (1.0 - B1) * gi;
                v.b[idx] = B2 * v.b[idx] + (1.0 - B2) * gi * gi;
                layer.b[idx] -= self.lr * (m.b[idx] / bc1) / ((v.b[idx] / bc2).sqrt() + EPS);
            }
        }
    }
}

fn gather_columns(mat: &DMatrix<f64>, idxs: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(mat.nrows(), idxs.len());
    for (c, &i) in idxs.iter().enumerate() {
        out.set_column(c, &mat.column(i));
    }
    out
}

/// Train a fresh ensemble on the dataset.
///
/// Each member sees its own bootstrap resample of the training split and its
/// own weight initialization; normalization statistics come from the full
/// dataset. Deterministic for a fixed `rng` state.
pub fn train(
    dataset: &TransitionDataset,
    config: &TrainConfig,
    rng: &mut ChaCha12Rng,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(CoreError::Training("dataset is empty".into()));
    }
    if config.members < 2 {
        return Err(CoreError::Training("ensemble needs at least 2 members".into()));
    }
    let n = dataset.len();
    let n_s = dataset.state_dim();
    let n_a = dataset.action_dim();
    let n_in = n_s + n_a;

    let mut inputs = DMatrix::zeros(n_in, n);
    let mut targets = DMatrix::zeros(n_s, n);
    for (c, tr) in dataset.iter().enumerate() {
        for i in 0..n_s {
            inputs[(i, c)] = tr.state[i];
            targets[(i, c)] = if config.predict_delta {
                tr.next_state[i] - tr.state[i]
            } else {
                tr.next_state[i]
            };
        }
        for i in 0..n_a {
            inputs[(n_s + i, c)] = tr.action[i];
        }
    }

    let input_norm = Normalizer::fit(&inputs);
    let output_norm = Normalizer::fit(&targets);
    let xn = input_norm.normalize_batch(&inputs);
    let yn = output_norm.normalize_batch(&targets);

    // Shared holdout split.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let holdout_n = ((n as f64 * config.holdout_frac).round() as usize).min(n - 1);
    let (holdout_idx, train_idx) = order.split_at(holdout_n);
    let holdout_x = gather_columns(&xn, holdout_idx);
    let holdout_y = gather_columns(&yn, holdout_idx);

    let member_seeds: Vec<u64> = (0..config.members).map(|_| rng.random()).collect();

    let mut members = Vec::with_capacity(config.members);
    let mut history = Vec::new();
    for (e, &seed) in member_seeds.iter().enumerate() {
        let mut mrng = ChaCha12Rng::seed_from_u64(seed);
        let mut net = GaussianMlp::new(
            n_in,
            n_s,
            &config.hidden,
            config.min_logvar,
            config.max_logvar,
            &mut mrng,
        );
        // Bootstrap resample of the training split.
        let mut boot: Vec<usize> = (0..train_idx.len())
            .map(|_| train_idx[mrng.random_range(0..train_idx.len())])
            .collect();
        let mut adam = Adam::new(&net, config.learning_rate);
        let mut best_layers = net.layers.clone();
        let mut best_nll = f64::INFINITY;
        let mut stall = 0usize;
        for epoch in 0..config.epochs {
            boot.shuffle(&mut mrng);
            let mut train_nll = 0.0;
            let mut batches = 0usize;
            for chunk in boot.chunks(config.batch_size) {
                let bx = gather_columns(&xn, chunk);
                let by = gather_columns(&yn, chunk);
                let cache = net.forward_batch(&bx);
                let (grads, nll) = net.backward_nll(&cache, &by);
                if !nll.is_finite() {
                    return Err(CoreError::Training(format!(
                        "member {e} diverged at epoch {epoch} (non-finite loss)"
                    )));
                }
                adam.step(&mut net, &grads);
                train_nll += nll;
                batches += 1;
            }
            train_nll /= batches.max(1) as f64;
            let eval_nll = if holdout_n > 0 {
                net.nll(&holdout_x, &holdout_y)
            } else {
                train_nll
            };
            history.push(EpochRecord {
                member: e,
                epoch,
                train_nll,
                holdout_nll: eval_nll,
            });
            if eval_nll < best_nll - 1e-9 {
                best_nll = eval_nll;
                best_layers = net.layers.clone();
                stall = 0;
            } else {
                stall += 1;
                if stall > config.patience {
                    break;
                }
            }
        }
        net.layers = best_layers;
        members.push(net);
    }

    Ok(TrainOutcome {
        model: EnsembleModel {
            members,
            input_norm,
            output_norm,
            state_dim: n_s,
            action_dim: n_a,
            predict_delta: config.predict_delta,
        },
        history,
    })
}
