//! Zero-codeword training loop with keyed-stream sample generation.

use super::forward::{batch_loss, forward_batch, mask_tensor, variant_masks};
use super::{init_params, EcctConfig, ModelError, ParameterSet};
use crate::autodiff::{AdamState, Graph, Scalar, Tensor, Var};
use crate::channel::{self, sigma_from_snr};
use crate::codes::LinearCode;
use crate::rng::{purpose, RngStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrDecay {
    None,
    Cosine,
}

impl std::str::FromStr for LrDecay {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "constant" => Ok(LrDecay::None),
            "cosine" => Ok(LrDecay::Cosine),
            other => Err(format!("unknown lr decay {other:?} (none | cosine)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: LrDecay,
    pub train_snr_db: Vec<f64>,
    pub seed: u64,
}

impl TrainSchedule {
    /// Small budget that finishes on a desk CPU.
    pub fn desk(seed: u64) -> Self {
        TrainSchedule {
            epochs: 20,
            batches_per_epoch: 200,
            batch_size: 128,
            lr: 1e-4,
            lr_decay: LrDecay::None,
            train_snr_db: vec![3.0, 4.0, 5.0, 6.0, 7.0],
            seed,
        }
    }

    /// Full-scale budget; kept as a preset, never run by the test suite.
    pub fn paper(seed: u64) -> Self {
        TrainSchedule {
            epochs: 1000,
            batches_per_epoch: 1000,
            batch_size: 128,
            lr: 1e-4,
            lr_decay: LrDecay::Cosine,
            train_snr_db: vec![3.0, 4.0, 5.0, 6.0, 7.0],
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult<T> {
    pub params: ParameterSet<T>,
    /// Mean batch loss per epoch, in epoch order.
    pub trajectory: Vec<f64>,
}

pub fn trajectory_csv(trajectory: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (e, loss) in trajectory.iter().enumerate() {
        out.push_str(&format!("{},{:.9e}\n", e + 1, loss));
    }
    out
}

/// Train a decoder on the all-zero codeword. Every sample is generated from
/// the stream `(seed, TRAIN, epoch, batch, index)`, so the trajectory is a
/// pure function of the schedule and config.
pub fn train<T: Scalar>(
    code: &LinearCode,
    cfg: &EcctConfig,
    sched: &TrainSchedule,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainResult<T>, ModelError> {
    crate::tune_allocator();
    cfg.validate()?;
    if sched.train_snr_db.is_empty() || sched.batch_size == 0 {
        return Err(ModelError::ConfigMismatch(
            "schedule needs a non-empty SNR list and batch_size >= 1".into(),
        ));
    }
    let (n, seq) = (code.n, 2 * code.n - code.k);
    let (masks, pcms) = variant_masks(code, cfg.variant)?;
    let mask_tiles: Vec<Tensor<T>> = masks.iter().map(mask_tensor).collect();
    let streams = cfg.variant.streams();
    let rate = code.rate();
    let zero = vec![0u8; n];

    let mut params: ParameterSet<T> = init_params(cfg, n, seq, sched.seed);
    let mut adam = AdamState::new(T::of_f64(sched.lr));
    let total_steps = (sched.epochs * sched.batches_per_epoch).max(1);
    let mut trajectory = Vec::with_capacity(sched.epochs);

    for epoch in 0..sched.epochs {
        let mut epoch_loss = 0.0;
        for batch in 0..sched.batches_per_epoch {
            // Generate the batch.
            let b = sched.batch_size;
            let mut scalars: Vec<Vec<T>> = vec![Vec::with_capacity(b * seq); streams];
            let mut targets: Vec<T> = Vec::with_capacity(b * n);
            for i in 0..b {
                let mut rng = RngStream::new(
                    sched.seed,
                    [purpose::TRAIN, epoch as u64, batch as u64, i as u64],
                );
                let snr = sched.train_snr_db[rng.next_index(sched.train_snr_db.len())];
                let sigma = sigma_from_snr(snr, rate)?;
                let sample = channel::transmit(&zero, sigma, snr, &mut rng);
                for (s, pcm) in pcms.iter().enumerate() {
                    let inp = channel::preprocess(&sample.y, pcm, cfg.syndrome_bipolar)?;
                    scalars[s].extend(inp.concatenated().iter().map(|&v| T::of_f64(v)));
                }
                let z = channel::mult_noise_target(&sample.y, &sample.x_s)?;
                targets.extend(z.iter().map(|&bit| T::of_f64(f64::from(bit))));
            }

            // Forward/backward on a fresh tape.
            let mut g: Graph<T> = Graph::new();
            let param_vars: Vec<Var> =
                params.tensors.iter().map(|t| g.leaf(t.clone(), true)).collect();
            let mask_vars: Vec<Var> =
                mask_tiles.iter().map(|m| g.constant(m.clone())).collect();
            let input_vars: Vec<Var> = scalars
                .iter()
                .map(|s| g.constant(Tensor::from_vec(&[s.len()], s.clone())))
                .collect();
            let logits = forward_batch(&mut g, cfg, n, seq, &param_vars, &input_vars, &mask_vars)?;
            let target_var = g.constant(Tensor::from_vec(&[b, n], targets));
            let loss = batch_loss(&mut g, logits, target_var, b)?;
            let loss_val = g.value(loss).item().as_f64();
            g.backward(loss)?;
            let grads: Vec<Tensor<T>> = param_vars.iter().map(|&v| g.grad(v)).collect();

            let step = epoch * sched.batches_per_epoch + batch;
            adam.lr = match sched.lr_decay {
                LrDecay::None => T::of_f64(sched.lr),
                LrDecay::Cosine => T::of_f64(
                    sched.lr
                        * 0.5
                        * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos()),
                ),
            };
            adam.step(&mut params.tensors, &grads);
            epoch_loss += loss_val;
        }
        let mean = epoch_loss / sched.batches_per_epoch.max(1) as f64;
        trajectory.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainResult { params, trajectory })
}
