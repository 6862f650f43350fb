//! Frame-parallel Monte-Carlo evaluation with integer counters and keyed
//! per-frame streams, bit-for-bit reproducible across thread counts.

use super::HarnessError;
use crate::autodiff::Tensor;
use crate::channel::{self, sigma_from_snr};
use crate::codes::LinearCode;
use crate::gf2::BitMatrix;
use crate::model::{
    forward_logits, mask_tensor, variant_masks, EcctConfig, ParameterSet,
};
use crate::rng::{purpose, RngStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Frames per work unit. Chunk boundaries are part of the evaluation
/// definition, so counters do not depend on how chunks are scheduled.
const CHUNK_FRAMES: usize = 256;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StopRule {
    pub min_frames: usize,
    pub min_frame_errors: usize,
    pub max_frames: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { min_frames: 100_000, min_frame_errors: 500, max_frames: 10_000_000 }
    }
}

impl StopRule {
    pub fn satisfied(&self, frames: usize, frame_errors: usize) -> bool {
        frames >= self.min_frames && frame_errors >= self.min_frame_errors
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub snr_db: f64,
    pub frames: usize,
    pub bit_errors: u64,
    pub frame_errors: u64,
    pub ber: f64,
    pub fer: f64,
    pub seed: u64,
    /// True when the max_frames cap ended the run before the stop rule was
    /// satisfied.
    pub capped: bool,
    pub wall_time_s: f64,
}

/// A trained model plus everything its forward pass needs.
pub struct ModelDecoder {
    pub cfg: EcctConfig,
    pub params: ParameterSet<f32>,
    masks: Vec<Tensor<f32>>,
    pcms: Vec<BitMatrix>,
    n: usize,
    seq: usize,
}

impl ModelDecoder {
    pub fn new(
        code: &LinearCode,
        cfg: EcctConfig,
        params: ParameterSet<f32>,
    ) -> Result<Self, HarnessError> {
        if cfg.code != code.name {
            return Err(HarnessError::ConfigMismatch(format!(
                "checkpoint was trained for {:?}, evaluating {:?}",
                cfg.code, code.name
            )));
        }
        cfg.validate().map_err(HarnessError::Model)?;
        let (masks, pcms) = variant_masks(code, cfg.variant)?;
        let n = code.n;
        let seq = 2 * code.n - code.k;
        Ok(ModelDecoder {
            masks: masks.iter().map(mask_tensor).collect(),
            cfg,
            params,
            pcms,
            n,
            seq,
        })
    }
}

pub enum Decoder<'a> {
    Model(&'a ModelDecoder),
    /// Hard decision: logits all +1 (no flips).
    Hard,
    /// Genie: logits = exact bipolar multiplicative noise.
    Oracle,
}

struct ChunkCounters {
    frames: usize,
    bit_errors: u64,
    frame_errors: u64,
}

fn run_chunk(
    code: &LinearCode,
    decoder: &Decoder,
    sigma: f64,
    snr_db: f64,
    seed: u64,
    start_frame: usize,
    count: usize,
    zero_codeword: bool,
) -> Result<ChunkCounters, HarnessError> {
    let n = code.n;
    let mut codewords = Vec::with_capacity(count);
    let mut samples = Vec::with_capacity(count);
    for f in 0..count {
        let frame = (start_frame + f) as u64;
        let mut rng = RngStream::new(seed, [purpose::EVAL, snr_db.to_bits(), frame, 0]);
        let x = if zero_codeword {
            vec![0u8; n]
        } else {
            let msg: Vec<u8> = (0..code.k).map(|_| rng.next_bit()).collect();
            code.encode(&msg)?
        };
        let sample = channel::transmit(&x, sigma, snr_db, &mut rng);
        codewords.push(x);
        samples.push(sample);
    }

    let logits: Vec<Vec<f64>> = match decoder {
        Decoder::Hard => samples.iter().map(|_| vec![1.0; n]).collect(),
        Decoder::Oracle => samples
            .iter()
            .map(|s| s.y.iter().zip(&s.x_s).map(|(&y, &xs)| y * xs).collect())
            .collect(),
        Decoder::Model(m) => {
            let mut scalars: Vec<Vec<f32>> =
                vec![Vec::with_capacity(count * m.seq); m.pcms.len()];
            for sample in &samples {
                for (si, pcm) in m.pcms.iter().enumerate() {
                    let inp = channel::preprocess(&sample.y, pcm, m.cfg.syndrome_bipolar)?;
                    scalars[si].extend(inp.concatenated().iter().map(|&v| v as f32));
                }
            }
            let out =
                forward_logits(&m.cfg, m.n, m.seq, &m.params, &m.masks, &scalars)?;
            out.data()
                .chunks_exact(n)
                .map(|row| row.iter().map(|&v| f64::from(v)).collect())
                .collect()
        }
    };

    let mut bit_errors = 0u64;
    let mut frame_errors = 0u64;
    for ((x, sample), l) in codewords.iter().zip(&samples).zip(&logits) {
        let x_hat = channel::postprocess(&sample.y, l)?;
        let errs = x_hat.iter().zip(x).filter(|(a, b)| a != b).count() as u64;
        bit_errors += errs;
        frame_errors += u64::from(errs > 0);
    }
    Ok(ChunkCounters { frames: count, bit_errors, frame_errors })
}

/// Evaluate one decoder at one SNR. Frames are processed in fixed 256-frame
/// chunks; the stop rule is checked at deterministic round boundaries, so
/// the exact frame count is a pure function of (seed, stop rule) and never
/// of the number of worker threads.
pub fn evaluate(
    code: &LinearCode,
    decoder: &Decoder,
    snr_db: f64,
    stop: &StopRule,
    seed: u64,
    zero_codeword: bool,
) -> Result<EvalReport, HarnessError> {
    crate::tune_allocator();
    if stop.max_frames == 0 {
        return Err(HarnessError::ConfigMismatch("max_frames must be >= 1".into()));
    }
    let started = std::time::Instant::now();
    let sigma = sigma_from_snr(snr_db, code.rate())?;
    let mut frames = 0usize;
    let mut bit_errors = 0u64;
    let mut frame_errors = 0u64;

    while !stop.satisfied(frames, frame_errors as usize) && frames < stop.max_frames {
        // Deterministic round size: reach min_frames first, then double.
        let target = if frames < stop.min_frames {
            stop.min_frames
        } else {
            frames.saturating_mul(2)
        }
        .min(stop.max_frames);
        let round = target - frames;
        let chunk_count = round.div_ceil(CHUNK_FRAMES);
        let results: Vec<ChunkCounters> = (0..chunk_count)
            .into_par_iter()
            .map(|c| {
                let start = frames + c * CHUNK_FRAMES;
                let count = CHUNK_FRAMES.min(target - start);
                run_chunk(code, decoder, sigma, snr_db, seed, start, count, zero_codeword)
            })
            .collect::<Result<_, _>>()?;
        for r in results {
            frames += r.frames;
            bit_errors += r.bit_errors;
            frame_errors += r.frame_errors;
        }
    }

    let ber = bit_errors as f64 / (frames as f64 * code.n as f64);
    let fer = frame_errors as f64 / frames as f64;
    assert!(fer >= ber, "fer {fer} < ber {ber}");
    Ok(EvalReport {
        snr_db,
        frames,
        bit_errors,
        frame_errors,
        ber,
        fer,
        seed,
        capped: frames >= stop.max_frames && !stop.satisfied(frames, frame_errors as usize),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}
