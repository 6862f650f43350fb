//! BPSK modulation, AWGN sampling, syndrome preprocessing and the
//! multiplicative-noise algebra used by the decoder.
//!
//! Sign conventions, fixed once: bit 0 maps to +1, `sign(0) = +1`, and a
//! positive decoder logit means multiplicative-noise bit 0 ("no flip"), so
//! the cross-entropy target probability is `P(noise bit = 1) =
//! sigmoid(-logit)`.

use crate::gf2::{self, BitMatrix, Gf2Error};
use crate::rng::RngStream;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("code rate must be in (0, 1], got {0}")]
    BadRate(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

/// One transmission: codeword, its BPSK symbols, and the channel output.
#[derive(Debug, Clone)]
pub struct ChannelSample {
    pub x: Vec<u8>,
    pub x_s: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: f64,
    pub snr_db: f64,
}

/// Decoder input: `[|y|, syndrome]`, length `2n - k`.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub magnitude: Vec<f64>,
    pub syndrome_embed: Vec<f64>,
}

impl ModelInput {
    pub fn concatenated(&self) -> Vec<f64> {
        let mut v = self.magnitude.clone();
        v.extend_from_slice(&self.syndrome_embed);
        v
    }

    pub fn len(&self) -> usize {
        self.magnitude.len() + self.syndrome_embed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Noise standard deviation for an SNR given in dB, with the rate-normalized
/// (Eb/N0-style) convention: `sigma = (2 * rate * 10^(snr/10))^(-1/2)`.
pub fn sigma_from_snr(snr_db: f64, rate: f64) -> Result<f64, ChannelError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ChannelError::BadRate(rate));
    }
    Ok((2.0 * rate * 10f64.powf(snr_db / 10.0)).powf(-0.5))
}

/// BPSK-modulate and add white Gaussian noise drawn from `rng`.
pub fn transmit(x: &[u8], sigma: f64, snr_db: f64, rng: &mut RngStream) -> ChannelSample {
    assert!(sigma > 0.0);
    let x_s: Vec<f64> = x.iter().map(|&b| 1.0 - 2.0 * f64::from(b & 1)).collect();
    let y: Vec<f64> = x_s.iter().map(|&s| s + sigma * rng.next_gaussian()).collect();
    ChannelSample { x: x.to_vec(), x_s, y, sigma, snr_db }
}

/// `bin(sign(a))`: 0 for `a >= 0`, 1 otherwise.
#[inline]
pub fn bin_sign(a: f64) -> u8 {
    u8::from(a < 0.0)
}

pub fn hard_decision(y: &[f64]) -> Vec<u8> {
    y.iter().map(|&v| bin_sign(v)).collect()
}

/// Syndrome of the hard decision of `y` under `h`.
pub fn syndrome(h: &BitMatrix, y: &[f64]) -> Result<Vec<u8>, ChannelError> {
    if y.len() != h.cols() {
        return Err(ChannelError::DimensionMismatch(format!(
            "syndrome: received length {}, PCM has {} columns",
            y.len(),
            h.cols()
        )));
    }
    Ok(gf2::matvec_mod2(h, &hard_decision(y))?)
}

/// Build the decoder input `[|y|, s(y)]`; the syndrome is bipolar-mapped
/// (`1 - 2s`) unless `bipolar` is false.
pub fn preprocess(y: &[f64], h: &BitMatrix, bipolar: bool) -> Result<ModelInput, ChannelError> {
    let s = syndrome(h, y)?;
    let magnitude = y.iter().map(|v| v.abs()).collect();
    let syndrome_embed = s
        .iter()
        .map(|&b| {
            if bipolar {
                1.0 - 2.0 * f64::from(b)
            } else {
                f64::from(b)
            }
        })
        .collect();
    Ok(ModelInput { magnitude, syndrome_embed })
}

/// Binary target: the sign pattern of the multiplicative noise `y * x_s`.
pub fn mult_noise_target(y: &[f64], x_s: &[f64]) -> Result<Vec<u8>, ChannelError> {
    if y.len() != x_s.len() {
        return Err(ChannelError::DimensionMismatch(format!(
            "mult_noise_target: {} vs {}",
            y.len(),
            x_s.len()
        )));
    }
    Ok(y.iter().zip(x_s).map(|(&yv, &sv)| bin_sign(yv * sv)).collect())
}

/// Decode: `x_hat[i] = bin(sign(y[i] * logits[i]))`. Positive logits mean
/// "no flip", so exact multiplicative-noise logits recover `x` exactly.
pub fn postprocess(y: &[f64], logits: &[f64]) -> Result<Vec<u8>, ChannelError> {
    if y.len() != logits.len() {
        return Err(ChannelError::DimensionMismatch(format!(
            "postprocess: {} vs {}",
            y.len(),
            logits.len()
        )));
    }
    Ok(y.iter().zip(logits).map(|(&yv, &lv)| bin_sign(yv * lv)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::build_named;
    use crate::rng::{purpose, RngStream};

    fn bm(rows: &[&[u8]]) -> BitMatrix {
        BitMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn sigma_values() {
        assert!((sigma_from_snr(0.0, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((sigma_from_snr(4.0, 0.5).unwrap() - 0.630957).abs() < 1e-5);
        assert!((sigma_from_snr(6.0, 11.0 / 31.0).unwrap() - 0.594935).abs() < 1e-5);
        assert!(sigma_from_snr(4.0, 0.0).is_err());
        assert!(sigma_from_snr(4.0, 1.5).is_err());
    }

    #[test]
    fn transmit_zero_codeword_and_limit() {
        let mut rng = RngStream::new(1, [purpose::TEST, 0, 0, 0]);
        let s = transmit(&[0, 0, 0], 1e-12, 4.0, &mut rng);
        assert_eq!(s.x_s, vec![1.0, 1.0, 1.0]);
        for (y, xs) in s.y.iter().zip(&s.x_s) {
            assert!((y - xs).abs() < 1e-10);
        }
    }

    #[test]
    fn transmit_noise_mean_clt() {
        let mut rng = RngStream::new(2, [purpose::TEST, 0, 0, 0]);
        let n = 100_000;
        let sigma = 0.7;
        let mut sum = 0.0;
        for _ in 0..n / 5 {
            let s = transmit(&[1, 0, 1, 0, 1], sigma, 4.0, &mut rng);
            for (y, xs) in s.y.iter().zip(&s.x_s) {
                sum += y - xs;
            }
        }
        assert!((sum / n as f64).abs() < 4.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn transmit_reproducible() {
        let mut a = RngStream::new(9, [purpose::TEST, 5, 6, 7]);
        let mut b = RngStream::new(9, [purpose::TEST, 5, 6, 7]);
        let sa = transmit(&[1, 0, 1], 0.5, 4.0, &mut a);
        let sb = transmit(&[1, 0, 1], 0.5, 4.0, &mut b);
        assert_eq!(sa.y, sb.y);
    }

    #[test]
    fn syndrome_hand_example() {
        let h = bm(&[&[1, 1, 0], &[0, 1, 1]]);
        assert_eq!(syndrome(&h, &[0.9, -0.2, 1.1]).unwrap(), vec![1, 1]);
    }

    #[test]
    fn sign_zero_is_plus() {
        assert_eq!(bin_sign(0.0), 0);
        let h = bm(&[&[1, 0]]);
        assert_eq!(syndrome(&h, &[0.0, 1.0]).unwrap(), vec![0]);
    }

    #[test]
    fn noiseless_codeword_zero_syndrome() {
        let code = build_named("bch-31-11").unwrap();
        let mut rng = RngStream::new(4, [purpose::TEST, 1, 1, 1]);
        let msg: Vec<u8> = (0..code.k).map(|_| rng.next_bit()).collect();
        let x = code.encode(&msg).unwrap();
        let y: Vec<f64> = x.iter().map(|&b| 1.0 - 2.0 * f64::from(b)).collect();
        for h in [&code.h_conv, &code.h_sys] {
            assert!(syndrome(h, &y).unwrap().iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn preprocess_hand_example() {
        let h = bm(&[&[1, 1, 0], &[0, 1, 1]]);
        let inp = preprocess(&[0.9, -0.2, 1.1], &h, true).unwrap();
        assert_eq!(inp.magnitude, vec![0.9, 0.2, 1.1]);
        assert_eq!(inp.syndrome_embed, vec![-1.0, -1.0]);
        let raw = preprocess(&[0.9, -0.2, 1.1], &h, false).unwrap();
        assert_eq!(raw.syndrome_embed, vec![1.0, 1.0]);
    }

    #[test]
    fn preprocess_codeword_invariance() {
        // Equal multiplicative noise, different codewords: identical inputs.
        let code = build_named("polar-64-32").unwrap();
        let mut rng = RngStream::new(5, [purpose::TEST, 2, 2, 2]);
        let noise: Vec<f64> = (0..code.n).map(|_| 1.0 + 0.4 * rng.next_gaussian()).collect();
        let msg_a: Vec<u8> = (0..code.k).map(|_| rng.next_bit()).collect();
        let msg_b: Vec<u8> = (0..code.k).map(|_| rng.next_bit()).collect();
        let mut inputs = Vec::new();
        for msg in [&msg_a, &msg_b] {
            let x = code.encode(msg).unwrap();
            let y: Vec<f64> = x
                .iter()
                .zip(&noise)
                .map(|(&b, &z)| (1.0 - 2.0 * f64::from(b)) * z)
                .collect();
            inputs.push(preprocess(&y, &code.h_conv, true).unwrap());
        }
        assert_eq!(inputs[0].magnitude, inputs[1].magnitude);
        assert_eq!(inputs[0].syndrome_embed, inputs[1].syndrome_embed);
    }

    #[test]
    fn mult_noise_examples() {
        assert_eq!(mult_noise_target(&[0.3, -0.4], &[1.0, 1.0]).unwrap(), vec![0, 1]);
        assert_eq!(mult_noise_target(&[-1.0, 1.0], &[-1.0, 1.0]).unwrap(), vec![0, 0]);
        assert_eq!(mult_noise_target(&[0.2, 0.5], &[-1.0, 1.0]).unwrap(), vec![1, 0]);
    }

    #[test]
    fn postprocess_examples() {
        assert_eq!(postprocess(&[0.5, -0.8], &[2.1, -1.3]).unwrap(), vec![0, 0]);
        // All-ones logits reduce to the hard decision.
        let y = [0.3, -0.2, 1.5, -0.1];
        assert_eq!(postprocess(&y, &[1.0; 4]).unwrap(), hard_decision(&y));
    }

    #[test]
    fn oracle_identity_random_trials() {
        let code = build_named("polar-64-32").unwrap();
        let mut rng = RngStream::new(6, [purpose::TEST, 3, 3, 3]);
        for _ in 0..200 {
            let msg: Vec<u8> = (0..code.k).map(|_| rng.next_bit()).collect();
            let x = code.encode(&msg).unwrap();
            let sample = transmit(&x, 0.8, 4.0, &mut rng);
            let mult: Vec<f64> =
                sample.y.iter().zip(&sample.x_s).map(|(&y, &s)| y * s).collect();
            assert_eq!(postprocess(&sample.y, &mult).unwrap(), x);
        }
    }
}
