//! Attention-mask construction from parity check matrices.
//!
//! A mask is a `(2n-k) x (2n-k)` additive pre-softmax matrix whose entries
//! are either 0 (attention allowed) or a large-negative sentinel (attention
//! forbidden). Position `p < n` is a codeword bit, position `n + i` is check
//! `i`. Two bits may attend to each other iff they co-occur in some check's
//! support; a bit and a check iff the bit participates in that check; two
//! distinct checks never attend to each other.

use crate::codes::{CodeFamily, LinearCode};
use crate::gf2::{self, BitMatrix, Gf2Error};

/// Additive sentinel used for masked positions in 32-bit arithmetic; large
/// enough that post-softmax weights underflow to zero, finite so that
/// `0 * sentinel` products stay out of NaN territory.
pub const MASK_SENTINEL_F32: f32 = -1.0e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    Conventional,
    Systematic,
    Modified,
}

impl std::fmt::Display for MaskSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskSource::Conventional => write!(f, "conventional"),
            MaskSource::Systematic => write!(f, "systematic"),
            MaskSource::Modified => write!(f, "modified"),
        }
    }
}

/// Symmetric binary unmask pattern of size `(n + rows)^2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    n: usize,
    unmasked: Vec<bool>,
    pub source: MaskSource,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of codeword-bit positions (the upper-left block size).
    pub fn bit_positions(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_unmasked(&self, p: usize, q: usize) -> bool {
        self.unmasked[p * self.size + q]
    }

    /// All masked (p, q) pairs, row-major.
    pub fn masked_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for p in 0..self.size {
            for q in 0..self.size {
                if !self.is_unmasked(p, q) {
                    out.push((p, q));
                }
            }
        }
        out
    }

    /// Row-major additive entries: `unmasked_val` where attention is
    /// allowed, `masked_val` elsewhere.
    pub fn additive<T: Copy>(&self, unmasked_val: T, masked_val: T) -> Vec<T> {
        self.unmasked
            .iter()
            .map(|&u| if u { unmasked_val } else { masked_val })
            .collect()
    }

    /// Dense text export: 1 = unmasked, 0 = masked.
    pub fn to_dense01(&self) -> String {
        let mut out = String::new();
        for p in 0..self.size {
            let row: Vec<&str> = (0..self.size)
                .map(|q| if self.is_unmasked(p, q) { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Plain (P2) PGM visualization: masked positions black, unmasked white.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n1\n", self.size, self.size);
        for p in 0..self.size {
            let row: Vec<&str> = (0..self.size)
                .map(|q| if self.is_unmasked(p, q) { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Build the attention mask for a PCM. With `systematic = true` the PCM is
/// first brought to systematic form (requires full row rank).
pub fn build_mask(h: &BitMatrix, systematic: bool) -> Result<AttentionMask, Gf2Error> {
    let (pcm, source) = if systematic {
        (gf2::to_systematic(h)?.h_sys, MaskSource::Systematic)
    } else {
        (h.clone(), MaskSource::Conventional)
    };
    Ok(mask_from_pcm(&pcm, source))
}

/// Count-matrix construction: start from the identity, then for each check
/// row with support S, bump every ordered bit pair in S x S and, inside the
/// same pair loop, the check-bit pairs. An entry is unmasked iff its count
/// is positive.
pub(crate) fn mask_from_pcm(pcm: &BitMatrix, source: MaskSource) -> AttentionMask {
    let n = pcm.cols();
    let rows = pcm.rows();
    let size = n + rows;
    let mut counts = vec![0u32; size * size];
    for p in 0..size {
        counts[p * size + p] = 1;
    }
    for i in 0..rows {
        let support = pcm.row_support(i);
        for &j in &support {
            for &l in &support {
                counts[j * size + l] += 1;
                counts[l * size + j] += 1;
                counts[(n + i) * size + j] += 1;
                counts[j * size + (n + i)] += 1;
            }
        }
    }
    let unmasked: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    let mask = AttentionMask { size, n, unmasked, source };
    debug_assert_eq!(mask.unmasked, positivity_characterization(pcm));
    mask
}

/// Independent characterization of the unmasked set: `p = q`, or both are
/// bits co-occurring in some check, or one is check `i` and the other a bit
/// in its support.
pub fn positivity_characterization(pcm: &BitMatrix) -> Vec<bool> {
    let n = pcm.cols();
    let rows = pcm.rows();
    let size = n + rows;
    let supports: Vec<Vec<usize>> = (0..rows).map(|i| pcm.row_support(i)).collect();
    let mut unmasked = vec![false; size * size];
    for p in 0..size {
        for q in 0..size {
            let u = if p == q {
                true
            } else if p < n && q < n {
                supports
                    .iter()
                    .any(|s| s.contains(&p) && s.contains(&q))
            } else if p >= n && q < n {
                supports[p - n].contains(&q)
            } else if q >= n && p < n {
                supports[q - n].contains(&p)
            } else {
                false
            };
            unmasked[p * size + q] = u;
        }
    }
    unmasked
}

/// Fraction of masked entries over the full map, diagonal included.
pub fn sparsity(mask: &AttentionMask) -> f64 {
    let masked = mask.unmasked.iter().filter(|&&u| !u).count();
    masked as f64 / (mask.size * mask.size) as f64
}

/// The two PCMs and masks used by the double-masked decoder: the systematic
/// PCM paired with the conventional PCM (BCH/custom) or the modified
/// conventional PCM (polar).
pub fn dm_mask_pair(
    code: &LinearCode,
) -> Result<(AttentionMask, AttentionMask, BitMatrix, BitMatrix), Gf2Error> {
    let h1 = code.h_sys.clone();
    let mut mask1 = mask_from_pcm(&h1, MaskSource::Systematic);
    mask1.source = MaskSource::Systematic;
    let (h2, source2) = match (code.family, &code.h_mod) {
        (CodeFamily::Polar, Some(h_mod)) => (h_mod.clone(), MaskSource::Modified),
        _ => (code.h_conv.clone(), MaskSource::Conventional),
    };
    let mask2 = mask_from_pcm(&h2, source2);
    debug_assert!(gf2::row_space_equal(&h1, &h2).unwrap_or(false));
    Ok((mask1, mask2, h1, h2))
}
