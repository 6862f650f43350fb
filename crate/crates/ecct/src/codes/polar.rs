//! Polar code construction: Bhattacharyya reliability recursion, frozen-set
//! selection, and the conventional PCM taken from the columns of
//! `G_N = F^{tensor m}` at frozen indices.
//!
//! Columns are emitted in a canonical order with the RREF pivot columns of
//! the PCM leading, so the systematic transform never needs column swaps.
//! The reordering is recorded in `bit_order`; it relabels code coordinates
//! and leaves the codebook structure, mask sparsity and channel behaviour
//! unchanged.

use super::{CodeFamily, CodesError, LinearCode};
use crate::gf2::{self, BitMatrix};

/// Reliability design for a polar code of length `2^m`.
#[derive(Debug, Clone)]
pub struct PolarDesign {
    pub m: usize,
    pub frozen_set: Vec<usize>,
    pub bhattacharyya: Vec<f64>,
    pub z0: f64,
}

/// Per-index Bhattacharyya parameters for block length `n = 2^m`, starting
/// from `z0`. Index bits are consumed MSB-first; a 0 bit takes the degraded
/// branch `2z - z^2`, a 1 bit the upgraded branch `z^2`.
pub fn bhattacharyya(n: usize, z0: f64) -> Vec<f64> {
    assert!(n.is_power_of_two());
    let m = n.trailing_zeros() as usize;
    (0..n)
        .map(|i| {
            let mut z = z0;
            for b in (0..m).rev() {
                z = if (i >> b) & 1 == 1 { z * z } else { 2.0 * z - z * z };
            }
            z
        })
        .collect()
}

/// Frozen set: the `n - k` least reliable indices (largest Bhattacharyya
/// values), ties broken by freezing the lower index first.
pub fn polar_design(n: usize, k: usize, z0: f64) -> PolarDesign {
    let z = bhattacharyya(n, z0);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
    let mut frozen: Vec<usize> = order[..n - k].to_vec();
    frozen.sort_unstable();
    PolarDesign { m: n.trailing_zeros() as usize, frozen_set: frozen, bhattacharyya: z, z0 }
}

/// `G_N = F^{tensor m}` with `F = [[1,0],[1,1]]`; entry (i, j) is 1 iff the
/// binary support of j is contained in the binary support of i.
fn polarization_matrix(n: usize) -> BitMatrix {
    let mut g = BitMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if j & !i == 0 {
                g.set(i, j, 1);
            }
        }
    }
    g
}

/// Build a polar code with the default design parameter `z0 = 0.5`.
pub fn build_polar(
    n: usize,
    k: usize,
    frozen_override: Option<Vec<usize>>,
) -> Result<LinearCode, CodesError> {
    build_polar_with_z0(n, k, 0.5, frozen_override)
}

pub fn build_polar_with_z0(
    n: usize,
    k: usize,
    z0: f64,
    frozen_override: Option<Vec<usize>>,
) -> Result<LinearCode, CodesError> {
    if !n.is_power_of_two() || n < 2 {
        return Err(CodesError::BadDimensions(format!(
            "polar block length must be a power of two >= 2, got {n}"
        )));
    }
    if k == 0 || k >= n {
        return Err(CodesError::BadDimensions(format!("need 0 < k < n, got k={k}, n={n}")));
    }
    let design = polar_design(n, k, z0);
    let frozen = match frozen_override {
        Some(mut f) => {
            f.sort_unstable();
            f.dedup();
            if f.len() != n - k {
                return Err(CodesError::FrozenSetSizeMismatch { expected: n - k, got: f.len() });
            }
            if f.iter().any(|&i| i >= n) {
                return Err(CodesError::BadDimensions(format!(
                    "frozen index out of range 0..{n}"
                )));
            }
            f
        }
        None => design.frozen_set.clone(),
    };

    let g_n = polarization_matrix(n);
    // Conventional PCM rows = columns of G_N at frozen indices, in ascending
    // frozen-index order; generator rows = rows of G_N at non-frozen indices.
    let mut h_nat = BitMatrix::zeros(n - k, n);
    for (r, &f) in frozen.iter().enumerate() {
        for c in 0..n {
            h_nat.set(r, c, g_n.get(c, f));
        }
    }
    let mut gen_nat = BitMatrix::zeros(k, n);
    let mut r = 0;
    for i in 0..n {
        if !frozen.contains(&i) {
            for c in 0..n {
                gen_nat.set(r, c, g_n.get(i, c));
            }
            r += 1;
        }
    }

    // Canonical coordinate order: RREF pivot columns first, then the rest
    // ascending. In these coordinates the systematic transform is pure row
    // reduction.
    let (_, pivots) = gf2::rref(&h_nat);
    if pivots.len() < n - k {
        return Err(CodesError::BadDimensions(format!(
            "frozen set yields a rank-deficient PCM (rank {})",
            pivots.len()
        )));
    }
    let mut bit_order: Vec<usize> = pivots.clone();
    bit_order.extend((0..n).filter(|c| !pivots.contains(c)));
    let identity_order = bit_order.iter().enumerate().all(|(i, &p)| i == p);
    let (h_conv, generator) = if identity_order {
        (h_nat, gen_nat)
    } else {
        (h_nat.permute_cols(&bit_order), gen_nat.permute_cols(&bit_order))
    };

    let h_mod = super::modify_polar_pcm(&h_conv);
    let sys = gf2::to_systematic(&h_conv)?;
    debug_assert!(sys.is_identity_permutation());
    Ok(LinearCode {
        name: format!("polar-{n}-{k}"),
        family: CodeFamily::Polar,
        n,
        k,
        h_conv,
        h_sys: sys.h_sys,
        h_mod: Some(h_mod),
        generator,
        column_permutation: sys.column_permutation,
        bit_order,
        frozen_set: Some(frozen),
        primitive_poly: None,
    })
}
