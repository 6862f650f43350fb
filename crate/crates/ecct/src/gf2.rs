//! Exact linear algebra over GF(2).
//!
//! [`BitMatrix`] is a dense binary matrix with word-packed rows; all
//! arithmetic is modulo 2. This module provides rank, reduced row echelon
//! form, the systematic transform `[I | P]`, null-space generators, and
//! row-space comparison. Everything here is pure and immutable after
//! construction.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Gf2Error {
    /// The matrix has fewer independent rows than required; the caller must
    /// drop redundant rows before asking for a systematic form.
    #[error("rank-deficient matrix: rank {rank} < {rows} rows")]
    RankDeficient { rank: usize, rows: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

const WORD_BITS: usize = 64;

/// Dense binary matrix over GF(2), row-major, bit-packed into `u64` words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

/// Outcome of [`BitMatrix::to_systematic`]: the `[I | P]` form plus the
/// column permutation that was applied (identity when row operations
/// sufficed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystematicResult {
    pub h_sys: BitMatrix,
    /// `column_permutation[j]` is the input column that ended up at
    /// position `j`.
    pub column_permutation: Vec<usize>,
}

impl SystematicResult {
    pub fn is_identity_permutation(&self) -> bool {
        self.column_permutation.iter().enumerate().all(|(i, &p)| i == p)
    }
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix must be at least 1x1");
        let words_per_row = cols.div_ceil(WORD_BITS).max(1);
        BitMatrix { rows, cols, words_per_row, bits: vec![0; rows * words_per_row] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    /// Build from per-entry values; anything nonzero counts as 1.
    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        assert!(!rows.is_empty());
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols));
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                m.set(i, j, v & 1);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        debug_assert!(r < self.rows && c < self.cols);
        ((self.bits[r * self.words_per_row + c / WORD_BITS] >> (c % WORD_BITS)) & 1) as u8
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        debug_assert!(r < self.rows && c < self.cols);
        let w = r * self.words_per_row + c / WORD_BITS;
        let mask = 1u64 << (c % WORD_BITS);
        if v & 1 == 1 {
            self.bits[w] |= mask;
        } else {
            self.bits[w] &= !mask;
        }
    }

    pub fn row(&self, r: usize) -> Vec<u8> {
        (0..self.cols).map(|c| self.get(r, c)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|r| self.row(r)).collect()
    }

    /// Column indices of the ones in row `r`.
    pub fn row_support(&self, r: usize) -> Vec<usize> {
        (0..self.cols).filter(|&c| self.get(r, c) == 1).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor_row_into(&mut self, src: usize, dst: usize) {
        assert_ne!(src, dst);
        let w = self.words_per_row;
        let (s, d) = (src * w, dst * w);
        for i in 0..w {
            let v = self.bits[s + i];
            self.bits[d + i] ^= v;
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let w = self.words_per_row;
        for i in 0..w {
            self.bits.swap(a * w + i, b * w + i);
        }
    }

    pub fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for r in 0..self.rows {
            let va = self.get(r, a);
            let vb = self.get(r, b);
            self.set(r, a, vb);
            self.set(r, b, va);
        }
    }

    /// New matrix whose column `j` is `self`'s column `perm[j]`.
    pub fn permute_cols(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.cols);
        let mut out = Self::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (j, &p) in perm.iter().enumerate() {
                out.set(r, j, self.get(r, p));
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols.max(1), self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// Stack `self` on top of `other`.
    pub fn vstack(&self, other: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if self.cols != other.cols {
            return Err(Gf2Error::DimensionMismatch(format!(
                "vstack: {} vs {} columns",
                self.cols, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows + other.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(r, c, self.get(r, c));
            }
        }
        for r in 0..other.rows {
            for c in 0..self.cols {
                out.set(self.rows + r, c, other.get(r, c));
            }
        }
        Ok(out)
    }

    /// Matrix product over GF(2).
    pub fn matmul(&self, other: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if self.cols != other.rows {
            return Err(Gf2Error::DimensionMismatch(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let bt = other.transpose();
        let mut out = BitMatrix::zeros(self.rows, other.cols);
        let w = self.words_per_row;
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = 0u32;
                for i in 0..w {
                    acc ^= (self.bits[r * w + i] & bt.bits[c * bt.words_per_row + i])
                        .count_ones();
                }
                out.set(r, c, (acc & 1) as u8);
            }
        }
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }
}

/// GF(2) rank by Gaussian elimination on a working copy.
pub fn rank(m: &BitMatrix) -> usize {
    rref(m).1.len()
}

/// Reduced row echelon form over GF(2).
///
/// Returns the RREF matrix (zero rows kept, at the bottom) and the strictly
/// increasing list of pivot columns.
pub fn rref(m: &BitMatrix) -> (BitMatrix, Vec<usize>) {
    let mut a = m.clone();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..a.cols() {
        if r == a.rows() {
            break;
        }
        let mut pivot_row = None;
        for rr in r..a.rows() {
            if a.get(rr, c) == 1 {
                pivot_row = Some(rr);
                break;
            }
        }
        let Some(pr) = pivot_row else { continue };
        a.swap_rows(r, pr);
        for rr in 0..a.rows() {
            if rr != r && a.get(rr, c) == 1 {
                a.xor_row_into(r, rr);
            }
        }
        pivots.push(c);
        r += 1;
    }
    (a, pivots)
}

/// Transform a full-row-rank PCM to systematic form `[I_{n-k} | P]`.
///
/// Column swaps are applied only when the RREF pivots are not exactly the
/// leading columns; every swap is recorded in the returned permutation.
pub fn to_systematic(h: &BitMatrix) -> Result<SystematicResult, Gf2Error> {
    let (mut r, pivots) = rref(h);
    if pivots.len() < h.rows() {
        return Err(Gf2Error::RankDeficient { rank: pivots.len(), rows: h.rows() });
    }
    let mut perm: Vec<usize> = (0..h.cols()).collect();
    for (i, &p) in pivots.iter().enumerate() {
        if p != i {
            r.swap_cols(i, p);
            perm.swap(i, p);
        }
    }
    debug_assert!((0..h.rows()).all(|i| (0..h.rows()).all(|j| {
        r.get(i, j) == u8::from(i == j)
    })));
    Ok(SystematicResult { h_sys: r, column_permutation: perm })
}

/// Generator matrix of the null space of a full-row-rank PCM.
///
/// Returns `G` of shape `k x n` with `G H^T = 0` and `rank(G) = k`. When the
/// systematic transform needed no column permutation this is `[P^T | I_k]`.
pub fn nullspace_generator(h: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
    let sys = to_systematic(h)?;
    let n = h.cols();
    let n_k = h.rows();
    let k = n - n_k;
    if k == 0 {
        // Degenerate code: only the zero codeword. Empty generator.
        return Ok(BitMatrix { rows: 0, cols: n, words_per_row: n.div_ceil(WORD_BITS).max(1), bits: vec![] });
    }
    // G in the permuted coordinates is [P^T | I_k].
    let mut g_perm = BitMatrix::zeros(k, n);
    for i in 0..k {
        for j in 0..n_k {
            g_perm.set(i, j, sys.h_sys.get(j, n_k + i));
        }
        g_perm.set(i, n_k + i, 1);
    }
    // Undo the permutation: column perm[j] of G is column j of g_perm.
    let mut g = BitMatrix::zeros(k, n);
    for i in 0..k {
        for (j, &p) in sys.column_permutation.iter().enumerate() {
            g.set(i, p, g_perm.get(i, j));
        }
    }
    debug_assert!(h.matmul(&g.transpose()).map(|m| m.is_zero()).unwrap_or(false));
    Ok(g)
}

/// True iff `a` and `b` span the same row space (define the same codebook).
pub fn row_space_equal(a: &BitMatrix, b: &BitMatrix) -> Result<bool, Gf2Error> {
    if a.cols() != b.cols() {
        return Err(Gf2Error::DimensionMismatch(format!(
            "row_space_equal: {} vs {} columns",
            a.cols(),
            b.cols()
        )));
    }
    let ra = rank(a);
    let rb = rank(b);
    if ra != rb {
        return Ok(false);
    }
    let stacked = a.vstack(b)?;
    Ok(rank(&stacked) == ra)
}

/// Pack a bit vector into words for fast dot products.
fn pack_bits(v: &[u8]) -> Vec<u64> {
    let mut out = vec![0u64; v.len().div_ceil(WORD_BITS).max(1)];
    for (i, &b) in v.iter().enumerate() {
        if b & 1 == 1 {
            out[i / WORD_BITS] |= 1 << (i % WORD_BITS);
        }
    }
    out
}

/// `m * v` over GF(2); entry `i` is the parity of the AND of row `i` with `v`.
pub fn matvec_mod2(m: &BitMatrix, v: &[u8]) -> Result<Vec<u8>, Gf2Error> {
    if v.len() != m.cols() {
        return Err(Gf2Error::DimensionMismatch(format!(
            "matvec_mod2: vector length {} vs {} columns",
            v.len(),
            m.cols()
        )));
    }
    let pv = pack_bits(v);
    let w = m.words_per_row;
    let mut out = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let mut acc = 0u32;
        for i in 0..w {
            acc ^= (m.bits[r * w + i] & pv[i]).count_ones();
        }
        out.push((acc & 1) as u8);
    }
    Ok(out)
}
