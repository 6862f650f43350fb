//! BCH code construction via cyclic-code polynomial machinery over GF(2^m).
//!
//! The generator polynomial is the lcm of the minimal polynomials of
//! `alpha, alpha^2, ..., alpha^{2t}`; the conventional PCM is the cyclic
//! matrix of the reversed parity polynomial `h(x) = (x^n + 1) / g(x)`,
//! which is full rank by construction.

use super::{CodeFamily, CodesError, LinearCode};
use crate::gf2::{self, BitMatrix};

/// Primitive polynomials over GF(2), one per field degree m = 2..=10,
/// encoded with bit i = coefficient of x^i.
const PRIMITIVE_POLYS: [(usize, u32); 9] = [
    (2, 0b111),           // x^2 + x + 1
    (3, 0b1011),          // x^3 + x + 1
    (4, 0b10011),         // x^4 + x + 1
    (5, 0b100101),        // x^5 + x^2 + 1
    (6, 0b1000011),       // x^6 + x + 1
    (7, 0b10001001),      // x^7 + x^3 + 1
    (8, 0b100011101),     // x^8 + x^4 + x^3 + x^2 + 1
    (9, 0b1000010001),    // x^9 + x^4 + 1
    (10, 0b10000001001),  // x^10 + x^3 + 1
];

pub(crate) fn primitive_poly(m: usize) -> Result<u32, CodesError> {
    PRIMITIVE_POLYS
        .iter()
        .find(|&&(deg, _)| deg == m)
        .map(|&(_, p)| p)
        .ok_or(CodesError::UnsupportedFieldDegree(m))
}

/// Log/antilog tables for GF(2^m) with a fixed primitive element.
struct Gf2m {
    n: usize, // 2^m - 1
    log: Vec<usize>,
    alog: Vec<usize>,
}

impl Gf2m {
    fn new(m: usize) -> Result<Self, CodesError> {
        let prim = primitive_poly(m)? as usize;
        let n = (1usize << m) - 1;
        let mut log = vec![0usize; n + 1];
        let mut alog = vec![0usize; n];
        let mut x = 1usize;
        for i in 0..n {
            alog[i] = x;
            log[x] = i;
            x <<= 1;
            if x >> m != 0 {
                x ^= prim;
            }
        }
        Ok(Gf2m { n, log, alog })
    }

    fn mul(&self, a: usize, b: usize) -> usize {
        if a == 0 || b == 0 {
            0
        } else {
            self.alog[(self.log[a] + self.log[b]) % self.n]
        }
    }

    fn alpha_pow(&self, e: usize) -> usize {
        self.alog[e % self.n]
    }
}

// Polynomials over GF(2): little-endian coefficient vectors.

fn poly_trim(p: &mut Vec<u8>) {
    while p.len() > 1 && *p.last().unwrap() == 0 {
        p.pop();
    }
}

pub(crate) fn poly_deg(p: &[u8]) -> usize {
    p.iter().rposition(|&c| c == 1).unwrap_or(0)
}

pub(crate) fn poly_mul(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut r = vec![0u8; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 1 {
            for (j, &bj) in b.iter().enumerate() {
                r[i + j] ^= bj;
            }
        }
    }
    poly_trim(&mut r);
    r
}

/// Quotient and remainder of a / b over GF(2). `b` must be nonzero.
pub(crate) fn poly_divmod(a: &[u8], b: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let db = poly_deg(b);
    assert!(b[db] == 1, "division by zero polynomial");
    let mut rem = a.to_vec();
    poly_trim(&mut rem);
    let mut quot = vec![0u8; a.len().saturating_sub(db).max(1)];
    loop {
        let dr = poly_deg(&rem);
        if rem[dr] == 0 || dr < db {
            break;
        }
        let shift = dr - db;
        quot[shift] ^= 1;
        for i in 0..=db {
            rem[i + shift] ^= b[i];
        }
        poly_trim(&mut rem);
        if rem == [0] {
            break;
        }
    }
    poly_trim(&mut quot);
    (quot, rem)
}

/// Minimal polynomial over GF(2) of `alpha^e`: the product of
/// `(x - alpha^c)` over the cyclotomic coset of `e`.
fn minimal_poly(field: &Gf2m, e: usize) -> Vec<u8> {
    let mut coset = Vec::new();
    let mut c = e % field.n;
    while !coset.contains(&c) {
        coset.push(c);
        c = (2 * c) % field.n;
    }
    // Product over GF(2^m); the coefficients collapse to {0,1}.
    let mut poly: Vec<usize> = vec![1];
    for &c in &coset {
        let root = field.alpha_pow(c);
        let mut next = vec![0usize; poly.len() + 1];
        for (i, &p) in poly.iter().enumerate() {
            next[i + 1] ^= p;
            next[i] ^= field.mul(p, root);
        }
        poly = next;
    }
    debug_assert!(poly.iter().all(|&p| p <= 1));
    poly.iter().map(|&p| p as u8).collect()
}

fn cyclotomic_coset(n: usize, e: usize) -> Vec<usize> {
    let mut coset = Vec::new();
    let mut c = e % n;
    while !coset.contains(&c) {
        coset.push(c);
        c = (2 * c) % n;
    }
    coset.sort_unstable();
    coset
}

/// Generator polynomial of the t-error-correcting BCH code of length 2^m - 1.
pub(crate) fn bch_generator_poly(m: usize, t: usize) -> Result<Vec<u8>, CodesError> {
    let field = Gf2m::new(m)?;
    let mut g = vec![1u8];
    let mut seen: Vec<Vec<usize>> = Vec::new();
    for e in 1..=2 * t {
        let coset = cyclotomic_coset(field.n, e);
        if seen.contains(&coset) {
            continue;
        }
        seen.push(coset);
        g = poly_mul(&g, &minimal_poly(&field, e));
    }
    Ok(g)
}

/// Build the BCH code of field degree `m` and design capability `t`.
pub fn build_bch(m: usize, t: usize) -> Result<LinearCode, CodesError> {
    if !(2..=10).contains(&m) {
        return Err(CodesError::UnsupportedFieldDegree(m));
    }
    let n = (1usize << m) - 1;
    let g = bch_generator_poly(m, t)?;
    let deg_g = poly_deg(&g);
    if deg_g >= n {
        return Err(CodesError::DesignDistanceTooLarge { deg: deg_g, n });
    }
    let k = n - deg_g;

    // h(x) = (x^n + 1) / g(x); g must divide exactly.
    let mut xn1 = vec![0u8; n + 1];
    xn1[0] = 1;
    xn1[n] = 1;
    let (h_poly, rem) = poly_divmod(&xn1, &g);
    debug_assert_eq!(rem, vec![0], "g(x) must divide x^n + 1");
    debug_assert_eq!(poly_deg(&h_poly), k);

    // Cyclic PCM: row i holds the coefficients of x^i * h~(x), where h~ is
    // h with reversed coefficients.
    let h_rev: Vec<u8> = h_poly.iter().rev().cloned().collect();
    let mut h_conv = BitMatrix::zeros(n - k, n);
    for i in 0..n - k {
        for (j, &c) in h_rev.iter().enumerate() {
            h_conv.set(i, i + j, c);
        }
    }

    let sys = gf2::to_systematic(&h_conv)?;
    let generator = gf2::nullspace_generator(&h_conv)?;
    Ok(LinearCode {
        name: format!("bch-{n}-{k}"),
        family: CodeFamily::Bch,
        n,
        k,
        h_conv,
        h_sys: sys.h_sys,
        h_mod: None,
        generator,
        column_permutation: sys.column_permutation,
        bit_order: (0..n).collect(),
        frozen_set: None,
        primitive_poly: Some(primitive_poly(m)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_7_4_generator_poly() {
        // t=1, m=3: g(x) = x^3 + x + 1, and (x^7+1)/g = x^4 + x^2 + x + 1.
        let g = bch_generator_poly(3, 1).unwrap();
        assert_eq!(g, vec![1, 1, 0, 1]);
        let code = build_bch(3, 1).unwrap();
        assert_eq!((code.n, code.k), (7, 4));
        let mut xn1 = vec![0u8; 8];
        xn1[0] = 1;
        xn1[7] = 1;
        let (h, rem) = poly_divmod(&xn1, &g);
        assert_eq!(rem, vec![0]);
        assert_eq!(h, vec![1, 1, 1, 0, 1]);
    }

    #[test]
    fn bch_31_11_dimensions() {
        let code = build_bch(5, 5).unwrap();
        assert_eq!((code.n, code.k), (31, 11));
        assert_eq!(gf2::rank(&code.h_conv), 20);
    }

    #[test]
    fn paper_table_dimension_pairs() {
        for (m, t, n, k) in [(5, 3, 31, 16), (6, 6, 63, 30), (6, 3, 63, 45)] {
            let code = build_bch(m, t).unwrap();
            assert_eq!((code.n, code.k), (n, k), "m={m} t={t}");
        }
    }

    #[test]
    fn generator_poly_divides_xn_plus_1() {
        for (m, t) in [(3, 1), (4, 2), (5, 5), (6, 6)] {
            let n = (1usize << m) - 1;
            let g = bch_generator_poly(m, t).unwrap();
            let mut xn1 = vec![0u8; n + 1];
            xn1[0] = 1;
            xn1[n] = 1;
            let (h, rem) = poly_divmod(&xn1, &g);
            assert_eq!(rem, vec![0]);
            assert_eq!(poly_mul(&g, &h), xn1);
            assert_eq!(poly_deg(&g) + poly_deg(&h), n);
        }
    }

    #[test]
    fn pcm_properties() {
        let code = build_bch(5, 5).unwrap();
        assert_eq!(gf2::rank(&code.h_conv), code.n - code.k);
        assert!(gf2::row_space_equal(&code.h_conv, &code.h_sys).unwrap());
        assert!(code
            .h_conv
            .matmul(&code.generator.transpose())
            .unwrap()
            .is_zero());
        assert!(code.column_permutation.iter().enumerate().all(|(i, &p)| i == p));
    }

    #[test]
    fn unsupported_degree() {
        assert!(build_bch(11, 1).is_err());
        assert!(build_bch(1, 1).is_err());
    }

    #[test]
    fn design_distance_too_large() {
        // t=3 still leaves the repetition code (k=1); t=4 pulls in the
        // coset of alpha^7 = 1 and pushes deg g to n.
        assert_eq!(build_bch(3, 3).unwrap().k, 1);
        assert!(matches!(
            build_bch(3, 4),
            Err(CodesError::DesignDistanceTooLarge { .. })
        ));
    }
}
