// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Arithmetic in GF(2^16).
//!
//! Elements are `u16`; addition is XOR. Multiplication goes through log/exp
//! tables built once from the primitive polynomial
//! `x^16 + x^5 + x^3 + x^2 + 1` (0x1002D) with generator `x` (= 2).
//! Symbols are byte strings interpreted as big-endian 16-bit elements.

use std::sync::OnceLock;

/// Reduction polynomial, including the x^16 term.
pub const POLYNOMIAL: u32 = 0x1_002D;

/// Number of field elements; also the maximum Reed-Solomon codeword length.
pub const ORDER: usize = 1 << 16;

const GROUP_ORDER: usize = ORDER - 1;

struct Tables {
    log: Vec<u16>,
    // Doubled so `exp[log a + log b]` never needs a modulo.
    exp: Vec<u16>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut log = vec![0u16; ORDER];
        let mut exp = vec![0u16; 2 * GROUP_ORDER];
        let mut x: u32 = 1;
        for i in 0..GROUP_ORDER {
            exp[i] = x as u16;
            exp[i + GROUP_ORDER] = x as u16;
            log[x as usize] = i as u16;
            x <<= 1;
            if x & 0x1_0000 != 0 {
                x ^= POLYNOMIAL;
            }
        }
        Tables { log, exp }
    })
}

#[inline]
pub fn add(a: u16, b: u16) -> u16 {
    a ^ b
}

#[inline]
pub fn mul(a: u16, b: u16) -> u16 {
    if a == 0 || b == 0 {
        return 0;
    }
    let t = tables();
    t.exp[t.log[a as usize] as usize + t.log[b as usize] as usize]
}

/// Multiplicative inverse. Panics on zero, which has none.
#[inline]
pub fn inv(a: u16) -> u16 {
    assert!(a != 0, "zero has no inverse in GF(2^16)");
    let t = tables();
    t.exp[GROUP_ORDER - t.log[a as usize] as usize]
}

#[inline]
pub fn div(a: u16, b: u16) -> u16 {
    mul(a, inv(b))
}

/// `generator^power`.
pub fn exp(power: usize) -> u16 {
    tables().exp[power % GROUP_ORDER]
}

/// `dst += coefficient * src` over big-endian element vectors.
///
/// Both slices must have the same even length.
pub fn mul_add_into(dst: &mut [u8], src: &[u8], coefficient: u16) {
    debug_assert_eq!(dst.len(), src.len());
    debug_assert_eq!(dst.len() % 2, 0);
    match coefficient {
        0 => {}
        1 => {
            for (d, s) in dst.iter_mut().zip(src) {
                *d ^= s;
            }
        }
        c => {
            let t = tables();
            let log_c = t.log[c as usize] as usize;
            for (d, s) in dst.chunks_exact_mut(2).zip(src.chunks_exact(2)) {
                let v = u16::from_be_bytes([s[0], s[1]]);
                if v == 0 {
                    continue;
                }
                let p = t.exp[t.log[v as usize] as usize + log_c];
                let cur = u16::from_be_bytes([d[0], d[1]]) ^ p;
                d.copy_from_slice(&cur.to_be_bytes());
            }
        }
    }
}
