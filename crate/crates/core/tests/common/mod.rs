//! Test-only reference implementations and helpers, kept deliberately
//! independent of the library's code paths.

#![allow(dead_code)]

use rand::{Rng, RngCore};
use sp2p_core::digest::DigestParams;

/// Reference MD5, written from the algorithm definition rather than shared
/// with the library: the sine table is computed at runtime, the message is
/// padded up front as one buffer, and the four round passes use explicit
/// per-round index and shift tables.
pub fn oracle_md5(message: &[u8]) -> [u8; 16] {
    // T[i] = floor(2^32 * |sin(i)|), i in radians, 1-based
    let mut t = [0u32; 64];
    for (i, slot) in t.iter_mut().enumerate() {
        *slot = (((i + 1) as f64).sin().abs() * 4294967296.0) as u32;
    }

    // pad to a whole number of 64-byte blocks: 0x80, zeros, 64-bit LE length
    let bit_len = (message.len() as u64).wrapping_mul(8);
    let mut padded = message.to_vec();
    padded.push(0x80);
    while padded.len() % 64 != 56 {
        padded.push(0);
    }
    padded.extend_from_slice(&bit_len.to_le_bytes());

    const X2: [usize; 16] = [1, 6, 11, 0, 5, 10, 15, 4, 9, 14, 3, 8, 13, 2, 7, 12];
    const X3: [usize; 16] = [5, 8, 11, 14, 1, 4, 7, 10, 13, 0, 3, 6, 9, 12, 15, 2];
    const X4: [usize; 16] = [0, 7, 14, 5, 12, 3, 10, 1, 8, 15, 6, 13, 4, 11, 2, 9];
    const S1: [u32; 4] = [7, 12, 17, 22];
    const S2: [u32; 4] = [5, 9, 14, 20];
    const S3: [u32; 4] = [4, 11, 16, 23];
    const S4: [u32; 4] = [6, 10, 15, 21];

    let mut state: [u32; 4] = [0x6745_2301, 0xefcd_ab89, 0x98ba_dcfe, 0x1032_5476];

    for block in padded.chunks(64) {
        let mut x = [0u32; 16];
        for (j, word) in x.iter_mut().enumerate() {
            *word = u32::from_le_bytes(block[4 * j..4 * j + 4].try_into().unwrap());
        }

        let [mut a, mut b, mut c, mut d] = state;
        let step = |a: u32, b: u32, f: u32, xk: u32, s: u32, ti: u32| -> u32 {
            b.wrapping_add(
                a.wrapping_add(f)
                    .wrapping_add(xk)
                    .wrapping_add(ti)
                    .rotate_left(s),
            )
        };

        for j in 0..16 {
            let f = (b & c) | (!b & d);
            let new_b = step(a, b, f, x[j], S1[j % 4], t[j]);
            a = d;
            d = c;
            c = b;
            b = new_b;
        }
        for j in 0..16 {
            let f = (b & d) | (c & !d);
            let new_b = step(a, b, f, x[X2[j]], S2[j % 4], t[16 + j]);
            a = d;
            d = c;
            c = b;
            b = new_b;
        }
        for j in 0..16 {
            let f = b ^ c ^ d;
            let new_b = step(a, b, f, x[X3[j]], S3[j % 4], t[32 + j]);
            a = d;
            d = c;
            c = b;
            b = new_b;
        }
        for j in 0..16 {
            let f = c ^ (b | !d);
            let new_b = step(a, b, f, x[X4[j]], S4[j % 4], t[48 + j]);
            a = d;
            d = c;
            c = b;
            b = new_b;
        }

        state[0] = state[0].wrapping_add(a);
        state[1] = state[1].wrapping_add(b);
        state[2] = state[2].wrapping_add(c);
        state[3] = state[3].wrapping_add(d);
    }

    let mut out = [0u8; 16];
    for (i, word) in state.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&word.to_le_bytes());
    }
    out
}

/// The seven test vectors from the algorithm's specification.
pub const RFC_VECTORS: [(&str, &str); 7] = [
    ("", "d41d8cd98f00b204e9800998ecf8427e"),
    ("a", "0cc175b9c0f1b6a831c399e269772661"),
    ("abc", "900150983cd24fb0d6963f7d28e17f72"),
    ("message digest", "f96b697d7cb7938d525a2f31aaf161d0"),
    ("abcdefghijklmnopqrstuvwxyz", "c3fcd3d76192e4007dfb496cca67e13b"),
    (
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789",
        "d174ab98d277d9f5a5611c2c9f419d9f",
    ),
    (
        "12345678901234567890123456789012345678901234567890123456789012345678901234567890",
        "57edf4a22be3c955ac49da2e2107b67a",
    ),
];

/// Fresh digest parameters drawn from an RNG, for property sweeps.
pub fn random_params<R: RngCore>(rng: &mut R) -> DigestParams {
    let mut p = DigestParams::IDENTITY;
    for w in p.iv.iter_mut() {
        *w = rng.next_u32();
    }
    for m in p.round_masks.iter_mut() {
        *m = rng.next_u32();
    }
    rng.fill_bytes(&mut p.out_mask);
    p
}

/// A random message with length spread over padding boundaries.
pub fn random_message<R: Rng>(rng: &mut R, max_len: usize) -> Vec<u8> {
    let len = rng.gen_range(0..=max_len);
    let mut msg = vec![0u8; len];
    rng.fill_bytes(&mut msg);
    msg
}
