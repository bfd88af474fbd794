//! MD5 and the parameterized MD5 variant used as the per-request measurement tool.
//!
//! The variant keeps the standard padding, rotation schedule, and compression
//! structure, and varies three things under [`DigestParams`]:
//!
//! - the chaining IV,
//! - the 64 per-step additive constants (XOR-masked), and
//! - a final 16-byte XOR over the output.
//!
//! Under [`DigestParams::IDENTITY`] the variant is bit-for-bit standard MD5.
//! None of this is collision-resistant cryptography; MD5 is broken. The point
//! is that a verifier and a prover who share freshly drawn params compute the
//! same unpredictable function, and nobody else can precompute it.

/// A 16-byte digest value.
pub type Digest = [u8; 16];

/// Standard MD5 chaining IV (A, B, C, D).
pub const MD5_IV: [u32; 4] = [0x6745_2301, 0xEFCD_AB89, 0x98BA_DCFE, 0x1032_5476];

/// Per-step additive constants, T[i] = floor(2^32 * |sin(i + 1)|).
const K: [u32; 64] = [
    0xd76a_a478, 0xe8c7_b756, 0x2420_70db, 0xc1bd_ceee,
    0xf57c_0faf, 0x4787_c62a, 0xa830_4613, 0xfd46_9501,
    0x6980_98d8, 0x8b44_f7af, 0xffff_5bb1, 0x895c_d7be,
    0x6b90_1122, 0xfd98_7193, 0xa679_438e, 0x49b4_0821,
    0xf61e_2562, 0xc040_b340, 0x265e_5a51, 0xe9b6_c7aa,
    0xd62f_105d, 0x0244_1453, 0xd8a1_e681, 0xe7d3_fbc8,
    0x21e1_cde6, 0xc337_07d6, 0xf4d5_0d87, 0x455a_14ed,
    0xa9e3_e905, 0xfcef_a3f8, 0x676f_02d9, 0x8d2a_4c8a,
    0xfffa_3942, 0x8771_f681, 0x6d9d_6122, 0xfde5_380c,
    0xa4be_ea44, 0x4bde_cfa9, 0xf6bb_4b60, 0xbebf_bc70,
    0x289b_7ec6, 0xeaa1_27fa, 0xd4ef_3085, 0x0488_1d05,
    0xd9d4_d039, 0xe6db_99e5, 0x1fa2_7cf8, 0xc4ac_5665,
    0xf429_2244, 0x432a_ff97, 0xab94_23a7, 0xfc93_a039,
    0x655b_59c3, 0x8f0c_cc92, 0xffef_f47d, 0x8584_5dd1,
    0x6fa8_7e4f, 0xfe2c_e6e0, 0xa301_4314, 0x4e08_11a1,
    0xf753_7e82, 0xbd3a_f235, 0x2ad7_d2bb, 0xeb86_d391,
];

/// Left-rotation amounts per step.
const S: [u32; 64] = [
    7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22,
    5, 9, 14, 20, 5, 9, 14, 20, 5, 9, 14, 20, 5, 9, 14, 20,
    4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23,
    6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21,
];

const BLOCK_LEN: usize = 64;

/// Parameterization of the MD5 variant.
///
/// `round_masks[i]` is XORed onto the step-`i` additive constant, and
/// `out_mask` is XORed onto the final digest bytes.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct DigestParams {
    pub iv: [u32; 4],
    pub round_masks: [u32; 64],
    pub out_mask: [u8; 16],
}

impl DigestParams {
    /// The distinguished parameterization under which the variant is exactly
    /// standard MD5.
    pub const IDENTITY: DigestParams = DigestParams {
        iv: MD5_IV,
        round_masks: [0; 64],
        out_mask: [0; 16],
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl std::fmt::Debug for DigestParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // 64 mask words are noise in logs; summarize.
        f.debug_struct("DigestParams")
            .field("iv", &format_args!("{:08x?}", self.iv))
            .field("identity", &self.is_identity())
            .finish()
    }
}

/// Incremental hasher for the parameterized variant.
pub struct Hasher {
    state: [u32; 4],
    constants: [u32; 64],
    out_mask: [u8; 16],
    buf: [u8; BLOCK_LEN],
    buf_len: usize,
    total_bytes: u64,
}

impl Hasher {
    pub fn new(params: &DigestParams) -> Self {
        let mut constants = [0u32; 64];
        for (c, (k, m)) in constants.iter_mut().zip(K.iter().zip(params.round_masks.iter())) {
            *c = k ^ m;
        }
        Self {
            state: params.iv,
            constants,
            out_mask: params.out_mask,
            buf: [0; BLOCK_LEN],
            buf_len: 0,
            total_bytes: 0,
        }
    }

    pub fn update(&mut self, mut data: &[u8]) {
        self.total_bytes = self.total_bytes.wrapping_add(data.len() as u64);

        if self.buf_len > 0 {
            let need = BLOCK_LEN - self.buf_len;
            let take = need.min(data.len());
            self.buf[self.buf_len..self.buf_len + take].copy_from_slice(&data[..take]);
            self.buf_len += take;
            data = &data[take..];
            if self.buf_len == BLOCK_LEN {
                let block = self.buf;
                self.compress(&block);
                self.buf_len = 0;
            }
        }
        if data.is_empty() {
            // nothing left for the block loop; keep whatever is buffered
            return;
        }

        let mut chunks = data.chunks_exact(BLOCK_LEN);
        for block in &mut chunks {
            let mut arr = [0u8; BLOCK_LEN];
            arr.copy_from_slice(block);
            self.compress(&arr);
        }
        let rest = chunks.remainder();
        self.buf[..rest.len()].copy_from_slice(rest);
        self.buf_len = rest.len();
    }

    pub fn finalize(mut self) -> Digest {
        // Standard padding: 0x80, zeros to 56 mod 64, then bit length LE.
        let bit_len = self.total_bytes.wrapping_mul(8);
        let mut pad = [0u8; BLOCK_LEN + 8];
        pad[0] = 0x80;
        let pad_len = if self.buf_len < 56 {
            56 - self.buf_len
        } else {
            BLOCK_LEN + 56 - self.buf_len
        };
        let mut tail = Vec::with_capacity(pad_len + 8);
        tail.extend_from_slice(&pad[..pad_len]);
        tail.extend_from_slice(&bit_len.to_le_bytes());
        self.update(&tail);
        debug_assert_eq!(self.buf_len, 0);

        let mut out = [0u8; 16];
        for (i, word) in self.state.iter().enumerate() {
            out[4 * i..4 * i + 4].copy_from_slice(&word.to_le_bytes());
        }
        for (o, m) in out.iter_mut().zip(self.out_mask.iter()) {
            *o ^= m;
        }
        out
    }

    fn compress(&mut self, block: &[u8; BLOCK_LEN]) {
        let mut w = [0u32; 16];
        for (i, word) in w.iter_mut().enumerate() {
            *word = u32::from_le_bytes([
                block[4 * i],
                block[4 * i + 1],
                block[4 * i + 2],
                block[4 * i + 3],
            ]);
        }

        let [mut a, mut b, mut c, mut d] = self.state;
        for i in 0..64 {
            let (f, g) = match i / 16 {
                0 => ((b & c) | (!b & d), i),
                1 => ((b & d) | (c & !d), (5 * i + 1) % 16),
                2 => (b ^ c ^ d, (3 * i + 5) % 16),
                _ => (c ^ (b | !d), (7 * i) % 16),
            };
            let t = a
                .wrapping_add(f)
                .wrapping_add(w[g])
                .wrapping_add(self.constants[i])
                .rotate_left(S[i])
                .wrapping_add(b);
            a = d;
            d = c;
            c = b;
            b = t;
        }

        self.state[0] = self.state[0].wrapping_add(a);
        self.state[1] = self.state[1].wrapping_add(b);
        self.state[2] = self.state[2].wrapping_add(c);
        self.state[3] = self.state[3].wrapping_add(d);
    }
}

/// Standard MD5 of `message`.
pub fn md5_reference(message: &[u8]) -> Digest {
    parameterized_digest(&DigestParams::IDENTITY, message)
}

/// The parameterized variant of `message` under `params`.
pub fn parameterized_digest(params: &DigestParams, message: &[u8]) -> Digest {
    let mut h = Hasher::new(params);
    h.update(message);
    h.finalize()
}
