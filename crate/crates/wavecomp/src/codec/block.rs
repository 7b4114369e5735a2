//! Per-code-block coefficient coding: a sign plane followed by magnitude
//! bit-planes MSB-first, each plane run-length coded with zero-run and
//! literal tokens. A leading byte carries the number of magnitude planes;
//! all-zero blocks therefore code to a single byte.
//!
//! Token layout: `0x00..=0x7F` is a run of `token + 1` zero bits,
//! `0x80..=0xFF` carries the next (up to) 7 plane bits in its low bits,
//! highest bit position first.

/// Code blocks never exceed this many samples per side.
pub const CODE_BLOCK_SIZE: usize = 16;

const LITERAL_BITS: usize = 7;
const MAX_RUN: usize = 128;

#[derive(Debug, PartialEq, Eq)]
pub enum BlockCodeError {
    /// Token stream ended before the declared planes were complete.
    Truncated,
    /// A zero run overran the plane, trailing bytes remained, or a sign bit
    /// was set on a zero coefficient.
    Malformed,
    /// Magnitude plane count exceeds what an i32 coefficient can hold.
    PlaneCountOutOfRange(u8),
}

fn plane_bits(coeffs: &[i32], extract: impl Fn(i32) -> bool) -> Vec<bool> {
    coeffs.iter().map(|&c| extract(c)).collect()
}

fn encode_plane(bits: &[bool], out: &mut Vec<u8>) {
    let n = bits.len();
    let mut pos = 0;
    while pos < n {
        if !bits[pos] {
            let mut run = 1;
            while run < MAX_RUN && pos + run < n && !bits[pos + run] {
                run += 1;
            }
            // short interior runs ride inside literals instead
            if run >= LITERAL_BITS || pos + run == n {
                out.push((run - 1) as u8);
                pos += run;
                continue;
            }
        }
        let take = LITERAL_BITS.min(n - pos);
        let mut token = 0x80u8;
        for (i, &bit) in bits[pos..pos + take].iter().enumerate() {
            if bit {
                token |= 1 << (LITERAL_BITS - 1 - i);
            }
        }
        out.push(token);
        pos += take;
    }
}

fn decode_plane(bytes: &[u8], cursor: &mut usize, n: usize) -> Result<Vec<bool>, BlockCodeError> {
    let mut bits = Vec::with_capacity(n);
    while bits.len() < n {
        let token = *bytes.get(*cursor).ok_or(BlockCodeError::Truncated)?;
        *cursor += 1;
        if token < 0x80 {
            let run = token as usize + 1;
            if bits.len() + run > n {
                return Err(BlockCodeError::Malformed);
            }
            bits.extend(std::iter::repeat_n(false, run));
        } else {
            let take = LITERAL_BITS.min(n - bits.len());
            for i in 0..take {
                bits.push(token & (1 << (LITERAL_BITS - 1 - i)) != 0);
            }
        }
    }
    Ok(bits)
}

/// Append the coded form of `coeffs` to `out`.
pub fn encode_block(coeffs: &[i32], out: &mut Vec<u8>) {
    let max_mag = coeffs.iter().map(|&c| c.unsigned_abs()).max().unwrap_or(0);
    let planes = (32 - max_mag.leading_zeros()) as u8;
    out.push(planes);
    if planes == 0 {
        return;
    }
    encode_plane(&plane_bits(coeffs, |c| c < 0), out);
    for p in (0..planes).rev() {
        encode_plane(&plane_bits(coeffs, |c| c.unsigned_abs() >> p & 1 == 1), out);
    }
}

/// Decode exactly `count` coefficients from `bytes`; the whole slice must be
/// consumed.
pub fn decode_block(bytes: &[u8], count: usize) -> Result<Vec<i32>, BlockCodeError> {
    let planes = *bytes.first().ok_or(BlockCodeError::Truncated)?;
    let mut cursor = 1;
    if planes == 0 {
        if cursor != bytes.len() {
            return Err(BlockCodeError::Malformed);
        }
        return Ok(vec![0; count]);
    }
    if planes > 31 {
        return Err(BlockCodeError::PlaneCountOutOfRange(planes));
    }
    let signs = decode_plane(bytes, &mut cursor, count)?;
    let mut mags = vec![0u32; count];
    for _ in 0..planes {
        let bits = decode_plane(bytes, &mut cursor, count)?;
        for (mag, bit) in mags.iter_mut().zip(bits) {
            *mag = (*mag << 1) | bit as u32;
        }
    }
    if cursor != bytes.len() {
        return Err(BlockCodeError::Malformed);
    }
    signs
        .into_iter()
        .zip(mags)
        .map(|(neg, mag)| {
            if neg && mag == 0 {
                return Err(BlockCodeError::Malformed);
            }
            Ok(if neg { -(mag as i32) } else { mag as i32 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn round_trip(coeffs: &[i32]) -> Vec<i32> {
        let mut bytes = Vec::new();
        encode_block(coeffs, &mut bytes);
        decode_block(&bytes, coeffs.len()).unwrap()
    }

    #[test]
    fn all_zero_block_is_one_byte() {
        let coeffs = vec![0i32; 256];
        let mut bytes = Vec::new();
        encode_block(&coeffs, &mut bytes);
        assert!(bytes.len() <= 2, "got {} bytes", bytes.len());
        assert_eq!(decode_block(&bytes, 256).unwrap(), coeffs);
    }

    #[test]
    fn single_negative_coefficient() {
        let mut coeffs = vec![0i32; 64];
        coeffs[0] = -5;
        assert_eq!(round_trip(&coeffs), coeffs);
    }

    #[test]
    fn exhaustive_2x2_small_range() {
        let range = -8i32..=8;
        for a in range.clone() {
            for b in range.clone() {
                for c in range.clone() {
                    for d in range.clone() {
                        let coeffs = [a, b, c, d];
                        assert_eq!(round_trip(&coeffs), coeffs, "{coeffs:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn random_full_blocks_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for mag in [1i32, 3, 100, 4000, 100_000] {
            for _ in 0..20 {
                let coeffs: Vec<i32> = (0..256).map(|_| rng.random_range(-mag..=mag)).collect();
                assert_eq!(round_trip(&coeffs), coeffs);
            }
        }
    }

    #[test]
    fn truncated_payload_rejected() {
        let coeffs = vec![9i32; 256];
        let mut bytes = Vec::new();
        encode_block(&coeffs, &mut bytes);
        bytes.truncate(bytes.len() - 1);
        assert_eq!(decode_block(&bytes, 256).unwrap_err(), BlockCodeError::Truncated);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let coeffs = vec![1i32; 16];
        let mut bytes = Vec::new();
        encode_block(&coeffs, &mut bytes);
        bytes.push(0x00);
        assert_eq!(decode_block(&bytes, 16).unwrap_err(), BlockCodeError::Malformed);
    }

    #[test]
    fn overlong_zero_run_rejected() {
        // one magnitude plane declared, sign plane claims 128 zeros for 4 coeffs
        let bytes = [1u8, 0x7F];
        assert_eq!(decode_block(&bytes, 4).unwrap_err(), BlockCodeError::Malformed);
    }

    #[test]
    fn negative_zero_rejected() {
        // sign plane all ones, single magnitude plane all zeros
        let mut bytes = vec![1u8];
        encode_plane(&[true; 4], &mut bytes);
        encode_plane(&[false; 4], &mut bytes);
        assert_eq!(decode_block(&bytes, 4).unwrap_err(), BlockCodeError::Malformed);
    }

    #[test]
    fn constant_block_beats_raw_bytes() {
        let coeffs = vec![7i32; 256];
        let mut bytes = Vec::new();
        encode_block(&coeffs, &mut bytes);
        assert!(bytes.len() < 256 * 4, "got {} bytes", bytes.len());
    }
}
