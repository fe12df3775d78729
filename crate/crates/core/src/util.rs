use sha2::{Digest, Sha256};

/// splitmix64 finalizer; good enough to decorrelate seed streams.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed and a list of tags
/// (token id, table role, purpose constant, ...). Order-sensitive.
pub(crate) fn mix_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in tags {
        s = splitmix64(s ^ t);
    }
    s
}

/// First 12 hex chars of sha256; used as artifact ids in report metadata.
pub(crate) fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(digest)[..12].to_string()
}

/// UTF-8 decode with U+FFFD for invalid sequences, counting replacements.
pub(crate) fn decode_lossy_counting(bytes: &[u8]) -> (String, u64) {
    let mut out = String::with_capacity(bytes.len());
    let mut replacements = 0u64;
    let mut rest = bytes;
    loop {
        match std::str::from_utf8(rest) {
            Ok(s) => {
                out.push_str(s);
                break;
            }
            Err(e) => {
                let valid = e.valid_up_to();
                out.push_str(std::str::from_utf8(&rest[..valid]).unwrap());
                out.push('\u{FFFD}');
                replacements += 1;
                // error_len() is None when the input ends mid-sequence.
                let skip = e.error_len().unwrap_or(rest.len() - valid);
                rest = &rest[valid + skip..];
            }
        }
    }
    (out, replacements)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossy_counts_replacements() {
        let (s, n) = decode_lossy_counting(b"ab\xFF\xFEcd");
        assert_eq!(s, "ab\u{FFFD}\u{FFFD}cd");
        assert_eq!(n, 2);
    }

    #[test]
    fn lossy_truncated_sequence() {
        // 0xE2 opens a 3-byte sequence that never completes
        let (s, n) = decode_lossy_counting(b"\xE2");
        assert_eq!(s, "\u{FFFD}");
        assert_eq!(n, 1);
    }

    #[test]
    fn mix_seed_is_order_sensitive() {
        assert_ne!(mix_seed(7, &[1, 2]), mix_seed(7, &[2, 1]));
        assert_eq!(mix_seed(7, &[1, 2]), mix_seed(7, &[1, 2]));
    }
}
