//! Per-cell seeds derived from the base seed and the cell coordinates, so
//! adding a density, model or noise level never changes the seeds of cells
//! that already exist.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE5_E9B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tag and a list of words into one seed. Stable across platforms
/// and releases.
pub fn derive(tag: &str, words: &[u64]) -> u64 {
    let mut h = mix(tag.len() as u64);
    for b in tag.bytes() {
        h = mix(h ^ b as u64);
    }
    for &w in words {
        h = mix(h ^ w);
    }
    h
}

/// Word form of a string for [`derive`].
pub fn text_word(s: &str) -> u64 {
    derive(s, &[])
}

/// Train/validation/test partition seed of a `(seed, density)` cell; shared by
/// every model so they are compared on the same split.
pub fn split_seed(seed: u64, density: f64) -> u64 {
    derive("split", &[seed, density.to_bits()])
}

/// Initialization and batching seed of one model in one cell.
pub fn train_seed(seed: u64, density: f64, model: &str) -> u64 {
    derive("train", &[seed, density.to_bits(), text_word(model)])
}

/// Identity-corruption seed; shared by every model of the cell.
pub fn noise_seed(seed: u64, density: f64, noise: f64) -> u64 {
    derive("noise", &[seed, density.to_bits(), noise.to_bits()])
}

/// Hex digest of arbitrary text, used to fingerprint configurations.
pub fn text_hash(text: &str) -> String {
    let mut h = mix(text.len() as u64);
    for chunk in text.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        h = mix(h ^ u64::from_le_bytes(word));
    }
    format!("{h:016x}")
}
