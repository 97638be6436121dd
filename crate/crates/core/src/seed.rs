//! Stable seed derivation. Everything random in the crate is keyed off these
//! helpers so results do not depend on the standard library's hasher.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of splitmix64.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a seed with a stream label.
pub fn mix(seed: u64, label: u64) -> u64 {
    splitmix(seed ^ splitmix(label.wrapping_mul(GOLDEN)))
}

/// Incremental hasher over words and floats (bit patterns).
#[derive(Clone, Debug)]
pub struct StableHasher(u64);

impl StableHasher {
    pub fn new(seed: u64) -> Self {
        StableHasher(splitmix(seed))
    }

    pub fn word(&mut self, w: u64) -> &mut Self {
        self.0 = splitmix(self.0 ^ w.wrapping_mul(GOLDEN).rotate_left(17));
        self
    }

    pub fn float(&mut self, x: f64) -> &mut Self {
        // -0.0 and 0.0 hash alike
        let bits = if x == 0.0 { 0 } else { x.to_bits() };
        self.word(bits)
    }

    pub fn floats(&mut self, xs: &[f64]) -> &mut Self {
        self.word(xs.len() as u64);
        for &x in xs {
            self.float(x);
        }
        self
    }

    pub fn finish(&self) -> u64 {
        splitmix(self.0)
    }
}
