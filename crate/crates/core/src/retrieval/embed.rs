//! Signed feature-hashing embedder.

use serde::{Deserialize, Serialize};

pub const DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Unit-norm vector of `DIM` components, or the zero vector for text with
/// no tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn zero() -> Self {
        Embedding { values: vec![0.0; DIM] }
    }

    /// Zero vectors are not comparable; their cosine with anything is 0.
    pub fn is_comparable(&self) -> bool {
        self.values.iter().any(|v| *v != 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn embed_text(text: &str) -> Embedding {
    let mut values = vec![0.0f64; DIM];
    for token in tokens(text) {
        let h = fnv1a64(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        values[(h % DIM as u64) as usize] += sign;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    Embedding { values }
}

/// Dot product of unit vectors; 0 when either side is not comparable.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn self_similarity_is_one() {
        let e = embed_text("revenue per viewer");
        assert!((cosine(&e, &e) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_text_is_zero_and_not_comparable() {
        let e = embed_text("  ,;; ");
        assert!(!e.is_comparable());
        assert_eq!(cosine(&e, &embed_text("revenue")), 0.0);
    }

    #[test]
    fn tokenization_ignores_case_and_punctuation() {
        assert_eq!(embed_text("Revenue, per-VIEWER!"), embed_text("revenue per viewer"));
    }

    proptest! {
        #[test]
        fn deterministic_and_unit_norm(text in "\\PC{0,60}") {
            let a = embed_text(&text);
            prop_assert_eq!(&a, &embed_text(&text));
            prop_assert_eq!(a.values.len(), DIM);
            if a.is_comparable() {
                prop_assert!((a.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
